//! Single-step adversarial weight perturbation.

use crate::error::Result;
use crate::neural::{Gradients, NdArray, ParameterStore};

#[derive(Debug, Clone, PartialEq)]
pub struct AwpOutcome {
    /// Gradients to apply: adversarial ones, or the plain ones on fallback.
    pub gradients: Gradients,
    pub loss: f64,
    pub adversarial_loss: Option<f64>,
    pub fell_back: bool,
}

/// Computes the batch gradient `g`, moves every tensor `w` to
/// `w + rho * (|w| / |g_w|) * g_w`, evaluates the loss and gradient there,
/// and puts the original weights back bit for bit.
///
/// `loss_and_grads` must be deterministic for a given parameter state (fix
/// any dropout masks outside it) so that both evaluations see the same batch.
pub fn awp_step<F>(params: &mut ParameterStore, rho: f64, mut loss_and_grads: F) -> Result<AwpOutcome>
where
    F: FnMut(&ParameterStore) -> Result<(f64, Gradients)>,
{
    let (loss, grads) = loss_and_grads(params)?;
    if rho == 0.0 {
        return Ok(AwpOutcome {
            gradients: grads,
            loss,
            adversarial_loss: None,
            fell_back: false,
        });
    }
    let mut saved: Vec<(String, NdArray)> = Vec::new();
    for (name, w) in params.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        let g_norm = g.l2_norm();
        if g_norm == 0.0 || !g_norm.is_finite() {
            continue;
        }
        let scale = rho * w.l2_norm() / g_norm;
        if scale == 0.0 {
            continue;
        }
        saved.push((name.to_string(), w.clone()));
        for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
            *wv += scale * gv;
        }
    }
    let perturbed = loss_and_grads(params);
    for (name, original) in saved {
        *params.get_mut(&name).expect("saved from the same store") = original;
    }
    match perturbed {
        Ok((adv_loss, adv_grads)) if adv_loss.is_finite() && adv_grads.all_finite() => Ok(AwpOutcome {
            gradients: adv_grads,
            loss,
            adversarial_loss: Some(adv_loss),
            fell_back: false,
        }),
        Ok((adv_loss, _)) => {
            log::warn!("non-finite loss {adv_loss} at the perturbed point; using plain gradients for this batch");
            Ok(AwpOutcome {
                gradients: grads,
                loss,
                adversarial_loss: None,
                fell_back: true,
            })
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Graph;
    use proptest::prelude::*;

    fn quadratic(store: &ParameterStore) -> Result<(f64, Gradients)> {
        // L = sum (w - c)^2 with c = 0.3
        let mut g = Graph::new();
        let w = g.param(store, "w")?;
        let c = g.constant(NdArray::new(vec![3], vec![-0.3; 3])?);
        let d = g.add(w, c)?;
        let sq = g.mul(d, d)?;
        let loss = g.sum_all(sq);
        let value = g.value(loss).item();
        Ok((value, g.backward(loss)?))
    }

    fn store(w: [f64; 3]) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("w", NdArray::new(vec![3], w.to_vec()).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_rho_is_the_plain_gradient() {
        let mut s = store([1.0, -2.0, 0.5]);
        let out = awp_step(&mut s, 0.0, quadratic).unwrap();
        assert_eq!(out.gradients, quadratic(&s).unwrap().1);
        assert!(out.adversarial_loss.is_none());
    }

    #[test]
    fn weights_restored_bitwise() {
        let mut s = store([1.0, -2.0, 0.5]);
        let before = s.checksum();
        let out = awp_step(&mut s, 0.05, quadratic).unwrap();
        assert_eq!(s.checksum(), before);
        assert_ne!(out.gradients, quadratic(&s).unwrap().1);
    }

    #[test]
    fn nonfinite_perturbed_loss_falls_back() {
        let mut s = store([1.0, -2.0, 0.5]);
        let mut calls = 0;
        let out = awp_step(&mut s, 0.01, |p| {
            calls += 1;
            let (l, g) = quadratic(p)?;
            Ok((if calls == 2 { f64::NAN } else { l }, g))
        })
        .unwrap();
        assert!(out.fell_back);
        assert_eq!(out.gradients, quadratic(&s).unwrap().1);
    }

    proptest! {
        #[test]
        fn adversarial_loss_not_below_plain(w in proptest::array::uniform3(-3.0..3.0f64)) {
            let mut s = store(w);
            let before = s.checksum();
            let out = awp_step(&mut s, 0.01, quadratic).unwrap();
            // Independently evaluate the loss at both points.
            let direct = |v: &[f64]| v.iter().map(|x| (x - 0.3).powi(2)).sum::<f64>();
            let g: Vec<f64> = w.iter().map(|x| 2.0 * (x - 0.3)).collect();
            let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let moved: Vec<f64> = if gn > 0.0 {
                w.iter().zip(&g).map(|(x, gi)| x + 0.01 * wn / gn * gi).collect()
            } else {
                w.to_vec()
            };
            prop_assert!(direct(&moved) >= direct(&w) - 1e-12);
            if let Some(adv) = out.adversarial_loss {
                prop_assert!((adv - direct(&moved)).abs() < 1e-9);
                prop_assert!(adv >= out.loss - 1e-12);
            }
            prop_assert_eq!(s.checksum(), before);
        }
    }
}
