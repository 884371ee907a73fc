//! Label-noise benchmark: Gaussian clusters, a one-hidden-layer MLP, and
//! symmetric noise on the training labels only.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{batch_weights, TytMode};
use crate::error::{Error, Result};
use crate::neural::graph::softmax_into;
use crate::neural::params::{derive_seed, rng_from_seed, SeededRng};
use crate::neural::{linear, optimizer_step, Graph, NdArray, ParameterStore, XentTargets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTask {
    pub num_classes: usize,
    pub dim: usize,
    /// Gaussian blobs per class; more than one makes the classes non-convex.
    pub clusters_per_class: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Standard deviation of the cluster centers around the origin.
    pub separation: f64,
    /// Standard deviation of points around their center.
    pub spread: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for NoiseTask {
    fn default() -> Self {
        Self {
            num_classes: 4,
            dim: 16,
            clusters_per_class: 3,
            train_size: 2000,
            test_size: 1000,
            separation: 1.0,
            spread: 0.6,
            hidden: 32,
            epochs: 120,
            batch_size: 50,
            lr: 3e-3,
            weight_decay: 1e-4,
        }
    }
}

impl NoiseTask {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("noise benchmark needs at least two classes".into()));
        }
        if self.dim == 0 || self.hidden == 0 || self.clusters_per_class == 0 {
            return Err(Error::Config("noise benchmark dimensions must be >= 1".into()));
        }
        if self.train_size == 0 || self.test_size == 0 || self.batch_size == 0 {
            return Err(Error::Config("noise benchmark sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Inputs row-major `[n, dim]` with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    pub dim: usize,
}

impl Points {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn rows(&self, idx: &[usize]) -> NdArray {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(&self.x[i * self.dim..(i + 1) * self.dim]);
        }
        NdArray::matrix(idx.len(), self.dim, data).expect("shape")
    }
}

/// Clean train and test sets drawn from the same clusters.
pub fn make_clusters(task: &NoiseTask, seed: u64) -> Result<(Points, Points)> {
    task.validate()?;
    let mut rng = rng_from_seed(derive_seed(seed, "noise-clusters"));
    let center_dist = Normal::new(0.0, task.separation).map_err(|e| Error::Config(e.to_string()))?;
    let point_dist = Normal::new(0.0, task.spread).map_err(|e| Error::Config(e.to_string()))?;
    let n_centers = task.num_classes * task.clusters_per_class;
    let centers: Vec<Vec<f64>> = (0..n_centers)
        .map(|_| (0..task.dim).map(|_| center_dist.sample(&mut rng)).collect())
        .collect();
    let draw = |n: usize, rng: &mut SeededRng| {
        let mut x = Vec::with_capacity(n * task.dim);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.random_range(0..n_centers);
            x.extend(centers[c].iter().map(|m| m + point_dist.sample(rng)));
            y.push(c % task.num_classes);
        }
        Points { x, y, dim: task.dim }
    };
    let train = draw(task.train_size, &mut rng);
    let test = draw(task.test_size, &mut rng);
    Ok((train, test))
}

/// Replaces each label, with probability `rate`, by a uniformly chosen
/// different class.
pub fn corrupt_labels(labels: &[usize], num_classes: usize, rate: f64, rng: &mut SeededRng) -> Vec<usize> {
    labels
        .iter()
        .map(|&y| {
            if rng.random_bool(rate) {
                let other = rng.random_range(0..num_classes - 1);
                if other >= y {
                    other + 1
                } else {
                    other
                }
            } else {
                y
            }
        })
        .collect()
}

fn mlp_logits(g: &mut Graph, params: &ParameterStore, x: NdArray) -> Result<crate::neural::Var> {
    let x = g.constant(x);
    let h = linear(g, params, "mlp.hidden", x)?;
    let h = g.gelu(h);
    linear(g, params, "mlp.out", h)
}

/// Class probabilities for every row of `points`.
pub fn mlp_probs(params: &ParameterStore, points: &Points) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..points.len()).collect();
    let mut g = Graph::new();
    let logits = mlp_logits(&mut g, params, points.rows(&idx))?;
    let v = g.value(logits);
    Ok((0..v.rows())
        .map(|r| {
            let mut p = vec![0.0; v.cols()];
            softmax_into(v.row(r), &mut p);
            p
        })
        .collect())
}

pub fn accuracy(params: &ParameterStore, points: &Points) -> Result<f64> {
    let probs = mlp_probs(params, points)?;
    let hits = probs
        .iter()
        .zip(&points.y)
        .filter(|(p, &y)| crate::neural::ClassDistribution::new((*p).clone()).map(|d| d.argmax() == y).unwrap_or(false))
        .count();
    Ok(hits as f64 / points.len() as f64)
}

/// Trains the MLP on `train` (whose labels may be noisy). With a teacher,
/// the loss is the distillation blend for `mode`.
pub fn train_mlp(
    task: &NoiseTask,
    train: &Points,
    teacher: Option<(&ParameterStore, TytMode)>,
    seed: u64,
) -> Result<ParameterStore> {
    let mut rng = rng_from_seed(seed);
    let mut params = ParameterStore::new();
    params.init_linear(&mut rng, "mlp.hidden", task.dim, task.hidden)?;
    params.init_linear(&mut rng, "mlp.out", task.hidden, task.num_classes)?;
    // Inputs never change, so the frozen teacher's outputs are fixed too.
    let teacher_probs = match teacher {
        Some((t, mode)) if mode != TytMode::Off => Some((mlp_probs(t, train)?, mode)),
        _ => None,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..task.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(task.batch_size) {
            let gold: Vec<usize> = batch.iter().map(|&i| train.y[i]).collect();
            let mut g = Graph::new();
            let logits = mlp_logits(&mut g, &params, train.rows(batch))?;
            let loss = match &teacher_probs {
                Some((probs, mode)) => {
                    let t: Vec<Vec<f64>> = batch.iter().map(|&i| probs[i].clone()).collect();
                    let w = batch_weights(*mode, &t, &gold);
                    g.distill_xent(
                        logits,
                        &XentTargets {
                            gold: &gold,
                            teacher: Some(&t),
                            weights: Some(&w),
                        },
                    )?
                }
                None => g.distill_xent(logits, &XentTargets::hard(&gold))?,
            };
            if !g.value(loss).item().is_finite() {
                return Err(Error::NonFiniteLoss("noise benchmark MLP".into()));
            }
            let grads = g.backward(loss)?;
            optimizer_step(&mut params, &grads, task.lr, task.weight_decay)?;
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub noise_rate: f64,
    pub mode: TytMode,
    pub seed: u64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub noise_rate: f64,
    pub mode: TytMode,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub rows: Vec<NoiseRow>,
    pub summary: Vec<NoiseSummary>,
}

impl NoiseReport {
    pub fn mean(&self, rate: f64, mode: TytMode) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.noise_rate == rate && s.mode == mode)
            .map(|s| s.mean)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.rows)
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.summary)
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    crate::io::write_atomic(path, &bytes)
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// For every rate and seed: one baseline teacher trained on the noisy
/// labels, then one student per non-off mode from a shared student seed.
/// Test accuracy is always measured on clean labels.
pub fn noise_benchmark(task: &NoiseTask, rates: &[f64], modes: &[TytMode], seeds: &[u64]) -> Result<NoiseReport> {
    task.validate()?;
    if let Some(r) = rates.iter().find(|r| !(0.0..0.5).contains(*r)) {
        return Err(Error::Config(format!("noise rate {r} outside [0, 0.5)")));
    }
    let mut jobs = Vec::new();
    for &rate in rates {
        for &seed in seeds {
            jobs.push((rate, seed));
        }
    }
    let run = |rate: f64, seed: u64| -> Result<Vec<NoiseRow>> {
        let (mut train, test) = make_clusters(task, seed)?;
        let mut noise_rng = rng_from_seed(derive_seed(seed, &format!("noise-{rate}")));
        train.y = corrupt_labels(&train.y, task.num_classes, rate, &mut noise_rng);
        let teacher = train_mlp(task, &train, None, derive_seed(seed, "teacher"))?;
        let mut rows = Vec::new();
        for &mode in modes {
            let acc = if mode == TytMode::Off {
                accuracy(&teacher, &test)?
            } else {
                let student = train_mlp(task, &train, Some((&teacher, mode)), derive_seed(seed, "student"))?;
                accuracy(&student, &test)?
            };
            log::debug!("noise {rate} seed {seed} {mode}: {acc:.4}");
            rows.push(NoiseRow {
                noise_rate: rate,
                mode,
                seed,
                test_accuracy: acc,
            });
        }
        Ok(rows)
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let mut results: Vec<Option<Result<Vec<NoiseRow>>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk = jobs.len().div_ceil(threads).max(1);
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .zip(results.chunks_mut(chunk))
            .map(|(js, out)| {
                let run = &run;
                s.spawn(move || {
                    for ((rate, seed), slot) in js.iter().zip(out.iter_mut()) {
                        *slot = Some(run(*rate, *seed));
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().expect("benchmark worker panicked");
        }
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r.expect("every job ran")?);
    }
    let mut summary = Vec::new();
    for &rate in rates {
        for &mode in modes {
            let accs: Vec<f64> = rows
                .iter()
                .filter(|r| r.noise_rate == rate && r.mode == mode)
                .map(|r| r.test_accuracy)
                .collect();
            let (mean, std) = mean_std(&accs);
            summary.push(NoiseSummary {
                noise_rate: rate,
                mode,
                mean,
                std,
                runs: accs.len(),
            });
        }
    }
    Ok(NoiseReport { rows, summary })
}
