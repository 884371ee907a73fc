use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::tensor::NdArray;
use crate::error::{Error, Result};

/// The single generator type used for every stochastic choice.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent sub-seed for a named purpose (fold index, teacher
/// vs student, ...), so streams never overlap.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: NdArray,
    pub v: NdArray,
}

/// Named parameters of one model plus optimizer state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    entries: BTreeMap<String, NdArray>,
    moments: BTreeMap<String, Moments>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: NdArray) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NdArray> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NdArray> {
        self.entries.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NdArray)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut NdArray)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(NdArray::len).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.moments.get(name)
    }

    pub(crate) fn moments_mut(&mut self) -> &mut BTreeMap<String, Moments> {
        &mut self.moments
    }

    pub(crate) fn entries_and_moments(&mut self) -> (&mut BTreeMap<String, NdArray>, &mut BTreeMap<String, Moments>) {
        (&mut self.entries, &mut self.moments)
    }

    /// Drops optimizer state, keeping the weights.
    pub fn reset_optimizer(&mut self) {
        self.moments.clear();
        self.step = 0;
    }

    /// SHA-256 over names, shapes and the little-endian bytes of every value.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, v) in &self.entries {
            h.update(name.as_bytes());
            for d in v.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in v.data() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Adds a `[fan_in, fan_out]` weight drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// and a zero bias of width `fan_out`.
    pub fn init_linear(&mut self, rng: &mut SeededRng, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.insert(format!("{prefix}.w"), uniform(rng, &[fan_in, fan_out], bound))?;
        self.insert(format!("{prefix}.b"), NdArray::zeros(&[fan_out]))
    }

    /// Unit gain, zero bias.
    pub fn init_layer_norm(&mut self, prefix: &str, dim: usize) -> Result<()> {
        self.insert(format!("{prefix}.gain"), NdArray::new(vec![dim], vec![1.0; dim])?)?;
        self.insert(format!("{prefix}.bias"), NdArray::zeros(&[dim]))
    }

    /// Copies every entry of `other` under `prefix`.
    pub fn merge_prefixed(&mut self, other: ParameterStore, prefix: &str) -> Result<()> {
        for (name, value) in other.entries {
            self.insert(format!("{prefix}{name}"), value)?;
        }
        Ok(())
    }
}

pub fn uniform(rng: &mut SeededRng, shape: &[usize], bound: f64) -> NdArray {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    NdArray::new(shape.to_vec(), data).expect("shape matches")
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    entries: BTreeMap<String, NdArray>,
}

impl Gradients {
    pub fn insert(&mut self, name: String, g: NdArray) {
        self.entries.insert(name, g);
    }

    pub fn get(&self, name: &str) -> Option<&NdArray> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NdArray)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Entries for every parameter of `store`, zero where unreached.
    pub fn aligned(mut self, store: &ParameterStore) -> Self {
        for (name, v) in store.iter() {
            self.entries
                .entry(name.to_string())
                .or_insert_with(|| NdArray::zeros(v.shape()));
        }
        self
    }

    pub fn l2_norm(&self, name: &str) -> f64 {
        self.entries.get(name).map_or(0.0, NdArray::l2_norm)
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(NdArray::all_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_purpose() {
        assert_ne!(derive_seed(1, "teacher"), derive_seed(1, "student"));
        assert_eq!(derive_seed(7, "fold-0"), derive_seed(7, "fold-0"));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::new();
        s.insert("a", NdArray::scalar(1.0)).unwrap();
        assert!(s.insert("a", NdArray::scalar(2.0)).is_err());
    }

    #[test]
    fn linear_init_respects_bound() {
        let mut s = ParameterStore::new();
        let mut rng = rng_from_seed(3);
        s.init_linear(&mut rng, "lin", 16, 4).unwrap();
        assert!(s.get("lin.w").unwrap().data().iter().all(|v| v.abs() <= 0.25));
        assert_eq!(s.get("lin.b").unwrap().shape(), &[4]);
    }

    #[test]
    fn checksum_tracks_values() {
        let mut s = ParameterStore::new();
        s.insert("a", NdArray::scalar(1.0)).unwrap();
        let before = s.checksum();
        s.get_mut("a").unwrap().data_mut()[0] = 1.0 + f64::EPSILON;
        assert_ne!(before, s.checksum());
    }
}
