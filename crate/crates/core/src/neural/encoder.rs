//! A small pre-norm transformer encoder.
//!
//! Token embedding plus sinusoidal positions, then `num_layers` blocks of
//! `x + MHA(LN(x))` and `x + FFN(LN(x))`, then a final layer norm. With zero
//! layers the output is just the embedding plus positions.

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{uniform, ParameterStore, SeededRng};
use super::tensor::NdArray;
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_sequence_length: usize,
    pub dropout_rate: f64,
}

impl EncoderConfig {
    /// Desk-scale defaults: 64 wide, 2 layers, 4 heads, FFN 128, length 256.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 128,
            max_sequence_length: 256,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_sequence_length", self.max_sequence_length),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder {name} must be >= 1")));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn from_shape(shape: &EncoderShape, vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: shape.embed_dim,
            num_layers: shape.num_layers,
            num_heads: shape.num_heads,
            ffn_dim: shape.ffn_dim,
            max_sequence_length: shape.max_sequence_length,
            dropout_rate: shape.dropout_rate,
        }
    }
}

/// Encoder hyperparameters without the vocabulary size, which is only known
/// once the training corpus has been read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderShape {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_sequence_length: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderShape {
    fn default() -> Self {
        let c = EncoderConfig::desk(1);
        Self {
            embed_dim: c.embed_dim,
            num_layers: c.num_layers,
            num_heads: c.num_heads,
            ffn_dim: c.ffn_dim,
            max_sequence_length: c.max_sequence_length,
            dropout_rate: c.dropout_rate,
        }
    }
}

/// Adds encoder parameters under `prefix` (e.g. `"encoder."`).
pub fn init_encoder(store: &mut ParameterStore, prefix: &str, cfg: &EncoderConfig, rng: &mut SeededRng) -> Result<()> {
    cfg.validate()?;
    let d = cfg.embed_dim;
    let bound = 1.0 / (d as f64).sqrt();
    store.insert(format!("{prefix}embed"), uniform(rng, &[cfg.vocab_size, d], bound))?;
    for l in 0..cfg.num_layers {
        let p = format!("{prefix}layers.{l}.");
        store.init_layer_norm(&format!("{p}ln1"), d)?;
        for proj in ["q", "k", "v", "o"] {
            store.init_linear(rng, &format!("{p}attn.{proj}"), d, d)?;
        }
        store.init_layer_norm(&format!("{p}ln2"), d)?;
        store.init_linear(rng, &format!("{p}ffn.up"), d, cfg.ffn_dim)?;
        store.init_linear(rng, &format!("{p}ffn.down"), cfg.ffn_dim, d)?;
    }
    if cfg.num_layers > 0 {
        store.init_layer_norm(&format!("{prefix}final_ln"), d)?;
    }
    Ok(())
}

/// Sinusoidal table, `[len, dim]`.
pub fn positional_encoding(len: usize, dim: usize) -> NdArray {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    NdArray::matrix(len, dim, data).expect("shape")
}

/// `x * W + b` with parameters `{prefix}.w` / `{prefix}.b`.
pub fn linear(g: &mut Graph, params: &ParameterStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(params, &format!("{prefix}.w"))?;
    let b = g.param(params, &format!("{prefix}.b"))?;
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

fn layer_norm(g: &mut Graph, params: &ParameterStore, prefix: &str, x: Var) -> Result<Var> {
    let gain = g.param(params, &format!("{prefix}.gain"))?;
    let bias = g.param(params, &format!("{prefix}.bias"))?;
    g.layer_norm(x, gain, bias, LN_EPS)
}

/// Per-token representations `[len, embed_dim]`. Dropout is active only when
/// `dropout_rng` is given (training mode).
pub fn forward_encoder(
    g: &mut Graph,
    params: &ParameterStore,
    prefix: &str,
    cfg: &EncoderConfig,
    token_ids: &[usize],
    mut dropout_rng: Option<&mut SeededRng>,
) -> Result<Var> {
    let len = token_ids.len();
    if len == 0 {
        return Err(Error::Invalid("empty token sequence".into()));
    }
    if len > cfg.max_sequence_length {
        return Err(Error::SequenceTooLong {
            len,
            max: cfg.max_sequence_length,
        });
    }
    if let Some(&id) = token_ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab: cfg.vocab_size,
        });
    }
    let d = cfg.embed_dim;
    let dh = cfg.head_dim();
    let table = g.param(params, &format!("{prefix}embed"))?;
    let emb = g.gather(table, token_ids)?;
    let pos = g.constant(positional_encoding(len, d));
    let mut x = g.add(emb, pos)?;
    let rate = cfg.dropout_rate;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();

    for l in 0..cfg.num_layers {
        let p = format!("{prefix}layers.{l}.");
        let h = layer_norm(g, params, &format!("{p}ln1"), x)?;
        let q = linear(g, params, &format!("{p}attn.q"), h)?;
        let k = linear(g, params, &format!("{p}attn.k"), h)?;
        let v = linear(g, params, &format!("{p}attn.v"), h)?;
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for head in 0..cfg.num_heads {
            let (s, e) = (head * dh, (head + 1) * dh);
            let qh = g.slice_cols(q, s, e)?;
            let kh = g.slice_cols(k, s, e)?;
            let vh = g.slice_cols(v, s, e)?;
            let scores = g.matmul_t(qh, kh)?;
            let scores = g.scale(scores, inv_sqrt);
            let attn = g.softmax(scores);
            heads.push(g.matmul(attn, vh)?);
        }
        let merged = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        let mut attn_out = linear(g, params, &format!("{p}attn.o"), merged)?;
        if let Some(rng) = dropout_rng.as_deref_mut() {
            attn_out = g.dropout(attn_out, rate, rng);
        }
        x = g.add(x, attn_out)?;

        let h = layer_norm(g, params, &format!("{p}ln2"), x)?;
        let up = linear(g, params, &format!("{p}ffn.up"), h)?;
        let act = g.gelu(up);
        let mut down = linear(g, params, &format!("{p}ffn.down"), act)?;
        if let Some(rng) = dropout_rng.as_deref_mut() {
            down = g.dropout(down, rate, rng);
        }
        x = g.add(x, down)?;
    }
    if cfg.num_layers > 0 {
        x = layer_norm(g, params, &format!("{prefix}final_ln"), x)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::rng_from_seed;

    fn tiny(layers: usize, heads: usize, dim: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 12,
            embed_dim: dim,
            num_layers: layers,
            num_heads: heads,
            ffn_dim: 2 * dim,
            max_sequence_length: 10,
            dropout_rate: 0.1,
        }
    }

    fn params(cfg: &EncoderConfig, seed: u64) -> ParameterStore {
        let mut s = ParameterStore::new();
        init_encoder(&mut s, "enc.", cfg, &mut rng_from_seed(seed)).unwrap();
        s
    }

    fn run(p: &ParameterStore, cfg: &EncoderConfig, ids: &[usize], rng: Option<&mut SeededRng>) -> NdArray {
        let mut g = Graph::new();
        let out = forward_encoder(&mut g, p, "enc.", cfg, ids, rng).unwrap();
        g.value(out).clone()
    }

    #[test]
    fn zero_layers_is_embedding_plus_positions() {
        let cfg = tiny(0, 2, 8);
        let p = params(&cfg, 1);
        let ids = [3, 0, 7];
        let out = run(&p, &cfg, &ids, None);
        let pe = positional_encoding(3, 8);
        let table = p.get("enc.embed").unwrap();
        for (r, id) in ids.iter().enumerate() {
            for c in 0..8 {
                assert_eq!(out.row(r)[c], table.row(*id)[c] + pe.row(r)[c]);
            }
        }
    }

    #[test]
    fn deterministic_with_same_seed() {
        let cfg = tiny(2, 2, 8);
        let p = params(&cfg, 5);
        let a = run(&p, &cfg, &[1, 2, 3], Some(&mut rng_from_seed(9)));
        let b = run(&p, &cfg, &[1, 2, 3], Some(&mut rng_from_seed(9)));
        assert_eq!(a, b);
        let c = run(&p, &cfg, &[1, 2, 3], None);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_long_or_out_of_range_input() {
        let cfg = tiny(1, 1, 4);
        let p = params(&cfg, 0);
        let mut g = Graph::new();
        assert!(matches!(
            forward_encoder(&mut g, &p, "enc.", &cfg, &[1; 11], None),
            Err(Error::SequenceTooLong { len: 11, max: 10 })
        ));
        assert!(matches!(
            forward_encoder(&mut g, &p, "enc.", &cfg, &[12], None),
            Err(Error::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny(1, 3, 8);
        assert!(cfg.validate().is_err());
        cfg.num_heads = 4;
        assert!(cfg.validate().is_ok());
        cfg.vocab_size = 0;
        assert!(cfg.validate().is_err());
    }
}
