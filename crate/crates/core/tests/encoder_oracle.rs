#![allow(clippy::excessive_precision)]

//! Tiny-encoder forward pass against the standalone high-precision script in
//! `tests/oracles/encoder_forward.py`.

use scanner::neural::{forward_encoder, init_encoder, rng_from_seed, EncoderConfig, Graph, ParameterStore};

#[rustfmt::skip]
const EXPECTED: [f64; 40] = [
        -0.054095454721056428, 0.44708060801917767, 0.46998168483168391, 0.16654728391925136, 0.19114769704397556, -0.62542302165431791, -0.3412051344876342, -0.97661975822852624,
        0.031859403287043019, 0.33749310008835197, 0.46392756990319233, 0.13874686156830672, 0.079951470515769654, -0.70076813890906862, -0.38223379355403364, -0.85627165348495953,
        0.27372993185030243, 0.23837583365278914, 0.45079685076616615, 0.11119865510841044, 0.14932920179765746, -0.6720578457094791, -0.25576977456716287, -0.87591696449301367,
        0.14258249993646935, 0.23878763562322899, 0.43293440253205377, 0.12637401378977005, 0.085787098837568569, -0.60802561127649972, -0.337061614250164, -0.84908843696443963,
        -0.067710662536837493, 0.31135600456419481, 0.42145766925861124, 0.11450499439121653, 0.031097194429252857, -0.59341951069305519, -0.32785686510121662, -0.74595260484066796,
];

fn formula_params(cfg: &EncoderConfig) -> ParameterStore {
    let mut store = ParameterStore::new();
    init_encoder(&mut store, "enc.", cfg, &mut rng_from_seed(0)).unwrap();
    for (p, (_, value)) in store.iter_mut().enumerate() {
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v = 0.5 * (0.37 * i as f64 + 1.1 * p as f64 + 0.3).sin();
        }
    }
    store
}

#[test]
fn tiny_encoder_matches_independent_forward_pass() {
    let cfg = EncoderConfig {
        vocab_size: 12,
        embed_dim: 8,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 16,
        max_sequence_length: 16,
        dropout_rate: 0.1,
    };
    let store = formula_params(&cfg);
    let mut g = Graph::new();
    let out = forward_encoder(&mut g, &store, "enc.", &cfg, &[3, 0, 7, 7, 11], None).unwrap();
    let got = g.value(out);
    assert_eq!(got.shape(), &[5, 8]);
    for (i, (a, b)) in got.data().iter().zip(EXPECTED.iter()).enumerate() {
        assert!((a - b).abs() < 1e-12, "entry {i}: {a} vs {b}");
    }
}
