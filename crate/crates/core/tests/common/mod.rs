//! Loop-based reference implementations shared by the integration tests.
//! Nothing here calls into the library's math.

#![allow(dead_code)]

use mman_core::data::{Conversation, Utterance};
use mman_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, random_vec(rng, rows * cols)).unwrap()
}

/// `x W` for a row vector `x` and `W: len(x) x n`.
pub fn vecmat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (rows, cols) = (w.rows(), w.cols());
    assert_eq!(x.len(), rows);
    (0..cols)
        .map(|j| x.iter().enumerate().fold(0.0, |acc, (i, xi)| acc + xi * w.get(i, j)))
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One LSTM step, gate blocks i, f, g, o along the `4h` axis of weights
/// stored as `d_in x 4h`, `h x 4h` and `1 x 4h`.
pub fn lstm_step(x: &[f64], h: &[f64], c: &[f64], wi: &Tensor, wh: &Tensor, b: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let mut h_new = vec![0.0; n];
    let mut c_new = vec![0.0; n];
    for j in 0..n {
        let pre = |gate: usize| {
            let col = gate * n + j;
            let mut z = b.get(0, col);
            for (k, xk) in x.iter().enumerate() {
                z += xk * wi.get(k, col);
            }
            for (k, hk) in h.iter().enumerate() {
                z += hk * wh.get(k, col);
            }
            z
        };
        let i = sigmoid(pre(0));
        let f = sigmoid(pre(1));
        let g = pre(2).tanh();
        let o = sigmoid(pre(3));
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    (h_new, c_new)
}

pub fn conversation(id: &str, speaker: &str, utterances: Vec<Utterance>) -> Conversation {
    Conversation {
        id: id.into(),
        speaker: speaker.into(),
        split: None,
        utterances,
    }
}

pub fn random_conversation(rng: &mut ChaCha8Rng, id: &str, m: usize, dims: [usize; 3], classes: usize) -> Conversation {
    let utterances = (0..m)
        .map(|_| Utterance {
            s: random_vec(rng, dims[0]),
            v: random_vec(rng, dims[1]),
            t: random_vec(rng, dims[2]),
            label: rng.random_range(0..classes),
        })
        .collect();
    conversation(id, &format!("spk-{id}"), utterances)
}

/// Ten utterances (two conversations of five) whose classes are far apart
/// in every modality.
pub fn separable_set() -> Vec<Conversation> {
    let spec = mman_core::SyntheticSpec {
        seed: 7,
        n_conversations: 2,
        n_speakers: 2,
        min_len: 5,
        max_len: 5,
        snr: [100.0; 3],
        p_ctx: 0.0,
        mode: mman_core::data::Complementarity::Redundant,
        ..Default::default()
    };
    mman_core::data::generate_synthetic(&spec).unwrap()
}

/// Trains an architecture the way the experiment runner does: sub-networks
/// first for composite models, then the fusion head.
pub fn train_model(
    arch: mman_core::Architecture,
    cfg: &mman_core::ModelConfig,
    stage_one: &mman_core::TrainConfig,
    stage_two: &mman_core::TrainConfig,
    data: &[Conversation],
    seed: u64,
) -> (mman_core::Model, Vec<mman_core::TrainReport>) {
    use mman_core::training::{train_fusion_head, train_subnetwork};
    use mman_core::Model;
    if !arch.is_two_stage() {
        let mut m = Model::new(arch, cfg, seed).unwrap();
        let r = train_subnetwork(&mut m, data, stage_one).unwrap();
        return (m, vec![r]);
    }
    let mut reports = Vec::new();
    let subs: Vec<Model> = arch
        .subnetworks()
        .iter()
        .map(|&a| {
            let mut m = Model::new(a, cfg, seed).unwrap();
            reports.push(train_subnetwork(&mut m, data, stage_one).unwrap());
            m
        })
        .collect();
    let refs: Vec<&Model> = subs.iter().collect();
    let mut m = Model::assemble(arch, cfg, seed, &refs).unwrap();
    reports.push(train_fusion_head(&mut m, data, stage_two).unwrap());
    (m, reports)
}
