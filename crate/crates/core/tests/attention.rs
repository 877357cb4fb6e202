mod common;

use common::*;
use mman_core::attention::{
    directional_attention, AttentionDims, DirectionalAttentionParams, MultiModalAttention, StandardizedTriple, Standardizer,
};
use mman_core::data::Modality;
use mman_core::nn::{Activation, Ctx};
use mman_core::params::Initializer;
use mman_core::tensor::softmax_scaled;
use mman_core::{Error, ParameterStore, Tape, Tensor};

fn dims(d_model: usize, d_k: usize, d_val: usize, bias: bool) -> AttentionDims {
    AttentionDims {
        d_model,
        d_q: d_k,
        d_k,
        d_val,
        bias,
    }
}

fn randomize(store: &mut ParameterStore, seed: u64) {
    let mut r = rng(seed);
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for n in names {
        let shape = store.get(&n).unwrap().value.shape().to_vec();
        let t = Tensor::new(shape.clone(), random_vec(&mut r, shape.iter().product())).unwrap();
        store.set_value(&n, t).unwrap();
    }
}

fn zero_all(store: &mut ParameterStore) {
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for n in names {
        let shape = store.get(&n).unwrap().value.shape().to_vec();
        store.set_value(&n, Tensor::zeros(&shape)).unwrap();
    }
}

fn value(store: &ParameterStore, name: &str) -> Tensor {
    store.get(name).unwrap().value.clone()
}

fn build_mma(d: AttentionDims, seed: u64) -> (ParameterStore, MultiModalAttention) {
    let mut store = ParameterStore::new();
    let mut init = Initializer::new(seed);
    let mma = MultiModalAttention::build(&mut store, &mut init, "mma", d).unwrap();
    randomize(&mut store, seed + 100);
    (store, mma)
}

/// Reference directional module straight from the definition.
fn oracle_module(store: &ParameterStore, query: Modality, xs: [&[f64]; 3], d: AttentionDims) -> (Vec<f64>, Vec<f64>) {
    let base = format!("mma.attn.{}", query.key());
    let proj = |x: &[f64], w: &str, b: &str| {
        let y = vecmat(x, &value(store, &format!("{base}.{w}")));
        if d.bias {
            add(&y, value(store, &format!("{base}.{b}")).data())
        } else {
            y
        }
    };
    let q = proj(xs[query.index()], "w_query", "b_query");
    let mut logits = Vec::new();
    let mut values = Vec::new();
    for m in Modality::ALL {
        let k = proj(xs[m.index()], &format!("w_key_{}", m.key()), &format!("b_key_{}", m.key()));
        values.push(proj(xs[m.index()], &format!("w_val_{}", m.key()), &format!("b_val_{}", m.key())));
        logits.push(dot(&q, &k) / (d.d_k as f64).sqrt());
    }
    let w = softmax(&logits);
    let mut fused = vec![0.0; d.d_val];
    for (wi, v) in w.iter().zip(&values) {
        for j in 0..d.d_val {
            fused[j] += wi * v[j];
        }
    }
    (w, fused)
}

struct Run {
    block: Vec<f64>,
    weights: Vec<Vec<f64>>,
    fused: Vec<Vec<f64>>,
}

fn run(store: &ParameterStore, mma: &MultiModalAttention, xs: [&[f64]; 3]) -> Run {
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, store);
    let triple = StandardizedTriple {
        s_hat: ctx.tape.constant(Tensor::row(xs[0].to_vec())),
        v_hat: ctx.tape.constant(Tensor::row(xs[1].to_vec())),
        t_hat: ctx.tape.constant(Tensor::row(xs[2].to_vec())),
    };
    let (out, parts) = mma.forward_detailed(&mut ctx, &triple).unwrap();
    Run {
        block: tape.value(out).data().to_vec(),
        weights: parts.iter().map(|p| tape.value(p.weights).data().to_vec()).collect(),
        fused: parts.iter().map(|p| tape.value(p.fused).data().to_vec()).collect(),
    }
}

#[test]
fn standardize_identity_weights_return_inputs() {
    let mut store = ParameterStore::new();
    let st = Standardizer::build(&mut store, &mut Initializer::new(0), "mma", [2, 2, 2], 2, Activation::Linear).unwrap();
    for m in Modality::ALL {
        store.set_value(&format!("mma.std.{}.weight", m.key()), Tensor::identity(2)).unwrap();
    }
    let xs = [vec![0.3, -1.2], vec![2.0, 0.5], vec![-0.7, 0.1]];
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, &store);
    let inputs = xs.clone().map(|x| ctx.tape.constant(Tensor::row(x)));
    let triple = st.standardize(&mut ctx, inputs).unwrap();
    for m in Modality::ALL {
        assert_eq!(tape.value(triple.get(m)).data(), &xs[m.index()][..]);
    }
}

#[test]
fn standardize_zero_inputs_give_bias() {
    let mut store = ParameterStore::new();
    let st = Standardizer::build(&mut store, &mut Initializer::new(1), "mma", [3, 2, 4], 2, Activation::Linear).unwrap();
    let biases = [vec![0.5, -0.25], vec![1.5, 2.0], vec![-3.0, 0.125]];
    for m in Modality::ALL {
        store
            .set_value(&format!("mma.std.{}.bias", m.key()), Tensor::row(biases[m.index()].clone()))
            .unwrap();
    }
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, &store);
    let inputs = [3, 2, 4].map(|d| ctx.tape.constant(Tensor::zeros(&[1, d])));
    let triple = st.standardize(&mut ctx, inputs).unwrap();
    for m in Modality::ALL {
        assert_eq!(tape.value(triple.get(m)).data(), &biases[m.index()][..]);
    }
}

#[test]
fn standardize_matches_affine_oracle() {
    let in_dims = [10, 7, 5];
    for act in [Activation::Linear, Activation::Tanh] {
        let mut store = ParameterStore::new();
        let st = Standardizer::build(&mut store, &mut Initializer::new(2), "mma", in_dims, 4, act).unwrap();
        randomize(&mut store, 3);
        let mut r = rng(4);
        let xs: Vec<Vec<f64>> = in_dims.iter().map(|&d| random_vec(&mut r, d)).collect();
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &store);
        let inputs = [0, 1, 2].map(|i| ctx.tape.constant(Tensor::row(xs[i].clone())));
        let triple = st.standardize(&mut ctx, inputs).unwrap();
        for m in Modality::ALL {
            let w = value(&store, &format!("mma.std.{}.weight", m.key()));
            let b = value(&store, &format!("mma.std.{}.bias", m.key()));
            let mut expect = add(&vecmat(&xs[m.index()], &w), b.data());
            if act == Activation::Tanh {
                expect.iter_mut().for_each(|x| *x = x.tanh());
            }
            assert!(max_abs_diff(tape.value(triple.get(m)).data(), &expect) < 1e-12);
        }
    }
}

#[test]
fn standardize_names_offending_modality() {
    let mut store = ParameterStore::new();
    let st = Standardizer::build(&mut store, &mut Initializer::new(0), "mma", [3, 2, 4], 2, Activation::Linear).unwrap();
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, &store);
    let inputs = [3, 5, 4].map(|d| ctx.tape.constant(Tensor::zeros(&[1, d])));
    match st.standardize(&mut ctx, inputs) {
        Err(Error::ModalityDim {
            modality,
            expected: 2,
            got: 5,
        }) => assert_eq!(modality, Modality::Visual.name()),
        other => panic!("expected a visual dimension error, got {other:?}"),
    }
}

#[test]
fn zero_projections_give_uniform_weights_and_zero_output() {
    let d = dims(3, 2, 2, false);
    let (mut store, mma) = build_mma(d, 5);
    zero_all(&mut store);
    let xs = [[0.4, -1.0, 2.0], [1.0, 1.0, -3.0], [0.2, 0.0, 0.9]];
    let out = run(&store, &mma, [&xs[0], &xs[1], &xs[2]]);
    for w in &out.weights {
        for &x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }
    let expect: Vec<f64> = [0.0; 6].iter().chain(xs.iter().flatten()).copied().collect();
    assert_eq!(out.block, expect);
}

#[test]
fn identical_keys_average_the_values() {
    let d = dims(3, 2, 2, false);
    let (mut store, mma) = build_mma(d, 6);
    let x = [0.7, -0.3, 1.1];
    // Same input and same key projection in every slot; values differ.
    for q in Modality::ALL {
        let shared = value(&store, &format!("mma.attn.{}.w_key_s", q.key()));
        for m in Modality::ALL {
            store
                .set_value(&format!("mma.attn.{}.w_key_{}", q.key(), m.key()), shared.clone())
                .unwrap();
        }
    }
    let out = run(&store, &mma, [&x, &x, &x]);
    for q in Modality::ALL {
        let vals: Vec<Vec<f64>> = Modality::ALL
            .iter()
            .map(|m| vecmat(&x, &value(&store, &format!("mma.attn.{}.w_val_{}", q.key(), m.key()))))
            .collect();
        let mean: Vec<f64> = (0..2).map(|j| vals.iter().map(|v| v[j]).sum::<f64>() / 3.0).collect();
        for &w in &out.weights[q.index()] {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(max_abs_diff(&out.fused[q.index()], &mean) < 1e-12);
    }
}

#[test]
fn random_instance_matches_loop_oracle() {
    for bias in [false, true] {
        let d = dims(3, 2, 2, bias);
        for seed in 0..5 {
            let (store, mma) = build_mma(d, 10 + seed);
            let mut r = rng(50 + seed);
            let xs: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut r, 3)).collect();
            let xs = [&xs[0][..], &xs[1][..], &xs[2][..]];
            let out = run(&store, &mma, xs);
            for q in Modality::ALL {
                let (w, fused) = oracle_module(&store, q, xs, d);
                assert!(max_abs_diff(&out.weights[q.index()], &w) < 1e-12);
                assert!(max_abs_diff(&out.fused[q.index()], &fused) < 1e-12);
            }
            // block layout: z_s | z_v | z_t | s_hat | v_hat | t_hat
            assert_eq!(out.block.len(), 15);
            assert_eq!(&out.block[0..2], &out.fused[0][..]);
            assert_eq!(&out.block[2..4], &out.fused[1][..]);
            assert_eq!(&out.block[4..6], &out.fused[2][..]);
            assert_eq!(&out.block[6..9], xs[0]);
            assert_eq!(&out.block[9..12], xs[1]);
            assert_eq!(&out.block[12..15], xs[2]);
        }
    }
}

#[test]
fn block_width_is_three_values_plus_three_embeddings() {
    let (_, mma) = build_mma(dims(3, 2, 2, false), 0);
    assert_eq!(mma.output_dim(), 15);
    let (_, mma) = build_mma(dims(32, 16, 16, false), 0);
    assert_eq!(mma.output_dim(), 3 * 16 + 3 * 32);
}

fn swap(store: &mut ParameterStore, a: &str, b: &str) {
    let va = value(store, a);
    let vb = value(store, b);
    store.set_value(a, vb).unwrap();
    store.set_value(b, va).unwrap();
}

#[test]
fn swapping_visual_and_text_permutes_weights_only() {
    let d = dims(4, 3, 2, true);
    let (store, mma) = build_mma(d, 21);
    let mut r = rng(22);
    let xs: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut r, 4)).collect();
    let base = run(&store, &mma, [&xs[0], &xs[1], &xs[2]]);

    // The visual-query and text-query modules trade places, and inside every
    // module the visual and text key/value projections trade places.
    let mut swapped = store.clone();
    let names: Vec<String> = store
        .iter()
        .map(|(n, _)| n.to_string())
        .filter(|n| n.starts_with("mma.attn.v."))
        .collect();
    for n in names {
        swap(&mut swapped, &n, &n.replacen("mma.attn.v.", "mma.attn.t.", 1));
    }
    for q in ["s", "v", "t"] {
        for kind in ["w_key", "w_val", "b_key", "b_val"] {
            swap(
                &mut swapped,
                &format!("mma.attn.{q}.{kind}_v"),
                &format!("mma.attn.{q}.{kind}_t"),
            );
        }
    }
    let perm = run(&swapped, &mma, [&xs[0], &xs[2], &xs[1]]);

    let permute = |w: &[f64]| vec![w[0], w[2], w[1]];
    // speech-query module: same query, key/value pairs permuted
    assert!(max_abs_diff(&perm.fused[0], &base.fused[0]) < 1e-12);
    assert!(max_abs_diff(&perm.weights[0], &permute(&base.weights[0])) < 1e-12);
    // the other two modules trade slots
    assert!(max_abs_diff(&perm.fused[1], &base.fused[2]) < 1e-12);
    assert!(max_abs_diff(&perm.fused[2], &base.fused[1]) < 1e-12);
    assert!(max_abs_diff(&perm.weights[1], &permute(&base.weights[2])) < 1e-12);
    assert!(max_abs_diff(&perm.weights[2], &permute(&base.weights[1])) < 1e-12);
}

#[test]
fn permuting_key_value_pairs_with_fixed_query() {
    // text-query module; speech and visual slots trade inputs and projections
    let d = dims(4, 3, 3, false);
    let (store, mma) = build_mma(d, 31);
    let mut r = rng(32);
    let xs: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut r, 4)).collect();
    let base = run(&store, &mma, [&xs[0], &xs[1], &xs[2]]);
    let mut swapped = store.clone();
    swap(&mut swapped, "mma.attn.t.w_key_s", "mma.attn.t.w_key_v");
    swap(&mut swapped, "mma.attn.t.w_val_s", "mma.attn.t.w_val_v");
    let perm = run(&swapped, &mma, [&xs[1], &xs[0], &xs[2]]);
    assert!(max_abs_diff(&perm.fused[2], &base.fused[2]) < 1e-12);
    let w = &base.weights[2];
    assert!(max_abs_diff(&perm.weights[2], &[w[1], w[0], w[2]]) < 1e-12);
}

#[test]
fn directional_attention_scales_logits_by_root_dk() {
    for d_k in [1usize, 2, 5] {
        let d = dims(3, d_k, 2, false);
        let mut store = ParameterStore::new();
        let params =
            DirectionalAttentionParams::build(&mut store, &mut Initializer::new(7), "mma", Modality::Visual, d).unwrap();
        randomize(&mut store, 8);
        let mut r = rng(9);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut r, 3)).collect();
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &store);
        let triple = StandardizedTriple {
            s_hat: ctx.tape.constant(Tensor::row(xs[0].clone())),
            v_hat: ctx.tape.constant(Tensor::row(xs[1].clone())),
            t_hat: ctx.tape.constant(Tensor::row(xs[2].clone())),
        };
        let out = directional_attention(&mut ctx, &triple, &params).unwrap();
        let q = vecmat(&xs[1], &value(&store, "mma.attn.v.w_query"));
        let logits: Vec<f64> = Modality::ALL
            .iter()
            .map(|m| dot(&q, &vecmat(&xs[m.index()], &value(&store, &format!("mma.attn.v.w_key_{}", m.key())))))
            .collect();
        let scaled: Vec<f64> = logits.iter().map(|l| l / (d_k as f64).sqrt()).collect();
        assert!(max_abs_diff(tape.value(out.weights).data(), &softmax(&scaled)) < 1e-12);
        if d_k == 1 {
            assert!(max_abs_diff(tape.value(out.weights).data(), &softmax(&logits)) < 1e-12);
        }
    }
}

#[test]
fn scaled_softmax_equals_softmax_of_scaled_logits() {
    let logits = [0.3, -2.0, 1.7];
    for d_k in [1.0f64, 3.0, 16.0] {
        let s = 1.0 / d_k.sqrt();
        let pre: Vec<f64> = logits.iter().map(|l| l * s).collect();
        assert_eq!(softmax_scaled(&logits, s), softmax_scaled(&pre, 1.0));
    }
    assert_eq!(softmax_scaled(&logits, 1.0), softmax_scaled(&logits, 1.0 / 1f64.sqrt()));
}

#[test]
fn query_key_mismatch_is_rejected_at_construction() {
    let bad = AttentionDims {
        d_model: 4,
        d_q: 3,
        d_k: 2,
        d_val: 2,
        bias: false,
    };
    let mut store = ParameterStore::new();
    let r = DirectionalAttentionParams::build(&mut store, &mut Initializer::new(0), "mma", Modality::Speech, bad);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn inconsistent_value_widths_are_rejected() {
    let mut store = ParameterStore::new();
    let mut init = Initializer::new(0);
    let s = DirectionalAttentionParams::build(&mut store, &mut init, "a", Modality::Speech, dims(4, 3, 2, false)).unwrap();
    let v = DirectionalAttentionParams::build(&mut store, &mut init, "a", Modality::Visual, dims(4, 3, 3, false)).unwrap();
    let t = DirectionalAttentionParams::build(&mut store, &mut init, "a", Modality::Text, dims(4, 3, 2, false)).unwrap();
    assert!(matches!(MultiModalAttention::new([s, v, t]), Err(Error::Config(_))));
}

#[test]
fn module_parameter_count_matches_enumeration() {
    for (d, expect) in [
        // 4*3 + 3*4*3 + 3*4*2
        (dims(4, 3, 2, false), 12 + 36 + 24),
        // plus 3 + 3*3 + 3*2 bias scalars
        (dims(4, 3, 2, true), 12 + 36 + 24 + 3 + 9 + 6),
        (dims(3, 2, 2, false), 6 + 18 + 18),
    ] {
        let mut store = ParameterStore::new();
        DirectionalAttentionParams::build(&mut store, &mut Initializer::new(0), "m", Modality::Text, d).unwrap();
        assert_eq!(store.num_scalars(), expect);
        assert_eq!(d.num_params(), expect);
        let tensors = if d.bias { 14 } else { 7 };
        assert_eq!(store.len(), tensors);
    }
}

#[test]
fn each_module_owns_its_query_projection() {
    let (store, _) = build_mma(dims(4, 3, 2, false), 0);
    let q: Vec<Tensor> = ["s", "v", "t"].iter().map(|m| value(&store, &format!("mma.attn.{m}.w_query"))).collect();
    assert_ne!(q[0], q[1]);
    assert_ne!(q[1], q[2]);
}

#[test]
fn gradient_check_through_block() {
    let d = dims(3, 2, 2, true);
    let mut store = ParameterStore::new();
    let mut init = Initializer::new(40);
    let st = Standardizer::build(&mut store, &mut init, "mma", [4, 3, 2], 3, Activation::Tanh).unwrap();
    let mma = MultiModalAttention::build(&mut store, &mut init, "mma", d).unwrap();
    randomize(&mut store, 41);
    let mut r = rng(42);
    let xs: Vec<Vec<f64>> = [4, 3, 2].iter().map(|&n| random_vec(&mut r, n)).collect();
    let targets = random_vec(&mut r, 15);
    let gc = mman_core::gradcheck::grad_check(&mut store, 1e-5, |tape, store| {
        let mut ctx = Ctx::new(tape, store);
        let inputs = [0, 1, 2].map(|i| ctx.tape.constant(Tensor::row(xs[i].clone())));
        let triple = st.standardize(&mut ctx, inputs)?;
        let out = mma.mma_block(&mut ctx, &triple)?;
        let t = ctx.tape.constant(Tensor::row(targets.clone()));
        let y = ctx.tape.mul(out, t)?;
        let y = ctx.tape.tanh(y);
        let parts: Vec<_> = (0..15).map(|j| ctx.tape.slice_cols(y, j, 1)).collect::<Result<_, _>>()?;
        ctx.tape.sum(&parts)
    })
    .unwrap();
    assert!(gc.max_relative_error < 1e-4, "{gc:?}");
    assert_eq!(gc.checked, store.num_scalars());
}
