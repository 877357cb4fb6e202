use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mman_core::data::generate_synthetic;
use mman_core::nn::Ctx;
use mman_core::training::{clip_grad_norm, Optimizer};
use mman_core::{Architecture, Conversation, Model, ModelConfig, SyntheticSpec, Tape, TrainConfig};
use std::hint::black_box;

fn conversation(cfg: &ModelConfig, len: usize) -> Conversation {
    let spec = SyntheticSpec {
        num_classes: cfg.num_classes,
        d_s: cfg.d_s,
        d_v_feat: cfg.d_v_feat,
        d_t: cfg.d_t,
        n_conversations: 1,
        n_speakers: 1,
        min_len: len,
        max_len: len,
        ..Default::default()
    };
    generate_synthetic(&spec).unwrap().remove(0)
}

fn forward(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let conv = conversation(&cfg, 12);
    let mut g = c.benchmark_group("forward");
    for arch in [Architecture::Speech, Architecture::Ef, Architecture::Mma, Architecture::Mman] {
        let model = Model::new(arch, &cfg, 0).unwrap();
        g.bench_function(BenchmarkId::from_parameter(arch.key()), |b| {
            b.iter(|| black_box(model.predict(black_box(&conv)).unwrap()))
        });
    }
    g.finish();
}

fn forward_backward(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let mut g = c.benchmark_group("forward_backward");
    for len in [4, 12, 32] {
        let conv = conversation(&cfg, len);
        let model = Model::new(Architecture::Mma, &cfg, 0).unwrap();
        g.bench_function(BenchmarkId::new("mma", len), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let loss = {
                    let mut ctx = Ctx::new(&mut tape, &model.store);
                    model.loss(&mut ctx, &conv).unwrap()
                };
                black_box(tape.backward(loss).unwrap())
            })
        });
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let conv = conversation(&cfg, 12);
    let tcfg = TrainConfig::default();
    let mut model = Model::new(Architecture::Mma, &cfg, 0).unwrap();
    let mut opt = Optimizer::new(&tcfg, &model.store);
    c.bench_function("train_step/mma", |b| {
        b.iter(|| {
            model.store.zero_grad();
            let mut tape = Tape::new();
            let loss = {
                let mut ctx = Ctx::new(&mut tape, &model.store);
                model.loss(&mut ctx, &conv).unwrap()
            };
            tape.backward(loss).unwrap().accumulate_into(&mut model.store);
            clip_grad_norm(&mut model.store, tcfg.clip_norm);
            opt.step(&mut model.store);
        })
    });
}

criterion_group!(benches, forward, forward_backward, train_step);
criterion_main!(benches);
