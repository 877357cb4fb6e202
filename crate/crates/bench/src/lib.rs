//! Criterion benchmarks for the model forward and backward passes; see `benches/`.
