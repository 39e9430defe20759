//! Criterion benchmarks for the causal pipeline; see `benches/`.
