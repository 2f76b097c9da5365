//! Benchmarks for the g3 workspace live in `benches/`.
