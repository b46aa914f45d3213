//! Benchmarks live in `benches/`; `cargo bench -p rscam-bench`.
