//! Benchmarks for the analysis routines; see benches/analysis.rs.
