//! Holds the `acceptance` test target, which checks the library and the
//! command line end to end and prints one PASS/FAIL line per criterion:
//!
//! ```text
//! cargo test -p binprobe-verify --test acceptance -- --nocapture
//! ```
