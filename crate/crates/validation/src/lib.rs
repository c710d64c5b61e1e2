//! Holds the `acceptance` test target, which exercises the whole workspace
//! and prints one pass/fail line per acceptance criterion.
//!
//! It lives in its own package so that it runs after every other test suite
//! in `cargo test --workspace`.
