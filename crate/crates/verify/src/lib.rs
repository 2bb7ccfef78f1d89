//! Holds the full acceptance run (`tests/acceptance.rs`). It lives in its own
//! package, named to sort last, so the long suite runs after every other
//! test binary of `cargo test --workspace`.
