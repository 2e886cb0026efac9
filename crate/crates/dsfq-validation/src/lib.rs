//! Acceptance checks for dsfq live in `tests/acceptance.rs`:
//! `cargo test -p dsfq-validation --test acceptance`.
