//! Acceptance checks for the stancelab workspace; see `tests/acceptance.rs`.
