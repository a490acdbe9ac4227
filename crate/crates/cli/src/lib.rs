//! Command implementations behind the `ctefm` binary.

pub mod pipeline;
pub mod vocoder;
