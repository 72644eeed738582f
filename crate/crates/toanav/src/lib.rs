//! File formats, the parallel training loop, suite evaluation and the
//! `toanav` command line, on top of `toanav-core`.

pub mod cli;
pub mod evaluate;
pub mod formats;
pub mod train;

pub use toanav_core as core;
