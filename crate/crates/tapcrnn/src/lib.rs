//! File formats, batch evaluation and the command line for the `tapcrnn`
//! speech-enhancement models. The numerics live in `tapcrnn-core`.

pub mod checkpoint;
pub mod cli;
pub mod dump;
pub mod error;
pub mod fsutil;
pub mod manifest;
pub mod parallel;
pub mod pipeline;
pub mod wav;
