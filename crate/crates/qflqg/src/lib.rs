//! File formats, artifacts, parallel Monte Carlo, verification oracles and
//! the command-line frontend on top of `qflqg-core`.

pub mod artifacts;
pub mod cli;
pub mod formats;
pub mod oracles;
pub mod outputs;
pub mod parallel;
pub mod verify;
