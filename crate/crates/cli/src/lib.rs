//! Run configuration, JSON-lines logging and plotting behind the `exo2ego`
//! binary.

pub mod config;
pub mod log;
pub mod plot;
