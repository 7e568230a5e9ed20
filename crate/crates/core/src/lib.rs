pub mod cascade;
pub mod decoy;
pub mod error;
pub mod experiment;
pub mod leakage;
pub mod math;
pub mod skr;
pub mod sns;
