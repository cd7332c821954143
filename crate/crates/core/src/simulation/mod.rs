//! Data-generating processes and the Monte-Carlo studies built on them.

pub mod dgp;
pub mod studies;
