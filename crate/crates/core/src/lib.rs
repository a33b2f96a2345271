//! Simulation and estimation tools for sensitivity analysis of marginal
//! structural models under unmeasured time-varying confounding.

pub mod bmsm;
pub mod bsa;
pub mod data;
pub mod dgp;
pub mod error;
pub mod glm;
pub mod harness;
pub mod mh;
pub mod msm;
pub mod oracle;
pub mod seed;
pub mod sf;

pub use error::{Error, Result};
