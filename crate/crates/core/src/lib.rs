//! Implicit two-tower policies trained with evolutionary search.
//!
//! The numeric core is generic over [`numerics::Real`] (`f32` or `f64`);
//! the aliases below fix the scalar for the common cases.

pub mod envs;
pub mod error;
pub mod es_opt;
pub mod harness;
pub mod numerics;
pub mod policy;
pub mod rft;
pub mod srp_index;
pub mod towers;

pub use error::{Error, Result};
pub use numerics::{Matrix, Real, Rng};

pub type Matrix64 = numerics::Matrix<f64>;
pub type Matrix32 = numerics::Matrix<f32>;
pub type ParamVector64 = towers::ParamVector<f64>;
pub type ParamVector32 = towers::ParamVector<f32>;
pub type ActionSet64 = policy::ActionSet<f64>;
pub type SrpIndex64 = srp_index::SrpIndex<f64>;
pub type SrpIndex32 = srp_index::SrpIndex<f32>;
pub type RftTree64 = rft::RftTree<f64>;
pub type FavorFeatures64 = rft::FavorFeatures<f64>;
pub type QuadraticObjective64 = es_opt::QuadraticObjective<f64>;
