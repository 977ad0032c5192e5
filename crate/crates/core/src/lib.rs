//! X-vine tail copula models for multivariate extremes.

pub mod estimation;
pub mod families;
pub mod model;
pub mod numerics;
pub mod reference;
pub mod simulation;
pub mod vine;
