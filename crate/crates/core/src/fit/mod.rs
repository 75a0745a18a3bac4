//! Recovering Hamiltonian parameters from peak data.

pub mod ambiguity;
pub mod anneal;
pub mod cost;
pub mod covariance;
pub mod params;

pub use ambiguity::{canonical_ambiguity_report, EquivalentModel};
pub use anneal::{anneal, FitConfig, FitMode, FitResult, InitJitter, ParamBounds, ProposalScales};
pub use cost::{cost, Assignment, BandAssignment, CostEvaluator, CostOptions, CostReport};
pub use covariance::{covariance, covariance_with, CovarianceReport};
