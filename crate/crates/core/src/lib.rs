//! Bayesian principal-stratification estimation of embedded dynamic treatment
//! regime outcomes in two-stage SMARTs with partially observed compliance.

pub mod augment;
pub mod dataset;
pub mod design;
pub mod error;
pub mod estimands;
pub mod gibbs;
pub mod mixture;
pub mod normal;
pub mod outcome;
pub mod persist;
pub mod replicate;
pub mod simgen;
pub mod truncmvn;
pub mod wishart;

pub use design::{Arm, Coordinate, CoordinateRole, Edtr, SlotId, SmartDesign, Term, TreatmentSequence};
pub use error::{Error, Result};
pub use dataset::{Dataset, OutcomeTransform, Subject};
pub use estimands::{BestSet, ClassEstimate, ComplianceClass, Direction, Summary, Waic};
pub use gibbs::{run_chain, Draw, PosteriorDraws, SamplerConfig};
pub use outcome::{LogisticConfig, ResponseVariant};
pub use simgen::{gen_trial, DesignKind, Scenario, SimulatedTrial};
