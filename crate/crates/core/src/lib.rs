//! Sobol' sensitivity indices with robustness analysis under perturbations
//! of the input marginal densities.
//!
//! The pipeline is: build a pick-freeze design ([`design`]), evaluate the
//! model once, estimate nominal indices ([`estimators`]), estimate Fréchet
//! derivatives of every index along indicator perturbations of each marginal
//! ([`frechet`]), then scan optimally perturbed densities by reweighting the
//! stored evaluations ([`perturb`]). Nothing after the model evaluation
//! calls the model again.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod design;
pub mod error;
pub mod estimators;
pub mod frechet;
pub mod margins;
pub mod models;
pub mod perturb;
pub mod study;

pub use design::{EvalBundle, PickFreezeDesign};
pub use error::{Error, Result};
pub use estimators::{NominalIndices, SobolEstimates};
pub use frechet::DerivativeTable;
pub use margins::{AxisPartition, MarginalDensity, MarginalSpec, Partition, UnitCubeMap};
pub use models::{Model, ModelKind, ModelSpec};
pub use perturb::{IndexKind, PerturbationPlan, PerturbedDensity, RobustnessReport, Target};
