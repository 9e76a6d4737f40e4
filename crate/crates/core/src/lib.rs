//! Core of a resource-constrained neural architecture search engine.
//!
//! Candidate networks are adapted by a recurrent policy through scale, insert
//! and remove actions. Each candidate is scored by a performance reward that is
//! softly penalized by resource-constraint violations, and the policy is trained
//! with accumulated-return policy gradients.
//!
//! This crate is `no_std` (it needs `alloc`) and performs no IO. File formats,
//! evaluator processes and the search driver live in the `rcnas` crate.
//!
//! Modules:
//!
//! * [`arch`]: architecture IR, validation, shape inference, module stacking
//! * [`resource`]: parameters, FLOPs, bytes accessed and compute intensity
//! * [`reward`]: penalized multi-objective reward
//! * [`space`]: feature-wise search spaces
//! * [`action`]: scale / insert / remove actions and their application
//! * [`policy`]: LSTM controller with exact log-probability gradients, Adam
//! * [`reinforce`]: returns, baseline and the policy-gradient estimator
//! * [`surrogate`]: deterministic stand-in for child-network training

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod action;
pub mod arch;
pub mod policy;
pub mod reinforce;
pub mod resource;
pub mod reward;
pub mod space;
pub mod surrogate;

mod math;

pub use action::{Action, ActionChoices, ActionError, Structural, StructuralKind};
pub use arch::{
    Activation, ArchError, ArchGraph, Architecture, BranchSpec, BranchType, Combine, LayerKind,
    LayerSpec, ModuleArch, ModuleSpec, StackingConfig, TensorShape, Violation, ViolationKind,
};
pub use policy::{ActionDistribution, Adam, PolicyConfig, PolicyNet, PolicyParams};
pub use reinforce::BaselineState;
pub use resource::ResourceReport;
pub use reward::{Constraint, Direction, Metric, RewardConfig};
pub use space::{Feature, SearchMode, SearchSpace, Value};
pub use surrogate::performance as surrogate_performance;
