//! Agent specifications, their probabilistic abstraction, and PCTL checking.

pub mod abstraction;
pub mod agent_model;
pub mod dsl;
pub mod env_model;
pub mod pctl;
pub mod prism;
pub mod reasoner;
pub mod runtime;
