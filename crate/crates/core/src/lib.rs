//! Core-entailment reasoning for normal Boolean conjunctive queries over
//! existential rules.
//!
//! The crate materializes universal models with the chase, computes cores,
//! and runs the static analyses (jointly affected positions, restraints,
//! reliances) that decide when a plain chase result already answers a query
//! with negation the same way the core model would. Rule sets with negated
//! body atoms are evaluated stratum by stratum with a core computation at
//! every boundary.

pub mod analysis;
pub mod chase;
pub mod cli;
pub mod entailment;
pub mod hom;
pub mod io;
pub mod model;
pub mod stratified;

pub use model::{Atom, Interpretation, Query, Rule, RuleSet, Term};
