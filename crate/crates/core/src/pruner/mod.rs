//! Pruning plans: choosing which channels each prune group drops, rewriting
//! the model accordingly, and checking the rewrite against the original.

mod apply;
mod plan;
mod verify;

pub use apply::apply_plan;
pub use plan::{drop_count, make_plan, GroupPlan, Propagation, PrunePlan};
pub use verify::{verify_equivalence, LayerCheck, VerifyReport};

/// A rewritten model; its provenance names the source model and plan.
pub type PrunedModel = crate::model::Model;
