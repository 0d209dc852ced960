//! Data-free structured filter pruning for convolutional networks.
//!
//! Filters are ranked by how well they align with each input channel's
//! maximally stretched direction (the leading right singular vector of the
//! channel's stacked kernels), or by one of the baseline criteria. Plans
//! drop the least important filters of each prune group, rewrite the graph
//! and weights, and the cost module accounts for the parameter and MAC
//! savings.
//!
//! ```
//! use filterprune::{fixtures, importance, netgraph, pruner};
//!
//! let model = fixtures::worked_toy();
//! let out = importance::rank_model(
//!     &model,
//!     importance::Method::OperatorNorm,
//!     Some(&["c1".to_string()]),
//!     &importance::RankOptions::default(),
//! )
//! .unwrap();
//! assert_eq!(out.reports[0].normalized, [1.0, 0.0, 1.0]);
//! assert_eq!(out.forward_passes, 0);
//!
//! let groups = netgraph::discover_groups(model.graph()).unwrap();
//! let plan = pruner::make_plan(&out.reports, &groups, 0.34, None, "").unwrap();
//! let pruned = pruner::apply_plan(&model, &plan).unwrap();
//! assert_eq!(pruned.kernel("c1").unwrap().n_out(), 2);
//! ```

pub mod cost;
pub mod error;
pub mod exec;
pub mod fixtures;
pub mod forward;
pub mod importance;
pub mod io;
pub mod model;
pub mod netgraph;
pub mod pruner;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
pub use model::Model;
