//! JSON documents exchanged between pipeline stages.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::json::to_canonical;
use super::manifest::write_atomic;
use crate::cost::CostReport;
use crate::error::{Error, Result};
use crate::importance::{ImportanceReport, Method};
use crate::netgraph::PruneGroup;
use crate::pruner::PrunePlan;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Output of `rank`; carries the prune groups so `plan` needs no model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresDocument {
    pub tool_version: String,
    pub model_hash: String,
    pub method: Method,
    pub reports: Vec<ImportanceReport>,
    pub groups: Vec<PruneGroup>,
}

impl ScoresDocument {
    pub fn new(
        model_hash: String,
        method: Method,
        reports: Vec<ImportanceReport>,
        groups: Vec<PruneGroup>,
    ) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            model_hash,
            method,
            reports,
            groups,
        }
    }
}

/// Output of `plan`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub tool_version: String,
    #[serde(flatten)]
    pub plan: PrunePlan,
}

impl PlanDocument {
    pub fn new(plan: PrunePlan) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            plan,
        }
    }
}

/// What a model hash covers: the graph alone when no weights were available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HashScope {
    Graph,
    GraphAndWeights,
}

/// Output of `cost`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostDocument {
    pub tool_version: String,
    pub model_hash: String,
    pub hash_scope: HashScope,
    #[serde(flatten)]
    pub report: CostReport,
}

impl CostDocument {
    pub fn new(model_hash: String, hash_scope: HashScope, report: CostReport) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            model_hash,
            hash_scope,
            report,
        }
    }
}

pub fn write_document<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    write_atomic(path, to_canonical(doc)?.as_bytes())
}

pub fn read_document<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
