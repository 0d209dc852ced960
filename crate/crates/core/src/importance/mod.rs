//! Per-filter importance criteria for one convolution layer.
//!
//! Passive criteria read only the kernel tensor: the operator-norm
//! (channel-wise rank-1 direction + trace) score, entry-wise l1/l2 norms
//! and distance from the geometric median. Active criteria (average
//! feature-map rank, nuclear-norm energy) need feature maps produced by
//! running data through the network; see [`rank_model`] for the driver that
//! enforces that split.

mod active;
mod operator_norm;
mod passive;
mod rank;

pub use crate::forward::Tap;
pub use active::{
    feature_map_energies, feature_map_ranks, score_energy, score_hrank, HRANK_REL_EPS,
};
pub use operator_norm::{direction_bank, score_operator_norm, DirectionBank};
pub use passive::{geometric_median, score_entrywise, score_gm, WeiszfeldOptions};
pub use rank::{rank_model, RankOptions, RankOutcome, DEFAULT_ACTIVE_SAMPLES};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    OperatorNorm,
    L1,
    L2,
    Gm,
    Hrank,
    Energy,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::OperatorNorm,
        Method::L1,
        Method::L2,
        Method::Gm,
        Method::Hrank,
        Method::Energy,
    ];

    /// Active methods need feature maps, i.e. input data.
    pub fn is_active(self) -> bool {
        matches!(self, Method::Hrank | Method::Energy)
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            Method::OperatorNorm => "operator-norm",
            Method::L1 => "l1",
            Method::L2 => "l2",
            Method::Gm => "gm",
            Method::Hrank => "hrank",
            Method::Energy => "energy",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.cli_name() == s || m.cli_name().replace('-', "_") == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// Importance scores of every filter of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub layer_id: String,
    pub method: Method,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl ImportanceReport {
    pub fn new(layer_id: impl Into<String>, method: Method, raw: Vec<f64>) -> Self {
        let normalized = match method {
            Method::OperatorNorm => normalize_squared(&raw),
            _ => normalize_by_max(&raw),
        };
        Self {
            layer_id: layer_id.into(),
            method,
            raw,
            normalized,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    /// Filter indices from least to most important; ties by index.
    pub fn ascending_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.normalized.len()).collect();
        idx.sort_by(|&a, &b| {
            self.normalized[a]
                .total_cmp(&self.normalized[b])
                .then(a.cmp(&b))
        });
        idx
    }
}

/// `a^2 / max(a^2)`; all zeros stay zero.
pub fn normalize_squared(raw: &[f64]) -> Vec<f64> {
    let sq: Vec<f64> = raw.iter().map(|a| a * a).collect();
    normalize_by_max(&sq)
}

/// `a / max(a)` for nonnegative scores; all zeros stay zero.
pub fn normalize_by_max(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(0.0f64, f64::max);
    if max == 0.0 {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|a| a / max).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_normalization_handles_negative_traces() {
        let r = ImportanceReport::new("c", Method::OperatorNorm, vec![-2.0, 1.0]);
        assert_eq!(r.normalized, [1.0, 0.25]);
    }

    #[test]
    fn single_filter_normalizes_to_one() {
        let r = ImportanceReport::new("c", Method::OperatorNorm, vec![0.3]);
        assert_eq!(r.normalized, [1.0]);
    }

    #[test]
    fn all_zero_scores_stay_zero() {
        for m in Method::ALL {
            let r = ImportanceReport::new("c", m, vec![0.0, 0.0]);
            assert_eq!(r.normalized, [0.0, 0.0]);
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.cli_name().parse::<Method>().unwrap(), m);
        }
        assert_eq!(
            "operator_norm".parse::<Method>().unwrap(),
            Method::OperatorNorm
        );
        assert!("entropy".parse::<Method>().is_err());
    }

    #[test]
    fn ascending_order_breaks_ties_by_index() {
        let r = ImportanceReport::new("c", Method::L1, vec![2.0, 1.0, 2.0, 1.0]);
        assert_eq!(r.ascending_order(), [1, 3, 0, 2]);
    }
}
