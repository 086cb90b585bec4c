//! Tabular instances, ingestion and temporal splits.

mod io;
mod scaler;
mod scorer;
mod split;
pub mod synthetic;
mod threshold;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use io::{load_dataset, save_dataset};
pub use scaler::FeatureScaler;
pub use scorer::{fit_reference_scorer, FittedScorer, LogisticScorer, Scorer, ScorerConfig};
pub use split::{make_temporal_splits, SplitDataset, TemporalSplit};
pub use threshold::{empirical_fpr, select_threshold};

pub const LEGITIMATE: u8 = 0;
pub const FRAUD: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Protected,
    Reference,
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Group::Protected => "protected",
            Group::Reference => "reference",
        })
    }
}

/// One row of the base dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: u8,
    pub group: Group,
    pub month: u32,
    /// Model fraud probability `m(x)`; filled by the scorer when not read from file.
    pub score: Option<f64>,
}

impl Instance {
    pub fn score_or_err(&self) -> crate::Result<f64> {
        self.score
            .ok_or_else(|| crate::Error::Integrity(format!("instance {} has no model score", self.id)))
    }
}

/// How the protected group is read off the group column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtectedRule {
    /// Numeric value at or above the bound (e.g. age >= 50).
    AtLeast(f64),
    /// Raw cell text equal to the given value.
    Equals(String),
}

impl Default for ProtectedRule {
    fn default() -> Self {
        ProtectedRule::AtLeast(50.0)
    }
}

/// Column-name map for ingestion. The group column stays in the feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub label: String,
    pub month: String,
    pub group: String,
    #[serde(default)]
    pub protected: ProtectedRule,
    #[serde(default)]
    pub score: Option<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub exclude: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl Schema {
    pub fn new(label: &str, month: &str, group: &str) -> Self {
        Schema {
            label: label.to_owned(),
            month: month.to_owned(),
            group: group.to_owned(),
            protected: ProtectedRule::default(),
            score: None,
            categorical: Vec::new(),
            exclude: Vec::new(),
            delimiter: default_delimiter(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub feature_names: Vec<String>,
    /// Category strings per categorical column, indexed by integer code.
    pub categories: BTreeMap<String, Vec<String>>,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Feature index of the group column.
    pub fn protected_index(&self) -> usize {
        self.feature_index(&self.schema.group)
            .expect("group column is always a feature")
    }

    pub fn months(&self) -> std::collections::BTreeSet<u32> {
        self.instances.iter().map(|i| i.month).collect()
    }

    pub fn has_scores(&self) -> bool {
        self.instances.iter().all(|i| i.score.is_some())
    }
}
