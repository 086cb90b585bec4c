use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Dataset, Instance};
use crate::{Error, Result};

/// Month sets for the five development roles.
///
/// Roles are pairwise disjoint, except that `classifier_val` and
/// `deferral_train` may share months (month 4 by default).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalSplit {
    pub classifier_train: Vec<u32>,
    pub classifier_val: Vec<u32>,
    pub deferral_train: Vec<u32>,
    pub deferral_val: Vec<u32>,
    pub test: Vec<u32>,
}

impl Default for TemporalSplit {
    fn default() -> Self {
        TemporalSplit {
            classifier_train: vec![1, 2, 3],
            classifier_val: vec![4],
            deferral_train: vec![4, 5, 6],
            deferral_val: vec![7],
            test: vec![8],
        }
    }
}

impl TemporalSplit {
    fn roles(&self) -> [(&'static str, &[u32]); 5] {
        [
            ("classifier_train", &self.classifier_train),
            ("classifier_val", &self.classifier_val),
            ("deferral_train", &self.deferral_train),
            ("deferral_val", &self.deferral_val),
            ("test", &self.test),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let roles = self.roles();
        for (a, (name_a, months_a)) in roles.iter().enumerate() {
            if months_a.is_empty() {
                return Err(Error::Config(format!("split role '{name_a}' has no months")));
            }
            for (name_b, months_b) in roles.iter().skip(a + 1) {
                if (*name_a, *name_b) == ("classifier_val", "deferral_train") {
                    continue;
                }
                if let Some(m) = months_a.iter().find(|m| months_b.contains(m)) {
                    return Err(Error::SplitOverlap {
                        first: name_a,
                        second: name_b,
                        month: *m,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn all_months(&self) -> BTreeSet<u32> {
        self.roles().iter().flat_map(|(_, m)| m.iter().copied()).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct SplitDataset {
    pub classifier_train: Vec<Instance>,
    pub classifier_val: Vec<Instance>,
    pub deferral_train: Vec<Instance>,
    pub deferral_val: Vec<Instance>,
    pub test: Vec<Instance>,
}

impl SplitDataset {
    /// Applies `f` to every instance of every subset.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut Instance)) {
        for subset in [
            &mut self.classifier_train,
            &mut self.classifier_val,
            &mut self.deferral_train,
            &mut self.deferral_val,
            &mut self.test,
        ] {
            subset.iter_mut().for_each(&mut f);
        }
    }
}

pub fn make_temporal_splits(dataset: &Dataset, split: &TemporalSplit) -> Result<SplitDataset> {
    split.validate()?;
    let present = dataset.months();
    if let Some(m) = split.all_months().into_iter().find(|m| !present.contains(m)) {
        return Err(Error::MonthOutOfRange(m));
    }
    let pick = |months: &[u32]| -> Vec<Instance> {
        dataset
            .instances
            .iter()
            .filter(|i| months.contains(&i.month))
            .cloned()
            .collect()
    };
    Ok(SplitDataset {
        classifier_train: pick(&split.classifier_train),
        classifier_val: pick(&split.classifier_val),
        deferral_train: pick(&split.deferral_train),
        deferral_val: pick(&split.deferral_val),
        test: pick(&split.test),
    })
}
