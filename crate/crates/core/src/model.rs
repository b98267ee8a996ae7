//! The trained user model: normalizer, clustering, outcome labels and
//! per-cluster rulesets, persisted as a single JSON document.

use std::io::{Read, Write};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::cluster::{ga_kmeans, Clustering, GaParams};
use crate::discover::{label_clusters, seed_for_k, select_k, ClusterLabel, ClusterLabeling, KSelection};
use crate::error::{Error, Result};
use crate::features::{apply_normalizer, column_name, fit_normalizer, NormalizationParams, N_FEATURES};
use crate::ingest::OutcomeRecord;
use crate::matrix::Matrix;
use crate::rules::{mine_all, RuleParams, RuleSet};

pub const MODEL_FORMAT: &str = "fuma-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KChoice {
    Fixed(usize),
    Select { min: usize, max: usize },
}

impl KChoice {
    pub fn range(r: RangeInclusive<usize>) -> Self {
        KChoice::Select { min: *r.start(), max: *r.end() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub k: KChoice,
    pub ga: GaParams,
    pub rules: RuleParams,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            k: KChoice::Select { min: 2, max: crate::discover::DEFAULT_K_MAX },
            ga: GaParams::default(),
            rules: RuleParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    pub cutoff_week: u32,
    pub params: TrainParams,
    pub normalization: NormalizationParams,
    pub clustering: Clustering,
    pub training_ids: Vec<String>,
    pub labeling: ClusterLabeling,
    pub rulesets: Vec<RuleSet>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.clustering.k
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clustering.sizes()
    }

    pub fn high_cluster(&self) -> Option<usize> {
        self.labeling.cluster_with(ClusterLabel::High)
    }

    pub fn low_cluster(&self) -> Option<usize> {
        self.labeling.cluster_with(ClusterLabel::Low)
    }

    /// Nearest centroid in normalized space for a raw feature vector.
    pub fn nearest_cluster(&self, raw: &[f64]) -> Result<usize> {
        let z = self.normalization.normalize_row(raw)?;
        Ok(self.clustering.nearest(&z))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Model(format!("not a model file (format {:?})", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::Model(format!("unsupported model version {} (expected {MODEL_VERSION})", self.version)));
        }
        let expected: Vec<String> = (0..N_FEATURES).map(column_name).collect();
        if self.feature_names != expected {
            return Err(Error::Model("feature names differ from the canonical 21".into()));
        }
        let k = self.k();
        if k < 2 || self.clustering.centroids.rows() != k || self.clustering.centroids.cols() != N_FEATURES {
            return Err(Error::Model("centroid table does not match k".into()));
        }
        if self.normalization.means.len() != N_FEATURES {
            return Err(Error::Model("normalizer width is not 21".into()));
        }
        if self.labeling.labels.len() != k || self.labeling.summary.len() != k {
            return Err(Error::Model("labels do not cover every cluster".into()));
        }
        if self.rulesets.len() != k {
            return Err(Error::Model(format!("model has {} rulesets for {k} clusters", self.rulesets.len())));
        }
        for (c, rs) in self.rulesets.iter().enumerate() {
            if rs.cluster != c {
                return Err(Error::Model(format!("ruleset {c} is tagged for cluster {}", rs.cluster)));
            }
            if rs.rules.is_empty() {
                return Err(Error::EmptyRuleSet { cluster: c });
            }
            if rs.has_duplicates() {
                return Err(Error::Model(format!("ruleset {c} contains duplicate rules")));
            }
            let sum: f64 = rs.rules.iter().map(|r| r.confidence).sum();
            if sum.to_bits() != rs.confidence_sum.to_bits() || !(sum > 0.0) {
                return Err(Error::Model(format!("ruleset {c} confidence sum is inconsistent")));
            }
            for r in &rs.rules {
                if r.consequent != c || !(0.0..=1.0).contains(&r.confidence) || r.hits > r.support {
                    return Err(Error::Model(format!("ruleset {c} holds an invalid rule")));
                }
            }
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load<R: Read>(input: R) -> Result<Self> {
        let m: ClusterModel = serde_json::from_reader(input).map_err(|e| Error::Model(format!("cannot parse model: {e}")))?;
        m.validate()?;
        Ok(m)
    }
}

/// Fits the normalizer, clusters, labels and mines rules on one training set.
/// `raw` rows align with `ids`.
pub fn train_model(
    ids: &[String],
    raw: &Matrix,
    outcomes: &[OutcomeRecord],
    cutoff_week: u32,
    params: &TrainParams,
) -> Result<(ClusterModel, Option<KSelection>)> {
    if ids.len() != raw.rows() {
        return Err(Error::DimensionMismatch { expected: raw.rows(), actual: ids.len() });
    }
    if raw.cols() != N_FEATURES {
        return Err(Error::DimensionMismatch { expected: N_FEATURES, actual: raw.cols() });
    }
    let normalization = fit_normalizer(raw)?;
    let z = apply_normalizer(raw, &normalization)?;
    let (clustering, selection) = match params.k {
        KChoice::Fixed(k) => {
            let p = GaParams { seed: seed_for_k(params.ga.seed, k), ..params.ga.clone() };
            (ga_kmeans(&z, k, &p)?, None)
        }
        KChoice::Select { min, max } => {
            let sel = select_k(&z, min..=max, &params.ga)?;
            (sel.chosen().clone(), Some(sel))
        }
    };
    let labeling = label_clusters(&clustering, ids, outcomes, cutoff_week)?;
    let rulesets = mine_all(raw, &clustering.assignment, clustering.k, &params.rules)?;
    let model = ClusterModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        feature_names: (0..N_FEATURES).map(column_name).collect(),
        cutoff_week,
        params: params.clone(),
        normalization,
        clustering,
        training_ids: ids.to_vec(),
        labeling,
        rulesets,
    };
    model.validate()?;
    Ok((model, selection))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Two well-separated groups on a few features with outcomes to match.
    pub(crate) fn toy(n_per: usize) -> (Vec<String>, Matrix, Vec<OutcomeRecord>) {
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        let mut outcomes = Vec::new();
        for g in 0..2 {
            for i in 0..n_per {
                let id = format!("g{g}s{i:03}");
                let jitter = ((i * 7919 + g * 31) % 97) as f64 / 97.0;
                let mut r = vec![0.0; N_FEATURES];
                for (j, x) in r.iter_mut().enumerate() {
                    *x = (j as f64 + 1.0) * (1.0 + 4.0 * g as f64) + jitter * (1 + j % 3) as f64;
                }
                rows.push(r);
                let grade = if g == 1 { 0.75 + 0.2 * jitter } else { 0.2 + 0.3 * jitter };
                outcomes.push(OutcomeRecord::new(id.clone(), grade, 0.8, if g == 1 { 6 } else { 2 }, 6).unwrap());
                ids.push(id);
            }
        }
        (ids, Matrix::from_rows(&rows).unwrap(), outcomes)
    }

    pub(crate) fn toy_model() -> ClusterModel {
        let (ids, m, o) = toy(20);
        let p = TrainParams { k: KChoice::Fixed(2), ga: GaParams { generations: 10, ..GaParams::with_seed(3) }, ..Default::default() };
        train_model(&ids, &m, &o, 2, &p).unwrap().0
    }

    #[test]
    fn trains_and_labels() {
        let model = toy_model();
        assert_eq!(model.k(), 2);
        let high = model.high_cluster().unwrap();
        // every member of the high cluster comes from group 1
        for (id, &c) in model.training_ids.iter().zip(&model.clustering.assignment) {
            assert_eq!(c == high, id.starts_with("g1"));
        }
        assert!(model.labeling.summary[high].mean_grade > model.labeling.summary[1 - high].mean_grade);
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let model = toy_model();
        let text = model.to_json().unwrap();
        let back = ClusterModel::load(text.as_bytes()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn load_rejects_bad_models() {
        let model = toy_model();
        let mut dup = model.clone();
        let r = dup.rulesets[0].rules[0].clone();
        dup.rulesets[0].rules.push(r);
        dup.rulesets[0].confidence_sum = dup.rulesets[0].rules.iter().map(|r| r.confidence).sum();
        let err = ClusterModel::load(dup.to_json().unwrap().as_bytes()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        let mut v = model.clone();
        v.version = 99;
        assert!(ClusterModel::load(v.to_json().unwrap().as_bytes()).is_err());

        let mut missing = model.clone();
        missing.rulesets.pop();
        assert!(ClusterModel::load(missing.to_json().unwrap().as_bytes()).is_err());

        assert!(ClusterModel::load(&b"{\"format\": 3}"[..]).is_err());
    }
}
