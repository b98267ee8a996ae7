//! Membership scoring, classification and interventions.
//!
//! For cluster A with rules r_1..r_m, the membership score is
//! `S_A = sum(T_i * C_i) / sum(C_i)` where `C_i` is the confidence of r_i and
//! `T_i` is 1 when the student satisfies it. Unsatisfied rules still count in
//! the denominator.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Feature, N_FEATURES};
use crate::model::ClusterModel;
use crate::rules::{fmt_threshold, Op, RuleSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipScore {
    pub cluster: usize,
    pub score: f64,
    /// `T_i` per rule, in ruleset order.
    pub satisfied: Vec<bool>,
    pub numerator: f64,
    pub confidence_sum: f64,
}

pub fn membership_score(ruleset: &RuleSet, vector: &[f64]) -> Result<MembershipScore> {
    if ruleset.rules.is_empty() || !(ruleset.confidence_sum > 0.0) {
        return Err(Error::EmptyRuleSet { cluster: ruleset.cluster });
    }
    if vector.len() != N_FEATURES {
        return Err(Error::DimensionMismatch { expected: N_FEATURES, actual: vector.len() });
    }
    let satisfied: Vec<bool> = ruleset.rules.iter().map(|r| r.matches(vector)).collect();
    let numerator: f64 = ruleset.rules.iter().zip(&satisfied).map(|(r, &t)| if t { r.confidence } else { 0.0 }).sum();
    Ok(MembershipScore {
        cluster: ruleset.cluster,
        score: numerator / ruleset.confidence_sum,
        satisfied,
        numerator,
        confidence_sum: ruleset.confidence_sum,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RuleRef {
    pub cluster: usize,
    pub index: usize,
}

impl fmt::Display for RuleRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}r{}", self.cluster, self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    /// `None` means Unclassified.
    pub assigned: Option<usize>,
    pub scores: Vec<MembershipScore>,
    pub matched_rules: Vec<RuleRef>,
    pub violated_high_cluster_rules: Vec<ViolatedRule>,
    pub ambiguity_flag: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolatedRule {
    pub rule: RuleRef,
    /// Indices into the rule's conditions that the student fails.
    pub failed_conditions: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    /// Students with fewer logged actions than this stay Unclassified.
    pub min_actions: f64,
}

pub fn classify(vector: &[f64], model: &ClusterModel) -> Result<ClassificationResult> {
    classify_with(vector, model, &ClassifyOptions::default())
}

pub fn classify_with(vector: &[f64], model: &ClusterModel, opts: &ClassifyOptions) -> Result<ClassificationResult> {
    let k = model.k();
    if model.rulesets.len() != k || k < 2 {
        return Err(Error::Model(format!("model has {} rulesets for {k} clusters", model.rulesets.len())));
    }
    let scores = model
        .rulesets
        .iter()
        .map(|rs| membership_score(rs, vector))
        .collect::<Result<Vec<_>>>()?;
    let matched_rules = scores
        .iter()
        .flat_map(|s| s.satisfied.iter().enumerate().filter(|(_, &t)| t).map(move |(i, _)| RuleRef { cluster: s.cluster, index: i }))
        .collect();
    let violated_high_cluster_rules = match model.high_cluster() {
        Some(h) => model.rulesets[h]
            .rules
            .iter()
            .enumerate()
            .filter(|(i, _)| !scores[h].satisfied[*i])
            .map(|(i, r)| ViolatedRule {
                rule: RuleRef { cluster: h, index: i },
                failed_conditions: (0..r.conditions.len())
                    .filter(|&j| !r.conditions[j].holds(vector[r.conditions[j].feature.index()]))
                    .collect(),
            })
            .collect(),
        None => Vec::new(),
    };

    let best = scores.iter().map(|s| s.score).fold(0.0, f64::max);
    let evidence = vector[Feature::CountAll.index()] >= opts.min_actions;
    let (assigned, ambiguity_flag) = if best == 0.0 || !evidence {
        (None, false)
    } else {
        let sizes = model.cluster_sizes();
        let tied: Vec<usize> = scores.iter().filter(|s| s.score == best).map(|s| s.cluster).collect();
        let pick = *tied
            .iter()
            .max_by(|&&a, &&b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
            .expect("at least one cluster attains the max");
        (Some(pick), tied.len() > 1)
    };
    Ok(ClassificationResult { assigned, scores, matched_rules, violated_high_cluster_rules, ambiguity_flag })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Increase,
    Decrease,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub feature: Feature,
    pub direction: Direction,
    pub threshold: f64,
    pub source_rule: RuleRef,
    pub confidence: f64,
    /// Contains a `{threshold}` placeholder.
    pub message_template: String,
}

impl Intervention {
    pub fn message(&self) -> String {
        self.message_template.replace("{threshold}", &fmt_threshold(self.threshold))
    }
}

/// Recommendations for a student assigned to the Low cluster: one per
/// violated condition of a violated High-cluster rule, kept once per feature
/// (highest confidence wins) and ordered by confidence.
pub fn suggest_interventions(result: &ClassificationResult, model: &ClusterModel) -> Vec<Intervention> {
    let (Some(high), Some(low)) = (model.high_cluster(), model.low_cluster()) else {
        return Vec::new();
    };
    if result.assigned != Some(low) || high == low {
        return Vec::new();
    }
    let rs = &model.rulesets[high];
    let mut out: Vec<Intervention> = Vec::new();
    for v in &result.violated_high_cluster_rules {
        let i = v.rule.index;
        let Some(rule) = rs.rules.get(i) else { continue };
        for cond in v.failed_conditions.iter().filter_map(|&j| rule.conditions.get(j)) {
            let (direction, template) = match cond.op {
                Op::Gt => (Direction::Increase, format!("Try to increase your {} above {{threshold}}.", cond.feature.label())),
                Op::Le => (Direction::Decrease, format!("Try to keep your {} at or below {{threshold}}.", cond.feature.label())),
            };
            let iv = Intervention {
                feature: cond.feature,
                direction,
                threshold: cond.threshold,
                source_rule: RuleRef { cluster: high, index: i },
                confidence: rule.confidence,
                message_template: template,
            };
            match out.iter_mut().find(|o| o.feature == iv.feature) {
                Some(o) if iv.confidence > o.confidence => *o = iv,
                Some(_) => {}
                None => out.push(iv),
            }
        }
    }
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.source_rule.cmp(&b.source_rule)).then(a.feature.cmp(&b.feature)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::toy_model;
    use crate::rules::{AssociationRule, Condition};
    use proptest::prelude::*;

    fn rule(cluster: usize, conf: f64, conds: Vec<Condition>) -> AssociationRule {
        AssociationRule { conditions: conds, consequent: cluster, support: 10, hits: (conf * 10.0).round() as usize, confidence: conf }
    }

    fn gt(f: Feature, t: f64) -> Condition {
        Condition::new(f, Op::Gt, t)
    }

    fn le(f: Feature, t: f64) -> Condition {
        Condition::new(f, Op::Le, t)
    }

    fn vec_with(pairs: &[(Feature, f64)]) -> Vec<f64> {
        let mut v = vec![0.0; N_FEATURES];
        for &(f, x) in pairs {
            v[f.index()] = x;
        }
        v
    }

    #[test]
    fn hand_evaluated_score() {
        let rs = RuleSet::new(
            0,
            vec![
                rule(0, 0.9, vec![gt(Feature::FreqPlay, 1.0)]),
                rule(0, 0.6, vec![gt(Feature::FreqPause, 1.0)]),
                rule(0, 0.5, vec![gt(Feature::FreqStop, 1.0)]),
            ],
        )
        .unwrap();
        let v = vec_with(&[(Feature::FreqPlay, 2.0), (Feature::FreqStop, 2.0)]);
        let s = membership_score(&rs, &v).unwrap();
        assert!((s.score - 0.7).abs() < 1e-12);
        assert_eq!(s.satisfied, vec![true, false, true]);
        assert_eq!(membership_score(&rs, &vec_with(&[])).unwrap().score, 0.0);
        let all = vec_with(&[(Feature::FreqPlay, 2.0), (Feature::FreqPause, 2.0), (Feature::FreqStop, 2.0)]);
        assert_eq!(membership_score(&rs, &all).unwrap().score, 1.0);
    }

    #[test]
    fn empty_ruleset_rejected() {
        let rs = RuleSet { cluster: 0, rules: vec![], confidence_sum: 0.0 };
        assert!(membership_score(&rs, &vec_with(&[])).is_err());
    }

    /// A two-cluster model with hand-written rules: cluster 0 is Low, 1 is High.
    fn hand_model(high_size: usize, low_size: usize) -> ClusterModel {
        let mut m = toy_model();
        let high = m.high_cluster().unwrap();
        if high != 1 {
            m.labeling.labels.swap(0, 1);
            m.labeling.summary.swap(0, 1);
            m.labeling.rank.swap(0, 1);
        }
        m.clustering.assignment = std::iter::repeat_n(0, low_size).chain(std::iter::repeat_n(1, high_size)).collect();
        m.rulesets = vec![
            RuleSet::new(0, vec![rule(0, 0.7, vec![le(Feature::NVideosWatched, 3.0)])]).unwrap(),
            RuleSet::new(
                1,
                vec![
                    rule(1, 0.8, vec![gt(Feature::PropRewatched, 0.2)]),
                    rule(1, 0.6, vec![gt(Feature::PropRewatched, 0.1), le(Feature::FreqSpeedChange, 2.0)]),
                    rule(1, 0.5, vec![gt(Feature::NVideosWatched, 3.0)]),
                ],
            )
            .unwrap(),
        ];
        m
    }

    #[test]
    fn dominance_and_cold_start() {
        let m = hand_model(30, 10);
        let v = vec_with(&[(Feature::PropRewatched, 0.5), (Feature::NVideosWatched, 9.0)]);
        let r = classify(&v, &m).unwrap();
        assert_eq!(r.assigned, Some(1));
        assert!(!r.ambiguity_flag);
        assert!(r.violated_high_cluster_rules.is_empty());

        let mut cold = m.clone();
        cold.rulesets[0] = RuleSet::new(0, vec![rule(0, 0.7, vec![gt(Feature::FreqStop, 1.0)])]).unwrap();
        let r = classify(&vec_with(&[]), &cold).unwrap();
        assert_eq!(r.assigned, None);
        assert!(r.matched_rules.is_empty());
    }

    #[test]
    fn tie_goes_to_larger_cluster() {
        let mut m = hand_model(30, 10);
        m.rulesets[0] = RuleSet::new(
            0,
            vec![rule(0, 0.5, vec![le(Feature::FreqStop, 1.0)]), rule(0, 0.5, vec![gt(Feature::FreqStop, 10.0)])],
        )
        .unwrap();
        m.rulesets[1] = RuleSet::new(
            1,
            vec![rule(1, 0.5, vec![le(Feature::FreqPause, 1.0)]), rule(1, 0.5, vec![gt(Feature::FreqPause, 10.0)])],
        )
        .unwrap();
        let v = vec_with(&[]);
        let r = classify(&v, &m).unwrap();
        assert_eq!(r.scores[0].score, 0.5);
        assert_eq!(r.scores[1].score, 0.5);
        assert_eq!(r.assigned, Some(1));
        assert!(r.ambiguity_flag);
        let m2 = hand_model(10, 30);
        let mut m2b = m.clone();
        m2b.clustering.assignment = m2.clustering.assignment.clone();
        assert_eq!(classify(&v, &m2b).unwrap().assigned, Some(0));
    }

    #[test]
    fn interventions() {
        let m = hand_model(30, 10);
        // low learner: watched 2 videos, no rewatching
        let v = vec_with(&[(Feature::NVideosWatched, 2.0), (Feature::FreqSpeedChange, 4.0)]);
        let r = classify(&v, &m).unwrap();
        assert_eq!(r.assigned, Some(0));
        let iv = suggest_interventions(&r, &m);
        let got: Vec<(Feature, Direction, f64)> = iv.iter().map(|i| (i.feature, i.direction, i.confidence)).collect();
        assert_eq!(
            got,
            vec![
                (Feature::PropRewatched, Direction::Increase, 0.8),
                (Feature::FreqSpeedChange, Direction::Decrease, 0.6),
                (Feature::NVideosWatched, Direction::Increase, 0.5),
            ]
        );
        assert_eq!(iv[0].source_rule, RuleRef { cluster: 1, index: 0 });
        assert_eq!(iv[0].message(), "Try to increase your proportion of rewatched videos above 0.2.");

        // only the failing half of a two-condition rule is reported
        let v = vec_with(&[(Feature::NVideosWatched, 2.0), (Feature::PropRewatched, 0.15), (Feature::FreqSpeedChange, 4.0)]);
        let r = classify(&v, &m).unwrap();
        assert_eq!(r.assigned, Some(0));
        let iv = suggest_interventions(&r, &m);
        let got: Vec<(Feature, f64)> = iv.iter().map(|i| (i.feature, i.confidence)).collect();
        assert_eq!(got, vec![(Feature::PropRewatched, 0.8), (Feature::FreqSpeedChange, 0.6), (Feature::NVideosWatched, 0.5)]);

        // a student classified High gets nothing
        let hv = vec_with(&[(Feature::PropRewatched, 0.5), (Feature::NVideosWatched, 9.0)]);
        let hr = classify(&hv, &m).unwrap();
        assert!(suggest_interventions(&hr, &m).is_empty());
    }

    #[test]
    fn min_actions_gate() {
        let m = hand_model(30, 10);
        let v = vec_with(&[(Feature::PropRewatched, 0.5), (Feature::NVideosWatched, 9.0), (Feature::CountAll, 3.0)]);
        assert_eq!(classify(&v, &m).unwrap().assigned, Some(1));
        let r = classify_with(&v, &m, &ClassifyOptions { min_actions: 10.0 }).unwrap();
        assert_eq!(r.assigned, None);
    }

    proptest! {
        #[test]
        fn score_bounds_and_monotone(
            confs in prop::collection::vec(0.01f64..1.0, 1..12),
            thresholds in prop::collection::vec(-2.0f64..2.0, 12),
            x in prop::collection::vec(-3.0f64..3.0, N_FEATURES),
            flip in 0usize..12,
        ) {
            let rules: Vec<AssociationRule> = confs
                .iter()
                .enumerate()
                .map(|(i, &c)| rule(0, c, vec![gt(Feature::ALL[i % N_FEATURES], thresholds[i])]))
                .collect();
            let rs = RuleSet::new(0, rules).unwrap();
            let s = membership_score(&rs, &x).unwrap();
            prop_assert!((0.0..=1.0).contains(&s.score));
            let recomputed: f64 = rs.rules.iter().zip(&s.satisfied).map(|(r, &t)| if t { r.confidence } else { 0.0 }).sum::<f64>() / rs.confidence_sum;
            prop_assert!((recomputed - s.score).abs() <= 1e-12);
            // raising a feature can only turn more `>` rules on
            let i = flip % rs.rules.len();
            let mut y = x.clone();
            let c = rs.rules[i].conditions[0];
            y[c.feature.index()] = y[c.feature.index()].max(c.threshold + 1.0);
            let t = membership_score(&rs, &y).unwrap();
            prop_assert!(t.satisfied[i]);
            prop_assert!(t.score >= s.score);
            let again = membership_score(&rs, &x).unwrap();
            prop_assert_eq!(again.score.to_bits(), s.score.to_bits());
        }
    }
}
