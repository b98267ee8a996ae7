//! Class association rules `X -> c` grown as a greedy confidence tree.
//!
//! From the empty rule, each node considers every single threshold condition
//! on the students it covers (midpoints between consecutive distinct values,
//! with `<=` and `>`). A condition is admissible when its support reaches the
//! floor and it lifts confidence by at least `min_confidence_improvement`; the
//! best `max_branching` admissible conditions become children. Every path is a
//! rule. Duplicates and rules dominated by a subset rule are then dropped.

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Feature, N_FEATURES};
use crate::matrix::Matrix;

/// Confidence comparisons are made with this slack so that an improvement of
/// exactly `min_confidence_improvement` is not lost to rounding.
const CONF_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Le => "<=",
            Op::Gt => ">",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: Feature,
    pub op: Op,
    /// Raw feature units.
    pub threshold: f64,
}

impl Condition {
    pub fn new(feature: Feature, op: Op, threshold: f64) -> Self {
        Condition { feature, op, threshold }
    }

    pub fn holds(&self, x: f64) -> bool {
        match self.op {
            Op::Le => x <= self.threshold,
            Op::Gt => x > self.threshold,
        }
    }

    /// Same feature and op, thresholds equal up to rounding. The same split can
    /// be reached from different nodes by different midpoint arithmetic.
    pub fn equivalent(&self, other: &Condition) -> bool {
        self.feature == other.feature
            && self.op == other.op
            && (self.threshold - other.threshold).abs()
                <= 1e-9 * (1.0 + self.threshold.abs().max(other.threshold.abs()))
    }

    /// Canonical order: feature, then threshold, then `<=` before `>`.
    pub fn canonical_cmp(&self, other: &Condition) -> Ordering {
        self.feature
            .cmp(&other.feature)
            .then(self.threshold.total_cmp(&other.threshold))
            .then(self.op.cmp(&other.op))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.feature, self.op, fmt_threshold(self.threshold))
    }
}

pub(crate) fn fmt_threshold(t: f64) -> String {
    let s = format!("{t:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationRule {
    /// Sorted canonically.
    pub conditions: Vec<Condition>,
    pub consequent: usize,
    /// Training students matching every condition.
    pub support: usize,
    /// Of those, how many belong to `consequent`.
    pub hits: usize,
    pub confidence: f64,
}

impl AssociationRule {
    pub fn matches(&self, vector: &[f64]) -> bool {
        rule_matches(&self.conditions, vector)
    }

    pub fn same_conditions(&self, other: &AssociationRule) -> bool {
        self.conditions.len() == other.conditions.len()
            && self.conditions.iter().zip(&other.conditions).all(|(a, b)| a.equivalent(b))
    }

    fn contains_all(&self, sub: &AssociationRule) -> bool {
        sub.conditions
            .iter()
            .all(|s| self.conditions.iter().any(|c| c.equivalent(s)))
    }

    /// No feature carries both `<= a` and `> b` with `b >= a`.
    pub fn is_consistent(&self) -> bool {
        self.conditions.iter().all(|le| {
            le.op != Op::Le
                || !self
                    .conditions
                    .iter()
                    .any(|gt| gt.op == Op::Gt && gt.feature == le.feature && gt.threshold >= le.threshold)
        })
    }
}

impl fmt::Display for AssociationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let conds: Vec<String> = self.conditions.iter().map(|c| c.to_string()).collect();
        write!(
            f,
            "{} => cluster {} (support {}, confidence {:.4})",
            if conds.is_empty() { "TRUE".to_string() } else { conds.join(" AND ") },
            self.consequent,
            self.support,
            self.confidence
        )
    }
}

/// True iff every condition holds; vacuously true for no conditions.
pub fn rule_matches(conditions: &[Condition], vector: &[f64]) -> bool {
    conditions.iter().all(|c| c.holds(vector[c.feature.index()]))
}

/// Support and confidence of `conditions -> target` on a training set.
pub fn rule_stats(conditions: &[Condition], target: usize, features: &Matrix, assignment: &[usize]) -> Result<(usize, f64)> {
    let mut support = 0;
    let mut hits = 0;
    for (i, &a) in assignment.iter().enumerate() {
        if rule_matches(conditions, features.row(i)) {
            support += 1;
            hits += (a == target) as usize;
        }
    }
    if support == 0 {
        return Err(Error::ZeroSupport);
    }
    Ok((support, hits as f64 / support as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleParams {
    /// Support floor as a fraction of the target cluster size.
    pub min_support_frac: f64,
    pub min_confidence_improvement: f64,
    pub max_len: usize,
    /// `None` expands every admissible condition.
    pub max_branching: Option<usize>,
}

impl Default for RuleParams {
    fn default() -> Self {
        RuleParams { min_support_frac: 0.1, min_confidence_improvement: 0.01, max_len: 3, max_branching: Some(3) }
    }
}

impl RuleParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_support_frac) {
            return Err(Error::invalid("min_support_frac must lie in [0,1]"));
        }
        if !(self.min_confidence_improvement >= 0.0) {
            return Err(Error::invalid("min_confidence_improvement must be >= 0"));
        }
        if self.max_len == 0 {
            return Err(Error::invalid("max_len must be >= 1"));
        }
        if self.max_branching == Some(0) {
            return Err(Error::invalid("max_branching must be >= 1"));
        }
        Ok(())
    }

    /// Minimum absolute support for a target cluster of `n_target` students.
    pub fn support_floor(&self, n_target: usize) -> f64 {
        (self.min_support_frac * n_target as f64).max(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub cluster: usize,
    pub rules: Vec<AssociationRule>,
    pub confidence_sum: f64,
}

impl RuleSet {
    pub fn new(cluster: usize, rules: Vec<AssociationRule>) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::EmptyRuleSet { cluster });
        }
        if let Some(r) = rules.iter().find(|r| r.consequent != cluster) {
            return Err(Error::Model(format!("rule for cluster {} stored in ruleset {cluster}", r.consequent)));
        }
        let confidence_sum = rules.iter().map(|r| r.confidence).sum();
        Ok(RuleSet { cluster, rules, confidence_sum })
    }

    pub fn rule_id(&self, i: usize) -> String {
        format!("c{}r{}", self.cluster, i)
    }

    pub fn has_duplicates(&self) -> bool {
        self.rules
            .iter()
            .enumerate()
            .any(|(i, a)| self.rules[i + 1..].iter().any(|b| a.same_conditions(b)))
    }
}

struct Candidate {
    cond: Condition,
    support: usize,
    hits: usize,
    confidence: f64,
}

/// Admissible single-condition extensions of the node covering `covered`.
fn candidates(
    features: &Matrix,
    is_target: &[bool],
    covered: &[usize],
    parent_conf: f64,
    floor: f64,
    params: &RuleParams,
) -> Vec<Candidate> {
    let mut out = Vec::new();
    let total_hits = covered.iter().filter(|&&i| is_target[i]).count();
    let total = covered.len();
    let admissible = |support: usize, hits: usize| {
        support as f64 >= floor
            && hits as f64 / support as f64 >= parent_conf + params.min_confidence_improvement - CONF_EPS
    };
    let mut vals: Vec<(f64, bool)> = Vec::with_capacity(total);
    for (j, &feature) in Feature::ALL.iter().enumerate().take(features.cols().min(N_FEATURES)) {
        vals.clear();
        vals.extend(covered.iter().map(|&i| (features.get(i, j), is_target[i])));
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut le_support = 0;
        let mut le_hits = 0;
        let mut idx = 0;
        while idx < vals.len() {
            let v = vals[idx].0;
            while idx < vals.len() && vals[idx].0 == v {
                le_support += 1;
                le_hits += vals[idx].1 as usize;
                idx += 1;
            }
            if idx == vals.len() {
                break;
            }
            let t = v + (vals[idx].0 - v) / 2.0;
            let gt_support = total - le_support;
            let gt_hits = total_hits - le_hits;
            if admissible(le_support, le_hits) {
                out.push(Candidate {
                    cond: Condition::new(feature, Op::Le, t),
                    support: le_support,
                    hits: le_hits,
                    confidence: le_hits as f64 / le_support as f64,
                });
            }
            if admissible(gt_support, gt_hits) {
                out.push(Candidate {
                    cond: Condition::new(feature, Op::Gt, t),
                    support: gt_support,
                    hits: gt_hits,
                    confidence: gt_hits as f64 / gt_support as f64,
                });
            }
        }
    }
    // equal confidence: wider coverage first, so perfect splits don't all
    // resolve to adjacent thresholds of one feature
    out.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(b.support.cmp(&a.support))
            .then(a.cond.canonical_cmp(&b.cond))
    });
    if let Some(b) = params.max_branching {
        out.truncate(b);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn grow(
    features: &Matrix,
    is_target: &[bool],
    target: usize,
    path: &mut Vec<Condition>,
    covered: &[usize],
    conf: f64,
    floor: f64,
    params: &RuleParams,
    out: &mut Vec<AssociationRule>,
) {
    if path.len() >= params.max_len {
        return;
    }
    for cand in candidates(features, is_target, covered, conf, floor, params) {
        path.push(cand.cond);
        let mut conditions = path.clone();
        conditions.sort_by(Condition::canonical_cmp);
        out.push(AssociationRule {
            conditions,
            consequent: target,
            support: cand.support,
            hits: cand.hits,
            confidence: cand.confidence,
        });
        let child: Vec<usize> = covered.iter().copied().filter(|&i| cand.cond.holds(features.get(i, cand.cond.feature.index()))).collect();
        grow(features, is_target, target, path, &child, cand.confidence, floor, params, out);
        path.pop();
    }
}

/// Sorts rules (confidence desc, support desc, shorter first, canonical
/// conditions) and removes duplicates and rules dominated by a subset rule
/// with at least the same confidence and support.
pub fn prune_rules(mut rules: Vec<AssociationRule>) -> Vec<AssociationRule> {
    rules.sort_by(rule_order);
    let mut unique: Vec<AssociationRule> = Vec::with_capacity(rules.len());
    for r in rules {
        if !unique.iter().any(|u| u.same_conditions(&r)) {
            unique.push(r);
        }
    }
    let rules = unique;
    let keep: Vec<bool> = rules
        .iter()
        .map(|r| {
            !rules.iter().any(|s| {
                s.conditions.len() < r.conditions.len()
                    && r.contains_all(s)
                    && s.confidence >= r.confidence
                    && s.support >= r.support
            })
        })
        .collect();
    rules.into_iter().zip(keep).filter_map(|(r, k)| k.then_some(r)).collect()
}

fn rule_order(a: &AssociationRule, b: &AssociationRule) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(b.support.cmp(&a.support))
        .then(a.conditions.len().cmp(&b.conditions.len()))
        .then_with(|| {
            for (x, y) in a.conditions.iter().zip(&b.conditions) {
                let o = x.canonical_cmp(y);
                if o != Ordering::Equal {
                    return o;
                }
            }
            Ordering::Equal
        })
}

/// Mines the rules characterizing cluster `target`. `features` is the raw
/// (un-normalized) matrix whose columns follow the canonical feature order.
pub fn mine_rules(features: &Matrix, assignment: &[usize], target: usize, params: &RuleParams) -> Result<RuleSet> {
    params.validate()?;
    let n = features.rows();
    if assignment.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: assignment.len() });
    }
    if n < 10 {
        return Err(Error::invalid(format!("rule mining needs at least 10 students, got {n}")));
    }
    if features.cols() > N_FEATURES {
        return Err(Error::DimensionMismatch { expected: N_FEATURES, actual: features.cols() });
    }
    let is_target: Vec<bool> = assignment.iter().map(|&a| a == target).collect();
    let n_target = is_target.iter().filter(|&&t| t).count();
    if n_target == 0 {
        return Err(Error::invalid(format!("cluster {target} has no training members")));
    }
    let floor = params.support_floor(n_target);
    let all: Vec<usize> = (0..n).collect();
    let mut rules = Vec::new();
    grow(features, &is_target, target, &mut Vec::new(), &all, n_target as f64 / n as f64, floor, params, &mut rules);
    RuleSet::new(target, prune_rules(rules))
}

/// One ruleset per cluster, mined in parallel.
pub fn mine_all(features: &Matrix, assignment: &[usize], k: usize, params: &RuleParams) -> Result<Vec<RuleSet>> {
    (0..k).into_par_iter().map(|c| mine_rules(features, assignment, c, params)).collect()
}
