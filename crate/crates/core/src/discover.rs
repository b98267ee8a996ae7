//! Choosing k by index vote and labeling clusters by outcome.

use std::collections::HashMap;
use std::fmt;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{ga_kmeans, Clustering, GaParams};
use crate::error::{Error, Result};
use crate::ingest::OutcomeRecord;
use crate::matrix::Matrix;
use crate::seed;
use crate::validity::{c_index_with, calinski_harabasz, silhouette_with, PairwiseDistances};

pub const DEFAULT_K_MAX: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub silhouette: f64,
    pub calinski_harabasz: f64,
    pub c_index: f64,
    pub twcv: f64,
}

#[derive(Clone, Debug)]
pub struct KSelection {
    pub k: usize,
    pub table: Vec<KScore>,
    /// Best k according to silhouette, Calinski-Harabasz and C-index.
    pub votes: [usize; 3],
    pub clusterings: Vec<Clustering>,
}

impl KSelection {
    pub fn chosen(&self) -> &Clustering {
        self.clusterings.iter().find(|c| c.k == self.k).expect("chosen k is in the table")
    }
}

/// Seed used for the GA run at a given k.
pub fn seed_for_k(master: u64, k: usize) -> u64 {
    seed::derive(master, 0x6b, k as u64)
}

fn best_by(table: &[KScore], key: impl Fn(&KScore) -> f64, maximize: bool) -> usize {
    let mut best = &table[0];
    for s in &table[1..] {
        let (a, b) = (key(s), key(best));
        let better = if maximize { a > b } else { a < b };
        if better {
            best = s;
        }
    }
    best.k
}

/// Majority vote of the three per-index winners; ties go to the smallest k.
pub fn vote(votes: [usize; 3]) -> usize {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for v in votes {
        match counts.iter_mut().find(|(k, _)| *k == v) {
            Some((_, c)) => *c += 1,
            None => counts.push((v, 1)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    counts[0].0
}

pub fn select_k(data: &Matrix, k_range: RangeInclusive<usize>, params: &GaParams) -> Result<KSelection> {
    if k_range.is_empty() {
        return Err(Error::invalid("empty k range"));
    }
    if *k_range.start() < 2 {
        return Err(Error::invalid("k range must start at 2 or more"));
    }
    if *k_range.end() >= data.rows() {
        return Err(Error::invalid(format!("k_max {} must be below n = {}", k_range.end(), data.rows())));
    }
    let pd = PairwiseDistances::new(data);
    let ks: Vec<usize> = k_range.collect();
    let runs: Vec<Result<(KScore, Clustering)>> = ks
        .par_iter()
        .map(|&k| {
            let p = GaParams { seed: seed_for_k(params.seed, k), ..params.clone() };
            let c = ga_kmeans(data, k, &p)?;
            let score = KScore {
                k,
                silhouette: silhouette_with(&pd, &c)?,
                calinski_harabasz: calinski_harabasz(data, &c)?,
                c_index: c_index_with(&pd, &c)?,
                twcv: c.twcv,
            };
            Ok((score, c))
        })
        .collect();
    let mut table = Vec::with_capacity(runs.len());
    let mut clusterings = Vec::with_capacity(runs.len());
    for r in runs {
        let (s, c) = r?;
        table.push(s);
        clusterings.push(c);
    }
    let votes = [
        best_by(&table, |s| s.silhouette, true),
        best_by(&table, |s| s.calinski_harabasz, true),
        best_by(&table, |s| s.c_index, false),
    ];
    Ok(KSelection { k: vote(votes), table, votes, clusterings })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterLabel {
    High,
    Low,
    /// Intermediate position when k > 2; 0 would be High.
    Rank(usize),
}

impl fmt::Display for ClusterLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterLabel::High => f.write_str("High"),
            ClusterLabel::Low => f.write_str("Low"),
            ClusterLabel::Rank(r) => write!(f, "Rank{}", r + 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub size: usize,
    pub mean_grade: f64,
    pub pass_rate: f64,
    pub dropout_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    pub labels: Vec<ClusterLabel>,
    /// `rank[c]`: 0 for the highest mean grade.
    pub rank: Vec<usize>,
    pub summary: Vec<OutcomeSummary>,
    /// Two clusters had the same mean grade and the tie-break rule was used.
    pub tie: bool,
    pub dropout_week: u32,
}

impl ClusterLabeling {
    pub fn cluster_with(&self, label: ClusterLabel) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }
}

/// Ranks clusters by mean final grade (then pass rate, then index). Dropout is
/// measured as "no activity after `dropout_week`".
pub fn label_clusters(
    clustering: &Clustering,
    student_ids: &[String],
    outcomes: &[OutcomeRecord],
    dropout_week: u32,
) -> Result<ClusterLabeling> {
    if student_ids.len() != clustering.assignment.len() {
        return Err(Error::DimensionMismatch { expected: clustering.assignment.len(), actual: student_ids.len() });
    }
    let by_id: HashMap<&str, &OutcomeRecord> = outcomes.iter().map(|o| (o.student_id.as_str(), o)).collect();
    let k = clustering.k;
    let mut grade = vec![0.0; k];
    let mut pass = vec![0usize; k];
    let mut drop = vec![0usize; k];
    let mut size = vec![0usize; k];
    for (id, &c) in student_ids.iter().zip(&clustering.assignment) {
        let o = by_id.get(id.as_str()).ok_or_else(|| Error::Outcomes(format!("missing outcome for clustered student {id}")))?;
        size[c] += 1;
        grade[c] += o.final_grade;
        pass[c] += o.passed as usize;
        drop[c] += o.dropped_by(dropout_week) as usize;
    }
    let summary: Vec<OutcomeSummary> = (0..k)
        .map(|c| {
            let n = size[c].max(1) as f64;
            OutcomeSummary {
                size: size[c],
                mean_grade: grade[c] / n,
                pass_rate: pass[c] as f64 / n,
                dropout_rate: drop[c] as f64 / n,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        summary[b]
            .mean_grade
            .total_cmp(&summary[a].mean_grade)
            .then(summary[b].pass_rate.total_cmp(&summary[a].pass_rate))
            .then(a.cmp(&b))
    });
    let tie = order.windows(2).any(|w| summary[w[0]].mean_grade == summary[w[1]].mean_grade);
    let mut rank = vec![0; k];
    let mut labels = vec![ClusterLabel::Low; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
        labels[c] = if r == 0 {
            ClusterLabel::High
        } else if r == k - 1 {
            ClusterLabel::Low
        } else {
            ClusterLabel::Rank(r)
        };
    }
    Ok(ClusterLabeling { labels, rank, summary, tie, dropout_week })
}
