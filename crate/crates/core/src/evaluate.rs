//! Cross-validation, cluster-outcome statistics and partition agreement.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::classify;
use crate::cluster::GaParams;
use crate::discover::{select_k, vote, ClusterLabeling};
use crate::error::{Error, Result};
use crate::features::{apply_normalizer, fit_normalizer, Feature, N_FEATURES};
use crate::ingest::OutcomeRecord;
use crate::matrix::{mean, sample_sd, Matrix};
use crate::model::{train_model, ClusterModel, KChoice, TrainParams};
use crate::rules::RuleParams;
use crate::seed;
use crate::stats::{adjust_family, anova_one_way, chi_square_proportions, holm_bonferroni, wilcoxon_rank_sum, StatsResult};

fn choose2(x: usize) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same elements.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ra: HashMap<usize, usize> = HashMap::new();
    let mut rb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sa: f64 = ra.values().map(|&n| choose2(n)).sum();
    let sb: f64 = rb.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len());
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = (sa + sb) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Cohen's d with pooled SD. Zero pooled SD gives 0 for equal means and an
/// infinite effect otherwise.
pub fn cohens_d(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = if na + nb > 2.0 {
        (((na - 1.0).max(0.0) * sample_sd(a).powi(2) + (nb - 1.0).max(0.0) * sample_sd(b).powi(2)) / (na + nb - 2.0)).sqrt()
    } else {
        0.0
    };
    if pooled == 0.0 {
        if ma == mb {
            0.0
        } else {
            (ma - mb).signum() * f64::INFINITY
        }
    } else {
        (ma - mb) / pooled
    }
}

/// Cohen's kappa for two label vectors over the same categories.
pub fn cohens_kappa(a: &[usize], b: &[usize], categories: usize) -> f64 {
    let n = a.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mut ca = vec![0.0; categories];
    let mut cb = vec![0.0; categories];
    let mut agree = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        ca[x] += 1.0;
        cb[y] += 1.0;
        if x == y {
            agree += 1.0;
        }
    }
    let po = agree / n;
    let pe: f64 = ca.iter().zip(&cb).map(|(x, y)| x * y / (n * n)).sum();
    if pe >= 1.0 {
        return if po >= 1.0 { 1.0 } else { 0.0 };
    }
    (po - pe) / (1.0 - pe)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRank {
    pub feature: Feature,
    pub d: f64,
    /// +1 when the feature is higher in the High cluster, -1 when lower, 0 for no difference.
    pub direction: f64,
    pub p_value: f64,
    pub adjusted_p: f64,
}

/// Ranks the 21 features by |Cohen's d| between the High and Low clusters of
/// a two-cluster assignment.
pub fn rank_discriminative_features(raw: &Matrix, assignment: &[usize], high: usize) -> Result<Vec<FeatureRank>> {
    if raw.cols() != N_FEATURES {
        return Err(Error::DimensionMismatch { expected: N_FEATURES, actual: raw.cols() });
    }
    if assignment.len() != raw.rows() {
        return Err(Error::DimensionMismatch { expected: raw.rows(), actual: assignment.len() });
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    if k != 2 || high > 1 {
        return Err(Error::invalid(format!("feature ranking needs exactly two clusters, got {k}")));
    }
    let low = 1 - high;
    let mut ranks = Vec::with_capacity(N_FEATURES);
    let mut ps = Vec::with_capacity(N_FEATURES);
    for f in Feature::ALL {
        let col = raw.column(f.index());
        let hi: Vec<f64> = col.iter().zip(assignment).filter(|(_, &a)| a == high).map(|(x, _)| *x).collect();
        let lo: Vec<f64> = col.iter().zip(assignment).filter(|(_, &a)| a == low).map(|(x, _)| *x).collect();
        if hi.is_empty() || lo.is_empty() {
            return Err(Error::invalid("both clusters must be non-empty"));
        }
        let d = cohens_d(&hi, &lo);
        let p = wilcoxon_rank_sum(&hi, &lo)?.result.p_value;
        ps.push(p);
        ranks.push(FeatureRank { feature: f, d, direction: if d == 0.0 { 0.0 } else { d.signum() }, p_value: p, adjusted_p: p });
    }
    for (r, adj) in ranks.iter_mut().zip(holm_bonferroni(&ps)?) {
        r.adjusted_p = adj;
    }
    ranks.sort_by(|a, b| b.d.abs().total_cmp(&a.d.abs()).then(a.feature.cmp(&b.feature)));
    Ok(ranks)
}

/// Tests of learning outcome against cluster membership. Holm adjustment is
/// applied across the tests that could be computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeStats {
    pub grade_anova: StatsResult,
    /// Two clusters only.
    pub grade_wilcoxon: Option<StatsResult>,
    /// Two clusters only; `None` when a marginal is zero.
    pub pass_chi2: Option<StatsResult>,
    pub dropout_chi2: Option<StatsResult>,
}

impl OutcomeStats {
    pub fn all(&self) -> Vec<&StatsResult> {
        let mut v = vec![&self.grade_anova];
        v.extend(self.grade_wilcoxon.iter());
        v.extend(self.pass_chi2.iter());
        v.extend(self.dropout_chi2.iter());
        v
    }
}

pub fn outcome_stats(
    assignment: &[usize],
    k: usize,
    outcomes: &[&OutcomeRecord],
    dropout_week: u32,
) -> Result<OutcomeStats> {
    if assignment.len() != outcomes.len() {
        return Err(Error::DimensionMismatch { expected: assignment.len(), actual: outcomes.len() });
    }
    let mut grades: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut pass = vec![[0.0; 2]; k];
    let mut drop = vec![[0.0; 2]; k];
    for (&c, o) in assignment.iter().zip(outcomes) {
        grades[c].push(o.final_grade);
        pass[c][o.passed as usize] += 1.0;
        drop[c][o.dropped_by(dropout_week) as usize] += 1.0;
    }
    let groups: Vec<&[f64]> = grades.iter().map(|g| g.as_slice()).collect();
    let grade_anova = anova_one_way(&groups)?;
    let (grade_wilcoxon, pass_chi2, dropout_chi2) = if k == 2 {
        (
            Some(wilcoxon_rank_sum(&grades[0], &grades[1])?.result),
            chi_square_proportions([pass[0], pass[1]]).ok(),
            chi_square_proportions([drop[0], drop[1]]).ok(),
        )
    } else {
        (None, None, None)
    };
    let mut stats = OutcomeStats { grade_anova, grade_wilcoxon, pass_chi2, dropout_chi2 };
    let mut family: Vec<StatsResult> = stats.all().into_iter().cloned().collect();
    adjust_family(&mut family)?;
    let mut it = family.into_iter();
    stats.grade_anova = it.next().expect("anova present");
    for slot in [&mut stats.grade_wilcoxon, &mut stats.pass_chi2, &mut stats.dropout_chi2] {
        if slot.is_some() {
            *slot = it.next();
        }
    }
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvParams {
    pub folds: usize,
    pub inner_folds: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// Candidate `min_support_frac` values tried by the inner folds.
    pub support_grid: Vec<f64>,
    pub ga: GaParams,
    pub rules: RuleParams,
    pub seed: u64,
}

impl Default for CvParams {
    fn default() -> Self {
        CvParams {
            folds: 10,
            inner_folds: 3,
            k_min: 2,
            k_max: crate::discover::DEFAULT_K_MAX,
            support_grid: vec![0.05, 0.1, 0.2],
            ga: GaParams::default(),
            rules: RuleParams::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_ids: Vec<String>,
    pub k: usize,
    pub min_support_frac: f64,
    /// Agreement of rule-based classification with nearest-centroid assignment.
    pub accuracy: f64,
    pub kappa: f64,
    /// `confusion[proxy][assigned]`; the last column counts Unclassified.
    pub confusion: Vec<Vec<usize>>,
    pub planted_accuracy: Option<f64>,
    pub unclassified: usize,
    pub model: ClusterModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub mean_kappa: f64,
    pub mean_planted_accuracy: Option<f64>,
    pub sd_planted_accuracy: Option<f64>,
}

/// `folds` disjoint test folds covering `0..n`, from a seeded shuffle.
pub fn fold_assignment(n: usize, folds: usize, seed_value: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed_value));
    let mut out = vec![Vec::new(); folds];
    for (p, i) in idx.into_iter().enumerate() {
        out[p % folds].push(i);
    }
    for f in out.iter_mut() {
        f.sort_unstable();
    }
    out
}

struct Subset {
    ids: Vec<String>,
    raw: Matrix,
}

fn subset(ids: &[String], raw: &Matrix, rows: &[usize]) -> Subset {
    Subset { ids: rows.iter().map(|&i| ids[i].clone()).collect(), raw: raw.select_rows(rows) }
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in test {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

/// Classifies `test` rows with `model`, returning (assigned, proxy) labels
/// where Unclassified is encoded as `k`.
fn score_fold(model: &ClusterModel, test: &Matrix) -> Result<(Vec<usize>, Vec<usize>)> {
    let k = model.k();
    let mut assigned = Vec::with_capacity(test.rows());
    let mut proxy = Vec::with_capacity(test.rows());
    for row in test.iter_rows() {
        assigned.push(classify(row, model)?.assigned.unwrap_or(k));
        proxy.push(model.nearest_cluster(row)?);
    }
    Ok((assigned, proxy))
}

fn accuracy(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

/// Inner-loop choice of k (majority of per-fold index votes) and the support
/// grid ordered by mean inner accuracy, best first (grid order on ties).
fn inner_select(
    train: &Subset,
    outcomes: &[OutcomeRecord],
    cutoff_week: u32,
    params: &CvParams,
    fold_seed: u64,
) -> Result<(usize, Vec<f64>)> {
    let n = train.raw.rows();
    let inner = fold_assignment(n, params.inner_folds, seed::derive(fold_seed, 1, 0));
    let mut ks = Vec::with_capacity(inner.len());
    for (i, test) in inner.iter().enumerate() {
        let tr = subset(&train.ids, &train.raw, &complement(n, test));
        let norm = fit_normalizer(&tr.raw)?;
        let z = apply_normalizer(&tr.raw, &norm)?;
        let k_max = params.k_max.min(z.rows() - 1);
        let ga = GaParams { seed: seed::derive(fold_seed, 2, i as u64), ..params.ga.clone() };
        ks.push(select_k(&z, params.k_min..=k_max, &ga)?.k);
    }
    let k = majority(&ks);

    let mut scored = Vec::with_capacity(params.support_grid.len());
    for &s in &params.support_grid {
        let mut accs = Vec::with_capacity(inner.len());
        for (i, test) in inner.iter().enumerate() {
            let tr = subset(&train.ids, &train.raw, &complement(n, test));
            let te = train.raw.select_rows(test);
            let tp = TrainParams {
                k: KChoice::Fixed(k),
                ga: GaParams { seed: seed::derive(fold_seed, 3, i as u64), ..params.ga.clone() },
                rules: RuleParams { min_support_frac: s, ..params.rules.clone() },
            };
            match train_model(&tr.ids, &tr.raw, outcomes, cutoff_week, &tp) {
                Ok((model, _)) => {
                    let (a, p) = score_fold(&model, &te)?;
                    accs.push(accuracy(&a, &p));
                }
                // a support floor that starves a cluster of rules scores zero
                Err(Error::EmptyRuleSet { .. }) => accs.push(0.0),
                Err(e) => return Err(e),
            }
        }
        scored.push((mean(&accs), s));
    }
    // stable: equal scores keep grid order
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok((k, scored.into_iter().map(|(_, s)| s).collect()))
}

fn majority(ks: &[usize]) -> usize {
    if ks.len() == 3 {
        return vote([ks[0], ks[1], ks[2]]);
    }
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &k in ks {
        match counts.iter_mut().find(|(v, _)| *v == k) {
            Some((_, c)) => *c += 1,
            None => counts.push((k, 1)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    counts[0].0
}

/// Nested cross-validation of the whole train-and-classify pipeline.
///
/// `raw` rows align with `ids`; `outcomes` must cover every id. When `truth`
/// is given (planted archetype per row), each cluster is mapped to the
/// majority planted label of its training members and accuracy against the
/// planted labels is reported too.
pub fn nested_cv(
    ids: &[String],
    raw: &Matrix,
    outcomes: &[OutcomeRecord],
    truth: Option<&[usize]>,
    cutoff_week: u32,
    params: &CvParams,
) -> Result<CvReport> {
    let n = raw.rows();
    if ids.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: ids.len() });
    }
    if let Some(t) = truth {
        if t.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: t.len() });
        }
    }
    if params.folds < 2 || params.inner_folds < 2 {
        return Err(Error::invalid("need at least 2 outer and 2 inner folds"));
    }
    if n < params.folds * 2 {
        return Err(Error::invalid(format!("{n} students is too few for {} folds", params.folds)));
    }
    if params.support_grid.is_empty() {
        return Err(Error::invalid("support grid is empty"));
    }
    let folds = fold_assignment(n, params.folds, seed::derive(params.seed, 0xf0, 0));
    let truth_of: Option<HashMap<&str, usize>> =
        truth.map(|t| ids.iter().map(|s| s.as_str()).zip(t.iter().copied()).collect());

    let reports: Vec<Result<FoldReport>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, test)| {
            let fold_seed = seed::derive(params.seed, 0xf1, f as u64);
            let train = subset(ids, raw, &complement(n, test));
            let (k, ranked) = inner_select(&train, outcomes, cutoff_week, params, fold_seed)?;
            // the preferred floor can still starve a cluster on the full
            // outer-training set; fall back down the ranking before giving up
            let mut trained = None;
            let mut last_err = None;
            for &support in &ranked {
                let tp = TrainParams {
                    k: KChoice::Fixed(k),
                    ga: GaParams { seed: seed::derive(fold_seed, 4, 0), ..params.ga.clone() },
                    rules: RuleParams { min_support_frac: support, ..params.rules.clone() },
                };
                match train_model(&train.ids, &train.raw, outcomes, cutoff_week, &tp) {
                    Ok((model, _)) => {
                        trained = Some((model, support));
                        break;
                    }
                    Err(e @ Error::EmptyRuleSet { .. }) => last_err = Some(e),
                    Err(e) => return Err(e),
                }
            }
            let (model, support) = match trained {
                Some(t) => t,
                None => return Err(last_err.expect("support grid is non-empty")),
            };
            let te = raw.select_rows(test);
            let (assigned, proxy) = score_fold(&model, &te)?;
            let mut confusion = vec![vec![0usize; k + 1]; k];
            for (&a, &p) in assigned.iter().zip(&proxy) {
                confusion[p][a] += 1;
            }
            let planted_accuracy = truth_of.as_ref().map(|t| {
                let map = planted_map(&model, t);
                let hits = test
                    .iter()
                    .zip(&assigned)
                    .filter(|(&i, &a)| a < k && map[a] == Some(t[ids[i].as_str()]))
                    .count();
                hits as f64 / test.len() as f64
            });
            Ok(FoldReport {
                fold: f,
                test_ids: test.iter().map(|&i| ids[i].clone()).collect(),
                k,
                min_support_frac: support,
                accuracy: accuracy(&assigned, &proxy),
                kappa: cohens_kappa(&assigned, &proxy, k + 1),
                confusion,
                planted_accuracy,
                unclassified: assigned.iter().filter(|&&a| a == k).count(),
                model,
            })
        })
        .collect();
    let folds: Vec<FoldReport> = reports.into_iter().collect::<Result<_>>()?;
    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let kappas: Vec<f64> = folds.iter().map(|f| f.kappa).collect();
    let planted: Option<Vec<f64>> = folds.iter().map(|f| f.planted_accuracy).collect();
    Ok(CvReport {
        mean_accuracy: mean(&accs),
        sd_accuracy: sample_sd(&accs),
        mean_kappa: mean(&kappas),
        mean_planted_accuracy: planted.as_ref().map(|p| mean(p)),
        sd_planted_accuracy: planted.as_ref().map(|p| sample_sd(p)),
        folds,
    })
}

/// Majority planted label among each cluster's training members (lowest
/// label on ties).
fn planted_map(model: &ClusterModel, truth: &HashMap<&str, usize>) -> Vec<Option<usize>> {
    let k = model.k();
    let mut counts: Vec<HashMap<usize, usize>> = vec![HashMap::new(); k];
    for (id, &c) in model.training_ids.iter().zip(&model.clustering.assignment) {
        if let Some(&t) = truth.get(id.as_str()) {
            *counts[c].entry(t).or_default() += 1;
        }
    }
    counts
        .iter()
        .map(|m| m.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&t, _)| t))
        .collect()
}

/// The labeling of a model restricted to its summary rows, for reports.
pub fn summary_rows(labeling: &ClusterLabeling) -> Vec<(usize, String, usize, f64, f64, f64)> {
    labeling
        .summary
        .iter()
        .enumerate()
        .map(|(c, s)| (c, labeling.labels[c].to_string(), s.size, s.mean_grade, s.pass_rate, s.dropout_rate))
        .collect()
}
