//! Week-sliced analysis: cohort selection, training, outcome statistics and
//! the plain-text report with its CSV companions.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::discover::{ClusterLabel, KSelection};
use crate::error::{Error, Result};
use crate::evaluate::{
    adjusted_rand_index, nested_cv, outcome_stats, rank_discriminative_features, CvParams, CvReport, FeatureRank,
    OutcomeStats,
};
use crate::features::{featurize, to_matrix, Feature, FeatureConfig};
use crate::ingest::{OutcomeRecord, VideoCatalog, VideoEvent};
use crate::matrix::Matrix;
use crate::model::{train_model, ClusterModel, TrainParams};
use crate::sessionize::SessionConfig;
use crate::stats::StatsResult;

/// Students analysed at one week cutoff, rows aligned across fields.
#[derive(Clone, Debug)]
pub struct AnalysisSet {
    pub cutoff: u32,
    pub ids: Vec<String>,
    pub raw: Matrix,
    pub outcomes: Vec<OutcomeRecord>,
    /// Planted archetype per row when generator truth is supplied.
    pub truth: Option<Vec<usize>>,
}

/// Features at `cutoff` for every student still active in week `cutoff` or
/// later. Every student with events must have an outcome row.
pub fn analysis_set(
    events: &[VideoEvent],
    catalog: &VideoCatalog,
    outcomes: &[OutcomeRecord],
    cutoff: u32,
    session_cfg: &SessionConfig,
    feature_cfg: &FeatureConfig,
    truth: Option<&[(String, usize)]>,
) -> Result<AnalysisSet> {
    if cutoff == 0 || cutoff > catalog.weeks() {
        return Err(Error::invalid(format!("week cutoff {cutoff} outside 1..={}", catalog.weeks())));
    }
    let by_id: HashMap<&str, &OutcomeRecord> = outcomes.iter().map(|o| (o.student_id.as_str(), o)).collect();
    let truth_of: Option<HashMap<&str, usize>> = truth.map(|t| t.iter().map(|(s, a)| (s.as_str(), *a)).collect());
    let (ids, vectors) = featurize(events, catalog, cutoff, session_cfg, feature_cfg);
    let mut keep_ids = Vec::new();
    let mut keep_rows = Vec::new();
    let mut keep_out = Vec::new();
    let mut keep_truth = Vec::new();
    for (id, v) in ids.into_iter().zip(vectors) {
        let o = by_id.get(id.as_str()).ok_or_else(|| Error::Outcomes(format!("no outcome row for student {id}")))?;
        if o.last_active_week < cutoff {
            continue;
        }
        if let Some(t) = &truth_of {
            let a = t.get(id.as_str()).ok_or_else(|| Error::invalid(format!("no truth label for student {id}")))?;
            keep_truth.push(*a);
        }
        keep_rows.push(v);
        keep_out.push((*o).clone());
        keep_ids.push(id);
    }
    Ok(AnalysisSet {
        cutoff,
        ids: keep_ids,
        raw: to_matrix(&keep_rows),
        outcomes: keep_out,
        truth: truth_of.map(|_| keep_truth),
    })
}

#[derive(Clone, Debug)]
pub struct WeekAnalysis {
    pub cutoff: u32,
    pub n_students: usize,
    pub model: ClusterModel,
    pub selection: Option<KSelection>,
    pub stats: OutcomeStats,
    /// Two-cluster models only.
    pub ranking: Option<Vec<FeatureRank>>,
    pub cv: Option<CvReport>,
    /// Agreement of the clustering with planted archetypes.
    pub ari: Option<f64>,
}

pub fn analyze_week(set: &AnalysisSet, params: &TrainParams, cv: Option<&CvParams>) -> Result<WeekAnalysis> {
    let (model, selection) = train_model(&set.ids, &set.raw, &set.outcomes, set.cutoff, params)?;
    let refs: Vec<&OutcomeRecord> = set.outcomes.iter().collect();
    let assignment = &model.clustering.assignment;
    let stats = outcome_stats(assignment, model.k(), &refs, set.cutoff)?;
    let ranking = match (model.k(), model.high_cluster()) {
        (2, Some(h)) => Some(rank_discriminative_features(&set.raw, assignment, h)?),
        _ => None,
    };
    let ari = set.truth.as_ref().map(|t| adjusted_rand_index(assignment, t)).transpose()?;
    let cv = cv
        .map(|p| nested_cv(&set.ids, &set.raw, &set.outcomes, set.truth.as_deref(), set.cutoff, p))
        .transpose()?;
    Ok(WeekAnalysis { cutoff: set.cutoff, n_students: set.ids.len(), model, selection, stats, ranking, cv, ari })
}

/// Students still active in each course week: last active week ≥ w.
pub fn active_per_week(outcomes: &[OutcomeRecord], weeks: u32) -> Vec<(u32, usize)> {
    (1..=weeks).map(|w| (w, outcomes.iter().filter(|o| o.last_active_week >= w).count())).collect()
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<.001".into()
    } else {
        format!("{p:.3}")
    }
}

fn fmt_f(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.4}")
    }
}

fn stats_line(out: &mut String, what: &str, r: &StatsResult) {
    let effect = match (r.effect_size, r.magnitude) {
        (Some(e), Some(m)) => format!("  eta2={e:.4} ({m})"),
        (Some(e), None) => format!("  V={e:.4}"),
        _ => String::new(),
    };
    let _ = writeln!(
        out,
        "  {:<9} {:<22} stat={:<12} p={:<6} p_holm={}{}",
        what,
        r.test,
        fmt_f(r.statistic),
        fmt_p(r.p_value),
        fmt_p(r.adjusted_p),
        effect
    );
}

fn csv_block(out: &mut String, name: &str, header: &str, rows: &[String]) {
    let _ = writeln!(out, "[csv {name}]");
    let _ = writeln!(out, "{header}");
    for r in rows {
        let _ = writeln!(out, "{r}");
    }
    let _ = writeln!(out, "[end]");
}

/// Renders the evaluation report. Output depends only on its inputs.
pub fn render_report(weeks: &[WeekAnalysis], active: &[(u32, usize)], header: &[(String, String)]) -> String {
    let mut out = String::new();
    out.push_str("FUMA evaluation report\n");
    for (k, v) in header {
        let _ = writeln!(out, "{k}: {v}");
    }
    out.push('\n');
    out.push_str("Pass and dropout comparisons use Pearson chi-square; their effect size is Cramer's V, not eta2.\n\n");

    let mut cluster_rows = Vec::new();
    let mut kselect_rows = Vec::new();
    let mut feature_rows = Vec::new();
    let mut cv_rows = Vec::new();

    for w in weeks {
        let m = &w.model;
        let _ = writeln!(out, "== Week {} ==", w.cutoff);
        let _ = writeln!(out, "students: {}  k: {}", w.n_students, m.k());
        if let Some(sel) = &w.selection {
            let _ = writeln!(out, "index votes (silhouette, CH, C-index): {:?}", sel.votes);
            let _ = writeln!(out, "  {:>2}  {:>10}  {:>12}  {:>8}  {:>12}", "k", "silhouette", "CH", "C-index", "TWCV");
            for s in &sel.table {
                let _ = writeln!(
                    out,
                    "  {:>2}  {:>10.4}  {:>12}  {:>8.4}  {:>12.4}",
                    s.k,
                    s.silhouette,
                    fmt_f(s.calinski_harabasz),
                    s.c_index,
                    s.twcv
                );
                kselect_rows.push(format!(
                    "{},{},{},{},{},{}",
                    w.cutoff,
                    s.k,
                    s.silhouette,
                    s.calinski_harabasz,
                    s.c_index,
                    s.twcv
                ));
            }
        }
        if let Some(ari) = w.ari {
            let _ = writeln!(out, "ARI vs planted archetypes: {ari:.4}");
        }
        if m.labeling.tie {
            out.push_str("note: equal mean grades, labels set by pass rate then index\n");
        }
        let _ = writeln!(out, "  {:>7}  {:<8}  {:>5}  {:>10}  {:>9}  {:>12}", "cluster", "label", "n", "mean_grade", "pass_rate", "dropout_rate");
        for (c, s) in m.labeling.summary.iter().enumerate() {
            let label = m.labeling.labels[c].to_string();
            let _ = writeln!(
                out,
                "  {:>7}  {:<8}  {:>5}  {:>10.4}  {:>9.4}  {:>12.4}",
                c, label, s.size, s.mean_grade, s.pass_rate, s.dropout_rate
            );
            cluster_rows.push(format!(
                "{},{},{},{},{},{},{}",
                w.cutoff, c, label, s.size, s.mean_grade, s.pass_rate, s.dropout_rate
            ));
        }
        out.push_str("outcome tests (Holm-adjusted within the week):\n");
        let st = &w.stats;
        stats_line(&mut out, "grade", &st.grade_anova);
        let named = [("grade", &st.grade_wilcoxon), ("pass", &st.pass_chi2), ("dropout", &st.dropout_chi2)];
        for (what, r) in named {
            if let Some(r) = r {
                stats_line(&mut out, what, r);
            }
        }
        if let Some(rank) = &w.ranking {
            out.push_str("discriminative features (|d|, direction = sign(High - Low)):\n");
            for (i, r) in rank.iter().enumerate() {
                let dir = if r.direction > 0.0 {
                    "+"
                } else if r.direction < 0.0 {
                    "-"
                } else {
                    "0"
                };
                if i < 5 {
                    let _ = writeln!(
                        out,
                        "  {}. {:<24} d={:<8} dir={}  p_holm={}",
                        i + 1,
                        r.feature.name(),
                        fmt_f(r.d),
                        dir,
                        fmt_p(r.adjusted_p)
                    );
                }
                feature_rows.push(format!("{},{},{},{},{},{:e}", w.cutoff, i + 1, r.feature.name(), r.d, dir, r.adjusted_p));
            }
        }
        if let Some(cv) = &w.cv {
            let _ = writeln!(
                out,
                "nested CV: {} folds, accuracy {:.4} (sd {:.4}), kappa {:.4}",
                cv.folds.len(),
                cv.mean_accuracy,
                cv.sd_accuracy,
                cv.mean_kappa
            );
            if let (Some(m), Some(s)) = (cv.mean_planted_accuracy, cv.sd_planted_accuracy) {
                let _ = writeln!(out, "  accuracy vs planted archetypes {m:.4} (sd {s:.4})");
            }
            for f in &cv.folds {
                let planted = f.planted_accuracy.map(|p| p.to_string()).unwrap_or_default();
                cv_rows.push(format!(
                    "{},{},{},{},{},{},{},{}",
                    w.cutoff, f.fold, f.k, f.min_support_frac, f.accuracy, f.kappa, planted, f.unclassified
                ));
            }
        }
        out.push_str("rules:\n");
        for rs in &m.rulesets {
            for (i, r) in rs.rules.iter().enumerate() {
                let _ = writeln!(out, "  c{}r{}: {}", rs.cluster, i, r);
            }
        }
        out.push('\n');
    }

    let active_rows: Vec<String> = active.iter().map(|(w, n)| format!("{w},{n}")).collect();
    csv_block(&mut out, "active-per-week", "week,active_count", &active_rows);
    csv_block(
        &mut out,
        "cluster-outcomes",
        "week,cluster,label,size,mean_grade,pass_rate,dropout_rate",
        &cluster_rows,
    );
    csv_block(&mut out, "k-selection", "week,k,silhouette,calinski_harabasz,c_index,twcv", &kselect_rows);
    csv_block(&mut out, "feature-ranking", "week,rank,feature,d,direction,p_holm", &feature_rows);
    csv_block(&mut out, "cv-folds", "week,fold,k,min_support_frac,accuracy,kappa,planted_accuracy,unclassified", &cv_rows);
    out
}

/// Names of the CSV series a report carries.
pub const FIGURES: [&str; 5] = ["active-per-week", "cluster-outcomes", "k-selection", "feature-ranking", "cv-folds"];

/// Pulls one CSV series out of a rendered report.
pub fn extract_figure(report: &str, figure: &str) -> Result<String> {
    let open = format!("[csv {figure}]");
    let mut lines = report.lines().skip_while(|l| *l != open);
    if lines.next().is_none() {
        return Err(Error::invalid(format!("report has no {figure:?} series (known: {})", FIGURES.join(", "))));
    }
    let mut out = String::new();
    for l in lines {
        if l == "[end]" {
            return Ok(out);
        }
        out.push_str(l);
        out.push('\n');
    }
    Err(Error::invalid(format!("series {figure:?} is not terminated")))
}

/// Position of `f` in a ranking, 1-based.
pub fn rank_of(ranking: &[FeatureRank], f: Feature) -> Option<usize> {
    ranking.iter().position(|r| r.feature == f).map(|i| i + 1)
}

/// The High cluster's summary, if the model has one.
pub fn high_low(model: &ClusterModel) -> Option<(usize, usize)> {
    Some((model.labeling.cluster_with(ClusterLabel::High)?, model.labeling.cluster_with(ClusterLabel::Low)?))
}
