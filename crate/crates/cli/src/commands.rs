use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;

use anyhow::{anyhow, Context};
use serde::Serialize;

use fuma_core::classify::{classify_with, suggest_interventions, ClassifyOptions};
use fuma_core::cluster::GaParams;
use fuma_core::evaluate::CvParams;
use fuma_core::features::{featurize, read_feature_csv, to_matrix, write_feature_csv, FeatureConfig, FrequencyBasis};
use fuma_core::ingest::{
    load_catalog, load_outcomes, parse_event_log, reconcile, write_catalog, write_event_log, write_outcomes, OutcomeRecord,
    ParseReport, VideoCatalog, VideoEvent,
};
use fuma_core::model::{train_model, ClusterModel, KChoice, TrainParams};
use fuma_core::pipeline::{active_per_week, analysis_set, analyze_week, extract_figure, render_report};
use fuma_core::rules::RuleParams;
use fuma_core::sessionize::{build_watch_records, dump_sessions, SessionConfig};
use fuma_core::synth::{generate_cohort, read_truth, write_truth, CohortConfig};

use crate::output::{write_atomic, write_to, Run};
use crate::{
    Basis, Cli, ClassifyArgs, Command, DiscoverArgs, EvaluateArgs, FeaturizeArgs, GaArgs, IngestArgs, InterveneArgs,
    LogArgs, PlotdataArgs, RuleArgs, RulesArgs, SimulateArgs,
};

#[derive(Debug)]
pub enum Failure {
    /// Bad invocation: exit 2.
    Usage(String),
    /// Bad or unreadable data: exit 1.
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<fuma_core::Error>() {
            Some(fuma_core::Error::InvalidArgument(m)) => Failure::Usage(m.clone()),
            _ => Failure::Data(e),
        }
    }
}

impl From<fuma_core::Error> for Failure {
    fn from(e: fuma_core::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} file {} does not exist", path.display())))
    }
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Data(anyhow!("cannot start worker pool: {e}")))?;
    }
    let run = match &cli.command {
        Command::Simulate(a) => simulate(a)?,
        Command::Ingest(a) => ingest(a)?,
        Command::Featurize(a) => featurize_cmd(a)?,
        Command::Discover(a) => discover(a)?,
        Command::Rules(a) => rules(a)?,
        Command::Classify(a) => classify_cmd(a)?,
        Command::Intervene(a) => intervene(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Plotdata(a) => plotdata(a)?,
    };
    run.finish(cli.manifest.as_deref(), cli.jobs)?;
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<Run> {
    let mut cfg = match &a.config {
        Some(p) => {
            require(p, "config")?;
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            CohortConfig::from_toml(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => CohortConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(n) = a.n_students {
        cfg.n_students = n;
    }
    if let Some(s) = a.separation {
        cfg.separation = s;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let cohort = generate_cohort(&cfg)?;
    write_atomic(&a.out, |w| Ok(write_event_log(&cohort.events, w)?))?;
    write_atomic(&a.catalog, |w| Ok(write_catalog(&cohort.catalog, w)?))?;
    write_atomic(&a.outcomes, |w| Ok(write_outcomes(&cohort.outcomes, w)?))?;
    if let Some(t) = &a.truth {
        write_atomic(t, |w| Ok(write_truth(&cohort, w)?))?;
    }
    let passed = cohort.outcomes.iter().filter(|o| o.passed).count();
    println!(
        "{} students, {} events, pass rate {:.4}",
        cohort.outcomes.len(),
        cohort.events.len(),
        passed as f64 / cohort.outcomes.len().max(1) as f64
    );
    let mut run = Run::new("simulate").seed(a.seed).params(&cfg).output(Some(&a.out)).output(Some(&a.catalog));
    if let Some(c) = &a.config {
        run = run.input(c);
    }
    Ok(run.output(Some(&a.outcomes)).output(a.truth.as_deref()))
}

/// Parses and reconciles an event log against its catalog.
fn read_log(log: &LogArgs) -> Result<(Vec<VideoEvent>, VideoCatalog, ParseReport)> {
    require(&log.events, "events")?;
    require(&log.catalog, "catalog")?;
    let catalog = load_catalog(open(&log.catalog)?)?;
    let (events, mut report) = parse_event_log(open(&log.events)?, log.strict)?;
    let events = reconcile(events, &catalog, &mut report);
    Ok((events, catalog, report))
}

fn read_outcomes(path: &Path, pass_threshold: f64, weeks: u32) -> Result<Vec<OutcomeRecord>> {
    require(path, "outcomes")?;
    if !(0.0..=1.0).contains(&pass_threshold) {
        return Err(usage("--pass-threshold must be in [0, 1]"));
    }
    Ok(load_outcomes(open(path)?, pass_threshold, weeks)?)
}

fn log_params(log: &LogArgs) -> serde_json::Value {
    serde_json::json!({ "strict": log.strict, "course_start": log.course_start })
}

fn ingest(a: &IngestArgs) -> Result<Run> {
    let (events, catalog, report) = read_log(&a.log)?;
    println!("accepted {}  rejected {}  orphaned {}  clamped {}", report.accepted, report.rejected, report.orphaned, report.clamped);
    for (reason, n) in &report.rejections {
        println!("  rejected {n}: {reason}");
    }
    if let Some(out) = &a.out {
        write_atomic(out, |w| Ok(write_event_log(&events, w)?))?;
    }
    if let Some(path) = &a.dump_sessions {
        let week = a.week.unwrap_or(catalog.weeks());
        if week == 0 || week > catalog.weeks() {
            return Err(usage(format!("--week must be in 1..={}", catalog.weeks())));
        }
        let records = build_watch_records(&events, &catalog, week, &SessionConfig::new(a.log.course_start));
        write_atomic(path, |w| Ok(dump_sessions(&records, w)?))?;
    }
    let mut params = log_params(&a.log);
    params["week"] = serde_json::json!(a.week);
    Ok(Run::new("ingest")
        .params(params)
        .input(&a.log.events)
        .input(&a.log.catalog)
        .output(a.out.as_deref())
        .output(a.dump_sessions.as_deref()))
}

fn featurize_cmd(a: &FeaturizeArgs) -> Result<Run> {
    let (events, catalog, _) = read_log(&a.log)?;
    if a.week == 0 || a.week > catalog.weeks() {
        return Err(usage(format!("--week must be in 1..={}", catalog.weeks())));
    }
    let fc = FeatureConfig {
        frequency_basis: match a.frequency_basis {
            Basis::ActiveHour => FrequencyBasis::ActiveHour,
            Basis::Video => FrequencyBasis::VideoWatched,
            Basis::Week => FrequencyBasis::Week,
        },
    };
    let sc = SessionConfig::new(a.log.course_start);
    let (ids, raw) = match &a.outcomes {
        Some(p) => {
            let outcomes = read_outcomes(p, 0.8, catalog.weeks())?;
            let set = analysis_set(&events, &catalog, &outcomes, a.week, &sc, &fc, None)?;
            (set.ids, set.raw)
        }
        None => {
            let (ids, vecs) = featurize(&events, &catalog, a.week, &sc, &fc);
            (ids, to_matrix(&vecs))
        }
    };
    write_atomic(&a.out, |w| Ok(write_feature_csv(&ids, &raw, w)?))?;
    println!("{} students, week {}", ids.len(), a.week);
    let mut params = log_params(&a.log);
    params["week"] = serde_json::json!(a.week);
    params["features"] = serde_json::to_value(&fc).map_err(anyhow::Error::from)?;
    let mut run = Run::new("featurize").params(params).input(&a.log.events).input(&a.log.catalog);
    if let Some(p) = &a.outcomes {
        run = run.input(p);
    }
    Ok(run.output(Some(&a.out)))
}

fn ga_params(g: &GaArgs, seed: u64) -> Result<GaParams> {
    let p = GaParams {
        population_size: g.population,
        generations: g.generations,
        mutation_prob: g.mutation_prob,
        elitism_count: g.elitism,
        seed,
    };
    p.validate().map_err(|e| usage(e.to_string()))?;
    Ok(p)
}

fn rule_params(r: &RuleArgs) -> Result<RuleParams> {
    let p = RuleParams {
        min_support_frac: r.min_support,
        min_confidence_improvement: r.min_confidence_improvement,
        max_len: r.max_len,
        max_branching: (r.max_branching > 0).then_some(r.max_branching),
    };
    p.validate().map_err(|e| usage(e.to_string()))?;
    Ok(p)
}

fn discover(a: &DiscoverArgs) -> Result<Run> {
    require(&a.features, "features")?;
    let (ids, raw) = read_feature_csv(open(&a.features)?)?;
    let outcomes = read_outcomes(&a.outcomes, a.outcome.pass_threshold, a.outcome.course_weeks)?;
    let k = match a.k {
        Some(k) => KChoice::Fixed(k as usize),
        None => KChoice::Select { min: a.k_range.0, max: a.k_range.1 },
    };
    let max_k = match k {
        KChoice::Fixed(k) => k,
        KChoice::Select { max, .. } => max,
    };
    if max_k >= ids.len() {
        return Err(usage(format!("k up to {max_k} needs more than {} students", ids.len())));
    }
    let params = TrainParams { k, ga: ga_params(&a.ga, a.seed)?, rules: rule_params(&a.rules)? };
    let (model, selection) = train_model(&ids, &raw, &outcomes, a.week, &params)?;
    write_atomic(&a.out, |w| Ok(model.save(w)?))?;
    if let Some(sel) = &selection {
        println!("k   silhouette  calinski_harabasz  c_index");
        for s in &sel.table {
            println!("{:<3} {:<11.4} {:<18.4} {:.4}", s.k, s.silhouette, s.calinski_harabasz, s.c_index);
        }
        println!("votes (silhouette, CH, C-index): {:?}", sel.votes);
    }
    println!("k = {}", model.k());
    for (c, s) in model.labeling.summary.iter().enumerate() {
        println!(
            "cluster {c} [{}]: n {}, mean grade {:.4}, pass {:.4}, dropout {:.4}, {} rules",
            model.labeling.labels[c],
            s.size,
            s.mean_grade,
            s.pass_rate,
            s.dropout_rate,
            model.rulesets[c].rules.len()
        );
    }
    Ok(Run::new("discover")
        .seed(a.seed)
        .params(serde_json::json!({ "train": params, "week": a.week, "pass_threshold": a.outcome.pass_threshold, "course_weeks": a.outcome.course_weeks }))
        .input(&a.features)
        .input(&a.outcomes)
        .output(Some(&a.out)))
}

fn load_model(path: &Path) -> Result<ClusterModel> {
    require(path, "model")?;
    Ok(ClusterModel::load(open(path)?).with_context(|| format!("loading {}", path.display()))?)
}

fn rules(a: &RulesArgs) -> Result<Run> {
    let model = load_model(&a.model)?;
    write_to(a.out.as_deref(), |w| {
        for rs in &model.rulesets {
            writeln!(w, "# cluster {} [{}], {} rules", rs.cluster, model.labeling.labels[rs.cluster], rs.rules.len())?;
            for (i, r) in rs.rules.iter().enumerate() {
                writeln!(w, "c{}r{}\t{}", rs.cluster, i, r)?;
            }
        }
        Ok(())
    })?;
    Ok(Run::new("rules").input(&a.model).output(a.out.as_deref()))
}

fn read_features_for(model: &ClusterModel, path: &Path) -> Result<(Vec<String>, fuma_core::matrix::Matrix)> {
    require(path, "features")?;
    let (ids, raw) = read_feature_csv(open(path)?)?;
    if raw.cols() != model.feature_names.len() {
        return Err(Failure::Data(anyhow!("feature file has {} columns, model expects {}", raw.cols(), model.feature_names.len())));
    }
    Ok((ids, raw))
}

fn classify_cmd(a: &ClassifyArgs) -> Result<Run> {
    let model = load_model(&a.model)?;
    let (ids, raw) = read_features_for(&model, &a.features)?;
    let opts = ClassifyOptions { min_actions: a.min_actions };
    let results = ids
        .iter()
        .zip(raw.iter_rows())
        .map(|(id, row)| classify_with(row, &model, &opts).map(|r| (id, r)))
        .collect::<fuma_core::Result<Vec<_>>>()?;
    write_to(a.out.as_deref(), |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["student_id", "assigned", "score_per_cluster", "ambiguity", "matched_rule_ids"])?;
        for (id, r) in &results {
            let assigned = r.assigned.map_or_else(|| "unclassified".to_string(), |c| c.to_string());
            let scores: Vec<String> = r.scores.iter().map(|s| format!("{:.6}", s.score)).collect();
            let matched: Vec<String> = r.matched_rules.iter().map(|m| m.to_string()).collect();
            wtr.write_record([
                id.as_str(),
                &assigned,
                &scores.join(";"),
                if r.ambiguity_flag { "1" } else { "0" },
                &matched.join(";"),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    let unclassified = results.iter().filter(|(_, r)| r.assigned.is_none()).count();
    eprintln!("{} students classified, {} unclassified", results.len() - unclassified, unclassified);
    Ok(Run::new("classify")
        .params(serde_json::json!({ "min_actions": a.min_actions }))
        .input(&a.model)
        .input(&a.features)
        .output(a.out.as_deref()))
}

#[derive(Serialize)]
struct InterventionLine<'a> {
    student_id: &'a str,
    assigned: usize,
    feature: &'static str,
    direction: fuma_core::classify::Direction,
    threshold: f64,
    source_rule: String,
    confidence: f64,
    message: String,
}

fn intervene(a: &InterveneArgs) -> Result<Run> {
    let model = load_model(&a.model)?;
    let (ids, raw) = read_features_for(&model, &a.features)?;
    let opts = ClassifyOptions { min_actions: a.min_actions };
    let mut lines = Vec::new();
    for (id, row) in ids.iter().zip(raw.iter_rows()) {
        let r = classify_with(row, &model, &opts)?;
        for iv in suggest_interventions(&r, &model) {
            lines.push(InterventionLine {
                student_id: id,
                assigned: r.assigned.expect("interventions imply an assignment"),
                feature: iv.feature.name(),
                direction: iv.direction,
                threshold: iv.threshold,
                source_rule: iv.source_rule.to_string(),
                confidence: iv.confidence,
                message: iv.message(),
            });
        }
    }
    write_to(a.out.as_deref(), |w| {
        for l in &lines {
            serde_json::to_writer(&mut *w, l)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    Ok(Run::new("intervene")
        .params(serde_json::json!({ "min_actions": a.min_actions }))
        .input(&a.model)
        .input(&a.features)
        .output(a.out.as_deref()))
}

fn evaluate(a: &EvaluateArgs) -> Result<Run> {
    let (events, catalog, _) = read_log(&a.log)?;
    let outcomes = read_outcomes(&a.outcomes, a.pass_threshold, catalog.weeks())?;
    let truth = match &a.truth {
        Some(p) => {
            require(p, "truth")?;
            Some(read_truth(open(p)?)?)
        }
        None => None,
    };
    if a.weeks.is_empty() {
        return Err(usage("--weeks is empty"));
    }
    for &w in &a.weeks {
        if w == 0 || w > catalog.weeks() {
            return Err(usage(format!("week {w} outside 1..={}", catalog.weeks())));
        }
    }
    if a.folds == 1 {
        return Err(usage("--folds must be 0 (off) or at least 2"));
    }
    if a.folds > 0 && a.inner_folds < 2 {
        return Err(usage("--inner-folds must be at least 2"));
    }
    if a.support_grid.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
        return Err(usage("--support-grid values must be in (0, 1]"));
    }
    let ga = ga_params(&a.ga, a.seed)?;
    let rules = rule_params(&a.rules)?;
    let train = TrainParams { k: KChoice::Select { min: a.k_range.0, max: a.k_range.1 }, ga: ga.clone(), rules: rules.clone() };
    let cv = (a.folds > 0).then(|| CvParams {
        folds: a.folds,
        inner_folds: a.inner_folds,
        k_min: a.k_range.0,
        k_max: a.k_range.1,
        support_grid: a.support_grid.clone(),
        ga: ga.clone(),
        rules: rules.clone(),
        seed: a.seed,
    });
    let sc = SessionConfig::new(a.log.course_start);
    let mut weeks = Vec::new();
    for &w in &a.weeks {
        let set = analysis_set(&events, &catalog, &outcomes, w, &sc, &FeatureConfig::default(), truth.as_deref())?;
        let k_top = a.k_range.1;
        if set.ids.len() <= k_top {
            return Err(Failure::Data(anyhow!("week {w}: {} active students is too few for k up to {k_top}", set.ids.len())));
        }
        eprintln!("week {w}: {} students", set.ids.len());
        weeks.push(analyze_week(&set, &train, cv.as_ref())?);
    }
    let header = vec![
        ("students".to_string(), outcomes.len().to_string()),
        ("events".to_string(), events.len().to_string()),
        ("videos".to_string(), catalog.len().to_string()),
        ("weeks analysed".to_string(), a.weeks.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")),
        ("seed".to_string(), a.seed.to_string()),
        ("k range".to_string(), format!("{}..{}", a.k_range.0, a.k_range.1)),
        ("folds".to_string(), format!("{} outer, {} inner", a.folds, a.inner_folds)),
    ];
    let text = render_report(&weeks, &active_per_week(&outcomes, catalog.weeks()), &header);
    write_atomic(&a.report, |w| Ok(w.write_all(text.as_bytes())?))?;
    for w in &weeks {
        let cv = w.cv.as_ref().map(|c| format!(", CV accuracy {:.4}", c.mean_accuracy)).unwrap_or_default();
        println!("week {}: k {}, grade ANOVA p_holm {:.3e}{cv}", w.cutoff, w.model.k(), w.stats.grade_anova.adjusted_p);
    }
    let mut params = log_params(&a.log);
    params["train"] = serde_json::to_value(&train).map_err(anyhow::Error::from)?;
    params["cv"] = serde_json::to_value(&cv).map_err(anyhow::Error::from)?;
    params["weeks"] = serde_json::json!(a.weeks);
    params["pass_threshold"] = serde_json::json!(a.pass_threshold);
    let mut run = Run::new("evaluate").seed(a.seed).params(params).input(&a.log.events).input(&a.log.catalog).input(&a.outcomes);
    if let Some(t) = &a.truth {
        run = run.input(t);
    }
    Ok(run.output(Some(&a.report)))
}

fn plotdata(a: &PlotdataArgs) -> Result<Run> {
    require(&a.report, "report")?;
    let text = fs::read_to_string(&a.report).with_context(|| format!("cannot read {}", a.report.display()))?;
    let series = extract_figure(&text, &a.figure)?;
    write_to(a.out.as_deref(), |w| Ok(w.write_all(series.as_bytes())?))?;
    Ok(Run::new("plotdata")
        .params(serde_json::json!({ "figure": a.figure }))
        .input(&a.report)
        .output(a.out.as_deref()))
}
