use fuma_core::cluster::GaParams;
use fuma_core::features::FeatureConfig;
use fuma_core::model::TrainParams;
use fuma_core::pipeline::{analysis_set, analyze_week, AnalysisSet, WeekAnalysis};
use fuma_core::sessionize::SessionConfig;
use fuma_core::synth::{generate_cohort, CohortConfig, PLANTED_GAPS};

fn week2(separation: f64, seed: u64) -> (AnalysisSet, WeekAnalysis) {
    let cfg = CohortConfig { n_students: 500, separation, seed, ..Default::default() };
    let c = generate_cohort(&cfg).unwrap();
    let set = analysis_set(&c.events, &c.catalog, &c.outcomes, 2, &SessionConfig::new(cfg.course_start), &FeatureConfig::default(), Some(&c.truth))
        .unwrap();
    let w = analyze_week(&set, &TrainParams { ga: GaParams::with_seed(seed), ..Default::default() }, None).unwrap();
    (set, w)
}

#[test]
fn shipped_config_is_the_default() {
    let text = include_str!("../../../configs/default_cohort.toml");
    assert_eq!(CohortConfig::from_toml(text).unwrap(), CohortConfig::default());
}

#[test]
fn wide_separation_recovers_archetypes() {
    for seed in [3, 4] {
        let (_, w) = week2(4.0, seed);
        assert_eq!(w.model.k(), 2);
        assert_eq!(w.ari, Some(1.0), "seed {seed}");
    }
}

#[test]
fn identical_archetypes_show_no_dropout_effect() {
    let mut quiet = 0;
    for seed in 1..=10 {
        let (_, w) = week2(0.0, seed);
        let p = w.stats.dropout_chi2.as_ref().map_or(1.0, |r| r.adjusted_p);
        quiet += (p >= 0.05) as usize;
    }
    assert!(quiet >= 9, "dropout effect significant in {} of 10 seeds", 10 - quiet);
}

// Grade is half realized weekly coverage, and weekly coverage is itself a
// clustering feature, so splitting one homogeneous population still moves
// the grade. Measured: significant in 5 of 10 seeds.
#[test]
#[ignore = "grade is coupled to a clustering feature; fails by design, see the decisions ledger"]
fn identical_archetypes_show_no_grade_effect() {
    let mut quiet = 0;
    for seed in 1..=10 {
        let (_, w) = week2(0.0, seed);
        quiet += (w.stats.grade_anova.adjusted_p >= 0.05) as usize;
    }
    assert!(quiet >= 9, "grade effect significant in {} of 10 seeds", 10 - quiet);
}

#[test]
fn archetype_means_follow_planted_directions() {
    let cfg = CohortConfig { n_students: 1000, seed: 12, ..Default::default() };
    let c = generate_cohort(&cfg).unwrap();
    let set = analysis_set(&c.events, &c.catalog, &c.outcomes, 2, &SessionConfig::new(cfg.course_start), &FeatureConfig::default(), Some(&c.truth))
        .unwrap();
    let truth = set.truth.as_ref().unwrap();
    let engaged = c.archetype_names.iter().position(|n| n == "Engaged").unwrap();
    for (f, dir) in PLANTED_GAPS {
        let col = set.raw.column(f.index());
        let mean_of = |want: bool| {
            let v: Vec<f64> = col.iter().zip(truth).filter(|(_, &t)| (t == engaged) == want).map(|(x, _)| *x).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let gap = mean_of(true) - mean_of(false);
        assert!(gap * dir > 0.0, "{}: Engaged - Disengaged = {gap}", f.name());
    }
    let grade = |want: bool| {
        let g: Vec<f64> = c.outcomes.iter().zip(&c.truth).filter(|(_, (_, t))| (*t == engaged) == want).map(|(o, _)| o.final_grade).collect();
        g.iter().sum::<f64>() / g.len() as f64
    };
    assert!(grade(true) > grade(false) + 0.2);
}
