//! Shared fixtures for the benchmarks under `benches/`.

use fuma_core::features::FeatureConfig;
use fuma_core::pipeline::{analysis_set, AnalysisSet};
use fuma_core::sessionize::SessionConfig;
use fuma_core::synth::{generate_cohort, Cohort, CohortConfig};

/// A separation-2 cohort of `n` students and its week-2 analysis set.
pub fn fixture(n: usize, seed: u64) -> (Cohort, AnalysisSet) {
    let cfg = CohortConfig { n_students: n, separation: 2.0, seed, ..Default::default() };
    let cohort = generate_cohort(&cfg).expect("default config is valid");
    let set = analysis_set(
        &cohort.events,
        &cohort.catalog,
        &cohort.outcomes,
        2,
        &SessionConfig::new(cfg.course_start),
        &FeatureConfig::default(),
        None,
    )
    .expect("generated outcomes cover every student");
    (cohort, set)
}
