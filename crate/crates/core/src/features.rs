//! The 21 per-student video-watching features and z-score normalization.

use std::fmt;
use std::io::{Read, Write};
use std::ops::Index;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{group_by_student, Action, VideoCatalog, VideoEvent};
use crate::matrix::{mean, sample_sd, Matrix};
use crate::sessionize::{build_student_records, SessionConfig, WatchRecord};

pub const N_FEATURES: usize = 21;

/// Canonical feature order. The discriminant is the column index in every
/// feature matrix and export.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    FreqPlay,
    FreqPause,
    FreqSeekBack,
    FreqSeekFwd,
    FreqSpeedChange,
    FreqStop,
    FreqAll,
    CountAll,
    NVideosWatched,
    PropRewatched,
    RewatchMean,
    RewatchSd,
    PropInterrupted,
    WeeklyCoverageMean,
    WeeklyCoverageSd,
    PauseDurMean,
    PauseDurSd,
    SeekLenMean,
    SeekLenSd,
    SpeedupMean,
    SpeedupSd,
}

impl Feature {
    pub const ALL: [Feature; N_FEATURES] = [
        Feature::FreqPlay,
        Feature::FreqPause,
        Feature::FreqSeekBack,
        Feature::FreqSeekFwd,
        Feature::FreqSpeedChange,
        Feature::FreqStop,
        Feature::FreqAll,
        Feature::CountAll,
        Feature::NVideosWatched,
        Feature::PropRewatched,
        Feature::RewatchMean,
        Feature::RewatchSd,
        Feature::PropInterrupted,
        Feature::WeeklyCoverageMean,
        Feature::WeeklyCoverageSd,
        Feature::PauseDurMean,
        Feature::PauseDurSd,
        Feature::SeekLenMean,
        Feature::SeekLenSd,
        Feature::SpeedupMean,
        Feature::SpeedupSd,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Feature> {
        Feature::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::FreqPlay => "freq_play",
            Feature::FreqPause => "freq_pause",
            Feature::FreqSeekBack => "freq_seek_back",
            Feature::FreqSeekFwd => "freq_seek_fwd",
            Feature::FreqSpeedChange => "freq_speed_change",
            Feature::FreqStop => "freq_stop",
            Feature::FreqAll => "freq_all",
            Feature::CountAll => "count_all",
            Feature::NVideosWatched => "n_videos_watched",
            Feature::PropRewatched => "prop_rewatched",
            Feature::RewatchMean => "rewatch_mean",
            Feature::RewatchSd => "rewatch_sd",
            Feature::PropInterrupted => "prop_interrupted",
            Feature::WeeklyCoverageMean => "weekly_coverage_mean",
            Feature::WeeklyCoverageSd => "weekly_coverage_sd",
            Feature::PauseDurMean => "pause_dur_mean",
            Feature::PauseDurSd => "pause_dur_sd",
            Feature::SeekLenMean => "seek_len_mean",
            Feature::SeekLenSd => "seek_len_sd",
            Feature::SpeedupMean => "speedup_mean",
            Feature::SpeedupSd => "speedup_sd",
        }
    }

    /// Human-readable label used in reports and intervention messages.
    pub fn label(self) -> &'static str {
        match self {
            Feature::FreqPlay => "frequency of play actions",
            Feature::FreqPause => "frequency of pause actions",
            Feature::FreqSeekBack => "frequency of backward seeks",
            Feature::FreqSeekFwd => "frequency of forward seeks",
            Feature::FreqSpeedChange => "frequency of speed changes",
            Feature::FreqStop => "frequency of stop actions",
            Feature::FreqAll => "frequency of all actions",
            Feature::CountAll => "number of actions",
            Feature::NVideosWatched => "number of videos watched",
            Feature::PropRewatched => "proportion of rewatched videos",
            Feature::RewatchMean => "mean rewatches per video",
            Feature::RewatchSd => "SD of rewatches per video",
            Feature::PropInterrupted => "proportion of interrupted videos",
            Feature::WeeklyCoverageMean => "mean weekly video coverage",
            Feature::WeeklyCoverageSd => "SD of weekly video coverage",
            Feature::PauseDurMean => "mean pause duration",
            Feature::PauseDurSd => "SD of pause duration",
            Feature::SeekLenMean => "mean seek length",
            Feature::SeekLenSd => "SD of seek length",
            Feature::SpeedupMean => "mean time at increased speed",
            Feature::SpeedupSd => "SD of time at increased speed",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown feature {s:?}")))
    }
}

/// Name of column `i`: the canonical feature name for the first 21 columns,
/// `f<i>` beyond that.
pub fn column_name(i: usize) -> String {
    Feature::from_index(i).map(|f| f.name().to_string()).unwrap_or_else(|| format!("f{i}"))
}

pub fn parse_column_name(s: &str) -> Result<usize> {
    if let Ok(f) = s.parse::<Feature>() {
        return Ok(f.index());
    }
    s.strip_prefix('f')
        .and_then(|n| n.parse::<usize>().ok())
        .ok_or_else(|| Error::invalid(format!("unknown feature {s:?}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; N_FEATURES],
}

impl FeatureVector {
    pub fn zeros() -> Self {
        FeatureVector { values: [0.0; N_FEATURES] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    fn set(&mut self, f: Feature, v: f64) {
        self.values[f.index()] = v;
    }
}

impl Index<Feature> for FeatureVector {
    type Output = f64;

    fn index(&self, f: Feature) -> &f64 {
        &self.values[f.index()]
    }
}

/// Denominator for the per-action frequency features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrequencyBasis {
    /// Actions per hour of session wall time.
    #[default]
    ActiveHour,
    /// Actions per watched video.
    VideoWatched,
    /// Actions per course week up to the cutoff.
    Week,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub frequency_basis: FrequencyBasis,
}

/// Features for one student from their watch records at `week_cutoff`.
///
/// Weekly coverage for week `w` is the mean coverage over the catalog's
/// week-`w` videos (unseen videos count as 0), averaged over weeks
/// `1..=week_cutoff`. Means over empty sets are 0; SDs use `n - 1` and are 0
/// below two items.
pub fn extract_features(
    records: &[&WatchRecord],
    catalog: &VideoCatalog,
    week_cutoff: u32,
    cfg: &FeatureConfig,
) -> FeatureVector {
    let mut fv = FeatureVector::zeros();
    if records.is_empty() {
        return fv;
    }

    let mut counts = [0usize; 6];
    let mut seek_back = 0usize;
    let mut seek_fwd = 0usize;
    let mut active_secs = 0.0;
    let mut pauses = Vec::new();
    let mut seeks = Vec::new();
    for r in records {
        for s in &r.sessions {
            for (c, n) in counts.iter_mut().zip(s.action_counts) {
                *c += n;
            }
            active_secs += s.wall_duration();
            pauses.extend_from_slice(&s.pauses);
            for &len in &s.seeks {
                if len >= 0.0 {
                    seek_fwd += 1;
                } else {
                    seek_back += 1;
                }
                seeks.push(len);
            }
        }
    }

    let watched: Vec<&&WatchRecord> = records.iter().filter(|r| r.watched).collect();
    let n_watched = watched.len();
    let count_all: usize = counts.iter().sum();

    let denom = match cfg.frequency_basis {
        FrequencyBasis::ActiveHour => active_secs / 3600.0,
        FrequencyBasis::VideoWatched => n_watched as f64,
        FrequencyBasis::Week => week_cutoff.min(catalog.weeks()) as f64,
    };
    let freq = |n: usize| if denom > 0.0 { n as f64 / denom } else { 0.0 };
    fv.set(Feature::FreqPlay, freq(counts[Action::Play.index()]));
    fv.set(Feature::FreqPause, freq(counts[Action::Pause.index()]));
    fv.set(Feature::FreqSeekBack, freq(seek_back));
    fv.set(Feature::FreqSeekFwd, freq(seek_fwd));
    fv.set(Feature::FreqSpeedChange, freq(counts[Action::SpeedChange.index()]));
    fv.set(Feature::FreqStop, freq(counts[Action::Stop.index()]));
    fv.set(Feature::FreqAll, freq(count_all));
    fv.set(Feature::CountAll, count_all as f64);
    fv.set(Feature::NVideosWatched, n_watched as f64);

    if n_watched > 0 {
        let rewatches: Vec<f64> = watched.iter().map(|r| r.rewatch_count as f64).collect();
        let rewatched = watched.iter().filter(|r| r.rewatch_count >= 1).count();
        let interrupted = watched.iter().filter(|r| r.interrupted).count();
        let speedups: Vec<f64> =
            watched.iter().map(|r| r.sessions.iter().map(|s| s.speedup_time).sum()).collect();
        fv.set(Feature::PropRewatched, rewatched as f64 / n_watched as f64);
        fv.set(Feature::RewatchMean, mean(&rewatches));
        fv.set(Feature::RewatchSd, sample_sd(&rewatches));
        fv.set(Feature::PropInterrupted, interrupted as f64 / n_watched as f64);
        fv.set(Feature::SpeedupMean, mean(&speedups));
        fv.set(Feature::SpeedupSd, sample_sd(&speedups));
    }

    let weeks = week_cutoff.min(catalog.weeks());
    let weekly: Vec<f64> = (1..=weeks)
        .map(|w| {
            let cov: Vec<f64> = catalog
                .videos_in_week(w)
                .map(|(id, _)| {
                    records.iter().find(|r| r.video_id == id).map(|r| r.coverage_fraction).unwrap_or(0.0)
                })
                .collect();
            mean(&cov)
        })
        .collect();
    fv.set(Feature::WeeklyCoverageMean, mean(&weekly));
    fv.set(Feature::WeeklyCoverageSd, sample_sd(&weekly));

    fv.set(Feature::PauseDurMean, mean(&pauses));
    fv.set(Feature::PauseDurSd, sample_sd(&pauses));
    fv.set(Feature::SeekLenMean, mean(&seeks));
    fv.set(Feature::SeekLenSd, sample_sd(&seeks));
    fv
}

/// Feature rows for every student in `events`, in student-id order.
pub fn featurize(
    events: &[VideoEvent],
    catalog: &VideoCatalog,
    week_cutoff: u32,
    session_cfg: &SessionConfig,
    cfg: &FeatureConfig,
) -> (Vec<String>, Vec<FeatureVector>) {
    let groups = group_by_student(events);
    let rows: Vec<(String, FeatureVector)> = groups
        .par_iter()
        .map(|(student, evs)| {
            let recs = build_student_records(student, evs, catalog, week_cutoff, session_cfg);
            let refs: Vec<&WatchRecord> = recs.iter().collect();
            (student.to_string(), extract_features(&refs, catalog, week_cutoff, cfg))
        })
        .collect();
    rows.into_iter().unzip()
}

pub fn to_matrix(vectors: &[FeatureVector]) -> Matrix {
    let rows: Vec<&[f64]> = vectors.iter().map(|v| v.as_slice()).collect();
    if rows.is_empty() {
        return Matrix::zeros(0, N_FEATURES);
    }
    Matrix::from_rows(&rows).expect("fixed width rows")
}

/// Per-column mean and sample SD fitted on a training matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Columns with zero SD; these normalize to 0.
    pub constant: Vec<bool>,
}

pub fn fit_normalizer(training: &Matrix) -> Result<NormalizationParams> {
    if training.rows() < 2 {
        return Err(Error::invalid("normalizer needs at least two rows"));
    }
    let mut means = Vec::with_capacity(training.cols());
    let mut sds = Vec::with_capacity(training.cols());
    for j in 0..training.cols() {
        let col = training.column(j);
        means.push(mean(&col));
        sds.push(sample_sd(&col));
    }
    let constant = sds.iter().map(|&s| s == 0.0).collect();
    Ok(NormalizationParams { means, sds, constant })
}

impl NormalizationParams {
    pub fn normalize_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.means.len() {
            return Err(Error::DimensionMismatch { expected: self.means.len(), actual: row.len() });
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, &x)| if self.constant[j] { 0.0 } else { (x - self.means[j]) / self.sds[j] })
            .collect())
    }

    /// Maps a normalized value of column `j` back to raw units.
    pub fn denormalize(&self, j: usize, z: f64) -> f64 {
        z * self.sds[j] + self.means[j]
    }
}

pub fn apply_normalizer(m: &Matrix, params: &NormalizationParams) -> Result<Matrix> {
    if m.cols() != params.means.len() {
        return Err(Error::DimensionMismatch { expected: params.means.len(), actual: m.cols() });
    }
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        out.row_mut(i).copy_from_slice(&params.normalize_row(m.row(i))?);
    }
    Ok(out)
}

/// Writes `student_id` followed by the 21 canonical feature columns.
pub fn write_feature_csv<W: Write>(ids: &[String], m: &Matrix, out: W) -> Result<()> {
    if m.cols() != N_FEATURES {
        return Err(Error::DimensionMismatch { expected: N_FEATURES, actual: m.cols() });
    }
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["student_id".to_string()];
    header.extend(Feature::ALL.iter().map(|f| f.name().to_string()));
    wtr.write_record(&header)?;
    for (id, row) in ids.iter().zip(m.iter_rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_feature_csv<R: Read>(input: R) -> Result<(Vec<String>, Matrix)> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let expected: Vec<&str> =
        std::iter::once("student_id").chain(Feature::ALL.iter().map(|f| f.name())).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::invalid("feature file header does not match the canonical 21 features"));
    }
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::invalid(format!("feature file row {}: bad number {field:?}", i + 2)))?;
            data.push(v);
        }
    }
    let rows = ids.len();
    Ok((ids, Matrix::from_vec(rows, N_FEATURES, data)?))
}
