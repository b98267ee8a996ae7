//! Clickstream log, video catalog and outcome file parsing.
//!
//! The event log is tab-separated with seven fixed columns:
//! `student_id, video_id, action, wall_time, position, new_position, new_speed`.
//! Optional numeric columns are left empty.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_WEEK: f64 = 7.0 * 24.0 * 3600.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Load,
    Play,
    Pause,
    Seek,
    SpeedChange,
    Stop,
}

impl Action {
    pub const ALL: [Action; 6] =
        [Action::Load, Action::Play, Action::Pause, Action::Seek, Action::SpeedChange, Action::Stop];

    pub fn code(self) -> &'static str {
        match self {
            Action::Load => "LOAD",
            Action::Play => "PLAY",
            Action::Pause => "PAUSE",
            Action::Seek => "SEEK",
            Action::SpeedChange => "SPEED",
            Action::Stop => "STOP",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "LOAD" => Action::Load,
            "PLAY" => Action::Play,
            "PAUSE" => Action::Pause,
            "SEEK" => Action::Seek,
            "SPEED" => Action::SpeedChange,
            "STOP" => Action::Stop,
            other => return Err(format!("unknown action {other:?}")),
        })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// One parsed clickstream record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoEvent {
    pub student_id: String,
    pub video_id: String,
    pub action: Action,
    /// Seconds since the Unix epoch, UTC.
    pub wall_time: f64,
    /// Seconds into the video.
    pub position: Option<f64>,
    /// Seek target, seconds into the video.
    pub new_position: Option<f64>,
    /// Playback-rate multiplier after a speed change.
    pub new_speed: Option<f64>,
}

/// Line accounting for one parse. `accepted + rejected` equals the number of
/// input lines; orphans and clamps are counted separately by [`reconcile`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub accepted: usize,
    pub rejected: usize,
    pub rejections: BTreeMap<String, usize>,
    pub orphaned: usize,
    pub clamped: usize,
}

impl ParseReport {
    fn reject(&mut self, reason: &str) {
        self.rejected += 1;
        *self.rejections.entry(reason.to_string()).or_default() += 1;
    }
}

fn parse_opt(field: &str) -> std::result::Result<Option<f64>, &'static str> {
    if field.is_empty() {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err("malformed number"),
    }
}

fn parse_line(line: &str) -> std::result::Result<VideoEvent, &'static str> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 7 {
        return Err("wrong field count");
    }
    if fields[0].is_empty() {
        return Err("empty student id");
    }
    if fields[1].is_empty() {
        return Err("empty video id");
    }
    let action: Action = fields[2].parse().map_err(|_| "unknown action")?;
    let wall_time = parse_opt(fields[3])?.ok_or("missing wall time")?;
    let position = parse_opt(fields[4])?;
    let new_position = parse_opt(fields[5])?;
    let new_speed = parse_opt(fields[6])?;

    if position.is_some_and(|p| p < 0.0) || new_position.is_some_and(|p| p < 0.0) {
        return Err("negative position");
    }
    if new_speed.is_some_and(|s| s <= 0.0) {
        return Err("nonpositive speed");
    }
    if action != Action::Load && position.is_none() {
        return Err("missing position");
    }
    match (action == Action::Seek, new_position.is_some()) {
        (true, false) => return Err("missing new position"),
        (false, true) => return Err("unexpected new position"),
        _ => {}
    }
    match (action == Action::SpeedChange, new_speed.is_some()) {
        (true, false) => return Err("missing new speed"),
        (false, true) => return Err("unexpected new speed"),
        _ => {}
    }

    Ok(VideoEvent {
        student_id: fields[0].to_string(),
        video_id: fields[1].to_string(),
        action,
        wall_time,
        position,
        new_position,
        new_speed,
    })
}

/// Parses a line-delimited event log.
///
/// Events come back grouped by student id (ascending) and stably sorted by
/// wall time within each student, so ties keep their input order. In strict
/// mode the first malformed line aborts the parse with its 1-based line
/// number; otherwise malformed lines are skipped and counted.
pub fn parse_event_log<R: Read>(mut input: R, strict: bool) -> Result<(Vec<VideoEvent>, ParseReport)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;

    let mut report = ParseReport::default();
    let mut events = Vec::new();
    if !bytes.is_empty() {
        let body = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
        for (i, raw) in body.split(|&b| b == b'\n').enumerate() {
            let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
            let parsed = match std::str::from_utf8(raw) {
                Ok("") => Err("empty line"),
                Ok(line) => parse_line(line),
                Err(_) => Err("invalid utf-8"),
            };
            match parsed {
                Ok(ev) => {
                    report.accepted += 1;
                    events.push(ev);
                }
                Err(reason) if strict => {
                    return Err(Error::Parse { line: i + 1, reason: reason.to_string() });
                }
                Err(reason) => report.reject(reason),
            }
        }
    }
    sort_events(&mut events);
    Ok((events, report))
}

/// Stable sort by (student, wall time).
pub fn sort_events(events: &mut [VideoEvent]) {
    events.sort_by(|a, b| {
        a.student_id.cmp(&b.student_id).then_with(|| a.wall_time.total_cmp(&b.wall_time))
    });
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_event(ev: &VideoEvent) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        ev.student_id,
        ev.video_id,
        ev.action.code(),
        ev.wall_time,
        fmt_opt(ev.position),
        fmt_opt(ev.new_position),
        fmt_opt(ev.new_speed)
    )
}

pub fn write_event_log<W: Write>(events: &[VideoEvent], mut out: W) -> Result<()> {
    for ev in events {
        writeln!(out, "{}", format_event(ev))?;
    }
    Ok(())
}

/// Splits a sorted event sequence into per-student slices.
pub fn group_by_student(events: &[VideoEvent]) -> Vec<(&str, &[VideoEvent])> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=events.len() {
        if i == events.len() || events[i].student_id != events[start].student_id {
            if i > start {
                groups.push((events[start].student_id.as_str(), &events[start..i]));
            }
            start = i;
        }
    }
    groups
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoInfo {
    pub duration: f64,
    pub week: u32,
    pub title: String,
}

/// Course video catalog keyed by video id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoCatalog {
    entries: BTreeMap<String, VideoInfo>,
    weeks: u32,
}

impl VideoCatalog {
    /// Validates and builds a catalog. Every week from 1 to the largest
    /// referenced week must have at least one video.
    pub fn new(rows: Vec<(String, VideoInfo)>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (id, info) in rows {
            if id.is_empty() {
                return Err(Error::Catalog("empty video id".into()));
            }
            if !(info.duration > 0.0) || !info.duration.is_finite() {
                return Err(Error::Catalog(format!("video {id}: duration must be > 0")));
            }
            if info.week == 0 {
                return Err(Error::Catalog(format!("video {id}: week must be >= 1")));
            }
            if entries.contains_key(&id) {
                return Err(Error::Catalog(format!("duplicate video id {id}")));
            }
            entries.insert(id, info);
        }
        let weeks = entries.values().map(|v| v.week).max().unwrap_or(0);
        if weeks == 0 {
            return Err(Error::Catalog("catalog is empty".into()));
        }
        for w in 1..=weeks {
            if !entries.values().any(|v| v.week == w) {
                return Err(Error::Catalog(format!("missing week {w}: no video assigned")));
            }
        }
        Ok(VideoCatalog { entries, weeks })
    }

    pub fn weeks(&self) -> u32 {
        self.weeks
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&VideoInfo> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &VideoInfo)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn videos_in_week(&self, week: u32) -> impl Iterator<Item = (&str, &VideoInfo)> {
        self.iter().filter(move |(_, v)| v.week == week)
    }
}

#[derive(Deserialize, Serialize)]
struct CatalogRow {
    video_id: String,
    duration_s: f64,
    week: u32,
    title: String,
}

/// Reads a `video_id,duration_s,week,title` catalog file.
pub fn load_catalog<R: Read>(input: R) -> Result<VideoCatalog> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let expected = ["video_id", "duration_s", "week", "title"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Catalog(format!("header must be {}", expected.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<CatalogRow>().enumerate() {
        let rec = rec.map_err(|e| Error::Catalog(format!("row {}: {e}", i + 2)))?;
        rows.push((rec.video_id, VideoInfo { duration: rec.duration_s, week: rec.week, title: rec.title }));
    }
    VideoCatalog::new(rows)
}

pub fn write_catalog<W: Write>(catalog: &VideoCatalog, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for (id, info) in catalog.iter() {
        wtr.serialize(CatalogRow {
            video_id: id.to_string(),
            duration_s: info.duration,
            week: info.week,
            title: info.title.clone(),
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Drops events whose video is not in the catalog and clamps positions to the
/// video duration. Both are tallied in `report`.
pub fn reconcile(events: Vec<VideoEvent>, catalog: &VideoCatalog, report: &mut ParseReport) -> Vec<VideoEvent> {
    let mut kept = Vec::with_capacity(events.len());
    for mut ev in events {
        let Some(info) = catalog.get(&ev.video_id) else {
            report.orphaned += 1;
            continue;
        };
        let mut clamped = false;
        for p in [&mut ev.position, &mut ev.new_position].into_iter().flatten() {
            if *p > info.duration {
                *p = info.duration;
                clamped = true;
            }
        }
        if clamped {
            report.clamped += 1;
        }
        kept.push(ev);
    }
    kept
}

/// Maps wall time to 1-based course weeks of seven days.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CourseClock {
    pub start: f64,
}

impl CourseClock {
    pub fn new(start: f64) -> Self {
        CourseClock { start }
    }

    /// Week containing `t`; times before the course start count as week 1.
    pub fn week_of(&self, t: f64) -> u32 {
        let w = ((t - self.start) / SECONDS_PER_WEEK).floor();
        if w < 0.0 {
            1
        } else {
            w as u32 + 1
        }
    }

    /// Exclusive end of `week`.
    pub fn week_end(&self, week: u32) -> f64 {
        self.start + week as f64 * SECONDS_PER_WEEK
    }
}

/// Learning outcome for one student.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub student_id: String,
    pub final_grade: f64,
    pub passed: bool,
    pub last_active_week: u32,
    /// `true` at week `w` when the student has no activity after `w`.
    /// Covers weeks `1..course_weeks`; the final week has no "after".
    pub dropped_by_week: BTreeMap<u32, bool>,
}

impl OutcomeRecord {
    pub fn new(
        student_id: impl Into<String>,
        final_grade: f64,
        pass_threshold: f64,
        last_active_week: u32,
        course_weeks: u32,
    ) -> Result<Self> {
        let student_id = student_id.into();
        if !(0.0..=1.0).contains(&final_grade) {
            return Err(Error::Outcomes(format!("{student_id}: grade {final_grade} outside [0,1]")));
        }
        let dropped_by_week = (1..course_weeks).map(|w| (w, last_active_week <= w)).collect();
        Ok(OutcomeRecord {
            student_id,
            final_grade,
            passed: final_grade >= pass_threshold,
            last_active_week,
            dropped_by_week,
        })
    }

    pub fn dropped_by(&self, week: u32) -> bool {
        self.last_active_week <= week
    }
}

#[derive(Deserialize, Serialize)]
struct OutcomeRow {
    student_id: String,
    final_grade: f64,
    passed: u8,
    last_active_week: u32,
}

/// Reads `student_id,final_grade,passed,last_active_week`; `passed` must agree
/// with the grade and threshold.
pub fn load_outcomes<R: Read>(input: R, pass_threshold: f64, course_weeks: u32) -> Result<Vec<OutcomeRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, row) in rdr.deserialize::<OutcomeRow>().enumerate() {
        let row = row.map_err(|e| Error::Outcomes(format!("row {}: {e}", i + 2)))?;
        if !seen.insert(row.student_id.clone()) {
            return Err(Error::Outcomes(format!("duplicate student {}", row.student_id)));
        }
        let rec = OutcomeRecord::new(row.student_id, row.final_grade, pass_threshold, row.last_active_week, course_weeks)?;
        if rec.passed != (row.passed == 1) {
            return Err(Error::Outcomes(format!(
                "{}: passed flag disagrees with grade {} and threshold {pass_threshold}",
                rec.student_id, rec.final_grade
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_outcomes<W: Write>(outcomes: &[OutcomeRecord], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for o in outcomes {
        wtr.serialize(OutcomeRow {
            student_id: o.student_id.clone(),
            final_grade: o.final_grade,
            passed: o.passed as u8,
            last_active_week: o.last_active_week,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Last week with at least one logged event, per student.
pub fn last_active_weeks(events: &[VideoEvent], clock: CourseClock) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    for (student, evs) in group_by_student(events) {
        let w = evs.iter().map(|e| clock.week_of(e.wall_time)).max().unwrap_or(0);
        out.insert(student.to_string(), w);
    }
    out
}
