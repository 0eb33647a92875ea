//! Repetition segmentation by topographic peak prominence.
//!
//! A scalar motion signal (one joint coordinate or one joint angle) is
//! smoothed with a centered moving average and scanned for local maxima.
//! Peaks whose prominence exceeds `τ` times the signal range are hold phases.
//! Each retained peak is bracketed by the first qualifying local minimum on
//! either side, where "qualifying" means: at least `τ·range` below the peak
//! and not undercut by any of the next `online_confirm_frames` samples
//! walking away from the peak. The same rule drives the offline detector and
//! the streaming [`OnlineSegmenter`], so the two agree frame for frame.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::pose::{
    angle_diff, angle_series, joint_angle, AngleTriplet, ClipSequence, KeypointFrame, PoseError,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SegmentError {
    #[error("index {index} is not a local maximum")]
    NotALocalMax { index: usize },
    #[error("index {index} out of range for series of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("frame at {time_ms} ms does not follow {previous_ms} ms")]
    OutOfOrderFrame { previous_ms: f64, time_ms: f64 },
    #[error("invalid segmenter config: {0}")]
    InvalidConfig(String),
    #[error("invalid signal source: {0}")]
    InvalidSource(String),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    fn pick(self, p: [f64; 2]) -> f64 {
        match self {
            Axis::X => p[0],
            Axis::Y => p[1],
        }
    }
}

/// One joint coordinate, sign-flipped when `invert` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinateTerm {
    pub joint: usize,
    pub axis: Axis,
    pub invert: bool,
}

impl CoordinateTerm {
    fn value(&self, points: &[[f64; 2]]) -> f64 {
        let v = self.axis.pick(points[self.joint]);
        if self.invert {
            -v
        } else {
            v
        }
    }
}

/// Where the segmentation signal comes from. `invert` flips the sign so the
/// hold phase is always a maximum. Angle signals are unwrapped and measured
/// in turns (degrees / 360). A combined signal sums its terms and divides by
/// the square root of their count, which keeps independent per-joint noise
/// at its original scale while the motion adds up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SignalSource {
    Coordinate { joint: usize, axis: Axis, invert: bool },
    Combined { terms: Vec<CoordinateTerm> },
    Angle { triplet: AngleTriplet, invert: bool },
}

impl SignalSource {
    fn check(&self, joint_count: usize) -> Result<(), SegmentError> {
        let bad = |j: usize| {
            Err(SegmentError::InvalidSource(format!(
                "joint {j} outside a {joint_count}-joint profile"
            )))
        };
        let joints: Vec<usize> = match self {
            SignalSource::Coordinate { joint, .. } => vec![*joint],
            SignalSource::Combined { terms } if terms.is_empty() => {
                return Err(SegmentError::InvalidSource("combined signal without terms".into()));
            }
            SignalSource::Combined { terms } => terms.iter().map(|t| t.joint).collect(),
            SignalSource::Angle { triplet, .. } => vec![triplet.i, triplet.j, triplet.k],
        };
        match joints.into_iter().find(|&j| j >= joint_count) {
            Some(j) => bad(j),
            None => Ok(()),
        }
    }

    /// Signal value of one pose for coordinate-based sources; `None` for
    /// angles, which need the previous frame to unwrap. Joints must exist.
    pub fn coordinate_value(&self, points: &[[f64; 2]]) -> Option<f64> {
        match self {
            SignalSource::Coordinate { joint, axis, invert } => Some(
                CoordinateTerm {
                    joint: *joint,
                    axis: *axis,
                    invert: *invert,
                }
                .value(points),
            ),
            SignalSource::Combined { terms } => {
                let sum: f64 = terms.iter().map(|t| t.value(points)).sum();
                Some(sum / (terms.len() as f64).sqrt())
            }
            SignalSource::Angle { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub prominence_threshold: f64,
    /// Centered moving-average width in frames (odd).
    pub smoothing_window: usize,
    pub search_horizon_ms: f64,
    pub min_rep_ms: f64,
    pub online_confirm_frames: usize,
    /// Signals whose smoothed range is below this (coordinate units, or
    /// turns for angles) carry no motion and yield no reps.
    pub min_signal_range: f64,
    /// A boundary minimum still counts when later samples undercut it by at
    /// most this much (signal units), so noise at rest does not push
    /// boundaries away from the end of the ramp.
    pub boundary_tolerance: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            prominence_threshold: 0.2,
            smoothing_window: 5,
            search_horizon_ms: 5000.0,
            min_rep_ms: 800.0,
            online_confirm_frames: 8,
            min_signal_range: 0.1,
            boundary_tolerance: 0.02,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        let bad = |m: &str| Err(SegmentError::InvalidConfig(m.to_string()));
        if !(self.prominence_threshold > 0.0 && self.prominence_threshold < 1.0) {
            return bad("prominence_threshold must lie in (0, 1)");
        }
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return bad("smoothing_window must be a positive odd number");
        }
        if !(self.search_horizon_ms > 0.0) {
            return bad("search_horizon_ms must be > 0");
        }
        if !(self.min_rep_ms >= 0.0) {
            return bad("min_rep_ms must be >= 0");
        }
        if self.online_confirm_frames == 0 {
            return bad("online_confirm_frames must be >= 1");
        }
        if !(self.min_signal_range >= 0.0) {
            return bad("min_signal_range must be >= 0");
        }
        if !(self.boundary_tolerance >= 0.0) || !self.boundary_tolerance.is_finite() {
            return bad("boundary_tolerance must be a finite value >= 0");
        }
        Ok(())
    }

    pub fn half_window(&self) -> usize {
        self.smoothing_window / 2
    }
}

/// Smoothed, normalized segmentation signal of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    /// Min-max normalized samples in `[0, 1]`; all zeros for a constant signal.
    pub values: Vec<f64>,
    pub time_ms: Vec<f64>,
    /// Smoothed samples before normalization.
    pub smoothed: Vec<f64>,
    /// `max - min` of `smoothed`.
    pub range: f64,
    pub source: SignalSource,
}

impl SignalSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One detected repetition, as inclusive frame indices into its clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepSegment {
    pub peak_index: usize,
    pub start_index: usize,
    pub end_index: usize,
    /// Peak prominence relative to the signal range.
    pub prominence: f64,
}

impl RepSegment {
    /// Frames spanned by the rep.
    pub fn frames(&self, clip: &ClipSequence) -> ClipSequence {
        clip.slice(self.start_index, self.end_index)
    }

    pub fn frame_count(&self) -> usize {
        self.end_index - self.start_index + 1
    }
}

/// Line of the segment dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub clip: String,
    pub peak_index: usize,
    pub start_index: usize,
    pub end_index: usize,
    pub prominence: f64,
}

impl SegmentRecord {
    pub fn new(clip: impl Into<String>, rep: &RepSegment) -> Self {
        Self {
            clip: clip.into(),
            peak_index: rep.peak_index,
            start_index: rep.start_index,
            end_index: rep.end_index,
            prominence: rep.prominence,
        }
    }

    pub fn segment(&self) -> RepSegment {
        RepSegment {
            peak_index: self.peak_index,
            start_index: self.start_index,
            end_index: self.end_index,
            prominence: self.prominence,
        }
    }
}

/// Mean of `raw[i - half ..= i + half]`, truncated at both ends.
pub fn smooth_at(raw: &[f64], i: usize, half: usize) -> f64 {
    let lo = i.saturating_sub(half);
    let hi = (i + half).min(raw.len() - 1);
    let mut sum = 0.0;
    for v in &raw[lo..=hi] {
        sum += v;
    }
    sum / (hi - lo + 1) as f64
}

pub fn smooth(raw: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..raw.len()).map(|i| smooth_at(raw, i, half)).collect()
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Raw per-frame signal for a source, before smoothing.
pub fn raw_signal(clip: &ClipSequence, source: &SignalSource) -> Result<Vec<f64>, SegmentError> {
    source.check(clip.profile.joint_count())?;
    match source {
        SignalSource::Coordinate { .. } | SignalSource::Combined { .. } => Ok(clip
            .frames
            .iter()
            .map(|f| source.coordinate_value(&f.points).expect("coordinate source"))
            .collect()),
        SignalSource::Angle { triplet, invert } => {
            let sign = if *invert { -1.0 } else { 1.0 };
            let series = angle_series(clip, triplet)?;
            let mut out = Vec::with_capacity(series.len());
            let mut prev_deg = series[0].1;
            let mut unwrapped = prev_deg;
            for (idx, &(_, deg)) in series.iter().enumerate() {
                if idx > 0 {
                    unwrapped += angle_diff(deg, prev_deg);
                    prev_deg = deg;
                }
                out.push(sign * unwrapped / 360.0);
            }
            Ok(out)
        }
    }
}

/// Signal source for a clip without exercise metadata: the coordinate with
/// the largest variance, inverted when the clip starts near its maximum
/// (clips start at rest, so the hold must be the high side).
pub fn auto_source(clip: &ClipSequence) -> SignalSource {
    let n = clip.frames.len() as f64;
    let mut best = (f64::NEG_INFINITY, 0usize, Axis::Y);
    for joint in 0..clip.profile.joint_count() {
        for axis in [Axis::X, Axis::Y] {
            let vals: Vec<f64> = clip.frames.iter().map(|f| axis.pick(f.points[joint])).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            if var > best.0 {
                best = (var, joint, axis);
            }
        }
    }
    let (_, joint, axis) = best;
    let vals: Vec<f64> = clip.frames.iter().map(|f| axis.pick(f.points[joint])).collect();
    let (lo, hi) = min_max(&vals);
    let first = vals[0];
    SignalSource::Coordinate {
        joint,
        axis,
        invert: (hi - first) < (first - lo),
    }
}

pub fn extract_signal(
    clip: &ClipSequence,
    source: &SignalSource,
    config: &SegmenterConfig,
) -> Result<SignalSeries, SegmentError> {
    config.validate()?;
    if clip.frames.is_empty() {
        return Err(SegmentError::Pose(PoseError::EmptyClip));
    }
    let raw = raw_signal(clip, source)?;
    let smoothed = smooth(&raw, config.smoothing_window);
    let (lo, hi) = min_max(&smoothed);
    let range = hi - lo;
    let values = if range > 0.0 {
        smoothed.iter().map(|v| (v - lo) / range).collect()
    } else {
        vec![0.0; smoothed.len()]
    };
    Ok(SignalSeries {
        values,
        time_ms: clip.times(),
        smoothed,
        range,
        source: source.clone(),
    })
}

/// Local maxima of `values[from..]`, flat tops reported at their middle
/// sample (rounded down). Plateaus touching either end never count. With
/// `complete == false` the scan stops before a plateau whose right side is
/// not yet known. Returns the peaks and the index to resume from.
pub fn local_maxima_from(values: &[f64], from: usize, complete: bool) -> (Vec<usize>, usize) {
    let n = values.len();
    let mut peaks = Vec::new();
    let mut i = from.max(1);
    while i + 1 < n {
        if values[i - 1] < values[i] {
            let mut ahead = i + 1;
            while ahead + 1 < n && values[ahead] == values[i] {
                ahead += 1;
            }
            if !complete && ahead + 1 == n && values[ahead] == values[i] {
                // plateau may continue past the data seen so far
                return (peaks, i);
            }
            if values[ahead] < values[i] {
                peaks.push((i + ahead - 1) / 2);
                i = ahead;
                continue;
            }
            i = ahead;
        } else {
            i += 1;
        }
    }
    (peaks, i)
}

pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    local_maxima_from(values, 1, true).0
}

fn is_local_max(values: &[f64], k: usize) -> bool {
    let left = k == 0 || values[k] >= values[k - 1];
    let right = k + 1 >= values.len() || values[k] >= values[k + 1];
    left && right
}

/// Topographic prominence of the peak at `k`.
///
/// Walks each side until a strictly higher sample (or the series end); the
/// saddle on a side is the lowest sample walked over. The prominence is the
/// height above the higher of the two saddles, or above the global minimum
/// when nothing anywhere is higher than the peak.
pub fn prominence(values: &[f64], k: usize) -> Result<f64, SegmentError> {
    if k >= values.len() {
        return Err(SegmentError::IndexOutOfRange {
            index: k,
            len: values.len(),
        });
    }
    if !is_local_max(values, k) {
        return Err(SegmentError::NotALocalMax { index: k });
    }
    let y = values[k];
    let (left_min, left_blocked) = walk(values[..k].iter().rev(), y);
    let (right_min, right_blocked) = walk(values[k + 1..].iter(), y);
    if !left_blocked && !right_blocked {
        let (lo, _) = min_max(values);
        return Ok(y - lo);
    }
    Ok(y - left_min.max(right_min))
}

fn walk<'a>(side: impl Iterator<Item = &'a f64>, y: f64) -> (f64, bool) {
    let mut lowest = y;
    for &v in side {
        if v > y {
            return (lowest, true);
        }
        lowest = lowest.min(v);
    }
    (lowest, false)
}

/// Range-minimum table answering `min(values[a..=b])` in O(1).
struct SparseMin {
    levels: Vec<Vec<f64>>,
}

impl SparseMin {
    fn new(values: &[f64]) -> Self {
        let mut levels = vec![values.to_vec()];
        let mut width = 1;
        while width * 2 <= values.len() {
            let prev = levels.last().expect("non-empty");
            let next = (0..=values.len() - width * 2)
                .map(|i| prev[i].min(prev[i + width]))
                .collect();
            levels.push(next);
            width *= 2;
        }
        Self { levels }
    }

    fn min(&self, a: usize, b: usize) -> f64 {
        let len = b - a + 1;
        let level = (usize::BITS - 1 - len.leading_zeros()) as usize;
        let row = &self.levels[level];
        row[a].min(row[b + 1 - (1 << level)])
    }
}

/// Prominences of many peaks at once in O(n log n): nearest strictly higher
/// samples come from a monotonic stack, saddles from a range-minimum table.
/// Agrees exactly with [`prominence`] on every local maximum.
pub fn peak_prominences(values: &[f64], peaks: &[usize]) -> Vec<f64> {
    let n = values.len();
    if n == 0 || peaks.is_empty() {
        return Vec::new();
    }
    let mut prev_higher = vec![usize::MAX; n];
    let mut next_higher = vec![usize::MAX; n];
    let mut stack: Vec<usize> = Vec::new();
    for i in 0..n {
        while let Some(&top) = stack.last() {
            if values[top] <= values[i] {
                stack.pop();
            } else {
                break;
            }
        }
        prev_higher[i] = stack.last().copied().unwrap_or(usize::MAX);
        stack.push(i);
    }
    stack.clear();
    for i in (0..n).rev() {
        while let Some(&top) = stack.last() {
            if values[top] <= values[i] {
                stack.pop();
            } else {
                break;
            }
        }
        next_higher[i] = stack.last().copied().unwrap_or(usize::MAX);
        stack.push(i);
    }
    let table = SparseMin::new(values);
    let global_min = table.min(0, n - 1);
    peaks
        .iter()
        .map(|&k| {
            let (pl, nh) = (prev_higher[k], next_higher[k]);
            if pl == usize::MAX && nh == usize::MAX {
                return values[k] - global_min;
            }
            let left = if pl == usize::MAX { table.min(0, k) } else { table.min(pl + 1, k) };
            let right = if nh == usize::MAX { table.min(k, n - 1) } else { table.min(k, nh - 1) };
            values[k] - left.max(right)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Boundary {
    Valid,
    Invalid,
    /// Needs samples that have not arrived yet.
    Pending,
}

/// Acceptance test for a rep boundary: a local minimum at or below `level`
/// that is not undercut by more than `slack` within `confirm` samples on the
/// side away from the peak.
#[derive(Debug, Clone, Copy)]
struct BoundaryRule {
    level: f64,
    confirm: usize,
    slack: f64,
}

impl BoundaryRule {
    fn new(config: &SegmenterConfig, peak_value: f64, range: f64) -> Self {
        Self {
            level: peak_value - config.prominence_threshold * range,
            confirm: config.online_confirm_frames,
            slack: config.boundary_tolerance,
        }
    }

    /// Whether `b` closes the rep, looking forward (end) or backward (start)
    /// from the peak. `complete` marks `values` as the whole series, so the
    /// confirmation window may be truncated at the end.
    fn check(&self, values: &[f64], b: usize, forward: bool, complete: bool) -> Boundary {
        let n = values.len();
        let v = values[b];
        if v > self.level {
            return Boundary::Invalid;
        }
        if b > 0 && v > values[b - 1] {
            return Boundary::Invalid;
        }
        if b + 1 < n && v > values[b + 1] {
            return Boundary::Invalid;
        }
        let floor = v - self.slack;
        if forward {
            if b + 1 >= n {
                return if complete { Boundary::Valid } else { Boundary::Pending };
            }
            let hi = b + self.confirm;
            if values[b + 1..=hi.min(n - 1)].iter().any(|&t| t < floor) {
                return Boundary::Invalid;
            }
            if hi > n - 1 && !complete {
                return Boundary::Pending;
            }
            Boundary::Valid
        } else {
            let lo = b.saturating_sub(self.confirm);
            if values[lo..b].iter().any(|&t| t < floor) {
                return Boundary::Invalid;
            }
            Boundary::Valid
        }
    }

    /// Scans backward from `peak` down to `lower` (inclusive) for the start.
    fn find_start(&self, values: &[f64], peak: usize, lower: usize) -> Option<usize> {
        (lower..peak)
            .rev()
            .find(|&b| self.check(values, b, false, true) == Boundary::Valid)
    }
}

fn first_index_at_or_after(times: &[f64], t: f64) -> usize {
    times.partition_point(|&x| x < t)
}

fn last_index_at_or_before(times: &[f64], t: f64) -> usize {
    times.partition_point(|&x| x <= t).saturating_sub(1)
}

/// Offline repetition detector over a whole clip's signal.
pub fn detect_reps(series: &SignalSeries, config: &SegmenterConfig) -> Vec<RepSegment> {
    let values = &series.smoothed;
    let times = &series.time_ms;
    let n = values.len();
    if n < 3 || series.range <= 0.0 || series.range < config.min_signal_range {
        return Vec::new();
    }
    let range = series.range;
    let tau = config.prominence_threshold;

    let maxima = local_maxima(values);
    let prominences = peak_prominences(values, &maxima);
    let retained: Vec<(usize, f64)> = maxima
        .into_iter()
        .zip(prominences)
        .filter(|&(_, p)| p > tau * range)
        .collect();

    let mut reps: Vec<RepSegment> = Vec::new();
    for (idx, &(peak, prom)) in retained.iter().enumerate() {
        let rule = BoundaryRule::new(config, values[peak], range);
        let t_peak = times[peak];

        let mut upper = last_index_at_or_before(times, t_peak + config.search_horizon_ms);
        if let Some(&(next, _)) = retained.get(idx + 1) {
            upper = upper.min(next - 1);
        }
        let end = (peak + 1..=upper)
            .find(|&b| rule.check(values, b, true, true) == Boundary::Valid);

        let mut lower = first_index_at_or_after(times, t_peak - config.search_horizon_ms);
        if idx > 0 {
            lower = lower.max(retained[idx - 1].0 + 1);
        }
        let start = rule.find_start(values, peak, lower);

        let (Some(start), Some(end)) = (start, end) else {
            continue;
        };
        if times[end] - times[start] < config.min_rep_ms {
            continue;
        }
        reps.push(RepSegment {
            peak_index: peak,
            start_index: start,
            end_index: end,
            prominence: prom / range,
        });
    }
    resolve_overlaps(reps)
}

/// Splits overlapping neighbours at the midpoint between their peaks; a rep
/// that cannot be split cleanly is dropped.
fn resolve_overlaps(reps: Vec<RepSegment>) -> Vec<RepSegment> {
    let mut out: Vec<RepSegment> = Vec::with_capacity(reps.len());
    for mut rep in reps {
        if let Some(prev) = out.last_mut() {
            if rep.start_index <= prev.end_index {
                let mid = (prev.peak_index + rep.peak_index) / 2;
                if mid > prev.peak_index && mid + 1 < rep.peak_index {
                    prev.end_index = prev.end_index.min(mid);
                    rep.start_index = rep.start_index.max(mid + 1);
                } else {
                    continue;
                }
            }
        }
        out.push(rep);
    }
    out
}

/// Offline segmentation of a clip in one call.
pub fn segment_clip(
    clip: &ClipSequence,
    source: &SignalSource,
    config: &SegmenterConfig,
) -> Result<Vec<RepSegment>, SegmentError> {
    let series = extract_signal(clip, source, config)?;
    Ok(detect_reps(&series, config))
}

#[derive(Debug, Clone)]
struct Candidate {
    peak: usize,
    /// Next index to test as an end boundary.
    resume: usize,
    /// Lowest sample seen right of the peak until a higher one appeared.
    right_min: f64,
    /// Set once a strictly higher sample appears right of the peak.
    blocked: bool,
}

/// Streaming segmenter: feed frames in time order, receive each rep once its
/// end has been confirmed. Emission lags the end boundary by at most
/// `online_confirm_frames` plus the smoothing half-window.
#[derive(Debug, Clone)]
pub struct OnlineSegmenter {
    config: SegmenterConfig,
    source: SignalSource,
    raw: Vec<f64>,
    smoothed: Vec<f64>,
    times: Vec<f64>,
    lo: f64,
    hi: f64,
    maxima_resume: usize,
    candidates: VecDeque<Candidate>,
    last_peak: Option<usize>,
    last_end: Option<usize>,
    prev_angle: Option<(f64, f64)>,
    finished: bool,
}

impl OnlineSegmenter {
    pub fn new(source: SignalSource, config: SegmenterConfig) -> Result<Self, SegmentError> {
        config.validate()?;
        Ok(Self {
            config,
            source,
            raw: Vec::new(),
            smoothed: Vec::new(),
            times: Vec::new(),
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
            maxima_resume: 1,
            candidates: VecDeque::new(),
            last_peak: None,
            last_end: None,
            prev_angle: None,
            finished: false,
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn source(&self) -> &SignalSource {
        &self.source
    }

    /// Frames consumed so far.
    pub fn frame_count(&self) -> usize {
        self.times.len()
    }

    pub fn time_ms(&self, index: usize) -> Option<f64> {
        self.times.get(index).copied()
    }

    pub fn last_end(&self) -> Option<usize> {
        self.last_end
    }

    fn sample(&mut self, frame: &KeypointFrame) -> Result<f64, SegmentError> {
        self.source
            .check(frame.points.len())
            .map_err(|_| SegmentError::InvalidSource(format!("frame has only {} joints", frame.points.len())))?;
        match &self.source {
            SignalSource::Coordinate { .. } | SignalSource::Combined { .. } => {
                Ok(self.source.coordinate_value(&frame.points).expect("coordinate source"))
            }
            SignalSource::Angle { triplet, invert } => {
                let sign = if *invert { -1.0 } else { 1.0 };
                // degenerate frames repeat the previous angle
                let deg = joint_angle(frame, triplet).ok();
                let unwrapped = match (self.prev_angle, deg) {
                    (Some((prev_deg, prev_un)), Some(d)) => {
                        let u = prev_un + angle_diff(d, prev_deg);
                        self.prev_angle = Some((d, u));
                        u
                    }
                    (Some((_, prev_un)), None) => prev_un,
                    (None, Some(d)) => {
                        self.prev_angle = Some((d, d));
                        d
                    }
                    (None, None) => 0.0,
                };
                Ok(sign * unwrapped / 360.0)
            }
        }
    }

    /// Consumes one frame. Returns the reps confirmed by it (normally none or one).
    pub fn step(&mut self, frame: &KeypointFrame) -> Result<Vec<RepSegment>, SegmentError> {
        if let Some(&prev) = self.times.last() {
            if !(frame.time_ms > prev) {
                return Err(SegmentError::OutOfOrderFrame {
                    previous_ms: prev,
                    time_ms: frame.time_ms,
                });
            }
        }
        if self.finished {
            return Ok(Vec::new());
        }
        let v = self.sample(frame)?;
        self.raw.push(v);
        self.times.push(frame.time_ms);
        let half = self.config.half_window();
        while self.smoothed.len() + half < self.raw.len() {
            let i = self.smoothed.len();
            self.push_smoothed(smooth_at(&self.raw, i, half));
        }
        Ok(self.advance())
    }

    /// Flushes the stream end: trailing samples are smoothed with truncated
    /// windows and pending boundaries are judged on the data available.
    /// Reps without a confirmed end are discarded.
    pub fn finish(&mut self) -> Vec<RepSegment> {
        if self.finished {
            return Vec::new();
        }
        let half = self.config.half_window();
        while self.smoothed.len() < self.raw.len() {
            let i = self.smoothed.len();
            self.push_smoothed(smooth_at(&self.raw, i, half));
        }
        self.finished = true;
        let out = self.advance();
        self.candidates.clear();
        out
    }

    fn push_smoothed(&mut self, s: f64) {
        self.lo = self.lo.min(s);
        self.hi = self.hi.max(s);
        for c in &mut self.candidates {
            if c.blocked {
                continue;
            }
            if s > self.smoothed[c.peak] {
                c.blocked = true;
            } else {
                c.right_min = c.right_min.min(s);
            }
        }
        self.smoothed.push(s);
    }

    fn range(&self) -> f64 {
        if self.smoothed.is_empty() {
            0.0
        } else {
            self.hi - self.lo
        }
    }

    fn advance(&mut self) -> Vec<RepSegment> {
        let (peaks, resume) = local_maxima_from(&self.smoothed, self.maxima_resume, self.finished);
        self.maxima_resume = resume;
        for peak in peaks {
            let y = self.smoothed[peak];
            let mut right_min = y;
            let mut blocked = false;
            for &s in &self.smoothed[peak + 1..] {
                if s > y {
                    blocked = true;
                    break;
                }
                right_min = right_min.min(s);
            }
            self.candidates.push_back(Candidate {
                peak,
                resume: peak + 1,
                right_min,
                blocked,
            });
        }

        let mut out = Vec::new();
        while let Some(mut cand) = self.candidates.pop_front() {
            match self.decide(&mut cand) {
                Decision::Pending => {
                    self.candidates.push_front(cand);
                    break;
                }
                Decision::Reject => {}
                Decision::Emit(rep) => out.push(rep),
            }
        }
        out
    }

    fn left_saddle(&self, peak: usize) -> (f64, bool) {
        walk(self.smoothed[..peak].iter().rev(), self.smoothed[peak])
    }

    fn prominence_now(&self, cand: &Candidate) -> f64 {
        let y = self.smoothed[cand.peak];
        let (left, left_blocked) = self.left_saddle(cand.peak);
        if !left_blocked && !cand.blocked {
            return y - self.lo;
        }
        y - left.max(cand.right_min)
    }

    fn decide(&mut self, cand: &mut Candidate) -> Decision {
        let range = self.range();
        let tau = self.config.prominence_threshold;
        let active = range > 0.0 && range >= self.config.min_signal_range;

        if cand.blocked && (!active || self.prominence_now(cand) <= tau * range) {
            // both saddles are final and the threshold only grows
            return Decision::Reject;
        }

        let values = &self.smoothed;
        let n = values.len();
        let t_peak = self.times[cand.peak];
        let rule = BoundaryRule::new(&self.config, values[cand.peak], range);
        let mut end = None;
        while cand.resume < n {
            let b = cand.resume;
            if self.times[b] - t_peak > self.config.search_horizon_ms {
                return Decision::Reject;
            }
            match rule.check(values, b, true, self.finished) {
                Boundary::Valid => {
                    end = Some(b);
                    break;
                }
                Boundary::Invalid => cand.resume += 1,
                Boundary::Pending => return Decision::Pending,
            }
        }
        let Some(end) = end else {
            return if self.finished {
                Decision::Reject
            } else {
                Decision::Pending
            };
        };
        if !active {
            return Decision::Reject;
        }
        let prom = self.prominence_now(cand);
        if prom <= tau * range {
            return Decision::Reject;
        }

        let mut lower = first_index_at_or_after(&self.times, t_peak - self.config.search_horizon_ms);
        if let Some(p) = self.last_peak {
            lower = lower.max(p + 1);
        }
        if let Some(e) = self.last_end {
            lower = lower.max(e + 1);
        }
        let start = rule.find_start(values, cand.peak, lower);
        // later candidates are bounded by this peak whether or not it yields a rep
        self.last_peak = Some(cand.peak);
        let Some(start) = start else {
            return Decision::Reject;
        };
        if self.times[end] - self.times[start] < self.config.min_rep_ms {
            return Decision::Reject;
        }
        self.last_end = Some(end);
        Decision::Emit(RepSegment {
            peak_index: cand.peak,
            start_index: start,
            end_index: end,
            prominence: prom / range,
        })
    }
}

enum Decision {
    Pending,
    Reject,
    Emit(RepSegment),
}
