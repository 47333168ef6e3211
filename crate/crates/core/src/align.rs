//! Hard alignment of attention (DTW) and projection of symbol-level outputs to
//! acoustic frames and to timed markup segments.

use crate::artic::{argmax, phone_log_posteriors, FeatureMatrix};
use crate::nnet::AttentionMatrix;
use crate::phoneset::TimedSegment;
use crate::{Error, Result, Scalar};

/// Base frame step of the front-end, in samples at 16 kHz.
pub const STEP_SAMPLES: usize = 160;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub decoder_step: usize,
    pub encoder_frame: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPath {
    pub points: Vec<PathPoint>,
    /// Sum of `1 - weight` over the path.
    pub cost: f64,
}

impl AlignmentPath {
    pub fn steps(&self) -> usize {
        self.points.last().map_or(0, |p| p.decoder_step + 1)
    }

    pub fn frames(&self) -> usize {
        self.points.last().map_or(0, |p| p.encoder_frame + 1)
    }

    /// Boundary and monotonicity invariants for a `steps x frames` matrix.
    pub fn is_valid(&self, steps: usize, frames: usize) -> bool {
        let (Some(first), Some(last)) = (self.points.first(), self.points.last()) else {
            return false;
        };
        if (first.decoder_step, first.encoder_frame) != (0, 0)
            || (last.decoder_step, last.encoder_frame) != (steps - 1, frames - 1)
        {
            return false;
        }
        self.points.windows(2).all(|w| {
            let dd = w[1].decoder_step as isize - w[0].decoder_step as isize;
            let de = w[1].encoder_frame as isize - w[0].encoder_frame as isize;
            matches!((dd, de), (1, 0) | (0, 1) | (1, 1))
        })
    }
}

/// Minimum-cost monotonic path with cost `1 - weight` per visited cell and
/// moves (d+1, e), (d, e+1), (d+1, e+1). Backtrace prefers the diagonal,
/// then the decoder move, then the frame move.
pub fn hard_align_dtw<S: Scalar>(attention: &AttentionMatrix<S>) -> Result<AlignmentPath> {
    let (rows, cols) = (attention.steps(), attention.frames());
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyInput("empty attention matrix".into()));
    }
    let w = |d: usize, e: usize| attention.at(d, e).as_f64();
    let mut acc = vec![f64::INFINITY; rows * cols];
    for d in 0..rows {
        for e in 0..cols {
            let best = if d == 0 && e == 0 {
                0.0
            } else {
                let diag = if d > 0 && e > 0 { acc[(d - 1) * cols + e - 1] } else { f64::INFINITY };
                let up = if d > 0 { acc[(d - 1) * cols + e] } else { f64::INFINITY };
                let left = if e > 0 { acc[d * cols + e - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[d * cols + e] = best + (1.0 - w(d, e));
        }
    }
    let (mut d, mut e) = (rows - 1, cols - 1);
    let mut points = vec![PathPoint {
        decoder_step: d,
        encoder_frame: e,
        weight: w(d, e),
    }];
    while d > 0 || e > 0 {
        let diag = if d > 0 && e > 0 { acc[(d - 1) * cols + e - 1] } else { f64::INFINITY };
        let up = if d > 0 { acc[(d - 1) * cols + e] } else { f64::INFINITY };
        let left = if e > 0 { acc[d * cols + e - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            d -= 1;
            e -= 1;
        } else if up <= left {
            d -= 1;
        } else {
            e -= 1;
        }
        points.push(PathPoint {
            decoder_step: d,
            encoder_frame: e,
            weight: w(d, e),
        });
    }
    points.reverse();
    Ok(AlignmentPath {
        points,
        cost: acc[rows * cols - 1],
    })
}

/// Owner of each encoder frame: the path point with the highest weight on
/// that frame (lower decoder step on ties).
pub fn frame_owners(path: &AlignmentPath) -> Vec<usize> {
    let mut owners: Vec<Option<(usize, f64)>> = vec![None; path.frames()];
    for p in &path.points {
        let slot = &mut owners[p.encoder_frame];
        match slot {
            Some((_, w)) if *w >= p.weight => {}
            _ => *slot = Some((p.decoder_step, p.weight)),
        }
    }
    owners.into_iter().map(|o| o.expect("path visits every frame").0).collect()
}

/// Expands symbol labels to base frames: encoder frame `e` covers base
/// frames `[e * r, (e + 1) * r)`.
pub fn project_labels<L: Clone>(path: &AlignmentPath, labels: &[L], reduction_factor: usize) -> Result<Vec<L>> {
    if path.steps() != labels.len() {
        return Err(Error::shape(format!(
            "path spans {} decoder steps, {} labels given",
            path.steps(),
            labels.len()
        )));
    }
    let mut out = Vec::with_capacity(path.frames() * reduction_factor);
    for owner in frame_owners(path) {
        for _ in 0..reduction_factor {
            out.push(labels[owner].clone());
        }
    }
    Ok(out)
}

/// Phone and feature bits per 10 ms base frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabeling {
    /// Matrix column per frame.
    pub phones: Vec<usize>,
    /// Feature bits per frame (without the eos bit).
    pub features: Vec<Vec<bool>>,
}

impl FrameLabeling {
    pub fn len(&self) -> usize {
        self.phones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phones.is_empty()
    }

    /// Drops frames past `frames` (pyramid padding beyond the audio).
    pub fn truncate(&mut self, frames: usize) {
        self.phones.truncate(frames);
        self.features.truncate(frames);
    }

    /// One line per frame: `index phone bits_hex`, bit i = feature i.
    pub fn to_lines(&self, phone_names: &[String]) -> String {
        let mut s = String::new();
        for (t, (p, bits)) in self.phones.iter().zip(&self.features).enumerate() {
            s.push_str(&format!("{t} {} {}\n", phone_names[*p], bits_hex(bits)));
        }
        s
    }
}

/// Hex rendering of a bit vector, least significant bit = first entry.
pub fn bits_hex(bits: &[bool]) -> String {
    let digits = bits.len().div_ceil(4).max(1);
    let mut out = String::with_capacity(digits);
    for k in (0..digits).rev() {
        let mut nibble = 0u8;
        for b in 0..4 {
            if bits.get(4 * k + b).copied().unwrap_or(false) {
                nibble |= 1 << b;
            }
        }
        out.push(char::from_digit(nibble as u32, 16).expect("nibble"));
    }
    out
}

fn strip_eos(m: &FeatureMatrix, col: &[bool]) -> Vec<bool> {
    match m.eos_feature() {
        Some(f) => col[..f].to_vec(),
        None => col.to_vec(),
    }
}

/// Frame labels from a decoded phone sequence (matrix columns).
pub fn project_frames(
    path: &AlignmentPath,
    phones: &[usize],
    matrix: &FeatureMatrix,
    reduction_factor: usize,
) -> Result<FrameLabeling> {
    if let Some(&bad) = phones.iter().find(|&&p| p >= matrix.n_phones()) {
        return Err(Error::shape(format!("phone {bad} outside the matrix")));
    }
    let phones = project_labels(path, phones, reduction_factor)?;
    let features = phones.iter().map(|&p| strip_eos(matrix, matrix.column(p))).collect();
    Ok(FrameLabeling { phones, features })
}

/// Frame labels from posteriorgram rows: features thresholded at 0.5, phone
/// by the log-posterior argmax.
pub fn project_posteriorgram_frames<S: Scalar>(
    path: &AlignmentPath,
    rows: &[Vec<S>],
    matrix: &FeatureMatrix,
    reduction_factor: usize,
) -> Result<FrameLabeling> {
    let half = S::of(0.5);
    let mut per_step = Vec::with_capacity(rows.len());
    for row in rows {
        let scores = phone_log_posteriors(row, matrix)?;
        let phone = argmax(&scores).expect("matrix has columns");
        let bits: Vec<bool> = row.iter().map(|&p| p > half).collect();
        per_step.push((phone, strip_eos(matrix, &bits)));
    }
    let frames = project_labels(path, &per_step, reduction_factor)?;
    let (phones, features) = frames.into_iter().unzip();
    Ok(FrameLabeling { phones, features })
}

/// Sample index of the peak of one attention row (superframe center).
pub fn peak_sample<S: Scalar>(row: &[S], reduction_factor: usize, step_samples: usize) -> (usize, f64) {
    let e = argmax(row).unwrap_or(0);
    let center = (e * reduction_factor) as f64 + reduction_factor as f64 / 2.0;
    ((center * step_samples as f64).floor() as usize, row[e].as_f64())
}

fn containing_segment(segments: &[TimedSegment], sample: u64) -> usize {
    if let Some(i) = segments
        .iter()
        .position(|s| s.start_sample <= sample && sample < s.end_sample)
    {
        return i;
    }
    // gaps and overhang go to the nearest segment, earlier on ties
    let dist = |s: &TimedSegment| {
        if sample < s.start_sample {
            s.start_sample - sample
        } else {
            sample + 1 - s.end_sample
        }
    };
    (0..segments.len()).min_by_key(|&i| (dist(&segments[i]), i)).expect("non-empty")
}

/// Assigns decoder-step labels to markup segments through attention peaks.
/// Contested segments keep the claimant with the highest peak weight
/// (earlier step on ties); unclaimed segments inherit the label of the
/// nearest claimed segment (earlier on ties).
pub fn project_segments<S: Scalar, L: Clone>(
    attention: &AttentionMatrix<S>,
    labels: &[L],
    segments: &[TimedSegment],
    reduction_factor: usize,
    step_samples: usize,
) -> Result<Vec<L>> {
    if segments.is_empty() {
        return Err(Error::EmptyInput("no segments".into()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("no decoded symbols".into()));
    }
    if attention.steps() != labels.len() {
        return Err(Error::shape(format!(
            "{} attention rows for {} symbols",
            attention.steps(),
            labels.len()
        )));
    }
    let mut claims: Vec<Option<(usize, f64)>> = vec![None; segments.len()];
    for d in 0..labels.len() {
        let (sample, weight) = peak_sample(attention.row(d), reduction_factor, step_samples);
        let seg = containing_segment(segments, sample as u64);
        match claims[seg] {
            Some((_, w)) if w >= weight => {}
            _ => claims[seg] = Some((d, weight)),
        }
    }
    let claimed: Vec<usize> = (0..segments.len()).filter(|&i| claims[i].is_some()).collect();
    Ok((0..segments.len())
        .map(|i| {
            let src = match claims[i] {
                Some((d, _)) => d,
                None => {
                    let j = *claimed
                        .iter()
                        .min_by_key(|&&j| (j.abs_diff(i), j))
                        .expect("at least one claim");
                    claims[j].expect("claimed").0
                }
            };
            labels[src].clone()
        })
        .collect())
}
