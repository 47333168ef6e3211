//! Phone error rate, articulatory-feature accuracies and confusion counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::align::FrameLabeling;
use crate::artic::FeatureMatrix;
use crate::phoneset::TimedSegment;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum EditOp {
    Match { hyp: usize, reference: usize },
    Substitute { hyp: usize, reference: usize },
    Insert { hyp: usize },
    Delete { reference: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditAlignment {
    pub ops: Vec<EditOp>,
}

impl EditAlignment {
    pub fn distance(&self) -> usize {
        self.ops.iter().filter(|op| !matches!(op, EditOp::Match { .. })).count()
    }

    pub fn substitutions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.ops.iter().filter_map(|op| match *op {
            EditOp::Substitute { hyp, reference } => Some((hyp, reference)),
            _ => None,
        })
    }

    /// Rebuilds the hypothesis from the reference and the ops.
    pub fn replay<T: Clone>(&self, hyp: &[T], reference: &[T]) -> Vec<T> {
        self.ops
            .iter()
            .filter_map(|op| match *op {
                EditOp::Match { reference: r, .. } => Some(reference[r].clone()),
                EditOp::Substitute { hyp: h, .. } | EditOp::Insert { hyp: h } => Some(hyp[h].clone()),
                EditOp::Delete { .. } => None,
            })
            .collect()
    }
}

/// Unit-cost Levenshtein alignment. The backtrace prefers match, then
/// substitution, then deletion, then insertion.
pub fn edit_alignment<T: PartialEq>(hyp: &[T], reference: &[T]) -> EditAlignment {
    let (n, m) = (hyp.len(), reference.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for (j, cell) in d.iter_mut().take(w).enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            d[i * w + j] = sub.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }
    let (mut i, mut j) = (n, m);
    let mut ops = Vec::with_capacity(n.max(m));
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = hyp[i - 1] == reference[j - 1];
            if d[(i - 1) * w + j - 1] + usize::from(!same) == here {
                i -= 1;
                j -= 1;
                ops.push(if same {
                    EditOp::Match { hyp: i, reference: j }
                } else {
                    EditOp::Substitute { hyp: i, reference: j }
                });
                continue;
            }
        }
        if j > 0 && d[i * w + j - 1] + 1 == here {
            j -= 1;
            ops.push(EditOp::Delete { reference: j });
        } else {
            i -= 1;
            ops.push(EditOp::Insert { hyp: i });
        }
    }
    ops.reverse();
    EditAlignment { ops }
}

/// Corpus-pooled rate: total edits over total reference length.
pub fn phone_error_rate<T: PartialEq>(pairs: &[(&[T], &[T])]) -> Result<f64> {
    let mut edits = 0usize;
    let mut length = 0usize;
    for (hyp, reference) in pairs {
        if reference.is_empty() {
            return Err(Error::EmptyReference);
        }
        edits += edit_alignment(hyp, reference).distance();
        length += reference.len();
    }
    if length == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(edits as f64 / length as f64)
}

/// Per-feature correct counts over a number of compared positions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureTally {
    pub correct: Vec<u64>,
    pub total: u64,
}

impl FeatureTally {
    pub fn new(features: usize) -> Self {
        Self {
            correct: vec![0; features],
            total: 0,
        }
    }

    /// `positions` compared positions with nothing right.
    pub fn missed(features: usize, positions: u64) -> Self {
        Self {
            correct: vec![0; features],
            total: positions,
        }
    }

    fn compare(&mut self, a: &[bool], b: &[bool]) -> Result<()> {
        if a.len() != self.correct.len() || b.len() != self.correct.len() {
            return Err(Error::shape(format!(
                "feature vectors of {} / {} for {} features",
                a.len(),
                b.len(),
                self.correct.len()
            )));
        }
        for (c, (x, y)) in self.correct.iter_mut().zip(a.iter().zip(b)) {
            *c += u64::from(x == y);
        }
        self.total += 1;
        Ok(())
    }

    fn miss(&mut self) {
        self.total += 1;
    }

    pub fn merge(&mut self, other: &FeatureTally) -> Result<()> {
        if self.correct.is_empty() && self.total == 0 {
            *self = other.clone();
            return Ok(());
        }
        if other.correct.len() != self.correct.len() {
            return Err(Error::shape("tallies over different feature sets"));
        }
        for (a, b) in self.correct.iter_mut().zip(&other.correct) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.correct
            .iter()
            .map(|&c| if self.total == 0 { 1.0 } else { c as f64 / self.total as f64 })
            .collect()
    }

    pub fn named(&self, names: &[String]) -> BTreeMap<String, f64> {
        names.iter().cloned().zip(self.accuracies()).collect()
    }
}

/// Sequence-level accuracy: aligned pairs compare bit by bit; insertions and
/// deletions count as an error for every feature.
pub fn feature_accuracy_sequence(
    hyp: &[Vec<bool>],
    reference: &[Vec<bool>],
    alignment: &EditAlignment,
) -> Result<FeatureTally> {
    let dims = reference.first().or(hyp.first()).map_or(0, Vec::len);
    let mut tally = FeatureTally::new(dims);
    for op in &alignment.ops {
        match *op {
            EditOp::Match { hyp: h, reference: r } | EditOp::Substitute { hyp: h, reference: r } => {
                tally.compare(&hyp[h], &reference[r])?
            }
            EditOp::Insert { .. } | EditOp::Delete { .. } => tally.miss(),
        }
    }
    Ok(tally)
}

/// Feature bits of matrix columns, eos bit removed.
pub fn columns_without_eos(matrix: &FeatureMatrix, phones: &[usize]) -> Vec<Vec<bool>> {
    let f = matrix.eos_feature().unwrap_or(matrix.n_features());
    phones.iter().map(|&p| matrix.column(p)[..f].to_vec()).collect()
}

/// Frame-level accuracy against markup: the truth of frame `t` is the
/// column of the segment containing the frame center.
pub fn feature_accuracy_frames(
    predicted: &FrameLabeling,
    truth: &[TimedSegment],
    matrix: &FeatureMatrix,
    step_samples: usize,
    window_samples: usize,
) -> Result<FeatureTally> {
    let f = matrix.eos_feature().unwrap_or(matrix.n_features());
    let mut tally = FeatureTally::new(f);
    let mut seg = 0;
    for (t, bits) in predicted.features.iter().enumerate() {
        let center = (t * step_samples + window_samples / 2) as u64;
        while seg < truth.len() && truth[seg].end_sample <= center {
            seg += 1;
        }
        let s = truth
            .get(seg)
            .filter(|s| s.start_sample <= center)
            .ok_or_else(|| Error::Markup(format!("frame {t} (sample {center}) is not covered by markup")))?;
        tally.compare(bits, &matrix.column(s.phone)[..f])?;
    }
    Ok(tally)
}

/// Substitution histogram `(reference, hypothesis) -> count`.
pub fn confusion_counts<'a>(
    items: impl IntoIterator<Item = (&'a EditAlignment, &'a [usize], &'a [usize])>,
) -> BTreeMap<(usize, usize), u64> {
    let mut counts = BTreeMap::new();
    for (alignment, hyp, reference) in items {
        for (h, r) in alignment.substitutions() {
            *counts.entry((reference[r], hyp[h])).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub reference: String,
    pub hypothesis: String,
    pub count: u64,
}

/// Confusions sorted by descending count, then by symbol.
pub fn sorted_confusions(counts: &BTreeMap<(usize, usize), u64>, names: &[String]) -> Vec<Confusion> {
    let mut v: Vec<Confusion> = counts
        .iter()
        .map(|(&(r, h), &count)| Confusion {
            reference: names[r].clone(),
            hypothesis: names[h].clone(),
            count,
        })
        .collect();
    v.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| a.reference.cmp(&b.reference))
            .then_with(|| a.hypothesis.cmp(&b.hypothesis))
    });
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per: f64,
    pub utterances: usize,
    pub reference_length: usize,
    pub edits: usize,
    /// Rate of the phone string read off the indicator head, when scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indicator_per: Option<f64>,
    pub per_feature_sequence_acc: BTreeMap<String, f64>,
    pub per_feature_frame_acc: BTreeMap<String, f64>,
    #[serde(default)]
    pub per_feature_segment_acc: BTreeMap<String, f64>,
    pub confusions: Vec<Confusion>,
}

/// Corpus accumulator for an [`EvalReport`].
#[derive(Debug, Clone)]
pub struct Scorer<'m> {
    matrix: &'m FeatureMatrix,
    utterances: usize,
    edits: usize,
    reference_length: usize,
    indicator_edits: usize,
    indicator_length: usize,
    sequence: FeatureTally,
    frames: FeatureTally,
    segments: FeatureTally,
    confusions: BTreeMap<(usize, usize), u64>,
}

impl<'m> Scorer<'m> {
    pub fn new(matrix: &'m FeatureMatrix) -> Self {
        let f = matrix.eos_feature().unwrap_or(matrix.n_features());
        Self {
            matrix,
            utterances: 0,
            edits: 0,
            reference_length: 0,
            indicator_edits: 0,
            indicator_length: 0,
            sequence: FeatureTally::new(f),
            frames: FeatureTally::new(f),
            segments: FeatureTally::new(f),
            confusions: BTreeMap::new(),
        }
    }

    /// Scores one utterance's phone hypothesis; phones are matrix columns.
    pub fn add(&mut self, hyp: &[usize], reference: &[usize]) -> Result<()> {
        if reference.is_empty() {
            return Err(Error::EmptyReference);
        }
        let alignment = edit_alignment(hyp, reference);
        for (k, v) in confusion_counts([(&alignment, hyp, reference)]) {
            *self.confusions.entry(k).or_insert(0) += v;
        }
        self.utterances += 1;
        self.edits += alignment.distance();
        self.reference_length += reference.len();
        Ok(())
    }

    /// Scores per-symbol feature bits. `symbols` (matrix columns, one per
    /// bit vector) drive the edit alignment against `reference`.
    pub fn add_features(&mut self, symbols: &[usize], bits: &[Vec<bool>], reference: &[usize]) -> Result<()> {
        if reference.is_empty() {
            return Err(Error::EmptyReference);
        }
        if symbols.len() != bits.len() {
            return Err(Error::shape(format!("{} symbols for {} feature vectors", symbols.len(), bits.len())));
        }
        let alignment = edit_alignment(symbols, reference);
        let tally = feature_accuracy_sequence(bits, &columns_without_eos(self.matrix, reference), &alignment)?;
        self.sequence.merge(&tally)?;
        self.indicator_edits += alignment.distance();
        self.indicator_length += reference.len();
        Ok(())
    }

    pub fn add_frames(&mut self, tally: &FeatureTally) -> Result<()> {
        self.frames.merge(tally)
    }

    /// Compares predicted bits per markup segment with the segment's column.
    pub fn add_segments(&mut self, predicted: &[Vec<bool>], truth: &[TimedSegment]) -> Result<()> {
        if predicted.len() != truth.len() {
            return Err(Error::shape(format!("{} predictions for {} segments", predicted.len(), truth.len())));
        }
        let f = self.segments.correct.len();
        for (bits, s) in predicted.iter().zip(truth) {
            self.segments.compare(bits, &self.matrix.column(s.phone)[..f])?;
        }
        Ok(())
    }

    pub fn report(&self) -> Result<EvalReport> {
        if self.reference_length == 0 && self.indicator_length == 0 {
            return Err(Error::EmptyReference);
        }
        let names = &self.matrix.feature_names()[..self.sequence.correct.len()];
        let named = |t: &FeatureTally| if t.total > 0 { t.named(names) } else { BTreeMap::new() };
        let rate = |e: usize, n: usize| if n == 0 { None } else { Some(e as f64 / n as f64) };
        let indicator_per = rate(self.indicator_edits, self.indicator_length);
        Ok(EvalReport {
            per: rate(self.edits, self.reference_length).or(indicator_per).unwrap_or(0.0),
            utterances: self.utterances,
            reference_length: self.reference_length,
            edits: self.edits,
            indicator_per,
            per_feature_sequence_acc: named(&self.sequence),
            per_feature_frame_acc: named(&self.frames),
            per_feature_segment_acc: named(&self.segments),
            confusions: sorted_confusions(&self.confusions, self.matrix.phone_names()),
        })
    }
}

impl EvalReport {
    /// Human-readable table: one row per feature with sequence and frame
    /// accuracy, then the most frequent confusions.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "PER {:.4}  ({} edits / {} phones, {} utterances)",
            self.per, self.edits, self.reference_length, self.utterances
        );
        if let Some(p) = self.indicator_per {
            let _ = writeln!(s, "PER via indicators {p:.4}");
        }
        let cell = |m: &BTreeMap<String, f64>, name: &str| m.get(name).map_or("-".to_string(), |v| format!("{:.1}%", 100.0 * v));
        let _ = writeln!(s, "{:<20} {:>9} {:>9} {:>9}", "feature", "sequence", "frames", "segments");
        for name in self.per_feature_sequence_acc.keys() {
            let _ = writeln!(
                s,
                "{name:<20} {:>9} {:>9} {:>9}",
                cell(&self.per_feature_sequence_acc, name),
                cell(&self.per_feature_frame_acc, name),
                cell(&self.per_feature_segment_acc, name)
            );
        }
        if !self.confusions.is_empty() {
            let _ = writeln!(s, "top confusions (reference -> hypothesis):");
            for c in self.confusions.iter().take(10) {
                let _ = writeln!(s, "  {} -> {}  {}", c.reference, c.hypothesis, c.count);
            }
        }
        s
    }
}
