//! End-to-end pipeline: featurize, normalize, train with length buckets,
//! decode and score.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{hard_align_dtw, project_posteriorgram_frames, project_frames, project_segments, FrameLabeling};
use crate::artic::{standard_matrix, FeatureMatrix};
use crate::corpus::{Corpus, Split, TimitEntry, Utterance};
use crate::decoder::{decode_indicators, decode_phones_greedy, DecodeResult};
use crate::eval::{columns_without_eos, feature_accuracy_frames, EvalReport, FeatureTally, Scorer};
use crate::frontend::{
    add_deltas, apply_normalization, fit_normalization, AcousticFeatures, AudioBuffer, FeatureKind, Frontend,
    FrontendConfig, NormalizationStats,
};
use crate::nnet::{Feedback, Mat, Model, ModelConfig, TrainExample, Trainer};
use crate::phoneset::{collapse_silence, reduce_segments, PhoneInventory, ReductionTable, TimedSegment};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluate on the training set every this many epochs (0 = never).
    pub eval_every: usize,
    /// Stop once training PER is below this and ...
    pub stop_per: Option<f64>,
    /// ... every sequence-level feature accuracy is above this.
    pub stop_feature_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            seed: 0,
            eval_every: 0,
            stop_per: None,
            stop_feature_acc: None,
        }
    }
}

/// Full experiment configuration, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub frontend: FrontendConfig,
    pub features: FeatureKind,
    pub deltas: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            frontend: FrontendConfig::default(),
            features: FeatureKind::Mfcc,
            deltas: true,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn input_dims(&self) -> usize {
        AcousticFeatures::base_dims(self.features, &self.frontend) * if self.deltas { 3 } else { 1 }
    }

    /// Fills in the sizes implied by the front end and the target space.
    pub fn resolve(&mut self, space: &TargetSpace) {
        self.model.input_dims = self.input_dims();
        self.model.phone_count = space.inventory.len();
        self.model.feature_count = space.matrix.n_features();
    }
}

/// Output vocabulary of the model and the matrix over it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSpace {
    pub inventory: PhoneInventory,
    /// Without the eos row and column.
    pub matrix: FeatureMatrix,
    reduction: Option<(PhoneInventory, ReductionTable)>,
}

impl TargetSpace {
    /// 61-phone corpora fold to 39 phones; other inventories are used as is.
    pub fn for_corpus(corpus_inventory: &PhoneInventory) -> Result<Self> {
        if *corpus_inventory == PhoneInventory::timit61() {
            let inventory = PhoneInventory::timit39();
            Ok(Self {
                matrix: standard_matrix(&inventory)?,
                inventory,
                reduction: Some((corpus_inventory.clone(), ReductionTable::timit())),
            })
        } else {
            Ok(Self {
                matrix: standard_matrix(corpus_inventory)?,
                inventory: corpus_inventory.clone(),
                reduction: None,
            })
        }
    }

    /// Markup in the target inventory, adjacent silences merged.
    pub fn segments(&self, segments: &[TimedSegment]) -> Result<Vec<TimedSegment>> {
        match &self.reduction {
            Some((from, table)) => reduce_segments(segments, from, table, &self.inventory),
            None => {
                let sil = self.inventory.sil();
                let mut out: Vec<TimedSegment> = Vec::with_capacity(segments.len());
                for s in segments {
                    match out.last_mut() {
                        Some(prev) if prev.phone == sil && s.phone == sil => prev.end_sample = s.end_sample,
                        _ => out.push(*s),
                    }
                }
                Ok(out)
            }
        }
    }
}

/// One utterance ready for training or scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub split: Split,
    pub features: AcousticFeatures,
    pub targets: Vec<usize>,
    /// Markup in the target inventory.
    pub segments: Option<Vec<TimedSegment>>,
}

impl Prepared {
    pub fn example(&self) -> TrainExample<f32> {
        TrainExample {
            id: self.id.clone(),
            features: feature_mat(&self.features),
            phones: self.targets.clone(),
        }
    }
}

pub fn feature_mat(f: &AcousticFeatures) -> Mat<f32> {
    Mat::from_vec(f.frames, f.dims, f.data.clone())
}

/// Front-end features for one buffer, deltas appended when configured.
pub fn featurize(audio: &AudioBuffer, config: &ExperimentConfig) -> Result<AcousticFeatures> {
    let base = Frontend::new(config.frontend.clone()).extract(audio, config.features)?;
    Ok(if config.deltas { add_deltas(&base) } else { base })
}

fn prepare_one(u: &Utterance, config: &ExperimentConfig, space: &TargetSpace) -> Result<Prepared> {
    let segments = u.segments.as_deref().map(|s| space.segments(s)).transpose()?;
    let targets = match &segments {
        Some(s) => collapse_silence(&s.iter().map(|x| x.phone).collect::<Vec<_>>(), space.inventory.sil()),
        None => u.phones.phones.clone(),
    };
    if targets.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(Prepared {
        id: u.id.clone(),
        split: u.split,
        features: featurize(&u.audio, config)?,
        targets,
        segments,
    })
}

/// Normalizes every utterance with statistics from the train split.
pub fn normalize(data: Vec<Prepared>) -> Result<(Vec<Prepared>, NormalizationStats)> {
    let train: Vec<AcousticFeatures> = data
        .iter()
        .filter(|p| p.split == Split::Train)
        .map(|p| p.features.clone())
        .collect();
    let stats = fit_normalization(&train)?;
    Ok((apply_stats(data, &stats)?, stats))
}

/// Normalizes with previously fitted statistics.
pub fn apply_stats(mut data: Vec<Prepared>, stats: &NormalizationStats) -> Result<Vec<Prepared>> {
    for p in &mut data {
        p.features = apply_normalization(&p.features, stats)?;
    }
    Ok(data)
}

/// Featurizes an in-memory corpus (features not yet normalized).
pub fn featurize_corpus(corpus: &Corpus, config: &ExperimentConfig) -> Result<(Vec<Prepared>, TargetSpace)> {
    let space = TargetSpace::for_corpus(&corpus.inventory)?;
    let data = corpus
        .utterances
        .par_iter()
        .map(|u| prepare_one(u, config, &space))
        .collect::<Result<Vec<_>>>()?;
    Ok((data, space))
}

/// As [`featurize_corpus`] for an on-disk TIMIT index; audio is dropped as
/// soon as it is featurized.
pub fn featurize_timit(entries: &[TimitEntry], config: &ExperimentConfig) -> Result<(Vec<Prepared>, TargetSpace)> {
    let inv61 = PhoneInventory::timit61();
    let space = TargetSpace::for_corpus(&inv61)?;
    let data = entries
        .par_iter()
        .map(|e| prepare_one(&e.load(&inv61)?, config, &space))
        .collect::<Result<Vec<_>>>()?;
    Ok((data, space))
}

/// Featurizes and normalizes with statistics fitted on the train split.
pub fn prepare_corpus(corpus: &Corpus, config: &ExperimentConfig) -> Result<(Vec<Prepared>, NormalizationStats, TargetSpace)> {
    let (data, space) = featurize_corpus(corpus, config)?;
    let (data, stats) = normalize(data)?;
    Ok((data, stats, space))
}

/// Batches of similar length: indices sorted by (frames, id), chunked.
pub fn length_buckets(data: &[Prepared], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| (data[a].features.frames, &data[a].id).cmp(&(data[b].features.frames, &data[b].id)));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
    pub per: Option<f64>,
    pub min_feature_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochLog>,
}

fn min_feature_acc(r: &EvalReport) -> Option<f64> {
    r.per_feature_sequence_acc.values().copied().reduce(f64::min)
}

/// Trains on the `Train` split. Batch order is reshuffled every epoch from
/// the training seed. `on_epoch` sees each epoch's log as it completes.
pub fn train(
    trainer: &mut Trainer<f32>,
    data: &[Prepared],
    space: &TargetSpace,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let train: Vec<Prepared> = data.iter().filter(|p| p.split == Split::Train).cloned().collect();
    if train.is_empty() {
        return Err(Error::EmptyInput("no training utterances".into()));
    }
    let examples: Vec<TrainExample<f32>> = train.iter().map(Prepared::example).collect();
    let mut batches = length_buckets(&train, config.batch_size);
    let feedback = trainer.model.config.feedback;
    let mut history = Vec::new();
    for epoch in 1..=config.epochs {
        let clock = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        batches.shuffle(&mut rng);
        let mut total = 0.0;
        for b in &batches {
            let batch: Vec<TrainExample<f32>> = b.iter().map(|&i| examples[i].clone()).collect();
            total += trainer.train_step(&batch)? as f64 * b.len() as f64;
        }
        let mut log = EpochLog {
            epoch,
            mean_loss: total / train.len() as f64,
            seconds: 0.0,
            per: None,
            min_feature_acc: None,
        };
        let due = config.eval_every > 0 && (epoch % config.eval_every == 0 || epoch == config.epochs);
        let mut done = false;
        if due {
            let (report, _) = evaluate(&trainer.model, &train, space, feedback)?;
            log.per = Some(report.per);
            log.min_feature_acc = min_feature_acc(&report);
            done = match (config.stop_per, config.stop_feature_acc) {
                (None, None) => false,
                (p, f) => {
                    p.is_none_or(|p| report.per < p)
                        && f.is_none_or(|f| log.min_feature_acc.is_none_or(|a| a > f))
                }
            };
        }
        log.seconds = clock.elapsed().as_secs_f64();
        on_epoch(&log);
        history.push(log);
        if done {
            return Ok(TrainOutcome {
                epochs: epoch,
                stopped_early: epoch < config.epochs,
                history,
            });
        }
    }
    Ok(TrainOutcome {
        epochs: config.epochs,
        stopped_early: false,
        history,
    })
}

/// Decoder outputs for one utterance.
#[derive(Debug, Clone)]
pub struct UtteranceOutput {
    pub id: String,
    pub phones: Option<DecodeResult<f32>>,
    pub indicators: Option<DecodeResult<f32>>,
    /// Frame labels from the indicator head (phone head when absent).
    pub frames: Option<FrameLabeling>,
}

impl UtteranceOutput {
    /// Indicator steps before eos: (matrix columns, thresholded bits).
    pub fn indicator_symbols(&self, matrix: &FeatureMatrix) -> Option<(Vec<usize>, Vec<Vec<bool>>)> {
        let r = self.indicators.as_ref()?;
        let symbols = r.phones.as_ref()?.phones.clone();
        let f = matrix.eos_feature().unwrap_or(matrix.n_features());
        let rows = &r.posteriorgram.as_ref()?.rows;
        let bits = rows[..symbols.len()].iter().map(|row| row[..f].iter().map(|&p| p > 0.5).collect()).collect();
        Some((symbols, bits))
    }
}

/// Decodes one utterance with every head the model has.
pub fn decode_utterance(model: &Model<f32>, p: &Prepared, space: &TargetSpace, feedback: Feedback) -> Result<UtteranceOutput> {
    let x = feature_mat(&p.features);
    let phones = if model.config.tasks.has_phones() {
        Some(decode_phones_greedy(model, &x, &p.id, None)?)
    } else {
        None
    };
    let indicators = if model.config.tasks.has_features() {
        Some(decode_indicators(model, &x, &p.id, &space.matrix, feedback, None, None)?)
    } else {
        None
    };
    let mut out = UtteranceOutput {
        id: p.id.clone(),
        phones,
        indicators,
        frames: None,
    };
    out.frames = frame_labels(model, &out, space, p.features.frames)?;
    Ok(out)
}

fn frame_labels(model: &Model<f32>, out: &UtteranceOutput, space: &TargetSpace, frames: usize) -> Result<Option<FrameLabeling>> {
    let r = model.reduction_factor();
    let matrix = space.matrix.with_eos();
    let mut labels = if let Some(ind) = &out.indicators {
        let steps = ind.phones.as_ref().map_or(0, |s| s.phones.len());
        if steps == 0 {
            return Ok(None);
        }
        let path = hard_align_dtw(&ind.attention.truncated(steps))?;
        let rows = &ind.posteriorgram.as_ref().expect("indicator decode").rows[..steps];
        project_posteriorgram_frames(&path, rows, &matrix, r)?
    } else if let Some(ph) = &out.phones {
        let symbols = &ph.phones.as_ref().expect("phone decode").phones;
        if symbols.is_empty() {
            return Ok(None);
        }
        let path = hard_align_dtw(&ph.attention.truncated(symbols.len()))?;
        project_frames(&path, symbols, &matrix, r)?
    } else {
        return Ok(None);
    };
    labels.truncate(frames);
    Ok(Some(labels))
}

/// Frames whose center sample lies inside the markup.
fn scored_frames(segments: &[TimedSegment], frames: usize, step: usize, window: usize) -> usize {
    let end = segments.last().map_or(0, |s| s.end_sample);
    (0..frames).take_while(|t| ((t * step + window / 2) as u64) < end).count()
}

/// Decodes `data` and scores it. Phone error rate comes from the phone head
/// (from the indicator head's phone string for indicator-only models);
/// feature accuracies come from the indicator head (from the phone head's
/// matrix columns for phone-only models).
pub fn evaluate(
    model: &Model<f32>,
    data: &[Prepared],
    space: &TargetSpace,
    feedback: Feedback,
) -> Result<(EvalReport, Vec<UtteranceOutput>)> {
    let mut outputs = data
        .par_iter()
        .map(|p| decode_utterance(model, p, space, feedback))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data[a].id.cmp(&data[b].id));
    let step = 160;
    let window = 320;
    let mut scorer = Scorer::new(&space.matrix);
    let r = model.reduction_factor();
    for &i in &order {
        let (p, out) = (&data[i], &outputs[i]);
        let (symbols, bits) = match (out.indicator_symbols(&space.matrix), &out.phones) {
            (Some(sb), _) => sb,
            (None, Some(ph)) => {
                let s = ph.phones.as_ref().expect("phone decode").phones.clone();
                let b = columns_without_eos(&space.matrix, &s);
                (s, b)
            }
            (None, None) => return Err(Error::shape("model has no output head")),
        };
        let hyp = match &out.phones {
            Some(ph) => &ph.phones.as_ref().expect("phone decode").phones,
            None => &symbols,
        };
        scorer.add(hyp, &p.targets)?;
        scorer.add_features(&symbols, &bits, &p.targets)?;
        if let Some(segs) = &p.segments {
            let n = scored_frames(segs, p.features.frames, step, window);
            let tally = match &out.frames {
                Some(f) if f.len() >= n => {
                    let mut f = f.clone();
                    f.truncate(n);
                    feature_accuracy_frames(&f, segs, &space.matrix, step, window)?
                }
                _ => FeatureTally::missed(space.matrix.n_features(), n as u64),
            };
            scorer.add_frames(&tally)?;
            let predicted: Vec<Vec<bool>> = if symbols.is_empty() {
                vec![vec![false; space.matrix.n_features()]; segs.len()]
            } else {
                let att = match &out.indicators {
                    Some(ind) => ind.attention.truncated(symbols.len()),
                    None => out.phones.as_ref().expect("phone decode").attention.truncated(symbols.len()),
                };
                project_segments(&att, &bits, segs, r, step)?
            };
            scorer.add_segments(&predicted, segs)?;
        }
    }
    outputs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((scorer.report()?, outputs))
}

/// Builds a fresh model for `space` and trains it on the train split.
pub fn run(
    config: &ExperimentConfig,
    data: &[Prepared],
    space: &TargetSpace,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(Model<f32>, TrainOutcome)> {
    let mut config = config.clone();
    config.resolve(space);
    let model = Model::new(config.model.clone(), config.train.seed)?;
    let mut trainer = Trainer::new(model, &space.matrix, config.train.seed)?;
    let outcome = train(&mut trainer, data, space, &config.train, on_epoch)?;
    Ok((trainer.model, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, synthetic_inventory, SynthConfig};

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.model.encoder_layers = 2;
        c.model.encoder_units = 8;
        c.model.decoder_units = 8;
        c.model.embedding_dims = 4;
        c.train.epochs = 2;
        c.train.batch_size = 3;
        c
    }

    #[test]
    fn folding_space_for_timit() {
        let s = TargetSpace::for_corpus(&PhoneInventory::timit61()).unwrap();
        assert_eq!(s.inventory.len(), 39);
        let inv = &PhoneInventory::timit61();
        let seg = |a, b, p: &str| TimedSegment { start_sample: a, end_sample: b, phone: inv.lookup(p).unwrap() };
        let out = s.segments(&[seg(0, 10, "h#"), seg(10, 20, "q"), seg(20, 30, "ix"), seg(30, 40, "pau"), seg(40, 50, "h#")]).unwrap();
        let names: Vec<&str> = out.iter().map(|x| s.inventory.symbol(x.phone)).collect();
        assert_eq!(names, vec!["sil", "ih", "sil"]);
        assert_eq!(out[0].end_sample, 20);
    }

    #[test]
    fn pipeline_runs_and_is_deterministic() {
        let inv = synthetic_inventory(4).unwrap();
        let corpus = generate_synthetic(&SynthConfig::new(1, 6), &inv, &standard_matrix(&inv).unwrap()).unwrap();
        let config = tiny();
        let (data, stats, space) = prepare_corpus(&corpus, &config).unwrap();
        assert_eq!(stats.mean.len(), 39);
        assert_eq!(data[0].targets, corpus.utterances[0].phones.phones);
        let buckets = length_buckets(&data, 4);
        assert_eq!(buckets.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 2]);
        let (m1, o1) = run(&config, &data, &space, |_| {}).unwrap();
        let (m2, _) = run(&config, &data, &space, |_| {}).unwrap();
        assert_eq!(m1.params.tensors(), m2.params.tensors());
        assert_eq!(o1.epochs, 2);
        let (report, outs) = evaluate(&m1, &data, &space, Feedback::Mapped).unwrap();
        assert_eq!(report.utterances, 6);
        assert_eq!(outs.len(), 6);
        assert_eq!(report.per_feature_sequence_acc.len(), 28);
        assert_eq!(report.per_feature_frame_acc.len(), 28);
        assert!(report.per.is_finite());
    }
}
