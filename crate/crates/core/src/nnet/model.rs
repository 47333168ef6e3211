use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{self, ParamStore};
use super::tape::{sigmoid, softmax_in_place, Tape, Var};
use super::tensor::Mat;
use super::{Feedback, ModelConfig};
use crate::artic::{argmax, nearest_phone_features, FeatureMatrix};
use crate::{Error, Result, Scalar};

/// Encoder output length for `frames` input frames and `layers` layers.
pub fn encoder_length(frames: usize, layers: usize) -> usize {
    (1..layers).fold(frames, |t, _| t.div_ceil(2))
}

/// Bilinear attention for one query: `scores = query * weight * keys^T`.
/// Returns `(context, attention row)`.
pub fn attend<S: Scalar>(query: &[S], weight: &Mat<S>, keys: &Mat<S>) -> Result<(Vec<S>, Vec<S>)> {
    if weight.rows != query.len() || weight.cols != keys.cols {
        return Err(Error::shape(format!(
            "query {} / weight {:?} / keys {:?}",
            query.len(),
            weight.shape(),
            keys.shape()
        )));
    }
    if keys.rows == 0 {
        return Err(Error::EmptyInput("attention over zero keys".into()));
    }
    let projected = Mat::row_vector(query.to_vec()).matmul(weight);
    let mut row = projected.matmul_bt(keys).data;
    softmax_in_place(&mut row);
    let context = Mat::row_vector(row.clone()).matmul(keys).data;
    Ok((context, row))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<S> {
    /// `length x 2 * encoder_units`.
    pub states: Mat<S>,
    pub reduction_factor: usize,
    pub frame_span_ms: f64,
}

/// Decoder steps x encoder frames; each row is a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix<S> {
    pub weights: Mat<S>,
}

impl<S: Scalar> AttentionMatrix<S> {
    pub fn from_rows(rows: &[Vec<S>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape(format!("attention row of {} for {cols} frames", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            weights: Mat::from_vec(rows.len(), cols, data),
        })
    }

    pub fn steps(&self) -> usize {
        self.weights.rows
    }

    pub fn frames(&self) -> usize {
        self.weights.cols
    }

    pub fn row(&self, d: usize) -> &[S] {
        self.weights.row(d)
    }

    pub fn at(&self, d: usize, e: usize) -> S {
        self.weights.at(d, e)
    }

    /// Drops the last `n` rows (e.g. the eos step).
    pub fn truncated(&self, steps: usize) -> Self {
        let steps = steps.min(self.steps());
        Self {
            weights: Mat::from_vec(steps, self.frames(), self.weights.data[..steps * self.frames()].to_vec()),
        }
    }

    pub fn to_f32(&self) -> crate::binio::F32Matrix {
        crate::binio::F32Matrix {
            rows: self.weights.rows,
            cols: self.weights.cols,
            data: self.weights.data.iter().map(|v| v.as_f64() as f32).collect(),
        }
    }

    pub fn from_f32(m: &crate::binio::F32Matrix) -> Self {
        Self {
            weights: Mat::from_vec(m.rows, m.cols, m.data.iter().map(|&v| S::of(v as f64)).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Phones,
    Features,
}

#[derive(Debug, Clone, PartialEq)]
struct DirLayout {
    wx: usize,
    wh: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct HeadLayout {
    embedding: usize,
    wx: usize,
    wh: usize,
    b: usize,
    attention: usize,
    wc: usize,
    bc: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    encoder: Vec<[DirLayout; 2]>,
    phones: Option<HeadLayout>,
    features: Option<HeadLayout>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
    layout: Layout,
}

/// Recurrent state of one decoder head.
#[derive(Debug, Clone, Copy)]
pub struct HeadState {
    h: Option<Var>,
    c: Option<Var>,
    context: Var,
}

/// Decoder input for one step.
#[derive(Debug, Clone)]
pub enum StepInput<S> {
    /// Phone head: output-vocabulary index (sos = phone_count).
    Symbol(usize),
    /// Indicator head: previous feature vector including the eos bit.
    Vector(Vec<S>),
}

#[derive(Debug, Clone)]
pub struct StepOutput<S> {
    pub logits: Vec<S>,
    pub attention: Vec<S>,
}

/// Loss breakdown of one teacher-forced pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput<S> {
    pub loss: S,
    pub phone_loss: S,
    pub indicator_loss: S,
    pub steps: usize,
}

fn add_lstm_bias<S: Scalar>(store: &mut ParamStore<S>, name: String, units: usize) -> usize {
    let b = store.add(name, 1, 4 * units);
    // forget gate starts open
    for v in &mut store.get_mut(b).data[units..2 * units] {
        *v = S::one();
    }
    b
}

fn dropout<S: Scalar>(tape: &mut Tape<S>, v: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    let Some(rng) = rng else { return v };
    if p <= 0.0 {
        return v;
    }
    let (rows, cols) = tape.value(v).shape();
    let keep = S::of(1.0 / (1.0 - p));
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < p { S::zero() } else { keep })
        .collect();
    tape.mask(v, Mat::from_vec(rows, cols, data))
}

impl<S: Scalar> Model<S> {
    /// Freshly initialized model (Glorot uniform weights, seeded).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let (he, hd, ed) = (config.encoder_units, config.decoder_units, config.embedding_dims);
        let mut encoder = Vec::with_capacity(config.encoder_layers);
        for l in 0..config.encoder_layers {
            let in_dims = if l == 0 { config.input_dims } else { 4 * he };
            let mut dir = |tag: &str, store: &mut ParamStore<S>| DirLayout {
                wx: store.add_glorot(format!("encoder.{l}.{tag}.wx"), in_dims, 4 * he, &mut rng),
                wh: store.add_glorot(format!("encoder.{l}.{tag}.wh"), he, 4 * he, &mut rng),
                b: add_lstm_bias(store, format!("encoder.{l}.{tag}.b"), he),
            };
            let fwd = dir("fwd", &mut store);
            let bwd = dir("bwd", &mut store);
            encoder.push([fwd, bwd]);
        }
        let mut head = |name: &str, vocab: usize, store: &mut ParamStore<S>| HeadLayout {
            embedding: store.add_glorot(format!("{name}.embedding"), vocab, ed, &mut rng),
            wx: store.add_glorot(format!("{name}.wx"), ed + 2 * he, 4 * hd, &mut rng),
            wh: store.add_glorot(format!("{name}.wh"), hd, 4 * hd, &mut rng),
            b: add_lstm_bias(store, format!("{name}.b"), hd),
            attention: store.add_glorot(format!("{name}.attention"), hd, 2 * he, &mut rng),
            wc: store.add_glorot(format!("{name}.wc"), hd + 2 * he, hd, &mut rng),
            bc: store.add(format!("{name}.bc"), 1, hd),
            wo: store.add_glorot(format!("{name}.wo"), hd, vocab, &mut rng),
            bo: store.add(format!("{name}.bo"), 1, vocab),
        };
        let phones = config
            .tasks
            .has_phones()
            .then(|| head("phones", config.phone_outputs(), &mut store));
        let features = config
            .tasks
            .has_features()
            .then(|| head("indicators", config.indicator_outputs(), &mut store));
        Ok(Self {
            config,
            params: store,
            layout: Layout {
                encoder,
                phones,
                features,
            },
        })
    }

    fn head_layout(&self, head: Head) -> Result<&HeadLayout> {
        let l = match head {
            Head::Phones => self.layout.phones.as_ref(),
            Head::Features => self.layout.features.as_ref(),
        };
        l.ok_or_else(|| Error::shape(format!("model has no {head:?} head")))
    }

    pub fn has_head(&self, head: Head) -> bool {
        self.head_layout(head).is_ok()
    }

    pub fn reduction_factor(&self) -> usize {
        self.config.reduction_factor()
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub(crate) fn check_input(&self, features: &Mat<S>) -> Result<()> {
        if features.cols != self.config.input_dims {
            return Err(Error::shape(format!(
                "features have {} dims, model expects {}",
                features.cols, self.config.input_dims
            )));
        }
        if features.rows == 0 {
            return Err(Error::EmptyInput("no feature frames".into()));
        }
        Ok(())
    }

    pub(crate) fn check_matrix(&self, matrix: &FeatureMatrix) -> Result<()> {
        if !matrix.has_eos()
            || matrix.n_features() != self.config.indicator_outputs()
            || matrix.n_phones() != self.config.phone_count + 1
        {
            return Err(Error::shape(format!(
                "matrix {}x{} (eos: {}) does not fit {} features / {} phones",
                matrix.n_features(),
                matrix.n_phones(),
                matrix.has_eos(),
                self.config.feature_count,
                self.config.phone_count
            )));
        }
        Ok(())
    }

    /// Records the encoder on `tape`; dropout only when `rng` is given.
    fn encode_on(&self, tape: &mut Tape<'_, S>, x: Var, mut rng: Option<&mut ChaCha8Rng>) -> Var {
        let mut h = x;
        for (l, dirs) in self.layout.encoder.iter().enumerate() {
            if l > 0 {
                h = tape.pyramid(h);
            }
            let mut outs = [h; 2];
            for (d, dir) in dirs.iter().enumerate() {
                let wx = tape.param(dir.wx);
                let wh = tape.param(dir.wh);
                let b = tape.param(dir.b);
                let proj = tape.matmul(h, wx);
                let proj = tape.add_row(proj, b);
                outs[d] = tape.lstm_seq(proj, wh, d == 1);
            }
            h = tape.concat_cols(&outs);
            h = dropout(tape, h, self.config.dropout_prob, rng.as_deref_mut());
        }
        h
    }

    /// Inference-mode encoder.
    pub fn encode(&self, features: &Mat<S>) -> Result<EncoderOutput<S>> {
        self.check_input(features)?;
        let mut tape = Tape::new(self.params.tensors());
        let x = tape.constant(features.clone());
        let h = self.encode_on(&mut tape, x, None);
        let states = tape.value(h).clone();
        if !states.all_finite() {
            return Err(Error::Numeric("encoder produced non-finite activations".into()));
        }
        let r = self.reduction_factor();
        Ok(EncoderOutput {
            states,
            reduction_factor: r,
            frame_span_ms: 10.0 * r as f64,
        })
    }

    fn initial_state(&self, tape: &mut Tape<'_, S>) -> HeadState {
        let ctx = tape.constant(Mat::zeros(1, 2 * self.config.encoder_units));
        HeadState {
            h: None,
            c: None,
            context: ctx,
        }
    }

    /// One decoder step: embed input, LSTM with input feeding, attend,
    /// combine, project. Returns logits, attention row and the new state.
    #[allow(clippy::too_many_arguments)]
    fn step_on(
        &self,
        tape: &mut Tape<'_, S>,
        head: Head,
        keys: Var,
        projected_keys: Var,
        state: &HeadState,
        input: &StepInput<S>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var, HeadState)> {
        let hl = self.head_layout(head)?;
        let hd = self.config.decoder_units;
        let table = tape.param(hl.embedding);
        let emb = match (head, input) {
            (Head::Phones, StepInput::Symbol(s)) if *s < self.config.phone_outputs() => tape.row(table, *s),
            (Head::Features, StepInput::Vector(v)) if v.len() == self.config.indicator_outputs() => {
                let v = tape.constant(Mat::row_vector(v.clone()));
                tape.matmul(v, table)
            }
            _ => return Err(Error::shape(format!("invalid decoder input for the {head:?} head"))),
        };
        let inp = tape.concat_cols(&[emb, state.context]);
        let wx = tape.param(hl.wx);
        let mut gates = tape.matmul(inp, wx);
        if let Some(h) = state.h {
            let wh = tape.param(hl.wh);
            let rec = tape.matmul(h, wh);
            gates = tape.add(gates, rec);
        }
        let b = tape.param(hl.b);
        let gates = tape.add_row(gates, b);
        let cell = tape.lstm_cell(gates, state.c);
        let h = tape.cols(cell, 0, hd);
        let c = tape.cols(cell, hd, hd);
        let scores = tape.matmul_bt(h, projected_keys);
        let attention = tape.softmax(scores);
        let context = tape.matmul(attention, keys);
        let hc = tape.concat_cols(&[h, context]);
        let wc = tape.param(hl.wc);
        let bc = tape.param(hl.bc);
        let comb = tape.matmul(hc, wc);
        let comb = tape.add_row(comb, bc);
        let comb = tape.tanh(comb);
        let comb = dropout(tape, comb, self.config.dropout_prob, rng);
        let wo = tape.param(hl.wo);
        let bo = tape.param(hl.bo);
        let logits = tape.matmul(comb, wo);
        let logits = tape.add_row(logits, bo);
        Ok((
            logits,
            attention,
            HeadState {
                h: Some(h),
                c: Some(c),
                context,
            },
        ))
    }

    fn project_keys(&self, tape: &mut Tape<'_, S>, head: Head, keys: Var) -> Result<Var> {
        let w = tape.param(self.head_layout(head)?.attention);
        Ok(tape.matmul_bt(keys, w))
    }

    /// Teacher-forced multitask loss of one utterance, recorded on `tape`.
    /// With `rng` the pass is in training mode (dropout, scheduled sampling).
    pub(crate) fn loss_on(
        &self,
        tape: &mut Tape<'_, S>,
        features: &Mat<S>,
        targets: &[usize],
        matrix: &FeatureMatrix,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, ForwardOutput<S>)> {
        self.check_input(features)?;
        let cfg = &self.config;
        if let Some(&bad) = targets.iter().find(|&&p| p >= cfg.phone_count) {
            return Err(Error::shape(format!("target phone {bad} outside {} phones", cfg.phone_count)));
        }
        let x = tape.constant(features.clone());
        let keys = self.encode_on(tape, x, rng.as_deref_mut());
        let steps = targets.len() + 1;
        let inv_steps = S::of(1.0 / steps as f64);
        let ss = cfg.scheduled_sampling_prob;
        let mut terms = Vec::with_capacity(2);
        let mut out = ForwardOutput {
            loss: S::zero(),
            phone_loss: S::zero(),
            indicator_loss: S::zero(),
            steps,
        };

        if self.has_head(Head::Phones) {
            let pk = self.project_keys(tape, Head::Phones, keys)?;
            let mut state = self.initial_state(tape);
            let mut input = cfg.phone_count; // sos
            let mut losses = Vec::with_capacity(steps);
            for t in 0..steps {
                let (logits, _, next) = self.step_on(
                    tape,
                    Head::Phones,
                    keys,
                    pk,
                    &state,
                    &StepInput::Symbol(input),
                    rng.as_deref_mut(),
                )?;
                state = next;
                let target = targets.get(t).copied().unwrap_or(cfg.phone_count + 1);
                losses.push(tape.cross_entropy(logits, target));
                let own = rng.as_deref_mut().is_some_and(|r| r.gen::<f64>() < ss);
                input = if own {
                    argmax(&tape.value(logits).data).unwrap_or(target)
                } else {
                    target
                };
            }
            let total = tape.sum(&losses);
            let mean = tape.scale(total, inv_steps);
            out.phone_loss = tape.scalar(mean);
            terms.push(mean);
        }

        if self.has_head(Head::Features) {
            self.check_matrix(matrix)?;
            let eos = matrix.eos_phone().expect("checked above");
            let pk = self.project_keys(tape, Head::Features, keys)?;
            let mut state = self.initial_state(tape);
            let mut input = vec![S::zero(); cfg.indicator_outputs()];
            let mut losses = Vec::with_capacity(steps);
            for t in 0..steps {
                let (logits, _, next) = self.step_on(
                    tape,
                    Head::Features,
                    keys,
                    pk,
                    &state,
                    &StepInput::Vector(std::mem::take(&mut input)),
                    rng.as_deref_mut(),
                )?;
                state = next;
                let target = matrix.column_as::<S>(targets.get(t).copied().unwrap_or(eos));
                losses.push(tape.sigmoid_bce(logits, target.clone()));
                let own = rng.as_deref_mut().is_some_and(|r| r.gen::<f64>() < ss);
                input = if own {
                    let probs: Vec<S> = tape.value(logits).data.iter().map(|&z| sigmoid(z)).collect();
                    match cfg.feedback {
                        Feedback::Mapped => bits_to_vec(&nearest_phone_features(&probs, matrix)?.1),
                        Feedback::Sampled => {
                            let r = rng.as_deref_mut().expect("own output implies training");
                            probs
                                .iter()
                                .map(|&p| if r.gen::<f64>() < p.as_f64() { S::one() } else { S::zero() })
                                .collect()
                        }
                    }
                } else {
                    target
                };
            }
            let total = tape.sum(&losses);
            let mean = tape.scale(total, inv_steps);
            out.indicator_loss = tape.scalar(mean);
            terms.push(mean);
        }

        let loss = tape.sum(&terms);
        out.loss = tape.scalar(loss);
        if !out.loss.is_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        Ok((loss, out))
    }

    /// Loss of one utterance without gradients.
    pub fn forward(
        &self,
        features: &Mat<S>,
        targets: &[usize],
        matrix: &FeatureMatrix,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput<S>> {
        let mut tape = Tape::new(self.params.tensors());
        Ok(self.loss_on(&mut tape, features, targets, matrix, rng)?.1)
    }

    /// Loss and full parameter gradient of one utterance. Unused parameters
    /// get zero gradients.
    pub fn loss_and_grads(
        &self,
        features: &Mat<S>,
        targets: &[usize],
        matrix: &FeatureMatrix,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(ForwardOutput<S>, Vec<Mat<S>>)> {
        let mut tape = Tape::new(self.params.tensors());
        let (loss, out) = self.loss_on(&mut tape, features, targets, matrix, rng)?;
        let grads = tape
            .backward(loss)
            .into_iter()
            .zip(self.params.tensors())
            .map(|(g, p)| g.unwrap_or_else(|| Mat::zeros(p.rows, p.cols)))
            .collect();
        Ok((out, grads))
    }

    /// Starts step-wise inference over one utterance.
    pub fn session(&self, features: &Mat<S>) -> Result<DecodeSession<'_, S>> {
        self.check_input(features)?;
        let mut tape = Tape::new(self.params.tensors());
        let x = tape.constant(features.clone());
        let keys = self.encode_on(&mut tape, x, None);
        if !tape.value(keys).all_finite() {
            return Err(Error::Numeric("encoder produced non-finite activations".into()));
        }
        Ok(DecodeSession {
            model: self,
            tape,
            keys,
            projected: [None, None],
        })
    }

    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let (manifest, blob) = params::encode_checkpoint(&self.params, &self.config, seed);
        std::fs::write(params::manifest_path(dir), serde_json::to_string_pretty(&manifest)?)?;
        std::fs::write(params::blob_path(dir), blob)?;
        Ok(())
    }

    /// Loads a checkpoint directory; returns the model and its seed.
    pub fn load(dir: &Path) -> Result<(Self, u64)> {
        let manifest: params::CheckpointManifest =
            serde_json::from_str(&std::fs::read_to_string(params::manifest_path(dir))?)?;
        let blob = std::fs::read(params::blob_path(dir))?;
        let mut model = Self::new(manifest.config.clone(), manifest.seed)?;
        params::decode_checkpoint(&manifest, &blob, &mut model.params)?;
        Ok((model, manifest.seed))
    }
}

pub(crate) fn bits_to_vec<S: Scalar>(bits: &[bool]) -> Vec<S> {
    bits.iter().map(|&b| if b { S::one() } else { S::zero() }).collect()
}

/// Step-wise inference over a fixed encoding.
pub struct DecodeSession<'m, S: Scalar> {
    model: &'m Model<S>,
    tape: Tape<'m, S>,
    keys: Var,
    projected: [Option<Var>; 2],
}

impl<'m, S: Scalar> DecodeSession<'m, S> {
    pub fn encoder_length(&self) -> usize {
        self.tape.value(self.keys).rows
    }

    pub fn encoder_states(&self) -> &Mat<S> {
        self.tape.value(self.keys)
    }

    pub fn model(&self) -> &'m Model<S> {
        self.model
    }

    pub fn initial_state(&mut self) -> HeadState {
        self.model.initial_state(&mut self.tape)
    }

    pub fn step(&mut self, head: Head, state: &HeadState, input: &StepInput<S>) -> Result<(StepOutput<S>, HeadState)> {
        let slot = match head {
            Head::Phones => 0,
            Head::Features => 1,
        };
        let pk = match self.projected[slot] {
            Some(v) => v,
            None => {
                let v = self.model.project_keys(&mut self.tape, head, self.keys)?;
                self.projected[slot] = Some(v);
                v
            }
        };
        let (logits, attention, next) = self
            .model
            .step_on(&mut self.tape, head, self.keys, pk, state, input, None)?;
        let logits = self.tape.value(logits).data.clone();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("decoder produced non-finite logits".into()));
        }
        let attention = self.tape.value(attention).data.clone();
        Ok((StepOutput { logits, attention }, next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artic::standard_matrix;
    use crate::phoneset::PhoneInventory;

    fn tiny(tasks: super::super::Tasks) -> ModelConfig {
        ModelConfig {
            encoder_layers: 2,
            encoder_units: 3,
            decoder_units: 4,
            embedding_dims: 2,
            input_dims: 5,
            phone_count: 39,
            feature_count: 28,
            tasks,
            ..Default::default()
        }
    }

    fn input(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn encoder_lengths() {
        assert_eq!(encoder_length(100, 3), 25);
        assert_eq!(encoder_length(5, 2), 3);
        assert_eq!(encoder_length(5, 1), 5);
        let m = Model::<f64>::new(tiny(Default::default()), 1).unwrap();
        for t in [1, 2, 5, 8, 9] {
            let out = m.encode(&input(t, 5, t as u64)).unwrap();
            assert_eq!(out.states.rows, t.div_ceil(2));
            assert_eq!(out.states.cols, 6);
            assert_eq!(out.frame_span_ms, 20.0);
        }
    }

    #[test]
    fn encoder_is_deterministic_and_checks_shape() {
        let m = Model::<f64>::new(tiny(Default::default()), 1).unwrap();
        let x = input(7, 5, 3);
        assert_eq!(m.encode(&x).unwrap(), m.encode(&x).unwrap());
        assert!(matches!(m.encode(&input(7, 4, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn attention_edge_cases() {
        let w = input(2, 3, 1);
        let one_key = input(1, 3, 2);
        let (ctx, row) = attend(&[0.3, -0.2], &w, &one_key).unwrap();
        assert_eq!(row, vec![1.0]);
        assert_eq!(ctx, one_key.data);
        let (_, row) = attend(&[0.0, 0.0], &w, &input(4, 3, 5)).unwrap();
        assert!(row.iter().all(|&a| (a - 0.25).abs() < 1e-15));
        assert!(attend(&[0.0; 3], &w, &one_key).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_outputs() {
        let mut m = Model::<f64>::new(tiny(Default::default()), 1).unwrap();
        for t in m.params.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut s = m.session(&input(6, 5, 2)).unwrap();
        let st = s.initial_state();
        let (out, _) = s.step(Head::Phones, &st, &StepInput::Symbol(39)).unwrap();
        assert_eq!(out.logits.len(), 41);
        assert!(out.logits.iter().all(|&v| v == 0.0));
        let (out, _) = s.step(Head::Features, &st, &StepInput::Vector(vec![0.0; 29])).unwrap();
        assert_eq!(out.logits.len(), 29);
        assert!(out.logits.iter().all(|&v| sigmoid(v) == 0.5));
    }

    #[test]
    fn session_matches_attend_oracle() {
        let m = Model::<f64>::new(tiny(Default::default()), 4).unwrap();
        let x = input(6, 5, 9);
        let mut s = m.session(&x).unwrap();
        let st = s.initial_state();
        let (_, next) = s.step(Head::Phones, &st, &StepInput::Symbol(39)).unwrap();
        // second step: query is the first step's hidden state
        let (out, after) = s.step(Head::Phones, &next, &StepInput::Symbol(3)).unwrap();
        let query = s.tape.value(after.h.unwrap()).data.clone();
        let w = m.params.get(m.params.index_of("phones.attention").unwrap());
        let (_, oracle) = attend(&query, w, s.encoder_states()).unwrap();
        for (a, b) in out.attention.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        let sum: f64 = out.attention.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::<f32>::new(tiny(Default::default()), 11).unwrap();
        m.save(dir.path(), 11).unwrap();
        let (back, seed) = Model::<f32>::load(dir.path()).unwrap();
        assert_eq!(seed, 11);
        assert_eq!(back, m);
        let mut blob = std::fs::read(dir.path().join("model.bin")).unwrap();
        blob.truncate(blob.len() - 4);
        std::fs::write(dir.path().join("model.bin"), blob).unwrap();
        assert!(Model::<f32>::load(dir.path()).is_err());
    }

    #[test]
    fn loss_is_finite_and_heads_follow_tasks() {
        let inv = PhoneInventory::timit39();
        let matrix = standard_matrix(&inv).unwrap().with_eos();
        let x = input(9, 5, 2);
        for tasks in [super::super::Tasks::Phones, super::super::Tasks::Features, super::super::Tasks::Joint] {
            let m = Model::<f64>::new(tiny(tasks), 3).unwrap();
            let out = m.forward(&x, &[1, 5, 7], &matrix, None).unwrap();
            assert!(out.loss.is_finite() && out.loss > 0.0);
            assert_eq!(out.steps, 4);
            assert_eq!(out.phone_loss > 0.0, tasks.has_phones());
            assert_eq!(out.indicator_loss > 0.0, tasks.has_features());
        }
        let m = Model::<f64>::new(tiny(Default::default()), 3).unwrap();
        assert!(m.forward(&x, &[40], &matrix, None).is_err());
        assert!(m.forward(&x, &[1], &standard_matrix(&inv).unwrap(), None).is_err());
    }
}
