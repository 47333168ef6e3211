//! Inference: greedy phone decoding and indicator decoding with sampled or
//! mapped feedback.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artic::{argmax, is_eos_row, nearest_phone_features, phone_log_posteriors, FeatureMatrix};
use crate::binio::F32Matrix;
use crate::nnet::model::bits_to_vec;
use crate::nnet::tape::sigmoid;
use crate::nnet::{AttentionMatrix, Feedback, Head, Mat, Model, StepInput};
use crate::phoneset::PhoneSequence;
use crate::{Error, Result, Scalar};

/// Default decode length bound per encoder frame.
pub const MAX_LEN_PER_FRAME: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DecodeMode {
    Phones,
    IndSampled,
    IndMapped,
    Mtl,
}

/// Indicator posteriors, one row per emitted step (eos step included).
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorPosteriorgram<S> {
    pub utterance_id: String,
    pub rows: Vec<Vec<S>>,
}

impl<S: Scalar> IndicatorPosteriorgram<S> {
    pub fn new(utterance_id: impl Into<String>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_f32(&self) -> Result<F32Matrix> {
        let cols = self.rows.first().map_or(0, Vec::len);
        let rows: Vec<Vec<f64>> = self.rows.iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
        F32Matrix::from_rows(&rows, cols)
    }

    pub fn from_f32(utterance_id: impl Into<String>, m: &F32Matrix) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            rows: (0..m.rows)
                .map(|r| m.row(r).iter().map(|&v| S::of(v as f64)).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecodeResult<S> {
    /// Indices are matrix columns (indicator modes) or inventory phones.
    pub phones: Option<PhoneSequence>,
    pub posteriorgram: Option<IndicatorPosteriorgram<S>>,
    /// Attention of the head that produced `phones`; one row per step.
    pub attention: AttentionMatrix<S>,
    pub mode: DecodeMode,
    /// No eos within the length bound.
    pub truncated: bool,
}

fn bound(max_len: Option<usize>, encoder_len: usize) -> usize {
    max_len.unwrap_or(MAX_LEN_PER_FRAME * encoder_len).max(1)
}

/// Greedy phone decoding: the argmax symbol (sos excluded) is fed back until
/// eos or `max_len` steps (default three per encoder frame).
pub fn decode_phones_greedy<S: Scalar>(
    model: &Model<S>,
    features: &Mat<S>,
    utterance_id: &str,
    max_len: Option<usize>,
) -> Result<DecodeResult<S>> {
    if !model.has_head(Head::Phones) {
        return Err(Error::shape("model has no phone head"));
    }
    let cfg = &model.config;
    let (sos, eos) = (cfg.phone_count, cfg.phone_count + 1);
    let mut session = model.session(features)?;
    let limit = bound(max_len, session.encoder_length());
    let mut state = session.initial_state();
    let mut input = sos;
    let mut phones = Vec::new();
    let mut attention = Vec::new();
    let mut truncated = true;
    for _ in 0..limit {
        let (mut out, next) = session.step(Head::Phones, &state, &StepInput::Symbol(input))?;
        state = next;
        attention.push(out.attention);
        out.logits[sos] = S::neg_infinity();
        let sym = argmax(&out.logits).expect("non-empty logits");
        if sym == eos {
            truncated = false;
            break;
        }
        phones.push(sym);
        input = sym;
    }
    let frames = session.encoder_length();
    Ok(DecodeResult {
        phones: Some(PhoneSequence::new(utterance_id, phones)),
        posteriorgram: None,
        attention: AttentionMatrix::from_rows(&attention, frames)?,
        mode: DecodeMode::Phones,
        truncated,
    })
}

/// Indicator decoding. Each step emits sigmoid posteriors; the next input is
/// the nearest matrix column (`Mapped`) or, for `Sampled`, the 0.5-threshold
/// vector (or a Bernoulli draw when `seed` is given). Stops at an eos row.
pub fn decode_indicators<S: Scalar>(
    model: &Model<S>,
    features: &Mat<S>,
    utterance_id: &str,
    matrix: &FeatureMatrix,
    mode: Feedback,
    seed: Option<u64>,
    max_len: Option<usize>,
) -> Result<DecodeResult<S>> {
    if !model.has_head(Head::Features) {
        return Err(Error::shape("model has no indicator head"));
    }
    let matrix = matrix.with_eos();
    let dims = model.config.indicator_outputs();
    if matrix.n_features() != dims {
        return Err(Error::shape(format!(
            "matrix has {} indicators, model emits {dims}",
            matrix.n_features()
        )));
    }
    let eos_col = matrix.eos_phone().expect("with_eos");
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let mut session = model.session(features)?;
    let limit = bound(max_len, session.encoder_length());
    let mut state = session.initial_state();
    let mut input = vec![S::zero(); dims];
    let mut pg = IndicatorPosteriorgram::new(utterance_id);
    let mut phones = Vec::new();
    let mut attention = Vec::new();
    let mut truncated = true;
    let half = S::of(0.5);
    for _ in 0..limit {
        let (out, next) = session.step(Head::Features, &state, &StepInput::Vector(input))?;
        state = next;
        attention.push(out.attention);
        let probs: Vec<S> = out.logits.iter().map(|&z| sigmoid(z)).collect();
        let ended = is_eos_row(&probs, &matrix)?;
        let (j, column) = nearest_phone_features(&probs, &matrix)?;
        input = match mode {
            Feedback::Mapped => bits_to_vec(&column),
            Feedback::Sampled => match rng.as_mut() {
                Some(r) => probs
                    .iter()
                    .map(|&p| if r.gen::<f64>() < p.as_f64() { S::one() } else { S::zero() })
                    .collect(),
                None => probs.iter().map(|&p| if p > half { S::one() } else { S::zero() }).collect(),
            },
        };
        pg.rows.push(probs);
        if ended {
            truncated = false;
            break;
        }
        debug_assert_ne!(j, eos_col);
        phones.push(j);
    }
    let frames = session.encoder_length();
    Ok(DecodeResult {
        phones: Some(PhoneSequence::new(utterance_id, phones)),
        posteriorgram: Some(pg),
        attention: AttentionMatrix::from_rows(&attention, frames)?,
        mode: match mode {
            Feedback::Mapped => DecodeMode::IndMapped,
            Feedback::Sampled => DecodeMode::IndSampled,
        },
        truncated,
    })
}

/// Both heads: phones from the phone head, posteriorgram from the indicator
/// head. Attention comes from the phone head.
pub fn decode_joint<S: Scalar>(
    model: &Model<S>,
    features: &Mat<S>,
    utterance_id: &str,
    matrix: &FeatureMatrix,
    mode: Feedback,
    max_len: Option<usize>,
) -> Result<DecodeResult<S>> {
    let phones = decode_phones_greedy(model, features, utterance_id, max_len)?;
    let ind = decode_indicators(model, features, utterance_id, matrix, mode, None, max_len)?;
    Ok(DecodeResult {
        phones: phones.phones,
        posteriorgram: ind.posteriorgram,
        attention: phones.attention,
        mode: DecodeMode::Mtl,
        truncated: phones.truncated || ind.truncated,
    })
}

/// Per-row argmax of the phone log-posteriors; eos rows are dropped. Rows
/// may carry the eos bit (matrix gains its eos row and column as needed).
pub fn posteriorgram_to_phones<S: Scalar>(pg: &IndicatorPosteriorgram<S>, m: &FeatureMatrix) -> Result<PhoneSequence> {
    let with_eos;
    let m = match pg.rows.first() {
        Some(r) if !m.has_eos() && r.len() == m.n_features() + 1 => {
            with_eos = m.with_eos();
            &with_eos
        }
        _ => m,
    };
    let mut phones = Vec::with_capacity(pg.rows.len());
    for row in &pg.rows {
        if is_eos_row(row, m)? {
            continue;
        }
        let scores = phone_log_posteriors(row, m)?;
        phones.push(argmax(&scores).expect("matrix has columns"));
    }
    Ok(PhoneSequence::new(pg.utterance_id.clone(), phones))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artic::{standard_matrix, FeatureMatrix};
    use crate::nnet::{ModelConfig, Tasks};
    use crate::phoneset::PhoneInventory;
    use proptest::prelude::*;

    fn model(tasks: Tasks) -> Model<f64> {
        Model::new(
            ModelConfig {
                encoder_layers: 2,
                encoder_units: 4,
                decoder_units: 5,
                embedding_dims: 3,
                input_dims: 3,
                tasks,
                ..Default::default()
            },
            2,
        )
        .unwrap()
    }

    fn feats(t: usize) -> Mat<f64> {
        Mat::from_vec(t, 3, (0..t * 3).map(|i| ((i * 7 % 11) as f64 / 5.0) - 1.0).collect())
    }

    #[test]
    fn greedy_is_deterministic_and_bounded() {
        let m = model(Tasks::Joint);
        let x = feats(10);
        let a = decode_phones_greedy(&m, &x, "u", None).unwrap();
        let b = decode_phones_greedy(&m, &x, "u", None).unwrap();
        assert_eq!(a.phones, b.phones);
        assert_eq!(a.attention, b.attention);
        let emitted = a.phones.as_ref().unwrap().phones.len();
        assert_eq!(a.attention.steps(), emitted + usize::from(!a.truncated));
        assert!(a.attention.steps() <= 15);
        let short = decode_phones_greedy(&m, &x, "u", Some(2)).unwrap();
        assert!(short.attention.steps() <= 2);
    }

    #[test]
    fn single_phone_model_emits_phone_then_eos() {
        // bias the output layer: phone 0 first, then eos
        let mut m = Model::<f64>::new(
            ModelConfig {
                encoder_layers: 1,
                encoder_units: 2,
                decoder_units: 2,
                embedding_dims: 2,
                input_dims: 3,
                phone_count: 1,
                feature_count: 2,
                tasks: Tasks::Phones,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        for t in m.params.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        // hand-wired: sos lights hidden unit 1 -> phone 0; phone 0 lights unit 0 -> eos
        let emb = m.params.index_of("phones.embedding").unwrap();
        let wx = m.params.index_of("phones.wx").unwrap();
        let wc = m.params.index_of("phones.wc").unwrap();
        let wo = m.params.index_of("phones.wo").unwrap();
        // embedding rows: phone0 = (1, 0), sos = (0, 1)
        m.params.get_mut(emb).data = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        // cell gate (cols 4..6 of 8) copies embedding to cell, input/output gates open
        let w = m.params.get_mut(wx);
        for r in 0..2 {
            w.set(r, 4 + r, 5.0);
            w.set(r, r, 10.0);
            w.set(r, 6 + r, 10.0);
        }
        let c = m.params.get_mut(wc);
        c.set(0, 0, 3.0);
        c.set(1, 1, 3.0);
        // hidden 0 (after phone0 input) -> eos (col 2); hidden 1 (after sos) -> phone 0
        let o = m.params.get_mut(wo);
        o.set(0, 2, 10.0);
        o.set(1, 0, 10.0);
        let r = decode_phones_greedy(&m, &feats(4), "u", None).unwrap();
        assert_eq!(r.phones.unwrap().phones, vec![0]);
        assert!(!r.truncated);
        assert_eq!(r.attention.steps(), 2);
    }

    #[test]
    fn indicator_modes() {
        let m = model(Tasks::Joint);
        let matrix = standard_matrix(&PhoneInventory::timit39()).unwrap();
        let x = feats(12);
        for mode in [Feedback::Mapped, Feedback::Sampled] {
            let r = decode_indicators(&m, &x, "u", &matrix, mode, None, None).unwrap();
            let pg = r.posteriorgram.as_ref().unwrap();
            assert_eq!(pg.len(), r.attention.steps());
            assert!(pg.rows.iter().flatten().all(|&p| (0.0..=1.0).contains(&p)));
            assert!(pg.rows.iter().all(|row| row.len() == 29));
            let again = decode_indicators(&m, &x, "u", &matrix, mode, None, None).unwrap();
            assert_eq!(again.posteriorgram, r.posteriorgram);
            if mode == Feedback::Mapped {
                let via = posteriorgram_to_phones(pg, &matrix).unwrap();
                assert_eq!(Some(via), r.phones);
            }
        }
        let bad = FeatureMatrix::from_columns(&["a"], &["x", "y"], vec![vec![true], vec![false]]).unwrap();
        assert!(decode_indicators(&m, &x, "u", &bad, Feedback::Mapped, None, None).is_err());
        assert!(decode_phones_greedy(&model(Tasks::Features), &x, "u", None).is_err());
    }

    #[test]
    fn posteriorgram_rows_equal_to_columns_give_their_phones() {
        let inv = PhoneInventory::timit39();
        let matrix = standard_matrix(&inv).unwrap();
        let mut pg = IndicatorPosteriorgram::new("u");
        for j in [3usize, 0, 38, 12] {
            pg.rows.push(matrix.column_as::<f64>(j));
        }
        assert_eq!(posteriorgram_to_phones(&pg, &matrix).unwrap().phones, vec![3, 0, 38, 12]);
        // the same rows with an eos bit, plus a trailing eos row
        let with = matrix.with_eos();
        let mut pg2 = IndicatorPosteriorgram::new("u");
        for j in [3usize, 0, 38, 12, 39] {
            pg2.rows.push(with.column_as::<f64>(j));
        }
        assert_eq!(posteriorgram_to_phones(&pg2, &matrix).unwrap().phones, vec![3, 0, 38, 12]);
        let empty = IndicatorPosteriorgram::<f64>::new("u");
        assert!(posteriorgram_to_phones(&empty, &matrix).unwrap().phones.is_empty());
        let mut wrong = IndicatorPosteriorgram::new("u");
        wrong.rows.push(vec![0.5f64; 3]);
        assert!(matches!(posteriorgram_to_phones(&wrong, &matrix), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn posteriorgram_matches_bernoulli_oracle(rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 28), 0..6)) {
            let matrix = standard_matrix(&PhoneInventory::timit39()).unwrap();
            let pg = IndicatorPosteriorgram { utterance_id: "u".into(), rows: rows.clone() };
            let got = posteriorgram_to_phones(&pg, &matrix).unwrap().phones;
            let eps = crate::artic::POSTERIOR_EPSILON;
            let expect: Vec<usize> = rows.iter().map(|phi| {
                let mut best = (0, f64::NEG_INFINITY);
                for j in 0..matrix.n_phones() {
                    let p: f64 = phi.iter().enumerate().map(|(i, &v)| {
                        let v = v.clamp(eps, 1.0 - eps);
                        if matrix.bit(i, j) { v } else { 1.0 - v }
                    }).product();
                    if p.ln() > best.1 { best = (j, p.ln()); }
                }
                best.0
            }).collect();
            prop_assert_eq!(got, expect);
        }
    }
}
