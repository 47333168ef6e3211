//! Central finite-difference verification of analytic gradients (f64).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::Model;
use super::{Feedback, ModelConfig, Tasks};
use super::optim::TrainExample;
use super::tape::{Tape, Var};
use super::tensor::Mat;
use crate::artic::{standard_matrix, FeatureMatrix};
use crate::phoneset::PhoneInventory;
use crate::Result;

/// Below this magnitude (for both gradients) the absolute error is used.
/// Central differences at eps = 1e-5 on an O(10) loss carry roughly 1e-10
/// of roundoff, so smaller gradients cannot be resolved to 1e-4 relative.
pub const SMALL_GRADIENT: f64 = 1e-5;
/// Bound on the absolute error at near-zero coordinates.
pub const ABSOLUTE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(|a|, |n|)` over coordinates above the floor.
    pub max_rel_error: f64,
    /// Largest `|a - n|` over coordinates below the floor.
    pub max_abs_error: f64,
    pub coordinates: usize,
    /// `(tensor, offset)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, rel_tol: f64) -> bool {
        self.max_rel_error < rel_tol && self.max_abs_error < ABSOLUTE_TOLERANCE
    }

    fn record(&mut self, tensor: usize, offset: usize, analytic: f64, numeric: f64) {
        self.coordinates += 1;
        let scale = analytic.abs().max(numeric.abs());
        let diff = (analytic - numeric).abs();
        if scale < SMALL_GRADIENT {
            self.max_abs_error = self.max_abs_error.max(diff);
        } else if diff / scale > self.max_rel_error || diff.is_nan() {
            self.max_rel_error = if diff.is_nan() { f64::INFINITY } else { diff / scale };
            self.worst = Some((tensor, offset));
        }
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.coordinates += other.coordinates;
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// Compares the analytic gradient returned by `f` with central differences
/// `(f(x + eps) - f(x - eps)) / 2 eps`. At most `max_coords` coordinates per
/// tensor are probed (chosen with `seed`); smaller tensors are checked fully.
pub fn check_gradients<F>(
    params: &[Mat<f64>],
    f: F,
    epsilon: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Mat<f64>]) -> Result<(f64, Vec<Mat<f64>>)>,
{
    let (_, analytic) = f(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.to_vec();
    let mut report = GradCheckReport::default();
    for (ti, t) in params.iter().enumerate() {
        let coords: Vec<usize> = if t.len() <= max_coords {
            (0..t.len()).collect()
        } else {
            let mut c = sample(&mut rng, t.len(), max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for k in coords {
            let orig = t.data[k];
            work[ti].data[k] = orig + epsilon;
            let (plus, _) = f(&work)?;
            work[ti].data[k] = orig - epsilon;
            let (minus, _) = f(&work)?;
            work[ti].data[k] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            report.record(ti, k, analytic[ti].data[k], numeric);
        }
    }
    Ok(report)
}

/// Checks a loss recorded on a tape by `build` (which must return a `1 x 1`
/// node) against finite differences over all `params`.
pub fn check_tape<F>(params: &[Mat<f64>], epsilon: f64, max_coords: usize, seed: u64, build: F) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Tape<'a, f64>) -> Var,
{
    let eval = |p: &[Mat<f64>]| {
        let mut tape = Tape::new(p);
        let loss = build(&mut tape);
        let value = tape.scalar(loss);
        let grads = tape
            .backward(loss)
            .into_iter()
            .zip(p)
            .map(|(g, t)| g.unwrap_or_else(|| Mat::zeros(t.rows, t.cols)))
            .collect();
        Ok((value, grads))
    };
    check_gradients(params, eval, epsilon, max_coords, seed)
}

/// Reduces a node to a scalar through fixed random weights, so every output
/// entry gets a distinct upstream gradient.
pub fn weighted_sum(tape: &mut Tape<'_, f64>, v: Var, seed: u64) -> Var {
    let (rows, cols) = tape.value(v).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let weighted = tape.mask(v, weights);
    let left = tape.constant(Mat::from_vec(1, rows, vec![1.0; rows]));
    let right = tape.constant(Mat::from_vec(cols, 1, vec![1.0; cols]));
    let row = tape.matmul(left, weighted);
    tape.matmul(row, right)
}

/// Full multitask model check on one utterance. Scheduled sampling is
/// switched off (its feedback is not differentiable); dropout, if enabled in
/// the config, uses the same mask for every evaluation via `dropout_seed`.
pub fn check_model_gradients(
    model: &Model<f64>,
    example: &TrainExample<f64>,
    matrix: &FeatureMatrix,
    epsilon: f64,
    max_coords: usize,
    dropout_seed: Option<u64>,
) -> Result<GradCheckReport> {
    let mut model = model.clone();
    model.config.scheduled_sampling_prob = 0.0;
    let matrix = matrix.with_eos();
    let eval = |p: &[Mat<f64>]| {
        let mut m = model.clone();
        m.params.tensors_mut().clone_from_slice(p);
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let (out, grads) = m.loss_and_grads(&example.features, &example.phones, &matrix, rng.as_mut())?;
        Ok((out.loss, grads))
    };
    check_gradients(model.params.tensors(), eval, epsilon, max_coords, 17)
}

/// Outcome of one named check in [`standard_suite`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub tolerance: f64,
    pub passed: bool,
    pub report: GradCheckReport,
}

fn rand_mat(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn tiny_config(tasks: Tasks, feedback: Feedback, dropout: f64) -> ModelConfig {
    ModelConfig {
        encoder_layers: 2,
        encoder_units: 3,
        decoder_units: 4,
        embedding_dims: 2,
        input_dims: 4,
        dropout_prob: dropout,
        tasks,
        feedback,
        ..Default::default()
    }
}

/// Relative tolerance for the linear layer (exact up to roundoff).
pub const LINEAR_TOLERANCE: f64 = 1e-7;
/// Relative tolerance for every other block and the full model.
pub const MODEL_TOLERANCE: f64 = 1e-4;

/// Finite-difference checks of every differentiable block, each decoder
/// head alone and the joint model in both feedback modes, at tiny shapes.
pub fn standard_suite(epsilon: f64, seed: u64) -> Result<Vec<BlockCheck>> {
    let mut out = Vec::new();
    let mut push = |name: &str, tolerance: f64, report: GradCheckReport| {
        out.push(BlockCheck {
            name: name.to_string(),
            tolerance,
            passed: report.passed(tolerance),
            report,
        })
    };
    let s = seed.wrapping_mul(1000);
    let p = vec![rand_mat(4, 3, s + 1), rand_mat(3, 5, s + 2), rand_mat(1, 5, s + 3)];
    push(
        "linear",
        LINEAR_TOLERANCE,
        check_tape(&p, epsilon, 100, seed, |t| {
            let (x, w, b) = (t.param(0), t.param(1), t.param(2));
            let y = t.matmul(x, w);
            let y = t.add_row(y, b);
            weighted_sum(t, y, 9)
        })?,
    );
    let p = vec![rand_mat(5, 3, s + 4), rand_mat(5, 3, s + 5), rand_mat(1, 3, s + 6)];
    push(
        "elementwise and shape ops",
        MODEL_TOLERANCE,
        check_tape(&p, epsilon, 100, seed, |t| {
            let (a, b, c) = (t.param(0), t.param(1), t.param(2));
            let sa = t.sigmoid(a);
            let h = t.tanh(b);
            let m = t.mul(sa, h);
            let m = t.add(m, a);
            let cat = t.concat_cols(&[m, b]);
            let sl = t.cols(cat, 2, 3);
            let r0 = t.row(sl, 4);
            let st = t.stack_rows(&[sl, r0, c]);
            // 7 rows: the pyramid keeps an odd tail
            let py = t.pyramid(st);
            let sm = t.softmax(py);
            let mask = Mat::from_vec(4, 6, (0..24).map(|i| if i % 3 == 0 { 0.0 } else { 1.25 }).collect());
            let dm = t.mask(sm, mask);
            let scaled = t.scale(dm, 0.7);
            let summed = t.sum(&[scaled, sm]);
            weighted_sum(t, summed, 4)
        })?,
    );
    let p = vec![rand_mat(1, 6, s + 7), rand_mat(1, 4, s + 8)];
    push(
        "cross-entropy and sigmoid BCE",
        MODEL_TOLERANCE,
        check_tape(&p, epsilon, 100, seed, |t| {
            let (z, q) = (t.param(0), t.param(1));
            let ce = t.cross_entropy(z, 2);
            let bce = t.sigmoid_bce(q, vec![1.0, 0.0, 0.0, 1.0]);
            t.sum(&[ce, bce])
        })?,
    );
    let p = vec![rand_mat(1, 12, s + 9), rand_mat(1, 3, s + 10)];
    push(
        "lstm cell",
        MODEL_TOLERANCE,
        check_tape(&p, epsilon, 100, seed, |t| {
            let (g, c) = (t.param(0), t.param(1));
            let out = t.lstm_cell(g, Some(c));
            weighted_sum(t, out, 5)
        })?,
    );
    for reverse in [false, true] {
        let p = vec![rand_mat(6, 16, s + 11), rand_mat(4, 16, s + 12)];
        push(
            if reverse { "lstm sequence, backward" } else { "lstm sequence, forward" },
            MODEL_TOLERANCE,
            check_tape(&p, epsilon, 200, seed, |t| {
                let (x, w) = (t.param(0), t.param(1));
                let out = t.lstm_seq(x, w, reverse);
                weighted_sum(t, out, 6)
            })?,
        );
    }
    // query 1x3, weight 3x4, keys 5x4
    let p = vec![rand_mat(1, 3, s + 13), rand_mat(3, 4, s + 14), rand_mat(5, 4, s + 15)];
    push(
        "bilinear attention",
        MODEL_TOLERANCE,
        check_tape(&p, epsilon, 100, seed, |t| {
            let (q, w, k) = (t.param(0), t.param(1), t.param(2));
            let kw = t.matmul_bt(k, w);
            let scores = t.matmul_bt(q, kw);
            let a = t.softmax(scores);
            let ctx = t.matmul(a, k);
            let both = t.concat_cols(&[ctx, a]);
            weighted_sum(t, both, 7)
        })?,
    );
    let matrix = standard_matrix(&PhoneInventory::timit39())?;
    let example = TrainExample {
        id: "spk_utt".into(),
        features: rand_mat(5, 4, s + 16),
        phones: vec![3, 17, 30],
    };
    let runs = [
        ("phone head", Tasks::Phones, Feedback::Mapped, 0.0, None),
        ("indicator head", Tasks::Features, Feedback::Mapped, 0.0, None),
        ("joint model, mapped feedback", Tasks::Joint, Feedback::Mapped, 0.0, None),
        ("joint model, sampled feedback, dropout", Tasks::Joint, Feedback::Sampled, 0.2, Some(seed + 5)),
    ];
    for (name, tasks, feedback, dropout, dropout_seed) in runs {
        let model = Model::<f64>::new(tiny_config(tasks, feedback, dropout), seed + 3)?;
        push(name, MODEL_TOLERANCE, check_model_gradients(&model, &example, &matrix, epsilon, 12, dropout_seed)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_passes_and_wrong_one_fails() {
        let p = vec![Mat::from_vec(1, 3, vec![0.5, -1.0, 2.0])];
        let good = |p: &[Mat<f64>]| {
            let x = &p[0].data;
            let v = x[0] * x[0] + x[1].sin() + x[0] * x[2];
            let g = Mat::from_vec(1, 3, vec![2.0 * x[0] + x[2], x[1].cos(), x[0]]);
            Ok((v, vec![g]))
        };
        let r = check_gradients(&p, good, 1e-5, 10, 0).unwrap();
        assert!(r.passed(1e-7), "{r:?}");
        assert_eq!(r.coordinates, 3);
        let bad = |p: &[Mat<f64>]| {
            let (v, mut g) = good(p)?;
            g[0].data[1] *= 1.01;
            Ok((v, g))
        };
        let r = check_gradients(&p, bad, 1e-5, 10, 0).unwrap();
        assert!(!r.passed(1e-4));
        assert_eq!(r.worst, Some((0, 1)));
    }

    #[test]
    fn zero_gradient_uses_absolute_fallback() {
        let p = vec![Mat::from_vec(1, 2, vec![0.0, 1.0])];
        // d/dx0 of x0^3 at 0 is exactly zero
        let f = |p: &[Mat<f64>]| {
            let x = &p[0].data;
            Ok((x[0].powi(3) + x[1], vec![Mat::from_vec(1, 2, vec![3.0 * x[0] * x[0], 1.0])]))
        };
        let r = check_gradients(&p, f, 1e-5, 10, 0).unwrap();
        assert!(r.max_abs_error < ABSOLUTE_TOLERANCE);
        assert!(r.passed(1e-7));
    }
}
