use super::AcousticFeatures;

/// Half-width of the regression window (5 frames total).
pub const DELTA_WINDOW: usize = 2;

/// Regression deltas over time for a frames x dims sequence, replicating the
/// edge frames.
pub fn delta_regression(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t_max = rows.len() as isize - 1;
    let denom = 2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f64).sum::<f64>();
    let at = |t: isize| &rows[t.clamp(0, t_max) as usize];
    (0..rows.len() as isize)
        .map(|t| {
            let dims = rows[t as usize].len();
            (0..dims)
                .map(|d| {
                    (1..=DELTA_WINDOW as isize)
                        .map(|n| n as f64 * (at(t + n)[d] - at(t - n)[d]))
                        .sum::<f64>()
                        / denom
                })
                .collect()
        })
        .collect()
}

/// Appends deltas and double-deltas: output dims are three times the input.
pub fn add_deltas(features: &AcousticFeatures) -> AcousticFeatures {
    let base: Vec<Vec<f64>> = features
        .rows()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let d1 = delta_regression(&base);
    let d2 = delta_regression(&d1);
    let dims = features.dims * 3;
    let mut data = Vec::with_capacity(features.frames * dims);
    for t in 0..features.frames {
        data.extend(base[t].iter().chain(&d1[t]).chain(&d2[t]).map(|&v| v as f32));
    }
    AcousticFeatures {
        data,
        dims,
        deltas: true,
        ..features.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::FeatureKind;
    use rand::{Rng, SeedableRng};

    fn feats(rows: Vec<Vec<f64>>) -> AcousticFeatures {
        AcousticFeatures::from_rows(&rows, FeatureKind::Mfcc).unwrap()
    }

    /// d_t = sum_n n (c_{t+n} - c_{t-n}) / (2 sum_n n^2), edges clamped.
    fn oracle(x: &[f64]) -> Vec<f64> {
        let last = x.len() as i64 - 1;
        let get = |i: i64| x[i.max(0).min(last) as usize];
        (0..x.len() as i64)
            .map(|t| (1.0 * (get(t + 1) - get(t - 1)) + 2.0 * (get(t + 2) - get(t - 2))) / 10.0)
            .collect()
    }

    #[test]
    fn constant_sequence_has_zero_deltas() {
        let f = add_deltas(&feats(vec![vec![1.5, -2.0]; 7]));
        assert_eq!(f.dims, 6);
        for r in f.rows() {
            assert!(r[2..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn linear_ramp_interior() {
        let f = add_deltas(&feats((0..12).map(|t| vec![0.5 * t as f64]).collect()));
        for t in 4..8 {
            let r = f.row(t);
            assert!((r[1] - 0.5).abs() < 1e-6, "delta at {t} = {}", r[1]);
            assert!(r[2].abs() < 1e-6);
        }
    }

    #[test]
    fn single_frame_yields_zero_deltas() {
        let f = add_deltas(&feats(vec![vec![3.0, 4.0]]));
        assert_eq!(f.row(0), &[3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn matches_regression_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let f = add_deltas(&feats(rows.clone()));
        for d in 0..3 {
            let x: Vec<f64> = rows.iter().map(|r| r[d] as f32 as f64).collect();
            let d1 = oracle(&x);
            let d2 = oracle(&d1);
            for t in 0..10 {
                assert!((f.row(t)[3 + d] as f64 - d1[t]).abs() < 1e-6);
                assert!((f.row(t)[6 + d] as f64 - d2[t]).abs() < 1e-6);
            }
        }
    }
}
