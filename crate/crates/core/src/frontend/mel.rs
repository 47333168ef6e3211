/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale, evaluated at the
/// exact FFT bin frequencies.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Vec<Vec<f64>>,
    centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(num_filters: usize, fft_size: usize, sample_rate: f64, low_hz: f64, high_hz: f64) -> Self {
        let (lo, hi) = (hz_to_mel(low_hz), hz_to_mel(high_hz));
        let edges: Vec<f64> = (0..num_filters + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (num_filters + 1) as f64))
            .collect();
        let bins = fft_size / 2 + 1;
        let bin_hz = sample_rate / fft_size as f64;
        let weights = (0..num_filters)
            .map(|m| {
                let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= left || f >= right {
                            0.0
                        } else if f <= center {
                            (f - left) / (center - left)
                        } else {
                            (right - f) / (right - center)
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            weights,
            centers: edges[1..=num_filters].to_vec(),
        }
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Orthonormal DCT-II, first `num_coeffs` coefficients.
pub fn dct2_ortho(x: &[f64], num_coeffs: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..num_coeffs)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| v * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                .sum();
            scale * s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_round_trip() {
        for hz in [0.0, 100.0, 1000.0, 4000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn triangles_nonnegative_and_peak_at_center_bin() {
        let fb = MelFilterbank::new(40, 512, 16_000.0, 0.0, 8000.0);
        for (w, &c) in fb.weights().iter().zip(fb.centers_hz()) {
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!(w.iter().any(|&v| v > 0.0));
            let peak = w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            // the center falls between two bins; the peak is one of them
            let pos = c / 31.25;
            assert!(peak == pos.floor() as usize || peak == pos.ceil() as usize, "center {c} Hz, peak {peak}");
            assert!(w[..=peak].windows(2).all(|p| p[0] <= p[1]));
            assert!(w[peak..].windows(2).all(|p| p[0] >= p[1]));
        }
    }

    #[test]
    fn dct_of_constant_has_only_c0() {
        let c = dct2_ortho(&[3.5; 40], 13);
        assert!((c[0] - 3.5 * 40f64.sqrt()).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }
}
