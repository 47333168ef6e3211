//! Acoustic front-end: framing, mel filterbanks, MFCC, deltas and global
//! mean/variance normalization.

mod afp;
mod delta;
mod mel;
mod norm;

pub use afp::{read_afp, write_afp, AFP_MAGIC};
pub use delta::{add_deltas, delta_regression, DELTA_WINDOW};
pub use mel::{dct2_ortho, hz_to_mel, mel_to_hz, MelFilterbank};
pub use norm::{apply_normalization, fit_normalization, NormalizationStats, VARIANCE_EPSILON};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Raw 16-bit PCM audio for one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioBuffer {
    pub samples: Vec<i16>,
    pub sample_rate: u32,
    pub utterance_id: String,
}

impl AudioBuffer {
    pub fn new(samples: Vec<i16>, sample_rate: u32, utterance_id: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate,
            utterance_id: utterance_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// 40 log mel filterbank energies plus log-energy.
    #[serde(rename = "fbank", alias = "fbank_e")]
    FbankE,
    /// 13 cepstral coefficients including c0.
    Mfcc,
}

impl FeatureKind {
    pub fn code(self) -> u16 {
        match self {
            FeatureKind::FbankE => 0,
            FeatureKind::Mfcc => 1,
        }
    }

    pub fn from_code(code: u16) -> Result<Self> {
        match code {
            0 => Ok(FeatureKind::FbankE),
            1 => Ok(FeatureKind::Mfcc),
            c => Err(Error::UnsupportedFormat(format!("feature kind code {c}"))),
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fbank" | "fbank_e" | "fbanke" => Ok(FeatureKind::FbankE),
            "mfcc" => Ok(FeatureKind::Mfcc),
            other => Err(Error::UnsupportedFormat(format!("feature kind `{other}`"))),
        }
    }
}

/// Frames x dims feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticFeatures {
    pub data: Vec<f32>,
    pub frames: usize,
    pub dims: usize,
    pub kind: FeatureKind,
    pub window_ms: u32,
    pub step_ms: u32,
    pub deltas: bool,
    pub normalized: bool,
}

impl AcousticFeatures {
    pub fn from_rows(rows: &[Vec<f64>], kind: FeatureKind) -> Result<Self> {
        let dims = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dims);
        for r in rows {
            if r.len() != dims {
                return Err(Error::shape("ragged feature rows"));
            }
            data.extend(r.iter().map(|&v| v as f32));
        }
        Ok(Self {
            data,
            frames: rows.len(),
            dims,
            kind,
            window_ms: 20,
            step_ms: 10,
            deltas: false,
            normalized: false,
        })
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dims..(t + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dims.max(1)).take(self.frames)
    }

    /// Dimension count of the undecorated features for `kind`.
    pub fn base_dims(kind: FeatureKind, config: &FrontendConfig) -> usize {
        match kind {
            FeatureKind::FbankE => config.num_filters + 1,
            FeatureKind::Mfcc => config.num_ceps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub window_ms: u32,
    pub step_ms: u32,
    pub fft_size: usize,
    pub num_filters: usize,
    pub num_ceps: usize,
    /// `None` disables pre-emphasis.
    pub preemphasis: Option<f64>,
    pub energy_floor: f64,
    pub low_hz: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub high_hz: Option<f64>,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_ms: 20,
            step_ms: 10,
            fft_size: 512,
            num_filters: 40,
            num_ceps: 13,
            preemphasis: Some(0.97),
            energy_floor: 1e-10,
            low_hz: 0.0,
            high_hz: None,
        }
    }
}

impl FrontendConfig {
    pub fn window_samples(&self) -> usize {
        (self.sample_rate as usize * self.window_ms as usize) / 1000
    }

    pub fn step_samples(&self) -> usize {
        (self.sample_rate as usize * self.step_ms as usize) / 1000
    }

    /// `floor((n - window) / step) + 1`, or zero when not even one window fits.
    pub fn frame_count(&self, num_samples: usize) -> usize {
        let w = self.window_samples();
        if num_samples < w {
            0
        } else {
            (num_samples - w) / self.step_samples() + 1
        }
    }
}

/// Configured feature extractor. Holds the filterbank and FFT plan.
pub struct Frontend {
    config: FrontendConfig,
    filterbank: MelFilterbank,
    window: Vec<f64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Frontend {
    pub fn new(config: FrontendConfig) -> Self {
        let high = config.high_hz.unwrap_or(config.sample_rate as f64 / 2.0);
        let filterbank = MelFilterbank::new(
            config.num_filters,
            config.fft_size,
            config.sample_rate as f64,
            config.low_hz,
            high,
        );
        let n = config.window_samples();
        let window = (0..n)
            .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n as f64 - 1.0)).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Self {
            config,
            filterbank,
            window,
            fft,
        }
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Per-frame log mel energies and log frame energy, in f64.
    pub fn log_mel_frames(&self, audio: &AudioBuffer) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let cfg = &self.config;
        if audio.sample_rate != cfg.sample_rate {
            return Err(Error::UnsupportedFormat(format!(
                "sample rate {} Hz, expected {}",
                audio.sample_rate, cfg.sample_rate
            )));
        }
        let frames = cfg.frame_count(audio.samples.len());
        if frames == 0 {
            return Err(Error::EmptyInput(format!(
                "{}: {} samples is shorter than one {} ms window",
                audio.utterance_id,
                audio.samples.len(),
                cfg.window_ms
            )));
        }
        let signal = self.preemphasize(&audio.samples);
        let (w, step) = (cfg.window_samples(), cfg.step_samples());
        let floor = cfg.energy_floor;
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let mut power = vec![0.0; cfg.fft_size / 2 + 1];
        let mut mel_rows = Vec::with_capacity(frames);
        let mut energies = Vec::with_capacity(frames);
        for f in 0..frames {
            let frame = &signal[f * step..f * step + w];
            let energy: f64 = frame.iter().map(|x| x * x).sum();
            energies.push(energy.max(floor).ln());

            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, (&x, &h)) in frame.iter().zip(&self.window).enumerate().take(cfg.fft_size) {
                buf[i] = Complex::new(x * h, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let mel = self.filterbank.apply(&power);
            mel_rows.push(mel.into_iter().map(|e| e.max(floor).ln()).collect());
        }
        Ok((mel_rows, energies))
    }

    pub fn fbank(&self, audio: &AudioBuffer) -> Result<AcousticFeatures> {
        let (mel, energy) = self.log_mel_frames(audio)?;
        let rows: Vec<Vec<f64>> = mel
            .into_iter()
            .zip(energy)
            .map(|(mut r, e)| {
                r.push(e);
                r
            })
            .collect();
        self.finish(&rows, FeatureKind::FbankE)
    }

    pub fn mfcc(&self, audio: &AudioBuffer) -> Result<AcousticFeatures> {
        let (mel, _) = self.log_mel_frames(audio)?;
        let rows: Vec<Vec<f64>> = mel
            .iter()
            .map(|r| dct2_ortho(r, self.config.num_ceps))
            .collect();
        self.finish(&rows, FeatureKind::Mfcc)
    }

    pub fn extract(&self, audio: &AudioBuffer, kind: FeatureKind) -> Result<AcousticFeatures> {
        match kind {
            FeatureKind::FbankE => self.fbank(audio),
            FeatureKind::Mfcc => self.mfcc(audio),
        }
    }

    fn finish(&self, rows: &[Vec<f64>], kind: FeatureKind) -> Result<AcousticFeatures> {
        let mut out = AcousticFeatures::from_rows(rows, kind)?;
        out.window_ms = self.config.window_ms;
        out.step_ms = self.config.step_ms;
        Ok(out)
    }

    fn preemphasize(&self, samples: &[i16]) -> Vec<f64> {
        let x: Vec<f64> = samples.iter().map(|&s| s as f64 / 32768.0).collect();
        match self.config.preemphasis {
            None => x,
            Some(a) => {
                let mut y = Vec::with_capacity(x.len());
                y.push(x[0]);
                y.extend(x.windows(2).map(|p| p[1] - a * p[0]));
                y
            }
        }
    }
}

impl Default for Frontend {
    fn default() -> Self {
        Self::new(FrontendConfig::default())
    }
}

/// 40 log mel energies + log-energy per frame with the default configuration.
pub fn extract_fbank(audio: &AudioBuffer) -> Result<AcousticFeatures> {
    Frontend::default().fbank(audio)
}

/// 13 cepstral coefficients per frame with the default configuration.
pub fn extract_mfcc(audio: &AudioBuffer) -> Result<AcousticFeatures> {
    Frontend::default().mfcc(audio)
}
