//! Synthetic corpora: each phone is a fixed spectral signature (a pair of
//! tones around its own center frequency); utterances are random phone
//! strings framed by silence.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Split, Utterance};
use crate::artic::FeatureMatrix;
use crate::frontend::AudioBuffer;
use crate::phoneset::{PhoneInventory, TimedSegment};
use crate::{Error, Result};

pub const MAX_PHONES: usize = 12;
const SAMPLE_RATE: f64 = 16_000.0;

/// Phones drawn on for synthetic inventories, in order. Columns are
/// distinct in the standard matrix.
const POOL: [&str; MAX_PHONES] = ["sil", "aa", "iy", "m", "s", "t", "f", "z", "uw", "n", "k", "ae"];

/// The first `n` pool phones as an inventory with `sil` as silence.
pub fn synthetic_inventory(n: usize) -> Result<PhoneInventory> {
    if !(2..=MAX_PHONES).contains(&n) {
        return Err(Error::shape(format!("synthetic inventories have 2 to {MAX_PHONES} phones, asked for {n}")));
    }
    PhoneInventory::new(&POOL[..n], "sil")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_utterances: usize,
    /// Non-silence phones per utterance, inclusive range.
    pub min_phones: usize,
    pub max_phones: usize,
    pub phone_ms: f64,
    pub jitter_ms: f64,
    pub spacing_hz: f64,
    pub speakers: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_utterances: 64,
            min_phones: 3,
            max_phones: 6,
            phone_ms: 120.0,
            jitter_ms: 40.0,
            spacing_hz: 500.0,
            speakers: 4,
        }
    }
}

impl SynthConfig {
    pub fn new(seed: u64, n_utterances: usize) -> Self {
        Self {
            seed,
            n_utterances,
            ..Self::default()
        }
    }
}

/// Center frequency of phone `k`; silence has none.
pub fn center_hz(config: &SynthConfig, k: usize) -> f64 {
    config.spacing_hz * (k as f64 + 1.0)
}

fn render(out: &mut Vec<i16>, len: usize, center: Option<f64>, rng: &mut ChaCha8Rng) {
    let (p1, p2): (f64, f64) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
    for n in 0..len {
        let t = n as f64 / SAMPLE_RATE;
        let noise = rng.gen_range(-1.0..1.0);
        let v = match center {
            Some(f) => 6000.0 * (TAU * f * t + p1).sin() + 2500.0 * (TAU * (f + 150.0) * t + p2).sin() + 60.0 * noise,
            None => 250.0 * noise,
        };
        out.push(v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16);
    }
}

/// Generates a deterministic corpus over `inventory`, all in the train split.
pub fn generate_synthetic(config: &SynthConfig, inventory: &PhoneInventory, matrix: &FeatureMatrix) -> Result<Corpus> {
    if inventory.len() > MAX_PHONES || inventory.len() < 2 {
        return Err(Error::shape(format!(
            "synthetic inventories have 2 to {MAX_PHONES} phones, got {}",
            inventory.len()
        )));
    }
    let base = matrix.n_phones() - usize::from(matrix.has_eos());
    if base != inventory.len() {
        return Err(Error::shape(format!("matrix has {base} phones, inventory {}", inventory.len())));
    }
    for a in 0..base {
        if let Some(b) = (a + 1..base).find(|&b| matrix.hamming(a, b) == 0) {
            return Err(Error::DegenerateMatrix(matrix.phone_names()[a].clone(), matrix.phone_names()[b].clone()));
        }
    }
    if config.min_phones == 0 || config.max_phones < config.min_phones || config.speakers == 0 {
        return Err(Error::shape("synthetic phone count range or speaker count is empty"));
    }
    if config.jitter_ms >= config.phone_ms {
        return Err(Error::shape("duration jitter must be smaller than the phone duration"));
    }
    let sil = inventory.sil();
    let speech: Vec<usize> = (0..inventory.len()).filter(|&p| p != sil).collect();
    let ms = |v: f64| (v * SAMPLE_RATE / 1000.0).round() as i64;
    let (mean, jitter) = (ms(config.phone_ms), ms(config.jitter_ms));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut utterances = Vec::with_capacity(config.n_utterances);
    for u in 0..config.n_utterances {
        let count = rng.gen_range(config.min_phones..=config.max_phones);
        let mut labels = vec![sil];
        while labels.len() <= count {
            let p = speech[rng.gen_range(0..speech.len())];
            if speech.len() == 1 || Some(&p) != labels.last() {
                labels.push(p);
            }
        }
        labels.push(sil);
        let mut samples = Vec::new();
        let mut segments = Vec::with_capacity(labels.len());
        for &p in &labels {
            let len = (mean + rng.gen_range(-jitter..=jitter)) as usize;
            let start = samples.len() as u64;
            let center = (p != sil).then(|| center_hz(config, speech.iter().position(|&s| s == p).unwrap_or(0)));
            render(&mut samples, len, center, &mut rng);
            segments.push(TimedSegment {
                start_sample: start,
                end_sample: samples.len() as u64,
                phone: p,
            });
        }
        let speaker = format!("syn{}", u % config.speakers);
        let id = format!("{speaker}_u{u:04}");
        let audio = AudioBuffer::new(samples, SAMPLE_RATE as u32, id.clone());
        utterances.push(Utterance::from_segments(id, speaker, Split::Train, audio, segments)?);
    }
    Ok(Corpus {
        inventory: inventory.clone(),
        utterances,
        seed: Some(config.seed),
    })
}
