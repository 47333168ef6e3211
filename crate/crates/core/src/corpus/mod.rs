//! Corpus ingestion: audio files, the TIMIT directory layout, and a
//! synthetic generator for small end-to-end runs.

pub mod audio;
pub mod synth;
pub mod timit;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::frontend::AudioBuffer;
use crate::phoneset::{parse_phn, serialize_phn, PhoneInventory, PhoneSequence, TimedSegment};
use crate::{Error, Result};

pub use audio::{read_audio, write_riff, write_sphere};
pub use synth::{generate_synthetic, synthetic_inventory, SynthConfig};
pub use timit::{load_timit, timit_index, TimitEntry, CORE_TEST_SPEAKERS, TIMIT_ROOT_VAR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    TestCore,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    pub audio: AudioBuffer,
    pub phones: PhoneSequence,
    pub segments: Option<Vec<TimedSegment>>,
    pub speaker: String,
    pub split: Split,
}

impl Utterance {
    /// Builds an utterance whose phone string is read off its markup.
    pub fn from_segments(
        id: impl Into<String>,
        speaker: impl Into<String>,
        split: Split,
        audio: AudioBuffer,
        segments: Vec<TimedSegment>,
    ) -> Result<Self> {
        let id = id.into();
        check_tiling(&id, &segments, audio.samples.len())?;
        let phones = PhoneSequence::new(id.clone(), segments.iter().map(|s| s.phone).collect());
        Ok(Self {
            id,
            audio,
            phones,
            segments: Some(segments),
            speaker: speaker.into(),
            split,
        })
    }
}

/// Segments must start at sample 0, be contiguous, and end inside the audio.
pub fn check_tiling(id: &str, segments: &[TimedSegment], samples: usize) -> Result<()> {
    let first = segments
        .first()
        .ok_or_else(|| Error::Markup(format!("{id}: no segments")))?;
    if first.start_sample != 0 {
        return Err(Error::Markup(format!("{id}: first segment starts at {}", first.start_sample)));
    }
    if let Some(w) = segments.windows(2).find(|w| w[0].end_sample != w[1].start_sample) {
        return Err(Error::Markup(format!(
            "{id}: gap or overlap between {} and {}",
            w[0].end_sample, w[1].start_sample
        )));
    }
    let end = segments[segments.len() - 1].end_sample;
    if end > samples as u64 {
        return Err(Error::Markup(format!("{id}: markup ends at {end}, audio has {samples} samples")));
    }
    Ok(())
}

/// An ordered collection of utterances over one phone inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub inventory: PhoneInventory,
    pub utterances: Vec<Utterance>,
    pub seed: Option<u64>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == split)
    }
}

pub const MANIFEST_FILE: &str = "corpus.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub speaker: String,
    pub split: Split,
    pub audio: String,
    pub markup: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub phones: Vec<String>,
    pub silence: String,
    pub seed: Option<u64>,
    pub utterances: Vec<CorpusEntry>,
}

/// Writes `<id>.wav`, `<id>.PHN` and the JSON manifest into `dir`.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(corpus.utterances.len());
    for u in &corpus.utterances {
        let segments = u
            .segments
            .as_ref()
            .ok_or_else(|| Error::Markup(format!("{}: no markup to save", u.id)))?;
        let (wav, phn) = (format!("{}.wav", u.id), format!("{}.PHN", u.id));
        fs::write(dir.join(&wav), write_riff(&u.audio))?;
        fs::write(dir.join(&phn), serialize_phn(segments, &corpus.inventory))?;
        entries.push(CorpusEntry {
            id: u.id.clone(),
            speaker: u.speaker.clone(),
            split: u.split,
            audio: wav,
            markup: phn,
        });
    }
    let manifest = CorpusManifest {
        phones: corpus.inventory.symbols().to_vec(),
        silence: corpus.inventory.symbol(corpus.inventory.sil()).to_string(),
        seed: corpus.seed,
        utterances: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Reads a corpus written by [`save_corpus`].
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Ingest(format!("cannot read {}: {e}", path.display())))?;
    let manifest: CorpusManifest = serde_json::from_str(&text)?;
    let inventory = PhoneInventory::new(&manifest.phones, &manifest.silence)?;
    let utterances = manifest
        .utterances
        .par_iter()
        .map(|e| {
            let read = |name: &str| {
                fs::read(dir.join(name)).map_err(|err| Error::Ingest(format!("{}: {err}", dir.join(name).display())))
            };
            let audio = read_audio(&read(&e.audio)?, &e.id)?;
            let markup = String::from_utf8(read(&e.markup)?)
                .map_err(|_| Error::Ingest(format!("{}: markup is not UTF-8", e.markup)))?;
            let segments = parse_phn(&markup, &inventory)?;
            Utterance::from_segments(e.id.clone(), e.speaker.clone(), e.split, audio, segments)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        inventory,
        utterances,
        seed: manifest.seed,
    })
}
