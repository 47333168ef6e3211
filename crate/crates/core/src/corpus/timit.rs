//! TIMIT directory layout: `<root>/{TRAIN,TEST}/DR<n>/<SPEAKER>/<SENT>.{WAV,PHN}`,
//! matched case-insensitively.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{read_audio, Corpus, Split, Utterance};
use crate::phoneset::{parse_phn, validate_split, PhoneInventory};
use crate::{Error, Result};

pub const TIMIT_ROOT_VAR: &str = "AFD_TIMIT_ROOT";

/// The standard 24-speaker core test set.
pub const CORE_TEST_SPEAKERS: [&str; 24] = [
    "mdab0", "mwbt0", "felc0", "mtas1", "mwew0", "fpas0", "mjmp0", "mlnt0", "fpkt0", "mlll0", "mtls0", "fjlm0",
    "mbpm0", "mklt0", "fnlp0", "mcmj0", "mjdh0", "fmgd0", "mgrt0", "mnjm0", "fdhc0", "mjln0", "mpam0", "fmld0",
];

/// One utterance on disk, before its audio is read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimitEntry {
    pub id: String,
    pub speaker: String,
    pub split: Split,
    pub audio: PathBuf,
    pub markup: PathBuf,
}

impl TimitEntry {
    pub fn load(&self, inventory: &PhoneInventory) -> Result<Utterance> {
        let bytes = fs::read(&self.audio).map_err(|e| Error::Ingest(format!("{}: {e}", self.audio.display())))?;
        let audio = read_audio(&bytes, &self.id)?;
        let text = fs::read_to_string(&self.markup).map_err(|e| Error::Ingest(format!("{}: {e}", self.markup.display())))?;
        let segments = parse_phn(&text, inventory)?;
        Utterance::from_segments(self.id.clone(), self.speaker.clone(), self.split, audio, segments)
    }
}

fn sorted_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::Ingest(format!("{}: {e}", dir.display())))? {
        let e = e?;
        if e.file_type()?.is_dir() {
            out.push((e.file_name().to_string_lossy().to_lowercase(), e.path()));
        }
    }
    out.sort();
    Ok(out)
}

fn find_child(dir: &Path, name: &str) -> Result<PathBuf> {
    sorted_dirs(dir)?
        .into_iter()
        .find(|(n, _)| n == name)
        .map(|(_, p)| p)
        .ok_or_else(|| Error::Ingest(format!("{} has no `{name}` directory", dir.display())))
}

/// `(sentence, wav, phn)` for every sentence of one speaker directory.
fn speaker_files(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let mut wav = Vec::new();
    let mut phn = std::collections::BTreeMap::new();
    for e in fs::read_dir(dir)? {
        let path = e?.path();
        let (Some(stem), Some(ext)) = (path.file_stem(), path.extension()) else {
            continue;
        };
        let stem = stem.to_string_lossy().to_lowercase();
        match ext.to_string_lossy().to_lowercase().as_str() {
            "wav" => wav.push((stem, path)),
            "phn" => {
                phn.insert(stem, path);
            }
            _ => {}
        }
    }
    wav.sort();
    wav.into_iter()
        .map(|(stem, w)| {
            let p = phn
                .remove(&stem)
                .ok_or_else(|| Error::Ingest(format!("{} has no matching .PHN file", w.display())))?;
            Ok((stem, w, p))
        })
        .collect()
}

/// Lists utterances and assigns splits: SA sentences are dropped
/// everywhere, core-test speakers form the test set, the remaining test
/// speakers form dev minus any sentence shared with the core set.
pub fn timit_index(root: &Path) -> Result<Vec<TimitEntry>> {
    let core: BTreeSet<&str> = CORE_TEST_SPEAKERS.iter().copied().collect();
    let mut entries = Vec::new();
    for (part, is_test) in [("train", false), ("test", true)] {
        for (_, region) in sorted_dirs(&find_child(root, part)?)? {
            for (speaker, dir) in sorted_dirs(&region)? {
                let split = match (is_test, core.contains(speaker.as_str())) {
                    (false, _) => Split::Train,
                    (true, true) => Split::TestCore,
                    (true, false) => Split::Dev,
                };
                for (sentence, audio, markup) in speaker_files(&dir)? {
                    if sentence.starts_with("sa") {
                        continue;
                    }
                    entries.push(TimitEntry {
                        id: format!("{speaker}_{sentence}"),
                        speaker: speaker.clone(),
                        split,
                        audio,
                        markup,
                    });
                }
            }
        }
    }
    let core_sentences: BTreeSet<String> = entries
        .iter()
        .filter(|e| e.split == Split::TestCore)
        .map(|e| crate::phoneset::phrase_of(&e.id).to_string())
        .collect();
    entries.retain(|e| e.split != Split::Dev || !core_sentences.contains(crate::phoneset::phrase_of(&e.id)));
    let ids = |s: Split| entries.iter().filter(|e| e.split == s).map(|e| e.id.as_str()).collect::<Vec<_>>();
    validate_split(&ids(Split::Train), &ids(Split::Dev), &ids(Split::TestCore))?;
    Ok(entries)
}

/// Reads the whole corpus (61-phone markup), one file per task.
pub fn load_timit(root: &Path) -> Result<Corpus> {
    let inventory = PhoneInventory::timit61();
    let utterances = timit_index(root)?
        .par_iter()
        .map(|e| e.load(&inventory))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        inventory,
        utterances,
        seed: None,
    })
}
