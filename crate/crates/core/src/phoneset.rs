//! Phone inventories, 61 to 39 folding and timed `.PHN` markup.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const TIMIT61_JSON: &str = include_str!("../data/timit61.json");

pub const SOS_SYMBOL: &str = "<s>";
pub const EOS_SYMBOL: &str = "</s>";

/// Ordered set of phone symbols. Start and end of sequence are virtual
/// indices `len()` and `len() + 1`; they never appear in stored sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneInventory {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    sil: usize,
}

impl PhoneInventory {
    pub fn new<S: AsRef<str>>(symbols: &[S], sil: &str) -> Result<Self> {
        let symbols: Vec<String> = symbols.iter().map(|s| s.as_ref().to_string()).collect();
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s == SOS_SYMBOL || s == EOS_SYMBOL {
                return Err(Error::Ingest(format!("`{s}` is reserved")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Ingest(format!("duplicate phone symbol `{s}`")));
            }
        }
        let sil = *index
            .get(sil)
            .ok_or_else(|| Error::Ingest(format!("silence symbol `{sil}` not in inventory")))?;
        Ok(Self { symbols, index, sil })
    }

    /// The 61 TIMIT phones, with `h#` as silence.
    pub fn timit61() -> Self {
        let table = ReductionTable::timit();
        Self::new(&table.phones, "h#").expect("shipped table is valid")
    }

    /// The 39-phone folded set in alphabetical order.
    pub fn timit39() -> Self {
        let reduced = ReductionTable::timit().reduced_symbols();
        Self::new(&reduced, "sil").expect("shipped table is valid")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn sil(&self) -> usize {
        self.sil
    }

    pub fn sos(&self) -> usize {
        self.symbols.len()
    }

    pub fn eos(&self) -> usize {
        self.symbols.len() + 1
    }

    /// Decoder vocabulary size: phones plus start and end markers.
    pub fn output_size(&self) -> usize {
        self.symbols.len() + 2
    }

    pub fn is_special(&self, idx: usize) -> bool {
        idx >= self.symbols.len()
    }

    pub fn symbol(&self, idx: usize) -> &str {
        if idx == self.sos() {
            SOS_SYMBOL
        } else if idx == self.eos() {
            EOS_SYMBOL
        } else {
            &self.symbols[idx]
        }
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn lookup(&self, symbol: &str) -> Result<usize> {
        self.index_of(symbol)
            .ok_or_else(|| Error::UnknownPhone(symbol.to_string()))
    }

    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Vec<usize>> {
        symbols.iter().map(|s| self.lookup(s.as_ref())).collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<&str> {
        indices.iter().map(|&i| self.symbol(i)).collect()
    }
}

/// Phone string for one utterance, as inventory indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneSequence {
    pub utterance_id: String,
    pub phones: Vec<usize>,
}

impl PhoneSequence {
    pub fn new(utterance_id: impl Into<String>, phones: Vec<usize>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            phones,
        }
    }

    pub fn validate(&self, inv: &PhoneInventory) -> Result<()> {
        match self.phones.iter().find(|&&p| p >= inv.len()) {
            Some(p) => Err(Error::shape(format!(
                "{}: phone index {p} outside inventory of {}",
                self.utterance_id,
                inv.len()
            ))),
            None => Ok(()),
        }
    }

    /// Space-separated symbols, the text format used for hypotheses.
    pub fn to_line(&self, inv: &PhoneInventory) -> String {
        inv.decode(&self.phones).join(" ")
    }

    pub fn from_line(utterance_id: &str, line: &str, inv: &PhoneInventory) -> Result<Self> {
        let syms: Vec<&str> = line.split_whitespace().collect();
        Ok(Self::new(utterance_id, inv.encode(&syms)?))
    }
}

/// Folding table from the 61-phone set to the 39-phone set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionTable {
    pub phones: Vec<String>,
    pub folding: BTreeMap<String, String>,
    pub deleted: Vec<String>,
}

impl ReductionTable {
    pub fn timit() -> Self {
        Self::from_json(TIMIT61_JSON).expect("shipped reduction table parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: ReductionTable = serde_json::from_str(text)?;
        let known: BTreeSet<&str> = table.phones.iter().map(String::as_str).collect();
        for from in table.folding.keys() {
            if !known.contains(from.as_str()) {
                return Err(Error::UnknownPhone(from.clone()));
            }
        }
        for d in &table.deleted {
            if !known.contains(d.as_str()) {
                return Err(Error::UnknownPhone(d.clone()));
            }
        }
        Ok(table)
    }

    /// Image of the full set under folding (deleted symbols dropped), sorted.
    pub fn reduced_symbols(&self) -> Vec<String> {
        let mut out: BTreeSet<String> = BTreeSet::new();
        for p in &self.phones {
            if self.deleted.contains(p) {
                continue;
            }
            out.insert(self.folding.get(p).unwrap_or(p).clone());
        }
        out.into_iter().collect()
    }

    /// Maps one symbol: `Ok(None)` when deleted. Symbols already in the
    /// reduced set map to themselves.
    pub fn reduce_symbol(&self, symbol: &str) -> Result<Option<String>> {
        if self.deleted.iter().any(|d| d == symbol) {
            return Ok(None);
        }
        if let Some(to) = self.folding.get(symbol) {
            return Ok(Some(to.clone()));
        }
        if self.phones.iter().any(|p| p == symbol) || self.folding.values().any(|v| v == symbol) {
            return Ok(Some(symbol.to_string()));
        }
        Err(Error::UnknownPhone(symbol.to_string()))
    }

    /// Replaces each phone by its reduced class and drops deleted symbols.
    /// Adjacent duplicates are kept; see [`collapse_silence`].
    pub fn reduce<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(symbols.len());
        for s in symbols {
            if let Some(r) = self.reduce_symbol(s.as_ref())? {
                out.push(r);
            }
        }
        Ok(out)
    }
}

/// Index-level folding from a full-set sequence to a reduced-set sequence.
pub fn reduce_phones(
    seq: &PhoneSequence,
    from: &PhoneInventory,
    table: &ReductionTable,
    to: &PhoneInventory,
) -> Result<PhoneSequence> {
    let syms = from.decode(&seq.phones);
    let reduced = table.reduce(&syms)?;
    Ok(PhoneSequence::new(seq.utterance_id.clone(), to.encode(&reduced)?))
}

/// Collapses runs of adjacent silence into one symbol.
pub fn collapse_silence(phones: &[usize], sil: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(phones.len());
    for &p in phones {
        if p == sil && out.last() == Some(&sil) {
            continue;
        }
        out.push(p);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedSegment {
    pub start_sample: u64,
    pub end_sample: u64,
    pub phone: usize,
}

/// Parses `.PHN` markup: one `start end symbol` line per segment.
pub fn parse_phn(text: &str, inventory: &PhoneInventory) -> Result<Vec<TimedSegment>> {
    let mut segments = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::parse(lineno, format!("expected `start end symbol`, got `{line}`")));
        }
        let start: u64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad start sample `{}`", fields[0])))?;
        let end: u64 = fields[1]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad end sample `{}`", fields[1])))?;
        if end <= start {
            return Err(Error::Markup(format!(
                "line {lineno}: segment end {end} is not after start {start}"
            )));
        }
        segments.push(TimedSegment {
            start_sample: start,
            end_sample: end,
            phone: inventory.lookup(fields[2])?,
        });
    }
    segments.sort_by_key(|s| (s.start_sample, s.end_sample));
    for w in segments.windows(2) {
        if w[1].start_sample < w[0].end_sample {
            return Err(Error::Markup(format!(
                "segments [{}, {}) and [{}, {}) overlap",
                w[0].start_sample, w[0].end_sample, w[1].start_sample, w[1].end_sample
            )));
        }
    }
    Ok(segments)
}

pub fn serialize_phn(segments: &[TimedSegment], inventory: &PhoneInventory) -> String {
    let mut out = String::new();
    for s in segments {
        out.push_str(&format!(
            "{} {} {}\n",
            s.start_sample,
            s.end_sample,
            inventory.symbol(s.phone)
        ));
    }
    out
}

/// Folds full-set segments into the reduced set: deleted segments are
/// absorbed by their predecessor (or successor when first), adjacent
/// silences are merged.
pub fn reduce_segments(
    segments: &[TimedSegment],
    from: &PhoneInventory,
    table: &ReductionTable,
    to: &PhoneInventory,
) -> Result<Vec<TimedSegment>> {
    let mut out: Vec<TimedSegment> = Vec::with_capacity(segments.len());
    let mut pending_start: Option<u64> = None;
    for s in segments {
        match table.reduce_symbol(from.symbol(s.phone))? {
            None => match out.last_mut() {
                Some(prev) => prev.end_sample = s.end_sample,
                None => pending_start = Some(pending_start.unwrap_or(s.start_sample)),
            },
            Some(sym) => {
                let phone = to.lookup(&sym)?;
                let start = pending_start.take().unwrap_or(s.start_sample);
                match out.last_mut() {
                    Some(prev) if phone == to.sil() && prev.phone == to.sil() => {
                        prev.end_sample = s.end_sample
                    }
                    _ => out.push(TimedSegment {
                        start_sample: start,
                        end_sample: s.end_sample,
                        phone,
                    }),
                }
            }
        }
    }
    Ok(out)
}

/// Utterance ids are `<speaker>_<sentence>`.
pub fn speaker_of(utterance_id: &str) -> &str {
    utterance_id.split('_').next().unwrap_or(utterance_id)
}

pub fn phrase_of(utterance_id: &str) -> &str {
    utterance_id.split_once('_').map(|(_, p)| p).unwrap_or("")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub train_utterances: usize,
    pub dev_utterances: usize,
    pub test_utterances: usize,
    pub train_speakers: usize,
    pub dev_speakers: usize,
    pub test_speakers: usize,
}

/// Checks speaker disjointness between all splits and that no test phrase
/// occurs in train or dev.
pub fn validate_split<S: AsRef<str>>(train: &[S], dev: &[S], test: &[S]) -> Result<SplitReport> {
    let speakers = |ids: &[S]| -> BTreeSet<String> {
        ids.iter().map(|u| speaker_of(u.as_ref()).to_string()).collect()
    };
    let (tr, dv, te) = (speakers(train), speakers(dev), speakers(test));
    for (a, an, b, bn) in [(&tr, "train", &dv, "dev"), (&tr, "train", &te, "test"), (&dv, "dev", &te, "test")] {
        if let Some(s) = a.intersection(b).next() {
            return Err(Error::Split(format!("speaker `{s}` appears in both {an} and {bn}")));
        }
    }
    let seen: BTreeSet<&str> = train
        .iter()
        .chain(dev)
        .map(|u| phrase_of(u.as_ref()))
        .collect();
    if let Some(u) = test.iter().find(|u| seen.contains(phrase_of(u.as_ref()))) {
        return Err(Error::Split(format!(
            "test phrase `{}` ({}) also occurs in train/dev",
            phrase_of(u.as_ref()),
            u.as_ref()
        )));
    }
    Ok(SplitReport {
        train_utterances: train.len(),
        dev_utterances: dev.len(),
        test_utterances: test.len(),
        train_speakers: tr.len(),
        dev_speakers: dv.len(),
        test_speakers: te.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shipped_sets_have_61_and_39_phones() {
        assert_eq!(PhoneInventory::timit61().len(), 61);
        let inv = PhoneInventory::timit39();
        assert_eq!(inv.len(), 39);
        assert_eq!(inv.symbol(inv.sil()), "sil");
        assert_eq!(inv.symbol(inv.sos()), SOS_SYMBOL);
        assert_eq!(inv.symbol(inv.eos()), EOS_SYMBOL);
        assert_eq!(inv.output_size(), 41);
    }

    /// Lee & Hon (1989) folding classes, written out independently of the
    /// shipped JSON.
    #[test]
    fn folding_matches_lee_hon_classes() {
        let classes: &[(&str, &[&str])] = &[
            ("aa", &["aa", "ao"]),
            ("ah", &["ah", "ax", "ax-h"]),
            ("er", &["er", "axr"]),
            ("hh", &["hh", "hv"]),
            ("ih", &["ih", "ix"]),
            ("l", &["l", "el"]),
            ("m", &["m", "em"]),
            ("n", &["n", "en", "nx"]),
            ("ng", &["ng", "eng"]),
            ("sh", &["sh", "zh"]),
            ("uw", &["uw", "ux"]),
            ("sil", &["pcl", "tcl", "kcl", "bcl", "dcl", "gcl", "h#", "pau", "epi"]),
        ];
        let t = ReductionTable::timit();
        for (to, froms) in classes {
            for f in *froms {
                assert_eq!(t.reduce_symbol(f).unwrap().as_deref(), Some(*to), "{f}");
            }
        }
        assert_eq!(t.reduce_symbol("q").unwrap(), None);
        let folded: usize = classes.iter().map(|(_, f)| f.len()).sum();
        // every other symbol maps to itself
        assert_eq!(t.folding.len(), folded - (classes.len() - 1));
    }

    #[test]
    fn reduce_examples() {
        let t = ReductionTable::timit();
        assert_eq!(t.reduce(&["ao", "r"]).unwrap(), vec!["aa", "r"]);
        assert_eq!(t.reduce(&["sil", "q", "sil"]).unwrap(), vec!["sil", "sil"]);
        let already = ["sil", "dh", "ah", "b", "eh", "s", "t", "sil"];
        assert_eq!(t.reduce(&already).unwrap(), already.to_vec());
        assert!(matches!(t.reduce(&["xx"]), Err(Error::UnknownPhone(_))));
    }

    #[test]
    fn reduce_phones_on_indices() {
        let (i61, i39, t) = (PhoneInventory::timit61(), PhoneInventory::timit39(), ReductionTable::timit());
        let seq = PhoneSequence::new("u", i61.encode(&["h#", "q", "ix", "tcl", "t", "h#"]).unwrap());
        let out = reduce_phones(&seq, &i61, &t, &i39).unwrap();
        assert_eq!(i39.decode(&out.phones), vec!["sil", "ih", "sil", "t", "sil"]);
    }

    #[test]
    fn collapse_merges_silence_runs_only() {
        assert_eq!(collapse_silence(&[0, 0, 1, 1, 0, 0, 0], 0), vec![0, 1, 1, 0]);
    }

    #[test]
    fn parse_phn_examples() {
        let inv = PhoneInventory::timit61();
        let segs = parse_phn("0 1600 h#\n1600 3200 dh", &inv).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(inv.symbol(segs[0].phone), "h#");
        assert_eq!(inv.symbol(segs[1].phone), "dh");
        assert!(parse_phn("", &inv).unwrap().is_empty());
        assert!(matches!(parse_phn("100 50 aa", &inv), Err(Error::Markup(_))));
        assert!(matches!(parse_phn("0 10 aa\n5 20 b", &inv), Err(Error::Markup(_))));
        match parse_phn("0 10 aa\n10 x b\n", &inv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_phn("0 10 zz", &inv), Err(Error::UnknownPhone(_))));
    }

    #[test]
    fn segment_reduction_absorbs_q_and_merges_silence() {
        let (i61, i39, t) = (PhoneInventory::timit61(), PhoneInventory::timit39(), ReductionTable::timit());
        let segs = parse_phn("0 100 h#\n100 150 q\n150 300 iy\n300 350 pau\n350 400 tcl\n400 500 t", &i61).unwrap();
        let r = reduce_segments(&segs, &i61, &t, &i39).unwrap();
        let text = serialize_phn(&r, &i39);
        assert_eq!(text, "0 150 sil\n150 300 iy\n300 400 sil\n400 500 t\n");
    }

    #[test]
    fn split_validation() {
        let ok = validate_split(&["a1_sx1", "a2_si5"], &["b1_sx2"], &["c1_sx3"]).unwrap();
        assert_eq!(ok.train_speakers, 2);
        assert_eq!(ok.test_utterances, 1);
        assert!(matches!(
            validate_split(&["a1_sx1"], &[], &["a1_sx9"]),
            Err(Error::Split(_))
        ));
        assert!(matches!(
            validate_split(&["a1_sx1"], &["b1_sx2"], &["c1_sx2"]),
            Err(Error::Split(_))
        ));
    }

    proptest! {
        #[test]
        fn reduction_is_idempotent_and_total(idx in proptest::collection::vec(0usize..61, 0..30)) {
            let t = ReductionTable::timit();
            let inv = PhoneInventory::timit61();
            let syms: Vec<&str> = idx.iter().map(|&i| inv.symbol(i)).collect();
            let once = t.reduce(&syms).unwrap();
            let twice = t.reduce(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            let reduced = PhoneInventory::timit39();
            prop_assert!(once.iter().all(|s| reduced.index_of(s).is_some()));
        }

        #[test]
        fn phn_round_trip(lens in proptest::collection::vec((0u64..50, 1u64..400, 0usize..61), 0..20)) {
            let inv = PhoneInventory::timit61();
            let mut t = 0;
            let segs: Vec<TimedSegment> = lens.iter().map(|&(gap, len, phone)| {
                let s = TimedSegment { start_sample: t + gap, end_sample: t + gap + len, phone };
                t = s.end_sample;
                s
            }).collect();
            let parsed = parse_phn(&serialize_phn(&segs, &inv), &inv).unwrap();
            prop_assert_eq!(parsed, segs);
        }
    }
}
