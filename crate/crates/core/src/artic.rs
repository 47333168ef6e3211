//! Articulatory features and the binary feature-by-phone matrix.
//!
//! Given per-feature posteriors `phi` and a matrix `M` (rows = features,
//! columns = phones), the phone log-posteriors under feature independence
//! are
//!
//! ```text
//! P = log(phi) . M + log(1 - phi) . (1 - M)
//! ```
//!
//! The best-scoring column is the "refined" feature vector fed back to the
//! indicator decoder, which restricts feedback to combinations that occur
//! in the phone inventory.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::phoneset::PhoneInventory;
use crate::{Error, Result, Scalar};

const FEATURES_JSON: &str = include_str!("../data/features.json");

/// Posteriors are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const POSTERIOR_EPSILON: f64 = 1e-7;

pub const EOS_FEATURE: &str = "<eos>";
pub const SILENCE: &str = "silence";
pub const VOWEL: &str = "vowel";
pub const CONSONANTAL: &str = "consonantal";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureInventory {
    names: Vec<String>,
}

impl FeatureInventory {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if n == EOS_FEATURE {
                return Err(Error::InvalidTable(format!("`{EOS_FEATURE}` is reserved")));
            }
            if !seen.insert(n) {
                return Err(Error::InvalidTable(format!("duplicate feature `{n}`")));
            }
        }
        Ok(Self { names })
    }

    /// The 28 manner, place and SPE features used for reporting.
    pub fn standard() -> Self {
        FeatureTable::standard().inventory().expect("shipped table is valid")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Phone to active-feature lists, as shipped in JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub features: Vec<String>,
    pub map: BTreeMap<String, Vec<String>>,
}

impl FeatureTable {
    pub fn standard() -> Self {
        Self::from_json(FEATURES_JSON).expect("shipped feature table parses")
    }

    /// Parses and rejects feature names not declared in `features`.
    pub fn from_json(text: &str) -> Result<Self> {
        let table: FeatureTable = serde_json::from_str(text)?;
        for (phone, feats) in &table.map {
            if let Some(f) = feats.iter().find(|f| !table.features.contains(f)) {
                return Err(Error::InvalidTable(format!("phone `{phone}` uses unknown feature `{f}`")));
            }
        }
        Ok(table)
    }

    pub fn inventory(&self) -> Result<FeatureInventory> {
        FeatureInventory::new(&self.features)
    }
}

/// Binary matrix, rows = features, columns = phones.
///
/// A matrix built with [`FeatureMatrix::with_eos`] carries one extra
/// end-of-sequence row and column (eos bit set only in the eos column).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMatrix {
    features: Vec<String>,
    phones: Vec<String>,
    /// Column-major: `columns[j][i]` is feature `i` of phone `j`.
    columns: Vec<Vec<bool>>,
    eos: bool,
}

impl FeatureMatrix {
    /// Builds from explicit columns, checking shape and column distinctness.
    pub fn from_columns<S: AsRef<str>>(
        features: &[S],
        phones: &[S],
        columns: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let features: Vec<String> = features.iter().map(|s| s.as_ref().to_string()).collect();
        let phones: Vec<String> = phones.iter().map(|s| s.as_ref().to_string()).collect();
        if columns.len() != phones.len() {
            return Err(Error::shape(format!(
                "{} columns for {} phones",
                columns.len(),
                phones.len()
            )));
        }
        if let Some(c) = columns.iter().find(|c| c.len() != features.len()) {
            return Err(Error::shape(format!(
                "column of {} bits for {} features",
                c.len(),
                features.len()
            )));
        }
        let mut seen: HashMap<&[bool], usize> = HashMap::new();
        for (j, c) in columns.iter().enumerate() {
            if let Some(&k) = seen.get(c.as_slice()) {
                return Err(Error::DegenerateMatrix(phones[k].clone(), phones[j].clone()));
            }
            seen.insert(c, j);
        }
        Ok(Self {
            features,
            phones,
            columns,
            eos: false,
        })
    }

    /// Adds the end-of-sequence indicator row and phone column. Idempotent.
    pub fn with_eos(&self) -> Self {
        if self.eos {
            return self.clone();
        }
        let mut columns: Vec<Vec<bool>> = self
            .columns
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.push(false);
                c
            })
            .collect();
        let mut eos_col = vec![false; self.features.len()];
        eos_col.push(true);
        columns.push(eos_col);
        let mut features = self.features.clone();
        features.push(EOS_FEATURE.to_string());
        let mut phones = self.phones.clone();
        phones.push(crate::phoneset::EOS_SYMBOL.to_string());
        Self {
            features,
            phones,
            columns,
            eos: true,
        }
    }

    pub fn has_eos(&self) -> bool {
        self.eos
    }

    /// Row index of the eos indicator.
    pub fn eos_feature(&self) -> Option<usize> {
        self.eos.then(|| self.features.len() - 1)
    }

    /// Column index of the eos pseudo-phone.
    pub fn eos_phone(&self) -> Option<usize> {
        self.eos.then(|| self.phones.len() - 1)
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_phones(&self) -> usize {
        self.phones.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.features
    }

    pub fn phone_names(&self) -> &[String] {
        &self.phones
    }

    pub fn bit(&self, feature: usize, phone: usize) -> bool {
        self.columns[phone][feature]
    }

    pub fn column(&self, phone: usize) -> &[bool] {
        &self.columns[phone]
    }

    pub fn column_as<S: Scalar>(&self, phone: usize) -> Vec<S> {
        self.columns[phone]
            .iter()
            .map(|&b| if b { S::one() } else { S::zero() })
            .collect()
    }

    pub fn phone_index(&self, symbol: &str) -> Option<usize> {
        self.phones.iter().position(|p| p == symbol)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|p| p == name)
    }

    /// Column index whose bits equal `bits`, if any.
    pub fn find_column(&self, bits: &[bool]) -> Option<usize> {
        self.columns.iter().position(|c| c.as_slice() == bits)
    }

    pub fn hamming(&self, a: usize, b: usize) -> usize {
        self.columns[a]
            .iter()
            .zip(&self.columns[b])
            .filter(|(x, y)| x != y)
            .count()
    }
}

/// Builds and validates the matrix for `phones` from a phone-to-features table.
pub fn build_feature_matrix(
    features: &FeatureInventory,
    phones: &PhoneInventory,
    table: &FeatureTable,
) -> Result<FeatureMatrix> {
    let mut columns = Vec::with_capacity(phones.len());
    for sym in phones.symbols() {
        let active = table
            .map
            .get(sym)
            .ok_or_else(|| Error::IncompleteTable(format!("no entry for phone `{sym}`")))?;
        let mut col = vec![false; features.len()];
        for f in active {
            let i = features.index_of(f).ok_or_else(|| {
                Error::InvalidTable(format!("phone `{sym}` uses feature `{f}` outside the inventory"))
            })?;
            col[i] = true;
        }
        columns.push(col);
    }
    let m = FeatureMatrix::from_columns(features.names(), phones.symbols(), columns)?;
    check_phonetic_invariants(&m, phones)?;
    Ok(m)
}

fn check_phonetic_invariants(m: &FeatureMatrix, phones: &PhoneInventory) -> Result<()> {
    if let Some(s) = m.feature_index(SILENCE) {
        for j in 0..phones.len() {
            let col = m.column(j);
            if j == phones.sil() {
                if !col[s] || col.iter().enumerate().any(|(i, &b)| b && i != s) {
                    return Err(Error::InvalidTable(format!(
                        "silence phone `{}` must carry only the silence feature",
                        phones.symbol(j)
                    )));
                }
            } else if col[s] {
                return Err(Error::InvalidTable(format!(
                    "non-silence phone `{}` has the silence feature",
                    phones.symbol(j)
                )));
            }
        }
    }
    if let (Some(v), Some(c)) = (m.feature_index(VOWEL), m.feature_index(CONSONANTAL)) {
        if let Some(j) = (0..phones.len()).find(|&j| m.bit(v, j) && m.bit(c, j)) {
            return Err(Error::InvalidTable(format!(
                "phone `{}` is both vowel and consonantal",
                phones.symbol(j)
            )));
        }
    }
    Ok(())
}

/// The shipped 28-feature matrix over `phones`.
pub fn standard_matrix(phones: &PhoneInventory) -> Result<FeatureMatrix> {
    build_feature_matrix(&FeatureInventory::standard(), phones, &FeatureTable::standard())
}

/// Rebuilds the matrix for another phone inventory over the same features,
/// keeping the eos row and column if `m` has them.
pub fn remap_inventory(m: &FeatureMatrix, new_phones: &PhoneInventory, new_table: &FeatureTable) -> Result<FeatureMatrix> {
    let base_features = if m.has_eos() {
        &m.feature_names()[..m.n_features() - 1]
    } else {
        m.feature_names()
    };
    if new_table.features.as_slice() != base_features {
        return Err(Error::InvalidTable(
            "new table is not expressed over the matrix's feature inventory".into(),
        ));
    }
    let inv = FeatureInventory::new(base_features)?;
    let out = build_feature_matrix(&inv, new_phones, new_table)?;
    Ok(if m.has_eos() { out.with_eos() } else { out })
}

fn clamp<S: Scalar>(p: S) -> S {
    let eps = S::of(POSTERIOR_EPSILON);
    p.max(eps).min(S::one() - eps)
}

/// Phone log-posteriors for one decoder step.
pub fn phone_log_posteriors<S: Scalar>(phi: &[S], m: &FeatureMatrix) -> Result<Vec<S>> {
    if phi.len() != m.n_features() {
        return Err(Error::shape(format!(
            "{} posteriors for a matrix with {} features",
            phi.len(),
            m.n_features()
        )));
    }
    let (log_on, log_off): (Vec<S>, Vec<S>) = phi
        .iter()
        .map(|&p| {
            let p = clamp(p);
            (p.ln(), (S::one() - p).ln())
        })
        .unzip();
    Ok(m.columns
        .iter()
        .map(|col| {
            col.iter()
                .enumerate()
                .map(|(i, &b)| if b { log_on[i] } else { log_off[i] })
                .sum()
        })
        .collect())
}

/// First index of the maximum; NaN never wins.
pub fn argmax<S: Scalar>(v: &[S]) -> Option<usize> {
    let mut best: Option<(usize, S)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x.partial_cmp(&b) != Some(std::cmp::Ordering::Greater) => {}
            _ if x.is_nan() => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

/// Best phone under the log-posteriors and its exact matrix column.
pub fn nearest_phone_features<S: Scalar>(phi: &[S], m: &FeatureMatrix) -> Result<(usize, Vec<bool>)> {
    let scores = phone_log_posteriors(phi, m)?;
    let j = argmax(&scores).ok_or_else(|| Error::EmptyInput("matrix has no phone columns".into()))?;
    Ok((j, m.column(j).to_vec()))
}

/// True when a posterior row signals end of sequence: eos bit above 0.5 or
/// the eos column scores best.
pub fn is_eos_row<S: Scalar>(phi: &[S], m: &FeatureMatrix) -> Result<bool> {
    let (Some(f), Some(p)) = (m.eos_feature(), m.eos_phone()) else {
        return Ok(false);
    };
    if phi.get(f).is_some_and(|&v| v > S::of(0.5)) {
        return Ok(true);
    }
    Ok(nearest_phone_features(phi, m)?.0 == p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> FeatureMatrix {
        FeatureMatrix::from_columns(
            &["f1", "f2"],
            &["a", "b", "c"],
            vec![vec![true, false], vec![false, true], vec![true, true]],
        )
        .unwrap()
    }

    /// log of prod_i phi^m (1 - phi)^(1 - m), same clamping.
    fn bernoulli_oracle(phi: &[f64], m: &FeatureMatrix) -> Vec<f64> {
        (0..m.n_phones())
            .map(|j| {
                let mut prod = 1.0f64;
                for (i, &p) in phi.iter().enumerate() {
                    let p = p.clamp(POSTERIOR_EPSILON, 1.0 - POSTERIOR_EPSILON);
                    prod *= if m.bit(i, j) { p } else { 1.0 - p };
                }
                prod.ln()
            })
            .collect()
    }

    #[test]
    fn toy_values_match_oracle() {
        let m = toy();
        let p = phone_log_posteriors(&[0.9f64, 0.2], &m).unwrap();
        let expected = [-0.328504066972036, -3.912023005428146, -1.714798428091927];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(bernoulli_oracle(&[0.9, 0.2], &m).len(), 3);
        let (j, col) = nearest_phone_features(&[0.9f64, 0.2], &m).unwrap();
        assert_eq!((j, col), (0, vec![true, false]));
    }

    #[test]
    fn exact_column_is_fixed_point() {
        let m = toy();
        let (j, col) = nearest_phone_features(&m.column_as::<f64>(1), &m).unwrap();
        assert_eq!(j, 1);
        assert_eq!(col, m.column(1));
    }

    #[test]
    fn one_hot_margin_is_k_times_log_ratio() {
        let m = standard_matrix(&PhoneInventory::timit39()).unwrap();
        let j = m.phone_index("s").unwrap();
        let p = phone_log_posteriors(&m.column_as::<f64>(j), &m).unwrap();
        let step = (1.0 - POSTERIOR_EPSILON).ln() - POSTERIOR_EPSILON.ln();
        assert_eq!(argmax(&p), Some(j));
        for k in 0..m.n_phones() {
            let expected = m.hamming(j, k) as f64 * step;
            assert!((p[j] - p[k] - expected).abs() < 1e-6, "{k}");
        }
    }

    #[test]
    fn uninformative_posterior_scores_uniformly() {
        let m = toy();
        let p = phone_log_posteriors(&[0.5f64, 0.5], &m).unwrap();
        for v in &p {
            assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        }
        assert_eq!(argmax(&p), Some(0));
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let m = FeatureMatrix::from_columns(&["f"], &["x", "y"], vec![vec![true], vec![false]]).unwrap();
        assert_eq!(nearest_phone_features(&[0.5f64], &m).unwrap().0, 0);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        assert!(matches!(phone_log_posteriors(&[0.1f64], &toy()), Err(Error::Shape(_))));
    }

    #[test]
    fn toy_phonetic_inventory_builds() {
        let feats = FeatureInventory::new(&[
            "vowel",
            "open",
            "consonantal",
            "fricative",
            "alveolar",
            "sibilant fric.",
            "silence",
        ])
        .unwrap();
        let phones = PhoneInventory::new(&["a", "s", "sil"], "sil").unwrap();
        let mut map = BTreeMap::new();
        map.insert("a".to_string(), vec!["vowel".to_string(), "open".to_string()]);
        map.insert(
            "s".to_string(),
            ["consonantal", "fricative", "alveolar", "sibilant fric."]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        );
        map.insert("sil".to_string(), vec!["silence".to_string()]);
        let table = FeatureTable {
            features: feats.names().to_vec(),
            map,
        };
        let m = build_feature_matrix(&feats, &phones, &table).unwrap();
        assert_eq!(m.n_phones(), 3);

        let mut bad = table.clone();
        bad.map.remove("s");
        assert!(matches!(
            build_feature_matrix(&feats, &phones, &bad),
            Err(Error::IncompleteTable(_))
        ));
        let mut bad = table.clone();
        bad.map.get_mut("sil").unwrap().push("open".into());
        assert!(matches!(
            build_feature_matrix(&feats, &phones, &bad),
            Err(Error::InvalidTable(_))
        ));
        let mut bad = table;
        bad.map.get_mut("a").unwrap().push("consonantal".into());
        assert!(matches!(
            build_feature_matrix(&feats, &phones, &bad),
            Err(Error::InvalidTable(_))
        ));
    }

    #[test]
    fn identical_n_ng_is_degenerate() {
        let mut table = FeatureTable::standard();
        let n = table.map["n"].clone();
        table.map.insert("ng".into(), n);
        let r = build_feature_matrix(&FeatureInventory::standard(), &PhoneInventory::timit39(), &table);
        match r {
            Err(Error::DegenerateMatrix(a, b)) => {
                let mut pair = [a, b];
                pair.sort();
                assert_eq!(pair, ["n".to_string(), "ng".to_string()]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_feature_names_rejected() {
        let text = r#"{"features": ["a"], "map": {"x": ["b"]}}"#;
        assert!(matches!(FeatureTable::from_json(text), Err(Error::InvalidTable(_))));
    }

    #[test]
    fn shipped_matrix_columns_pairwise_distinct() {
        let m = standard_matrix(&PhoneInventory::timit39()).unwrap();
        assert_eq!(m.n_features(), 28);
        assert_eq!(m.n_phones(), 39);
        for a in 0..39 {
            for b in a + 1..39 {
                assert!(m.hamming(a, b) >= 1);
            }
        }
        let sil = m.phone_index("sil").unwrap();
        let s = m.feature_index(SILENCE).unwrap();
        assert!((0..28).all(|i| m.bit(i, sil) == (i == s)));
    }

    #[test]
    fn eos_augmentation() {
        let m = toy().with_eos();
        assert_eq!((m.n_features(), m.n_phones()), (3, 4));
        assert_eq!(m.column(3), &[false, false, true]);
        assert_eq!(m.column(0), &[true, false, false]);
        assert_eq!(m.with_eos(), m);
        assert!(is_eos_row(&[0.1f64, 0.1, 0.9], &m).unwrap());
        assert!(!is_eos_row(&[0.9f64, 0.1, 0.1], &m).unwrap());
    }

    #[test]
    fn remap_to_same_and_superset() {
        let inv = PhoneInventory::timit39();
        let m = standard_matrix(&inv).unwrap().with_eos();
        let table = FeatureTable::standard();
        let again = remap_inventory(&m, &inv, &table).unwrap();
        assert_eq!(again, m);

        // permuted inventory: same column set
        let mut syms = inv.symbols().to_vec();
        syms.reverse();
        let perm = PhoneInventory::new(&syms, "sil").unwrap();
        let pm = remap_inventory(&m, &perm, &table).unwrap();
        for (j, s) in syms.iter().enumerate() {
            assert_eq!(pm.column(j), m.column(m.phone_index(s).unwrap()));
        }

        // superset: add a voiced velar fricative
        let mut super_table = table.clone();
        super_table.map.insert(
            "gh".into(),
            ["consonantal", "voiced", "continuant", "fricative", "non-sibilant fric.", "velar"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        );
        let mut syms = inv.symbols().to_vec();
        syms.push("gh".into());
        let sup = PhoneInventory::new(&syms, "sil").unwrap();
        let sm = remap_inventory(&m, &sup, &super_table).unwrap();
        assert_eq!(sm.n_features(), m.n_features());
        assert_eq!(sm.n_phones(), m.n_phones() + 1);
        let gh = sm.phone_index("gh").unwrap();
        assert_eq!(nearest_phone_features(&sm.column_as::<f64>(gh), &sm).unwrap().0, gh);

        let mut degenerate = table;
        degenerate.map.insert("gh".into(), degenerate.map["g"].clone());
        assert!(matches!(
            remap_inventory(&m, &sup, &degenerate),
            Err(Error::DegenerateMatrix(_, _))
        ));
    }

    fn random_matrix(seed: u64, features: usize, phones: usize) -> FeatureMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..features).map(|i| format!("f{i}")).collect();
        let pnames: Vec<String> = (0..phones).map(|i| format!("p{i}")).collect();
        loop {
            let cols: Vec<Vec<bool>> = (0..phones)
                .map(|_| (0..features).map(|_| rng.gen_bool(0.4)).collect())
                .collect();
            if let Ok(m) = FeatureMatrix::from_columns(&names, &pnames, cols) {
                return m;
            }
        }
    }

    proptest! {
        #[test]
        fn matches_bernoulli_oracle(seed in any::<u64>(), f in 6usize..20, p in 2usize..30,
                                    phi in proptest::collection::vec(0.0f64..=1.0, 20)) {
            let m = random_matrix(seed, f, p);
            let phi = &phi[..f];
            let fast = phone_log_posteriors(phi, &m).unwrap();
            let slow = bernoulli_oracle(phi, &m);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn monotone_in_each_posterior(seed in any::<u64>(), i in 0usize..8,
                                      phi in proptest::collection::vec(0.01f64..0.98, 8)) {
            let m = random_matrix(seed, 8, 10);
            let base = phone_log_posteriors(&phi, &m).unwrap();
            let mut up = phi.clone();
            up[i] += 0.01;
            let raised = phone_log_posteriors(&up, &m).unwrap();
            for j in 0..10 {
                if m.bit(i, j) {
                    prop_assert!(raised[j] > base[j]);
                } else {
                    prop_assert!(raised[j] < base[j]);
                }
            }
        }

        #[test]
        fn nearest_is_a_column_and_shift_invariant(seed in any::<u64>(),
                                                   phi in proptest::collection::vec(0.0f64..=1.0, 12),
                                                   shift in -50.0f64..50.0) {
            let m = random_matrix(seed, 12, 15);
            let (j, col) = nearest_phone_features(&phi, &m).unwrap();
            prop_assert_eq!(m.find_column(&col), Some(j));
            let shifted: Vec<f64> = phone_log_posteriors(&phi, &m).unwrap().iter().map(|v| v + shift).collect();
            prop_assert_eq!(argmax(&shifted), Some(j));
        }
    }
}
