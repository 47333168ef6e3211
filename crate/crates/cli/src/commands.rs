use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use afd_core::align::project_segments;
use afd_core::artic::{standard_matrix, FeatureInventory};
use afd_core::binio::{read_matrix, write_matrix, ATTENTION_MAGIC, POSTERIORGRAM_MAGIC};
use afd_core::corpus::{
    generate_synthetic, load_corpus, read_audio, save_corpus, synthetic_inventory, timit_index, Split, SynthConfig,
    TIMIT_ROOT_VAR,
};
use afd_core::decoder::{decode_indicators, decode_phones_greedy, DecodeResult};
use afd_core::eval::{edit_alignment, sorted_confusions, EditOp, EvalReport, Scorer};
use afd_core::experiment::{
    apply_stats, decode_utterance, evaluate, featurize as featurize_audio, featurize_corpus, featurize_timit, feature_mat, normalize, run,
    ExperimentConfig, Prepared, TargetSpace,
};
use afd_core::frontend::{fit_normalization, read_afp, write_afp, FeatureKind, NormalizationStats};
use afd_core::nnet::gradcheck::standard_suite;
use afd_core::nnet::{Feedback, Model, Tasks};
use afd_core::phoneset::{serialize_phn, PhoneInventory, TimedSegment};
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::svg::{attention_svg, posteriorgram_svg};
use crate::transcript::{self, format_line};
use crate::{Failure, Source};

const EXPERIMENT_FILE: &str = "experiment.json";
const NORM_FILE: &str = "norm.json";
const PHONES_FILE: &str = "phones.json";
const LOG_FILE: &str = "train_log.json";

/// Writes to stdout; a closed pipe (`afd eval ... | head`) is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn parse_split(s: &str) -> Result<Option<Split>, Failure> {
    match s {
        "all" => Ok(None),
        "train" => Ok(Some(Split::Train)),
        "dev" => Ok(Some(Split::Dev)),
        "test" | "test_core" => Ok(Some(Split::TestCore)),
        _ => Err(usage(format!("unknown split `{s}` (train, dev, test_core, all)"))),
    }
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Dev => "dev",
        Split::TestCore => "test_core",
    }
}

/// Featurized utterances from one source, plus the target space when the
/// source carries markup.
fn load_source(source: &Source, config: &ExperimentConfig) -> Result<(Vec<Prepared>, Option<TargetSpace>), Failure> {
    let chosen = usize::from(source.corpus.is_some()) + usize::from(source.timit) + usize::from(!source.audio.is_empty());
    if chosen != 1 {
        return Err(usage("give exactly one of --corpus, --timit, --audio"));
    }
    if let Some(dir) = &source.corpus {
        let corpus = load_corpus(dir)?;
        let (data, space) = featurize_corpus(&corpus, config)?;
        return Ok((data, Some(space)));
    }
    if source.timit {
        let root = timit_root()?;
        let (data, space) = featurize_timit(&timit_index(&root)?, config)?;
        return Ok((data, Some(space)));
    }
    let data = source
        .audio
        .par_iter()
        .map(|path| {
            let id = path.file_stem().map_or("utt".into(), |s| s.to_string_lossy().into_owned());
            let bytes = fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            let audio = read_audio(&bytes, &id)?;
            Ok(Prepared {
                id,
                split: Split::Train,
                features: featurize_audio(&audio, config)?,
                targets: Vec::new(),
                segments: None,
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    Ok((data, None))
}

fn timit_root() -> Result<PathBuf, Failure> {
    std::env::var_os(TIMIT_ROOT_VAR)
        .map(PathBuf::from)
        .ok_or_else(|| usage(format!("--timit needs {TIMIT_ROOT_VAR} to be set")))
}

fn record_source(m: &mut RunManifest, source: &Source) -> Result<(), Failure> {
    if let Some(c) = &source.corpus {
        m.input(c)?;
    }
    if source.timit {
        m.input(&timit_root()?)?;
    }
    for a in &source.audio {
        m.input(a)?;
    }
    Ok(())
}

pub fn featurize(
    source: &Source,
    config: Option<&Path>,
    kind: Option<&str>,
    no_deltas: bool,
    out: &Path,
    argv: &[String],
) -> Result<(), Failure> {
    let mut cfg: ExperimentConfig = match config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(k) = kind {
        cfg.features = k.parse::<FeatureKind>().map_err(|e| usage(e.to_string()))?;
    }
    if no_deltas {
        cfg.deltas = false;
    }
    let (data, _) = load_source(source, &cfg)?;
    fs::create_dir_all(out)?;
    let mut m = RunManifest::new("featurize", argv);
    m.config = serde_json::to_value(&cfg)?;
    record_source(&mut m, source)?;
    for p in &data {
        let path = out.join(format!("{}.afp", p.id));
        fs::write(&path, write_afp(&p.features))?;
        m.output(&path);
    }
    m.write_into(out)?;
    eprintln!("featurized {} utterances into {}", data.len(), out.display());
    Ok(())
}

pub fn fit_norm(features: &Path, ids: Option<&Path>, out: &Path, argv: &[String]) -> Result<(), Failure> {
    let keep: Option<Vec<String>> = match ids {
        Some(p) => Some(fs::read_to_string(p)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()),
        None => None,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(features)
        .map_err(|e| Failure::Data(format!("{}: {e}", features.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "afp"))
        .filter(|p| {
            keep.as_ref().is_none_or(|k| {
                p.file_stem().is_some_and(|s| k.iter().any(|id| id.as_str() == s.to_string_lossy()))
            })
        })
        .collect();
    files.sort();
    let corpus = files
        .iter()
        .map(|p| Ok(read_afp(&fs::read(p)?)?))
        .collect::<Result<Vec<_>, Failure>>()?;
    let stats = fit_normalization(&corpus)?;
    write_json(out, &stats)?;
    let mut m = RunManifest::new("fit-norm", argv);
    for f in &files {
        m.input(f)?;
    }
    m.output(out);
    m.write_to(&out.with_extension("run.json"))?;
    eprintln!("fitted {} dims over {} frames", stats.mean.len(), stats.frame_count);
    Ok(())
}

pub fn synth_corpus(out: &Path, seed: u64, utterances: usize, phones: usize, argv: &[String]) -> Result<(), Failure> {
    let inv = synthetic_inventory(phones).map_err(|e| usage(e.to_string()))?;
    let config = SynthConfig::new(seed, utterances);
    let corpus = generate_synthetic(&config, &inv, &standard_matrix(&inv)?)?;
    save_corpus(&corpus, out)?;
    let mut m = RunManifest::new("synth-corpus", argv);
    m.seed = Some(seed);
    m.config = serde_json::to_value(&config)?;
    m.output(out);
    m.write_into(out)?;
    eprintln!("wrote {} utterances over {} phones to {}", utterances, phones, out.display());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Experiment config (JSON); flags below override its scalars.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    source: Source,
    /// Output directory for the checkpoint and reports.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Indicator feedback: mapped (m) or sampled (s).
    #[arg(long)]
    feedback: Option<String>,
    /// Evaluate on the training set every N epochs.
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PhoneList {
    phones: Vec<String>,
    silence: String,
}

/// A trained model directory.
struct Trained {
    model: Model<f32>,
    config: ExperimentConfig,
    stats: NormalizationStats,
    inventory: PhoneInventory,
}

fn load_trained(dir: &Path) -> Result<Trained, Failure> {
    let (model, _) = Model::<f32>::load(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    let config: ExperimentConfig = read_json(&dir.join(EXPERIMENT_FILE))?;
    let stats: NormalizationStats = read_json(&dir.join(NORM_FILE))?;
    let list: PhoneList = read_json(&dir.join(PHONES_FILE))?;
    let inventory = PhoneInventory::new(&list.phones, &list.silence)?;
    Ok(Trained {
        model,
        config,
        stats,
        inventory,
    })
}

/// Source utterances normalized with the model's statistics, in the
/// model's target space.
fn model_inputs(t: &Trained, source: &Source, split: Option<Split>) -> Result<(Vec<Prepared>, TargetSpace), Failure> {
    let (data, space) = load_source(source, &t.config)?;
    let space = match space {
        Some(s) if s.inventory != t.inventory => {
            return Err(Failure::Data("corpus phone set differs from the model's".into()));
        }
        Some(s) => s,
        None => TargetSpace::for_corpus(&t.inventory)?,
    };
    let data: Vec<Prepared> = data.into_iter().filter(|p| split.is_none_or(|s| p.split == s)).collect();
    if data.is_empty() {
        return Err(Failure::Data("no utterances selected".into()));
    }
    Ok((apply_stats(data, &t.stats)?, space))
}

pub fn train(a: &TrainArgs, argv: &[String]) -> Result<(), Failure> {
    let mut cfg: ExperimentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.lr {
        cfg.model.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = &a.feedback {
        cfg.model.feedback = v.parse::<Feedback>().map_err(|e| usage(e.to_string()))?;
    }
    if let Some(v) = a.eval_every {
        cfg.train.eval_every = v;
    }
    if !a.source.audio.is_empty() {
        return Err(usage("training needs markup: use --corpus or --timit"));
    }
    let (data, space) = load_source(&a.source, &cfg)?;
    let space = space.expect("corpus sources carry markup");
    let (data, stats) = normalize(data)?;
    cfg.resolve(&space);
    cfg.model.validate()?;
    let (model, outcome) = run(&cfg, &data, &space, |log| {
        let extra = match (log.per, log.min_feature_acc) {
            (Some(p), Some(f)) => format!("  train PER {p:.4}  min feature acc {f:.4}"),
            (Some(p), None) => format!("  train PER {p:.4}"),
            _ => String::new(),
        };
        eprintln!("epoch {:>4}  loss {:.4}  {:.1}s{extra}", log.epoch, log.mean_loss, log.seconds);
    })?;
    fs::create_dir_all(&a.out)?;
    model.save(&a.out, cfg.train.seed)?;
    write_json(&a.out.join(EXPERIMENT_FILE), &cfg)?;
    write_json(&a.out.join(NORM_FILE), &stats)?;
    let list = PhoneList {
        phones: space.inventory.symbols().to_vec(),
        silence: space.inventory.symbol(space.inventory.sil()).to_string(),
    };
    write_json(&a.out.join(PHONES_FILE), &list)?;
    write_json(&a.out.join(LOG_FILE), &outcome)?;
    let mut m = RunManifest::new("train", argv);
    m.seed = Some(cfg.train.seed);
    m.config = serde_json::to_value(&cfg)?;
    record_source(&mut m, &a.source)?;
    for f in ["model.json", "model.bin", EXPERIMENT_FILE, NORM_FILE, PHONES_FILE, LOG_FILE] {
        m.output(&a.out.join(f));
    }
    for split in [Split::Train, Split::Dev, Split::TestCore] {
        let part: Vec<Prepared> = data.iter().filter(|p| p.split == split).cloned().collect();
        if part.is_empty() {
            continue;
        }
        let (report, _) = evaluate(&model, &part, &space, cfg.model.feedback)?;
        let path = a.out.join(format!("report_{}.json", split_name(split)));
        write_json(&path, &report)?;
        m.output(&path);
        emit(&format!("[{}]\n{}\n", split_name(split), report.to_table()));
    }
    m.write_into(&a.out)?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    /// Trained model directory.
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    #[command(flatten)]
    source: Source,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// phones, mapped, sampled or joint (default: every head the model has).
    #[arg(long)]
    mode: Option<String>,
    /// Stochastic sampled-mode feedback from this seed.
    #[arg(long)]
    sample_seed: Option<u64>,
    #[arg(long, default_value = "all")]
    split: String,
}

struct Decoded {
    id: String,
    hyp: Vec<usize>,
    reference: Vec<usize>,
    attention: DecodeResult<f32>,
    indicators: Option<DecodeResult<f32>>,
}

pub fn decode(a: &DecodeArgs, argv: &[String]) -> Result<(), Failure> {
    let t = load_trained(&a.model)?;
    let (data, space) = model_inputs(&t, &a.source, parse_split(&a.split)?)?;
    let tasks = t.model.config.tasks;
    let mode = a.mode.clone().unwrap_or_else(|| {
        match tasks {
            Tasks::Phones => "phones",
            Tasks::Features => "mapped",
            Tasks::Joint => "joint",
        }
        .to_string()
    });
    let (use_phones, feedback) = match mode.as_str() {
        "phones" => (true, None),
        "mapped" => (false, Some(Feedback::Mapped)),
        "sampled" => (false, Some(Feedback::Sampled)),
        "joint" => (true, Some(t.model.config.feedback)),
        _ => return Err(usage(format!("unknown mode `{mode}` (phones, mapped, sampled, joint)"))),
    };
    if (use_phones && !tasks.has_phones()) || (feedback.is_some() && !tasks.has_features()) {
        return Err(usage(format!("mode `{mode}` needs a head the model does not have")));
    }
    let decoded = data
        .par_iter()
        .map(|p| {
            let x = feature_mat(&p.features);
            let phones = if use_phones {
                Some(decode_phones_greedy(&t.model, &x, &p.id, None)?)
            } else {
                None
            };
            let indicators = match feedback {
                Some(f) => Some(decode_indicators(&t.model, &x, &p.id, &space.matrix, f, a.sample_seed, None)?),
                None => None,
            };
            let main = phones.or_else(|| indicators.clone()).expect("some head");
            Ok(Decoded {
                id: p.id.clone(),
                hyp: main.phones.as_ref().map(|s| s.phones.clone()).unwrap_or_default(),
                reference: p.targets.clone(),
                attention: main,
                indicators,
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    fs::create_dir_all(&a.out)?;
    let mut m = RunManifest::new("decode", argv);
    m.input(&a.model)?;
    record_source(&mut m, &a.source)?;
    let (mut hyp_text, mut ref_text, mut ids) = (String::new(), String::new(), String::new());
    for d in &decoded {
        hyp_text.push_str(&format_line(&space.inventory.decode(&d.hyp)));
        if !d.reference.is_empty() {
            ref_text.push_str(&format_line(&space.inventory.decode(&d.reference)));
        }
        ids.push_str(&d.id);
        ids.push('\n');
        let att = a.out.join(format!("{}.att", d.id));
        fs::write(&att, write_matrix(ATTENTION_MAGIC, &d.attention.attention.to_f32()))?;
        m.output(&att);
        if let Some(pg) = d.indicators.as_ref().and_then(|r| r.posteriorgram.as_ref()) {
            let ipg = a.out.join(format!("{}.ipg", d.id));
            fs::write(&ipg, write_matrix(POSTERIORGRAM_MAGIC, &pg.to_f32()?))?;
            m.output(&ipg);
        }
    }
    for (name, text) in [("hyp.txt", &hyp_text), ("ids.txt", &ids)] {
        fs::write(a.out.join(name), text)?;
        m.output(&a.out.join(name));
    }
    if !ref_text.is_empty() {
        fs::write(a.out.join("ref.txt"), ref_text)?;
        m.output(&a.out.join("ref.txt"));
    }
    m.write_into(&a.out)?;
    let truncated = decoded.iter().filter(|d| d.attention.truncated).count();
    eprintln!("decoded {} utterances ({truncated} hit the length limit)", decoded.len());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct AlignArgs {
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    #[command(flatten)]
    source: Source,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value = "all")]
    split: String,
}

pub fn align(a: &AlignArgs, argv: &[String]) -> Result<(), Failure> {
    let t = load_trained(&a.model)?;
    let (data, space) = model_inputs(&t, &a.source, parse_split(&a.split)?)?;
    let feedback = t.model.config.feedback;
    let r = t.model.reduction_factor();
    let step = t.config.frontend.step_samples();
    let names = space.matrix.with_eos().phone_names().to_vec();
    fs::create_dir_all(&a.out)?;
    let mut m = RunManifest::new("align", argv);
    m.input(&a.model)?;
    record_source(&mut m, &a.source)?;
    let written = data
        .par_iter()
        .map(|p| {
            let out = decode_utterance(&t.model, p, &space, feedback)?;
            let mut files = Vec::new();
            if let Some(frames) = &out.frames {
                let path = a.out.join(format!("{}.frames", p.id));
                fs::write(&path, frames.to_lines(&names))?;
                files.push(path);
            }
            if let Some(segs) = &p.segments {
                let (symbols, att) = match (&out.indicators, &out.phones) {
                    (Some(ind), _) => (ind.phones.as_ref().map(|s| s.phones.clone()).unwrap_or_default(), &ind.attention),
                    (None, Some(ph)) => (ph.phones.as_ref().map(|s| s.phones.clone()).unwrap_or_default(), &ph.attention),
                    (None, None) => return Err(Failure::Data("model has no output head".into())),
                };
                if !symbols.is_empty() {
                    let att = att.truncated(symbols.len());
                    let labels = project_segments(&att, &symbols, segs, r, step)?;
                    let predicted: Vec<TimedSegment> = segs
                        .iter()
                        .zip(labels)
                        .map(|(s, phone)| TimedSegment { phone, ..*s })
                        .collect();
                    let path = a.out.join(format!("{}.seg.PHN", p.id));
                    fs::write(&path, serialize_phn(&predicted, &space.inventory))?;
                    files.push(path);
                }
            }
            Ok(files)
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    for f in written.iter().flatten() {
        m.output(f);
    }
    m.write_into(&a.out)?;
    eprintln!("aligned {} utterances", data.len());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Hypothesis transcript (with --ref).
    #[arg(long, value_name = "FILE")]
    hyp: Option<PathBuf>,
    /// Reference transcript (with --hyp).
    #[arg(long = "ref", value_name = "FILE")]
    reference: Option<PathBuf>,
    /// Score a trained model on a corpus instead.
    #[arg(long, value_name = "DIR")]
    model: Option<PathBuf>,
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "all")]
    split: String,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// PER and confusions over raw symbol strings; feature accuracies too when
/// every symbol belongs to the folded 39-phone set.
fn score_transcripts(hyp: &Path, reference: &Path) -> Result<EvalReport, Failure> {
    let h = transcript::parse(&fs::read_to_string(hyp).map_err(|e| Failure::Data(format!("{}: {e}", hyp.display())))?);
    let r = transcript::parse(&fs::read_to_string(reference).map_err(|e| Failure::Data(format!("{}: {e}", reference.display())))?);
    let pairs = transcript::pair(&h, &r)?;
    if pairs.is_empty() {
        return Err(Failure::Data(afd_core::Error::EmptyReference.to_string()));
    }
    let inv = PhoneInventory::timit39();
    let known = pairs.iter().all(|(_, h, r)| h.iter().chain(r).all(|s| inv.index_of(s).is_some()));
    if known {
        let matrix = standard_matrix(&inv)?;
        let mut scorer = Scorer::new(&matrix);
        for (_, h, r) in &pairs {
            let (h, r) = (inv.encode(h)?, inv.encode(r)?);
            scorer.add(&h, &r)?;
            scorer.add_features(&h, &afd_core::eval::columns_without_eos(&matrix, &h), &r)?;
        }
        let mut report = scorer.report()?;
        report.indicator_per = None;
        return Ok(report);
    }
    let mut symbols: Vec<String> = pairs.iter().flat_map(|(_, h, r)| h.iter().chain(r).cloned()).collect();
    symbols.sort();
    symbols.dedup();
    let index = |s: &String| symbols.binary_search(s).expect("collected above");
    let (mut edits, mut length) = (0, 0);
    let mut counts = BTreeMap::new();
    for (_, h, r) in &pairs {
        if r.is_empty() {
            return Err(afd_core::Error::EmptyReference.into());
        }
        let al = edit_alignment(h, r);
        edits += al.distance();
        length += r.len();
        for op in &al.ops {
            if let EditOp::Substitute { hyp, reference } = *op {
                *counts.entry((index(&r[reference]), index(&h[hyp]))).or_insert(0) += 1;
            }
        }
    }
    Ok(EvalReport {
        per: edits as f64 / length as f64,
        utterances: pairs.len(),
        reference_length: length,
        edits,
        indicator_per: None,
        per_feature_sequence_acc: BTreeMap::new(),
        per_feature_frame_acc: BTreeMap::new(),
        per_feature_segment_acc: BTreeMap::new(),
        confusions: sorted_confusions(&counts, &symbols),
    })
}

pub fn eval(a: &EvalArgs, argv: &[String]) -> Result<(), Failure> {
    let mut m = RunManifest::new("eval", argv);
    let report = match (&a.hyp, &a.reference, &a.model) {
        (Some(h), Some(r), None) => {
            m.input(h)?;
            m.input(r)?;
            score_transcripts(h, r)?
        }
        (None, None, Some(dir)) => {
            let t = load_trained(dir)?;
            let (data, space) = model_inputs(&t, &a.source, parse_split(&a.split)?)?;
            if data.iter().any(|p| p.targets.is_empty()) {
                return Err(usage("model scoring needs a corpus with markup"));
            }
            m.input(dir)?;
            record_source(&mut m, &a.source)?;
            evaluate(&t.model, &data, &space, t.model.config.feedback)?.0
        }
        _ => return Err(usage("give --hyp and --ref, or --model with a corpus source")),
    };
    if a.json {
        emit(&(serde_json::to_string_pretty(&report)? + "\n"));
    } else {
        emit(&report.to_table());
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
        m.output(out);
        m.write_to(&out.with_extension("run.json"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// attention or posteriorgram.
    #[arg(long)]
    kind: String,
    /// ATT1 or IPG1 file.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Row labels for attention plots, space-separated.
    #[arg(long)]
    labels: Option<String>,
    /// Reference phones, space-separated; marks their active features.
    #[arg(long)]
    reference: Option<String>,
}

pub fn plot(a: &PlotArgs, argv: &[String]) -> Result<(), Failure> {
    let bytes = fs::read(&a.input).map_err(|e| Failure::Data(format!("{}: {e}", a.input.display())))?;
    let words = |s: &Option<String>| -> Vec<String> { s.as_deref().unwrap_or("").split_whitespace().map(String::from).collect() };
    let svg = match a.kind.as_str() {
        "attention" => attention_svg(&read_matrix(ATTENTION_MAGIC, &bytes)?, &words(&a.labels)),
        "posteriorgram" => {
            let pg = read_matrix(POSTERIORGRAM_MAGIC, &bytes)?;
            let mut names = FeatureInventory::standard().names().to_vec();
            if pg.cols == names.len() + 1 {
                names.push("eos".into());
            }
            let truth = match &a.reference {
                Some(_) => {
                    let inv = PhoneInventory::timit39();
                    let matrix = standard_matrix(&inv)?;
                    let cols = inv.encode(&words(&a.reference))?;
                    Some(cols.iter().map(|&c| matrix.column(c).to_vec()).collect::<Vec<_>>())
                }
                None => None,
            };
            posteriorgram_svg(&pg, &names, truth.as_deref())
        }
        k => return Err(usage(format!("unknown plot kind `{k}` (attention, posteriorgram)"))),
    };
    fs::write(&a.out, svg)?;
    let mut m = RunManifest::new("plot", argv);
    m.input(&a.input)?;
    m.output(&a.out);
    m.write_to(&a.out.with_extension("run.json"))?;
    Ok(())
}

pub fn gradcheck(seed: u64, epsilon: f64, json: bool) -> Result<(), Failure> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(usage("--epsilon must be positive"));
    }
    let checks = standard_suite(epsilon, seed)?;
    if json {
        emit(&(serde_json::to_string_pretty(&checks)? + "\n"));
    } else {
        for c in &checks {
            emit(&format!(
                "{:<4} {:<40} max rel {:.2e} (tol {:.0e})  max abs {:.2e}  {} coords\n",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.report.max_rel_error,
                c.tolerance,
                c.report.max_abs_error,
                c.report.coordinates
            ));
        }
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("gradient check failed: {}", failed.join(", "))))
    }
}
