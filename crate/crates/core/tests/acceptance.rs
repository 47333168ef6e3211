//! Acceptance run: one PASS/FAIL line per criterion, with measured values.
//!
//! `cargo test -p afd-core --test acceptance` prints the lines.
//! The TIMIT run is data-gated and lives in the ignored `timit_full_run`.

use std::time::{Duration, Instant};

use afd_core::align::{frame_owners, hard_align_dtw, AlignmentPath};
use afd_core::artic::{argmax, nearest_phone_features, phone_log_posteriors, standard_matrix, FeatureMatrix, POSTERIOR_EPSILON};
use afd_core::corpus::{generate_synthetic, synthetic_inventory, SynthConfig, TIMIT_ROOT_VAR};
use afd_core::eval::{edit_alignment, phone_error_rate};
use afd_core::experiment::{evaluate, prepare_corpus, run, ExperimentConfig};
use afd_core::frontend::{
    add_deltas, dct2_ortho, read_afp, write_afp, AcousticFeatures, AudioBuffer, FeatureKind, Frontend,
};
use afd_core::nnet::gradcheck::standard_suite;
use afd_core::nnet::model::AttentionMatrix;
use afd_core::nnet::{Feedback, Mat, Model, ModelConfig};
use afd_core::phoneset::PhoneInventory;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// Straight to the stdout handle, so the lines survive libtest's capture and
/// show up in a plain `cargo test` log.
fn line(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
    let _ = out.flush();
}

fn report(id: &str, name: &str, limit: Option<Duration>, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut o = check();
    let took = start.elapsed();
    if let Some(limit) = limit {
        if took > limit {
            o.passed = false;
            o.detail.push_str(&format!("; over the {:.0}s budget", limit.as_secs_f64()));
        }
    }
    line(&format!(
        "[{}] {id} {name}: {} ({:.2}s)",
        if o.passed { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64()
    ));
    o.passed
}

// ---- phone posteriors from feature posteriors ----

fn random_matrix(rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let features = rng.gen_range(1..=29usize);
    let cap = if features >= 6 { 45 } else { (1usize << features).min(45) };
    let phones = rng.gen_range(1..=cap);
    let mut columns: Vec<Vec<bool>> = Vec::new();
    while columns.len() < phones {
        let c: Vec<bool> = (0..features).map(|_| rng.gen_bool(0.4)).collect();
        if !columns.contains(&c) {
            columns.push(c);
        }
    }
    let fnames: Vec<String> = (0..features).map(|i| format!("f{i}")).collect();
    let pnames: Vec<String> = (0..phones).map(|j| format!("p{j}")).collect();
    FeatureMatrix::from_columns(&fnames, &pnames, columns).unwrap()
}

/// log of prod phi^m (1 - phi)^(1 - m), clamped the same way.
fn bernoulli_oracle(phi: &[f64], m: &FeatureMatrix) -> Vec<f64> {
    let clamp = |p: f64| p.clamp(POSTERIOR_EPSILON, 1.0 - POSTERIOR_EPSILON);
    (0..m.n_phones())
        .map(|j| {
            let product: f64 = phi
                .iter()
                .enumerate()
                .map(|(i, &p)| if m.bit(i, j) { clamp(p) } else { 1.0 - clamp(p) })
                .product();
            product.ln()
        })
        .collect()
}

fn random_phi(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match rng.gen_range(0..10) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen::<f64>(),
        })
        .collect()
}

fn criterion_posteriors() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst, mut agree) = (0.0f64, 0);
    for _ in 0..1000 {
        let m = random_matrix(&mut rng);
        let phi = random_phi(&mut rng, m.n_features());
        let got = phone_log_posteriors(&phi, &m).unwrap();
        let want = bernoulli_oracle(&phi, &m);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
        let oracle_best = want
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
            .0;
        agree += usize::from(argmax(&got) == Some(oracle_best));
    }
    outcome(worst < 1e-9 && agree == 1000, format!("max |diff| {worst:.2e} (< 1e-9), argmax agreement {agree}/1000"))
}

// ---- gradients ----

fn criterion_gradients() -> Outcome {
    let checks = standard_suite(1e-5, 0).unwrap();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let worst = checks
        .iter()
        .filter(|c| c.tolerance >= 1e-4)
        .map(|c| c.report.max_rel_error)
        .fold(0.0, f64::max);
    outcome(
        failed.is_empty() && checks.len() == 11,
        format!(
            "{}/{} blocks within tolerance, worst relative error {worst:.2e} (< 1e-4){}",
            checks.len() - failed.len(),
            checks.len(),
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    )
}

// ---- overfit smoke ----

fn smoke_config(feedback: Feedback) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.model.encoder_layers = 3;
    c.model.encoder_units = 32;
    c.model.decoder_units = 64;
    c.model.embedding_dims = 16;
    c.model.learning_rate = 3e-3;
    c.model.dropout_prob = 0.0;
    c.model.feedback = feedback;
    c.train.batch_size = 8;
    c.train.epochs = 200;
    c.train.eval_every = 5;
    c.train.stop_per = Some(0.05);
    c.train.stop_feature_acc = Some(0.95);
    c
}

fn criterion_overfit(feedback: Feedback) -> Outcome {
    let inventory = synthetic_inventory(8).unwrap();
    let corpus = generate_synthetic(&SynthConfig::new(2024, 64), &inventory, &standard_matrix(&inventory).unwrap()).unwrap();
    let config = smoke_config(feedback);
    let (data, _, space) = prepare_corpus(&corpus, &config).unwrap();
    let (model, log) = run(&config, &data, &space, |_| {}).unwrap();
    let (report, _) = evaluate(&model, &data, &space, feedback).unwrap();
    let (worst_name, worst_acc) = report
        .per_feature_sequence_acc
        .iter()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, v)| (k.clone(), *v))
        .unwrap();
    outcome(
        log.epochs <= 200 && report.per < 0.05 && worst_acc > 0.95 && report.per_feature_sequence_acc.len() == 28,
        format!(
            "{} epochs, training PER {:.4} (< 0.05), lowest feature sequence accuracy {worst_acc:.4} ({worst_name}, > 0.95)",
            log.epochs, report.per
        ),
    )
}

// ---- edit distance ----

fn levenshtein(a: &[u8], b: &[u8]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1];
        for (j, y) in b.iter().enumerate() {
            cur.push((prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1));
        }
        prev = cur;
    }
    prev[b.len()]
}

fn criterion_edit_distance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut agree = 0;
    for _ in 0..500 {
        let alphabet = rng.gen_range(1..=10u8);
        let seq = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            let n = rng.gen_range(0..=20);
            (0..n).map(|_| rng.gen_range(0..alphabet)).collect()
        };
        let (h, r) = (seq(&mut rng), seq(&mut rng));
        agree += usize::from(edit_alignment(&h, &r).distance() == levenshtein(&h, &r));
    }
    let abc = ["a", "b", "c"];
    let identical = phone_error_rate(&[(&abc[..], &abc[..])]).unwrap();
    let inserted = phone_error_rate(&[(&abc[..], &["a", "c"][..])]).unwrap();
    let empty = phone_error_rate(&[(&[][..], &abc[..])]).unwrap();
    let hand = identical == 0.0 && inserted == 0.5 && empty == 1.0;
    outcome(
        agree == 500 && hand,
        format!("{agree}/500 pairs match the DP oracle; identical {identical}, [a,b,c] vs [a,c] {inserted}, empty hypothesis {empty}"),
    )
}

// ---- DTW ----

fn random_attention(rng: &mut ChaCha8Rng, steps: usize, frames: usize) -> AttentionMatrix<f64> {
    let rows: Vec<Vec<f64>> = (0..steps)
        .map(|_| {
            let raw: Vec<f64> = (0..frames).map(|_| rng.gen::<f64>().powi(3)).collect();
            let total: f64 = raw.iter().sum::<f64>().max(1e-12);
            raw.iter().map(|v| v / total).collect()
        })
        .collect();
    AttentionMatrix::from_rows(&rows, frames).unwrap()
}

/// Minimum cost over every monotone path, enumerated recursively.
fn exhaustive_min(att: &AttentionMatrix<f64>, d: usize, e: usize) -> f64 {
    let here = 1.0 - att.at(d, e);
    let (last_d, last_e) = (att.steps() - 1, att.frames() - 1);
    if d == last_d && e == last_e {
        return here;
    }
    let mut best = f64::INFINITY;
    if d < last_d {
        best = best.min(exhaustive_min(att, d + 1, e));
    }
    if e < last_e {
        best = best.min(exhaustive_min(att, d, e + 1));
    }
    if d < last_d && e < last_e {
        best = best.min(exhaustive_min(att, d + 1, e + 1));
    }
    here + best
}

fn path_invariants(path: &AlignmentPath, att: &AttentionMatrix<f64>) -> bool {
    let (steps, frames) = (att.steps(), att.frames());
    let first = path.points.first().unwrap();
    let last = path.points.last().unwrap();
    let boundary = (first.decoder_step, first.encoder_frame) == (0, 0)
        && (last.decoder_step, last.encoder_frame) == (steps - 1, frames - 1);
    let moves = path.points.windows(2).all(|w| {
        let dd = w[1].decoder_step - w[0].decoder_step;
        let de = w[1].encoder_frame - w[0].encoder_frame;
        matches!((dd, de), (1, 0) | (0, 1) | (1, 1))
    });
    let walked: f64 = path.points.iter().map(|p| 1.0 - att.at(p.decoder_step, p.encoder_frame)).sum();
    let owners = frame_owners(path);
    boundary
        && moves
        && (walked - path.cost).abs() < 1e-9
        && owners.len() == frames
        && owners.windows(2).all(|w| w[0] <= w[1])
}

fn criterion_dtw() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut optimal = 0;
    for _ in 0..200 {
        let (steps, frames) = (rng.gen_range(1..=6), rng.gen_range(1..=8));
        let att = random_attention(&mut rng, steps, frames);
        let path = hard_align_dtw(&att).unwrap();
        optimal += usize::from((path.cost - exhaustive_min(&att, 0, 0)).abs() < 1e-9 && path_invariants(&path, &att));
    }
    let mut valid = 0;
    for _ in 0..1000 {
        let (steps, frames) = (rng.gen_range(1..=40), rng.gen_range(1..=120));
        let att = random_attention(&mut rng, steps, frames);
        let path = hard_align_dtw(&att).unwrap();
        valid += usize::from(path_invariants(&path, &att) && path.is_valid(steps, frames));
    }
    outcome(
        optimal == 200 && valid == 1000,
        format!("{optimal}/200 small matrices at the exhaustive minimum, {valid}/1000 large paths monotone with fixed endpoints"),
    )
}

// ---- encoder pyramid ----

fn criterion_pyramid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut checked = 0;
    let mut wrong = Vec::new();
    for layers in 1..=4usize {
        let config = ModelConfig {
            encoder_layers: layers,
            encoder_units: 2,
            decoder_units: 2,
            embedding_dims: 2,
            input_dims: 2,
            phone_count: 3,
            feature_count: 2,
            dropout_prob: 0.0,
            ..ModelConfig::default()
        };
        let model = Model::<f64>::new(config, 0).unwrap();
        for t in 1..=500usize {
            let x = Mat::from_vec(t, 2, (0..2 * t).map(|_| rng.gen::<f64>() - 0.5).collect());
            let out = model.encode(&x).unwrap();
            let want = t.div_ceil(1 << (layers - 1));
            checked += 1;
            if out.states.rows != want || out.reduction_factor != 1 << (layers - 1) {
                wrong.push(format!("T={t} L={layers}: {}", out.states.rows));
            }
        }
    }
    outcome(
        wrong.is_empty() && checked == 2000,
        format!("{}/{checked} encoder lengths equal ceil(T / 2^(L-1)){}", checked - wrong.len(), wrong.first().map_or(String::new(), |w| format!("; first miss {w}"))),
    )
}

// ---- front end ----

fn tone(freq: f64) -> AudioBuffer {
    let samples = (0..16_000)
        .map(|i| (8000.0 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin()) as i16)
        .collect();
    AudioBuffer::new(samples, 16_000, "tone")
}

fn direct_dct(x: &[f64], k: usize) -> f64 {
    let n = x.len() as f64;
    let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
    scale * x.iter().enumerate().map(|(i, v)| v * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n).cos()).sum::<f64>()
}

fn criterion_frontend() -> Outcome {
    let fe = Frontend::default();
    let mut notes = Vec::new();

    let centers = fe.filterbank().centers_hz();
    let nearest = (0..centers.len()).min_by(|&a, &b| (centers[a] - 1000.0).abs().total_cmp(&(centers[b] - 1000.0).abs())).unwrap();
    let fb = fe.fbank(&tone(1000.0)).unwrap();
    let peaks_ok = fb.rows().all(|r| argmax(&r[..centers.len()].iter().map(|&v| v as f64).collect::<Vec<_>>()) == Some(nearest));
    notes.push(format!("1 kHz peak in filter {nearest}: {peaks_ok}"));

    let constant = dct2_ortho(&[-3.25; 40], 13);
    let dct_ok = constant[1..].iter().all(|c| c.abs() < 1e-9)
        && (constant[0] - direct_dct(&[-3.25; 40], 0)).abs() < 1e-9;
    let (log_mel, _) = fe.log_mel_frames(&tone(1000.0)).unwrap();
    let mfcc = fe.mfcc(&tone(1000.0)).unwrap();
    let mfcc_ok = (0..mfcc.frames).all(|t| (0..13).all(|k| (mfcc.row(t)[k] as f64 - direct_dct(&log_mel[t], k)).abs() <= 1e-6 * direct_dct(&log_mel[t], k).abs().max(1.0)));
    notes.push(format!("DCT of constant only c0: {dct_ok}, MFCC matches direct DCT: {mfcc_ok}"));

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let frames = 12;
    let (a, b) = (1.75, -0.5);
    let x: Vec<Vec<f64>> = (0..frames).map(|_| (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
    let y: Vec<Vec<f64>> = (0..frames).map(|_| (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
    let mix: Vec<Vec<f64>> = x.iter().zip(&y).map(|(u, v)| u.iter().zip(v).map(|(p, q)| a * p + b * q).collect()).collect();
    let deltas = |rows: &[Vec<f64>]| add_deltas(&AcousticFeatures::from_rows(rows, FeatureKind::Mfcc).unwrap());
    let (dx, dy, dm) = (deltas(&x), deltas(&y), deltas(&mix));
    let linear = (0..dm.data.len()).all(|i| (dm.data[i] as f64 - (a * dx.data[i] as f64 + b * dy.data[i] as f64)).abs() < 1e-4);
    let ramp: Vec<Vec<f64>> = (0..frames).map(|t| vec![0.5 * t as f64]).collect();
    let dr = deltas(&ramp);
    let ramp_ok = (4..frames - 4).all(|t| (dr.row(t)[1] as f64 - 0.5).abs() < 1e-6 && dr.row(t)[2].abs() < 1e-6);
    notes.push(format!("deltas linear: {linear}, ramp slope recovered: {ramp_ok}"));

    let mut random_rows = 0;
    let mut round_trip = true;
    for kind in [FeatureKind::Mfcc, FeatureKind::FbankE] {
        let f = fe.extract(&tone(440.0), kind).unwrap();
        for feats in [f.clone(), add_deltas(&f)] {
            let back = read_afp(&write_afp(&feats)).unwrap();
            round_trip &= back.frames == feats.frames
                && back.dims == feats.dims
                && back.kind == feats.kind
                && back.data.iter().map(|v| v.to_bits()).eq(feats.data.iter().map(|v| v.to_bits()));
            random_rows += feats.frames;
        }
    }
    let bytes = write_afp(&fe.mfcc(&tone(300.0)).unwrap());
    round_trip &= write_afp(&read_afp(&bytes).unwrap()) == bytes;
    notes.push(format!("AFP1 round trip bit-exact over {random_rows} frames: {round_trip}"));

    outcome(peaks_ok && dct_ok && mfcc_ok && linear && ramp_ok && round_trip, notes.join("; "))
}

// ---- feature matrix ----

fn criterion_matrix() -> Outcome {
    let inventory = PhoneInventory::timit39();
    let m = standard_matrix(&inventory).unwrap();
    let n = m.n_phones();
    let distinct = (0..n).all(|a| (a + 1..n).all(|b| m.hamming(a, b) > 0));
    let sil = m.phone_index("sil").unwrap();
    let silence = m.feature_index("silence").unwrap();
    let sil_ok = (0..m.n_features()).all(|i| m.bit(i, sil) == (i == silence))
        && (0..n).all(|j| j == sil || !m.bit(silence, j));

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut closed = 0;
    for _ in 0..10_000 {
        let phi: Vec<f64> = (0..m.n_features()).map(|_| rng.gen()).collect();
        let (j, bits) = nearest_phone_features(&phi, &m).unwrap();
        let oracle = bernoulli_oracle(&phi, &m);
        let best = (0..n).max_by(|&a, &b| oracle[a].total_cmp(&oracle[b]).then(b.cmp(&a))).unwrap();
        closed += usize::from(bits == m.column(j) && m.find_column(&bits) == Some(j) && j == best);
    }
    outcome(
        distinct && sil_ok && closed == 10_000 && n == 39 && m.n_features() == 28,
        format!("{n} phones x {} features, columns distinct: {distinct}, sil column silence-only: {sil_ok}, {closed}/10000 projections land on a column", m.n_features()),
    )
}

#[test]
fn acceptance() {
    let results = [
        report("1", "phone posteriors vs Bernoulli oracle", Some(Duration::from_secs(5)), criterion_posteriors),
        report("2", "gradient verification", Some(Duration::from_secs(60)), criterion_gradients),
        report("3M", "overfit smoke, mapped feedback", Some(Duration::from_secs(1800)), || criterion_overfit(Feedback::Mapped)),
        report("3S", "overfit smoke, sampled feedback", Some(Duration::from_secs(1800)), || criterion_overfit(Feedback::Sampled)),
        report("4", "edit distance and PER", None, criterion_edit_distance),
        report("5", "DTW hard alignment", None, criterion_dtw),
        report("6", "encoder pyramid length", None, criterion_pyramid),
        report("7", "front end and AFP1", None, criterion_frontend),
        report("8", "feature matrix integrity", None, criterion_matrix),
    ];
    match std::env::var_os(TIMIT_ROOT_VAR) {
        None => line(&format!("[SKIP] 9 TIMIT full run: {TIMIT_ROOT_VAR} not set")),
        Some(_) => line(
            "[SKIP] 9 TIMIT full run: multi-hour; run `cargo test --release -p afd-core --test acceptance -- --ignored timit_full_run --nocapture`",
        ),
    }
    let failed = results.iter().filter(|p| !**p).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}

/// Full TIMIT training and core-test scoring. Reports against the expected
/// band; never fails on the numbers, only on errors.
#[test]
#[ignore]
fn timit_full_run() {
    let Some(root) = std::env::var_os(TIMIT_ROOT_VAR) else {
        println!("[SKIP] 9 TIMIT full run: {TIMIT_ROOT_VAR} not set");
        return;
    };
    let entries = afd_core::corpus::timit_index(std::path::Path::new(&root)).unwrap();
    let mut config = ExperimentConfig {
        features: FeatureKind::Mfcc,
        ..ExperimentConfig::default()
    };
    config.train.eval_every = 0;
    let (data, space) = afd_core::experiment::featurize_timit(&entries, &config).unwrap();
    let (data, _) = afd_core::experiment::normalize(data).unwrap();
    config.resolve(&space);
    let train: Vec<_> = data.iter().filter(|p| p.split == afd_core::corpus::Split::Train).cloned().collect();
    let test: Vec<_> = data.iter().filter(|p| p.split == afd_core::corpus::Split::TestCore).cloned().collect();
    let (model, log) = run(&config, &train, &space, |l| eprintln!("epoch {} loss {:.4} ({:.0}s)", l.epoch, l.mean_loss, l.seconds)).unwrap();
    let (report, _) = evaluate(&model, &test, &space, config.model.feedback).unwrap();
    let strong = report.per_feature_sequence_acc.values().filter(|&&a| a >= 0.88).count();
    let in_band = (0.18..=0.28).contains(&report.per) && strong >= 24;
    println!(
        "[{}] 9 TIMIT full run: {} epochs, core-test PER {:.4} (band 0.18..0.28), {strong}/28 features at >= 0.88 sequence accuracy",
        if in_band { "PASS" } else { "REPORT" },
        log.epochs,
        report.per
    );
    println!("{}", report.to_table());
}
