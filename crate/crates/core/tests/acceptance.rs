//! End-to-end acceptance run. Prints one PASS/FAIL line per check and exits
//! non-zero if any check fails. Trains real models on the default synthetic
//! task, so it takes a while; progress goes to stderr.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use modaladapt::adaptation::{adapt, adapt_in_place, init_new_speaker, read_embedding, write_embedding, AdaptationJob, AdaptationMode, InitPolicy};
use modaladapt::data::{generate_corpus, generate_dataset, Dataset, SpeakerRole, Split, SyntheticTaskSpec};
use modaladapt::experiment::{
    adaptation_sweep, median, model_config_for, pooled_mcd, score_multispeaker, score_speaker_mean, train_model, SweepSpec,
};
use modaladapt::metrics::{f0_rmse, mcd_db, EvalReport, FeatureLayout};
use modaladapt::model::{build_model, read_checkpoint, write_checkpoint, ConvConfig, ModelConfig, MultimodalModel, ParamId, SpeakerId};
use modaladapt::numerics::{
    finite_difference_check, mse_loss, Activation, Conv1DLayer, DenseLayer, GradCheckConfig, GradientSet, Matrix, ParameterStore,
};
use modaladapt::training::{
    composite_loss, fit_observed, replay_early_stop, train_speech_encoder, EarlyStopPolicy, LossWeights, StepPath, StepRecord,
    StopReason, Strategy, TiedDistance, TrainingData, TrainingHistory, TrainingPlan,
};
use modaladapt::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;
const GRAD_BUDGET_S: f64 = 60.0;
const RECOMPOSE_TOL: f64 = 1e-12;
const ADAPT_SIZES: [usize; 3] = [10, 40, 160];
const TREND_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const TREND_MARGIN: f64 = 0.9;
const TREND_BUDGET_S: f64 = 15.0 * 60.0;
const STRATEGY_SEEDS: [u64; 3] = [1, 2, 3];
const VL_SLACK: f64 = 1.15;
const TIED_RATIO: f64 = 0.5;
const METRIC_TOL: f64 = 1e-10;
const METRIC_INSTANCES: u64 = 100;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            verdict(false, format!("panicked: {msg}"))
        }
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------- gradients

fn tiny_config() -> ModelConfig {
    ModelConfig {
        linguistic_dim: 5,
        acoustic_dim: 3,
        hidden_width: 8,
        embedding_dim: 4,
        num_text_ff: 2,
        num_common_ff: 3,
        conv: ConvConfig::centered(8, 4, 3),
        speech_encoder: true,
        speaker_aware_text_encoder: false,
        speaker_aware_layers: vec![2, 3],
        tied_layer_indices: vec![1],
    }
}

fn dense_checks(worst: &mut f64, checks: &mut usize) {
    let (n, i, o) = (3, 5, 4);
    for act in [Activation::Sigmoid, Activation::Linear] {
        for seed in 0..GRAD_SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            p.insert("w", random_vec(&mut rng, i * o));
            p.insert("b", random_vec(&mut rng, o));
            p.insert("x", random_vec(&mut rng, n * i));
            let r = Matrix::from_vec(n, o, random_vec(&mut rng, n * o)).unwrap();
            let layer_of = |p: &BTreeMap<&str, Vec<f64>>| {
                DenseLayer::new(Matrix::from_vec(i, o, p["w"].clone()).unwrap(), p["b"].clone(), act).unwrap()
            };
            let x_of = |p: &BTreeMap<&str, Vec<f64>>| Matrix::from_vec(n, i, p["x"].clone()).unwrap();
            let (layer, x) = (layer_of(&p), x_of(&p));
            let y = layer.forward(&x).unwrap();
            let g = layer.backward(&x, &y, &r).unwrap();
            let mut analytic = GradientSet::new();
            analytic.accumulate("w", g.dw.unwrap().as_slice());
            analytic.accumulate("b", &g.db.unwrap());
            analytic.accumulate("x", g.dx.unwrap().as_slice());
            let rep = finite_difference_check(
                &mut p,
                &["w", "b", "x"],
                &analytic,
                |p| dot(&layer_of(p).forward(&x_of(p)).unwrap(), &r),
                GradCheckConfig::default(),
            );
            *worst = worst.max(rep.max_rel_error);
            *checks += 1;
        }
    }
}

fn conv_checks(worst: &mut f64, checks: &mut usize) {
    let (filters, width, stride, pad, len) = (3, 6, 3, 2, 17);
    for seed in 0..GRAD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut p: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        p.insert("k", random_vec(&mut rng, filters * width));
        p.insert("b", random_vec(&mut rng, filters));
        let wave = random_vec(&mut rng, len);
        let conv_of = |p: &BTreeMap<&str, Vec<f64>>| {
            Conv1DLayer::new(Matrix::from_vec(filters, width, p["k"].clone()).unwrap(), p["b"].clone(), stride, pad, pad).unwrap()
        };
        let frames = conv_of(&p).output_frames(len).unwrap();
        let r = Matrix::from_vec(frames, filters, random_vec(&mut rng, frames * filters)).unwrap();
        let g = conv_of(&p).backward(&wave, &r).unwrap();
        let mut analytic = GradientSet::new();
        analytic.accumulate("k", g.dkernels.as_slice());
        analytic.accumulate("b", &g.dbias);
        let rep = finite_difference_check(
            &mut p,
            &["k", "b"],
            &analytic,
            |p| dot(&conv_of(p).forward(&wave).unwrap(), &r),
            GradCheckConfig::default(),
        );
        *worst = worst.max(rep.max_rel_error);
        *checks += 1;
    }
}

fn mse_checks(worst: &mut f64, checks: &mut usize) {
    for seed in 0..GRAD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let target = Matrix::from_vec(4, 3, random_vec(&mut rng, 12)).unwrap();
        let mut p: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        p.insert("pred", random_vec(&mut rng, 12));
        let pred_of = |p: &BTreeMap<&str, Vec<f64>>| Matrix::from_vec(4, 3, p["pred"].clone()).unwrap();
        let (_, d) = mse_loss(&pred_of(&p), &target).unwrap();
        let mut analytic = GradientSet::new();
        analytic.accumulate("pred", d.as_slice());
        let rep = finite_difference_check(
            &mut p,
            &["pred"],
            &analytic,
            |p| mse_loss(&pred_of(p), &target).unwrap().0,
            GradCheckConfig::default(),
        );
        *worst = worst.max(rep.max_rel_error);
        *checks += 1;
    }
}

fn composite_checks(w: LossWeights, worst: &mut f64, checks: &mut usize) {
    let tied = [1];
    let dist = TiedDistance::SquaredEuclideanMean;
    for seed in 0..GRAD_SEEDS {
        let mut m = build_model(tiny_config(), 2, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let frames = 5;
        let ling = Matrix::from_vec(frames, 5, random_vec(&mut rng, frames * 5)).unwrap();
        let wave = random_vec(&mut rng, frames * 4);
        let target = Matrix::from_vec(frames, 3, random_vec(&mut rng, frames * 3)).unwrap();
        let spk = SpeakerId(1);
        let total = |m: &MultimodalModel| {
            let a = m.forward_text(&ling, spk.into()).unwrap();
            let b = m.forward_speech(&wave, spk.into()).unwrap();
            composite_loss(a.common(), Some(b.common()), &target, w, &tied, dist).unwrap().breakdown.total
        };
        let a = m.forward_text(&ling, spk.into()).unwrap();
        let b = m.forward_speech(&wave, spk.into()).unwrap();
        let c = composite_loss(a.common(), Some(b.common()), &target, w, &tied, dist).unwrap();
        let scope = modaladapt::model::ParamScope::All;
        let mut g = m.backward_path(&a, &c.d_pred_main, &c.dh_main, &scope).unwrap();
        g.merge(m.backward_path(&b, c.d_pred_sub.as_ref().unwrap(), &c.dh_sub, &scope).unwrap());
        let ids = m.param_ids();
        let rep = finite_difference_check(&mut m, &ids, &g, total, GradCheckConfig::default());
        *worst = worst.max(rep.max_rel_error);
        *checks += 1;
    }
}

fn gradients() -> Verdict {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    let mut run = |name: &str, f: &mut dyn FnMut(&mut f64, &mut usize)| {
        let (mut worst, mut checks) = (0.0, 0);
        f(&mut worst, &mut checks);
        pass &= worst < GRAD_TOL && checks as u64 >= GRAD_SEEDS;
        parts.push(format!("{name} {worst:.1e}/{checks}"));
    };
    run("dense", &mut dense_checks);
    run("conv", &mut conv_checks);
    run("mse", &mut mse_checks);
    run("joint", &mut |w, c| composite_checks(LossWeights::new(0.5, 0.0), w, c));
    run("tied", &mut |w, c| composite_checks(LossWeights::new(0.0, 1.0), w, c));
    run("joint+tied", &mut |w, c| composite_checks(LossWeights::new(0.2, 0.2), w, c));
    let secs = t.elapsed().as_secs_f64();
    verdict(
        pass && secs < GRAD_BUDGET_S,
        format!("worst rel err/instances: {}; {secs:.1} s (budget {GRAD_BUDGET_S} s)", parts.join(", ")),
    )
}

// ----------------------------------------------------------- early stopping

/// Longhand semantics: an epoch improves when its loss is not NaN and is
/// strictly below every earlier non-NaN loss; stop once `patience` epochs
/// have passed since the last improvement (or since the start), else at
/// the epoch cap.
fn stop_oracle(policy: EarlyStopPolicy, losses: &[f64]) -> (usize, Option<usize>, Option<StopReason>) {
    let mut best = None;
    for (i, &l) in losses.iter().enumerate() {
        let epoch = i + 1;
        let earlier = losses[..i].iter().copied().filter(|v| !v.is_nan()).reduce(f64::min);
        if !l.is_nan() && earlier.is_none_or(|m| l < m) {
            best = Some(epoch);
        }
        if epoch - best.unwrap_or(0) >= policy.patience {
            return (epoch, best, Some(StopReason::Patience));
        }
        if epoch >= policy.max_epochs {
            return (epoch, best, Some(StopReason::MaxEpochs));
        }
    }
    (losses.len(), best, None)
}

fn early_stopping() -> Verdict {
    let alphabet = [3.0, 2.0, 1.0, f64::NAN];
    let policies = [
        EarlyStopPolicy::default(),
        EarlyStopPolicy { patience: 2, max_epochs: 6 },
        EarlyStopPolicy { patience: 1, max_epochs: 3 },
    ];
    let mut cases = 0usize;
    let mut mismatches = Vec::new();
    for len in 0..=8u32 {
        for code in 0..alphabet.len().pow(len) {
            let mut c = code;
            let seq: Vec<f64> = (0..len)
                .map(|_| {
                    let v = alphabet[c % alphabet.len()];
                    c /= alphabet.len();
                    v
                })
                .collect();
            for p in policies {
                cases += 1;
                if replay_early_stop(p, &seq) != stop_oracle(p, &seq) && mismatches.len() < 3 {
                    mismatches.push(format!("{p:?} {seq:?}"));
                }
            }
        }
    }

    let default = EarlyStopPolicy::default();
    let descending: Vec<f64> = (0..200).map(|i| 200.0 - i as f64).collect();
    let mut staircase = Vec::new();
    for step in 0..40 {
        staircase.extend([100.0 - step as f64; 5]);
    }
    let mut plateau = vec![5.0, 4.0];
    plateau.extend([4.0; 10]);
    let mut late_nan = vec![1.0];
    late_nan.extend([f64::NAN; 10]);
    let scripted: [(&str, &[f64], (usize, Option<usize>, Option<StopReason>)); 5] = [
        ("descending", &descending, (128, Some(128), Some(StopReason::MaxEpochs))),
        ("staircase", &staircase, (128, Some(126), Some(StopReason::MaxEpochs))),
        ("plateau", &plateau, (7, Some(2), Some(StopReason::Patience))),
        ("nan", &late_nan, (6, Some(1), Some(StopReason::Patience))),
        ("short", &[3.0, 2.0, 1.0], (3, Some(3), None)),
    ];
    for (name, seq, expected) in scripted {
        cases += 1;
        let got = replay_early_stop(default, seq);
        if got != expected || got != stop_oracle(default, seq) {
            mismatches.push(format!("{name}: got {got:?}, expected {expected:?}"));
        }
    }
    verdict(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{cases} scripted sequences agree with the longhand rule")
        } else {
            format!("mismatches: {}", mismatches.join("; "))
        },
    )
}

// ------------------------------------------------------------------ metrics

fn oracle_mcd(r: &Matrix, p: &Matrix) -> f64 {
    let mut total = 0.0;
    for t in 0..r.rows() {
        let mut s = 0.0;
        for d in 1..24 {
            let e = r.get(t, d) - p.get(t, d);
            s += e * e;
        }
        total += 10.0 / 10f64.ln() * (2.0 * s).sqrt();
    }
    total / r.rows() as f64
}

fn oracle_f0(r: &Matrix, p: &Matrix) -> Option<f64> {
    let errs: Vec<f64> = (0..r.rows())
        .filter(|&t| r.get(t, 25) > 0.5 && p.get(t, 25) > 0.5)
        .map(|t| r.get(t, 24).exp() - p.get(t, 24).exp())
        .collect();
    (!errs.is_empty()).then(|| (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt())
}

fn random_features(rng: &mut ChaCha8Rng, frames: usize) -> Matrix {
    let mut m = Matrix::zeros(frames, 26);
    for t in 0..frames {
        for d in 0..24 {
            m.set(t, d, rng.random_range(-2.0..2.0));
        }
        m.set(t, 24, rng.random_range(80.0f64..300.0).ln());
        m.set(t, 25, rng.random_range(0.0..1.0));
    }
    m
}

fn metric_oracles() -> Verdict {
    let layout = FeatureLayout::synthetic();
    let dims = layout.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (mut worst_mcd, mut worst_f0, mut empty) = (0.0f64, 0.0f64, 0);
    let mut pass = true;
    for _ in 0..METRIC_INSTANCES {
        let frames = rng.random_range(1..40);
        let r = random_features(&mut rng, frames);
        let p = random_features(&mut rng, frames);
        worst_mcd = worst_mcd.max((mcd_db(&r, &p, &dims).unwrap() - oracle_mcd(&r, &p)).abs());
        match (f0_rmse(&r, &p, &layout), oracle_f0(&r, &p)) {
            (Ok(got), Some(want)) => worst_f0 = worst_f0.max((got - want).abs()),
            (Err(Error::EmptySupport(_)), None) => empty += 1,
            _ => pass = false,
        }
        pass &= mcd_db(&r, &r, &dims).unwrap() == 0.0;
        if oracle_f0(&r, &r).is_some() {
            pass &= f0_rmse(&r, &r, &layout).unwrap() == 0.0;
        }
    }
    pass &= worst_mcd < METRIC_TOL && worst_f0 < METRIC_TOL;
    verdict(
        pass,
        format!(
            "{METRIC_INSTANCES} instances, max |mcd - oracle| {worst_mcd:.1e}, max |f0 - oracle| {worst_f0:.1e}, {empty} empty-support, identity exact"
        ),
    )
}

// -------------------------------------------------------------- determinism

fn small_spec(seed: u64) -> SyntheticTaskSpec {
    SyntheticTaskSpec {
        num_train_speakers: 3,
        num_adapt_speakers: 1,
        utterances_per_speaker: 6,
        adapt_utterances_per_speaker: 6,
        valid_per_speaker: 2,
        test_per_speaker: 2,
        min_frames: 10,
        max_frames: 14,
        seed,
        ..SyntheticTaskSpec::default()
    }
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

struct Artifacts {
    checkpoint: Vec<u8>,
    history: String,
    report: String,
    embedding: Vec<u8>,
}

fn pipeline(dataset: &Dataset, dir: &Path) -> Artifacts {
    let mut plan = TrainingPlan::for_strategy(Strategy::JointGoalTied, 11);
    plan.early_stop.max_epochs = 3;
    let config = model_config_for(Strategy::JointGoalTied, 30, 26, false);
    let (model, history) = train_model(dataset, config, &plan, &mut |_| {}).unwrap();
    let mut checkpoint = Vec::new();
    write_checkpoint(&model, &mut checkpoint).unwrap();
    let mut report = EvalReport::default();
    report.extend(score_multispeaker(&model, dataset, "det", "JG+TL", &FeatureLayout::synthetic()).unwrap());
    let speaker = &dataset.speaker_labels(SpeakerRole::Adapt)[0];
    let utts = dataset.speaker_utterances(speaker, Split::Train);
    let mut job = AdaptationJob::new(AdaptationMode::Unsupervised, speaker.clone(), utts, 5);
    job.early_stop.max_epochs = 4;
    let adapted = adapt(&model, &job).unwrap();
    let path = dir.join("new.mmev");
    write_embedding(&path, &model, &adapted).unwrap();
    Artifacts {
        checkpoint,
        history: TrainingHistory::to_csv(&history),
        report: report.to_csv(),
        embedding: fs::read(&path).unwrap(),
    }
}

fn determinism() -> Verdict {
    let mut failures = Vec::new();
    let spec = SyntheticTaskSpec { seed: 7, ..SyntheticTaskSpec::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_corpus(&spec, a.path()).unwrap();
    generate_corpus(&spec, b.path()).unwrap();
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    if ta != tb {
        failures.push("corpus bytes differ".to_string());
    }
    let corpus_files = ta.len();

    let dataset = generate_dataset(&small_spec(3)).unwrap();
    let first = pipeline(&dataset, a.path());
    let second = pipeline(&dataset, b.path());
    for (name, same) in [
        ("checkpoint", first.checkpoint == second.checkpoint),
        ("history", first.history == second.history),
        ("report", first.report == second.report),
        ("embedding", first.embedding == second.embedding),
    ] {
        if !same {
            failures.push(format!("{name} bytes differ between runs"));
        }
    }

    let model = read_checkpoint(first.checkpoint.as_slice(), Path::new("<memory>")).unwrap();
    let mut again = Vec::new();
    write_checkpoint(&model, &mut again).unwrap();
    if again != first.checkpoint {
        failures.push("checkpoint does not round-trip".into());
    }
    let reloaded = score_multispeaker(&model, &dataset, "det", "JG+TL", &FeatureLayout::synthetic()).unwrap();
    let mut report = EvalReport::default();
    report.extend(reloaded);
    if report.to_csv() != first.report {
        failures.push("reloaded checkpoint scores differently".into());
    }
    let path = a.path().join("new.mmev");
    let (header, values) = read_embedding(&path).unwrap();
    let stored: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    if !first.embedding.ends_with(&stored) || header.dim != values.len() {
        failures.push("embedding does not round-trip".into());
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{corpus_files} corpus files, checkpoint, history, report and embedding identical across runs; round-trips exact")
        } else {
            failures.join("; ")
        },
    )
}

// ------------------------------------------------------------------ freezes

fn snapshot(model: &MultimodalModel) -> BTreeMap<ParamId, Vec<u8>> {
    model
        .param_ids()
        .into_iter()
        .map(|id| {
            let bytes = model.param(&id).unwrap().iter().flat_map(|v| v.to_le_bytes()).collect();
            (id, bytes)
        })
        .collect()
}

fn changed(before: &BTreeMap<ParamId, Vec<u8>>, after: &BTreeMap<ParamId, Vec<u8>>) -> Vec<ParamId> {
    before.iter().filter(|(id, b)| after.get(*id) != Some(*b)).map(|(id, _)| *id).collect()
}

fn speech_phase_freeze() -> Verdict {
    let dataset = generate_dataset(&small_spec(4)).unwrap();
    let data = TrainingData::from_dataset(&dataset);
    let mut plan = TrainingPlan::for_strategy(Strategy::JointGoal, 2);
    plan.early_stop.max_epochs = 2;
    let config = model_config_for(Strategy::StepByStep, 30, 26, false);
    let (mut model, _) = train_model(&dataset, config.clone(), &plan, &mut |_| {}).unwrap();
    let before = snapshot(&model);
    let mut ss = TrainingPlan::for_strategy(Strategy::StepByStep, 2);
    ss.early_stop.max_epochs = 5;
    train_speech_encoder(&mut model, &data, &ss).unwrap();
    let moved = changed(&before, &snapshot(&model));
    let stray: Vec<_> = moved.iter().filter(|id| !id.is_speech_encoder()).collect();

    // The same contract seen from inside a full step-by-step run.
    let mut fresh = MultimodalModel::build(config, dataset.speaker_labels(SpeakerRole::Train), 2).unwrap();
    let (mut speech_steps, mut leaks) = (0, 0);
    fit_observed(&mut fresh, &data, &ss, &mut |r: &StepRecord| {
        if r.path == StepPath::Speech {
            speech_steps += 1;
            leaks += r.grad_keys.iter().filter(|k| !k.is_speech_encoder()).count();
        }
    })
    .unwrap();
    verdict(
        stray.is_empty() && !moved.is_empty() && speech_steps > 0 && leaks == 0,
        format!(
            "{} tensors changed, all in the speech encoder (stray {stray:?}); {speech_steps} phase-two steps, {leaks} non-encoder gradients",
            moved.len()
        ),
    )
}

fn adaptation_freeze(model: &MultimodalModel, dataset: &Dataset) -> Verdict {
    let speaker = &dataset.speaker_labels(SpeakerRole::Adapt)[0];
    let pool = dataset.speaker_utterances(speaker, Split::Train);
    let init = init_new_speaker(model, InitPolicy::MeanOfTrained).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for mode in [AdaptationMode::Supervised, AdaptationMode::Unsupervised] {
        let mut m = model.clone();
        let before = snapshot(&m);
        let job = AdaptationJob::new(mode, speaker.clone(), pool[..10].to_vec(), 1);
        let (id, adapted) = adapt_in_place(&mut m, &job).unwrap();
        let after = snapshot(&m);
        let moved = changed(&before, &after);
        let row = m.embedding(id).unwrap();
        let ok = moved.is_empty()
            && after.len() == before.len() + 1
            && row == adapted.embedding.as_slice()
            && row != init.as_slice();
        pass &= ok;
        parts.push(format!("{mode}: {} pre-existing tensors changed, new row moved {}", moved.len(), row != init.as_slice()));
    }
    verdict(pass, parts.join("; "))
}

// ------------------------------------------------------------ trained runs

struct Run {
    strategy: Strategy,
    seed: u64,
    model: MultimodalModel,
    history: TrainingHistory,
    steps: usize,
    worst_recomposition: f64,
}

fn train_run(dataset: &Dataset, strategy: Strategy, seed: u64) -> Run {
    let t = Instant::now();
    let config = model_config_for(strategy, 30, 26, false);
    let plan = TrainingPlan::for_strategy(strategy, seed);
    let (mut steps, mut worst) = (0usize, 0.0f64);
    let (model, history) = train_model(dataset, config, &plan, &mut |r: &StepRecord| {
        let b = &r.breakdown;
        let direct = b.loss_main + r.weights.alpha * b.loss_sub + r.weights.beta * b.tied_penalty;
        worst = worst.max((b.total - direct).abs() / b.total.abs().max(f64::MIN_POSITIVE));
        steps += 1;
    })
    .unwrap();
    eprintln!(
        "  trained {strategy} seed {seed}: {} epochs (best {}), {steps} steps, {:.1?}",
        history.stopped_epoch(),
        history.best_epoch(),
        t.elapsed()
    );
    Run { strategy, seed, model, history, steps, worst_recomposition: worst }
}

fn adaptation_trend(runs: &[Run], datasets: &BTreeMap<u64, Dataset>, started: Instant) -> Verdict {
    let layout = FeatureLayout::synthetic();
    let modes = [AdaptationMode::Supervised, AdaptationMode::Unsupervised];
    let mut baseline = Vec::new();
    let mut curves: BTreeMap<(AdaptationMode, usize), Vec<f64>> = BTreeMap::new();
    for run in runs {
        let spec = SweepSpec {
            tag: "jg",
            strategy: "JG",
            sizes: &ADAPT_SIZES,
            modes: &modes,
            seed: run.seed,
            workers: 1,
        };
        let t = Instant::now();
        let sweep = adaptation_sweep(&run.model, &datasets[&run.seed], &spec, &layout).unwrap();
        baseline.push(pooled_mcd(&sweep.baseline));
        for mode in modes {
            for size in ADAPT_SIZES {
                let rows = sweep.outcomes.iter().filter(|o| o.point.mode == mode && o.point.size == size).flat_map(|o| &o.rows);
                curves.entry((mode, size)).or_default().push(pooled_mcd(rows));
            }
        }
        eprintln!("  swept seed {}: {:.1?}", run.seed, t.elapsed());
    }
    let secs = started.elapsed().as_secs_f64();
    let base = median(&baseline);
    let med = |mode, size| median(&curves[&(mode, size)]);
    let mut pass = secs < TREND_BUDGET_S;
    let mut cells = vec![format!("baseline {base:.3}")];
    for size in ADAPT_SIZES {
        let (sup, unsup) = (med(AdaptationMode::Supervised, size), med(AdaptationMode::Unsupervised, size));
        pass &= sup <= unsup;
        if size >= 40 {
            pass &= unsup <= TREND_MARGIN * base;
        }
        cells.push(format!("n={size} sup {sup:.3} unsup {unsup:.3}"));
    }
    verdict(
        pass,
        format!(
            "median MCD dB over {} seeds: {}; unsup(n>=40) <= {TREND_MARGIN}*baseline and sup <= unsup required; {secs:.0} s (budget {TREND_BUDGET_S:.0} s)",
            runs.len(),
            cells.join(", ")
        ),
    )
}

fn multispeaker(runs: &[&Run], datasets: &BTreeMap<u64, Dataset>) -> Verdict {
    let layout = FeatureLayout::synthetic();
    let mut per: BTreeMap<Strategy, Vec<f64>> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut reference = Vec::new();
    for &seed in &STRATEGY_SEEDS {
        reference.push(pooled_mcd(&score_speaker_mean(&datasets[&seed], &layout).unwrap()));
    }
    for run in runs {
        let d = &datasets[&run.seed];
        let mcd = pooled_mcd(&score_multispeaker(&run.model, d, "ms", run.strategy.name(), &layout).unwrap());
        let floor = pooled_mcd(&score_speaker_mean(d, &layout).unwrap());
        if mcd >= floor {
            failures.push(format!("{} seed {} {mcd:.3} >= speaker mean {floor:.3}", run.strategy, run.seed));
        }
        if run.history.phases.iter().any(|p| p.epochs_run > 128) {
            failures.push(format!("{} seed {} exceeded the epoch cap", run.strategy, run.seed));
        }
        per.entry(run.strategy).or_default().push(mcd);
    }
    let vl = median(&per[&Strategy::Vanilla]);
    let mut cells = vec![format!("speaker-mean {:.3}", median(&reference))];
    for (s, v) in &per {
        let m = median(v);
        if m > VL_SLACK * vl {
            failures.push(format!("{s} median {m:.3} > {VL_SLACK}*VL"));
        }
        cells.push(format!("{s} {m:.3}"));
    }
    verdict(
        failures.is_empty(),
        format!(
            "median test MCD dB over {} seeds: {}{}",
            STRATEGY_SEEDS.len(),
            cells.join(", "),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn tied_penalty_shrinks(runs: &[&Run]) -> Verdict {
    let mut ratios = Vec::new();
    for run in runs {
        let valid = run.history.split("valid");
        let first = valid.iter().find(|r| r.epoch == 1).unwrap().breakdown.tied_penalty;
        let last = valid.iter().find(|r| r.epoch == run.history.stopped_epoch()).unwrap().breakdown.tied_penalty;
        ratios.push(last / first);
    }
    let m = median(&ratios);
    verdict(
        m < TIED_RATIO,
        format!(
            "stopped/first validation tied penalty per seed {:?}, median {m:.3} (< {TIED_RATIO} required)",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn recomposition(runs: &[&Run]) -> Verdict {
    let worst = runs.iter().map(|r| r.worst_recomposition).fold(0.0, f64::max);
    let steps: usize = runs.iter().map(|r| r.steps).sum();
    let strategies: std::collections::BTreeSet<_> = runs.iter().map(|r| r.strategy.name()).collect();
    verdict(
        worst <= RECOMPOSE_TOL && steps > 0,
        format!(
            "{steps} steps over {} full runs ({}), worst relative gap {worst:.1e}",
            runs.len(),
            strategies.into_iter().collect::<Vec<_>>().join(" ")
        ),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut record = |name: &'static str, v: Verdict| {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((name, v));
    };

    record("gradient-check", guarded(gradients));
    record("early-stopping", guarded(early_stopping));
    record("metric-oracles", guarded(metric_oracles));
    record("determinism-and-round-trips", guarded(determinism));
    record("speech-phase-freeze", guarded(speech_phase_freeze));

    let datasets: BTreeMap<u64, Dataset> = TREND_SEEDS
        .iter()
        .map(|&s| (s, generate_dataset(&SyntheticTaskSpec { seed: s, ..SyntheticTaskSpec::default() }).unwrap()))
        .collect();

    let trend_start = Instant::now();
    let jg: Vec<Run> = TREND_SEEDS.iter().map(|&s| train_run(&datasets[&s], Strategy::JointGoal, s)).collect();
    record("adaptation-trend", guarded(|| adaptation_trend(&jg, &datasets, trend_start)));
    record("adaptation-freeze", guarded(|| adaptation_freeze(&jg[0].model, &datasets[&1])));

    let mut others = Vec::new();
    for strategy in [Strategy::Vanilla, Strategy::StepByStep, Strategy::TiedLayers, Strategy::JointGoalTied] {
        for &seed in &STRATEGY_SEEDS {
            others.push(train_run(&datasets[&seed], strategy, seed));
        }
    }
    let stochastic_set = generate_dataset(&SyntheticTaskSpec { utterances_per_speaker: 15, seed: 6, ..SyntheticTaskSpec::default() }).unwrap();
    let stochastic = train_run(&stochastic_set, Strategy::Stochastic, 6);

    let five: Vec<&Run> = jg.iter().filter(|r| STRATEGY_SEEDS.contains(&r.seed)).chain(&others).collect();
    record("multispeaker-sanity", guarded(|| multispeaker(&five, &datasets)));
    let tl: Vec<&Run> = others.iter().filter(|r| r.strategy == Strategy::TiedLayers).collect();
    record("tied-penalty", guarded(|| tied_penalty_shrinks(&tl)));
    let all: Vec<&Run> = jg.iter().chain(&others).chain(std::iter::once(&stochastic)).collect();
    record("loss-recomposition", guarded(|| recomposition(&all)));

    let failed = results.iter().filter(|(_, v)| !v.pass).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.0} s",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
