use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use modaladapt::adaptation::{init_new_speaker, load_embedding_for, read_embedding, write_embedding, InitPolicy, EMBEDDING_MAGIC};
use modaladapt::data::{
    generate_corpus, load_corpus, read_features, read_waveform, CorpusManifest, Dataset, SpeakerRole, Split, FEATURE_MAGIC,
    WAVEFORM_MAGIC,
};
use modaladapt::experiment::{adaptation_sweep, model_config_for, score_embedding, score_multispeaker, train_model, SweepSpec};
use modaladapt::metrics::{EvalReport, FeatureLayout, RowMeta};
use modaladapt::model::{load_checkpoint, read_checkpoint_header, save_checkpoint, CHECKPOINT_MAGIC};

use crate::config::ExperimentConfig;
use crate::Context;

pub const CHECKPOINT_FILE: &str = "model.mmck";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn gen_data(ctx: &Context) -> Result<()> {
    let spec = ctx.config.task_spec();
    spec.validate()?;
    let manifest = generate_corpus(&spec, &ctx.out).with_context(|| format!("cannot write corpus to {}", ctx.out.display()))?;
    println!(
        "wrote {} utterances ({} speakers) to {}",
        manifest.utterances.len(),
        manifest.speakers.len(),
        ctx.out.display()
    );
    Ok(())
}

/// `--corpus`, else the config's corpus, else `<out>/corpus` (generated
/// from the task spec when it does not exist yet).
pub fn obtain_dataset(ctx: &Context, corpus: Option<PathBuf>) -> Result<Dataset> {
    if let Some(path) = corpus.or_else(|| ctx.config.corpus.clone()) {
        log::info!("loading corpus {}", path.display());
        return load_corpus(&path).with_context(|| format!("cannot load corpus {}", path.display()));
    }
    let dir = ctx.out.join("corpus");
    if !dir.join("manifest.toml").exists() {
        log::info!("generating corpus in {}", dir.display());
        generate_corpus(&ctx.config.task_spec(), &dir).with_context(|| format!("cannot write corpus to {}", dir.display()))?;
    }
    load_corpus(&dir).with_context(|| format!("cannot load corpus {}", dir.display()))
}

fn dims(dataset: &Dataset) -> Result<(usize, usize)> {
    let ling = dataset.linguistic_dim().ok_or_else(|| anyhow!("corpus has no linguistic features"))?;
    let ac = dataset.acoustic_dim().ok_or_else(|| anyhow!("corpus has no utterances"))?;
    Ok((ling, ac))
}

/// Acoustic layout for scoring: the synthetic one when the corpus has its
/// 26 channels, otherwise plain cepstra without F0.
pub fn layout_for(dataset: &Dataset) -> FeatureLayout {
    match dataset.acoustic_dim() {
        Some(26) => FeatureLayout::synthetic(),
        Some(d) => FeatureLayout::cepstral_only(d),
        None => FeatureLayout::synthetic(),
    }
}

pub fn train(ctx: &Context, corpus: Option<PathBuf>) -> Result<()> {
    ctx.config.validate()?;
    let plan = ctx.config.training.plan(ctx.config.seed)?;
    let dataset = obtain_dataset(ctx, corpus)?;
    let (ling, ac) = dims(&dataset)?;
    let model_config = model_config_for(plan.strategy, ling, ac, ctx.config.paper_dims);
    log::info!(
        "training {} (hidden {}, embedding {}) on {} speakers",
        plan.strategy,
        model_config.hidden_width,
        model_config.embedding_dim,
        dataset.speaker_labels(SpeakerRole::Train).len()
    );
    let (model, history) = train_model(&dataset, model_config, &plan, &mut |_| {})?;
    fs::create_dir_all(&ctx.out).with_context(|| format!("cannot create {}", ctx.out.display()))?;
    save_checkpoint(&model, &ctx.out.join(CHECKPOINT_FILE))?;
    write_file(&ctx.out.join("history.csv"), history.to_csv())?;
    write_file(&ctx.out.join(CONFIG_SNAPSHOT), ctx.config.to_toml()?)?;
    println!(
        "{}: stopped after {} epochs, best epoch {}; wrote {}",
        plan.strategy,
        history.stopped_epoch(),
        history.best_epoch(),
        ctx.out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn checkpoint_path(ctx: &Context, checkpoint: Option<PathBuf>) -> PathBuf {
    checkpoint.unwrap_or_else(|| ctx.out.join(CHECKPOINT_FILE))
}

/// Strategy recorded in the config snapshot next to a checkpoint, if any.
fn strategy_tag(checkpoint: &Path) -> String {
    let snapshot = checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_SNAPSHOT);
    ExperimentConfig::load(&snapshot)
        .map(|c| c.training.strategy.to_string())
        .unwrap_or_else(|_| "-".into())
}

fn model_tag(checkpoint: &Path) -> String {
    checkpoint.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

pub fn adapt(ctx: &Context, checkpoint: Option<PathBuf>, corpus: Option<PathBuf>) -> Result<()> {
    ctx.config.validate()?;
    let ckpt = checkpoint_path(ctx, checkpoint);
    let model = load_checkpoint(&ckpt).with_context(|| format!("cannot load checkpoint {}", ckpt.display()))?;
    let dataset = obtain_dataset(ctx, corpus)?;
    let a = &ctx.config.adaptation;
    let (tag, strategy) = (model_tag(&ckpt), strategy_tag(&ckpt));
    let spec = SweepSpec {
        tag: &tag,
        strategy: &strategy,
        sizes: &a.sizes,
        modes: &a.modes,
        seed: ctx.config.seed,
        workers: a.workers,
    };
    let sweep = adaptation_sweep(&model, &dataset, &spec, &layout_for(&dataset))?;
    let mut report = EvalReport::default();
    for o in &sweep.outcomes {
        let name = format!("{}_{}_{}.mmev", o.point.speaker, o.point.mode, o.point.size);
        let path = ctx.out.join("embeddings").join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        }
        write_embedding(&path, &model, &o.adapted)?;
        report.extend(o.rows.iter().cloned());
    }
    write_file(&ctx.out.join("adapt.csv"), report.to_csv())?;
    println!("{} adaptations; wrote {}", sweep.outcomes.len(), ctx.out.join("adapt.csv").display());
    print!("{}", report.summary());
    Ok(())
}

pub fn eval(ctx: &Context, checkpoint: Option<PathBuf>, corpus: Option<PathBuf>, embeddings: &[PathBuf]) -> Result<()> {
    let ckpt = checkpoint_path(ctx, checkpoint);
    let model = load_checkpoint(&ckpt).with_context(|| format!("cannot load checkpoint {}", ckpt.display()))?;
    let dataset = obtain_dataset(ctx, corpus)?;
    let layout = layout_for(&dataset);
    let (tag, strategy) = (model_tag(&ckpt), strategy_tag(&ckpt));
    let mut report = EvalReport::default();

    let known: Vec<String> = dataset
        .speaker_labels(SpeakerRole::Train)
        .into_iter()
        .filter(|s| model.speaker_labels().contains(s))
        .collect();
    if !known.is_empty() {
        report.extend(score_multispeaker(&model, &dataset, &tag, &strategy, &layout)?);
    }

    let init = init_new_speaker(&model, InitPolicy::MeanOfTrained)?;
    let mut baselined = Vec::new();
    for path in embeddings {
        let (header, values) = load_embedding_for(path, &model).with_context(|| format!("cannot use embedding {}", path.display()))?;
        let test = dataset.speaker_utterances(&header.speaker, Split::Test);
        if test.is_empty() {
            bail!("corpus has no test utterances for speaker {:?} ({})", header.speaker, path.display());
        }
        let meta = |mode: &str, n: usize| RowMeta {
            model: tag.clone(),
            strategy: strategy.clone(),
            mode: mode.to_string(),
            adapt_utterances: n,
        };
        if !baselined.contains(&header.speaker) {
            report.extend(score_embedding(&model, &test, &init, &meta("baseline", 0), &layout)?);
            baselined.push(header.speaker.clone());
        }
        report.extend(score_embedding(&model, &test, &values, &meta(header.mode.name(), header.utterances), &layout)?);
    }
    if report.rows.is_empty() {
        bail!("nothing to evaluate: no known training speakers in the corpus and no --embedding given");
    }
    write_file(&ctx.out.join("eval.csv"), report.to_csv())?;
    print!("{}", report.summary());
    Ok(())
}

pub fn inspect(path: &Path) -> Result<()> {
    if path.is_dir() || path.extension().is_some_and(|e| e == "toml") {
        let manifest_path = if path.is_dir() { path.join("manifest.toml") } else { path.to_path_buf() };
        let m = CorpusManifest::read(&manifest_path)?;
        println!("corpus {} ({})", manifest_path.display(), m.format);
        println!("samples_per_frame {}", m.samples_per_frame);
        for role in [SpeakerRole::Train, SpeakerRole::Adapt] {
            let labels: Vec<&str> = m.speakers.iter().filter(|s| s.role == role).map(|s| s.label.as_str()).collect();
            println!("{role:?} speakers ({}): {}", labels.len(), labels.join(" "));
        }
        for split in [Split::Train, Split::Valid, Split::Test] {
            let utts: Vec<_> = m.utterances.iter().filter(|u| u.split == split).collect();
            let frames: usize = utts.iter().map(|u| u.frames).sum();
            println!("{split:?}: {} utterances, {frames} frames", utts.len());
        }
        return Ok(());
    }
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let magic = bytes.get(..5).unwrap_or(&[]);
    if magic == CHECKPOINT_MAGIC {
        let (header, _) = read_checkpoint_header(&bytes, path)?;
        let params: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        println!("checkpoint {} ({params} parameters)", path.display());
        println!("{}", serde_json::to_string_pretty(&header)?);
    } else if magic == EMBEDDING_MAGIC {
        let (header, values) = read_embedding(path)?;
        println!("embedding {}", path.display());
        println!("{}", serde_json::to_string_pretty(&header)?);
        println!("values {values:?}");
    } else if magic == FEATURE_MAGIC {
        let m = read_features(path)?;
        println!("features {}: {} frames x {} dims", path.display(), m.rows(), m.cols());
    } else if magic == WAVEFORM_MAGIC {
        let w = read_waveform(path)?;
        println!("waveform {}: {} samples", path.display(), w.len());
    } else {
        bail!("{}: not a checkpoint, embedding, feature, waveform or manifest file", path.display());
    }
    Ok(())
}
