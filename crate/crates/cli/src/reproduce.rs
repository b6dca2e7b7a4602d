//! Multi-seed experiment profiles. Every (seed, strategy) unit writes its
//! results under `runs/` and is recorded in `state.json`, so an interrupted
//! run picks up where it stopped when the same command is repeated.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context as _, Result};
use clap::ValueEnum;
use modaladapt::adaptation::AdaptationMode;
use modaladapt::data::{generate_dataset, load_corpus, Dataset};
use modaladapt::experiment::{
    adaptation_sweep, median, model_config_for, pooled_mcd, score_multispeaker, score_speaker_mean, train_model, SweepSpec,
};
use modaladapt::metrics::{EvalReport, EvalRow};
use modaladapt::model::save_checkpoint;
use modaladapt::training::Strategy;
use serde::{Deserialize, Serialize};

use crate::commands::{layout_for, write_file};
use crate::config::{ExperimentConfig, TrainingSection};
use crate::Context;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Train every strategy per seed and score the training speakers.
    Multispeaker,
    /// Train per seed, then adapt the held-out speakers at each size.
    AdaptationSweep,
}

#[derive(Debug, Serialize, Deserialize)]
struct State {
    profile: Profile,
    config: ExperimentConfig,
    completed: Vec<String>,
}

#[derive(Clone, Debug)]
enum Job {
    SpeakerMean,
    Train(Strategy),
}

#[derive(Clone, Debug)]
struct Unit {
    seed: u64,
    job: Job,
}

impl Unit {
    fn name(&self) -> String {
        let what = match &self.job {
            Job::SpeakerMean => "speaker-mean".to_string(),
            Job::Train(s) => s.name().replace('+', "_"),
        };
        format!("seed{}/{what}", self.seed)
    }
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write_file(&tmp, contents)?;
    fs::rename(&tmp, path).with_context(|| format!("cannot replace {}", path.display()))
}

/// Training settings for `strategy`: the configured ones when it is the
/// configured strategy, its standard weights otherwise.
fn training_for(config: &ExperimentConfig, strategy: Strategy) -> TrainingSection {
    if strategy == config.training.strategy {
        config.training.clone()
    } else {
        config.training.for_strategy(strategy)
    }
}

fn dataset_for(config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match &config.corpus {
        Some(path) => load_corpus(path).with_context(|| format!("cannot load corpus {}", path.display())),
        None => Ok(generate_dataset(&modaladapt::data::SyntheticTaskSpec { seed, ..config.task.clone() })?),
    }
}

fn plan_units(config: &ExperimentConfig, profile: Profile) -> Vec<Unit> {
    let mut units = Vec::new();
    for &seed in &config.reproduce.seeds {
        if profile == Profile::Multispeaker {
            units.push(Unit { seed, job: Job::SpeakerMean });
        }
        for &s in &config.reproduce.strategies {
            units.push(Unit { seed, job: Job::Train(s) });
        }
    }
    units
}

fn run_unit(config: &ExperimentConfig, profile: Profile, unit: &Unit, dataset: &Dataset, dir: &Path) -> Result<Vec<EvalRow>> {
    let layout = layout_for(dataset);
    let strategy = match unit.job {
        Job::SpeakerMean => return Ok(score_speaker_mean(dataset, &layout)?),
        Job::Train(s) => s,
    };
    let plan = training_for(config, strategy).plan(unit.seed)?;
    let ling = dataset.linguistic_dim().context("corpus has no linguistic features")?;
    let ac = dataset.acoustic_dim().context("corpus has no utterances")?;
    let model_config = model_config_for(strategy, ling, ac, config.paper_dims);
    log::info!("{}: training", unit.name());
    let (model, history) = train_model(dataset, model_config, &plan, &mut |_| {})?;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    save_checkpoint(&model, &dir.join("model.mmck"))?;
    write_file(&dir.join("history.csv"), history.to_csv())?;
    log::info!(
        "{}: {} epochs (best {})",
        unit.name(),
        history.stopped_epoch(),
        history.best_epoch()
    );
    let tag = unit.name();
    match profile {
        Profile::Multispeaker => Ok(score_multispeaker(&model, dataset, &tag, strategy.name(), &layout)?),
        Profile::AdaptationSweep => {
            let modes: Vec<AdaptationMode> = config
                .adaptation
                .modes
                .iter()
                .copied()
                .filter(|m| model.config().speech_encoder || *m == AdaptationMode::Supervised)
                .collect();
            if modes.len() < config.adaptation.modes.len() {
                log::info!("{}: no speech encoder, unsupervised adaptation skipped", unit.name());
            }
            let spec = SweepSpec {
                tag: &tag,
                strategy: strategy.name(),
                sizes: &config.adaptation.sizes,
                modes: &modes,
                seed: unit.seed,
                workers: config.adaptation.workers,
            };
            let sweep = adaptation_sweep(&model, dataset, &spec, &layout)?;
            Ok(sweep.rows().cloned().collect())
        }
    }
}

/// Frame-weighted RMS of the per-row F0 errors that exist.
fn pooled_f0<'a>(rows: impl IntoIterator<Item = &'a EvalRow>) -> Option<f64> {
    let (mut sq, mut frames) = (0.0, 0usize);
    for r in rows {
        if let Some(f) = r.f0_rmse {
            sq += f * f * r.frames as f64;
            frames += r.frames;
        }
    }
    (frames > 0).then(|| (sq / frames as f64).sqrt())
}

pub const MEDIANS_HEADER: &str = "strategy,mode,adapt_utterances,seeds,median_mcd_db,median_f0_rmse";

/// Per (strategy, mode, size): pool each seed's rows over speakers, then
/// take the median over seeds. The speaker-mean reference is left out.
fn medians_csv(per_seed: &[(u64, Vec<EvalRow>)]) -> String {
    let mut groups: BTreeMap<(String, String, usize), BTreeMap<u64, Vec<&EvalRow>>> = BTreeMap::new();
    for (seed, rows) in per_seed {
        for r in rows.iter().filter(|r| r.model != "speaker-mean") {
            groups
                .entry((r.strategy.clone(), r.mode.clone(), r.adapt_utterances))
                .or_default()
                .entry(*seed)
                .or_default()
                .push(r);
        }
    }
    let mut out = format!("{MEDIANS_HEADER}\n");
    for ((strategy, mode, size), seeds) in groups {
        let mcd: Vec<f64> = seeds.values().map(|rows| pooled_mcd(rows.iter().copied())).collect();
        let f0: Vec<f64> = seeds.values().filter_map(|rows| pooled_f0(rows.iter().copied())).collect();
        let f0 = if f0.is_empty() { String::new() } else { format!("{:?}", median(&f0)) };
        out.push_str(&format!("{strategy},{mode},{size},{},{:?},{f0}\n", seeds.len(), median(&mcd)));
    }
    out
}

pub fn run(ctx: &Context, profile: Profile, stop_after: Option<usize>) -> Result<()> {
    let config = &ctx.config;
    config.validate()?;
    let state_path = ctx.out.join("state.json");
    let mut state = if state_path.exists() {
        let text = fs::read_to_string(&state_path).with_context(|| format!("cannot read {}", state_path.display()))?;
        let state: State = serde_json::from_str(&text).with_context(|| format!("cannot parse {}", state_path.display()))?;
        if state.profile != profile || state.config != *config {
            bail!(
                "{} belongs to a run with a different profile or configuration; use a fresh --out",
                ctx.out.display()
            );
        }
        log::info!("resuming: {} units already complete", state.completed.len());
        state
    } else {
        State {
            profile,
            config: config.clone(),
            completed: Vec::new(),
        }
    };
    write_file(&ctx.out.join("config.toml"), config.to_toml()?)?;

    let units = plan_units(config, profile);
    let mut datasets: BTreeMap<u64, Dataset> = BTreeMap::new();
    let mut fresh = 0usize;
    for unit in &units {
        let name = unit.name();
        let dir = ctx.out.join("runs").join(&name);
        if state.completed.contains(&name) && dir.join("rows.json").exists() {
            continue;
        }
        if stop_after.is_some_and(|n| fresh >= n) {
            bail!(
                "stopped after {fresh} units ({} of {} complete); rerun the same command to resume",
                state.completed.len(),
                units.len()
            );
        }
        if !datasets.contains_key(&unit.seed) {
            datasets.insert(unit.seed, dataset_for(config, unit.seed)?);
        }
        let rows = run_unit(config, profile, unit, &datasets[&unit.seed], &dir)?;
        write_atomic(&dir.join("rows.json"), &serde_json::to_vec_pretty(&rows)?)?;
        state.completed.retain(|c| *c != name);
        state.completed.push(name);
        write_atomic(&state_path, &serde_json::to_vec_pretty(&state)?)?;
        fresh += 1;
    }

    let mut report = EvalReport::default();
    let mut per_seed: Vec<(u64, Vec<EvalRow>)> = Vec::new();
    for unit in &units {
        let path = ctx.out.join("runs").join(unit.name()).join("rows.json");
        let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        let rows: Vec<EvalRow> = serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))?;
        report.extend(rows.iter().cloned());
        match per_seed.iter_mut().find(|(s, _)| *s == unit.seed) {
            Some((_, all)) => all.extend(rows),
            None => per_seed.push((unit.seed, rows)),
        }
    }
    let table = match profile {
        Profile::Multispeaker => "table.csv",
        Profile::AdaptationSweep => "sweep.csv",
    };
    write_file(&ctx.out.join(table), report.to_csv())?;
    let medians = medians_csv(&per_seed);
    write_file(&ctx.out.join("medians.csv"), &medians)?;
    println!("{} units complete; wrote {} and medians.csv", units.len(), ctx.out.join(table).display());
    print!("{medians}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(strategy: &str, speaker: &str, mcd: f64, frames: usize) -> EvalRow {
        EvalRow {
            model: "m".into(),
            strategy: strategy.into(),
            speaker: speaker.into(),
            mode: "multispeaker".into(),
            adapt_utterances: 0,
            mcd_db: mcd,
            f0_rmse: Some(mcd),
            frames,
        }
    }

    #[test]
    fn medians_pool_speakers_then_take_the_median_over_seeds() {
        let mut mean = row("-", "a", 100.0, 1);
        mean.model = "speaker-mean".into();
        let per_seed = vec![
            (1, vec![row("JG", "a", 1.0, 1), row("JG", "b", 4.0, 2), mean]),
            (2, vec![row("JG", "a", 5.0, 1)]),
            (3, vec![row("JG", "a", 9.0, 1)]),
        ];
        let csv = medians_csv(&per_seed);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], MEDIANS_HEADER);
        assert_eq!(lines.len(), 2);
        // seed 1 pools to (1 + 8) / 3 = 3, median of {3, 5, 9} is 5
        assert!(lines[1].starts_with("JG,multispeaker,0,3,5.0,"), "{}", lines[1]);
    }

    #[test]
    fn unit_names_are_path_safe() {
        let u = Unit {
            seed: 2,
            job: Job::Train(Strategy::JointGoalTied),
        };
        assert_eq!(u.name(), "seed2/JG_TL");
    }
}
