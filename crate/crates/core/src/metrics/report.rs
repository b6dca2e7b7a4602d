use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{f0_error_sums, mcd_frames, FeatureLayout};
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Labels attached to every row an evaluation produces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMeta {
    pub model: String,
    pub strategy: String,
    /// `multispeaker`, `baseline`, `supervised` or `unsupervised`.
    pub mode: String,
    /// Adaptation utterances used; 0 when nothing was adapted.
    pub adapt_utterances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub strategy: String,
    pub speaker: String,
    pub mode: String,
    pub adapt_utterances: usize,
    pub mcd_db: f64,
    /// `None` when no frame of the speaker is voiced in both sequences or
    /// the layout carries no F0.
    pub f0_rmse: Option<f64>,
    pub frames: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

#[derive(Default)]
struct SpeakerSums {
    mcd: f64,
    frames: usize,
    f0_sq: f64,
    f0_n: usize,
}

/// Scores `predict` on `utterances`, one row per speaker. Utterances are
/// processed in (speaker, id) order so the result does not depend on the
/// order they were passed in; per-speaker values are frame-weighted.
pub fn evaluate<F>(mut predict: F, utterances: &[&Utterance], meta: &RowMeta, layout: &FeatureLayout) -> Result<Vec<EvalRow>>
where
    F: FnMut(&Utterance) -> Result<Matrix>,
{
    if utterances.is_empty() {
        return Err(Error::EmptySplit("nothing to evaluate".into()));
    }
    let mut sorted: Vec<&Utterance> = utterances.to_vec();
    sorted.sort_by(|a, b| (&a.speaker, &a.id).cmp(&(&b.speaker, &b.id)));
    let dims = layout.dims();
    let has_f0 = layout.log_f0.is_some() && layout.voicing.is_some();
    let mut per: BTreeMap<&str, SpeakerSums> = BTreeMap::new();
    for u in sorted {
        let pred = predict(u)?;
        let s = per.entry(&u.speaker).or_default();
        for v in mcd_frames(&u.acoustic, &pred, &dims)? {
            s.mcd += v;
        }
        s.frames += u.frames();
        if has_f0 {
            let (sq, n) = f0_error_sums(&u.acoustic, &pred, layout)?;
            s.f0_sq += sq;
            s.f0_n += n;
        }
    }
    Ok(per
        .into_iter()
        .map(|(speaker, s)| EvalRow {
            model: meta.model.clone(),
            strategy: meta.strategy.clone(),
            speaker: speaker.to_string(),
            mode: meta.mode.clone(),
            adapt_utterances: meta.adapt_utterances,
            mcd_db: s.mcd / s.frames as f64,
            f0_rmse: (s.f0_n > 0).then(|| (s.f0_sq / s.f0_n as f64).sqrt()),
            frames: s.frames,
        })
        .collect())
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "model,strategy,speaker,mode,adapt_utterances,mcd_db,f0_rmse,frames";

    pub fn extend(&mut self, rows: impl IntoIterator<Item = EvalRow>) {
        self.rows.extend(rows);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{:?},{},{}",
                r.model,
                r.strategy,
                r.speaker,
                r.mode,
                r.adapt_utterances,
                r.mcd_db,
                r.f0_rmse.map_or(String::new(), |v| format!("{v:?}")),
                r.frames
            )
            .expect("writing to a String");
        }
        out
    }

    /// Frame-weighted means per (model, strategy, mode, adaptation size),
    /// one line each, grouped by model.
    pub fn summary(&self) -> String {
        #[derive(Default)]
        struct Group {
            mcd: f64,
            frames: usize,
            f0_sq: f64,
            f0_frames: usize,
            speakers: usize,
        }
        let mut groups: BTreeMap<(&str, &str, &str, usize), Group> = BTreeMap::new();
        for r in &self.rows {
            let g = groups
                .entry((&r.model, &r.strategy, &r.mode, r.adapt_utterances))
                .or_default();
            g.mcd += r.mcd_db * r.frames as f64;
            g.frames += r.frames;
            if let Some(f) = r.f0_rmse {
                g.f0_sq += f * f * r.frames as f64;
                g.f0_frames += r.frames;
            }
            g.speakers += 1;
        }
        let mut out = String::new();
        let mut current: Option<&str> = None;
        for ((model, strategy, mode, n), g) in &groups {
            if current != Some(model) {
                if current.is_some() {
                    out.push('\n');
                }
                writeln!(out, "[{model}]").unwrap();
                writeln!(out, "{:<8} {:<13} {:>6} {:>9} {:>10} {:>9}", "strategy", "mode", "adapt", "MCD [dB]", "F0 RMSE", "speakers").unwrap();
                current = Some(model);
            }
            let f0 = if g.f0_frames > 0 {
                format!("{:.3}", (g.f0_sq / g.f0_frames as f64).sqrt())
            } else {
                "-".into()
            };
            writeln!(
                out,
                "{:<8} {:<13} {:>6} {:>9.3} {:>10} {:>9}",
                strategy,
                mode,
                n,
                g.mcd / g.frames as f64,
                f0,
                g.speakers
            )
            .unwrap();
        }
        out
    }
}
