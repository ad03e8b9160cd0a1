//! Single-unit statistics over recorded activations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chemistry::{Chemistry, PotionColor};
use crate::environment::runner::ActivationRow;
use crate::environment::{EpisodeTrace, Outcome, StepRecord};

use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    LstmH,
    TransformerPooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Stone index and latent vertex of the acted stone before the step.
    StoneLatent,
    /// Perceptual state of the acted stone before the step.
    Percept,
    /// Hue of the applied potion.
    Hue,
    /// Sign of the step reward including shaping.
    RewardSign,
}

/// Key for steps that have no acted stone or no hue.
pub const NO_GROUP: &str = "none";

impl Grouping {
    pub fn key(self, chem: &Chemistry, step: &StepRecord) -> String {
        let stone = step.action.stone();
        match self {
            Grouping::StoneLatent => match stone {
                Some(s) => format!("stone{s}_latent{}", step.state.stones[s].latent.id()),
                None => NO_GROUP.into(),
            },
            Grouping::Percept => match stone {
                Some(s) => format!("percept{}", chem.latent_to_percept(step.state.stones[s].latent).id()),
                None => NO_GROUP.into(),
            },
            Grouping::Hue => match step.outcome {
                Outcome::Applied { hue, .. } | Outcome::Invalid { hue: Some(hue), .. } => hue.name().into(),
                _ => NO_GROUP.into(),
            },
            Grouping::RewardSign => {
                let r = step.total_reward();
                if r > 0.0 {
                    "positive".into()
                } else if r < 0.0 {
                    "negative".into()
                } else {
                    "zero".into()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationStat {
    pub unit: usize,
    pub source: Source,
    pub key: String,
    pub mean: f64,
    /// Population standard deviation within the group.
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTable {
    pub grouping: Grouping,
    /// Sorted by source, unit, then key.
    pub stats: Vec<ActivationStat>,
}

impl ActivationTable {
    pub fn get(&self, source: Source, unit: usize, key: &str) -> Option<&ActivationStat> {
        self.stats.iter().find(|s| s.source == source && s.unit == unit && s.key == key)
    }

    pub fn units(&self, source: Source) -> usize {
        self.stats.iter().filter(|s| s.source == source).map(|s| s.unit + 1).max().unwrap_or(0)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("source\tunit\tkey\tmean\tstd\tn\n");
        for r in &self.stats {
            let src = match r.source {
                Source::LstmH => "lstm_h",
                Source::TransformerPooled => "transformer_pooled",
            };
            s.push_str(&format!("{src}\t{}\t{}\t{}\t{}\t{}\n", r.unit, r.key, r.mean, r.std, r.n));
        }
        s
    }
}

/// One episode with the activations recorded while it was played.
#[derive(Debug, Clone, Copy)]
pub struct RecordedEpisode<'a> {
    pub trace: &'a EpisodeTrace,
    pub activations: &'a [ActivationRow],
}

#[derive(Default, Clone, Copy)]
struct Acc {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

/// Groups every recorded step by `grouping` and summarises each unit.
pub fn build_activation_table(
    episodes: &[RecordedEpisode<'_>],
    grouping: Grouping,
) -> Result<ActivationTable, AnalysisError> {
    let mut acc: BTreeMap<(Source, usize, String), Acc> = BTreeMap::new();
    let mut widths: Option<(usize, usize)> = None;
    for ep in episodes {
        let chem = ep.trace.chemistry();
        for row in ep.activations {
            let step = ep.trace.steps.get(row.step).ok_or(AnalysisError::StepOutOfRange { step: row.step })?;
            let w = (row.units.lstm_h.len(), row.units.transformer_pooled.len());
            match widths {
                None => widths = Some(w),
                Some(prev) if prev != w => return Err(AnalysisError::UnitCountMismatch { expected: prev, got: w }),
                _ => {}
            }
            let key = grouping.key(&chem, step);
            for (source, values) in
                [(Source::LstmH, &row.units.lstm_h), (Source::TransformerPooled, &row.units.transformer_pooled)]
            {
                for (unit, &v) in values.iter().enumerate() {
                    let a = acc.entry((source, unit, key.clone())).or_default();
                    a.n += 1;
                    a.sum += v;
                    a.sum_sq += v * v;
                }
            }
        }
    }
    let stats = acc
        .into_iter()
        .map(|((source, unit, key), a)| {
            let mean = a.sum / a.n as f64;
            let var = (a.sum_sq / a.n as f64 - mean * mean).max(0.0);
            ActivationStat { unit, source, key, mean, std: var.sqrt(), n: a.n }
        })
        .collect();
    Ok(ActivationTable { grouping, stats })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub hue: PotionColor,
    pub opposite: PotionColor,
    pub selective: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSelectivity {
    pub unit: usize,
    pub pairs: Vec<PairVerdict>,
    pub selective: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityReport {
    pub theta: f64,
    pub units: Vec<UnitSelectivity>,
    /// Share of transformer units selective for at least one pair.
    pub fraction: f64,
}

pub const DEFAULT_THETA: f64 = 1.0;

/// A transformer unit is selective for a pair when its mean activation has
/// opposite signs for the two hues and both magnitudes exceed `theta` times
/// the pooled within-group standard deviation.
pub fn pair_selectivity(table: &ActivationTable, theta: f64) -> Result<SelectivityReport, AnalysisError> {
    if table.grouping != Grouping::Hue {
        return Err(AnalysisError::WrongGrouping { expected: Grouping::Hue, got: table.grouping });
    }
    let n_units = table.units(Source::TransformerPooled);
    let mut units = Vec::with_capacity(n_units);
    for unit in 0..n_units {
        let mut pairs = Vec::new();
        for hue in PotionColor::ALL.into_iter().filter(|h| h.index() % 2 == 0) {
            let opposite = hue.opposite();
            let a = table.get(Source::TransformerPooled, unit, hue.name());
            let b = table.get(Source::TransformerPooled, unit, opposite.name());
            let selective = match (a, b) {
                (Some(a), Some(b)) => {
                    let pooled =
                        ((a.n as f64 * a.std * a.std + b.n as f64 * b.std * b.std) / (a.n + b.n) as f64).sqrt();
                    let opposed = a.mean != 0.0 && b.mean != 0.0 && a.mean.signum() == -b.mean.signum();
                    opposed && a.mean.abs() > theta * pooled && b.mean.abs() > theta * pooled
                }
                _ => false,
            };
            pairs.push(PairVerdict { hue, opposite, selective });
        }
        let selective = pairs.iter().any(|p| p.selective);
        units.push(UnitSelectivity { unit, pairs, selective });
    }
    let fraction =
        if n_units == 0 { 0.0 } else { units.iter().filter(|u| u.selective).count() as f64 / n_units as f64 };
    Ok(SelectivityReport { theta, units, fraction })
}
