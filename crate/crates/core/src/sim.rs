//! Synthetic speaker populations and the three-experiment pipeline.
//!
//! A population draws speaker means from `N(0, σ_b²·I)` and utterances from
//! `N(m_s, σ_w²·I)`, length-normalized, with partition labels alternating
//! over `F`/`M` per speaker. [`run_experiment`] evaluates the original
//! population and each requested mapping on all three axes — dispersion
//! (scatter ratio), same-side linkability EER, cross-side de-identification
//! EER — and [`trend_check`] turns one report into machine-readable verdicts
//! for the three expected effects of switching from a shared pseudo speaker
//! to per-utterance pseudo speakers:
//!
//! - dispersion: `J(org) > J(a2o) > J(a2a)` with clear relative gaps;
//! - linkability: EER(a2a) exceeds EER(a2o);
//! - de-identification: both modes sit near chance, within a couple of
//!   points of each other.
//!
//! [`run_suite`] repeats the experiment over several seeds and aggregates
//! verdicts by majority, recording per-seed margins rather than hiding
//! single-seed flakiness.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::asv::{deidentification_eer, linkability_eer, EerResult};
use crate::dispersion::{dispersion_of, ScatterReport, DEFAULT_RIDGE};
use crate::embedding::{EmbeddingSet, UtteranceRecord};
use crate::error::{Error, Result};
use crate::mapping::{anonymize, MappingConfig, MappingMode, PseudoStrategy};
use crate::seeding::{self, stream};

/// Synthetic population shape and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub dim: usize,
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    /// Spread of speaker means.
    pub sigma_between: f64,
    /// Per-utterance noise around the speaker mean.
    pub sigma_within: f64,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            n_speakers: 50,
            utts_per_speaker: 20,
            sigma_between: 1.0,
            sigma_within: 0.3,
            seed: 0,
        }
    }
}

impl PopulationConfig {
    /// Desk-scale evaluation population.
    pub fn default_population() -> Self {
        Self::default()
    }

    /// Cohort for pseudo-speaker construction. Generated from a disjoint
    /// seed stream, mirroring the use of a separate training set.
    pub fn default_cohort() -> Self {
        Self {
            n_speakers: 100,
            utts_per_speaker: 10,
            seed: 10_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::invalid_config("dim", "must be at least 2"));
        }
        if self.n_speakers < 2 {
            return Err(Error::invalid_config("n_speakers", "must be at least 2"));
        }
        if self.utts_per_speaker < 2 {
            return Err(Error::invalid_config("utts_per_speaker", "must be at least 2"));
        }
        if !(self.sigma_between.is_finite() && self.sigma_between > 0.0) {
            return Err(Error::invalid_config("sigma_between", "must be > 0"));
        }
        if !(self.sigma_within.is_finite() && self.sigma_within > 0.0) {
            return Err(Error::invalid_config("sigma_within", "must be > 0"));
        }
        Ok(())
    }
}

/// Draw a labeled, length-normalized population. Deterministic per seed;
/// partition labels round-robin over `F`/`M` by speaker.
pub fn generate_population(config: &PopulationConfig) -> Result<EmbeddingSet> {
    config.validate()?;
    let d = config.dim;
    let mut records = Vec::with_capacity(config.n_speakers * config.utts_per_speaker);
    for s in 0..config.n_speakers {
        let mut mean_rng = seeding::substream_rng(config.seed, stream::SPEAKER_MEANS, s as u64);
        let mean: Vec<f64> = (0..d)
            .map(|_| config.sigma_between * mean_rng.sample::<f64, _>(StandardNormal))
            .collect();
        let partition = if s % 2 == 0 { "F" } else { "M" };
        for u in 0..config.utts_per_speaker {
            let counter = (s * config.utts_per_speaker + u) as u64;
            let mut utt_rng = seeding::substream_rng(config.seed, stream::UTTERANCES, counter);
            let v: Vec<f64> = mean
                .iter()
                .map(|m| m + config.sigma_within * utt_rng.sample::<f64, _>(StandardNormal))
                .collect();
            records.push(UtteranceRecord::new(
                format!("s{s:04}_u{u:04}"),
                format!("s{s:04}"),
                partition,
                v,
            ));
        }
    }
    EmbeddingSet::new(d, records)?.length_normalized()
}

/// Which dataset a report row describes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Condition {
    Org,
    Mapped { strategy: String, mode: MappingMode },
}

impl Condition {
    pub fn label(&self) -> String {
        match self {
            Condition::Org => "org".to_string(),
            Condition::Mapped { strategy, mode } => format!("{strategy}/{}", mode.label()),
        }
    }

    fn mode(&self) -> Option<MappingMode> {
        match self {
            Condition::Org => None,
            Condition::Mapped { mode, .. } => Some(*mode),
        }
    }
}

/// All three metrics for one condition. The original population has no
/// de-identification entry (there is nothing to compare against).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: Condition,
    pub scatter: ScatterReport,
    pub linkability: EerResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deidentification: Option<EerResult>,
}

/// One seeded run over the original population and every mapping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub population: PopulationConfig,
    pub cohort: PopulationConfig,
    pub mappings: Vec<MappingConfig>,
    pub trials_seed: u64,
    pub ridge: f64,
    pub rows: Vec<ConditionRow>,
}

/// Run dispersion, linkability, and de-identification for the original
/// population and each mapping. Rows are ordered deterministically: `org`
/// first, then by `(strategy, mode)` label.
pub fn run_experiment(
    pop_cfg: &PopulationConfig,
    cohort_cfg: &PopulationConfig,
    mappings: &[MappingConfig],
    trials_seed: u64,
) -> Result<ExperimentReport> {
    pop_cfg.validate()?;
    cohort_cfg.validate()?;
    if pop_cfg.seed == cohort_cfg.seed {
        return Err(Error::invalid_config(
            "cohort.seed",
            "must differ from the population seed (disjoint streams)",
        ));
    }

    let pop = generate_population(pop_cfg)?;
    let cohort = generate_population(cohort_cfg)?;

    let mut rows = Vec::with_capacity(mappings.len() + 1);
    rows.push(ConditionRow {
        condition: Condition::Org,
        scatter: dispersion_of(&pop, DEFAULT_RIDGE)?,
        linkability: linkability_eer(&pop, trials_seed)?,
        deidentification: None,
    });

    for mapping in mappings {
        let anon = anonymize(&pop, &cohort, mapping)?;
        rows.push(ConditionRow {
            condition: Condition::Mapped {
                strategy: mapping.strategy.label().to_string(),
                mode: mapping.mode,
            },
            scatter: dispersion_of(&anon, DEFAULT_RIDGE)?,
            linkability: linkability_eer(&anon, trials_seed)?,
            deidentification: Some(deidentification_eer(&pop, &anon, trials_seed)?),
        });
    }
    rows[1..].sort_by_key(|r| r.condition.label());

    Ok(ExperimentReport {
        population: pop_cfg.clone(),
        cohort: cohort_cfg.clone(),
        mappings: mappings.to_vec(),
        trials_seed,
        ridge: DEFAULT_RIDGE,
        rows,
    })
}

/// Verdict for one trend assertion, with its numeric margin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub assertion: String,
    pub pass: bool,
    pub margin: f64,
    pub detail: String,
}

/// Minimum relative gap for the dispersion ordering to count as a pass.
pub const DISPERSION_GAP: f64 = 0.05;
/// Linkability margins below half a point are inconclusive.
pub const LINKABILITY_MARGIN: f64 = 0.005;
/// De-identification band and maximum a2o/a2a difference.
pub const DEID_BAND: (f64, f64) = (0.45, 0.55);
pub const DEID_MAX_DIFF: f64 = 0.02;

/// Evaluate the three trend assertions on one report. Mapped rows are
/// grouped by mode (every a2o row against every a2a row); the report must
/// contain at least one of each.
pub fn trend_check(report: &ExperimentReport) -> Result<Vec<TrendVerdict>> {
    let org = report
        .rows
        .iter()
        .find(|r| r.condition == Condition::Org)
        .ok_or_else(|| Error::MissingCondition {
            detail: "no org row".to_string(),
        })?;
    let group = |mode: MappingMode| -> Vec<&ConditionRow> {
        report
            .rows
            .iter()
            .filter(|r| r.condition.mode() == Some(mode))
            .collect()
    };
    let a2o = group(MappingMode::A2o);
    let a2a = group(MappingMode::A2a);
    if a2o.is_empty() || a2a.is_empty() {
        return Err(Error::MissingCondition {
            detail: format!(
                "need at least one a2o and one a2a row, got {} and {}",
                a2o.len(),
                a2a.len()
            ),
        });
    }

    let mean = |rows: &[&ConditionRow], f: &dyn Fn(&ConditionRow) -> f64| -> f64 {
        rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
    };

    let j_org = org.scatter.j_trace_ratio;
    let j_a2o = mean(&a2o, &|r| r.scatter.j_trace_ratio);
    let j_a2a = mean(&a2a, &|r| r.scatter.j_trace_ratio);
    let gap_org = (j_org - j_a2o) / j_org;
    let gap_modes = (j_a2o - j_a2a) / j_a2o;
    let dispersion_margin = gap_org.min(gap_modes);
    let dispersion = TrendVerdict {
        assertion: "dispersion".to_string(),
        pass: dispersion_margin >= DISPERSION_GAP,
        margin: dispersion_margin,
        detail: format!(
            "J org={j_org:.4} a2o={j_a2o:.4} a2a={j_a2a:.4}; smallest relative gap {dispersion_margin:.4} (needs >= {DISPERSION_GAP})"
        ),
    };

    let link_a2o = mean(&a2o, &|r| r.linkability.eer);
    let link_a2a = mean(&a2a, &|r| r.linkability.eer);
    let link_margin = link_a2a - link_a2o;
    let linkability = TrendVerdict {
        assertion: "linkability".to_string(),
        pass: link_margin >= LINKABILITY_MARGIN,
        margin: link_margin,
        detail: if link_margin.abs() < LINKABILITY_MARGIN {
            format!(
                "inconclusive: EER a2a−a2o = {:.2} points, below the {:.1}-point margin",
                link_margin * 100.0,
                LINKABILITY_MARGIN * 100.0
            )
        } else {
            format!(
                "EER a2o={:.2}% a2a={:.2}%; gap {:.2} points",
                link_a2o * 100.0,
                link_a2a * 100.0,
                link_margin * 100.0
            )
        },
    };

    let deid_mean = |rows: &[&ConditionRow]| -> Result<f64> {
        let mut sum = 0.0;
        for r in rows {
            sum += r
                .deidentification
                .as_ref()
                .ok_or_else(|| Error::MissingCondition {
                    detail: format!("row {} lacks de-identification", r.condition.label()),
                })?
                .eer;
        }
        Ok(sum / rows.len() as f64)
    };
    let deid_a2o = deid_mean(&a2o)?;
    let deid_a2a = deid_mean(&a2a)?;
    let (lo, hi) = DEID_BAND;
    let diff = (deid_a2o - deid_a2a).abs();
    let slack = [
        deid_a2o - lo,
        hi - deid_a2o,
        deid_a2a - lo,
        hi - deid_a2a,
        DEID_MAX_DIFF - diff,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    let deidentification = TrendVerdict {
        assertion: "de-identification".to_string(),
        pass: slack >= 0.0,
        margin: slack,
        detail: format!(
            "EER a2o={:.2}% a2a={:.2}% (band [{:.0}%, {:.0}%], |diff| {:.2} <= {:.0} points); binding slack {:.4}",
            deid_a2o * 100.0,
            deid_a2a * 100.0,
            lo * 100.0,
            hi * 100.0,
            diff * 100.0,
            DEID_MAX_DIFF * 100.0,
            slack
        ),
    };

    Ok(vec![dispersion, linkability, deidentification])
}

/// One assertion aggregated over seeds: majority verdict plus per-seed
/// margins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteTrend {
    pub assertion: String,
    pub pass: bool,
    pub passes: usize,
    pub runs: usize,
    pub per_seed_margins: Vec<f64>,
    pub mean_margin: f64,
}

/// Multi-seed experiment suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seeds: Vec<u64>,
    pub runs: Vec<ExperimentReport>,
    pub trends: Vec<SuiteTrend>,
}

/// Full simulate pipeline configuration. All fields have defaults, so `{}`
/// is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    /// Base population; each run adds its seed from `seeds`.
    pub population: PopulationConfig,
    /// Base cohort; its seed acts as a stream offset added to each run seed.
    pub cohort: PopulationConfig,
    pub mappings: Vec<MappingConfig>,
    pub seeds: Vec<u64>,
    pub trials_seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            population: PopulationConfig::default_population(),
            cohort: PopulationConfig::default_cohort(),
            mappings: default_mappings(),
            seeds: vec![1, 2, 3, 4, 5],
            trials_seed: 99,
        }
    }
}

/// The four stock mappings: a shared average voice and a shared fixed cohort
/// member (a2o), against per-utterance random-k averages and random members
/// (a2a).
pub fn default_mappings() -> Vec<MappingConfig> {
    let base = MappingConfig::default();
    vec![
        MappingConfig {
            strategy: PseudoStrategy::AverageAll,
            mode: MappingMode::A2o,
            ..base.clone()
        },
        MappingConfig {
            strategy: PseudoStrategy::RandomKAverage { k: 10 },
            mode: MappingMode::A2a,
            ..base.clone()
        },
        MappingConfig {
            strategy: PseudoStrategy::FixedMember { member_index: 3 },
            mode: MappingMode::A2o,
            ..base.clone()
        },
        MappingConfig {
            strategy: PseudoStrategy::RandomMember,
            mode: MappingMode::A2a,
            ..base
        },
    ]
}

/// Run the experiment once per seed and aggregate trend verdicts by
/// majority. Run `i` uses population seed `population.seed + seeds[i]` and
/// cohort seed `cohort.seed + seeds[i]`.
pub fn run_suite(config: &SimulateConfig) -> Result<SuiteReport> {
    if config.seeds.is_empty() {
        return Err(Error::invalid_config("seeds", "must be nonempty"));
    }
    if config.population.seed == config.cohort.seed {
        return Err(Error::invalid_config(
            "cohort.seed",
            "base seed must differ from the population base seed",
        ));
    }
    if config.mappings.is_empty() {
        return Err(Error::invalid_config("mappings", "must be nonempty"));
    }

    let mut runs = Vec::with_capacity(config.seeds.len());
    let mut verdicts: Vec<Vec<TrendVerdict>> = Vec::with_capacity(config.seeds.len());
    for &s in &config.seeds {
        let pop = PopulationConfig {
            seed: config.population.seed.wrapping_add(s),
            ..config.population.clone()
        };
        let cohort = PopulationConfig {
            seed: config.cohort.seed.wrapping_add(s),
            ..config.cohort.clone()
        };
        let report = run_experiment(&pop, &cohort, &config.mappings, config.trials_seed)?;
        verdicts.push(trend_check(&report)?);
        runs.push(report);
    }

    let n_assertions = verdicts[0].len();
    let mut trends = Vec::with_capacity(n_assertions);
    for i in 0..n_assertions {
        let assertion = verdicts[0][i].assertion.clone();
        let passes = verdicts.iter().filter(|v| v[i].pass).count();
        let margins: Vec<f64> = verdicts.iter().map(|v| v[i].margin).collect();
        let mean_margin = margins.iter().sum::<f64>() / margins.len() as f64;
        trends.push(SuiteTrend {
            assertion,
            pass: passes * 2 > verdicts.len(),
            passes,
            runs: verdicts.len(),
            per_seed_margins: margins,
            mean_margin,
        });
    }

    Ok(SuiteReport {
        seeds: config.seeds.clone(),
        runs,
        trends,
    })
}

/// Markdown rendering: one table per experiment plus the trend verdicts.
pub fn render_markdown(suite: &SuiteReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();

    let _ = writeln!(out, "# Experiment report\n");
    let _ = writeln!(out, "## Dispersion\n");
    let _ = writeln!(out, "| condition | seed | Tr(WᵀS_wW) | Tr(WᵀS_bW) | J (trace ratio) | J (eigen sum) |");
    let _ = writeln!(out, "|---|---|---|---|---|---|");
    for run in &suite.runs {
        for row in &run.rows {
            let sc = &row.scatter;
            let _ = writeln!(
                out,
                "| {} | {} | {:.3} | {:.3} | {:.4} | {:.4} |",
                row.condition.label(),
                run.population.seed,
                sc.tr_w,
                sc.tr_b,
                sc.j_trace_ratio,
                sc.j_lda
            );
        }
    }

    let _ = writeln!(out, "\n## Linkability (same-side ASV EER)\n");
    let _ = writeln!(out, "| condition | seed | EER (%) | targets | nontargets |");
    let _ = writeln!(out, "|---|---|---|---|---|");
    for run in &suite.runs {
        for row in &run.rows {
            let e = &row.linkability;
            let _ = writeln!(
                out,
                "| {} | {} | {:.2} | {} | {} |",
                row.condition.label(),
                run.population.seed,
                e.eer * 100.0,
                e.n_target,
                e.n_nontarget
            );
        }
    }

    let _ = writeln!(out, "\n## De-identification (cross-side ASV EER)\n");
    let _ = writeln!(out, "| condition | seed | EER (%) | targets | nontargets |");
    let _ = writeln!(out, "|---|---|---|---|---|");
    for run in &suite.runs {
        for row in &run.rows {
            if let Some(e) = &row.deidentification {
                let _ = writeln!(
                    out,
                    "| {} | {} | {:.2} | {} | {} |",
                    row.condition.label(),
                    run.population.seed,
                    e.eer * 100.0,
                    e.n_target,
                    e.n_nontarget
                );
            }
        }
    }

    let _ = writeln!(out, "\n## Trend verdicts ({}-seed majority)\n", suite.seeds.len());
    let _ = writeln!(out, "| assertion | verdict | passes | mean margin | per-seed margins |");
    let _ = writeln!(out, "|---|---|---|---|---|");
    for t in &suite.trends {
        let margins = t
            .per_seed_margins
            .iter()
            .map(|m| format!("{m:.4}"))
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(
            out,
            "| {} | {} | {}/{} | {:.4} | {} |",
            t.assertion,
            if t.pass { "pass" } else { "fail" },
            t.passes,
            t.runs,
            t.mean_margin,
            margins
        );
    }
    out
}
