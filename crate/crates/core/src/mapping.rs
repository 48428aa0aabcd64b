//! Pseudo-speaker selection and the anonymization operator.
//!
//! Anonymization replaces each utterance's voice attributes with a pseudo
//! speaker while a residual of the source survives:
//!
//! ```text
//! y_i = (1−ρ)·p_i + ρ·R(x̃_i) + e_i,   then length-normalized
//! ```
//!
//! where `x̃_i` is the length-normalized input, `p_i` the pseudo vector
//! (shared across utterances in any-to-one mode, drawn per utterance in
//! any-to-any mode), `R` a fixed seeded orthogonal map, and `e_i` isotropic
//! Gaussian noise. The residual enters through `R` rather than identity so
//! that same-side comparisons retain speaker structure while cross-side
//! comparisons against the original space sit near chance;
//! [`ResidualMap::identity`] exists for tests that need the degenerate case.
//!
//! Cohort entities are speaker means (strategies operate at speaker
//! granularity), and all per-utterance randomness is counter-seeded from the
//! utterance's rank in sorted `utt_id` order, so outputs are bitwise
//! reproducible and independent of iteration order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSet, UtteranceRecord};
use crate::error::{Error, Result};
use crate::seeding::{self, stream};

/// Pseudo-speaker selection strategy over a cohort of speaker means.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PseudoStrategy {
    /// One designated cohort member (speakers sorted by id).
    FixedMember { member_index: usize },
    /// Uniformly seeded choice of one cohort member.
    RandomMember,
    /// Mean of all cohort speaker means.
    AverageAll,
    /// Mean of `k` members drawn without replacement.
    RandomKAverage { k: usize },
    /// Mean of the `k` members with largest cosine distance from the source.
    FarthestKAverage { k: usize },
}

impl PseudoStrategy {
    pub fn label(&self) -> &'static str {
        match self {
            PseudoStrategy::FixedMember { .. } => "fixed-member",
            PseudoStrategy::RandomMember => "random-member",
            PseudoStrategy::AverageAll => "average-all",
            PseudoStrategy::RandomKAverage { .. } => "random-k-average",
            PseudoStrategy::FarthestKAverage { .. } => "farthest-k-average",
        }
    }

    pub fn needs_source(&self) -> bool {
        matches!(self, PseudoStrategy::FarthestKAverage { .. })
    }

    fn validate(&self, cohort_speakers: usize) -> Result<()> {
        match *self {
            PseudoStrategy::FixedMember { member_index } => {
                if member_index >= cohort_speakers {
                    return Err(Error::invalid_config(
                        "strategy.member_index",
                        format!("{member_index} out of bounds for cohort of {cohort_speakers} speakers"),
                    ));
                }
            }
            PseudoStrategy::RandomKAverage { k } | PseudoStrategy::FarthestKAverage { k } => {
                if k == 0 {
                    return Err(Error::invalid_config("strategy.k", "must be at least 1"));
                }
                if k > cohort_speakers {
                    return Err(Error::invalid_config(
                        "strategy.k",
                        format!("{k} exceeds cohort of {cohort_speakers} speakers"),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Assignment mode: one shared pseudo speaker or one per utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingMode {
    A2o,
    A2a,
}

impl MappingMode {
    pub fn label(&self) -> &'static str {
        match self {
            MappingMode::A2o => "a2o",
            MappingMode::A2a => "a2a",
        }
    }
}

/// Full anonymization configuration: strategy, mode, residual strength, and
/// seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingConfig {
    pub strategy: PseudoStrategy,
    pub mode: MappingMode,
    /// Residual strength in [0, 1]: 0 = total voice replacement, 1 = only
    /// the (rotated) source survives.
    pub rho: f64,
    pub noise_sigma: f64,
    pub residual_seed: u64,
    pub assignment_seed: u64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            strategy: PseudoStrategy::RandomKAverage { k: 10 },
            mode: MappingMode::A2a,
            rho: 0.2,
            noise_sigma: 0.05,
            residual_seed: 7,
            assignment_seed: 11,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self, cohort_speakers: usize) -> Result<()> {
        if !self.rho.is_finite() || !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid_config("rho", "must be in [0, 1]"));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::invalid_config("noise_sigma", "must be >= 0"));
        }
        self.strategy.validate(cohort_speakers)
    }

    /// `strategy/mode` label for report rows.
    pub fn condition_label(&self) -> String {
        format!("{}/{}", self.strategy.label(), self.mode.label())
    }
}

/// Fixed orthogonal map modeling where residual speaker structure lives in
/// the anonymized space.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMap {
    matrix: DMatrix<f64>,
}

impl ResidualMap {
    /// Orthonormalization of a seeded Gaussian matrix. Deterministic per
    /// `(dim, seed)`; each column's first nonzero entry is nonnegative.
    pub fn from_seed(dim: usize, residual_seed: u64) -> Self {
        let mut rng = seeding::substream_rng(residual_seed, stream::PSEUDO, u64::MAX);
        let gaussian = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = gaussian.qr();
        let mut q = qr.q();
        for j in 0..dim {
            let leading = (0..dim).find(|&i| q[(i, j)] != 0.0);
            if let Some(i) = leading {
                if q[(i, j)] < 0.0 {
                    for r in 0..dim {
                        q[(r, j)] = -q[(r, j)];
                    }
                }
            }
        }
        Self { matrix: q }
    }

    /// Identity override for the trivial test case (rho = 1, no noise).
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }
}

/// Seeded orthogonal residual map for `(dim, residual_seed)`.
pub fn residual_map(dim: usize, residual_seed: u64) -> ResidualMap {
    ResidualMap::from_seed(dim, residual_seed)
}

/// Cohort speaker means in sorted `spk_id` order.
fn cohort_speaker_means(cohort: &EmbeddingSet) -> Result<Vec<DVector<f64>>> {
    Ok(cohort
        .speaker_summaries()?
        .into_iter()
        .map(|s| DVector::from_vec(s.mean))
        .collect())
}

fn normalized_or(v: DVector<f64>, err: impl FnOnce() -> Error) -> Result<DVector<f64>> {
    let norm = v.norm();
    if norm == 0.0 {
        return Err(err());
    }
    Ok(v / norm)
}

/// Select a pseudo-speaker vector from a cohort. The result is always
/// length-normalized.
pub fn select_pseudo(
    strategy: &PseudoStrategy,
    cohort: &EmbeddingSet,
    source_mean: Option<&DVector<f64>>,
    draw_seed: u64,
) -> Result<DVector<f64>> {
    strategy.validate(cohort.speaker_count())?;
    let means = cohort_speaker_means(cohort)?;
    select_from_means(strategy, &means, source_mean, draw_seed)
}

fn select_from_means(
    strategy: &PseudoStrategy,
    means: &[DVector<f64>],
    source_mean: Option<&DVector<f64>>,
    draw_seed: u64,
) -> Result<DVector<f64>> {
    let normalize = |v: DVector<f64>| {
        normalized_or(v, || Error::ZeroNormPseudo {
            detail: strategy.label().to_string(),
        })
    };
    match *strategy {
        PseudoStrategy::FixedMember { member_index } => normalize(means[member_index].clone()),
        PseudoStrategy::RandomMember => {
            let mut rng = seeding::substream_rng(draw_seed, stream::PSEUDO, 0);
            let idx = rng.random_range(0..means.len());
            normalize(means[idx].clone())
        }
        PseudoStrategy::AverageAll => normalize(mean_of(means, 0..means.len())),
        PseudoStrategy::RandomKAverage { k } => {
            let mut rng = seeding::substream_rng(draw_seed, stream::PSEUDO, 0);
            let mut picks = rand::seq::index::sample(&mut rng, means.len(), k).into_vec();
            // Averaging in cohort order makes k = cohort size coincide with
            // average-all exactly.
            picks.sort_unstable();
            normalize(mean_of(means, picks.into_iter()))
        }
        PseudoStrategy::FarthestKAverage { k } => {
            let source = source_mean.ok_or_else(|| {
                Error::invalid_config("source_mean", "required for farthest-k-average")
            })?;
            let source_unit = normalized_or(source.clone(), || Error::ZeroNormPseudo {
                detail: "source mean".to_string(),
            })?;
            let mut scored: Vec<(f64, usize)> = means
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let norm = m.norm();
                    let cos = if norm == 0.0 {
                        1.0 // zero mean treated as nearest; never selected first
                    } else {
                        m.dot(&source_unit) / norm
                    };
                    (cos, i)
                })
                .collect();
            // Largest cosine distance = smallest cosine; ties broken by
            // speaker order.
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut picks: Vec<usize> = scored[..k].iter().map(|&(_, i)| i).collect();
            picks.sort_unstable();
            normalize(mean_of(means, picks.into_iter()))
        }
    }
}

fn mean_of(means: &[DVector<f64>], picks: impl IntoIterator<Item = usize>) -> DVector<f64> {
    let mut sum = DVector::zeros(means[0].len());
    let mut count = 0usize;
    for i in picks {
        sum += &means[i];
        count += 1;
    }
    sum / count as f64
}

/// Pseudo vector assigned to one utterance, for sidecars and contract tests.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoAssignment {
    pub utt_id: String,
    pub vector: Vec<f64>,
}

/// Anonymized set plus the per-utterance pseudo vectors that produced it.
#[derive(Debug, Clone)]
pub struct AnonymizedOutcome {
    pub anonymized: EmbeddingSet,
    pub pseudos: Vec<PseudoAssignment>,
}

/// Anonymize a set against a cohort. Labels (`utt_id`, `spk_id`, partition)
/// and row order are preserved; vectors are replaced by the mixing formula
/// and length-normalized.
pub fn anonymize(
    set: &EmbeddingSet,
    cohort: &EmbeddingSet,
    config: &MappingConfig,
) -> Result<EmbeddingSet> {
    anonymize_traced(set, cohort, config).map(|o| o.anonymized)
}

/// [`anonymize`] with the per-utterance pseudo assignments exposed.
pub fn anonymize_traced(
    set: &EmbeddingSet,
    cohort: &EmbeddingSet,
    config: &MappingConfig,
) -> Result<AnonymizedOutcome> {
    let residual = ResidualMap::from_seed(set.dim(), config.residual_seed);
    anonymize_with_residual(set, cohort, config, &residual)
}

/// [`anonymize_traced`] with an explicit residual map (identity override for
/// tests; everything else should derive it from `residual_seed`).
pub fn anonymize_with_residual(
    set: &EmbeddingSet,
    cohort: &EmbeddingSet,
    config: &MappingConfig,
    residual: &ResidualMap,
) -> Result<AnonymizedOutcome> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    if cohort.dim() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            got: cohort.dim(),
        });
    }
    if residual.dim() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            got: residual.dim(),
        });
    }
    config.validate(cohort.speaker_count())?;

    let dim = set.dim();
    let cohort_means = cohort_speaker_means(cohort)?;
    let normalized = set.length_normalized()?;

    // Source means for farthest-k: the set's global mean in a2o mode, the
    // utterance's speaker mean in a2a mode (all on normalized vectors).
    let global_source = if config.strategy.needs_source() {
        let mut sum = DVector::zeros(dim);
        for rec in normalized.records() {
            sum += DVector::from_column_slice(&rec.vector);
        }
        Some(normalized_or(sum / set.len() as f64, || {
            Error::ZeroNormPseudo {
                detail: "global source mean".to_string(),
            }
        })?)
    } else {
        None
    };
    let speaker_source: std::collections::HashMap<String, DVector<f64>> =
        if config.strategy.needs_source() && config.mode == MappingMode::A2a {
            normalized
                .speaker_summaries()?
                .into_iter()
                .map(|s| {
                    let spk = s.spk_id.clone();
                    normalized_or(DVector::from_vec(s.mean), || Error::ZeroNormMean {
                        spk_id: s.spk_id.clone(),
                    })
                    .map(|v| (spk, v))
                })
                .collect::<Result<_>>()?
        } else {
            Default::default()
        };

    // Rank in sorted utt_id order drives all per-utterance substreams.
    let mut sorted: Vec<&str> = normalized.records().iter().map(|r| r.utt_id.as_str()).collect();
    sorted.sort_unstable();
    let rank_of: std::collections::HashMap<&str, u64> = sorted
        .iter()
        .enumerate()
        .map(|(i, &u)| (u, i as u64))
        .collect();

    let shared_pseudo = match config.mode {
        MappingMode::A2o => Some(select_from_means(
            &config.strategy,
            &cohort_means,
            global_source.as_ref(),
            config.assignment_seed,
        )?),
        MappingMode::A2a => None,
    };

    let mut records = Vec::with_capacity(set.len());
    let mut pseudos = Vec::with_capacity(set.len());
    for rec in normalized.records() {
        let rank = rank_of[rec.utt_id.as_str()];
        let pseudo = match &shared_pseudo {
            Some(p) => p.clone(),
            None => {
                let source = match config.strategy.needs_source() {
                    true => speaker_source.get(&rec.spk_id).or(global_source.as_ref()),
                    false => None,
                };
                select_from_means(
                    &config.strategy,
                    &cohort_means,
                    source,
                    seeding::derive_seed(config.assignment_seed, stream::PSEUDO, rank),
                )?
            }
        };

        let x = DVector::from_column_slice(&rec.vector);
        let mut y = &pseudo * (1.0 - config.rho) + residual.apply(&x) * config.rho;
        if config.noise_sigma > 0.0 {
            let mut rng = seeding::substream_rng(config.assignment_seed, stream::NOISE, rank);
            for i in 0..dim {
                y[i] += config.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let y = normalized_or(y, || Error::ZeroNorm {
            utt_id: rec.utt_id.clone(),
        })?;

        records.push(UtteranceRecord::new(
            rec.utt_id.clone(),
            rec.spk_id.clone(),
            rec.partition.clone(),
            y.iter().copied().collect(),
        ));
        pseudos.push(PseudoAssignment {
            utt_id: rec.utt_id.clone(),
            vector: pseudo.iter().copied().collect(),
        });
    }

    Ok(AnonymizedOutcome {
        anonymized: EmbeddingSet::new(dim, records)?,
        pseudos,
    })
}
