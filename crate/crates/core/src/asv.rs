//! Attacker-side ASV evaluation: trial generation, cosine scoring, and EER.
//!
//! The scoring backend is cosine similarity between a speaker's enrollment
//! model (mean of length-normalized enrollment vectors, re-normalized) and
//! the length-normalized test vector. EER uses an explicit, oracle-checkable
//! rule: candidate thresholds at midpoints between adjacent distinct scores
//! plus below-min/above-max sentinels, `FAR(θ)` = fraction of nontarget
//! scores `≥ θ`, `FRR(θ)` = fraction of target scores `< θ`, and the reported
//! operating point is the crossing of the piecewise-linear FAR and FRR
//! curves. [`oracle_eer`] re-derives the same quantity by brute force and is
//! kept independent of [`eer`]'s implementation.
//!
//! Scoring of independent trials is order-independent (scores are keyed by
//! trial), and every function here is pure: identical inputs and seeds give
//! identical outputs.

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::seeding::{self, stream};

/// DET curves are downsampled to at most this many points in reports; the
/// EER and threshold themselves are always computed on the full curve.
const MAX_DET_POINTS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialLabel {
    Target,
    Nontarget,
}

impl TrialLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialLabel::Target => "target",
            TrialLabel::Nontarget => "nontarget",
        }
    }
}

/// One verification trial: an enrollment speaker against a test utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll_spk: String,
    pub test_utt: String,
    pub label: TrialLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub trial: Trial,
    pub score: f64,
}

/// Scored trials with label tallies. Always holds at least one target and
/// one nontarget score, all finite.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    scored: Vec<ScoredTrial>,
    n_target: usize,
    n_nontarget: usize,
}

impl ScoreSet {
    pub fn new(scored: Vec<ScoredTrial>) -> Result<Self> {
        let mut n_target = 0;
        let mut n_nontarget = 0;
        for s in &scored {
            if !s.score.is_finite() {
                return Err(Error::NonFiniteCoordinate {
                    row: None,
                    value: s.score,
                });
            }
            match s.trial.label {
                TrialLabel::Target => n_target += 1,
                TrialLabel::Nontarget => n_nontarget += 1,
            }
        }
        if n_target == 0 {
            return Err(Error::TooFew {
                what: "target scores",
                needed: 1,
                got: 0,
            });
        }
        if n_nontarget == 0 {
            return Err(Error::TooFew {
                what: "nontarget scores",
                needed: 1,
                got: 0,
            });
        }
        Ok(Self {
            scored,
            n_target,
            n_nontarget,
        })
    }

    pub fn scored(&self) -> &[ScoredTrial] {
        &self.scored
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    pub fn n_nontarget(&self) -> usize {
        self.n_nontarget
    }

    fn split(&self) -> (Vec<f64>, Vec<f64>) {
        let mut targets = Vec::with_capacity(self.n_target);
        let mut nontargets = Vec::with_capacity(self.n_nontarget);
        for s in &self.scored {
            match s.trial.label {
                TrialLabel::Target => targets.push(s.score),
                TrialLabel::Nontarget => nontargets.push(s.score),
            }
        }
        (targets, nontargets)
    }
}

/// EER with its interpolated threshold and a DET curve sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    /// `[threshold, far, frr]` triples, thresholds increasing.
    pub det_points: Vec<[f64; 3]>,
}

/// Generate target and nontarget trials between an enrollment set and a test
/// set.
///
/// Each test utterance whose speaker is enrolled yields one target trial,
/// followed by nontarget trials against up to `max_nontarget_per_test` other
/// enrollment speakers (`None` = all of them), chosen without replacement by
/// a per-utterance substream of `seed` (so the choice does not depend on row
/// order). A target trial is skipped when it would compare an utterance
/// against an enrollment consisting of exactly that same record, which only
/// happens when the same set is used on both sides and the speaker has a
/// single utterance.
pub fn generate_trials(
    enroll: &EmbeddingSet,
    test: &EmbeddingSet,
    max_nontarget_per_test: Option<usize>,
    seed: u64,
) -> Result<Vec<Trial>> {
    if enroll.is_empty() || test.is_empty() {
        return Err(Error::EmptySet);
    }
    let enroll_speakers: Vec<&str> = enroll.speaker_ids();
    let enrolled: HashSet<&str> = enroll_speakers.iter().copied().collect();

    let mut enroll_by_spk: HashMap<&str, Vec<&crate::embedding::UtteranceRecord>> = HashMap::new();
    for rec in enroll.records() {
        enroll_by_spk.entry(rec.spk_id.as_str()).or_default().push(rec);
    }

    // Rank of each test utterance in sorted utt_id order, for seeding.
    let mut sorted_utts: Vec<&str> = test.records().iter().map(|r| r.utt_id.as_str()).collect();
    sorted_utts.sort_unstable();
    let rank_of: HashMap<&str, u64> = sorted_utts
        .iter()
        .enumerate()
        .map(|(i, &u)| (u, i as u64))
        .collect();

    let mut trials = Vec::new();
    let mut have_target = false;
    for rec in test.records() {
        let spk = rec.spk_id.as_str();
        if enrolled.contains(spk) {
            let self_only = enroll_by_spk[spk].len() == 1
                && enroll_by_spk[spk][0].utt_id == rec.utt_id
                && enroll_by_spk[spk][0].vector == rec.vector;
            if !self_only {
                trials.push(Trial {
                    enroll_spk: spk.to_string(),
                    test_utt: rec.utt_id.clone(),
                    label: TrialLabel::Target,
                });
                have_target = true;
            }
        }

        let others: Vec<&str> = enroll_speakers
            .iter()
            .copied()
            .filter(|&s| s != spk)
            .collect();
        let chosen: Vec<&str> = match max_nontarget_per_test {
            Some(k) if k < others.len() => {
                let mut rng = seeding::substream_rng(seed, stream::TRIALS, rank_of[rec.utt_id.as_str()]);
                let mut picks = rand::seq::index::sample(&mut rng, others.len(), k).into_vec();
                picks.sort_unstable();
                picks.into_iter().map(|i| others[i]).collect()
            }
            _ => others,
        };
        for other in chosen {
            trials.push(Trial {
                enroll_spk: other.to_string(),
                test_utt: rec.utt_id.clone(),
                label: TrialLabel::Nontarget,
            });
        }
    }
    if !have_target {
        return Err(Error::NoTargetTrials);
    }
    Ok(trials)
}

fn unit_vector(v: &[f64], utt_id: &str) -> Result<DVector<f64>> {
    let vec = DVector::from_column_slice(v);
    let norm = vec.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm {
            utt_id: utt_id.to_string(),
        });
    }
    Ok(vec / norm)
}

/// Multi-utterance enrollment: mean of the speaker's length-normalized
/// vectors, re-normalized to unit length.
pub fn enrollment_model(enroll: &EmbeddingSet, spk_id: &str) -> Result<DVector<f64>> {
    let mut sum = DVector::zeros(enroll.dim());
    let mut count = 0usize;
    for rec in enroll.records().iter().filter(|r| r.spk_id == spk_id) {
        sum += unit_vector(&rec.vector, &rec.utt_id)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::UnknownSpeaker {
            spk_id: spk_id.to_string(),
        });
    }
    sum /= count as f64;
    let norm = sum.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNormMean {
            spk_id: spk_id.to_string(),
        });
    }
    Ok(sum / norm)
}

/// Cosine-score a trial list. Enrollment models are computed once per
/// distinct speaker.
pub fn score_trials(
    enroll: &EmbeddingSet,
    test: &EmbeddingSet,
    trials: &[Trial],
) -> Result<ScoreSet> {
    let test_by_utt: HashMap<&str, &crate::embedding::UtteranceRecord> = test
        .records()
        .iter()
        .map(|r| (r.utt_id.as_str(), r))
        .collect();

    let mut models: HashMap<String, DVector<f64>> = HashMap::new();
    let mut scored = Vec::with_capacity(trials.len());
    for trial in trials {
        if !models.contains_key(&trial.enroll_spk) {
            let m = enrollment_model(enroll, &trial.enroll_spk).map_err(|e| {
                Error::UnresolvableTrial {
                    enroll_spk: trial.enroll_spk.clone(),
                    test_utt: trial.test_utt.clone(),
                    detail: e.to_string(),
                }
            })?;
            models.insert(trial.enroll_spk.clone(), m);
        }
        let model = &models[&trial.enroll_spk];
        let rec = test_by_utt.get(trial.test_utt.as_str()).ok_or_else(|| {
            Error::UnresolvableTrial {
                enroll_spk: trial.enroll_spk.clone(),
                test_utt: trial.test_utt.clone(),
                detail: "test utterance not found".to_string(),
            }
        })?;
        let x = unit_vector(&rec.vector, &rec.utt_id).map_err(|e| Error::UnresolvableTrial {
            enroll_spk: trial.enroll_spk.clone(),
            test_utt: trial.test_utt.clone(),
            detail: e.to_string(),
        })?;
        scored.push(ScoredTrial {
            trial: trial.clone(),
            score: model.dot(&x),
        });
    }
    ScoreSet::new(scored)
}

/// Candidate thresholds (below-min sentinel, midpoints between adjacent
/// distinct scores, above-max sentinel) with the step-function FAR/FRR
/// values at each.
fn far_frr_curve(targets: &[f64], nontargets: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut t_sorted = targets.to_vec();
    let mut nt_sorted = nontargets.to_vec();
    t_sorted.sort_by(f64::total_cmp);
    nt_sorted.sort_by(f64::total_cmp);

    let mut all: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();

    let mut thresholds = Vec::with_capacity(all.len() + 1);
    thresholds.push(all[0] - 1.0);
    for w in all.windows(2) {
        thresholds.push(0.5 * (w[0] + w[1]));
    }
    thresholds.push(all[all.len() - 1] + 1.0);

    let n_t = t_sorted.len() as f64;
    let n_nt = nt_sorted.len() as f64;
    let far: Vec<f64> = thresholds
        .iter()
        .map(|&th| {
            let below = nt_sorted.partition_point(|&s| s < th);
            (nt_sorted.len() - below) as f64 / n_nt
        })
        .collect();
    let frr: Vec<f64> = thresholds
        .iter()
        .map(|&th| t_sorted.partition_point(|&s| s < th) as f64 / n_t)
        .collect();
    (thresholds, far, frr)
}

fn interpolate_crossing(thresholds: &[f64], far: &[f64], frr: &[f64]) -> (f64, f64) {
    for k in 0..thresholds.len() {
        let g = far[k] - frr[k];
        if g <= 0.0 {
            if g == 0.0 {
                return (far[k], thresholds[k]);
            }
            // FAR−FRR starts at +1 (below-min sentinel), so a sign change
            // always has a bracketing predecessor.
            let gp = far[k - 1] - frr[k - 1];
            let t = gp / (gp - g);
            let eer = far[k - 1] + (far[k] - far[k - 1]) * t;
            let theta = thresholds[k - 1] + (thresholds[k] - thresholds[k - 1]) * t;
            return (eer, theta);
        }
    }
    unreachable!("FAR−FRR is −1 at the above-max sentinel");
}

fn downsample_det(thresholds: &[f64], far: &[f64], frr: &[f64]) -> Vec<[f64; 3]> {
    let n = thresholds.len();
    let take = n.min(MAX_DET_POINTS);
    (0..take)
        .map(|i| {
            let idx = if take == 1 { 0 } else { i * (n - 1) / (take - 1) };
            [thresholds[idx], far[idx], frr[idx]]
        })
        .collect()
}

/// EER at the crossing of the piecewise-linear FAR/FRR curves.
pub fn eer(scores: &ScoreSet) -> Result<EerResult> {
    let (targets, nontargets) = scores.split();
    let (thresholds, far, frr) = far_frr_curve(&targets, &nontargets);
    let (eer, threshold) = interpolate_crossing(&thresholds, &far, &frr);
    Ok(EerResult {
        eer,
        threshold,
        n_target: scores.n_target(),
        n_nontarget: scores.n_nontarget(),
        det_points: downsample_det(&thresholds, &far, &frr),
    })
}

/// Brute-force EER: evaluates FAR/FRR by direct counting at every candidate
/// threshold (no sorting-based counting) and finds the crossing by linear
/// search with the same interpolation rule. Quadratic; intended for tests
/// and cross-checks, not production scoring.
pub fn oracle_eer(scores: &ScoreSet) -> Result<f64> {
    let (targets, nontargets) = scores.split();

    let mut distinct: Vec<f64> = Vec::new();
    for &s in targets.iter().chain(&nontargets) {
        if !distinct.iter().any(|&d| d == s) {
            distinct.push(s);
        }
    }
    distinct.sort_by(f64::total_cmp);

    let mut candidates = vec![distinct[0] - 1.0];
    for i in 1..distinct.len() {
        candidates.push(0.5 * (distinct[i - 1] + distinct[i]));
    }
    candidates.push(distinct[distinct.len() - 1] + 1.0);

    let count_rates = |th: f64| -> (f64, f64) {
        let mut accepted_nontargets = 0usize;
        for &s in &nontargets {
            if s >= th {
                accepted_nontargets += 1;
            }
        }
        let mut rejected_targets = 0usize;
        for &s in &targets {
            if s < th {
                rejected_targets += 1;
            }
        }
        (
            accepted_nontargets as f64 / nontargets.len() as f64,
            rejected_targets as f64 / targets.len() as f64,
        )
    };

    let mut prev: Option<(f64, f64)> = None;
    for &th in &candidates {
        let (far, frr) = count_rates(th);
        let g = far - frr;
        if g <= 0.0 {
            if g == 0.0 {
                return Ok(far);
            }
            let (pf, pr) = prev.expect("curve starts with FAR=1, FRR=0");
            let gp = pf - pr;
            let t = gp / (gp - g);
            return Ok(pf + (far - pf) * t);
        }
        prev = Some((far, frr));
    }
    unreachable!("crossing exists between the sentinels")
}

/// Same-side linkability: split each speaker's utterances into enrollment
/// (even ranks) and test (odd ranks) halves by sorted `utt_id`, then run the
/// full trial/score/EER pipeline with anonymized data on both sides.
pub fn linkability_eer(anon: &EmbeddingSet, trials_seed: u64) -> Result<EerResult> {
    let (enroll, test) = parity_split(anon)?;
    evaluate_pair(&enroll, &test, trials_seed)
}

/// Cross-side de-identification: enrollment models from the original set,
/// test vectors from its anonymized counterpart. Both sets must cover the
/// same utterances with the same speaker labels.
pub fn deidentification_eer(
    original: &EmbeddingSet,
    anon: &EmbeddingSet,
    trials_seed: u64,
) -> Result<EerResult> {
    check_same_utterances(original, anon)?;
    evaluate_pair(original, anon, trials_seed)
}

/// Verify two sets cover the same `utt_id` universe with the same speaker
/// labels (the precondition for cross-side comparison).
pub fn check_same_utterances(original: &EmbeddingSet, anon: &EmbeddingSet) -> Result<()> {
    let orig_ids: BTreeMap<&str, &str> = original
        .records()
        .iter()
        .map(|r| (r.utt_id.as_str(), r.spk_id.as_str()))
        .collect();
    let anon_ids: BTreeMap<&str, &str> = anon
        .records()
        .iter()
        .map(|r| (r.utt_id.as_str(), r.spk_id.as_str()))
        .collect();
    if orig_ids != anon_ids {
        let detail = orig_ids
            .iter()
            .find(|(u, s)| anon_ids.get(*u) != Some(s))
            .map(|(u, _)| format!("utterance {u:?} differs"))
            .or_else(|| {
                anon_ids
                    .keys()
                    .find(|u| !orig_ids.contains_key(*u))
                    .map(|u| format!("utterance {u:?} only in anonymized set"))
            })
            .unwrap_or_else(|| "sets differ".to_string());
        return Err(Error::IdUniverseMismatch { detail });
    }
    Ok(())
}

/// Generate unbounded trials between two sets, score, and compute EER.
pub fn evaluate_pair(
    enroll: &EmbeddingSet,
    test: &EmbeddingSet,
    trials_seed: u64,
) -> Result<EerResult> {
    let trials = generate_trials(enroll, test, None, trials_seed)?;
    let scores = score_trials(enroll, test, &trials)?;
    eer(&scores)
}

fn parity_split(set: &EmbeddingSet) -> Result<(EmbeddingSet, EmbeddingSet)> {
    let mut by_spk: BTreeMap<&str, Vec<&crate::embedding::UtteranceRecord>> = BTreeMap::new();
    for rec in set.records() {
        by_spk.entry(rec.spk_id.as_str()).or_default().push(rec);
    }
    let mut enroll = Vec::new();
    let mut test = Vec::new();
    for (spk, mut recs) in by_spk {
        if recs.len() < 2 {
            return Err(Error::SpeakerTooFew {
                spk_id: spk.to_string(),
                got: recs.len(),
                needed: 2,
            });
        }
        recs.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        for (i, rec) in recs.into_iter().enumerate() {
            if i % 2 == 0 {
                enroll.push(rec.clone());
            } else {
                test.push(rec.clone());
            }
        }
    }
    Ok((
        EmbeddingSet::new(set.dim(), enroll)?,
        EmbeddingSet::new(set.dim(), test)?,
    ))
}

/// Per-partition EER results plus both aggregate conventions. The paper-style
/// "avg" is ambiguous between unweighted and trial-count-weighted means, so
/// both are reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionedEer {
    pub partitions: Vec<PartitionEer>,
    pub unweighted_avg_eer: f64,
    pub trial_weighted_avg_eer: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionEer {
    pub partition: String,
    pub result: EerResult,
}

pub fn summarize_partitions(parts: Vec<(String, EerResult)>) -> Result<PartitionedEer> {
    if parts.is_empty() {
        return Err(Error::EmptySet);
    }
    let unweighted = parts.iter().map(|(_, r)| r.eer).sum::<f64>() / parts.len() as f64;
    let total_trials: usize = parts
        .iter()
        .map(|(_, r)| r.n_target + r.n_nontarget)
        .sum();
    let weighted = parts
        .iter()
        .map(|(_, r)| r.eer * (r.n_target + r.n_nontarget) as f64)
        .sum::<f64>()
        / total_trials as f64;
    Ok(PartitionedEer {
        partitions: parts
            .into_iter()
            .map(|(partition, result)| PartitionEer { partition, result })
            .collect(),
        unweighted_avg_eer: unweighted,
        trial_weighted_avg_eer: weighted,
    })
}

// ---------------------------------------------------------------------------
// Text interchange: trial and score files.
// ---------------------------------------------------------------------------

/// `enroll_spk test_utt target|nontarget` lines.
pub fn trials_to_string(trials: &[Trial]) -> String {
    let mut out = String::new();
    for t in trials {
        out.push_str(&t.enroll_spk);
        out.push(' ');
        out.push_str(&t.test_utt);
        out.push(' ');
        out.push_str(t.label.as_str());
        out.push('\n');
    }
    out
}

pub fn trials_from_str(text: &str) -> Result<Vec<Trial>> {
    let mut trials = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let row = idx + 1;
        let mut parts = line.split(' ');
        let (Some(enroll), Some(utt), Some(label), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::BadLine {
                what: "trial",
                row,
                detail: "expected `enroll_spk test_utt target|nontarget`".to_string(),
            });
        };
        let label = match label {
            "target" => TrialLabel::Target,
            "nontarget" => TrialLabel::Nontarget,
            other => {
                return Err(Error::BadLine {
                    what: "trial",
                    row,
                    detail: format!("unknown label {other:?}"),
                })
            }
        };
        trials.push(Trial {
            enroll_spk: enroll.to_string(),
            test_utt: utt.to_string(),
            label,
        });
    }
    Ok(trials)
}

/// `enroll_spk test_utt score` lines; scores in shortest exact round-trip
/// form.
pub fn scores_to_string(scores: &ScoreSet) -> String {
    let mut out = String::new();
    for s in scores.scored() {
        out.push_str(&format!(
            "{} {} {}\n",
            s.trial.enroll_spk, s.trial.test_utt, s.score
        ));
    }
    out
}

pub fn scores_from_str(text: &str) -> Result<Vec<(String, String, f64)>> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let row = idx + 1;
        let mut parts = line.split(' ');
        let (Some(enroll), Some(utt), Some(score), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::BadLine {
                what: "score",
                row,
                detail: "expected `enroll_spk test_utt score`".to_string(),
            });
        };
        let score: f64 = score.parse().map_err(|_| Error::BadLine {
            what: "score",
            row,
            detail: format!("non-numeric score {score:?}"),
        })?;
        rows.push((enroll.to_string(), utt.to_string(), score));
    }
    Ok(rows)
}

/// Join a trial list (which carries labels) with a score file (which does
/// not). Every trial must have exactly one score and vice versa.
pub fn join_scores(trials: &[Trial], raw: &[(String, String, f64)]) -> Result<ScoreSet> {
    let mut by_pair: HashMap<(&str, &str), f64> = HashMap::with_capacity(raw.len());
    for (enroll, utt, score) in raw {
        if by_pair.insert((enroll.as_str(), utt.as_str()), *score).is_some() {
            return Err(Error::UnresolvableTrial {
                enroll_spk: enroll.clone(),
                test_utt: utt.clone(),
                detail: "duplicate score line".to_string(),
            });
        }
    }
    if by_pair.len() != trials.len() {
        return Err(Error::UnresolvableTrial {
            enroll_spk: "-".to_string(),
            test_utt: "-".to_string(),
            detail: format!("{} scores for {} trials", by_pair.len(), trials.len()),
        });
    }
    let scored = trials
        .iter()
        .map(|t| {
            by_pair
                .get(&(t.enroll_spk.as_str(), t.test_utt.as_str()))
                .map(|&score| ScoredTrial {
                    trial: t.clone(),
                    score,
                })
                .ok_or_else(|| Error::UnresolvableTrial {
                    enroll_spk: t.enroll_spk.clone(),
                    test_utt: t.test_utt.clone(),
                    detail: "no score for trial".to_string(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreSet::new(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::UtteranceRecord;
    use rand::Rng;

    fn rec(utt: &str, spk: &str, v: &[f64]) -> UtteranceRecord {
        UtteranceRecord::new(utt, spk, "F", v.to_vec())
    }

    fn score_set(targets: &[f64], nontargets: &[f64]) -> ScoreSet {
        let mut scored = Vec::new();
        for (i, &s) in targets.iter().enumerate() {
            scored.push(ScoredTrial {
                trial: Trial {
                    enroll_spk: format!("t{i}"),
                    test_utt: format!("tu{i}"),
                    label: TrialLabel::Target,
                },
                score: s,
            });
        }
        for (i, &s) in nontargets.iter().enumerate() {
            scored.push(ScoredTrial {
                trial: Trial {
                    enroll_spk: format!("n{i}"),
                    test_utt: format!("nu{i}"),
                    label: TrialLabel::Nontarget,
                },
                score: s,
            });
        }
        ScoreSet::new(scored).unwrap()
    }

    fn two_speaker_sets() -> (EmbeddingSet, EmbeddingSet) {
        let enroll = EmbeddingSet::new(
            2,
            vec![
                rec("ea1", "a", &[1.0, 0.0]),
                rec("ea2", "a", &[0.9, 0.1]),
                rec("eb1", "b", &[0.0, 1.0]),
                rec("eb2", "b", &[0.1, 0.9]),
            ],
        )
        .unwrap();
        let test = EmbeddingSet::new(
            2,
            vec![
                rec("ta1", "a", &[1.0, 0.05]),
                rec("ta2", "a", &[0.95, 0.0]),
                rec("tb1", "b", &[0.05, 1.0]),
                rec("tb2", "b", &[0.0, 0.95]),
            ],
        )
        .unwrap();
        (enroll, test)
    }

    #[test]
    fn exhaustive_cross_trials() {
        let (enroll, test) = two_speaker_sets();
        let trials = generate_trials(&enroll, &test, None, 0).unwrap();
        let targets = trials.iter().filter(|t| t.label == TrialLabel::Target).count();
        let nontargets = trials.len() - targets;
        assert_eq!((targets, nontargets), (4, 4));
    }

    #[test]
    fn trials_deterministic_across_runs() {
        let (enroll, test) = two_speaker_sets();
        let a = trials_to_string(&generate_trials(&enroll, &test, Some(1), 42).unwrap());
        let b = trials_to_string(&generate_trials(&enroll, &test, Some(1), 42).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn labels_match_all_pairs_oracle() {
        let mut rng = crate::seeding::substream_rng(5, 0xA57, 0);
        for round in 0..10 {
            let speakers = 3 + (round % 3);
            let mut enroll_recs = Vec::new();
            let mut test_recs = Vec::new();
            for s in 0..speakers {
                for u in 0..3 {
                    let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                    enroll_recs.push(rec(&format!("e{s}_{u}"), &format!("s{s}"), &v));
                    let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                    test_recs.push(rec(&format!("t{s}_{u}"), &format!("s{s}"), &v));
                }
            }
            let enroll = EmbeddingSet::new(3, enroll_recs).unwrap();
            let test = EmbeddingSet::new(3, test_recs).unwrap();
            let spk_of: HashMap<&str, &str> = test
                .records()
                .iter()
                .map(|r| (r.utt_id.as_str(), r.spk_id.as_str()))
                .collect();
            for trial in generate_trials(&enroll, &test, Some(2), round as u64).unwrap() {
                let expected = if spk_of[trial.test_utt.as_str()] == trial.enroll_spk {
                    TrialLabel::Target
                } else {
                    TrialLabel::Nontarget
                };
                assert_eq!(trial.label, expected);
            }
        }
    }

    #[test]
    fn no_target_trials_errors() {
        let enroll = EmbeddingSet::new(1, vec![rec("e1", "a", &[1.0])]).unwrap();
        let test = EmbeddingSet::new(1, vec![rec("t1", "z", &[1.0])]).unwrap();
        assert!(matches!(
            generate_trials(&enroll, &test, None, 0),
            Err(Error::NoTargetTrials)
        ));
    }

    #[test]
    fn self_pair_skipped_when_same_set_on_both_sides() {
        let set = EmbeddingSet::new(
            1,
            vec![rec("u1", "a", &[1.0]), rec("u2", "b", &[2.0]), rec("u3", "b", &[3.0])],
        )
        .unwrap();
        let trials = generate_trials(&set, &set, None, 0).unwrap();
        // Speaker a has one utterance: its self-trial is skipped. Speaker b's
        // two utterances keep their target trials.
        let targets: Vec<&Trial> = trials
            .iter()
            .filter(|t| t.label == TrialLabel::Target)
            .collect();
        assert_eq!(targets.len(), 2);
        assert!(targets.iter().all(|t| t.enroll_spk == "b"));
    }

    #[test]
    fn enrollment_model_cases() {
        let set = EmbeddingSet::new(
            2,
            vec![
                rec("u1", "a", &[3.0, 4.0]),
                rec("u2", "b", &[1.0, 0.0]),
                rec("u3", "b", &[0.0, 1.0]),
                rec("u4", "c", &[2.0, 0.0]),
                rec("u5", "c", &[2.0, 0.0]),
            ],
        )
        .unwrap();
        // Single utterance: that utterance, normalized.
        let a = enrollment_model(&set, "a").unwrap();
        assert!((a[0] - 0.6).abs() <= 1e-15 && (a[1] - 0.8).abs() <= 1e-15);
        // Orthogonal pair averages to the diagonal.
        let b = enrollment_model(&set, "b").unwrap();
        let half_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b[0] - half_sqrt2).abs() <= 1e-12 && (b[1] - half_sqrt2).abs() <= 1e-12);
        // Two identical utterances: same unit vector.
        let c = enrollment_model(&set, "c").unwrap();
        assert!((c[0] - 1.0).abs() <= 1e-12 && c[1].abs() <= 1e-12);

        assert!(matches!(
            enrollment_model(&set, "zz"),
            Err(Error::UnknownSpeaker { .. })
        ));

        let antipodal = EmbeddingSet::new(
            1,
            vec![rec("u1", "a", &[1.0]), rec("u2", "a", &[-1.0])],
        )
        .unwrap();
        assert!(matches!(
            enrollment_model(&antipodal, "a"),
            Err(Error::ZeroNormMean { .. })
        ));
    }

    #[test]
    fn scoring_matches_naive_oracle() {
        let (enroll, test) = two_speaker_sets();
        let trials = generate_trials(&enroll, &test, None, 0).unwrap();
        let scores = score_trials(&enroll, &test, &trials).unwrap();
        for s in scores.scored() {
            // Naive recomputation from raw vectors.
            let mut sum = vec![0.0; 2];
            let mut count = 0.0;
            for r in enroll.records().iter().filter(|r| r.spk_id == s.trial.enroll_spk) {
                let n = (r.vector[0] * r.vector[0] + r.vector[1] * r.vector[1]).sqrt();
                sum[0] += r.vector[0] / n;
                sum[1] += r.vector[1] / n;
                count += 1.0;
            }
            sum[0] /= count;
            sum[1] /= count;
            let mn = (sum[0] * sum[0] + sum[1] * sum[1]).sqrt();
            let t = test
                .records()
                .iter()
                .find(|r| r.utt_id == s.trial.test_utt)
                .unwrap();
            let tn = (t.vector[0] * t.vector[0] + t.vector[1] * t.vector[1]).sqrt();
            let naive =
                (sum[0] / mn) * (t.vector[0] / tn) + (sum[1] / mn) * (t.vector[1] / tn);
            assert!((naive - s.score).abs() <= 1e-12);
        }
    }

    #[test]
    fn self_and_orthogonal_scores() {
        let enroll = EmbeddingSet::new(2, vec![rec("e1", "a", &[1.0, 0.0])]).unwrap();
        let test = EmbeddingSet::new(
            2,
            vec![rec("t1", "a", &[1.0, 0.0]), rec("t2", "b", &[0.0, 2.0])],
        )
        .unwrap();
        let trials = generate_trials(&enroll, &test, None, 0).unwrap();
        let scores = score_trials(&enroll, &test, &trials).unwrap();
        let by_utt: HashMap<&str, f64> = scores
            .scored()
            .iter()
            .map(|s| (s.trial.test_utt.as_str(), s.score))
            .collect();
        assert!((by_utt["t1"] - 1.0).abs() <= 1e-12);
        assert!(by_utt["t2"].abs() <= 1e-12);
    }

    #[test]
    fn unresolvable_trial_names_the_trial() {
        let (enroll, test) = two_speaker_sets();
        let trials = vec![Trial {
            enroll_spk: "ghost".to_string(),
            test_utt: "ta1".to_string(),
            label: TrialLabel::Target,
        }];
        let err = score_trials(&enroll, &test, &trials).unwrap_err();
        assert!(err.to_string().contains("ghost"));
        assert!(err.to_string().contains("ta1"));
    }

    #[test]
    fn eer_hand_cases() {
        // Perfect separation.
        let s = score_set(&[1.0, 1.0], &[0.0, 0.0]);
        assert_eq!(eer(&s).unwrap().eer, 0.0);

        // Identical score multisets: chance.
        let s = score_set(&[0.3, 0.7], &[0.3, 0.7]);
        assert!((eer(&s).unwrap().eer - 0.5).abs() <= 1e-12);

        // Worked example: crossing at FAR = FRR = 1/3.
        let s = score_set(&[0.9, 0.7, 0.4], &[0.8, 0.3, 0.2]);
        let result = eer(&s).unwrap();
        assert!((result.eer - 1.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn oracle_agrees_on_hand_cases() {
        for (t, nt) in [
            (vec![1.0, 1.0], vec![0.0, 0.0]),
            (vec![0.3, 0.7], vec![0.3, 0.7]),
            (vec![0.9, 0.7, 0.4], vec![0.8, 0.3, 0.2]),
        ] {
            let s = score_set(&t, &nt);
            assert_eq!(eer(&s).unwrap().eer, oracle_eer(&s).unwrap());
        }
    }

    #[test]
    fn oracle_equivalence_randomized() {
        let mut rng = crate::seeding::substream_rng(99, 0xEE2, 0);
        for round in 0..50 {
            let n_t = rng.random_range(1..40);
            let n_nt = rng.random_range(1..40);
            // Quantized scores force ties.
            let t: Vec<f64> = (0..n_t)
                .map(|_| (rng.random_range(-1.0f64..1.0) * 8.0).round() / 8.0)
                .collect();
            let nt: Vec<f64> = (0..n_nt)
                .map(|_| (rng.random_range(-1.0f64..1.0) * 8.0).round() / 8.0)
                .collect();
            let s = score_set(&t, &nt);
            let fast = eer(&s).unwrap().eer;
            let slow = oracle_eer(&s).unwrap();
            assert!((fast - slow).abs() <= 1e-9, "round {round}: {fast} vs {slow}");
        }
    }

    #[test]
    fn eer_invariances() {
        let mut rng = crate::seeding::substream_rng(7, 0xEE2, 1);
        let t: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nt: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = eer(&score_set(&t, &nt)).unwrap();

        // Strictly increasing transform: EER exactly unchanged.
        let cube = |x: f64| x * x * x + x;
        let t2: Vec<f64> = t.iter().map(|&x| cube(x)).collect();
        let nt2: Vec<f64> = nt.iter().map(|&x| cube(x)).collect();
        assert_eq!(base.eer, eer(&score_set(&t2, &nt2)).unwrap().eer);
        assert_eq!(
            oracle_eer(&score_set(&t, &nt)).unwrap(),
            oracle_eer(&score_set(&t2, &nt2)).unwrap()
        );

        // Constant shift: EER exact, threshold shifts by the constant.
        let shift = 0.375; // power of two keeps midpoints exact
        let t3: Vec<f64> = t.iter().map(|&x| x + shift).collect();
        let nt3: Vec<f64> = nt.iter().map(|&x| x + shift).collect();
        let shifted = eer(&score_set(&t3, &nt3)).unwrap();
        assert_eq!(base.eer, shifted.eer);
        assert!((shifted.threshold - base.threshold - shift).abs() <= 1e-9);
    }

    #[test]
    fn det_curve_is_monotone_and_crossing_balanced() {
        let mut rng = crate::seeding::substream_rng(11, 0xEE2, 2);
        let t: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
        let nt: Vec<f64> = (0..50).map(|_| rng.random_range(-0.5..0.8)).collect();
        let (thresholds, far, frr) = far_frr_curve(&t, &nt);
        for k in 1..thresholds.len() {
            assert!(thresholds[k] > thresholds[k - 1]);
            assert!(far[k] <= far[k - 1]);
            assert!(frr[k] >= frr[k - 1]);
        }
        let result = eer(&score_set(&t, &nt)).unwrap();
        // Re-evaluate both interpolated curves at the reported threshold.
        let at = |xs: &[f64], ys: &[f64], x: f64| -> f64 {
            let k = thresholds.partition_point(|&th| th < x).min(xs.len() - 1);
            if k == 0 {
                return ys[0];
            }
            let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
            ys[k - 1] + (ys[k] - ys[k - 1]) * t
        };
        let far_at = at(&thresholds, &far, result.threshold);
        let frr_at = at(&thresholds, &frr, result.threshold);
        assert!((far_at - frr_at).abs() <= 1e-9);
        assert!((far_at - result.eer).abs() <= 1e-9);
    }

    #[test]
    fn linkability_on_separated_and_noise_sets() {
        // Well-separated clusters: near-zero EER.
        let mut recs = Vec::new();
        let mut rng = crate::seeding::substream_rng(3, 0x11AB, 0);
        for s in 0..6 {
            let angle = s as f64;
            let center = [angle.cos() * 3.0, angle.sin() * 3.0, (s as f64) - 2.5];
            for u in 0..8 {
                let v: Vec<f64> = center
                    .iter()
                    .map(|c| c + rng.random_range(-0.05..0.05))
                    .collect();
                recs.push(rec(&format!("s{s}_u{u}"), &format!("s{s}"), &v));
            }
        }
        let set = EmbeddingSet::new(3, recs).unwrap();
        let result = linkability_eer(&set, 1).unwrap();
        assert!(result.eer < 0.05, "separated clusters: {}", result.eer);

        let single = EmbeddingSet::new(
            1,
            vec![rec("u1", "a", &[1.0]), rec("u2", "a", &[2.0]), rec("u3", "b", &[3.0])],
        )
        .unwrap();
        assert!(matches!(
            linkability_eer(&single, 1),
            Err(Error::SpeakerTooFew { .. })
        ));
    }

    #[test]
    fn deidentification_identity_and_mismatch() {
        let mut recs = Vec::new();
        let mut rng = crate::seeding::substream_rng(4, 0x11AB, 1);
        for s in 0..5 {
            let center = [(s as f64) * 2.0 - 4.0, (s as f64).sin() * 2.0];
            for u in 0..6 {
                let v: Vec<f64> = center
                    .iter()
                    .map(|c| c + rng.random_range(-0.05..0.05))
                    .collect();
                recs.push(rec(&format!("s{s}_u{u}"), &format!("s{s}"), &v));
            }
        }
        let set = EmbeddingSet::new(2, recs).unwrap();
        // Identity anonymizer: linkage quality of the original set.
        let result = deidentification_eer(&set, &set, 1).unwrap();
        assert!(result.eer < 0.05, "identity anonymizer: {}", result.eer);

        let other = EmbeddingSet::new(2, vec![rec("zz", "a", &[1.0, 1.0]), rec("zy", "b", &[0.0, 1.0])]).unwrap();
        assert!(matches!(
            deidentification_eer(&set, &other, 1),
            Err(Error::IdUniverseMismatch { .. })
        ));
    }

    #[test]
    fn trial_and_score_files_round_trip() {
        let (enroll, test) = two_speaker_sets();
        let trials = generate_trials(&enroll, &test, None, 0).unwrap();
        let text = trials_to_string(&trials);
        assert_eq!(trials_from_str(&text).unwrap(), trials);

        let scores = score_trials(&enroll, &test, &trials).unwrap();
        let stext = scores_to_string(&scores);
        let raw = scores_from_str(&stext).unwrap();
        let rejoined = join_scores(&trials, &raw).unwrap();
        for (a, b) in scores.scored().iter().zip(rejoined.scored()) {
            assert_eq!(a.trial, b.trial);
            assert_eq!(a.score, b.score); // exact: shortest round-trip floats
        }
    }

    #[test]
    fn eer_result_serializes_with_spec_keys() {
        let s = score_set(&[0.9, 0.7, 0.4], &[0.8, 0.3, 0.2]);
        let json = serde_json::to_value(eer(&s).unwrap()).unwrap();
        let obj = json.as_object().unwrap();
        for key in ["eer", "threshold", "n_target", "n_nontarget", "det_points"] {
            assert!(obj.contains_key(key), "missing {key}");
        }
        assert!(obj["det_points"][0].as_array().unwrap().len() == 3);
    }

    #[test]
    fn partition_summary_reports_both_averages() {
        let r1 = eer(&score_set(&[1.0], &[0.0])).unwrap(); // EER 0, 2 trials
        let r2 = eer(&score_set(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3])).unwrap(); // EER 0.5, 6 trials
        let summary =
            summarize_partitions(vec![("F".to_string(), r1), ("M".to_string(), r2)]).unwrap();
        assert!((summary.unweighted_avg_eer - 0.25).abs() <= 1e-12);
        assert!((summary.trial_weighted_avg_eer - 0.375).abs() <= 1e-12);
    }
}
