//! Within/between-class scatter analysis and the scatter ratio J.
//!
//! Scatter convention: unnormalized sums,
//! `S_w = Σ_s Σ_{x∈s} (x−μ_s)(x−μ_s)ᵀ` and `S_b = Σ_s N_s (μ_s−μ)(μ_s−μ)ᵀ`,
//! so the law of total scatter `S_w + S_b = Σ (x−μ)(x−μ)ᵀ` holds exactly.
//!
//! The report solves the symmetric-definite generalized eigenproblem
//! `S_b w = λ S_w w` (after ridge regularization of `S_w`) by Cholesky
//! reduction, with eigenvectors normalized so that `Wᵀ S_w W = I`. Two J
//! variants are reported side by side: `j_trace_ratio = Tr(WᵀS_bW)/Tr(WᵀS_wW)`
//! and the eigenvalue sum `j_lda = Tr(S_w⁻¹S_b) = Σ λ_i`. The trace ratio is
//! what per-condition comparisons use; `j_lda` is the textbook criterion and
//! is invariant under invertible linear maps of the embedding space.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

/// Default ridge: scaled by `trace(S_w)/d` before being added to the
/// diagonal, so it is relative to the problem's magnitude.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Eigenvalues below `1e-12 · λ_max` are clamped to zero to suppress
/// numerical negatives.
const EIGENVALUE_CLAMP: f64 = 1e-12;

/// Within-class and between-class scatter matrices of a labeled set.
#[derive(Debug, Clone)]
pub struct ScatterPair {
    pub s_w: DMatrix<f64>,
    pub s_b: DMatrix<f64>,
    /// Total utterance count.
    pub n: usize,
    /// Speaker count.
    pub s: usize,
}

/// One dispersion row: projected traces, both J variants, eigen-spectrum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatterReport {
    pub tr_w: f64,
    pub tr_b: f64,
    pub j_trace_ratio: f64,
    pub j_lda: f64,
    /// Generalized eigenvalues, descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    pub n: usize,
    pub s: usize,
    pub ridge: f64,
}

/// Compute `S_w` and `S_b` from speaker labels.
pub fn scatter_matrices(set: &EmbeddingSet) -> Result<ScatterPair> {
    if set.len() < 2 {
        return Err(Error::TooFew {
            what: "utterances",
            needed: 2,
            got: set.len(),
        });
    }
    let s = set.speaker_count();
    if s < 2 {
        return Err(Error::TooFew {
            what: "speakers",
            needed: 2,
            got: s,
        });
    }
    let d = set.dim();
    let n = set.len();

    let summaries = set.speaker_summaries()?;
    let mut mean_of: std::collections::HashMap<&str, &[f64]> =
        std::collections::HashMap::with_capacity(s);
    for summary in &summaries {
        mean_of.insert(summary.spk_id.as_str(), &summary.mean);
    }

    let mut global = vec![0.0; d];
    for rec in set.records() {
        for (g, x) in global.iter_mut().zip(&rec.vector) {
            *g += x;
        }
    }
    for g in &mut global {
        *g /= n as f64;
    }

    let mut s_w = DMatrix::zeros(d, d);
    let mut dev = vec![0.0; d];
    for rec in set.records() {
        let mu = mean_of[rec.spk_id.as_str()];
        for i in 0..d {
            dev[i] = rec.vector[i] - mu[i];
        }
        accumulate_outer(&mut s_w, &dev);
    }

    let mut s_b = DMatrix::zeros(d, d);
    for summary in &summaries {
        for i in 0..d {
            dev[i] = summary.mean[i] - global[i];
        }
        accumulate_outer_weighted(&mut s_b, &dev, summary.count as f64);
    }

    Ok(ScatterPair { s_w, s_b, n, s })
}

fn accumulate_outer(m: &mut DMatrix<f64>, v: &[f64]) {
    let d = v.len();
    for j in 0..d {
        for i in 0..d {
            m[(i, j)] += v[i] * v[j];
        }
    }
}

fn accumulate_outer_weighted(m: &mut DMatrix<f64>, v: &[f64], w: f64) {
    let d = v.len();
    for j in 0..d {
        for i in 0..d {
            m[(i, j)] += w * v[i] * v[j];
        }
    }
}

/// Solve the generalized eigenproblem and assemble the report.
///
/// `S_w` is regularized to `S_w + ridge·(trace(S_w)/d)·I` before the Cholesky
/// reduction. A singular (or zero) regularized matrix is a numerical error;
/// the message advises a positive ridge.
pub fn scatter_report(pair: &ScatterPair, ridge: f64) -> Result<ScatterReport> {
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::invalid_config("ridge", "must be finite and >= 0"));
    }
    let d = pair.s_w.nrows();
    if pair.s_w.ncols() != d || pair.s_b.nrows() != d || pair.s_b.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: pair.s_b.nrows(),
        });
    }

    let scaled_ridge = ridge * pair.s_w.trace() / d as f64;
    let regularized = &pair.s_w + DMatrix::identity(d, d) * scaled_ridge;
    let chol =
        Cholesky::new(regularized).ok_or(Error::SingularScatter { ridge })?;
    let l = chol.l();

    // M = L⁻¹ S_b L⁻ᵀ, via two triangular solves (S_b is symmetric).
    let half = l
        .solve_lower_triangular(&pair.s_b)
        .ok_or(Error::SingularScatter { ridge })?;
    let m = l
        .solve_lower_triangular(&half.transpose())
        .ok_or(Error::SingularScatter { ridge })?;
    let m = (&m + m.transpose()) * 0.5;

    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues of a real symmetric matrix are finite")
    });

    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let eigenvalues: Vec<f64> = order
        .iter()
        .map(|&i| {
            let lambda = eig.eigenvalues[i];
            if lambda < EIGENVALUE_CLAMP * lambda_max {
                0.0
            } else {
                lambda
            }
        })
        .collect();

    let mut u = DMatrix::zeros(d, d);
    for (col, &i) in order.iter().enumerate() {
        u.set_column(col, &eig.eigenvectors.column(i));
    }
    // W = L⁻ᵀ U, so Wᵀ (S_w + ridge I) W = I.
    let w = l
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or(Error::SingularScatter { ridge })?;

    let tr_w = (w.transpose() * &pair.s_w * &w).trace();
    let tr_b = (w.transpose() * &pair.s_b * &w).trace();
    let j_lda: f64 = eigenvalues.iter().sum();

    Ok(ScatterReport {
        tr_w,
        tr_b,
        j_trace_ratio: tr_b / tr_w,
        j_lda,
        eigenvalues,
        n: pair.n,
        s: pair.s,
        ridge,
    })
}

/// End-to-end per-condition dispersion: scatter matrices then report.
pub fn dispersion_of(set: &EmbeddingSet, ridge: f64) -> Result<ScatterReport> {
    scatter_report(&scatter_matrices(set)?, ridge)
}

/// Total scatter `Σ (x−μ)(x−μ)ᵀ` about the global mean. Used by tests as the
/// independent side of the law-of-total-scatter check and exposed for
/// diagnostics.
pub fn total_scatter(set: &EmbeddingSet) -> Result<DMatrix<f64>> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let d = set.dim();
    let n = set.len() as f64;
    let mut global = DVector::zeros(d);
    for rec in set.records() {
        global += DVector::from_column_slice(&rec.vector);
    }
    global /= n;
    let mut total = DMatrix::zeros(d, d);
    for rec in set.records() {
        let dev = DVector::from_column_slice(&rec.vector) - &global;
        total += &dev * dev.transpose();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::UtteranceRecord;
    use rand::Rng;

    fn set_1d() -> EmbeddingSet {
        // Speakers A = {−1, +1}, B = {3, 5}.
        EmbeddingSet::new(
            1,
            vec![
                UtteranceRecord::new("a1", "a", "F", vec![-1.0]),
                UtteranceRecord::new("a2", "a", "F", vec![1.0]),
                UtteranceRecord::new("b1", "b", "F", vec![3.0]),
                UtteranceRecord::new("b2", "b", "F", vec![5.0]),
            ],
        )
        .unwrap()
    }

    fn random_set(seed: u64, dim: usize, speakers: usize, utts: usize) -> EmbeddingSet {
        let mut rng = crate::seeding::substream_rng(seed, 0xD15C, 0);
        let mut records = Vec::new();
        for s in 0..speakers {
            let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            for u in 0..utts {
                let v: Vec<f64> = center
                    .iter()
                    .map(|c| c + rng.random_range(-0.5..0.5))
                    .collect();
                records.push(UtteranceRecord::new(
                    format!("s{s}_u{u}"),
                    format!("s{s}"),
                    "F",
                    v,
                ));
            }
        }
        EmbeddingSet::new(dim, records).unwrap()
    }

    #[test]
    fn hand_example_1d() {
        let pair = scatter_matrices(&set_1d()).unwrap();
        assert_eq!(pair.s_w[(0, 0)], 4.0);
        assert_eq!(pair.s_b[(0, 0)], 16.0);
        assert_eq!((pair.n, pair.s), (4, 2));

        let report = scatter_report(&pair, 0.0).unwrap();
        assert!((report.j_lda - 4.0).abs() <= 1e-12);
        assert!((report.j_trace_ratio - 4.0).abs() <= 1e-12);
        // WᵀS_wW = I convention: tr_w equals the dimensionality.
        assert!((report.tr_w - 1.0).abs() <= 1e-12);
        assert!((report.tr_b - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn zero_within_scatter_when_utterances_equal_speaker_mean() {
        let set = EmbeddingSet::new(
            2,
            vec![
                UtteranceRecord::new("a1", "a", "F", vec![1.0, 2.0]),
                UtteranceRecord::new("a2", "a", "F", vec![1.0, 2.0]),
                UtteranceRecord::new("b1", "b", "F", vec![-1.0, 0.0]),
                UtteranceRecord::new("b2", "b", "F", vec![-1.0, 0.0]),
            ],
        )
        .unwrap();
        let pair = scatter_matrices(&set).unwrap();
        assert_eq!(pair.s_w, DMatrix::zeros(2, 2));
        // Zero S_w stays singular for any ridge (the ridge scales by its
        // trace), so the report must fail.
        assert!(matches!(
            scatter_report(&pair, DEFAULT_RIDGE),
            Err(Error::SingularScatter { .. })
        ));
    }

    #[test]
    fn degenerate_inputs_error() {
        let one_speaker = EmbeddingSet::new(
            1,
            vec![
                UtteranceRecord::new("a1", "a", "F", vec![0.0]),
                UtteranceRecord::new("a2", "a", "F", vec![1.0]),
            ],
        )
        .unwrap();
        assert!(scatter_matrices(&one_speaker).is_err());

        // Two speakers with one utterance each: S_w = 0, degenerate for J.
        let pairwise = EmbeddingSet::new(
            1,
            vec![
                UtteranceRecord::new("a1", "a", "F", vec![0.0]),
                UtteranceRecord::new("b1", "b", "F", vec![1.0]),
            ],
        )
        .unwrap();
        assert!(dispersion_of(&pairwise, DEFAULT_RIDGE).is_err());
    }

    #[test]
    fn law_of_total_scatter() {
        for seed in 0..5 {
            let set = random_set(seed, 4, 3, 6);
            let pair = scatter_matrices(&set).unwrap();
            let sum = &pair.s_w + &pair.s_b;
            let total = total_scatter(&set).unwrap();
            let diff = (&sum - &total).norm();
            assert!(diff <= 1e-8 * sum.norm(), "seed {seed}: {diff}");
        }
    }

    #[test]
    fn scatter_matrices_are_symmetric_psd() {
        let set = random_set(7, 5, 4, 5);
        let pair = scatter_matrices(&set).unwrap();
        for m in [&pair.s_w, &pair.s_b] {
            assert_eq!(m, &m.transpose());
            let eig = SymmetricEigen::new(m.clone());
            let floor = -1e-8 * m.trace() / m.nrows() as f64;
            assert!(eig.eigenvalues.iter().all(|&l| l >= floor));
        }
    }

    #[test]
    fn identity_pencil_gives_unit_eigenvalues() {
        let mut rng = crate::seeding::substream_rng(13, 0xD15C, 1);
        let d = 5;
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let spd = &a * a.transpose() + DMatrix::identity(d, d) * 0.5;
        let pair = ScatterPair {
            s_w: spd.clone(),
            s_b: spd,
            n: 10,
            s: 2,
        };
        let report = scatter_report(&pair, 0.0).unwrap();
        for lambda in &report.eigenvalues {
            assert!((lambda - 1.0).abs() <= 1e-9);
        }
        assert!((report.j_lda - d as f64).abs() <= 1e-8);
    }

    #[test]
    fn j_lda_invariant_under_conjugation() {
        let mut rng = crate::seeding::substream_rng(29, 0xD15C, 2);
        let d = 6;
        let set = random_set(31, d, 4, 8);
        let pair = scatter_matrices(&set).unwrap();
        let base = scatter_report(&pair, 0.0).unwrap();

        // Well-conditioned random invertible map.
        let a = DMatrix::identity(d, d)
            + DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.3..0.3));
        let conj = ScatterPair {
            s_w: a.transpose() * &pair.s_w * &a,
            s_b: a.transpose() * &pair.s_b * &a,
            n: pair.n,
            s: pair.s,
        };
        let mapped = scatter_report(&conj, 0.0).unwrap();
        let rel = (mapped.j_lda - base.j_lda).abs() / base.j_lda;
        assert!(rel <= 1e-6, "relative change {rel}");
    }

    #[test]
    fn duplicating_records_doubles_scatter_but_keeps_j_lda() {
        let set = random_set(41, 3, 3, 4);
        let mut doubled = set.records().to_vec();
        for rec in set.records() {
            let mut copy = rec.clone();
            copy.utt_id = format!("{}_dup", rec.utt_id);
            doubled.push(copy);
        }
        let doubled = EmbeddingSet::new(set.dim(), doubled).unwrap();

        let pair = scatter_matrices(&set).unwrap();
        let pair2 = scatter_matrices(&doubled).unwrap();
        assert!(((&pair2.s_w - &pair.s_w * 2.0).norm()) <= 1e-10 * pair2.s_w.norm());
        assert!(((&pair2.s_b - &pair.s_b * 2.0).norm()) <= 1e-10 * pair2.s_b.norm());

        let r1 = scatter_report(&pair, 0.0).unwrap();
        let r2 = scatter_report(&pair2, 0.0).unwrap();
        assert!((r1.j_lda - r2.j_lda).abs() <= 1e-8 * r1.j_lda.max(1.0));
    }

    #[test]
    fn report_conventions() {
        let set = random_set(53, 4, 5, 6);
        let report = dispersion_of(&set, DEFAULT_RIDGE).unwrap();
        // Eigenvalues descending and clamped nonnegative.
        for pair in report.eigenvalues.windows(2) {
            assert!(pair[0] >= pair[1]);
        }
        assert!(report.eigenvalues.iter().all(|&l| l >= 0.0));
        // WᵀS_wW = I convention.
        assert!((report.tr_w - set.dim() as f64).abs() <= 1e-8 * set.dim() as f64);
        // Definitional identity.
        assert!((report.j_trace_ratio * report.tr_w - report.tr_b).abs() <= 1e-10);
        // Eigenvalue sum cross-check against the direct trace of S_w⁻¹S_b.
        let pair = scatter_matrices(&set).unwrap();
        let direct = (pair
            .s_w
            .clone()
            .try_inverse()
            .expect("well-conditioned test fixture")
            * &pair.s_b)
            .trace();
        let report0 = scatter_report(&pair, 0.0).unwrap();
        assert!((report0.j_lda - direct).abs() <= 1e-8 * direct.abs());
    }

    #[test]
    fn singular_without_ridge_advises_ridge() {
        // Within-class deviations confined to the first axis.
        let set = EmbeddingSet::new(
            2,
            vec![
                UtteranceRecord::new("a1", "a", "F", vec![-1.0, 0.0]),
                UtteranceRecord::new("a2", "a", "F", vec![1.0, 0.0]),
                UtteranceRecord::new("b1", "b", "F", vec![3.0, 1.0]),
                UtteranceRecord::new("b2", "b", "F", vec![5.0, 1.0]),
            ],
        )
        .unwrap();
        let err = dispersion_of(&set, 0.0).unwrap_err();
        assert!(err.to_string().contains("positive ridge"), "{err}");
        // A positive ridge rescues it.
        assert!(dispersion_of(&set, DEFAULT_RIDGE).is_ok());
    }

    #[test]
    fn report_serializes_with_spec_keys() {
        let report = dispersion_of(&set_1d(), 0.0).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        let obj = json.as_object().unwrap();
        for key in ["tr_w", "tr_b", "j_trace_ratio", "j_lda", "eigenvalues", "n", "s", "ridge"] {
            assert!(obj.contains_key(key), "missing {key}");
        }
    }
}
