//! The two provable encoders: thresholded pseudo-inverse for the mixture
//! model and normalised vector sum for the log-linear model.

mod lp;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{norm_error, GenreStructure, Norm, RatingSample, ValidityReport};
use crate::error::{Error, Result};
use crate::loglinear::{sphere_values, LogLinearSample, MovieVectors};
use crate::mixture::MovieGenreMatrix;
use crate::stream::{derive_stream, stream_id, Stream};

/// Default tolerance on `‖BA − I‖_max`.
pub const PINV_TOL: f64 = 1e-6;

/// Stream namespace for [`measure_encoder`] trials.
pub const NS_ENCODER_TRIALS: u32 = 0x10;

/// Left inverse `B` (`k × M`, row-major) of a movie-genre matrix with its
/// entrywise certificate `λ = max |B_ij|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoInverse {
    pub k: usize,
    pub num_movies: usize,
    pub entries: Vec<f64>,
    pub lambda: f64,
    pub row_lambdas: Vec<f64>,
    pub residual: f64,
    /// Content hash of the structure `A` was built from, if any.
    pub structure_hash: Option<String>,
}

impl PseudoInverse {
    pub fn get(&self, j: usize, movie: usize) -> f64 {
        self.entries[j * self.num_movies + movie]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.entries[j * self.num_movies..(j + 1) * self.num_movies]
    }

    /// `max |(BA − I)_ij|`.
    pub fn residual_against(&self, a: &MovieGenreMatrix) -> Result<f64> {
        Error::check_len(self.num_movies, a.rows())?;
        Error::check_len(self.k, a.cols())?;
        let mut worst: f64 = 0.0;
        for j in 0..self.k {
            let row = self.row(j);
            for c in 0..self.k {
                let v: f64 = row.iter().enumerate().map(|(i, b)| b * a.get(i, c)).sum();
                let target = if j == c { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a stored pseudo-inverse and checks it was certified for
    /// `structure`.
    pub fn from_json_for(json: &str, structure: &GenreStructure) -> Result<Self> {
        let p: PseudoInverse = serde_json::from_str(json)?;
        let want = structure.content_hash();
        if p.structure_hash.as_deref() != Some(want.as_str()) {
            return Err(Error::DataInconsistency(
                "pseudo-inverse was certified for a different structure".into(),
            ));
        }
        Ok(p)
    }
}

/// Index of the first column of `a` lying in the span of the earlier ones.
fn deficient_column(a: &MovieGenreMatrix) -> Option<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..a.cols() {
        let mut v = a.column(j);
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            return Some(j);
        }
        // two passes of Gram-Schmidt for stability
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = v.iter().zip(q).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-9 * norm0 {
            return Some(j);
        }
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    None
}

/// Least-squares pseudo-inverse `(AᵀA)⁻¹Aᵀ`, used only to pick starting
/// bounds for the simplex.
fn least_squares_rows(a: &MovieGenreMatrix) -> Vec<Vec<f64>> {
    let (m, k) = (a.rows(), a.cols());
    let mut gram = nalgebra::DMatrix::<f64>::zeros(k, k);
    for i in 0..m {
        let row = a.row(i);
        for r in 0..k {
            if row[r] == 0.0 {
                continue;
            }
            for c in 0..k {
                gram[(r, c)] += row[r] * row[c];
            }
        }
    }
    let inv = gram.try_inverse().unwrap_or_else(|| nalgebra::DMatrix::identity(k, k));
    (0..k)
        .map(|j| {
            let v: Vec<f64> = (0..m)
                .map(|i| (0..k).map(|c| inv[(j, c)] * a.get(i, c)).sum())
                .collect();
            let scale = v.iter().fold(0.0f64, |s, x| s.max(x.abs()));
            // near-zero entries start at zero rather than at a bound
            v.into_iter().map(|x| if x.abs() > 1e-9 * scale { x } else { 0.0 }).collect()
        })
        .collect()
}

/// Row-wise `min ‖b‖∞ s.t. Aᵀb = e_j`, rows solved in parallel.
pub fn low_variance_pseudoinverse(a: &MovieGenreMatrix, tol: f64) -> Result<PseudoInverse> {
    let (m, k) = (a.rows(), a.cols());
    if k == 0 || m < k {
        return Err(Error::domain(format!("need M >= k >= 1, got M={m} k={k}")));
    }
    if let Some(column) = deficient_column(a) {
        return Err(Error::RankDeficient { column });
    }
    let scale = (0..m).flat_map(|i| a.row(i).iter()).fold(0.0f64, |s, x| s.max(x.abs()));
    let scaled: Vec<f64> = (0..m).flat_map(|i| a.row(i).iter().map(|x| x / scale)).collect();
    let starts = least_squares_rows(a);

    let rows: Vec<Result<(Vec<f64>, f64)>> = (0..k)
        .into_par_iter()
        .map(|j| {
            let sol = lp::solve_row(&scaled, m, k, j, &starts[j])?;
            if sol.alpha <= 0.0 {
                return Err(Error::RankDeficient { column: j });
            }
            let denom = sol.alpha * scale;
            let row: Vec<f64> = sol.b.iter().map(|b| b / denom).collect();
            let lam = row.iter().fold(0.0f64, |s, x| s.max(x.abs()));
            Ok((row, lam))
        })
        .collect();

    let mut entries = Vec::with_capacity(k * m);
    let mut row_lambdas = Vec::with_capacity(k);
    for r in rows {
        let (row, lam) = r?;
        entries.extend(row);
        row_lambdas.push(lam);
    }
    let lambda = row_lambdas.iter().copied().fold(0.0, f64::max);
    let mut pinv = PseudoInverse { k, num_movies: m, entries, lambda, row_lambdas, residual: 0.0, structure_hash: None };
    pinv.residual = pinv.residual_against(a)?;
    if !(pinv.residual <= tol) {
        return Err(Error::Solver {
            message: format!("residual {:e} above tolerance {tol:e}", pinv.residual),
            best_residual: pinv.residual,
        });
    }
    Ok(pinv)
}

/// Pseudo-inverse of a structure's movie-genre matrix, tagged with the
/// structure hash.
pub fn pseudoinverse_for_structure(structure: &GenreStructure, tol: f64) -> Result<PseudoInverse> {
    let mut p = low_variance_pseudoinverse(&MovieGenreMatrix::from_structure(structure), tol)?;
    p.structure_hash = Some(structure.content_hash());
    Ok(p)
}

/// `φ_τ`: keeps entries `≥ τ`, zeroes the rest.
pub fn threshold_map(z: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau >= 0.0) {
        return Err(Error::domain(format!("threshold must be nonnegative, got {tau}")));
    }
    Ok(z.iter().map(|&v| if v >= tau { v } else { 0.0 }).collect())
}

/// `τ = 2λ√(ln k / T)`.
pub fn linear_threshold(lambda: f64, k: usize, t: usize) -> f64 {
    2.0 * lambda * ((k as f64).ln() / t as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderOutput {
    pub h_est: Vec<f64>,
    /// `(1/T)·Bx` before thresholding (linear encoder).
    pub pre_threshold: Option<Vec<f64>>,
    /// `‖Σ W_{x_i}‖₂` (log-linear encoder).
    pub sum_norm: Option<f64>,
}

/// `φ_τ((1/T)·Bx)` for a length-`M` count vector summing to `T`.
pub fn linear_encode(pinv: &PseudoInverse, counts: &[u32], t: usize) -> Result<EncoderOutput> {
    Error::check_len(pinv.num_movies, counts.len())?;
    if t == 0 {
        return Err(Error::domain("T must be positive"));
    }
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total != t as u64 {
        return Err(Error::domain(format!("counts sum to {total}, expected T = {t}")));
    }
    let runs: Vec<(usize, u32)> = counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| (i, c)).collect();
    encode_runs(pinv, &runs, t)
}

/// [`linear_encode`] on a sample's run-length view, without materialising
/// the count vector.
pub fn linear_encode_sample(pinv: &PseudoInverse, x: &RatingSample) -> Result<EncoderOutput> {
    if x.is_empty() {
        return Err(Error::domain("T must be positive"));
    }
    if let Some(&last) = x.movie_ids().last() {
        if last >= pinv.num_movies {
            return Err(Error::domain(format!("movie {last} >= M = {}", pinv.num_movies)));
        }
    }
    encode_runs(pinv, &x.runs(), x.len())
}

fn encode_runs(pinv: &PseudoInverse, runs: &[(usize, u32)], t: usize) -> Result<EncoderOutput> {
    let inv_t = 1.0 / t as f64;
    let z: Vec<f64> = (0..pinv.k)
        .map(|j| {
            let row = pinv.row(j);
            runs.iter().map(|&(i, c)| row[i] * c as f64).sum::<f64>() * inv_t
        })
        .collect();
    let tau = linear_threshold(pinv.lambda, pinv.k, t);
    let h_est = threshold_map(&z, tau)?;
    Ok(EncoderOutput { h_est, pre_threshold: Some(z), sum_norm: None })
}

/// `Σ W_{x_i} / ‖Σ W_{x_i}‖`.
pub fn loglinear_encode(w: &MovieVectors, sample: &LogLinearSample) -> Result<EncoderOutput> {
    loglinear_encode_ids(w, &sample.movie_ids)
}

pub fn loglinear_encode_ids(w: &MovieVectors, ids: &[usize]) -> Result<EncoderOutput> {
    if ids.is_empty() {
        return Err(Error::domain("T must be at least 1"));
    }
    let sum = w.sum_rows(ids)?;
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateSample);
    }
    Ok(EncoderOutput { h_est: sum.iter().map(|x| x / norm).collect(), pre_threshold: None, sum_norm: Some(norm) })
}

/// Per-trial relative errors `‖f(x) − h‖/‖h‖`, trial `i` drawing from
/// `derive_stream(seed, stream_id(NS_ENCODER_TRIALS, i))`.
pub fn measure_errors<X, G, E>(n_trials: usize, norm: Norm, seed: u64, generate: G, encode: E) -> Result<Vec<f64>>
where
    G: Fn(&mut Stream) -> Result<(Vec<f64>, X)> + Sync,
    E: Fn(&X) -> Result<Vec<f64>> + Sync,
{
    if n_trials == 0 {
        return Err(Error::domain("need at least one trial"));
    }
    let errors: Vec<Result<f64>> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_stream(seed, stream_id(NS_ENCODER_TRIALS, i as u64));
            let (truth, x) = generate(&mut rng)?;
            let est = encode(&x)?;
            norm_error(&est, &truth, norm)
        })
        .collect();
    errors.into_iter().collect()
}

/// Empirical validity: the fraction of trials with error at most
/// `error_factor`, plus error quantiles.
pub fn measure_encoder<X, G, E>(
    n_trials: usize,
    error_factor: f64,
    norm: Norm,
    seed: u64,
    generate: G,
    encode: E,
) -> Result<ValidityReport>
where
    G: Fn(&mut Stream) -> Result<(Vec<f64>, X)> + Sync,
    E: Fn(&X) -> Result<Vec<f64>> + Sync,
{
    let errors = measure_errors(n_trials, norm, seed, generate, encode)?;
    ValidityReport::from_errors(&errors, error_factor, norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    /// `Σ_i <W_{x_i}, h>`.
    pub signal_mean: f64,
    /// `max_j (Σ_i <W_{x_i}, u_j>)²` over an orthonormal completion of `h`.
    pub offaxis_max_sq: f64,
    /// `offaxis_max_sq · d / signal_mean²`.
    pub ratio: f64,
}

/// Signal and off-axis mass of the summed movie vectors, one row per sample.
pub fn loglinear_concentration_report(
    w: &MovieVectors,
    samples: &[Vec<usize>],
    h: &crate::domain::LatentState,
) -> Result<Vec<ConcentrationRow>> {
    let hv = sphere_values(h)?;
    Error::check_len(w.dim(), hv.len())?;
    samples
        .iter()
        .map(|ids| {
            let sum = w.sum_rows(ids)?;
            let coords = crate::loglinear::latent_frame_coords(&hv, &sum);
            let signal = coords[0];
            let offaxis = coords[1..].iter().map(|c| c * c).fold(0.0, f64::max);
            let ratio = if signal == 0.0 { f64::NAN } else { offaxis * w.dim() as f64 / (signal * signal) };
            Ok(ConcentrationRow { signal_mean: signal, offaxis_max_sq: offaxis, ratio })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{LatentState, ReplacementMode, Variant};

    fn dense(rows: usize, cols: usize, data: &[f64]) -> MovieGenreMatrix {
        MovieGenreMatrix::from_row_major(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_pinv() {
        let a = dense(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let p = low_variance_pseudoinverse(&a, PINV_TOL).unwrap();
        assert!((p.lambda - 1.0).abs() < 1e-12);
        assert!(p.residual < 1e-12);
        for j in 0..3 {
            for i in 0..3 {
                assert!((p.get(j, i) - (i == j) as u8 as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn column_of_ones() {
        let p = low_variance_pseudoinverse(&dense(2, 1, &[1.0, 1.0]), PINV_TOL).unwrap();
        assert!((p.lambda - 0.5).abs() < 1e-12);
        assert!((p.get(0, 0) - 0.5).abs() < 1e-12 && (p.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_names_column() {
        let a = dense(3, 2, &[1.0, 2.0, 1.0, 2.0, 0.0, 0.0]);
        assert!(matches!(low_variance_pseudoinverse(&a, PINV_TOL), Err(Error::RankDeficient { column: 1 })));
    }

    #[test]
    fn disjoint_structure_gives_indicator_rows() {
        let s = GenreStructure::new(6, vec![vec![0, 1], vec![2, 3], vec![4, 5]], Variant::DisjointPartition).unwrap();
        let p = pseudoinverse_for_structure(&s, PINV_TOL).unwrap();
        assert!((p.lambda - 1.0).abs() < 1e-9);
        for j in 0..3 {
            for &i in s.genre(j) {
                assert!((p.get(j, i) - 1.0).abs() < 1e-9);
            }
        }
        let json = p.to_json().unwrap();
        assert_eq!(PseudoInverse::from_json_for(&json, &s).unwrap(), p);
        let other = GenreStructure::new(6, vec![vec![0, 2], vec![1, 3], vec![4, 5]], Variant::DisjointPartition).unwrap();
        assert!(PseudoInverse::from_json_for(&json, &other).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_map(&[0.5, 0.01, -0.2], 0.1).unwrap(), vec![0.5, 0.0, 0.0]);
        assert_eq!(threshold_map(&[0.3, -0.1, 0.0], 0.0).unwrap(), vec![0.3, 0.0, 0.0]);
        let once = threshold_map(&[0.5, 0.2, 0.1], 0.2).unwrap();
        assert_eq!(threshold_map(&once, 0.2).unwrap(), once);
        assert!(threshold_map(&[1.0], -1.0).is_err());
    }

    #[test]
    fn threshold_arithmetic() {
        let tau = linear_threshold(2.0, 16, 64);
        assert!((tau - 4.0 * (16f64.ln() / 64.0).sqrt()).abs() < 1e-15);
        assert!((tau - 0.8326).abs() < 1e-4);
    }

    #[test]
    fn disjoint_exact_recovery() {
        // τ = 2√(ln 3 / T) < 1 needs T ≥ 5
        let genres: Vec<Vec<usize>> = (0..3).map(|g| (6 * g..6 * g + 6).collect()).collect();
        let s = GenreStructure::new(18, genres, Variant::DisjointPartition).unwrap();
        let p = pseudoinverse_for_structure(&s, PINV_TOL).unwrap();
        for ids in [vec![6, 7, 8, 9, 10, 11], vec![6, 8, 9, 10, 11]] {
            let x = RatingSample::new(ids.clone(), ReplacementMode::Set).unwrap();
            let out = linear_encode_sample(&p, &x).unwrap();
            assert_eq!(out.h_est, vec![0.0, 1.0, 0.0], "{ids:?}");
            let counts = x.counts(18).unwrap();
            assert_eq!(linear_encode(&p, &counts, ids.len()).unwrap(), out);
            assert!(linear_encode(&p, &counts, ids.len() + 1).is_err());
        }
    }

    #[test]
    fn loglinear_encode_examples() {
        let w = MovieVectors::from_rows(2, 2, 1.0, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let one = loglinear_encode_ids(&w, &[0]).unwrap();
        assert_eq!(one.h_est, vec![0.6, 0.8]);
        assert_eq!(loglinear_encode_ids(&w, &[0, 0]).unwrap().h_est, one.h_est);
        assert!(matches!(loglinear_encode_ids(&w, &[1]), Err(Error::DegenerateSample)));
    }

    #[test]
    fn measure_perfect_and_zero_encoders() {
        let gen = |rng: &mut Stream| {
            let h = crate::mixture::sample_user(4, 2, rng)?;
            Ok((h.as_simplex()?, h.as_simplex()?))
        };
        let r = measure_encoder(50, 0.0, Norm::L1, 1, gen, |x: &Vec<f64>| Ok(x.clone())).unwrap();
        assert_eq!(r.success_prob, 1.0);
        let r = measure_encoder(50, 0.99, Norm::L1, 1, gen, |x: &Vec<f64>| Ok(vec![0.0; x.len()])).unwrap();
        assert_eq!(r.success_prob, 0.0);
    }

    #[test]
    fn concentration_report_zero_vectors() {
        let w = MovieVectors::from_rows(3, 2, 1.0, vec![0.0; 6]).unwrap();
        let h = LatentState::sphere(vec![0.6, 0.8]).unwrap();
        let rows = loglinear_concentration_report(&w, &[vec![0, 1, 2]], &h).unwrap();
        assert_eq!(rows[0].signal_mean, 0.0);
        assert_eq!(rows[0].offaxis_max_sq, 0.0);
    }
}
