//! Norm-constrained hinge-loss training on encoded features, the
//! generalization bound it is compared against, and the labelled-sample
//! curve tying the two together.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::LatentState;
use crate::error::{Error, Result};
use crate::mixture::label_hyperplane;
use crate::stream::{derive_stream, stream_id, Stream};

pub const NS_SEMISUP_TRAIN: u32 = 0x30;
pub const NS_SEMISUP_TEST: u32 = 0x31;
pub const NS_HINGE_RESTART: u32 = 0x32;
pub const HINGE_RESTARTS: usize = 5;
/// Iterations between duality-gap checks.
const GAP_CHECK: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub w: Vec<f64>,
    pub rho: f64,
    /// Average hinge loss on the training data.
    pub objective: f64,
    /// Certified upper bound on `objective − optimum`.
    pub gap: f64,
}

impl LinearClassifier {
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.w, x)
    }

    /// Zero scores map to +1.
    pub fn predict(&self, x: &[f64]) -> i8 {
        if self.score(x) >= 0.0 {
            1
        } else {
            -1
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn project(w: &mut [f64], rho: f64) {
    let n = norm(w);
    if n > rho {
        let s = rho / n;
        w.iter_mut().for_each(|x| *x *= s);
    }
}

pub fn hinge_objective(features: &[Vec<f64>], labels: &[i8], w: &[f64]) -> f64 {
    let total: f64 = features.iter().zip(labels).map(|(x, &l)| (1.0 - l as f64 * dot(w, x)).max(0.0)).sum();
    total / features.len() as f64
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: Vec<f64>,
    d: usize,
    rho: f64,
    /// Largest eigenvalue of `XᵀX / t`.
    curvature: f64,
}

impl Problem<'_> {
    fn t(&self) -> f64 {
        self.x.len() as f64
    }

    fn margins(&self, w: &[f64]) -> Vec<f64> {
        self.x.iter().zip(&self.y).map(|(x, y)| y * dot(w, x)).collect()
    }

    /// `(1/t) Σ α_i y_i x_i`.
    fn combine(&self, alpha: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        for ((x, y), a) in self.x.iter().zip(&self.y).zip(alpha) {
            if *a != 0.0 {
                let c = a * y;
                g.iter_mut().zip(x).for_each(|(gi, xi)| *gi += c * xi);
            }
        }
        let t = self.t();
        g.iter_mut().for_each(|gi| *gi /= t);
        g
    }

    /// `(1/t)(Σ α − ρ ‖Σ α_i y_i x_i‖)`, a lower bound on the optimum.
    fn dual(&self, alpha: &[f64]) -> f64 {
        alpha.iter().sum::<f64>() / self.t() - self.rho * norm(&self.combine(alpha))
    }
}

struct RestartOutcome {
    w: Vec<f64>,
    objective: f64,
    lower: f64,
    iterations: usize,
}

/// Projected accelerated gradient on a Nesterov-smoothed hinge, with the
/// smoothing shrunk whenever the duality gap reaches its scale.
fn run_restart(p: &Problem, start: Vec<f64>, tol: f64, budget: usize, lower_bound: f64) -> RestartOutcome {
    let mut mu = 1.0f64.max(tol);
    let mut w = start;
    let mut v = w.clone();
    let mut theta = 1.0f64;
    let mut best_w = w.clone();
    let mut best_f = f64::INFINITY;
    let mut lower = lower_bound;
    let mut it = 0;
    while it < budget {
        let step = mu / p.curvature.max(1e-300);
        let z = p.margins(&v);
        let alpha: Vec<f64> = z.iter().map(|&zi| ((1.0 - zi) / mu).clamp(0.0, 1.0)).collect();
        let g = p.combine(&alpha);
        let mut w_new: Vec<f64> = v.iter().zip(&g).map(|(vi, gi)| vi + step * gi).collect();
        project(&mut w_new, p.rho);
        // gradient-based momentum restart
        let restart: f64 = v.iter().zip(&w_new).zip(&w).map(|((vi, wn), wo)| (vi - wn) * (wn - wo)).sum();
        if restart > 0.0 {
            theta = 1.0;
        }
        let theta_new = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
        let beta = (theta - 1.0) / theta_new;
        v = w_new.iter().zip(&w).map(|(wn, wo)| wn + beta * (wn - wo)).collect();
        w = w_new;
        theta = theta_new;
        it += 1;
        if it % GAP_CHECK == 0 || it == budget {
            let z = p.margins(&w);
            let f = z.iter().map(|&zi| (1.0 - zi).max(0.0)).sum::<f64>() / p.t();
            if f < best_f {
                best_f = f;
                best_w = w.clone();
            }
            let smooth: Vec<f64> = z.iter().map(|&zi| ((1.0 - zi) / mu).clamp(0.0, 1.0)).collect();
            let hard: Vec<f64> = z.iter().map(|&zi| if zi < 1.0 { 1.0 } else { 0.0 }).collect();
            lower = lower.max(p.dual(&smooth)).max(p.dual(&hard));
            let gap = best_f - lower;
            if gap <= tol {
                break;
            }
            if gap <= 1.5 * mu && mu > tol / 2.0 {
                mu = (mu / 4.0).max(tol / 2.0);
                theta = 1.0;
                v = w.clone();
            }
        }
    }
    RestartOutcome { w: best_w, objective: best_f, lower, iterations: it }
}

/// Minimizes the average hinge loss over `‖w‖₂ ≤ ρ` from
/// [`HINGE_RESTARTS`] random starts. Success means the duality gap of the
/// best iterate is at most `tol`.
pub fn hinge_minimize(features: &[Vec<f64>], labels: &[i8], rho: f64, tol: f64, budget: usize, seed: u64) -> Result<LinearClassifier> {
    if features.is_empty() {
        return Err(Error::InsufficientData("no training data".into()));
    }
    Error::check_len(features.len(), labels.len())?;
    if !(rho > 0.0) || !(tol > 0.0) {
        return Err(Error::domain("rho and tol must be positive"));
    }
    let d = features[0].len();
    for x in features {
        Error::check_len(d, x.len())?;
    }
    if labels.iter().any(|&l| l != 1 && l != -1) {
        return Err(Error::domain("labels must be +1 or -1"));
    }
    let t = features.len() as f64;
    let gram = DMatrix::from_fn(d, d, |i, j| features.iter().map(|x| x[i] * x[j]).sum::<f64>() / t);
    let curvature = if d == 0 { 0.0 } else { gram.symmetric_eigenvalues().max() };
    let p = Problem { x: features, y: labels.iter().map(|&l| l as f64).collect(), d, rho, curvature };

    let mut best: Option<RestartOutcome> = None;
    let mut lower = f64::NEG_INFINITY;
    let mut iterations = 0;
    for r in 0..HINGE_RESTARTS {
        let mut rng = derive_stream(seed, stream_id(NS_HINGE_RESTART, r as u64));
        let mut start: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm(&start);
        let radius = rho * rng.random::<f64>();
        if n > 0.0 {
            start.iter_mut().for_each(|x| *x *= radius / n);
        }
        let out = run_restart(&p, start, tol, budget, lower);
        lower = lower.max(out.lower);
        iterations += out.iterations;
        if best.as_ref().is_none_or(|b| out.objective < b.objective) {
            best = Some(out);
        }
    }
    let best = best.expect("at least one restart");
    let gap = (best.objective - lower).max(0.0);
    if gap > tol {
        return Err(Error::Convergence { gap, iterations, best_objective: best.objective, best_w: best.w });
    }
    Ok(LinearClassifier { w: best.w, rho, objective: best.objective, gap })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub c_t: f64,
    pub r_t: f64,
    pub e_t: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub b: f64,
    pub t: f64,
    pub delta: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.c_t + self.r_t + self.e_t
    }
}

/// `C_t = (1−β)(1 + √(ln(1/δ)/((1−β)t))) ρB + β(1 − √(ln(1/δ)/(βt))) ργ`,
/// `R_t = √(ρ²/t)`, `E_t = √(ln(1/δ)/t)`. The first summand is 0 at β = 1
/// and the factor `1 − √(·)` is floored at 0 so that `C_t ≥ 0`.
pub fn bound_terms(beta: f64, gamma: f64, rho: f64, b: f64, t: f64, delta: f64) -> Result<BoundTerms> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::domain(format!("beta must lie in (0, 1], got {beta}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(t >= 1.0) || !(gamma >= 0.0) || !(rho > 0.0) || !(b >= 0.0) {
        return Err(Error::domain("need t >= 1, gamma >= 0, rho > 0, B >= 0"));
    }
    let log = (1.0 / delta).ln();
    let bad = if beta == 1.0 { 0.0 } else { (1.0 - beta) * (1.0 + (log / ((1.0 - beta) * t)).sqrt()) * rho * b };
    let good = beta * (1.0 - (log / (beta * t)).sqrt()).max(0.0) * rho * gamma;
    Ok(BoundTerms { c_t: bad + good, r_t: (rho * rho / t).sqrt(), e_t: (log / t).sqrt(), beta, gamma, rho, b, t, delta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMap {
    /// `2 f(x) − 1`, the argument of the label function.
    #[default]
    Affine,
    /// `f(x)` as is.
    Raw,
}

impl FeatureMap {
    pub fn apply(self, v: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Affine => v.iter().map(|x| 2.0 * x - 1.0).collect(),
            FeatureMap::Raw => v.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemisupSettings {
    pub t_values: Vec<usize>,
    pub n_test: usize,
    pub rho: f64,
    pub delta: f64,
    /// A train user counts as well encoded when its feature error
    /// `‖φ(f(x)) − φ(h)‖₂` is at most this.
    pub gamma_tolerance: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub features: FeatureMap,
}

fn default_tol() -> f64 {
    1e-3
}

fn default_budget() -> usize {
    200_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub test_error: f64,
    /// Absent at `t = 0`.
    pub bounds: Option<BoundTerms>,
    pub realized_beta: Option<f64>,
    pub realized_gamma: Option<f64>,
    /// Largest feature norm on the train set.
    pub realized_b: Option<f64>,
    /// `min_i l_i ⟨w, φ_i⟩` on the train set.
    pub realized_margin: Option<f64>,
    pub objective: Option<f64>,
}

struct Encoded {
    features: Vec<f64>,
    truth: Vec<f64>,
    label: i8,
}

/// Train users are drawn per index from `(NS_SEMISUP_TRAIN, i)` so that the
/// train sets are nested across `t`; test users come from
/// `(NS_SEMISUP_TEST, i)` and are shared by every `t`. Labels are
/// `sgn⟨w_true, 2h − 1⟩`, never seen by the encoder.
pub fn semisup_experiment<G, X, E>(generate: G, encode: E, w_true: &[f64], settings: &SemisupSettings, seed: u64) -> Result<Vec<CurvePoint>>
where
    G: Fn(&mut Stream) -> Result<(LatentState, X)> + Sync,
    E: Fn(&X) -> Result<Vec<f64>> + Sync,
    X: Send,
{
    let fmap = settings.features;
    let draw = |ns: u32, i: usize| -> Result<Encoded> {
        let mut rng = derive_stream(seed, stream_id(ns, i as u64));
        let (h, x) = generate(&mut rng)?;
        let label = label_hyperplane(w_true, &h)?;
        let h = h.to_vec();
        let f = encode(&x)?;
        Error::check_len(h.len(), f.len())?;
        Ok(Encoded { features: fmap.apply(&f), truth: fmap.apply(&h), label })
    };
    let t_max = settings.t_values.iter().copied().max().unwrap_or(0);
    let train: Vec<Encoded> = (0..t_max).into_par_iter().map(|i| draw(NS_SEMISUP_TRAIN, i)).collect::<Result<_>>()?;
    let test: Vec<Encoded> = (0..settings.n_test).into_par_iter().map(|i| draw(NS_SEMISUP_TEST, i)).collect::<Result<_>>()?;
    if test.is_empty() {
        return Err(Error::domain("n_test must be positive"));
    }
    let points: Vec<Result<CurvePoint>> = settings
        .t_values
        .par_iter()
        .enumerate()
        .map(|(ti, &t)| curve_point(&train[..t], &test, settings, derive_stream(seed, stream_id(NS_HINGE_RESTART, ti as u64)).random()))
        .collect();
    points.into_iter().collect()
}

fn curve_point(train: &[Encoded], test: &[Encoded], s: &SemisupSettings, hinge_seed: u64) -> Result<CurvePoint> {
    let t = train.len();
    let test_error = |c: &LinearClassifier| test.iter().filter(|e| c.predict(&e.features) != e.label).count() as f64 / test.len() as f64;
    if t == 0 {
        let dim = test[0].features.len();
        let c = LinearClassifier { w: vec![0.0; dim], rho: s.rho, objective: 1.0, gap: 0.0 };
        return Ok(CurvePoint {
            t,
            test_error: test_error(&c),
            bounds: None,
            realized_beta: None,
            realized_gamma: None,
            realized_b: None,
            realized_margin: None,
            objective: None,
        });
    }
    let feats: Vec<Vec<f64>> = train.iter().map(|e| e.features.clone()).collect();
    let labels: Vec<i8> = train.iter().map(|e| e.label).collect();
    let c = hinge_minimize(&feats, &labels, s.rho, s.tol, s.budget, hinge_seed)?;
    let errors: Vec<f64> =
        train.iter().map(|e| norm(&e.features.iter().zip(&e.truth).map(|(a, b)| a - b).collect::<Vec<_>>())).collect();
    let good: Vec<f64> = errors.iter().copied().filter(|&e| e <= s.gamma_tolerance).collect();
    let beta = good.len() as f64 / t as f64;
    let gamma = good.iter().fold(0.0f64, |m, &e| m.max(e));
    let b = feats.iter().fold(0.0f64, |m, x| m.max(norm(x)));
    let margin = feats.iter().zip(&labels).map(|(x, &l)| l as f64 * c.score(x)).fold(f64::INFINITY, f64::min);
    let bounds = if beta > 0.0 { Some(bound_terms(beta, gamma, s.rho, b, t as f64, s.delta)?) } else { None };
    Ok(CurvePoint {
        t,
        test_error: test_error(&c),
        bounds,
        realized_beta: Some(beta),
        realized_gamma: Some(gamma),
        realized_b: Some(b),
        realized_margin: Some(margin),
        objective: Some(c.objective),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_one_dimensional() {
        let c = hinge_minimize(&[vec![1.0], vec![-1.0]], &[1, -1], 2.0, 1e-6, 10_000, 0).unwrap();
        assert!(c.objective <= 1e-6);
        assert!(c.w[0] >= 1.0 - 1e-6 && c.w[0] <= 2.0 + 1e-9);
    }

    #[test]
    fn identical_labels_align_with_mean() {
        let x = vec![vec![1.0, 0.2], vec![0.8, -0.1], vec![1.2, 0.0]];
        let c = hinge_minimize(&x, &[1, 1, 1], 100.0, 1e-6, 50_000, 3).unwrap();
        assert!(c.objective <= 1e-6);
        assert!(c.w[0] > 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(hinge_minimize(&[], &[], 1.0, 1e-3, 10, 0).is_err());
        assert!(hinge_minimize(&[vec![1.0]], &[1], 0.0, 1e-3, 10, 0).is_err());
        assert!(hinge_minimize(&[vec![1.0]], &[0], 1.0, 1e-3, 10, 0).is_err());
    }

    #[test]
    fn exhausted_budget_reports_best_iterate() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), (i as f64 * 1.7).cos()]).collect();
        let y: Vec<i8> = (0..50).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
        match hinge_minimize(&x, &y, 10.0, 1e-12, 3, 0) {
            Err(Error::Convergence { best_w, best_objective, .. }) => {
                assert_eq!(best_w.len(), 2);
                assert!((hinge_objective(&x, &y, &best_w) - best_objective).abs() < 1e-12);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn bound_examples() {
        let (g, rho) = (0.3, 2.0);
        let b = bound_terms(1.0, g, rho, 7.0, 4.0, (-1.0f64).exp()).unwrap();
        assert!((b.c_t - 0.5 * rho * g).abs() < 1e-12);
        assert!((b.r_t - rho / 2.0).abs() < 1e-15);
        assert!((b.e_t - 0.5).abs() < 1e-12);
        assert_eq!(bound_terms(1.0, 0.0, rho, 7.0, 4.0, 0.1).unwrap().c_t, 0.0);
        let lim = bound_terms(0.9, g, rho, 7.0, 1e8, 0.05).unwrap();
        assert!(lim.r_t < 1e-3 && lim.e_t < 1e-3);
        assert!((lim.c_t - (0.1 * rho * 7.0 + 0.9 * rho * g)).abs() < 1e-3);
        assert!(bound_terms(0.0, g, rho, 1.0, 4.0, 0.1).is_err());
        assert!(bound_terms(0.5, g, rho, 1.0, 4.0, 1.0).is_err());
        assert!(bound_terms(0.5, g, rho, 1.0, 0.5, 0.1).is_err());
    }
}
