//! Exact brute-force references for small instances.

use nalgebra::{DMatrix, DVector};
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::domain::{GenreStructure, RatingSample, ReplacementMode};
use crate::error::{Error, Result};
use crate::loglinear::{latent_frame_coords, MovieVectors};
use crate::mixture::MovieGenreMatrix;

/// Largest `m` for which the same-set pmf is also checked by enumeration.
pub const ENUMERATE_SAME_MAX_M: usize = 8;
/// Largest `m^T` for which the independent pmf is enumerated.
pub const ENUMERATE_INDEP_MAX: u128 = 1_000_000;
/// Largest latent space [`exact_posterior`] will enumerate.
pub const POSTERIOR_MAX_LATENTS: usize = 10_000;

pub fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

fn ratio(num: BigUint, den: BigUint) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactValue {
    /// Exact rational as `"num/den"`.
    pub exact: String,
    pub value: f64,
    /// Whether the closed form was also confirmed by enumeration.
    pub enumerated: bool,
}

impl ExactValue {
    fn new(r: &BigRational, enumerated: bool) -> Self {
        ExactValue { exact: r.to_string(), value: to_f64(r), enumerated }
    }
}

fn check_overlap_args(m: usize, t: usize, tau: usize) -> Result<()> {
    if m == 0 || t > m || tau > t {
        return Err(Error::domain(format!("need 0 <= tau <= T <= m and m >= 1, got m={m} T={t} tau={tau}")));
    }
    Ok(())
}

/// `C(m−T, T−τ)·C(T, τ) / C(m, T)`: the chance that two uniform `T`-subsets
/// of an `m`-set share exactly `τ` elements.
pub fn overlap_pmf_same_rational(m: usize, t: usize, tau: usize) -> Result<BigRational> {
    check_overlap_args(m, t, tau)?;
    Ok(ratio(binomial(m - t, t - tau) * binomial(t, tau), binomial(m, t)))
}

/// Same pmf by scanning all `C(m,T)²` ordered pairs of subsets.
pub fn overlap_pmf_same_enumerated(m: usize, t: usize, tau: usize) -> Result<BigRational> {
    check_overlap_args(m, t, tau)?;
    if m > ENUMERATE_SAME_MAX_M {
        return Err(Error::domain(format!("enumeration limited to m <= {ENUMERATE_SAME_MAX_M}")));
    }
    let sets: Vec<u32> = (0u32..1 << m).filter(|s| s.count_ones() as usize == t).collect();
    let hits = sets
        .iter()
        .flat_map(|a| sets.iter().map(move |b| (a & b).count_ones() as usize))
        .filter(|&o| o == tau)
        .count();
    let total = sets.len() * sets.len();
    Ok(ratio(BigUint::from(hits), BigUint::from(total)))
}

pub fn exact_overlap_pmf_same(m: usize, t: usize, tau: usize) -> Result<ExactValue> {
    let closed = overlap_pmf_same_rational(m, t, tau)?;
    if m <= ENUMERATE_SAME_MAX_M {
        let brute = overlap_pmf_same_enumerated(m, t, tau)?;
        if brute != closed {
            return Err(Error::DataInconsistency(format!(
                "overlap pmf closed form {closed} != enumeration {brute} at m={m} T={t} tau={tau}"
            )));
        }
        return Ok(ExactValue::new(&closed, true));
    }
    Ok(ExactValue::new(&closed, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndepPmf {
    pub m: usize,
    pub t: usize,
    pub tau: usize,
    /// `C(T,τ)²·(1/m)^τ·(1 − (T−τ)/m)^{2(T−τ)}`, evaluated exactly.
    pub formula: f64,
    /// Exact pmf of the multiset overlap `Σ min(count_a, count_b)`.
    pub enumeration: Option<ExactValue>,
    /// `formula − enumeration`.
    pub difference: Option<f64>,
}

fn indep_formula(m: usize, t: usize, tau: usize) -> BigRational {
    let c = BigInt::from(binomial(t, tau));
    let mut r = BigRational::from_integer(&c * &c);
    r /= BigRational::from_integer(BigInt::from(m).pow(tau as u32));
    let base = BigRational::new(BigInt::from(m as i64 - (t - tau) as i64), BigInt::from(m));
    for _ in 0..2 * (t - tau) {
        r *= &base;
    }
    r
}

/// All compositions of `t` into `parts` nonnegative parts.
fn compositions(t: usize, parts: usize) -> Vec<Vec<u8>> {
    fn rec(left: usize, parts: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if cur.len() + 1 == parts {
            cur.push(left as u8);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for c in (0..=left).rev() {
            cur.push(c as u8);
            rec(left - c, parts, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if parts > 0 {
        rec(t, parts, &mut Vec::with_capacity(parts), &mut out);
    }
    out
}

/// Partitions of `t` into positive parts, nonincreasing.
fn partitions(t: usize) -> Vec<Vec<u8>> {
    fn rec(left: usize, max: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for p in (1..=left.min(max)).rev() {
            cur.push(p as u8);
            rec(left - p, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(t, t, &mut Vec::new(), &mut out);
    out
}

fn factorials(n: usize) -> Vec<u128> {
    let mut f = vec![1u128; n + 1];
    for i in 1..=n {
        f[i] = f[i - 1] * i as u128;
    }
    f
}

/// Exact pmf of the multiset overlap of two users each drawing `T` movies
/// i.i.d. uniformly from an `m`-movie genre.
///
/// User `a` is enumerated by count profile (a partition of `T` placed on
/// `r ≤ T` distinct movies); by symmetry only `b`'s counts on those `r`
/// movies matter, so `b` is enumerated as a composition of `T` over the `r`
/// movies plus one lumped remainder.
pub fn overlap_pmf_indep_enumerated(m: usize, t: usize) -> Result<Vec<BigRational>> {
    if m == 0 || t == 0 {
        return Err(Error::domain("need m, T >= 1"));
    }
    let space = (m as u128).checked_pow(t as u32).filter(|&s| s <= ENUMERATE_INDEP_MAX);
    let Some(space) = space else {
        return Err(Error::domain(format!("m^T exceeds {ENUMERATE_INDEP_MAX}")));
    };
    let fact = factorials(t);
    let mut hist = vec![0u128; t + 1];
    let mut covered = 0u128;
    for a in partitions(t) {
        let r = a.len();
        if r > m {
            continue;
        }
        // sequences of user a with this profile
        let placements: u128 = (0..r).map(|i| (m - i) as u128).product();
        let mut repeats = 1u128;
        let mut i = 0;
        while i < r {
            let j = (i..r).take_while(|&j| a[j] == a[i]).count();
            repeats *= fact[j];
            i += j;
        }
        let orders = a.iter().fold(fact[t], |acc, &c| acc / fact[c as usize]);
        let weight = placements / repeats * orders;
        covered += weight;
        for c in compositions(t, r + 1) {
            let rest = c[r] as u32;
            let ways = c.iter().fold(fact[t], |acc, &x| acc / fact[x as usize]) * ((m - r) as u128).pow(rest);
            if ways == 0 {
                continue;
            }
            let o: usize = a.iter().zip(&c).map(|(&x, &y)| x.min(y) as usize).sum();
            hist[o] += weight * ways;
        }
    }
    debug_assert_eq!(covered, space);
    let total = BigUint::from(space) * BigUint::from(space);
    Ok(hist.into_iter().map(|c| ratio(BigUint::from(c), total.clone())).collect())
}

pub fn exact_overlap_pmf_indep(m: usize, t: usize, tau: usize) -> Result<IndepPmf> {
    check_overlap_args(m.max(t), t, tau)?;
    let formula = to_f64(&indep_formula(m, t, tau));
    let enumeration = match overlap_pmf_indep_enumerated(m, t) {
        Ok(pmf) => Some(ExactValue::new(&pmf[tau], true)),
        Err(_) => None,
    };
    let difference = enumeration.as_ref().map(|e| formula - e.value);
    Ok(IndepPmf { m, t, tau, formula, enumeration, difference })
}

/// `1 / C(n, T)`: probability of each `T`-subset under uniform set-mode
/// emission from a union of size `n`.
pub fn uniform_subset_probability(n: usize, t: usize) -> Result<BigRational> {
    if t > n {
        return Err(Error::domain(format!("T = {t} exceeds union size {n}")));
    }
    Ok(ratio(BigUint::one(), binomial(n, t)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    /// Supports of the enumerated latents, in lexicographic order.
    pub latents: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
    /// Exact posterior masses as `"num/den"`.
    pub exact: Vec<String>,
}

fn subsets(k: usize, s: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, s: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == s {
            out.push(cur.clone());
            return;
        }
        for g in start..k {
            if k - g < s - cur.len() {
                break;
            }
            cur.push(g);
            rec(g + 1, k, s, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, k, s, &mut Vec::new(), &mut out);
    out
}

/// Posterior over binary `s`-sparse latents under a uniform prior and
/// set-mode emission: `Pr[x | h] = 1/C(|union(h)|, T)` when `x ⊆ union(h)`.
pub fn exact_posterior(structure: &GenreStructure, s: usize, x: &RatingSample) -> Result<Posterior> {
    let k = structure.num_genres();
    if s == 0 || s > k {
        return Err(Error::domain(format!("need 1 <= s <= k, got s={s} k={k}")));
    }
    let count = binomial(k, s);
    if count > BigUint::from(POSTERIOR_MAX_LATENTS) {
        return Err(Error::domain(format!("C({k},{s}) latents exceeds {POSTERIOR_MAX_LATENTS}")));
    }
    if x.mode() != ReplacementMode::Set {
        return Err(Error::domain("exact posterior needs a set-mode sample"));
    }
    let latents = subsets(k, s);
    let t = x.len();
    let weights: Vec<BigRational> = latents
        .iter()
        .map(|h| {
            let union = structure.union_of(h);
            let inside = x.movie_ids().iter().all(|m| union.binary_search(m).is_ok());
            if inside && t <= union.len() {
                ratio(BigUint::one(), binomial(union.len(), t))
            } else {
                BigRational::zero()
            }
        })
        .collect();
    let total: BigRational = weights.iter().fold(BigRational::zero(), |a, w| a + w);
    if total.is_zero() {
        return Err(Error::domain("sample has zero likelihood under every latent"));
    }
    let post: Vec<BigRational> = weights.into_iter().map(|w| w / &total).collect();
    Ok(Posterior {
        probs: post.iter().map(to_f64).collect(),
        exact: post.iter().map(|p| p.to_string()).collect(),
        latents,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLinearExpectations {
    /// `E[<W_x, h>]` under `p(·|h)`.
    pub tilted_mean_signal: f64,
    /// `E[<W_x, u_j>]` over the Householder completion `u_2..u_d` of `h`.
    pub offaxis_means: Vec<f64>,
    pub z: f64,
}

/// Exact softmax-weighted means by direct summation over all movies.
pub fn exact_loglinear_expectations(w: &MovieVectors, h: &[f64]) -> Result<LogLinearExpectations> {
    let (m, d) = (w.num_movies(), w.dim());
    if (m as u128) * (d as u128) > 100_000_000 {
        return Err(Error::domain("M·d above 1e8"));
    }
    let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > crate::domain::TOL {
        return Err(Error::domain(format!("latent must have unit norm, got {norm}")));
    }
    let scores = w.scores(h)?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; d];
    for (x, wt) in weights.iter().enumerate() {
        for (acc, v) in mean.iter_mut().zip(w.row(x)) {
            *acc += wt * v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= total);
    let coords = latent_frame_coords(h, &mean);
    Ok(LogLinearExpectations {
        tilted_mean_signal: coords[0],
        offaxis_means: coords[1..].to_vec(),
        z: total * max.exp(),
    })
}

/// `min ‖b‖∞ s.t. Aᵀb = e_j` by enumerating every vertex of
/// `{(b, t) : Aᵀb = e_j, −t ≤ b_i ≤ t}`. Only for `M ≤ 8`, `k ≤ 3`.
pub fn exhaustive_min_inf_row(a: &MovieGenreMatrix, j: usize) -> Result<f64> {
    let (m, k) = (a.rows(), a.cols());
    if m > 8 || k > 3 || j >= k {
        return Err(Error::domain("exhaustive LP limited to M <= 8, k <= 3"));
    }
    let n = m + 1;
    let free = n - k;
    // inequality code c: b_i − t = 0 for c < m, b_i + t = 0 for c >= m
    let mut best = f64::INFINITY;
    let mut choose = vec![0usize; free];
    fn next(choose: &mut [usize], limit: usize) -> bool {
        let r = choose.len();
        for i in (0..r).rev() {
            if choose[i] < limit - (r - i) {
                choose[i] += 1;
                for l in i + 1..r {
                    choose[l] = choose[l - 1] + 1;
                }
                return true;
            }
        }
        false
    }
    if free > 2 * m {
        return Err(Error::domain("more free directions than inequalities"));
    }
    for (i, c) in choose.iter_mut().enumerate() {
        *c = i;
    }
    loop {
        let mut sys = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for c in 0..k {
            for i in 0..m {
                sys[(c, i)] = a.get(i, c);
            }
            rhs[c] = if c == j { 1.0 } else { 0.0 };
        }
        for (r, &code) in choose.iter().enumerate() {
            let i = code % m;
            sys[(k + r, i)] = 1.0;
            sys[(k + r, m)] = if code < m { -1.0 } else { 1.0 };
        }
        if let Some(sol) = sys.clone().lu().solve(&rhs) {
            let t = sol[m];
            let back = &sys * &sol - &rhs;
            let exact = back.iter().all(|v| v.abs() < 1e-9);
            let feasible = t >= -1e-12 && (0..m).all(|i| sol[i].abs() <= t + 1e-9);
            if exact && feasible && t < best {
                best = t;
            }
        }
        if !next(&mut choose, 2 * m) {
            break;
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::Infeasible { row: j })
    }
}

pub fn exhaustive_min_inf_lambda(a: &MovieGenreMatrix) -> Result<f64> {
    (0..a.cols()).map(|j| exhaustive_min_inf_row(a, j)).try_fold(0.0f64, |acc, r| Ok(acc.max(r?)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SameFixture {
    pub m: usize,
    pub t: usize,
    pub pmf: Vec<ExactValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFixtures {
    pub overlap_same: Vec<SameFixture>,
    pub overlap_indep: Vec<IndepPmf>,
    /// How measured encoder validity maps onto the posterior statement.
    pub posterior_note: String,
}

/// Fixture tables consumed by the property tests: same-set pmfs for every
/// `m ≤ 8, T ≤ 4` (enumeration-checked) plus `m = 50, T = 7`, and the
/// independent-emission pmfs for a few small `(m, T)`.
pub fn oracle_fixtures() -> Result<OracleFixtures> {
    let mut overlap_same = Vec::new();
    let mut grid: Vec<(usize, usize)> = (1..=8).flat_map(|m| (0..=m.min(4)).map(move |t| (m, t))).collect();
    grid.push((50, 7));
    for (m, t) in grid {
        let pmf = (0..=t).map(|tau| exact_overlap_pmf_same(m, t, tau)).collect::<Result<_>>()?;
        overlap_same.push(SameFixture { m, t, pmf });
    }
    let mut overlap_indep = Vec::new();
    for (m, t) in [(2, 1), (3, 2), (4, 3), (10, 4)] {
        for tau in 0..=t {
            overlap_indep.push(exact_overlap_pmf_indep(m, t, tau)?);
        }
    }
    Ok(OracleFixtures {
        overlap_same,
        overlap_indep,
        posterior_note: "measured (beta_hat, gamma_hat) map to delta = sqrt(1 - beta_hat)".into(),
    })
}
