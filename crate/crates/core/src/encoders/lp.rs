//! Row-wise minimax pseudo-inverse by a bounded-variable primal simplex.
//!
//! Row `j` of `B` solves `min ‖b‖∞ s.t. Aᵀb = e_j`. Substituting `b = b'/α`
//! gives the equivalent LP
//!
//! ```text
//! max α   s.t.  Aᵀb' − α e_j = 0,  −1 ≤ b'_i ≤ 1,  α ≥ 0
//! ```
//!
//! whose optimum `α*` is `1/λ_j`. It has only `k` equality rows, so the basis
//! inverse is a small dense `k × k` matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const FEAS_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-11;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;
const DEGENERATE_STREAK: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic at a value strictly between its bounds (only `b'_i = 0`
    /// starts); it may leave in either direction.
    Free,
}

/// Column `q` of the constraint matrix: `b_i` is row `i` of the scaled `A`,
/// `α` is `−e_j`, artificial `r` is `sign_r · e_r`.
struct Problem<'a> {
    /// Scaled `A`, row-major `M × k`.
    a: &'a [f64],
    m: usize,
    k: usize,
    j: usize,
    art_sign: Vec<f64>,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.m + 1 + self.k
    }

    fn alpha(&self) -> usize {
        self.m
    }

    fn column_into(&self, q: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if q < self.m {
            out.copy_from_slice(&self.a[q * self.k..(q + 1) * self.k]);
        } else if q == self.m {
            out[self.j] = -1.0;
        } else {
            let r = q - self.m - 1;
            out[r] = self.art_sign[r];
        }
    }

    fn dot_column(&self, q: usize, y: &[f64]) -> f64 {
        if q < self.m {
            self.a[q * self.k..(q + 1) * self.k].iter().zip(y).map(|(a, b)| a * b).sum()
        } else if q == self.m {
            -y[self.j]
        } else {
            let r = q - self.m - 1;
            self.art_sign[r] * y[r]
        }
    }
}

struct Simplex<'a> {
    p: Problem<'a>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    status: Vec<Status>,
    head: Vec<usize>,
    binv: Vec<f64>,
    iterations: usize,
    budget: usize,
}

pub(crate) struct RowSolution {
    /// `b'` with `|b'_i| ≤ 1`, before dividing by `α`.
    pub b: Vec<f64>,
    pub alpha: f64,
}

impl<'a> Simplex<'a> {
    fn new(a: &'a [f64], m: usize, k: usize, j: usize, start: &[f64], budget: usize) -> Self {
        let mut p = Problem { a, m, k, j, art_sign: vec![1.0; k] };
        let n = p.n();
        let mut lower = vec![-1.0; n];
        let mut upper = vec![1.0; n];
        lower[m] = 0.0;
        upper[m] = f64::INFINITY;
        let mut x = vec![0.0; n];
        let mut status = vec![Status::AtLower; n];
        for i in 0..m {
            if start[i] > 0.0 {
                x[i] = 1.0;
                status[i] = Status::AtUpper;
            } else if start[i] < 0.0 {
                x[i] = -1.0;
            } else {
                status[i] = Status::Free;
            }
        }
        // residual of the equality rows with every structural variable at its bound
        let mut resid = vec![0.0; k];
        for i in 0..m {
            for (r, v) in resid.iter_mut().enumerate() {
                *v -= a[i * k + r] * x[i];
            }
        }
        let mut head = Vec::with_capacity(k);
        for r in 0..k {
            let q = m + 1 + r;
            p.art_sign[r] = if resid[r] >= 0.0 { 1.0 } else { -1.0 };
            lower[q] = 0.0;
            upper[q] = f64::INFINITY;
            x[q] = resid[r].abs();
            status[q] = Status::Basic;
            head.push(q);
        }
        let mut binv = vec![0.0; k * k];
        for r in 0..k {
            binv[r * k + r] = p.art_sign[r];
        }
        let mut cost = vec![0.0; n];
        cost[m + 1..].iter_mut().for_each(|c| *c = 1.0);
        Simplex { p, lower, upper, cost, x, status, head, binv, iterations: 0, budget }
    }

    fn k(&self) -> usize {
        self.p.k
    }

    fn objective(&self) -> f64 {
        self.cost.iter().zip(&self.x).map(|(c, x)| c * x).sum()
    }

    fn duals(&self) -> Vec<f64> {
        let k = self.k();
        let mut y = vec![0.0; k];
        for (r, &q) in self.head.iter().enumerate() {
            let c = self.cost[q];
            if c != 0.0 {
                for (col, yv) in y.iter_mut().enumerate() {
                    *yv += c * self.binv[r * k + col];
                }
            }
        }
        y
    }

    /// Rebuilds `B⁻¹` from scratch and recomputes the basic values.
    fn refactor(&mut self) -> Result<()> {
        let k = self.k();
        let mut basis = DMatrix::<f64>::zeros(k, k);
        let mut col = vec![0.0; k];
        for (r, &q) in self.head.iter().enumerate() {
            self.p.column_into(q, &mut col);
            for i in 0..k {
                basis[(i, r)] = col[i];
            }
        }
        let inv = basis.try_inverse().ok_or_else(|| Error::Solver {
            message: "singular basis".into(),
            best_residual: f64::NAN,
        })?;
        for r in 0..k {
            for c in 0..k {
                self.binv[r * k + c] = inv[(r, c)];
            }
        }
        let mut rhs = vec![0.0; k];
        for q in 0..self.p.n() {
            if self.status[q] != Status::Basic && self.x[q] != 0.0 {
                self.p.column_into(q, &mut col);
                for i in 0..k {
                    rhs[i] -= col[i] * self.x[q];
                }
            }
        }
        for r in 0..k {
            let v: f64 = (0..k).map(|c| self.binv[r * k + c] * rhs[c]).sum();
            self.x[self.head[r]] = v;
        }
        Ok(())
    }

    fn residual(&self) -> f64 {
        let k = self.k();
        let mut col = vec![0.0; k];
        let mut acc = vec![0.0; k];
        for q in 0..self.p.n() {
            if self.x[q] != 0.0 {
                self.p.column_into(q, &mut col);
                for i in 0..k {
                    acc[i] += col[i] * self.x[q];
                }
            }
        }
        acc.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Improvement available from moving nonbasic `q` with reduced cost `d`.
    fn gain(&self, q: usize, d: f64) -> Option<f64> {
        if self.lower[q] == self.upper[q] {
            return None;
        }
        match self.status[q] {
            Status::AtLower if d < -COST_TOL => Some(-d),
            Status::AtUpper if d > COST_TOL => Some(d),
            Status::Free if d.abs() > COST_TOL => Some(d.abs()),
            _ => None,
        }
    }

    /// Runs the simplex on the current cost vector until optimal.
    fn optimize(&mut self) -> Result<()> {
        let k = self.k();
        let n = self.p.n();
        let mut w = vec![0.0; k];
        let mut col = vec![0.0; k];
        let mut degenerate = 0usize;
        let mut since_refactor = 0usize;
        let mut d = vec![0.0; n];
        let mut stale = true;
        let mut fresh = false;
        let mut candidates: Vec<usize> = Vec::new();
        let mut cursor = 0usize;
        loop {
            if self.iterations >= self.budget {
                return Err(Error::Solver {
                    message: format!("iteration budget {} exhausted", self.budget),
                    best_residual: self.residual(),
                });
            }
            self.iterations += 1;
            let bland = degenerate >= DEGENERATE_STREAK;
            // bound flips leave the duals unchanged, so reduced costs are
            // recomputed only after a basis change
            if stale {
                let y = self.duals();
                candidates.clear();
                for q in 0..n {
                    d[q] = if self.status[q] == Status::Basic { 0.0 } else { self.cost[q] - self.p.dot_column(q, &y) };
                    if self.gain(q, d[q]).is_some() {
                        candidates.push(q);
                    }
                }
                if !bland {
                    // Dantzig order: largest reduced-cost gain first
                    candidates.sort_by(|&a, &b| {
                        let (ga, gb) = (self.gain(a, d[a]).unwrap(), self.gain(b, d[b]).unwrap());
                        gb.total_cmp(&ga).then(a.cmp(&b))
                    });
                }
                cursor = 0;
                stale = false;
                fresh = true;
            }

            let mut entering = None;
            while cursor < candidates.len() {
                let q = candidates[cursor];
                cursor += 1;
                if self.gain(q, d[q]).is_some() {
                    entering = Some(q);
                    break;
                }
            }
            let Some(q) = entering else {
                if fresh {
                    return Ok(());
                }
                stale = true;
                continue;
            };
            fresh = false;
            let dir = match self.status[q] {
                Status::AtLower => 1.0,
                Status::AtUpper => -1.0,
                _ => {
                    if d[q] < 0.0 { 1.0 } else { -1.0 }
                }
            };

            self.p.column_into(q, &mut col);
            for r in 0..k {
                w[r] = (0..k).map(|c| self.binv[r * k + c] * col[c]).sum();
            }

            let mut rooms = vec![None; k];
            let mut min_room = f64::INFINITY;
            for r in 0..k {
                let rate = -dir * w[r];
                if rate.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.head[r];
                let hit = if rate < 0.0 {
                    Some(((self.x[b] - self.lower[b]).max(0.0) / -rate, false))
                } else if self.upper[b].is_finite() {
                    Some(((self.upper[b] - self.x[b]).max(0.0) / rate, true))
                } else {
                    None
                };
                if let Some((room, _)) = hit {
                    min_room = min_room.min(room);
                }
                rooms[r] = hit;
            }
            let flip = if dir > 0.0 { self.upper[q] - self.x[q] } else { self.x[q] - self.lower[q] };
            let mut theta = flip;
            let mut leave: Option<(usize, bool)> = None;
            if min_room < flip {
                theta = min_room;
                // among near-ties prefer the largest pivot, or the lowest index under Bland
                for r in 0..k {
                    let Some((room, to_upper)) = rooms[r] else { continue };
                    if room > min_room + FEAS_TOL {
                        continue;
                    }
                    let take = match leave {
                        None => true,
                        Some((l, _)) if bland => self.head[r] < self.head[l],
                        Some((l, _)) => w[r].abs() > w[l].abs(),
                    };
                    if take {
                        leave = Some((r, to_upper));
                    }
                }
            }
            if !theta.is_finite() {
                return Err(Error::Solver {
                    message: "unbounded direction".into(),
                    best_residual: self.residual(),
                });
            }
            degenerate = if theta <= FEAS_TOL { degenerate + 1 } else { 0 };

            self.x[q] += dir * theta;
            for r in 0..k {
                self.x[self.head[r]] -= dir * theta * w[r];
            }
            match leave {
                None => {
                    self.status[q] = if dir > 0.0 { Status::AtUpper } else { Status::AtLower };
                    self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                }
                Some((r, to_upper)) => {
                    let b = self.head[r];
                    self.status[b] = if to_upper { Status::AtUpper } else { Status::AtLower };
                    self.x[b] = if to_upper { self.upper[b] } else { self.lower[b] };
                    self.status[q] = Status::Basic;
                    self.head[r] = q;
                    stale = true;
                    let piv = w[r];
                    for c in 0..k {
                        self.binv[r * k + c] /= piv;
                    }
                    for i in 0..k {
                        if i != r && w[i] != 0.0 {
                            let f = w[i];
                            for c in 0..k {
                                self.binv[i * k + c] -= f * self.binv[r * k + c];
                            }
                        }
                    }
                    since_refactor += 1;
                    if since_refactor >= REFACTOR_EVERY {
                        self.refactor()?;
                        since_refactor = 0;
                    }
                }
            }
        }
    }
}

/// Solves the LP for row `j`. `a` is the scaled `A` (row-major `M × k`),
/// `start` a sign pattern guess for the initial bounds.
pub(crate) fn solve_row(a: &[f64], m: usize, k: usize, j: usize, start: &[f64]) -> Result<RowSolution> {
    let budget = 50 * (m + k) + 10_000;
    let mut sx = Simplex::new(a, m, k, j, start, budget);
    sx.optimize()?;
    sx.refactor()?;
    if sx.objective() > 1e-8 {
        return Err(Error::Infeasible { row: j });
    }
    // phase two: pin the artificials at zero and maximise α
    for r in 0..k {
        let q = m + 1 + r;
        sx.lower[q] = 0.0;
        sx.upper[q] = 0.0;
        if sx.status[q] != Status::Basic {
            sx.x[q] = 0.0;
            sx.status[q] = Status::AtLower;
        }
    }
    sx.cost.iter_mut().for_each(|c| *c = 0.0);
    let alpha = sx.p.alpha();
    sx.cost[alpha] = -1.0;
    sx.optimize()?;
    sx.refactor()?;
    let b = sx.x[..m].iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Ok(RowSolution { b, alpha: sx.x[alpha] })
}
