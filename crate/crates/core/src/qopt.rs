//! Query-distribution optimization over a box-constrained simplex, uniform
//! mixing, entropy filtering and shot-constrained batch sampling.

use crate::error::{Error, Result};
use crate::fisher::{query_score, ridge_lambda, Coordinates, ParamMask, ScoreMap};
use crate::model::LambdaParams;
use crate::noise::{noisy_likelihood, NoiseModel};
use crate::oracle::RngStream;
use crate::space::QuerySpace;
use nalgebra::DMatrix;
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct QueryDistribution {
    weights: Vec<f64>,
}

impl QueryDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain("distribution weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!("distribution sums to {total}")));
        }
        Ok(Self { weights })
    }

    /// Normalizes nonnegative weights.
    pub fn from_unnormalized(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("weights have no mass".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(weights)
    }

    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![1.0 / n as f64; n] }
    }

    pub fn point_mass(n: usize, idx: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[idx] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Entries with weight above `tol`.
    pub fn support(&self, tol: f64) -> Vec<(usize, f64)> {
        self.weights.iter().copied().enumerate().filter(|(_, w)| *w > tol).collect()
    }

    /// Spreads this distribution over a larger index set.
    pub fn embed(&self, indices: &[usize], n: usize) -> QueryDistribution {
        let mut weights = vec![0.0; n];
        for (w, &i) in self.weights.iter().zip(indices) {
            weights[i] = *w;
        }
        QueryDistribution { weights }
    }
}

/// Per-query information factors: `I_x = sum_r s_{x,r} s_{x,r}^T`, each `s` of length `dim`.
#[derive(Clone, Debug)]
pub struct Design {
    dim: usize,
    rank: usize,
    factors: Vec<f64>,
}

impl Design {
    pub fn from_scores(dim: usize, scores: &[Vec<f64>]) -> Self {
        let mut factors = Vec::with_capacity(dim * scores.len());
        for s in scores {
            assert_eq!(s.len(), dim, "score length must equal the design dimension");
            factors.extend_from_slice(s);
        }
        Self { dim, rank: 1, factors }
    }

    /// Factors general PSD matrices through their eigendecompositions.
    pub fn from_matrices(mats: &[DMatrix<f64>]) -> Self {
        let dim = mats.first().map_or(0, |m| m.nrows());
        let mut factors = Vec::with_capacity(dim * dim * mats.len());
        for m in mats {
            let eig = m.clone().symmetric_eigen();
            for r in 0..dim {
                let lam = eig.eigenvalues[r].max(0.0).sqrt();
                factors.extend(eig.eigenvectors.column(r).iter().map(|v| v * lam));
            }
        }
        Self { dim, rank: dim, factors }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.factors.len() / (self.dim * self.rank).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Design restricted to the given candidates, in that order.
    pub fn subset(&self, indices: &[usize]) -> Design {
        let width = self.dim * self.rank;
        let mut factors = Vec::with_capacity(width * indices.len());
        for &x in indices {
            factors.extend_from_slice(&self.factors[x * width..(x + 1) * width]);
        }
        Design { dim: self.dim, rank: self.rank, factors }
    }

    fn factor(&self, x: usize, r: usize) -> &[f64] {
        let start = (x * self.rank + r) * self.dim;
        &self.factors[start..start + self.dim]
    }

    pub fn query_matrix(&self, x: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.rank {
            let s = self.factor(x, r);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    m[(i, j)] += s[i] * s[j];
                }
            }
        }
        m
    }

    pub fn fisher(&self, q: &[f64]) -> DMatrix<f64> {
        let k = self.dim;
        let mut m = DMatrix::zeros(k, k);
        for (x, &w) in q.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for r in 0..self.rank {
                let s = self.factor(x, r);
                for i in 0..k {
                    let wi = w * s[i];
                    for j in i..k {
                        m[(i, j)] += wi * s[j];
                    }
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                m[(i, j)] = m[(j, i)];
            }
        }
        m
    }
}

/// Objective `Tr((I_q + lambda I)^-1 M)`.
#[derive(Clone, Debug)]
pub enum Objective {
    /// `M = I`.
    AOptimal,
    /// `M = I_test`.
    FisherRatio(DMatrix<f64>),
}

impl Objective {
    fn weight(&self, k: usize) -> DMatrix<f64> {
        match self {
            Objective::AOptimal => DMatrix::identity(k, k),
            Objective::FisherRatio(m) => m.clone(),
        }
    }
}

/// Value and `B = F^-1 M F^-1`, whose quadratic forms give the gradient.
fn objective_parts(design: &Design, weight: &DMatrix<f64>, q: &[f64]) -> Option<(f64, DMatrix<f64>)> {
    let f = design.fisher(q);
    let k = f.nrows();
    let reg = &f + DMatrix::identity(k, k) * ridge_lambda(&f);
    let chol = nalgebra::Cholesky::new(reg)?;
    let inv = chol.inverse();
    let value = (&inv * weight).trace();
    if !value.is_finite() {
        return None;
    }
    let b = &inv * weight * &inv;
    Some((value, b))
}

fn gradient(design: &Design, b: &DMatrix<f64>) -> Vec<f64> {
    let k = design.dim;
    (0..design.len())
        .map(|x| {
            let mut g = 0.0;
            for r in 0..design.rank {
                let s = design.factor(x, r);
                for i in 0..k {
                    let mut bs = 0.0;
                    for j in 0..k {
                        bs += b[(i, j)] * s[j];
                    }
                    g += s[i] * bs;
                }
            }
            -g
        })
        .collect()
}

/// Euclidean projection onto `{q : sum q = 1, 0 <= q <= ub}`.
pub fn project_capped_simplex(v: &[f64], ub: &[f64]) -> Vec<f64> {
    let mass = |tau: f64| -> (f64, usize) {
        let mut s = 0.0;
        let mut free = 0;
        for (x, u) in v.iter().zip(ub) {
            let y = x - tau;
            if y >= *u {
                s += u;
            } else if y > 0.0 {
                s += y;
                free += 1;
            }
        }
        (s, free)
    };
    let mut lo = v.iter().zip(ub).map(|(x, u)| x - u).fold(f64::INFINITY, f64::min);
    let mut hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut tau = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (s, free) = mass(tau);
        let err = s - 1.0;
        if err.abs() <= 1e-15 {
            break;
        }
        if err > 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        // Newton step on the piecewise-linear mass, safeguarded by the bracket
        let newton = if free > 0 { tau + err / free as f64 } else { f64::NAN };
        tau = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-18 * (1.0 + hi.abs()) {
            break;
        }
    }
    let mut q: Vec<f64> = v.iter().zip(ub).map(|(x, u)| (x - tau).clamp(0.0, *u)).collect();
    // absorb the rounding residual in the free coordinates
    let resid = 1.0 - q.iter().sum::<f64>();
    if resid != 0.0 {
        let free: Vec<usize> = (0..q.len()).filter(|&i| q[i] > 0.0 && q[i] < ub[i]).collect();
        if !free.is_empty() {
            let d = resid / free.len() as f64;
            for i in free {
                q[i] = (q[i] + d).clamp(0.0, ub[i]);
            }
        }
    }
    q
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Stop once the duality gap, which bounds the distance to the optimum, falls below `gap_tol * f`.
    pub gap_tol: f64,
    /// Stall guard: stop when a step changes the objective by less than this, relatively.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-6, rel_tol: 1e-13, max_iter: 5000 }
    }
}

#[derive(Clone, Debug)]
pub struct SolverOutput {
    pub q: QueryDistribution,
    pub objective: f64,
    pub iterations: usize,
    /// Objective after each accepted step, starting with the initial point.
    pub history: Vec<f64>,
}

/// Designs larger than this are solved over a working set of candidates.
const WORKING_SET_MIN: usize = 1024;
const WORKING_SET_GROWTH: usize = 256;
/// Relative KKT slack below which an excluded candidate is not added.
const WORKING_SET_TOL: f64 = 1e-4;

/// Minimizes the objective over `{q : sum q = 1, 0 <= q <= ub}`.
///
/// Small designs use projected gradient descent directly. Large ones solve a
/// sequence of restricted problems, adding excluded candidates whose gradient
/// violates the optimality conditions, so the result is optimal for the full set.
pub fn optimize_design(design: &Design, objective: &Objective, ub: &[f64], opts: &SolverOptions) -> Result<SolverOutput> {
    let n = design.len();
    if ub.len() != n || n == 0 {
        return Err(Error::Domain("upper bounds must match the design size".into()));
    }
    let cap: f64 = ub.iter().map(|u| u.clamp(0.0, 1.0)).sum();
    if cap < 1.0 - 1e-12 {
        return Err(Error::Infeasible(cap));
    }
    let ub: Vec<f64> = ub.iter().map(|u| u.clamp(0.0, 1.0)).collect();
    let weight = objective.weight(design.dim);
    if n <= WORKING_SET_MIN {
        return solve_dense(design, &weight, &ub, opts);
    }
    solve_working_set(design, &weight, &ub, opts)
}

fn most_negative(g: &[f64], exclude: &[bool], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..g.len()).filter(|&i| !exclude[i]).collect();
    let count = count.min(idx.len());
    if count == 0 {
        return idx;
    }
    idx.select_nth_unstable_by(count - 1, |&a, &b| g[a].total_cmp(&g[b]));
    idx.truncate(count);
    idx
}

fn solve_working_set(design: &Design, weight: &DMatrix<f64>, ub: &[f64], opts: &SolverOptions) -> Result<SolverOutput> {
    let n = design.len();
    let uniform = vec![1.0 / n as f64; n];
    let (_, b) = objective_parts(design, weight, &uniform)
        .ok_or_else(|| Error::Numerical { query: None, msg: "fisher matrix singular at the uniform distribution".into() })?;
    let g = gradient(design, &b);
    let mut in_set = vec![false; n];
    let mut set = most_negative(&g, &in_set, WORKING_SET_GROWTH);
    set.iter().for_each(|&i| in_set[i] = true);
    let mut iterations = 0;
    loop {
        // keep the restricted problem feasible
        while set.iter().map(|&i| ub[i]).sum::<f64>() < 1.0 && set.len() < n {
            let more = most_negative(&g, &in_set, WORKING_SET_GROWTH);
            more.iter().for_each(|&i| in_set[i] = true);
            set.extend(more);
        }
        let sub = design.subset(&set);
        let sub_ub: Vec<f64> = set.iter().map(|&i| ub[i]).collect();
        let out = match solve_dense(&sub, weight, &sub_ub, opts) {
            Ok(out) => out,
            Err(e) if set.len() >= n => return Err(e),
            Err(_) => {
                let more = most_negative(&g, &in_set, set.len());
                more.iter().for_each(|&i| in_set[i] = true);
                set.extend(more);
                continue;
            }
        };
        iterations += out.iterations;
        let mut q = vec![0.0; n];
        for (k, &i) in set.iter().enumerate() {
            q[i] = out.q.weights[k];
        }
        let (_, b) = objective_parts(design, weight, &q)
            .ok_or_else(|| Error::Numerical { query: None, msg: "fisher matrix singular at the restricted optimum".into() })?;
        let g_full = gradient(design, &b);
        let nu = multiplier(&set.iter().map(|&i| g_full[i]).collect::<Vec<_>>(), &out.q.weights, &sub_ub);
        let threshold = nu - WORKING_SET_TOL * nu.abs();
        let violators: Vec<usize> = most_negative(&g_full, &in_set, WORKING_SET_GROWTH)
            .into_iter()
            .filter(|&i| g_full[i] < threshold)
            .collect();
        if violators.is_empty() || set.len() >= n {
            return Ok(SolverOutput { q: QueryDistribution { weights: q }, objective: out.objective, iterations, history: out.history });
        }
        violators.iter().for_each(|&i| in_set[i] = true);
        set.extend(violators);
    }
}

/// Lagrange multiplier of the simplex constraint: the common gradient of free coordinates.
fn multiplier(g: &[f64], q: &[f64], ub: &[f64]) -> f64 {
    let tol = 1e-9;
    let free: Vec<usize> = (0..q.len()).filter(|&i| q[i] > tol && q[i] < ub[i] - tol).collect();
    if free.is_empty() {
        let lo = (0..q.len()).filter(|&i| q[i] <= tol).map(|i| g[i]).fold(f64::INFINITY, f64::min);
        let hi = (0..q.len()).filter(|&i| q[i] > tol).map(|i| g[i]).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && lo < hi {
            return lo;
        }
        return hi;
    }
    free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64
}

/// `g.q - min g.q'` over the capped simplex; an upper bound on `f(q) - f*` for convex `f`.
fn duality_gap(q: &[f64], g: &[f64], ub: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_unstable_by(|&a, &b| g[a].total_cmp(&g[b]));
    let (mut left, mut best) = (1.0f64, 0.0);
    for i in order {
        if left <= 0.0 {
            break;
        }
        let take = ub[i].min(left);
        best += take * g[i];
        left -= take;
    }
    let current: f64 = q.iter().zip(g).map(|(a, b)| a * b).sum();
    (current - best).max(0.0)
}

/// Projected gradient descent with Barzilai-Borwein trial steps and Armijo backtracking.
fn solve_dense(design: &Design, weight: &DMatrix<f64>, ub: &[f64], opts: &SolverOptions) -> Result<SolverOutput> {
    let n = design.len();
    let ub = ub.to_vec();
    let fail = || Error::Numerical { query: None, msg: "fisher matrix singular at the starting distribution".into() };

    let mut q = project_capped_simplex(&vec![1.0 / n as f64; n], &ub);
    let (mut f, mut b) = objective_parts(design, weight, &q).ok_or_else(fail)?;
    let mut g = gradient(design, &b);
    let mut history = vec![f];
    let spread = |g: &[f64]| {
        let hi = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = g.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    };
    let mut alpha = 1.0 / (n as f64 * spread(&g).max(f64::MIN_POSITIVE));
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut accepted = None;
        let mut step = alpha;
        for _ in 0..60 {
            let trial: Vec<f64> = q.iter().zip(&g).map(|(x, gx)| x - step * gx).collect();
            let q_new = project_capped_simplex(&trial, &ub);
            let decrease: f64 = g.iter().zip(q_new.iter().zip(&q)).map(|(gx, (a, c))| gx * (a - c)).sum();
            if decrease >= 0.0 {
                break;
            }
            if let Some((f_new, b_new)) = objective_parts(design, weight, &q_new) {
                if f_new <= f + 1e-4 * decrease {
                    accepted = Some((q_new, f_new, b_new));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((q_new, f_new, b_new)) = accepted else { break };
        let g_new = gradient(design, &b_new);
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..n {
            let s = q_new[i] - q[i];
            ss += s * s;
            sy += s * (g_new[i] - g[i]);
        }
        alpha = if sy > 0.0 { ss / sy } else { step * 2.0 };
        let rel = (f - f_new).abs() / f.abs().max(f64::MIN_POSITIVE);
        q = q_new;
        f = f_new;
        b = b_new;
        g = g_new;
        history.push(f);
        if rel < opts.rel_tol || duality_gap(&q, &g, &ub) <= opts.gap_tol * f.abs() {
            break;
        }
    }
    let _ = b;
    Ok(SolverOutput { q: QueryDistribution { weights: q }, objective: f, iterations, history })
}

/// Largest violation of the KKT conditions of the capped simplex, relative to the multiplier.
pub fn kkt_residual(design: &Design, objective: &Objective, q: &[f64], ub: &[f64]) -> f64 {
    let weight = objective.weight(design.dim);
    let Some((_, b)) = objective_parts(design, &weight, q) else { return f64::INFINITY };
    let g = gradient(design, &b);
    let tol = 1e-9;
    let free: Vec<usize> = (0..q.len()).filter(|&i| q[i] > tol && q[i] < ub[i] - tol).collect();
    let nu = if free.is_empty() {
        let lo = (0..q.len()).filter(|&i| q[i] <= tol).map(|i| g[i]).fold(f64::INFINITY, f64::min);
        let hi = (0..q.len()).filter(|&i| q[i] > tol).map(|i| g[i]).fold(f64::NEG_INFINITY, f64::max);
        if lo >= hi {
            return 0.0;
        }
        0.5 * (lo + hi)
    } else {
        free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64
    };
    let scale = nu.abs().max(f64::MIN_POSITIVE);
    (0..q.len())
        .map(|i| {
            let v = if q[i] <= tol {
                (nu - g[i]).max(0.0)
            } else if q[i] >= ub[i] - tol {
                (g[i] - nu).max(0.0)
            } else {
                (g[i] - nu).abs()
            };
            v / scale
        })
        .fold(0.0, f64::max)
}

/// Score vectors of the given queries in the requested coordinates.
pub fn design_for(
    l: &LambdaParams,
    n: &NoiseModel,
    space: &QuerySpace,
    indices: &[usize],
    coords: Coordinates,
    mask: &ParamMask,
) -> Result<Design> {
    let map = ScoreMap::new(l, coords, mask)?;
    let k = map.dim();
    let scores: Vec<Vec<f64>> = indices
        .iter()
        .map(|&i| match query_score(l, n, &space.query(i)) {
            Some(s) => map.apply(&s),
            None => vec![0.0; k],
        })
        .collect();
    Ok(Design::from_scores(k, &scores))
}

/// Options shared by the two query optimizations.
#[derive(Clone, Debug)]
pub struct QoptSettings {
    pub coords: Coordinates,
    pub mask: ParamMask,
    pub solver: SolverOptions,
}

impl Default for QoptSettings {
    fn default() -> Self {
        Self { coords: Coordinates::JScaled, mask: ParamMask::full(), solver: SolverOptions::default() }
    }
}

/// A-optimal query distribution over all queries of `space`.
pub fn optimize_fi(
    l: &LambdaParams,
    n: &NoiseModel,
    space: &QuerySpace,
    upper_bounds: &[f64],
    settings: &QoptSettings,
) -> Result<QueryDistribution> {
    let idx: Vec<usize> = (0..space.len()).collect();
    let design = design_for(l, n, space, &idx, settings.coords, &settings.mask)?;
    Ok(optimize_design(&design, &Objective::AOptimal, upper_bounds, &settings.solver)?.q)
}

/// Query distribution minimizing the Fisher information ratio against `p_test`.
pub fn optimize_fir(
    l: &LambdaParams,
    n: &NoiseModel,
    space: &QuerySpace,
    p_test: &QueryDistribution,
    upper_bounds: &[f64],
    settings: &QoptSettings,
) -> Result<QueryDistribution> {
    let idx: Vec<usize> = (0..space.len()).collect();
    let design = design_for(l, n, space, &idx, settings.coords, &settings.mask)?;
    let f_test = design.fisher(p_test.weights());
    Ok(optimize_design(&design, &Objective::FisherRatio(f_test), upper_bounds, &settings.solver)?.q)
}

/// `mu = 1 - n_tot^(-1/6)`.
pub fn mixing_weight(n_tot: usize) -> f64 {
    1.0 - (n_tot.max(1) as f64).powf(-1.0 / 6.0)
}

pub fn mix_uniform(q: &QueryDistribution, n_tot: usize) -> QueryDistribution {
    let mu = mixing_weight(n_tot);
    let u = (1.0 - mu) / q.len() as f64;
    QueryDistribution { weights: q.weights.iter().map(|w| mu * w + u).collect() }
}

pub fn binary_entropy(p: f64) -> f64 {
    let h = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    h(p) + h(1.0 - p)
}

/// Indices of queries whose outcome entropy exceeds `tau` times the maximum;
/// maximizers are always kept.
pub fn entropy_filter(l: &LambdaParams, n: &NoiseModel, space: &QuerySpace, tau: f64) -> Result<Vec<usize>> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("entropy threshold must be in (0, 1], got {tau}")));
    }
    let s: Vec<f64> = space.queries().map(|q| binary_entropy(noisy_likelihood(l, n, &q))).collect();
    let max = s.iter().copied().fold(0.0, f64::max);
    Ok((0..s.len()).filter(|&i| s[i] > tau * max || s[i] == max).collect())
}

/// Draws `n_b` query indices from `qdist`, then prunes draws that exceed the
/// remaining shots and reassigns the excess uniformly among still-available queries.
/// `ledger = None` means unlimited shots.
pub fn sample_batch(qdist: &QueryDistribution, n_b: usize, ledger: Option<&[usize]>, rng: &mut RngStream) -> Result<Vec<usize>> {
    let n = qdist.len();
    let avail = |i: usize| ledger.is_none_or(|l| l[i] > 0);
    if let Some(l) = ledger {
        let total: usize = l.iter().sum();
        if total < n_b {
            return Err(Error::BudgetExhausted { requested: n_b, available: total });
        }
    }
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for (i, w) in qdist.weights.iter().enumerate() {
        if avail(i) {
            acc += w;
        }
        cum.push(acc);
    }
    let mut counts = vec![0usize; n];
    if acc > 0.0 {
        for _ in 0..n_b {
            let u = rng.random::<f64>() * acc;
            let i = cum.partition_point(|&c| c <= u).min(n - 1);
            counts[i] += 1;
        }
    }
    let mut excess = if acc > 0.0 { 0 } else { n_b };
    if let Some(l) = ledger {
        for i in 0..n {
            if counts[i] > l[i] {
                excess += counts[i] - l[i];
                counts[i] = l[i];
            }
        }
    }
    if excess > 0 {
        let mut open: Vec<usize> = (0..n).filter(|&i| ledger.is_none_or(|l| counts[i] < l[i])).collect();
        while excess > 0 {
            let k = rng.random_range(0..open.len());
            let i = open[k];
            counts[i] += 1;
            excess -= 1;
            if ledger.is_some_and(|l| counts[i] >= l[i]) {
                open.swap_remove(k);
            }
        }
    }
    Ok(counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_is_feasible() {
        let v = vec![0.9, -0.2, 0.4, 0.1, 2.0];
        let ub = vec![0.5, 1.0, 1.0, 0.2, 0.3];
        let q = project_capped_simplex(&v, &ub);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(q.iter().zip(&ub).all(|(x, u)| *x >= 0.0 && *x <= u + 1e-15));
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let mats = [DMatrix::from_diagonal_element(2, 2, 0.0), DMatrix::from_diagonal_element(2, 2, 0.0)];
        let mut a = mats[0].clone();
        a[(0, 0)] = 1.0;
        let mut b = mats[1].clone();
        b[(1, 1)] = 1.0;
        let design = Design::from_matrices(&[a, b]);
        let out = optimize_design(&design, &Objective::AOptimal, &[1.0, 1.0], &SolverOptions::default()).unwrap();
        assert!((out.q.weights()[0] - 0.5).abs() < 1e-6);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn working_set_matches_dense() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<Vec<f64>> = (0..3000)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let design = Design::from_scores(3, &scores);
        let weight = Objective::AOptimal.weight(3);
        for ub in [1.0, 0.05] {
            let ub = vec![ub; 3000];
            let opts = SolverOptions::default();
            let big = optimize_design(&design, &Objective::AOptimal, &ub, &opts).unwrap();
            let dense = solve_dense(&design, &weight, &ub, &opts).unwrap();
            assert!(big.objective <= dense.objective * (1.0 + 1e-5), "{} vs {}", big.objective, dense.objective);
            assert!(kkt_residual(&design, &Objective::AOptimal, big.q.weights(), &ub) < 1e-3);
        }
    }

    #[test]
    fn infeasible_bounds() {
        let design = Design::from_scores(1, &[vec![1.0], vec![1.0]]);
        let r = optimize_design(&design, &Objective::AOptimal, &[0.3, 0.3], &SolverOptions::default());
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn mixing_weight_values() {
        assert_eq!(mixing_weight(1), 0.0);
        assert!((mixing_weight(2430) - 0.72727).abs() < 1e-5);
        let q = mix_uniform(&QueryDistribution::point_mass(4, 2), 2430);
        assert!((q.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_available_query() {
        let mut rng = RngStream::new(3, 0);
        let ledger = vec![0, 7, 0];
        let b = sample_batch(&QueryDistribution::uniform(3), 5, Some(&ledger), &mut rng).unwrap();
        assert_eq!(b, vec![1; 5]);
        assert!(sample_batch(&QueryDistribution::uniform(3), 8, Some(&ledger), &mut rng).is_err());
    }

    #[test]
    fn pruned_batch_respects_ledger() {
        let mut rng = RngStream::new(4, 0);
        let ledger = vec![1, 2, 50, 3];
        let q = QueryDistribution::new(vec![0.7, 0.2, 0.05, 0.05]).unwrap();
        let b = sample_batch(&q, 40, Some(&ledger), &mut rng).unwrap();
        assert_eq!(b.len(), 40);
        let mut counts = [0usize; 4];
        b.iter().for_each(|&i| counts[i] += 1);
        assert!(counts.iter().zip(&ledger).all(|(c, l)| c <= l));
    }
}
