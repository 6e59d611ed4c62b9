//! Staged estimation: Rabi curves from shots, frequency estimation, regression
//! initialization and the maximum-likelihood solve.

use crate::error::{Error, Result};
use crate::fisher::{jacobian_lambda_j, ParamMask, XI};
use crate::model::{j_to_lambda, lambda_to_j, rabi_terms, BlockParams, JParams, LambdaParams, Measurement, Preparation};
use crate::noise::{hidden_likelihood, noisy_likelihood_grad, rabi_readout_correction, NoiseModel, ReadoutModel};
use crate::optim::{golden_section, lbfgsb, Adam, AdamConfig, Bounds, LbfgsbConfig};
use crate::oracle::{Dataset, Outcome, RngStream};
use crate::space::QuerySpace;
use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand_distr::{Binomial, Distribution};
use std::f64::consts::{FRAC_PI_2, PI};

const LOG_FLOOR: f64 = 1e-300;

/// Shots collected so far, indexed by query of a (possibly growing) space.
#[derive(Clone, Debug)]
pub struct Observations {
    space: QuerySpace,
    readout: ReadoutModel,
    zeros: Vec<usize>,
    ones: Vec<usize>,
    /// Class densities `(f0, f1)` of each signal shot.
    signals: Vec<Vec<(f64, f64)>>,
    total: usize,
}

impl Observations {
    pub fn new(space: QuerySpace, readout: ReadoutModel) -> Self {
        let n = space.len();
        Self { space, readout, zeros: vec![0; n], ones: vec![0; n], signals: vec![Vec::new(); n], total: 0 }
    }

    /// All recorded shots of a dataset.
    pub fn from_dataset(d: &Dataset, readout: ReadoutModel) -> Result<Self> {
        let mut obs = Self::new(d.space().clone(), readout);
        for idx in 0..d.space().len() {
            for o in d.recorded(idx) {
                obs.push(idx, o)?;
            }
        }
        Ok(obs)
    }

    pub fn push(&mut self, idx: usize, outcome: &Outcome) -> Result<()> {
        if idx >= self.space.len() {
            return Err(Error::Domain(format!("query index {idx} outside the space")));
        }
        match (outcome, &self.readout) {
            (Outcome::Bit(0), ReadoutModel::BitFlip { .. }) => self.zeros[idx] += 1,
            (Outcome::Bit(_), ReadoutModel::BitFlip { .. }) => self.ones[idx] += 1,
            (Outcome::Signal(c), ReadoutModel::GaussianSignal(g)) => {
                self.signals[idx].push((g.density(*c, 0), g.density(*c, 1)));
            }
            (Outcome::Bit(_), _) => return Err(Error::ModelKind { expected: "bit-flip" }),
            (Outcome::Signal(_), _) => return Err(Error::ModelKind { expected: "gaussian-signal" }),
        }
        self.total += 1;
        Ok(())
    }

    /// Switches to a grown space whose leading queries are the current ones.
    pub fn set_space(&mut self, space: QuerySpace) -> Result<()> {
        let n_old = self.space.n_times();
        if space.n_times() < n_old || space.times()[..n_old] != *self.space.times() {
            return Err(Error::Domain("new space must extend the current time grid".into()));
        }
        let n = space.len();
        self.zeros.resize(n, 0);
        self.ones.resize(n, 0);
        self.signals.resize(n, Vec::new());
        self.space = space;
        Ok(())
    }

    pub fn space(&self) -> &QuerySpace {
        &self.space
    }

    pub fn readout(&self) -> &ReadoutModel {
        &self.readout
    }

    pub fn n_total(&self) -> usize {
        self.total
    }

    pub fn n_shots(&self, idx: usize) -> usize {
        self.zeros[idx] + self.ones[idx] + self.signals[idx].len()
    }

    /// Queries with at least one shot.
    pub fn active(&self) -> Vec<usize> {
        (0..self.space.len()).filter(|&i| self.n_shots(i) > 0).collect()
    }

    fn is_signal(&self) -> bool {
        matches!(self.readout, ReadoutModel::GaussianSignal(_))
    }
}

// ---------------------------------------------------------------------------
// negative log-likelihood

fn add_block(grad: &mut [f64; 6], block: usize, coef: f64, g: &[f64; 3]) {
    for k in 0..3 {
        grad[3 * block + k] += coef * g[k];
    }
}

/// Loss and Lambda-gradient contributions of `count` shots at one query.
fn query_terms(obs: &Observations, l: &LambdaParams, noise: &NoiseModel, idx: usize, shots: Option<&[usize]>) -> Result<(f64, [f64; 6])> {
    let q = obs.space.query(idx);
    let block = q.prep.block();
    let mut grad = [0.0; 6];
    let mut loss = 0.0;
    if obs.is_signal() {
        let h = hidden_likelihood(l, noise, &q);
        if !h.p.is_finite() {
            return Err(Error::Numerical { query: Some(idx), msg: "non-finite likelihood".into() });
        }
        let all = &obs.signals[idx];
        let mut coef = 0.0;
        let mut visit = |&(f0, f1): &(f64, f64)| {
            let m = (h.p * f0 + (1.0 - h.p) * f1).max(LOG_FLOOR);
            loss -= m.ln();
            coef -= (f0 - f1) / m;
        };
        match shots {
            Some(ks) => ks.iter().for_each(|&k| visit(&all[k])),
            None => all.iter().for_each(&mut visit),
        }
        add_block(&mut grad, block, coef, &h.grad);
    } else {
        let g = noisy_likelihood_grad(l, noise, &q);
        if !g.p.is_finite() {
            return Err(Error::Numerical { query: Some(idx), msg: "non-finite likelihood".into() });
        }
        let (n0, n1) = match shots {
            // shot k of a query reads 0 for k below its zero count
            Some(ks) => {
                let z = ks.iter().filter(|&&k| k < obs.zeros[idx]).count();
                (z as f64, (ks.len() - z) as f64)
            }
            None => (obs.zeros[idx] as f64, obs.ones[idx] as f64),
        };
        let p = g.p.clamp(LOG_FLOOR, 1.0);
        let pc = (1.0 - g.p).clamp(LOG_FLOOR, 1.0);
        if n0 > 0.0 {
            loss -= n0 * p.ln();
        }
        if n1 > 0.0 {
            loss -= n1 * pc.ln();
        }
        add_block(&mut grad, block, -n0 / p + n1 / pc, &g.grad);
    }
    Ok((loss, grad))
}

/// Mean negative log-likelihood over all observed shots and its Lambda gradient.
pub fn nll_with_gradient(obs: &Observations, l: &LambdaParams, noise: &NoiseModel) -> Result<(f64, [f64; 6])> {
    if obs.total == 0 {
        return Err(Error::MissingData("no observations".into()));
    }
    let mut loss = 0.0;
    let mut grad = [0.0; 6];
    for idx in 0..obs.space.len() {
        if obs.n_shots(idx) == 0 {
            continue;
        }
        let (v, g) = query_terms(obs, l, noise, idx, None)?;
        loss += v;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let n = obs.total as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical { query: None, msg: "non-finite loss".into() });
    }
    Ok((loss / n, grad.map(|g| g / n)))
}

pub fn negative_log_likelihood(obs: &Observations, l: &LambdaParams, noise: &NoiseModel) -> Result<f64> {
    Ok(nll_with_gradient(obs, l, noise)?.0)
}

/// Mean loss over a minibatch of `(query, shot)` pairs, sorted by query.
fn batch_loss(obs: &Observations, l: &LambdaParams, noise: &NoiseModel, batch: &mut [(usize, usize)]) -> Result<(f64, [f64; 6])> {
    batch.sort_unstable();
    let mut loss = 0.0;
    let mut grad = [0.0; 6];
    let mut ks = Vec::new();
    let mut start = 0;
    while start < batch.len() {
        let idx = batch[start].0;
        ks.clear();
        let mut end = start;
        while end < batch.len() && batch[end].0 == idx {
            ks.push(batch[end].1);
            end += 1;
        }
        let (v, g) = query_terms(obs, l, noise, idx, Some(&ks))?;
        loss += v;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        start = end;
    }
    let n = batch.len() as f64;
    Ok((loss / n, grad.map(|g| g / n)))
}

// ---------------------------------------------------------------------------
// Rabi curves

#[derive(Clone, Debug, PartialEq)]
pub struct RabiCurve {
    pub meas: Measurement,
    pub prep: Preparation,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Shots behind each value; zero marks a point without data.
    pub shots: Vec<usize>,
}

impl RabiCurve {
    pub fn new(meas: Measurement, prep: Preparation, times: Vec<f64>, values: Vec<f64>, shots: Vec<usize>) -> Self {
        Self { meas, prep, times, values, shots }
    }
}

/// The six curves of a query space, indexed by `2 * meas + prep`.
#[derive(Clone, Debug, PartialEq)]
pub struct RabiCurves {
    pub dt: f64,
    pub curves: Vec<RabiCurve>,
}

impl RabiCurves {
    pub fn get(&self, m: Measurement, u: Preparation) -> &RabiCurve {
        &self.curves[2 * m.index() + u.block()]
    }

    pub fn block(&self, block: usize) -> [&RabiCurve; 3] {
        let u = Preparation::ALL[block];
        Measurement::ALL.map(|m| self.get(m, u))
    }
}

/// Bounded maximizer over `q` in [-1, 1] of `sum log((1+q) f0 + (1-q) f1)`.
fn signal_rabi_mle(dens: &[(f64, f64)]) -> f64 {
    let slope = |q: f64| -> f64 {
        dens.iter()
            .map(|&(f0, f1)| (f0 - f1) / ((1.0 + q) * f0 + (1.0 - q) * f1).max(LOG_FLOOR))
            .sum()
    };
    if slope(1.0) >= 0.0 {
        return 1.0;
    }
    if slope(-1.0) <= 0.0 {
        return -1.0;
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn rabi_value(obs: &Observations, idx: usize) -> Result<f64> {
    match &obs.readout {
        ReadoutModel::BitFlip { r0, r1 } => {
            let n = (obs.zeros[idx] + obs.ones[idx]) as f64;
            rabi_readout_correction(obs.zeros[idx] as f64 / n, *r0, *r1)
        }
        ReadoutModel::GaussianSignal(_) => Ok(signal_rabi_mle(&obs.signals[idx])),
    }
}

/// Curves over the whole space; queries without shots get value 0 and weight 0.
pub fn rabi_curves(obs: &Observations) -> Result<RabiCurves> {
    let space = &obs.space;
    let mut curves = Vec::with_capacity(6);
    for m in Measurement::ALL {
        for u in Preparation::ALL {
            let mut values = Vec::with_capacity(space.n_times());
            let mut shots = Vec::with_capacity(space.n_times());
            for k in 0..space.n_times() {
                let idx = 6 * k + 2 * m.index() + u.block();
                let n = obs.n_shots(idx);
                values.push(if n > 0 { rabi_value(obs, idx)? } else { 0.0 });
                shots.push(n);
            }
            curves.push(RabiCurve::new(m, u, space.times().to_vec(), values, shots));
        }
    }
    Ok(RabiCurves { dt: space.dt(), curves })
}

/// Rabi curves requiring at least one shot at every query.
pub fn rabi_from_data(obs: &Observations) -> Result<RabiCurves> {
    if let Some(idx) = (0..obs.space.len()).find(|&i| obs.n_shots(i) == 0) {
        return Err(Error::MissingData(format!("query {} has no shots", obs.space.query(idx))));
    }
    rabi_curves(obs)
}

// ---------------------------------------------------------------------------
// frequency estimation

/// Weighted least squares of `v` on `(cos 2wt, sin 2wt, 1)`; returns the
/// coefficients and the residual sum of squares.
fn fit_coeffs(c: &RabiCurve, omega: f64) -> Option<([f64; 3], f64)> {
    let mut m = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for k in 0..c.times.len() {
        let w = c.shots[k] as f64;
        if w == 0.0 {
            continue;
        }
        let (s, co) = (2.0 * omega * c.times[k]).sin_cos();
        let basis = Vector3::new(co, s, 1.0);
        m += basis * basis.transpose() * w;
        rhs += basis * (w * c.values[k]);
    }
    let scale = m.trace().max(f64::MIN_POSITIVE);
    let coef = (m + Matrix3::identity() * (1e-12 * scale)).cholesky()?.solve(&rhs);
    let coef = [coef[0], coef[1], coef[2]];
    Some((coef, residual(c, omega, &coef)))
}

fn residual(c: &RabiCurve, omega: f64, coef: &[f64; 3]) -> f64 {
    (0..c.times.len())
        .map(|k| {
            let (s, co) = (2.0 * omega * c.times[k]).sin_cos();
            let r = c.values[k] - coef[0] * co - coef[1] * s - coef[2];
            c.shots[k] as f64 * r * r
        })
        .sum()
}

fn joint_residual(curves: &[&RabiCurve], omega: f64) -> f64 {
    curves
        .iter()
        .map(|c| fit_coeffs(c, omega).map_or(f64::INFINITY, |(_, r)| r))
        .sum()
}

/// Shared oscillation frequency of a set of curves.
pub fn estimate_frequency(curves: &[&RabiCurve], dt: f64) -> Result<f64> {
    let mut t_lo = f64::INFINITY;
    let mut t_hi = f64::NEG_INFINITY;
    let mut peak: f64 = 0.0;
    for c in curves {
        let pts = c.shots.iter().filter(|&&n| n > 0).count();
        if pts < 8 {
            return Err(Error::MissingData(format!("curve has {pts} sampled times, at least 8 are needed")));
        }
        for k in 0..c.times.len() {
            if c.shots[k] > 0 {
                t_lo = t_lo.min(c.times[k]);
                t_hi = t_hi.max(c.times[k]);
                peak = peak.max(c.values[k].abs());
            }
        }
    }
    if peak < 0.05 {
        return Err(Error::WeakSignal(peak));
    }
    let bin = PI / (t_hi - t_lo + dt);
    let limit = PI / (2.0 * dt);
    let mut best = (f64::INFINITY, bin / 8.0);
    let mut omega = bin / 8.0;
    while omega < limit {
        let e = joint_residual(curves, omega);
        if e < best.0 {
            best = (e, omega);
        }
        omega += bin / 8.0;
    }
    let (lo, hi) = ((best.1 - bin).max(bin / 64.0), (best.1 + bin).min(limit));
    let mut omega = lo;
    while omega <= hi {
        let e = joint_residual(curves, omega);
        if e < best.0 {
            best = (e, omega);
        }
        omega += bin / 64.0;
    }
    let (w, e) = golden_section(|w| joint_residual(curves, w), best.1 - bin / 64.0, best.1 + bin / 64.0, 1e-9 * best.1);
    Ok(if e <= best.0 { w } else { best.1 })
}

/// Frequency estimates `(omega0, omega1)`; curves of `U_j` estimate `omega_j`.
pub fn estimate_frequencies(curves: &RabiCurves) -> Result<[f64; 2]> {
    Ok([estimate_frequency(&curves.block(0), curves.dt)?, estimate_frequency(&curves.block(1), curves.dt)?])
}

// ---------------------------------------------------------------------------
// regression initialization

/// `(cos 2u, sin 2u, 1)` coefficients of the closed-form Rabi curves.
fn model_coeffs(m: Measurement, delta: f64, phi: f64) -> [f64; 3] {
    let (sd, cd) = delta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let h = sd * cd;
    match m {
        Measurement::X => [-h * cp, sp * cd, h * cp],
        Measurement::Y => [-h * sp, -cp * cd, h * sp],
        Measurement::Z => [cd * cd, 0.0, sd * sd],
    }
}

fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitEstimate {
    pub lambda: LambdaParams,
    /// Blocks whose coefficient system was inconsistent and fell back to `delta = phi = 0`.
    pub fallback: [bool; 2],
}

fn curve_error(curves: &[&RabiCurve; 3], b: &BlockParams) -> (f64, [f64; 3]) {
    let mut e = 0.0;
    let mut g = [0.0; 3];
    for c in curves {
        for k in 0..c.times.len() {
            let w = c.shots[k] as f64;
            if w == 0.0 {
                continue;
            }
            let t = c.times[k];
            let r = rabi_terms(b, c.meas, b.omega * t);
            let d = c.values[k] - r.value;
            e += w * d * d;
            g[0] -= 2.0 * w * d * r.d_phase * t;
            g[1] -= 2.0 * w * d * r.d_delta;
            g[2] -= 2.0 * w * d * r.d_phi;
        }
    }
    (e, g)
}

fn init_block(curves: &[&RabiCurve; 3], omega: f64) -> (BlockParams, bool) {
    let fits: Vec<Option<[f64; 3]>> = curves.iter().map(|c| fit_coeffs(c, omega).map(|f| f.0)).collect();
    let fallback = BlockParams { omega, delta: 0.0, phi: 0.0 };
    let (Some(x), Some(y), Some(z)) = (fits[0], fits[1], fits[2]) else {
        return (fallback, true);
    };
    let sin2 = (0.5 * (z[2] + 1.0 - z[0])).clamp(0.0, 1.0);
    let delta_abs = sin2.sqrt().asin();
    let phi = x[1].atan2(-y[1]);
    if !phi.is_finite() || !delta_abs.is_finite() || x[1].hypot(y[1]) < 1e-9 {
        return (fallback, true);
    }
    let mut best: Option<(f64, BlockParams)> = None;
    for delta in [delta_abs, -delta_abs] {
        for ph in [phi, -phi] {
            let b = BlockParams { omega, delta, phi: ph };
            let e: f64 = curves
                .iter()
                .map(|c| residual(c, omega, &model_coeffs(c.meas, delta, ph)))
                .sum();
            let better = match &best {
                None => true,
                Some((eb, bb)) => e < eb * (1.0 - 1e-12) || (e <= eb * (1.0 + 1e-12) && ph.abs() < bb.phi.abs()),
            };
            if better {
                best = Some((e, b));
            }
        }
    }
    let start = best.expect("four branches scored").1;
    let x0 = [start.omega / XI, start.delta, start.phi];
    let bounds = Bounds::new(vec![0.0, -FRAC_PI_2, f64::NEG_INFINITY], vec![f64::INFINITY, FRAC_PI_2, f64::INFINITY]);
    let refined = lbfgsb(
        |x| {
            let b = BlockParams { omega: x[0] * XI, delta: x[1], phi: x[2] };
            let (e, g) = curve_error(curves, &b);
            Some((e, vec![g[0] * XI, g[1], g[2]]))
        },
        &x0,
        &bounds,
        &LbfgsbConfig { max_iter: 200, ..Default::default() },
    );
    let out = match refined {
        Some(m) if m.value.is_finite() => BlockParams { omega: m.x[0] * XI, delta: m.x[1], phi: wrap_angle(m.x[2]) },
        _ => start,
    };
    (out, false)
}

/// Regression of the curves on the closed forms at the given frequencies,
/// followed by joint descent on the squared residual per block.
pub fn init_estimate(curves: &RabiCurves, omegas: [f64; 2]) -> Result<InitEstimate> {
    let mut blocks = Vec::with_capacity(2);
    let mut fallback = [false; 2];
    for b in 0..2 {
        if !(omegas[b] > 0.0) {
            return Err(Error::Domain(format!("frequency estimate {} must be positive", omegas[b])));
        }
        let (p, fb) = init_block(&curves.block(b), omegas[b]);
        blocks.push(p);
        fallback[b] = fb;
    }
    let lambda = LambdaParams::from_array([
        blocks[0].omega,
        blocks[0].delta,
        blocks[0].phi,
        blocks[1].omega,
        blocks[1].delta,
        blocks[1].phi,
    ]);
    Ok(InitEstimate { lambda, fallback })
}

/// Rabi curves, frequencies and regression without a likelihood solve.
pub fn baseline_estimate(obs: &Observations) -> Result<LambdaParams> {
    let curves = rabi_curves(obs)?;
    let omegas = estimate_frequencies(&curves)?;
    Ok(init_estimate(&curves, omegas)?.lambda)
}

// ---------------------------------------------------------------------------
// maximum likelihood

#[derive(Clone, Debug)]
pub struct EstimatorConfig {
    /// Stochastic descent in scaled Lambda.
    pub lambda_stage: bool,
    /// Stochastic descent in scaled J.
    pub j_stage: bool,
    /// Bounded quasi-Newton refinement in scaled J (or masked Lambda).
    pub quasi_newton_stage: bool,
    pub step0: f64,
    /// Shot count at which the step equals `step0`; it scales as `1/sqrt(N)`.
    pub step_reference_shots: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_tol: f64,
    pub quasi_newton: LbfgsbConfig,
    /// Components being estimated; the rest stay at their initial values.
    pub mask: ParamMask,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            lambda_stage: true,
            j_stage: true,
            quasi_newton_stage: true,
            step0: 1e-3,
            step_reference_shots: 2430,
            batch_size: 256,
            max_epochs: 50,
            plateau_tol: 1e-7,
            quasi_newton: LbfgsbConfig { memory: 10, max_iter: 300, pg_tol: 1e-8, f_tol: 1e-13 },
            mask: ParamMask::full(),
        }
    }
}

impl EstimatorConfig {
    /// Only the quasi-Newton stage, for warm starts.
    pub fn refine_only(&self) -> Self {
        Self { lambda_stage: false, j_stage: false, quasi_newton_stage: true, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step0 > 0.0 && self.plateau_tol > 0.0 && self.quasi_newton.pg_tol > 0.0) {
            return Err(Error::Config("step sizes and tolerances must be positive".into()));
        }
        if self.batch_size == 0 || self.step_reference_shots == 0 {
            return Err(Error::Config("batch size and reference shot count must be positive".into()));
        }
        Ok(())
    }

    pub fn step_for(&self, n_shots: usize) -> f64 {
        self.step0 * (self.step_reference_shots as f64 / n_shots.max(1) as f64).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct MleOutput {
    pub lambda: LambdaParams,
    pub loss: f64,
    pub init_loss: f64,
    /// Best loss after each enabled stage.
    pub stage_losses: Vec<f64>,
}

/// A coordinate chart for the optimizer.
trait Chart {
    fn to_lambda(&self, x: &[f64]) -> LambdaParams;
    fn pull_back(&self, x: &[f64], g: &[f64; 6]) -> Option<Vec<f64>>;
    fn bounds(&self) -> Bounds;
    fn project(&self, x: &mut [f64]);
}

/// Masked Lambda with frequencies divided by `XI`.
struct LambdaChart {
    base: [f64; 6],
    mask: Vec<usize>,
    omega_max: f64,
}

impl LambdaChart {
    fn scale(i: usize) -> f64 {
        if i.is_multiple_of(3) {
            XI
        } else {
            1.0
        }
    }

    fn encode(&self, l: &LambdaParams) -> Vec<f64> {
        let a = l.to_array();
        self.mask.iter().map(|&i| a[i] / Self::scale(i)).collect()
    }
}

impl Chart for LambdaChart {
    fn to_lambda(&self, x: &[f64]) -> LambdaParams {
        let mut a = self.base;
        for (v, &i) in x.iter().zip(&self.mask) {
            a[i] = v * Self::scale(i);
        }
        for b in 0..2 {
            a[3 * b + 2] = wrap_angle(a[3 * b + 2]);
        }
        LambdaParams::from_array(a)
    }

    fn pull_back(&self, _x: &[f64], g: &[f64; 6]) -> Option<Vec<f64>> {
        Some(self.mask.iter().map(|&i| g[i] * Self::scale(i)).collect())
    }

    fn bounds(&self) -> Bounds {
        let (lo, hi) = self
            .mask
            .iter()
            .map(|&i| match i % 3 {
                0 => (0.0, self.omega_max / XI),
                1 => (-FRAC_PI_2, FRAC_PI_2),
                _ => (f64::NEG_INFINITY, f64::INFINITY),
            })
            .unzip();
        Bounds::new(lo, hi)
    }

    fn project(&self, x: &mut [f64]) {
        self.bounds().project(x);
        for (v, &i) in x.iter_mut().zip(&self.mask) {
            if i % 3 == 2 {
                *v = wrap_angle(*v);
            }
        }
    }
}

/// J divided by `XI`, boxed so that both block frequencies stay below `omega_max`.
struct JChart {
    limit: f64,
}

impl JChart {
    fn new(omega_max: f64) -> Self {
        Self { limit: omega_max / (2.0 * 3f64.sqrt() * XI) }
    }

    fn encode(&self, l: &LambdaParams) -> Vec<f64> {
        lambda_to_j(l).to_array().iter().map(|v| (v / XI).clamp(-self.limit, self.limit)).collect()
    }
}

impl Chart for JChart {
    fn to_lambda(&self, x: &[f64]) -> LambdaParams {
        let mut a = [0.0; 6];
        a.iter_mut().zip(x).for_each(|(o, v)| *o = v * XI);
        j_to_lambda(&JParams::from_array(a))
    }

    fn pull_back(&self, x: &[f64], g: &[f64; 6]) -> Option<Vec<f64>> {
        let mut a = [0.0; 6];
        a.iter_mut().zip(x).for_each(|(o, v)| *o = v * XI);
        let d = jacobian_lambda_j(&JParams::from_array(a)).ok()?;
        Some((0..6).map(|i| XI * (0..6).map(|k| d[(i, k)] * g[k]).sum::<f64>()).collect())
    }

    fn bounds(&self) -> Bounds {
        Bounds::new(vec![-self.limit; 6], vec![self.limit; 6])
    }

    fn project(&self, x: &mut [f64]) {
        self.bounds().project(x);
    }
}

struct Tracker {
    loss: f64,
    lambda: LambdaParams,
}

impl Tracker {
    fn offer(&mut self, loss: f64, lambda: LambdaParams) {
        if loss < self.loss {
            self.loss = loss;
            self.lambda = lambda;
        }
    }
}

fn adam_stage(
    obs: &Observations,
    noise: &NoiseModel,
    chart: &dyn Chart,
    x0: Vec<f64>,
    cfg: &EstimatorConfig,
    rng: &mut RngStream,
    best: &mut Tracker,
) -> Result<()> {
    let mut order: Vec<(usize, usize)> = (0..obs.space.len())
        .flat_map(|i| (0..obs.n_shots(i)).map(move |k| (i, k)))
        .collect();
    let mut x = x0;
    let mut adam = Adam::new(x.len(), AdamConfig { step: cfg.step_for(obs.total), ..Default::default() });
    let mut prev = f64::INFINITY;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.max_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend_from_slice(chunk);
            let l = chart.to_lambda(&x);
            let Ok((_, g)) = batch_loss(obs, &l, noise, &mut batch) else { continue };
            let Some(gx) = chart.pull_back(&x, &g) else { continue };
            if gx.iter().all(|v| v.is_finite()) {
                adam.step(&mut x, &gx);
                chart.project(&mut x);
            }
        }
        let l = chart.to_lambda(&x);
        let Ok(full) = negative_log_likelihood(obs, &l, noise) else { break };
        best.offer(full, l);
        if (prev - full).abs() <= cfg.plateau_tol * full.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        prev = full;
    }
    Ok(())
}

fn quasi_newton_stage(obs: &Observations, noise: &NoiseModel, chart: &dyn Chart, x0: Vec<f64>, cfg: &EstimatorConfig, best: &mut Tracker) {
    let result = lbfgsb(
        |x| {
            let l = chart.to_lambda(x);
            let (v, g) = nll_with_gradient(obs, &l, noise).ok()?;
            Some((v, chart.pull_back(x, &g)?))
        },
        &x0,
        &chart.bounds(),
        &cfg.quasi_newton,
    );
    if let Some(m) = result {
        best.offer(m.value, chart.to_lambda(&m.x));
    }
}

/// Staged maximum-likelihood estimate starting from `init`.
pub fn mle(obs: &Observations, noise: &NoiseModel, init: &LambdaParams, cfg: &EstimatorConfig, rng: &mut RngStream) -> Result<MleOutput> {
    cfg.validate()?;
    let omega_max = obs.space.omega_max();
    if !init.in_bounds(Some(omega_max)) {
        return Err(Error::Domain(format!("initial estimate {init:?} outside the parameter box")));
    }
    let init_loss = negative_log_likelihood(obs, init, noise)?;
    let mut best = Tracker { loss: init_loss, lambda: *init };
    let mut stage_losses = Vec::new();
    let lambda_chart = LambdaChart { base: init.to_array(), mask: cfg.mask.indices().to_vec(), omega_max };
    if cfg.lambda_stage {
        adam_stage(obs, noise, &lambda_chart, lambda_chart.encode(init), cfg, rng, &mut best)?;
        stage_losses.push(best.loss);
    }
    if cfg.mask.is_full() {
        let chart = JChart::new(omega_max);
        if cfg.j_stage {
            adam_stage(obs, noise, &chart, chart.encode(&best.lambda), cfg, rng, &mut best)?;
            stage_losses.push(best.loss);
        }
        if cfg.quasi_newton_stage {
            let start = chart.encode(&best.lambda);
            quasi_newton_stage(obs, noise, &chart, start, cfg, &mut best);
            // the J chart is singular where a block has no transverse drive
            let lc = LambdaChart { base: best.lambda.to_array(), ..lambda_chart };
            quasi_newton_stage(obs, noise, &lc, lc.encode(&best.lambda), cfg, &mut best);
            stage_losses.push(best.loss);
        }
    } else if cfg.quasi_newton_stage {
        quasi_newton_stage(obs, noise, &lambda_chart, lambda_chart.encode(&best.lambda), cfg, &mut best);
        stage_losses.push(best.loss);
    }
    Ok(MleOutput { lambda: best.lambda, loss: best.loss, init_loss, stage_losses })
}

// ---------------------------------------------------------------------------
// shot-noise bootstrap

#[derive(Clone, Debug)]
pub struct BootstrapSummary {
    pub samples: Vec<[f64; 2]>,
    /// Mean and standard deviation of `ln omega_j` over realizations.
    pub log_mean: [f64; 2],
    pub log_std: [f64; 2],
}

impl BootstrapSummary {
    /// Central interval of the fitted log-normal with two-sided mass `1 - alpha`.
    pub fn interval(&self, block: usize, z: f64) -> (f64, f64) {
        let (m, s) = (self.log_mean[block], self.log_std[block]);
        ((m - z * s).exp(), (m + z * s).exp())
    }
}

/// Frequency estimates over binomially resampled Rabi curves.
pub fn bootstrap_rabi(obs: &Observations, n_rep: usize, rng: &mut RngStream) -> Result<BootstrapSummary> {
    if n_rep < 2 {
        return Err(Error::Config("bootstrap needs at least two realizations".into()));
    }
    let base = rabi_curves(obs)?;
    let (r0, r1) = match obs.readout {
        ReadoutModel::BitFlip { r0, r1 } => (r0, r1),
        ReadoutModel::GaussianSignal(_) => (0.0, 0.0),
    };
    let mut samples = Vec::with_capacity(n_rep);
    for _ in 0..n_rep {
        let mut curves = base.clone();
        for c in curves.curves.iter_mut() {
            for k in 0..c.times.len() {
                let n = c.shots[k];
                if n == 0 {
                    continue;
                }
                // outcome-0 frequency implied by the point, before correction
                let p0 = (r1 + (1.0 - r0 - r1) * 0.5 * (1.0 + c.values[k])).clamp(0.0, 1.0);
                let draw = Binomial::new(n as u64, p0).map_err(|e| Error::Domain(e.to_string()))?.sample(rng);
                c.values[k] = rabi_readout_correction(draw as f64 / n as f64, r0, r1)?;
            }
        }
        samples.push(estimate_frequencies(&curves)?);
    }
    let mut log_mean = [0.0; 2];
    let mut log_std = [0.0; 2];
    for b in 0..2 {
        let logs: Vec<f64> = samples.iter().map(|s| s[b].ln()).collect();
        let m = logs.iter().sum::<f64>() / logs.len() as f64;
        let v = logs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (logs.len() - 1) as f64;
        log_mean[b] = m;
        log_std[b] = v.sqrt();
    }
    Ok(BootstrapSummary { samples, log_mean, log_std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rabi_model;
    use crate::space::{GrowthPolicy, QuerySpace};

    fn synthetic(l: &LambdaParams, space: &QuerySpace) -> RabiCurves {
        let mut curves = Vec::new();
        for m in Measurement::ALL {
            for u in Preparation::ALL {
                let values = space.times().iter().map(|&t| rabi_model(l, m, u, t)).collect();
                curves.push(RabiCurve::new(m, u, space.times().to_vec(), values, vec![1; space.n_times()]));
            }
        }
        RabiCurves { dt: space.dt(), curves }
    }

    #[test]
    fn single_cosine_frequency() {
        let space = QuerySpace::default_grid(GrowthPolicy::Fixed);
        let omega = 1.94e6;
        let values: Vec<f64> = space.times().iter().map(|t| (2.0 * omega * t).cos()).collect();
        let c = RabiCurve::new(Measurement::Z, Preparation::U0, space.times().to_vec(), values, vec![1; 81]);
        let w = estimate_frequency(&[&c], space.dt()).unwrap();
        assert!((w / omega - 1.0).abs() < 5e-3, "{w}");
    }

    #[test]
    fn flat_curve_is_weak() {
        let c = RabiCurve::new(Measurement::Z, Preparation::U0, (0..20).map(|k| 1e-7 + k as f64 * 1e-8).collect(), vec![0.0; 20], vec![3; 20]);
        assert!(matches!(estimate_frequency(&[&c], 1e-8), Err(Error::WeakSignal(_))));
    }

    #[test]
    fn init_recovers_noiseless_parameters() {
        let l = LambdaParams::from_array([1.94e6, 0.06, -0.15, 11.45e6, -0.06, 2.9]);
        let space = QuerySpace::default_grid(GrowthPolicy::Fixed);
        let curves = synthetic(&l, &space);
        let w = estimate_frequencies(&curves).unwrap();
        let est = init_estimate(&curves, w).unwrap();
        for (a, b) in est.lambda.to_array().iter().zip(l.to_array()) {
            assert!((a - b).abs() <= 0.05 * b.abs(), "{:?}", est.lambda);
        }
    }

    #[test]
    fn zero_delta_block() {
        let l = LambdaParams::from_array([3e6, 0.0, 0.0, 5e6, 0.0, 0.0]);
        let space = QuerySpace::default_grid(GrowthPolicy::Fixed);
        let curves = synthetic(&l, &space);
        let z = fit_coeffs(curves.get(Measurement::Z, Preparation::U0), 3e6).unwrap().0;
        assert!(z[2].abs() < 1e-9);
        let est = init_estimate(&curves, [3e6, 5e6]).unwrap();
        assert!(est.lambda.delta0.abs() < 1e-3);
        assert!(est.lambda.phi0.abs() < 1e-3);
    }

    #[test]
    fn signal_rabi_extremes() {
        assert_eq!(signal_rabi_mle(&[(1.0, 0.0), (0.5, 0.0)]), 1.0);
        assert_eq!(signal_rabi_mle(&[(0.0, 1.0)]), -1.0);
        let q = signal_rabi_mle(&[(1.0, 0.2), (0.2, 1.0)]);
        assert!(q.abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
    }
}
