//! Readout, pulse-shape and decoherence models and the composite noisy likelihood.

use crate::error::{Error, Result};
use crate::model::{p0_at_phase, rabi_terms, LambdaParams, Preparation, Query};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

/// Class-conditional bivariate normal readout signals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianReadout {
    /// Mean signal for hidden outcome 0, as (re, im).
    pub mean0: [f64; 2],
    pub mean1: [f64; 2],
    pub cov0: [[f64; 2]; 2],
    pub cov1: [[f64; 2]; 2],
}

impl GaussianReadout {
    pub fn new(mean0: [f64; 2], mean1: [f64; 2], cov0: [[f64; 2]; 2], cov1: [[f64; 2]; 2]) -> Result<Self> {
        let g = Self { mean0, mean1, cov0, cov1 };
        g.validate()?;
        Ok(g)
    }

    /// Means at +1 and -1 with isotropic covariances sized so that the sign
    /// classifier on the real part misreads class `y` with probability `r_y`.
    pub fn matching_flip_rates(r0: f64, r1: f64) -> Result<Self> {
        if !(r0 > 0.0 && r1 > 0.0 && r0 < 0.5 && r1 < 0.5) {
            return Err(Error::Config(format!(
                "gaussian readout needs flip rates in (0, 0.5), got ({r0}, {r1})"
            )));
        }
        let sigma = |r: f64| 1.0 / (std::f64::consts::SQRT_2 * erfc_inv(2.0 * r));
        let iso = |s: f64| [[s * s, 0.0], [0.0, s * s]];
        Self::new([1.0, 0.0], [-1.0, 0.0], iso(sigma(r0)), iso(sigma(r1)))
    }

    fn validate(&self) -> Result<()> {
        for cov in [&self.cov0, &self.cov1] {
            let sym = (cov[0][1] - cov[1][0]).abs() <= 1e-12 * (cov[0][0].abs() + cov[1][1].abs());
            let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
            if !sym || cov[0][0] <= 0.0 || det <= 0.0 {
                return Err(Error::Config("readout covariance must be symmetric positive definite".into()));
            }
        }
        if self.mean0 == self.mean1 {
            return Err(Error::Config("readout class means must differ".into()));
        }
        Ok(())
    }

    pub fn mean(&self, y: u8) -> [f64; 2] {
        if y == 0 {
            self.mean0
        } else {
            self.mean1
        }
    }

    pub fn cov(&self, y: u8) -> [[f64; 2]; 2] {
        if y == 0 {
            self.cov0
        } else {
            self.cov1
        }
    }

    pub fn density(&self, c: Complex64, y: u8) -> f64 {
        let m = self.mean(y);
        let s = self.cov(y);
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let (dx, dy) = (c.re - m[0], c.im - m[1]);
        let quad = (s[1][1] * dx * dx - 2.0 * s[0][1] * dx * dy + s[0][0] * dy * dy) / det;
        (-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
    }

    /// Misclassification rates of the midpoint linear classifier between the two means.
    pub fn flip_rates(&self) -> (f64, f64) {
        let d = [self.mean0[0] - self.mean1[0], self.mean0[1] - self.mean1[1]];
        let norm = d[0].hypot(d[1]);
        let u = [d[0] / norm, d[1] / norm];
        let rate = |s: [[f64; 2]; 2]| {
            let var = u[0] * u[0] * s[0][0] + 2.0 * u[0] * u[1] * s[0][1] + u[1] * u[1] * s[1][1];
            0.5 * erfc(0.5 * norm / var.sqrt() / std::f64::consts::SQRT_2)
        };
        (rate(self.cov0), rate(self.cov1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ReadoutModel {
    /// `r0 = p(read 1 | hidden 0)`, `r1 = p(read 0 | hidden 1)`.
    BitFlip { r0: f64, r1: f64 },
    GaussianSignal(GaussianReadout),
}

impl ReadoutModel {
    pub fn bit_flip(r0: f64, r1: f64) -> Result<Self> {
        let m = ReadoutModel::BitFlip { r0, r1 };
        m.validate()?;
        Ok(m)
    }

    pub fn ideal() -> Self {
        ReadoutModel::BitFlip { r0: 0.0, r1: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ReadoutModel::BitFlip { r0, r1 } => {
                if !(*r0 >= 0.0 && *r1 >= 0.0 && r0 + r1 < 1.0) {
                    return Err(Error::Config(format!("invalid flip rates ({r0}, {r1})")));
                }
                Ok(())
            }
            ReadoutModel::GaussianSignal(g) => g.validate(),
        }
    }

    /// Effective bit-flip rates; for signal readout those of the midpoint classifier.
    pub fn flip_rates(&self) -> (f64, f64) {
        match self {
            ReadoutModel::BitFlip { r0, r1 } => (*r0, *r1),
            ReadoutModel::GaussianSignal(g) => g.flip_rates(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ReadoutModel::BitFlip { .. } => "bit",
            ReadoutModel::GaussianSignal(_) => "signal",
        }
    }
}

/// Bivariate normal density of a readout signal under class `y`.
pub fn signal_density(r: &ReadoutModel, c: Complex64, y: u8) -> Result<f64> {
    match r {
        ReadoutModel::GaussianSignal(g) => Ok(g.density(c, y)),
        ReadoutModel::BitFlip { .. } => Err(Error::ModelKind { expected: "gaussian-signal" }),
    }
}

/// Inverts the bit-flip channel on an observed frequency of outcome 0.
/// The result is not clamped to [-1, 1].
pub fn rabi_readout_correction(p_hat0: f64, r0: f64, r1: f64) -> Result<f64> {
    let denom = 1.0 - r0 - r1;
    if denom <= 0.0 {
        return Err(Error::Domain(format!("r0 + r1 = {} must be below 1", r0 + r1)));
    }
    let p_hat1 = 1.0 - p_hat0;
    Ok((p_hat0 * (1.0 + r0 - r1) - p_hat1 * (1.0 - r0 + r1)) / denom)
}

/// First-order pulse-edge model: the effective evolution time is `t + a/(omega + b omega^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseShapeModel {
    pub a: f64,
    pub b: f64,
}

impl PulseShapeModel {
    pub fn none() -> Self {
        Self { a: 0.0, b: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0 && self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::Config(format!("pulse model needs a, b >= 0, got ({}, {})", self.a, self.b)));
        }
        Ok(())
    }

    /// `omega * delta_t_eff(omega)` and its derivative in omega; zero at omega = 0.
    pub(crate) fn phase_shift(&self, omega: f64) -> (f64, f64) {
        if self.a == 0.0 || omega <= 0.0 {
            return (0.0, 0.0);
        }
        let den = 1.0 + self.b * omega;
        (self.a / den, -self.a * self.b / (den * den))
    }
}

pub fn delta_t_eff(p: &PulseShapeModel, omega_j: f64) -> Result<f64> {
    if omega_j <= 0.0 || omega_j.is_nan() {
        return Err(Error::Domain(format!("delta_t_eff needs omega > 0, got {omega_j}")));
    }
    Ok(p.a / (omega_j + p.b * omega_j * omega_j))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum DecoherenceModel {
    None,
    SingleParam { mu: f64, t0: f64 },
    TwoParam { mu_u0: f64, mu_u1: f64, t0: f64 },
    TwoQubit { t1_ctrl: f64, t2_ctrl: f64, t1_tgt: f64, t2_tgt: f64 },
}

impl DecoherenceModel {
    pub fn two_qubit(t1_ctrl: f64, t2_ctrl: f64, t1_tgt: f64, t2_tgt: f64) -> Result<Self> {
        let d = DecoherenceModel::TwoQubit { t1_ctrl, t2_ctrl, t1_tgt, t2_tgt };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        match *self {
            DecoherenceModel::None => Ok(()),
            DecoherenceModel::SingleParam { mu, t0 } => {
                if pos(mu) && t0 >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!("invalid decoherence time mu = {mu}, t0 = {t0}")))
                }
            }
            DecoherenceModel::TwoParam { mu_u0, mu_u1, t0 } => {
                if pos(mu_u0) && pos(mu_u1) && t0 >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config("invalid two-parameter decoherence times".into()))
                }
            }
            DecoherenceModel::TwoQubit { t1_ctrl, t2_ctrl, t1_tgt, t2_tgt } => {
                for (t1, t2) in [(t1_ctrl, t2_ctrl), (t1_tgt, t2_tgt)] {
                    if !(pos(t1) && pos(t2)) {
                        return Err(Error::Config("T1 and T2 must be positive".into()));
                    }
                    if t2 > 2.0 * t1 {
                        return Err(Error::Config(format!("T2 = {t2} exceeds 2 T1 = {}", 2.0 * t1)));
                    }
                }
                Ok(())
            }
        }
    }

    /// Smallest relaxation time of the model, if it has one.
    pub fn min_time(&self) -> Option<f64> {
        match *self {
            DecoherenceModel::None => None,
            DecoherenceModel::SingleParam { mu, .. } => Some(mu),
            DecoherenceModel::TwoParam { mu_u0, mu_u1, .. } => Some(mu_u0.min(mu_u1)),
            DecoherenceModel::TwoQubit { t1_ctrl, t2_ctrl, t1_tgt, t2_tgt } => {
                Some(t1_ctrl.min(t2_ctrl).min(t1_tgt).min(t2_tgt))
            }
        }
    }
}

/// Damping parameters `(gamma_a, gamma_p)` of one qubit after time `t`.
pub fn damping_gammas(t1: f64, t2: f64, t: f64) -> (f64, f64) {
    let rate_a = 1.0 / (2.0 * t1);
    let rate_p = 1.0 / t2 - 1.0 / (2.0 * t1);
    (-(-t * rate_a).exp_m1(), -(-t * rate_p).exp_m1())
}

/// Unitarity of amplitude damping followed by phase damping on each of two qubits.
pub fn two_qubit_unitarity(ga1: f64, gp1: f64, ga2: f64, gp2: f64) -> f64 {
    // squared Pauli-transfer entries of one qubit, all and first-column only
    let full = |ga: f64, gp: f64| 1.0 + 2.0 * (1.0 - ga) * (1.0 - gp) + (1.0 - ga) * (1.0 - ga) + ga * ga;
    let first_col = |ga: f64| 1.0 + ga * ga;
    (full(ga1, gp1) * full(ga2, gp2) - first_col(ga1) * first_col(ga2)) / 15.0
}

/// Depolarizing probability `p_d(t)`; `prep` matters only for the two-parameter model.
pub fn depolarization_prob(d: &DecoherenceModel, t: f64, prep: Preparation) -> f64 {
    let p = match *d {
        DecoherenceModel::None => 0.0,
        DecoherenceModel::SingleParam { mu, t0 } => -(-(t - t0).max(0.0) / mu).exp_m1(),
        DecoherenceModel::TwoParam { mu_u0, mu_u1, t0 } => {
            let mu = if prep == Preparation::U0 { mu_u0 } else { mu_u1 };
            -(-(t - t0).max(0.0) / mu).exp_m1()
        }
        DecoherenceModel::TwoQubit { t1_ctrl, t2_ctrl, t1_tgt, t2_tgt } => {
            if t <= 0.0 {
                return 0.0;
            }
            let (ga1, gp1) = damping_gammas(t1_ctrl, t2_ctrl, t);
            let (ga2, gp2) = damping_gammas(t1_tgt, t2_tgt, t);
            1.0 - two_qubit_unitarity(ga1, gp1, ga2, gp2)
        }
    };
    p.clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub readout: ReadoutModel,
    pub pulse: PulseShapeModel,
    pub decoherence: DecoherenceModel,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self { readout: ReadoutModel::ideal(), pulse: PulseShapeModel::none(), decoherence: DecoherenceModel::None }
    }

    pub fn validate(&self) -> Result<()> {
        self.readout.validate()?;
        self.pulse.validate()?;
        self.decoherence.validate()
    }
}

/// Noisy likelihood of outcome 0 with its gradient over the `(omega, delta, phi)`
/// coordinates of the block selected by the query's preparation.
#[derive(Clone, Copy, Debug)]
pub struct LikelihoodGrad {
    pub p: f64,
    pub grad: [f64; 3],
}

/// Pre-readout probability of hidden outcome 0: decoherence and pulse shift only.
pub fn hidden_likelihood(l: &LambdaParams, n: &NoiseModel, q: &Query) -> LikelihoodGrad {
    let b = l.block(q.prep.block());
    let (shift, d_shift) = n.pulse.phase_shift(b.omega);
    let phase = b.omega * q.t + shift;
    let terms = rabi_terms(&b, q.meas, phase);
    let pd = depolarization_prob(&n.decoherence, q.t, q.prep);
    let keep = 0.5 * (1.0 - pd);
    let p0 = p0_at_phase(&b, q.meas, phase);
    LikelihoodGrad {
        p: (1.0 - pd) * p0 + 0.5 * pd,
        grad: [keep * terms.d_phase * (q.t + d_shift), keep * terms.d_delta, keep * terms.d_phi],
    }
}

/// Observed-outcome likelihood `p~(0|q)` and its block gradient.
pub fn noisy_likelihood_grad(l: &LambdaParams, n: &NoiseModel, q: &Query) -> LikelihoodGrad {
    let (r0, r1) = n.readout.flip_rates();
    let h = hidden_likelihood(l, n, q);
    let contract = 1.0 - r0 - r1;
    LikelihoodGrad { p: r1 + contract * h.p, grad: h.grad.map(|g| contract * g) }
}

pub fn noisy_likelihood(l: &LambdaParams, n: &NoiseModel, q: &Query) -> f64 {
    let b = l.block(q.prep.block());
    let (shift, _) = n.pulse.phase_shift(b.omega);
    let p0 = p0_at_phase(&b, q.meas, b.omega * q.t + shift);
    let pd = depolarization_prob(&n.decoherence, q.t, q.prep);
    let (r0, r1) = n.readout.flip_rates();
    (1.0 - pd) * ((1.0 - r0) * p0 + r1 * (1.0 - p0)) + 0.5 * pd * (1.0 - r0 + r1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{likelihood_noiseless, Measurement};

    fn device_d() -> DecoherenceModel {
        DecoherenceModel::two_qubit(94.0e-6, 177.2e-6, 75.7e-6, 128.1e-6).unwrap()
    }

    #[test]
    fn pulse_offset_basics() {
        let p = PulseShapeModel { a: 6.2774, b: 1.5086e-9 };
        assert!(delta_t_eff(&p, 0.0).is_err());
        assert!(delta_t_eff(&p, 4.0e6).unwrap() < delta_t_eff(&p, 2.0e6).unwrap());
        assert_eq!(delta_t_eff(&PulseShapeModel::none(), 3.0e6).unwrap(), 0.0);
    }

    #[test]
    fn depolarization_limits() {
        let d = device_d();
        assert_eq!(depolarization_prob(&d, 0.0, Preparation::U0), 0.0);
        let mut last = 0.0;
        for k in 1..200 {
            let p = depolarization_prob(&d, k as f64 * 5e-6, Preparation::U1);
            assert!(p >= last);
            last = p;
        }
        assert!(depolarization_prob(&d, 1.0, Preparation::U0) > 1.0 - 1e-9);
        let single = DecoherenceModel::SingleParam { mu: 7.75e-5, t0: 1e-7 };
        let p = depolarization_prob(&single, 1e-7 + 7.75e-5, Preparation::U0);
        assert!((p - (1.0 - (-1.0f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn decoherence_validation() {
        assert!(DecoherenceModel::two_qubit(10e-6, 30e-6, 10e-6, 10e-6).is_err());
        assert!(DecoherenceModel::two_qubit(-1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn full_depolarization_limit() {
        let n = NoiseModel {
            readout: ReadoutModel::bit_flip(0.0078, 0.033).unwrap(),
            pulse: PulseShapeModel::none(),
            decoherence: DecoherenceModel::SingleParam { mu: 1e-12, t0: 0.0 },
        };
        let l = LambdaParams::from_array([2e6, 0.1, 0.2, 11e6, -0.1, 2.0]);
        let p = noisy_likelihood(&l, &n, &Query::new(Measurement::X, Preparation::U0, 1.0));
        assert!((p - 0.5 * (1.0 - 0.0078 + 0.033)).abs() < 1e-12);
        assert!((p - 0.5126).abs() < 5e-5);
    }

    #[test]
    fn noiseless_reduces_to_model() {
        let l = LambdaParams::from_array([2e6, 0.1, 0.2, 11e6, -0.1, 2.0]);
        let q = Query::new(Measurement::Y, Preparation::U1, 3.3e-7);
        assert_eq!(noisy_likelihood(&l, &NoiseModel::noiseless(), &q), likelihood_noiseless(&l, &q));
    }

    #[test]
    fn correction_examples() {
        assert!((rabi_readout_correction(0.75, 0.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(rabi_readout_correction(0.5, 0.6, 0.4).is_err());
        let v = rabi_readout_correction(1.0, 0.0078, 0.033).unwrap();
        assert!((v - (1.0 + 0.0078 - 0.033) / (1.0 - 0.0078 - 0.033)).abs() < 1e-12);
        assert!(v > 1.0);
    }

    #[test]
    fn gaussian_readout_matches_rates() {
        let g = GaussianReadout::matching_flip_rates(0.0078, 0.033).unwrap();
        let (r0, r1) = g.flip_rates();
        assert!((r0 - 0.0078).abs() < 1e-10 && (r1 - 0.033).abs() < 1e-10);
        let peak = g.density(Complex64::new(1.0, 0.0), 0);
        let det = g.cov0[0][0] * g.cov0[1][1];
        assert!((peak - 1.0 / (2.0 * std::f64::consts::PI * det.sqrt())).abs() < 1e-12);
        assert!(signal_density(&ReadoutModel::ideal(), Complex64::new(0.0, 0.0), 0).is_err());
    }
}
