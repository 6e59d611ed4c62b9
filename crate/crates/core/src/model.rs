//! Cross-resonance Hamiltonian model: the two parameterizations, the
//! block-diagonal time evolution and the noiseless single-shot likelihoods.

use nalgebra::Matrix4;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

pub type ComplexMatrix4 = Matrix4<Complex64>;

/// Pauli coefficients of `H = sum J_ab sigma_a (x) sigma_b`, control qubit on the left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JParams {
    pub j_ix: f64,
    pub j_iy: f64,
    pub j_iz: f64,
    pub j_zx: f64,
    pub j_zy: f64,
    pub j_zz: f64,
}

impl JParams {
    pub const NAMES: [&'static str; 6] = ["J_IX", "J_IY", "J_IZ", "J_ZX", "J_ZY", "J_ZZ"];

    pub fn from_array(v: [f64; 6]) -> Self {
        Self { j_ix: v[0], j_iy: v[1], j_iz: v[2], j_zx: v[3], j_zy: v[4], j_zz: v[5] }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.j_ix, self.j_iy, self.j_iz, self.j_zx, self.j_zy, self.j_zz]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Diagonal entry `a_j` of block `j`.
    pub fn block_a(&self, block: usize) -> f64 {
        self.j_iz + sign(block) * self.j_zz
    }

    /// Off-diagonal entry `beta_j` of block `j`.
    pub fn block_beta(&self, block: usize) -> Complex64 {
        let s = sign(block);
        Complex64::new(self.j_ix + s * self.j_zx, self.j_iy + s * self.j_zy)
    }
}

fn sign(block: usize) -> f64 {
    if block == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Spectral coordinates of one 2x2 block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockParams {
    pub omega: f64,
    pub delta: f64,
    pub phi: f64,
}

/// Spectral parameterization `(omega0, delta0, phi0, omega1, delta1, phi1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaParams {
    pub omega0: f64,
    pub delta0: f64,
    pub phi0: f64,
    pub omega1: f64,
    pub delta1: f64,
    pub phi1: f64,
}

impl LambdaParams {
    pub const NAMES: [&'static str; 6] = ["omega0", "delta0", "phi0", "omega1", "delta1", "phi1"];
    /// Indices of the two frequencies in the array layout.
    pub const OMEGA_INDICES: [usize; 2] = [0, 3];

    pub fn from_array(v: [f64; 6]) -> Self {
        Self { omega0: v[0], delta0: v[1], phi0: v[2], omega1: v[3], delta1: v[4], phi1: v[5] }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.omega0, self.delta0, self.phi0, self.omega1, self.delta1, self.phi1]
    }

    pub fn block(&self, block: usize) -> BlockParams {
        if block == 0 {
            BlockParams { omega: self.omega0, delta: self.delta0, phi: self.phi0 }
        } else {
            BlockParams { omega: self.omega1, delta: self.delta1, phi: self.phi1 }
        }
    }

    pub fn omega(&self, block: usize) -> f64 {
        self.block(block).omega
    }

    /// Checks the box `omega >= 0`, `|delta| <= pi/2`, `|phi| <= pi` and, if given,
    /// the Nyquist bound `omega <= omega_max`.
    pub fn in_bounds(&self, omega_max: Option<f64>) -> bool {
        let tol = 1e-12;
        [self.block(0), self.block(1)].iter().all(|b| {
            b.omega >= 0.0
                && b.delta.abs() <= std::f64::consts::FRAC_PI_2 + tol
                && b.phi.abs() <= std::f64::consts::PI + tol
                && omega_max.is_none_or(|m| b.omega <= m * (1.0 + tol))
        })
    }
}

/// Nyquist bound `pi / dt` on block frequencies for a grid with spacing `dt`.
pub fn nyquist_omega(dt: f64) -> f64 {
    std::f64::consts::PI / dt
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Measurement {
    X,
    Y,
    Z,
}

impl Measurement {
    pub const ALL: [Measurement; 3] = [Measurement::X, Measurement::Y, Measurement::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Measurement::X => "X",
            Measurement::Y => "Y",
            Measurement::Z => "Z",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "X" => Some(Measurement::X),
            "Y" => Some(Measurement::Y),
            "Z" => Some(Measurement::Z),
            _ => None,
        }
    }
}

/// Preparation `U0 = I (x) I` or `U1 = X (x) I`; selects the Hamiltonian block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preparation {
    U0,
    U1,
}

impl Preparation {
    pub const ALL: [Preparation; 2] = [Preparation::U0, Preparation::U1];

    pub fn block(self) -> usize {
        self as usize
    }

    pub fn from_block(b: usize) -> Option<Self> {
        match b {
            0 => Some(Preparation::U0),
            1 => Some(Preparation::U1),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub meas: Measurement,
    pub prep: Preparation,
    pub t: f64,
}

impl Query {
    pub fn new(meas: Measurement, prep: Preparation, t: f64) -> Self {
        Self { meas, prep, t }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(M{}, U{}, {:.4e} s)", self.meas.label(), self.prep.block(), self.t)
    }
}

pub fn j_to_lambda(j: &JParams) -> LambdaParams {
    let mut out = [0.0; 6];
    for block in 0..2 {
        let a = j.block_a(block);
        let beta = j.block_beta(block);
        let omega = (a * a + beta.norm_sqr()).sqrt();
        let (delta, phi) = if omega == 0.0 {
            (0.0, 0.0)
        } else {
            ((a / omega).clamp(-1.0, 1.0).asin(), beta.arg())
        };
        out[3 * block] = omega;
        out[3 * block + 1] = delta;
        out[3 * block + 2] = phi;
    }
    LambdaParams::from_array(out)
}

pub fn lambda_to_j(l: &LambdaParams) -> JParams {
    let mut a = [0.0; 2];
    let mut beta = [Complex64::new(0.0, 0.0); 2];
    for block in 0..2 {
        let b = l.block(block);
        a[block] = b.omega * b.delta.sin();
        beta[block] = Complex64::from_polar(b.omega * b.delta.cos(), b.phi);
    }
    JParams {
        j_ix: 0.5 * (beta[0].re + beta[1].re),
        j_iy: 0.5 * (beta[0].im + beta[1].im),
        j_iz: 0.5 * (a[0] + a[1]),
        j_zx: 0.5 * (beta[0].re - beta[1].re),
        j_zy: 0.5 * (beta[0].im - beta[1].im),
        j_zz: 0.5 * (a[0] - a[1]),
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Pauli matrices in the order I, X, Y, Z.
pub fn pauli(index: usize) -> nalgebra::Matrix2<Complex64> {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    match index {
        0 => nalgebra::Matrix2::new(one, z, z, one),
        1 => nalgebra::Matrix2::new(z, one, one, z),
        2 => nalgebra::Matrix2::new(z, c(0.0, -1.0), c(0.0, 1.0), z),
        _ => nalgebra::Matrix2::new(one, z, z, -one),
    }
}

fn kron2(a: &nalgebra::Matrix2<Complex64>, b: &nalgebra::Matrix2<Complex64>) -> ComplexMatrix4 {
    let mut m = ComplexMatrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    m[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    m
}

/// Hamiltonian matrix assembled from Pauli tensor products.
pub fn hamiltonian(j: &JParams) -> ComplexMatrix4 {
    let terms = [(0, 1, j.j_ix), (0, 2, j.j_iy), (0, 3, j.j_iz), (3, 1, j.j_zx), (3, 2, j.j_zy), (3, 3, j.j_zz)];
    terms.iter().fold(ComplexMatrix4::zeros(), |acc, &(a, b, coef)| {
        acc + kron2(&pauli(a), &pauli(b)) * c(coef, 0.0)
    })
}

/// `exp(-i H t)` in the computational basis, assembled block by block.
pub fn unitary(l: &LambdaParams, t: f64) -> ComplexMatrix4 {
    let mut u = ComplexMatrix4::zeros();
    for block in 0..2 {
        let b = l.block(block);
        let (s, co) = (b.omega * t).sin_cos();
        let (sd, cd) = b.delta.sin_cos();
        let o = 2 * block;
        u[(o, o)] = c(co, -sd * s);
        u[(o + 1, o + 1)] = c(co, sd * s);
        u[(o, o + 1)] = c(0.0, -1.0) * Complex64::from_polar(cd * s, -b.phi);
        u[(o + 1, o)] = c(0.0, -1.0) * Complex64::from_polar(cd * s, b.phi);
    }
    u
}

/// Measurement rotation applied to the target qubit before readout.
pub fn measurement_matrix(m: Measurement) -> ComplexMatrix4 {
    let h = FRAC_1_SQRT_2;
    let single = match m {
        // exp(i pi/4 sigma_Y)
        Measurement::X => nalgebra::Matrix2::new(c(h, 0.0), c(h, 0.0), c(-h, 0.0), c(h, 0.0)),
        // exp(-i pi/4 sigma_X)
        Measurement::Y => nalgebra::Matrix2::new(c(h, 0.0), c(0.0, -h), c(0.0, -h), c(h, 0.0)),
        Measurement::Z => pauli(0),
    };
    kron2(&pauli(0), &single)
}

pub fn preparation_matrix(u: Preparation) -> ComplexMatrix4 {
    match u {
        Preparation::U0 => kron2(&pauli(0), &pauli(0)),
        Preparation::U1 => kron2(&pauli(1), &pauli(0)),
    }
}

/// Rabi value `p(0) - p(1)` of one block at rotation angle `phase = omega * t`,
/// together with its partial derivatives in `(phase, delta, phi)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RabiTerms {
    pub value: f64,
    pub d_phase: f64,
    pub d_delta: f64,
    pub d_phi: f64,
}

pub(crate) fn rabi_terms(b: &BlockParams, m: Measurement, phase: f64) -> RabiTerms {
    let (s2, c2) = (2.0 * phase).sin_cos();
    let (sd, cd) = b.delta.sin_cos();
    let (sp, cp) = b.phi.sin_cos();
    let s2d = 2.0 * sd * cd;
    let c2d = cd * cd - sd * sd;
    let one_m = 1.0 - c2;
    match m {
        Measurement::X => RabiTerms {
            value: sp * cd * s2 + 0.5 * s2d * cp * one_m,
            d_phase: 2.0 * sp * cd * c2 + s2d * cp * s2,
            d_delta: -sp * sd * s2 + c2d * cp * one_m,
            d_phi: cp * cd * s2 - 0.5 * s2d * sp * one_m,
        },
        Measurement::Y => RabiTerms {
            value: -cp * cd * s2 + 0.5 * s2d * sp * one_m,
            d_phase: -2.0 * cp * cd * c2 + s2d * sp * s2,
            d_delta: cp * sd * s2 + c2d * sp * one_m,
            d_phi: sp * cd * s2 + 0.5 * s2d * cp * one_m,
        },
        Measurement::Z => RabiTerms {
            value: 1.0 - cd * cd * one_m,
            d_phase: -2.0 * cd * cd * s2,
            d_delta: s2d * one_m,
            d_phi: 0.0,
        },
    }
}

/// `p(y = 0)` from the closed forms, evaluated at rotation angle `phase`.
pub(crate) fn p0_at_phase(b: &BlockParams, m: Measurement, phase: f64) -> f64 {
    let (s, co) = phase.sin_cos();
    let (sd, cd) = b.delta.sin_cos();
    let (sp, cp) = b.phi.sin_cos();
    let p = match m {
        Measurement::X => {
            let re = co + sp * cd * s;
            let im = sd * s + cp * cd * s;
            0.5 * (re * re + im * im)
        }
        Measurement::Y => {
            let re = co - cp * cd * s;
            let im = sd * s + sp * cd * s;
            0.5 * (re * re + im * im)
        }
        Measurement::Z => 1.0 - (cd * s) * (cd * s),
    };
    p.clamp(0.0, 1.0)
}

pub fn likelihood_noiseless(l: &LambdaParams, q: &Query) -> f64 {
    let b = l.block(q.prep.block());
    p0_at_phase(&b, q.meas, b.omega * q.t)
}

/// Rabi oscillation `p(0|x) - p(1|x)` in amplitude/phase form.
pub fn rabi_model(l: &LambdaParams, meas: Measurement, prep: Preparation, t: f64) -> f64 {
    let b = l.block(prep.block());
    let (sd, cd) = b.delta.sin_cos();
    let (sp, cp) = b.phi.sin_cos();
    let arg = 2.0 * b.omega * t;
    let v = match meas {
        Measurement::X => {
            let amp = (1.0 - cd * cd * cp * cp).max(0.0).sqrt();
            let alpha = c(-sd * cp, -sp).arg();
            sd * cd * cp + cd * amp * (arg + alpha).cos()
        }
        Measurement::Y => {
            let amp = (1.0 - cd * cd * sp * sp).max(0.0).sqrt();
            let gamma = c(-sd * sp, cp).arg();
            sd * cd * sp + cd * amp * (arg + gamma).cos()
        }
        Measurement::Z => sd * sd + cd * cd * arg.cos(),
    };
    v.clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn config2() -> JParams {
        JParams::from_array([-4.57e6, -1.47e6, -0.29e6, 6.50e6, 1.39e6, 0.41e6])
    }

    #[test]
    fn config2_frequencies() {
        let l = j_to_lambda(&config2());
        assert!((l.omega0 / 1.94e6 - 1.0).abs() < 0.01, "{}", l.omega0);
        assert!((l.omega1 / 11.45e6 - 1.0).abs() < 0.01, "{}", l.omega1);
        let back = lambda_to_j(&l);
        for (x, y) in back.to_array().iter().zip(config2().to_array()) {
            assert!((x - y).abs() <= 1e-9 * y.abs());
        }
    }

    #[test]
    fn pure_zx_maps_to_opposite_phases() {
        let l = j_to_lambda(&JParams::from_array([0.0, 0.0, 0.0, 3.0e6, 0.0, 0.0]));
        let want = [3.0e6, 0.0, 0.0, 3.0e6, 0.0, PI];
        for (x, y) in l.to_array().iter().zip(want) {
            assert!((x - y).abs() < 1e-9);
        }
        let j = lambda_to_j(&LambdaParams::from_array(want));
        assert!((j.j_zx - 3.0e6).abs() < 1e-6 && j.j_ix.abs() < 1e-6);
    }

    #[test]
    fn symmetric_blocks_give_pure_ix() {
        let j = lambda_to_j(&LambdaParams::from_array([2.0, 0.0, 0.0, 2.0, 0.0, 0.0]));
        assert_eq!(j.to_array(), [2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_frequency_is_total() {
        let l = j_to_lambda(&JParams::from_array([0.0; 6]));
        assert_eq!(l.to_array(), [0.0; 6]);
    }

    #[test]
    fn identity_at_time_zero() {
        let l = j_to_lambda(&config2());
        let u = unitary(&l, 0.0);
        assert!((u - ComplexMatrix4::identity()).norm() < 1e-15);
    }

    #[test]
    fn z_measurement_node() {
        let l = LambdaParams::from_array([2.0e6, 0.0, 0.3, 1.0e6, 0.0, 0.0]);
        let t = PI / 2.0 / 2.0e6;
        let p = likelihood_noiseless(&l, &Query::new(Measurement::Z, Preparation::U0, t));
        assert!(p.abs() < 1e-12);
        let p = likelihood_noiseless(&l, &Query::new(Measurement::Z, Preparation::U0, 0.0));
        assert_eq!(p, 1.0);
    }

    #[test]
    fn rabi_forms_agree() {
        let l = LambdaParams::from_array([1.9e6, 0.4, -2.1, 11.0e6, -0.7, 2.9]);
        for m in Measurement::ALL {
            for u in Preparation::ALL {
                for k in 0..50 {
                    let t = 1e-8 * k as f64;
                    let r = rabi_model(&l, m, u, t);
                    let p = likelihood_noiseless(&l, &Query::new(m, u, t));
                    assert!((r - (2.0 * p - 1.0)).abs() < 1e-12);
                    let b = l.block(u.block());
                    let terms = rabi_terms(&b, m, b.omega * t);
                    assert!((terms.value - r).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn x_rabi_vanishes_without_tilt() {
        let l = LambdaParams::from_array([3.0e6, 0.0, 0.0, 3.0e6, 0.0, PI]);
        for k in 0..20 {
            let r = rabi_model(&l, Measurement::X, Preparation::U0, 3e-8 * k as f64);
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn hamiltonian_is_block_diagonal() {
        let h = hamiltonian(&config2());
        for (i, j) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
            assert_eq!(h[(i, j)].norm(), 0.0);
            assert_eq!(h[(j, i)].norm(), 0.0);
        }
        let j = config2();
        assert!((h[(0, 0)].re - j.block_a(0)).abs() < 1e-6);
        assert!((h[(3, 2)] - j.block_beta(1)).norm() < 1e-6);
    }
}
