//! Independent reference computations shared by the integration tests and the
//! acceptance suite. Nothing here calls the closed forms under test.

#![allow(dead_code)]

use crlearn::model::{j_to_lambda, JParams, LambdaParams, Measurement, Preparation, Query};
use crlearn::noise::{noisy_likelihood, DecoherenceModel, NoiseModel, PulseShapeModel, ReadoutModel};
use nalgebra::{DMatrix, Matrix2, Matrix4, Vector4};
use num_complex::Complex64;
use rand::Rng;

type C = Complex64;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

pub fn paulis() -> [Matrix2<C>; 4] {
    let (o, z, i) = (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    [
        Matrix2::new(o, z, z, o),
        Matrix2::new(z, o, o, z),
        Matrix2::new(z, -i, i, z),
        Matrix2::new(o, z, z, -o),
    ]
}

pub fn kron(a: &Matrix2<C>, b: &Matrix2<C>) -> Matrix4<C> {
    Matrix4::from_fn(|r, s| a[(r / 2, s / 2)] * b[(r % 2, s % 2)])
}

// ---- Born rule by brute-force matrix exponential ----

/// `p(y = 0)` of the target qubit from `exp(-iHt)` computed through a Hermitian
/// eigendecomposition of the full 4x4 Hamiltonian.
pub fn born_p0(j: &JParams, q: &Query) -> f64 {
    let p = paulis();
    let coef = j.to_array();
    let terms = [(0, 1), (0, 2), (0, 3), (3, 1), (3, 2), (3, 3)];
    let mut h = Matrix4::<C>::zeros();
    for (k, &(a, b)) in terms.iter().enumerate() {
        h += kron(&p[a], &p[b]) * c(coef[k], 0.0);
    }
    let eig = h.symmetric_eigen();
    let phases = Matrix4::from_diagonal(&Vector4::from_fn(|k, _| C::from_polar(1.0, -eig.eigenvalues[k] * q.t)));
    let u = eig.eigenvectors * phases * eig.eigenvectors.adjoint();

    let prep = match q.prep {
        Preparation::U0 => kron(&p[0], &p[0]),
        Preparation::U1 => kron(&p[1], &p[0]),
    };
    let r = std::f64::consts::FRAC_PI_4;
    // rotations exp(i pi/4 Y) and exp(-i pi/4 X) on the target
    let rot = match q.meas {
        Measurement::X => p[0] * c(r.cos(), 0.0) + p[2] * c(0.0, r.sin()),
        Measurement::Y => p[0] * c(r.cos(), 0.0) - p[1] * c(0.0, r.sin()),
        Measurement::Z => p[0],
    };
    let psi = kron(&p[0], &rot) * u * prep * Vector4::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0));
    psi[0].norm_sqr() + psi[2].norm_sqr()
}

// ---- decoherence unitarity through Kraus operators ----

fn damping_kraus(t1: f64, t2: f64, t: f64) -> Vec<Matrix2<C>> {
    let ga = 1.0 - (-t / (2.0 * t1)).exp();
    let gp = 1.0 - (-t * (1.0 / t2 - 1.0 / (2.0 * t1))).exp();
    let m = |a: f64, b: f64, cc: f64, d: f64| Matrix2::new(c(a, 0.0), c(b, 0.0), c(cc, 0.0), c(d, 0.0));
    let amp = [m(1.0, 0.0, 0.0, (1.0 - ga).sqrt()), m(0.0, ga.sqrt(), 0.0, 0.0)];
    let phase = [m(1.0, 0.0, 0.0, (1.0 - gp).sqrt()), m(0.0, 0.0, 0.0, gp.sqrt())];
    // amplitude damping applied after phase damping
    let mut out = Vec::new();
    for a in &amp {
        for p in &phase {
            out.push(a * p);
        }
    }
    out
}

/// `1 - u` where `u` is the unitarity of the composed two-qubit channel,
/// computed from its Pauli transfer matrix.
pub fn kraus_depolarization(t1: (f64, f64), t2: (f64, f64), t: f64) -> f64 {
    let k1 = damping_kraus(t1.0, t2.0, t);
    let k2 = damping_kraus(t1.1, t2.1, t);
    let kraus: Vec<Matrix4<C>> = k1.iter().flat_map(|a| k2.iter().map(move |b| kron(a, b))).collect();
    let p = paulis();
    let basis: Vec<Matrix4<C>> = (0..16).map(|k| kron(&p[k / 4], &p[k % 4])).collect();
    let mut sum = 0.0;
    for j in 1..16 {
        let image = kraus.iter().fold(Matrix4::<C>::zeros(), |acc, k| acc + k * basis[j] * k.adjoint());
        for bi in basis.iter().skip(1) {
            let r = (bi * image).trace().re / 4.0;
            sum += r * r;
        }
    }
    1.0 - sum / 15.0
}

// ---- finite-difference Fisher information ----

fn fd_gradient(f: impl Fn(&[f64; 6]) -> f64, x: &[f64; 6], steps: &[f64; 6]) -> [f64; 6] {
    let mut g = [0.0; 6];
    for k in 0..6 {
        let (mut hi, mut lo) = (*x, *x);
        hi[k] += steps[k];
        lo[k] -= steps[k];
        // fourth-order central difference
        let (mut hi2, mut lo2) = (*x, *x);
        hi2[k] += 2.0 * steps[k];
        lo2[k] -= 2.0 * steps[k];
        g[k] = (8.0 * (f(&hi) - f(&lo)) - (f(&hi2) - f(&lo2))) / (12.0 * steps[k]);
    }
    g
}

fn bernoulli_fisher(p: f64, g: &[f64; 6]) -> DMatrix<f64> {
    let w = 1.0 / (p * (1.0 - p));
    DMatrix::from_fn(6, 6, |i, j| w * g[i] * g[j])
}

/// Per-query Fisher matrix in Lambda coordinates from finite differences of the
/// outcome probability.
pub fn fd_fisher_lambda(l: &LambdaParams, n: &NoiseModel, q: &Query) -> DMatrix<f64> {
    let x = l.to_array();
    let steps = [1e-5 * x[0].abs().max(1e3), 1e-5, 1e-5, 1e-5 * x[3].abs().max(1e3), 1e-5, 1e-5];
    let f = |v: &[f64; 6]| noisy_likelihood(&LambdaParams::from_array(*v), n, q);
    bernoulli_fisher(f(&x), &fd_gradient(f, &x, &steps))
}

/// Per-query Fisher matrix in J coordinates, differentiating through the
/// J-to-Lambda map numerically.
pub fn fd_fisher_j(j: &JParams, n: &NoiseModel, q: &Query) -> DMatrix<f64> {
    let x = j.to_array();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let steps = [1e-5 * scale; 6];
    let f = |v: &[f64; 6]| noisy_likelihood(&j_to_lambda(&JParams::from_array(*v)), n, q);
    bernoulli_fisher(f(&x), &fd_gradient(f, &x, &steps))
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

// ---- random instances ----

pub fn random_j(rng: &mut impl Rng) -> JParams {
    JParams::from_array(std::array::from_fn(|_| rng.random_range(-8e6..8e6)))
}

pub fn random_query(rng: &mut impl Rng, t_max: f64) -> Query {
    Query::new(
        Measurement::ALL[rng.random_range(0..3)],
        Preparation::ALL[rng.random_range(0..2)],
        rng.random_range(0.02 * t_max..t_max),
    )
}

pub fn random_noise(rng: &mut impl Rng) -> NoiseModel {
    let readout = ReadoutModel::bit_flip(rng.random_range(0.0..0.2), rng.random_range(0.0..0.2)).unwrap();
    let pulse = if rng.random_bool(0.5) {
        PulseShapeModel { a: rng.random_range(0.0..10.0), b: rng.random_range(0.0..3e-9) }
    } else {
        PulseShapeModel::none()
    };
    let decoherence = match rng.random_range(0..3) {
        0 => DecoherenceModel::None,
        1 => DecoherenceModel::SingleParam { mu: rng.random_range(1e-6..1e-4), t0: rng.random_range(0.0..5e-8) },
        _ => {
            let t1a = rng.random_range(2e-5..2e-4);
            let t1b = rng.random_range(2e-5..2e-4);
            DecoherenceModel::two_qubit(t1a, rng.random_range(0.2..2.0) * t1a, t1b, rng.random_range(0.2..2.0) * t1b).unwrap()
        }
    };
    NoiseModel { readout, pulse, decoherence }
}

// ---- exhaustive design search ----

/// Minimum of `Tr(F(q)^-1)` over the simplex grid with spacing `1 / steps`,
/// where `F(q) = sum_x q_x s_x s_x^T` for rank-one scores of dimension 2 or 3.
pub fn grid_search_a_optimal(scores: &[Vec<f64>], steps: usize) -> f64 {
    let k = scores[0].len();
    assert!(k == 2 || k == 3);
    let n = scores.len();
    // upper-triangle accumulator of F (scaled by steps)
    fn objective(f: &[f64; 6], k: usize, steps: f64) -> f64 {
        let m = |v: f64| v / steps;
        if k == 2 {
            let (a, b, d) = (m(f[0]), m(f[1]), m(f[3]));
            let det = a * d - b * b;
            if det <= 1e-14 * (a * d).max(f64::MIN_POSITIVE) {
                return f64::INFINITY;
            }
            (a + d) / det
        } else {
            let (a, b, cc, d, e, g) = (m(f[0]), m(f[1]), m(f[2]), m(f[3]), m(f[4]), m(f[5]));
            let det = a * (d * g - e * e) - b * (b * g - e * cc) + cc * (b * e - d * cc);
            let scale = a * d * g;
            if det <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
                return f64::INFINITY;
            }
            ((d * g - e * e) + (a * g - cc * cc) + (a * d - b * b)) / det
        }
    }
    let outer: Vec<[f64; 6]> = scores
        .iter()
        .map(|s| {
            let g = |i: usize| if i < k { s[i] } else { 0.0 };
            [g(0) * g(0), g(0) * g(1), g(0) * g(2), g(1) * g(1), g(1) * g(2), g(2) * g(2)]
        })
        .collect();
    #[allow(clippy::too_many_arguments)]
    fn rec(x: usize, left: usize, acc: [f64; 6], outer: &[[f64; 6]], n: usize, k: usize, steps: f64, best: &mut f64) {
        if x == n - 1 {
            let mut f = acc;
            for (fi, oi) in f.iter_mut().zip(&outer[x]) {
                *fi += left as f64 * oi;
            }
            *best = best.min(objective(&f, k, steps));
            return;
        }
        for c in 0..=left {
            let mut f = acc;
            if c > 0 {
                for (fi, oi) in f.iter_mut().zip(&outer[x]) {
                    *fi += c as f64 * oi;
                }
            }
            rec(x + 1, left - c, f, outer, n, k, steps, best);
        }
    }
    let mut best = f64::INFINITY;
    rec(0, steps, [0.0; 6], &outer, n, k, steps as f64, &mut best);
    best
}
