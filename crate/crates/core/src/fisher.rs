//! Fisher information of single queries and query distributions, the
//! Lambda-to-J Jacobian, masked reductions and the design objectives.

use crate::error::{Error, Result};
use crate::model::{j_to_lambda, JParams, LambdaParams, Query};
use crate::noise::{noisy_likelihood_grad, NoiseModel};
use nalgebra::{DMatrix, Matrix6};

pub type FisherMatrix = DMatrix<f64>;

/// Normalization of frequency-valued parameters, in s^-1.
pub const XI: f64 = 1e6;

/// Parameter selection; the rows of the reduction matrix `R`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamMask(Vec<usize>);

impl ParamMask {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("parameter mask must be nonempty".into()));
        }
        let mut seen = [false; 6];
        for &i in &indices {
            if i >= 6 || seen[i] {
                return Err(Error::Config(format!("invalid or duplicate mask index {i}")));
            }
            seen[i] = true;
        }
        Ok(Self(indices))
    }

    pub fn full() -> Self {
        Self((0..6).collect())
    }

    /// `{omega0, omega1}` in Lambda layout.
    pub fn omegas() -> Self {
        Self(LambdaParams::OMEGA_INDICES.to_vec())
    }

    pub fn from_names(names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                LambdaParams::NAMES
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| Error::Config(format!("unknown parameter {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(idx)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.0.len() == 6
    }
}

/// Score vector `s` with `I_x = s s^T` in Lambda coordinates, or `None` for a
/// degenerate query carrying no information.
pub fn query_score(l: &LambdaParams, n: &NoiseModel, q: &Query) -> Option<[f64; 6]> {
    let g = noisy_likelihood_grad(l, n, q);
    let var = g.p * (1.0 - g.p);
    if !(var > 0.0) || g.grad.iter().all(|&v| v == 0.0) {
        return None;
    }
    let w = var.sqrt();
    let mut s = [0.0; 6];
    let off = 3 * q.prep.block();
    for k in 0..3 {
        s[off + k] = g.grad[k] / w;
    }
    Some(s)
}

pub fn outer(s: &[f64]) -> FisherMatrix {
    let k = s.len();
    DMatrix::from_fn(k, k, |i, j| s[i] * s[j])
}

/// Per-query Fisher information in Lambda coordinates.
pub fn query_fisher(l: &LambdaParams, n: &NoiseModel, q: &Query) -> FisherMatrix {
    match query_score(l, n, q) {
        Some(s) => outer(&s),
        None => DMatrix::zeros(6, 6),
    }
}

/// Jacobian with entries `(i, k) = d Lambda_k / d J_i`.
pub fn jacobian_lambda_j(j: &JParams) -> Result<Matrix6<f64>> {
    let mut d = Matrix6::zeros();
    for block in 0..2 {
        let a = j.block_a(block);
        let beta = j.block_beta(block);
        let nb2 = beta.norm_sqr();
        let w2 = a * a + nb2;
        if w2 == 0.0 || nb2 == 0.0 {
            return Err(Error::Singularity(format!("block {block} has omega = {} and |beta| = {}", w2.sqrt(), nb2.sqrt())));
        }
        let (w, nb) = (w2.sqrt(), nb2.sqrt());
        // partials over (Re beta, Im beta, a)
        let d_omega = [beta.re / w, beta.im / w, a / w];
        let d_delta = [-a * beta.re / (nb * w2), -a * beta.im / (nb * w2), nb / w2];
        let d_phi = [-beta.im / nb2, beta.re / nb2, 0.0];
        let s = if block == 0 { 1.0 } else { -1.0 };
        for (comp, sign_row) in [(0usize, (0usize, 3usize)), (1, (1, 4)), (2, (2, 5))] {
            let (ri, rz) = sign_row;
            for (col, partial) in [(0usize, &d_omega), (1, &d_delta), (2, &d_phi)] {
                d[(ri, 3 * block + col)] = partial[comp];
                d[(rz, 3 * block + col)] = s * partial[comp];
            }
        }
    }
    Ok(d)
}

/// Coordinates in which Fisher matrices are handed to the query optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Coordinates {
    /// Lambda with natural units.
    Lambda,
    /// Lambda with frequencies divided by `XI`.
    LambdaScaled,
    /// J divided by `XI`.
    JScaled,
}

/// Linear map from Lambda scores to scores in the chosen (masked) coordinates.
#[derive(Clone, Debug)]
pub struct ScoreMap {
    matrix: DMatrix<f64>,
}

impl ScoreMap {
    pub fn new(l: &LambdaParams, coords: Coordinates, mask: &ParamMask) -> Result<Self> {
        let full: DMatrix<f64> = match coords {
            Coordinates::Lambda => DMatrix::identity(6, 6),
            Coordinates::LambdaScaled => DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[
                XI, 1.0, 1.0, XI, 1.0, 1.0,
            ])),
            Coordinates::JScaled => {
                let d = jacobian_lambda_j(&crate::model::lambda_to_j(l))?;
                DMatrix::from_iterator(6, 6, d.iter().map(|v| v * XI))
            }
        };
        let rows: Vec<_> = mask.indices().iter().map(|&i| full.row(i).clone_owned()).collect();
        Ok(Self { matrix: DMatrix::from_rows(&rows) })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, s: &[f64; 6]) -> Vec<f64> {
        (0..self.matrix.nrows())
            .map(|i| (0..6).map(|k| self.matrix[(i, k)] * s[k]).sum())
            .collect()
    }
}

/// `sum_x q(x) I_x` over the queries of `space`.
pub fn distribution_fisher(
    weights: &[f64],
    queries: impl IntoIterator<Item = Query>,
    l: &LambdaParams,
    n: &NoiseModel,
) -> FisherMatrix {
    let mut f = DMatrix::zeros(6, 6);
    for (w, q) in weights.iter().zip(queries) {
        if *w == 0.0 {
            continue;
        }
        if let Some(s) = query_score(l, n, &q) {
            for i in 0..6 {
                for j in 0..6 {
                    f[(i, j)] += w * s[i] * s[j];
                }
            }
        }
    }
    f
}

pub fn reduced_fisher(f: &FisherMatrix, m: &ParamMask) -> FisherMatrix {
    let idx = m.indices();
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| f[(idx[i], idx[j])])
}

/// Fisher information in J coordinates, `D I(Lambda) D^T`.
pub fn fisher_in_j(f_lambda: &FisherMatrix, j: &JParams) -> Result<FisherMatrix> {
    let d = jacobian_lambda_j(j)?;
    let d = DMatrix::from_iterator(6, 6, d.iter().copied());
    Ok(&d * f_lambda * d.transpose())
}

pub fn ridge_lambda(f: &FisherMatrix) -> f64 {
    1e-12 * f.trace() / f.nrows() as f64
}

/// Cholesky factor of `f + lambda I`.
pub fn regularized_cholesky(f: &FisherMatrix) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let k = f.nrows();
    let reg = f + DMatrix::identity(k, k) * ridge_lambda(f);
    nalgebra::Cholesky::new(reg).ok_or_else(|| Error::Numerical {
        query: None,
        msg: "fisher matrix is not positive definite after ridge".into(),
    })
}

pub fn a_opt_objective(f: &FisherMatrix) -> Result<f64> {
    Ok(regularized_cholesky(f)?.inverse().trace())
}

pub fn fir_objective(f_q: &FisherMatrix, f_test: &FisherMatrix) -> Result<f64> {
    Ok((regularized_cholesky(f_q)?.inverse() * f_test).trace())
}

/// Check that `j_to_lambda` is differentiable at `j`.
pub fn is_regular(j: &JParams) -> bool {
    let l = j_to_lambda(j);
    l.omega0 > 0.0 && l.omega1 > 0.0 && l.delta0.abs() < std::f64::consts::FRAC_PI_2 && l.delta1.abs() < std::f64::consts::FRAC_PI_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Measurement, Preparation};

    fn l0() -> LambdaParams {
        LambdaParams::from_array([1.94e6, 0.06, -0.15, 11.45e6, -0.06, 2.9])
    }

    #[test]
    fn rank_one_block_support() {
        let n = NoiseModel::noiseless();
        for prep in Preparation::ALL {
            let f = query_fisher(&l0(), &n, &Query::new(Measurement::X, prep, 3.1e-7));
            let other = 3 * (1 - prep.block());
            for i in 0..3 {
                for j in 0..6 {
                    assert_eq!(f[(other + i, j)], 0.0);
                }
            }
            let eig = f.clone().symmetric_eigen();
            let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
            assert!(ev[1].abs() <= 1e-10 * ev[0].abs());
        }
    }

    #[test]
    fn zero_score_gives_zero_matrix() {
        let l = LambdaParams::from_array([3e6, 0.0, 0.0, 3e6, 0.0, std::f64::consts::PI]);
        let f = query_fisher(&l, &NoiseModel::noiseless(), &Query::new(Measurement::Z, Preparation::U0, 0.0));
        assert_eq!(f, DMatrix::zeros(6, 6));
    }

    #[test]
    fn objectives_on_scaled_identity() {
        let f = DMatrix::identity(6, 6) * 4.0;
        assert!((a_opt_objective(&f).unwrap() - 1.5).abs() < 1e-9);
        assert!((fir_objective(&f, &f).unwrap() - 6.0).abs() < 1e-9);
    }

    #[test]
    fn mask_validation() {
        assert!(ParamMask::new(vec![]).is_err());
        assert!(ParamMask::new(vec![0, 0]).is_err());
        assert!(ParamMask::new(vec![6]).is_err());
        let m = ParamMask::from_names(&["omega0".into(), "omega1".into()]).unwrap();
        assert_eq!(m, ParamMask::omegas());
    }

    #[test]
    fn singular_jacobian_reported() {
        let j = JParams::from_array([0.0, 0.0, 1e6, 0.0, 0.0, 0.0]);
        assert!(matches!(jacobian_lambda_j(&j), Err(Error::Singularity(_))));
    }
}
