//! Learning-error metrics: RMSE, testing error, query advantage, scaling slopes
//! and decoherence-model fit diagnostics.

use crate::error::{Error, Result};
use crate::estimate::{rabi_curves, Observations};
use crate::model::{LambdaParams, Measurement, Preparation, Query};
use crate::noise::{hidden_likelihood, noisy_likelihood, DecoherenceModel, NoiseModel, ReadoutModel};
use crate::oracle::{simulate_shot, Outcome, RngStream};
use crate::qopt::QueryDistribution;
use crate::space::QuerySpace;
use rand::Rng;
use serde::Serialize;

const LOG_CLIP: f64 = 1e-300;

/// `sqrt(sum_i mean_r ((est_ri - truth_i) / xi_i)^2)`; without a truth the
/// mean of the estimates stands in for it.
pub fn rmse(estimates: &[Vec<f64>], truth: Option<&[f64]>, xi: &[f64]) -> Result<f64> {
    if estimates.len() < 2 {
        return Err(Error::Domain(format!("rmse needs at least 2 estimates, got {}", estimates.len())));
    }
    let k = xi.len();
    if estimates.iter().any(|e| e.len() != k) || truth.is_some_and(|t| t.len() != k) {
        return Err(Error::Domain("estimate, truth and scale lengths differ".into()));
    }
    let n = estimates.len() as f64;
    let center: Vec<f64> = match truth {
        Some(t) => t.to_vec(),
        None => (0..k).map(|i| estimates.iter().map(|e| e[i]).sum::<f64>() / n).collect(),
    };
    let total: f64 = (0..k)
        .map(|i| estimates.iter().map(|e| ((e[i] - center[i]) / xi[i]).powi(2)).sum::<f64>() / n)
        .sum();
    Ok(total.sqrt())
}

/// Normalized error of one estimate, `sqrt(sum_i ((est_i - truth_i) / xi_i)^2)`.
pub fn normalized_error(estimate: &[f64], truth: &[f64], xi: &[f64]) -> f64 {
    estimate
        .iter()
        .zip(truth)
        .zip(xi)
        .map(|((e, t), s)| ((e - t) / s).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Log-probability of an observed outcome, with the raw probability.
fn outcome_log_prob(l: &LambdaParams, n: &NoiseModel, q: &Query, o: &Outcome) -> Result<(f64, f64)> {
    let p = match (o, &n.readout) {
        (Outcome::Bit(y), ReadoutModel::BitFlip { .. }) => {
            let p0 = noisy_likelihood(l, n, q);
            if *y == 0 {
                p0
            } else {
                1.0 - p0
            }
        }
        (Outcome::Signal(c), ReadoutModel::GaussianSignal(g)) => {
            let h = hidden_likelihood(l, n, q).p;
            h * g.density(*c, 0) + (1.0 - h) * g.density(*c, 1)
        }
        (Outcome::Bit(_), _) => return Err(Error::ModelKind { expected: "bit-flip" }),
        (Outcome::Signal(_), _) => return Err(Error::ModelKind { expected: "gaussian-signal" }),
    };
    Ok((p.max(LOG_CLIP).ln(), p))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TestingError {
    pub value: f64,
    /// Some outcome had zero probability under the estimate and was clipped.
    pub clipped: bool,
}

/// Mean log-likelihood ratio of the truth over the estimate on a test set.
pub fn testing_error(theta_hat: &LambdaParams, theta_star: &LambdaParams, n: &NoiseModel, testset: &[(Query, Outcome)]) -> Result<TestingError> {
    if testset.is_empty() {
        return Err(Error::MissingData("empty test set".into()));
    }
    let mut sum = 0.0;
    let mut clipped = false;
    for (q, o) in testset {
        let (lh, ph) = outcome_log_prob(theta_hat, n, q, o)?;
        let (ls, _) = outcome_log_prob(theta_star, n, q, o)?;
        clipped |= ph < LOG_CLIP;
        sum += ls - lh;
    }
    Ok(TestingError { value: sum / testset.len() as f64, clipped })
}

fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a > 0.0 { a * (a / b.max(LOG_CLIP)).ln() } else { 0.0 };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// Testing error with outcomes integrated out: the mean over test queries of
/// the outcome KL divergence from truth to estimate. Signal readout is scored
/// through its classified bits.
pub fn expected_testing_error(theta_hat: &LambdaParams, theta_star: &LambdaParams, n: &NoiseModel, queries: &[Query]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::MissingData("empty test set".into()));
    }
    let total: f64 = queries
        .iter()
        .map(|q| bernoulli_kl(noisy_likelihood(theta_star, n, q), noisy_likelihood(theta_hat, n, q)))
        .sum();
    Ok(total / queries.len() as f64)
}

/// `n` queries drawn from `p_test` over `space`.
pub fn sample_test_queries(p_test: &QueryDistribution, space: &QuerySpace, n: usize, rng: &mut RngStream) -> Vec<Query> {
    let mut cum = Vec::with_capacity(p_test.len());
    let mut acc = 0.0;
    for w in p_test.weights() {
        acc += w;
        cum.push(acc);
    }
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            space.query(cum.partition_point(|&c| c <= u).min(cum.len() - 1))
        })
        .collect()
}

/// Test queries with outcomes simulated at the truth.
pub fn generate_testset(p_test: &QueryDistribution, space: &QuerySpace, n: usize, theta_star: &LambdaParams, noise: &NoiseModel, rng: &mut RngStream) -> Vec<(Query, Outcome)> {
    sample_test_queries(p_test, space, n, rng)
        .into_iter()
        .map(|q| {
            let o = simulate_shot(theta_star, noise, &q, rng).outcome;
            (q, o)
        })
        .collect()
}

/// Queries needed to first reach error `eps`, interpolated on log-log axes.
pub fn queries_to_reach(curve: &[(f64, f64)], eps: f64) -> Result<f64> {
    let (lo, hi) = curve.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if curve.is_empty() || !(eps >= lo && eps <= hi) {
        return Err(Error::Range { value: eps, lo, hi });
    }
    let k = curve.iter().position(|p| p.1 <= eps).expect("eps is at least the minimum");
    if k == 0 || curve[k].1 == eps {
        return Ok(curve[k].0);
    }
    let (n0, e0) = (curve[k - 1].0.ln(), curve[k - 1].1.ln());
    let (n1, e1) = (curve[k].0.ln(), curve[k].1.ln());
    let frac = (eps.ln() - e0) / (e1 - e0);
    Ok((n0 + frac * (n1 - n0)).exp())
}

/// `1 - N_method(eps) / N_baseline(eps)`; curves are `(N, error)` sorted by N.
pub fn query_advantage(curve_method: &[(f64, f64)], curve_baseline: &[(f64, f64)], eps: f64) -> Result<f64> {
    Ok(1.0 - queries_to_reach(curve_method, eps)? / queries_to_reach(curve_baseline, eps)?)
}

/// Smallest error reached by both curves.
pub fn smallest_common_error(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let min = |c: &[(f64, f64)]| c.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    min(a).max(min(b))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub n_points: usize,
}

/// Least-squares line through `(log N, log eps)` for points with `N` in the window.
pub fn fit_scaling_slope(curve: &[(f64, f64)], window: (f64, f64)) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter(|p| p.0 >= window.0 && p.0 <= window.1 && p.0 > 0.0 && p.1 > 0.0)
        .map(|p| (p.0.ln(), p.1.ln()))
        .collect();
    let n = pts.len();
    if n < 4 {
        return Err(Error::Range { value: n as f64, lo: 4.0, hi: f64::INFINITY });
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Range { value: 0.0, lo: f64::MIN_POSITIVE, hi: f64::INFINITY });
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = if n > 2 { (sse / (nf - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(SlopeFit { slope, stderr, intercept, n_points: n })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecoherenceFit {
    pub model: DecoherenceModel,
    pub rmse: f64,
    pub kl: f64,
}

/// Agreement between the data's Rabi curves and each candidate decoherence model.
pub fn decoherence_fit_report(obs: &Observations, theta: &LambdaParams, noise: &NoiseModel, models: &[DecoherenceModel]) -> Result<Vec<DecoherenceFit>> {
    let curves = rabi_curves(obs)?;
    let mut out = Vec::with_capacity(models.len());
    for m in models {
        let candidate = NoiseModel { decoherence: *m, ..noise.clone() };
        let (mut se, mut kl, mut count) = (0.0, 0.0, 0usize);
        for meas in Measurement::ALL {
            for prep in Preparation::ALL {
                let c = curves.get(meas, prep);
                for k in 0..c.times.len() {
                    if c.shots[k] == 0 {
                        continue;
                    }
                    let q = Query::new(meas, prep, c.times[k]);
                    let p_model = hidden_likelihood(theta, &candidate, &q).p;
                    let p_data = (0.5 * (1.0 + c.values[k])).clamp(0.0, 1.0);
                    se += (c.values[k] - (2.0 * p_model - 1.0)).powi(2);
                    kl += bernoulli_kl(p_data, p_model);
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::MissingData("no observed queries".into()));
        }
        out.push(DecoherenceFit { model: *m, rmse: (se / count as f64).sqrt(), kl: kl / count as f64 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_basics() {
        let t = vec![1.0, 2.0];
        assert_eq!(rmse(&[t.clone(), t.clone()], Some(&t), &[1.0, 1.0]).unwrap(), 0.0);
        let off = vec![1.0 + 3e6, 2.0];
        let r = rmse(&[off.clone(), off], Some(&t), &[1e6, 1e6]).unwrap();
        assert!((r - 3.0).abs() < 1e-12);
        assert!(rmse(std::slice::from_ref(&t), Some(&t), &[1.0, 1.0]).is_err());
    }

    #[test]
    fn exact_power_laws() {
        for s in [-0.5, -1.5] {
            let c: Vec<(f64, f64)> = (0..10).map(|k| {
                let n = 1e3 * 2f64.powi(k);
                (n, 3.0 * n.powf(s))
            }).collect();
            let f = fit_scaling_slope(&c, (0.0, f64::INFINITY)).unwrap();
            assert!((f.slope - s).abs() < 1e-12);
        }
        assert!(fit_scaling_slope(&[(1.0, 1.0), (2.0, 0.5)], (0.0, 10.0)).is_err());
    }

    #[test]
    fn advantage_definition() {
        let base: Vec<(f64, f64)> = (0..6).map(|k| (10f64.powi(k + 2), 10f64.powf(-0.5 * k as f64))).collect();
        let fast: Vec<(f64, f64)> = base.iter().map(|p| (p.0 / 10.0, p.1)).collect();
        assert!(query_advantage(&base, &base, 0.05).unwrap().abs() < 1e-12);
        assert!((query_advantage(&fast, &base, 0.05).unwrap() - 0.9).abs() < 1e-12);
        assert!(query_advantage(&fast, &base, 1e-6).is_err());
    }
}
