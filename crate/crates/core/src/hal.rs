//! The learning loop: passive, baseline and Fisher-information active learners
//! over fixed or growing query spaces.

use crate::error::{Error, Result};
use crate::estimate::{baseline_estimate, mle, EstimatorConfig, Observations};
use crate::fisher::{Coordinates, ParamMask};
use crate::model::{lambda_to_j, JParams, LambdaParams};
use crate::noise::{NoiseModel, ReadoutModel};
use crate::oracle::{Oracle, RngStream};
use crate::qopt::{
    design_for, entropy_filter, mix_uniform, optimize_design, sample_batch, Objective, QueryDistribution, SolverOptions,
};
use crate::space::{GrowthPolicy, QuerySpace, DEFAULT_LINEAR_INCREMENT};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    Baseline,
    Passive,
    HalFiFixed,
    HalFiLinearT,
    HalFiExpT,
    HalFir,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Baseline,
        Scenario::Passive,
        Scenario::HalFiFixed,
        Scenario::HalFiLinearT,
        Scenario::HalFiExpT,
        Scenario::HalFir,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Scenario::Baseline => "Baseline",
            Scenario::Passive => "Passive",
            Scenario::HalFiFixed => "HalFiFixed",
            Scenario::HalFiLinearT => "HalFiLinearT",
            Scenario::HalFiExpT => "HalFiExpT",
            Scenario::HalFir => "HalFir",
        }
    }

    pub fn is_active(self) -> bool {
        !matches!(self, Scenario::Baseline | Scenario::Passive)
    }

    pub fn growth(self, linear_increment: f64) -> GrowthPolicy {
        match self {
            Scenario::HalFiLinearT => GrowthPolicy::LinearT { increment: linear_increment },
            Scenario::HalFiExpT => GrowthPolicy::ExponentialT,
            _ => GrowthPolicy::Fixed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub scenario: Scenario,
    pub n0: usize,
    pub n_b: usize,
    pub i_max: usize,
    /// Lambda components to learn; the others stay at the prior calibration.
    pub param_mask: Option<Vec<String>>,
    /// Test distribution for HAL-FIR over the initial space; uniform when absent.
    pub p_test: Option<Vec<f64>>,
    /// Initial query distribution over the initial space; uniform when absent.
    pub q0: Option<Vec<f64>>,
    /// Entropy threshold; `None` disables the filter.
    pub tau: Option<f64>,
    pub linear_increment: f64,
    /// Coordinates of the Fisher matrices handed to the query optimizer (full mask only).
    pub coordinates: Coordinates,
    /// Rounds (from round 0) that run every estimation stage; later rounds refine
    /// the previous estimate, plus (on fixed spaces) a fresh full fit whenever N has doubled.
    pub full_estimation_rounds: usize,
    /// Stop early once the normalized change of the estimate falls below this.
    pub stop_tol: Option<f64>,
    pub qopt_max_iter: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Passive,
            n0: 2430,
            n_b: 486,
            i_max: 10,
            param_mask: None,
            p_test: None,
            q0: None,
            tau: Some(0.95),
            linear_increment: DEFAULT_LINEAR_INCREMENT,
            coordinates: Coordinates::JScaled,
            full_estimation_rounds: 1,
            stop_tol: None,
            qopt_max_iter: 5000,
        }
    }
}

impl LearnerConfig {
    pub fn mask(&self) -> Result<ParamMask> {
        match &self.param_mask {
            None => Ok(ParamMask::full()),
            Some(names) => ParamMask::from_names(names),
        }
    }

    pub fn validate(&self, space: &QuerySpace) -> Result<()> {
        if self.n0 == 0 || self.n_b == 0 || self.i_max == 0 {
            return Err(Error::Config("n0, n_b and i_max must be at least 1".into()));
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::Config(format!("tau must be in (0, 1], got {tau}")));
            }
        }
        if !(self.linear_increment > 0.0) {
            return Err(Error::Config("linear_increment must be positive".into()));
        }
        for (name, w) in [("p_test", &self.p_test), ("q0", &self.q0)] {
            if let Some(w) = w {
                if w.len() != space.len() {
                    return Err(Error::Config(format!("{name} has {} weights for {} queries", w.len(), space.len())));
                }
                QueryDistribution::new(w.clone()).map_err(|e| Error::Config(format!("{name}: {e}")))?;
            }
        }
        self.mask()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub n_tot: usize,
    pub estimate: LambdaParams,
    pub estimate_j: JParams,
    pub t_max: f64,
    pub n_queries: usize,
    /// Support of the optimized (pre-mixing) distribution; empty for uniform rounds.
    pub support: Vec<(usize, f64)>,
    /// The optimizer failed and the round fell back to uniform sampling.
    pub qopt_fallback: bool,
    pub loss: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub rounds: Vec<RoundRecord>,
}

impl RunRecord {
    pub fn final_estimate(&self) -> Option<LambdaParams> {
        self.rounds.last().map(|r| r.estimate)
    }
}

/// A run that stopped early; `partial` holds the completed rounds.
#[derive(Debug)]
pub struct LearnerFailure {
    pub error: Error,
    pub partial: RunRecord,
}

fn merge_masked(prior: &LambdaParams, est: &LambdaParams, mask: &ParamMask) -> LambdaParams {
    let mut a = prior.to_array();
    let e = est.to_array();
    for &i in mask.indices() {
        a[i] = e[i];
    }
    LambdaParams::from_array(a)
}

fn clamp_into_box(l: &LambdaParams, omega_max: f64) -> LambdaParams {
    let mut a = l.to_array();
    for b in 0..2 {
        a[3 * b] = a[3 * b].clamp(0.0, omega_max);
        a[3 * b + 1] = a[3 * b + 1].clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
    }
    LambdaParams::from_array(a)
}

struct Learner<'a> {
    oracle: &'a mut dyn Oracle,
    noise: &'a NoiseModel,
    cfg: &'a LearnerConfig,
    mask: ParamMask,
    prior: Option<LambdaParams>,
    obs: Observations,
    estimator: EstimatorConfig,
    record: RunRecord,
    estimate: Option<LambdaParams>,
    last_full_n: usize,
}

impl Learner<'_> {
    fn ledger(&self) -> Option<Vec<usize>> {
        let space = self.obs.space();
        self.oracle.remaining(&space.query(0))?;
        Some(space.queries().map(|q| self.oracle.remaining(&q).unwrap_or(0)).collect())
    }

    fn collect(&mut self, batch: &[usize], rng: &mut RngStream) -> Result<()> {
        for &idx in batch {
            let q = self.obs.space().query(idx);
            let o = self.oracle.measure(&q, rng)?;
            self.obs.push(idx, &o)?;
        }
        Ok(())
    }

    fn initial_guess(&self) -> Result<LambdaParams> {
        let base = baseline_estimate(&self.obs)?;
        Ok(match &self.prior {
            Some(p) if !self.mask.is_full() => merge_masked(p, &base, &self.mask),
            _ => base,
        })
    }

    fn estimate(&mut self, round: usize, rng: &mut RngStream) -> Result<(LambdaParams, Option<f64>)> {
        let omega_max = self.obs.space().omega_max();
        if self.cfg.scenario == Scenario::Baseline {
            return Ok((self.initial_guess()?, None));
        }
        let box_init = |l: &LambdaParams| clamp_into_box(l, omega_max);
        let n_tot = self.obs.n_total();
        let refined = match self.estimate {
            Some(prev) if round >= self.cfg.full_estimation_rounds => {
                let out = mle(&self.obs, self.noise, &box_init(&prev), &self.estimator.refine_only(), rng)?;
                // grown spaces have too many times for the spectral initializer
                let fixed = self.obs.space().policy() == GrowthPolicy::Fixed;
                if !fixed || n_tot < 2 * self.last_full_n {
                    return Ok((out.lambda, Some(out.loss)));
                }
                Some(out)
            }
            _ => None,
        };
        self.last_full_n = n_tot;
        let full = mle(&self.obs, self.noise, &box_init(&self.initial_guess()?), &self.estimator, rng)?;
        let best = match refined {
            Some(r) if r.loss <= full.loss => r,
            _ => full,
        };
        Ok((best.lambda, Some(best.loss)))
    }

    /// Query distribution over the whole current space for the next batch.
    fn next_distribution(&self, est: &LambdaParams, ledger: Option<&[usize]>) -> (QueryDistribution, Vec<(usize, f64)>, bool) {
        let space = self.obs.space();
        let n = space.len();
        let available: Vec<usize> = (0..n).filter(|&i| ledger.is_none_or(|l| l[i] > 0)).collect();
        let uniform = |idx: &[usize]| QueryDistribution::uniform(idx.len()).embed(idx, n);
        if !self.cfg.scenario.is_active() || available.is_empty() {
            return (uniform(&available), Vec::new(), false);
        }
        let candidates: Vec<usize> = match self.cfg.tau {
            Some(tau) => match entropy_filter(est, self.noise, space, tau) {
                Ok(keep) => {
                    let mut ok = vec![false; n];
                    keep.iter().for_each(|&i| ok[i] = true);
                    let c: Vec<usize> = available.iter().copied().filter(|&i| ok[i]).collect();
                    if c.is_empty() {
                        available.clone()
                    } else {
                        c
                    }
                }
                Err(_) => available.clone(),
            },
            None => available.clone(),
        };
        let coords = if self.mask.is_full() { self.cfg.coordinates } else { Coordinates::LambdaScaled };
        let solved = (|| -> Result<QueryDistribution> {
            let design = design_for(est, self.noise, space, &candidates, coords, &self.mask)?;
            let objective = match self.cfg.scenario {
                Scenario::HalFir => {
                    let all: Vec<usize> = (0..n).collect();
                    let full = design_for(est, self.noise, space, &all, coords, &self.mask)?;
                    let p_test = match &self.cfg.p_test {
                        // weights cover the initial space, which leads the grown one
                        Some(w) => QueryDistribution::new(w.clone())?.embed(&(0..w.len()).collect::<Vec<_>>(), n),
                        None => QueryDistribution::uniform(n),
                    };
                    Objective::FisherRatio(full.fisher(p_test.weights()))
                }
                _ => Objective::AOptimal,
            };
            let ub: Vec<f64> = candidates
                .iter()
                .map(|&i| ledger.map_or(1.0, |l| (l[i] as f64 / self.cfg.n_b as f64).min(1.0)))
                .collect();
            let opts = SolverOptions { max_iter: self.cfg.qopt_max_iter, ..SolverOptions::default() };
            Ok(optimize_design(&design, &objective, &ub, &opts)?.q)
        })();
        match solved {
            Ok(q) => {
                let support: Vec<(usize, f64)> = q.support(1e-6).into_iter().map(|(k, w)| (candidates[k], w)).collect();
                let mixed = mix_uniform(&q, self.obs.n_total());
                (mixed.embed(&candidates, n), support, false)
            }
            Err(_) => (uniform(&candidates), Vec::new(), true),
        }
    }

    fn push_round(&mut self, round: usize, est: LambdaParams, loss: Option<f64>, support: Vec<(usize, f64)>, fallback: bool, start: Instant) {
        let space = self.obs.space();
        self.record.rounds.push(RoundRecord {
            round,
            n_tot: self.obs.n_total(),
            estimate: est,
            estimate_j: lambda_to_j(&est),
            t_max: space.t_max(),
            n_queries: space.len(),
            support,
            qopt_fallback: fallback,
            loss,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        self.estimate = Some(est);
    }

    fn run(&mut self, rng: &mut RngStream) -> Result<()> {
        let start = Instant::now();
        let n = self.obs.space().len();
        let ledger = self.ledger();
        let q0 = match &self.cfg.q0 {
            Some(w) => QueryDistribution::new(w.clone())?,
            None => QueryDistribution::uniform(n),
        };
        let batch = sample_batch(&q0, self.cfg.n0, ledger.as_deref(), rng)?;
        self.collect(&batch, rng)?;
        let (est, loss) = self.estimate(0, rng)?;
        self.push_round(0, est, loss, Vec::new(), false, start);

        for round in 1..=self.cfg.i_max {
            let start = Instant::now();
            let prev = self.estimate.expect("round 0 recorded");
            if self.obs.space().policy() != GrowthPolicy::Fixed {
                let grown = self.obs.space().grow()?;
                self.obs.set_space(grown)?;
            }
            let ledger = self.ledger();
            let (qdist, support, fallback) = self.next_distribution(&prev, ledger.as_deref());
            let batch = sample_batch(&qdist, self.cfg.n_b, ledger.as_deref(), rng)?;
            self.collect(&batch, rng)?;
            let (est, loss) = self.estimate(round, rng)?;
            self.push_round(round, est, loss, support, fallback, start);
            if let Some(tol) = self.cfg.stop_tol {
                let change = crate::metrics::normalized_error(
                    &lambda_to_j(&est).to_array(),
                    &lambda_to_j(&prev).to_array(),
                    &[crate::fisher::XI; 6],
                );
                if change < tol {
                    break;
                }
            }
        }
        Ok(())
    }
}

/// Runs one learner trajectory. `noise` is the learner's model of the device;
/// `prior` holds the calibration values of components outside the mask.
pub fn run_learner(
    oracle: &mut dyn Oracle,
    noise: &NoiseModel,
    space: &QuerySpace,
    cfg: &LearnerConfig,
    prior: Option<&LambdaParams>,
    rng: &mut RngStream,
) -> std::result::Result<RunRecord, Box<LearnerFailure>> {
    let fail = |error: Error, scenario| Box::new(LearnerFailure { error, partial: RunRecord { scenario, rounds: Vec::new() } });
    if let Err(e) = cfg.validate(space).and_then(|_| noise.validate()) {
        return Err(fail(e, cfg.scenario));
    }
    if oracle.readout_kind() != noise.readout.kind() {
        return Err(fail(Error::ModelKind { expected: noise.readout.kind() }, cfg.scenario));
    }
    let mask = match cfg.mask() {
        Ok(m) => m,
        Err(e) => return Err(fail(e, cfg.scenario)),
    };
    if !mask.is_full() && prior.is_none() {
        return Err(fail(Error::Config("a parameter mask needs prior calibration values".into()), cfg.scenario));
    }
    // the baseline knows only the readout channel
    let learner_noise = if cfg.scenario == Scenario::Baseline {
        NoiseModel { readout: noise.readout.clone(), ..NoiseModel::noiseless() }
    } else {
        noise.clone()
    };
    let readout: ReadoutModel = noise.readout.clone();
    let space = space.clone().with_policy(cfg.scenario.growth(cfg.linear_increment));
    let estimator = EstimatorConfig { mask: mask.clone(), ..EstimatorConfig::default() };
    let mut learner = Learner {
        oracle,
        noise: &learner_noise,
        cfg,
        mask,
        prior: prior.copied(),
        obs: Observations::new(space, readout),
        estimator,
        record: RunRecord { scenario: cfg.scenario, rounds: Vec::new() },
        estimate: None,
        last_full_n: 0,
    };
    match learner.run(rng) {
        Ok(()) => Ok(learner.record),
        Err(error) => Err(Box::new(LearnerFailure { error, partial: learner.record })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_policies() {
        assert_eq!(Scenario::HalFiFixed.growth(5e-7), GrowthPolicy::Fixed);
        assert_eq!(Scenario::HalFiExpT.growth(5e-7), GrowthPolicy::ExponentialT);
        assert!(Scenario::HalFir.is_active());
        assert!(!Scenario::Baseline.is_active());
    }

    #[test]
    fn config_validation() {
        let space = QuerySpace::default_grid(GrowthPolicy::Fixed);
        let cfg = LearnerConfig { n_b: 0, ..Default::default() };
        assert!(cfg.validate(&space).is_err());
        let cfg = LearnerConfig { p_test: Some(vec![1.0]), ..Default::default() };
        assert!(cfg.validate(&space).is_err());
        let cfg = LearnerConfig { param_mask: Some(vec!["omega9".into()]), ..Default::default() };
        assert!(cfg.validate(&space).is_err());
        assert!(LearnerConfig::default().validate(&space).is_ok());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let r: std::result::Result<LearnerConfig, _> = serde_json::from_str(r#"{"scenario":"Passive","bogus":1}"#);
        assert!(r.is_err());
        let c: LearnerConfig = serde_json::from_str(r#"{"scenario":"HalFiExpT","n_b":972}"#).unwrap();
        assert_eq!(c.n_b, 972);
        assert_eq!(c.n0, 2430);
    }
}
