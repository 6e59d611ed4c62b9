//! Query spaces `M x U x T` over a gridded set of evolution times.

use crate::error::{Error, Result};
use crate::model::{nyquist_omega, Measurement, Preparation, Query};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum GrowthPolicy {
    Fixed,
    /// Extend `t_max` by `increment` seconds per growth step.
    LinearT { increment: f64 },
    /// Double `t_max` per growth step.
    ExponentialT,
}

pub const DEFAULT_LINEAR_INCREMENT: f64 = 5e-7;
pub const QUERIES_PER_TIME: usize = 6;

/// Queries are laid out time-major, so growing the grid only appends indices.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySpace {
    times: Vec<f64>,
    dt: f64,
    policy: GrowthPolicy,
}

impl QuerySpace {
    pub fn uniform_grid(t_min: f64, t_max: f64, n_times: usize, policy: GrowthPolicy) -> Result<Self> {
        if n_times < 2 || !(t_min > 0.0) || !(t_max > t_min) {
            return Err(Error::Config(format!("invalid time grid [{t_min}, {t_max}] with {n_times} points")));
        }
        let dt = (t_max - t_min) / (n_times - 1) as f64;
        let times = (0..n_times).map(|k| t_min + k as f64 * dt).collect();
        Ok(Self { times, dt, policy })
    }

    /// 81 equispaced times in `[1e-7, 6e-7]` s, 486 queries.
    pub fn default_grid(policy: GrowthPolicy) -> Self {
        Self::uniform_grid(1e-7, 6e-7, 81, policy).expect("static grid")
    }

    /// Space over an explicit strictly increasing list of times; the growth
    /// spacing is the smallest gap.
    pub fn from_times(times: Vec<f64>, policy: GrowthPolicy) -> Result<Self> {
        if times.is_empty() || times[0] <= 0.0 {
            return Err(Error::Config("time grid must be nonempty and positive".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("time grid must be strictly increasing".into()));
        }
        let dt = times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let dt = if dt.is_finite() { dt } else { times[0] };
        Ok(Self { times, dt, policy })
    }

    pub fn with_policy(mut self, policy: GrowthPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn len(&self) -> usize {
        QUERIES_PER_TIME * self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_min(&self) -> f64 {
        self.times[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().expect("nonempty grid")
    }

    pub fn policy(&self) -> GrowthPolicy {
        self.policy
    }

    pub fn omega_max(&self) -> f64 {
        nyquist_omega(self.dt)
    }

    pub fn query(&self, idx: usize) -> Query {
        let k = idx / QUERIES_PER_TIME;
        let r = idx % QUERIES_PER_TIME;
        Query::new(Measurement::ALL[r / 2], Preparation::ALL[r % 2], self.times[k])
    }

    pub fn queries(&self) -> impl Iterator<Item = Query> + '_ {
        (0..self.len()).map(|i| self.query(i))
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        let tol = 1e-6 * self.dt;
        let k = self.times.partition_point(|&x| x < t - tol);
        (k < self.times.len() && (self.times[k] - t).abs() <= tol).then_some(k)
    }

    pub fn index_of(&self, q: &Query) -> Option<usize> {
        self.time_index(q.t)
            .map(|k| QUERIES_PER_TIME * k + 2 * q.meas.index() + q.prep.block())
    }

    /// Next space of the growth sequence; the current grid is a prefix of the result.
    pub fn grow(&self) -> Result<QuerySpace> {
        let extra = match self.policy {
            GrowthPolicy::Fixed => return Err(Error::Policy),
            GrowthPolicy::LinearT { increment } => (increment / self.dt).round() as usize,
            GrowthPolicy::ExponentialT => ((self.t_max() / self.dt).round() as usize).max(1),
        };
        let mut times = self.times.clone();
        let base = self.t_max();
        times.extend((1..=extra).map(|i| base + i as f64 * self.dt));
        Ok(QuerySpace { times, dt: self.dt, policy: self.policy })
    }
}

pub fn grow_space(space: &QuerySpace) -> Result<QuerySpace> {
    space.grow()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_size() {
        let s = QuerySpace::default_grid(GrowthPolicy::Fixed);
        assert_eq!(s.len(), 486);
        assert!((s.dt() - 6.25e-9).abs() < 1e-20);
        assert!((s.t_max() - 6e-7).abs() < 1e-20);
    }

    #[test]
    fn index_round_trip() {
        let s = QuerySpace::default_grid(GrowthPolicy::Fixed);
        for i in 0..s.len() {
            assert_eq!(s.index_of(&s.query(i)), Some(i));
        }
        assert_eq!(s.index_of(&Query::new(Measurement::X, Preparation::U0, 1.03e-7)), None);
    }

    #[test]
    fn fixed_cannot_grow() {
        assert_eq!(QuerySpace::default_grid(GrowthPolicy::Fixed).grow(), Err(Error::Policy));
    }

    #[test]
    fn linear_growth_adds_eighty() {
        let s = QuerySpace::default_grid(GrowthPolicy::LinearT { increment: DEFAULT_LINEAR_INCREMENT });
        let g = s.grow().unwrap();
        assert_eq!(g.n_times(), 161);
        assert!((g.t_max() - 1.1e-6).abs() < 1e-15);
        assert_eq!(&g.times()[..81], s.times());
    }

    #[test]
    fn exponential_growth_doubles() {
        let s = QuerySpace::default_grid(GrowthPolicy::ExponentialT);
        let g1 = s.grow().unwrap();
        let g2 = g1.grow().unwrap();
        assert!((g1.t_max() - 1.2e-6).abs() < 1e-15);
        assert!((g2.t_max() - 2.4e-6).abs() < 1e-15);
        assert!((g2.dt() - s.dt()).abs() < 1e-24);
    }
}
