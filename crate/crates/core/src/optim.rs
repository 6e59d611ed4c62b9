//! Small numerical optimizers: Adam, a projected limited-memory quasi-Newton
//! method for box constraints, and golden-section search.

use std::collections::VecDeque;

/// Box constraints; `lower[i] <= x[i] <= upper[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn unbounded(n: usize) -> Self {
        Self::new(vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n])
    }

    pub fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    /// Infinity norm of the projected gradient `P(x - g) - x`.
    pub fn projected_gradient_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        x.iter()
            .zip(g)
            .enumerate()
            .map(|(i, (xi, gi))| ((xi - gi).clamp(self.lower[i], self.upper[i]) - xi).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { step: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Self { cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            x[i] -= c.step * mh / (vh.sqrt() + c.eps);
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsbConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the projected-gradient infinity norm falls below this.
    pub pg_tol: f64,
    /// Stop on relative objective decrease below this.
    pub f_tol: f64,
}

impl Default for LbfgsbConfig {
    fn default() -> Self {
        Self { memory: 10, max_iter: 500, pg_tol: 1e-8, f_tol: 1e-12 }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected L-BFGS for box constraints. `fg` returns the value and gradient,
/// or `None` when the objective is undefined at the point.
pub fn lbfgsb<F>(mut fg: F, x0: &[f64], bounds: &Bounds, cfg: &LbfgsbConfig) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut f, mut g) = fg(&x)?;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = false;
    let mut iterations = 0;
    let at_bound = |x: &[f64], g: &[f64], i: usize| {
        (x[i] <= bounds.lower[i] && g[i] > 0.0) || (x[i] >= bounds.upper[i] && g[i] < 0.0)
    };
    while iterations < cfg.max_iter {
        if bounds.projected_gradient_norm(&x, &g) <= cfg.pg_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let free: Vec<bool> = (0..n).map(|i| !at_bound(&x, &g, i)).collect();
        // two-loop recursion restricted to the free variables
        let mut d: Vec<f64> = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot_masked(s, &d, &free);
            for i in 0..n {
                if free[i] {
                    d[i] -= a * y[i];
                }
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let yy = dot_masked(y, y, &free);
            let sy = dot_masked(s, y, &free);
            if yy > 0.0 && sy > 0.0 {
                d.iter_mut().for_each(|v| *v *= sy / yy);
            }
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot_masked(y, &d, &free);
            for i in 0..n {
                if free[i] {
                    d[i] += (a - b) * s[i];
                }
            }
        }
        if dot(&d, &g) >= 0.0 {
            hist.clear();
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        }
        if hist.is_empty() {
            let norm = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if norm > 0.0 {
                d.iter_mut().for_each(|v| *v /= norm.max(1.0));
            }
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            bounds.project(&mut trial);
            let dec = dot(&g, &trial.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
            if dec < 0.0 {
                if let Some((ft, gt)) = fg(&trial) {
                    if ft.is_finite() && ft <= f + 1e-4 * dec {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
            } else if dec == 0.0 {
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if hist.is_empty() {
                break;
            }
            hist.clear();
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            hist.push_back((s, y, 1.0 / sy));
            if hist.len() > cfg.memory {
                hist.pop_front();
            }
        }
        let rel = (f - fnew) / f.abs().max(1.0);
        x = xn;
        f = fnew;
        g = gn;
        if rel <= cfg.f_tol {
            converged = true;
            break;
        }
    }
    Some(Minimum { x, value: f, iterations, converged })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot_masked(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    a.iter().zip(b).zip(mask).filter(|(_, m)| **m).map(|((x, y), _)| x * y).sum()
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while (hi - lo).abs() > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Some((f, g))
    }

    #[test]
    fn rosenbrock_unbounded() {
        let m = lbfgsb(rosenbrock, &[-1.2, 1.0], &Bounds::unbounded(2), &LbfgsbConfig { max_iter: 2000, f_tol: 0.0, ..Default::default() }).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m);
    }

    #[test]
    fn active_bound() {
        let b = Bounds::new(vec![-2.0, -2.0], vec![0.5, 2.0]);
        let m = lbfgsb(rosenbrock, &[-1.2, 1.0], &b, &LbfgsbConfig { max_iter: 2000, f_tol: 0.0, ..Default::default() }).unwrap();
        assert!((m.x[0] - 0.5).abs() < 1e-8);
        assert!((m.x[1] - 0.25).abs() < 1e-5);
    }

    #[test]
    fn adam_on_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2, AdamConfig { step: 0.05, ..Default::default() });
        for _ in 0..3000 {
            let g = vec![2.0 * x[0], 8.0 * x[1]];
            opt.step(&mut x, &g);
        }
        assert!(x[0].abs() < 1e-3 && x[1].abs() < 1e-3);
    }

    #[test]
    fn golden_quadratic() {
        let (x, _) = golden_section(|x| (x - 0.3).powi(2), -1.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
    }
}
