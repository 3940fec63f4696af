//! Limited-memory BFGS with a strong Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search: usize,
    /// Stop once `|g|_∞` falls to this.
    pub grad_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 50,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
            grad_tol: 1e-9,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(format!(
                "Wolfe constants need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.c1, self.c2
            ));
        }
        if self.memory == 0 || self.max_line_search == 0 {
            return Err("memory and max_line_search must be positive".into());
        }
        if !(self.grad_tol >= 0.0) {
            return Err("grad_tol must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradTol,
    MaxIter,
    /// No step satisfying the Wolfe conditions was found.
    LineSearch,
}

pub struct LbfgsOutcome<T> {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    /// Payload of the evaluation at `x`.
    pub payload: T,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
}

struct Sample<T> {
    f: f64,
    g: Vec<f64>,
    dphi: f64,
    payload: T,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Minimizer of the cubic through two points with slopes, kept in `bounds`.
fn cubic_min(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, bounds: (f64, f64)) -> f64 {
    let (lo, hi) = if bounds.0 <= bounds.1 {
        bounds
    } else {
        (bounds.1, bounds.0)
    };
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2sq = d1 * d1 - g1 * g2;
    if d2sq >= 0.0 && d2sq.is_finite() {
        let d2 = d2sq.sqrt();
        let m = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if m.is_finite() {
            return m.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

/// Minimize `f` from `x0` for at most `max_iter` iterations. `f` returns
/// value, gradient and a payload; `on_iter` sees every accepted iterate
/// and may abort the run with an error.
/// Evaluation errors at trial points count as an infinite value; an error
/// at `x0` is returned.
pub fn lbfgs_minimize<T, E, F, C>(
    mut f: F,
    x0: Vec<f64>,
    cfg: &LbfgsConfig,
    max_iter: usize,
    mut on_iter: C,
) -> Result<LbfgsOutcome<T>, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>, T), E>,
    C: FnMut(usize, &[f64], f64, &T) -> Result<(), E>,
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g, mut payload) = f(&x)?;
    let mut evaluations = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;
    let mut d = vec![0.0; n];
    let stop = loop {
        if inf_norm(&g) <= cfg.grad_tol {
            break StopReason::GradTol;
        }
        if iterations >= max_iter {
            break StopReason::MaxIter;
        }
        two_loop(&g, &hist, &mut d);
        let mut dphi0 = dot(&g, &d);
        if !(dphi0 < 0.0) {
            hist.clear();
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            dphi0 = dot(&g, &d);
        }
        let alpha0 = if hist.is_empty() {
            (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };
        let mut trial = vec![0.0; n];
        let mut eval = |alpha: f64| -> Option<Sample<T>> {
            for i in 0..n {
                trial[i] = x[i] + alpha * d[i];
            }
            evaluations += 1;
            match f(&trial) {
                Ok((fv, gv, p)) if fv.is_finite() => {
                    let dphi = dot(&gv, &d);
                    Some(Sample {
                        f: fv,
                        g: gv,
                        dphi,
                        payload: p,
                    })
                }
                _ => None,
            }
        };
        let Some((alpha, s)) = strong_wolfe(&mut eval, fx, dphi0, alpha0, cfg) else {
            break StopReason::LineSearch;
        };
        let step: Vec<f64> = d.iter().map(|v| alpha * v).collect();
        let y: Vec<f64> = s.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&step, &y);
        for i in 0..n {
            x[i] += step[i];
        }
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) && sy > 0.0 {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((step, y, 1.0 / sy));
        }
        fx = s.f;
        g = s.g;
        payload = s.payload;
        iterations += 1;
        on_iter(iterations, &x, fx, &payload)?;
    };
    Ok(LbfgsOutcome {
        x,
        f: fx,
        grad: g,
        payload,
        iterations,
        evaluations,
        stop,
    })
}

/// `d = -H g` via the two-loop recursion.
fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, d: &mut [f64]) {
    for (di, gi) in d.iter_mut().zip(g) {
        *di = -gi;
    }
    let mut alphas = vec![0.0; hist.len()];
    for (k, (s, y, rho)) in hist.iter().enumerate().rev() {
        let a = rho * dot(s, d);
        alphas[k] = a;
        for (di, yi) in d.iter_mut().zip(y) {
            *di -= a * yi;
        }
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        for di in d.iter_mut() {
            *di *= gamma;
        }
    }
    for (k, (s, y, rho)) in hist.iter().enumerate() {
        let b = rho * dot(y, d);
        for (di, si) in d.iter_mut().zip(s) {
            *di += (alphas[k] - b) * si;
        }
    }
}

struct Bracket<T> {
    alpha: f64,
    f: f64,
    dphi: f64,
    sample: Option<Sample<T>>,
}

fn strong_wolfe<T>(
    eval: &mut impl FnMut(f64) -> Option<Sample<T>>,
    f0: f64,
    dphi0: f64,
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Option<(f64, Sample<T>)> {
    let armijo = |alpha: f64, f: f64| f <= f0 + cfg.c1 * alpha * dphi0;
    let curvature = |dphi: f64| dphi.abs() <= -cfg.c2 * dphi0;
    let mut prev = Bracket {
        alpha: 0.0,
        f: f0,
        dphi: dphi0,
        sample: None,
    };
    let mut alpha = alpha0;
    let mut budget = cfg.max_line_search;
    while budget > 0 {
        budget -= 1;
        let s = eval(alpha);
        let (f, dphi) = s
            .as_ref()
            .map_or((f64::INFINITY, f64::NAN), |s| (s.f, s.dphi));
        let cur = Bracket {
            alpha,
            f,
            dphi,
            sample: s,
        };
        if !armijo(alpha, f) || (prev.alpha > 0.0 && f >= prev.f) {
            return zoom(eval, prev, cur, f0, dphi0, budget, cfg);
        }
        if curvature(dphi) {
            return cur.sample.map(|s| (alpha, s));
        }
        if dphi >= 0.0 {
            return zoom(eval, cur, prev, f0, dphi0, budget, cfg);
        }
        let next = cubic_min(
            prev.alpha,
            prev.f,
            prev.dphi,
            alpha,
            f,
            dphi,
            (alpha * 1.01, alpha * 10.0),
        );
        prev = cur;
        alpha = next;
    }
    prev.sample.map(|s| (prev.alpha, s))
}

/// `lo` satisfies sufficient decrease with the lower value; the minimizer
/// lies between `lo` and `hi`.
fn zoom<T>(
    eval: &mut impl FnMut(f64) -> Option<Sample<T>>,
    mut lo: Bracket<T>,
    mut hi: Bracket<T>,
    f0: f64,
    dphi0: f64,
    mut budget: usize,
    cfg: &LbfgsConfig,
) -> Option<(f64, Sample<T>)> {
    while budget > 0 {
        budget -= 1;
        let width = (hi.alpha - lo.alpha).abs();
        if width < 1e-14 * lo.alpha.abs().max(hi.alpha.abs()).max(1e-300) {
            break;
        }
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let inner = (a + 0.1 * width, b - 0.1 * width);
        let alpha = if hi.f.is_finite() && hi.dphi.is_finite() {
            cubic_min(lo.alpha, lo.f, lo.dphi, hi.alpha, hi.f, hi.dphi, inner)
        } else {
            0.5 * (lo.alpha + hi.alpha)
        };
        let s = eval(alpha);
        let (f, dphi) = s
            .as_ref()
            .map_or((f64::INFINITY, f64::NAN), |s| (s.f, s.dphi));
        let cur = Bracket {
            alpha,
            f,
            dphi,
            sample: s,
        };
        if f > f0 + cfg.c1 * alpha * dphi0 || f >= lo.f {
            hi = cur;
        } else {
            if dphi.abs() <= -cfg.c2 * dphi0 {
                return cur.sample.map(|s| (alpha, s));
            }
            if dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // Out of budget: fall back to the best sufficient-decrease point.
    if lo.alpha > 0.0 {
        lo.sample.map(|s| (lo.alpha, s))
    } else {
        None
    }
}
