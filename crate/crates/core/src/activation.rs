//! Bestel–Clément–Sorine activation: `Ṡ = -|a| S + σ0 |a|+`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ActivationError {
    #[error("invalid activation parameters: {0}")]
    InvalidParams(String),
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("negative amplitude {0}")]
    NegativeSigma(f64),
    #[error("unit activation vanishes at t* = {t} (S = {s:e}); amplitude not identifiable")]
    NonIdentifiableTime { t: f64, s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcsParams {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub t_sys: f64,
    pub t_dias: f64,
    pub gamma_smooth: f64,
    pub sigma0: f64,
}

impl Default for BcsParams {
    fn default() -> Self {
        BcsParams {
            alpha_min: -30.0,
            alpha_max: 5.0,
            t_sys: 0.161,
            t_dias: 0.484,
            gamma_smooth: 0.005,
            sigma0: 1.0,
        }
    }
}

impl BcsParams {
    pub fn validate(&self) -> Result<(), ActivationError> {
        if !(self.t_sys < self.t_dias) {
            return Err(ActivationError::InvalidParams(
                "t_sys must precede t_dias".into(),
            ));
        }
        if !(self.gamma_smooth > 0.0) {
            return Err(ActivationError::InvalidParams(
                "gamma_smooth must be positive".into(),
            ));
        }
        if !(self.sigma0 >= 0.0) {
            return Err(ActivationError::NegativeSigma(self.sigma0));
        }
        Ok(())
    }
}

/// Smoothed switch `½(1 ± tanh(Δ/γ))`.
fn switch<R: Real>(dt: R, gamma: f64, sign: f64) -> R {
    ((dt / gamma).tanh() * sign + 1.0) * 0.5
}

/// Control rate `a(t) = α_max f(t) + α_min (1 - f(t))`, `f = S⁺(t - t_sys) S⁻(t - t_dias)`.
pub fn control_a_real<R: Real>(t: R, p: &BcsParams) -> R {
    let f = switch(t - p.t_sys, p.gamma_smooth, 1.0) * switch(t - p.t_dias, p.gamma_smooth, -1.0);
    f * (p.alpha_max - p.alpha_min) + p.alpha_min
}

pub fn control_a(t: f64, p: &BcsParams) -> f64 {
    control_a_real(t, p)
}

/// Right-hand side and its derivative in `S`.
fn rhs(t: f64, s: f64, p: &BcsParams) -> (f64, f64) {
    let a = control_a(t, p);
    (-a.abs() * s + p.sigma0 * a.max(0.0), -a.abs())
}

/// Frozen `t -> S(t)` map: monotone cubic Hermite through solver knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationCurve {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub sigma0: f64,
}

impl ActivationCurve {
    fn new(knots: Vec<f64>, values: Vec<f64>, mut slopes: Vec<f64>, sigma0: f64) -> Self {
        limit_slopes(&knots, &values, &mut slopes);
        ActivationCurve {
            knots,
            values,
            slopes,
            sigma0,
        }
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Evaluate over any scalar; time outside the knot range is clamped.
    pub fn eval_real<R: Real>(&self, t: R) -> R {
        let n = self.knots.len();
        let tv = t.value();
        if tv <= self.knots[0] {
            return R::cst(self.values[0]);
        }
        if tv >= self.knots[n - 1] {
            return R::cst(self.values[n - 1]);
        }
        let k = self.knots.partition_point(|&x| x <= tv) - 1;
        let h = self.knots[k + 1] - self.knots[k];
        let s = (t - self.knots[k]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = s3 * 2.0 - s2 * 3.0 + 1.0;
        let h10 = s3 - s2 * 2.0 + s;
        let h01 = s2 * 3.0 - s3 * 2.0;
        let h11 = s3 - s2;
        h00 * self.values[k]
            + h10 * (h * self.slopes[k])
            + h01 * self.values[k + 1]
            + h11 * (h * self.slopes[k + 1])
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_real(t)
    }

    /// Value, first and second time derivative.
    pub fn eval_jet(&self, t: f64) -> (f64, f64, f64) {
        let x: Dual<Dual<f64, 1>, 1> = Dual {
            re: Dual::variable(t, 0),
            eps: [Dual::constant(1.0)],
        };
        let y = self.eval_real(x);
        (y.re.re, y.re.eps[0], y.eps[0].eps[0])
    }

    /// Two-column CSV `t,S`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,S")?;
        for (t, s) in self.knots.iter().zip(&self.values) {
            writeln!(w, "{t},{s}")?;
        }
        Ok(())
    }
}

/// Fritsch–Carlson limiter: keeps the interpolant monotone between knots.
fn limit_slopes(t: &[f64], y: &[f64], m: &mut [f64]) {
    for k in 0..t.len().saturating_sub(1) {
        let d = (y[k + 1] - y[k]) / (t[k + 1] - t[k]);
        if d == 0.0 {
            m[k] = 0.0;
            m[k + 1] = 0.0;
            continue;
        }
        let a = m[k] / d;
        let b = m[k + 1] / d;
        if a < 0.0 {
            m[k] = 0.0;
        }
        if b < 0.0 {
            m[k + 1] = 0.0;
        }
        let (a, b) = (a.max(0.0), b.max(0.0));
        let r = a * a + b * b;
        if r > 9.0 {
            let tau = 3.0 / r.sqrt();
            m[k] = tau * a * d;
            m[k + 1] = tau * b * d;
        }
    }
}

const SQ6: f64 = 2.449_489_742_783_178;

struct Radau {
    c: [f64; 3],
    a: [[f64; 3]; 3],
}

impl Radau {
    fn new() -> Self {
        Radau {
            c: [(4.0 - SQ6) / 10.0, (4.0 + SQ6) / 10.0, 1.0],
            a: [
                [
                    (88.0 - 7.0 * SQ6) / 360.0,
                    (296.0 - 169.0 * SQ6) / 1800.0,
                    (-2.0 + 3.0 * SQ6) / 225.0,
                ],
                [
                    (296.0 + 169.0 * SQ6) / 1800.0,
                    (88.0 + 7.0 * SQ6) / 360.0,
                    (-2.0 - 3.0 * SQ6) / 225.0,
                ],
                [(16.0 - SQ6) / 36.0, (16.0 + SQ6) / 36.0, 1.0 / 9.0],
            ],
        }
    }

    /// One Radau IIA step; the stage equations are solved by Newton with the
    /// exact scalar Jacobian at each stage.
    fn step(&self, t: f64, y: f64, h: f64, p: &BcsParams) -> Option<f64> {
        let mut z = [0.0; 3];
        for _ in 0..10 {
            let mut fz = [0.0; 3];
            let mut jz = [0.0; 3];
            for i in 0..3 {
                let (f, j) = rhs(t + self.c[i] * h, y + z[i], p);
                fz[i] = f;
                jz[i] = j;
            }
            let mut res = [0.0; 3];
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                res[i] = z[i];
                for k in 0..3 {
                    res[i] -= h * self.a[i][k] * fz[k];
                    m[i][k] = -h * self.a[i][k] * jz[k] + if i == k { 1.0 } else { 0.0 };
                }
            }
            let dz = solve3(m, res)?;
            let mut norm = 0.0f64;
            for i in 0..3 {
                z[i] -= dz[i];
                norm = norm.max(dz[i].abs());
            }
            if norm <= 1e-15 * (1.0 + y.abs() + p.sigma0) {
                break;
            }
        }
        Some(y + z[2])
    }
}

fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for c in 0..3 {
        let piv = (c..3).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[piv][c] == 0.0 {
            return None;
        }
        m.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..3 {
            let f = m[r][c] / m[c][c];
            for k in c..3 {
                m[r][k] -= f * m[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let mut s = b[r];
        for k in r + 1..3 {
            s -= m[r][k] * x[k];
        }
        x[r] = s / m[r][r];
    }
    Some(x)
}

/// Largest step the integrator takes, below the control transition width.
pub const MAX_STEP: f64 = 2e-3;

/// Integrate from `S(0) = 0` to `horizon` with local error `tol` relative to `σ0`.
///
/// Error is estimated by step doubling; the half-step points are kept as knots.
pub fn solve_bcs(
    p: &BcsParams,
    horizon: f64,
    tol: f64,
) -> Result<ActivationCurve, ActivationError> {
    solve_bcs_with_max_step(p, horizon, tol, MAX_STEP)
}

pub fn solve_bcs_with_max_step(
    p: &BcsParams,
    horizon: f64,
    tol: f64,
    max_step: f64,
) -> Result<ActivationCurve, ActivationError> {
    p.validate()?;
    if !(horizon > 0.0) {
        return Err(ActivationError::InvalidParams(
            "horizon must be positive".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(ActivationError::InvalidParams(
            "tolerance must be positive".into(),
        ));
    }
    if p.sigma0 == 0.0 {
        let knots: Vec<f64> = (0..=((horizon / max_step).ceil() as usize))
            .map(|i| (i as f64 * max_step).min(horizon))
            .collect();
        let n = knots.len();
        return Ok(ActivationCurve::new(knots, vec![0.0; n], vec![0.0; n], 0.0));
    }
    let radau = Radau::new();
    // Error is measured in units of σ0 so the step sequence does not depend
    // on the amplitude.
    let scale = p.sigma0;
    let mut t = 0.0;
    let mut y = 0.0;
    let mut h = max_step.min(horizon) * 0.25;
    let mut knots = vec![0.0];
    let mut values = vec![0.0];
    // |a| has kinks where the control changes sign; steps end exactly there.
    let mut breaks = control_sign_changes(p, horizon);
    breaks.push(horizon);
    let mut next = 0;
    while t < horizon {
        while breaks[next] <= t {
            next += 1;
        }
        let stop = breaks[next];
        if t + h > stop {
            h = stop - t;
        }
        if h < 1e-14 * horizon.max(1.0) {
            return Err(ActivationError::StepUnderflow { t });
        }
        let full = radau.step(t, y, h, p);
        let half = radau.step(t, y, 0.5 * h, p);
        let (Some(full), Some(half)) = (full, half) else {
            h *= 0.25;
            continue;
        };
        let Some(two) = radau.step(t + 0.5 * h, half, 0.5 * h, p) else {
            h *= 0.25;
            continue;
        };
        let err = (two - full).abs() / 31.0 / scale;
        if err <= tol {
            knots.push(t + 0.5 * h);
            values.push(half);
            t = if t + h >= stop { stop } else { t + h };
            y = two;
            knots.push(t);
            values.push(y);
        }
        let fac = if err == 0.0 {
            4.0
        } else {
            (0.9 * (tol / err).powf(1.0 / 6.0)).clamp(0.2, 4.0)
        };
        h = (h * fac).min(max_step);
    }
    let slopes = knots
        .iter()
        .zip(&values)
        .map(|(&t, &s)| rhs(t, s, p).0)
        .collect();
    Ok(ActivationCurve::new(knots, values, slopes, p.sigma0))
}

/// Times in `(0, horizon)` where `a(t)` changes sign, to bisection precision.
fn control_sign_changes(p: &BcsParams, horizon: f64) -> Vec<f64> {
    let dt = p.gamma_smooth / 8.0;
    let n = (horizon / dt).ceil() as usize;
    let mut out = Vec::new();
    let mut lo = 0.0;
    let mut a_lo = control_a(lo, p);
    for i in 1..=n {
        let hi = (i as f64 * dt).min(horizon);
        let a_hi = control_a(hi, p);
        if (a_lo < 0.0) != (a_hi < 0.0) {
            let (mut l, mut r) = (lo, hi);
            for _ in 0..200 {
                let m = 0.5 * (l + r);
                if m <= l || m >= r {
                    break;
                }
                if (control_a(m, p) < 0.0) == (a_lo < 0.0) {
                    l = m;
                } else {
                    r = m;
                }
            }
            if r < horizon {
                out.push(r);
            }
        }
        lo = hi;
        a_lo = a_hi;
    }
    out
}

/// Pointwise `σ S¹(t)`.
pub fn rescale(curve: &ActivationCurve, sigma: f64) -> Result<ActivationCurve, ActivationError> {
    if !(sigma >= 0.0) {
        return Err(ActivationError::NegativeSigma(sigma));
    }
    Ok(ActivationCurve {
        knots: curve.knots.clone(),
        values: curve.values.iter().map(|v| v * sigma).collect(),
        slopes: curve.slopes.iter().map(|v| v * sigma).collect(),
        sigma0: curve.sigma0 * sigma,
    })
}

/// `σ0 = S(t*) / S¹(t*)`.
pub fn reconstruct_sigma0(
    sa_at_tstar: f64,
    tstar: f64,
    unit_curve: &ActivationCurve,
) -> Result<f64, ActivationError> {
    let s = unit_curve.eval(tstar);
    if !(s > 1e-10) {
        return Err(ActivationError::NonIdentifiableTime { t: tstar, s });
    }
    Ok(sa_at_tstar / s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_limits() {
        let p = BcsParams::default();
        assert!((control_a(0.05, &p) - p.alpha_min).abs() < 1e-9);
        assert!((control_a(0.3, &p) - p.alpha_max).abs() < 1e-9);
        assert!((control_a(0.7, &p) - p.alpha_min).abs() < 1e-9);
    }

    #[test]
    fn zero_amplitude_is_zero_curve() {
        let p = BcsParams {
            sigma0: 0.0,
            ..Default::default()
        };
        let c = solve_bcs(&p, 0.6, 1e-9).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_positive_control_is_exponential() {
        // α_min = α_max = c makes a(t) ≡ c.
        let c = 5.0;
        let p = BcsParams {
            alpha_min: c,
            alpha_max: c,
            sigma0: 2.0,
            ..Default::default()
        };
        let curve = solve_bcs(&p, 0.6, 1e-9).unwrap();
        for (&t, &s) in curve.knots.iter().zip(&curve.values) {
            assert!((s - 2.0 * (1.0 - (-c * t).exp())).abs() < 1e-8);
        }
    }

    #[test]
    fn reconstruction() {
        let c = solve_bcs(&BcsParams::default(), 0.6, 1e-9).unwrap();
        let s = c.eval(0.3);
        assert!((reconstruct_sigma0(s, 0.3, &c).unwrap() - 1.0).abs() < 1e-15);
        assert!((reconstruct_sigma0(3.0 * s, 0.3, &c).unwrap() - 3.0).abs() < 1e-14);
        assert!(reconstruct_sigma0(0.0, 0.05, &c).is_err());
        assert!(rescale(&c, -1.0).is_err());
    }

    #[test]
    fn interpolant_hits_knots() {
        let c = solve_bcs(&BcsParams::default(), 0.6, 1e-9).unwrap();
        for (&t, &s) in c.knots.iter().zip(&c.values) {
            assert_eq!(c.eval(t), s);
        }
    }
}
