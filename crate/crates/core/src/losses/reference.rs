//! Loss terms written once over any [`Real`].
//!
//! With `f64` these are the value-only loss functions; over tape variables
//! they give reference gradients for the batched evaluator.

use std::ops::Range;

use super::{BcdSet, BcnSet, LossError, LossWeights, ObsSet, PdeSet, Physics, PointSets, RobinSet};
use crate::autodiff::{seed_spatial_real, Dual, HyperDual, Real, ScalarObjective};
use crate::constitutive::{cofactor, first_piola};
use crate::networks::{DisplacementNet, Model, SaModel};

/// Displacement with its deformation gradient carrying spatial derivatives.
pub(crate) struct GenericState<R: Real> {
    pub f: [Dual<R, 3>; 9],
    pub accel: [R; 3],
}

fn state_n<R: Real, const N: usize>(net: &DisplacementNet, pu: &[R], x: &[f64]) -> GenericState<R> {
    let lifted: Vec<HyperDual<R, N>> = pu
        .iter()
        .map(|&p| Dual::constant(Dual::constant(p)))
        .collect();
    let xs = seed_spatial_real::<R, N>(std::array::from_fn(|i| R::cst(x[i])));
    let u = net.eval_generic(&lifted, &xs);
    let f = std::array::from_fn(|k| {
        let (a, b) = (k / 3, k % 3);
        let delta = if a == b { 1.0 } else { 0.0 };
        Dual::with_tangent(
            u[a].re.eps[b] + delta,
            std::array::from_fn(|j| u[a].eps[j].eps[b]),
        )
    });
    let accel = std::array::from_fn(|a| {
        if N == 4 {
            u[a].eps[3].eps[3]
        } else {
            R::zero()
        }
    });
    GenericState { f, accel }
}

pub(crate) fn displacement_state<R: Real>(
    net: &DisplacementNet,
    pu: &[R],
    x: &[f64],
) -> GenericState<R> {
    match x.len() {
        3 => state_n::<R, 3>(net, pu, x),
        4 => state_n::<R, 4>(net, pu, x),
        n => panic!("displacement inputs must have 3 or 4 coordinates, got {n}"),
    }
}

fn displacement_value<R: Real>(net: &DisplacementNet, pu: &[R], x: &[f64]) -> [R; 3] {
    let xs: Vec<R> = x.iter().map(|&v| R::cst(v)).collect();
    net.eval_generic::<R, R>(pu, &xs)
}

/// Learned amplitude (`S_a` or `σ0`) with its spatial gradient.
pub(crate) fn amplitude_jet<R: Real>(sa: &SaModel, psa: &[R], x: &[f64]) -> Dual<R, 3> {
    let lifted: Vec<Dual<R, 3>> = psa.iter().map(|&p| Dual::constant(p)).collect();
    let xs: Vec<Dual<R, 3>> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i < 3 {
                Dual::variable(R::cst(v), i)
            } else {
                Dual::constant(R::cst(v))
            }
        })
        .collect();
    sa.eval_generic(&lifted, &xs)
}

/// Parameters penalized by weight decay: both networks, never the scalar.
pub fn decay_range(model: &Model) -> Range<usize> {
    match model.sa {
        SaModel::Scalar { .. } => 0..model.n_u(),
        SaModel::Field(_) => 0..model.n_params(),
    }
}

fn green_lagrange<R: Real>(f: &[R; 9]) -> [R; 6] {
    let c = |i: usize, j: usize| f[i] * f[j] + f[3 + i] * f[3 + j] + f[6 + i] * f[6 + j];
    [
        (c(0, 0) - 1.0) * 0.5,
        (c(1, 1) - 1.0) * 0.5,
        (c(2, 2) - 1.0) * 0.5,
        c(0, 1) * 0.5,
        c(0, 2) * 0.5,
        c(1, 2) * 0.5,
    ]
}

/// Squared Frobenius norm of a symmetric tensor stored as 6 components.
pub(crate) fn sym_norm2<R: Real>(d: &[R; 6]) -> R {
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + (d[3] * d[3] + d[4] * d[4] + d[5] * d[5]) * 2.0
}

fn obs_sum<R: Real>(model: &Model, pu: &[R], obs: &ObsSet) -> R {
    let mut acc = R::zero();
    for (x, t) in obs.points.iter().zip(&obs.u) {
        let u = displacement_value(&model.u, pu, x);
        for a in 0..3 {
            let d = u[a] - t[a];
            acc += d * d;
        }
    }
    acc
}

fn strain_sum<R: Real>(model: &Model, pu: &[R], obs: &ObsSet, targets: &[[f64; 6]]) -> R {
    let mut acc = R::zero();
    for (x, t) in obs.points.iter().zip(targets) {
        let f = spatial_f(model, pu, x);
        let e = green_lagrange(&f);
        let d: [R; 6] = std::array::from_fn(|i| e[i] - t[i]);
        acc += sym_norm2(&d);
    }
    acc
}

fn pde_sums<R: Real>(
    model: &Model,
    physics: &Physics,
    params: &[R],
    pde: &PdeSet,
    mult: Option<&[f64]>,
) -> R {
    let (pu, psa) = model.split(params);
    let mut acc = R::zero();
    for (i, (x, b)) in pde.points.iter().zip(&pde.body).enumerate() {
        let st = displacement_state(&model.u, pu, x);
        let sa = amplitude_jet(&model.sa, psa, x) * physics.time_factor(x);
        let p = first_piola(&st.f, sa, &physics.mat);
        let w = mult.map_or(1.0, |m| m[i]);
        for a in 0..3 {
            let div = p[3 * a].eps[0] + p[3 * a + 1].eps[1] + p[3 * a + 2].eps[2];
            let r = st.accel[a] * physics.rho - div - b[a];
            acc += r * r * w;
        }
    }
    acc
}

fn traction_generic<R: Real>(
    f: &[R; 9],
    sa: R,
    n: &[f64; 3],
    pressure: f64,
    physics: &Physics,
) -> [R; 3] {
    let p = first_piola(f, sa, &physics.mat);
    let cof = cofactor(f);
    std::array::from_fn(|a| {
        let mut t = R::zero();
        for b in 0..3 {
            t += (p[3 * a + b] + cof[3 * a + b] * pressure) * n[b];
        }
        t
    })
}

fn spatial_f<R: Real>(model: &Model, pu: &[R], x: &[f64]) -> [R; 9] {
    spatial_u_f(model, pu, x).1
}

fn spatial_u_f<R: Real>(model: &Model, pu: &[R], x: &[f64]) -> ([R; 3], [R; 9]) {
    let lifted: Vec<Dual<R, 3>> = pu.iter().map(|&p| Dual::constant(p)).collect();
    let xd: Vec<Dual<R, 3>> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i < 3 {
                Dual::variable(R::cst(v), i)
            } else {
                Dual::constant(R::cst(v))
            }
        })
        .collect();
    let u = model.u.eval_generic(&lifted, &xd);
    (
        std::array::from_fn(|a| u[a].re),
        std::array::from_fn(|k| u[k / 3].eps[k % 3] + if k / 3 == k % 3 { 1.0 } else { 0.0 }),
    )
}

fn bcn_sum<R: Real>(model: &Model, physics: &Physics, params: &[R], bcn: &BcnSet) -> R {
    let (pu, psa) = model.split(params);
    let mut acc = R::zero();
    for i in 0..bcn.points.len() {
        let x = &bcn.points[i];
        let f = spatial_f(model, pu, x);
        let sa = amplitude_jet(&model.sa, psa, x).re * physics.time_factor(x);
        let t = traction_generic(&f, sa, &bcn.normals[i], bcn.pressure[i], physics);
        for a in 0..3 {
            let h = t[a] - bcn.traction[i][a];
            acc += h * h * bcn.omega[i];
        }
    }
    acc
}

fn bcd_sum<R: Real>(model: &Model, pu: &[R], bcd: &BcdSet) -> R {
    let mut acc = R::zero();
    for (x, g) in bcd.points.iter().zip(&bcd.g) {
        let u = displacement_value(&model.u, pu, x);
        for a in 0..3 {
            let d = u[a] - g[a];
            acc += d * d;
        }
    }
    acc
}

fn robin_sum<R: Real>(model: &Model, physics: &Physics, params: &[R], robin: &RobinSet) -> R {
    let (pu, psa) = model.split(params);
    let mut acc = R::zero();
    for i in 0..robin.points.len() {
        let x = &robin.points[i];
        let (u, f) = spatial_u_f(model, pu, x);
        let sa = amplitude_jet(&model.sa, psa, x).re * physics.time_factor(x);
        let t = traction_generic(&f, sa, &robin.normals[i], 0.0, physics);
        for a in 0..3 {
            let h = t[a] + u[a] * robin.k - robin.source[i][a];
            acc += h * h;
        }
    }
    acc
}

fn reg_sum<R: Real>(model: &Model, params: &[R], bcn: &BcnSet) -> R {
    let (_, psa) = model.split(params);
    let mut acc = R::zero();
    if matches!(model.sa, SaModel::Scalar { .. }) {
        return acc;
    }
    for (x, w) in bcn.points.iter().zip(&bcn.omega) {
        let g = amplitude_jet(&model.sa, psa, x);
        acc += (g.eps[0] * g.eps[0] + g.eps[1] * g.eps[1] + g.eps[2] * g.eps[2]) * (1.0 - w);
    }
    acc
}

fn mean<R: Real>(sum: R, n: usize) -> R {
    sum / n as f64
}

fn nonempty(name: &'static str, n: usize) -> Result<(), LossError> {
    if n == 0 {
        Err(LossError::Empty(name))
    } else {
        Ok(())
    }
}

/// `(λ / N) Σ |u_i - NN_u(x_i)|²`.
pub fn loss_obs(
    model: &Model,
    params: &[f64],
    obs: &ObsSet,
    lambda: f64,
) -> Result<f64, LossError> {
    nonempty("obs", obs.points.len())?;
    Ok(lambda * mean(obs_sum(model, model.split(params).0, obs), obs.points.len()))
}

/// `(λ / N) Σ |E(NN_u) - E_i|²_F`.
pub fn loss_strain(
    model: &Model,
    params: &[f64],
    obs: &ObsSet,
    lambda: f64,
) -> Result<f64, LossError> {
    nonempty("obs", obs.points.len())?;
    let t = obs.strain.as_ref().ok_or(LossError::MissingStrain)?;
    Ok(lambda
        * mean(
            strain_sum(model, model.split(params).0, obs, t),
            obs.points.len(),
        ))
}

/// `(λ / N) Σ w_i |r_i|²`, `w` the attention multipliers (1 when absent).
pub fn loss_pde(
    model: &Model,
    physics: &Physics,
    params: &[f64],
    pde: &PdeSet,
    multipliers: Option<&[f64]>,
    lambda: f64,
) -> Result<f64, LossError> {
    nonempty("pde", pde.points.len())?;
    Ok(lambda
        * mean(
            pde_sums(model, physics, params, pde, multipliers),
            pde.points.len(),
        ))
}

/// `(λ / N) Σ ω_i |P n + p cof(F) n - t|²`.
pub fn loss_bcn(
    model: &Model,
    physics: &Physics,
    params: &[f64],
    bcn: &BcnSet,
    lambda: f64,
) -> Result<f64, LossError> {
    nonempty("bcn", bcn.points.len())?;
    Ok(lambda * mean(bcn_sum(model, physics, params, bcn), bcn.points.len()))
}

pub fn loss_bcd(
    model: &Model,
    params: &[f64],
    bcd: &BcdSet,
    lambda: f64,
) -> Result<f64, LossError> {
    nonempty("bcd", bcd.points.len())?;
    Ok(lambda * mean(bcd_sum(model, model.split(params).0, bcd), bcd.points.len()))
}

pub fn loss_robin(
    model: &Model,
    physics: &Physics,
    params: &[f64],
    robin: &RobinSet,
    lambda: f64,
) -> Result<f64, LossError> {
    nonempty("robin", robin.points.len())?;
    Ok(lambda * mean(robin_sum(model, physics, params, robin), robin.points.len()))
}

/// `(1 / N) Σ (1 - ω_i) |∇NN_Sa(x_i)|²` over the Neumann points.
pub fn reg_parameter_gradient(model: &Model, params: &[f64], bcn: &BcnSet) -> f64 {
    if bcn.points.is_empty() {
        return 0.0;
    }
    mean(reg_sum(model, params, bcn), bcn.points.len())
}

/// `λ_w |w|²`.
pub fn reg_weight_decay(params: &[f64], lambda_w: f64) -> f64 {
    lambda_w * params.iter().map(|p| p * p).sum::<f64>()
}

/// The full weighted objective as a [`ScalarObjective`].
pub struct Objective<'a> {
    pub model: &'a Model,
    pub physics: &'a Physics,
    pub sets: &'a PointSets,
    pub weights: &'a LossWeights,
    pub multipliers: Option<&'a [f64]>,
}

impl ScalarObjective for Objective<'_> {
    fn terms<R: Real>(&self, params: &[R]) -> Vec<(&'static str, R)> {
        let (m, s, w) = (self.model, self.sets, self.weights);
        let pu = m.split(params).0;
        let mut out = Vec::new();
        if !s.obs.points.is_empty() {
            let n = s.obs.points.len();
            out.push(("obs", mean(obs_sum(m, pu, &s.obs), n) * w.lambda_obs));
            if let Some(t) = &s.obs.strain {
                out.push((
                    "strain",
                    mean(strain_sum(m, pu, &s.obs, t), n) * w.lambda_strain,
                ));
            }
        }
        if !s.pde.points.is_empty() {
            let sum = pde_sums(m, self.physics, params, &s.pde, self.multipliers);
            out.push(("pde", mean(sum, s.pde.points.len()) * w.lambda_pde));
        }
        if !s.bcn.points.is_empty() {
            let n = s.bcn.points.len();
            out.push((
                "bcn",
                mean(bcn_sum(m, self.physics, params, &s.bcn), n) * w.lambda_bcn,
            ));
            out.push(("reg", mean(reg_sum(m, params, &s.bcn), n) * w.lambda_reg));
        }
        if let Some(d) = s.bcd.as_ref().filter(|d| !d.points.is_empty()) {
            out.push((
                "bcd",
                mean(bcd_sum(m, pu, d), d.points.len()) * w.lambda_bcd,
            ));
        }
        if let Some(r) = s.robin.as_ref().filter(|r| !r.points.is_empty()) {
            out.push((
                "robin",
                mean(robin_sum(m, self.physics, params, r), r.points.len()) * w.lambda_robin,
            ));
        }
        let mut wd = R::zero();
        for &p in &params[decay_range(m)] {
            wd += p * p;
        }
        out.push(("weight_decay", wd * w.lambda_w));
        out
    }
}
