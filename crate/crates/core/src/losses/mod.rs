//! Loss terms, point sets and the two adaptive weighting schemes.

mod problem;
mod reference;

pub use problem::{Evaluation, Problem, TermValues};
pub use reference::{
    loss_bcd, loss_bcn, loss_obs, loss_pde, loss_robin, loss_strain, reg_parameter_gradient,
    reg_weight_decay, Objective,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::ActivationCurve;
use crate::constitutive::{ConstitutiveError, MaterialParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("point set `{0}` is empty")]
    Empty(&'static str),
    #[error("strain targets requested but the observation set has none")]
    MissingStrain,
    #[error(transparent)]
    Kinematics(#[from] ConstitutiveError),
    #[error("non-finite value in loss term `{term}`")]
    NonFinite { term: &'static str },
    #[error("invalid point set: {0}")]
    InvalidSet(String),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
}

/// Displacement observations, optionally with Green-Lagrange strain
/// `[E11, E22, E33, E12, E13, E23]` at the same points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObsSet {
    pub points: Vec<Vec<f64>>,
    pub u: Vec<[f64; 3]>,
    pub strain: Option<Vec<[f64; 6]>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PdeSet {
    pub points: Vec<Vec<f64>>,
    pub body: Vec<[f64; 3]>,
}

/// Neumann points. The residual is `P n + p cof(F) n - t`, where `t` is a
/// prescribed traction (zero for pure pressure loading) and each summand is
/// scaled by `omega`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BcnSet {
    pub points: Vec<Vec<f64>>,
    pub normals: Vec<[f64; 3]>,
    pub pressure: Vec<f64>,
    pub traction: Vec<[f64; 3]>,
    pub omega: Vec<f64>,
}

/// Dirichlet points for weak imposition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BcdSet {
    pub points: Vec<Vec<f64>>,
    pub g: Vec<[f64; 3]>,
}

/// Spring support `P n + k u = source`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RobinSet {
    pub points: Vec<Vec<f64>>,
    pub normals: Vec<[f64; 3]>,
    pub k: f64,
    pub source: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointSets {
    pub obs: ObsSet,
    pub pde: PdeSet,
    pub bcn: BcnSet,
    pub bcd: Option<BcdSet>,
    pub robin: Option<RobinSet>,
}

fn check_points(name: &str, points: &[Vec<f64>], dim: usize, tol: f64) -> Result<(), LossError> {
    for p in points {
        if p.len() != dim {
            return Err(LossError::InvalidSet(format!(
                "{name}: point of dimension {} (expected {dim})",
                p.len()
            )));
        }
        if p[..3]
            .iter()
            .any(|c| !c.is_finite() || c.abs() > crate::networks::HALF_SIDE + tol)
        {
            return Err(LossError::InvalidSet(format!(
                "{name}: point {p:?} outside the domain"
            )));
        }
    }
    Ok(())
}

fn check_len(name: &str, n: usize, m: usize) -> Result<(), LossError> {
    if n != m {
        return Err(LossError::InvalidSet(format!(
            "{name}: {m} targets for {n} points"
        )));
    }
    Ok(())
}

fn check_normals(name: &str, normals: &[[f64; 3]]) -> Result<(), LossError> {
    for n in normals {
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if (len - 1.0).abs() > 1e-10 {
            return Err(LossError::InvalidSet(format!(
                "{name}: normal {n:?} is not unit length"
            )));
        }
    }
    Ok(())
}

impl PointSets {
    /// Check shapes, domain membership and unit normals for inputs of
    /// dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<(), LossError> {
        let tol = 1e-9;
        check_points("obs", &self.obs.points, dim, tol)?;
        check_len("obs", self.obs.points.len(), self.obs.u.len())?;
        if let Some(e) = &self.obs.strain {
            check_len("obs strain", self.obs.points.len(), e.len())?;
        }
        check_points("pde", &self.pde.points, dim, tol)?;
        check_len("pde", self.pde.points.len(), self.pde.body.len())?;
        let b = &self.bcn;
        check_points("bcn", &b.points, dim, tol)?;
        for m in [
            b.normals.len(),
            b.pressure.len(),
            b.traction.len(),
            b.omega.len(),
        ] {
            check_len("bcn", b.points.len(), m)?;
        }
        check_normals("bcn", &b.normals)?;
        if let Some(d) = &self.bcd {
            check_points("bcd", &d.points, dim, tol)?;
            check_len("bcd", d.points.len(), d.g.len())?;
        }
        if let Some(r) = &self.robin {
            check_points("robin", &r.points, dim, tol)?;
            check_len("robin", r.points.len(), r.normals.len())?;
            check_len("robin", r.points.len(), r.source.len())?;
            check_normals("robin", &r.normals)?;
        }
        Ok(())
    }
}

/// Material, density and, for the time-dependent problem, the frozen unit
/// activation curve multiplying the learned `σ0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Physics {
    pub mat: MaterialParams,
    pub rho: f64,
    pub activation: Option<ActivationCurve>,
}

impl Physics {
    pub fn quasi_static(mat: MaterialParams) -> Self {
        Physics {
            mat,
            rho: 0.0,
            activation: None,
        }
    }

    /// Factor turning the learned amplitude into `S_a` at `point`.
    pub fn time_factor(&self, point: &[f64]) -> f64 {
        match (&self.activation, point.get(3)) {
            (Some(c), Some(&t)) => c.eval(t),
            _ => 1.0,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn hundred() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "one")]
    pub lambda_obs: f64,
    #[serde(default = "one")]
    pub lambda_strain: f64,
    #[serde(default = "one")]
    pub lambda_pde: f64,
    #[serde(default = "one")]
    pub lambda_bcd: f64,
    #[serde(default = "one")]
    pub lambda_bcn: f64,
    #[serde(default = "one")]
    pub lambda_robin: f64,
    #[serde(default)]
    pub lambda_w: f64,
    #[serde(default)]
    pub lambda_reg: f64,
    /// Moving-average factor of the gradient-norm rebalancing; `None` = off.
    #[serde(default)]
    pub adaptive_alpha: Option<f64>,
    #[serde(default = "hundred")]
    pub adaptive_interval: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_obs: 1.0,
            lambda_strain: 1.0,
            lambda_pde: 1.0,
            lambda_bcd: 1.0,
            lambda_bcn: 1.0,
            lambda_robin: 1.0,
            lambda_w: 0.0,
            lambda_reg: 0.0,
            adaptive_alpha: None,
            adaptive_interval: 100,
        }
    }
}

/// Terms whose weights the rebalancing scheme adjusts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Term {
    Obs,
    Strain,
    Pde,
    Bcn,
    Bcd,
    Robin,
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [
            self.lambda_obs,
            self.lambda_strain,
            self.lambda_pde,
            self.lambda_bcd,
            self.lambda_bcn,
            self.lambda_robin,
            self.lambda_w,
            self.lambda_reg,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(LossError::InvalidWeights(
                "weights must be finite and non-negative".into(),
            ));
        }
        if let Some(a) = self.adaptive_alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(LossError::InvalidWeights(format!(
                    "adaptive_alpha {a} not in (0, 1]"
                )));
            }
            if self.adaptive_interval == 0 {
                return Err(LossError::InvalidWeights(
                    "adaptive_interval must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn get(&self, t: Term) -> f64 {
        match t {
            Term::Obs => self.lambda_obs,
            Term::Strain => self.lambda_strain,
            Term::Pde => self.lambda_pde,
            Term::Bcn => self.lambda_bcn,
            Term::Bcd => self.lambda_bcd,
            Term::Robin => self.lambda_robin,
        }
    }

    pub fn set(&mut self, t: Term, v: f64) {
        match t {
            Term::Obs => self.lambda_obs = v,
            Term::Strain => self.lambda_strain = v,
            Term::Pde => self.lambda_pde = v,
            Term::Bcn => self.lambda_bcn = v,
            Term::Bcd => self.lambda_bcd = v,
            Term::Robin => self.lambda_robin = v,
        }
    }

    /// Unit weight on `t`, zero everywhere else.
    pub fn only(t: Term) -> Self {
        let mut w = LossWeights {
            lambda_obs: 0.0,
            lambda_strain: 0.0,
            lambda_pde: 0.0,
            lambda_bcd: 0.0,
            lambda_bcn: 0.0,
            lambda_robin: 0.0,
            ..LossWeights::default()
        };
        w.set(t, 1.0);
        w
    }
}

/// `λ̂_i = Σ_j |∇J_j| / |∇J_i|`, then `λ_i ← α λ̂_i + (1 - α) λ_i`.
/// Terms with a zero (or non-finite) gradient norm keep their weight and
/// are left out of the sum.
pub fn adaptive_rebalance(norms: &[f64], current: &[f64], alpha: f64) -> Vec<f64> {
    assert_eq!(norms.len(), current.len());
    let usable = |n: f64| n.is_finite() && n > 0.0;
    let total: f64 = norms.iter().filter(|&&n| usable(n)).sum();
    norms
        .iter()
        .zip(current)
        .map(|(&n, &l)| {
            if usable(n) {
                alpha * (total / n) + (1.0 - alpha) * l
            } else {
                l
            }
        })
        .collect()
}

fn gamma_default() -> f64 {
    0.999
}

fn eta_default() -> f64 {
    0.01
}

fn five() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbaConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "gamma_default")]
    pub gamma: f64,
    #[serde(default = "eta_default")]
    pub eta_star: f64,
    #[serde(default)]
    pub lambda0: f64,
    #[serde(default = "five")]
    pub update_interval: usize,
}

impl Default for RbaConfig {
    fn default() -> Self {
        RbaConfig {
            enabled: false,
            gamma: gamma_default(),
            eta_star: eta_default(),
            lambda0: 0.0,
            update_interval: 5,
        }
    }
}

/// Per-collocation-point attention multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbaState {
    pub multipliers: Vec<f64>,
    pub gamma: f64,
    pub eta_star: f64,
    pub lambda0: f64,
    pub update_interval: usize,
}

impl RbaState {
    pub fn new(n: usize, cfg: &RbaConfig) -> Self {
        RbaState {
            multipliers: vec![0.0; n],
            gamma: cfg.gamma,
            eta_star: cfg.eta_star,
            lambda0: cfg.lambda0,
            update_interval: cfg.update_interval.max(1),
        }
    }

    /// Whether iteration `k` (0-based) applies an update.
    pub fn due(&self, k: usize) -> bool {
        k.is_multiple_of(self.update_interval)
    }

    /// `λ ← γ λ + η* e / |e|_∞ + λ0`. With an all-zero residual only the
    /// decay and the floor apply.
    pub fn update(&mut self, e: &[f64]) {
        assert_eq!(e.len(), self.multipliers.len());
        let sup = e.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
        for (l, &ei) in self.multipliers.iter_mut().zip(e) {
            let drive = if sup > 0.0 {
                self.eta_star * ei.abs() / sup
            } else {
                0.0
            };
            *l = self.gamma * *l + drive + self.lambda0;
        }
    }
}

/// Free-function form of [`RbaState::update`].
pub fn rba_update(mut state: RbaState, e: &[f64]) -> RbaState {
    state.update(e);
    state
}

/// Squared Frobenius norm of a symmetric tensor `[T11, T22, T33, T12, T13, T23]`.
pub fn sym_norm2_f64(d: &[f64; 6]) -> f64 {
    reference::sym_norm2(d)
}

/// Default ramp length of the Neumann weight, in mm.
pub const OMEGA_RAMP: f64 = 2.0;

/// `3s² - 2s³` with `s = clamp((y + 5) / ramp, 0, 1)`: zero on the Dirichlet
/// face, one beyond the ramp.
pub fn boundary_weight_omega_ramp(point: &[f64], ramp: f64) -> f64 {
    let s = ((point[1] + crate::networks::HALF_SIDE) / ramp).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

pub fn boundary_weight_omega(point: &[f64]) -> f64 {
    boundary_weight_omega_ramp(point, OMEGA_RAMP)
}
