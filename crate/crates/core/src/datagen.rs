//! Manufactured ground truth, noisy observations and collocation sampling.
//!
//! The displacement is a closed-form field vanishing on the Dirichlet face
//! `y = -5`; the body force is whatever makes it an exact solution.

use std::f64::consts::FRAC_PI_2;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::{solve_bcs, ActivationCurve, ActivationError, BcsParams};
use crate::autodiff::{seed_spatial_real, stress_divergence, Dual, HyperDual, Real, StressField};
use crate::constitutive::{det3, first_piola, ConstitutiveError, MaterialParams, PdeJet};
use crate::exec::{map_indexed, ExecMode};
use crate::losses::{boundary_weight_omega, BcdSet, BcnSet, ObsSet, PdeSet, RobinSet};
use crate::networks::HALF_SIDE;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("displacement amplitude {amplitude} inverts the material at {point:?} (J = {j})")]
    InvertedAmplitude {
        amplitude: f64,
        j: f64,
        point: Vec<f64>,
    },
    #[error("invalid scar profile: {0}")]
    InvalidProfile(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Activation(#[from] ActivationError),
    #[error(transparent)]
    Constitutive(#[from] ConstitutiveError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed dataset: {0}")]
    Format(String),
}

/// Width of the smoothed scar interfaces, in mm.
pub const MOLLIFIER_WIDTH: f64 = 0.2;
/// Default peak displacement scale, in mm.
pub const DEFAULT_AMPLITUDE: f64 = 0.5;
/// Healthy active stress of the quasi-static cases, in kPa.
pub const SA_HEALTHY: f64 = 118.08;
/// Density used for the time-dependent case, kg/mm³.
pub const RHO_TISSUE: f64 = 1.06e-6;
/// Time window of the time-dependent observations, in s.
pub const TD_WINDOW: (f64, f64) = (0.16, 0.35);

fn default_width() -> f64 {
    MOLLIFIER_WIDTH
}

/// Concentric core / grey-zone / healthy field around one or more centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScarProfile {
    pub centers: Vec<[f64; 3]>,
    pub core_radius: f64,
    pub grey_radius: f64,
    pub sa_core: f64,
    pub sa_grey: f64,
    pub sa_healthy: f64,
    #[serde(default = "default_width")]
    pub width: f64,
}

/// `1` inside `radius`, `0` outside, with a quintic ramp of total width `w`
/// centered on the interface. Branching on `r²` keeps the square root away
/// from the center.
fn inside<R: Real>(r2: R, radius: f64, w: f64) -> R {
    let lo = radius - 0.5 * w;
    let hi = radius + 0.5 * w;
    let v = r2.value();
    if v <= lo * lo {
        return R::one();
    }
    if v >= hi * hi {
        return R::zero();
    }
    let s = (r2.sqrt() - lo) / w;
    -(s * s * s * (s * (s * 6.0 - 15.0) + 10.0)) + 1.0
}

impl ScarProfile {
    pub fn one_scar() -> Self {
        ScarProfile {
            centers: vec![[1.0, 1.0, 1.0]],
            core_radius: 1.9,
            grey_radius: 2.5,
            sa_core: 7.87,
            sa_grey: 37.79,
            sa_healthy: SA_HEALTHY,
            width: MOLLIFIER_WIDTH,
        }
    }

    pub fn two_scar() -> Self {
        ScarProfile {
            centers: vec![[-2.2, 1.5, -1.0], [2.2, -1.0, 1.5]],
            ..Self::one_scar()
        }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: &str| Err(DatagenError::InvalidProfile(m.into()));
        if self.centers.is_empty() {
            return bad("no scar centers");
        }
        if !(self.core_radius > 0.0 && self.core_radius < self.grey_radius) {
            return bad("need 0 < core_radius < grey_radius");
        }
        if !(self.sa_core < self.sa_grey && self.sa_grey < self.sa_healthy) {
            return bad("need sa_core < sa_grey < sa_healthy");
        }
        if !(self.width > 0.0
            && self.width < self.core_radius
            && self.width < self.grey_radius - self.core_radius)
        {
            return bad("mollifier width must be smaller than both zones");
        }
        let reach = self.grey_radius + 0.5 * self.width;
        for (i, a) in self.centers.iter().enumerate() {
            for b in &self.centers[i + 1..] {
                let d =
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                if d <= 2.0 * reach {
                    return bad("scars overlap");
                }
            }
        }
        Ok(())
    }

    /// Mollified field at `x[..3]`.
    pub fn value_real<R: Real>(&self, x: &[R]) -> R {
        let mut v = R::cst(self.sa_healthy);
        for c in &self.centers {
            let mut r2 = R::zero();
            for i in 0..3 {
                let d = x[i] - c[i];
                r2 += d * d;
            }
            v += inside(r2, self.grey_radius, self.width) * (self.sa_grey - self.sa_healthy)
                + inside(r2, self.core_radius, self.width) * (self.sa_core - self.sa_grey);
        }
        v
    }

    /// Piecewise-constant field without smoothing.
    pub fn sharp(&self, x: &[f64]) -> f64 {
        let mut v = self.sa_healthy;
        for c in &self.centers {
            let r = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)).sqrt();
            let here = if r < self.core_radius {
                self.sa_core
            } else if r < self.grey_radius {
                self.sa_grey
            } else {
                self.sa_healthy
            };
            v = v.min(here);
        }
        v
    }
}

/// Ground-truth active amplitude (or `σ0` in the time-dependent case).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AmplitudeField {
    Constant { value: f64 },
    Scar(ScarProfile),
}

impl AmplitudeField {
    pub fn value_real<R: Real>(&self, x: &[R]) -> R {
        match self {
            AmplitudeField::Constant { value } => R::cst(*value),
            AmplitudeField::Scar(p) => p.value_real(x),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.value_real(x)
    }

    pub fn sharp(&self, x: &[f64]) -> f64 {
        match self {
            AmplitudeField::Constant { value } => *value,
            AmplitudeField::Scar(p) => p.sharp(x),
        }
    }

    pub fn healthy(&self) -> f64 {
        match self {
            AmplitudeField::Constant { value } => *value,
            AmplitudeField::Scar(p) => p.sa_healthy,
        }
    }

    /// Ground-truth label: strictly below the healthy value.
    pub fn is_scar(&self, x: &[f64]) -> bool {
        self.sharp(x) < self.healthy()
    }
}

/// Separable time dependence `u*(x, t) = S(t) / S(t_ref) U(x)` and
/// `S_a*(x, t) = σ0*(x) S(t)` with `S` the unit activation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeDependence {
    pub curve: ActivationCurve,
    pub window: (f64, f64),
    pub t_ref: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedCase {
    pub name: String,
    /// Displacement scale in mm.
    pub amplitude: f64,
    pub field: AmplitudeField,
    pub mat: MaterialParams,
    pub time: Option<TimeDependence>,
    /// Nonzero displacement on `y = -5` (spring-supported face).
    pub robin: bool,
}

struct CaseStress<'a> {
    case: &'a ManufacturedCase,
    t: Option<f64>,
}

impl StressField for CaseStress<'_> {
    fn stress<R: Real>(&self, x: &[R; 3]) -> [R; 9] {
        let mut xs: Vec<Dual<R, 3>> = (0..3).map(|i| Dual::variable(x[i], i)).collect();
        let mut xr: Vec<R> = x.to_vec();
        if let Some(t) = self.t {
            xs.push(Dual::constant(R::cst(t)));
            xr.push(R::cst(t));
        }
        let u = self.case.displacement_real(&xs);
        let f =
            std::array::from_fn(|k| u[k / 3].eps[k % 3] + if k / 3 == k % 3 { 1.0 } else { 0.0 });
        first_piola(&f, self.case.amplitude_real(&xr), &self.case.mat)
    }
}

fn grid(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| -HALF_SIDE + 2.0 * HALF_SIDE * i as f64 / (n - 1) as f64)
        .collect()
}

impl ManufacturedCase {
    /// Build and check `J > 0` on a 20³ probe grid (times 5 instants for the
    /// time-dependent case).
    pub fn new(
        name: &str,
        amplitude: f64,
        field: AmplitudeField,
        mat: MaterialParams,
        time: Option<TimeDependence>,
        robin: bool,
    ) -> Result<Self, DatagenError> {
        mat.validate()?;
        if let AmplitudeField::Scar(p) = &field {
            p.validate()?;
        }
        if !amplitude.is_finite() {
            return Err(DatagenError::InvalidRequest(
                "amplitude must be finite".into(),
            ));
        }
        let case = ManufacturedCase {
            name: name.into(),
            amplitude,
            field,
            mat,
            time,
            robin,
        };
        case.check_jacobian(20)?;
        Ok(case)
    }

    pub fn homogeneous(sa: f64) -> Result<Self, DatagenError> {
        Self::new(
            "hom-qs",
            DEFAULT_AMPLITUDE,
            AmplitudeField::Constant { value: sa },
            MaterialParams::default(),
            None,
            false,
        )
    }

    pub fn scar(name: &str, profile: ScarProfile) -> Result<Self, DatagenError> {
        Self::new(
            name,
            DEFAULT_AMPLITUDE,
            AmplitudeField::Scar(profile),
            MaterialParams::default(),
            None,
            false,
        )
    }

    pub fn robin_support(sa: f64) -> Result<Self, DatagenError> {
        Self::new(
            "robin",
            DEFAULT_AMPLITUDE,
            AmplitudeField::Constant { value: sa },
            MaterialParams::default(),
            None,
            true,
        )
    }

    /// Time-dependent case over `window`, `sigma0` the amplitude field.
    pub fn time_dependent(
        bcs: &BcsParams,
        sigma0: AmplitudeField,
        window: (f64, f64),
    ) -> Result<Self, DatagenError> {
        if !(window.0 >= 0.0 && window.0 < window.1) {
            return Err(DatagenError::InvalidRequest(format!(
                "bad time window {window:?}"
            )));
        }
        let unit = BcsParams {
            sigma0: 1.0,
            ..*bcs
        };
        let curve = solve_bcs(&unit, window.1, 1e-9)?;
        if curve.eval(window.1) <= 1e-10 {
            return Err(DatagenError::InvalidRequest(
                "activation is zero at the end of the window".into(),
            ));
        }
        let time = TimeDependence {
            curve,
            window,
            t_ref: window.1,
            rho: RHO_TISSUE,
        };
        Self::new(
            "td",
            DEFAULT_AMPLITUDE,
            sigma0,
            MaterialParams::default(),
            Some(time),
            false,
        )
    }

    /// 3 for quasi-static, 4 (space-time) otherwise.
    pub fn input_dim(&self) -> usize {
        if self.time.is_some() {
            4
        } else {
            3
        }
    }

    pub fn rho(&self) -> f64 {
        self.time.as_ref().map_or(0.0, |t| t.rho)
    }

    pub fn window(&self) -> Option<(f64, f64)> {
        self.time.as_ref().map(|t| t.window)
    }

    /// Spatial profile `U(x)`.
    fn shape<R: Real>(&self, x: &[R]) -> [R; 3] {
        let eta = (x[1] + HALF_SIDE) / (2.0 * HALF_SIDE);
        let eta = if self.robin { eta * 0.9 + 0.1 } else { eta };
        let xi = x[0] / HALF_SIDE;
        let zeta = x[2] / HALF_SIDE;
        let a = eta * self.amplitude;
        [
            a * (xi * -0.5 + (zeta * FRAC_PI_2).sin() * 0.2),
            a * (xi * xi * 0.25 - zeta * 0.1),
            a * (zeta * 0.2 + (xi * FRAC_PI_2).sin() * 0.15),
        ]
    }

    fn time_scale<R: Real>(&self, x: &[R]) -> R {
        match &self.time {
            Some(td) => td.curve.eval_real(x[3]) / td.curve.eval(td.t_ref),
            None => R::one(),
        }
    }

    pub fn displacement_real<R: Real>(&self, x: &[R]) -> [R; 3] {
        let s = self.shape(x);
        if self.time.is_some() {
            let tf = self.time_scale(x);
            s.map(|v| v * tf)
        } else {
            s
        }
    }

    pub fn displacement(&self, x: &[f64]) -> [f64; 3] {
        self.displacement_real(x)
    }

    /// `S_a*` at `x` (and `t` when time-dependent).
    pub fn amplitude_real<R: Real>(&self, x: &[R]) -> R {
        let s = self.field.value_real(x);
        match &self.time {
            Some(td) => s * td.curve.eval_real(x[3]),
            None => s,
        }
    }

    pub fn amplitude_at(&self, x: &[f64]) -> f64 {
        self.amplitude_real(x)
    }

    /// The spatial amplitude field (`S_a*` or `σ0*`).
    pub fn sigma0(&self, x: &[f64]) -> f64 {
        self.field.value(x)
    }

    fn f_dual(&self, x: &[f64]) -> ([f64; 3], [f64; 9]) {
        let xs: Vec<Dual<f64, 3>> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if i < 3 {
                    Dual::variable(v, i)
                } else {
                    Dual::constant(v)
                }
            })
            .collect();
        let u = self.displacement_real(&xs);
        (
            u.map(|v| v.re),
            std::array::from_fn(|k| u[k / 3].eps[k % 3] + if k / 3 == k % 3 { 1.0 } else { 0.0 }),
        )
    }

    /// Deformation gradient `I + ∇u*`.
    pub fn deformation_gradient(&self, x: &[f64]) -> [f64; 9] {
        self.f_dual(x).1
    }

    /// Green-Lagrange strain `[E11, E22, E33, E12, E13, E23]`.
    pub fn strain(&self, x: &[f64]) -> [f64; 6] {
        let f = self.deformation_gradient(x);
        let c = |i: usize, j: usize| f[i] * f[j] + f[3 + i] * f[3 + j] + f[6 + i] * f[6 + j];
        [
            0.5 * (c(0, 0) - 1.0),
            0.5 * (c(1, 1) - 1.0),
            0.5 * (c(2, 2) - 1.0),
            0.5 * c(0, 1),
            0.5 * c(0, 2),
            0.5 * c(1, 2),
        ]
    }

    /// First Piola-Kirchhoff stress of the ground truth.
    pub fn stress(&self, x: &[f64]) -> [f64; 9] {
        let f = self.deformation_gradient(x);
        first_piola(&f, self.amplitude_at(x), &self.mat)
    }

    pub fn traction(&self, x: &[f64], n: &[f64; 3]) -> [f64; 3] {
        let p = self.stress(x);
        std::array::from_fn(|a| p[3 * a] * n[0] + p[3 * a + 1] * n[1] + p[3 * a + 2] * n[2])
    }

    /// Second time derivative of `u*`.
    pub fn acceleration(&self, x: &[f64]) -> [f64; 3] {
        match &self.time {
            Some(td) => {
                let (_, _, s2) = td.curve.eval_jet(x[3]);
                let scale = s2 / td.curve.eval(td.t_ref);
                self.shape(x).map(|v| v * scale)
            }
            None => [0.0; 3],
        }
    }

    /// `f = ρ ü* - ∇·P(u*, S_a*)`, the divergence taken by forward
    /// differentiation of the stress field.
    pub fn body_force(&self, x: &[f64]) -> Result<[f64; 3], DatagenError> {
        let field = CaseStress {
            case: self,
            t: x.get(3).copied(),
        };
        let div = stress_divergence(&field, [x[0], x[1], x[2]])
            .map_err(|e| DatagenError::InvalidRequest(format!("body force at {x:?}: {e}")))?;
        let acc = self.acceleration(x);
        let rho = self.rho();
        Ok(std::array::from_fn(|a| rho * acc[a] - div[a]))
    }

    fn jet_n<const N: usize>(&self, x: &[f64]) -> PdeJet {
        let xs: [HyperDual<f64, N>; N] = seed_spatial_real(std::array::from_fn(|i| x[i]));
        let u = self.displacement_real(&xs);
        let mut jet = PdeJet::default();
        for a in 0..3 {
            for b in 0..3 {
                jet.f[3 * a + b] = u[a].re.eps[b] + if a == b { 1.0 } else { 0.0 };
                for j in 0..3 {
                    jet.g[j][3 * a + b] = u[a].eps[j].eps[b];
                }
            }
            if N == 4 {
                jet.accel[a] = u[a].eps[3].eps[3];
            }
        }
        let xd: Vec<Dual<f64, 3>> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if i < 3 {
                    Dual::variable(v, i)
                } else {
                    Dual::constant(v)
                }
            })
            .collect();
        let sa = self.amplitude_real(&xd);
        jet.sa = sa.re;
        jet.grad_sa = sa.eps;
        jet
    }

    /// Kinematic jet of the ground truth at `x` (body force left at zero).
    pub fn pde_jet(&self, x: &[f64]) -> PdeJet {
        match x.len() {
            3 => self.jet_n::<3>(x),
            _ => self.jet_n::<4>(x),
        }
    }

    /// Reject amplitudes that invert the material somewhere on an `n³` grid.
    pub fn check_jacobian(&self, n: usize) -> Result<(), DatagenError> {
        let g = grid(n.max(2));
        let times: Vec<Option<f64>> = match &self.time {
            Some(td) => (0..5)
                .map(|i| Some(td.window.0 + (td.window.1 - td.window.0) * i as f64 / 4.0))
                .collect(),
            None => vec![None],
        };
        for t in &times {
            for &x in &g {
                for &y in &g {
                    for &z in &g {
                        let mut p = vec![x, y, z];
                        p.extend(t.iter());
                        let j = det3(&self.deformation_gradient(&p));
                        if !(j > 0.0) {
                            return Err(DatagenError::InvertedAmplitude {
                                amplitude: self.amplitude,
                                j,
                                point: p,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn pde_set(&self, points: Vec<Vec<f64>>) -> Result<PdeSet, DatagenError> {
        let body = map_indexed(points.len(), ExecMode::Parallel, |i| {
            self.body_force(&points[i])
        });
        Ok(PdeSet {
            body: body.into_iter().collect::<Result<_, _>>()?,
            points,
        })
    }

    /// Neumann points with the ground-truth traction as target.
    pub fn bcn_set(&self, points: Vec<Vec<f64>>, normals: Vec<[f64; 3]>) -> BcnSet {
        let traction = map_indexed(points.len(), ExecMode::Parallel, |i| {
            self.traction(&points[i], &normals[i])
        });
        BcnSet {
            pressure: vec![0.0; points.len()],
            omega: points.iter().map(|p| boundary_weight_omega(p)).collect(),
            traction,
            normals,
            points,
        }
    }

    pub fn bcd_set(&self, points: Vec<Vec<f64>>) -> BcdSet {
        BcdSet {
            g: points.iter().map(|p| self.displacement(p)).collect(),
            points,
        }
    }

    /// Spring-supported points: the source is built with stiffness
    /// `k_true`; the residual is evaluated with `k_model`.
    pub fn robin_set(
        &self,
        points: Vec<Vec<f64>>,
        normals: Vec<[f64; 3]>,
        k_true: f64,
        k_model: f64,
    ) -> RobinSet {
        let source = points
            .iter()
            .zip(&normals)
            .map(|(p, n)| {
                let t = self.traction(p, n);
                let u = self.displacement(p);
                std::array::from_fn(|a| t[a] + k_true * u[a])
            })
            .collect();
        RobinSet {
            points,
            normals,
            k: k_model,
            source,
        }
    }

    /// Largest `|r|` of the momentum residual of the ground truth over `n`
    /// random points.
    pub fn residual_check(&self, n: usize, seed: u64) -> Result<f64, DatagenError> {
        let pts = sample_interior(n, self.window(), seed, stream::CHECK);
        let worst = map_indexed(n, ExecMode::Parallel, |i| -> Result<f64, DatagenError> {
            let mut jet = self.pde_jet(&pts[i]);
            jet.body = self.body_force(&pts[i])?;
            let r = crate::constitutive::pde_residual(&jet, &self.mat, self.rho())?;
            Ok(r.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
        });
        worst
            .into_iter()
            .try_fold(0.0_f64, |m, r| r.map(|v| m.max(v)))
    }
}

/// Purpose tags separating the random streams of one seed.
pub mod stream {
    pub const OBS_POINTS: u64 = 1;
    pub const OBS_NOISE: u64 = 2;
    pub const PDE: u64 = 3;
    pub const BCN: u64 = 4;
    pub const BCD: u64 = 5;
    pub const ROBIN: u64 = 6;
    pub const TEST_OBS: u64 = 7;
    pub const TEST_PDE: u64 = 8;
    pub const EVAL: u64 = 9;
    pub const CHECK: u64 = 10;
}

/// Independent generator for point `index` of stream `purpose`.
pub fn point_rng(seed: u64, purpose: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(index as u64);
    rng
}

fn coord(rng: &mut ChaCha8Rng) -> f64 {
    -HALF_SIDE + 2.0 * HALF_SIDE * rng.gen::<f64>()
}

fn time_coord(rng: &mut ChaCha8Rng, window: (f64, f64)) -> f64 {
    window.0 + (window.1 - window.0) * rng.gen::<f64>()
}

/// Uniform points in the cube (times the window when given).
pub fn sample_interior(
    n: usize,
    window: Option<(f64, f64)>,
    seed: u64,
    purpose: u64,
) -> Vec<Vec<f64>> {
    map_indexed(n, ExecMode::Parallel, |i| {
        let mut rng = point_rng(seed, purpose, i);
        let mut p = vec![coord(&mut rng), coord(&mut rng), coord(&mut rng)];
        if let Some(w) = window {
            p.push(time_coord(&mut rng, w));
        }
        p
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Face {
    XMinus,
    XPlus,
    YMinus,
    YPlus,
    ZMinus,
    ZPlus,
}

impl Face {
    /// The five faces away from the Dirichlet face.
    pub const NEUMANN: [Face; 5] = [
        Face::XMinus,
        Face::XPlus,
        Face::YPlus,
        Face::ZMinus,
        Face::ZPlus,
    ];

    fn axis_sign(self) -> (usize, f64) {
        match self {
            Face::XMinus => (0, -1.0),
            Face::XPlus => (0, 1.0),
            Face::YMinus => (1, -1.0),
            Face::YPlus => (1, 1.0),
            Face::ZMinus => (2, -1.0),
            Face::ZPlus => (2, 1.0),
        }
    }

    pub fn normal(self) -> [f64; 3] {
        let (a, s) = self.axis_sign();
        let mut n = [0.0; 3];
        n[a] = s;
        n
    }
}

/// Uniform points on `faces`, split as evenly as possible (earlier faces
/// take the remainder), with outward normals.
pub fn sample_faces(
    n: usize,
    faces: &[Face],
    window: Option<(f64, f64)>,
    seed: u64,
    purpose: u64,
) -> (Vec<Vec<f64>>, Vec<[f64; 3]>) {
    let m = faces.len();
    let mut owner = Vec::with_capacity(n);
    for (f, face) in faces.iter().enumerate() {
        let count = n / m + usize::from(f < n % m);
        owner.extend(std::iter::repeat_n(*face, count));
    }
    let points = map_indexed(n, ExecMode::Parallel, |i| {
        let mut rng = point_rng(seed, purpose, i);
        let (axis, sign) = owner[i].axis_sign();
        let mut p = vec![coord(&mut rng), coord(&mut rng), coord(&mut rng)];
        p[axis] = sign * HALF_SIDE;
        if let Some(w) = window {
            p.push(time_coord(&mut rng, w));
        }
        p
    });
    (points, owner.iter().map(|f| f.normal()).collect())
}

/// Interior collocation plus Neumann boundary points.
#[derive(Debug, Clone, PartialEq)]
pub struct Collocation {
    pub pde: Vec<Vec<f64>>,
    pub bcn: Vec<Vec<f64>>,
    pub normals: Vec<[f64; 3]>,
}

pub fn sample_collocation(
    n_pde: usize,
    n_bcn: usize,
    window: Option<(f64, f64)>,
    seed: u64,
) -> Result<Collocation, DatagenError> {
    if n_pde == 0 || n_bcn == 0 {
        return Err(DatagenError::InvalidRequest(
            "collocation counts must be positive".into(),
        ));
    }
    let pde = sample_interior(n_pde, window, seed, stream::PDE);
    let (bcn, normals) = sample_faces(n_bcn, &Face::NEUMANN, window, seed, stream::BCN);
    Ok(Collocation { pde, bcn, normals })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Layout {
    Random,
    /// Planes orthogonal to `y`, evenly spaced and off the faces.
    Slices {
        planes: usize,
    },
}

/// Additive Gaussian noise and its limiting dispersion `3σ / max|u|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub ld: f64,
}

impl NoiseSpec {
    pub fn from_ld(ld: f64, max_u: f64) -> Self {
        NoiseSpec {
            sigma: ld * max_u / 3.0,
            ld,
        }
    }

    pub fn from_sigma(sigma: f64, max_u: f64) -> Self {
        NoiseSpec {
            sigma,
            ld: if max_u > 0.0 {
                3.0 * sigma / max_u
            } else {
                0.0
            },
        }
    }
}

/// Sidecar metadata of an observation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub case: String,
    pub seed: u64,
    pub layout: Layout,
    pub n: usize,
    pub ld: f64,
    pub sigma: f64,
    pub sigma_strain: f64,
    pub max_u: f64,
    pub has_time: bool,
    pub has_strain: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub obs: ObsSet,
}

/// Noisy displacement (and optionally strain) observations of `case`.
pub fn sample_observations(
    case: &ManufacturedCase,
    n: usize,
    layout: Layout,
    ld: f64,
    with_strain: bool,
    seed: u64,
) -> Result<Dataset, DatagenError> {
    sample_observations_stream(case, n, layout, ld, with_strain, seed, stream::OBS_POINTS)
}

/// As [`sample_observations`] with an explicit point stream (held-out sets).
pub fn sample_observations_stream(
    case: &ManufacturedCase,
    n: usize,
    layout: Layout,
    ld: f64,
    with_strain: bool,
    seed: u64,
    purpose: u64,
) -> Result<Dataset, DatagenError> {
    if n == 0 {
        return Err(DatagenError::InvalidRequest(
            "need at least one observation".into(),
        ));
    }
    if !(ld >= 0.0 && ld.is_finite()) {
        return Err(DatagenError::InvalidRequest(format!(
            "LD {ld} must be finite and non-negative"
        )));
    }
    let window = case.window();
    let points: Vec<Vec<f64>> = match layout {
        Layout::Random => sample_interior(n, window, seed, purpose),
        Layout::Slices { planes } => {
            if planes == 0 {
                return Err(DatagenError::InvalidRequest(
                    "slice layout needs at least one plane".into(),
                ));
            }
            map_indexed(n, ExecMode::Parallel, |i| {
                let mut rng = point_rng(seed, purpose, i);
                let y = -HALF_SIDE + 2.0 * HALF_SIDE * ((i % planes) as f64 + 0.5) / planes as f64;
                let mut p = vec![coord(&mut rng), y, coord(&mut rng)];
                if let Some(w) = window {
                    p.push(time_coord(&mut rng, w));
                }
                p
            })
        }
    };
    let clean_u: Vec<[f64; 3]> =
        map_indexed(n, ExecMode::Parallel, |i| case.displacement(&points[i]));
    let clean_e: Option<Vec<[f64; 6]>> =
        with_strain.then(|| map_indexed(n, ExecMode::Parallel, |i| case.strain(&points[i])));
    let max_u = clean_u
        .iter()
        .map(|u| (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt())
        .fold(0.0, f64::max);
    let noise = NoiseSpec::from_ld(ld, max_u);
    let sigma_strain = clean_e.as_ref().map_or(0.0, |es| {
        let max_e = es
            .iter()
            .map(|e| crate::losses::sym_norm2_f64(e).sqrt())
            .fold(0.0, f64::max);
        ld * max_e / 3.0
    });
    let noisy = map_indexed(n, ExecMode::Parallel, |i| {
        let mut rng = point_rng(seed, purpose ^ (stream::OBS_NOISE << 8), i);
        let mut u = clean_u[i];
        for v in u.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += noise.sigma * z;
        }
        let e = clean_e.as_ref().map(|es| {
            let mut e = es[i];
            for v in e.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += sigma_strain * z;
            }
            e
        });
        (u, e)
    });
    let (u, e): (Vec<[f64; 3]>, Vec<Option<[f64; 6]>>) = noisy.into_iter().unzip();
    let strain = with_strain.then(|| e.into_iter().map(|v| v.expect("strain sampled")).collect());
    Ok(Dataset {
        meta: DatasetMeta {
            case: case.name.clone(),
            seed,
            layout,
            n,
            ld,
            sigma: noise.sigma,
            sigma_strain,
            max_u,
            has_time: window.is_some(),
            has_strain: with_strain,
        },
        obs: ObsSet { points, u, strain },
    })
}

const STRAIN_COLS: [&str; 6] = ["E11", "E22", "E33", "E12", "E13", "E23"];

impl Dataset {
    /// `x,y,z[,t],u1,u2,u3[,E11,..,E23]`, one row per sample.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), DatagenError> {
        let mut head = vec!["x", "y", "z"];
        if self.meta.has_time {
            head.push("t");
        }
        head.extend(["u1", "u2", "u3"]);
        if self.obs.strain.is_some() {
            head.extend(STRAIN_COLS);
        }
        writeln!(w, "{}", head.join(","))?;
        for i in 0..self.obs.points.len() {
            let mut row: Vec<String> = self.obs.points[i].iter().map(|v| v.to_string()).collect();
            row.extend(self.obs.u[i].iter().map(|v| v.to_string()));
            if let Some(e) = &self.obs.strain {
                row.extend(e[i].iter().map(|v| v.to_string()));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_sidecar<W: Write>(&self, w: W) -> Result<(), DatagenError> {
        serde_json::to_writer_pretty(w, &self.meta)?;
        Ok(())
    }

    /// Read back a file written by [`Dataset::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<ObsSet, DatagenError> {
        let mut lines = r.lines();
        let head = lines
            .next()
            .ok_or_else(|| DatagenError::Format("empty file".into()))??;
        let cols: Vec<&str> = head.trim().split(',').collect();
        let has_time = cols.get(3) == Some(&"t");
        let nx = if has_time { 4 } else { 3 };
        let mut expect: Vec<&str> = vec!["x", "y", "z"];
        if has_time {
            expect.push("t");
        }
        expect.extend(["u1", "u2", "u3"]);
        let has_strain = cols.len() == expect.len() + 6;
        if has_strain {
            expect.extend(STRAIN_COLS);
        }
        if cols != expect {
            return Err(DatagenError::Format(format!("unexpected header `{head}`")));
        }
        let mut obs = ObsSet {
            strain: has_strain.then(Vec::new),
            ..ObsSet::default()
        };
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| DatagenError::Format(format!("line {}: {e}", lineno + 2)))?;
            if vals.len() != expect.len() {
                return Err(DatagenError::Format(format!(
                    "line {}: {} columns",
                    lineno + 2,
                    vals.len()
                )));
            }
            obs.points.push(vals[..nx].to_vec());
            obs.u.push([vals[nx], vals[nx + 1], vals[nx + 2]]);
            if let Some(s) = obs.strain.as_mut() {
                s.push(std::array::from_fn(|k| vals[nx + 3 + k]));
            }
        }
        Ok(obs)
    }
}
