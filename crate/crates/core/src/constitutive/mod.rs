//! Kinematics, Guccione passive stress, fiber active stress and the boundary
//! inversion for the active amplitude.
//!
//! Tensors are row-major `[T; 9]`, index `3 * row + col`. Units are mm, kPa.

mod kernel;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Real};

pub use kernel::{pde_residual, pde_residual_vjp, traction, traction_vjp, PdeAdjoint, PdeJet};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConstitutiveError {
    #[error("inverted element: J = {j:e}{}", fmt_point(.point))]
    InvertedElement { j: f64, point: Option<[f64; 3]> },
    #[error("exp overflow in strain energy (Q = {q:e}); reduce the displacement scale")]
    Overflow { q: f64 },
    #[error("degenerate fiber stretch |F f0| = {0:e}")]
    DegenerateFiber(f64),
    #[error("active amplitude not identifiable: {0}")]
    NonIdentifiable(String),
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
}

fn fmt_point(p: &Option<[f64; 3]>) -> String {
    match p {
        Some(x) => format!(" at ({}, {}, {})", x[0], x[1], x[2]),
        None => String::new(),
    }
}

impl ConstitutiveError {
    /// Attach the coordinates of the failing point.
    pub fn at(self, x: [f64; 3]) -> Self {
        match self {
            ConstitutiveError::InvertedElement { j, .. } => {
                ConstitutiveError::InvertedElement { j, point: Some(x) }
            }
            e => e,
        }
    }
}

/// Guccione constants, bulk modulus and the fiber/sheet/normal frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialParams {
    pub alpha_p: f64,
    pub kappa: f64,
    pub b_f: f64,
    pub b_t: f64,
    pub b_fs: f64,
    pub f0: [f64; 3],
    pub s0: [f64; 3],
    pub n0: [f64; 3],
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            alpha_p: 0.8,
            kappa: 650.0,
            b_f: 18.48,
            b_t: 3.58,
            b_fs: 1.627,
            f0: [1.0, 0.0, 0.0],
            s0: [0.0, 1.0, 0.0],
            n0: [0.0, 0.0, 1.0],
        }
    }
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        let bad = |m: &str| Err(ConstitutiveError::InvalidMaterial(m.into()));
        if !(self.alpha_p > 0.0 && self.kappa > 0.0) {
            return bad("alpha_p and kappa must be positive");
        }
        if !(self.b_f > 0.0 && self.b_t > 0.0 && self.b_fs > 0.0) {
            return bad("exponents must be positive");
        }
        let frame = [self.f0, self.s0, self.n0];
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                if (dot3(&frame[i], &frame[j]) - target).abs() > 1e-12 {
                    return bad("fiber frame is not orthonormal");
                }
            }
        }
        if det3(&[
            self.f0[0], self.f0[1], self.f0[2], self.s0[0], self.s0[1], self.s0[2], self.n0[0],
            self.n0[1], self.n0[2],
        ]) < 0.0
        {
            return bad("fiber frame is left-handed");
        }
        Ok(())
    }

    fn canonical_frame(&self) -> bool {
        self.f0 == [1.0, 0.0, 0.0] && self.s0 == [0.0, 1.0, 0.0] && self.n0 == [0.0, 0.0, 1.0]
    }

    /// `F R^T`, with the frame vectors as the rows of `R`.
    fn to_fiber_frame<T: Real>(&self, f: &[T; 9]) -> [T; 9] {
        if self.canonical_frame() {
            return *f;
        }
        let r = [self.f0, self.s0, self.n0];
        std::array::from_fn(|k| {
            let (a, b) = (k / 3, k % 3);
            let mut s = T::zero();
            for c in 0..3 {
                if r[b][c] != 0.0 {
                    s += f[3 * a + c] * r[b][c];
                }
            }
            s
        })
    }
}

/// Kinematic quantities at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationState {
    pub f: [f64; 9],
    pub j: f64,
    pub cbar: [f64; 9],
    pub ebar: [f64; 9],
}

pub fn det3<T: Real>(f: &[T; 9]) -> T {
    f[0] * (f[4] * f[8] - f[5] * f[7]) - f[1] * (f[3] * f[8] - f[5] * f[6])
        + f[2] * (f[3] * f[7] - f[4] * f[6])
}

/// Cofactor matrix `J F^{-T}`.
pub fn cofactor<T: Real>(f: &[T; 9]) -> [T; 9] {
    [
        f[4] * f[8] - f[5] * f[7],
        f[5] * f[6] - f[3] * f[8],
        f[3] * f[7] - f[4] * f[6],
        f[2] * f[7] - f[1] * f[8],
        f[0] * f[8] - f[2] * f[6],
        f[1] * f[6] - f[0] * f[7],
        f[1] * f[5] - f[2] * f[4],
        f[2] * f[3] - f[0] * f[5],
        f[0] * f[4] - f[1] * f[3],
    ]
}

/// `F = I + grad u`, `J`, `C̄ = J^{-2/3} F^T F` and `Ē = (C̄ - I)/2`.
pub fn kinematics(grad_u: &[[f64; 3]; 3]) -> Result<DeformationState, ConstitutiveError> {
    let mut f = [0.0; 9];
    for a in 0..3 {
        for b in 0..3 {
            f[3 * a + b] = grad_u[a][b] + if a == b { 1.0 } else { 0.0 };
        }
    }
    let j = det3(&f);
    if !(j > 0.0) {
        return Err(ConstitutiveError::InvertedElement { j, point: None });
    }
    let s = j.powf(-2.0 / 3.0);
    let mut cbar = [0.0; 9];
    let mut ebar = [0.0; 9];
    for a in 0..3 {
        for b in 0..3 {
            let c = f[a] * f[b] + f[3 + a] * f[3 + b] + f[6 + a] * f[6 + b];
            cbar[3 * a + b] = s * c;
            ebar[3 * a + b] = 0.5 * (s * c - if a == b { 1.0 } else { 0.0 });
        }
    }
    Ok(DeformationState { f, j, cbar, ebar })
}

/// The Guccione exponent `Q̄` (fiber frame components of `Ē`).
pub fn guccione_q<T: Real>(f: &[T; 9], mat: &MaterialParams) -> T {
    energy_parts(f, mat).0
}

fn energy_parts<T: Real>(f: &[T; 9], mat: &MaterialParams) -> (T, T) {
    let f = mat.to_fiber_frame(f);
    let lnj = det3(&f).ln();
    let h = (lnj * (-2.0 / 3.0)).exp() * 0.5;
    let c = |a: usize, b: usize| f[a] * f[b] + f[3 + a] * f[3 + b] + f[6 + a] * f[6 + b];
    let e00 = h * c(0, 0) - 0.5;
    let e11 = h * c(1, 1) - 0.5;
    let e22 = h * c(2, 2) - 0.5;
    let e01 = h * c(0, 1);
    let e02 = h * c(0, 2);
    let e12 = h * c(1, 2);
    let q = e00 * e00 * mat.b_f
        + (e11 * e11 + e22 * e22 + e12 * e12 * 2.0) * mat.b_t
        + (e01 * e01 + e02 * e02) * (2.0 * mat.b_fs);
    (q, lnj)
}

/// Strain energy `W = (α_P/2)(exp Q̄ - 1) + (κ/2)(ln J)²`.
pub fn strain_energy<T: Real>(f: &[T; 9], mat: &MaterialParams) -> T {
    let (q, lnj) = energy_parts(f, mat);
    (q.exp() - 1.0) * (0.5 * mat.alpha_p) + lnj * lnj * (0.5 * mat.kappa)
}

/// `P_pas = dW/dF`, by forward differentiation of [`strain_energy`].
pub fn passive_stress_real<T: Real>(f: &[T; 9], mat: &MaterialParams) -> [T; 9] {
    let fd: [Dual<T, 9>; 9] = std::array::from_fn(|k| Dual::variable(f[k], k));
    strain_energy(&fd, mat).eps
}

/// Unit-amplitude active direction `(F f0) ⊗ f0 / |F f0|`.
pub fn active_direction<T: Real>(f: &[T; 9], f0: &[f64; 3]) -> [T; 9] {
    let w: [T; 3] = std::array::from_fn(|a| {
        let mut s = T::zero();
        for b in 0..3 {
            if f0[b] != 0.0 {
                s += f[3 * a + b] * f0[b];
            }
        }
        s
    });
    let inv = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt().recip();
    std::array::from_fn(|k| {
        let (a, b) = (k / 3, k % 3);
        if f0[b] == 0.0 {
            T::zero()
        } else {
            w[a] * inv * f0[b]
        }
    })
}

/// Total first Piola stress `P_pas + Sa (F f0) ⊗ f0 / |F f0|`.
pub fn first_piola<T: Real>(f: &[T; 9], sa: T, mat: &MaterialParams) -> [T; 9] {
    let p = passive_stress_real(f, mat);
    let a = active_direction(f, &mat.f0);
    std::array::from_fn(|k| p[k] + sa * a[k])
}

/// Passive first Piola stress at a kinematic state.
pub fn passive_stress(
    state: &DeformationState,
    mat: &MaterialParams,
) -> Result<[f64; 9], ConstitutiveError> {
    if !(state.j > 0.0) {
        return Err(ConstitutiveError::InvertedElement {
            j: state.j,
            point: None,
        });
    }
    let q = guccione_q(&state.f, mat);
    if q > 700.0 {
        return Err(ConstitutiveError::Overflow { q });
    }
    Ok(passive_stress_real(&state.f, mat))
}

/// Active first Piola stress `Sa (F f0) ⊗ f0 / |F f0|`.
pub fn active_stress(
    state: &DeformationState,
    sa: f64,
    f0: &[f64; 3],
) -> Result<[f64; 9], ConstitutiveError> {
    let f = &state.f;
    let w: [f64; 3] =
        std::array::from_fn(|a| f[3 * a] * f0[0] + f[3 * a + 1] * f0[1] + f[3 * a + 2] * f0[2]);
    let norm = dot3(&w, &w).sqrt();
    if norm < 1e-12 {
        return Err(ConstitutiveError::DegenerateFiber(norm));
    }
    let a = active_direction(f, f0);
    Ok(a.map(|v| sa * v))
}

/// Active amplitude from the fiber row of a Neumann condition with
/// prescribed traction `t` (fiber `f0 = e1`):
/// `Sa = |F e1| (t_1 - <P_pas,1., n>) / (α F_11)`, `α = n·e1`.
pub fn boundary_invert_sa_traction(
    grad_u: &[[f64; 3]; 3],
    normal: &[f64; 3],
    p_pas: &[f64; 9],
    t1: f64,
) -> Result<f64, ConstitutiveError> {
    let alpha = normal[0];
    if alpha.abs() <= 1e-6 {
        return Err(ConstitutiveError::NonIdentifiable(format!(
            "normal {normal:?} is perpendicular to the fiber direction"
        )));
    }
    let f11 = 1.0 + grad_u[0][0];
    if f11.abs() <= 1e-12 {
        return Err(ConstitutiveError::NonIdentifiable("F_11 vanishes".into()));
    }
    let stretch =
        (1.0 + 2.0 * grad_u[0][0] + grad_u.iter().map(|r| r[0] * r[0]).sum::<f64>()).sqrt();
    let pn = p_pas[0] * normal[0] + p_pas[1] * normal[1] + p_pas[2] * normal[2];
    Ok(stretch * (t1 - pn) / (alpha * f11))
}

/// Active amplitude consistent with a traction-free Neumann face.
pub fn boundary_invert_sa(
    grad_u: &[[f64; 3]; 3],
    normal: &[f64; 3],
    p_pas: &[f64; 9],
) -> Result<f64, ConstitutiveError> {
    boundary_invert_sa_traction(grad_u, normal, p_pas, 0.0)
}
