//! Pointwise residual kernels and their vector-Jacobian products.
//!
//! The divergence of the stress needs second derivatives of `W`; gradients of
//! the squared residual need a contracted third derivative. Both are taken by
//! nesting duals over a small per-point tape instead of hand-derived tensors.

use super::{
    active_direction, cofactor, det3, first_piola, strain_energy, ConstitutiveError, MaterialParams,
};
use crate::autodiff::{Dual, HyperDual, Tape, Var};

/// Local jet of the state at a collocation point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PdeJet {
    /// Deformation gradient.
    pub f: [f64; 9],
    /// `g[j][k] = dF_k / dX_j`.
    pub g: [[f64; 9]; 3],
    pub sa: f64,
    pub grad_sa: [f64; 3],
    /// Second time derivative of the displacement.
    pub accel: [f64; 3],
    /// Body force.
    pub body: [f64; 3],
}

/// Cotangents of a scalar with respect to the jet inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PdeAdjoint {
    pub f: [f64; 9],
    pub g: [[f64; 9]; 3],
    pub sa: f64,
    pub grad_sa: [f64; 3],
    pub accel: [f64; 3],
}

fn check_j(f: &[f64; 9]) -> Result<(), ConstitutiveError> {
    let j = det3(f);
    if j > 0.0 {
        Ok(())
    } else {
        Err(ConstitutiveError::InvertedElement { j, point: None })
    }
}

/// Momentum residual `ρ ü - ∇·P - f`.
pub fn pde_residual(
    jet: &PdeJet,
    mat: &MaterialParams,
    rho: f64,
) -> Result<[f64; 3], ConstitutiveError> {
    check_j(&jet.f)?;
    let ft: [Dual<f64, 3>; 9] = std::array::from_fn(|k| {
        Dual::with_tangent(jet.f[k], [jet.g[0][k], jet.g[1][k], jet.g[2][k]])
    });
    let sat = Dual::with_tangent(jet.sa, jet.grad_sa);
    let p = first_piola(&ft, sat, mat);
    Ok(std::array::from_fn(|a| {
        let div = p[3 * a].eps[0] + p[3 * a + 1].eps[1] + p[3 * a + 2].eps[2];
        rho * jet.accel[a] - div - jet.body[a]
    }))
}

/// Gradient of `<s, r>` with respect to the jet, `r` the momentum residual.
pub fn pde_residual_vjp(
    jet: &PdeJet,
    mat: &MaterialParams,
    rho: f64,
    s: &[f64; 3],
    tape: &Tape,
) -> PdeAdjoint {
    tape.clear();
    let fv: [Var; 9] = std::array::from_fn(|k| tape.var(jet.f[k]));
    let gv: [[Var; 9]; 3] = std::array::from_fn(|j| std::array::from_fn(|k| tape.var(jet.g[j][k])));
    let sav = tape.var(jet.sa);
    let gsav: [Var; 3] = std::array::from_fn(|j| tape.var(jet.grad_sa[j]));
    let zero = Var::constant(0.0);

    // phi = sum_j D²W[G_j, V_j] + d/dX_j <Sa a(F), V_j>, with (V_j)_{aj} = s_a.
    let mut phi = zero;
    for j in 0..3 {
        let fh: [HyperDual<Var, 1>; 9] = std::array::from_fn(|k| {
            let v = if k % 3 == j { s[k / 3] } else { 0.0 };
            Dual {
                re: Dual::with_tangent(fv[k], [gv[j][k]]),
                eps: [Dual::constant(Var::constant(v))],
            }
        });
        phi += strain_energy(&fh, mat).eps[0].eps[0];
        if mat.f0[j] != 0.0 {
            let fd: [Dual<Var, 1>; 9] =
                std::array::from_fn(|k| Dual::with_tangent(fv[k], [gv[j][k]]));
            let a = active_direction(&fd, &mat.f0);
            let sad = Dual::with_tangent(sav, [gsav[j]]);
            for r in 0..3 {
                phi += (sad * a[3 * r + j]).eps[0] * s[r];
            }
        }
    }
    let adj = tape.gradient(phi);
    PdeAdjoint {
        f: fv.map(|v| -adj.wrt(v)),
        g: gv.map(|row| row.map(|v| -adj.wrt(v))),
        sa: -adj.wrt(sav),
        grad_sa: gsav.map(|v| -adj.wrt(v)),
        accel: s.map(|v| rho * v),
    }
}

/// Traction mismatch term `P n + p cof(F) n` (follower pressure `p`).
pub fn traction(
    f: &[f64; 9],
    sa: f64,
    normal: &[f64; 3],
    pressure: f64,
    mat: &MaterialParams,
) -> Result<[f64; 3], ConstitutiveError> {
    check_j(f)?;
    let p = first_piola(f, sa, mat);
    let cof = cofactor(f);
    Ok(std::array::from_fn(|a| {
        let mut t = 0.0;
        for b in 0..3 {
            t += (p[3 * a + b] + pressure * cof[3 * a + b]) * normal[b];
        }
        t
    }))
}

/// Gradients of `<s, traction>` with respect to `F` and `Sa`.
pub fn traction_vjp(
    f: &[f64; 9],
    sa: f64,
    normal: &[f64; 3],
    pressure: f64,
    mat: &MaterialParams,
    s: &[f64; 3],
    tape: &Tape,
) -> ([f64; 9], f64) {
    tape.clear();
    let fv: [Var; 9] = std::array::from_fn(|k| tape.var(f[k]));
    let sav = tape.var(sa);
    let v: [f64; 9] = std::array::from_fn(|k| s[k / 3] * normal[k % 3]);
    let fd: [Dual<Var, 1>; 9] =
        std::array::from_fn(|k| Dual::with_tangent(fv[k], [Var::constant(v[k])]));
    let mut phi = strain_energy(&fd, mat).eps[0];
    let a = active_direction(&fv, &mat.f0);
    let cof = if pressure != 0.0 {
        Some(cofactor(&fv))
    } else {
        None
    };
    for k in 0..9 {
        if v[k] != 0.0 {
            phi += sav * a[k] * v[k];
            if let Some(c) = &cof {
                phi += c[k] * (pressure * v[k]);
            }
        }
    }
    let adj = tape.gradient(phi);
    (fv.map(|x| adj.wrt(x)), adj.wrt(sav))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jet() -> PdeJet {
        PdeJet {
            f: [1.03, 0.02, -0.01, 0.015, 0.98, 0.03, -0.02, 0.01, 1.01],
            g: [
                [0.01, -0.02, 0.005, 0.003, 0.01, -0.004, 0.002, 0.006, -0.01],
                [
                    0.004, 0.01, -0.003, 0.02, -0.01, 0.002, -0.005, 0.001, 0.008,
                ],
                [
                    -0.006, 0.002, 0.01, 0.001, 0.003, -0.02, 0.01, -0.004, 0.002,
                ],
            ],
            sa: 90.0,
            grad_sa: [1.5, -0.7, 0.3],
            accel: [0.1, -0.2, 0.05],
            body: [0.3, 0.1, -0.2],
        }
    }

    fn loss(j: &PdeJet, s: &[f64; 3]) -> f64 {
        let r = pde_residual(j, &MaterialParams::default(), 2.0).unwrap();
        r[0] * s[0] + r[1] * s[1] + r[2] * s[2]
    }

    #[test]
    fn vjp_matches_central_differences() {
        let mat = MaterialParams::default();
        let j0 = jet();
        let s = [0.7, -1.1, 0.4];
        let tape = Tape::new();
        let adj = pde_residual_vjp(&j0, &mat, 2.0, &s, &tape);
        let h = 1e-6;
        let check = |an: f64, perturb: &dyn Fn(&mut PdeJet, f64)| {
            let mut p = j0;
            perturb(&mut p, h);
            let mut m = j0;
            perturb(&mut m, -h);
            let fd = (loss(&p, &s) - loss(&m, &s)) / (2.0 * h);
            assert!((an - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{an} vs {fd}");
        };
        for k in 0..9 {
            check(adj.f[k], &|x, d| x.f[k] += d);
            for jj in 0..3 {
                check(adj.g[jj][k], &|x, d| x.g[jj][k] += d);
            }
        }
        check(adj.sa, &|x, d| x.sa += d);
        for jj in 0..3 {
            check(adj.grad_sa[jj], &|x, d| x.grad_sa[jj] += d);
            check(adj.accel[jj], &|x, d| x.accel[jj] += d);
        }
    }

    #[test]
    fn traction_vjp_matches_central_differences() {
        let mat = MaterialParams::default();
        let f = jet().f;
        let n = [0.0, 0.6, 0.8];
        let s = [0.3, -0.5, 0.9];
        let tape = Tape::new();
        let (gf, gs) = traction_vjp(&f, 40.0, &n, 1.5, &mat, &s, &tape);
        let val = |f: &[f64; 9], sa: f64| {
            let t = traction(f, sa, &n, 1.5, &mat).unwrap();
            t[0] * s[0] + t[1] * s[1] + t[2] * s[2]
        };
        let h = 1e-6;
        for k in 0..9 {
            let mut p = f;
            p[k] += h;
            let mut m = f;
            m[k] -= h;
            let fd = (val(&p, 40.0) - val(&m, 40.0)) / (2.0 * h);
            assert!((gf[k] - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
        let fd = (val(&f, 40.0 + h) - val(&f, 40.0 - h)) / (2.0 * h);
        assert!((gs - fd).abs() < 1e-8);
    }
}
