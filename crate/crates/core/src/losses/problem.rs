//! Batched loss and gradient evaluation.
//!
//! Points are cut into fixed chunks; each chunk runs the network jets, the
//! pointwise kernels and the backward pass on its own. Partial sums come
//! back in chunk order and are reduced in that order.

use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::reference::{decay_range, sym_norm2};
use super::{LossError, LossWeights, Physics, PointSets};
use crate::autodiff::Tape;
use crate::constitutive::{pde_residual, pde_residual_vjp, traction, traction_vjp, PdeJet};
use crate::exec::{chunks, map_indexed, ExecMode};
use crate::networks::{JetLayout, Model, ParameterTrace, SaModel};

/// Unweighted term values. `pde` is the plain mean squared residual,
/// `pde_weighted` the attention-weighted mean that enters the loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub obs: f64,
    pub strain: f64,
    pub pde: f64,
    pub pde_weighted: f64,
    pub bcn: f64,
    pub bcd: f64,
    pub robin: f64,
    pub weight_decay: f64,
    pub reg: f64,
}

impl TermValues {
    fn add(&mut self, o: &TermValues) {
        self.obs += o.obs;
        self.strain += o.strain;
        self.pde += o.pde;
        self.pde_weighted += o.pde_weighted;
        self.bcn += o.bcn;
        self.bcd += o.bcd;
        self.robin += o.robin;
        self.reg += o.reg;
    }

    fn named(&self) -> [(&'static str, f64); 9] {
        [
            ("obs", self.obs),
            ("strain", self.strain),
            ("pde", self.pde),
            ("pde_weighted", self.pde_weighted),
            ("bcn", self.bcn),
            ("bcd", self.bcd),
            ("robin", self.robin),
            ("weight_decay", self.weight_decay),
            ("reg", self.reg),
        ]
    }

    /// The weighted total.
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.lambda_obs * self.obs
            + w.lambda_strain * self.strain
            + w.lambda_pde * self.pde_weighted
            + w.lambda_bcn * self.bcn
            + w.lambda_bcd * self.bcd
            + w.lambda_robin * self.robin
            + w.lambda_w * self.weight_decay
            + w.lambda_reg * self.reg
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    /// Empty when the gradient was not requested.
    pub grad: Vec<f64>,
    pub terms: TermValues,
    /// Squared residual norm at each collocation point.
    pub residuals: Vec<f64>,
}

/// Model and physics shared by every evaluation.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: Model,
    pub physics: Physics,
    pub exec: ExecMode,
    /// Points per work unit.
    pub chunk: usize,
}

#[derive(Debug, Clone)]
enum Work {
    Obs(Range<usize>),
    Pde(Range<usize>),
    Bcn(Range<usize>),
    Bcd(Range<usize>),
    Robin(Range<usize>),
}

struct Partial {
    sums: TermValues,
    grad: Vec<f64>,
    residuals: Vec<f64>,
}

/// Learned amplitude and its spatial gradient at a batch of points.
struct SaJets {
    values: Vec<f64>,
    grads: Vec<[f64; 3]>,
    trace: Option<ParameterTrace>,
}

struct Ctx<'a> {
    params: &'a [f64],
    sets: &'a PointSets,
    w: &'a LossWeights,
    mult: Option<&'a [f64]>,
    need_grad: bool,
}

fn first3() -> JetLayout {
    JetLayout::first(3)
}

fn xyz(x: &[f64]) -> [f64; 3] {
    [x[0], x[1], x[2]]
}

fn scale(n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        1.0 / n as f64
    }
}

impl Problem {
    pub fn new(model: Model, physics: Physics) -> Self {
        Problem {
            model,
            physics,
            exec: ExecMode::default(),
            chunk: 16,
        }
    }

    pub fn with_exec(mut self, exec: ExecMode) -> Self {
        self.exec = exec;
        self
    }

    /// Weighted loss, its gradient (if `need_grad`), the unweighted terms
    /// and per-point squared residuals. `multipliers` are the attention
    /// weights of the collocation points.
    pub fn evaluate(
        &self,
        params: &[f64],
        sets: &PointSets,
        w: &LossWeights,
        multipliers: Option<&[f64]>,
        need_grad: bool,
    ) -> Result<Evaluation, LossError> {
        assert_eq!(
            params.len(),
            self.model.n_params(),
            "parameter vector length"
        );
        if let Some(m) = multipliers {
            assert_eq!(
                m.len(),
                sets.pde.points.len(),
                "one multiplier per collocation point"
            );
        }
        let mut works = Vec::new();
        let c = self.chunk;
        works.extend(
            chunks(sets.obs.points.len(), 4 * c)
                .into_iter()
                .map(Work::Obs),
        );
        works.extend(chunks(sets.pde.points.len(), c).into_iter().map(Work::Pde));
        works.extend(
            chunks(sets.bcn.points.len(), 2 * c)
                .into_iter()
                .map(Work::Bcn),
        );
        if let Some(d) = &sets.bcd {
            works.extend(chunks(d.points.len(), 4 * c).into_iter().map(Work::Bcd));
        }
        if let Some(r) = &sets.robin {
            works.extend(chunks(r.points.len(), 2 * c).into_iter().map(Work::Robin));
        }
        let ctx = Ctx {
            params,
            sets,
            w,
            mult: multipliers,
            need_grad,
        };
        let parts = map_indexed(works.len(), self.exec, |i| self.run(&works[i], &ctx));

        let mut sums = TermValues::default();
        let mut grad = if need_grad {
            vec![0.0; params.len()]
        } else {
            Vec::new()
        };
        let mut residuals = Vec::with_capacity(sets.pde.points.len());
        for part in parts {
            let part = part?;
            sums.add(&part.sums);
            for (g, p) in grad.iter_mut().zip(&part.grad) {
                *g += p;
            }
            residuals.extend(part.residuals);
        }

        let mut terms = TermValues {
            obs: sums.obs * scale(sets.obs.points.len()),
            strain: sums.strain * scale(sets.obs.points.len()),
            pde: sums.pde * scale(sets.pde.points.len()),
            pde_weighted: sums.pde_weighted * scale(sets.pde.points.len()),
            bcn: sums.bcn * scale(sets.bcn.points.len()),
            bcd: sums.bcd * scale(sets.bcd.as_ref().map_or(0, |d| d.points.len())),
            robin: sums.robin * scale(sets.robin.as_ref().map_or(0, |r| r.points.len())),
            weight_decay: 0.0,
            reg: sums.reg * scale(sets.bcn.points.len()),
        };
        let range = decay_range(&self.model);
        terms.weight_decay = params[range.clone()].iter().map(|p| p * p).sum();
        if need_grad && w.lambda_w != 0.0 {
            for i in range {
                grad[i] += 2.0 * w.lambda_w * params[i];
            }
        }
        for (name, v) in terms.named() {
            if !v.is_finite() {
                return Err(LossError::NonFinite { term: name });
            }
        }
        let loss = terms.total(w);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(LossError::NonFinite { term: "gradient" });
        }
        Ok(Evaluation {
            loss,
            grad,
            terms,
            residuals,
        })
    }

    fn run(&self, work: &Work, ctx: &Ctx) -> Result<Partial, LossError> {
        let mut part = Partial {
            sums: TermValues::default(),
            grad: if ctx.need_grad {
                vec![0.0; ctx.params.len()]
            } else {
                Vec::new()
            },
            residuals: Vec::new(),
        };
        match work {
            Work::Obs(r) => self.run_obs(r.clone(), ctx, &mut part),
            Work::Pde(r) => self.run_pde(r.clone(), ctx, &mut part)?,
            Work::Bcn(r) => self.run_bcn(r.clone(), ctx, &mut part)?,
            Work::Bcd(r) => self.run_bcd(r.clone(), ctx, &mut part),
            Work::Robin(r) => self.run_robin(r.clone(), ctx, &mut part)?,
        }
        Ok(part)
    }

    fn sa_forward(&self, psa: &[f64], points: &[Vec<f64>]) -> SaJets {
        match &self.model.sa {
            SaModel::Scalar { .. } => SaJets {
                values: vec![psa[0] * psa[0]; points.len()],
                grads: vec![[0.0; 3]; points.len()],
                trace: None,
            },
            SaModel::Field(net) => {
                let lay = first3();
                let (z, trace) = net.forward_jets(psa, points, &lay);
                let values = (0..points.len()).map(|p| z[[0, 4 * p]]).collect();
                let grads = (0..points.len())
                    .map(|p| [z[[0, 4 * p + 1]], z[[0, 4 * p + 2]], z[[0, 4 * p + 3]]])
                    .collect();
                SaJets {
                    values,
                    grads,
                    trace: Some(trace),
                }
            }
        }
    }

    fn sa_backward(
        &self,
        psa: &[f64],
        jets: &SaJets,
        bar_v: &[f64],
        bar_g: &[[f64; 3]],
        grad: &mut [f64],
    ) {
        match &self.model.sa {
            SaModel::Scalar { .. } => {
                grad[0] += bar_v.iter().sum::<f64>() * 2.0 * psa[0];
            }
            SaModel::Field(net) => {
                let n = bar_v.len();
                let mut bar = Array2::zeros((1, 4 * n));
                for p in 0..n {
                    bar[[0, 4 * p]] = bar_v[p];
                    for j in 0..3 {
                        bar[[0, 4 * p + 1 + j]] = bar_g[p][j];
                    }
                }
                let trace = jets.trace.as_ref().expect("field trace");
                net.backward_jets(psa, trace, bar, &first3(), grad);
            }
        }
    }

    fn backward_u(
        &self,
        pu: &[f64],
        ubar: Array2<f64>,
        trace: &crate::networks::DisplacementTrace,
        lay: &JetLayout,
        grad: &mut [f64],
    ) {
        self.model
            .u
            .backward_jets(pu, trace, ubar, lay, &mut grad[..self.model.n_u()]);
    }

    fn run_obs(&self, r: Range<usize>, ctx: &Ctx, part: &mut Partial) {
        let obs = &ctx.sets.obs;
        let pts = &obs.points[r.clone()];
        let (pu, _) = self.model.split(ctx.params);
        let strain = obs.strain.as_ref();
        let lay = if strain.is_some() {
            first3()
        } else {
            JetLayout::value()
        };
        let k = lay.k();
        let (uj, tr) = self.model.u.forward_jets(pu, pts, &lay);
        let n = obs.points.len() as f64;
        let c_obs = ctx.w.lambda_obs / n;
        let c_str = ctx.w.lambda_strain / n;
        let mut ubar = Array2::zeros(uj.raw_dim());
        for (q, i) in r.enumerate() {
            let col = q * k;
            let t = &obs.u[i];
            for a in 0..3 {
                let d = uj[[a, col]] - t[a];
                part.sums.obs += d * d;
                ubar[[a, col]] = 2.0 * c_obs * d;
            }
            if let Some(targets) = strain {
                let f: [f64; 9] = std::array::from_fn(|m| {
                    let (a, b) = (m / 3, m % 3);
                    uj[[a, col + 1 + b]] + if a == b { 1.0 } else { 0.0 }
                });
                let cm =
                    |i: usize, j: usize| f[i] * f[j] + f[3 + i] * f[3 + j] + f[6 + i] * f[6 + j];
                let e = [
                    0.5 * (cm(0, 0) - 1.0),
                    0.5 * (cm(1, 1) - 1.0),
                    0.5 * (cm(2, 2) - 1.0),
                    0.5 * cm(0, 1),
                    0.5 * cm(0, 2),
                    0.5 * cm(1, 2),
                ];
                let d: [f64; 6] = std::array::from_fn(|m| e[m] - targets[i][m]);
                part.sums.strain += sym_norm2(&d);
                // dL/dF = 2 c F D with D the symmetric misfit.
                let dm = [[d[0], d[3], d[4]], [d[3], d[1], d[5]], [d[4], d[5], d[2]]];
                for a in 0..3 {
                    for b in 0..3 {
                        let mut fd = 0.0;
                        for m in 0..3 {
                            fd += f[3 * a + m] * dm[m][b];
                        }
                        ubar[[a, col + 1 + b]] += 2.0 * c_str * fd;
                    }
                }
            }
        }
        if ctx.need_grad {
            self.backward_u(pu, ubar, &tr, &lay, &mut part.grad);
        }
    }

    fn run_pde(&self, r: Range<usize>, ctx: &Ctx, part: &mut Partial) -> Result<(), LossError> {
        let set = &ctx.sets.pde;
        let pts = &set.points[r.clone()];
        let (pu, psa) = self.model.split(ctx.params);
        let dim = self.model.u.input_dim();
        let lay = JetLayout::second(dim);
        let k = lay.k();
        let pair: [[usize; 3]; 3] =
            std::array::from_fn(|b| std::array::from_fn(|j| lay.pair_index(b, j).unwrap()));
        let tt = lay.pair_index(3, 3);
        let (uj, tr) = self.model.u.forward_jets(pu, pts, &lay);
        let sa = self.sa_forward(psa, pts);
        let c = ctx.w.lambda_pde / set.points.len() as f64;
        let mat = &self.physics.mat;
        let rho = self.physics.rho;
        let tape = Tape::with_capacity(if ctx.need_grad { 4096 } else { 0 });
        let mut ubar = Array2::zeros(uj.raw_dim());
        let mut bar_v = vec![0.0; pts.len()];
        let mut bar_g = vec![[0.0; 3]; pts.len()];
        for (q, i) in r.enumerate() {
            let x = &pts[q];
            let col = q * k;
            let tf = self.physics.time_factor(x);
            let mut jet = PdeJet {
                sa: sa.values[q] * tf,
                grad_sa: sa.grads[q].map(|g| g * tf),
                body: set.body[i],
                ..PdeJet::default()
            };
            for a in 0..3 {
                for b in 0..3 {
                    jet.f[3 * a + b] = uj[[a, col + 1 + b]] + if a == b { 1.0 } else { 0.0 };
                    for j in 0..3 {
                        jet.g[j][3 * a + b] = uj[[a, col + pair[b][j]]];
                    }
                }
                if let Some(t) = tt {
                    jet.accel[a] = uj[[a, col + t]];
                }
            }
            let res = pde_residual(&jet, mat, rho).map_err(|e| e.at(xyz(x)))?;
            let e = res[0] * res[0] + res[1] * res[1] + res[2] * res[2];
            let wi = ctx.mult.map_or(1.0, |m| m[i]);
            part.sums.pde += e;
            part.sums.pde_weighted += wi * e;
            part.residuals.push(e);
            if ctx.need_grad && c * wi != 0.0 {
                let s = res.map(|v| 2.0 * c * wi * v);
                let adj = pde_residual_vjp(&jet, mat, rho, &s, &tape);
                for a in 0..3 {
                    for b in 0..3 {
                        ubar[[a, col + 1 + b]] += adj.f[3 * a + b];
                        for j in 0..3 {
                            ubar[[a, col + pair[b][j]]] += adj.g[j][3 * a + b];
                        }
                    }
                    if let Some(t) = tt {
                        ubar[[a, col + t]] += adj.accel[a];
                    }
                }
                bar_v[q] = adj.sa * tf;
                bar_g[q] = adj.grad_sa.map(|g| g * tf);
            }
        }
        if ctx.need_grad {
            self.backward_u(pu, ubar, &tr, &lay, &mut part.grad);
            let n_u = self.model.n_u();
            self.sa_backward(psa, &sa, &bar_v, &bar_g, &mut part.grad[n_u..]);
        }
        Ok(())
    }

    fn run_bcn(&self, r: Range<usize>, ctx: &Ctx, part: &mut Partial) -> Result<(), LossError> {
        let set = &ctx.sets.bcn;
        let pts = &set.points[r.clone()];
        let (pu, psa) = self.model.split(ctx.params);
        let lay = first3();
        let (uj, tr) = self.model.u.forward_jets(pu, pts, &lay);
        let sa = self.sa_forward(psa, pts);
        let n = set.points.len() as f64;
        let c = ctx.w.lambda_bcn / n;
        let c_reg = ctx.w.lambda_reg / n;
        let field = matches!(self.model.sa, SaModel::Field(_));
        let mat = &self.physics.mat;
        let tape = Tape::with_capacity(if ctx.need_grad { 1024 } else { 0 });
        let mut ubar = Array2::zeros(uj.raw_dim());
        let mut bar_v = vec![0.0; pts.len()];
        let mut bar_g = vec![[0.0; 3]; pts.len()];
        for (q, i) in r.enumerate() {
            let x = &pts[q];
            let col = q * 4;
            let tf = self.physics.time_factor(x);
            let f: [f64; 9] = std::array::from_fn(|m| {
                let (a, b) = (m / 3, m % 3);
                uj[[a, col + 1 + b]] + if a == b { 1.0 } else { 0.0 }
            });
            let s_a = sa.values[q] * tf;
            let t = traction(&f, s_a, &set.normals[i], set.pressure[i], mat)
                .map_err(|e| e.at(xyz(x)))?;
            let om = set.omega[i];
            let h: [f64; 3] = std::array::from_fn(|a| t[a] - set.traction[i][a]);
            part.sums.bcn += om * (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]);
            if field {
                let g = sa.grads[q];
                part.sums.reg += (1.0 - om) * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
                if ctx.need_grad {
                    bar_g[q] = g.map(|v| 2.0 * c_reg * (1.0 - om) * v);
                }
            }
            if ctx.need_grad && c * om != 0.0 {
                let s = h.map(|v| 2.0 * c * om * v);
                let (gf, gsa) =
                    traction_vjp(&f, s_a, &set.normals[i], set.pressure[i], mat, &s, &tape);
                for a in 0..3 {
                    for b in 0..3 {
                        ubar[[a, col + 1 + b]] += gf[3 * a + b];
                    }
                }
                bar_v[q] = gsa * tf;
            }
        }
        if ctx.need_grad {
            self.backward_u(pu, ubar, &tr, &lay, &mut part.grad);
            let n_u = self.model.n_u();
            self.sa_backward(psa, &sa, &bar_v, &bar_g, &mut part.grad[n_u..]);
        }
        Ok(())
    }

    fn run_bcd(&self, r: Range<usize>, ctx: &Ctx, part: &mut Partial) {
        let set = ctx.sets.bcd.as_ref().expect("bcd set");
        let pts = &set.points[r.clone()];
        let (pu, _) = self.model.split(ctx.params);
        let lay = JetLayout::value();
        let (uj, tr) = self.model.u.forward_jets(pu, pts, &lay);
        let c = ctx.w.lambda_bcd / set.points.len() as f64;
        let mut ubar = Array2::zeros(uj.raw_dim());
        for (q, i) in r.enumerate() {
            for a in 0..3 {
                let d = uj[[a, q]] - set.g[i][a];
                part.sums.bcd += d * d;
                ubar[[a, q]] = 2.0 * c * d;
            }
        }
        if ctx.need_grad {
            self.backward_u(pu, ubar, &tr, &lay, &mut part.grad);
        }
    }

    fn run_robin(&self, r: Range<usize>, ctx: &Ctx, part: &mut Partial) -> Result<(), LossError> {
        let set = ctx.sets.robin.as_ref().expect("robin set");
        let pts = &set.points[r.clone()];
        let (pu, psa) = self.model.split(ctx.params);
        let lay = first3();
        let (uj, tr) = self.model.u.forward_jets(pu, pts, &lay);
        let sa = self.sa_forward(psa, pts);
        let c = ctx.w.lambda_robin / set.points.len() as f64;
        let mat = &self.physics.mat;
        let tape = Tape::with_capacity(if ctx.need_grad { 1024 } else { 0 });
        let mut ubar = Array2::zeros(uj.raw_dim());
        let mut bar_v = vec![0.0; pts.len()];
        let bar_g = vec![[0.0; 3]; pts.len()];
        for (q, i) in r.enumerate() {
            let x = &pts[q];
            let col = q * 4;
            let tf = self.physics.time_factor(x);
            let f: [f64; 9] = std::array::from_fn(|m| {
                let (a, b) = (m / 3, m % 3);
                uj[[a, col + 1 + b]] + if a == b { 1.0 } else { 0.0 }
            });
            let s_a = sa.values[q] * tf;
            let t = traction(&f, s_a, &set.normals[i], 0.0, mat).map_err(|e| e.at(xyz(x)))?;
            let h: [f64; 3] =
                std::array::from_fn(|a| t[a] + set.k * uj[[a, col]] - set.source[i][a]);
            part.sums.robin += h[0] * h[0] + h[1] * h[1] + h[2] * h[2];
            if ctx.need_grad {
                let s = h.map(|v| 2.0 * c * v);
                let (gf, gsa) = traction_vjp(&f, s_a, &set.normals[i], 0.0, mat, &s, &tape);
                for a in 0..3 {
                    ubar[[a, col]] += set.k * s[a];
                    for b in 0..3 {
                        ubar[[a, col + 1 + b]] += gf[3 * a + b];
                    }
                }
                bar_v[q] = gsa * tf;
            }
        }
        if ctx.need_grad {
            self.backward_u(pu, ubar, &tr, &lay, &mut part.grad);
            let n_u = self.model.n_u();
            self.sa_backward(psa, &sa, &bar_v, &bar_g, &mut part.grad[n_u..]);
        }
        Ok(())
    }
}
