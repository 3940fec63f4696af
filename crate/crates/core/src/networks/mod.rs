//! Displacement and parameter networks: tanh MLPs with input scaling,
//! frozen Fourier features, output constraints, a learned input-to-output
//! projection and exact Dirichlet imposition on the face `y = -5`.

pub mod jets;

use std::io::{Read, Write};
use std::ops::{Add, Mul};

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
pub use jets::{scale_jets, scale_jets_adjoint, seed_inputs, JetLayout, MlpTrace};

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("bad network file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub residual_input_to_output: bool,
    #[serde(default)]
    pub init_seed: u64,
}

/// A tanh MLP with a linear output layer. Parameters live in a flat slice:
/// per layer the row-major weight matrix then the bias, then the optional
/// residual projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpSpec", into = "MlpSpec")]
pub struct Mlp {
    pub spec: MlpSpec,
    /// `(fan_in, fan_out, weight offset, bias offset)`
    pub(crate) layers: Vec<(usize, usize, usize, usize)>,
    pub(crate) residual: Option<usize>,
    n_params: usize,
}

impl From<Mlp> for MlpSpec {
    fn from(m: Mlp) -> Self {
        m.spec
    }
}

impl TryFrom<MlpSpec> for Mlp {
    type Error = NetworkError;
    fn try_from(spec: MlpSpec) -> Result<Self, NetworkError> {
        Mlp::new(spec)
    }
}

/// One entry of the parameter layout, for file headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self, NetworkError> {
        if spec.input_dim == 0 || spec.output_dim == 0 || spec.hidden.contains(&0) {
            return Err(NetworkError::InvalidSpec(
                "all widths must be at least 1".into(),
            ));
        }
        let mut dims = vec![spec.input_dim];
        dims.extend(&spec.hidden);
        dims.push(spec.output_dim);
        let mut layers = Vec::new();
        let mut off = 0;
        for w in dims.windows(2) {
            layers.push((w[0], w[1], off, off + w[0] * w[1]));
            off += w[0] * w[1] + w[1];
        }
        let residual = spec.residual_input_to_output.then(|| {
            let r = off;
            off += spec.input_dim * spec.output_dim;
            r
        });
        Ok(Mlp {
            spec,
            layers,
            residual,
            n_params: off,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn layer_map(&self, prefix: &str, base: usize) -> Vec<LayerEntry> {
        let mut out = Vec::new();
        for (l, &(i, o, w, b)) in self.layers.iter().enumerate() {
            out.push(LayerEntry {
                name: format!("{prefix}.layer{l}.weight"),
                offset: base + w,
                rows: o,
                cols: i,
            });
            out.push(LayerEntry {
                name: format!("{prefix}.layer{l}.bias"),
                offset: base + b,
                rows: o,
                cols: 1,
            });
        }
        if let Some(r) = self.residual {
            out.push(LayerEntry {
                name: format!("{prefix}.residual"),
                offset: base + r,
                rows: self.spec.output_dim,
                cols: self.spec.input_dim,
            });
        }
        out
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init_xavier(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.n_params];
        let mut fill = |off: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut p[off..off + fan_in * fan_out] {
                *v = rng.gen_range(-lim..=lim);
            }
        };
        for &(i, o, w, _) in &self.layers {
            fill(w, i, o, &mut rng);
        }
        if let Some(r) = self.residual {
            fill(r, self.spec.input_dim, self.spec.output_dim, &mut rng);
        }
        p
    }

    /// Straight-line evaluation over any scalar; parameters may be plain
    /// `f64` or the same scalar type.
    pub fn eval_generic<R, P>(&self, params: &[P], x: &[R]) -> Vec<R>
    where
        R: Real + Mul<P, Output = R> + Add<P, Output = R>,
        P: Copy,
    {
        let mut a: Vec<R> = x.to_vec();
        let nl = self.layers.len();
        for (l, &(i, o, w, b)) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(o);
            for r in 0..o {
                let mut s = a[0] * params[w + r * i];
                for c in 1..i {
                    s += a[c] * params[w + r * i + c];
                }
                s = s + params[b + r];
                z.push(if l + 1 < nl { s.tanh() } else { s });
            }
            a = z;
        }
        if let Some(r) = self.residual {
            let i = self.spec.input_dim;
            for (q, out) in a.iter_mut().enumerate() {
                for c in 0..i {
                    *out += x[c] * params[r + q * i + c];
                }
            }
        }
        a
    }
}

/// `Xavier` initialization of `spec` with its own seed.
pub fn init_xavier(spec: &MlpSpec) -> Result<Vec<f64>, NetworkError> {
    Ok(Mlp::new(spec.clone())?.init_xavier(spec.init_seed))
}

/// Affine input normalization `(x - center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    /// The cube `[-5, 5]^3` mapped to `[-1, 1]^3`, optionally with a time
    /// window `[t0, t1]` mapped to `[-1, 1]`.
    pub fn cube(time_window: Option<(f64, f64)>) -> Self {
        let mut center = vec![0.0; 3];
        let mut scale = vec![HALF_SIDE; 3];
        if let Some((t0, t1)) = time_window {
            center.push(0.5 * (t0 + t1));
            scale.push(0.5 * (t1 - t0));
        }
        InputScaling { center, scale }
    }

    pub fn apply<R: Real>(&self, x: &[R]) -> Vec<R> {
        x.iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(&v, (&c, &s))| (v - c) / s)
            .collect()
    }
}

/// Half the cube side, mm.
pub const HALF_SIDE: f64 = 5.0;

/// Frozen random Fourier features `[cos(B x); sin(B x)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierEmbedding {
    pub b: Vec<[f64; 3]>,
    pub sigma_f: f64,
}

impl FourierEmbedding {
    pub fn new(m: usize, sigma_f: f64, seed: u64) -> Result<Self, NetworkError> {
        if m == 0 || !(sigma_f > 0.0) {
            return Err(NetworkError::InvalidSpec(
                "Fourier features need m >= 1 and sigma_F > 0".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma_f).expect("positive sigma");
        let b = (0..m)
            .map(|_| std::array::from_fn(|_| normal.sample(&mut rng)))
            .collect();
        Ok(FourierEmbedding { b, sigma_f })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.b.len()
    }

    pub fn embed<R: Real>(&self, x: &[R]) -> Vec<R> {
        let phase: Vec<R> = self
            .b
            .iter()
            .map(|b| x[0] * b[0] + x[1] * b[1] + x[2] * b[2])
            .collect();
        let mut out: Vec<R> = phase.iter().map(|p| p.cos()).collect();
        out.extend(phase.iter().map(|p| p.sin()));
        out
    }

    /// Embed first-order input jets.
    pub fn embed_jets(&self, x: &Array2<f64>, layout: &JetLayout) -> Array2<f64> {
        assert!(layout.pairs.is_empty(), "Fourier jets are first order");
        let k = layout.k();
        let n = x.ncols() / k;
        let m = self.b.len();
        let mut out = Array2::zeros((2 * m, x.ncols()));
        for p in 0..n {
            for (j, b) in self.b.iter().enumerate() {
                let mut ph = [0.0; jets::MAX_K];
                for c in 0..k {
                    ph[c] = b[0] * x[[0, p * k + c]]
                        + b[1] * x[[1, p * k + c]]
                        + b[2] * x[[2, p * k + c]];
                }
                let (s, co) = ph[0].sin_cos();
                out[[j, p * k]] = co;
                out[[m + j, p * k]] = s;
                for c in 1..k {
                    out[[j, p * k + c]] = -s * ph[c];
                    out[[m + j, p * k + c]] = co * ph[c];
                }
            }
        }
        out
    }
}

/// Map from raw network output to the parameter value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OutputConstraint {
    None,
    /// `z²`
    Square,
    /// `(max - min) σ(α z) + min`
    Interval {
        min: f64,
        max: f64,
        alpha: f64,
    },
}

impl OutputConstraint {
    pub fn apply<R: Real>(&self, z: R) -> R {
        match *self {
            OutputConstraint::None => z,
            OutputConstraint::Square => z * z,
            OutputConstraint::Interval { min, max, alpha } => {
                (z * alpha).sigmoid() * (max - min) + min
            }
        }
    }

    /// Inverse map for initial guesses.
    pub fn preimage(&self, v: f64) -> f64 {
        match *self {
            OutputConstraint::None => v,
            OutputConstraint::Square => v.max(0.0).sqrt(),
            OutputConstraint::Interval { min, max, alpha } => {
                let s = ((v - min) / (max - min)).clamp(1e-12, 1.0 - 1e-12);
                (s / (1.0 - s)).ln() / alpha
            }
        }
    }

    /// Value and derivatives of the scalar map at `z`.
    fn derivs(&self, z: f64) -> (f64, f64, f64) {
        match *self {
            OutputConstraint::None => (z, 1.0, 0.0),
            OutputConstraint::Square => (z * z, 2.0 * z, 2.0),
            OutputConstraint::Interval { min, max, alpha } => {
                let s = (alpha * z).sigmoid();
                let d1 = s * (1.0 - s);
                let d2 = d1 * (1.0 - 2.0 * s);
                (
                    (max - min) * s + min,
                    (max - min) * alpha * d1,
                    (max - min) * alpha * alpha * d2,
                )
            }
        }
    }

    /// Apply to first-order jets in place; returns `z` for the adjoint.
    pub fn apply_jets(&self, z: &mut Array2<f64>, layout: &JetLayout) -> Array2<f64> {
        assert!(layout.pairs.is_empty(), "constraint jets are first order");
        let saved = z.clone();
        let k = layout.k();
        for mut row in z.axis_iter_mut(Axis(0)) {
            for c in row
                .as_slice_mut()
                .expect("standard layout")
                .chunks_exact_mut(k)
            {
                let (v, d1, _) = self.derivs(c[0]);
                c[0] = v;
                for e in &mut c[1..] {
                    *e *= d1;
                }
            }
        }
        saved
    }

    pub fn adjoint_jets(&self, saved: &Array2<f64>, bar: &mut Array2<f64>, layout: &JetLayout) {
        let k = layout.k();
        for (zr, mut br) in saved.axis_iter(Axis(0)).zip(bar.axis_iter_mut(Axis(0))) {
            let zs = zr.as_slice().expect("standard layout");
            for (zc, bc) in zs.chunks_exact(k).zip(
                br.as_slice_mut()
                    .expect("standard layout")
                    .chunks_exact_mut(k),
            ) {
                let (_, d1, d2) = self.derivs(zc[0]);
                let mut z0 = d1 * bc[0];
                for c in 1..k {
                    z0 += d2 * zc[c] * bc[c];
                    bc[c] *= d1;
                }
                bc[0] = z0;
            }
        }
    }
}

/// `(y + 5) / 10`: zero on the Dirichlet face, one on the opposite face.
pub fn phi_cube_face<R: Real>(point: &[R]) -> R {
    (point[1] + HALF_SIDE) / (2.0 * HALF_SIDE)
}

/// Boundary displacement extended into the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Lift {
    Zero,
    Constant { g: [f64; 3] },
}

impl Lift {
    pub fn value(&self) -> [f64; 3] {
        match *self {
            Lift::Zero => [0.0; 3],
            Lift::Constant { g } => g,
        }
    }
}

/// Network for `u(x)` or `u(x, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementNet {
    pub mlp: Mlp,
    pub scaling: InputScaling,
    /// Exact Dirichlet imposition `φ NN + g` when set.
    pub lift: Option<Lift>,
}

/// Saved state of a displacement forward pass.
pub struct DisplacementTrace {
    mlp: MlpTrace,
    phi: Option<Vec<f64>>,
}

impl DisplacementNet {
    pub fn input_dim(&self) -> usize {
        self.mlp.spec.input_dim
    }

    pub fn eval_generic<R, P>(&self, params: &[P], x: &[R]) -> [R; 3]
    where
        R: Real + Mul<P, Output = R> + Add<P, Output = R>,
        P: Copy,
    {
        let n = self.mlp.eval_generic(params, &self.scaling.apply(x));
        let mut out = [n[0], n[1], n[2]];
        if let Some(lift) = self.lift {
            let phi = phi_cube_face(x);
            let g = lift.value();
            for i in 0..3 {
                out[i] = phi * out[i] + g[i];
            }
        }
        out
    }

    /// Displacement jets (`3 x n K`) at `points`.
    pub fn forward_jets(
        &self,
        params: &[f64],
        points: &[Vec<f64>],
        layout: &JetLayout,
    ) -> (Array2<f64>, DisplacementTrace) {
        let x = seed_inputs(points, &self.scaling.center, &self.scaling.scale, layout);
        let (mut u, mlp) = self.mlp.forward_jet(params, x, layout);
        let phi = self.lift.map(|lift| {
            let k = layout.k();
            let mut phi = vec![0.0; points.len() * k];
            for (p, x) in points.iter().enumerate() {
                phi[p * k] = phi_cube_face(x);
                if layout.dim > 1 {
                    phi[p * k + 2] = 1.0 / (2.0 * HALF_SIDE);
                }
            }
            scale_jets(&mut u, &phi, layout);
            let g = lift.value();
            for (i, mut row) in u.axis_iter_mut(Axis(0)).enumerate() {
                for v in row
                    .as_slice_mut()
                    .expect("standard layout")
                    .iter_mut()
                    .step_by(k)
                {
                    *v += g[i];
                }
            }
            phi
        });
        (u, DisplacementTrace { mlp, phi })
    }

    pub fn backward_jets(
        &self,
        params: &[f64],
        trace: &DisplacementTrace,
        mut ubar: Array2<f64>,
        layout: &JetLayout,
        grad: &mut [f64],
    ) {
        if let Some(phi) = &trace.phi {
            scale_jets_adjoint(&mut ubar, phi, layout);
        }
        self.mlp
            .backward_jet(params, &trace.mlp, ubar, layout, grad);
    }
}

/// Network for a spatial parameter field `S_a(x)` or `σ0(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterNet {
    pub mlp: Mlp,
    pub scaling: InputScaling,
    pub fourier: Option<FourierEmbedding>,
    pub constraint: OutputConstraint,
}

pub struct ParameterTrace {
    mlp: MlpTrace,
    pre: Array2<f64>,
}

impl ParameterNet {
    pub fn eval_generic<R, P>(&self, params: &[P], x: &[R]) -> R
    where
        R: Real + Mul<P, Output = R> + Add<P, Output = R>,
        P: Copy,
    {
        let xh = self.scaling.apply(&x[..3]);
        let feats = match &self.fourier {
            Some(f) => f.embed(&xh),
            None => xh,
        };
        self.constraint
            .apply(self.mlp.eval_generic(params, &feats)[0])
    }

    /// Pre-activation of the output, before the constraint.
    pub fn pre_activation(&self, params: &[f64], x: &[f64]) -> f64 {
        let xh = self.scaling.apply(&x[..3]);
        let feats = match &self.fourier {
            Some(f) => f.embed(&xh),
            None => xh,
        };
        self.mlp.eval_generic(params, &feats)[0]
    }

    /// First-order jets (`1 x n K`) of the field at `points`.
    pub fn forward_jets(
        &self,
        params: &[f64],
        points: &[Vec<f64>],
        layout: &JetLayout,
    ) -> (Array2<f64>, ParameterTrace) {
        let spatial: Vec<Vec<f64>> = points.iter().map(|p| p[..3].to_vec()).collect();
        let x = seed_inputs(&spatial, &self.scaling.center, &self.scaling.scale, layout);
        let feats = match &self.fourier {
            Some(f) => f.embed_jets(&x, layout),
            None => x,
        };
        let (mut z, mlp) = self.mlp.forward_jet(params, feats, layout);
        let pre = self.constraint.apply_jets(&mut z, layout);
        (z, ParameterTrace { mlp, pre })
    }

    pub fn backward_jets(
        &self,
        params: &[f64],
        trace: &ParameterTrace,
        mut bar: Array2<f64>,
        layout: &JetLayout,
        grad: &mut [f64],
    ) {
        self.constraint.adjoint_jets(&trace.pre, &mut bar, layout);
        self.mlp.backward_jet(params, &trace.mlp, bar, layout, grad);
    }
}

/// How the active amplitude (or `σ0`) is parametrized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SaModel {
    /// A single trainable `s` with value `s²`.
    Scalar {
        initial: f64,
    },
    Field(ParameterNet),
}

impl SaModel {
    pub fn n_params(&self) -> usize {
        match self {
            SaModel::Scalar { .. } => 1,
            SaModel::Field(net) => net.mlp.n_params(),
        }
    }

    pub fn init(&self, seed: u64) -> Vec<f64> {
        match self {
            SaModel::Scalar { initial } => vec![initial.max(0.0).sqrt()],
            SaModel::Field(net) => net.mlp.init_xavier(seed),
        }
    }

    pub fn eval_generic<R, P>(&self, params: &[P], x: &[R]) -> R
    where
        R: Real + Mul<P, Output = R> + Add<P, Output = R>,
        P: Copy,
    {
        match self {
            SaModel::Scalar { .. } => {
                let s = R::zero() + params[0];
                s * s
            }
            SaModel::Field(net) => net.eval_generic(params, x),
        }
    }

    pub fn eval(&self, params: &[f64], x: &[f64]) -> f64 {
        self.eval_generic::<f64, f64>(params, x)
    }
}

/// Displacement network plus amplitude model over one flat parameter vector
/// `[u | Sa]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub u: DisplacementNet,
    pub sa: SaModel,
}

impl Model {
    pub fn n_u(&self) -> usize {
        self.u.mlp.n_params()
    }

    pub fn n_params(&self) -> usize {
        self.n_u() + self.sa.n_params()
    }

    pub fn split<'a, T>(&self, p: &'a [T]) -> (&'a [T], &'a [T]) {
        p.split_at(self.n_u())
    }

    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut p = self.u.mlp.init_xavier(seed);
        p.extend(self.sa.init(seed.wrapping_add(0x5a5a_5a5a)));
        p
    }

    pub fn layer_map(&self) -> Vec<LayerEntry> {
        let mut m = self.u.mlp.layer_map("u", 0);
        match &self.sa {
            SaModel::Scalar { .. } => m.push(LayerEntry {
                name: "sa.scalar".into(),
                offset: self.n_u(),
                rows: 1,
                cols: 1,
            }),
            SaModel::Field(net) => m.extend(net.mlp.layer_map("sa", self.n_u())),
        }
        m
    }

    pub fn displacement(&self, params: &[f64], x: &[f64]) -> [f64; 3] {
        self.u.eval_generic::<f64, f64>(self.split(params).0, x)
    }

    pub fn amplitude(&self, params: &[f64], x: &[f64]) -> f64 {
        self.sa.eval(self.split(params).1, x)
    }
}

/// `NN_u` at a point.
pub fn forward_displacement(model: &Model, params: &[f64], point: &[f64]) -> [f64; 3] {
    model.displacement(params, point)
}

/// `NN_Sa` at a point.
pub fn forward_parameter(model: &Model, params: &[f64], point: &[f64]) -> f64 {
    model.amplitude(params, point)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkHeader {
    pub model: Model,
    pub seed: u64,
    pub n_params: usize,
    pub layers: Vec<LayerEntry>,
}

const MAGIC: &[u8; 4] = b"APNN";

/// Write `APNN`, a little-endian `u32` header length, the JSON header and
/// the parameters as little-endian `f64`.
pub fn write_network<W: Write>(
    mut w: W,
    model: &Model,
    seed: u64,
    params: &[f64],
) -> Result<(), NetworkError> {
    if params.len() != model.n_params() {
        return Err(NetworkError::Format(format!(
            "expected {} parameters, got {}",
            model.n_params(),
            params.len()
        )));
    }
    let header = NetworkHeader {
        model: model.clone(),
        seed,
        n_params: params.len(),
        layers: model.layer_map(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for p in params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_network<R: Read>(mut r: R) -> Result<(NetworkHeader, Vec<f64>), NetworkError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NetworkError::Format("missing APNN magic".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: NetworkHeader = serde_json::from_slice(&json)?;
    let mut params = Vec::with_capacity(header.n_params);
    let mut buf = [0u8; 8];
    for _ in 0..header.n_params {
        r.read_exact(&mut buf)?;
        params.push(f64::from_le_bytes(buf));
    }
    if header.n_params != header.model.n_params() {
        return Err(NetworkError::Format(
            "parameter count does not match the model".into(),
        ));
    }
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_midpoint_and_limits() {
        let c = OutputConstraint::Interval {
            min: 0.1,
            max: 120.0,
            alpha: 8.0,
        };
        assert!((c.apply(0.0) - 60.05).abs() < 1e-12);
        assert_eq!(c.apply(-1e6), 0.1);
        assert_eq!(c.apply(1e6), 120.0);
    }

    #[test]
    fn embedding_at_origin() {
        let f = FourierEmbedding::new(12, 3.0, 1).unwrap();
        let e = f.embed(&[0.0; 3]);
        assert_eq!(e.len(), 24);
        assert!(e[..12].iter().all(|&v| v == 1.0));
        assert!(e[12..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi_cube_face(&[0.0, -5.0, 0.0]), 0.0);
        assert_eq!(phi_cube_face(&[0.0, 5.0, 0.0]), 1.0);
        assert_eq!(phi_cube_face(&[0.0, 0.0, 0.0]), 0.5);
    }
}
