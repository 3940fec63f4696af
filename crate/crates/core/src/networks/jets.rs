//! Batched Taylor jets through tanh MLPs.
//!
//! A jet matrix has one row per feature and `n * K` columns; column
//! `p * K + c` holds component `c` of point `p`. Components are the value,
//! the first derivatives in `dim` directions, then the requested second
//! derivative pairs.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};

use super::Mlp;

/// Upper bound on jet components per point.
pub const MAX_K: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JetLayout {
    pub dim: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl JetLayout {
    pub fn value() -> Self {
        JetLayout {
            dim: 0,
            pairs: vec![],
        }
    }

    pub fn first(dim: usize) -> Self {
        JetLayout { dim, pairs: vec![] }
    }

    /// All spatial second derivatives (upper triangle of the 3x3 Hessian),
    /// plus the pure second derivative in direction 3 when `dim == 4`.
    pub fn second(dim: usize) -> Self {
        let mut pairs = vec![(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        if dim == 4 {
            pairs.push((3, 3));
        }
        JetLayout { dim, pairs }
    }

    pub fn k(&self) -> usize {
        1 + self.dim + self.pairs.len()
    }

    /// Component index of the second derivative in directions `(i, j)`.
    pub fn pair_index(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.pairs
            .iter()
            .position(|&p| p == (a, b))
            .map(|q| 1 + self.dim + q)
    }
}

/// Seed normalized inputs `(x - center) / scale` for `n` points stored
/// row-wise in `x` (`n x dim_in`). Directions cover the first
/// `layout.dim` inputs.
pub fn seed_inputs(
    x: &[Vec<f64>],
    center: &[f64],
    scale: &[f64],
    layout: &JetLayout,
) -> Array2<f64> {
    let k = layout.k();
    let d = center.len();
    let mut out = Array2::zeros((d, x.len() * k));
    for (p, xp) in x.iter().enumerate() {
        for i in 0..d {
            out[[i, p * k]] = (xp[i] - center[i]) / scale[i];
            if i < layout.dim {
                out[[i, p * k + 1 + i]] = 1.0 / scale[i];
            }
        }
    }
    out
}

/// Stored intermediate jets of a forward pass.
pub struct MlpTrace {
    /// Input to each linear layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    k: usize,
}

fn add_bias(z: &mut Array2<f64>, b: &[f64], k: usize) {
    for (mut row, &bi) in z.axis_iter_mut(Axis(0)).zip(b) {
        let s = row.as_slice_mut().expect("standard layout");
        for v in s.iter_mut().step_by(k) {
            *v += bi;
        }
    }
}

fn tanh_forward(z: &Array2<f64>, layout: &JetLayout) -> Array2<f64> {
    let k = layout.k();
    let d = layout.dim;
    let mut y = Array2::zeros(z.raw_dim());
    for (zr, mut yr) in z.axis_iter(Axis(0)).zip(y.axis_iter_mut(Axis(0))) {
        let zs = zr.as_slice().expect("standard layout");
        let ys = yr.as_slice_mut().expect("standard layout");
        for (zc, yc) in zs.chunks_exact(k).zip(ys.chunks_exact_mut(k)) {
            let y0 = zc[0].tanh();
            let t1 = 1.0 - y0 * y0;
            let t2 = -2.0 * y0 * t1;
            yc[0] = y0;
            for i in 1..=d {
                yc[i] = t1 * zc[i];
            }
            for (q, &(a, b)) in layout.pairs.iter().enumerate() {
                let c = 1 + d + q;
                yc[c] = t1 * zc[c] + t2 * zc[1 + a] * zc[1 + b];
            }
        }
    }
    y
}

/// Pull the cotangent of `tanh(z)` back to `z`, in place.
fn tanh_backward(z: &Array2<f64>, ybar: &mut Array2<f64>, layout: &JetLayout) {
    let k = layout.k();
    let d = layout.dim;
    for (zr, mut br) in z.axis_iter(Axis(0)).zip(ybar.axis_iter_mut(Axis(0))) {
        let zs = zr.as_slice().expect("standard layout");
        let bs = br.as_slice_mut().expect("standard layout");
        for (zc, bc) in zs.chunks_exact(k).zip(bs.chunks_exact_mut(k)) {
            let y0 = zc[0].tanh();
            let t1 = 1.0 - y0 * y0;
            let t2 = -2.0 * y0 * t1;
            let t3 = -2.0 * t1 * t1 - 2.0 * y0 * t2;
            let mut z0 = t1 * bc[0];
            for i in 1..=d {
                z0 += t2 * zc[i] * bc[i];
                bc[i] *= t1;
            }
            for (q, &(a, b)) in layout.pairs.iter().enumerate() {
                let c = 1 + d + q;
                let g = bc[c];
                if g == 0.0 {
                    continue;
                }
                z0 += (t2 * zc[c] + t3 * zc[1 + a] * zc[1 + b]) * g;
                bc[1 + a] += t2 * zc[1 + b] * g;
                bc[1 + b] += t2 * zc[1 + a] * g;
                bc[c] = t1 * g;
            }
            bc[0] = z0;
        }
    }
}

impl Mlp {
    fn weights<'a>(&self, params: &'a [f64], l: usize) -> (ArrayView2<'a, f64>, &'a [f64]) {
        let (i, o, w, b) = self.layers[l];
        (
            ArrayView2::from_shape((o, i), &params[w..w + o * i]).expect("layer shape"),
            &params[b..b + o],
        )
    }

    /// Forward jets of the feature matrix `x` through the network.
    pub fn forward_jet(
        &self,
        params: &[f64],
        x: Array2<f64>,
        layout: &JetLayout,
    ) -> (Array2<f64>, MlpTrace) {
        let k = layout.k();
        let nl = self.layers.len();
        let mut inputs = Vec::with_capacity(nl);
        let mut pre = Vec::with_capacity(nl - 1);
        let mut a = x;
        for l in 0..nl {
            let (w, b) = self.weights(params, l);
            let mut z = w.dot(&a);
            add_bias(&mut z, b, k);
            inputs.push(a);
            if l + 1 < nl {
                a = tanh_forward(&z, layout);
                pre.push(z);
            } else {
                a = z;
            }
        }
        if let Some(r) = self.residual {
            let (o, i) = (self.spec.output_dim, self.spec.input_dim);
            let rw = ArrayView2::from_shape((o, i), &params[r..r + o * i]).expect("residual shape");
            general_mat_mul(1.0, &rw, &inputs[0], 1.0, &mut a);
        }
        (a, MlpTrace { inputs, pre, k })
    }

    /// Accumulate parameter gradients for output cotangent `out_bar`.
    pub fn backward_jet(
        &self,
        params: &[f64],
        trace: &MlpTrace,
        out_bar: Array2<f64>,
        layout: &JetLayout,
        grad: &mut [f64],
    ) {
        debug_assert_eq!(trace.k, layout.k());
        let k = trace.k;
        if let Some(r) = self.residual {
            let (o, i) = (self.spec.output_dim, self.spec.input_dim);
            let mut rg =
                ArrayViewMut2::from_shape((o, i), &mut grad[r..r + o * i]).expect("residual shape");
            general_mat_mul(1.0, &out_bar, &trace.inputs[0].t(), 1.0, &mut rg);
        }
        let mut zbar = out_bar;
        for l in (0..self.layers.len()).rev() {
            let (i, o, woff, boff) = self.layers[l];
            {
                let mut wg = ArrayViewMut2::from_shape((o, i), &mut grad[woff..woff + o * i])
                    .expect("layer shape");
                general_mat_mul(1.0, &zbar, &trace.inputs[l].t(), 1.0, &mut wg);
            }
            for (r, row) in zbar.axis_iter(Axis(0)).enumerate() {
                let s = row.as_slice().expect("standard layout");
                grad[boff + r] += s.iter().step_by(k).sum::<f64>();
            }
            if l == 0 {
                break;
            }
            let (w, _) = self.weights(params, l);
            let mut abar = w.t().dot(&zbar);
            tanh_backward(&trace.pre[l - 1], &mut abar, layout);
            zbar = abar;
        }
    }
}

/// Multiply jets row-wise by a scalar field jet `phi` (one jet per point).
pub fn scale_jets(u: &mut Array2<f64>, phi: &[f64], layout: &JetLayout) {
    let k = layout.k();
    let d = layout.dim;
    for mut row in u.axis_iter_mut(Axis(0)) {
        let s = row.as_slice_mut().expect("standard layout");
        for (uc, pc) in s.chunks_exact_mut(k).zip(phi.chunks_exact(k)) {
            let mut n = [0.0; MAX_K];
            n[..k].copy_from_slice(uc);
            uc[0] = pc[0] * n[0];
            for i in 1..=d {
                uc[i] = pc[i] * n[0] + pc[0] * n[i];
            }
            for (q, &(a, b)) in layout.pairs.iter().enumerate() {
                let c = 1 + d + q;
                uc[c] = pc[c] * n[0] + pc[1 + a] * n[1 + b] + pc[1 + b] * n[1 + a] + pc[0] * n[c];
            }
        }
    }
}

/// Transpose of [`scale_jets`] applied to a cotangent.
pub fn scale_jets_adjoint(ubar: &mut Array2<f64>, phi: &[f64], layout: &JetLayout) {
    let k = layout.k();
    let d = layout.dim;
    for mut row in ubar.axis_iter_mut(Axis(0)) {
        let s = row.as_slice_mut().expect("standard layout");
        for (bc, pc) in s.chunks_exact_mut(k).zip(phi.chunks_exact(k)) {
            let mut g = [0.0; MAX_K];
            g[..k].copy_from_slice(bc);
            let mut n0 = pc[0] * g[0];
            for i in 1..=d {
                n0 += pc[i] * g[i];
                bc[i] = pc[0] * g[i];
            }
            for (q, &(a, b)) in layout.pairs.iter().enumerate() {
                let c = 1 + d + q;
                n0 += pc[c] * g[c];
                bc[1 + b] += pc[1 + a] * g[c];
                bc[1 + a] += pc[1 + b] * g[c];
                bc[c] = pc[0] * g[c];
            }
            bc[0] = n0;
        }
    }
}
