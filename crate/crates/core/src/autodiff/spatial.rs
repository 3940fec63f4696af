use super::dual::{Dual, HyperDual};
use super::real::Real;
use super::AdError;

/// Value, gradient and Hessian of a scalar in `N` seeded directions.
#[derive(Clone, Debug, PartialEq)]
pub struct DualBasis<const N: usize> {
    pub value: f64,
    pub first: [f64; N],
    pub second: [[f64; N]; N],
}

impl<const N: usize> DualBasis<N> {
    pub fn from_hyperdual(h: &HyperDual<f64, N>) -> Self {
        let mut first = [0.0; N];
        let mut second = [[0.0; N]; N];
        for i in 0..N {
            first[i] = h.re.eps[i];
            for j in 0..N {
                second[i][j] = h.eps[j].eps[i];
            }
        }
        DualBasis {
            value: h.re.re,
            first,
            second,
        }
    }
}

/// Seed coordinates for second-order spatial propagation over any scalar type.
pub fn seed_spatial_real<R: Real, const N: usize>(point: [R; N]) -> [HyperDual<R, N>; N] {
    let mut out = [HyperDual::<R, N>::constant(Dual::constant(R::zero())); N];
    for (i, (o, &p)) in out.iter_mut().zip(point.iter()).enumerate() {
        *o = Dual {
            re: Dual::variable(p, i),
            eps: std::array::from_fn(|j| {
                let mut d = Dual::constant(R::zero());
                if i == j {
                    d.re = R::one();
                }
                d
            }),
        };
    }
    out
}

/// Seed a point in `N` directions (space, optionally time).
pub fn seed_spatial<const N: usize>(point: [f64; N]) -> Result<[HyperDual<f64, N>; N], AdError> {
    if !(1..=4).contains(&N) {
        return Err(AdError::Directions(N));
    }
    Ok(seed_spatial_real(point))
}

/// A vector-valued map of 3 or 4 inputs, written once over any [`Real`].
pub trait SpatialMap {
    fn input_dim(&self) -> usize;
    fn eval<R: Real>(&self, x: &[R]) -> Vec<R>;
}

/// A stress field `X -> P(X)` (row-major 3x3).
pub trait StressField {
    fn stress<R: Real>(&self, x: &[R; 3]) -> [R; 9];
}

/// `du_i/dX_j` with the time column split off for space-time maps.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialJacobian {
    pub grad: [[f64; 3]; 3],
    pub time: Option<[f64; 3]>,
}

fn jacobian_n<M: SpatialMap, const N: usize>(
    map: &M,
    point: &[f64],
) -> Result<SpatialJacobian, AdError> {
    let x: Vec<Dual<f64, N>> = (0..N).map(|i| Dual::variable(point[i], i)).collect();
    let u = map.eval(&x);
    if u.len() != 3 {
        return Err(AdError::Dimension {
            expected: 3,
            got: u.len(),
        });
    }
    let mut grad = [[0.0; 3]; 3];
    let mut time = [0.0; 3];
    for i in 0..3 {
        if !u[i].re.is_finite() || u[i].eps.iter().any(|e| !e.is_finite()) {
            return Err(AdError::NonFinite {
                term: "spatial_jacobian".into(),
            });
        }
        for j in 0..3 {
            grad[i][j] = u[i].eps[j];
        }
        if N == 4 {
            time[i] = u[i].eps[3];
        }
    }
    Ok(SpatialJacobian {
        grad,
        time: (N == 4).then_some(time),
    })
}

/// Exact Jacobian of a displacement map at `point`.
pub fn spatial_jacobian<M: SpatialMap>(map: &M, point: &[f64]) -> Result<SpatialJacobian, AdError> {
    if point.len() != map.input_dim() {
        return Err(AdError::Dimension {
            expected: map.input_dim(),
            got: point.len(),
        });
    }
    match point.len() {
        3 => jacobian_n::<M, 3>(map, point),
        4 => jacobian_n::<M, 4>(map, point),
        n => Err(AdError::Directions(n)),
    }
}

/// Row-wise divergence `sum_j dP_ij/dX_j` of a stress field.
pub fn stress_divergence<S: StressField>(field: &S, point: [f64; 3]) -> Result<[f64; 3], AdError> {
    let x: [Dual<f64, 3>; 3] = std::array::from_fn(|i| Dual::variable(point[i], i));
    let p = field.stress(&x);
    let mut div = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            div[i] += p[3 * i + j].eps[j];
        }
    }
    if div.iter().any(|d| !d.is_finite()) {
        return Err(AdError::NonFinite {
            term: "stress_divergence".into(),
        });
    }
    Ok(div)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_seeding() {
        let s = seed_spatial([1.0, 2.0, 3.0]).unwrap();
        for (i, si) in s.iter().enumerate() {
            let b = DualBasis::from_hyperdual(si);
            assert_eq!(b.value, (i + 1) as f64);
            for j in 0..3 {
                assert_eq!(b.first[j], if i == j { 1.0 } else { 0.0 });
                assert_eq!(b.second[i][j], 0.0);
            }
        }
    }

    #[test]
    fn too_many_directions() {
        assert_eq!(seed_spatial([0.0; 5]).unwrap_err(), AdError::Directions(5));
    }

    #[test]
    fn sin_times_y() {
        let [x, y] = seed_spatial([0.0, 2.0]).unwrap();
        let b = DualBasis::from_hyperdual(&(x.sin() * y));
        assert_eq!(b.value, 0.0);
        assert!((b.first[0] - 2.0).abs() < 1e-15);
        assert!((b.second[0][1] - 1.0).abs() < 1e-15);
        assert_eq!(b.second[0][1], b.second[1][0]);
    }

    struct Diag;
    impl StressField for Diag {
        fn stress<R: Real>(&self, x: &[R; 3]) -> [R; 9] {
            let z = R::zero();
            [x[0], z, z, z, x[1], z, z, z, x[2]]
        }
    }

    #[test]
    fn diagonal_stress_divergence() {
        assert_eq!(
            stress_divergence(&Diag, [0.3, -1.0, 2.0]).unwrap(),
            [1.0, 1.0, 1.0]
        );
    }
}
