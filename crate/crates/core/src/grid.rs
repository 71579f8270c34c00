//! Uniform 1D grids, discrete L2 inner products and central difference operators.
//!
//! Fields are sampled on interior nodes `x_j = j·dx`, `j = 1..=n`. Boundary
//! values never appear in the state vector; a nonhomogeneous Dirichlet
//! condition enters the difference operators through an affine offset field.
//!
//! Kernels (two-point functions such as `V_XX(x, y)`) are stored as raw
//! samples. Quadrature is midpoint with weight `dx` per node and is applied
//! only when a kernel is contracted against a field, so the discrete delta
//! kernel is `I / dx`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StddpError};

/// Samples of a function on the interior nodes.
pub type Field = DVector<f64>;

/// Samples `W(x_i, x_j)` of a two-point kernel.
pub type Kernel = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCondition {
    Dirichlet { left: f64, right: f64 },
    /// Homogeneous zero-flux condition, realized with a mirrored ghost node.
    Neumann,
}

impl BoundaryCondition {
    pub fn homogeneous_dirichlet() -> Self {
        BoundaryCondition::Dirichlet {
            left: 0.0,
            right: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    n_nodes: usize,
    length: f64,
    dx: f64,
    bc: BoundaryCondition,
}

/// A linear difference operator together with the affine contribution of the
/// boundary values: `(D f)_i = Σ_j matrix_ij f_j + offset_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceOperator {
    pub matrix: DMatrix<f64>,
    pub offset: Field,
}

impl DifferenceOperator {
    pub fn apply(&self, f: &Field) -> Field {
        &self.matrix * f + &self.offset
    }
}

impl SpatialGrid {
    pub fn new(n_nodes: usize, length: f64, bc: BoundaryCondition) -> Result<Self> {
        if n_nodes < 3 {
            return Err(StddpError::InvalidGrid(format!(
                "need at least 3 interior nodes, got {n_nodes}"
            )));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(StddpError::InvalidGrid(format!(
                "domain length must be positive, got {length}"
            )));
        }
        Ok(SpatialGrid {
            n_nodes,
            length,
            dx: length / (n_nodes + 1) as f64,
            bc,
        })
    }

    /// Single-node grid with unit spacing. Quadrature weights are all one, so
    /// the field equations collapse to their finite-dimensional counterparts.
    pub fn scalar() -> Self {
        SpatialGrid {
            n_nodes: 1,
            length: 2.0,
            dx: 1.0,
            bc: BoundaryCondition::homogeneous_dirichlet(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    /// Interior node positions `j·dx`, `j = 1..=n`.
    pub fn nodes(&self) -> Field {
        Field::from_fn(self.n_nodes, |j, _| (j + 1) as f64 * self.dx)
    }

    /// Sample a function on the interior nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field {
        self.nodes().map(f)
    }

    pub fn zeros(&self) -> Field {
        Field::zeros(self.n_nodes)
    }

    pub fn check_field(&self, f: &Field, what: &'static str) -> Result<()> {
        if f.len() != self.n_nodes {
            return Err(StddpError::mismatch(what, self.n_nodes, f.len()));
        }
        Ok(())
    }

    /// Midpoint quadrature of `∫ f g dx`.
    pub fn inner(&self, f: &Field, g: &Field) -> Result<f64> {
        self.check_field(f, "inner product (left)")?;
        self.check_field(g, "inner product (right)")?;
        Ok(f.dot(g) * self.dx)
    }

    /// Discrete `∫ W(x, y) f(y) dy`.
    pub fn contract(&self, w: &Kernel, f: &Field) -> Result<Field> {
        if w.nrows() != self.n_nodes || w.ncols() != self.n_nodes {
            return Err(StddpError::mismatch("kernel", self.n_nodes, w.nrows().max(w.ncols())));
        }
        self.check_field(f, "contracted field")?;
        Ok(w * f * self.dx)
    }

    /// The discrete delta kernel, `I / dx`.
    pub fn delta_kernel(&self) -> Kernel {
        Kernel::identity(self.n_nodes, self.n_nodes) / self.dx
    }

    fn boundary_values(&self) -> Option<(f64, f64)> {
        match self.bc {
            BoundaryCondition::Dirichlet { left, right } => Some((left, right)),
            BoundaryCondition::Neumann => None,
        }
    }

    /// Central second difference `(f_{i-1} - 2 f_i + f_{i+1}) / dx²`.
    pub fn second_difference(&self) -> DifferenceOperator {
        let n = self.n_nodes;
        let h2 = self.dx * self.dx;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = -2.0 / h2;
            if i > 0 {
                m[(i, i - 1)] = 1.0 / h2;
            }
            if i + 1 < n {
                m[(i, i + 1)] = 1.0 / h2;
            }
        }
        let mut offset = Field::zeros(n);
        match self.boundary_values() {
            Some((left, right)) => {
                offset[0] += left / h2;
                offset[n - 1] += right / h2;
            }
            None => {
                // ghost node mirrors its neighbour
                m[(0, 0)] += 1.0 / h2;
                m[(n - 1, n - 1)] += 1.0 / h2;
            }
        }
        DifferenceOperator { matrix: m, offset }
    }

    /// Central first difference `(f_{i+1} - f_{i-1}) / (2 dx)`.
    pub fn first_difference(&self) -> DifferenceOperator {
        let n = self.n_nodes;
        let c = 0.5 / self.dx;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            if i > 0 {
                m[(i, i - 1)] = -c;
            }
            if i + 1 < n {
                m[(i, i + 1)] = c;
            }
        }
        let mut offset = Field::zeros(n);
        match self.boundary_values() {
            Some((left, right)) => {
                offset[0] -= left * c;
                offset[n - 1] += right * c;
            }
            None => {
                m[(0, 0)] -= c;
                m[(n - 1, n - 1)] += c;
            }
        }
        DifferenceOperator { matrix: m, offset }
    }

    /// Same grid with a different boundary condition.
    pub fn with_bc(&self, bc: BoundaryCondition) -> Self {
        SpatialGrid { bc, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn dirichlet0(n: usize) -> SpatialGrid {
        SpatialGrid::new(n, 1.0, BoundaryCondition::homogeneous_dirichlet()).unwrap()
    }

    #[test]
    fn grid_spacing() {
        let g = dirichlet0(64);
        assert!((g.dx() - 1.0 / 65.0).abs() < 1e-15);
        assert!((g.dx() * 65.0 - g.length()).abs() < 1e-12);
        assert_eq!(dirichlet0(3).dx(), 0.25);
        let x = dirichlet0(3).nodes();
        assert_eq!(x.as_slice(), &[0.25, 0.5, 0.75]);
    }

    #[test]
    fn grid_rejects_bad_input() {
        let bc = BoundaryCondition::homogeneous_dirichlet();
        assert!(SpatialGrid::new(2, 1.0, bc).is_err());
        assert!(SpatialGrid::new(8, 0.0, bc).is_err());
        assert!(SpatialGrid::new(8, -1.0, bc).is_err());
    }

    #[test]
    fn inner_product_constant_and_zero() {
        let g = dirichlet0(4);
        let ones = Field::from_element(4, 1.0);
        assert!((g.inner(&ones, &ones).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(g.inner(&g.zeros(), &ones).unwrap(), 0.0);
        assert!(g.inner(&ones, &Field::zeros(3)).is_err());
    }

    #[test]
    fn inner_product_matches_trapezoid() {
        // trapezoid over [0, a] including the boundary nodes where f g vanish
        let g = dirichlet0(16);
        let f = g.sample(|x| (PI * x).sin() * (1.0 + x));
        let h = g.sample(|x| x * (1.0 - x) * (3.0 * x).cos());
        let mut trap = 0.0;
        let prod: Vec<f64> = std::iter::once(0.0)
            .chain(f.iter().zip(h.iter()).map(|(a, b)| a * b))
            .chain(std::iter::once(0.0))
            .collect();
        for w in prod.windows(2) {
            trap += 0.5 * (w[0] + w[1]) * g.dx();
        }
        let bound = 2.0 * g.dx().powi(2) * f.component_mul(&h).amax();
        assert!((g.inner(&f, &h).unwrap() - trap).abs() <= bound);
    }

    #[test]
    fn delta_kernel_is_identity_under_contraction() {
        let g = dirichlet0(8);
        let f = g.sample(|x| x.exp());
        let out = g.contract(&g.delta_kernel(), &f).unwrap();
        assert!((out - &f).amax() < 1e-14);
        let zero = g.contract(&Kernel::zeros(8, 8), &f).unwrap();
        assert_eq!(zero.amax(), 0.0);
    }

    #[test]
    fn contraction_matches_double_loop() {
        let g = dirichlet0(8);
        let w = Kernel::from_fn(8, 8, |i, j| ((i + 1) * (j + 1)) as f64 / 7.0 + (i + j) as f64 * 0.1);
        let w = (&w + w.transpose()) * 0.5;
        let f = g.sample(|x| (2.0 * x).sin() - 0.3);
        let out = g.contract(&w, &f).unwrap();
        for i in 0..8 {
            let mut s = 0.0;
            for j in 0..8 {
                s += w[(i, j)] * f[j] * g.dx();
            }
            assert!((out[i] - s).abs() <= 1e-15 * s.abs().max(1.0));
        }
    }

    #[test]
    fn second_difference_stencil() {
        let g = dirichlet0(3);
        let d2 = g.second_difference();
        let out = d2.apply(&Field::from_element(3, 1.0));
        assert_eq!(out.as_slice(), &[-16.0, 0.0, -16.0]);
        assert_eq!(d2.offset.amax(), 0.0);
    }

    #[test]
    fn second_difference_offset_for_nonhomogeneous_dirichlet() {
        let g = SpatialGrid::new(5, 1.0, BoundaryCondition::Dirichlet { left: 1.0, right: 1.0 }).unwrap();
        let off = g.second_difference().offset;
        let h2 = g.dx() * g.dx();
        assert_eq!(off[0], 1.0 / h2);
        assert_eq!(off[4], 1.0 / h2);
        assert!(off.rows(1, 3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn second_difference_eigenfunction() {
        let g = dirichlet0(64);
        let f = g.sample(|x| (PI * x).sin());
        let out = g.second_difference().apply(&f);
        let err = (out + f * PI * PI).amax();
        // leading truncation term is dx²/12 · f'''' = dx² π⁴ / 12
        assert!(err <= g.dx().powi(2) * PI.powi(4) / 12.0 * 1.01, "err {err}");
    }

    #[test]
    fn second_difference_converges_at_second_order() {
        for k in 1..=3 {
            let errs: Vec<f64> = [15usize, 31, 63, 127]
                .iter()
                .map(|&n| {
                    let g = dirichlet0(n);
                    let kp = k as f64 * PI;
                    let f = g.sample(|x| (kp * x).sin());
                    (g.second_difference().apply(&f) + &f * (kp * kp)).amax()
                })
                .collect();
            for w in errs.windows(2) {
                let order = (w[0] / w[1]).log2();
                assert!((1.8..=2.2).contains(&order), "k={k} order {order}");
            }
        }
    }

    #[test]
    fn first_difference_with_boundary_values() {
        let g = SpatialGrid::new(4, 1.0, BoundaryCondition::Dirichlet { left: 1.0, right: 1.0 }).unwrap();
        let d1 = g.first_difference();
        assert!(d1.apply(&Field::from_element(4, 1.0)).amax() < 1e-14);
        let lin = g.sample(|x| 2.0 * x);
        let g2 = g.with_bc(BoundaryCondition::Dirichlet { left: 0.0, right: 2.0 });
        let out = g2.first_difference().apply(&lin);
        assert!((out.add_scalar(-2.0)).amax() < 1e-12);
    }

    #[test]
    fn neumann_preserves_constants() {
        let g = SpatialGrid::new(6, 1.0, BoundaryCondition::Neumann).unwrap();
        let c = Field::from_element(6, 3.0);
        assert!(g.second_difference().apply(&c).amax() < 1e-10);
        assert!(g.first_difference().apply(&c).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn inner_is_symmetric_and_bilinear(
            a in proptest::collection::vec(-10.0f64..10.0, 12),
            b in proptest::collection::vec(-10.0f64..10.0, 12),
            c in proptest::collection::vec(-10.0f64..10.0, 12),
            alpha in -5.0f64..5.0,
        ) {
            let g = dirichlet0(12);
            let (f, h, k) = (Field::from_vec(a), Field::from_vec(b), Field::from_vec(c));
            prop_assert_eq!(g.inner(&f, &h).unwrap(), g.inner(&h, &f).unwrap());
            let lhs = g.inner(&(&f * alpha + &k), &h).unwrap();
            let rhs = alpha * g.inner(&f, &h).unwrap() + g.inner(&k, &h).unwrap();
            let scale = 1.0 + f.norm() * h.norm() * (1.0 + alpha.abs()) + k.norm() * h.norm();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }

        #[test]
        fn symmetric_kernel_contraction_is_self_adjoint(
            w in proptest::collection::vec(-3.0f64..3.0, 100),
            a in proptest::collection::vec(-3.0f64..3.0, 10),
            b in proptest::collection::vec(-3.0f64..3.0, 10),
        ) {
            let g = dirichlet0(10);
            let w = Kernel::from_vec(10, 10, w);
            let w = (&w + w.transpose()) * 0.5;
            let (f, h) = (Field::from_vec(a), Field::from_vec(b));
            let lhs = g.inner(&f, &g.contract(&w, &h).unwrap()).unwrap();
            let rhs = g.inner(&h, &g.contract(&w, &f).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }
    }
}
