//! Built-in test systems with additive (identity) noise.

use nalgebra::{DMatrix, DVector};

use crate::equilibria::ParameterFamily;
use crate::error::Result;
use crate::system::{SdeSystem, State};

macro_rules! identity_noise {
    () => {
        fn diffusion(&self, _x: &State) -> Result<DMatrix<f64>> {
            Ok(DMatrix::identity(self.dim(), self.dim()))
        }
        fn covariance(&self, _x: &State) -> Result<DMatrix<f64>> {
            Ok(DMatrix::identity(self.dim(), self.dim()))
        }
        fn covariance_derivatives(&self, _x: &State) -> Result<Vec<DMatrix<f64>>> {
            Ok(vec![DMatrix::zeros(self.dim(), self.dim()); self.dim()])
        }
        fn linearization(&self, x: &State, _theta: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
            Ok((self.drift_jacobian(x), DMatrix::zeros(self.dim(), self.dim())))
        }
    };
}

/// Gradient system `b = −∇U`, `U = (x²−1)²/4 + y²/2`.
///
/// Minima at `(±1, 0)`, saddle at the origin, barrier `ΔU = 1/4`.
#[derive(Clone, Copy, Debug, Default)]
pub struct DoubleWell;

impl DoubleWell {
    pub fn potential(x: &State) -> f64 {
        (x[0] * x[0] - 1.0).powi(2) / 4.0 + x[1] * x[1] / 2.0
    }
}

impl SdeSystem for DoubleWell {
    fn dim(&self) -> usize {
        2
    }
    fn drift(&self, x: &State) -> DVector<f64> {
        DVector::from_row_slice(&[x[0] - x[0].powi(3), -x[1]])
    }
    fn drift_jacobian(&self, x: &State) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0 - 3.0 * x[0] * x[0], 0.0, 0.0, -1.0])
    }
    identity_noise!();
}

/// The Maier–Stein system `b = (x − x³ − βxy², −(1 + x²)y)`.
///
/// Non-gradient for `β ≠ 1`; attractors `(±1, 0)`, saddle at the origin.
#[derive(Clone, Copy, Debug)]
pub struct MaierStein {
    pub beta: f64,
}

impl Default for MaierStein {
    fn default() -> Self {
        MaierStein { beta: 10.0 }
    }
}

impl SdeSystem for MaierStein {
    fn dim(&self) -> usize {
        2
    }
    fn drift(&self, x: &State) -> DVector<f64> {
        let (u, v) = (x[0], x[1]);
        DVector::from_row_slice(&[u - u.powi(3) - self.beta * u * v * v, -(1.0 + u * u) * v])
    }
    fn drift_jacobian(&self, x: &State) -> DMatrix<f64> {
        let (u, v) = (x[0], x[1]);
        DMatrix::from_row_slice(
            2,
            2,
            &[1.0 - 3.0 * u * u - self.beta * v * v, -2.0 * self.beta * u * v, -2.0 * u * v, -(1.0 + u * u)],
        )
    }
    identity_noise!();
}

/// One-dimensional saddle-node normal form `b = a − x²`.
///
/// For `a > 0`: attractor `+√a`, repeller `−√a`, and the minimal action
/// between them is `(8/3)a^{3/2}`.
#[derive(Clone, Copy, Debug)]
pub struct SaddleNode {
    pub a: f64,
}

impl SaddleNode {
    pub fn new(a: f64) -> Self {
        SaddleNode { a }
    }
}

impl SdeSystem for SaddleNode {
    fn dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &State) -> DVector<f64> {
        DVector::from_element(1, self.a - x[0] * x[0])
    }
    fn drift_jacobian(&self, x: &State) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, -2.0 * x[0])
    }
    identity_noise!();
}

/// The normal form embedded in the plane, `b = (a − x², −y)`.
#[derive(Clone, Copy, Debug)]
pub struct PlanarSaddleNode {
    pub a: f64,
}

impl SdeSystem for PlanarSaddleNode {
    fn dim(&self) -> usize {
        2
    }
    fn drift(&self, x: &State) -> DVector<f64> {
        DVector::from_row_slice(&[self.a - x[0] * x[0], -x[1]])
    }
    fn drift_jacobian(&self, x: &State) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-2.0 * x[0], 0.0, 0.0, -1.0])
    }
    identity_noise!();
}

/// Linear sink `b = −x` in `dim` dimensions.
#[derive(Clone, Copy, Debug)]
pub struct LinearSink {
    pub dim: usize,
}

impl SdeSystem for LinearSink {
    fn dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, x: &State) -> DVector<f64> {
        -x
    }
    fn drift_jacobian(&self, _x: &State) -> DMatrix<f64> {
        -DMatrix::identity(self.dim, self.dim)
    }
    identity_noise!();
}

/// The family `b = (V_th − V) − x²`: a saddle-node fold at `V = V_th`.
#[derive(Clone, Copy, Debug)]
pub struct NormalFormFamily {
    pub v_th: f64,
}

impl Default for NormalFormFamily {
    fn default() -> Self {
        NormalFormFamily { v_th: 1.0 }
    }
}

impl ParameterFamily for NormalFormFamily {
    type System = SaddleNode;
    fn system(&self, parameter: f64) -> Result<SaddleNode> {
        Ok(SaddleNode::new(self.v_th - parameter))
    }
}

/// The planar family `b = ((V_th − V) − x², −y)`.
#[derive(Clone, Copy, Debug)]
pub struct PlanarNormalFormFamily {
    pub v_th: f64,
}

impl ParameterFamily for PlanarNormalFormFamily {
    type System = PlanarSaddleNode;
    fn system(&self, parameter: f64) -> Result<PlanarSaddleNode> {
        Ok(PlanarSaddleNode { a: self.v_th - parameter })
    }
}
