//! The stochastic dynamical system abstraction `dX = b(X) dt + √η σ(X) dW`.
//!
//! Implementors provide the drift `b` and the diffusion matrix `σ`. The
//! covariance `A = σσᵀ` and the derivatives required by the curve evolution
//! (`∇b` and `∂A/∂x_i`) have finite-difference defaults that systems with
//! closed forms may override.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// A point in state space.
pub type State = DVector<f64>;

/// Relative central-difference step used for all default derivatives.
pub const FD_REL_STEP: f64 = 1e-6;

/// Central-difference step for coordinate value `xi`: `max(1e-6, 1e-6·|xi|)`.
#[inline]
pub fn fd_step(xi: f64) -> f64 {
    FD_REL_STEP.max(FD_REL_STEP * xi.abs())
}

pub trait SdeSystem: Send + Sync {
    /// Dimension of the state space.
    fn dim(&self) -> usize;

    /// Drift vector field `b(x)`.
    fn drift(&self, x: &State) -> DVector<f64>;

    /// Diffusion matrix `σ(x)` (N×K).
    fn diffusion(&self, x: &State) -> Result<DMatrix<f64>>;

    /// Covariance `A(x) = σ(x)σ(x)ᵀ`.
    fn covariance(&self, x: &State) -> Result<DMatrix<f64>> {
        let s = self.diffusion(x)?;
        Ok(&s * s.transpose())
    }

    /// Jacobian of the drift, `(∇b)_{ij} = ∂b_i/∂x_j`.
    fn drift_jacobian(&self, x: &State) -> DMatrix<f64> {
        fd_jacobian(|y| self.drift(y), x)
    }

    /// The N matrices `∂A/∂x_i`.
    fn covariance_derivatives(&self, x: &State) -> Result<Vec<DMatrix<f64>>> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n);
        let mut y = x.clone();
        for i in 0..n {
            let h = fd_step(x[i]);
            y[i] = x[i] + h;
            let plus = self.covariance(&y)?;
            y[i] = x[i] - h;
            let minus = self.covariance(&y)?;
            y[i] = x[i];
            out.push((plus - minus) / (2.0 * h));
        }
        Ok(out)
    }

    /// `∇b(x)` together with the matrix whose i-th column is `(∂A/∂x_i)·θ`.
    ///
    /// This is the only derivative information the curve evolution needs, so
    /// systems that can share work between the two should override it.
    fn linearization(&self, x: &State, theta: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let jac = self.drift_jacobian(x);
        let derivs = self.covariance_derivatives(x)?;
        Ok((jac, derivative_action(&derivs, theta)))
    }
}

/// Matrix whose i-th column is `derivs[i]·θ`.
pub fn derivative_action(derivs: &[DMatrix<f64>], theta: &DVector<f64>) -> DMatrix<f64> {
    let n = theta.len();
    let mut c = DMatrix::zeros(n, derivs.len());
    for (i, d) in derivs.iter().enumerate() {
        c.set_column(i, &(d * theta));
    }
    c
}

/// Central-difference Jacobian of `f` at `x`, column j from perturbing `x_j`.
pub fn fd_jacobian<F>(f: F, x: &State) -> DMatrix<f64>
where
    F: Fn(&State) -> DVector<f64>,
{
    let n = x.len();
    let mut y = x.clone();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let h = fd_step(x[j]);
        y[j] = x[j] + h;
        let plus = f(&y);
        y[j] = x[j] - h;
        let minus = f(&y);
        y[j] = x[j];
        cols.push((plus - minus) / (2.0 * h));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(rows, n, |i, j| cols[j][i])
}

impl<T: SdeSystem + ?Sized> SdeSystem for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn drift(&self, x: &State) -> DVector<f64> {
        (**self).drift(x)
    }
    fn diffusion(&self, x: &State) -> Result<DMatrix<f64>> {
        (**self).diffusion(x)
    }
    fn covariance(&self, x: &State) -> Result<DMatrix<f64>> {
        (**self).covariance(x)
    }
    fn drift_jacobian(&self, x: &State) -> DMatrix<f64> {
        (**self).drift_jacobian(x)
    }
    fn covariance_derivatives(&self, x: &State) -> Result<Vec<DMatrix<f64>>> {
        (**self).covariance_derivatives(x)
    }
    fn linearization(&self, x: &State, theta: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        (**self).linearization(x, theta)
    }
}

/// A system with identity diffusion and a drift given by a closure.
///
/// An optional analytic Jacobian replaces the finite-difference default.
pub struct AdditiveSystem<F> {
    dim: usize,
    drift: F,
    jacobian: Option<Box<dyn Fn(&State) -> DMatrix<f64> + Send + Sync>>,
}

impl<F> AdditiveSystem<F>
where
    F: Fn(&State) -> DVector<f64> + Send + Sync,
{
    pub fn new(dim: usize, drift: F) -> Self {
        AdditiveSystem { dim, drift, jacobian: None }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Box::new(jac));
        self
    }
}

impl<F> SdeSystem for AdditiveSystem<F>
where
    F: Fn(&State) -> DVector<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, x: &State) -> DVector<f64> {
        (self.drift)(x)
    }
    fn diffusion(&self, _x: &State) -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(self.dim, self.dim))
    }
    fn covariance(&self, _x: &State) -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(self.dim, self.dim))
    }
    fn drift_jacobian(&self, x: &State) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(x),
            None => fd_jacobian(|y| self.drift(y), x),
        }
    }
    fn covariance_derivatives(&self, _x: &State) -> Result<Vec<DMatrix<f64>>> {
        Ok(vec![DMatrix::zeros(self.dim, self.dim); self.dim])
    }
    fn linearization(&self, x: &State, _theta: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.drift_jacobian(x), DMatrix::zeros(self.dim, self.dim)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Quadratic;

    impl SdeSystem for Quadratic {
        fn dim(&self) -> usize {
            2
        }
        fn drift(&self, x: &State) -> DVector<f64> {
            DVector::from_vec(vec![x[0] * x[1], x[0] * x[0] - x[1]])
        }
        fn diffusion(&self, x: &State) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(2, 2, &[1.0 + x[0] * x[0], 0.0, x[1], 2.0]))
        }
    }

    #[test]
    fn fd_step_floor() {
        assert_eq!(fd_step(0.0), 1e-6);
        assert_eq!(fd_step(1e3), 1e-3);
    }

    #[test]
    fn default_covariance_is_sigma_sigma_t() {
        let x = DVector::from_vec(vec![0.3, -1.2]);
        let s = Quadratic.diffusion(&x).unwrap();
        let a = Quadratic.covariance(&x).unwrap();
        assert_relative_eq!(a, &s * s.transpose(), max_relative = 1e-12);
        assert_relative_eq!(a.clone(), a.transpose(), max_relative = 1e-15);
    }

    #[test]
    fn fd_jacobian_matches_analytic() {
        let x = DVector::from_vec(vec![0.7, 2.0]);
        let jac = Quadratic.drift_jacobian(&x);
        let exact = DMatrix::from_row_slice(2, 2, &[x[1], x[0], 2.0 * x[0], -1.0]);
        assert_relative_eq!(jac, exact, max_relative = 1e-8);
    }

    #[test]
    fn fd_covariance_derivative_matches_analytic() {
        let x = DVector::from_vec(vec![0.7, 2.0]);
        let d = Quadratic.covariance_derivatives(&x).unwrap();
        // A = [[(1+x²)², (1+x²)y], [(1+x²)y, y²+4]]
        let p = 1.0 + x[0] * x[0];
        let dx = DMatrix::from_row_slice(2, 2, &[4.0 * x[0] * p, 2.0 * x[0] * x[1], 2.0 * x[0] * x[1], 0.0]);
        let dy = DMatrix::from_row_slice(2, 2, &[0.0, p, p, 2.0 * x[1]]);
        assert_relative_eq!(d[0], dx, epsilon = 1e-8, max_relative = 1e-5);
        assert_relative_eq!(d[1], dy, epsilon = 1e-8, max_relative = 1e-5);
    }
}
