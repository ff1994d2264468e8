//! Inner products and norms in the metric induced by `A(x)⁻¹`, and the
//! local density of the geometric action.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::system::{SdeSystem, State};

/// A state together with a Cholesky factorization of `A(state)`.
///
/// The factorization is computed once and reused for every solve at that
/// state. Failure to factorize is how indefiniteness is detected.
#[derive(Clone, Debug)]
pub struct MetricContext {
    state: State,
    covariance: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl MetricContext {
    pub fn new(state: State, covariance: DMatrix<f64>) -> Result<Self> {
        let n = state.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: covariance.nrows() });
        }
        if covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::PositiveDefinitenessViolation);
        }
        let factor = Cholesky::new(covariance.clone()).ok_or(Error::PositiveDefinitenessViolation)?;
        if factor.l_dirty().diagonal().iter().any(|d| !(*d > 0.0)) {
            return Err(Error::PositiveDefinitenessViolation);
        }
        Ok(MetricContext { state, covariance, factor })
    }

    /// Factorize `A` of `sys` at `x`.
    pub fn at<S: SdeSystem + ?Sized>(sys: &S, x: &State) -> Result<Self> {
        let a = sys.covariance(x)?;
        Self::new(x.clone(), a)
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// `A⁻¹u`.
    pub fn solve(&self, u: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(u)
    }

    /// `⟨u, A⁻¹v⟩` without dimension checks.
    #[inline]
    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&self.solve(v))
    }

    #[inline]
    pub fn norm(&self, u: &DVector<f64>) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    fn check(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.state.len() {
            return Err(Error::DimensionMismatch { expected: self.state.len(), got: u.len() });
        }
        Ok(())
    }
}

/// `⟨u, A(x)⁻¹v⟩`.
pub fn inverse_metric_inner(u: &DVector<f64>, v: &DVector<f64>, ctx: &MetricContext) -> Result<f64> {
    ctx.check(u)?;
    ctx.check(v)?;
    Ok(ctx.inner(u, v))
}

/// `|u|_x = ⟨u, A(x)⁻¹u⟩^{1/2}`.
pub fn metric_norm(u: &DVector<f64>, ctx: &MetricContext) -> Result<f64> {
    ctx.check(u)?;
    Ok(ctx.norm(u))
}

/// `|b|_x |u|_x − ⟨b, u⟩_x` at `state`, evaluated with a prepared context.
pub fn action_density_with(b: &DVector<f64>, tangent: &DVector<f64>, ctx: &MetricContext) -> f64 {
    let ainv_t = ctx.solve(tangent);
    let bt = b.dot(&ainv_t);
    let tt = tangent.dot(&ainv_t).max(0.0);
    let bb = ctx.inner(b, b).max(0.0);
    (bb * tt).sqrt() - bt
}

/// Local geometric action density `|b(x)|_x |u|_x − ⟨b(x), u⟩_x`.
///
/// Nonnegative by Cauchy–Schwarz, zero iff `u` is a nonnegative multiple of
/// `b(x)`, and homogeneous of degree one in `u`.
pub fn local_action_density<S: SdeSystem + ?Sized>(state: &State, tangent: &DVector<f64>, sys: &S) -> Result<f64> {
    let ctx = MetricContext::at(sys, state)?;
    ctx.check(tangent)?;
    let b = sys.drift(state);
    Ok(action_density_with(&b, tangent, &ctx))
}
