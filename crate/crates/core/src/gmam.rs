//! Geometric minimum action method for state-dependent noise.
//!
//! A curve `φ(α)` between fixed endpoints is evolved in pseudo-time by
//!
//! ```text
//! ∂_τφ = λ²φ'' − λ(∇b + C)φ' + A(∇b + ½C)ᵀθ + λλ'φ'
//! ```
//!
//! with `λ = |b|_φ/|φ'|_φ`, `θ = A⁻¹(λφ' − b)` and `C` the matrix whose i-th
//! column is `(∂A/∂x_i)θ`. The right-hand side equals `−λ A δS`, so the flow
//! descends the geometric action. The `λ²φ''` term is treated implicitly and
//! the points are redistributed to equal Euclidean spacing after every step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curve::{Curve, Interpolation};
use crate::error::{Error, Result};
use crate::metric::{action_density_with, MetricContext};
use crate::system::{SdeSystem, State};
use crate::tridiag::solve_tridiagonal;

/// Solver configuration.
///
/// `time_step` is dimensionless: the pseudo-time step actually used is
/// `time_step / κ²`, where `κ` is the largest singular value of `∇b` on the
/// initial curve. `convergence_tol` bounds the largest point displacement
/// per unit of that dimensionless time, relative to the curve length.
/// `lambda_floor` is relative to the largest `λ` on the current curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmamSettings {
    pub num_points: usize,
    pub time_step: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub lambda_floor: f64,
    pub interpolation: Interpolation,
}

impl Default for GmamSettings {
    fn default() -> Self {
        GmamSettings {
            num_points: 100,
            time_step: 2.0,
            max_iterations: 20_000,
            convergence_tol: 1e-8,
            lambda_floor: 1e-8,
            interpolation: Interpolation::Linear,
        }
    }
}

impl GmamSettings {
    pub fn validate(&self) -> Result<()> {
        if self.num_points < 3 {
            return Err(Error::InvalidParameter(format!("num_points must be at least 3, got {}", self.num_points)));
        }
        if !(self.time_step > 0.0) || !self.time_step.is_finite() {
            return Err(Error::InvalidParameter("time_step must be positive".into()));
        }
        if !(self.lambda_floor > 0.0) {
            return Err(Error::InvalidParameter("lambda_floor must be positive".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::InvalidParameter("convergence_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GmamResult {
    pub curve: Curve,
    /// `S(γ*)`; the discrete action of the final curve.
    pub action: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// Action after every accepted step, starting with the initial curve.
    pub action_history: Vec<f64>,
    /// Convergence metric after every accepted step.
    pub residual_history: Vec<f64>,
    /// Pseudo-time step in use at the end of the run.
    pub final_time_step: f64,
}

/// Discrete geometric action: trapezoidal rule over each segment, with the
/// segment chord as tangent at both of its endpoints.
pub fn action<S: SdeSystem + ?Sized>(curve: &Curve, sys: &S) -> Result<f64> {
    Ok(Evaluated::new(curve, sys)?.action(curve))
}

/// Drift and metric at every point of a curve, shared between the action and
/// the evolution step.
struct Evaluated {
    drift: Vec<DVector<f64>>,
    ctx: Vec<MetricContext>,
}

impl Evaluated {
    fn new<S: SdeSystem + ?Sized>(curve: &Curve, sys: &S) -> Result<Self> {
        let pts = curve.points();
        let mut drift = Vec::with_capacity(pts.len());
        let mut ctx = Vec::with_capacity(pts.len());
        for p in pts {
            drift.push(sys.drift(p));
            ctx.push(MetricContext::at(sys, p)?);
        }
        Ok(Evaluated { drift, ctx })
    }

    fn action(&self, curve: &Curve) -> f64 {
        let pts = curve.points();
        let mut total = 0.0;
        for k in 0..pts.len() - 1 {
            let d = &pts[k + 1] - &pts[k];
            if d.iter().all(|v| *v == 0.0) {
                continue;
            }
            total += 0.5
                * (action_density_with(&self.drift[k], &d, &self.ctx[k])
                    + action_density_with(&self.drift[k + 1], &d, &self.ctx[k + 1]));
        }
        total
    }
}

/// `max(|b|_x/|u|_x, floor)`.
pub fn lambda<S: SdeSystem + ?Sized>(state: &State, tangent: &DVector<f64>, sys: &S, floor: f64) -> Result<f64> {
    let ctx = MetricContext::at(sys, state)?;
    let b = sys.drift(state);
    lambda_with(&b, tangent, &ctx, floor)
}

fn lambda_with(b: &DVector<f64>, tangent: &DVector<f64>, ctx: &MetricContext, floor: f64) -> Result<f64> {
    let t = ctx.norm(tangent);
    if !(t > 0.0) {
        return Err(Error::ZeroTangent);
    }
    Ok((ctx.norm(b) / t).max(floor))
}

/// `θ = A⁻¹(λu − b)` with `λ` from [`lambda`].
pub fn theta<S: SdeSystem + ?Sized>(state: &State, tangent: &DVector<f64>, sys: &S, floor: f64) -> Result<DVector<f64>> {
    let ctx = MetricContext::at(sys, state)?;
    let b = sys.drift(state);
    let lam = lambda_with(&b, tangent, &ctx, floor)?;
    Ok(ctx.solve(&(tangent * lam - &b)))
}

/// Matrix whose i-th column is `(∂A/∂x_i)θ` at `state`.
pub fn c_matrix<S: SdeSystem + ?Sized>(state: &State, tangent: &DVector<f64>, sys: &S, floor: f64) -> Result<DMatrix<f64>> {
    let th = theta(state, tangent, sys, floor)?;
    Ok(sys.linearization(state, &th)?.1)
}

/// `κ² = max_k σ_max(∇b(φ_k))²`, the stiffness scale of the explicit terms.
pub fn stiffness<S: SdeSystem + ?Sized>(curve: &Curve, sys: &S) -> f64 {
    curve
        .points()
        .iter()
        .map(|p| sys.drift_jacobian(p).singular_values().max().powi(2))
        .fold(0.0, f64::max)
}

/// The pieces of the evolution equation at every grid point.
struct Rhs {
    /// All terms except `λ²φ''`; zero at the endpoints.
    explicit: Vec<DVector<f64>>,
    /// `λ_k²` (floored).
    lambda_sq: Vec<f64>,
    /// `λ_k²φ''_k`; zero at the endpoints.
    diffusive: Vec<DVector<f64>>,
    lambda_max: f64,
}

fn tangents(pts: &[State], spacing: f64) -> Vec<DVector<f64>> {
    let m = pts.len();
    (0..m)
        .map(|k| {
            if k == 0 {
                (&pts[1] - &pts[0]) / spacing
            } else if k == m - 1 {
                (&pts[m - 1] - &pts[m - 2]) / spacing
            } else {
                (&pts[k + 1] - &pts[k - 1]) / (2.0 * spacing)
            }
        })
        .collect()
}

fn assemble<S: SdeSystem + ?Sized>(curve: &Curve, sys: &S, eval: &Evaluated, floor_rel: f64) -> Result<Rhs> {
    let pts = curve.points();
    let m = pts.len();
    let h = curve.spacing();
    let tp = tangents(pts, h);
    let (drift, ctx) = (&eval.drift, &eval.ctx);

    let mut raw = Vec::with_capacity(m);
    for (k, t) in tp.iter().enumerate() {
        let tn = ctx[k].norm(t);
        if k_is_interior(k, m) && !(tn > 0.0) {
            return Err(Error::ZeroTangent);
        }
        raw.push(if tn > 0.0 { ctx[k].norm(&drift[k]) / tn } else { 0.0 });
    }
    let lambda_max = raw.iter().cloned().fold(0.0, f64::max);
    let floor = if lambda_max > 0.0 { floor_rel * lambda_max } else { f64::MIN_POSITIVE };
    let lam: Vec<f64> = raw.iter().map(|l| l.max(floor)).collect();

    let mut explicit = vec![DVector::zeros(curve.dim()); m];
    let mut diffusive = vec![DVector::zeros(curve.dim()); m];
    for k in 1..m - 1 {
        let l = lam[k];
        let t = &tp[k];
        let b = &drift[k];
        let th = ctx[k].solve(&(t * l - b));
        let (jac, c) = sys.linearization(&pts[k], &th)?;
        let dl = (lam[k + 1] - lam[k - 1]) / (2.0 * h);
        let second = (&pts[k + 1] - &pts[k] * 2.0 + &pts[k - 1]) / (h * h);

        let advect = (&jac + &c) * t * l;
        let half = &jac + &c * 0.5;
        let reaction = ctx[k].covariance() * (half.transpose() * &th);
        explicit[k] = reaction - advect + t * (l * dl);
        diffusive[k] = second * (l * l);
    }
    Ok(Rhs {
        explicit,
        lambda_sq: lam.iter().map(|l| l * l).collect(),
        diffusive,
        lambda_max,
    })
}

#[inline]
fn k_is_interior(k: usize, m: usize) -> bool {
    k > 0 && k + 1 < m
}

/// The full right-hand side `∂_τφ` at every grid point (zero at endpoints),
/// with `λ` floored at `floor_rel · max_k λ_k`.
pub fn gmam_rhs<S: SdeSystem + ?Sized>(curve: &Curve, sys: &S, floor_rel: f64) -> Result<Vec<DVector<f64>>> {
    let rhs = assemble(curve, sys, &Evaluated::new(curve, sys)?, floor_rel)?;
    Ok(rhs.explicit.into_iter().zip(rhs.diffusive).map(|(e, d)| e + d).collect())
}

/// Largest unfloored `λ` on the curve.
pub fn lambda_max<S: SdeSystem + ?Sized>(curve: &Curve, sys: &S) -> Result<f64> {
    Ok(assemble(curve, sys, &Evaluated::new(curve, sys)?, 1e-8)?.lambda_max)
}

/// One semi-implicit step of size `dtau` followed by redistribution.
///
/// Per state component, solves `(I − Δτ λ_k² D²) φ_new = φ + Δτ E` with
/// Dirichlet rows at both ends, where `E` collects the explicit terms.
pub fn gmam_step<S: SdeSystem + ?Sized>(curve: &Curve, sys: &S, dtau: f64, settings: &GmamSettings) -> Result<Curve> {
    step_with(curve, sys, &Evaluated::new(curve, sys)?, dtau, settings)
}

fn step_with<S: SdeSystem + ?Sized>(
    curve: &Curve,
    sys: &S,
    eval: &Evaluated,
    dtau: f64,
    settings: &GmamSettings,
) -> Result<Curve> {
    let mut next = implicit_update(curve, sys, eval, dtau, settings.lambda_floor)?;
    next.redistribute(settings.interpolation);
    Ok(next)
}

fn implicit_update<S: SdeSystem + ?Sized>(
    curve: &Curve,
    sys: &S,
    eval: &Evaluated,
    dtau: f64,
    floor_rel: f64,
) -> Result<Curve> {
    let rhs = assemble(curve, sys, eval, floor_rel)?;
    let pts = curve.points();
    let m = pts.len();
    let n = curve.dim();
    let h = curve.spacing();

    let r: Vec<f64> = rhs.lambda_sq.iter().map(|l2| dtau * l2 / (h * h)).collect();
    let mut lower = vec![0.0; m - 1];
    let mut upper = vec![0.0; m - 1];
    let mut diag = vec![1.0; m];
    for k in 1..m - 1 {
        lower[k - 1] = -r[k];
        upper[k] = -r[k];
        diag[k] = 1.0 + 2.0 * r[k];
    }

    let mut new_points = vec![DVector::zeros(n); m];
    let mut b = vec![0.0; m];
    for j in 0..n {
        for k in 0..m {
            b[k] = if k_is_interior(k, m) { pts[k][j] + dtau * rhs.explicit[k][j] } else { pts[k][j] };
        }
        let x = solve_tridiagonal(&lower, &diag, &upper, &b)?;
        for k in 0..m {
            if !x[k].is_finite() {
                return Err(Error::StepFailure("non-finite point after implicit solve".into()));
            }
            new_points[k][j] = x[k];
        }
    }
    new_points[0] = pts[0].clone();
    new_points[m - 1] = pts[m - 1].clone();
    Curve::new(new_points)
}

/// Accepted steps without a new lowest residual before the step cap is halved.
const STAGNATION_WINDOW: usize = 200;

/// Minimize the geometric action between `x1` and `x2`.
///
/// Steps that increase the action are rejected and the step size halved;
/// accepted steps let it grow back by 10% up to a cap, initially
/// `time_step/κ²`, which is halved when convergence stalls.
/// Running out of iterations is not an error; `converged` reports it.
pub fn solve<S: SdeSystem + ?Sized>(
    sys: &S,
    x1: &State,
    x2: &State,
    settings: &GmamSettings,
    initial: Option<&Curve>,
) -> Result<GmamResult> {
    settings.validate()?;
    let m = settings.num_points;
    if x1 == x2 {
        let curve = Curve::constant(x1, m)?;
        return Ok(GmamResult {
            curve,
            action: 0.0,
            iterations_used: 0,
            converged: true,
            action_history: vec![0.0],
            residual_history: vec![],
            final_time_step: 0.0,
        });
    }

    let mut curve = match initial {
        Some(c) => resample(&c.with_endpoints(x1, x2), m, settings.interpolation)?,
        None => Curve::straight(x1, x2, m)?,
    };
    curve.redistribute(settings.interpolation);

    let mut kappa2 = stiffness(&curve, sys);
    if !(kappa2 > 0.0) || !kappa2.is_finite() {
        let l = lambda_max(&curve, sys)?;
        kappa2 = if l > 0.0 { l * l } else { 1.0 };
    }
    let mut dtau0 = settings.time_step / kappa2;
    let mut dtau = dtau0;
    // A step size too large for the stiffness of the evolving curve shows up
    // as a persistent oscillation that leaves the action unchanged; the cap
    // is halved whenever the residual stops reaching new lows.
    let mut best_residual = f64::INFINITY;
    let mut since_best = 0usize;

    let mut eval = Evaluated::new(&curve, sys)?;
    let mut s = eval.action(&curve);
    let mut history = vec![s];
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        iterations += 1;
        let trial = step_with(&curve, sys, &eval, dtau, settings).and_then(|c| {
            let e = Evaluated::new(&c, sys)?;
            let a = e.action(&c);
            Ok((c, e, a))
        });
        let (next, next_eval, s_next) = match trial {
            Ok((c, e, a)) if a.is_finite() && a <= s + 1e-9 * s.abs() => (c, e, a),
            Ok(_) | Err(Error::PositiveDefinitenessViolation) | Err(Error::StepFailure(_)) => {
                dtau *= 0.5;
                if dtau < dtau0 * 1e-12 {
                    return Err(Error::StepFailure("step size underflow".into()));
                }
                continue;
            }
            Err(e) => return Err(e),
        };

        let disp = next
            .points()
            .iter()
            .zip(curve.points())
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        let len = next.length();
        let residual = if len > 0.0 { disp / (dtau * kappa2 * len) } else { 0.0 };

        curve = next;
        eval = next_eval;
        s = s_next;
        history.push(s);
        residuals.push(residual);
        if residual < settings.convergence_tol {
            converged = true;
            break;
        }
        if residual < best_residual {
            best_residual = residual;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= STAGNATION_WINDOW {
                dtau0 *= 0.5;
                since_best = 0;
            }
        }
        dtau = (dtau * 1.1).min(dtau0);
    }

    Ok(GmamResult {
        curve,
        action: s,
        iterations_used: iterations,
        converged,
        action_history: history,
        residual_history: residuals,
        final_time_step: dtau,
    })
}

/// Resample a curve to `m` equally spaced points.
fn resample(curve: &Curve, m: usize, interpolation: Interpolation) -> Result<Curve> {
    if curve.len() == m {
        return Ok(curve.clone());
    }
    // Place m points by first densifying onto a uniform-in-α grid.
    let src = curve.points();
    let last = (src.len() - 1) as f64;
    let pts = (0..m)
        .map(|k| {
            let a = k as f64 / (m - 1) as f64 * last;
            let i = (a.floor() as usize).min(src.len() - 2);
            let w = a - i as f64;
            &src[i] * (1.0 - w) + &src[i + 1] * w
        })
        .collect();
    let mut c = Curve::new(pts)?;
    c.redistribute(interpolation);
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DoubleWell, SaddleNode};
    use crate::system::AdditiveSystem;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> State {
        DVector::from_row_slice(xs)
    }

    fn unit_drift() -> AdditiveSystem<impl Fn(&State) -> DVector<f64> + Send + Sync> {
        AdditiveSystem::new(2, |_x: &State| DVector::from_row_slice(&[1.0, 0.0]))
    }

    #[test]
    fn lambda_cases() {
        let sys = unit_drift();
        let x = v(&[0.0, 0.0]);
        assert_relative_eq!(lambda(&x, &v(&[1.0, 0.0]), &sys, 1e-12).unwrap(), 1.0);
        assert_relative_eq!(lambda(&x, &v(&[2.0, 0.0]), &sys, 1e-12).unwrap(), 0.5);
        let dw = DoubleWell;
        assert_eq!(lambda(&v(&[-1.0, 0.0]), &v(&[1.0, 0.0]), &dw, 1e-6).unwrap(), 1e-6);
        assert_eq!(lambda(&x, &v(&[0.0, 0.0]), &sys, 1e-6).unwrap_err(), Error::ZeroTangent);
    }

    #[test]
    fn theta_cases() {
        let sys = unit_drift();
        let x = v(&[0.0, 0.0]);
        assert_eq!(theta(&x, &v(&[1.0, 0.0]), &sys, 1e-12).unwrap(), v(&[0.0, 0.0]));
        let t = theta(&x, &v(&[0.0, 1.0]), &sys, 1e-12).unwrap();
        assert_relative_eq!(t, v(&[-1.0, 1.0]), epsilon = 1e-15);
        // 1D: b = 1, A = 1, tangent 2 → λ = 0.5, θ = 0.5·2 − 1 = 0
        let one = AdditiveSystem::new(1, |_x: &State| DVector::from_row_slice(&[1.0]));
        assert_eq!(theta(&v(&[0.3]), &v(&[2.0]), &one, 1e-12).unwrap(), v(&[0.0]));
    }

    #[test]
    fn c_matrix_vanishes_for_additive_noise() {
        let c = c_matrix(&v(&[0.2, 0.1]), &v(&[0.0, 1.0]), &DoubleWell, 1e-12).unwrap();
        assert_eq!(c, DMatrix::zeros(2, 2));
    }

    #[test]
    fn action_of_flowline_vanishes() {
        // b = (1, 0), the x-axis is a flowline
        let c = Curve::straight(&v(&[0.0, 0.0]), &v(&[1.0, 0.0]), 20).unwrap();
        assert_eq!(action(&c, &unit_drift()).unwrap(), 0.0);
        let z = Curve::constant(&v(&[0.5, 0.5]), 10).unwrap();
        assert_eq!(action(&z, &DoubleWell).unwrap(), 0.0);
    }

    #[test]
    fn ascent_action_converges_to_twice_the_barrier() {
        let mut errs = Vec::new();
        for m in [25, 50, 100] {
            let c = Curve::straight(&v(&[-1.0, 0.0]), &v(&[0.0, 0.0]), m).unwrap();
            errs.push((action(&c, &DoubleWell).unwrap() - 0.5).abs());
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 1e-4);
    }

    #[test]
    fn step_pins_endpoints_and_equalizes() {
        let x1 = v(&[-1.0, 0.0]);
        let x2 = v(&[0.0, 0.0]);
        let mut c = Curve::straight(&x1, &x2, 40).unwrap();
        let pts: Vec<State> = c
            .points()
            .iter()
            .enumerate()
            .map(|(k, p)| p + v(&[0.0, 0.2 * (std::f64::consts::PI * k as f64 / 39.0).sin()]))
            .collect();
        c = Curve::new(pts).unwrap();
        let settings = GmamSettings { num_points: 40, ..Default::default() };
        let before = action(&c, &DoubleWell).unwrap();
        let next = gmam_step(&c, &DoubleWell, 0.01, &settings).unwrap();
        assert_eq!(next.start(), c.start());
        assert_eq!(next.end(), c.end());
        assert!(next.gap_deviation() < 1e-6);
        assert!(action(&next, &DoubleWell).unwrap() <= before + 1e-9);
    }

    #[test]
    fn coincident_endpoints_give_zero_action() {
        let x = v(&[0.3, 0.3]);
        let r = solve(&DoubleWell, &x, &x, &GmamSettings::default(), None).unwrap();
        assert_eq!(r.action, 0.0);
        assert!(r.converged);
        assert_eq!(r.iterations_used, 0);
    }

    #[test]
    fn invalid_settings() {
        let s = GmamSettings { time_step: 0.0, ..Default::default() };
        assert!(solve(&DoubleWell, &v(&[-1.0, 0.0]), &v(&[0.0, 0.0]), &s, None).is_err());
        let s = GmamSettings { lambda_floor: 0.0, ..Default::default() };
        assert!(s.validate().is_err());
        let s = GmamSettings { num_points: 2, ..Default::default() };
        assert!(matches!(s.validate().unwrap_err(), Error::InvalidParameter(_)));
    }

    #[test]
    fn saddle_node_action() {
        let a = 0.04;
        let sys = SaddleNode::new(a);
        let r = solve(&sys, &v(&[a.sqrt()]), &v(&[-a.sqrt()]), &GmamSettings::default(), None).unwrap();
        let exact = 8.0 / 3.0 * a.powf(1.5);
        assert!((r.action - exact).abs() < 1e-4, "{} vs {}", r.action, exact);
        assert!(r.converged);
    }
}
