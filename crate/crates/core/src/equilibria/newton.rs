use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{SdeSystem, State};

/// Real parts within this fraction of the spectral radius count as zero.
pub const STABILITY_DEAD_BAND: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Saddle,
    Unstable,
}

impl Stability {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Saddle => "saddle",
            Stability::Unstable => "unstable",
        }
    }
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stability {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stable" => Ok(Stability::Stable),
            "saddle" => Ok(Stability::Saddle),
            "unstable" => Ok(Stability::Unstable),
            other => Err(Error::Parse(format!("unknown stability label '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Equilibrium {
    pub state: State,
    pub stability: Stability,
    /// Real parts of the eigenvalues of `∇b`, ascending.
    pub eigen_real_parts: Vec<f64>,
    /// `|b|` at `state`.
    pub residual_norm: f64,
}

impl Equilibrium {
    /// The real part closest to zero (signed); tends to 0 at a fold.
    pub fn critical_real_part(&self) -> f64 {
        self.eigen_real_parts
            .iter()
            .cloned()
            .min_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0)
    }
}

/// Stability label and sorted eigenvalue real parts of a Jacobian.
///
/// Stable: every real part negative. Saddle: exactly one positive, the rest
/// negative. Anything else, including real parts inside the dead band, is
/// unstable.
pub fn classify(jacobian: &DMatrix<f64>) -> (Stability, Vec<f64>) {
    let eig = jacobian.complex_eigenvalues();
    let mut re: Vec<f64> = eig.iter().map(|z| z.re).collect();
    re.sort_by(f64::total_cmp);
    let radius = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let band = STABILITY_DEAD_BAND * radius;
    let pos = re.iter().filter(|r| **r > band).count();
    let neg = re.iter().filter(|r| **r < -band).count();
    let label = if neg == re.len() {
        Stability::Stable
    } else if pos == 1 && neg == re.len() - 1 {
        Stability::Saddle
    } else {
        Stability::Unstable
    };
    (label, re)
}

/// Newton's method for `b(x) = 0` with a backtracking line search on `|b|²`.
///
/// Converged when `|b| < tol` (Euclidean).
pub fn newton_equilibrium<S: SdeSystem + ?Sized>(sys: &S, x0: &State, tol: f64, max_iter: usize) -> Result<Equilibrium> {
    let mut x = x0.clone();
    let mut b = sys.drift(&x);
    let mut r = b.norm();
    let mut iterations = 0;
    while !(r < tol) {
        if iterations >= max_iter || !r.is_finite() {
            return Err(Error::NoConvergence { iterations, residual: r });
        }
        iterations += 1;
        let jac = sys.drift_jacobian(&x);
        let dx = jac.lu().solve(&(-&b)).ok_or(Error::SingularJacobian)?;
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian);
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &x + &dx * t;
            let bt = sys.drift(&trial);
            let rt = bt.norm();
            if rt.is_finite() && rt * rt <= (1.0 - 1e-4 * t) * r * r {
                x = trial;
                b = bt;
                r = rt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence { iterations, residual: r });
        }
    }
    let (stability, eigen_real_parts) = classify(&sys.drift_jacobian(&x));
    Ok(Equilibrium { state: x, stability, eigen_real_parts, residual_norm: r })
}

/// Pseudo-transient continuation towards an equilibrium.
///
/// Each step solves `(I/δ − ∇b)Δx = b`, an implicit Euler step of
/// `ẋ = b(x)` with pseudo time step `δ`. The step grows as `|b|` decreases
/// (switched evolution relaxation), so the iteration follows the flow far from
/// equilibrium and becomes Newton's method close to it. Starting points inside
/// a basin of attraction therefore converge to its attractor, which plain
/// Newton does not guarantee.
pub fn relax_equilibrium<S: SdeSystem + ?Sized>(sys: &S, x0: &State, tol: f64, max_iter: usize) -> Result<Equilibrium> {
    let n = sys.dim();
    let mut x = x0.clone();
    let mut b = sys.drift(&x);
    let mut r = b.norm();
    if !r.is_finite() {
        return Err(Error::NoConvergence { iterations: 0, residual: r });
    }
    let jac0 = sys.drift_jacobian(&x);
    let scale = jac0.amax().max(f64::MIN_POSITIVE);
    let mut delta = 0.1 / scale;
    let mut iterations = 0;
    while !(r < tol) {
        if iterations >= max_iter {
            return Err(Error::NoConvergence { iterations, residual: r });
        }
        iterations += 1;
        let jac = sys.drift_jacobian(&x);
        let m = DMatrix::identity(n, n) / delta - &jac;
        let dx = m.lu().solve(&b).ok_or(Error::SingularJacobian)?;
        let trial = &x + &dx;
        let bt = sys.drift(&trial);
        let rt = bt.norm();
        if rt.is_finite() && rt < 2.0 * r {
            x = trial;
            delta = (delta * (r / rt).min(10.0)).min(1e12 / scale);
            b = bt;
            r = rt;
        } else {
            delta *= 0.25;
            if delta * scale < 1e-12 {
                return Err(Error::NoConvergence { iterations, residual: r });
            }
        }
    }
    let (stability, eigen_real_parts) = classify(&sys.drift_jacobian(&x));
    Ok(Equilibrium { state: x, stability, eigen_real_parts, residual_norm: r })
}
