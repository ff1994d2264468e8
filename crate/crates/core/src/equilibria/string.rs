use nalgebra::DVector;

use crate::curve::{Curve, Interpolation};
use crate::error::{Error, Result};
use crate::system::{SdeSystem, State};

#[derive(Clone, Debug)]
pub struct StringResult {
    pub curve: Curve,
    /// Largest `|sin ∠(b, φ')|` over interior points with non-negligible
    /// drift; zero when the string is everywhere (anti)parallel to `b`.
    pub transverse_drift: f64,
}

/// Relax a string between two attractors under the drift.
///
/// Interior points follow `φ_τ = b(φ)` (explicit Euler) and are redistributed
/// to equal spacing after every step. The result connects the attractors
/// through a saddle along a curve (anti)parallel to `b`. Endpoints that share
/// a basin of attraction are rejected with [`Error::SameBasin`].
pub fn string_relax<S: SdeSystem + ?Sized>(sys: &S, x1: &State, x2: &State, m: usize, steps: usize) -> Result<StringResult> {
    if x1 == x2 {
        return Err(Error::SameBasin);
    }
    let mut curve = Curve::straight(x1, x2, m)?;
    let kappa = curve
        .points()
        .iter()
        .map(|p| sys.drift_jacobian(p).norm())
        .fold(0.0, f64::max);
    let dt = if kappa > 0.0 { 0.5 / kappa } else { 0.1 };

    for _ in 0..steps {
        let pts: Vec<State> = curve
            .points()
            .iter()
            .enumerate()
            .map(|(k, p)| if k == 0 || k == m - 1 { p.clone() } else { p + sys.drift(p) * dt })
            .collect();
        curve = Curve::new(pts)?;
        curve.redistribute(Interpolation::Linear);
    }

    let (transverse_drift, projections) = alignment(&curve, sys);
    // A saddle between the attractors shows up as the tangential drift
    // changing sign from backwards (towards x1) to forwards (towards x2).
    let crosses = projections.windows(2).any(|w| w[0] < 0.0 && w[1] > 0.0);
    if !crosses {
        return Err(Error::SameBasin);
    }
    Ok(StringResult { curve, transverse_drift })
}

/// Transverse drift diagnostic and `⟨b, φ'⟩` at the interior points.
pub(crate) fn alignment<S: SdeSystem + ?Sized>(curve: &Curve, sys: &S) -> (f64, Vec<f64>) {
    let pts = curve.points();
    let m = pts.len();
    let drifts: Vec<DVector<f64>> = pts.iter().map(|p| sys.drift(p)).collect();
    let bmax = drifts.iter().map(|b| b.norm()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    let mut proj = Vec::with_capacity(m - 2);
    for k in 1..m - 1 {
        let t = &pts[k + 1] - &pts[k - 1];
        let b = &drifts[k];
        let (bn, tn) = (b.norm(), t.norm());
        let dot = b.dot(&t);
        proj.push(dot);
        if bn > 1e-8 * bmax && tn > 0.0 {
            let cos = (dot / (bn * tn)).clamp(-1.0, 1.0);
            worst = worst.max((1.0 - cos * cos).max(0.0).sqrt());
        }
    }
    (worst, proj)
}
