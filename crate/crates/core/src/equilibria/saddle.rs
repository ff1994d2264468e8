use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::system::SdeSystem;

use super::newton::{newton_equilibrium, Equilibrium, Stability};

/// A scanned candidate must have `|b|` at most this fraction of the largest
/// `|b|` along the curve.
pub const SADDLE_SCAN_THRESHOLD: f64 = 0.5;

const NEWTON_MAX_ITER: usize = 100;

/// Locate the saddle on a relaxed string: take the interior local minimum of
/// `|b|` with the smallest value and polish it with Newton's method.
pub fn find_saddle<S: SdeSystem + ?Sized>(sys: &S, curve: &Curve, tol: f64) -> Result<Equilibrium> {
    let pts = curve.points();
    let m = pts.len();
    let norms: Vec<f64> = pts.iter().map(|p| sys.drift(p).norm()).collect();
    let bmax = norms[1..m - 1].iter().cloned().fold(0.0, f64::max);

    let candidate = (1..m - 1)
        .filter(|&k| norms[k] <= norms[k - 1] && norms[k] <= norms[k + 1])
        .filter(|&k| norms[k] < SADDLE_SCAN_THRESHOLD * bmax)
        .min_by(|&a, &b| norms[a].total_cmp(&norms[b]))
        .ok_or_else(|| Error::SaddleNotFound("no interior minimum of |b| along the curve".into()))?;

    let eq = newton_equilibrium(sys, &pts[candidate], tol, NEWTON_MAX_ITER)
        .map_err(|e| Error::SaddleNotFound(format!("Newton refinement failed: {e}")))?;

    let scale = curve.length().max(f64::MIN_POSITIVE);
    for end in [curve.start(), curve.end()] {
        if (&eq.state - end).norm() < 1e-6 * scale {
            return Err(Error::SaddleNotFound("Newton converged to an endpoint".into()));
        }
    }
    if eq.stability != Stability::Saddle {
        return Err(Error::SaddleNotFound(format!("equilibrium is {}", eq.stability)));
    }
    Ok(eq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::string_relax;
    use crate::models::{DoubleWell, PlanarSaddleNode};
    use crate::system::{AdditiveSystem, State};
    use nalgebra::DVector;

    fn v(xs: &[f64]) -> State {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn double_well_saddle() {
        let s = string_relax(&DoubleWell, &v(&[-1.0, 0.0]), &v(&[1.0, 0.0]), 40, 100).unwrap();
        let e = find_saddle(&DoubleWell, &s.curve, 1e-13).unwrap();
        assert!(e.state.norm() < 1e-8);
        assert_eq!(e.stability, Stability::Saddle);
    }

    #[test]
    fn planar_normal_form_saddle() {
        let sys = PlanarSaddleNode { a: 0.04 };
        // only one attractor, so scan a straight segment instead of a string
        let c = Curve::straight(&v(&[0.2, 0.0]), &v(&[-0.6, 0.1]), 40).unwrap();
        let e = find_saddle(&sys, &c, 1e-13).unwrap();
        assert!((&e.state - v(&[-0.2, 0.0])).norm() < 1e-8);
    }

    #[test]
    fn uniform_drift_has_no_saddle() {
        let sys = AdditiveSystem::new(2, |_x: &State| DVector::from_row_slice(&[1.0, 0.0]));
        let c = Curve::straight(&v(&[0.0, 0.0]), &v(&[0.0, 1.0]), 20).unwrap();
        assert!(matches!(find_saddle(&sys, &c, 1e-12), Err(Error::SaddleNotFound(_))));
    }

    #[test]
    fn endpoint_attractor_is_not_a_saddle() {
        // The straight segment inside one basin: the only |b| minimum Newton
        // can reach is the attractor at the end.
        let c = Curve::straight(&v(&[-1.0, 0.0]), &v(&[-0.2, 0.5]), 20).unwrap();
        assert!(matches!(find_saddle(&DoubleWell, &c, 1e-12), Err(Error::SaddleNotFound(_))));
    }
}
