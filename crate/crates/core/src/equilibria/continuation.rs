use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::curve::fmt_f64;

use crate::error::{Error, Result};
use crate::system::{SdeSystem, State};

use super::newton::{newton_equilibrium, Equilibrium, Stability};

/// A one-parameter family of systems.
pub trait ParameterFamily: Sync {
    type System: SdeSystem;
    fn system(&self, parameter: f64) -> Result<Self::System>;
}

/// Natural-parameter continuation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationSettings {
    pub initial_step: f64,
    /// Steps are halved on failure; below this the branch either ends in a
    /// certified fold or the continuation stalls.
    pub min_step: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Largest accepted Euclidean jump between consecutive states.
    pub trust_radius: Option<f64>,
    /// Width of the final bisection window around the fold.
    pub fold_tol: f64,
    /// Fold certification: the critical eigenvalue real part must have
    /// shrunk below this fraction of its value at the branch start.
    pub fold_eigen_ratio: f64,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        ContinuationSettings {
            initial_step: 0.01,
            min_step: 1e-6,
            newton_tol: 1e-12,
            newton_max_iter: 100,
            trust_radius: None,
            fold_tol: 1e-7,
            fold_eigen_ratio: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct EquilibriumBranch {
    pub parameter_values: Vec<f64>,
    pub equilibria: Vec<Equilibrium>,
    /// Last successful and first failed parameter value when the branch
    /// ended before its target.
    pub fold_bracket: Option<(f64, f64)>,
    pub fold_parameter: Option<f64>,
}

impl EquilibriumBranch {
    pub fn states(&self) -> Vec<State> {
        self.equilibria.iter().map(|e| e.state.clone()).collect()
    }

    pub fn stabilities(&self) -> Vec<Stability> {
        self.equilibria.iter().map(|e| e.stability).collect()
    }

    pub fn len(&self) -> usize {
        self.parameter_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parameter_values.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &Equilibrium)> {
        self.parameter_values.last().copied().zip(self.equilibria.last())
    }

    /// Write the branch as CSV: `parameter, stability, x_1..x_N`, an optional
    /// per-point scalar column `extra` (e.g. a current), and the critical
    /// eigenvalue real part.
    pub fn write_csv<W: Write>(&self, out: W, extra: Option<(&str, &[f64])>) -> Result<()> {
        if let Some((_, vals)) = extra {
            if vals.len() != self.len() {
                return Err(Error::DimensionMismatch { expected: self.len(), got: vals.len() });
            }
        }
        let dim = self.equilibria.first().map_or(0, |e| e.state.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["parameter".to_string(), "stability".to_string()];
        header.extend((1..=dim).map(|i| format!("x_{i}")));
        if let Some((name, _)) = extra {
            header.push(name.to_string());
        }
        header.push("critical_real_part".to_string());
        w.write_record(&header)?;
        for (k, (p, e)) in self.parameter_values.iter().zip(&self.equilibria).enumerate() {
            let mut row = vec![fmt_f64(*p), e.stability.to_string()];
            row.extend(e.state.iter().map(|v| fmt_f64(*v)));
            if let Some((_, vals)) = extra {
                row.push(fmt_f64(vals[k]));
            }
            row.push(fmt_f64(e.critical_real_part()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    fn push(&mut self, p: f64, e: Equilibrium) {
        self.parameter_values.push(p);
        self.equilibria.push(e);
    }
}

/// One row of a branch CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchRow {
    pub parameter: f64,
    pub stability: Stability,
    pub state: State,
    pub extra: Option<f64>,
    pub critical_real_part: f64,
}

/// Read a CSV written by [`EquilibriumBranch::write_csv`].
pub fn read_branch_csv<R: Read>(input: R) -> Result<Vec<BranchRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let dim = header.iter().filter(|h| h.starts_with("x_")).count();
    let has_extra = header.len() == dim + 4;
    if header.len() != dim + 3 && !has_extra {
        return Err(Error::Parse(format!("unexpected branch header with {} columns", header.len())));
    }
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("'{s}': {e}")));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse(format!("expected {} columns, got {}", header.len(), rec.len())));
        }
        let state = (0..dim).map(|i| parse(&rec[2 + i])).collect::<Result<Vec<f64>>>()?;
        rows.push(BranchRow {
            parameter: parse(&rec[0])?,
            stability: rec[1].trim().parse()?,
            state: State::from_vec(state),
            extra: if has_extra { Some(parse(&rec[2 + dim])?) } else { None },
            critical_real_part: parse(&rec[rec.len() - 1])?,
        });
    }
    Ok(rows)
}

/// Newton at parameter `p` from `prev`, requiring the same stability label
/// and a jump within the trust radius.
fn correct<F: ParameterFamily + ?Sized>(
    family: &F,
    prev: &Equilibrium,
    p: f64,
    settings: &ContinuationSettings,
) -> Result<Equilibrium> {
    let sys = family.system(p)?;
    let eq = newton_equilibrium(&sys, &prev.state, settings.newton_tol, settings.newton_max_iter)?;
    if eq.stability != prev.stability {
        return Err(Error::NoConvergence { iterations: 0, residual: eq.residual_norm });
    }
    if let Some(r) = settings.trust_radius {
        if (&eq.state - &prev.state).norm() > r {
            return Err(Error::NoConvergence { iterations: 0, residual: eq.residual_norm });
        }
    }
    Ok(eq)
}

/// Follow `start` from `v_start` towards `v_end`, using the previous state as
/// predictor. Failed corrections halve the step; when the step drops below
/// `min_step` the branch ends at a fold (located by bisection and certified by
/// the critical eigenvalue) or the continuation reports a stall.
pub fn continue_branch<F: ParameterFamily + ?Sized>(
    family: &F,
    start: &Equilibrium,
    v_start: f64,
    v_end: f64,
    settings: &ContinuationSettings,
) -> Result<EquilibriumBranch> {
    if !(settings.initial_step > 0.0) || !(settings.min_step > 0.0) {
        return Err(Error::InvalidParameter("continuation steps must be positive".into()));
    }
    let dir = if v_end >= v_start { 1.0 } else { -1.0 };
    let mut branch = EquilibriumBranch::default();
    branch.push(v_start, start.clone());

    let mut v = v_start;
    let mut current = start.clone();
    let mut h = settings.initial_step;
    while (v_end - v) * dir > 0.0 {
        let step = h.min((v_end - v).abs());
        let v_try = if step == (v_end - v).abs() { v_end } else { v + dir * step };
        match correct(family, &current, v_try, settings) {
            Ok(eq) => {
                branch.push(v_try, eq.clone());
                v = v_try;
                current = eq;
                h = (h * 1.5).min(settings.initial_step);
            }
            Err(_) => {
                h *= 0.5;
                if h < settings.min_step {
                    branch.fold_bracket = Some((v, v_try));
                    let (fold, refined) = refine_fold(family, &branch, settings.fold_tol, settings)
                        .map_err(|_| Error::ContinuationStalled(v))?;
                    for (p, e) in refined {
                        branch.push(p, e);
                    }
                    if let Some((lo, _)) = branch.fold_bracket {
                        let last = branch.parameter_values.last().copied().unwrap_or(lo);
                        branch.fold_bracket = Some((last, v_try.max(last)));
                    }
                    branch.fold_parameter = Some(fold);
                    return Ok(branch);
                }
            }
        }
    }
    Ok(branch)
}

/// Bisect the failure bracket at the end of `branch` down to `tol_v` and
/// certify the fold through the critical eigenvalue.
pub fn locate_fold<F: ParameterFamily + ?Sized>(
    family: &F,
    branch: &EquilibriumBranch,
    tol_v: f64,
    settings: &ContinuationSettings,
) -> Result<f64> {
    refine_fold(family, branch, tol_v, settings).map(|(v, _)| v)
}

fn refine_fold<F: ParameterFamily + ?Sized>(
    family: &F,
    branch: &EquilibriumBranch,
    tol_v: f64,
    settings: &ContinuationSettings,
) -> Result<(f64, Vec<(f64, Equilibrium)>)> {
    let (mut lo, mut hi) = branch
        .fold_bracket
        .ok_or_else(|| Error::NotAFold("branch did not end in a failure bracket".into()))?;
    let (_, last) = branch.last().ok_or_else(|| Error::NotAFold("empty branch".into()))?;
    let first = &branch.equilibria[0];
    let mut current = last.clone();
    let mut accepted = Vec::new();
    while (hi - lo).abs() > tol_v {
        let mid = 0.5 * (lo + hi);
        match correct(family, &current, mid, settings) {
            Ok(eq) => {
                lo = mid;
                current = eq.clone();
                accepted.push((mid, eq));
            }
            Err(_) => hi = mid,
        }
    }
    let c0 = first.critical_real_part().abs();
    let c1 = current.critical_real_part().abs();
    if !(c1 < settings.fold_eigen_ratio * c0) {
        return Err(Error::NotAFold(format!(
            "critical eigenvalue {c1:.3e} did not approach zero (start {c0:.3e})"
        )));
    }
    Ok((0.5 * (lo + hi), accepted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::newton_equilibrium;
    use crate::models::NormalFormFamily;
    use nalgebra::DVector;

    fn start(family: &NormalFormFamily, v: f64, x0: f64) -> Equilibrium {
        let sys = family.system(v).unwrap();
        newton_equilibrium(&sys, &DVector::from_element(1, x0), 1e-13, 50).unwrap()
    }

    #[test]
    fn tracks_analytic_branch_and_finds_fold() {
        let fam = NormalFormFamily { v_th: 1.0 };
        let s = start(&fam, 0.5, 0.7);
        let br = continue_branch(&fam, &s, 0.5, 1.5, &ContinuationSettings::default()).unwrap();
        for (p, e) in br.parameter_values.iter().zip(&br.equilibria) {
            // residual tolerance 1e-12 means state error ~1e-6 at the fold
            assert!((e.state[0] - (1.0 - p).max(0.0).sqrt()).abs() < 2e-6, "{p}");
            assert_eq!(e.stability, Stability::Stable);
        }
        let fold = br.fold_parameter.unwrap();
        assert!((fold - 1.0).abs() < 1e-6, "{fold}");
        assert!(*br.parameter_values.last().unwrap() > 0.999);
        let again = locate_fold(&fam, &br, 1e-8, &ContinuationSettings::default()).unwrap();
        assert!((again - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reaches_target_without_fold() {
        let fam = NormalFormFamily { v_th: 1.0 };
        let s = start(&fam, 0.0, 0.9);
        let br = continue_branch(&fam, &s, 0.0, 0.5, &ContinuationSettings::default()).unwrap();
        assert_eq!(*br.parameter_values.last().unwrap(), 0.5);
        assert!(br.fold_parameter.is_none());
        assert!(locate_fold(&fam, &br, 1e-7, &ContinuationSettings::default()).is_err());
    }

    #[test]
    fn branch_csv_roundtrip() {
        let fam = NormalFormFamily { v_th: 1.0 };
        let s = start(&fam, 0.0, 1.0);
        let br = continue_branch(&fam, &s, 0.0, 0.5, &ContinuationSettings::default()).unwrap();
        let extra: Vec<f64> = br.parameter_values.iter().map(|p| 2.0 * p).collect();
        let mut buf = Vec::new();
        br.write_csv(&mut buf, Some(("J", &extra))).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("parameter,stability,x_1,J,critical_real_part\n"));
        let rows = read_branch_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), br.len());
        for (row, (p, e)) in rows.iter().zip(br.parameter_values.iter().zip(&br.equilibria)) {
            assert_eq!(row.parameter, *p);
            assert_eq!(row.state, e.state);
            assert_eq!(row.stability, e.stability);
            assert_eq!(row.extra, Some(2.0 * p));
        }
        let mut plain = Vec::new();
        br.write_csv(&mut plain, None).unwrap();
        assert!(read_branch_csv(plain.as_slice()).unwrap().iter().all(|r| r.extra.is_none()));
        assert!(br.write_csv(Vec::new(), Some(("J", &extra[..1]))).is_err());
    }

    #[test]
    fn stall_without_fold() {
        // A trust radius too small for the first step makes every correction
        // fail far from the fold.
        let fam = NormalFormFamily { v_th: 1.0 };
        let s = start(&fam, 0.0, 0.9);
        let settings = ContinuationSettings { trust_radius: Some(1e-12), ..Default::default() };
        let e = continue_branch(&fam, &s, 0.0, 0.5, &settings).unwrap_err();
        assert!(matches!(e, Error::ContinuationStalled(_)));
    }
}
