//! Bias sweeps of the minimal action and power-law fits near a fold.
//!
//! With `v = |V_th − V|/V_th`, the barrier behaves as `S ≈ s0·v^β` with
//! `β = 3/2` close to the fold; further away `S ≈ s0 v^{3/2} + s1 v^{5/2} +
//! s2 v^{7/2}`. The leading fit is a log-log least-squares line; the
//! higher-order fit differentiates `S_c = S/(s0 v^{3/2})` numerically in `V`,
//! fits the derivative linearly in `v` and integrates back with `S_c(V_th) = 1`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curve::{fmt_f64, Curve};
use crate::equilibria::{continue_branch, ContinuationSettings, Equilibrium, ParameterFamily};
use crate::error::{Error, Result};
use crate::gmam::{self, GmamSettings};
use crate::system::State;

/// One point of a bias sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub bias: f64,
    /// `|V_th − V|/V_th`.
    pub v: f64,
    pub action: f64,
    pub attractor: State,
    pub saddle: State,
    pub converged: bool,
    pub iterations: usize,
    /// Why the point failed, if it did; `action` is NaN then.
    pub error: Option<String>,
}

impl SweepRecord {
    pub fn failed(bias: f64, v: f64, error: String) -> Self {
        SweepRecord {
            bias,
            v,
            action: f64::NAN,
            attractor: State::zeros(0),
            saddle: State::zeros(0),
            converged: false,
            iterations: 0,
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none() && self.action.is_finite()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub gmam: GmamSettings,
    pub continuation: ContinuationSettings,
    /// Start each minimization from the previous point's curve.
    pub warm_start: bool,
}

/// Default upper end, in `v`, of the leading power-law fit. Wider windows
/// pick up the `v^{5/2}` correction: with `s1/s0 ≈ 10` the local slope
/// already reaches 1.6 near `v ≈ 0.01`.
pub const DEFAULT_LEADING_V_MAX: f64 = 2e-3;

/// `|V_th − V|/V_th`.
pub fn reduced_distance(bias: f64, v_th: f64) -> f64 {
    ((v_th - bias) / v_th).abs()
}

/// `count` values of `v` spaced uniformly in `log v` over `[v_min, v_max]`,
/// largest first, and the corresponding biases `V = V_th(1 − v)`.
pub fn geometric_grid(v_th: f64, v_min: f64, v_max: f64, count: usize) -> Result<Vec<f64>> {
    if !(v_min > 0.0 && v_max > v_min) || count < 2 {
        return Err(Error::InvalidParameter(format!(
            "need 0 < v_min < v_max and at least 2 points, got [{v_min}, {v_max}] with {count}"
        )));
    }
    let (l0, l1) = (v_max.ln(), v_min.ln());
    Ok((0..count)
        .map(|k| {
            let v = (l0 + (l1 - l0) * k as f64 / (count - 1) as f64).exp();
            v_th * (1.0 - v)
        })
        .collect())
}

/// Follow an equilibrium from `from` to `to`; fails if the branch ends first.
pub fn track<F: ParameterFamily + ?Sized>(
    family: &F,
    eq: &Equilibrium,
    from: f64,
    to: f64,
    settings: &ContinuationSettings,
) -> Result<Equilibrium> {
    if from == to {
        return Ok(eq.clone());
    }
    let br = continue_branch(family, eq, from, to, settings)?;
    match (br.fold_parameter, br.last()) {
        (None, Some((p, e))) if p == to => Ok(e.clone()),
        (Some(fold), _) => Err(Error::ContinuationStalled(fold)),
        _ => Err(Error::ContinuationStalled(from)),
    }
}

/// Minimal action from `attractor` to `saddle` at one bias.
pub fn sweep_point<F: ParameterFamily + ?Sized>(
    family: &F,
    bias: f64,
    v_th: f64,
    attractor: &Equilibrium,
    saddle: &Equilibrium,
    gmam_settings: &GmamSettings,
    initial: Option<&Curve>,
) -> (SweepRecord, Option<Curve>) {
    let v = reduced_distance(bias, v_th);
    let run = family
        .system(bias)
        .and_then(|sys| gmam::solve(&sys, &attractor.state, &saddle.state, gmam_settings, initial));
    match run {
        Ok(r) => (
            SweepRecord {
                bias,
                v,
                action: r.action,
                attractor: attractor.state.clone(),
                saddle: saddle.state.clone(),
                converged: r.converged,
                iterations: r.iterations_used,
                error: None,
            },
            Some(r.curve),
        ),
        Err(e) => (SweepRecord::failed(bias, v, e.to_string()), None),
    }
}

/// Attractor and saddle at every bias of `grid`, continued from their values
/// at `start_bias`. Points past the end of either branch are errors; the
/// tracking resumes from the last good point.
pub fn track_pair<F: ParameterFamily + ?Sized>(
    family: &F,
    start_bias: f64,
    attractor: &Equilibrium,
    saddle: &Equilibrium,
    grid: &[f64],
    settings: &ContinuationSettings,
) -> Vec<Result<(Equilibrium, Equilibrium)>> {
    let mut at = (start_bias, attractor.clone(), saddle.clone());
    grid.iter()
        .map(|&bias| {
            let a = track(family, &at.1, at.0, bias, settings)?;
            let s = track(family, &at.2, at.0, bias, settings)?;
            at = (bias, a.clone(), s.clone());
            Ok((a, s))
        })
        .collect()
}

/// Sweep the bias over `grid`: continue the attractor and the saddle, then
/// minimize the action between them. Failures are recorded per point.
pub fn sweep<F: ParameterFamily + ?Sized>(
    family: &F,
    v_th: f64,
    start_bias: f64,
    attractor: &Equilibrium,
    saddle: &Equilibrium,
    grid: &[f64],
    settings: &SweepSettings,
) -> Vec<SweepRecord> {
    let pairs = track_pair(family, start_bias, attractor, saddle, grid, &settings.continuation);
    let mut previous: Option<Curve> = None;
    grid.iter()
        .zip(pairs)
        .map(|(&bias, pair)| match pair {
            Ok((a, s)) => {
                let init = if settings.warm_start { previous.as_ref() } else { None };
                let (rec, curve) = sweep_point(family, bias, v_th, &a, &s, &settings.gmam, init);
                if curve.is_some() {
                    previous = curve;
                }
                rec
            }
            Err(e) => SweepRecord::failed(bias, reduced_distance(bias, v_th), e.to_string()),
        })
        .collect()
}

/// Least-squares line through `(log v, log S)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub s0: f64,
    pub beta: f64,
    /// Standard error of `β`.
    pub beta_std_err: f64,
    /// Standard error of `s0` (propagated from the intercept).
    pub s0_std_err: f64,
    /// RMS of `log S − log(s0 v^β)`.
    pub rms_log_residual: f64,
    pub n_points: usize,
    /// Range of `v` covered by the fitted points.
    pub v_range: (f64, f64),
}

impl PowerLawFit {
    pub fn eval(&self, v: f64) -> f64 {
        self.s0 * v.powf(self.beta)
    }
}

/// Fit `S = s0·v^β` to `(v, S)` pairs.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 5 {
        return Err(Error::FitDomainError(format!("need at least 5 points, got {}", points.len())));
    }
    if let Some((v, s)) = points.iter().find(|(v, s)| !(*v > 0.0 && *s > 0.0)) {
        return Err(Error::FitDomainError(format!("v and S must be positive, got v = {v}, S = {s}")));
    }
    let x: Vec<f64> = points.iter().map(|(v, _)| v.ln()).collect();
    let y: Vec<f64> = points.iter().map(|(_, s)| s.ln()).collect();
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|xi| (xi - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::FitDomainError("all v coincide".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(xi, yi)| (xi - xm) * (yi - ym)).sum();
    let beta = sxy / sxx;
    let intercept = ym - beta * xm;
    let ssr: f64 = x.iter().zip(&y).map(|(xi, yi)| (yi - intercept - beta * xi).powi(2)).sum();
    let sigma2 = ssr / (n - 2.0);
    let beta_se = (sigma2 / sxx).sqrt();
    let intercept_se = (sigma2 * (1.0 / n + xm * xm / sxx)).sqrt();
    let s0 = intercept.exp();
    let (vmin, vmax) = points.iter().fold((f64::INFINITY, 0.0f64), |(a, b), (v, _)| (a.min(*v), b.max(*v)));
    Ok(PowerLawFit {
        s0,
        beta,
        beta_std_err: beta_se,
        s0_std_err: s0 * intercept_se,
        rms_log_residual: (ssr / n).sqrt(),
        n_points: points.len(),
        v_range: (vmin, vmax),
    })
}

/// Local log-log slopes `d log S / d log v` (three-point stencils on the
/// possibly nonuniform grid), ordered by increasing `v`.
pub fn local_slopes(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|(v, s)| (v.ln(), s.ln())).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let d = derivative_nonuniform(&pts);
    pts.iter().zip(d).map(|((x, _), s)| (x.exp(), s)).collect()
}

/// The largest window `[v_lo, v_hi]`, starting at the smallest `v`, on which
/// the local slope stays inside `[lo, hi]`.
pub fn validity_window(points: &[(f64, f64)], lo: f64, hi: f64) -> Option<(f64, f64)> {
    let slopes = local_slopes(points);
    let first = slopes.first()?;
    if !(first.1 >= lo && first.1 <= hi) {
        return None;
    }
    let last = slopes.iter().take_while(|(_, s)| *s >= lo && *s <= hi).last()?;
    Some((first.0, last.0))
}

/// Derivative of tabulated `(x, y)` (sorted by `x`): three-point central
/// differences inside, one-sided three-point formulas at the ends. All are
/// exact for quadratics.
pub fn derivative_nonuniform(pts: &[(f64, f64)]) -> Vec<f64> {
    let n = pts.len();
    if n < 3 {
        return match n {
            2 => {
                let s = (pts[1].1 - pts[0].1) / (pts[1].0 - pts[0].0);
                vec![s, s]
            }
            _ => vec![0.0; n],
        };
    }
    // derivative at x of the parabola through three points
    let parabola = |i: usize, x: f64| {
        let (x0, y0) = pts[i];
        let (x1, y1) = pts[i + 1];
        let (x2, y2) = pts[i + 2];
        y0 * (2.0 * x - x1 - x2) / ((x0 - x1) * (x0 - x2))
            + y1 * (2.0 * x - x0 - x2) / ((x1 - x0) * (x1 - x2))
            + y2 * (2.0 * x - x0 - x1) / ((x2 - x0) * (x2 - x1))
    };
    (0..n)
        .map(|k| {
            let i = k.saturating_sub(1).min(n - 3);
            parabola(i, pts[k].0)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HigherOrderFit {
    pub s1: f64,
    pub s2: f64,
    /// `S_c′(V) ≈ p + q·v`.
    pub p: f64,
    pub q: f64,
    /// RMS relative residual of the three-term model on the fitted points.
    pub rms_relative_residual: f64,
    pub n_points: usize,
    pub v_range: (f64, f64),
}

/// Fit the `v^{5/2}` and `v^{7/2}` corrections given `s0` and the threshold.
/// `records` are `(V, S)` pairs on one side of `V_th`.
pub fn fit_higher_order(records: &[(f64, f64)], v_th: f64, s0: f64) -> Result<HigherOrderFit> {
    if records.len() < 5 {
        return Err(Error::FitDomainError(format!("need at least 5 points, got {}", records.len())));
    }
    if !(s0 > 0.0) || !(v_th > 0.0) {
        return Err(Error::FitDomainError("s0 and V_th must be positive".into()));
    }
    let mut sc: Vec<(f64, f64)> = Vec::with_capacity(records.len());
    for &(bias, s) in records {
        let v = reduced_distance(bias, v_th);
        if !(v > 0.0 && s > 0.0) {
            return Err(Error::FitDomainError(format!("need V ≠ V_th and S > 0, got V = {bias}, S = {s}")));
        }
        sc.push((bias, s / (s0 * v.powf(1.5))));
    }
    sc.sort_by(|a, b| a.0.total_cmp(&b.0));
    let dsc = derivative_nonuniform(&sc);

    // linear least squares of S_c′ against v
    let vs: Vec<f64> = sc.iter().map(|(bias, _)| reduced_distance(*bias, v_th)).collect();
    let design = DMatrix::from_fn(vs.len(), 2, |i, j| if j == 0 { 1.0 } else { vs[i] });
    let rhs = DVector::from_vec(dsc);
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::FitDomainError(e.to_string()))?;
    let (p, q) = (coef[0], coef[1]);
    // S_c′ = −(a + 2c v)/V_th for S_c = 1 + a v + c v²
    let s1 = -s0 * v_th * p;
    let s2 = -s0 * v_th * q / 2.0;
    let model = |v: f64| s0 * v.powf(1.5) + s1 * v.powf(2.5) + s2 * v.powf(3.5);
    let rms = (records
        .iter()
        .map(|&(bias, s)| {
            let v = reduced_distance(bias, v_th);
            ((model(v) - s) / s).powi(2)
        })
        .sum::<f64>()
        / records.len() as f64)
        .sqrt();
    let (vmin, vmax) = vs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    Ok(HigherOrderFit { s1, s2, p, q, rms_relative_residual: rms, n_points: records.len(), v_range: (vmin, vmax) })
}

/// RMS relative residual of `model` against `(v, S)` pairs.
pub fn rms_relative_residual<M: Fn(f64) -> f64>(points: &[(f64, f64)], model: M) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    (points.iter().map(|(v, s)| ((model(*v) - s) / s).powi(2)).sum::<f64>() / points.len() as f64).sqrt()
}

/// `log⟨T⟩ ≈ S/η`.
pub fn escape_time_report(action: f64, eta: f64) -> f64 {
    action / eta
}

/// Both fits and their diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub v_th: f64,
    pub s0: f64,
    pub beta: f64,
    pub s1: f64,
    pub s2: f64,
    /// Bias window `(V_lo, V_hi)` of the leading fit.
    pub fit_window: (f64, f64),
    /// Bias window of the higher-order fit.
    pub higher_order_window: (f64, f64),
    pub power_law: PowerLawFit,
    pub higher_order: HigherOrderFit,
    /// RMS relative residual of `s0 v^β` over the higher-order window.
    pub power_law_residual_full: f64,
    /// Window in `v` on which the local slope stays in `[1.4, 1.6]`.
    pub validity_window_v: Option<(f64, f64)>,
    /// Largest deviation of `(β, s0)` when the leading fit is repeated on
    /// every other grid point; a measure of grid sensitivity alongside the
    /// standard errors. `None` with fewer than ten points in the window.
    pub grid_spread: Option<(f64, f64)>,
}

fn grid_spread(points: &[(f64, f64)], full: &PowerLawFit) -> Option<(f64, f64)> {
    let halves = [0, 1].map(|parity| {
        let half: Vec<(f64, f64)> = points.iter().skip(parity).step_by(2).cloned().collect();
        fit_power_law(&half)
    });
    let mut spread = (0.0f64, 0.0f64);
    for fit in halves {
        let fit = fit.ok()?;
        spread.0 = spread.0.max((fit.beta - full.beta).abs());
        spread.1 = spread.1.max((fit.s0 - full.s0).abs());
    }
    Some(spread)
}

/// Run both fits on successful sweep records: the leading fit on points
/// with `v ≤ leading_v_max`, the higher-order fit on all of them.
pub fn fit_scaling(records: &[SweepRecord], v_th: f64, leading_v_max: f64) -> Result<ScalingFit> {
    let good: Vec<&SweepRecord> = records.iter().filter(|r| r.is_ok() && r.v > 0.0).collect();
    let all: Vec<(f64, f64)> = good.iter().map(|r| (r.v, r.action)).collect();
    let near: Vec<(f64, f64)> = all.iter().cloned().filter(|(v, _)| *v <= leading_v_max).collect();
    let power_law = fit_power_law(&near)?;
    let biases: Vec<(f64, f64)> = good.iter().map(|r| (r.bias, r.action)).collect();
    let higher_order = fit_higher_order(&biases, v_th, power_law.s0)?;
    let window = |pts: &[(f64, f64)]| {
        pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (v, _)| {
            let bias = v_th * (1.0 - v);
            (a.min(bias), b.max(bias))
        })
    };
    Ok(ScalingFit {
        v_th,
        s0: power_law.s0,
        beta: power_law.beta,
        s1: higher_order.s1,
        s2: higher_order.s2,
        fit_window: window(&near),
        higher_order_window: window(&all),
        power_law_residual_full: rms_relative_residual(&all, |v| power_law.eval(v)),
        validity_window_v: validity_window(&all, 1.4, 1.6),
        grid_spread: grid_spread(&near, &power_law),
        power_law,
        higher_order,
    })
}

/// Write records as CSV with columns `V, v, S, converged, iterations`.
pub fn write_sweep_csv<W: Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["V", "v", "S", "converged", "iterations"])?;
    for r in records {
        w.write_record([
            fmt_f64(r.bias),
            fmt_f64(r.v),
            fmt_f64(r.action),
            r.converged.to_string(),
            r.iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read back `(V, v, S, converged, iterations)` rows.
pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<(f64, f64, f64, bool, usize)>> {
    let mut r = csv::Reader::from_reader(input);
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("'{s}': {e}")));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::Parse(format!("expected 5 columns, got {}", rec.len())));
        }
        out.push((
            parse(&rec[0])?,
            parse(&rec[1])?,
            parse(&rec[2])?,
            rec[3].trim().parse::<bool>().map_err(|e| Error::Parse(e.to_string()))?,
            rec[4].trim().parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?,
        ));
    }
    Ok(out)
}
