//! Discretized curves `φ(α_k)`, `α_k = k/(M−1)`, with fixed endpoints.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::State;
use crate::tridiag::solve_tridiagonal;

/// Interpolation used when redistributing points along a curve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Linear,
    Cubic,
}

/// Oversampling factor of the cubic spline before chord placement.
const CUBIC_REFINE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    points: Vec<State>,
}

impl Curve {
    pub fn new(points: Vec<State>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::TooFewPoints(points.len()));
        }
        let n = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: p.len() });
        }
        Ok(Curve { points })
    }

    /// `m` equidistant points on the segment from `x1` to `x2`.
    pub fn straight(x1: &State, x2: &State, m: usize) -> Result<Self> {
        if m < 3 {
            return Err(Error::TooFewPoints(m));
        }
        if x1.len() != x2.len() {
            return Err(Error::DimensionMismatch { expected: x1.len(), got: x2.len() });
        }
        if x1 == x2 {
            return Err(Error::DegenerateEndpoints);
        }
        let last = (m - 1) as f64;
        let points = (0..m)
            .map(|k| {
                if k == 0 {
                    x1.clone()
                } else if k == m - 1 {
                    x2.clone()
                } else {
                    let a = k as f64 / last;
                    x1 * (1.0 - a) + x2 * a
                }
            })
            .collect();
        Ok(Curve { points })
    }

    /// `m` copies of `x`; the zero-length curve.
    pub fn constant(x: &State, m: usize) -> Result<Self> {
        Curve::new(vec![x.clone(); m])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[State] {
        &self.points
    }

    pub fn into_points(self) -> Vec<State> {
        self.points
    }

    pub fn start(&self) -> &State {
        &self.points[0]
    }

    pub fn end(&self) -> &State {
        &self.points[self.points.len() - 1]
    }

    /// Grid spacing `Δα = 1/(M−1)`.
    pub fn spacing(&self) -> f64 {
        1.0 / (self.points.len() - 1) as f64
    }

    pub fn alpha(&self, k: usize) -> f64 {
        k as f64 * self.spacing()
    }

    /// Euclidean distances between consecutive points.
    pub fn gaps(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect()
    }

    /// Euclidean length of the polyline.
    pub fn length(&self) -> f64 {
        self.gaps().iter().sum()
    }

    /// Largest relative deviation of a gap from the mean gap.
    pub fn gap_deviation(&self) -> f64 {
        let gaps = self.gaps();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        if mean == 0.0 {
            return 0.0;
        }
        gaps.iter().map(|g| (g - mean).abs() / mean).fold(0.0, f64::max)
    }

    /// The same curve with its endpoints moved to `x1`, `x2`; interior points
    /// are shifted by the linear blend of the two endpoint displacements.
    pub fn with_endpoints(&self, x1: &State, x2: &State) -> Curve {
        let d1 = x1 - self.start();
        let d2 = x2 - self.end();
        let m = self.points.len();
        let points = self
            .points
            .iter()
            .enumerate()
            .map(|(k, p)| {
                if k == 0 {
                    x1.clone()
                } else if k == m - 1 {
                    x2.clone()
                } else {
                    let a = self.alpha(k);
                    p + &d1 * (1.0 - a) + &d2 * a
                }
            })
            .collect();
        Curve { points }
    }

    /// Replace the interior points so that consecutive Euclidean gaps are all
    /// equal. The new points lie on the old polyline (linear) or on a natural
    /// cubic spline through the old points (cubic). Endpoints are untouched.
    pub fn redistribute(&mut self, interpolation: Interpolation) {
        let m = self.points.len();
        if self.length() == 0.0 {
            return;
        }
        let new_points = match interpolation {
            Interpolation::Linear => equal_chord_points(&self.points, m),
            Interpolation::Cubic => {
                let dense = spline_resample(&self.points, CUBIC_REFINE * (m - 1) + 1);
                equal_chord_points(&dense, m)
            }
        };
        let first = self.points[0].clone();
        let last = self.points[m - 1].clone();
        self.points = new_points;
        self.points[0] = first;
        self.points[m - 1] = last;
    }

    /// Write as CSV with columns `alpha, x_1..x_N`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["alpha".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("x_{i}")));
        w.write_record(&header)?;
        for (k, p) in self.points.iter().enumerate() {
            let mut row = vec![fmt_f64(self.alpha(k))];
            row.extend(p.iter().map(|v| fmt_f64(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        if headers.get(0) != Some("alpha") || headers.len() < 2 {
            return Err(Error::Parse("curve CSV must start with column 'alpha'".into()));
        }
        let mut points = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<Vec<f64>>>()?;
            points.push(DVector::from_vec(vals));
        }
        Curve::new(points)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Curve::read_csv(std::fs::File::open(path)?)
    }
}

/// `M` points on the straight segment from `x1` to `x2`.
pub fn init_curve(x1: &State, x2: &State, m: usize) -> Result<Curve> {
    Curve::straight(x1, x2, m)
}

/// Format with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Place `m` points on the polyline `poly`, starting at its first vertex,
/// such that consecutive chords all have the same Euclidean length and the
/// last point is the final vertex.
fn equal_chord_points(poly: &[State], m: usize) -> Vec<State> {
    let total: f64 = poly.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum();
    let end = &poly[poly.len() - 1];

    // Mismatch of the closing chord for trial chord length d; negative when
    // the march runs off the end of the polyline.
    let closing = |d: f64| -> f64 {
        match march(poly, d, m - 2) {
            Some(pts) => (end - pts.last().unwrap_or(&poly[0])).norm() - d,
            None => -d,
        }
    };

    // Illinois regula falsi on [0, total/(M−1)], where the closing mismatch
    // goes from positive (the straight-line distance) to non-positive.
    let (mut a, mut fa) = (0.0, closing(0.0));
    let mut b = total / (m - 1) as f64;
    let mut fb = closing(b);
    if fb > 0.0 {
        // Chords never exceed arcs, so this only happens through rounding.
        b *= 1.0 + 1e-12;
        fb = closing(b);
    }
    let mut lo = a;
    let mut side = 0i8;
    for _ in 0..200 {
        if fb == 0.0 {
            lo = b;
            break;
        }
        let c = if fa > fb { (a * fb - b * fa) / (fb - fa) } else { 0.5 * (a + b) };
        let c = if c > a && c < b { c } else { 0.5 * (a + b) };
        if c <= a || c >= b {
            break;
        }
        let fc = closing(c);
        if fc >= 0.0 {
            lo = c;
            if fc <= 1e-14 * c {
                break;
            }
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        }
        if b - a <= 1e-15 * b {
            break;
        }
    }
    // The lower bracket never runs off the polyline.
    let mut out = Vec::with_capacity(m);
    out.push(poly[0].clone());
    match march(poly, lo, m - 2) {
        Some(mut pts) => out.append(&mut pts),
        None => return equal_arc_points(poly, m),
    }
    out.push(end.clone());
    // Folded polylines can make the closing chord jump past zero; equal arc
    // length is the best we can do there.
    let closing_gap = (&out[m - 1] - &out[m - 2]).norm();
    if (closing_gap - lo).abs() > 1e-9 * lo.max(f64::MIN_POSITIVE) {
        return equal_arc_points(poly, m);
    }
    out
}

/// `m` points uniform in cumulative arc length along `poly`.
fn equal_arc_points(poly: &[State], m: usize) -> Vec<State> {
    let mut s = vec![0.0; poly.len()];
    for k in 1..poly.len() {
        s[k] = s[k - 1] + (&poly[k] - &poly[k - 1]).norm();
    }
    let total = s[poly.len() - 1];
    let mut seg = 0;
    (0..m)
        .map(|j| {
            let target = total * j as f64 / (m - 1) as f64;
            while seg + 2 < poly.len() && s[seg + 1] < target {
                seg += 1;
            }
            let h = s[seg + 1] - s[seg];
            let u = if h > 0.0 { ((target - s[seg]) / h).clamp(0.0, 1.0) } else { 0.0 };
            &poly[seg] + (&poly[seg + 1] - &poly[seg]) * u
        })
        .collect()
}

/// Starting from `poly[0]`, repeatedly find the first point further along the
/// polyline at Euclidean distance `d` from the current one.
fn march(poly: &[State], d: f64, count: usize) -> Option<Vec<State>> {
    let mut out = Vec::with_capacity(count);
    let mut seg = 0usize;
    let mut u0 = 0.0f64;
    let mut q = poly[0].clone();
    let d2 = d * d;
    for _ in 0..count {
        let mut found = None;
        while seg + 1 < poly.len() {
            let p = &poly[seg];
            let e = &poly[seg + 1] - p;
            let w = p - &q;
            let a = e.norm_squared();
            if a > 0.0 {
                let end_dist2 = (&w + &e).norm_squared();
                if end_dist2 >= d2 {
                    let b = w.dot(&e);
                    let c = w.norm_squared() - d2;
                    let disc = (b * b - a * c).max(0.0);
                    let u = ((-b + disc.sqrt()) / a).clamp(u0, 1.0);
                    found = Some((u, p + &e * u));
                    break;
                }
            }
            seg += 1;
            u0 = 0.0;
        }
        let (u, point) = found?;
        u0 = u;
        q = point.clone();
        out.push(point);
    }
    Some(out)
}

/// Sample a natural cubic spline through `poly` (parameterized by cumulative
/// chord length) at `count` points uniform in that parameter.
fn spline_resample(poly: &[State], count: usize) -> Vec<State> {
    let n = poly.len();
    let mut s = vec![0.0; n];
    for k in 1..n {
        s[k] = s[k - 1] + (&poly[k] - &poly[k - 1]).norm();
    }
    // Collapse repeated knots; they carry no geometry.
    let mut knots = vec![0usize];
    for k in 1..n {
        if s[k] > s[*knots.last().unwrap_or(&0)] {
            knots.push(k);
        }
    }
    if knots.len() < 3 {
        return poly.to_vec();
    }
    let t: Vec<f64> = knots.iter().map(|&k| s[k]).collect();
    let nk = t.len();
    let dim = poly[0].len();
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();

    // Second derivatives per component with natural end conditions.
    let mut second = vec![vec![0.0; dim]; nk];
    if nk > 2 {
        let inner = nk - 2;
        let diag: Vec<f64> = (1..nk - 1).map(|i| 2.0 * (h[i - 1] + h[i])).collect();
        let off: Vec<f64> = (1..inner).map(|i| h[i]).collect();
        for c in 0..dim {
            let y: Vec<f64> = knots.iter().map(|&k| poly[k][c]).collect();
            let rhs: Vec<f64> = (1..nk - 1)
                .map(|i| 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]))
                .collect();
            if let Ok(m) = solve_tridiagonal(&off, &diag, &off, &rhs) {
                for i in 0..inner {
                    second[i + 1][c] = m[i];
                }
            }
        }
    }

    let total = t[nk - 1];
    let mut out = Vec::with_capacity(count);
    let mut seg = 0usize;
    for j in 0..count {
        let x = total * j as f64 / (count - 1) as f64;
        while seg + 2 < nk && x > t[seg + 1] {
            seg += 1;
        }
        let (a, b) = (knots[seg], knots[seg + 1]);
        let hs = h[seg];
        let wa = (t[seg + 1] - x) / hs;
        let wb = (x - t[seg]) / hs;
        let mut p = DVector::zeros(dim);
        for c in 0..dim {
            let ma = second[seg][c];
            let mb = second[seg + 1][c];
            p[c] = wa * poly[a][c]
                + wb * poly[b][c]
                + ((wa * wa * wa - wa) * ma + (wb * wb * wb - wb) * mb) * hs * hs / 6.0;
        }
        out.push(p);
    }
    out[0] = poly[0].clone();
    out[count - 1] = poly[n - 1].clone();
    out
}
