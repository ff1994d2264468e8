use nalgebra::{DMatrix, DVector};

use crate::equilibria::{
    continue_branch, find_saddle, relax_equilibrium, string_relax, ContinuationSettings, Equilibrium, ParameterFamily,
    Stability,
};
use crate::error::{Error, Result};
use crate::system::{SdeSystem, State};

use super::params::SlParameters;

/// Drift velocity curve `f(ζ) = 2ζ/(1+ζ²) + exp(4·10⁻⁶ζ⁴) − 1`.
pub fn f_curve(zeta: f64) -> f64 {
    2.0 * zeta / (1.0 + zeta * zeta) + (4e-6 * zeta.powi(4)).exp_m1()
}

/// `f′(ζ)`.
pub fn f_curve_derivative(zeta: f64) -> f64 {
    let q = 1.0 + zeta * zeta;
    2.0 * (1.0 - zeta * zeta) / (q * q) + 16e-6 * zeta.powi(3) * (4e-6 * zeta.powi(4)).exp()
}

/// `ln(1 + e^{−k}(e^{m} − 1))` without overflow for large `m`.
pub fn log_occupation(m: f64, k: f64) -> f64 {
    let u = m - k;
    if u > 30.0 {
        u + (-(-k).exp_m1() * (-u).exp()).ln_1p()
    } else if m < 700.0 {
        ((-k).exp() * m.exp_m1()).ln_1p()
    } else {
        (u.exp() - (-k).exp()).ln_1p()
    }
}

/// Partial derivatives `(∂/∂m, ∂/∂k)` of [`log_occupation`].
fn log_occupation_partials(m: f64, k: f64) -> (f64, f64) {
    let u = m - k;
    let one_minus = -(-k).exp_m1(); // 1 − e^{−k}
    if u > 0.0 {
        let d = 1.0 + one_minus * (-u).exp();
        (1.0 / d, (-m).exp_m1() / d)
    } else {
        let eu = u.exp();
        let d = eu + one_minus;
        (eu / d, -(eu - (-k).exp()) / d)
    }
}

/// Fields `F_0..F_N` (V/m) from densities `n_1..n_N` (m⁻²), solving the
/// Poisson relations `F_i − F_{i−1} = (e/ε)(n_i − N_D)` together with the
/// bias constraint `ℓ·Σ F_i = V`.
pub fn fields_from_densities(n: &DVector<f64>, p: &SlParameters) -> DVector<f64> {
    let nw = p.n_wells;
    let q = p.charge / p.epsilon;
    let periods = (nw + 1) as f64;
    let weighted: f64 = n.iter().enumerate().map(|(j, nj)| (j + 1) as f64 * (nj - p.doping)).sum::<f64>() / periods;
    let base = p.bias / (periods * p.ell);
    // suffix[i] = Σ_{j>i} (n_j − N_D)
    let mut out = DVector::zeros(nw + 1);
    let mut suffix = 0.0;
    for i in (0..=nw).rev() {
        out[i] = base + q * (weighted - suffix);
        if i >= 1 {
            suffix += n[i - 1] - p.doping;
        }
    }
    out
}

/// Prefactor `e·v_M·f(F/F_max)/ℓ` of the interior currents and its
/// derivative with respect to `F`.
fn prefactor(field: f64, p: &SlParameters) -> (f64, f64) {
    let s = p.charge * p.v_m / p.ell;
    let z = field / p.f_max;
    (s * f_curve(z), s * f_curve_derivative(z) / p.f_max)
}

/// Current densities `J_0..J_N` (A/m²).
///
/// The contacts are Ohmic, `J_0 = g·F_0` and `J_N = g·F_N·n_N/N_D`; the
/// interior currents are sequential tunneling between neighbouring wells.
pub fn tunneling_currents(n: &DVector<f64>, fields: &DVector<f64>, p: &SlParameters) -> DVector<f64> {
    let nw = p.n_wells;
    let mut j = DVector::zeros(nw + 1);
    j[0] = p.g * fields[0];
    for i in 1..nw {
        let (pre, _) = prefactor(fields[i], p);
        let l = log_occupation(n[i] / p.c1, p.c2 * fields[i]);
        j[i] = pre * (n[i - 1] - p.c1 * l);
    }
    j[nw] = p.g * fields[nw] * n[nw - 1] / p.doping;
    j
}

/// `J_0..J_N` directly from the densities.
pub fn currents(n: &DVector<f64>, p: &SlParameters) -> DVector<f64> {
    tunneling_currents(n, &fields_from_densities(n, p), p)
}

/// `∂J_i/∂n_j` (A per unit density), an (N+1)×N matrix.
pub fn current_jacobian(n: &DVector<f64>, p: &SlParameters) -> DMatrix<f64> {
    let nw = p.n_wells;
    let fields = fields_from_densities(n, p);
    let q = p.charge / p.epsilon;
    let periods = (nw + 1) as f64;
    // ∂F_i/∂n_j = (e/ε)(j/(N+1) − 1_{j>i}), 1-based j
    let dfield = |i: usize, j1: usize| q * (j1 as f64 / periods - if j1 > i { 1.0 } else { 0.0 });

    let mut jac = DMatrix::zeros(nw + 1, nw);
    let add_field_term = |row: usize, dj_df: f64, jac: &mut DMatrix<f64>| {
        for col in 0..nw {
            jac[(row, col)] += dj_df * dfield(row, col + 1);
        }
    };
    add_field_term(0, p.g, &mut jac);
    for i in 1..nw {
        let (pre, dpre) = prefactor(fields[i], p);
        let (m, k) = (n[i] / p.c1, p.c2 * fields[i]);
        let l = log_occupation(m, k);
        let (dl_dm, dl_dk) = log_occupation_partials(m, k);
        let bracket = n[i - 1] - p.c1 * l;
        add_field_term(i, dpre * bracket - pre * p.c1 * p.c2 * dl_dk, &mut jac);
        jac[(i, i - 1)] += pre;
        jac[(i, i)] -= pre * dl_dm;
    }
    add_field_term(nw, p.g * n[nw - 1] / p.doping, &mut jac);
    jac[(nw, nw - 1)] += p.g * fields[nw] / p.doping;
    jac
}

/// Drift `b_i = (J_{i−1} − J_i)/e`, m⁻²s⁻¹.
pub fn sl_drift(n: &DVector<f64>, p: &SlParameters) -> DVector<f64> {
    let j = currents(n, p);
    current_divergence(&j) / p.charge
}

fn current_divergence(j: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(j.len() - 1, |r, _| j[r] - j[r + 1])
}

/// Diffusion matrix (N×(N+1)): row `r` carries `√J_r` in column `r` and
/// `−√J_{r+1}` in column `r+1`. The noise strength `η = 1/(e·a)` is kept
/// separate.
pub fn sl_diffusion(n: &DVector<f64>, p: &SlParameters) -> Result<DMatrix<f64>> {
    diffusion_from_currents(&currents(n, p))
}

fn check_currents(j: &DVector<f64>) -> Result<()> {
    match j.iter().position(|v| !(*v > 0.0)) {
        Some(index) => Err(Error::NonPositiveCurrent { index, value: j[index] }),
        None => Ok(()),
    }
}

pub fn diffusion_from_currents(j: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_currents(j)?;
    let n = j.len() - 1;
    let mut s = DMatrix::zeros(n, n + 1);
    for r in 0..n {
        s[(r, r)] = j[r].sqrt();
        s[(r, r + 1)] = -j[r + 1].sqrt();
    }
    Ok(s)
}

/// `A = σσᵀ`: tridiagonal with `A_rr = J_r + J_{r+1}`, `A_{r,r+1} = −J_{r+1}`.
pub fn covariance_from_currents(j: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_currents(j)?;
    let n = j.len() - 1;
    let mut a = DMatrix::zeros(n, n);
    for r in 0..n {
        a[(r, r)] = j[r] + j[r + 1];
        if r + 1 < n {
            a[(r, r + 1)] = -j[r + 1];
            a[(r + 1, r)] = -j[r + 1];
        }
    }
    Ok(a)
}

/// `det(A) = Σ_k Π_{i≠k} J_i` for the bidiagonal-noise covariance.
pub fn det_a_closed_form(j: &[f64]) -> f64 {
    let n = j.len();
    let mut prefix = vec![1.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] * j[i];
    }
    let mut suffix = 1.0;
    let mut sum = 0.0;
    for k in (0..n).rev() {
        sum += prefix[k] * suffix;
        suffix *= j[k];
    }
    sum
}

/// The superlattice as an [`SdeSystem`] in reduced units.
///
/// States are occupations `x_i = n_i/N_D`; currents are measured in
/// `J_ref = e·v_M·N_D/ℓ` and time in `ℓ/v_M`, so drift and covariance are
/// O(1). This is an exact change of variables: the geometric action in
/// physical units (C⁻¹m⁻²) is `S·N_D/e`, see [`Superlattice::action_si`].
#[derive(Clone, Debug)]
pub struct Superlattice {
    params: SlParameters,
    j_ref: f64,
}

impl Superlattice {
    pub fn new(params: SlParameters) -> Result<Self> {
        params.validate()?;
        let j_ref = params.current_scale();
        Ok(Superlattice { params, j_ref })
    }

    pub fn params(&self) -> &SlParameters {
        &self.params
    }

    pub fn with_bias(&self, bias: f64) -> Self {
        Superlattice { params: self.params.with_bias(bias), j_ref: self.j_ref }
    }

    /// Densities in m⁻² for a reduced state.
    pub fn densities(&self, x: &State) -> DVector<f64> {
        x * self.params.doping
    }

    pub fn state_from_densities(&self, n: &DVector<f64>) -> State {
        n / self.params.doping
    }

    /// Currents `J_0..J_N` in A/m².
    pub fn currents(&self, x: &State) -> DVector<f64> {
        currents(&self.densities(x), &self.params)
    }

    /// Fields `F_0..F_N` in V/m.
    pub fn fields(&self, x: &State) -> DVector<f64> {
        fields_from_densities(&self.densities(x), &self.params)
    }

    /// Reduced currents `J/J_ref`.
    fn reduced_currents(&self, x: &State) -> DVector<f64> {
        self.currents(x) / self.j_ref
    }

    /// `∂(J/J_ref)/∂x`.
    fn reduced_current_jacobian(&self, x: &State) -> DMatrix<f64> {
        current_jacobian(&self.densities(x), &self.params) * (self.params.doping / self.j_ref)
    }

    /// Reduced action → C⁻¹m⁻².
    pub fn action_si(&self, s: f64) -> f64 {
        s * self.params.doping / self.params.charge
    }

    /// Reduced action → C⁻¹cm⁻².
    pub fn action_per_cm2(&self, s: f64) -> f64 {
        self.action_si(s) * 1e-4
    }

    /// Whether all densities and fields are non-negative. Equilibria with
    /// field reversal exist mathematically but lie outside the model's range
    /// of validity.
    pub fn is_physical(&self, x: &State) -> bool {
        x.iter().all(|v| *v >= 0.0) && self.fields(x).iter().all(|f| *f >= 0.0)
    }

    /// Number of periods whose field exceeds the valley of the uniform
    /// characteristic, i.e. the extent of the high-field domain.
    pub fn high_field_periods(&self, x: &State) -> usize {
        let (_, valley) = characteristic_extrema(&self.params);
        self.fields(x).iter().filter(|f| **f > 0.5 * valley).count()
    }

    /// Newton starting point for the branch whose high-field domain spans
    /// the last `high` periods.
    ///
    /// All interior periods carry the same current `J*` of the uniform
    /// characteristic, on its rising low-field part before the domain wall and
    /// on the second rising part after it; the emitter field is `J*/g`. `J*`
    /// is chosen by bisection so that the fields add up to the bias.
    pub fn branch_guess(&self, high: usize) -> State {
        let p = &self.params;
        let nw = p.n_wells;
        let high = high.min(nw);
        let (f_peak, f_valley) = characteristic_extrema(p);
        let (j_peak, j_valley) = (uniform_current(f_peak, p), uniform_current(f_valley, p));
        let fields_for = |j: f64| -> Vec<f64> {
            let f_low = invert_monotone(|f| uniform_current(f, p), j, 0.0, f_peak);
            let mut f_high = f_valley;
            while uniform_current(f_high, p) < j {
                f_high *= 1.5;
            }
            let f_high = invert_monotone(|f| uniform_current(f, p), j, f_valley, f_high);
            (0..=nw)
                .map(|i| if i == 0 { j / p.g } else if i + high > nw { f_high } else { f_low })
                .collect()
        };
        let bias_of = |j: f64| p.ell * fields_for(j).iter().sum::<f64>();
        let (mut lo, mut hi) = (j_valley, j_peak);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if bias_of(mid) < p.bias {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let f = fields_for(0.5 * (lo + hi));
        let q = p.charge / p.epsilon;
        DVector::from_fn(nw, |r, _| 1.0 + (f[r + 1] - f[r]) / (q * p.doping))
    }
}

/// Current of the spatially uniform state `n_i = N_D` at field `F`.
fn uniform_current(field: f64, p: &SlParameters) -> f64 {
    let (pre, _) = prefactor(field, p);
    pre * (p.doping - p.c1 * log_occupation(p.doping / p.c1, p.c2 * field))
}

/// Fields of the first maximum and the following minimum of the uniform
/// characteristic.
fn characteristic_extrema(p: &SlParameters) -> (f64, f64) {
    let grid: Vec<f64> = (1..=4000).map(|k| k as f64 * p.f_max / 100.0).collect();
    let j: Vec<f64> = grid.iter().map(|f| uniform_current(*f, p)).collect();
    let peak = (1..j.len() - 1).find(|&k| j[k] >= j[k - 1] && j[k] >= j[k + 1]).unwrap_or(0);
    let valley = (peak + 1..j.len() - 1).find(|&k| j[k] <= j[k - 1] && j[k] <= j[k + 1]).unwrap_or(j.len() - 1);
    (grid[peak], grid[valley])
}

/// Solve `g(x) = y` for increasing `g` on `[a, b]` by bisection.
fn invert_monotone<G: Fn(f64) -> f64>(g: G, y: f64, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if g(mid) < y {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// The two neighbouring stable branches at one bias and the saddle between
/// them.
#[derive(Clone, Debug)]
pub struct BistablePair {
    /// Attractor with the shorter high-field domain (higher current).
    pub upper: Equilibrium,
    pub lower: Equilibrium,
    pub saddle: Equilibrium,
}

impl Superlattice {
    /// The stable, physical equilibrium whose high-field domain covers `high`
    /// periods at the current bias.
    ///
    /// Relaxation from [`Superlattice::branch_guess`] is tried at the bias
    /// itself and then at biases stepping away from it in 10 mV increments;
    /// a hit elsewhere is continued back to the requested bias.
    pub fn branch_attractor(&self, high: usize, settings: &ContinuationSettings) -> Result<Equilibrium> {
        let target = self.params.bias;
        let on_branch = |sys: &Superlattice, e: &Equilibrium| {
            e.stability == Stability::Stable && sys.is_physical(&e.state) && sys.high_field_periods(&e.state) == high
        };
        for k in 0..=20 {
            for sign in [1.0, -1.0] {
                if k == 0 && sign < 0.0 {
                    continue;
                }
                let bias = target + sign * 0.01 * k as f64;
                let sys = self.with_bias(bias);
                let Ok(e) = relax_equilibrium(&sys, &sys.branch_guess(high), 1e-11, 500) else { continue };
                if !on_branch(&sys, &e) {
                    continue;
                }
                let Ok(br) = continue_branch(self, &e, bias, target, settings) else { continue };
                if let Some((p, last)) = br.last() {
                    if p == target && br.fold_parameter.is_none() && on_branch(self, last) {
                        return Ok(last.clone());
                    }
                }
            }
        }
        Err(Error::NoConvergence { iterations: 0, residual: f64::NAN })
    }

    /// Attractors on the branches with `high` and `high + 1` high-field
    /// periods and the saddle between them, found by string relaxation
    /// followed by Newton refinement.
    pub fn bistable_pair(&self, high: usize, settings: &ContinuationSettings) -> Result<BistablePair> {
        let upper = self.branch_attractor(high, settings)?;
        let lower = self.branch_attractor(high + 1, settings)?;
        let string = string_relax(self, &upper.state, &lower.state, 60, 3000)?;
        let saddle = find_saddle(self, &string.curve, settings.newton_tol)?;
        Ok(BistablePair { upper, lower, saddle })
    }
}

impl ParameterFamily for Superlattice {
    type System = Superlattice;
    fn system(&self, bias: f64) -> Result<Superlattice> {
        Ok(self.with_bias(bias))
    }
}

impl SdeSystem for Superlattice {
    fn dim(&self) -> usize {
        self.params.n_wells
    }

    fn drift(&self, x: &State) -> DVector<f64> {
        current_divergence(&self.reduced_currents(x))
    }

    fn diffusion(&self, x: &State) -> Result<DMatrix<f64>> {
        diffusion_from_currents(&self.reduced_currents(x))
    }

    fn covariance(&self, x: &State) -> Result<DMatrix<f64>> {
        covariance_from_currents(&self.reduced_currents(x))
    }

    fn drift_jacobian(&self, x: &State) -> DMatrix<f64> {
        let dj = self.reduced_current_jacobian(x);
        DMatrix::from_fn(self.dim(), self.dim(), |r, c| dj[(r, c)] - dj[(r + 1, c)])
    }

    fn covariance_derivatives(&self, x: &State) -> Result<Vec<DMatrix<f64>>> {
        let dj = self.reduced_current_jacobian(x);
        (0..self.dim()).map(|c| covariance_from_derivative(&dj.column(c).into_owned())).collect()
    }

    fn linearization(&self, x: &State, theta: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.dim();
        let dj = self.reduced_current_jacobian(x);
        let grad = DMatrix::from_fn(n, n, |r, c| dj[(r, c)] - dj[(r + 1, c)]);
        // (∂_c A θ)_r = (dJ_r + dJ_{r+1})θ_r − dJ_{r+1}θ_{r+1} − dJ_r θ_{r−1}
        let c_mat = DMatrix::from_fn(n, n, |r, c| {
            let (a, b) = (dj[(r, c)], dj[(r + 1, c)]);
            let mut v = (a + b) * theta[r];
            if r + 1 < n {
                v -= b * theta[r + 1];
            }
            if r > 0 {
                v -= a * theta[r - 1];
            }
            v
        });
        Ok((grad, c_mat))
    }
}

/// `∂A` for a current perturbation `dJ` (no positivity requirement).
fn covariance_from_derivative(dj: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = dj.len() - 1;
    let mut a = DMatrix::zeros(n, n);
    for r in 0..n {
        a[(r, r)] = dj[r] + dj[r + 1];
        if r + 1 < n {
            a[(r, r + 1)] = -dj[r + 1];
            a[(r + 1, r)] = -dj[r + 1];
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::fd_jacobian;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn small(n_wells: usize) -> SlParameters {
        SlParameters { n_wells, ..SlParameters::default() }
    }

    fn wavy(p: &SlParameters) -> DVector<f64> {
        DVector::from_fn(p.n_wells, |i, _| p.doping * (1.0 + 0.3 * (i as f64 * 0.7).sin()))
    }

    #[test]
    fn velocity_curve() {
        assert_eq!(f_curve(0.0), 0.0);
        assert_relative_eq!(f_curve(1.0), 1.0 + (4e-6f64).exp_m1(), max_relative = 1e-15);
        assert_relative_eq!(f_curve(10.0), 20.0 / 101.0 + (0.04f64).exp_m1(), max_relative = 1e-14);
        for z in [0.3, 1.0, 7.0, 25.0] {
            let h = 1e-6 * z;
            let fd = (f_curve(z + h) - f_curve(z - h)) / (2.0 * h);
            assert_relative_eq!(f_curve_derivative(z), fd, epsilon = 1e-7, max_relative = 1e-6);
        }
    }

    #[test]
    fn occupation_limits_and_branches() {
        assert_eq!(log_occupation(0.0, 3.0), 0.0);
        assert_relative_eq!(log_occupation(1.7, 0.0), 1.7, max_relative = 1e-14);
        assert_relative_eq!(log_occupation(2f64.ln(), 0.5), (1.0 + (-0.5f64).exp()).ln(), max_relative = 1e-14);
        // no overflow far into the degenerate regime
        assert_relative_eq!(log_occupation(1000.0, 2.0), 998.0, max_relative = 1e-12);
        // continuity across the branch switches
        for (m, k) in [(32.0, 2.0), (700.0, 675.0), (700.0, 650.0)] {
            let lo = log_occupation(m - 1e-9, k);
            let hi = log_occupation(m + 1e-9, k);
            assert!((hi - lo).abs() < 1e-8, "{m} {k}: {lo} {hi}");
        }
        for (m, k) in [(0.3, 0.1), (5.0, 2.0), (2.0, 5.0), (40.0, 1.0)] {
            let (dm, dk) = log_occupation_partials(m, k);
            let h = 1e-6;
            assert_relative_eq!(dm, (log_occupation(m + h, k) - log_occupation(m - h, k)) / (2.0 * h), epsilon = 1e-8);
            assert_relative_eq!(dk, (log_occupation(m, k + h) - log_occupation(m, k - h)) / (2.0 * h), epsilon = 1e-8);
        }
    }

    #[test]
    fn uniform_densities_give_uniform_field() {
        let p = SlParameters::default();
        let f = fields_from_densities(&DVector::from_element(p.n_wells, p.doping), &p);
        let expected = p.bias / ((p.n_wells + 1) as f64 * p.ell);
        for fi in f.iter() {
            assert_relative_eq!(*fi, expected, max_relative = 1e-13);
        }
    }

    #[test]
    fn fields_satisfy_poisson_and_bias() {
        let p = SlParameters::default();
        let n = wavy(&p);
        let f = fields_from_densities(&n, &p);
        assert_relative_eq!(p.ell * f.sum(), p.bias, max_relative = 1e-12);
        let q = p.charge / p.epsilon;
        let scale = f.amax();
        for i in 1..=p.n_wells {
            let lhs = f[i] - f[i - 1];
            let rhs = q * (n[i - 1] - p.doping);
            assert!((lhs - rhs).abs() < 1e-12 * scale, "{i}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn empty_next_well_and_zero_field_currents() {
        let p = small(3);
        let n = DVector::from_vec(vec![p.doping, 0.0, 1.2 * p.doping]);
        let f = DVector::from_vec(vec![1e5, 2e5, 3e5, 1e5]);
        let j = tunneling_currents(&n, &f, &p);
        let (pre, _) = prefactor(2e5, &p);
        assert_relative_eq!(j[1], pre * p.doping, max_relative = 1e-14);
        assert_relative_eq!(j[0], p.g * 1e5, max_relative = 1e-15);
        assert_relative_eq!(j[3], p.g * 1e5 * 1.2, max_relative = 1e-14);
        let zero = tunneling_currents(&n, &DVector::zeros(4), &p);
        assert_eq!(zero.amax(), 0.0);
        // c2 → 0: the bracket reduces to n_{i−1} − n_i
        let q = SlParameters { c2: 1e-30, ..p.clone() };
        let n = DVector::from_vec(vec![p.doping, 0.5 * p.doping, p.doping]);
        let j = tunneling_currents(&n, &f, &q);
        let (pre, _) = prefactor(2e5, &q);
        assert_relative_eq!(j[1], pre * 0.5 * p.doping, max_relative = 1e-10);
    }

    #[test]
    fn three_current_noise_matrices() {
        let j = DVector::from_vec(vec![1.0, 4.0, 9.0]);
        let s = diffusion_from_currents(&j).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.0, 0.0, 2.0, -3.0]));
        let a = covariance_from_currents(&j).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[5.0, -4.0, -4.0, 13.0]));
        assert_relative_eq!(a.determinant(), 49.0, max_relative = 1e-14);
        assert_eq!(det_a_closed_form(j.as_slice()), 49.0);
        let bad = DVector::from_vec(vec![1.0, 0.0, 2.0]);
        assert!(matches!(covariance_from_currents(&bad), Err(Error::NonPositiveCurrent { index: 1, .. })));
    }

    #[test]
    fn analytic_current_jacobian_matches_differences() {
        let p = small(8).with_bias(0.12);
        let n = wavy(&p);
        let analytic = current_jacobian(&n, &p);
        let numeric = fd_jacobian(|y| currents(y, &p), &n);
        let scale = numeric.amax();
        assert!((analytic - numeric).amax() < 1e-6 * scale);
    }

    #[test]
    fn linearization_matches_generic_default() {
        let sys = Superlattice::new(small(6).with_bias(0.1)).unwrap();
        let x = sys.state_from_densities(&wavy(sys.params()));
        let theta = DVector::from_fn(6, |i, _| (i as f64 - 2.5) * 0.3);
        let (grad, c) = sys.linearization(&x, &theta).unwrap();
        let fd_grad = fd_jacobian(|y| sys.drift(y), &x);
        let fd_c = {
            let mut derivs = Vec::new();
            let mut y = x.clone();
            for i in 0..6 {
                let h = 1e-6;
                y[i] = x[i] + h;
                let plus = sys.covariance(&y).unwrap();
                y[i] = x[i] - h;
                let minus = sys.covariance(&y).unwrap();
                y[i] = x[i];
                derivs.push((plus - minus) / (2.0 * h));
            }
            crate::system::derivative_action(&derivs, &theta)
        };
        assert!((&grad - fd_grad).amax() < 1e-6 * grad.amax());
        assert!((&c - fd_c).amax() < 1e-6 * c.amax());
        assert_eq!(grad, sys.drift_jacobian(&x));
    }

    #[test]
    fn reduced_drift_is_scaled_physical_drift() {
        let sys = Superlattice::new(small(5).with_bias(0.08)).unwrap();
        let p = sys.params().clone();
        let n = wavy(&p);
        let x = sys.state_from_densities(&n);
        // b̃ = b·e/J_ref
        let physical = sl_drift(&n, &p) * (p.charge / p.current_scale());
        assert!((sys.drift(&x) - physical).amax() < 1e-12);
    }

    #[test]
    fn action_units_do_not_depend_on_area() {
        let a = Superlattice::new(SlParameters::default()).unwrap();
        let b = Superlattice::new(SlParameters { area: 7e-9, ..SlParameters::default() }).unwrap();
        assert_eq!(a.action_per_cm2(0.3), b.action_per_cm2(0.3));
        assert_relative_eq!(a.action_si(1.0), a.params().doping / super::super::params::ELEMENTARY_CHARGE, max_relative = 1e-15);
        assert_relative_eq!(a.params().eta() / b.params().eta(), 7.0, max_relative = 1e-14);
    }

    #[test]
    fn branch_guess_has_requested_domain() {
        let sys = Superlattice::new(SlParameters::default()).unwrap();
        for high in [3, 5, 6, 10] {
            let x = sys.branch_guess(high);
            let f = sys.fields(&x);
            assert_relative_eq!(sys.params().ell * f.sum(), sys.params().bias, max_relative = 1e-9);
            assert_eq!(sys.high_field_periods(&x), high);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn determinant_closed_form(js in prop::collection::vec(0.1f64..10.0, 3..=21)) {
            let j = DVector::from_vec(js);
            let a = covariance_from_currents(&j).unwrap();
            let det = a.clone().lu().determinant();
            let closed = det_a_closed_form(j.as_slice());
            prop_assert!(((det - closed) / closed).abs() < 1e-10, "{} vs {}", det, closed);
        }
    }
}
