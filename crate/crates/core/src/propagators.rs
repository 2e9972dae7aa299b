//! Time propagation of the channel-amplitude vector under
//! i·da/dt = V(t)·a, with interchangeable integrators, Gershgorin spectral
//! estimation and constant-shift preconditioning.
//!
//! All one-step exponential methods (Crank-Nicolson, Chebyshev,
//! diagonalization) evaluate V at the step midpoint. Preconditioning
//! propagates the shifted matrix H = V − sI and restores the exact global
//! phase e^{−i·s·dt} after every step, so states stay in the physical frame.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::special::bessel_j_array;

/// Smallest step the adaptive integrators may take before aborting.
pub const DT_MIN: f64 = 1e-8;

/// A propagated state: channel amplitudes at a time stamp.
#[derive(Debug, Clone)]
pub struct AmplitudeState {
    pub t: f64,
    pub a: Array1<Complex64>,
}

impl AmplitudeState {
    /// δ-function start in `channel`.
    pub fn delta(n: usize, channel: usize, t: f64) -> Self {
        let mut a = Array1::zeros(n);
        a[channel] = Complex64::new(1.0, 0.0);
        AmplitudeState { t, a }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.a.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn norm(&self) -> f64 {
        self.a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Spectral enclosure [e_min, e_max] of a symmetric matrix.
#[derive(Debug, Clone, Copy)]
pub struct SpectralBounds {
    pub e_min: f64,
    pub e_max: f64,
}

impl SpectralBounds {
    pub fn center(&self) -> f64 {
        0.5 * (self.e_max + self.e_min)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.e_max - self.e_min)
    }
}

/// How spectral bounds are obtained when a method needs them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralBoundsMode {
    /// Eigendecomposition each time - exact but costly.
    Exact,
    /// Gershgorin circles - cheap, guaranteed to contain the spectrum.
    Gershgorin,
}

/// Right-hand side of the coupled equations: −i·V·a (ħ = 1).
pub fn rhs(v: &Array2<f64>, a: &Array1<Complex64>) -> Result<Array1<Complex64>> {
    if v.nrows() != a.len() || v.ncols() != a.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: v.nrows(),
        });
    }
    let mut out = Array1::zeros(a.len());
    linalg::real_matvec_complex(v, a, &mut out);
    Ok(out.mapv(|c| -Complex64::i() * c))
}

/// Gershgorin circle bounds: e_min = min_i(V_ii − Σ_{j≠i}|V_ij|), e_max likewise.
pub fn gershgorin_bounds(v: &Array2<f64>) -> SpectralBounds {
    let n = v.nrows();
    let mut e_min = f64::INFINITY;
    let mut e_max = f64::NEG_INFINITY;
    for i in 0..n {
        let mut radius = 0.0;
        for j in 0..n {
            if j != i {
                radius += v[(i, j)].abs();
            }
        }
        e_min = e_min.min(v[(i, i)] - radius);
        e_max = e_max.max(v[(i, i)] + radius);
    }
    SpectralBounds { e_min, e_max }
}

/// Exact bounds from the eigenvalue extremes.
pub fn exact_bounds(v: &Array2<f64>) -> Result<SpectralBounds> {
    let eig = linalg::sym_eigen(v)?;
    Ok(SpectralBounds {
        e_min: eig.vals[0],
        e_max: eig.vals[eig.vals.len() - 1],
    })
}

pub fn bounds_for(v: &Array2<f64>, mode: SpectralBoundsMode) -> Result<SpectralBounds> {
    match mode {
        SpectralBoundsMode::Exact => exact_bounds(v),
        SpectralBoundsMode::Gershgorin => Ok(gershgorin_bounds(v)),
    }
}

/// Shift the spectrum toward zero: returns V − sI and the scalar shift
/// s = (e_max + e_min)/2. The caller either restores the global phase
/// e^{−i·s·Δt} or discards it (probabilities are shift-invariant).
pub fn precondition(v: &Array2<f64>, bounds: &SpectralBounds) -> (Array2<f64>, f64) {
    let s = bounds.center();
    let mut out = v.clone();
    for i in 0..v.nrows() {
        out[(i, i)] -= s;
    }
    (out, s)
}

// ---------------------------------------------------------------------------
// One-step integrators
// ---------------------------------------------------------------------------

/// Crank-Nicolson step: a' = (I + iV·dt/2)⁻¹ (I − iV·dt/2) a.
pub fn step_crank_nicolson(
    v_mid: &Array2<f64>,
    a: &Array1<Complex64>,
    dt: f64,
) -> Result<Array1<Complex64>> {
    let n = a.len();
    let half = Complex64::new(0.0, 0.5 * dt);
    let mut lhs = Array2::<Complex64>::zeros((n, n));
    let mut va = Array1::<Complex64>::zeros(n);
    linalg::real_matvec_complex(v_mid, a, &mut va);
    let rhs_vec = Array1::from_iter((0..n).map(|i| a[i] - half * va[i]));
    for i in 0..n {
        for j in 0..n {
            lhs[(i, j)] = half * v_mid[(i, j)];
        }
        lhs[(i, i)] += 1.0;
    }
    linalg::solve_complex(lhs, rhs_vec)
}

/// Chebyshev expansion of e^{−iV·dt}·a with Bessel coefficients, spectrum
/// scaled into [−1, 1] by the supplied bounds. Series truncated where
/// |J_k| < 1e−15, hard cap N = ⌈1.1·ΔH·dt⌉ + 20.
pub fn step_chebyshev(
    v: &Array2<f64>,
    a: &Array1<Complex64>,
    dt: f64,
    bounds: &SpectralBounds,
) -> Result<Array1<Complex64>> {
    let n = a.len();
    if bounds.e_min > bounds.e_max {
        return Err(Error::propagation("invalid spectral bounds"));
    }
    let center = bounds.center();
    let dh = bounds.half_width();
    let phase = (-Complex64::i() * center * dt).exp();
    if dh * dt == 0.0 {
        return Ok(a.mapv(|c| c * phase));
    }

    let z = dh * dt;
    let n_cap = (1.1 * z).ceil() as usize + 20;
    let j = bessel_j_array(z, n_cap);
    let mut k_last = n_cap;
    while k_last > 1 && j[k_last].abs() < 1e-15 {
        k_last -= 1;
    }

    // scaled matvec: w = (V − c̄I)/ΔH · u
    let scaled_mul = |u: &Array1<Complex64>, w: &mut Array1<Complex64>| {
        linalg::real_matvec_complex(v, u, w);
        for i in 0..n {
            w[i] = (w[i] - center * u[i]) / dh;
        }
    };

    let i_pow = [
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, -1.0),
        Complex64::new(-1.0, 0.0),
        Complex64::new(0.0, 1.0),
    ];

    let mut phi_prev = a.clone();
    let mut phi = Array1::<Complex64>::zeros(n);
    scaled_mul(a, &mut phi);
    let mut acc = phi_prev.mapv(|c| c * j[0]);
    for i in 0..n {
        acc[i] += 2.0 * i_pow[1] * j[1] * phi[i];
    }
    let mut work = Array1::<Complex64>::zeros(n);
    for k in 2..=k_last {
        scaled_mul(&phi, &mut work);
        for i in 0..n {
            let next = 2.0 * work[i] - phi_prev[i];
            phi_prev[i] = phi[i];
            phi[i] = next;
            acc[i] += 2.0 * i_pow[k % 4] * j[k] * phi[i];
        }
    }
    let out = acc.mapv(|c| c * phase);

    let norm_in = a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let norm_out = out.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if (norm_out - norm_in).abs() > 1e-8 * norm_in.max(1.0) {
        return Err(Error::propagation(format!(
            "chebyshev series diverged (norm drift {:.3e}); spectral bounds likely violated",
            norm_out - norm_in
        )));
    }
    Ok(out)
}

/// Classical fourth-order Runge-Kutta step for the time-dependent system.
pub fn step_rk4(
    sampler: &dyn HamiltonianSampler,
    a: &Array1<Complex64>,
    t: f64,
    dt: f64,
) -> Result<Array1<Complex64>> {
    let n = a.len();
    let mut v = Array2::zeros((n, n));
    sampler.sample_into(t, &mut v)?;
    let k1 = rhs(&v, a)?;
    sampler.sample_into(t + 0.5 * dt, &mut v)?;
    let k2 = rhs(&v, &combo(a, &[(0.5 * dt, &k1)]))?;
    let k3 = rhs(&v, &combo(a, &[(0.5 * dt, &k2)]))?;
    sampler.sample_into(t + dt, &mut v)?;
    let k4 = rhs(&v, &combo(a, &[(dt, &k3)]))?;
    let mut out = a.clone();
    for i in 0..n {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// One accepted Fehlberg 4(5) step.
pub struct Rkf45Step {
    pub a: Array1<Complex64>,
    pub dt_used: f64,
    pub dt_next: f64,
    pub rejections: u32,
}

/// Embedded Fehlberg 4(5) pair: retries with a shrunken step until the local
/// error estimate satisfies err ≤ tol·max(1, ‖a‖), then suggests
/// dt_next = 0.9·dt·(tol/err)^{1/5} clamped to [dt/4, 4dt]. Advances with the
/// fifth-order solution.
pub fn step_rkf45(
    sampler: &dyn HamiltonianSampler,
    a: &Array1<Complex64>,
    t: f64,
    dt_suggest: f64,
    tol: f64,
) -> Result<Rkf45Step> {
    const C: [f64; 6] = [0.0, 0.25, 3.0 / 8.0, 12.0 / 13.0, 1.0, 0.5];
    const A: [[f64; 5]; 6] = [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [0.25, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
        [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
        [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
        [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
    ];
    const B5: [f64; 6] = [
        16.0 / 135.0,
        0.0,
        6656.0 / 12825.0,
        28561.0 / 56430.0,
        -9.0 / 50.0,
        2.0 / 55.0,
    ];
    const B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -0.2, 0.0];

    if tol <= 0.0 {
        return Err(Error::propagation("adaptive tolerance must be positive"));
    }
    let n = a.len();
    let mut v = Array2::zeros((n, n));
    let mut dt = dt_suggest;
    let mut rejections = 0u32;
    loop {
        if dt < DT_MIN {
            return Err(Error::propagation(format!(
                "fehlberg step underflow at t = {t} (dt = {dt:.3e})"
            )));
        }
        let mut k: Vec<Array1<Complex64>> = Vec::with_capacity(6);
        for stage in 0..6 {
            let mut arg = a.clone();
            for (j, kj) in k.iter().enumerate() {
                let w = A[stage][j] * dt;
                if w != 0.0 {
                    for i in 0..n {
                        arg[i] += w * kj[i];
                    }
                }
            }
            sampler.sample_into(t + C[stage] * dt, &mut v)?;
            k.push(rhs(&v, &arg)?);
        }
        let mut a5 = a.clone();
        let mut err_vec = Array1::<Complex64>::zeros(n);
        for (j, kj) in k.iter().enumerate() {
            for i in 0..n {
                a5[i] += dt * B5[j] * kj[i];
                err_vec[i] += dt * (B5[j] - B4[j]) * kj[i];
            }
        }
        let err = err_vec.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let norm = a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let limit = tol * norm.max(1.0);
        let dt_new = if err == 0.0 {
            4.0 * dt
        } else {
            (0.9 * dt * (limit / err).powf(0.2)).clamp(0.25 * dt, 4.0 * dt)
        };
        if err <= limit {
            return Ok(Rkf45Step {
                a: a5,
                dt_used: dt,
                dt_next: dt_new,
                rejections,
            });
        }
        rejections += 1;
        dt = dt_new;
    }
}

/// Exact exponential step via real-symmetric eigendecomposition:
/// a' = U·e^{−iD·dt}·Uᵀ·a.
pub fn step_diagonalization(
    v_mid: &Array2<f64>,
    a: &Array1<Complex64>,
    dt: f64,
) -> Result<Array1<Complex64>> {
    let n = a.len();
    let eig = linalg::sym_eigen(v_mid)?;
    let mut c = Array1::<Complex64>::zeros(n);
    for k in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            acc += eig.vecs[(i, k)] * a[i];
        }
        c[k] = acc * (-Complex64::i() * eig.vals[k] * dt).exp();
    }
    let mut out = Array1::<Complex64>::zeros(n);
    for i in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..n {
            acc += eig.vecs[(i, k)] * c[k];
        }
        out[i] = acc;
    }
    Ok(out)
}

fn combo(a: &Array1<Complex64>, terms: &[(f64, &Array1<Complex64>)]) -> Array1<Complex64> {
    let mut out = a.clone();
    for (w, v) in terms {
        for i in 0..out.len() {
            out[i] += *w * v[i];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Sampler abstraction
// ---------------------------------------------------------------------------

/// Source of the (real symmetric) channel Hamiltonian at arbitrary times.
pub trait HamiltonianSampler: Sync {
    fn dim(&self) -> usize;
    fn sample_into(&self, t: f64, out: &mut Array2<f64>) -> Result<()>;

    fn sample(&self, t: f64) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((self.dim(), self.dim()));
        self.sample_into(t, &mut out)?;
        Ok(out)
    }
}

/// A constant matrix as a sampler.
pub struct ConstantSampler(pub Array2<f64>);

impl HamiltonianSampler for ConstantSampler {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn sample_into(&self, _t: f64, out: &mut Array2<f64>) -> Result<()> {
        out.assign(&self.0);
        Ok(())
    }
}

/// Closure-backed sampler for tests and the device-frame mapping.
pub struct FnSampler<F> {
    pub n: usize,
    pub f: F,
}

impl<F> HamiltonianSampler for FnSampler<F>
where
    F: Fn(f64, &mut Array2<f64>) -> Result<()> + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }

    fn sample_into(&self, t: f64, out: &mut Array2<f64>) -> Result<()> {
        (self.f)(t, out)
    }
}

struct ShiftedSampler<'a> {
    inner: &'a dyn HamiltonianSampler,
    shift: f64,
}

impl HamiltonianSampler for ShiftedSampler<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn sample_into(&self, t: f64, out: &mut Array2<f64>) -> Result<()> {
        self.inner.sample_into(t, out)?;
        for i in 0..out.nrows() {
            out[(i, i)] -= self.shift;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

/// Which integrator advances the amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    CrankNicolson,
    Chebyshev,
    Rk4,
    FehlbergRk,
    Diagonalization,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::CrankNicolson => "crank_nicolson",
            Method::Chebyshev => "chebyshev",
            Method::Rk4 => "rk4",
            Method::FehlbergRk => "fehlberg",
            Method::Diagonalization => "diagonalization",
        };
        write!(f, "{s}")
    }
}

/// Full integrator configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorConfig {
    pub method: Method,
    /// Fixed step for the fixed-step methods, initial step otherwise (a.u.).
    pub dt: f64,
    /// Local error bound: required for FehlbergRk, optional for
    /// Diagonalization (enables the double-step adaptive variant).
    pub local_error_bound: Option<f64>,
    pub precondition: bool,
    pub bounds_mode: SpectralBoundsMode,
}

impl PropagatorConfig {
    pub fn fixed(method: Method, dt: f64) -> Self {
        PropagatorConfig {
            method,
            dt,
            local_error_bound: None,
            precondition: false,
            bounds_mode: SpectralBoundsMode::Gershgorin,
        }
    }

    pub fn adaptive(method: Method, tol: f64, dt0: f64) -> Self {
        PropagatorConfig {
            method,
            dt: dt0,
            local_error_bound: Some(tol),
            precondition: false,
            bounds_mode: SpectralBoundsMode::Gershgorin,
        }
    }

    pub fn with_precondition(mut self, on: bool) -> Self {
        self.precondition = on;
        self
    }

    pub fn with_bounds_mode(mut self, mode: SpectralBoundsMode) -> Self {
        self.bounds_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::model("propagator step must be positive"));
        }
        match (self.method, self.local_error_bound) {
            (Method::FehlbergRk, None) => {
                Err(Error::model("fehlberg integration needs a local error bound"))
            }
            (Method::FehlbergRk | Method::Diagonalization, Some(tol)) if tol <= 0.0 => {
                Err(Error::model("local error bound must be positive"))
            }
            (Method::CrankNicolson | Method::Chebyshev | Method::Rk4, Some(_)) => Err(
                Error::model("local error bounds only apply to fehlberg/diagonalization"),
            ),
            _ => Ok(()),
        }
    }

    /// Short human-readable tag used in benchmark rows and CSV headers.
    pub fn label(&self) -> String {
        let mut s = self.method.to_string();
        match self.local_error_bound {
            Some(tol) => s.push_str(&format!(" adaptive(tol={tol:.0e})")),
            None => s.push_str(&format!(" dt={}", self.dt)),
        }
        if self.precondition {
            s.push_str(match self.bounds_mode {
                SpectralBoundsMode::Exact => " precond(exact)",
                SpectralBoundsMode::Gershgorin => " precond(gershgorin)",
            });
        }
        s
    }
}

/// Driver knobs that are not physics: history budget and forced samples.
#[derive(Debug, Clone)]
pub struct PropagateOptions {
    /// History is thinned on the fly to at most ~2x this many samples.
    pub history_cap: usize,
    /// Times the stepper must land on exactly (and record), e.g. closest
    /// approach. Entries outside (t0, t1) are ignored.
    pub record_at: Vec<f64>,
    /// Abort when |‖a‖ − 1| exceeds this.
    pub norm_guard: f64,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        PropagateOptions {
            history_cap: 5000,
            record_at: Vec::new(),
            // loose adaptive tolerances legitimately drift the norm by
            // ~1e-3 over long spans; the guard is for divergence only
            norm_guard: 0.02,
        }
    }
}

/// Result of a propagation run.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub state: AmplitudeState,
    /// (t, per-channel probability) samples, thinned to the history budget.
    pub history: Vec<(f64, Vec<f64>)>,
    pub steps: u64,
    pub rejections: u64,
    /// Total phase removed by preconditioning shifts (already restored).
    pub shift_phase: f64,
}

struct HistoryRecorder {
    cap: usize,
    stride: u64,
    count: u64,
    data: Vec<(f64, Vec<f64>)>,
}

impl HistoryRecorder {
    fn new(cap: usize) -> Self {
        HistoryRecorder {
            cap: cap.max(16),
            stride: 1,
            count: 0,
            data: Vec::new(),
        }
    }

    fn record(&mut self, t: f64, a: &Array1<Complex64>, forced: bool) {
        if forced || self.count % self.stride == 0 {
            self.data.push((t, a.iter().map(|c| c.norm_sqr()).collect()));
            if self.data.len() >= 2 * self.cap {
                let mut k = 0;
                self.data.retain(|_| {
                    k += 1;
                    k % 2 == 1
                });
                self.stride *= 2;
            }
        }
        self.count += 1;
    }
}

/// Advance `a0` from `t0` to `t1` under the sampled Hamiltonian.
pub fn propagate(
    sampler: &dyn HamiltonianSampler,
    a0: &Array1<Complex64>,
    t0: f64,
    t1: f64,
    cfg: &PropagatorConfig,
    opts: &PropagateOptions,
) -> Result<Propagation> {
    cfg.validate()?;
    let n = sampler.dim();
    if a0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: a0.len(),
        });
    }
    if !(t1 > t0) {
        return Err(Error::model("propagation span must be forward in time"));
    }

    let span = t1 - t0;
    let t_eps = 1e-12 * span.max(1.0);
    let mut forced: Vec<f64> = opts
        .record_at
        .iter()
        .cloned()
        .filter(|&t| t > t0 + t_eps && t < t1 - t_eps)
        .collect();
    forced.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut forced_idx = 0;

    let mut hist = HistoryRecorder::new(opts.history_cap);
    let mut a = a0.clone();
    let mut t = t0;
    hist.record(t, &a, true);

    let mut steps = 0u64;
    let mut rejections = 0u64;
    let mut shift_phase = 0.0f64;
    let mut dt_adaptive = cfg.dt;
    let mut v = Array2::<f64>::zeros((n, n));
    let mut shift_state: Option<SpectralBounds> = None;
    let mut shift = 0.0f64;

    while t < t1 - t_eps {
        let next_wall = if forced_idx < forced.len() {
            forced[forced_idx]
        } else {
            t1
        };
        let room = next_wall - t;

        // Refresh the preconditioning shift when the bounds drift > 10%.
        if cfg.precondition {
            sampler.sample_into(t, &mut v)?;
            let b = bounds_for(&v, cfg.bounds_mode)?;
            let update = match shift_state {
                None => true,
                Some(old) => {
                    let scale = (old.e_max - old.e_min).abs().max(1e-12);
                    (b.e_min - old.e_min).abs().max((b.e_max - old.e_max).abs()) > 0.1 * scale
                }
            };
            if update {
                shift_state = Some(b);
                shift = b.center();
            }
        }
        let shifted;
        let eff: &dyn HamiltonianSampler = if cfg.precondition {
            shifted = ShiftedSampler {
                inner: sampler,
                shift,
            };
            &shifted
        } else {
            sampler
        };

        let dt_used = match cfg.method {
            Method::CrankNicolson | Method::Chebyshev | Method::Rk4 => {
                let dt = cfg.dt.min(room);
                match cfg.method {
                    Method::CrankNicolson => {
                        eff.sample_into(t + 0.5 * dt, &mut v)?;
                        a = step_crank_nicolson(&v, &a, dt)?;
                    }
                    Method::Chebyshev => {
                        eff.sample_into(t + 0.5 * dt, &mut v)?;
                        let b = bounds_for(&v, cfg.bounds_mode)?;
                        a = step_chebyshev(&v, &a, dt, &b)?;
                    }
                    Method::Rk4 => {
                        a = step_rk4(eff, &a, t, dt)?;
                    }
                    _ => unreachable!(),
                }
                dt
            }
            Method::FehlbergRk => {
                let tol = cfg.local_error_bound.unwrap();
                let step = step_rkf45(eff, &a, t, dt_adaptive.min(room), tol)?;
                a = step.a;
                rejections += u64::from(step.rejections);
                dt_adaptive = step.dt_next.max(DT_MIN);
                step.dt_used
            }
            Method::Diagonalization => match cfg.local_error_bound {
                None => {
                    let dt = cfg.dt.min(room);
                    eff.sample_into(t + 0.5 * dt, &mut v)?;
                    a = step_diagonalization(&v, &a, dt)?;
                    dt
                }
                Some(bound) => {
                    // Double-step adaptive: accept when one dt step and two
                    // dt/2 steps agree to the bound, keeping the finer result.
                    let mut dt = dt_adaptive.min(room);
                    loop {
                        if dt < DT_MIN {
                            return Err(Error::propagation(format!(
                                "diagonalization step underflow at t = {t}"
                            )));
                        }
                        eff.sample_into(t + 0.5 * dt, &mut v)?;
                        let full = step_diagonalization(&v, &a, dt)?;
                        eff.sample_into(t + 0.25 * dt, &mut v)?;
                        let half = step_diagonalization(&v, &a, 0.5 * dt)?;
                        eff.sample_into(t + 0.75 * dt, &mut v)?;
                        let half = step_diagonalization(&v, &half, 0.5 * dt)?;
                        let err = full
                            .iter()
                            .zip(half.iter())
                            .map(|(x, y)| (x - y).norm())
                            .fold(0.0f64, f64::max);
                        if err <= bound {
                            a = half;
                            dt_adaptive = if err < bound / 32.0 { 2.0 * dt } else { dt };
                            break dt;
                        }
                        rejections += 1;
                        dt *= 0.5;
                    }
                }
            },
        };

        if cfg.precondition && shift != 0.0 {
            let restore = (-Complex64::i() * shift * dt_used).exp();
            a.mapv_inplace(|c| c * restore);
            shift_phase += shift * dt_used;
        }

        t += dt_used;
        steps += 1;
        if forced_idx < forced.len() && (t - forced[forced_idx]).abs() <= t_eps {
            t = forced[forced_idx];
            forced_idx += 1;
            hist.record(t, &a, true);
        } else {
            hist.record(t, &a, false);
        }

        let norm = a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > opts.norm_guard {
            return Err(Error::propagation(format!(
                "norm drifted to {norm:.6} at t = {t:.3} ({})",
                cfg.label()
            )));
        }
    }

    // Make sure the end point appears in the history exactly once.
    if hist.data.last().map(|(tt, _)| (tt - t1).abs() > t_eps) != Some(false) {
        hist.record(t1, &a, true);
    }

    Ok(Propagation {
        state: AmplitudeState { t: t1, a },
        history: hist.data,
        steps,
        rejections,
        shift_phase,
    })
}
