//! Classical internuclear paths R(t): straight-line constant-velocity, or
//! curvilinear by quadrature of the radial-velocity relation
//! dR/dt = ±v₀·sqrt(1 − b²/R² − V̄(R)/E) on an averaged potential.
//!
//! Time is measured from closest approach (t = 0 at the turning point) and
//! paths are exactly time-symmetric by construction.

use crate::error::{Error, Result};
use crate::potmodel::{AveragingScheme, DiabaticModel};
use crate::spline::MonotoneCubic;

/// Incoming speed, impact parameter and reduced mass of one collision.
#[derive(Debug, Clone, Copy)]
pub struct CollisionGeometry {
    /// initial relative speed at infinity, a.u.
    pub v0: f64,
    /// impact parameter, bohr
    pub b: f64,
    /// reduced mass, a.u. (electron masses)
    pub mu: f64,
}

impl CollisionGeometry {
    pub fn new(v0: f64, b: f64, mu: f64) -> Result<Self> {
        if !(v0 > 0.0) {
            return Err(Error::model("initial speed must be positive"));
        }
        if !(b >= 0.0) {
            return Err(Error::model("impact parameter must be non-negative"));
        }
        if !(mu > 0.0) {
            return Err(Error::model("reduced mass must be positive"));
        }
        Ok(Self { v0, b, mu })
    }

    /// Centre-of-mass kinetic energy E = μv₀²/2 (hartree).
    pub fn energy(&self) -> f64 {
        0.5 * self.mu * self.v0 * self.v0
    }
}

/// Straight-line trajectory: R(t) = sqrt(b² + v₀²t²) and its radial speed.
pub fn straight_line(geom: &CollisionGeometry, t: f64) -> (f64, f64) {
    let r = (geom.b * geom.b + geom.v0 * geom.v0 * t * t).sqrt();
    if r == 0.0 {
        return (0.0, 0.0);
    }
    (r, geom.v0 * geom.v0 * t / r)
}

/// The scalar potential seen by the trajectory: scheme-averaged diagonal with
/// every channel first referenced to the entrance channel's asymptote.
pub struct EffectivePotential<'a> {
    model: &'a DiabaticModel,
    scheme: AveragingScheme,
    reference: f64,
}

impl<'a> EffectivePotential<'a> {
    pub fn new(model: &'a DiabaticModel, scheme: AveragingScheme, initial_channel: usize) -> Self {
        Self {
            model,
            scheme,
            reference: model.asymptote(initial_channel),
        }
    }

    /// Same averaging with an explicit reference energy (tests, diagnostics).
    pub fn with_reference(model: &'a DiabaticModel, scheme: AveragingScheme, reference: f64) -> Self {
        Self {
            model,
            scheme,
            reference,
        }
    }

    pub fn value(&self, r: f64) -> Result<f64> {
        self.model
            .averaged_potential_referenced(r, self.scheme, self.reference)
    }

    pub fn model(&self) -> &DiabaticModel {
        self.model
    }

    pub fn scheme(&self) -> AveragingScheme {
        self.scheme
    }
}

/// Step control for the curvilinear quadrature.
#[derive(Debug, Clone, Copy)]
pub struct RadialOptions {
    /// Simpson panels over the regularized u = sqrt(R − R_c) variable.
    pub panels: usize,
    /// Points of the inward bracketing scan for the turning-point search.
    pub scan_points: usize,
}

impl Default for RadialOptions {
    fn default() -> Self {
        RadialOptions {
            panels: 4096,
            scan_points: 4000,
        }
    }
}

/// Smallest R ≥ `floor` at which every matrix element has reached its
/// asymptote within `tol`; falls back to the grid edge (where the
/// extrapolation is exactly asymptotic) for models that never converge
/// inside the grid.
pub fn default_start_radius(model: &DiabaticModel, floor: f64, tol: f64) -> f64 {
    let grid = model.grid();
    let n = model.n_channels();
    let mut converged_from = None;
    for &r in grid.iter().rev() {
        let v = match model.potential_matrix(r) {
            Ok(v) => v,
            Err(_) => break,
        };
        let mut ok = true;
        'outer: for i in 0..n {
            for j in i..n {
                let target = if i == j { model.asymptote(i) } else { 0.0 };
                if (v[(i, j)] - target).abs() >= tol {
                    ok = false;
                    break 'outer;
                }
            }
        }
        if !ok {
            break;
        }
        converged_from = Some(r);
    }
    match converged_from {
        Some(r) => r.max(floor),
        None => {
            log::warn!(
                "potential not asymptotic anywhere on the grid; starting trajectories at R = {}",
                model.r_max()
            );
            model.r_max()
        }
    }
}

fn radicand(pot: &EffectivePotential<'_>, geom: &CollisionGeometry, r: f64) -> Result<f64> {
    let e = geom.energy();
    Ok(1.0 - (geom.b / r).powi(2) - pot.value(r)?/ e)
}

/// Largest root R_c of 1 − b²/R² − V̄(R)/E = 0, by an inward bracketing scan
/// from `r_start` followed by bisection to 1e-10 bohr.
///
/// If the radicand stays positive all the way down to the grid floor (a near
/// head-on encounter on an attractive potential) the grid floor is returned
/// with a warning.
pub fn find_turning_point(
    pot: &EffectivePotential<'_>,
    geom: &CollisionGeometry,
    r_start: f64,
    opts: &RadialOptions,
) -> Result<f64> {
    let g_start = radicand(pot, geom, r_start)?;
    if g_start <= 0.0 {
        return Err(Error::Forbidden(format!(
            "entrance channel classically forbidden at R = {r_start} \
             (radicand {g_start:.3e})"
        )));
    }
    let r_floor = pot.model().r_min();
    if r_start <= r_floor {
        return Ok(r_floor);
    }
    let npts = opts.scan_points.max(16);
    let step = (r_start - r_floor) / npts as f64;
    let mut r_hi = r_start;
    for k in 1..=npts {
        let r_lo = (r_start - k as f64 * step).max(r_floor);
        if radicand(pot, geom, r_lo)? <= 0.0 {
            // bisect [r_lo, r_hi]: radicand <= 0 at lo, > 0 at hi
            let (mut lo, mut hi) = (r_lo, r_hi);
            while hi - lo > 1e-10 {
                let mid = 0.5 * (lo + hi);
                if radicand(pot, geom, mid)? <= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
        r_hi = r_lo;
    }
    log::warn!(
        "no classical turning point above the grid floor {r_floor} (b = {}, v0 = {}); \
         using the floor",
        geom.b,
        geom.v0
    );
    Ok(r_floor)
}

/// Which path generator produced a [`TrajectoryPath`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryKind {
    StraightLine,
    Curvilinear(AveragingScheme),
}

impl std::fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrajectoryKind::StraightLine => write!(f, "straight"),
            TrajectoryKind::Curvilinear(s) => write!(f, "curvilinear[{s}]"),
        }
    }
}

/// A sampled classical path R(t), t = 0 at closest approach.
#[derive(Debug, Clone)]
pub struct TrajectoryPath {
    pub kind: TrajectoryKind,
    pub geom: CollisionGeometry,
    /// sample times, −T..T
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
    /// signed dR/dt at the samples
    pub speeds: Vec<f64>,
    /// closest-approach radius (curvilinear only; straight line uses b)
    pub turning_point: Option<f64>,
    r_start: f64,
    t_end: f64,
    half_r: Option<MonotoneCubic>,
    half_v: Option<MonotoneCubic>,
}

impl TrajectoryPath {
    /// Straight-line path out to `r_start` (extended past b when b is large).
    pub fn straight(geom: CollisionGeometry, r_start: f64) -> Self {
        let r_start = effective_start(r_start, geom.b);
        let t_end = (r_start * r_start - geom.b * geom.b).sqrt() / geom.v0;
        let n = 1001;
        let mut times = Vec::with_capacity(n);
        let mut radii = Vec::with_capacity(n);
        let mut speeds = Vec::with_capacity(n);
        for k in 0..n {
            let t = -t_end + 2.0 * t_end * k as f64 / (n - 1) as f64;
            let (r, v) = straight_line(&geom, t);
            times.push(t);
            radii.push(r);
            speeds.push(v);
        }
        Self {
            kind: TrajectoryKind::StraightLine,
            geom,
            times,
            radii,
            speeds,
            turning_point: None,
            r_start,
            t_end,
            half_r: None,
            half_v: None,
        }
    }

    /// Curvilinear path built by quadrature of dt = dR / (v₀·sqrt(g)) with the
    /// turning-point singularity removed by the substitution R = R_c + u².
    pub fn curvilinear(
        pot: &EffectivePotential<'_>,
        geom: CollisionGeometry,
        r_start: f64,
        opts: &RadialOptions,
    ) -> Result<Self> {
        let r_start = effective_start(r_start, geom.b);
        let r_c = find_turning_point(pot, &geom, r_start, opts)?;
        let v0 = geom.v0;

        // d g/dR at the turning point, for the u → 0 limit of the integrand.
        let delta = 1e-6 * r_c.max(1.0);
        let g_prime = {
            let lo = (r_c - delta).max(pot.model().r_min() * 0.5);
            (radicand(pot, &geom, r_c + delta)? - radicand(pot, &geom, lo)?) / (r_c + delta - lo)
        };
        let g_at_rc = radicand(pot, &geom, r_c)?;
        let singular = g_at_rc.abs() < 1e-8; // true turning point vs grid-floor fallback
        // Pin the radicand to exactly zero at the computed R_c: the bisection
        // residual would otherwise misplace the square-root singularity and
        // cost O(sqrt(residual)) in the accumulated time.
        let g_offset = if singular { g_at_rc } else { 0.0 };

        let f = |u: f64| -> Result<f64> {
            if u == 0.0 {
                return Ok(if singular {
                    2.0 / (v0 * g_prime.max(1e-14).sqrt())
                } else {
                    0.0
                });
            }
            let mut g = radicand(pot, &geom, r_c + u * u)? - g_offset;
            if g <= 0.0 {
                g = g_prime.max(1e-14) * u * u;
            }
            Ok(2.0 * u / (v0 * g.sqrt()))
        };

        let u_max = (r_start - r_c).sqrt();
        let panels = opts.panels.max(8);
        let h = u_max / panels as f64;
        let mut t_half = Vec::with_capacity(panels + 1);
        let mut r_half = Vec::with_capacity(panels + 1);
        let mut v_half = Vec::with_capacity(panels + 1);
        t_half.push(0.0);
        r_half.push(r_c);
        v_half.push(if singular {
            0.0
        } else {
            v0 * g_at_rc.max(0.0).sqrt()
        });
        let mut t_acc = 0.0;
        let mut f_left = f(0.0)?;
        for k in 0..panels {
            let u0 = k as f64 * h;
            let u1 = u0 + h;
            let fm = f(u0 + 0.5 * h)?;
            let f_right = f(u1)?;
            t_acc += h / 6.0 * (f_left + 4.0 * fm + f_right);
            f_left = f_right;
            let r = r_c + u1 * u1;
            t_half.push(t_acc);
            r_half.push(r);
            v_half.push(v0 * radicand(pot, &geom, r)?.max(0.0).sqrt());
        }
        let t_end = t_acc;

        // Mirror about closest approach.
        let m = t_half.len();
        let mut times = Vec::with_capacity(2 * m - 1);
        let mut radii = Vec::with_capacity(2 * m - 1);
        let mut speeds = Vec::with_capacity(2 * m - 1);
        for k in (1..m).rev() {
            times.push(-t_half[k]);
            radii.push(r_half[k]);
            speeds.push(-v_half[k]);
        }
        for k in 0..m {
            times.push(t_half[k]);
            radii.push(r_half[k]);
            speeds.push(v_half[k]);
        }

        let half_r = MonotoneCubic::new(t_half.clone(), r_half);
        let half_v = MonotoneCubic::new(t_half, v_half);
        Ok(Self {
            kind: TrajectoryKind::Curvilinear(pot.scheme()),
            geom,
            times,
            radii,
            speeds,
            turning_point: Some(r_c),
            r_start,
            t_end,
            half_r: Some(half_r),
            half_v: Some(half_v),
        })
    }

    /// Half-span of the path: valid times are −T..T.
    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn r_start(&self) -> f64 {
        self.r_start
    }

    /// R(t), using time-reversal symmetry; `t` slightly outside ±T is clamped.
    pub fn radius_at(&self, t: f64) -> f64 {
        let ta = t.abs().min(self.t_end);
        match &self.half_r {
            None => straight_line(&self.geom, ta).0,
            Some(interp) => interp.eval(ta),
        }
    }

    /// Signed dR/dt at `t`.
    pub fn speed_at(&self, t: f64) -> f64 {
        let ta = t.abs().min(self.t_end);
        let v = match &self.half_v {
            None => straight_line(&self.geom, ta).1,
            Some(interp) => interp.eval(ta),
        };
        if t < 0.0 {
            -v.abs()
        } else {
            v.abs()
        }
    }
}

fn effective_start(r_start: f64, b: f64) -> f64 {
    // Collisions with b at or beyond the nominal start radius still need a
    // (trivial) path through the asymptotic region.
    r_start.max(1.05 * b + 1.0)
}
