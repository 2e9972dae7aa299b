//! Full collisions: initial conditions, propagation along a classical path,
//! transition probabilities, impact-parameter scans, cross-section
//! quadrature, Ehrenfest kinetic-energy relabeling and detailed-balance
//! diagnostics.

use ndarray::Array2;
use rayon::prelude::*;

use crate::constants::HARTREE_EV;
use crate::error::{Error, Result};
use crate::potmodel::DiabaticModel;
use crate::propagators::{
    propagate, HamiltonianSampler, PropagateOptions, Propagation, PropagatorConfig,
};
use crate::report;
use crate::trajectory::{
    default_start_radius, CollisionGeometry, EffectivePotential, RadialOptions, TrajectoryKind,
    TrajectoryPath,
};

/// The channel Hamiltonian along a path: V(R(t)) with every diagonal element
/// referenced to the entrance channel's asymptote.
pub struct CollisionHamiltonian<'a> {
    model: &'a DiabaticModel,
    path: &'a TrajectoryPath,
    reference: f64,
}

impl<'a> CollisionHamiltonian<'a> {
    pub fn new(model: &'a DiabaticModel, path: &'a TrajectoryPath, initial_channel: usize) -> Self {
        Self {
            model,
            path,
            reference: model.asymptote(initial_channel),
        }
    }
}

impl HamiltonianSampler for CollisionHamiltonian<'_> {
    fn dim(&self) -> usize {
        self.model.n_channels()
    }

    fn sample_into(&self, t: f64, out: &mut Array2<f64>) -> Result<()> {
        // Head-on paths touch R = 0 at closest approach; the model clamps
        // below its grid floor, we only keep the argument positive.
        let r = self.path.radius_at(t).max(1e-12);
        self.model.potential_matrix_into(r, out)?;
        for i in 0..self.model.n_channels() {
            out[(i, i)] -= self.reference;
        }
        Ok(())
    }
}

/// Knobs for a single collision run.
#[derive(Debug, Clone)]
pub struct CollisionOptions {
    /// Start radius override; `None` derives it from the model (smallest
    /// R ≥ 30 bohr where the potential has reached its asymptotes to 1e-8).
    pub start_radius: Option<f64>,
    pub start_floor: f64,
    pub asym_tol: f64,
    pub radial: RadialOptions,
    pub history_cap: usize,
    /// Final probabilities count as stable when |dP/dt| stays below this
    /// over the trailing 10% of history samples.
    pub stability_dpdt: f64,
    /// Doublings of the start radius attempted when the criterion fails.
    pub max_extensions: u32,
    /// Fallback convergence: a start-radius doubling that moves every final
    /// probability by less than this also counts as stable (the tail-slope
    /// gate sits below the amplitude noise floor of loose adaptive RK runs).
    pub stability_dp_on_double: f64,
    /// Energy the curvilinear V̄ diagonals are referenced to; `None` uses the
    /// entrance channel's asymptote. The detailed-balance diagnostic sets a
    /// channel-symmetric reference here.
    pub trajectory_reference: Option<f64>,
}

impl Default for CollisionOptions {
    fn default() -> Self {
        CollisionOptions {
            start_radius: None,
            start_floor: 30.0,
            asym_tol: 1e-8,
            radial: RadialOptions::default(),
            history_cap: 5000,
            stability_dpdt: 1e-10,
            max_extensions: 3,
            stability_dp_on_double: 1e-5,
            trajectory_reference: None,
        }
    }
}

/// Outcome of one collision.
#[derive(Debug, Clone)]
pub struct CollisionResult {
    pub geom: CollisionGeometry,
    pub initial_channel: usize,
    pub final_probs: Vec<f64>,
    /// (t, P_1..P_n) samples.
    pub history: Vec<(f64, Vec<f64>)>,
    pub propagator: PropagatorConfig,
    pub kind: TrajectoryKind,
    /// Start radius actually used (after any stability extensions).
    pub start_radius: f64,
    pub converged: bool,
    pub steps: u64,
}

impl CollisionResult {
    pub fn n_channels(&self) -> usize {
        self.final_probs.len()
    }

    /// Probability row at the history sample closest to `t`.
    pub fn probs_near(&self, t: f64) -> &[f64] {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (k, (tt, _)) in self.history.iter().enumerate() {
            let d = (tt - t).abs();
            if d < dist {
                dist = d;
                best = k;
            }
        }
        &self.history[best].1
    }

    /// Mean of P_channel over history samples with t ∈ [t_lo, t_hi]. Useful
    /// for reading a probability plateau through its residual phase
    /// oscillation.
    pub fn mean_prob_in_window(&self, channel: usize, t_lo: f64, t_hi: f64) -> f64 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for (t, p) in &self.history {
            if (t_lo..=t_hi).contains(t) {
                acc += p[channel];
                count += 1;
            }
        }
        if count == 0 {
            f64::NAN
        } else {
            acc / count as f64
        }
    }
}

/// Build the classical path for a collision.
pub fn build_path(
    model: &DiabaticModel,
    geom: CollisionGeometry,
    initial_channel: usize,
    kind: TrajectoryKind,
    r_start: f64,
    radial: &RadialOptions,
) -> Result<TrajectoryPath> {
    build_path_referenced(model, geom, initial_channel, kind, r_start, radial, None)
}

/// [`build_path`] with an explicit V̄ reference energy override.
pub fn build_path_referenced(
    model: &DiabaticModel,
    geom: CollisionGeometry,
    initial_channel: usize,
    kind: TrajectoryKind,
    r_start: f64,
    radial: &RadialOptions,
    reference: Option<f64>,
) -> Result<TrajectoryPath> {
    match kind {
        TrajectoryKind::StraightLine => Ok(TrajectoryPath::straight(geom, r_start)),
        TrajectoryKind::Curvilinear(scheme) => {
            let pot = match reference {
                None => EffectivePotential::new(model, scheme, initial_channel),
                Some(e_ref) => EffectivePotential::with_reference(model, scheme, e_ref),
            };
            TrajectoryPath::curvilinear(&pot, geom, r_start, radial)
        }
    }
}

/// Resolve the start radius for a model under the given options.
pub fn resolve_start_radius(model: &DiabaticModel, opts: &CollisionOptions) -> f64 {
    opts.start_radius
        .unwrap_or_else(|| default_start_radius(model, opts.start_floor, opts.asym_tol))
}

fn stable_tail(history: &[(f64, Vec<f64>)], dpdt_tol: f64) -> bool {
    if history.len() < 4 {
        return false;
    }
    let (t_end, p_end) = history.last().unwrap();
    let t_begin = history.first().unwrap().0;
    let tail_start = t_end - 0.1 * (t_end - t_begin);
    // Secant slope from each trailing sample to the end point: robust
    // against per-step integrator flutter while still catching secular
    // probability drift.
    for (t, p) in history.iter().filter(|(t, _)| *t >= tail_start) {
        let dt = t_end - t;
        if dt <= 1e-9 * t_end.abs().max(1.0) {
            continue;
        }
        for (p1, p0) in p_end.iter().zip(p) {
            if ((p1 - p0) / dt).abs() >= dpdt_tol {
                return false;
            }
        }
    }
    true
}

/// Run one collision: a(−T) = δ in the initial channel, propagate V(R(t)) to
/// +T, extending the start radius until the final probabilities are stable.
pub fn run_collision(
    model: &DiabaticModel,
    geom: CollisionGeometry,
    initial_channel: usize,
    kind: TrajectoryKind,
    prop: &PropagatorConfig,
    opts: &CollisionOptions,
) -> Result<CollisionResult> {
    let n = model.n_channels();
    if initial_channel >= n {
        return Err(Error::model(format!(
            "initial channel {} out of range (n = {n})",
            initial_channel + 1
        )));
    }
    let mut r_start = resolve_start_radius(model, opts);

    let mut attempt = 0u32;
    let mut previous_finals: Option<Vec<f64>> = None;
    loop {
        let path = build_path_referenced(
            model,
            geom,
            initial_channel,
            kind,
            r_start,
            &opts.radial,
            opts.trajectory_reference,
        )?;
        let sampler = CollisionHamiltonian::new(model, &path, initial_channel);
        let t_end = path.t_end();
        let a0 = crate::propagators::AmplitudeState::delta(n, initial_channel, -t_end).a;
        let popts = PropagateOptions {
            history_cap: opts.history_cap,
            record_at: vec![0.0],
            ..Default::default()
        };
        let run: Propagation = propagate(&sampler, &a0, -t_end, t_end, prop, &popts)?;

        let mut converged = stable_tail(&run.history, opts.stability_dpdt);
        if !converged {
            // The doubling itself is the other stability witness: finals
            // that no longer move under a 2x longer approach are converged
            // even when integrator flutter keeps the tail slope above the
            // gate.
            if let Some(prev) = &previous_finals {
                let moved = run
                    .state
                    .probabilities()
                    .iter()
                    .zip(prev)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                converged = moved < opts.stability_dp_on_double;
            }
        }
        if !converged && attempt < opts.max_extensions {
            attempt += 1;
            r_start *= 2.0;
            previous_finals = Some(run.state.probabilities());
            continue;
        }
        if !converged {
            log::warn!(
                "final probabilities not stable after {} start-radius extensions (b = {}, v0 = {})",
                attempt,
                geom.b,
                geom.v0
            );
        }

        let final_probs = run.state.probabilities();
        let total: f64 = final_probs.iter().sum();
        if (total - 1.0).abs() > 0.02 {
            return Err(Error::propagation(format!(
                "probability sum {total:.6} violates unitarity ({})",
                prop.label()
            )));
        }
        return Ok(CollisionResult {
            geom,
            initial_channel,
            final_probs,
            history: run.history,
            propagator: *prop,
            kind,
            start_radius: r_start,
            converged,
            steps: run.steps,
        });
    }
}

// ---------------------------------------------------------------------------
// Impact-parameter scans and cross sections
// ---------------------------------------------------------------------------

/// Opacity table: transition probabilities over an impact-parameter grid at
/// fixed initial speed.
#[derive(Debug, Clone)]
pub struct OpacityTable {
    pub v0: f64,
    pub mu: f64,
    pub initial_channel: usize,
    /// (b, P_1..P_n) with b strictly increasing.
    pub rows: Vec<(f64, Vec<f64>)>,
    pub b_max: f64,
    /// True when the scan hit the hard cap before the inelastic probability
    /// dropped below ε_b.
    pub truncated: bool,
}

impl OpacityTable {
    pub fn inelastic_total(&self, row: usize) -> f64 {
        let (_, p) = &self.rows[row];
        p.iter()
            .enumerate()
            .filter(|(f, _)| *f != self.initial_channel)
            .map(|(_, v)| v)
            .sum()
    }
}

/// Scan policy: base grid spacing, convergence threshold and refinement.
#[derive(Debug, Clone)]
pub struct ScanOptions {
    /// Base grid spacing Δb (bohr).
    pub db: f64,
    /// Scan ends once total inelastic probability < ε_b at two consecutive b.
    pub eps_b: f64,
    /// Hard cap on b (bohr): warn and truncate beyond it.
    pub b_cap: f64,
    /// One level of midpoint refinement where any |ΔP| between neighbours
    /// exceeds this.
    pub refine_jump: f64,
    /// Collisions dispatched to the worker pool per wave.
    pub chunk: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            db: 0.1,
            eps_b: 1e-4,
            b_cap: 50.0,
            refine_jump: 0.05,
            chunk: 16,
        }
    }
}

/// Opacity function P_if(b) from b = Δb up to b_max (Δb grid, one refinement
/// level), run in parallel waves and merged in b order.
#[allow(clippy::too_many_arguments)]
pub fn impact_scan(
    model: &DiabaticModel,
    v0: f64,
    mu: f64,
    initial_channel: usize,
    kind: TrajectoryKind,
    prop: &PropagatorConfig,
    copts: &CollisionOptions,
    sopts: &ScanOptions,
) -> Result<OpacityTable> {
    if !(v0 > 0.0) {
        return Err(Error::model("scan speed must be positive"));
    }
    let run_one = |b: f64| -> Result<(f64, Vec<f64>)> {
        let geom = CollisionGeometry::new(v0, b, mu)?;
        let res = run_collision(model, geom, initial_channel, kind, prop, copts)?;
        Ok((b, res.final_probs))
    };

    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut k_next = 1usize;
    let (b_max, truncated) = 'scan: loop {
        let chunk: Vec<usize> = (k_next..k_next + sopts.chunk.max(1)).collect();
        k_next += chunk.len();
        let batch: Result<Vec<(f64, Vec<f64>)>> = chunk
            .par_iter()
            .map(|&k| run_one(k as f64 * sopts.db))
            .collect();
        for row in batch? {
            let over_cap = row.0 > sopts.b_cap + 1e-12;
            if !over_cap {
                rows.push(row);
            }
            let m = rows.len();
            if m >= 2 {
                let inel = |idx: usize| -> f64 {
                    rows[idx]
                        .1
                        .iter()
                        .enumerate()
                        .filter(|(f, _)| *f != initial_channel)
                        .map(|(_, v)| v)
                        .sum()
                };
                if inel(m - 1) < sopts.eps_b && inel(m - 2) < sopts.eps_b {
                    break 'scan (rows[m - 1].0, false);
                }
            }
            if over_cap {
                log::warn!(
                    "inelastic probability still above {} at the b cap {}; truncating scan",
                    sopts.eps_b,
                    sopts.b_cap
                );
                break 'scan (rows.last().map(|(b, _)| *b).unwrap_or(sopts.b_cap), true);
            }
        }
    };

    // One level of adaptive bisection where the opacity jumps.
    let mut mids = Vec::new();
    for w in rows.windows(2) {
        let jump = w[0]
            .1
            .iter()
            .zip(&w[1].1)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if jump > sopts.refine_jump {
            mids.push(0.5 * (w[0].0 + w[1].0));
        }
    }
    let refined: Result<Vec<(f64, Vec<f64>)>> = mids.par_iter().map(|&b| run_one(b)).collect();
    rows.extend(refined?);
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    Ok(OpacityTable {
        v0,
        mu,
        initial_channel,
        rows,
        b_max,
        truncated,
    })
}

/// Integral cross sections σ_if = 2π ∫ P_if(b)·b db over [0, b_max], by
/// composite Simpson with trapezoid fallback on non-uniform segments.
pub fn cross_section(table: &OpacityTable) -> Result<Vec<f64>> {
    if table.rows.is_empty() {
        return Err(Error::model("opacity table is empty"));
    }
    let n = table.rows[0].1.len();
    let mut xs = Vec::with_capacity(table.rows.len() + 1);
    let mut ys: Vec<Vec<f64>> = vec![Vec::with_capacity(table.rows.len() + 1); n];
    if table.rows[0].0 > 0.0 {
        // the integrand P·b vanishes at b = 0 regardless of P
        xs.push(0.0);
        for chan in ys.iter_mut() {
            chan.push(0.0);
        }
    }
    if xs.len() + table.rows.len() < 3 {
        // a two-row scan (immediate convergence) still quadratures fine with
        // the b = 0 node prepended; anything less cannot
        return Err(Error::model("opacity table needs at least 3 quadrature points"));
    }
    for (b, p) in &table.rows {
        xs.push(*b);
        for f in 0..n {
            ys[f].push(2.0 * std::f64::consts::PI * p[f] * b);
        }
    }
    Ok((0..n).map(|f| mixed_quadrature(&xs, &ys[f])).collect())
}

/// Composite Simpson over evenly spaced point pairs, trapezoid elsewhere.
fn mixed_quadrature(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    let mut i = 0;
    while i + 1 < n {
        if i + 2 < n {
            let h1 = x[i + 1] - x[i];
            let h2 = x[i + 2] - x[i + 1];
            if (h1 - h2).abs() < 1e-9 * h1.max(h2) {
                acc += h1 / 3.0 * (y[i] + 4.0 * y[i + 1] + y[i + 2]);
                i += 2;
                continue;
            }
        }
        acc += 0.5 * (x[i + 1] - x[i]) * (y[i] + y[i + 1]);
        i += 1;
    }
    acc
}

/// One energy point of a cross-section table.
#[derive(Debug, Clone)]
pub struct XsecRow {
    pub v0: f64,
    /// Centre-of-mass kinetic energy (hartree).
    pub k_hartree: f64,
    /// σ per final channel (a.u.²).
    pub sigma: Vec<f64>,
    pub b_max: f64,
    /// Ehrenfest-relabeled energy axis per final channel (hartree); `None`
    /// entries were below the validity threshold K ≥ ΔE/4.
    pub relabeled: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone)]
pub struct CrossSectionTable {
    pub initial_channel: usize,
    pub n_channels: usize,
    pub rows: Vec<XsecRow>,
}

/// Scan + integrate at each initial speed in `v0_list`.
#[allow(clippy::too_many_arguments)]
pub fn cross_sections_over_speeds(
    model: &DiabaticModel,
    v0_list: &[f64],
    mu: f64,
    initial_channel: usize,
    kind: TrajectoryKind,
    prop: &PropagatorConfig,
    copts: &CollisionOptions,
    sopts: &ScanOptions,
) -> Result<CrossSectionTable> {
    let mut rows = Vec::with_capacity(v0_list.len());
    for &v0 in v0_list {
        let table = impact_scan(model, v0, mu, initial_channel, kind, prop, copts, sopts)?;
        let sigma = cross_section(&table)?;
        rows.push(XsecRow {
            v0,
            k_hartree: 0.5 * mu * v0 * v0,
            sigma,
            b_max: table.b_max,
            relabeled: None,
        });
    }
    Ok(CrossSectionTable {
        initial_channel,
        n_channels: model.n_channels(),
        rows,
    })
}

/// Symmetrized-Ehrenfest relabeling of the kinetic-energy axis:
/// E = K̄ + ΔE/2 + ΔE²/(16·K̄) per transition, elastic entries unchanged,
/// endoergic entries below K̄ = ΔE/4 dropped.
pub fn ehrenfest_relabel(table: &CrossSectionTable, delta_e: &[f64]) -> Result<CrossSectionTable> {
    if delta_e.len() != table.n_channels {
        return Err(Error::Dimension {
            expected: table.n_channels,
            got: delta_e.len(),
        });
    }
    let mut out = table.clone();
    for row in &mut out.rows {
        if !(row.k_hartree > 0.0) {
            return Err(Error::model("ehrenfest relabeling needs K > 0"));
        }
        let k = row.k_hartree;
        let relabeled = delta_e
            .iter()
            .map(|&de| {
                if de == 0.0 {
                    Some(k)
                } else if de > 0.0 && k < de / 4.0 {
                    None
                } else {
                    Some(k + de / 2.0 + de * de / (16.0 * k))
                }
            })
            .collect();
        row.relabeled = Some(relabeled);
    }
    Ok(out)
}

/// ΔE_f = E_f − E_i per final channel, from the model asymptotes.
pub fn transition_gaps(model: &DiabaticModel, initial_channel: usize) -> Vec<f64> {
    let e0 = model.asymptote(initial_channel);
    model.asymptotes().iter().map(|e| e - e0).collect()
}

// ---------------------------------------------------------------------------
// Detailed balance
// ---------------------------------------------------------------------------

/// Forward/reverse probability asymmetry at one matched total energy.
#[derive(Debug, Clone)]
pub struct BalancePoint {
    pub e_total: f64,
    pub pair: (usize, usize),
    pub p_forward_raw: f64,
    pub p_reverse_raw: f64,
    pub p_forward_relabeled: f64,
    pub p_reverse_relabeled: f64,
    pub asym_raw: f64,
    pub asym_relabeled: f64,
}

/// Invert E = K + ΔE/2 + ΔE²/(16K) for the physical root K ≥ |ΔE|/4.
fn kinetic_from_total(e: f64, de: f64) -> Result<f64> {
    let half = e - 0.5 * de;
    let disc = half * half - de * de / 4.0;
    if disc < 0.0 || half <= 0.0 {
        return Err(Error::model(format!(
            "total energy {e} below the relabeling threshold for ΔE = {de}"
        )));
    }
    Ok(0.5 * (half + disc.sqrt()))
}

/// Compare P_if against P_fi at each requested total energy, before and
/// after the Ehrenfest symmetrization, at fixed impact parameter.
///
/// Energies are measured as the entrance kinetic energy of the endoergic
/// direction (total energy above the lower asymptote). The raw comparison
/// runs each direction at its own entrance kinetic energy for that total
/// (K and K − ΔE); the symmetrized comparison runs both at the shared mean
/// kinetic energy K̄ whose relabeled axes land on the same total. The
/// trajectory V̄ is referenced to the pair's mean asymptote in both
/// directions so the diagnostic probes the averaging/ΔE effect itself
/// rather than the entrance-referencing convention.
#[allow(clippy::too_many_arguments)]
pub fn detailed_balance_report(
    model: &DiabaticModel,
    mu: f64,
    b: f64,
    pairs: &[(usize, usize)],
    energies: &[f64],
    kind: TrajectoryKind,
    prop: &PropagatorConfig,
    opts: &CollisionOptions,
) -> Result<Vec<BalancePoint>> {
    let mut out = Vec::new();
    for &(i, f) in pairs {
        // orient the pair so `lo → hi` is the endoergic direction
        let (lo, hi) = if model.asymptote(i) <= model.asymptote(f) {
            (i, f)
        } else {
            (f, i)
        };
        let de = model.asymptote(hi) - model.asymptote(lo);
        let sym_opts = CollisionOptions {
            trajectory_reference: Some(0.5 * (model.asymptote(lo) + model.asymptote(hi))),
            ..opts.clone()
        };
        let prob = |initial: usize, k: f64, target: usize| -> Result<f64> {
            if !(k > 0.0) {
                return Err(Error::model(format!(
                    "total energy below the {} channel threshold",
                    initial + 1
                )));
            }
            let geom = CollisionGeometry::new((2.0 * k / mu).sqrt(), b, mu)?;
            let res = run_collision(model, geom, initial, kind, prop, &sym_opts)?;
            Ok(res.final_probs[target])
        };
        for &e in energies {
            // raw: matched total energy, each direction at its own entrance
            // kinetic energy
            let p_fwd_raw = prob(lo, e, hi)?;
            let p_rev_raw = prob(hi, e - de, lo)?;
            // symmetrized: both directions at the shared mean kinetic energy
            let k_bar = kinetic_from_total(e, de)?;
            let p_fwd_sym = prob(lo, k_bar, hi)?;
            let p_rev_sym = prob(hi, k_bar, lo)?;
            out.push(BalancePoint {
                e_total: e,
                pair: (lo, hi),
                p_forward_raw: p_fwd_raw,
                p_reverse_raw: p_rev_raw,
                p_forward_relabeled: p_fwd_sym,
                p_reverse_relabeled: p_rev_sym,
                asym_raw: (p_fwd_raw - p_rev_raw).abs(),
                asym_relabeled: (p_fwd_sym - p_rev_sym).abs(),
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// CSV emitters
// ---------------------------------------------------------------------------

/// Probability-vs-time history.
pub fn write_history_csv(
    result: &CollisionResult,
    path: impl AsRef<std::path::Path>,
    header: &[String],
) -> Result<()> {
    let n = result.n_channels();
    let cols: Vec<String> = std::iter::once("t_au".to_owned())
        .chain((1..=n).map(|f| format!("P_{}{f}", result.initial_channel + 1)))
        .collect();
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    report::write_csv(
        path,
        header,
        &col_refs,
        result.history.iter().map(|(t, p)| {
            std::iter::once(report::num(*t))
                .chain(p.iter().map(|v| report::num(*v)))
                .collect()
        }),
    )
}

/// Probability-vs-impact-parameter table.
pub fn write_opacity_csv(
    table: &OpacityTable,
    path: impl AsRef<std::path::Path>,
    header: &[String],
) -> Result<()> {
    let n = table.rows.first().map(|(_, p)| p.len()).unwrap_or(0);
    let mut head = vec![
        format!("v0_au = {}", table.v0),
        format!("mu_au = {}", table.mu),
        format!("initial_channel = {}", table.initial_channel + 1),
        format!("b_max_bohr = {}", table.b_max),
        format!("truncated = {}", table.truncated),
    ];
    head.extend_from_slice(header);
    let cols: Vec<String> = std::iter::once("b_bohr".to_owned())
        .chain((1..=n).map(|f| format!("P_{}{f}", table.initial_channel + 1)))
        .collect();
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    report::write_csv(
        path,
        &head,
        &col_refs,
        table.rows.iter().map(|(b, p)| {
            std::iter::once(report::num(*b))
                .chain(p.iter().map(|v| report::num(*v)))
                .collect()
        }),
    )
}

/// Cross sections vs energy, with the optional relabeled axis.
pub fn write_xsec_csv(
    table: &CrossSectionTable,
    path: impl AsRef<std::path::Path>,
    header: &[String],
) -> Result<()> {
    let n = table.n_channels;
    let i1 = table.initial_channel + 1;
    let has_relabel = table.rows.iter().any(|r| r.relabeled.is_some());
    let mut cols: Vec<String> = vec!["v0_au".into(), "K_eV".into()];
    cols.extend((1..=n).map(|f| format!("sigma_{i1}{f}_au2")));
    cols.extend((1..=n).map(|f| format!("sigma_{i1}{f}_cm2")));
    if has_relabel {
        cols.extend((1..=n).map(|f| format!("E_{i1}{f}_eV")));
    }
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    report::write_csv(
        path,
        header,
        &col_refs,
        table.rows.iter().map(|r| {
            let mut row = vec![report::num(r.v0), report::num(r.k_hartree * HARTREE_EV)];
            row.extend(r.sigma.iter().map(|s| report::num(*s)));
            row.extend(
                r.sigma
                    .iter()
                    .map(|s| report::num(*s * crate::constants::BOHR2_CM2)),
            );
            if has_relabel {
                match &r.relabeled {
                    Some(labels) => row.extend(labels.iter().map(|l| match l {
                        Some(e) => report::num(*e * HARTREE_EV),
                        None => String::new(),
                    })),
                    None => row.extend((0..n).map(|_| String::new())),
                }
            }
            row
        }),
    )
}

/// Detailed-balance asymmetry report.
pub fn write_balance_csv(
    points: &[BalancePoint],
    path: impl AsRef<std::path::Path>,
    header: &[String],
) -> Result<()> {
    report::write_csv(
        path,
        header,
        &[
            "E_total_hartree",
            "i",
            "f",
            "P_if_raw",
            "P_fi_raw",
            "P_if_relabeled",
            "P_fi_relabeled",
            "asym_raw",
            "asym_relabeled",
        ],
        points.iter().map(|p| {
            vec![
                report::num(p.e_total),
                (p.pair.0 + 1).to_string(),
                (p.pair.1 + 1).to_string(),
                report::num(p.p_forward_raw),
                report::num(p.p_reverse_raw),
                report::num(p.p_forward_relabeled),
                report::num(p.p_reverse_relabeled),
                report::num(p.asym_raw),
                report::num(p.asym_relabeled),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potmodel::{build_analytic, AnalyticModel, DiabaticModel, GridSpec};
    use crate::propagators::Method;

    fn zero_coupling_model() -> DiabaticModel {
        build_analytic(
            &AnalyticModel::ExponentialCoupling {
                asymptotes: vec![0.0, 0.08],
                amp: vec![8.0, 0.0, 10.0],
                decay: vec![1.3, 1.0, 1.3],
            },
            GridSpec::default(),
        )
        .unwrap()
    }

    fn fast_opts() -> CollisionOptions {
        CollisionOptions {
            start_radius: Some(25.0),
            ..Default::default()
        }
    }

    #[test]
    fn zero_coupling_is_purely_elastic() {
        let model = zero_coupling_model();
        let geom = CollisionGeometry::new(0.5, 1.0, 1000.0).unwrap();
        let cfg = PropagatorConfig::fixed(Method::Diagonalization, 0.1);
        let res = run_collision(
            &model,
            geom,
            0,
            TrajectoryKind::StraightLine,
            &cfg,
            &fast_opts(),
        )
        .unwrap();
        assert!((res.final_probs[0] - 1.0).abs() < 1e-10);
        assert!(res.final_probs[1].abs() < 1e-10);
        assert!(res.converged);
    }

    #[test]
    fn unitarity_holds_at_every_history_sample() {
        let model =
            build_analytic(&AnalyticModel::SyntheticN { n: 5, seed: 7 }, GridSpec::default())
                .unwrap();
        let geom = CollisionGeometry::new(0.5, 1.0, 5000.0).unwrap();
        let cfg = PropagatorConfig::fixed(Method::Diagonalization, 0.2);
        let res = run_collision(
            &model,
            geom,
            0,
            TrajectoryKind::StraightLine,
            &cfg,
            &CollisionOptions {
                start_radius: Some(40.0),
                ..Default::default()
            },
        )
        .unwrap();
        for (_, p) in &res.history {
            let total: f64 = p.iter().sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
        assert!(res.history.iter().any(|(t, _)| *t == 0.0));
    }

    #[test]
    fn rabi_window_matches_closed_form() {
        // Two degenerate channels, coupling = A inside a smooth window: the
        // Hamiltonian commutes with itself at all times, so
        // P₂ = sin²(∫V₁₂ dt) = sin²(A·2R_w/v0) for a head-on straight path.
        let a_coupling = 0.15;
        let r_w = 4.0;
        let width = 0.25;
        let grid: Vec<f64> = (0..3000).map(|k| 0.05 + 0.01 * k as f64).collect();
        let values: Vec<Vec<f64>> = grid
            .iter()
            .map(|&r| vec![0.0, 0.5 * a_coupling * (1.0 - ((r - r_w) / width).tanh()), 0.0])
            .collect();
        let model = DiabaticModel::from_samples(vec![0.0, 0.0], None, grid, values).unwrap();
        let v0 = 1.0;
        let geom = CollisionGeometry::new(v0, 0.0, 1000.0).unwrap();
        let cfg = PropagatorConfig::fixed(Method::CrankNicolson, 1e-3);
        let res = run_collision(
            &model,
            geom,
            0,
            TrajectoryKind::StraightLine,
            &cfg,
            &CollisionOptions {
                start_radius: Some(25.0),
                ..Default::default()
            },
        )
        .unwrap();
        let theta = a_coupling * 2.0 * r_w / v0;
        let expect = theta.sin().powi(2);
        assert!(
            (res.final_probs[1] - expect).abs() < 1e-4,
            "P2 = {} vs sin²(θ) = {expect}",
            res.final_probs[1]
        );
    }

    #[test]
    fn doubling_start_radius_leaves_finals_unchanged() {
        let model =
            build_analytic(&AnalyticModel::SyntheticN { n: 3, seed: 11 }, GridSpec::default())
                .unwrap();
        let geom = CollisionGeometry::new(0.5, 1.2, 4000.0).unwrap();
        let cfg = PropagatorConfig::adaptive(Method::FehlbergRk, 1e-9, 0.05);
        let run = |r: f64| {
            run_collision(
                &model,
                geom,
                0,
                TrajectoryKind::StraightLine,
                &cfg,
                &CollisionOptions {
                    start_radius: Some(r),
                    ..Default::default()
                },
            )
            .unwrap()
            .final_probs
        };
        let p40 = run(40.0);
        let p80 = run(80.0);
        for (a, b) in p40.iter().zip(&p80) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn landau_zener_single_passage_oracle() {
        // Head-on straight-line traversal of a linear crossing: between the
        // two passages the diabatic survival plateaus at
        // p = exp(−2π·V12²/(v_r·|F1−F2|)). The plateau carries a residual
        // basis-dressing oscillation, so the oracle reads its time average
        // over the window |t| < 0.4·t_crossing.
        let (f1, f2, r_x): (f64, f64, f64) = (0.06, -0.06, 7.0);
        let v0 = 0.04;
        for &p_target in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let v12 =
                (-(p_target as f64).ln() * v0 * (f1 - f2).abs() / (2.0 * std::f64::consts::PI))
                    .sqrt();
            let model = build_analytic(
                &AnalyticModel::LandauZener { f1, f2, v12, r_x },
                GridSpec::default(),
            )
            .unwrap();
            let geom = CollisionGeometry::new(v0, 0.0, 1000.0).unwrap();
            let cfg = PropagatorConfig::adaptive(Method::FehlbergRk, 1e-8, 0.01);
            let res = run_collision(
                &model,
                geom,
                0,
                TrajectoryKind::StraightLine,
                &cfg,
                &CollisionOptions {
                    start_radius: Some(40.0),
                    ..Default::default()
                },
            )
            .unwrap();
            let t_x = r_x / v0;
            let p_mid = res.mean_prob_in_window(0, -0.4 * t_x, 0.4 * t_x);
            assert!(
                (p_mid - p_target).abs() / p_target < 0.05,
                "p = {p_mid} vs {p_target} (v12 = {v12})"
            );
        }
    }

    #[test]
    fn impact_scan_zero_coupling_terminates_immediately() {
        let model = zero_coupling_model();
        let cfg = PropagatorConfig::adaptive(Method::FehlbergRk, 1e-8, 0.05);
        let table = impact_scan(
            &model,
            0.5,
            1000.0,
            0,
            TrajectoryKind::StraightLine,
            &cfg,
            &fast_opts(),
            &ScanOptions::default(),
        )
        .unwrap();
        assert!(!table.truncated);
        assert_eq!(table.rows.len(), 2);
        assert!((table.b_max - 0.2).abs() < 1e-12);
        for k in 0..table.rows.len() {
            assert!(table.inelastic_total(k) < 1e-10);
        }
    }

    #[test]
    fn impact_scan_truncates_at_cap() {
        // Degenerate channels with a long-range coupling keep mixing at
        // large b; a small cap must warn and truncate.
        let model = build_analytic(
            &AnalyticModel::ExponentialCoupling {
                asymptotes: vec![0.0, 0.0],
                amp: vec![2.0, 0.3, 2.0],
                decay: vec![1.2, 0.12, 1.2],
            },
            GridSpec {
                r_min: 0.2,
                r_max: 60.0,
                points: 2991,
            },
        )
        .unwrap();
        let cfg = PropagatorConfig::adaptive(Method::FehlbergRk, 1e-7, 0.05);
        let table = impact_scan(
            &model,
            0.8,
            500.0,
            0,
            TrajectoryKind::StraightLine,
            &cfg,
            &CollisionOptions {
                start_radius: Some(55.0),
                ..Default::default()
            },
            &ScanOptions {
                b_cap: 3.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(table.truncated);
        assert!(table.b_max <= 3.0 + 1e-9);
    }

    #[test]
    fn hard_sphere_cross_section_is_disc_area() {
        let b_max = 5.0;
        let rows: Vec<(f64, Vec<f64>)> = (1..=50).map(|k| (0.1 * k as f64, vec![1.0])).collect();
        let table = OpacityTable {
            v0: 1.0,
            mu: 1000.0,
            initial_channel: 0,
            rows,
            b_max,
            truncated: false,
        };
        let sigma = cross_section(&table).unwrap();
        let expect = std::f64::consts::PI * b_max * b_max;
        assert!((sigma[0] - expect).abs() < 1e-10, "{} vs {expect}", sigma[0]);
    }

    #[test]
    fn gaussian_opacity_integrates_to_pi() {
        let rows: Vec<(f64, Vec<f64>)> = (1..=600)
            .map(|k| {
                let b = 0.01 * k as f64;
                (b, vec![(-b * b).exp()])
            })
            .collect();
        let table = OpacityTable {
            v0: 1.0,
            mu: 1000.0,
            initial_channel: 0,
            rows,
            b_max: 6.0,
            truncated: false,
        };
        let sigma = cross_section(&table).unwrap();
        assert!((sigma[0] - std::f64::consts::PI).abs() < 1e-6);
    }

    #[test]
    fn zero_opacity_gives_zero_cross_section() {
        let rows: Vec<(f64, Vec<f64>)> = (1..=30).map(|k| (0.1 * k as f64, vec![0.0])).collect();
        let table = OpacityTable {
            v0: 1.0,
            mu: 1000.0,
            initial_channel: 0,
            rows,
            b_max: 3.0,
            truncated: false,
        };
        assert_eq!(cross_section(&table).unwrap()[0], 0.0);
    }

    #[test]
    fn ehrenfest_algebra() {
        let table = CrossSectionTable {
            initial_channel: 0,
            n_channels: 3,
            rows: vec![XsecRow {
                v0: 0.1,
                k_hartree: 1.0,
                sigma: vec![1.0, 2.0, 3.0],
                b_max: 5.0,
                relabeled: None,
            }],
        };
        // elastic, exoergic, endoergic
        let out = ehrenfest_relabel(&table, &[0.0, -0.1, 0.3]).unwrap();
        let relabeled = out.rows[0].relabeled.as_ref().unwrap();
        assert_eq!(relabeled[0], Some(1.0)); // ΔE = 0 → identity
        let exo = relabeled[1].unwrap();
        assert!((exo - 0.950625).abs() < 1e-12); // 1 − 0.05 + 0.01/16
        let endo = relabeled[2].unwrap();
        assert!((endo - (1.0 + 0.15 + 0.09 / 16.0)).abs() < 1e-12);

        // endoergic threshold: K = ΔE/4 relabels to exactly ΔE
        let table_thr = CrossSectionTable {
            initial_channel: 0,
            n_channels: 2,
            rows: vec![XsecRow {
                v0: 0.1,
                k_hartree: 0.075,
                sigma: vec![1.0, 1.0],
                b_max: 5.0,
                relabeled: None,
            }],
        };
        let out = ehrenfest_relabel(&table_thr, &[0.0, 0.3]).unwrap();
        let e = out.rows[0].relabeled.as_ref().unwrap()[1].unwrap();
        assert!((e - 0.3).abs() < 1e-14);

        // below threshold the entry is dropped for that transition
        let table_below = CrossSectionTable {
            rows: vec![XsecRow {
                k_hartree: 0.07,
                ..table_thr.rows[0].clone()
            }],
            ..table_thr
        };
        let out = ehrenfest_relabel(&table_below, &[0.0, 0.3]).unwrap();
        assert_eq!(out.rows[0].relabeled.as_ref().unwrap()[1], None);
    }

    #[test]
    fn ehrenfest_axis_is_monotone_in_k() {
        let de = 0.2;
        let rows: Vec<XsecRow> = (1..=40)
            .map(|k| XsecRow {
                v0: 0.1,
                k_hartree: de / 4.0 + 0.01 * k as f64,
                sigma: vec![1.0, 1.0],
                b_max: 5.0,
                relabeled: None,
            })
            .collect();
        let table = CrossSectionTable {
            initial_channel: 0,
            n_channels: 2,
            rows,
        };
        let out = ehrenfest_relabel(&table, &[0.0, de]).unwrap();
        let axis: Vec<f64> = out
            .rows
            .iter()
            .map(|r| r.relabeled.as_ref().unwrap()[1].unwrap())
            .collect();
        assert!(axis.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn kinetic_from_total_inverts_the_relabel() {
        for &(e, de) in &[(1.0, 0.3), (0.5, -0.2), (2.0, 0.0)] {
            let k = kinetic_from_total(e, de).unwrap();
            let back = k + de / 2.0 + de * de / (16.0 * k);
            assert!((back - e).abs() < 1e-12);
            assert!(k >= de.abs() / 4.0 - 1e-12);
        }
    }

    fn light_two_state_model(de: f64) -> DiabaticModel {
        // A light system stays non-adiabatic down to K ~ ΔE.
        build_analytic(
            &AnalyticModel::ExponentialCoupling {
                asymptotes: vec![0.0, de],
                amp: vec![4.0, 0.25, 4.0],
                decay: vec![1.3, 0.8, 1.3],
            },
            GridSpec::default(),
        )
        .unwrap()
    }

    #[test]
    fn detailed_balance_raw_asymmetry_small_at_high_energy() {
        let de = 0.05;
        let model = light_two_state_model(de);
        let cfg = PropagatorConfig::adaptive(Method::FehlbergRk, 1e-9, 0.01);
        let opts = CollisionOptions {
            start_radius: Some(30.0),
            ..Default::default()
        };
        let rep = detailed_balance_report(
            &model,
            10.0,
            1.0,
            &[(0, 1)],
            &[10.0 * de],
            TrajectoryKind::Curvilinear(crate::potmodel::AveragingScheme::Arithmetic),
            &cfg,
            &opts,
        )
        .unwrap();
        let p = &rep[0];
        let mean = 0.5 * (p.p_forward_raw + p.p_reverse_raw);
        assert!(
            p.asym_raw / mean < 0.02,
            "raw asymmetry {:.3e} exceeds 2% of {mean:.3e} at K = 10ΔE",
            p.asym_raw
        );
    }

    #[test]
    fn detailed_balance_symmetrization_shrinks_asymmetry_near_threshold() {
        let de = 0.05;
        let model = light_two_state_model(de);
        let cfg = PropagatorConfig::adaptive(Method::FehlbergRk, 1e-9, 0.01);
        let opts = CollisionOptions {
            start_radius: Some(30.0),
            ..Default::default()
        };
        // the (1, 0) ordering exercises the exothermic entrance; the report
        // orients the pair internally
        let rep = detailed_balance_report(
            &model,
            10.0,
            1.0,
            &[(1, 0)],
            &[1.2 * de, 2.0 * de],
            TrajectoryKind::Curvilinear(crate::potmodel::AveragingScheme::Arithmetic),
            &cfg,
            &opts,
        )
        .unwrap();
        for p in &rep {
            assert!(
                p.asym_relabeled < p.asym_raw,
                "symmetrization did not reduce the asymmetry at E = {}: {:.3e} vs {:.3e}",
                p.e_total,
                p.asym_relabeled,
                p.asym_raw
            );
            // near threshold the reduction is by orders of magnitude
            assert!(p.asym_relabeled < 1e-3 * p.asym_raw);
        }
    }

    #[test]
    fn detailed_balance_zero_coupling_is_exact() {
        let model = zero_coupling_model();
        let cfg = PropagatorConfig::adaptive(Method::FehlbergRk, 1e-8, 0.05);
        let report = detailed_balance_report(
            &model,
            2000.0,
            1.0,
            &[(0, 1)],
            &[1.0],
            TrajectoryKind::StraightLine,
            &cfg,
            &fast_opts(),
        )
        .unwrap();
        assert!(report[0].asym_raw < 1e-10);
        assert!(report[0].asym_relabeled < 1e-10);
    }
}
