//! Mapping of the collision Hamiltonian onto an emulated single-excitation-
//! subspace (SES) device: trace removal, rescaling into the device coupling
//! window, the nonlinear simulated-time map t_qc = ∫λ dt′, device-frame
//! propagation and the classical/device comparison report.
//!
//! The mapping stores λ on a dense time grid and treats it as piecewise
//! linear everywhere: t_qc is then the exact integral of that interpolant
//! (piecewise quadratic) and its inverse is solved per segment in closed
//! form, so the device frame sees an exactly consistent reparametrization.

use ndarray::Array2;

use crate::constants::{AU_TIME_NS, HARTREE_MHZ};
use crate::error::{Error, Result};
use crate::potmodel::DiabaticModel;
use crate::propagators::{
    propagate, AmplitudeState, HamiltonianSampler, PropagateOptions, PropagatorConfig,
};
use crate::report;
use crate::scattering::{
    build_path, resolve_start_radius, run_collision, CollisionHamiltonian, CollisionOptions,
    CollisionResult,
};
use crate::trajectory::{CollisionGeometry, TrajectoryKind};

/// Emulated device parameters.
#[derive(Debug, Clone, Copy)]
pub struct DeviceSpec {
    /// Maximum tunable coupling magnitude (h·MHz).
    pub g_max_mhz: f64,
    /// Qubit measurement time (ns).
    pub t_meas_ns: f64,
    /// Must equal the channel count of the mapped problem.
    pub n_qubits: usize,
}

impl DeviceSpec {
    pub fn new(g_max_mhz: f64, t_meas_ns: f64, n_qubits: usize) -> Result<Self> {
        if !(g_max_mhz > 0.0) {
            return Err(Error::model("device coupling range must be positive"));
        }
        if !(t_meas_ns > 0.0) {
            return Err(Error::model("measurement time must be positive"));
        }
        Ok(DeviceSpec {
            g_max_mhz,
            t_meas_ns,
            n_qubits,
        })
    }

    /// The coupling window expressed in hartree.
    pub fn g_max_hartree(&self) -> f64 {
        self.g_max_mhz / HARTREE_MHZ
    }
}

/// λ construction policy.
#[derive(Debug, Clone, Copy)]
pub struct LambdaPolicy {
    /// Floor keeping t_qc strictly increasing when h(t) − c(t)·I → 0.
    pub lambda_min: f64,
    /// Optional centred moving-average window (samples, forced odd).
    /// Smoothing can push peak elements slightly past the device range;
    /// off by default.
    pub smooth_window: Option<usize>,
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy {
            lambda_min: 1e-6,
            smooth_window: None,
        }
    }
}

/// The rescaling record {c(t), λ(t), t_qc(t)} tying physical time to device
/// time.
#[derive(Debug, Clone)]
pub struct SesMapping {
    times: Vec<f64>,
    c: Vec<f64>,
    lambda: Vec<f64>,
    /// Exact integral of the piecewise-linear λ, offset so t_qc(0) = 0 (a.u.).
    tqc: Vec<f64>,
    g_max_hartree: f64,
}

impl SesMapping {
    /// Sample rows (t, c, λ, t_qc) for emitters and tests.
    pub fn samples(&self) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        (0..self.times.len()).map(|k| (self.times[k], self.c[k], self.lambda[k], self.tqc[k]))
    }

    pub fn t_span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    pub fn g_max_hartree(&self) -> f64 {
        self.g_max_hartree
    }

    fn check_range(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.t_span();
        let slop = 1e-9 * (hi - lo).max(1.0);
        if t < lo - slop || t > hi + slop {
            return Err(Error::model(format!(
                "time {t} outside the mapped range [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    fn segment_of_t(&self, t: f64) -> usize {
        crate::spline::find_segment(&self.times, t)
    }

    /// Piecewise-linear λ(t).
    pub fn lambda_at(&self, t: f64) -> f64 {
        let tc = t.clamp(self.times[0], *self.times.last().unwrap());
        let k = self.segment_of_t(tc);
        let w = ((tc - self.times[k]) / (self.times[k + 1] - self.times[k])).clamp(0.0, 1.0);
        self.lambda[k] * (1.0 - w) + self.lambda[k + 1] * w
    }

    /// Piecewise-linear c(t).
    pub fn c_at(&self, t: f64) -> f64 {
        let tc = t.clamp(self.times[0], *self.times.last().unwrap());
        let k = self.segment_of_t(tc);
        let w = ((tc - self.times[k]) / (self.times[k + 1] - self.times[k])).clamp(0.0, 1.0);
        self.c[k] * (1.0 - w) + self.c[k + 1] * w
    }

    /// Simulated time t_qc(t) in a.u. (t_qc(0) = 0).
    pub fn tqc_at(&self, t: f64) -> Result<f64> {
        self.check_range(t)?;
        let tc = t.clamp(self.times[0], *self.times.last().unwrap());
        let k = self.segment_of_t(tc);
        let dt = tc - self.times[k];
        let slope = (self.lambda[k + 1] - self.lambda[k]) / (self.times[k + 1] - self.times[k]);
        Ok(self.tqc[k] + self.lambda[k] * dt + 0.5 * slope * dt * dt)
    }

    /// Inverse map: the physical time whose simulated time is `tau` (a.u.).
    pub fn t_at_tqc(&self, tau: f64) -> f64 {
        let tau = tau.clamp(self.tqc[0], *self.tqc.last().unwrap());
        let k = match self.tqc.binary_search_by(|v| v.partial_cmp(&tau).unwrap()) {
            Ok(i) => i.min(self.tqc.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.tqc.len() - 2),
        };
        let span = self.times[k + 1] - self.times[k];
        let slope = (self.lambda[k + 1] - self.lambda[k]) / span;
        let rhs = tau - self.tqc[k];
        // 0.5·slope·dt² + λ_k·dt = rhs; stable quadratic root
        let disc = (self.lambda[k] * self.lambda[k] + 2.0 * slope * rhs).max(0.0);
        let dt = 2.0 * rhs / (self.lambda[k] + disc.sqrt());
        self.times[k] + dt.clamp(0.0, span)
    }

    /// t_qc in nanoseconds.
    pub fn tqc_ns(&self, t: f64) -> Result<f64> {
        Ok(self.tqc_at(t)? * AU_TIME_NS)
    }

    /// Total simulated duration of the mapped span (ns).
    pub fn total_tqc_ns(&self) -> f64 {
        (self.tqc.last().unwrap() - self.tqc[0]) * AU_TIME_NS
    }
}

/// Simulated device time at physical time `t`, in ns.
pub fn simulated_time(mapping: &SesMapping, t: f64) -> Result<f64> {
    mapping.tqc_ns(t)
}

/// Build the rescaling record for a sampled Hamiltonian over [t0, t1]:
/// c(t) = tr h/n, λ(t) = max(λ_min, max_ij|h_ij − c·δ_ij|/g_max).
pub fn rescale_hamiltonian(
    h: &dyn HamiltonianSampler,
    t0: f64,
    t1: f64,
    samples: usize,
    device: &DeviceSpec,
    policy: &LambdaPolicy,
) -> Result<SesMapping> {
    if device.n_qubits != h.dim() {
        return Err(Error::Dimension {
            expected: h.dim(),
            got: device.n_qubits,
        });
    }
    if !(t1 > t0) {
        return Err(Error::model("mapping span must be forward in time"));
    }
    if !(policy.lambda_min > 0.0) {
        return Err(Error::model("lambda floor must be positive"));
    }
    let samples = samples.max(3) | 1; // odd, so t = 0 lands on a node of a symmetric span
    let n = h.dim();
    let g_max = device.g_max_hartree();
    let mut v = Array2::zeros((n, n));
    let mut times = Vec::with_capacity(samples);
    let mut c = Vec::with_capacity(samples);
    let mut lambda = Vec::with_capacity(samples);
    for k in 0..samples {
        let t = t0 + (t1 - t0) * k as f64 / (samples - 1) as f64;
        h.sample_into(t, &mut v)?;
        let (ck, spread) = center_and_spread(&v)?;
        times.push(t);
        c.push(ck);
        lambda.push((spread / g_max).max(policy.lambda_min));
    }
    if let Some(w) = policy.smooth_window {
        lambda = moving_average(&lambda, w.max(1) | 1);
        for l in lambda.iter_mut() {
            *l = l.max(policy.lambda_min);
        }
    }

    // exact cumulative integral of the piecewise-linear λ
    let mut tqc = Vec::with_capacity(samples);
    tqc.push(0.0);
    for k in 1..samples {
        let dt = times[k] - times[k - 1];
        tqc.push(tqc[k - 1] + 0.5 * (lambda[k] + lambda[k - 1]) * dt);
    }
    // zero at t = 0 when the span straddles it
    let offset = if t0 < 0.0 && t1 > 0.0 {
        let k = crate::spline::find_segment(&times, 0.0);
        let dt = -times[k];
        let slope = (lambda[k + 1] - lambda[k]) / (times[k + 1] - times[k]);
        tqc[k] + lambda[k] * dt + 0.5 * slope * dt * dt
    } else {
        tqc[0]
    };
    for v in tqc.iter_mut() {
        *v -= offset;
    }

    Ok(SesMapping {
        times,
        c,
        lambda,
        tqc,
        g_max_hartree: g_max,
    })
}

fn center_and_spread(v: &Array2<f64>) -> Result<(f64, f64)> {
    let n = v.nrows();
    for i in 0..n {
        for j in i + 1..n {
            if (v[(i, j)] - v[(j, i)]).abs() > 1e-12 * v[(i, j)].abs().max(1.0) {
                return Err(Error::model(
                    "hamiltonian sampler returned a non-symmetric matrix",
                ));
            }
        }
    }
    let c = (0..n).map(|i| v[(i, i)]).sum::<f64>() / n as f64;
    let mut spread = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let x = if i == j { v[(i, i)] - c } else { v[(i, j)] };
            spread = spread.max(x.abs());
        }
    }
    Ok((c, spread))
}

fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let half = w / 2;
    (0..x.len())
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// The device-frame Hamiltonian ℋ(t_qc) = (h(t) − c(t)·I)/λ(t) at
/// t = t(t_qc), sampled consistently with the mapping's λ interpolant.
pub struct DeviceHamiltonian<'a> {
    phys: &'a dyn HamiltonianSampler,
    mapping: &'a SesMapping,
}

impl<'a> DeviceHamiltonian<'a> {
    pub fn new(phys: &'a dyn HamiltonianSampler, mapping: &'a SesMapping) -> Self {
        Self { phys, mapping }
    }
}

impl HamiltonianSampler for DeviceHamiltonian<'_> {
    fn dim(&self) -> usize {
        self.phys.dim()
    }

    fn sample_into(&self, tau: f64, out: &mut Array2<f64>) -> Result<()> {
        let t = self.mapping.t_at_tqc(tau);
        self.phys.sample_into(t, out)?;
        let n = out.nrows();
        let c = (0..n).map(|i| out[(i, i)]).sum::<f64>() / n as f64;
        let lambda = self.mapping.lambda_at(t);
        for i in 0..n {
            out[(i, i)] -= c;
        }
        out.mapv_inplace(|x| x / lambda);
        Ok(())
    }
}

/// Per-channel classical/device comparison.
#[derive(Debug, Clone)]
pub struct ChannelComparison {
    pub channel: usize,
    pub p_classical: f64,
    pub p_device: f64,
    pub rel_error: f64,
}

/// A full SES emulation run next to its classical twin.
#[derive(Debug)]
pub struct SesRun {
    pub classical: CollisionResult,
    /// Device-frame probability history over t_qc (a.u.).
    pub device_history: Vec<(f64, Vec<f64>)>,
    pub device_final: Vec<f64>,
    pub mapping: SesMapping,
    pub comparison: Vec<ChannelComparison>,
    pub t_qc_ns: f64,
    pub t_qu_ns: f64,
    pub device_steps: u64,
}

/// Run the collision classically, map it onto the device and run the
/// device-frame propagation; report probabilities and the simulated run time
/// t_qu = t_qc + t_meas.
#[allow(clippy::too_many_arguments)]
pub fn run_ses(
    model: &DiabaticModel,
    geom: CollisionGeometry,
    initial_channel: usize,
    kind: TrajectoryKind,
    device: &DeviceSpec,
    prop_classical: &PropagatorConfig,
    prop_device: &PropagatorConfig,
    policy: &LambdaPolicy,
    opts: &CollisionOptions,
    mapping_samples: usize,
) -> Result<SesRun> {
    if device.n_qubits != model.n_channels() {
        return Err(Error::Dimension {
            expected: model.n_channels(),
            got: device.n_qubits,
        });
    }
    let classical = run_collision(model, geom, initial_channel, kind, prop_classical, opts)?;

    // Rebuild the (deterministic) path at the classical run's final start
    // radius so both frames see the same h(t).
    let path = build_path(
        model,
        geom,
        initial_channel,
        kind,
        classical.start_radius.max(resolve_start_radius(model, opts)),
        &opts.radial,
    )?;
    let sampler = CollisionHamiltonian::new(model, &path, initial_channel);
    let t_end = path.t_end();
    let mapping = rescale_hamiltonian(&sampler, -t_end, t_end, mapping_samples, device, policy)?;

    let device_h = DeviceHamiltonian::new(&sampler, &mapping);
    let tau0 = mapping.tqc_at(-t_end)?;
    let tau1 = mapping.tqc_at(t_end)?;
    let a0 = AmplitudeState::delta(model.n_channels(), initial_channel, tau0).a;
    let popts = PropagateOptions {
        history_cap: opts.history_cap,
        record_at: vec![0.0],
        ..Default::default()
    };
    let device_run = propagate(&device_h, &a0, tau0, tau1, prop_device, &popts)?;
    let device_final = device_run.state.probabilities();

    let comparison = classical
        .final_probs
        .iter()
        .zip(&device_final)
        .enumerate()
        .map(|(channel, (pc, pd))| ChannelComparison {
            channel,
            p_classical: *pc,
            p_device: *pd,
            rel_error: (pd - pc).abs() / pc.abs().max(1e-300),
        })
        .collect();

    let t_qc_ns = mapping.total_tqc_ns();
    Ok(SesRun {
        classical,
        device_history: device_run.history,
        device_final,
        mapping,
        comparison,
        t_qc_ns,
        t_qu_ns: t_qc_ns + device.t_meas_ns,
        device_steps: device_run.steps,
    })
}

// ---------------------------------------------------------------------------
// CSV emitters
// ---------------------------------------------------------------------------

/// λ(t), c(t) and t_qc(t) samples.
pub fn write_mapping_csv(
    mapping: &SesMapping,
    path: impl AsRef<std::path::Path>,
    header: &[String],
) -> Result<()> {
    report::write_csv(
        path,
        header,
        &["t_au", "c_hartree", "lambda", "t_qc_ns"],
        mapping.samples().map(|(t, c, l, tqc)| {
            vec![
                report::num(t),
                report::num(c),
                report::num(l),
                report::num(tqc * AU_TIME_NS),
            ]
        }),
    )
}

/// Device-frame Hamiltonian element traces over simulated time (MHz).
pub fn write_device_hamiltonian_csv(
    mapping: &SesMapping,
    phys: &dyn HamiltonianSampler,
    path: impl AsRef<std::path::Path>,
    header: &[String],
) -> Result<()> {
    let n = phys.dim();
    let device = DeviceHamiltonian::new(phys, mapping);
    let mut cols: Vec<String> = vec!["t_qc_ns".into()];
    for i in 1..=n {
        for j in i..=n {
            cols.push(format!("H_{i}{j}_mhz"));
        }
    }
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut v = Array2::zeros((n, n));
    let mut rows = Vec::new();
    for (_, _, _, tqc) in mapping.samples() {
        device.sample_into(tqc, &mut v)?;
        let mut row = vec![report::num(tqc * AU_TIME_NS)];
        for i in 0..n {
            for j in i..n {
                row.push(report::num(v[(i, j)] * HARTREE_MHZ));
            }
        }
        rows.push(row);
    }
    report::write_csv(path, header, &col_refs, rows)
}

/// Device-frame probabilities over simulated time.
pub fn write_device_prob_csv(
    run: &SesRun,
    path: impl AsRef<std::path::Path>,
    header: &[String],
) -> Result<()> {
    let n = run.device_final.len();
    let cols: Vec<String> = std::iter::once("t_qc_ns".to_owned())
        .chain((1..=n).map(|f| format!("P_{}{f}", run.classical.initial_channel + 1)))
        .collect();
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    report::write_csv(
        path,
        header,
        &col_refs,
        run.device_history.iter().map(|(tau, p)| {
            std::iter::once(report::num(tau * AU_TIME_NS))
                .chain(p.iter().map(|v| report::num(*v)))
                .collect()
        }),
    )
}

/// Classical vs device probability table with relative errors.
pub fn write_comparison_csv(
    run: &SesRun,
    path: impl AsRef<std::path::Path>,
    header: &[String],
) -> Result<()> {
    let mut head = vec![
        format!("t_qc_ns = {}", report::num(run.t_qc_ns)),
        format!("t_qu_ns = {}", report::num(run.t_qu_ns)),
    ];
    head.extend_from_slice(header);
    let i1 = run.classical.initial_channel + 1;
    report::write_csv(
        path,
        &head,
        &["transition", "P_classical", "P_ses", "rel_error_pct"],
        run.comparison.iter().map(|c| {
            vec![
                format!("P_{i1}{}", c.channel + 1),
                report::num(c.p_classical),
                report::num(c.p_device),
                format!("{:.3}", c.rel_error * 100.0),
            ]
        }),
    )
}
