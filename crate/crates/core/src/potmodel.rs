//! Diabatic potential models: n-channel symmetric matrices V(R) on a radial
//! grid with per-element cubic splines, channel asymptotes, diagonal
//! averaging schemes, a text-table loader, and built-in analytic systems.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spline;

/// Default asymptote tolerance ε_asym (hartree) used by the loader check.
pub const DEFAULT_ASYM_TOL: f64 = 1e-6;

/// How the diagonal of V(R) is collapsed to the scalar potential that drives
/// the common classical trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AveragingScheme {
    Arithmetic,
    Geometric,
    /// Use a single channel's diagonal (0-based index).
    Channel(usize),
}

impl std::fmt::Display for AveragingScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AveragingScheme::Arithmetic => write!(f, "arithmetic"),
            AveragingScheme::Geometric => write!(f, "geometric"),
            AveragingScheme::Channel(i) => write!(f, "channel:{}", i + 1),
        }
    }
}

/// An n-channel diabatic potential matrix on a radial grid.
///
/// Storage is the upper triangle in row-major order
/// (V₁₁ V₁₂ … V₁ₙ V₂₂ … Vₙₙ); evaluation returns the full symmetric matrix.
/// Outside the grid the model extrapolates to the channel asymptotes
/// (diagonal → Eᵢ, couplings → 0) beyond R_max and clamps below R_min.
/// Immutable after construction and shareable across trajectory workers.
#[derive(Debug)]
pub struct DiabaticModel {
    n: usize,
    labels: Vec<String>,
    asymptotes: Vec<f64>,
    grid: Vec<f64>,
    /// values[k] = upper triangle at grid[k]
    values: Vec<Vec<f64>>,
    /// second derivatives per element, indexed [element][grid point]
    y2: Vec<Vec<f64>>,
    /// per-element value series, transposed from `values` for spline evaluation
    y: Vec<Vec<f64>>,
    warnings: Vec<String>,
    clamp_warned: AtomicBool,
}

impl DiabaticModel {
    /// Build a model from grid samples of the upper-triangular matrix.
    ///
    /// `values[k]` holds the n(n+1)/2 upper-triangle entries at `grid[k]`.
    pub fn from_samples(
        asymptotes: Vec<f64>,
        labels: Option<Vec<String>>,
        grid: Vec<f64>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = asymptotes.len();
        if n < 1 {
            return Err(Error::model("channel count must be at least 1"));
        }
        if grid.len() < 4 {
            return Err(Error::model("grid needs at least 4 points for splines"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::model("grid not strictly increasing"));
        }
        if grid[0] <= 0.0 {
            return Err(Error::model("grid radii must be positive"));
        }
        let tri = n * (n + 1) / 2;
        if values.len() != grid.len() {
            return Err(Error::model("one value row required per grid point"));
        }
        if let Some(bad) = values.iter().position(|row| row.len() != tri) {
            return Err(Error::model(format!(
                "row {bad}: expected {tri} matrix elements, got {}",
                values[bad].len()
            )));
        }
        let labels = match labels {
            Some(l) if l.len() == n => l,
            Some(_) => return Err(Error::model("label count differs from channel count")),
            None => (1..=n).map(|i| format!("ch{i}")).collect(),
        };
        // Transpose to per-element series and build the splines.
        let mut y = vec![vec![0.0; grid.len()]; tri];
        for (k, row) in values.iter().enumerate() {
            for (e, v) in row.iter().enumerate() {
                y[e][k] = *v;
            }
        }
        let y2 = y
            .iter()
            .map(|series| spline::natural_second_derivs(&grid, series))
            .collect();
        Ok(Self {
            n,
            labels,
            asymptotes,
            grid,
            values,
            y2,
            y,
            warnings: Vec::new(),
            clamp_warned: AtomicBool::new(false),
        })
    }

    pub fn n_channels(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn asymptote(&self, channel: usize) -> f64 {
        self.asymptotes[channel]
    }

    pub fn asymptotes(&self) -> &[f64] {
        &self.asymptotes
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn r_min(&self) -> f64 {
        self.grid[0]
    }

    pub fn r_max(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Warnings raised while loading (asymptote mismatches).
    pub fn load_warnings(&self) -> &[String] {
        &self.warnings
    }

    #[inline]
    fn tri_index(&self, i: usize, j: usize) -> usize {
        // upper triangle, row-major: (i,j) with i <= j
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + j
    }

    /// The full symmetric potential matrix at internuclear distance `r` (bohr).
    pub fn potential_matrix(&self, r: f64) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((self.n, self.n));
        self.potential_matrix_into(r, &mut out)?;
        Ok(out)
    }

    /// In-place variant of [`potential_matrix`](Self::potential_matrix) for
    /// propagation inner loops.
    pub fn potential_matrix_into(&self, r: f64, out: &mut Array2<f64>) -> Result<()> {
        if !(r > 0.0) {
            return Err(Error::model(format!("potential requested at R = {r} <= 0")));
        }
        if r > self.r_max() {
            out.fill(0.0);
            for i in 0..self.n {
                out[(i, i)] = self.asymptotes[i];
            }
            return Ok(());
        }
        let r_eval = if r < self.r_min() {
            if !self.clamp_warned.swap(true, Ordering::Relaxed) {
                log::warn!(
                    "potential evaluated at R = {r:.6} < grid start {:.6}; clamping",
                    self.r_min()
                );
            }
            self.r_min()
        } else {
            r
        };
        let seg = spline::find_segment(&self.grid, r_eval);
        for i in 0..self.n {
            for j in i..self.n {
                let e = self.tri_index(i, j);
                let v = spline::eval_segment(&self.grid, &self.y[e], &self.y2[e], seg, r_eval);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(())
    }

    /// Scalar averaged potential V̄(R) over the raw diagonal.
    pub fn averaged_potential(&self, r: f64, scheme: AveragingScheme) -> Result<f64> {
        self.averaged_potential_referenced(r, scheme, 0.0)
    }

    /// Averaged potential with every diagonal element first shifted by
    /// `-reference` (the entrance-channel asymptote in trajectory use).
    pub fn averaged_potential_referenced(
        &self,
        r: f64,
        scheme: AveragingScheme,
        reference: f64,
    ) -> Result<f64> {
        let m = self.potential_matrix(r)?;
        let diag: Vec<f64> = (0..self.n).map(|i| m[(i, i)] - reference).collect();
        averaged_diagonal(&diag, scheme, r)
    }

    /// Write the model back out in the potential table format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::new();
        let _ = writeln!(text, "# diabatic potential table (hartree / bohr)");
        let _ = writeln!(text, "n {}", self.n);
        let asym: Vec<String> = self.asymptotes.iter().map(|v| fmt_full(*v)).collect();
        let _ = writeln!(text, "asymptotes {}", asym.join(" "));
        let _ = writeln!(text, "labels {}", self.labels.join(" "));
        for (k, r) in self.grid.iter().enumerate() {
            let row: Vec<String> = self.values[k].iter().map(|v| fmt_full(*v)).collect();
            let _ = writeln!(text, "{} {}", fmt_full(*r), row.join(" "));
        }
        fs::write(path, text)?;
        Ok(())
    }
}

fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

/// Scheme average of an explicit diagonal; `r` only labels error messages.
pub fn averaged_diagonal(diag: &[f64], scheme: AveragingScheme, r: f64) -> Result<f64> {
    let n = diag.len();
    match scheme {
        AveragingScheme::Arithmetic => Ok(diag.iter().sum::<f64>() / n as f64),
        AveragingScheme::Channel(i) => {
            if i >= n {
                return Err(Error::model(format!(
                    "averaging channel {} out of range (n = {n})",
                    i + 1
                )));
            }
            Ok(diag[i])
        }
        AveragingScheme::Geometric => {
            // Defined only when the diagonal shares a sign; zeros are
            // sign-neutral. Any convention for mixed signs would be invented.
            let has_pos = diag.iter().any(|&v| v > 0.0);
            let has_neg = diag.iter().any(|&v| v < 0.0);
            if has_pos && has_neg {
                let offenders: Vec<String> = diag
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v < 0.0)
                    .map(|(i, _)| (i + 1).to_string())
                    .collect();
                return Err(Error::model(format!(
                    "geometric averaging undefined at R = {r}: mixed-sign diagonal \
                     (negative channels: {})",
                    offenders.join(", ")
                )));
            }
            if diag.iter().any(|&v| v == 0.0) {
                return Ok(0.0);
            }
            let sign = if has_neg { -1.0 } else { 1.0 };
            let log_mean = diag.iter().map(|&v| v.abs().ln()).sum::<f64>() / n as f64;
            Ok(sign * log_mean.exp())
        }
    }
}

// ---------------------------------------------------------------------------
// Table loader
// ---------------------------------------------------------------------------

/// Load a potential table. Format (hartree / bohr, `#` comments):
///
/// ```text
/// n 2
/// asymptotes 0.0 0.1
/// labels ground excited        (optional)
/// 1.0  0.5  0.01  0.6          (R, then the upper triangle row-major)
/// ...
/// ```
pub fn load_model(path: impl AsRef<Path>) -> Result<DiabaticModel> {
    load_model_with(path, DEFAULT_ASYM_TOL)
}

pub fn load_model_with(path: impl AsRef<Path>, asym_tol: f64) -> Result<DiabaticModel> {
    let text = fs::read_to_string(path)?;
    parse_model(&text, asym_tol)
}

fn parse_model(text: &str, asym_tol: f64) -> Result<DiabaticModel> {
    let mut n: Option<usize> = None;
    let mut asymptotes: Option<Vec<f64>> = None;
    let mut labels: Option<Vec<String>> = None;
    let mut grid = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap();
        match head {
            "n" => {
                let v = parts
                    .next()
                    .ok_or_else(|| parse_err(lineno, "missing channel count"))?;
                n = Some(v.parse().map_err(|_| parse_err(lineno, "bad channel count"))?);
            }
            "asymptotes" => {
                asymptotes = Some(parse_floats(parts, lineno)?);
            }
            "labels" => {
                labels = Some(parts.map(str::to_owned).collect());
            }
            _ => {
                let n = n.ok_or_else(|| parse_err(lineno, "data before `n` header"))?;
                let tri = n * (n + 1) / 2;
                let mut nums = parse_floats(std::iter::once(head).chain(parts), lineno)?;
                if nums.len() != tri + 1 {
                    return Err(parse_err(
                        lineno,
                        &format!("expected {} columns (R + upper triangle), got {}", tri + 1, nums.len()),
                    ));
                }
                let r = nums.remove(0);
                if let Some(&last) = grid.last() {
                    if r <= last {
                        return Err(parse_err(lineno, "grid not strictly increasing"));
                    }
                }
                grid.push(r);
                values.push(nums);
            }
        }
    }

    let n = n.ok_or_else(|| parse_err(0, "missing `n` header"))?;
    let asymptotes = asymptotes.ok_or_else(|| parse_err(0, "missing `asymptotes` header"))?;
    if asymptotes.len() != n {
        return Err(parse_err(0, "asymptote count differs from n"));
    }

    let mut model = DiabaticModel::from_samples(asymptotes, labels, grid, values)?;

    // Asymptote consistency at the outermost grid point: warn past asym_tol,
    // reject past the 10x hard limit.
    let last = model.values.last().unwrap().clone();
    let mut warnings = Vec::new();
    for i in 0..n {
        for j in i..n {
            let e = model.tri_index(i, j);
            let target = if i == j { model.asymptotes[i] } else { 0.0 };
            let dev = (last[e] - target).abs();
            if dev > 10.0 * asym_tol {
                return Err(Error::model(format!(
                    "V[{},{}] = {:.3e} at R_max deviates from asymptote {:.3e} beyond the hard limit",
                    i + 1,
                    j + 1,
                    last[e],
                    target
                )));
            }
            if dev > asym_tol {
                warnings.push(format!(
                    "V[{},{}] deviates from its asymptote by {dev:.3e} hartree at R_max",
                    i + 1,
                    j + 1
                ));
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    model.warnings = warnings;
    Ok(model)
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::Parse {
        line,
        msg: msg.to_owned(),
    }
}

fn parse_floats<'a>(parts: impl Iterator<Item = &'a str>, lineno: usize) -> Result<Vec<f64>> {
    parts
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| parse_err(lineno, &format!("bad number `{p}`")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Analytic builders
// ---------------------------------------------------------------------------

/// Radial sampling used by the analytic builders.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            r_min: 0.2,
            r_max: 40.0,
            points: 1991,
        }
    }
}

impl GridSpec {
    fn radii(&self) -> Result<Vec<f64>> {
        if self.points < 4 || !(self.r_max > self.r_min) || self.r_min <= 0.0 {
            return Err(Error::model("bad grid spec"));
        }
        let h = (self.r_max - self.r_min) / (self.points - 1) as f64;
        Ok((0..self.points).map(|k| self.r_min + h * k as f64).collect())
    }
}

/// Built-in analytic model families.
#[derive(Debug, Clone)]
pub enum AnalyticModel {
    /// Two linear diabats of slope `f1`, `f2` crossing at `r_x` with constant
    /// coupling `v12`. Asymptotes are pinned to the diabat values at the grid
    /// edge so the beyond-grid extrapolation stays continuous.
    LandauZener { f1: f64, f2: f64, v12: f64, r_x: f64 },
    /// Exponential diagonals and couplings:
    /// V_ii = E_i + A_ii·exp(−α_ii R), V_ij = A_ij·exp(−α_ij R).
    /// `amp`/`decay` are upper triangles in row-major order.
    ExponentialCoupling {
        asymptotes: Vec<f64>,
        amp: Vec<f64>,
        decay: Vec<f64>,
    },
    /// Deterministic pseudo-random n-channel system (exponential walls and
    /// couplings drawn from a seeded stream).
    SyntheticN { n: usize, seed: u64 },
}

/// Sample an analytic family onto a grid and build the spline model.
pub fn build_analytic(kind: &AnalyticModel, grid: GridSpec) -> Result<DiabaticModel> {
    match kind {
        AnalyticModel::LandauZener { f1, f2, v12, r_x } => {
            build_landau_zener(*f1, *f2, *v12, *r_x, grid)
        }
        AnalyticModel::ExponentialCoupling {
            asymptotes,
            amp,
            decay,
        } => build_exponential(asymptotes, amp, decay, grid, None),
        AnalyticModel::SyntheticN { n, seed } => build_synthetic(*n, *seed, grid),
    }
}

fn build_landau_zener(f1: f64, f2: f64, v12: f64, r_x: f64, grid: GridSpec) -> Result<DiabaticModel> {
    if !(r_x > grid.r_min && r_x < grid.r_max) {
        return Err(Error::model("crossing radius outside the grid"));
    }
    let radii = grid.radii()?;
    let values: Vec<Vec<f64>> = radii
        .iter()
        .map(|&r| vec![f1 * (r - r_x), v12, f2 * (r - r_x)])
        .collect();
    let asymptotes = vec![f1 * (grid.r_max - r_x), f2 * (grid.r_max - r_x)];
    DiabaticModel::from_samples(asymptotes, None, radii, values)
}

fn build_exponential(
    asymptotes: &[f64],
    amp: &[f64],
    decay: &[f64],
    grid: GridSpec,
    labels: Option<Vec<String>>,
) -> Result<DiabaticModel> {
    let n = asymptotes.len();
    if n < 1 {
        return Err(Error::model("channel count must be at least 1"));
    }
    let tri = n * (n + 1) / 2;
    if amp.len() != tri || decay.len() != tri {
        return Err(Error::model(format!(
            "amp/decay must hold the {tri}-element upper triangle"
        )));
    }
    if decay.iter().any(|&a| a <= 0.0) {
        return Err(Error::model("decay constants must be positive"));
    }
    let radii = grid.radii()?;
    let values: Vec<Vec<f64>> = radii
        .iter()
        .map(|&r| {
            let mut row = Vec::with_capacity(tri);
            let mut e = 0;
            for i in 0..n {
                for j in i..n {
                    let base = if i == j { asymptotes[i] } else { 0.0 };
                    row.push(base + amp[e] * (-decay[e] * r).exp());
                    e += 1;
                }
            }
            row
        })
        .collect();
    DiabaticModel::from_samples(asymptotes.to_vec(), labels, radii, values)
}

fn build_synthetic(n: usize, seed: u64, grid: GridSpec) -> Result<DiabaticModel> {
    if n < 1 {
        return Err(Error::model("channel count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Asymptotes spread upward from zero (entrance channel lowest).
    let mut asymptotes = vec![0.0];
    for _ in 1..n {
        let gap = rng.gen_range(0.012..0.045);
        asymptotes.push(asymptotes.last().unwrap() + gap);
    }
    let tri = n * (n + 1) / 2;
    let mut amp = vec![0.0; tri];
    let mut decay = vec![0.0; tri];
    let mut e = 0;
    for i in 0..n {
        for j in i..n {
            if i == j {
                amp[e] = rng.gen_range(6.0..25.0);
                decay[e] = rng.gen_range(1.2..1.6);
            } else {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                amp[e] = sign * rng.gen_range(0.12..0.45);
                decay[e] = rng.gen_range(0.75..1.15);
            }
            e += 1;
        }
    }
    let labels = (1..=n).map(|i| format!("syn{i}")).collect();
    build_exponential(&asymptotes, &amp, &decay, grid, Some(labels))
}

/// The canonical five-channel synthetic system used by the benchmark and
/// acceptance suites. Deterministic; at v0 = 0.5, b = 1.0, μ = 5000 every
/// final channel carries probability ≥ 0.03, so relative error comparisons
/// are meaningful on all of them.
pub fn synthetic_five() -> DiabaticModel {
    build_analytic(&AnalyticModel::SyntheticN { n: 5, seed: 2 }, GridSpec::default())
        .expect("static synthetic system is well formed")
}

/// The three-channel atom-atom excitation analog shipped for the
/// trajectory-limit studies (2.1 eV maximum internal gap, Na+He-like reduced
/// mass of 6214 a.u. is the conventional pairing in the CLI configs).
pub fn na_he_analog() -> DiabaticModel {
    let asymptotes = vec![0.0, 0.0735, 0.0772];
    let amp = vec![
        28.0, // 1,1 wall
        0.35, // 1,2
        0.18, // 1,3
        40.0, // 2,2 wall
        0.45, // 2,3
        34.0, // 3,3 wall
    ];
    let decay = vec![1.25, 0.85, 0.95, 1.35, 1.05, 1.30];
    build_exponential(
        &asymptotes,
        &amp,
        &decay,
        GridSpec::default(),
        Some(vec!["3s".into(), "3p0".into(), "3p1".into()]),
    )
    .expect("static analog model is well formed")
}
