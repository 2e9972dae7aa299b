//! Flat key-value run configuration with section prefixes.
//!
//! Grammar: one `section.key = value` pair per line, `#` starts a comment,
//! blank lines ignored. See the repository README for the full key list.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ccscatter::potmodel::{
    build_analytic, load_model, na_he_analog, synthetic_five, AnalyticModel, AveragingScheme,
    DiabaticModel, GridSpec,
};
use ccscatter::propagators::{Method, PropagatorConfig, SpectralBoundsMode};
use ccscatter::scattering::{CollisionOptions, ScanOptions};
use ccscatter::trajectory::TrajectoryKind;
use sha2::{Digest, Sha256};

/// Configuration error with the offending key, mapped to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type CResult<T> = Result<T, ConfigError>;

fn cerr<T>(msg: impl Into<String>) -> CResult<T> {
    Err(ConfigError(msg.into()))
}

/// Raw parsed key-value pairs plus the original text (hashed for headers).
pub struct RawConfig {
    entries: BTreeMap<String, String>,
    text: String,
}

impl RawConfig {
    pub fn parse(text: &str) -> CResult<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return cerr(format!("line {}: expected `key = value`", lineno + 1));
            };
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim().to_owned();
            if entries.insert(key.clone(), value).is_some() {
                return cerr(format!("line {}: duplicate key `{key}`", lineno + 1));
            }
        }
        Ok(RawConfig {
            entries,
            text: text.to_owned(),
        })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn f64_or(&self, key: &str, default: f64) -> CResult<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| ConfigError(format!("`{key}`: bad number `{v}`"))),
        }
    }

    fn f64_req(&self, key: &str) -> CResult<f64> {
        match self.get(key) {
            None => cerr(format!("missing required key `{key}`")),
            Some(v) => v
                .parse()
                .map_err(|_| ConfigError(format!("`{key}`: bad number `{v}`"))),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> CResult<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| ConfigError(format!("`{key}`: bad integer `{v}`"))),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> CResult<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => cerr(format!("`{key}`: expected true/false, got `{v}`")),
        }
    }

    fn f64_list(&self, key: &str) -> CResult<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| ConfigError(format!("`{key}`: bad number `{p}`")))
                })
                .collect::<CResult<Vec<f64>>>()
                .map(Some),
        }
    }
}

/// Benchmark settings carried by the config.
pub struct BenchSettings {
    pub reference_dt: f64,
    pub repetitions: usize,
    /// "standard" (the full method/preconditioning grid) or "quick".
    pub grid: String,
}

/// Everything a subcommand needs, resolved and validated.
pub struct RunConfig {
    pub model: DiabaticModel,
    pub source_desc: String,
    pub v0_list: Vec<f64>,
    pub b: f64,
    pub mu: f64,
    pub initial_channel: usize,
    pub kind: TrajectoryKind,
    pub prop: PropagatorConfig,
    pub copts: CollisionOptions,
    pub sopts: ScanOptions,
    pub ehrenfest: bool,
    pub g_max_mhz: f64,
    pub t_meas_ns: f64,
    pub device_prop: PropagatorConfig,
    pub mapping_samples: usize,
    pub bench: BenchSettings,
    pub out_dir: PathBuf,
    pub config_hash: String,
}

/// Load and resolve a config file; `seed` and `out` override their config
/// keys, `ehrenfest` turns the relabeling on regardless of the config.
pub fn load(
    path: &Path,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
    ehrenfest_flag: bool,
) -> CResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    let raw = RawConfig::parse(&text)?;

    let (model, source_desc) = build_model(&raw, path, seed_override)?;
    let n = model.n_channels();

    let v0_list = match raw.f64_list("geometry.v0_list")? {
        Some(list) if !list.is_empty() => list,
        Some(_) => return cerr("`geometry.v0_list` must not be empty"),
        None => vec![raw.f64_req("geometry.v0")?],
    };
    if v0_list.iter().any(|&v| v <= 0.0) {
        return cerr("initial speeds must all be positive");
    }
    let b = raw.f64_or("geometry.b", 1.0)?;
    let mu = raw.f64_req("geometry.mu")?;
    if mu <= 0.0 {
        return cerr("`geometry.mu` must be positive");
    }

    let initial_1 = raw.usize_or("channels.initial", 1)?;
    if initial_1 < 1 || initial_1 > n {
        return cerr(format!(
            "`channels.initial` = {initial_1} out of range 1..={n}"
        ));
    }
    let initial_channel = initial_1 - 1;

    let scheme = parse_scheme(raw.get("trajectory.averaging").unwrap_or("arithmetic"), n)?;
    let kind = match raw.get("trajectory.kind").unwrap_or("straight") {
        "straight" | "straight_line" => TrajectoryKind::StraightLine,
        "curvilinear" => TrajectoryKind::Curvilinear(scheme),
        other => return cerr(format!("`trajectory.kind`: unknown kind `{other}`")),
    };

    let prop = parse_propagator(&raw, "propagator", Method::FehlbergRk, 1e-6, 0.05)?;
    let device_prop = parse_propagator(&raw, "device", Method::FehlbergRk, 1e-8, 0.05)?;

    let mut copts = CollisionOptions::default();
    if let Some(v) = raw.get("trajectory.start_radius") {
        let r: f64 = v
            .parse()
            .map_err(|_| ConfigError(format!("`trajectory.start_radius`: bad number `{v}`")))?;
        if r <= 0.0 {
            return cerr("`trajectory.start_radius` must be positive");
        }
        copts.start_radius = Some(r);
    }

    let sopts = ScanOptions {
        db: raw.f64_or("scan.db", 0.1)?,
        eps_b: raw.f64_or("scan.eps_b", 1e-4)?,
        b_cap: raw.f64_or("scan.b_cap", 50.0)?,
        refine_jump: raw.f64_or("scan.refine_jump", 0.05)?,
        chunk: raw.usize_or("scan.chunk", 16)?,
    };
    if sopts.db <= 0.0 || sopts.eps_b <= 0.0 || sopts.b_cap <= 0.0 {
        return cerr("scan parameters must be positive");
    }

    let ehrenfest = ehrenfest_flag || raw.bool_or("ehrenfest.enabled", false)?;

    let bench = BenchSettings {
        reference_dt: raw.f64_or("bench.reference_dt", 1e-5)?,
        repetitions: raw.usize_or("bench.repetitions", 3)?,
        grid: raw.get("bench.grid").unwrap_or("standard").to_owned(),
    };

    let out_dir = out_override
        .map(Path::to_path_buf)
        .or_else(|| raw.get("output.dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    // Hash the config text plus the effective overrides so rerun identity is
    // checkable from any output file.
    let mut hasher = Sha256::new();
    hasher.update(raw.text.as_bytes());
    let mut overrides = String::new();
    let _ = write!(overrides, "|seed={seed_override:?}|ehrenfest={ehrenfest_flag}");
    hasher.update(overrides.as_bytes());
    let config_hash = hex_prefix(&hasher.finalize(), 16);

    Ok(RunConfig {
        model,
        source_desc,
        v0_list,
        b,
        mu,
        initial_channel,
        kind,
        prop,
        copts,
        sopts,
        ehrenfest,
        g_max_mhz: raw.f64_or("device.g_max_mhz", 50.0)?,
        t_meas_ns: raw.f64_or("device.t_meas_ns", 100.0)?,
        device_prop,
        mapping_samples: raw.usize_or("device.mapping_samples", 20001)?,
        bench,
        out_dir,
        config_hash,
    })
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::new();
    for b in bytes {
        let _ = write!(s, "{b:02x}");
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}

fn parse_scheme(text: &str, n: usize) -> CResult<AveragingScheme> {
    match text {
        "arithmetic" => Ok(AveragingScheme::Arithmetic),
        "geometric" => Ok(AveragingScheme::Geometric),
        other => {
            if let Some(num) = other.strip_prefix("channel:") {
                let c: usize = num
                    .parse()
                    .map_err(|_| ConfigError(format!("bad averaging channel `{num}`")))?;
                if c < 1 || c > n {
                    return cerr(format!("averaging channel {c} out of range 1..={n}"));
                }
                Ok(AveragingScheme::Channel(c - 1))
            } else {
                cerr(format!("unknown averaging scheme `{other}`"))
            }
        }
    }
}

fn parse_propagator(
    raw: &RawConfig,
    section: &str,
    default_method: Method,
    default_tol: f64,
    default_dt: f64,
) -> CResult<PropagatorConfig> {
    let method = match raw.get(&format!("{section}.method")) {
        None => default_method,
        Some("crank_nicolson") => Method::CrankNicolson,
        Some("chebyshev") => Method::Chebyshev,
        Some("rk4") => Method::Rk4,
        Some("fehlberg") => Method::FehlbergRk,
        Some("diagonalization") => Method::Diagonalization,
        Some(other) => return cerr(format!("`{section}.method`: unknown method `{other}`")),
    };
    let dt = raw.f64_or(&format!("{section}.dt"), default_dt)?;
    let tol_key = format!("{section}.local_error_bound");
    let local_error_bound = match raw.get(&tol_key) {
        Some(v) => Some(
            v.parse()
                .map_err(|_| ConfigError(format!("`{tol_key}`: bad number `{v}`")))?,
        ),
        None if method == Method::FehlbergRk => Some(default_tol),
        None => None,
    };
    let bounds_mode = match raw.get(&format!("{section}.eigen_bounds")) {
        None | Some("gershgorin") => SpectralBoundsMode::Gershgorin,
        Some("exact") => SpectralBoundsMode::Exact,
        Some(other) => return cerr(format!("`{section}.eigen_bounds`: unknown mode `{other}`")),
    };
    let cfg = PropagatorConfig {
        method,
        dt,
        local_error_bound,
        precondition: raw.bool_or(&format!("{section}.precondition"), false)?,
        bounds_mode,
    };
    cfg.validate()
        .map_err(|e| ConfigError(format!("`{section}`: {e}")))?;
    Ok(cfg)
}

fn build_model(
    raw: &RawConfig,
    config_path: &Path,
    seed_override: Option<u64>,
) -> CResult<(DiabaticModel, String)> {
    let source = raw
        .get("potential.source")
        .ok_or_else(|| ConfigError("missing required key `potential.source`".into()))?;
    let grid = match raw.f64_list("potential.grid")? {
        None => GridSpec::default(),
        Some(v) if v.len() == 3 => GridSpec {
            r_min: v[0],
            r_max: v[1],
            points: v[2] as usize,
        },
        Some(_) => return cerr("`potential.grid` wants `rmin,rmax,points`"),
    };

    let (kind_name, args) = source.split_once(':').unwrap_or((source, ""));
    let model = match kind_name {
        "file" => {
            if args.is_empty() {
                return cerr("`potential.source = file:PATH` needs a path");
            }
            // Relative paths resolve against the config file's directory.
            let p = Path::new(args);
            let p = if p.is_relative() {
                config_path.parent().unwrap_or(Path::new(".")).join(p)
            } else {
                p.to_path_buf()
            };
            return load_model(&p)
                .map(|m| (m, format!("file:{}", p.display())))
                .map_err(|e| ConfigError(format!("loading potential table: {e}")));
        }
        "nahe_analog" => na_he_analog(),
        "synthetic_five" => synthetic_five(),
        "synthetic" => {
            let kv = parse_kv(args)?;
            let n = kv_usize(&kv, "n")?;
            let seed = seed_override.unwrap_or(kv_u64(&kv, "seed").unwrap_or(2));
            build_analytic(&AnalyticModel::SyntheticN { n, seed }, grid)
                .map_err(|e| ConfigError(e.to_string()))?
        }
        "landau_zener" => {
            let kv = parse_kv(args)?;
            build_analytic(
                &AnalyticModel::LandauZener {
                    f1: kv_f64(&kv, "f1")?,
                    f2: kv_f64(&kv, "f2")?,
                    v12: kv_f64(&kv, "v12")?,
                    r_x: kv_f64(&kv, "rx")?,
                },
                grid,
            )
            .map_err(|e| ConfigError(e.to_string()))?
        }
        "exp_coupling" => {
            let kv = parse_kv(args)?;
            build_exp_coupling(&kv, grid)?
        }
        other => return cerr(format!("unknown potential source `{other}`")),
    };
    Ok((model, source.to_owned()))
}

fn parse_kv(args: &str) -> CResult<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for part in args.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let Some((k, v)) = part.split_once('=') else {
            return cerr(format!("bad source argument `{part}` (want key=value)"));
        };
        kv.insert(k.trim().to_ascii_lowercase(), v.trim().to_owned());
    }
    Ok(kv)
}

fn kv_f64(kv: &BTreeMap<String, String>, key: &str) -> CResult<f64> {
    kv.get(key)
        .ok_or_else(|| ConfigError(format!("missing source argument `{key}`")))?
        .parse()
        .map_err(|_| ConfigError(format!("bad source argument `{key}`")))
}

fn kv_usize(kv: &BTreeMap<String, String>, key: &str) -> CResult<usize> {
    kv.get(key)
        .ok_or_else(|| ConfigError(format!("missing source argument `{key}`")))?
        .parse()
        .map_err(|_| ConfigError(format!("bad source argument `{key}`")))
}

fn kv_u64(kv: &BTreeMap<String, String>, key: &str) -> Option<u64> {
    kv.get(key).and_then(|v| v.parse().ok())
}

/// `exp_coupling:e1=0,e2=0.05,a11=8,alpha11=1.3,a12=0.05,alpha12=1.0,...`
/// Channel count comes from the e<i> keys; missing amplitudes default to 0
/// and missing decays to 1.
fn build_exp_coupling(kv: &BTreeMap<String, String>, grid: GridSpec) -> CResult<DiabaticModel> {
    let mut n = 0;
    while kv.contains_key(&format!("e{}", n + 1)) {
        n += 1;
    }
    if n == 0 {
        return cerr("exp_coupling needs asymptotes e1..eN");
    }
    if n > 9 {
        return cerr("exp_coupling indices are single digits (n <= 9)");
    }
    let mut asymptotes = Vec::with_capacity(n);
    for i in 1..=n {
        asymptotes.push(kv_f64(kv, &format!("e{i}"))?);
    }
    let tri = n * (n + 1) / 2;
    let mut amp = Vec::with_capacity(tri);
    let mut decay = Vec::with_capacity(tri);
    for i in 1..=n {
        for j in i..=n {
            amp.push(kv_f64(kv, &format!("a{i}{j}")).unwrap_or(0.0));
            decay.push(kv_f64(kv, &format!("alpha{i}{j}")).unwrap_or(1.0));
        }
    }
    build_analytic(
        &AnalyticModel::ExponentialCoupling {
            asymptotes,
            amp,
            decay,
        },
        grid,
    )
    .map_err(|e| ConfigError(e.to_string()))
}
