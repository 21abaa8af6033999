//! Command-line driver: JSON experiment configs, truncation presets and
//! reproducible JSON/CSV/SVG reports.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::coder::{alphabet, contraction_fit, AlphabetTruncation, GroupSpec};
use crate::countlab::{
    asymptotic_fit, c_j_structure, dop_criterion, exact_orbit_count, orbital_count, renewal_w_fourier, tail_sum, BandLimited,
    RenewalMeasure, SlowlyVaryingModel,
};
use crate::cusp::{tau_a, tau_abeta, Pinching, Profile, TableProfile};
use crate::error::Error;
use crate::hypcore::{busemann, BoundaryPoint, DiskPoint};
use crate::metric::{calibrate, Calibration, PerturbedMetric, RoofModel};
use crate::plot::{Plot, Series};
use crate::transfer::{critical_exponent, fit_local_expansion, lambda_curve, sweep_b, Grid, OperatorTruncation, TransferOperator};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "cusplab",
    version,
    about = "Critical exponents and orbit counting for cusp-perturbed ping-pong groups"
)]
pub struct Cli {
    /// JSON experiment config; defaults describe the hyperbolic standard group.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for `<command>.json`, `.csv` and `.svg`.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Preset (`coarse`, `standard`, `fine`) or `custom` to use the config's `truncation`.
    #[arg(long, global = true)]
    pub truncation: Option<String>,
    /// Seed of the sampling diagnostics.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Ping-pong checks, calibration and sampled invariants.
    GroupCheck,
    /// Critical exponent of the transfer operator.
    Exponent,
    /// Band parameter `b*` with `ρ(L_{b*,δ}) = 1`.
    SweepB,
    /// Orbital counts and their compensated asymptotics.
    Count,
    /// Parabolic tail sums and the special-series test.
    Tail,
    /// Dominant eigenvalue `λ_t` near `t = 0` and its local fit.
    Lambda,
    /// Renewal sums, time domain against Fourier side.
    Renewal,
    /// Convergence certificate for the dominant cusp.
    CertifyConvergent,
    /// Divergence certificate for the dominant cusp.
    CertifyDivergent,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GroupCheck => "group-check",
            Command::Exponent => "exponent",
            Command::SweepB => "sweep-b",
            Command::Count => "count",
            Command::Tail => "tail",
            Command::Lambda => "lambda",
            Command::Renewal => "renewal",
            Command::CertifyConvergent => "certify-convergent",
            Command::CertifyDivergent => "certify-divergent",
        }
    }
}

/// Cusp profile as written in a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Hyperbolic,
    ExpRate {
        omega: f64,
    },
    PolyLog {
        omega: f64,
        kappa_tail: f64,
    },
    /// CSV `t,tau` table, path relative to the config file.
    Table {
        path: PathBuf,
        omega: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CuspSpec {
    pub profile: ProfileSpec,
    /// Height where the profile leaves the hyperbolic one; defaults to the disjointness height.
    #[serde(default)]
    pub a: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    pub b: f64,
    pub pinching: Pinching,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    pub n_max: u32,
    pub m_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExponentSpec {
    pub s_lo: f64,
    pub s_hi: f64,
    pub tol: f64,
    pub samples: usize,
}

impl Default for ExponentSpec {
    fn default() -> Self {
        Self {
            s_lo: 0.5,
            s_hi: 3.0,
            tol: 1e-9,
            samples: 21,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub b_lo: f64,
    pub b_hi: f64,
    pub tol_b: f64,
    pub ds: f64,
    pub samples: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            b_lo: 0.0,
            b_hi: 250.0,
            tol_b: 1e-6,
            ds: 0.05,
            samples: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMethod {
    /// Enumerate canonical block words with bracketed distances.
    Enumerate,
    /// Busemann counts from the binned renewal measure at `s = 1`.
    Renewal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountSpec {
    pub method: CountMethod,
    pub r_min: f64,
    pub r_max: f64,
    pub r_step: f64,
    pub budget: u64,
    /// Exponent of the compensation `R^{1−κ}L(R)e^{−δR}`.
    pub kappa: f64,
    /// Fit window; defaults to the top decade `[R_max/10, R_max]`.
    pub window: Option<(f64, f64)>,
    /// Renewal points `x_j`; empty means every cusp.
    pub points: Vec<usize>,
    pub bin: f64,
    pub max_steps: usize,
}

impl Default for CountSpec {
    fn default() -> Self {
        Self {
            method: CountMethod::Enumerate,
            r_min: 1.0,
            r_max: 10.0,
            r_step: 0.5,
            budget: 50_000_000,
            kappa: 1.0,
            window: None,
            points: Vec::new(),
            bin: 0.05,
            max_steps: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
    pub two_sided: bool,
    /// Defaults to the tail exponent of a `poly_log` dominant profile, else 1.
    pub kappa: Option<f64>,
    pub horizon: f64,
}

impl Default for TailSpec {
    fn default() -> Self {
        Self {
            t_min: 5.0,
            t_max: 40.0,
            points: 15,
            two_sided: false,
            kappa: None,
            horizon: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
    pub tol_gap: f64,
    pub min_r2: f64,
}

impl Default for LambdaSpec {
    fn default() -> Self {
        Self {
            t_min: 1e-3,
            t_max: 1e-1,
            points: 25,
            tol_gap: 1e-3,
            min_r2: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenewalSpec {
    pub s: f64,
    pub r: Vec<f64>,
    pub psi: Vec<BandLimited>,
    pub point: usize,
    pub bin: f64,
    pub b_max: f64,
    pub tol: f64,
    pub max_steps: usize,
    pub rel_tol: f64,
}

impl Default for RenewalSpec {
    fn default() -> Self {
        Self {
            s: 0.9,
            r: vec![5.0, 10.0, 15.0],
            psi: vec![
                BandLimited {
                    center: 0.0,
                    half_width: 1.0,
                },
                BandLimited {
                    center: 0.0,
                    half_width: 2.0,
                },
                BandLimited {
                    center: 1.5,
                    half_width: 1.0,
                },
            ],
            point: 1,
            bin: 0.05,
            b_max: 75.0,
            tol: 1e-12,
            max_steps: 5000,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySpec {
    /// Band parameter of the certificate; defaults to the sweep bracket end
    /// (`b_lo` for convergence, `b_hi` for divergence) when a band is configured.
    pub b: Option<f64>,
    pub a: f64,
    pub n_partial: u32,
    pub m_max: usize,
}

impl Default for CertifySpec {
    fn default() -> Self {
        Self {
            b: None,
            a: 2.0,
            n_partial: 200,
            m_max: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSpec {
    pub triples: usize,
    pub contraction_len: usize,
    pub words_per_len: usize,
    pub points_per_arc: usize,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            triples: 10_000,
            contraction_len: 6,
            words_per_len: 40,
            points_per_arc: 9,
        }
    }
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Anchor angles `ξ₁, η₁, …, ξ_r, η_r` in counterclockwise order.
    pub angles: Vec<f64>,
    pub eps_class: f64,
    pub calibration: CalibrationSpec,
    /// One entry per cusp; empty means every cusp hyperbolic.
    pub cusps: Vec<CuspSpec>,
    pub a0: Option<f64>,
    pub dominant: usize,
    pub band: Option<BandSpec>,
    pub truncation: Option<OperatorTruncation>,
    /// Exponent for tail, sweep and certificates; others fall back to `δ̂`.
    pub delta: Option<f64>,
    pub slowly_varying: SlowlyVaryingModel,
    pub exponent: ExponentSpec,
    pub sweep: SweepSpec,
    pub count: CountSpec,
    pub tail: TailSpec,
    pub lambda: LambdaSpec,
    pub renewal: RenewalSpec,
    pub certify: CertifySpec,
    pub diagnostics: DiagnosticsSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            angles: vec![0.0, PI / 2.0, PI, 1.5 * PI],
            eps_class: 1e-8,
            calibration: CalibrationSpec { n_max: 50, m_max: 6 },
            cusps: Vec::new(),
            a0: None,
            dominant: 1,
            band: None,
            truncation: None,
            delta: None,
            slowly_varying: SlowlyVaryingModel::default(),
            exponent: ExponentSpec::default(),
            sweep: SweepSpec::default(),
            count: CountSpec::default(),
            tail: TailSpec::default(),
            lambda: LambdaSpec::default(),
            renewal: RenewalSpec::default(),
            certify: CertifySpec::default(),
            diagnostics: DiagnosticsSpec::default(),
        }
    }
}

/// Named truncations; `None` for unknown names.
pub fn preset(name: &str) -> Option<OperatorTruncation> {
    let (n_max, m_max, grid) = match name {
        "coarse" => (20, 2, 64),
        "standard" => (50, 4, 128),
        "fine" => (100, 6, 256),
        _ => return None,
    };
    Some(OperatorTruncation {
        n_max,
        m_max,
        grid,
        roof: RoofModel::BusemannCorrected,
        closure: true,
    })
}

/// Failure with its exit code and a machine-readable kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub kind: String,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            kind: "Config".into(),
            message: message.into(),
        }
    }

    fn certificate(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            kind: "CertificateFailed".into(),
            message: message.into(),
        }
    }
}

/// 2: config or invariant, 3: certificate or bracket, 4: budget.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::BudgetExceeded(_) => 4,
        Error::BracketFailure { .. }
        | Error::GapCollapse(_)
        | Error::PoorFit(_)
        | Error::ResolventIllConditioned(_)
        | Error::NonConvergence { .. }
        | Error::NotPositive { .. } => 3,
        _ => 2,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::OutsideDisk(_) => "OutsideDisk",
        Error::CoincidentPoints => "CoincidentPoints",
        Error::InfiniteProduct => "InfiniteProduct",
        Error::InvalidArgument(_) => "InvalidArgument",
        Error::AnchorOrder => "AnchorOrder",
        Error::NotParabolic { .. } => "NotParabolic",
        Error::PingPong(_) => "PingPong",
        Error::Pinching(_) => "Pinching",
        Error::DisplacementTooLarge { .. } => "DisplacementTooLarge",
        Error::OutsideK => "OutsideK",
        Error::NoConvergence(_) => "NoConvergence",
        Error::NonConvergence { .. } => "NonConvergence",
        Error::NotPositive { .. } => "NotPositive",
        Error::BracketFailure { .. } => "BracketFailure",
        Error::GapCollapse(_) => "GapCollapse",
        Error::PoorFit(_) => "PoorFit",
        Error::BudgetExceeded(_) => "BudgetExceeded",
        Error::CandidatesExhausted => "CandidatesExhausted",
        Error::ResolventIllConditioned(_) => "ResolventIllConditioned",
        Error::Config(_) => "Config",
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            kind: error_kind(&e).into(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 2,
            kind: "Io".into(),
            message: e.to_string(),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Formats a float with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Rows for a CSV file.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// Loads and validates a config; `path = None` gives the defaults.
pub fn load_config(path: Option<&Path>) -> Outcome<(ExperimentConfig, PathBuf)> {
    let Some(path) = path else {
        return Ok((ExperimentConfig::default(), PathBuf::from(".")));
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, dir))
}

/// Truncation from the flag, else the config, else the `standard` preset.
pub fn resolve_truncation(flag: Option<&str>, cfg: &ExperimentConfig) -> Outcome<OperatorTruncation> {
    match flag {
        Some("custom") => cfg
            .truncation
            .ok_or_else(|| Failure::config("--truncation custom needs a `truncation` section in the config")),
        Some(name) => preset(name).ok_or_else(|| Failure::config(format!("unknown truncation preset `{name}`"))),
        None => Ok(cfg.truncation.unwrap_or_else(|| preset("standard").expect("preset"))),
    }
}

/// SHA-256 of the canonical JSON of the config with the truncation resolved.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything a command needs: validated config, group and calibration.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub tr: OperatorTruncation,
    pub spec: GroupSpec,
    pub calibration: Calibration,
    pub seed: u64,
    base_dir: PathBuf,
}

impl Context {
    pub fn new(mut cfg: ExperimentConfig, base_dir: PathBuf, tr: OperatorTruncation, seed: u64) -> Outcome<Self> {
        cfg.truncation = Some(tr);
        let hash = config_hash(&cfg);
        cfg.slowly_varying.validate()?;
        let spec = GroupSpec::build(&cfg.angles, cfg.eps_class)?;
        tr.validate(spec.r)?;
        if !cfg.cusps.is_empty() && cfg.cusps.len() != spec.r {
            return Err(Failure::config(format!(
                "config lists {} cusps for a group with {}",
                cfg.cusps.len(),
                spec.r
            )));
        }
        if cfg.dominant == 0 || cfg.dominant > spec.r {
            return Err(Failure::config(format!("dominant cusp {} is not in 1..={}", cfg.dominant, spec.r)));
        }
        let calibration = calibrate(
            &spec,
            AlphabetTruncation {
                n_max: cfg.calibration.n_max,
                m_max: cfg.calibration.m_max,
            },
        )?;
        Ok(Context {
            cfg,
            hash,
            tr,
            spec,
            calibration,
            seed,
            base_dir,
        })
    }

    fn cusp_spec(&self, i: usize) -> CuspSpec {
        self.cfg.cusps.get(i - 1).cloned().unwrap_or(CuspSpec {
            profile: ProfileSpec::Hyperbolic,
            a: None,
        })
    }

    fn base_profile(&self, p: &ProfileSpec) -> Outcome<Profile> {
        Ok(match p {
            ProfileSpec::Hyperbolic => Profile::Hyperbolic,
            ProfileSpec::ExpRate { omega } => Profile::exp_rate(*omega)?,
            ProfileSpec::PolyLog { omega, kappa_tail } => Profile::poly_log(*omega, *kappa_tail)?,
            ProfileSpec::Table { path, omega } => {
                let full = self.base_dir.join(path);
                let text = fs::read_to_string(&full).map_err(|e| Failure::config(format!("cannot read {}: {e}", full.display())))?;
                Profile::Table(TableProfile::from_csv(&text, *omega)?)
            }
        })
    }

    /// Band parameter used when a command does not sweep it.
    pub fn band_b(&self) -> f64 {
        self.cfg.band.map_or(0.0, |b| b.b)
    }

    /// The metric with band parameter `b` on the dominant cusp.
    pub fn metric(&self, b: f64) -> Outcome<PerturbedMetric> {
        let h0 = self.calibration.horoball_height;
        let mut heights = vec![self.cfg.a0.unwrap_or(h0)];
        let mut profiles = Vec::with_capacity(self.spec.r);
        for i in 1..=self.spec.r {
            let c = self.cusp_spec(i);
            let a = c.a.unwrap_or(h0);
            let inner = self.base_profile(&c.profile)?;
            let p = match (&self.cfg.band, i == self.cfg.dominant) {
                (Some(band), true) => tau_abeta(inner, a, b, band.pinching)?,
                _ if inner == Profile::Hyperbolic => Profile::Hyperbolic,
                _ => tau_a(inner, a)?,
            };
            heights.push(a);
            profiles.push(p);
        }
        Ok(PerturbedMetric::new(
            self.spec.clone(),
            self.calibration.clone(),
            profiles,
            &heights,
            b,
            self.cfg.dominant,
            self.tr.n_max,
        )?)
    }

    fn all_hyperbolic(&self) -> bool {
        self.cfg.band.is_none() && (1..=self.spec.r).all(|i| self.cusp_spec(i).profile == ProfileSpec::Hyperbolic)
    }

    fn required_delta(&self, what: &str) -> Outcome<f64> {
        self.cfg
            .delta
            .ok_or_else(|| Failure::config(format!("{what} needs `delta` in the config")))
    }

    /// Configured `δ`, else the critical exponent of `op`.
    fn delta_or_exponent(&self, op: &TransferOperator) -> Outcome<f64> {
        match self.cfg.delta {
            Some(d) => Ok(d),
            None => {
                let e = &self.cfg.exponent;
                Ok(critical_exponent(op, e.s_lo, e.s_hi, e.tol)?.delta)
            }
        }
    }

    /// Provenance block shared by every output.
    pub fn provenance(&self, command: &str) -> Value {
        json!({
            "command": command,
            "library_version": VERSION,
            "config_hash": self.hash,
            "seed": self.seed,
            "truncation": self.tr,
            "calibration": {
                "horoball_height": self.calibration.horoball_height,
                "c_junction": self.calibration.c_junction,
                "c_buse": self.calibration.c_buse,
                "c_horo": self.calibration.c_horo,
                "c_diam": self.calibration.c_diam,
                "d_min": self.calibration.d_min,
                "truncation": self.calibration.truncation,
            },
        })
    }

    fn provenance_pairs(&self, command: &str) -> Vec<(String, String)> {
        let c = &self.calibration;
        vec![
            ("command".into(), command.into()),
            ("library_version".into(), VERSION.into()),
            ("config_hash".into(), self.hash.clone()),
            ("seed".into(), self.seed.to_string()),
            ("truncation".into(), serde_json::to_string(&self.tr).expect("truncation serializes")),
            (
                "calibration".into(),
                format!(
                    "h0={} c_junction={} c_buse={} c_horo={} c_diam={} d_min={}",
                    num(c.horoball_height),
                    num(c.c_junction),
                    num(c.c_buse),
                    num(c.c_horo),
                    num(c.c_diam),
                    num(c.d_min)
                ),
            ),
        ]
    }
}

/// Outputs of one command.
pub struct Report {
    pub result: Value,
    pub table: Option<Table>,
    pub plot: Option<Plot>,
    /// Set when the outputs are written but the command must still fail.
    pub failure: Option<Failure>,
}

fn csv_text(pairs: &[(String, String)], table: &Table) -> Outcome<String> {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Failure {
        code: 2,
        kind: "Io".into(),
        message: e.to_string(),
    };
    w.write_record(&table.header).map_err(io)?;
    for row in &table.rows {
        w.write_record(row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure {
        code: 2,
        kind: "Io".into(),
        message: e.to_string(),
    })?;
    out.push_str(&String::from_utf8(bytes).expect("csv is utf-8"));
    Ok(out)
}

/// Writes `<name>.json`, `<name>.csv` and `<name>.svg` into `out`.
pub fn write_report(ctx: &Context, command: &str, out: &Path, report: &Report) -> Outcome<()> {
    fs::create_dir_all(out)?;
    let mut doc = ctx.provenance(command);
    doc["status"] = match &report.failure {
        None => json!("ok"),
        Some(f) => json!({"failed": f.kind, "message": f.message, "exit_code": f.code}),
    };
    doc["result"] = report.result.clone();
    let text = serde_json::to_string_pretty(&doc).expect("report serializes") + "\n";
    fs::write(out.join(format!("{command}.json")), text)?;
    let pairs = ctx.provenance_pairs(command);
    if let Some(t) = &report.table {
        fs::write(out.join(format!("{command}.csv")), csv_text(&pairs, t)?)?;
    }
    if let Some(p) = &report.plot {
        let mut p = p.clone();
        p.metadata = pairs;
        fs::write(out.join(format!("{command}.svg")), p.render())?;
    }
    Ok(())
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

fn lin_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + step * k as f64).collect()
}

fn plot(title: &str, x: &str, y: &str, log_x: bool, log_y: bool, series: Vec<Series>) -> Plot {
    Plot {
        title: title.into(),
        x_label: x.into(),
        y_label: y.into(),
        log_x,
        log_y,
        series,
        ..Default::default()
    }
}

fn random_disk_point(rng: &mut ChaCha8Rng) -> DiskPoint {
    let r = 0.95 * rng.gen::<f64>().sqrt();
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    DiskPoint::from_polar(r, theta).expect("inside the disk")
}

fn group_check(ctx: &Context) -> Outcome<Report> {
    let spec = &ctx.spec;
    let d = ctx.cfg.diagnostics;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut cocycle = 0.0f64;
    for _ in 0..d.triples {
        let xi = BoundaryPoint::new(rng.gen_range(0.0..std::f64::consts::TAU));
        let (p, q, r) = (
            random_disk_point(&mut rng),
            random_disk_point(&mut rng),
            random_disk_point(&mut rng),
        );
        cocycle = cocycle.max((busemann(xi, p, r) - busemann(xi, p, q) - busemann(xi, q, r)).abs());
    }
    let alpha = alphabet(spec.r, ctx.tr.alphabet());
    let fit = contraction_fit(spec, &alpha, d.contraction_len, d.words_per_len, d.points_per_arc, ctx.seed);
    let m = ctx.metric(ctx.band_b())?;
    let grid = Grid::new(spec, ctx.tr.grid);
    let (mut violations, mut roof_min, mut checked) = (0u64, f64::INFINITY, 0u64);
    for b in &alpha {
        let db = m.block_distance(b)?;
        for k in 0..grid.len() {
            let x = grid.point(k);
            if !spec.in_k(b, x) {
                continue;
            }
            let rv = m.roof(b, x, RoofModel::BusemannCorrected)?;
            checked += 1;
            roof_min = roof_min.min(rv.value);
            if rv.clamped || rv.value > db + 1e-12 || rv.value < db - ctx.calibration.c_buse - 1e-12 {
                violations += 1;
            }
        }
    }
    let mut table = Table::new(&["blocks", "sup_derivative"]);
    for &(k, s) in &fit.sup_by_length {
        table.rows.push(vec![k.to_string(), num(s)]);
    }
    let series = vec![Series {
        label: "sup |γ'|".into(),
        points: fit.sup_by_length.iter().map(|&(k, s)| (k as f64, s)).collect(),
    }];
    let invariants_hold = cocycle < 1e-8 && violations == 0 && fit.ratio < 1.0;
    let failure = (!invariants_hold).then(|| Failure {
        code: 2,
        kind: "Invariant".into(),
        message: format!(
            "cocycle residual {cocycle:e}, {violations} roof sandwich violations, contraction ratio {}",
            fit.ratio
        ),
    });
    Ok(Report {
        result: json!({
            "rank": spec.r,
            "ping_pong": spec.ping_pong_checks(),
            "parabolic_classes": spec.parabolic_classes(),
            "calibration": ctx.calibration,
            "cocycle_residual_max": cocycle,
            "cocycle_triples": d.triples,
            "roof_sandwich": {"checked": checked, "violations": violations, "roof_min": roof_min},
            "contraction": fit,
        }),
        table: Some(table),
        plot: Some(plot("Contraction of block words", "blocks", "sup |γ'|", false, true, series)),
        failure,
    })
}

fn exponent(ctx: &Context) -> Outcome<Report> {
    let m = ctx.metric(ctx.band_b())?;
    let op = TransferOperator::assemble(&m, ctx.tr)?;
    let e = ctx.cfg.exponent;
    let ce = critical_exponent(&op, e.s_lo, e.s_hi, e.tol)?;
    let sp = op.spectrum(ce.delta)?;
    let c_j: Vec<f64> = (1..=ctx.spec.r).map(|j| c_j_structure(&op, &sp, &ctx.spec, j)).collect();
    let mut table = Table::new(&["s", "rho"]);
    let mut pts = Vec::new();
    for k in 0..e.samples.max(2) {
        let s = e.s_lo + (e.s_hi - e.s_lo) * k as f64 / (e.samples.max(2) - 1) as f64;
        let rho = op.spectral_radius(s)?;
        table.rows.push(vec![num(s), num(rho)]);
        pts.push((s, rho));
    }
    let mut p = plot(
        "Spectral radius of the transfer operator",
        "s",
        "ρ(L_s)",
        false,
        true,
        vec![Series {
            label: "ρ".into(),
            points: pts,
        }],
    );
    p.hlines.push((1.0, "ρ = 1".into()));
    Ok(Report {
        result: json!({
            "exponent": ce,
            "dim": op.dim(),
            "rho_at_delta": sp.rho,
            "perron_residual": sp.residual,
            "c_j": c_j,
        }),
        table: Some(table),
        plot: Some(p),
        failure: None,
    })
}

fn sweep(ctx: &Context) -> Outcome<Report> {
    if ctx.cfg.band.is_none() {
        return Err(Failure::config("sweep-b needs a `band` section"));
    }
    let delta = ctx.required_delta("sweep-b")?;
    let s = ctx.cfg.sweep;
    let res = sweep_b(
        |b| ctx.metric(b).map_err(|f| Error::Config(f.message)),
        ctx.tr,
        s.b_lo,
        s.b_hi,
        delta,
        s.tol_b,
        s.ds,
        s.samples,
    )?;
    let mut table = Table::new(&["b", "rho"]);
    for &(b, r) in &res.samples {
        table.rows.push(vec![num(b), num(r)]);
    }
    let mut p = plot(
        "Spectral radius along the band parameter",
        "b",
        "ρ(L_{b,δ})",
        false,
        true,
        vec![Series {
            label: format!("δ = {delta}"),
            points: res.samples.clone(),
        }],
    );
    p.hlines.push((1.0, "ρ = 1".into()));
    Ok(Report {
        result: json!({
            "sweep": res,
            "exotic_witness": res.rho_shifted < 1.0,
        }),
        table: Some(table),
        plot: Some(p),
        failure: None,
    })
}

fn count(ctx: &Context) -> Outcome<Report> {
    let c = &ctx.cfg.count;
    let grid = lin_grid(c.r_min, c.r_max, c.r_step);
    let window = c.window.unwrap_or((c.r_max / 10.0, c.r_max));
    let m = ctx.metric(ctx.band_b())?;
    let op = TransferOperator::assemble(&m, ctx.tr)?;
    let delta = ctx.delta_or_exponent(&op)?;
    let l = ctx.cfg.slowly_varying;
    let (v, mut table, extra) = match c.method {
        CountMethod::Enumerate => {
            let rep = orbital_count(&m, &grid, c.budget)?;
            let exact = if ctx.all_hyperbolic() {
                Some(exact_orbit_count(&ctx.spec, &grid, c.budget)?)
            } else {
                None
            };
            let mut t = Table::new(&["R", "conservative", "liberal", "exact"]);
            for (k, &r) in grid.iter().enumerate() {
                let e = exact.as_ref().map_or(String::new(), |e| e[k].to_string());
                t.rows
                    .push(vec![num(r), rep.conservative[k].to_string(), rep.liberal[k].to_string(), e]);
            }
            let v: Vec<f64> = rep.conservative.iter().map(|&n| n as f64).collect();
            (v, t, json!({"counts": rep, "exact": exact}))
        }
        CountMethod::Renewal => {
            let points: Vec<usize> = if c.points.is_empty() {
                (1..=ctx.spec.r).collect()
            } else {
                c.points.clone()
            };
            let mut measures = Vec::new();
            for &j in &points {
                if j == 0 || j > ctx.spec.r {
                    return Err(Failure::config(format!("renewal point {j} is not in 1..={}", ctx.spec.r)));
                }
                let rm = RenewalMeasure::compute(&m, &op, ctx.spec.x_default(j), delta, 1.0, c.bin, c.r_max, 1e-12, c.max_steps)?;
                measures.push(rm);
            }
            let v: Vec<f64> = grid.iter().map(|&r| measures.iter().map(|rm| rm.count(r)).sum()).collect();
            let mut t = Table::new(&["R", "busemann_count"]);
            for (r, x) in grid.iter().zip(&v) {
                t.rows.push(vec![num(*r), num(*x)]);
            }
            let info: Vec<Value> = measures
                .iter()
                .zip(&points)
                .map(|(rm, j)| json!({"point": j, "steps": rm.steps, "remaining": rm.remaining}))
                .collect();
            (v, t, json!({"points": info}))
        }
    };
    let fit = asymptotic_fit(&grid, &v, delta, c.kappa, l, window)?;
    table.header.extend(["compensated".to_string(), "uncompensated".to_string()]);
    for (row, f) in table.rows.iter_mut().zip(&fit.rows) {
        row.push(num(f.compensated));
        row.push(num(f.uncompensated));
    }
    let series = vec![
        Series {
            label: "compensated".into(),
            points: fit.rows.iter().map(|f| (f.r, f.compensated)).collect(),
        },
        Series {
            label: "v·e^{−δR}".into(),
            points: fit.rows.iter().map(|f| (f.r, f.uncompensated)).collect(),
        },
    ];
    Ok(Report {
        result: json!({"method": c.method, "delta": delta, "data": extra, "fit": fit}),
        table: Some(table),
        plot: Some(plot(
            "Orbital counts, compensated",
            "R",
            "count × compensation",
            false,
            true,
            series,
        )),
        failure: None,
    })
}

fn tail(ctx: &Context) -> Outcome<Report> {
    let delta = ctx.required_delta("tail")?;
    let t = ctx.cfg.tail;
    let kappa = t.kappa.unwrap_or(match ctx.cusp_spec(ctx.cfg.dominant).profile {
        ProfileSpec::PolyLog { kappa_tail, .. } => kappa_tail,
        _ => 1.0,
    });
    let m = ctx.metric(ctx.band_b())?;
    let geom = &m.cusp(ctx.cfg.dominant).geometry;
    let rep = tail_sum(
        geom,
        delta,
        kappa,
        ctx.cfg.slowly_varying,
        &log_grid(t.t_min, t.t_max, t.points),
        t.two_sided,
    )?;
    let dop = dop_criterion(geom, delta, t.horizon)?;
    let mut table = Table::new(&["t", "tail", "compensated", "moment"]);
    for r in &rep.rows {
        table.rows.push(vec![num(r.t), num(r.tail), num(r.compensated), num(r.moment)]);
    }
    let series = vec![Series {
        label: "tail·t^κ/L".into(),
        points: rep.rows.iter().map(|r| (r.t, r.compensated)).collect(),
    }];
    Ok(Report {
        result: json!({"tail": rep, "special_series": dop}),
        table: Some(table),
        plot: Some(plot("Compensated parabolic tail", "t", "tail·t^κ/L(t)", true, false, series)),
        failure: None,
    })
}

fn lambda(ctx: &Context) -> Outcome<Report> {
    let m = ctx.metric(ctx.band_b())?;
    let op = TransferOperator::assemble(&m, ctx.tr)?;
    let delta = ctx.delta_or_exponent(&op)?;
    let s = ctx.cfg.lambda;
    let curve = lambda_curve(&op, delta, &log_grid(s.t_min, s.t_max, s.points), s.tol_gap)?;
    let l = ctx.cfg.slowly_varying;
    let fit = fit_local_expansion(&curve.points, |x| l.eval(x))?;
    let one = num_complex::Complex64::new(1.0, 0.0);
    let mut table = Table::new(&["t", "re_lambda", "im_lambda", "gap", "abs_one_minus", "arg_one_minus_conj"]);
    for p in &curve.points {
        let d = one - p.lambda.conj();
        table.rows.push(vec![
            num(p.t),
            num(p.lambda.re),
            num(p.lambda.im),
            num(p.gap),
            num(d.norm()),
            num(d.arg()),
        ]);
    }
    let series = vec![Series {
        label: "|1 − λ_t|".into(),
        points: curve.points.iter().map(|p| (p.t, (one - p.lambda).norm())).collect(),
    }];
    let failure = fit.require_quality(s.min_r2).err().map(Failure::from);
    Ok(Report {
        result: json!({"delta": delta, "curve": curve, "fit": fit}),
        table: Some(table),
        plot: Some(plot(
            "Local expansion of the leading eigenvalue",
            "t",
            "|1 − λ_t|",
            true,
            true,
            series,
        )),
        failure,
    })
}

fn renewal(ctx: &Context) -> Outcome<Report> {
    let m = ctx.metric(ctx.band_b())?;
    let op = TransferOperator::assemble(&m, ctx.tr)?;
    let delta = ctx.delta_or_exponent(&op)?;
    let s = &ctx.cfg.renewal;
    if s.point == 0 || s.point > ctx.spec.r {
        return Err(Failure::config(format!("renewal point {} is not in 1..={}", s.point, ctx.spec.r)));
    }
    let x = ctx.spec.x_default(s.point);
    let rm = RenewalMeasure::compute(&m, &op, x, delta, s.s, s.bin, s.b_max, s.tol, s.max_steps)?;
    let mut table = Table::new(&["center", "half_width", "R", "direct", "fourier", "rel_diff"]);
    let mut series = Vec::new();
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for psi in &s.psi {
        let mut pts = Vec::new();
        for &r in &s.r {
            let direct = rm.integrate(|u| psi.psi(u), r);
            let fourier = renewal_w_fourier(&m, &op, x, delta, s.s, r, psi, s.rel_tol)?;
            let rel = (direct - fourier).abs() / fourier.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            table.rows.push(vec![
                num(psi.center),
                num(psi.half_width),
                num(r),
                num(direct),
                num(fourier),
                num(rel),
            ]);
            rows.push(json!({"psi": psi, "r": r, "direct": direct, "fourier": fourier, "rel_diff": rel}));
            pts.push((r, fourier));
        }
        series.push(Series {
            label: format!("ψ({}, {})", psi.center, psi.half_width),
            points: pts,
        });
    }
    Ok(Report {
        result: json!({
            "delta": delta,
            "s": s.s,
            "point": s.point,
            "measure": {"steps": rm.steps, "remaining": rm.remaining, "bins": rm.mass.len()},
            "rows": rows,
            "max_rel_diff": worst,
        }),
        table: Some(table),
        plot: Some(plot("Renewal sums W_j(s, R, ψ)", "R", "W", false, false, series)),
        failure: None,
    })
}

fn certify(ctx: &Context, convergent: bool) -> Outcome<Report> {
    let delta = ctx.required_delta("certificates")?;
    let c = ctx.cfg.certify;
    let s = ctx.cfg.sweep;
    let default_b = match ctx.cfg.band {
        Some(_) if convergent => s.b_lo,
        Some(_) => s.b_hi,
        None => 0.0,
    };
    let m = ctx.metric(c.b.unwrap_or(default_b))?;
    let (result, certified, product, header) = if convergent {
        let cert = m.convergence_certificate(c.a, delta, c.n_partial)?;
        let p = cert.product.unwrap_or(f64::INFINITY);
        (json!(cert), cert.certified, p, "product_below_one")
    } else {
        let cert = m.divergence_certificate(delta, c.n_partial, c.m_max)?;
        (json!(cert), cert.certified, cert.product, "product_above_one")
    };
    let mut table = Table::new(&["b", "delta", "product", header]);
    table.rows.push(vec![num(m.b), num(delta), num(product), certified.to_string()]);
    let failure = (!certified).then(|| Failure::certificate(format!("certificate product {product} at b = {}", m.b)));
    Ok(Report {
        result,
        table: Some(table),
        plot: None,
        failure,
    })
}

/// Runs one command and writes its outputs.
pub fn run(cli: &Cli) -> Outcome<()> {
    let (cfg, dir) = load_config(cli.config.as_deref())?;
    let tr = resolve_truncation(cli.truncation.as_deref(), &cfg)?;
    let ctx = Context::new(cfg, dir, tr, cli.seed)?;
    let report = match cli.command {
        Command::GroupCheck => group_check(&ctx)?,
        Command::Exponent => exponent(&ctx)?,
        Command::SweepB => sweep(&ctx)?,
        Command::Count => count(&ctx)?,
        Command::Tail => tail(&ctx)?,
        Command::Lambda => lambda(&ctx)?,
        Command::Renewal => renewal(&ctx)?,
        Command::CertifyConvergent => certify(&ctx, true)?,
        Command::CertifyDivergent => certify(&ctx, false)?,
    };
    let name = cli.command.name();
    write_report(&ctx, name, &cli.out, &report)?;
    match report.failure {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

/// Parses arguments, runs, and returns the process exit code. Failures are
/// printed to stderr as JSON and written to `<command>.error.json`.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(f) => {
            let doc = json!({
                "command": cli.command.name(),
                "library_version": VERSION,
                "error": {"kind": f.kind, "message": f.message},
                "exit_code": f.code,
            });
            let text = serde_json::to_string_pretty(&doc).expect("error serializes");
            eprintln!("{text}");
            if fs::create_dir_all(&cli.out).is_ok() {
                let _ = fs::write(cli.out.join(format!("{}.error.json", cli.command.name())), text + "\n");
            }
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"angels": [0, 1, 2, 3]}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"tail": {"t_min": 1, "tmax": 2}}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn config_round_trips_and_hash_is_stable() {
        let text = r#"{
            "cusps": [{"profile": {"kind": "hyperbolic"}}, {"profile": {"kind": "poly_log", "omega": 3, "kappa_tail": 0.7}, "a": 1.3}],
            "dominant": 2,
            "band": {"b": 10, "pinching": {"lower": 1, "upper": 3.2, "eta": 0.5}},
            "delta": 1.5
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(config_hash(&cfg), config_hash(&back));
        assert_eq!(config_hash(&cfg).len(), 64);
        let mut other = cfg.clone();
        other.delta = Some(1.6);
        assert_ne!(config_hash(&cfg), config_hash(&other));
    }

    #[test]
    fn truncation_resolution() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(resolve_truncation(None, &cfg).unwrap(), preset("standard").unwrap());
        assert_eq!(resolve_truncation(Some("custom"), &cfg).unwrap_err().code, 2);
        assert_eq!(resolve_truncation(Some("huge"), &cfg).unwrap_err().code, 2);
        cfg.truncation = preset("coarse");
        assert_eq!(resolve_truncation(Some("custom"), &cfg).unwrap(), preset("coarse").unwrap());
        assert_eq!(resolve_truncation(Some("fine"), &cfg).unwrap(), preset("fine").unwrap());
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::PingPong("x".into())), 2);
        assert_eq!(
            exit_code(&Error::BracketFailure {
                lo: 0.0,
                hi: 1.0,
                f_lo: 1.0,
                f_hi: 1.0
            }),
            3
        );
        assert_eq!(exit_code(&Error::PoorFit(0.5)), 3);
        assert_eq!(exit_code(&Error::BudgetExceeded(3.0)), 4);
    }

    #[test]
    fn numbers_carry_seventeen_significant_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-2.5), "-2.5000000000000000e0");
        let x = 1.0 / 3.0;
        assert_eq!(num(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn csv_has_provenance_then_header() {
        let mut t = Table::new(&["a", "b"]);
        t.rows.push(vec![num(1.0), "x,y".into()]);
        let text = csv_text(&[("config_hash".into(), "abc".into())], &t).unwrap();
        assert_eq!(text, "# config_hash: abc\na,b\n1.0000000000000000e0,\"x,y\"\n");
    }
}
