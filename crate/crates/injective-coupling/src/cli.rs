//! Batch command-line front end: parses measure specs, drives the pipeline
//! and emits tables and reports.
//!
//! Exit codes: `0` on success, `1` when verification fails (or an internal
//! error occurs), `2` for bad input (unreadable or invalid specs, pairs out
//! of convex order, invalid configuration).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::curtain::{Curtain, EPS_BLOCK};
use crate::error::{Error, Result};
use crate::injective::{build_injective, BranchRow, BuildConfig, InjectiveCoupling, PartKind};
use crate::kernel::cells_for;
use crate::measures::{Measure, MeasureSpec};
use crate::potential::{check_convex_order, irreducible_decompose, ConvexOrderVerdict};
use crate::shadow::Pair;
use crate::verify::{hn_table, verify_sampled, VerifyConfig};

#[derive(Debug, Parser)]
#[command(
    name = "coupling",
    version,
    about = "Injective martingale couplings of one-dimensional measures in convex order"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Convex-order verdict for the pair.
    Check,
    /// Irreducible components of the pair.
    Decompose,
    /// CSV of the left-curtain functions u, G, R, S.
    Curtain,
    /// Shadow of the parcel of `mu` between masses `--v` and `--u`.
    Shadow,
    /// Injective coupling as JSON (and a CSV kernel table with `--out`).
    Build,
    /// Build and verify; exits 1 if a check fails.
    Verify,
    /// Table of the closed-form reference family for split point `--a`.
    Reference,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Opts {
    /// Source measure spec (JSON).
    #[arg(long, global = true)]
    pub mu: Option<PathBuf>,
    /// Target measure spec (JSON).
    #[arg(long, global = true)]
    pub nu: Option<PathBuf>,
    /// Run configuration (JSON); flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; results go to stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Number of mass cells for tables and verification.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Relative termination mass of the alternating construction.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub eps_term: Option<f64>,
    /// Split point of the reference family.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub a: Option<f64>,
    /// Lower mass of the shadow parcel (default 0).
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub v: Option<f64>,
    /// Upper mass of the shadow parcel.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub u: Option<f64>,
}

/// Run configuration, read from `--config` and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub eps_term: f64,
    pub eps_block: f64,
    pub ring_factor: f64,
    pub max_steps: usize,
    /// Mass cells for the curtain table, branch tables and verification.
    pub grid_n: usize,
    /// Target buckets of the empirical injectivity check.
    pub y_grid_n: usize,
    /// Rows of the reference table.
    pub reference_n: usize,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let b = BuildConfig::default();
        let v = VerifyConfig::default();
        RunConfig {
            eps_term: b.eps_term,
            eps_block: EPS_BLOCK,
            ring_factor: b.ring_factor,
            max_steps: b.max_steps,
            grid_n: v.grid_n,
            y_grid_n: v.y_grid_n,
            reference_n: 200,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("bad config {}: {e}", path.display())))
    }

    /// Applies flag overrides.
    pub fn with_flags(mut self, opts: &Opts) -> Self {
        if let Some(g) = opts.grid {
            self.grid_n = g;
        }
        if let Some(e) = opts.eps_term {
            self.eps_term = e;
        }
        if let Some(o) = &opts.out {
            self.out = Some(o.clone());
        }
        self
    }

    pub fn build_config(&self) -> BuildConfig {
        BuildConfig {
            eps_term: self.eps_term,
            eps_block: self.eps_block,
            ring_factor: self.ring_factor,
            max_steps: self.max_steps,
        }
    }

    pub fn verify_config(&self) -> VerifyConfig {
        VerifyConfig {
            grid_n: self.grid_n,
            y_grid_n: self.y_grid_n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.build_config().validate()?;
        if self.grid_n == 0 || self.y_grid_n == 0 || self.reference_n == 0 {
            return Err(Error::Validation("grid sizes must be positive".into()));
        }
        Ok(())
    }
}

pub fn read_measure(path: &Path) -> Result<Measure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    let spec: MeasureSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Validation(format!("bad measure spec {}: {e}", path.display())))?;
    Measure::from_spec(&spec)
}

/// Lossless decimal form of a double (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// What a command produced.
enum Outcome {
    Done,
    VerificationFailed,
}

/// Parses `argv` and runs one command, writing stdout output to `out` and
/// diagnostics to stderr. Returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::VerificationFailed) => {
            eprintln!("verification failed");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Internal(_) => 1,
        _ => 2,
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Validation(format!("missing --{flag}")))
}

fn pair_inputs(opts: &Opts) -> Result<(Measure, Measure)> {
    Ok((
        read_measure(required(&opts.mu, "mu")?)?,
        read_measure(required(&opts.nu, "nu")?)?,
    ))
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<Outcome> {
    let opts = &cli.opts;
    let base = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.with_flags(opts);
    cfg.validate()?;
    match cli.command {
        Command::Check => cmd_check(opts, out),
        Command::Decompose => cmd_decompose(opts, &cfg, out),
        Command::Curtain => cmd_curtain(opts, &cfg, out),
        Command::Shadow => cmd_shadow(opts, &cfg, out),
        Command::Build => cmd_build(opts, &cfg, out),
        Command::Verify => cmd_verify(opts, &cfg, out),
        Command::Reference => cmd_reference(opts, &cfg, out),
    }
}

fn emit_json<T: Serialize>(
    value: &T,
    cfg: &RunConfig,
    file: &str,
    out: &mut dyn Write,
) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(file), text + "\n")?;
        }
        None => writeln!(out, "{text}")?,
    }
    Ok(())
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn emit_csv(bytes: &[u8], cfg: &RunConfig, file: &str, out: &mut dyn Write) -> Result<()> {
    match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(file), bytes)?;
        }
        None => out.write_all(bytes)?,
    }
    Ok(())
}

fn cmd_check(opts: &Opts, out: &mut dyn Write) -> Result<Outcome> {
    let (mu, nu) = pair_inputs(opts)?;
    let verdict = check_convex_order(&mu, &nu);
    writeln!(out, "{}", serde_json::to_string_pretty(&verdict)?)?;
    match verdict {
        ConvexOrderVerdict::InOrder => Ok(Outcome::Done),
        ConvexOrderVerdict::ViolatedAt { k, deficit } => Err(Error::ConvexOrder(format!(
            "dispersion negative at k = {k} (deficit {deficit})"
        ))),
        other => Err(Error::ConvexOrder(format!("{other:?}"))),
    }
}

#[derive(Serialize)]
struct ComponentJson {
    left: f64,
    right: f64,
    mu_mass: f64,
    nu_mass: f64,
    mu: MeasureSpec,
    nu: MeasureSpec,
}

#[derive(Serialize)]
struct DecompositionJson {
    components: Vec<ComponentJson>,
    stay_put: MeasureSpec,
    zero_intervals: Vec<(f64, f64)>,
}

fn cmd_decompose(opts: &Opts, cfg: &RunConfig, out: &mut dyn Write) -> Result<Outcome> {
    let (mu, nu) = pair_inputs(opts)?;
    let d = irreducible_decompose(&mu, &nu)?;
    let doc = DecompositionJson {
        components: d
            .components
            .iter()
            .map(|c| ComponentJson {
                left: c.left,
                right: c.right,
                mu_mass: c.mu.total_mass(),
                nu_mass: c.nu.total_mass(),
                mu: c.mu.to_spec(),
                nu: c.nu.to_spec(),
            })
            .collect(),
        stay_put: d.stay_put.to_spec(),
        zero_intervals: d.zero_intervals,
    };
    emit_json(&doc, cfg, "decomposition.json", out)?;
    Ok(Outcome::Done)
}

fn cmd_curtain(opts: &Opts, cfg: &RunConfig, out: &mut dyn Write) -> Result<Outcome> {
    let (mu, nu) = pair_inputs(opts)?;
    let curtain = Curtain::new(Pair::new(mu, nu)?);
    let table = curtain.table(cfg.grid_n)?;
    let bytes = csv_bytes(
        &["u", "G", "R", "S"],
        table
            .iter()
            .map(|c| [c.u, c.g, c.r, c.s].map(fmt_f64).to_vec()),
    )?;
    emit_csv(&bytes, cfg, "curtain.csv", out)?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct ShadowJson {
    v: f64,
    u: f64,
    mass: f64,
    mean: f64,
    shadow: MeasureSpec,
}

fn cmd_shadow(opts: &Opts, cfg: &RunConfig, out: &mut dyn Write) -> Result<Outcome> {
    let (mu, nu) = pair_inputs(opts)?;
    let u = opts
        .u
        .ok_or_else(|| Error::Validation("missing --u".into()))?;
    let v = opts.v.unwrap_or(0.0);
    let pair = Pair::new(mu, nu)?;
    let s = pair.shadow_measure(v, u)?;
    let doc = ShadowJson {
        v,
        u,
        mass: s.total_mass(),
        mean: s.mean(),
        shadow: s.to_spec(),
    };
    emit_json(&doc, cfg, "shadow.json", out)?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct BranchJson {
    branch: usize,
    u_range: (f64, f64),
    rows: Vec<BranchRow>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum BlockJson {
    Alternating {
        block_id: usize,
        mass: f64,
        anchor: crate::injective::Anchor,
        u: Vec<f64>,
        v: Vec<f64>,
        stops: Vec<crate::shadow::StopStatus>,
        termination: crate::injective::Termination,
        boundary_mismatch: Vec<f64>,
        branches: Vec<BranchJson>,
    },
    Identity {
        block_id: usize,
        mass: f64,
        measure: MeasureSpec,
    },
}

#[derive(Serialize)]
struct Diagnostics {
    total_mass: f64,
    dropped_mass: f64,
    alternating_blocks: usize,
    identity_blocks: usize,
    max_branches: usize,
}

#[derive(Serialize)]
struct BuildJson {
    config: RunConfig,
    blocks: Vec<BlockJson>,
    diagnostics: Diagnostics,
}

/// Rows of the flattened kernel table, per part.
struct Tables {
    blocks: Vec<BlockJson>,
    csv: Vec<Vec<String>>,
}

fn tables(c: &InjectiveCoupling, grid_n: usize) -> Result<Tables> {
    let mut blocks = Vec::new();
    let mut csv = Vec::new();
    for p in &c.parts {
        let n = cells_for(p.mass, c.total_mass, grid_n);
        match &p.kind {
            PartKind::Alternating(b) => {
                let rows = b.branch_table(n)?;
                for r in &rows {
                    let mut rec = vec![p.block_id.to_string(), "alternating".into(), r.branch.to_string()];
                    rec.extend([r.v, r.u, r.x, r.m, r.n, r.w_m, r.w_n].map(fmt_f64));
                    csv.push(rec);
                }
                let branches = (0..b.branch_count())
                    .map(|j| BranchJson {
                        branch: j,
                        u_range: b.branch_range(j),
                        rows: rows.iter().filter(|r| r.branch == j).copied().collect(),
                    })
                    .collect();
                blocks.push(BlockJson::Alternating {
                    block_id: p.block_id,
                    mass: p.mass,
                    anchor: b.anchor,
                    u: b.u.clone(),
                    v: b.v.clone(),
                    stops: b.stops.clone(),
                    termination: b.termination,
                    boundary_mismatch: b.boundary_mismatch.clone(),
                    branches,
                });
            }
            PartKind::Identity(m) => {
                let w = p.mass / n as f64;
                for i in 0..n {
                    let u = (i as f64 + 0.5) * w;
                    let x = m.quantile_left(u);
                    let mut rec = vec![p.block_id.to_string(), "identity".into(), "0".into()];
                    rec.extend([u, u, x, x, x, 1.0, 0.0].map(fmt_f64));
                    csv.push(rec);
                }
                blocks.push(BlockJson::Identity {
                    block_id: p.block_id,
                    mass: p.mass,
                    measure: m.to_spec(),
                });
            }
        }
    }
    Ok(Tables { blocks, csv })
}

pub const KERNEL_CSV_HEADER: [&str; 10] = ["block", "kind", "branch", "v", "u", "x", "M", "N", "wM", "wN"];

fn cmd_build(opts: &Opts, cfg: &RunConfig, out: &mut dyn Write) -> Result<Outcome> {
    let (mu, nu) = pair_inputs(opts)?;
    let c = build_injective(&mu, &nu, &cfg.build_config())?;
    let Tables { blocks, csv } = tables(&c, cfg.grid_n)?;
    let diagnostics = Diagnostics {
        total_mass: c.total_mass,
        dropped_mass: c.dropped_mass,
        alternating_blocks: c.alternating().count(),
        identity_blocks: c.parts.len() - c.alternating().count(),
        max_branches: c.alternating().map(|b| b.branch_count()).max().unwrap_or(0),
    };
    let doc = BuildJson {
        config: cfg.clone(),
        blocks,
        diagnostics,
    };
    emit_json(&doc, cfg, "coupling.json", out)?;
    if cfg.out.is_some() {
        let bytes = csv_bytes(&KERNEL_CSV_HEADER, csv.into_iter())?;
        emit_csv(&bytes, cfg, "kernels.csv", out)?;
    }
    Ok(Outcome::Done)
}

fn cmd_verify(opts: &Opts, cfg: &RunConfig, out: &mut dyn Write) -> Result<Outcome> {
    let (mu, nu) = pair_inputs(opts)?;
    let c = build_injective(&mu, &nu, &cfg.build_config())?;
    let vcfg = cfg.verify_config();
    let sampled = c.discretize(vcfg.grid_n)?;
    let report = verify_sampled(&sampled, &mu, &nu, &vcfg)?;
    emit_json(&report, cfg, "report.json", out)?;
    Ok(if report.passed {
        Outcome::Done
    } else {
        Outcome::VerificationFailed
    })
}

fn cmd_reference(opts: &Opts, cfg: &RunConfig, out: &mut dyn Write) -> Result<Outcome> {
    let a = opts
        .a
        .ok_or_else(|| Error::Validation("missing --a".into()))?;
    let rows = hn_table(a, cfg.reference_n)?;
    let bytes = csv_bytes(
        &["x", "f", "h"],
        rows.iter().map(|&(x, f, h)| [x, f, h].map(fmt_f64).to_vec()),
    )?;
    emit_csv(&bytes, cfg, "reference.csv", out)?;
    Ok(Outcome::Done)
}
