//! Experiment front end. Argument types live here; the commands themselves
//! are plain functions in [`commands`] so that tests can drive them without
//! spawning a process.

mod commands;

pub use commands::{
    build_decomposition, cmd_compression, cmd_convergence, cmd_run, cmd_scaling, compression_rows,
    convergence_rows, execute, execute_run, scaling_rows, CompressionRow, ConvergenceRow,
    RunReport, ScalingRow,
};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "kpme", version, about = "Reciprocal Ewald sums as sums of Kronecker products")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Potentials of one particle set.
    Run(RunArgs),
    /// Interpolation error against the direct sum as the order grows.
    Convergence(ConvergenceArgs),
    /// Number of Kronecker terms per mode bound and precision.
    Compression(CompressionArgs),
    /// One problem on several rank-grid shapes.
    Scaling(ScalingArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum QuadKind {
    /// Sinc quadrature with a scanned lifting factor.
    Sinc,
    /// Rule loaded from `--quad-file`.
    Tab,
    /// Recursive SVD of the mode weights.
    Svd,
}

#[derive(Clone, Debug, Args)]
pub struct QuadArgs {
    #[arg(long, value_enum, default_value = "sinc")]
    pub quad: QuadKind,
    /// Target precision (quadrature error or SVD truncation tolerance).
    #[arg(long, default_value_t = 1e-10)]
    pub eps: f64,
    /// Fixed number of sinc nodes (odd); overrides `--eps` for `sinc`.
    #[arg(long)]
    pub nquad: Option<usize>,
    /// Tabulated rule for `--quad tab`.
    #[arg(long)]
    pub quad_file: Option<PathBuf>,
}

impl Default for QuadArgs {
    fn default() -> Self {
        Self {
            quad: QuadKind::Sinc,
            eps: 1e-10,
            nquad: None,
            quad_file: None,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    /// Number of uniformly random particles.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub particles: Option<usize>,
    /// Particle file: a count line, then `x y z q` per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Mode bound M.
    #[arg(long, default_value_t = 4)]
    pub modes: usize,
    /// Interpolation nodes per axis and cell, 2 to 16.
    #[arg(long, default_value_t = 8)]
    pub order: usize,
    /// Cells (and simulated ranks) per axis.
    #[arg(long, value_parser = parse_triple, default_value = "1,1,1")]
    pub cells: [usize; 3],
    /// Ewald splitting parameter; defaults to M.
    #[arg(long)]
    pub xi: Option<f64>,
    #[command(flatten)]
    pub quad: QuadArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Compare against the direct sum.
    #[arg(long)]
    pub oracle: bool,
    /// One reduction per axis for all terms together.
    #[arg(long)]
    pub fuse_terms: bool,
    /// Write the communication ledger here.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// Per-particle CSV; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Summary CSV; stderr when absent.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Half-edge of the (cubic, origin-centered) box of generated particles.
    #[arg(long, conflicts_with = "nu")]
    pub radius: Option<f64>,
    /// Size generated boxes so that `π M r_c` equals this ratio.
    #[arg(long, value_parser = parse_ratio)]
    pub nu: Option<f64>,
}

impl RunArgs {
    /// Generated particles with every other setting at its default.
    pub fn generated(particles: usize) -> Self {
        Self {
            particles: Some(particles),
            input: None,
            modes: 4,
            order: 8,
            cells: [1, 1, 1],
            xi: None,
            quad: QuadArgs::default(),
            seed: 0,
            oracle: false,
            fuse_terms: false,
            ledger: None,
            output: None,
            summary: None,
            radius: None,
            nu: None,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    pub modes: Vec<usize>,
    /// Ratios `π M r_c`.
    #[arg(long, value_delimiter = ',', value_parser = parse_ratio, default_value = "1/2,1/4,1/8")]
    pub nu: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    pub min_order: usize,
    #[arg(long, default_value_t = 16)]
    pub max_order: usize,
    #[arg(long, default_value_t = 128)]
    pub particles: usize,
    /// Ewald splitting parameter; defaults to M.
    #[arg(long)]
    pub xi: Option<f64>,
    /// SVD truncation tolerance of the mode weights.
    #[arg(long, default_value_t = 1e-15)]
    pub svd_tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl Default for ConvergenceArgs {
    fn default() -> Self {
        Self {
            modes: vec![2, 4, 8],
            nu: vec![0.5, 0.25, 0.125],
            min_order: 2,
            max_order: 16,
            particles: 128,
            xi: None,
            svd_tol: 1e-15,
            seed: 0,
            output: None,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct CompressionArgs {
    #[arg(long, default_value_t = 1)]
    pub min_modes: usize,
    #[arg(long, default_value_t = 16)]
    pub max_modes: usize,
    #[arg(long, value_delimiter = ',', default_value = "1e-4,1e-8,1e-12")]
    pub eps: Vec<f64>,
    #[arg(long, value_enum, default_value = "svd")]
    pub kind: QuadKind,
    /// Rule for `--kind tab`; mode bounds it does not cover are skipped.
    #[arg(long)]
    pub quad_file: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct ScalingArgs {
    /// Rank-grid shape; repeat for several.
    #[arg(long = "shape", value_parser = parse_triple, default_values = ["2,2,2", "3,3,3", "8,1,1", "4,2,1"])]
    pub shapes: Vec<[usize; 3]>,
    #[arg(long, default_value_t = 200)]
    pub particles: usize,
    #[arg(long, default_value_t = 4)]
    pub modes: usize,
    #[arg(long, default_value_t = 9)]
    pub order: usize,
    /// Ewald splitting parameter; defaults to M.
    #[arg(long)]
    pub xi: Option<f64>,
    /// `π M r_B` for the whole box.
    #[arg(long, value_parser = parse_ratio, default_value = "1/8")]
    pub nu: f64,
    #[command(flatten)]
    pub quad: QuadArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub fuse_terms: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl Default for ScalingArgs {
    fn default() -> Self {
        Self {
            shapes: vec![[2, 2, 2], [3, 3, 3], [8, 1, 1], [4, 2, 1]],
            particles: 200,
            modes: 4,
            order: 9,
            xi: None,
            nu: 0.125,
            quad: QuadArgs::default(),
            seed: 0,
            fuse_terms: false,
            output: None,
        }
    }
}

/// `"2,2,2"` or `"2x2x2"`.
pub fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split([',', 'x']).map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three counts like 2,2,2, got {s:?}"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(out)
}

/// A decimal or a fraction such as `1/4`.
pub fn parse_ratio(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
            let b: f64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
            a / b
        }
        None => s.trim().parse().map_err(|e| format!("{s:?}: {e}"))?,
    };
    if !(v > 0.0 && v.is_finite()) {
        return Err(format!("ratio must be positive, got {s:?}"));
    }
    Ok(v)
}
