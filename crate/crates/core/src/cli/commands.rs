use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use super::{Cli, Command, CompressionArgs, ConvergenceArgs, QuadArgs, QuadKind, RunArgs, ScalingArgs};
use crate::alphaskp::{
    assemble_alpha, load_tabulated_rule, nkpa_svd, sinc_rule, sinc_rule_for_eps, skp_from_quadrature, EwaldConfig,
    SkpDecomposition,
};
use crate::error::{KpmeError, Result};
use crate::geometry::{
    check_convergence_ratio, read_point_cloud, Box3, CellGrid, ChargeVector, Normalization, PointCloud,
};
use crate::interpolation::{MAX_ORDER, MIN_ORDER, STABLE_ORDER};
use crate::oracle::dense_reciprocal_apply;
use crate::parallel::{
    kpme_sequential, run_distributed, summarize_ledger, write_ledger_csv, KpmeSetup, LedgerEntry, RankGrid, SimWorld,
};
use crate::parallel::csv_error;

/// `ν` used for generated boxes when neither `--radius` nor `--nu` is given.
const DEFAULT_NU: f64 = 0.25;

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Convergence(a) => cmd_convergence(&a),
        Command::Compression(a) => cmd_compression(&a),
        Command::Scaling(a) => cmd_scaling(&a),
    }
}

/// Prefixes I/O errors with the offending path.
fn at_path(path: &Path) -> impl Fn(KpmeError) -> KpmeError + '_ {
    move |e| match e {
        KpmeError::Io(io) => KpmeError::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| at_path(path)(e.into()))?))
}

fn open_output(path: Option<&Path>, fallback: impl Write + 'static) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(fallback),
    })
}

fn check_order(order: usize) -> Result<()> {
    if !(MIN_ORDER..=MAX_ORDER).contains(&order) {
        return Err(KpmeError::invalid(format!(
            "order must lie in [{MIN_ORDER}, {MAX_ORDER}], got {order}"
        )));
    }
    if order > STABLE_ORDER {
        log::warn!("order {order} above {STABLE_ORDER}: equispaced interpolation may lose accuracy");
    }
    Ok(())
}

fn relative_l2(x: &[f64], reference: &[f64]) -> f64 {
    let diff = x.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

/// SKP of `α_M` selected by the quadrature flags.
pub fn build_decomposition(cfg: &EwaldConfig, quad: &QuadArgs) -> Result<SkpDecomposition> {
    if !(quad.eps > 0.0) {
        return Err(KpmeError::invalid(format!("--eps must be positive, got {}", quad.eps)));
    }
    match quad.quad {
        QuadKind::Sinc => {
            let rule = match quad.nquad {
                Some(n) if n % 2 == 1 => sinc_rule(n / 2, cfg.modes)?,
                Some(n) => return Err(KpmeError::invalid(format!("--nquad must be odd for sinc rules, got {n}"))),
                None => sinc_rule_for_eps(quad.eps, cfg.modes)?,
            };
            log::info!("sinc rule: {} nodes, certified error {:e}", rule.len(), rule.eps);
            skp_from_quadrature(&rule, cfg)
        }
        QuadKind::Tab => {
            let path = quad
                .quad_file
                .as_ref()
                .ok_or_else(|| KpmeError::invalid("--quad tab needs --quad-file"))?;
            skp_from_quadrature(&load_tabulated_rule(path).map_err(at_path(path))?, cfg)
        }
        QuadKind::Svd => nkpa_svd(&assemble_alpha(cfg), quad.eps, quad.eps),
    }
}

/// Everything `run` computes, before it is written out.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub cloud: PointCloud,
    pub charges: ChargeVector,
    pub potentials: Vec<f64>,
    pub ledger: Vec<LedgerEntry>,
    pub terms: usize,
    pub nu: f64,
    pub err_vs_oracle: Option<f64>,
    pub wall_ms: f64,
}

fn run_inputs(args: &RunArgs) -> Result<(PointCloud, ChargeVector, Box3)> {
    let min_k = *args.cells.iter().min().unwrap_or(&1) as f64;
    let sized_box = |center: [f64; 3]| -> Result<Box3> {
        let radius = match args.radius {
            Some(r) => r,
            None => args.nu.unwrap_or(DEFAULT_NU) * min_k / (PI * args.modes as f64),
        };
        Box3::new(center, radius)
    };
    match (&args.input, args.particles) {
        (Some(path), _) => {
            let (cloud, q) = read_point_cloud(path).map_err(at_path(path))?;
            let bbox = if args.radius.is_some() || args.nu.is_some() {
                sized_box(Box3::enclosing(&cloud)?.center())?
            } else {
                Box3::enclosing(&cloud)?
            };
            Ok((cloud, q, bbox))
        }
        (None, Some(n)) => {
            let bbox = sized_box([0.0; 3])?;
            Ok((PointCloud::uniform(&bbox, n, args.seed), ChargeVector::uniform(n, args.seed), bbox))
        }
        (None, None) => Err(KpmeError::invalid("either --particles or --input is required")),
    }
}

pub fn execute_run(args: &RunArgs) -> Result<RunReport> {
    check_order(args.order)?;
    let cfg = EwaldConfig::new(args.xi.unwrap_or(args.modes as f64), args.modes)?;
    let (cloud, charges, bbox) = run_inputs(args)?;
    let cells = CellGrid::new(bbox, args.cells)?;
    let norm = Normalization::unit(bbox.center());
    let check = check_convergence_ratio(&cells, args.modes, &norm);
    if !check.pass {
        log::warn!("π M r_c = {:.3} is not below 1; interpolation will not converge", check.nu);
    }
    let world = SimWorld::from_env(RankGrid::new(args.cells)?)?;

    let start = Instant::now();
    let dec = build_decomposition(&cfg, &args.quad)?;
    let terms = dec.len();
    let setup = KpmeSetup::new(cfg, dec, args.order, norm)?.fused(args.fuse_terms);
    let out = run_distributed(&world, &cells, &setup, &cloud, &charges)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;

    let err_vs_oracle = if args.oracle {
        let reference = dense_reciprocal_apply(&cloud, &cloud, &charges, &cfg, &norm)?;
        Some(relative_l2(&out.potentials, &reference))
    } else {
        None
    };
    Ok(RunReport {
        cloud,
        charges,
        potentials: out.potentials,
        ledger: out.ledger,
        terms,
        nu: check.nu,
        err_vs_oracle,
        wall_ms,
    })
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let report = execute_run(args)?;

    let mut w = csv::Writer::from_writer(open_output(args.output.as_deref(), io::stdout())?);
    w.write_record(["index", "x", "y", "z", "q", "potential"]).map_err(csv_error)?;
    for (i, ((p, q), v)) in report
        .cloud
        .positions()
        .iter()
        .zip(report.charges.values())
        .zip(&report.potentials)
        .enumerate()
    {
        w.write_record([
            i.to_string(),
            p[0].to_string(),
            p[1].to_string(),
            p[2].to_string(),
            q.to_string(),
            v.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;

    let mut s = csv::Writer::from_writer(open_output(args.summary.as_deref(), io::stderr())?);
    s.write_record(["N", "M", "L", "K", "eps", "err_vs_oracle", "wall_ms"]).map_err(csv_error)?;
    let [kx, ky, kz] = args.cells;
    s.write_record([
        report.cloud.len().to_string(),
        args.modes.to_string(),
        args.order.to_string(),
        format!("{kx}x{ky}x{kz}"),
        format!("{:e}", args.quad.eps),
        report.err_vs_oracle.map(|e| format!("{e:e}")).unwrap_or_default(),
        format!("{:.3}", report.wall_ms),
    ])
    .map_err(csv_error)?;
    s.flush()?;

    if let Some(path) = &args.ledger {
        write_ledger_csv(create(path)?, &report.ledger)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub modes: usize,
    pub nu: f64,
    pub order: usize,
    pub rel_error: f64,
}

/// Single-cell error against the direct sum for every `(M, ν, L)`. The cell
/// is the origin-centered cube with `π M r_c = ν`.
pub fn convergence_rows(args: &ConvergenceArgs) -> Result<Vec<ConvergenceRow>> {
    if args.min_order > args.max_order {
        return Err(KpmeError::invalid("--min-order exceeds --max-order"));
    }
    for order in [args.min_order, args.max_order] {
        check_order(order)?;
    }
    let mut rows = Vec::new();
    for &m in &args.modes {
        let cfg = EwaldConfig::new(args.xi.unwrap_or(m as f64), m)?;
        let dec = nkpa_svd(&assemble_alpha(&cfg), args.svd_tol, args.svd_tol)?;
        log::info!("M = {m}: {} terms", dec.len());
        for &nu in &args.nu {
            let bbox = Box3::new([0.0; 3], nu / (PI * m as f64))?;
            let cloud = PointCloud::uniform(&bbox, args.particles, args.seed);
            let q = ChargeVector::uniform(args.particles, args.seed);
            let norm = Normalization::unit(bbox.center());
            let cells = CellGrid::new(bbox, [1, 1, 1])?;
            let reference = dense_reciprocal_apply(&cloud, &cloud, &q, &cfg, &norm)?;
            for order in args.min_order..=args.max_order {
                let setup = KpmeSetup::new(cfg, dec.clone(), order, norm)?;
                let p = kpme_sequential(&cells, &setup, &cloud, &q)?;
                rows.push(ConvergenceRow {
                    modes: m,
                    nu,
                    order,
                    rel_error: relative_l2(&p, &reference),
                });
            }
        }
    }
    Ok(rows)
}

pub fn cmd_convergence(args: &ConvergenceArgs) -> Result<()> {
    let rows = convergence_rows(args)?;
    let mut w = csv::Writer::from_writer(open_output(args.output.as_deref(), io::stdout())?);
    w.write_record(["M", "nu", "L", "rel_error"]).map_err(csv_error)?;
    for r in rows {
        w.write_record([r.modes.to_string(), r.nu.to_string(), r.order.to_string(), format!("{:e}", r.rel_error)])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressionRow {
    pub modes: usize,
    pub eps: f64,
    pub terms: usize,
    /// `|Λ| / (2M + 1)²`.
    pub relative_rank: f64,
}

impl CompressionRow {
    fn new(modes: usize, eps: f64, terms: usize) -> Self {
        let side = (2 * modes + 1) as f64;
        Self {
            modes,
            eps,
            terms,
            relative_rank: terms as f64 / (side * side),
        }
    }
}

/// Term counts for every `M` in range. For tabulated rules the rule's own
/// precision is reported and mode bounds beyond its range are skipped.
pub fn compression_rows(args: &CompressionArgs) -> Result<Vec<CompressionRow>> {
    if args.min_modes == 0 || args.min_modes > args.max_modes {
        return Err(KpmeError::invalid("mode range must satisfy 1 ≤ min ≤ max"));
    }
    let modes = args.min_modes..=args.max_modes;
    let mut rows = Vec::new();
    match args.kind {
        QuadKind::Tab => {
            let path = args
                .quad_file
                .as_ref()
                .ok_or_else(|| KpmeError::invalid("--kind tab needs --quad-file"))?;
            let rule = load_tabulated_rule(path).map_err(at_path(path))?;
            for m in modes {
                match rule.check_covers(m) {
                    Ok(()) => rows.push(CompressionRow::new(m, rule.eps, rule.len())),
                    Err(e) => log::warn!("M = {m} skipped: {e}"),
                }
            }
        }
        QuadKind::Sinc => {
            for m in modes {
                for &eps in &args.eps {
                    rows.push(CompressionRow::new(m, eps, sinc_rule_for_eps(eps, m)?.len()));
                }
            }
        }
        QuadKind::Svd => {
            for m in modes {
                let alpha = assemble_alpha(&EwaldConfig::new(m as f64, m)?);
                for &eps in &args.eps {
                    rows.push(CompressionRow::new(m, eps, nkpa_svd(&alpha, eps, eps)?.len()));
                }
            }
        }
    }
    Ok(rows)
}

pub fn cmd_compression(args: &CompressionArgs) -> Result<()> {
    let rows = compression_rows(args)?;
    let mut w = csv::Writer::from_writer(open_output(args.output.as_deref(), io::stdout())?);
    w.write_record(["M", "eps", "terms", "relative_rank"]).map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.modes.to_string(),
            format!("{:e}", r.eps),
            r.terms.to_string(),
            r.relative_rank.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub shape: [usize; 3],
    /// Relative ℓ₂ distance to the single-rank result.
    pub gathered_error: f64,
    /// Collectives per rank (axis and global), equal on every rank.
    pub reductions: usize,
    /// Values reduced per rank.
    pub payload_total: usize,
    pub wall_ms: f64,
    pub potentials: Vec<f64>,
}

/// One cloud in one box, cut into cells by each shape in turn. The box
/// satisfies `π M r_B = ν`, so every shape shares the same interpolation
/// regime.
pub fn scaling_rows(args: &ScalingArgs) -> Result<Vec<ScalingRow>> {
    check_order(args.order)?;
    let cfg = EwaldConfig::new(args.xi.unwrap_or(args.modes as f64), args.modes)?;
    let bbox = Box3::new([0.0; 3], args.nu / (PI * args.modes as f64))?;
    let cloud = PointCloud::uniform(&bbox, args.particles, args.seed);
    let q = ChargeVector::uniform(args.particles, args.seed);
    let norm = Normalization::unit(bbox.center());
    let setup = KpmeSetup::new(cfg, build_decomposition(&cfg, &args.quad)?, args.order, norm)?.fused(args.fuse_terms);

    let single = CellGrid::new(bbox, [1, 1, 1])?;
    let reference = run_distributed(&SimWorld::new(RankGrid::new([1, 1, 1])?), &single, &setup, &cloud, &q)?;

    let mut rows = Vec::new();
    for &shape in &args.shapes {
        let cells = CellGrid::new(bbox, shape)?;
        let world = SimWorld::from_env(RankGrid::new(shape)?)?;
        let start = Instant::now();
        let out = run_distributed(&world, &cells, &setup, &cloud, &q)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let per_rank = summarize_ledger(&out.ledger, world.grid().size());
        let first = per_rank[0];
        if per_rank.iter().any(|s| *s != first) {
            return Err(KpmeError::Communicator(format!("ranks of shape {shape:?} disagree on their ledgers")));
        }
        rows.push(ScalingRow {
            shape,
            gathered_error: relative_l2(&out.potentials, &reference.potentials),
            reductions: first.axis_reductions + first.global_reductions,
            payload_total: first.payload_total,
            wall_ms,
            potentials: out.potentials,
        });
    }
    Ok(rows)
}

pub fn cmd_scaling(args: &ScalingArgs) -> Result<()> {
    let rows = scaling_rows(args)?;
    let mut w = csv::Writer::from_writer(open_output(args.output.as_deref(), io::stdout())?);
    w.write_record(["shape", "gathered_error", "reductions", "payload_total", "wall_ms"])
        .map_err(csv_error)?;
    for r in rows {
        let [a, b, c] = r.shape;
        w.write_record([
            format!("{a}x{b}x{c}"),
            format!("{:e}", r.gathered_error),
            r.reductions.to_string(),
            r.payload_total.to_string(),
            format!("{:.3}", r.wall_ms),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run() {
        let report = execute_run(&RunArgs::generated(0)).unwrap();
        assert!(report.potentials.is_empty());
    }

    #[test]
    fn small_run_matches_oracle() {
        let mut args = RunArgs::generated(64);
        args.modes = 2;
        args.xi = Some(3.0);
        args.seed = 7;
        args.oracle = true;
        let report = execute_run(&args).unwrap();
        assert!(report.err_vs_oracle.unwrap() <= 1e-5, "{:?}", report.err_vs_oracle);
        assert!((report.nu - 0.25).abs() < 1e-12);
    }

    #[test]
    fn bad_flags_are_validation_errors() {
        let mut args = RunArgs::generated(4);
        args.order = 17;
        assert_eq!(execute_run(&args).unwrap_err().exit_code(), 1);

        let mut args = RunArgs::generated(4);
        args.quad.nquad = Some(10);
        assert_eq!(execute_run(&args).unwrap_err().exit_code(), 1);

        let mut args = RunArgs::generated(4);
        args.quad.quad = QuadKind::Tab;
        assert_eq!(execute_run(&args).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn svd_compression_within_full_rank() {
        let args = CompressionArgs {
            min_modes: 1,
            max_modes: 6,
            eps: vec![1e-4, 1e-8],
            kind: QuadKind::Svd,
            quad_file: None,
            output: None,
        };
        for r in compression_rows(&args).unwrap() {
            assert!(r.relative_rank <= 1.0, "{r:?}");
        }
    }
}
