//! One function per subcommand; each fills a [`Report`].

use crate::args::{parse_points, Command, RunConfig};
use crate::output::{num, Check, Report};
use anyhow::{bail, Context, Result};
use pfclt_core::cumulants::{
    clt_diagnostic, cumulant_counts, projection_defect, cumulant_linear_stat, expectation_variance, log_slope,
    trace_decomposition, variance_log_coefficient, CumulantReport,
};
use pfclt_core::discretize::{Grid, KernelOperators, Scheme, StepFunction, MAX_SVD_DIM, PANEL_NODES};
use pfclt_core::ensembles::{fluctuation_scan, target_intensity, EnsembleConfig};
use pfclt_core::frcp::{
    condition_iv_table, condition_scan_step, frcp_data, verify_on, verify_step_frcp,
};
use pfclt_core::kernels::{correlation, CorrelationRequest, KernelKind};
use rayon::prelude::*;
use std::sync::Arc;

pub const SLOPE_TOL_COUNTS: f64 = 0.10;
pub const SLOPE_TOL_STEP: f64 = 0.15;
pub const SLOPE_TOL_MC: f64 = 0.25;
pub const RANK_RESIDUAL_TOL: f64 = 1e-5;
pub const DECOMPOSITION_TOL: f64 = 1e-4;
pub const MEAN_TOL: f64 = 1e-8;
pub const VARIANCE_TOL: f64 = 1e-6;
pub const KS_TOL: f64 = 0.02;
pub const REPULSION_SLACK: f64 = 1e-10;

pub fn run(cfg: &RunConfig) -> Result<Report> {
    match &cfg.command {
        Command::CorrelationEval { points, points_file } => {
            correlation_eval(cfg, points.as_deref(), points_file.as_deref())
        }
        Command::VarianceScan => variance_scan(cfg),
        Command::CumulantScan => cumulant_scan(cfg),
        Command::FrcpCheck => frcp_check(cfg),
        Command::McClt { beta, n } => mc_clt(cfg, *beta, *n),
    }
}

fn statistic(cfg: &RunConfig) -> Result<StepFunction> {
    match &cfg.step {
        Some(s) => Ok(s.clone()),
        None => Ok(StepFunction::indicator(-1.0, 1.0)?),
    }
}

fn correlation_eval(cfg: &RunConfig, points: Option<&str>, file: Option<&std::path::Path>) -> Result<Report> {
    let tuples = match (points, file) {
        (Some(p), None) => parse_points(p)?,
        (None, Some(f)) => {
            let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
            parse_points(&text).with_context(|| format!("in {}", f.display()))?
        }
        _ => bail!("give exactly one of --points or --points-file"),
    };
    let mut report = Report::new(cfg.command.name(), cfg.echo(), &["k", "points", "rho", "flag"]);
    let mut min_rho = f64::INFINITY;
    for t in tuples {
        let req = CorrelationRequest::new(cfg.kernel, t.clone());
        let rho = correlation(&req)?;
        min_rho = min_rho.min(rho);
        let pts: Vec<String> = t.iter().map(|x| num(*x)).collect();
        let flag = if req.has_duplicates() { "degenerate" } else { "" };
        report.push_row(vec![t.len().to_string(), pts.join(" "), num(rho), flag.into()]);
    }
    report.checks.push(Check::new(
        "rho_nonnegative",
        min_rho >= -REPULSION_SLACK,
        format!("min rho {min_rho:e} >= -{REPULSION_SLACK:e}"),
    ));
    Ok(report)
}

fn variance_scan(cfg: &RunConfig) -> Result<Report> {
    let f = statistic(cfg)?;
    let rows: Vec<(f64, f64, f64)> = cfg
        .ls
        .par_iter()
        .map(|&l| expectation_variance(&cfg.kernel, &f, l).map(|(e, v)| (l, e, v)))
        .collect::<pfclt_core::Result<_>>()?;
    let mut report = Report::new(cfg.command.name(), cfg.echo(), &["L", "E", "Var"]);
    for &(l, e, v) in &rows {
        report.push_row(vec![num(l), num(e), num(v)]);
        let expected_mean = cfg.kernel.intensity() * f.pieces().iter().map(|&(c, a, b)| c * (b - a)).sum::<f64>() * l;
        report.checks.push(Check::relative(format!("mean_L={l}"), e, expected_mean, 1e-12));
        report.checks.push(Check::new(format!("variance_positive_L={l}"), v > 0.0, num(v)));
    }
    if rows.len() >= 2 {
        let ls: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let vs: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let slope = log_slope(&ls, &vs)?;
        report.push_row(vec!["slope".into(), String::new(), num(slope)]);
        let target = variance_log_coefficient(&cfg.kernel, &f);
        let tol = if cfg.step.is_some() { SLOPE_TOL_STEP } else { SLOPE_TOL_COUNTS };
        report.checks.push(Check::relative("variance_log_slope", slope, target, tol));
    }
    Ok(report)
}

fn cumulant_scan(cfg: &RunConfig) -> Result<Report> {
    let mut columns = vec!["L".to_string(), "E".into(), "Var".into()];
    for n in 1..=cfg.n_max {
        columns.push(format!("c{n}"));
    }
    for n in 3..=cfg.n_max {
        columns.push(format!("c{n}/Var^{n}/2"));
    }
    let cols: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let mut report = Report::new(cfg.command.name(), cfg.echo(), &cols);
    // one L at a time: the block operator dominates memory
    let mut reports: Vec<CumulantReport> = Vec::new();
    for &l in &cfg.ls {
        let r = match &cfg.step {
            None => cumulant_counts(&cfg.kernel, l, cfg.density, cfg.n_max)?,
            Some(f) => cumulant_linear_stat(&cfg.kernel, f, l, cfg.density, cfg.n_max)?,
        };
        let mut row = vec![num(l), num(r.expectation), num(r.variance)];
        row.extend(r.c_n.iter().map(|c| num(*c)));
        row.extend(clt_diagnostic(&r)?.iter().map(|p| num(p.1)));
        report.push_row(row);
        report.checks.push(Check::at_most(format!("c1_vs_mean_L={l}"), r.mean_mismatch(), MEAN_TOL));
        if let Some(m) = r.variance_mismatch() {
            report.checks.push(Check::at_most(format!("c2_vs_variance_L={l}"), m, VARIANCE_TOL));
        }
        reports.push(r);
    }
    if reports.len() >= 2 {
        for n in 3..=cfg.n_max {
            let seq: Vec<f64> = reports.iter().map(|r| r.normalized[n - 1].abs()).collect();
            let decreasing = seq.windows(2).all(|w| w[1] < w[0]);
            let detail = seq.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ");
            report.checks.push(Check::new(format!("normalized_c{n}_decreasing"), decreasing, detail));
        }
    }
    Ok(report)
}

fn frcp_check(cfg: &RunConfig) -> Result<Report> {
    if let Some(step) = &cfg.step {
        return frcp_check_step(cfg, step);
    }
    let k_top = cfg.k_max.clamp(2, 4);
    let mut columns = vec![
        "L", "nodes", "comm_ratio", "comm_rank", "comm_residual", "defect_ratio", "defect_rank",
        "defect_residual", "cond_iv_max", "a_minus_a2_trace_norm", "b_norm",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    for k in 2..=k_top {
        columns.push(format!("decomp_residual_k{k}"));
    }
    let cols: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let mut report = Report::new(cfg.command.name(), cfg.echo(), &cols);
    for &l in &cfg.ls {
        let panels = ((2.0 * l * cfg.density) / PANEL_NODES as f64).ceil() as usize;
        let nodes = panels * PANEL_NODES;
        if nodes > MAX_SVD_DIM {
            bail!("L = {l} at density {} needs {nodes} nodes, above the SVD limit {MAX_SVD_DIM}", cfg.density);
        }
        let grid = Arc::new(Grid::new((-l, l), nodes, Scheme::GaussLegendre)?);
        let ops = KernelOperators::assemble(&cfg.kernel, &grid);
        let data = frcp_data(&cfg.kernel, l)?;
        let v = verify_on(cfg.kernel.kind, &ops, &data)?;
        let cond = condition_iv_table(&ops, &data, 3, 3)?;
        let mut row = vec![
            num(l),
            grid.len().to_string(),
            num(v.commutator.ratio),
            v.commutator.numerical_rank.to_string(),
            num(v.commutator.residual.unwrap_or(f64::NAN)),
            num(v.defect.ratio),
            v.defect.numerical_rank.to_string(),
            num(v.defect.residual.unwrap_or(f64::NAN)),
            num(cond.max_abs()),
            num(projection_defect(&ops)?),
            num(ops.b.singular_values()?[0]),
        ];
        let n = data.rank_bound();
        report.checks.push(Check::new(
            format!("commutator_rank<={n}_L={l}"),
            v.commutator.passed,
            format!("sigma_{}/sigma_1 = {:e}", n + 1, v.commutator.ratio),
        ));
        report.checks.push(Check::new(
            format!("defect_rank<={n}_L={l}"),
            v.defect.passed,
            format!("sigma_{}/sigma_1 = {:e}", n + 1, v.defect.ratio),
        ));
        report.checks.push(Check::at_most(
            format!("commutator_closed_form_L={l}"),
            v.commutator.residual.unwrap_or(f64::NAN),
            RANK_RESIDUAL_TOL,
        ));
        report.checks.push(Check::at_most(
            format!("defect_closed_form_L={l}"),
            v.defect.residual.unwrap_or(f64::NAN),
            RANK_RESIDUAL_TOL,
        ));
        for k in 2..=k_top {
            let t = trace_decomposition(&ops, &data, k)?;
            row.push(num(t.residual));
            report.checks.push(Check::at_most(format!("trace_decomposition_k={k}_L={l}"), t.residual, DECOMPOSITION_TOL));
        }
        report.push_row(row);
    }
    Ok(report)
}

fn frcp_check_step(cfg: &RunConfig, step: &StepFunction) -> Result<Report> {
    if cfg.kernel.kind != KernelKind::Sine4 {
        bail!(pfclt_core::Error::Unsupported(
            "per-piece FRCP is only available for sine4".into()
        ));
    }
    let mut report = Report::new(
        cfg.command.name(),
        cfg.echo(),
        &["L", "max_piece_residual", "DfG_max", "DfE_max", "HG_max", "HE_max"],
    );
    let tables = condition_scan_step(&cfg.kernel, step, &cfg.ls, cfg.density)?;
    for t in tables {
        let res = verify_step_frcp(&cfg.kernel, &step.scaled(t.l)?, cfg.density)?;
        let worst = res.iter().cloned().fold(0.0, f64::max);
        let mut row = vec![num(t.l), num(worst)];
        row.extend(t.family_max.iter().map(|p| num(p.1)));
        report.push_row(row);
        report.checks.push(Check::at_most(format!("piece_closed_form_L={}", t.l), worst, RANK_RESIDUAL_TOL));
    }
    Ok(report)
}

fn mc_clt(cfg: &RunConfig, beta: Option<u8>, n: usize) -> Result<Report> {
    let beta = beta.unwrap_or(match cfg.kernel.kind {
        KernelKind::Sine4 => 4,
        KernelKind::Sine1 => 1,
    });
    let f = statistic(cfg)?;
    let mut base = EnsembleConfig::new(beta, n, cfg.samples, cfg.seed, cfg.ls[0])?;
    if let Some(s) = &cfg.step {
        base = base.with_step(s.clone())?;
    }
    let samples = fluctuation_scan(&base, &cfg.ls)?;
    let mut report = Report::new(
        cfg.command.name(),
        cfg.echo(),
        &["L", "mean", "expected_mean", "se_mean", "variance", "skewness", "excess_kurtosis", "ks", "ks_lattice"],
    );
    let mass: f64 = f.pieces().iter().map(|&(c, a, b)| c * (b - a)).sum();
    for s in &samples {
        let expected = target_intensity(beta) * mass * s.l;
        report.push_row(vec![
            num(s.l),
            num(s.mean),
            num(expected),
            num(s.standard_error_mean()),
            num(s.variance),
            num(s.skewness()),
            num(s.excess_kurtosis()),
            num(s.ks),
            s.ks_lattice.map_or(String::new(), num),
        ]);
        let se = s.standard_error_mean();
        report.checks.push(Check::new(
            format!("mean_within_3se_L={}", s.l),
            (s.mean - expected).abs() <= 3.0 * se,
            format!("|{} - {expected}| <= 3*{se:.4e}", s.mean),
        ));
    }
    if samples.len() >= 2 {
        let ls: Vec<f64> = samples.iter().map(|s| s.l).collect();
        let vs: Vec<f64> = samples.iter().map(|s| s.variance).collect();
        let slope = log_slope(&ls, &vs)?;
        let kernel = if beta == 4 {
            pfclt_core::kernels::MatrixKernel::sine4()
        } else {
            pfclt_core::kernels::MatrixKernel::sine1()
        };
        report
            .checks
            .push(Check::relative("variance_log_slope", slope, variance_log_coefficient(&kernel, &f), SLOPE_TOL_MC));
    }
    let last = samples.last().expect("at least one L");
    let (se_skew, se_kurt) = last.shape_standard_errors();
    report.checks.push(Check::at_most(format!("skewness_within_4se_L={}", last.l), last.skewness(), 4.0 * se_skew));
    report.checks.push(Check::at_most(
        format!("excess_kurtosis_within_4se_L={}", last.l),
        last.excess_kurtosis(),
        4.0 * se_kurt,
    ));
    report.checks.push(Check::at_most(format!("ks_L={}", last.l), last.ks, KS_TOL));
    Ok(report)
}
