//! Command-line flags and the validated run configuration.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pfclt_core::discretize::StepFunction;
use pfclt_core::kernels::{KernelKind, MatrixKernel};
use std::path::PathBuf;

#[derive(Parser, Debug, Clone)]
#[command(name = "pfclt", version, about = "Pfaffian sine-kernel processes: correlations, cumulants, FRCP checks and Monte Carlo")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// sine1 or sine4.
    #[arg(long, global = true, default_value = "sine4")]
    pub kernel: KernelKind,

    /// Comma-separated ascending scales.
    #[arg(long = "L", global = true, value_delimiter = ',', num_args = 1..)]
    pub l: Option<Vec<f64>>,

    /// Quadrature nodes per unit length (at least 8).
    #[arg(long, global = true)]
    pub grid_density: Option<f64>,

    #[arg(long, global = true, default_value_t = 4)]
    pub nmax: usize,

    #[arg(long, global = true, default_value_t = 4)]
    pub kmax: usize,

    #[arg(long, global = true, default_value_t = 2024)]
    pub seed: u64,

    #[arg(long, global = true, default_value_t = 10_000)]
    pub samples: usize,

    /// Step function "λ:a:b,λ:a:b" on the unscaled axis.
    #[arg(long, global = true)]
    pub step: Option<String>,

    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// ρ_k at given points.
    CorrelationEval {
        /// One point tuple, comma-separated.
        #[arg(long, allow_hyphen_values = true)]
        points: Option<String>,
        /// One point tuple per line; `#` starts a comment.
        #[arg(long)]
        points_file: Option<PathBuf>,
    },
    /// Expectation and variance across L, with the fitted log-slope.
    VarianceScan,
    /// Count or step-function cumulants across L.
    CumulantScan,
    /// Commutator ranks, closed-form residuals and trace decompositions.
    FrcpCheck,
    /// Tridiagonal β-ensemble sampling of the statistic.
    McClt {
        /// 1 or 4; defaults to the kernel's β.
        #[arg(long)]
        beta: Option<u8>,
        /// Matrix size.
        #[arg(long, default_value_t = 2000)]
        n: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CorrelationEval { .. } => "correlation-eval",
            Command::VarianceScan => "variance-scan",
            Command::CumulantScan => "cumulant-scan",
            Command::FrcpCheck => "frcp-check",
            Command::McClt { .. } => "mc-clt",
        }
    }

    fn default_ls(&self) -> Vec<f64> {
        match self {
            Command::CorrelationEval { .. } => vec![1.0],
            Command::VarianceScan | Command::CumulantScan => vec![25.0, 50.0, 100.0, 200.0],
            Command::FrcpCheck => vec![10.0, 25.0, 50.0],
            Command::McClt { .. } => vec![8.0, 16.0, 32.0],
        }
    }

    fn default_density(&self) -> f64 {
        match self {
            // the block operator at L = 200 is 6400² at density 8
            Command::CumulantScan => 8.0,
            _ => 16.0,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

pub const MIN_DENSITY: f64 = 8.0;

/// Flags after defaults and validation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub kernel: MatrixKernel,
    pub ls: Vec<f64>,
    pub density: f64,
    pub n_max: usize,
    pub k_max: usize,
    pub seed: u64,
    pub samples: usize,
    pub step: Option<StepFunction>,
    pub step_text: Option<String>,
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Result<Self> {
        let ls = cli.l.unwrap_or_else(|| cli.command.default_ls());
        if ls.is_empty() {
            bail!("--L needs at least one value");
        }
        if ls.iter().any(|l| !l.is_finite()) || ls.windows(2).any(|w| w[0] >= w[1]) {
            bail!("--L values must be finite and strictly ascending");
        }
        let density = cli.grid_density.unwrap_or_else(|| cli.command.default_density());
        if !(density >= MIN_DENSITY) {
            bail!("--grid-density must be at least {MIN_DENSITY}, got {density}");
        }
        let step = cli.step.as_deref().map(parse_step).transpose()?;
        Ok(Self {
            command: cli.command,
            kernel: MatrixKernel::new(cli.kernel),
            ls,
            density,
            n_max: cli.nmax,
            k_max: cli.kmax,
            seed: cli.seed,
            samples: cli.samples,
            step,
            step_text: cli.step,
            out: cli.out,
            format: cli.format,
        })
    }

    /// `key=value` pairs echoed into the output header.
    pub fn echo(&self) -> Vec<(String, String)> {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut out = vec![
            ("kernel".to_string(), self.kernel.kind.to_string()),
            ("L".to_string(), join(&self.ls)),
            ("grid_density".to_string(), self.density.to_string()),
            ("nmax".to_string(), self.n_max.to_string()),
            ("kmax".to_string(), self.k_max.to_string()),
            ("seed".to_string(), self.seed.to_string()),
            ("samples".to_string(), self.samples.to_string()),
            ("step".to_string(), self.step_text.clone().unwrap_or_else(|| "none".into())),
        ];
        if let Command::McClt { beta, n } = &self.command {
            out.push(("beta".into(), beta.map_or("kernel".into(), |b| b.to_string())));
            out.push(("n".into(), n.to_string()));
        }
        out
    }
}

/// Parses `"λ:a:b,λ:a:b"`.
pub fn parse_step(text: &str) -> Result<StepFunction> {
    let mut pieces = Vec::new();
    for (i, part) in text.split(',').enumerate() {
        let fields: Vec<&str> = part.trim().split(':').collect();
        if fields.len() != 3 {
            bail!("step piece {} ('{part}') must be λ:a:b", i + 1);
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("step piece {}: '{s}' is not a number", i + 1))
        };
        pieces.push((num(fields[0])?, num(fields[1])?, num(fields[2])?));
    }
    Ok(StepFunction::new(pieces)?)
}

/// One point tuple per non-empty line; values separated by commas or whitespace.
pub fn parse_points(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tuple = Vec::new();
        for tok in body.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => tuple.push(v),
                _ => bail!("parse error at line {}: '{tok}' is not a finite number", lineno + 1),
            }
        }
        out.push(tuple);
    }
    if out.is_empty() {
        bail!("no points given");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_syntax() {
        let s = parse_step("1:0:1, -1:1:2").unwrap();
        assert_eq!(s.pieces(), &[(1.0, 0.0, 1.0), (-1.0, 1.0, 2.0)]);
        assert!(parse_step("1:0").is_err());
        assert!(parse_step("1:x:2").is_err());
        assert!(parse_step("1:0:2,1:1:3").is_err());
    }

    #[test]
    fn points_syntax() {
        let p = parse_points("# header\n0, 0.5\n\n1 2 3 # trailing\n").unwrap();
        assert_eq!(p, vec![vec![0.0, 0.5], vec![1.0, 2.0, 3.0]]);
        let e = parse_points("0.1\n0.2\n0.x\n").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        assert!(parse_points("# nothing\n").is_err());
    }

    #[test]
    fn config_validation() {
        let base = ["pfclt", "variance-scan"];
        let cfg = RunConfig::from_cli(Cli::parse_from(base)).unwrap();
        assert_eq!(cfg.ls, vec![25.0, 50.0, 100.0, 200.0]);
        assert!(RunConfig::from_cli(Cli::parse_from(["pfclt", "variance-scan", "--L", "5,3"])).is_err());
        assert!(RunConfig::from_cli(Cli::parse_from(["pfclt", "variance-scan", "--grid-density", "4"])).is_err());
        let c = RunConfig::from_cli(Cli::parse_from(["pfclt", "cumulant-scan", "--kernel", "sine1", "--L", "3,6"])).unwrap();
        assert_eq!(c.kernel.kind, KernelKind::Sine1);
        assert_eq!(c.density, 8.0);
    }
}
