use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qstoch_core::C64;

#[derive(Debug, Parser)]
#[command(name = "qstoch", version, about = "Ito/Stratonovich conversions, schemes and limits")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file (stdout when absent).
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert SDE coefficients between calculi on a grid.
    #[command(subcommand)]
    Convert(ConvertCmd),
    /// Monte Carlo ensemble of a scalar SDE.
    Simulate(SimulateArgs),
    /// Hudson-Parthasarathy coefficient maps.
    #[command(subcommand)]
    Hp(HpCmd),
    /// Vacuum moments of a scalar Wiener or Poisson process.
    Moments(MomentsArgs),
    /// Colored-noise to white-noise limit scans.
    #[command(subcommand)]
    Limit(LimitCmd),
}

#[derive(Debug, Subcommand)]
pub enum ConvertCmd {
    Wiener(ConvertArgs),
    Poisson(ConvertArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConvertDirection {
    S2i,
    I2s,
    Midpoint,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Drift coefficient (ignored for Poisson conversions, which only touch the jump coefficient).
    #[arg(long, default_value = "0")]
    pub drift: String,
    /// Noise coefficient in x and t.
    #[arg(long)]
    pub noise: String,
    #[arg(long, value_enum)]
    pub direction: ConvertDirection,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    pub xmin: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub xmax: f64,
    #[arg(long, default_value_t = 2001, value_parser = clap::value_parser!(u32).range(2..))]
    pub points: u32,
    #[arg(long, default_value_t = 1e-12, value_parser = positive)]
    pub tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    /// Time slice at which coefficients are evaluated.
    #[arg(long, default_value_t = 0.0)]
    pub t: f64,
    /// Named constant, `name=value`; repeatable.
    #[arg(long = "const", value_parser = constant)]
    pub constants: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Wiener,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Euler,
    Averaged,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CalculusArg {
    Ito,
    Stratonovich,
    Midpoint,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub noise: NoiseArg,
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,
    /// Calculus the coefficients are written in. Euler on Stratonovich or
    /// midpoint coefficients converts them to Ito form first.
    #[arg(long, value_enum)]
    pub calculus: CalculusArg,
    #[arg(long)]
    pub drift: String,
    #[arg(long)]
    pub noise_coeff: String,
    #[arg(long = "T", value_parser = positive)]
    pub t_end: f64,
    #[arg(long, value_parser = positive)]
    pub h: f64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub paths: u64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub x0: f64,
    /// Poisson intensity.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub rate: f64,
    /// Closed-form oracle: `gbm:b`, `poisson-linear:m` or `linear-ode:a`.
    #[arg(long)]
    pub oracle: Option<OracleArg>,
    #[arg(long = "const", value_parser = constant)]
    pub constants: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleArg {
    Gbm(f64),
    PoissonLinear(f64),
    LinearOde(f64),
}

impl std::str::FromStr for OracleArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (name, value) = s.split_once(':').ok_or_else(|| format!("expected name:value, got `{s}`"))?;
        let v: f64 = value.parse().map_err(|_| format!("bad oracle parameter `{value}`"))?;
        match name {
            "gbm" => Ok(OracleArg::Gbm(v)),
            "poisson-linear" => Ok(OracleArg::PoissonLinear(v)),
            "linear-ode" => Ok(OracleArg::LinearOde(v)),
            _ => Err(format!("unknown oracle `{name}` (gbm, poisson-linear, linear-ode)")),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum HpCmd {
    /// Ito coefficients (W, L, H) of a Stratonovich generator, or the reverse with --invert.
    Coeffs(HpCoeffsArgs),
    /// Heisenberg equation coefficients of an initial observable.
    Heisenberg(HpHeisenbergArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HFormArg {
    Printed,
    NormalOrdered,
}

#[derive(Debug, Args)]
pub struct GeneratorArgs {
    #[arg(long = "E", required = true)]
    pub e: Option<PathBuf>,
    #[arg(long = "F", required = true)]
    pub f: Option<PathBuf>,
    #[arg(long = "G", required = true)]
    pub g: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HpCoeffsArgs {
    #[arg(long = "E", required_unless_present = "invert")]
    pub e: Option<PathBuf>,
    #[arg(long = "F", required_unless_present = "invert")]
    pub f: Option<PathBuf>,
    #[arg(long = "G", required_unless_present = "invert")]
    pub g: Option<PathBuf>,
    #[arg(long = "W", required_if_eq("invert", "true"))]
    pub w: Option<PathBuf>,
    #[arg(long = "L", required_if_eq("invert", "true"))]
    pub l: Option<PathBuf>,
    #[arg(long = "H", required_if_eq("invert", "true"))]
    pub h: Option<PathBuf>,
    /// `re,im` with re > 0.
    #[arg(long, value_parser = complex, allow_hyphen_values = true)]
    pub kappa: C64,
    /// Map Ito coefficients --W --L --H back to a Stratonovich generator.
    #[arg(long)]
    pub invert: bool,
    #[arg(long, value_enum, default_value_t = HFormArg::Printed)]
    pub h_form: HFormArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeisenbergForm {
    Ito,
    Strat,
    Lemma66,
    /// Per-block mismatch between the reordered and the printed Stratonovich forms.
    Discrepancy,
}

#[derive(Debug, Args)]
pub struct HpHeisenbergArgs {
    #[arg(long)]
    pub x0: PathBuf,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, value_parser = complex, allow_hyphen_values = true)]
    pub kappa: C64,
    #[arg(long, value_enum, default_value_t = HeisenbergForm::Ito)]
    pub form: HeisenbergForm,
    #[arg(long, value_enum, default_value_t = HFormArg::Printed)]
    pub h_form: HFormArg,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[arg(long, value_enum)]
    pub process: NoiseArg,
    /// Wiener scale s in s (dA^{10} + dA^{01}).
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=64))]
    pub order: u32,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
}

#[derive(Debug, Subcommand)]
pub enum LimitCmd {
    /// Two-point integrals of phi(t, s) against the scaled kernel.
    TwoPoint(TwoPointArgs),
    /// Iterated series matrix element from a JSON config.
    Series(SeriesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpKernel {
    pub beta: f64,
    pub kappa: C64,
}

impl std::str::FromStr for ExpKernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let rest = s.strip_prefix("exp:").ok_or_else(|| format!("expected exp:beta,re,im, got `{s}`"))?;
        let parts: Vec<f64> = rest
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number `{p}`")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [beta, re, im] if beta > 0.0 => Ok(ExpKernel { beta, kappa: C64::new(re, im) }),
            [_, _, _] => Err("beta must be positive".into()),
            _ => Err(format!("expected three numbers after exp:, got {}", parts.len())),
        }
    }
}

#[derive(Debug, Args)]
pub struct TwoPointArgs {
    /// Test function of t and s.
    #[arg(long)]
    pub phi: String,
    #[arg(long)]
    pub kernel: ExpKernel,
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    /// Integration window [0, window]^2.
    #[arg(long, default_value_t = 10.0, value_parser = positive)]
    pub window: f64,
    #[arg(long = "const", value_parser = constant)]
    pub constants: Vec<(String, f64)>,
}

#[derive(Debug, Args)]
pub struct SeriesArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be > 0, got {s}"))
    }
}

fn complex(s: &str) -> Result<C64, String> {
    let (re, im) = s.split_once(',').ok_or_else(|| format!("expected re,im, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad number `{v}`"));
    Ok(C64::new(p(re)?, p(im)?))
}

fn constant(s: &str) -> Result<(String, f64), String> {
    let (name, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v: f64 = v.parse().map_err(|_| format!("bad value `{v}`"))?;
    Ok((name.trim().to_string(), v))
}
