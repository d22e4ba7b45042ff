use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qstoch_core::classical::{
    linspace, midpoint_ito_coeff, poisson_ito_to_strat, poisson_strat_to_ito, wiener_convert, Calculus, CoefficientPair,
    Direction, FixedPointSolution, InverseOptions, ItoCoefficient, NoiseKind,
};
use qstoch_core::expr::Bindings;
use qstoch_core::hp::{
    heisenberg_ito_coeffs, heisenberg_strat_coeffs, ito_to_strat_unitary_with, lemma66_reorder, strat_discrepancy,
    strat_to_ito_unitary_with, unitarity_residual, HShiftForm, HeisenbergCoeffs, ItoUnitaryCoeffs, StratGenerator,
    BLOCK_NAMES,
};
use qstoch_core::ito::{moment_evolution, ScalarProcessSpec};
use qstoch_core::limit::{series_scan, two_point_scan, CorrelationKernel, LimitSeriesConfig, ScanReport};
use qstoch_core::sde::{run_ensemble, EnsembleConfig, Model, Oracle, Scheme, RNG_VERSION};
use qstoch_core::{Expr, OperatorMatrix, C64};
use serde::Deserialize;

use crate::args::*;
use crate::output::{fmt_c64, Cell, Report};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unreadable inputs; exit code 2.
    Usage(String),
    /// The computation itself failed; exit code 1.
    Domain(qstoch_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }

    pub fn diagnostic(&self) -> String {
        use qstoch_core::Error as E;
        match self {
            CliError::Usage(m) => format!("usage error: {m}"),
            CliError::Domain(e) => {
                let cause = match e {
                    E::NotConvertible { .. } => "reflection case, no Stratonovich generator exists",
                    E::NoContraction { .. } => "jump coefficient too steep for the fixed-point map",
                    E::NotMonotone { .. } => "x + mu(x) must be increasing",
                    E::GridEscape { .. } => "orbits of x + mu(x) leave the grid; widen it",
                    E::SeriesNotConvergent { .. } => "coupling or horizon too large for the iterated series",
                    E::NotIntegrable { .. } => "correlation kernel must decay",
                    E::Matrix(_) => "operator algebra",
                    E::Expr(_) => "coefficient expression",
                    _ => "computation failed",
                };
                format!("error ({cause}): {e}")
            }
        }
    }
}

impl From<qstoch_core::Error> for CliError {
    fn from(e: qstoch_core::Error) -> Self {
        CliError::Domain(e)
    }
}

type Res<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Inputs read from disk, kept so they can be hashed into the metadata.
#[derive(Default)]
pub struct Inputs {
    pub files: BTreeMap<PathBuf, String>,
}

impl Inputs {
    fn read(&mut self, flag: &str, path: &Path) -> Res<String> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{flag} {}: {e}", path.display())))?;
        self.files.insert(path.to_path_buf(), text.clone());
        Ok(text)
    }

    fn matrix(&mut self, flag: &str, path: &Path) -> Res<OperatorMatrix> {
        let text = self.read(flag, path)?;
        serde_json::from_str(&text).map_err(|e| usage(format!("{flag} {}: {e}", path.display())))
    }
}

pub fn dispatch(cli: &Cli, inputs: &mut Inputs) -> Res<Report> {
    match &cli.command {
        Command::Convert(ConvertCmd::Wiener(a)) => convert_wiener(a),
        Command::Convert(ConvertCmd::Poisson(a)) => convert_poisson(a),
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Hp(HpCmd::Coeffs(a)) => hp_coeffs(a, inputs),
        Command::Hp(HpCmd::Heisenberg(a)) => hp_heisenberg(a, inputs),
        Command::Moments(a) => moments(a),
        Command::Limit(LimitCmd::TwoPoint(a)) => limit_two_point(a),
        Command::Limit(LimitCmd::Series(a)) => limit_series(a, cli.seed, inputs),
    }
}

fn expr(flag: &str, s: &str) -> Res<Expr> {
    s.parse().map_err(|e| usage(format!("{flag} `{s}`: {e}")))
}

fn bindings(constants: &[(String, f64)]) -> Bindings {
    constants.iter().cloned().collect()
}

fn pair(drift: &str, noise: &str, calculus: Calculus, kind: NoiseKind, constants: &[(String, f64)]) -> Res<CoefficientPair> {
    let mut p = CoefficientPair::new(expr("--drift", drift)?, expr("--noise", noise)?, calculus, kind);
    for (name, v) in constants {
        p = p.with_constant(name, *v);
    }
    Ok(p)
}

fn grid(a: &ConvertArgs) -> Res<Vec<f64>> {
    if !(a.xmin < a.xmax) || !a.xmin.is_finite() || !a.xmax.is_finite() {
        return Err(usage(format!("--xmin {} must be below --xmax {}", a.xmin, a.xmax)));
    }
    Ok(linspace(a.xmin, a.xmax, a.points as usize))
}

fn convert_wiener(a: &ConvertArgs) -> Res<Report> {
    let xs = grid(a)?;
    // For Wiener noise the midpoint scheme converges to the Stratonovich solution.
    let (source, dir, back) = match a.direction {
        ConvertDirection::S2i | ConvertDirection::Midpoint => {
            (Calculus::Stratonovich, Direction::StratToIto, Direction::ItoToStrat)
        }
        ConvertDirection::I2s => (Calculus::Ito, Direction::ItoToStrat, Direction::StratToIto),
    };
    let p = pair(&a.drift, &a.noise, source, NoiseKind::Wiener, &a.constants)?;
    let q = wiener_convert(&p, dir)?;
    let r = wiener_convert(&q, back)?;
    let rows = xs
        .iter()
        .map(|&x| {
            let v = q.drift_at(x, a.t)?;
            let residual = (r.drift_at(x, a.t)? - p.drift_at(x, a.t)?).abs();
            Ok(vec![x.into(), v.into(), residual.into()])
        })
        .collect::<Res<Vec<_>>>()?;
    Ok(Report::table(vec!["x", "value", "residual"], rows)
        .with("noise", "wiener")
        .with("direction", format!("{:?}", a.direction).to_lowercase())
        .with("drift_out", &q.drift)
        .with("residual_kind", "round-trip drift difference"))
}

fn convert_poisson(a: &ConvertArgs) -> Res<Report> {
    let xs = grid(a)?;
    let mu = expr("--noise", &a.noise)?;
    let b = bindings(&a.constants);
    let sol: FixedPointSolution = match a.direction {
        ConvertDirection::S2i => poisson_strat_to_ito(&mu, &b, &xs, a.t, a.tol, a.max_iter)?,
        ConvertDirection::Midpoint => midpoint_ito_coeff(&mu, &b, &xs, a.t, a.tol, a.max_iter)?,
        ConvertDirection::I2s => poisson_ito_to_strat(
            ItoCoefficient::Expr { mu_tilde: &mu, bindings: &b, t: a.t },
            &xs,
            InverseOptions { tol: a.tol, max_iter: a.max_iter, ..InverseOptions::default() },
        )?,
    };
    let rows = xs
        .iter()
        .zip(&sol.function.ys)
        .zip(&sol.residuals)
        .map(|((&x, &v), &r)| vec![x.into(), v.into(), r.into()])
        .collect();
    Ok(Report::table(vec!["x", "value", "residual"], rows)
        .with("noise", "poisson")
        .with("direction", format!("{:?}", a.direction).to_lowercase())
        .with("iterations", sol.iterations)
        .with("monotone", sol.monotone)
        .with("residual_kind", "fixed-point equation residual"))
}

fn simulate(a: &SimulateArgs, seed: u64) -> Res<Report> {
    let kind = match a.noise {
        NoiseArg::Wiener => NoiseKind::Wiener,
        NoiseArg::Poisson => NoiseKind::Poisson,
    };
    let calculus = match a.calculus {
        CalculusArg::Ito => Calculus::Ito,
        CalculusArg::Stratonovich => Calculus::Stratonovich,
        CalculusArg::Midpoint => Calculus::Midpoint,
    };
    let p = pair(&a.drift, &a.noise_coeff, calculus, kind, &a.constants)?;
    let (scheme, model, model_name) = match (a.scheme, calculus) {
        (SchemeArg::Euler, Calculus::Ito) => (Scheme::Euler, Model::new(&p)?, "as-given"),
        (SchemeArg::Euler, Calculus::Stratonovich) => (Scheme::Euler, Model::ito_from_strat(&p)?, "ito-from-stratonovich"),
        (SchemeArg::Euler, Calculus::Midpoint) => (Scheme::Euler, Model::ito_from_midpoint(&p)?, "ito-from-midpoint"),
        (SchemeArg::Averaged, Calculus::Stratonovich) => (Scheme::Averaged, Model::new(&p)?, "as-given"),
        (SchemeArg::Midpoint, Calculus::Stratonovich | Calculus::Midpoint) => {
            (Scheme::Midpoint, Model::new(&p)?, "as-given")
        }
        (s, c) => {
            return Err(usage(format!("--scheme {s:?} cannot run --calculus {c} coefficients").to_lowercase()));
        }
    };
    let mut cfg = EnsembleConfig::new(scheme, a.t_end, a.h, a.paths as usize, seed);
    cfg.x0 = a.x0;
    cfg.rate = a.rate;
    cfg.oracle = a.oracle.map(|o| match o {
        OracleArg::Gbm(b) => Oracle::GbmIto { b },
        OracleArg::PoissonLinear(m) => Oracle::PoissonLinearIto { m },
        OracleArg::LinearOde(a) => Oracle::LinearOde { a },
    });
    let e = run_ensemble(&model, &cfg)?;
    let rows = (0..e.times.len())
        .map(|j| {
            let mut row = vec![j.into(), e.times[j].into(), e.mean[j].into(), e.variance[j].into()];
            if let Some(rms) = &e.rms_error {
                row.push(rms[j].into());
            }
            row
        })
        .collect();
    let mut columns = vec!["step", "t", "mean", "variance"];
    if e.rms_error.is_some() {
        columns.push("rms_error");
    }
    Ok(Report::table(columns, rows)
        .with("rng", RNG_VERSION)
        .with("paths", a.paths)
        .with("model", model_name))
}

fn h_form(f: HFormArg) -> HShiftForm {
    match f {
        HFormArg::Printed => HShiftForm::Printed,
        HFormArg::NormalOrdered => HShiftForm::NormalOrdered,
    }
}

fn generator(e: &Path, f: &Path, g: &Path, kappa: C64, inputs: &mut Inputs) -> Res<StratGenerator> {
    let (e, f, g) = (inputs.matrix("--E", e)?, inputs.matrix("--F", f)?, inputs.matrix("--G", g)?);
    Ok(StratGenerator::new(e, f, g, kappa)?)
}

fn hp_coeffs(a: &HpCoeffsArgs, inputs: &mut Inputs) -> Res<Report> {
    let form = h_form(a.h_form);
    let required = |p: &Option<PathBuf>, flag: &str| p.clone().ok_or_else(|| usage(format!("missing {flag}")));
    if a.invert {
        let co = ItoUnitaryCoeffs {
            w: inputs.matrix("--W", &required(&a.w, "--W")?)?,
            l: inputs.matrix("--L", &required(&a.l, "--L")?)?,
            h: inputs.matrix("--H", &required(&a.h, "--H")?)?,
            gamma: 2.0 * a.kappa.re,
        };
        let g = ito_to_strat_unitary_with(&co, a.kappa, form)?;
        return Ok(Report::matrices(vec![("E".into(), g.e), ("F".into(), g.f), ("G".into(), g.g)])
            .with("kappa", fmt_c64(a.kappa))
            .with("h_form", format!("{:?}", a.h_form).to_lowercase()));
    }
    let g = generator(&required(&a.e, "--E")?, &required(&a.f, "--F")?, &required(&a.g, "--G")?, a.kappa, inputs)?;
    let co = strat_to_ito_unitary_with(&g, form)?;
    let residual = unitarity_residual(&co);
    Ok(Report::matrices(vec![("W".into(), co.w), ("L".into(), co.l), ("H".into(), co.h)])
        .with("kappa", fmt_c64(a.kappa))
        .with("gamma", crate::output::fmt_f64(co.gamma))
        .with("h_form", format!("{:?}", a.h_form).to_lowercase())
        .with("unitarity_residual", crate::output::fmt_f64(residual)))
}

fn hp_heisenberg(a: &HpHeisenbergArgs, inputs: &mut Inputs) -> Res<Report> {
    let x0 = inputs.matrix("--x0", &a.x0)?;
    let gen = &a.generator;
    let paths = (gen.e.as_ref(), gen.f.as_ref(), gen.g.as_ref());
    let (Some(e), Some(f), Some(g)) = paths else {
        return Err(usage("missing --E, --F or --G"));
    };
    let g = generator(e, f, g, a.kappa, inputs)?;
    let coeffs = |c: HeisenbergCoeffs| {
        let [c11, c10, c01, c00] = [c.c11, c.c10, c.c01, c.c00];
        BLOCK_NAMES.iter().map(|n| n.to_string()).zip([c11, c10, c01, c00]).collect::<Vec<_>>()
    };
    let form_name = format!("{:?}", a.form).to_lowercase();
    let report = match a.form {
        HeisenbergForm::Ito => {
            let co = strat_to_ito_unitary_with(&g, h_form(a.h_form))?;
            Report::matrices(coeffs(heisenberg_ito_coeffs(&x0, &co)?))
                .with("h_form", format!("{:?}", a.h_form).to_lowercase())
        }
        HeisenbergForm::Strat => Report::matrices(coeffs(heisenberg_strat_coeffs(&x0, &g)?)),
        HeisenbergForm::Lemma66 => Report::matrices(coeffs(lemma66_reorder(&x0, &g)?)),
        HeisenbergForm::Discrepancy => {
            let d = strat_discrepancy(&x0, &g)?;
            let names = ["two_sigma", "g_for_h", "ff_dagger_resolvent", "i_kappa"];
            let row = |label: &str, v: [f64; 4]| {
                let mut r = vec![Cell::Text(label.into())];
                r.extend(v.iter().map(|&x| Cell::from(x)));
                r
            };
            let mut rows = vec![row("literal", d.literal)];
            rows.extend(names.iter().zip(d.single).map(|(n, v)| row(n, v)));
            rows.push(row("all", d.corrected));
            Report::table(vec!["correction", "c11", "c10", "c01", "c00"], rows)
        }
    };
    Ok(report.with("form", form_name).with("kappa", fmt_c64(a.kappa)))
}

fn moments(a: &MomentsArgs) -> Res<Report> {
    let spec = match a.process {
        NoiseArg::Wiener => ScalarProcessSpec::wiener(a.scale),
        NoiseArg::Poisson => ScalarProcessSpec::poisson(),
    };
    let m = moment_evolution(&spec, a.order as usize, a.t)?;
    let rows = m.iter().enumerate().map(|(i, &v)| vec![(i + 1).into(), v.into()]).collect();
    Ok(Report::table(vec!["k", "moment"], rows).with("process", format!("{:?}", a.process).to_lowercase()))
}

fn scan_report(r: ScanReport) -> Report {
    let rows = r
        .rows
        .iter()
        .map(|row| vec![row.lambda.into(), row.value.re.into(), row.value.im.into(), row.deviation.into()])
        .collect();
    Report::table(vec!["lambda", "value_re", "value_im", "deviation"], rows)
        .with("limit", fmt_c64(r.limit))
        .with("monotone", r.monotone)
        .with("order", r.order.map_or("none".into(), crate::output::fmt_f64))
}

fn limit_two_point(a: &TwoPointArgs) -> Res<Report> {
    let phi = expr("--phi", &a.phi)?;
    let kernel = CorrelationKernel::exponential(a.kernel.kappa, a.kernel.beta)?;
    let r = two_point_scan(&phi, &bindings(&a.constants), &kernel, a.window, &a.lambdas)?;
    Ok(scan_report(r).with("window", crate::output::fmt_f64(a.window)))
}

/// JSON layout of `limit series --config`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesFile {
    c00: OperatorMatrix,
    c01: OperatorMatrix,
    c10: OperatorMatrix,
    c11: OperatorMatrix,
    x0: OperatorMatrix,
    #[serde(default)]
    u: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    v: Option<Vec<[f64; 2]>>,
    f: String,
    k: String,
    #[serde(default)]
    constants: Bindings,
    kernel: KernelFile,
    t_max: f64,
    n_max: Option<usize>,
    quad_order: Option<usize>,
    mc_samples: Option<usize>,
    n_times: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelFile {
    beta: f64,
    kappa: [f64; 2],
}

fn series_config(text: &str, path: &Path, seed: u64) -> Res<LimitSeriesConfig> {
    let bad = |e: String| usage(format!("--config {}: {e}", path.display()));
    let file: SeriesFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let kernel = CorrelationKernel::exponential(C64::new(file.kernel.kappa[0], file.kernel.kappa[1]), file.kernel.beta)?;
    let f = expr("f", &file.f)?;
    let k = expr("k", &file.k)?;
    let mut cfg = LimitSeriesConfig::new([[file.c00, file.c01], [file.c10, file.c11]], file.x0, f, k, kernel, file.t_max);
    let vec = |v: Vec<[f64; 2]>| v.into_iter().map(|[re, im]| C64::new(re, im)).collect();
    if let Some(u) = file.u {
        cfg.u = vec(u);
    }
    if let Some(v) = file.v {
        cfg.v = vec(v);
    }
    cfg.bindings = file.constants;
    cfg.n_max = file.n_max.unwrap_or(cfg.n_max);
    cfg.quad_order = file.quad_order.unwrap_or(cfg.quad_order);
    cfg.mc_samples = file.mc_samples.unwrap_or(cfg.mc_samples);
    cfg.n_times = file.n_times.unwrap_or(cfg.n_times);
    cfg.seed = seed;
    Ok(cfg)
}

fn limit_series(a: &SeriesArgs, seed: u64, inputs: &mut Inputs) -> Res<Report> {
    let text = inputs.read("--config", &a.config)?;
    let cfg = series_config(&text, &a.config, seed)?;
    let r = series_scan(&cfg, &a.lambdas)?;
    Ok(scan_report(r).with("t", crate::output::fmt_f64(cfg.t_max)).with("rng", "chacha20"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_file_parses_with_defaults() {
        let m = r#"{"dim":1,"entries":[[[0.1,0]]]}"#;
        let text = format!(
            r#"{{"c00":{m},"c01":{m},"c10":{m},"c11":{m},"x0":{m},"f":"1","k":"1","kernel":{{"beta":1,"kappa":[0.5,0]}},"t_max":1}}"#
        );
        let cfg = series_config(&text, Path::new("cfg.json"), 4).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.u, vec![C64::new(1.0, 0.0)]);
    }

    #[test]
    fn unknown_series_field_is_usage_error() {
        let err = series_config(r#"{"bogus":1}"#, Path::new("cfg.json"), 0).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn reflection_diagnostic() {
        let err = CliError::from(qstoch_core::Error::NotConvertible { min_singular: 0.0 });
        assert_eq!(err.exit_code(), 1);
        assert!(err.diagnostic().contains("W = -1"));
        assert!(err.diagnostic().contains("reflection"));
    }
}
