//! Experiment configuration: command-line flags merged over an optional
//! `key=value` file.

use std::collections::HashMap;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use safem_core::driver::SafemParams;
use safem_core::quadrature::ScalarField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProblemKind {
    Mixed,
    Ls,
    DataOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DomainKind {
    UnitSquare,
    LShape,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Safem,
    Cafem,
    Uniform,
    ApproxOnly,
}

/// Adaptive finite element experiments with separate or collective marking.
#[derive(Parser, Debug, Default)]
#[command(name = "safem", version)]
pub struct Cli {
    /// Plain-text `key=value` file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub problem: Option<ProblemKind>,
    #[arg(long, value_enum, conflicts_with = "mesh")]
    pub domain: Option<DomainKind>,
    /// Initial mesh file, instead of a built-in domain.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Right-hand side: one, zero, const:c, linear-x, radial-alpha:a[@x,y], checkerboard:k.
    #[arg(long)]
    pub field: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub theta_a: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub rho_b: Option<f64>,
    #[arg(long)]
    pub sigma_tol: Option<f64>,
    #[arg(long)]
    pub max_elements: Option<usize>,
    #[arg(long)]
    pub max_levels: Option<usize>,
    /// Exactness degree of the triangle quadrature (1, 2 or 5).
    #[arg(long)]
    pub quad_degree: Option<u32>,
    /// Tolerance for `--mode approx-only`.
    #[arg(long)]
    pub approx_tol: Option<f64>,
    /// Level CSV; `-` for standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Axiom report (text and key-value table).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Discrete solution on the final mesh.
    #[arg(long)]
    pub dump_solution: Option<PathBuf>,
    /// Final mesh in the text mesh format.
    #[arg(long)]
    pub final_mesh: Option<PathBuf>,
    /// `key=v1,v2,...` runs one experiment per value on worker threads.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Seed of the random hierarchy used by the report.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write zero into the `seconds` column.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Clone, Debug)]
pub enum DomainSource {
    Builtin(DomainKind),
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub domain: DomainSource,
    pub field: ScalarField,
    pub field_name: String,
    pub mode: Mode,
    pub params: SafemParams,
    pub quad_degree: u32,
    pub approx_tol: Option<f64>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub dump_solution: Option<PathBuf>,
    pub final_mesh: Option<PathBuf>,
    pub sweep: Option<(String, Vec<String>)>,
    pub seed: u64,
    pub timing: bool,
}

pub fn parse_config_file(text: &str) -> Result<HashMap<String, String>, UsageError> {
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected key=value", i + 1)))?;
        map.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(map)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, UsageError> {
    v.parse()
        .map_err(|_| UsageError(format!("invalid value `{v}` for `{key}`")))
}

fn parse_enum<T: ValueEnum>(key: &str, v: &str) -> Result<T, UsageError> {
    T::from_str(v, true).map_err(|_| UsageError(format!("invalid value `{v}` for `{key}`")))
}

const KEYS: &[&str] = &[
    "problem",
    "domain",
    "mesh",
    "field",
    "mode",
    "theta-a",
    "kappa",
    "rho-b",
    "sigma-tol",
    "max-elements",
    "max-levels",
    "quad-degree",
    "approx-tol",
    "out",
    "report",
    "dump-solution",
    "final-mesh",
    "sweep",
    "seed",
    "no-timing",
];

impl ExperimentConfig {
    /// Flags override `file`; remaining gaps take the defaults.
    pub fn resolve(cli: &Cli, file: &HashMap<String, String>) -> Result<Self, UsageError> {
        if let Some(k) = file.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(UsageError(format!("unknown config key `{k}`")));
        }
        let get = |k: &str| file.get(k).map(String::as_str);
        macro_rules! pick {
            ($flag:expr, $key:literal, $parse:expr) => {
                match &$flag {
                    Some(v) => Some(v.clone()),
                    None => get($key).map(|v| $parse($key, v)).transpose()?,
                }
            };
        }
        let defaults = SafemParams::default();
        let problem = pick!(cli.problem, "problem", parse_enum).unwrap_or(ProblemKind::Mixed);
        let mesh: Option<PathBuf> = pick!(cli.mesh, "mesh", parse::<PathBuf>);
        let domain = match (cli.domain, &cli.mesh) {
            (Some(d), _) => DomainSource::Builtin(d),
            (None, Some(p)) => DomainSource::File(p.clone()),
            (None, None) => match (get("domain"), mesh) {
                (Some(d), _) => DomainSource::Builtin(parse_enum("domain", d)?),
                (None, Some(p)) => DomainSource::File(p),
                (None, None) => DomainSource::Builtin(DomainKind::LShape),
            },
        };
        let field_name: String = pick!(cli.field, "field", parse::<String>).unwrap_or_else(|| "one".into());
        let field = parse::<ScalarField>("field", &field_name)?;
        let params = SafemParams {
            theta_a: pick!(cli.theta_a, "theta-a", parse).unwrap_or(defaults.theta_a),
            kappa: pick!(cli.kappa, "kappa", parse).unwrap_or(defaults.kappa),
            rho_b: pick!(cli.rho_b, "rho-b", parse).unwrap_or(defaults.rho_b),
            sigma_tol: pick!(cli.sigma_tol, "sigma-tol", parse).unwrap_or(defaults.sigma_tol),
            max_elements: pick!(cli.max_elements, "max-elements", parse).unwrap_or(defaults.max_elements),
            max_levels: pick!(cli.max_levels, "max-levels", parse),
            approx_cap: defaults.approx_cap,
        };
        params.validate().map_err(|e| UsageError(e.to_string()))?;
        let mode = pick!(cli.mode, "mode", parse_enum).unwrap_or(Mode::Safem);
        let approx_tol = pick!(cli.approx_tol, "approx-tol", parse);
        if mode == Mode::ApproxOnly && !approx_tol.is_some_and(|t: f64| t > 0.0) {
            return Err(UsageError("--mode approx-only needs a positive --approx-tol".into()));
        }
        let quad_degree = pick!(cli.quad_degree, "quad-degree", parse).unwrap_or(5);
        if !matches!(quad_degree, 1 | 2 | 5) {
            return Err(UsageError(format!("--quad-degree must be 1, 2 or 5, got {quad_degree}")));
        }
        let sweep = match pick!(cli.sweep, "sweep", parse::<String>) {
            None => None,
            Some(s) => {
                let (k, vs) = s
                    .split_once('=')
                    .ok_or_else(|| UsageError("--sweep expects key=v1,v2,...".into()))?;
                if !["theta-a", "kappa", "rho-b", "field", "max-elements"].contains(&k) {
                    return Err(UsageError(format!("cannot sweep over `{k}`")));
                }
                Some((k.to_string(), vs.split(',').map(str::to_string).collect()))
            }
        };
        let no_timing = cli.no_timing || get("no-timing").map(|v| parse::<bool>("no-timing", v)).transpose()?.unwrap_or(false);
        Ok(Self {
            problem,
            domain,
            field,
            field_name,
            mode,
            params,
            quad_degree,
            approx_tol,
            out: pick!(cli.out, "out", parse::<PathBuf>),
            report: pick!(cli.report, "report", parse::<PathBuf>),
            dump_solution: pick!(cli.dump_solution, "dump-solution", parse::<PathBuf>),
            final_mesh: pick!(cli.final_mesh, "final-mesh", parse::<PathBuf>),
            sweep,
            seed: pick!(cli.seed, "seed", parse).unwrap_or(0),
            timing: !no_timing,
        })
    }

    /// Copy with one swept parameter replaced.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self, UsageError> {
        let mut c = self.clone();
        c.sweep = None;
        match key {
            "theta-a" => c.params.theta_a = parse(key, value)?,
            "kappa" => c.params.kappa = parse(key, value)?,
            "rho-b" => c.params.rho_b = parse(key, value)?,
            "max-elements" => c.params.max_elements = parse(key, value)?,
            "field" => {
                c.field = parse(key, value)?;
                c.field_name = value.to_string();
            }
            _ => return Err(UsageError(format!("cannot sweep over `{key}`"))),
        }
        c.params.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file = parse_config_file("kappa = 0.25\ntheta_a=0.4 # comment\nfield=linear-x\n").unwrap();
        let cli = Cli {
            kappa: Some(2.0),
            ..Default::default()
        };
        let c = ExperimentConfig::resolve(&cli, &file).unwrap();
        assert_eq!(c.params.kappa, 2.0);
        assert_eq!(c.params.theta_a, 0.4);
        assert_eq!(c.field_name, "linear-x");
        assert_eq!(c.mode, Mode::Safem);
    }

    #[test]
    fn rejects_bad_input() {
        let cli = Cli::default();
        for text in ["nonsense", "colour=red", "theta-a=2", "problem=heat", "quad-degree=4"] {
            let file = parse_config_file(text);
            assert!(file.and_then(|f| ExperimentConfig::resolve(&cli, &f)).is_err(), "{text}");
        }
        let approx = Cli {
            mode: Some(Mode::ApproxOnly),
            ..Default::default()
        };
        assert!(ExperimentConfig::resolve(&approx, &HashMap::new()).is_err());
    }
}
