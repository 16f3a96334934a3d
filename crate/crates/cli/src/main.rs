mod config;

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use safem_core::axioms::{
    check_a12, check_a4_telescope, check_b1_rate, check_b2, check_qm, check_rlinear, hierarchy_pairs,
    random_hierarchy, render, QmMode,
};
use safem_core::driver::{
    cafem_run, fit_rate, oscillation, safem_run, uniform_run, write_csv, DataOnlyProblem, LsProblem, MixedProblem,
    ProblemInstance, Run,
};
use safem_core::fem_ls::{assemble_ls, solve_ls};
use safem_core::fem_mixed::{assemble_mixed, solve_mixed};
use safem_core::marking::ApproxState;
use safem_core::mesh::io::{read_mesh, write_mesh};
use safem_core::mesh::{domains, Forest, Triangulation};
use safem_core::quadrature::QuadratureRule;
use safem_core::Error;

use config::{Cli, DomainKind, DomainSource, ExperimentConfig, Mode, ProblemKind, UsageError};

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Usage(#[from] UsageError),
    #[error("{0}")]
    Run(Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Run(Error::Level { .. } | Error::SolverFailed { .. } | Error::Factorization(_)) => 3,
            Failure::Run(Error::InvalidParameter(_) | Error::InvalidTheta(_)) => 2,
            _ => 1,
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if path == Path::new("-") {
        return print_stdout(text);
    }
    fs::write(path, text).map_err(|source| Failure::Io {
        context: format!("writing {}", path.display()),
        source,
    })
}

/// A closed pipe on the reader side is not a failure.
fn print_stdout(text: &str) -> Result<(), Failure> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Io {
            context: "writing standard output".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn load_forest(domain: &DomainSource) -> Result<Forest, Failure> {
    Ok(match domain {
        DomainSource::Builtin(DomainKind::UnitSquare) => domains::unit_square(),
        DomainSource::Builtin(DomainKind::LShape) => domains::l_shape(),
        DomainSource::File(p) => {
            let text = fs::read_to_string(p).map_err(|source| Failure::Io {
                context: format!("reading {}", p.display()),
                source,
            })?;
            read_mesh(&text)?
        }
    })
}

fn run_mode<P: ProblemInstance>(
    problem: &P,
    cfg: &ExperimentConfig,
    forest: &mut Forest,
    t0: &Triangulation,
) -> Result<Run, Error> {
    match cfg.mode {
        Mode::Safem => safem_run(problem, &cfg.params, forest, t0),
        Mode::Cafem => cafem_run(problem, &cfg.params, forest, t0),
        Mode::Uniform => uniform_run(problem, &cfg.params, forest, t0),
        Mode::ApproxOnly => unreachable!("handled separately"),
    }
}

fn report<P: ProblemInstance>(
    problem: &P,
    cfg: &ExperimentConfig,
    forest: &mut Forest,
    run: &Run,
    rule: &QuadratureRule,
) -> Result<String, Error> {
    let records = &run.records;
    let mut reports = vec![check_a12(records), check_rlinear(records)];
    let qm_mode = if cfg.problem == ProblemKind::Ls {
        QmMode::Functional
    } else {
        QmMode::Bounded(10.0)
    };
    reports.push(check_qm(records, qm_mode));
    if cfg.problem == ProblemKind::Ls {
        reports.push(check_a4_telescope(records));
    }
    let field = problem.field().clone();
    let mu2 = |forest: &Forest, t: &Triangulation| -> f64 {
        if cfg.problem == ProblemKind::DataOnly {
            0.0
        } else {
            oscillation(forest, t, &field, rule).total()
        }
    };
    // the run's own hierarchy, then a random one from the seed
    reports.push(check_b2(&run.meshes, &hierarchy_pairs(run.meshes.len()), |t| mu2(forest, t)));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t0 = run.meshes[0].clone();
    let random = random_hierarchy(forest, &t0, 10, &mut rng)?;
    let mut b2 = check_b2(&random, &hierarchy_pairs(random.len()), |t| mu2(forest, t));
    b2.name = "B2-random";
    reports.push(b2);
    Ok(render(&reports))
}

fn dump_solution(cfg: &ExperimentConfig, forest: &Forest, t: &Triangulation, rule: &QuadratureRule) -> Result<String, Error> {
    Ok(match cfg.problem {
        ProblemKind::Mixed => solve_mixed(assemble_mixed(forest, t, &cfg.field, rule))?.dump(),
        ProblemKind::Ls => solve_ls(assemble_ls(forest, t, &cfg.field, rule))?.dump(),
        ProblemKind::DataOnly => String::from("# data-only problem has no discrete solution\n"),
    })
}

/// One experiment; returns the summary line.
fn execute(cfg: &ExperimentConfig, label: Option<&str>) -> Result<String, Failure> {
    let rule = QuadratureRule::with_degree(cfg.quad_degree)?;
    let mut forest = load_forest(&cfg.domain)?;
    let t0 = forest.initial();
    let out_path = |p: &PathBuf| match label {
        Some(l) if p != Path::new("-") => {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            let ext = p.extension().and_then(|s| s.to_str()).unwrap_or("csv");
            p.with_file_name(format!("{stem}.{}.{ext}", l.replace(['=', ':', '@', ','], "_")))
        }
        _ => p.clone(),
    };
    if cfg.mode == Mode::ApproxOnly {
        return approx_only(cfg, &mut forest, &t0, &rule, &out_path);
    }
    macro_rules! with_problem {
        ($p:expr) => {{
            let problem = $p;
            let run = run_mode(&problem, cfg, &mut forest, &t0)?;
            let text = match &cfg.report {
                Some(_) => Some(report(&problem, cfg, &mut forest, &run, &rule)?),
                None => None,
            };
            (run, text)
        }};
    }
    let field = cfg.field.clone();
    let (run, report_text) = match cfg.problem {
        ProblemKind::Mixed => with_problem!(MixedProblem { field, rule: rule.clone() }),
        ProblemKind::Ls => with_problem!(LsProblem { field, rule: rule.clone() }),
        ProblemKind::DataOnly => with_problem!(DataOnlyProblem { field, rule: rule.clone() }),
    };
    if let Some(p) = &cfg.out {
        write_file(&out_path(p), &write_csv(&run.records, cfg.timing))?;
    }
    if let (Some(p), Some(text)) = (&cfg.report, report_text) {
        write_file(&out_path(p), &text)?;
    }
    let last_mesh = run.meshes.last().unwrap();
    if let Some(p) = &cfg.dump_solution {
        write_file(&out_path(p), &dump_solution(cfg, &forest, last_mesh, &rule)?)?;
    }
    if let Some(p) = &cfg.final_mesh {
        write_file(&out_path(p), &write_mesh(&forest, last_mesh))?;
    }
    let fitted = fit_rate(&run.records, &[]).map_or(f64::NAN, |f| f.s);
    let last = run.records.last().unwrap();
    Ok(format!(
        "fitted_s={fitted:.6} levels={} final_sigma={:.6e}",
        run.records.len(),
        last.sigma()
    ))
}

fn approx_only(
    cfg: &ExperimentConfig,
    forest: &mut Forest,
    t0: &Triangulation,
    rule: &QuadratureRule,
    out_path: &dyn Fn(&PathBuf) -> PathBuf,
) -> Result<String, Failure> {
    let tol = cfg.approx_tol.expect("validated");
    let functional = || -> Box<dyn safem_core::marking::ElementFunctional> {
        let field = cfg.field.clone();
        let rule = rule.clone();
        match cfg.problem {
            ProblemKind::DataOnly => Box::new(safem_core::marking::WeightedData { field, rule }),
            _ => Box::new(safem_core::marking::Oscillation { field, rule }),
        }
    };
    let mut state = ApproxState::new(forest, functional(), cfg.params.max_elements.max(1));
    let out = state.approx(forest, tol)?;
    if let Some(p) = &cfg.report {
        let tols: Vec<f64> = (0..=20)
            .map(|k| tol * 2f64.powi(20 - k))
            .filter(|&t| t >= tol)
            .collect();
        let mut fresh = load_forest(&cfg.domain)?;
        let t0 = fresh.initial();
        let b1 = check_b1_rate(&mut fresh, &t0, functional, &tols, cfg.params.max_elements, 0)?;
        write_file(&out_path(p), &render(&[b1]))?;
    }
    if let Some(p) = &cfg.final_mesh {
        write_file(&out_path(p), &write_mesh(forest, &out.mesh))?;
    }
    Ok(format!(
        "elements={} added={} mu2={:.6e} tol={tol:.6e}",
        out.mesh.len(),
        out.mesh.len() - t0.len(),
        out.error
    ))
}

fn main_inner() -> Result<(), Failure> {
    let cli = Cli::parse();
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| Failure::Io {
                context: format!("reading {}", p.display()),
                source,
            })?;
            config::parse_config_file(&text)?
        }
        None => HashMap::new(),
    };
    let cfg = ExperimentConfig::resolve(&cli, &file)?;
    let Some((key, values)) = &cfg.sweep else {
        let line = execute(&cfg, None)?;
        return print_stdout(&format!("{line}\n"));
    };
    let configs = values
        .iter()
        .map(|v| cfg.with_override(key, v).map(|c| (format!("{key}={v}"), c)))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<(String, Result<String, Failure>)> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|(label, c)| (label.clone(), s.spawn(move || execute(c, Some(label)))))
            .collect();
        handles.into_iter().map(|(l, h)| (l, h.join().expect("worker panicked"))).collect()
    });
    let mut first_error = None;
    for (label, r) in results {
        match r {
            Ok(line) => print_stdout(&format!("{label} {line}\n"))?,
            Err(e) => {
                eprintln!("{label}: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Failure::Usage(_) = e {
                eprintln!("run `safem --help` for usage");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
