//! Adaptive loops (separate marking, collective marking and uniform
//! refinement), per-level records and rate fitting.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fem_ls::{assemble_ls, delta2_ls, eta_ls, ls_functional, solve_ls, LsSolution};
use crate::fem_mixed::{assemble_mixed, delta2_mixed, eta_mixed, solve_mixed, MixedSolution};
use crate::marking::{doerfler_select, ApproxState, ElementFunctional, IndicatorField, Oscillation, WeightedData};
use crate::mesh::{Forest, Triangulation};
use crate::quadrature::{integrate_with_square, mu2_element, QuadratureRule, ScalarField};

/// Solver-side quality measures of one discrete solution.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// Relative residual of the linear solve.
    pub residual: f64,
    /// Relative defect of `int div p = -int f` (mixed only).
    pub constraint: Option<f64>,
    /// Value of the minimized functional (least squares only).
    pub energy: Option<f64>,
}

/// A discretized problem with estimator `eta`, data term `mu` and distance
/// `delta` between nested discrete solutions.
pub trait ProblemInstance {
    type Solution;

    fn name(&self) -> &'static str;
    fn field(&self) -> &ScalarField;
    fn solve(&self, forest: &Forest, t: &Triangulation) -> Result<Self::Solution>;
    fn eta2(&self, forest: &Forest, t: &Triangulation, sol: &Self::Solution) -> IndicatorField;
    fn mu2(&self, forest: &Forest, t: &Triangulation) -> IndicatorField;
    fn delta2(
        &self,
        forest: &Forest,
        coarse_t: &Triangulation,
        coarse: &Self::Solution,
        fine_t: &Triangulation,
        fine: &Self::Solution,
    ) -> Result<f64>;
    /// Functional driven by APPROX in Case (B); its sum over a mesh must
    /// equal the mesh's `mu^2`.
    fn data_functional(&self) -> Box<dyn ElementFunctional>;
    fn diagnostics(&self, sol: &Self::Solution) -> Diagnostics;
}

/// `||f - Pi_0 f||^2_K` per element of `t`.
pub fn oscillation(forest: &Forest, t: &Triangulation, f: &ScalarField, rule: &QuadratureRule) -> IndicatorField {
    if f.is_zero() || matches!(f, ScalarField::Constant(_)) {
        return IndicatorField::zeros(t.len());
    }
    IndicatorField::new(t.leaves().iter().map(|&k| mu2_element(f, &forest.coords(k), rule)).collect())
}

#[derive(Clone, Debug)]
pub struct MixedProblem {
    pub field: ScalarField,
    pub rule: QuadratureRule,
}

impl ProblemInstance for MixedProblem {
    type Solution = MixedSolution;

    fn name(&self) -> &'static str {
        "mixed"
    }

    fn field(&self) -> &ScalarField {
        &self.field
    }

    fn solve(&self, forest: &Forest, t: &Triangulation) -> Result<MixedSolution> {
        solve_mixed(assemble_mixed(forest, t, &self.field, &self.rule))
    }

    fn eta2(&self, _: &Forest, _: &Triangulation, sol: &MixedSolution) -> IndicatorField {
        eta_mixed(sol)
    }

    fn mu2(&self, forest: &Forest, t: &Triangulation) -> IndicatorField {
        oscillation(forest, t, &self.field, &self.rule)
    }

    fn delta2(
        &self,
        forest: &Forest,
        coarse_t: &Triangulation,
        coarse: &MixedSolution,
        fine_t: &Triangulation,
        fine: &MixedSolution,
    ) -> Result<f64> {
        delta2_mixed(forest, coarse_t, coarse, fine_t, fine)
    }

    fn data_functional(&self) -> Box<dyn ElementFunctional> {
        Box::new(Oscillation {
            field: self.field.clone(),
            rule: self.rule.clone(),
        })
    }

    fn diagnostics(&self, sol: &MixedSolution) -> Diagnostics {
        Diagnostics {
            residual: sol.report.relative_residual,
            constraint: Some(sol.constraint_defect()),
            energy: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LsProblem {
    pub field: ScalarField,
    pub rule: QuadratureRule,
}

impl ProblemInstance for LsProblem {
    type Solution = LsSolution;

    fn name(&self) -> &'static str {
        "ls"
    }

    fn field(&self) -> &ScalarField {
        &self.field
    }

    fn solve(&self, forest: &Forest, t: &Triangulation) -> Result<LsSolution> {
        solve_ls(assemble_ls(forest, t, &self.field, &self.rule))
    }

    fn eta2(&self, _: &Forest, _: &Triangulation, sol: &LsSolution) -> IndicatorField {
        eta_ls(sol)
    }

    fn mu2(&self, forest: &Forest, t: &Triangulation) -> IndicatorField {
        oscillation(forest, t, &self.field, &self.rule)
    }

    fn delta2(
        &self,
        forest: &Forest,
        coarse_t: &Triangulation,
        coarse: &LsSolution,
        fine_t: &Triangulation,
        fine: &LsSolution,
    ) -> Result<f64> {
        delta2_ls(forest, coarse_t, coarse, fine_t, fine)
    }

    fn data_functional(&self) -> Box<dyn ElementFunctional> {
        Box::new(Oscillation {
            field: self.field.clone(),
            rule: self.rule.clone(),
        })
    }

    fn diagnostics(&self, sol: &LsSolution) -> Diagnostics {
        Diagnostics {
            residual: sol.gradient_residual,
            constraint: None,
            energy: Some(ls_functional(sol).ls_total),
        }
    }
}

/// Pure data approximation: `eta^2(K) = |K|^2 ||f||^2_K`, `mu = 0`, no
/// discrete solution.
#[derive(Clone, Debug)]
pub struct DataOnlyProblem {
    pub field: ScalarField,
    pub rule: QuadratureRule,
}

impl DataOnlyProblem {
    fn functional(&self) -> WeightedData {
        WeightedData {
            field: self.field.clone(),
            rule: self.rule.clone(),
        }
    }
}

impl ProblemInstance for DataOnlyProblem {
    type Solution = ();

    fn name(&self) -> &'static str {
        "data-only"
    }

    fn field(&self) -> &ScalarField {
        &self.field
    }

    fn solve(&self, _: &Forest, _: &Triangulation) -> Result<()> {
        Ok(())
    }

    fn eta2(&self, forest: &Forest, t: &Triangulation, _: &()) -> IndicatorField {
        let w = self.functional();
        IndicatorField::new(t.leaves().iter().map(|&k| w.value(&forest.coords(k))).collect())
    }

    fn mu2(&self, _: &Forest, t: &Triangulation) -> IndicatorField {
        IndicatorField::zeros(t.len())
    }

    /// `sum_{K'} (|K| - |K'|)^2 ||f||^2_{K'}` with `K` the coarse ancestor.
    fn delta2(&self, forest: &Forest, coarse_t: &Triangulation, _: &(), fine_t: &Triangulation, _: &()) -> Result<f64> {
        let mut total = 0.0;
        for &k in fine_t.leaves() {
            let a = forest.ancestor_in(k, coarse_t).ok_or(Error::NotNested)?;
            let tri = forest.coords(k);
            let f2 = integrate_with_square(&self.field, &tri, &self.rule).1;
            total += (forest.area(a) - forest.area(k)).powi(2) * f2;
        }
        Ok(total)
    }

    fn data_functional(&self) -> Box<dyn ElementFunctional> {
        Box::new(self.functional())
    }

    fn diagnostics(&self, _: &()) -> Diagnostics {
        Diagnostics::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SafemParams {
    pub theta_a: f64,
    pub kappa: f64,
    pub rho_b: f64,
    /// Stop once `sigma <= sigma_tol`.
    pub sigma_tol: f64,
    /// No mesh with more elements is solved.
    pub max_elements: usize,
    pub max_levels: Option<usize>,
    /// Partition size limit of the persistent APPROX state.
    pub approx_cap: usize,
}

impl Default for SafemParams {
    fn default() -> Self {
        Self {
            theta_a: 0.3,
            kappa: 1.0,
            rho_b: 0.5,
            sigma_tol: 1e-6,
            max_elements: 200_000,
            max_levels: None,
            approx_cap: 2_000_000,
        }
    }
}

impl SafemParams {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |x: f64| x > 0.0 && x <= 1.0;
        if !open_unit(self.theta_a) {
            return Err(Error::InvalidTheta(self.theta_a));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.rho_b > 0.0 && self.rho_b < 1.0) {
            return Err(Error::InvalidParameter(format!("rho_B must lie in (0,1), got {}", self.rho_b)));
        }
        if !(self.sigma_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma tolerance must be >= 0, got {}", self.sigma_tol)));
        }
        if self.max_elements == 0 {
            return Err(Error::InvalidParameter("element cap must be positive".into()));
        }
        Ok(())
    }
}

/// How the next mesh was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Case {
    /// Dörfler marking on the estimator (or on `sigma` for collective marking).
    A,
    /// Data approximation and overlay.
    B,
    Uniform,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::A => "A",
            Case::B => "B",
            Case::Uniform => "U",
        })
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Case::A),
            "B" => Ok(Case::B),
            "U" => Ok(Case::Uniform),
            _ => Err(Error::InvalidParameter(format!("unknown case `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelRecord {
    pub level: usize,
    /// `|T_l| - |T_0|`
    pub n: usize,
    pub elements: usize,
    pub case: Case,
    pub eta2: f64,
    pub mu2: f64,
    pub sigma2: f64,
    /// `delta^2(T_l, T_{l+1})`, known after the next solve.
    pub delta2: Option<f64>,
    /// `|M_l|` in Case (A), `|T_{l+1}| - |T_l|` in Case (B).
    pub marked: usize,
    pub seconds: f64,
    /// Marked share of the marking indicator total (Case (A)).
    pub bulk: Option<f64>,
    /// `rho_B mu^2_l` and the achieved data error (Case (B)).
    pub approx_tol: Option<f64>,
    pub approx_mu2: Option<f64>,
    pub diagnostics: Diagnostics,
}

impl LevelRecord {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    SigmaTolerance,
    SigmaZero,
    ElementCap,
    LevelLimit,
}

#[derive(Clone, Debug)]
pub struct Run {
    pub records: Vec<LevelRecord>,
    /// `meshes[l]` is `T_l`.
    pub meshes: Vec<Triangulation>,
    pub stop: StopReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Strategy {
    Separate,
    Collective,
    Uniform,
}

/// Adaptive loop with separate marking.
pub fn safem_run<P: ProblemInstance>(
    problem: &P,
    params: &SafemParams,
    forest: &mut Forest,
    t0: &Triangulation,
) -> Result<Run> {
    run(problem, params, forest, t0, Strategy::Separate)
}

/// Adaptive loop with Dörfler marking on `sigma^2 = eta^2 + mu^2`; uses
/// `params.theta_a` as bulk parameter.
pub fn cafem_run<P: ProblemInstance>(
    problem: &P,
    params: &SafemParams,
    forest: &mut Forest,
    t0: &Triangulation,
) -> Result<Run> {
    run(problem, params, forest, t0, Strategy::Collective)
}

/// Each level bisects every element twice, so `|T|` quadruples.
pub fn uniform_run<P: ProblemInstance>(
    problem: &P,
    params: &SafemParams,
    forest: &mut Forest,
    t0: &Triangulation,
) -> Result<Run> {
    run(problem, params, forest, t0, Strategy::Uniform)
}

fn at_level(level: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Level {
        level,
        source: Box::new(e),
    }
}

fn run<P: ProblemInstance>(
    problem: &P,
    params: &SafemParams,
    forest: &mut Forest,
    t0: &Triangulation,
    strategy: Strategy,
) -> Result<Run> {
    params.validate()?;
    if t0.forest_id() != forest.id() {
        return Err(Error::ForestMismatch);
    }
    let mut approx: Option<ApproxState> = None;
    let mut records: Vec<LevelRecord> = Vec::new();
    let mut meshes = Vec::new();
    let mut prev: Option<P::Solution> = None;
    let mut t = t0.clone();
    let n0 = t0.len();
    let stop = loop {
        let level = records.len();
        let start = Instant::now();
        let sol = problem.solve(forest, &t).map_err(at_level(level))?;
        if let Some(coarse) = prev.take() {
            let d = problem
                .delta2(forest, &meshes[level - 1], &coarse, &t, &sol)
                .map_err(at_level(level))?;
            records[level - 1].delta2 = Some(d);
        }
        let eta = problem.eta2(forest, &t, &sol);
        let mu = problem.mu2(forest, &t);
        let (eta2, mu2) = (eta.total(), mu.total());
        let sigma2 = eta2 + mu2;
        let mut record = LevelRecord {
            level,
            n: t.len() - n0,
            elements: t.len(),
            case: Case::A,
            eta2,
            mu2,
            sigma2,
            delta2: None,
            marked: 0,
            seconds: 0.0,
            bulk: None,
            approx_tol: None,
            approx_mu2: None,
            diagnostics: problem.diagnostics(&sol),
        };
        log::info!(
            "{} level {level}: |T| = {}, eta2 = {eta2:e}, mu2 = {mu2:e}",
            problem.name(),
            t.len()
        );
        let stop = if sigma2 == 0.0 {
            Some(StopReason::SigmaZero)
        } else if sigma2.sqrt() <= params.sigma_tol {
            Some(StopReason::SigmaTolerance)
        } else if params.max_levels.is_some_and(|m| level + 1 >= m) {
            Some(StopReason::LevelLimit)
        } else {
            None
        };
        if let Some(stop) = stop {
            record.seconds = start.elapsed().as_secs_f64();
            records.push(record);
            meshes.push(t);
            break stop;
        }
        let next = match strategy {
            Strategy::Uniform => {
                record.case = Case::Uniform;
                record.marked = t.len();
                // two sweeps: every element splits into four
                forest.uniform_refine(&t).and_then(|t1| forest.uniform_refine(&t1))
            }
            Strategy::Collective => {
                let sigma = eta.plus(&mu);
                mark_and_refine(forest, &t, &sigma, params.theta_a, &mut record)
            }
            Strategy::Separate if mu2 <= params.kappa * eta2 => {
                mark_and_refine(forest, &t, &eta, params.theta_a, &mut record)
            }
            Strategy::Separate => {
                record.case = Case::B;
                let state = approx.get_or_insert_with(|| {
                    ApproxState::new(forest, problem.data_functional(), params.approx_cap)
                });
                let tol = params.rho_b * mu2;
                state.approx(forest, tol).and_then(|out| {
                    record.approx_tol = Some(tol);
                    record.approx_mu2 = Some(out.error);
                    let next = forest.overlay(&t, &out.mesh)?;
                    record.marked = next.len() - t.len();
                    Ok(next)
                })
            }
        }
        .map_err(at_level(level))?;
        record.seconds = start.elapsed().as_secs_f64();
        records.push(record);
        meshes.push(t);
        if next.len() > params.max_elements {
            break StopReason::ElementCap;
        }
        prev = Some(sol);
        t = next;
    };
    Ok(Run { records, meshes, stop })
}

fn mark_and_refine(
    forest: &mut Forest,
    t: &Triangulation,
    indicators: &IndicatorField,
    theta: f64,
    record: &mut LevelRecord,
) -> Result<Triangulation> {
    let marked = doerfler_select(theta, indicators)?;
    record.case = Case::A;
    record.marked = marked.len();
    let total = indicators.total();
    record.bulk = Some(if total > 0.0 { indicators.sum_over(&marked) / total } else { 1.0 });
    let nodes: Vec<_> = marked.iter().map(|&i| t.leaves()[i]).collect();
    forest.refine(t, &nodes)
}

/// Fitted rate and sup statistics `sup_l (1 + N_l)^s sigma_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateFit {
    /// Negative least-squares slope of `log sigma` against `log(1 + N)`.
    pub s: f64,
    pub sups: Vec<(f64, f64)>,
    pub used: usize,
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Fits `sigma ~ (1 + N)^(-s)` over records with `sigma > 0`.
pub fn fit_rate(records: &[LevelRecord], s_grid: &[f64]) -> Result<RateFit> {
    let usable: Vec<&LevelRecord> = records.iter().filter(|r| r.sigma2 > 0.0).collect();
    if usable.len() < 4 {
        return Err(Error::TooFewRecords(usable.len()));
    }
    let xs: Vec<f64> = usable.iter().map(|r| (1.0 + r.n as f64).ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|r| r.sigma().ln()).collect();
    let sups = s_grid
        .iter()
        .map(|&s| {
            let sup = usable
                .iter()
                .map(|r| (1.0 + r.n as f64).powf(s) * r.sigma())
                .fold(0.0, f64::max);
            (s, sup)
        })
        .collect();
    Ok(RateFit {
        s: -slope(&xs, &ys),
        sups,
        used: usable.len(),
    })
}

pub const CSV_HEADER: &str = "level,N,case,eta2,mu2,sigma2,delta2,marked,seconds";

/// One row per record. With `timing == false` the `seconds` column is zero so
/// that identical runs give identical bytes.
pub fn write_csv(records: &[LevelRecord], timing: bool) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        let delta = r.delta2.map_or_else(|| "nan".to_string(), |d| format!("{d:.16e}"));
        let seconds = if timing { r.seconds } else { 0.0 };
        writeln!(
            s,
            "{},{},{},{:.16e},{:.16e},{:.16e},{},{},{:.6}",
            r.level, r.n, r.case, r.eta2, r.mu2, r.sigma2, delta, r.marked, seconds
        )
        .unwrap();
    }
    s
}

/// Inverse of [`write_csv`]; fields not in the CSV are left empty.
pub fn read_csv(text: &str) -> Result<Vec<LevelRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    lines
        .map(|(i, line)| {
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 9 {
                return Err(bad(format!("expected 9 columns, found {}", cols.len())));
            }
            let float = |c: &str| c.parse::<f64>().map_err(|e| bad(format!("`{c}`: {e}")));
            let int = |c: &str| c.parse::<usize>().map_err(|e| bad(format!("`{c}`: {e}")));
            let n = int(cols[1])?;
            let delta = float(cols[6])?;
            Ok(LevelRecord {
                level: int(cols[0])?,
                n,
                elements: 0,
                case: cols[2].parse().map_err(|e: Error| bad(e.to_string()))?,
                eta2: float(cols[3])?,
                mu2: float(cols[4])?,
                sigma2: float(cols[5])?,
                delta2: (!delta.is_nan()).then_some(delta),
                marked: int(cols[7])?,
                seconds: float(cols[8])?,
                bulk: None,
                approx_tol: None,
                approx_mu2: None,
                diagnostics: Diagnostics::default(),
            })
        })
        .collect()
}
