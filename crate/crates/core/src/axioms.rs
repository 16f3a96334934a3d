//! Empirical checks of the convergence axioms on recorded runs and on
//! randomized refinement hierarchies.
//!
//! Constants are searched for as certificates; a check passes when some
//! admissible witness exists. Failing reports name the offending levels or
//! mesh pair.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::driver::{slope, LevelRecord};
use crate::error::Result;
use crate::marking::{ApproxState, ElementFunctional};
use crate::mesh::{Forest, Triangulation};

/// Relative slack for comparisons that hold exactly in exact arithmetic.
pub const EXACT_RTOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct AxiomReport {
    pub name: &'static str,
    pub passed: bool,
    /// Number of level pairs or mesh pairs examined.
    pub pairs: usize,
    /// Fitted constants and extreme ratios.
    pub values: Vec<(&'static str, f64)>,
    /// Offending case of a failed check.
    pub witness: Option<String>,
}

impl AxiomReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            passed: true,
            pairs: 0,
            values: Vec::new(),
            witness: None,
        }
    }

    fn fail(&mut self, witness: String) {
        if self.passed {
            self.passed = false;
            self.witness = Some(witness);
        }
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<12} {}  pairs={}",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.pairs
        );
        for (k, v) in &self.values {
            write!(s, " {k}={v:.6e}").unwrap();
        }
        if let Some(w) = &self.witness {
            write!(s, "  witness: {w}").unwrap();
        }
        s
    }

    /// `name.key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = format!("{}.passed={}\n{}.pairs={}\n", self.name, self.passed, self.name, self.pairs);
        for (k, v) in &self.values {
            writeln!(s, "{}.{k}={v:e}", self.name).unwrap();
        }
        if let Some(w) = &self.witness {
            writeln!(s, "{}.witness={w}", self.name).unwrap();
        }
        s
    }
}

/// Text block followed by the key-value table.
pub fn render(reports: &[AxiomReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&r.to_text());
        s.push('\n');
    }
    s.push('\n');
    for r in reports {
        s.push_str(&r.to_key_values());
    }
    s
}

/// Refines a random share `fraction` (at least one element) of `t`.
pub fn random_refinement<R: Rng>(
    forest: &mut Forest,
    t: &Triangulation,
    fraction: f64,
    rng: &mut R,
) -> Result<Triangulation> {
    let count = ((t.len() as f64 * fraction).ceil() as usize).clamp(1, t.len());
    let marked: Vec<_> = t.leaves().choose_multiple(rng, count).copied().collect();
    forest.refine(t, &marked)
}

/// Nested sequence `t0 = T_0, ..., T_levels` of random local refinements.
pub fn random_hierarchy<R: Rng>(
    forest: &mut Forest,
    t0: &Triangulation,
    levels: usize,
    rng: &mut R,
) -> Result<Vec<Triangulation>> {
    let mut out = vec![t0.clone()];
    for _ in 0..levels {
        let fraction = rng.gen_range(0.05..0.5);
        let next = random_refinement(forest, out.last().unwrap(), fraction, rng)?;
        out.push(next);
    }
    Ok(out)
}

/// All pairs `(i, j)`, `i < j`, of a hierarchy.
pub fn hierarchy_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Quasimonotonicity of the data term with constant one:
/// `mu(fine) <= mu(coarse) (1 + 1e-9)` for every given pair. `mu2` maps a
/// mesh to its squared data term.
pub fn check_b2(
    meshes: &[Triangulation],
    pairs: &[(usize, usize)],
    mu2: impl Fn(&Triangulation) -> f64,
) -> AxiomReport {
    let mut report = AxiomReport::new("B2");
    let mu: Vec<f64> = meshes.iter().map(|t| mu2(t).max(0.0).sqrt()).collect();
    let mut worst: f64 = 0.0;
    for &(i, j) in pairs {
        report.pairs += 1;
        if mu[i] > 0.0 {
            worst = worst.max(mu[j] / mu[i]);
        }
        if mu[j] > mu[i] * (1.0 + EXACT_RTOL) {
            report.fail(format!(
                "mu(T_{j}) = {:e} > mu(T_{i}) = {:e} (|T_{i}| = {}, |T_{j}| = {})",
                mu[j],
                mu[i],
                meshes[i].len(),
                meshes[j].len()
            ));
        }
    }
    report.values.push(("max_ratio", worst));
    report
}

/// How quasimonotonicity of `sigma` is judged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QmMode {
    /// The minimized functional (record `energy`) must not increase on
    /// consecutive levels beyond `1e-9` relative.
    Functional,
    /// `sigma(T_j) / sigma(T_i)` must stay below the bound for all `i < j`.
    Bounded(f64),
}

pub fn check_qm(records: &[LevelRecord], mode: QmMode) -> AxiomReport {
    let mut report = AxiomReport::new("QM");
    let mut worst: f64 = if records.len() == 1 { 1.0 } else { 0.0 };
    for (i, j) in hierarchy_pairs(records.len()) {
        report.pairs += 1;
        let (a, b) = (&records[i], &records[j]);
        let ratio = if a.sigma2 > 0.0 { b.sigma() / a.sigma() } else { 0.0 };
        worst = worst.max(ratio);
        match mode {
            QmMode::Bounded(bound) if ratio > bound => {
                report.fail(format!("sigma ratio {ratio:e} between levels {i} and {j} exceeds {bound}"));
            }
            QmMode::Functional if j == i + 1 => match (a.diagnostics.energy, b.diagnostics.energy) {
                (Some(ea), Some(eb)) if eb > ea + EXACT_RTOL * ea.abs() => {
                    report.fail(format!("functional increased from {ea:e} (level {i}) to {eb:e} (level {j})"));
                }
                (Some(_), Some(_)) => {}
                _ => report.fail(format!("level {i} or {j} carries no functional value")),
            },
            _ => {}
        }
    }
    report.values.push(("max_ratio", worst));
    if let QmMode::Bounded(bound) = mode {
        report.values.push(("bound", bound));
    }
    report
}

/// `{0}` and 25 log-spaced points on `[1e-2, 1e4]`.
pub fn lambda_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..25).map(|i| 10f64.powf(-2.0 + 6.0 * i as f64 / 24.0)))
        .collect()
}

/// Smallest `rho` with `sigma^2_{l+1} - Lambda delta^2_l <= rho sigma^2_l`
/// for all recorded `l`, as a function of `Lambda`.
fn a12_rho(records: &[LevelRecord], lambda: f64) -> f64 {
    records
        .windows(2)
        .filter_map(|w| {
            let d = w[0].delta2?;
            (w[0].sigma2 > 0.0).then(|| (w[1].sigma2 - lambda * d) / w[0].sigma2)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Certificate for the contraction `sigma^2_{l+1} <= rho sigma^2_l +
/// Lambda delta^2_l`: reports the smallest grid `Lambda` admitting some
/// `rho < 1`, and that `rho`.
pub fn check_a12(records: &[LevelRecord]) -> AxiomReport {
    let mut report = AxiomReport::new("A12");
    report.pairs = records
        .windows(2)
        .filter(|w| w[0].delta2.is_some() && w[0].sigma2 > 0.0)
        .count();
    if report.pairs == 0 {
        report.fail("no consecutive levels with a distance".into());
        return report;
    }
    let grid = lambda_grid();
    let rhos: Vec<f64> = grid.iter().map(|&l| a12_rho(records, l)).collect();
    match rhos.iter().position(|&r| r < 1.0) {
        Some(i) => {
            report.values.push(("lambda", grid[i]));
            report.values.push(("rho", rhos[i].max(0.0)));
        }
        None => {
            let worst = records
                .windows(2)
                .enumerate()
                .filter(|(_, w)| w[0].sigma2 > 0.0)
                .max_by(|a, b| {
                    let r = |w: &[LevelRecord]| w[1].sigma2 / w[0].sigma2;
                    r(a.1).total_cmp(&r(b.1))
                })
                .map(|(l, w)| format!("level {l}: sigma2 {:e} -> {:e}", w[0].sigma2, w[1].sigma2))
                .unwrap_or_default();
            report.fail(format!("no Lambda <= 1e4 gives rho < 1; {worst}"));
        }
    }
    let (imin, rmin) = rhos
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &r)| if r < acc.1 { (i, r) } else { acc });
    report.values.push(("rho_min", rmin.max(0.0)));
    report.values.push(("lambda_at_rho_min", grid[imin]));
    report
}

/// R-linear convergence `sigma^2_{l+m} <= C q^m sigma^2_l`: `q` from a
/// log-linear least-squares fit over all pairs, `C` the smallest constant
/// making the bound hold for that `q`.
pub fn check_rlinear(records: &[LevelRecord]) -> AxiomReport {
    let mut report = AxiomReport::new("rlinear");
    let (mut ms, mut ys) = (Vec::new(), Vec::new());
    for (i, j) in hierarchy_pairs(records.len()) {
        let (a, b) = (records[i].sigma2, records[j].sigma2);
        if a > 0.0 && b > 0.0 {
            ms.push((j - i) as f64);
            ys.push((b / a).ln());
        }
    }
    report.pairs = ms.len();
    if ms.len() < 2 || ms.iter().all(|&m| m == ms[0]) {
        report.fail("fewer than three positive levels".into());
        return report;
    }
    let q = slope(&ms, &ys).exp();
    let c = ms
        .iter()
        .zip(&ys)
        .map(|(m, y)| (y - m * q.ln()).exp())
        .fold(0.0, f64::max);
    report.values.push(("q", q));
    report.values.push(("C", c));
    if !(q <= 0.999) || !c.is_finite() {
        report.fail(format!("fitted q = {q:e}"));
    }
    report
}

/// Sharp quasi-orthogonality for the least-squares method. Checks
/// `sum_{k=l}^{L-1} delta^2_k = LS_l - LS_L` within `1e-8 LS_l` for every
/// `l` (the telescope) and reports `C = max_l LS_l / sigma^2_l`, which bounds
/// every partial sum by `C sigma^2_l`.
pub fn check_a4_telescope(records: &[LevelRecord]) -> AxiomReport {
    const TOL: f64 = 1e-8;
    let mut report = AxiomReport::new("A4");
    let Some(last) = records.last() else {
        return report;
    };
    let (mut c_max, mut c_min) = (0.0f64, f64::INFINITY);
    let mut worst: f64 = 0.0;
    for (l, r) in records.iter().enumerate() {
        let (Some(ls_l), Some(ls_last)) = (r.diagnostics.energy, last.diagnostics.energy) else {
            report.fail(format!("level {l} carries no functional value"));
            return report;
        };
        let sum: f64 = records[l..records.len() - 1].iter().map(|x| x.delta2.unwrap_or(f64::NAN)).sum();
        let gap = (sum - (ls_l - ls_last)).abs();
        report.pairs += 1;
        if ls_l > 0.0 {
            worst = worst.max(gap / ls_l);
        }
        if !(gap <= TOL * ls_l.abs()) {
            report.fail(format!("from level {l}: sum delta2 = {sum:e}, LS drop = {:e}", ls_l - ls_last));
        }
        if r.sigma2 > 0.0 {
            let c = ls_l / r.sigma2;
            c_max = c_max.max(c);
            c_min = c_min.min(c);
        }
        if sum > c_max.max(0.0) * r.sigma2 * (1.0 + TOL) + TOL * ls_l.abs() && r.sigma2 > 0.0 {
            report.fail(format!("level {l}: sum delta2 = {sum:e} above C sigma2"));
        }
    }
    report.values.push(("max_rel_gap", worst));
    report.values.push(("C_max", c_max));
    report.values.push(("C_min", if c_min.is_finite() { c_min } else { 0.0 }));
    report
}

/// Growth of APPROX meshes against the data functional's decay under
/// uniform refinement. Slopes are of `log(|T| - |T_0| + 1)` against
/// `-log(error)`, i.e. `1/(2s)`; smaller is better. Points with fewer than
/// `min_growth` new elements are left out of the fits.
pub fn check_b1_rate(
    forest: &mut Forest,
    t0: &Triangulation,
    functional: impl Fn() -> Box<dyn ElementFunctional>,
    tolerances: &[f64],
    max_elements: usize,
    min_growth: usize,
) -> Result<AxiomReport> {
    const SLACK: f64 = 0.05;
    let mut report = AxiomReport::new("B1");
    let mut state = ApproxState::new(forest, functional(), usize::MAX);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut max_growth = 0;
    for &tol in tolerances {
        let out = state.approx(forest, tol)?;
        report.pairs += 1;
        if out.error > tol {
            report.fail(format!("APPROX error {:e} above tolerance {tol:e}", out.error));
        }
        let growth = out.mesh.len() - t0.len();
        max_growth = max_growth.max(growth);
        if growth >= min_growth {
            xs.push(-tol.ln());
            ys.push(((growth + 1) as f64).ln());
        }
        if out.mesh.len() > max_elements {
            break;
        }
    }
    report.values.push(("max_growth", max_growth as f64));
    if max_growth == 0 {
        return Ok(report);
    }
    let single = functional();
    let (mut ux, mut uy) = (Vec::new(), Vec::new());
    let mut t = t0.clone();
    while t.len() <= max_elements {
        let e: f64 = t.leaves().iter().map(|&k| single.value(&forest.coords(k))).sum();
        let growth = t.len() - t0.len();
        if growth >= min_growth && e > 0.0 {
            ux.push(-e.ln());
            uy.push(((growth + 1) as f64).ln());
        }
        t = forest.uniform_refine(&t)?;
    }
    if xs.len() < 2 || ux.len() < 2 {
        report.fail("too few points above the growth threshold".into());
        return Ok(report);
    }
    let approx = slope(&xs, &ys);
    let uniform = slope(&ux, &uy);
    report.values.push(("approx_slope", approx));
    report.values.push(("uniform_slope", uniform));
    report.values.push(("s", 1.0 / (2.0 * approx)));
    if approx > uniform + SLACK {
        report.fail(format!("APPROX slope {approx:.4} worse than uniform slope {uniform:.4}"));
    }
    Ok(report)
}
