//! Lowest-order Raviart-Thomas mixed FEM for the dual Poisson problem
//!
//! ```text
//! (p, q) + (div q, u) = 0           for all q in RT0(T)
//!          (div p, v) = -(f, v)     for all v in P0(T)
//! ```
//!
//! with the residual estimator
//! `eta^2(K) = |K| ||p||^2_K + |K|^(1/2) sum_E ||[p]_E . tau_E||^2_E` and the
//! distance `delta^2 = ||p_fine - p_coarse||^2_{H(div)}`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::marking::IndicatorField;
use crate::mesh::{Forest, Triangulation};
use crate::quadrature::{integrate, QuadratureRule, ScalarField};
use crate::rt0::{affine_l2_squared, ancestors, Topology};
use crate::sparse::{minres, BlockDiagonal, Cholesky, CsrMatrix, Jacobi, KrylovReport};

pub const SOLVER_TOL: f64 = 1e-10;
const MAX_ITER: usize = 20_000;

/// Saddle-point system `[A B^T; B 0] (p, u) = (0, -int_K f)`.
#[derive(Clone, Debug)]
pub struct MixedSystem {
    pub topo: Topology,
    /// RT0 mass matrix (edges x edges).
    pub mass: CsrMatrix,
    /// Divergence coupling `B[K, E] = int_K div psi_E` (elements x edges).
    pub divergence: CsrMatrix,
    /// Full symmetric indefinite matrix, edge unknowns first.
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// `int_K f` per element.
    pub load: Vec<f64>,
}

impl MixedSystem {
    pub fn num_edges(&self) -> usize {
        self.topo.num_edges()
    }

    pub fn num_elements(&self) -> usize {
        self.topo.num_elements()
    }
}

#[derive(Clone, Debug)]
pub struct MixedSolution {
    pub topo: Topology,
    pub mass: CsrMatrix,
    /// Normal components along the global edge normals.
    pub p: Vec<f64>,
    /// Piecewise constant values per element.
    pub u: Vec<f64>,
    pub load: Vec<f64>,
    pub report: KrylovReport,
}

pub fn assemble_mixed(forest: &Forest, t: &Triangulation, f: &ScalarField, rule: &QuadratureRule) -> MixedSystem {
    let topo = Topology::new(forest, t);
    let ne = topo.num_edges();
    let nk = topo.num_elements();
    let mut mass_t = Vec::with_capacity(9 * nk);
    let mut div_t = Vec::with_capacity(3 * nk);
    let mut load = Vec::with_capacity(nk);
    for k in 0..nk {
        let ids = topo.elem_edges[k];
        let m = topo.local_mass(k);
        for i in 0..3 {
            for j in 0..3 {
                mass_t.push((ids[i], ids[j], m[i][j]));
            }
            // div psi_E = s |E| / |K|, integrated over K
            div_t.push((k, ids[i], topo.elem_signs[k][i] * topo.edge_lengths[ids[i]]));
        }
        load.push(if f.is_zero() { 0.0 } else { integrate(f, &topo.coords[k], rule) });
    }
    let mut full = mass_t.clone();
    for &(k, e, v) in &div_t {
        full.push((ne + k, e, v));
        full.push((e, ne + k, v));
    }
    let mass = CsrMatrix::from_triplets(ne, ne, &mass_t);
    let divergence = CsrMatrix::from_triplets(nk, ne, &div_t);
    let matrix = CsrMatrix::from_triplets(ne + nk, ne + nk, &full);
    let mut rhs = vec![0.0; ne + nk];
    for k in 0..nk {
        rhs[ne + k] = -load[k];
    }
    MixedSystem {
        topo,
        mass,
        divergence,
        matrix,
        rhs,
        load,
    }
}

/// Preconditioned MINRES with the block preconditioner
/// `diag(D^{-1}, (B D^{-1} B^T)^{-1})`, `D = diag(A)`.
pub fn solve_mixed(system: MixedSystem) -> Result<MixedSolution> {
    let ne = system.num_edges();
    let nk = system.num_elements();
    let mut x = vec![0.0; ne + nk];
    let report = if system.rhs.iter().all(|&v| v == 0.0) {
        KrylovReport {
            iterations: 0,
            relative_residual: 0.0,
        }
    } else {
        let dinv: Vec<f64> = system.mass.diagonal().iter().map(|d| 1.0 / d).collect();
        let schur = system.divergence.scaled_gram(&dinv);
        let precond = BlockDiagonal::new(vec![
            (ne, Box::new(Jacobi::new(&system.mass))),
            (nk, Box::new(Cholesky::new(&schur)?)),
        ]);
        minres(&system.matrix, &system.rhs, &mut x, &precond, SOLVER_TOL, MAX_ITER)?
    };
    let u = x.split_off(ne);
    Ok(MixedSolution {
        topo: system.topo,
        mass: system.mass,
        p: x,
        u,
        load: system.load,
        report,
    })
}

impl MixedSolution {
    /// Element-wise divergence of the discrete flux.
    pub fn divergence(&self) -> Vec<f64> {
        (0..self.topo.num_elements())
            .map(|k| self.topo.local_field(k, &self.p).div())
            .collect()
    }

    /// `(int_Omega div p + int_Omega f) / max(|int f|, 1)`; zero for an
    /// exact solve.
    pub fn constraint_defect(&self) -> f64 {
        let div: f64 = self
            .divergence()
            .iter()
            .zip(&self.topo.areas)
            .map(|(d, a)| d * a)
            .sum();
        let total: f64 = self.load.iter().sum();
        (div + total).abs() / total.abs().max(1.0)
    }

    /// `||p||^2_{L2}`
    pub fn flux_l2_squared(&self) -> f64 {
        crate::sparse::dot(&self.p, &self.mass.mul(&self.p))
    }

    /// Text tables `edge_id flux` and `element_id u`.
    pub fn dump(&self) -> String {
        let mut s = String::from("# edge_id flux\n");
        for (g, v) in self.p.iter().enumerate() {
            writeln!(s, "{g} {v:.16e}").unwrap();
        }
        s.push_str("# element_id u\n");
        for (k, v) in self.u.iter().enumerate() {
            writeln!(s, "{k} {v:.16e}").unwrap();
        }
        s
    }
}

/// Squared local indicators `|K| ||p||^2_K + |K|^(1/2) sum_E ||[p].tau||^2_E`.
pub fn eta_mixed(sol: &MixedSolution) -> IndicatorField {
    let topo = &sol.topo;
    let jumps = topo.tangential_jumps(&sol.p);
    let values = (0..topo.num_elements())
        .map(|k| {
            let field = topo.local_field(k, &sol.p);
            let c = &topo.coords[k];
            let vals = [field.eval(&c[0]), field.eval(&c[1]), field.eval(&c[2])];
            let area = topo.areas[k];
            area * affine_l2_squared(area, &vals) + area.sqrt() * jumps[k]
        })
        .collect();
    IndicatorField::new(values)
}

/// `||p_fine - p_coarse||^2_{H(div)}` for nested triangulations.
pub fn delta2_mixed(
    forest: &Forest,
    coarse_t: &Triangulation,
    coarse: &MixedSolution,
    fine_t: &Triangulation,
    fine: &MixedSolution,
) -> Result<f64> {
    let anc = ancestors(forest, coarse_t, fine_t).ok_or(Error::NotNested)?;
    let ip = fine.topo.prolongate(&coarse.topo, &coarse.p, &anc);
    let d: Vec<f64> = fine.p.iter().zip(&ip).map(|(a, b)| a - b).collect();
    let l2 = crate::sparse::dot(&d, &fine.mass.mul(&d)).max(0.0);
    let coarse_div = coarse.divergence();
    let fine_div = fine.divergence();
    let div: f64 = (0..fine.topo.num_elements())
        .map(|k| fine.topo.areas[k] * (fine_div[k] - coarse_div[anc[k]]).powi(2))
        .sum();
    Ok(l2 + div)
}
