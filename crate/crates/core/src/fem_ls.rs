//! Div least-squares FEM for `-div grad u = f`, `u = 0` on the boundary.
//!
//! Minimizes `LS(f; q, v) = ||f + div q||^2 + ||q - grad v||^2` over
//! `RT0(T) x S1_0(T)`. Unknowns are the edge fluxes followed by the values at
//! interior nodes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::marking::IndicatorField;
use crate::mesh::{Forest, Triangulation, Vertex};
use crate::quadrature::{integrate, QuadratureRule, ScalarField};
use crate::rt0::{affine_l2_squared, ancestors, Topology};
use crate::sparse::{cg, norm, Cholesky, CsrMatrix, KrylovReport};

pub const SOLVER_TOL: f64 = 1e-10;
const MAX_ITER: usize = 500;
const CLAMP_RTOL: f64 = 1e-9;

/// P1 node numbering of a triangulation.
#[derive(Clone, Debug)]
pub struct Nodes {
    /// Forest vertex id of every node, ascending.
    pub vertex: Vec<usize>,
    pub boundary: Vec<bool>,
    /// Unknown index of each node; `None` on the boundary.
    pub dof: Vec<Option<usize>>,
    /// Node indices of each element, in local vertex order.
    pub elem_nodes: Vec<[usize; 3]>,
    pub num_dofs: usize,
}

impl Nodes {
    pub fn new(topo: &Topology) -> Self {
        let mut index: BTreeMap<usize, usize> = BTreeMap::new();
        for v in topo.elem_vertices.iter().flatten() {
            index.insert(*v, 0);
        }
        let vertex: Vec<usize> = index.keys().copied().collect();
        for (i, v) in vertex.iter().enumerate() {
            index.insert(*v, i);
        }
        let mut boundary = vec![false; vertex.len()];
        for (g, &(a, b)) in topo.edges.iter().enumerate() {
            if topo.is_boundary_edge(g) {
                boundary[index[&a]] = true;
                boundary[index[&b]] = true;
            }
        }
        let mut num_dofs = 0;
        let dof = boundary
            .iter()
            .map(|&b| {
                (!b).then(|| {
                    num_dofs += 1;
                    num_dofs - 1
                })
            })
            .collect();
        let elem_nodes = topo
            .elem_vertices
            .iter()
            .map(|v| [index[&v[0]], index[&v[1]], index[&v[2]]])
            .collect();
        Self {
            vertex,
            boundary,
            dof,
            elem_nodes,
            num_dofs,
        }
    }

    pub fn len(&self) -> usize {
        self.vertex.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertex.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct LsSystem {
    pub topo: Topology,
    pub nodes: Nodes,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub field: ScalarField,
    pub rule: QuadratureRule,
}

#[derive(Clone, Debug)]
pub struct LsSolution {
    pub topo: Topology,
    pub nodes: Nodes,
    /// Edge fluxes along the global normals.
    pub p: Vec<f64>,
    /// Values at every node, zero on the boundary.
    pub u: Vec<f64>,
    /// Relative residual `||A x - b|| / ||b||` of the optimality system.
    pub gradient_residual: f64,
    pub report: KrylovReport,
    pub field: ScalarField,
    pub rule: QuadratureRule,
}

#[derive(Clone, Debug)]
pub struct LsEstimate {
    pub ls_per_element: Vec<f64>,
    pub ls_total: f64,
}

fn element_matrix(topo: &Topology, k: usize) -> [[f64; 6]; 6] {
    let area = topo.areas[k];
    let ids = topo.elem_edges[k];
    let signs = topo.elem_signs[k];
    let mass = topo.local_mass(k);
    let sc = topo.basis_scales(k);
    let grads = topo.barycentric_gradients(k);
    let c = topo.centroid(k);
    let pts = &topo.coords[k];
    let div: Vec<f64> = (0..3).map(|i| signs[i] * topo.edge_lengths[ids[i]] / area).collect();
    let mut m = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = mass[i][j] + area * div[i] * div[j];
            m[3 + i][3 + j] = area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
            // -int_K psi_i . grad phi_j, psi_i = sc_i (x - P_i)
            let mean = [c.x - pts[i].x, c.y - pts[i].y];
            let v = -sc[i] * area * (mean[0] * grads[j][0] + mean[1] * grads[j][1]);
            m[i][3 + j] = v;
            m[3 + j][i] = v;
        }
    }
    m
}

pub fn assemble_ls(forest: &Forest, t: &Triangulation, f: &ScalarField, rule: &QuadratureRule) -> LsSystem {
    let topo = Topology::new(forest, t);
    let nodes = Nodes::new(&topo);
    let ne = topo.num_edges();
    let n = ne + nodes.num_dofs;
    let mut triplets = Vec::with_capacity(36 * topo.num_elements());
    let mut rhs = vec![0.0; n];
    for k in 0..topo.num_elements() {
        let m = element_matrix(&topo, k);
        let ids = topo.elem_edges[k];
        let mut global = [None; 6];
        for i in 0..3 {
            global[i] = Some(ids[i]);
            global[3 + i] = nodes.dof[nodes.elem_nodes[k][i]].map(|d| ne + d);
        }
        for i in 0..6 {
            let Some(gi) = global[i] else { continue };
            for j in 0..6 {
                if let Some(gj) = global[j] {
                    triplets.push((gi, gj, m[i][j]));
                }
            }
        }
        if !f.is_zero() {
            let load = integrate(f, &topo.coords[k], rule);
            for i in 0..3 {
                let div = topo.elem_signs[k][i] * topo.edge_lengths[ids[i]] / topo.areas[k];
                rhs[ids[i]] -= div * load;
            }
        }
    }
    LsSystem {
        matrix: CsrMatrix::from_triplets(n, n, &triplets),
        topo,
        nodes,
        rhs,
        field: f.clone(),
        rule: rule.clone(),
    }
}

/// Preconditioned CG; the preconditioner is a sparse Cholesky factorization
/// of the system matrix itself.
pub fn solve_ls(system: LsSystem) -> Result<LsSolution> {
    let ne = system.topo.num_edges();
    let n = system.matrix.nrows();
    let mut x = vec![0.0; n];
    let report = if system.rhs.iter().all(|&v| v == 0.0) {
        KrylovReport {
            iterations: 0,
            relative_residual: 0.0,
        }
    } else {
        let precond = Cholesky::new(&system.matrix)?;
        cg(&system.matrix, &system.rhs, &mut x, &precond, SOLVER_TOL, MAX_ITER)?
    };
    let gradient_residual = gradient_residual(&system.matrix, &x, &system.rhs);
    let mut u = vec![0.0; system.nodes.len()];
    for (i, d) in system.nodes.dof.iter().enumerate() {
        if let Some(d) = d {
            u[i] = x[ne + d];
        }
    }
    x.truncate(ne);
    Ok(LsSolution {
        topo: system.topo,
        nodes: system.nodes,
        p: x,
        u,
        gradient_residual,
        report,
        field: system.field,
        rule: system.rule,
    })
}

/// `||A x - b|| / ||b||`, or `||A x||` when `b = 0`.
fn gradient_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    let nb = norm(b);
    if nb > 0.0 {
        norm(&r) / nb
    } else {
        norm(&r)
    }
}

impl LsSolution {
    /// Piecewise constant gradient of `u` on element `k`.
    pub fn grad_u(&self, k: usize) -> [f64; 2] {
        let g = self.topo.barycentric_gradients(k);
        let n = self.nodes.elem_nodes[k];
        let mut out = [0.0; 2];
        for i in 0..3 {
            out[0] += self.u[n[i]] * g[i][0];
            out[1] += self.u[n[i]] * g[i][1];
        }
        out
    }

    /// Text tables `edge_id flux` and `node_id u`.
    pub fn dump(&self) -> String {
        let mut s = String::from("# edge_id flux\n");
        for (g, v) in self.p.iter().enumerate() {
            writeln!(s, "{g} {v:.16e}").unwrap();
        }
        s.push_str("# node_id u\n");
        for (i, v) in self.u.iter().enumerate() {
            writeln!(s, "{i} {v:.16e}").unwrap();
        }
        s
    }
}

/// `||q - grad v||^2_K` for affine `q` and constant `grad v`.
fn misfit(topo: &Topology, k: usize, p: &[f64], grad: [f64; 2]) -> f64 {
    let field = topo.local_field(k, p);
    let c = &topo.coords[k];
    let vals = [0, 1, 2].map(|i| {
        let v = field.eval(&c[i]);
        [v[0] - grad[0], v[1] - grad[1]]
    });
    affine_l2_squared(topo.areas[k], &vals)
}

/// Per-element `||f + div p||^2_K + ||p - grad u||^2_K`.
pub fn ls_functional(sol: &LsSolution) -> LsEstimate {
    let topo = &sol.topo;
    let ls_per_element: Vec<f64> = (0..topo.num_elements())
        .map(|k| {
            let div = topo.local_field(k, &sol.p).div();
            let residual = if sol.field.is_zero() {
                topo.areas[k] * div * div
            } else {
                let s: f64 = sol
                    .rule
                    .map(&topo.coords[k])
                    .map(|(x, w)| w * (sol.field.eval(x.x, x.y) + div).powi(2))
                    .sum();
                topo.areas[k] * s
            };
            residual + misfit(topo, k, &sol.p, sol.grad_u(k))
        })
        .collect();
    let ls_total = ls_per_element.iter().sum();
    LsEstimate {
        ls_per_element,
        ls_total,
    }
}

/// Squared local indicators: `||(1 - Pi_0) p||^2_K` plus `|K|^(1/2)` times
/// the tangential flux jumps (all edges) and the normal-derivative jumps of
/// `u` (interior edges).
pub fn eta_ls(sol: &LsSolution) -> IndicatorField {
    let topo = &sol.topo;
    let tangential = topo.tangential_jumps(&sol.p);
    let grads: Vec<[f64; 2]> = (0..topo.num_elements()).map(|k| sol.grad_u(k)).collect();
    let per_edge: Vec<f64> = (0..topo.num_edges())
        .map(|g| match topo.edge_elements[g] {
            (k1, Some(k2)) => {
                let n = topo.edge_normals[g];
                let jump = (grads[k1][0] - grads[k2][0]) * n[0] + (grads[k1][1] - grads[k2][1]) * n[1];
                topo.edge_lengths[g] * jump * jump
            }
            (_, None) => 0.0,
        })
        .collect();
    let normal = topo.sum_edges_per_element(&per_edge, |g| !topo.is_boundary_edge(g));
    let values = (0..topo.num_elements())
        .map(|k| {
            let b = topo.local_field(k, &sol.p).b;
            b * b * topo.second_moment(k) + topo.areas[k].sqrt() * (tangential[k] + normal[k])
        })
        .collect();
    IndicatorField::new(values)
}

/// `LS(coarse) - LS(fine)`, clamped at zero when it is negative by less than
/// `1e-9 LS(coarse)`.
pub fn delta2_ls(
    forest: &Forest,
    coarse_t: &Triangulation,
    coarse: &LsSolution,
    fine_t: &Triangulation,
    fine: &LsSolution,
) -> Result<f64> {
    if !forest.is_refinement(coarse_t, fine_t) {
        return Err(Error::NotNested);
    }
    let lc = ls_functional(coarse).ls_total;
    let lf = ls_functional(fine).ls_total;
    Ok(clamp_drop(lc, lf))
}

pub(crate) fn clamp_drop(coarse: f64, fine: f64) -> f64 {
    let d = coarse - fine;
    if d < 0.0 {
        if d < -CLAMP_RTOL * coarse.abs() {
            log::warn!("least-squares value increased under refinement: {coarse:e} -> {fine:e}");
        }
        0.0
    } else {
        d
    }
}

/// `LS(0; p_fine - p_coarse, u_fine - u_coarse)` evaluated on the fine mesh
/// after prolongating the coarse solution.
pub fn ls_of_difference(
    forest: &Forest,
    coarse_t: &Triangulation,
    coarse: &LsSolution,
    fine_t: &Triangulation,
    fine: &LsSolution,
) -> Result<f64> {
    let anc = ancestors(forest, coarse_t, fine_t).ok_or(Error::NotNested)?;
    let topo = &fine.topo;
    let ip = topo.prolongate(&coarse.topo, &coarse.p, &anc);
    let dp: Vec<f64> = fine.p.iter().zip(&ip).map(|(a, b)| a - b).collect();
    // coarse u interpolated at fine nodes through any containing element
    let mut iu = vec![f64::NAN; fine.nodes.len()];
    for k in 0..topo.num_elements() {
        for (i, &node) in fine.nodes.elem_nodes[k].iter().enumerate() {
            if iu[node].is_nan() {
                iu[node] = coarse.eval_u(anc[k], &topo.coords[k][i]);
            }
        }
    }
    let du: Vec<f64> = fine.u.iter().zip(&iu).map(|(a, b)| a - b).collect();
    let mut total = 0.0;
    for k in 0..topo.num_elements() {
        let div = topo.local_field(k, &dp).div();
        let g = topo.barycentric_gradients(k);
        let n = fine.nodes.elem_nodes[k];
        let mut grad = [0.0; 2];
        for i in 0..3 {
            grad[0] += du[n[i]] * g[i][0];
            grad[1] += du[n[i]] * g[i][1];
        }
        total += topo.areas[k] * div * div + misfit(topo, k, &dp, grad);
    }
    Ok(total)
}

impl LsSolution {
    /// Value of `u` at a point of element `k`.
    pub fn eval_u(&self, k: usize, x: &Vertex) -> f64 {
        let g = self.topo.barycentric_gradients(k);
        let c = &self.topo.coords[k];
        let n = self.nodes.elem_nodes[k];
        (0..3)
            .map(|i| {
                // lambda_i vanishes on the opposite edge through c[i+1]
                let o = c[(i + 1) % 3];
                let lambda = g[i][0] * (x.x - o.x) + g[i][1] * (x.y - o.y);
                lambda * self.u[n[i]]
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::domains;

    fn solve(forest: &Forest, t: &Triangulation, f: &str) -> LsSolution {
        solve_ls(assemble_ls(forest, t, &f.parse().unwrap(), &QuadratureRule::default())).unwrap()
    }

    fn brute_element_matrix(topo: &Topology, k: usize) -> [[f64; 6]; 6] {
        // basis (psi_0..2, phi_0..2) with div/grad/values at quadrature points
        let rule = QuadratureRule::seven_point();
        let area = topo.areas[k];
        let c = topo.coords[k];
        let sc = topo.basis_scales(k);
        let g = topo.barycentric_gradients(k);
        let mut m = [[0.0; 6]; 6];
        for (x, w) in rule.map(&c) {
            // (value vector, divergence) of each basis function in the LS
            // residual pair (q - grad v, div q)
            let mut val = [[0.0; 2]; 6];
            let mut div = [0.0; 6];
            for i in 0..3 {
                val[i] = [sc[i] * (x.x - c[i].x), sc[i] * (x.y - c[i].y)];
                div[i] = 2.0 * sc[i];
                val[3 + i] = [-g[i][0], -g[i][1]];
            }
            for i in 0..6 {
                for j in 0..6 {
                    m[i][j] += area * w * (val[i][0] * val[j][0] + val[i][1] * val[j][1] + div[i] * div[j]);
                }
            }
        }
        m
    }

    #[test]
    fn element_matrix_matches_quadrature_assembly() {
        let f = domains::l_shape();
        let topo = Topology::new(&f, &f.initial());
        for k in 0..topo.num_elements() {
            let a = element_matrix(&topo, k);
            let b = brute_element_matrix(&topo, k);
            for i in 0..6 {
                for j in 0..6 {
                    assert!((a[i][j] - b[i][j]).abs() < 1e-13, "{k} {i} {j}");
                }
            }
        }
    }

    #[test]
    fn system_is_symmetric_positive_definite() {
        let mut f = domains::unit_square();
        let t0 = f.initial();
        let t = f.uniform_refine(&t0).unwrap();
        let sys = assemble_ls(&f, &t, &ScalarField::Constant(1.0), &QuadratureRule::default());
        // 8 edges + 1 interior node
        assert_eq!(sys.matrix.nrows(), 9);
        assert!(sys.matrix.asymmetry() < 1e-13);
        assert!(Cholesky::new(&sys.matrix).is_ok());
    }

    #[test]
    fn zero_data() {
        let f = domains::l_shape();
        let t = f.initial();
        let sys = assemble_ls(&f, &t, &ScalarField::Constant(0.0), &QuadratureRule::default());
        assert!(sys.rhs.iter().all(|&v| v == 0.0));
        let sol = solve_ls(sys).unwrap();
        assert!(sol.p.iter().chain(&sol.u).all(|&v| v == 0.0));
        assert_eq!(ls_functional(&sol).ls_total, 0.0);
        assert_eq!(eta_ls(&sol).total(), 0.0);
    }

    #[test]
    fn constant_flux_with_affine_u_has_only_boundary_jumps() {
        let mut f = domains::unit_square();
        let t0 = f.initial();
        let t = f.uniform_refine(&t0).unwrap();
        let mut sol = solve(&f, &t, "zero");
        // u = x on every node (boundary values ignored by the estimator), p = grad u
        for (i, v) in sol.nodes.vertex.iter().enumerate() {
            sol.u[i] = f.vertex(*v).x;
        }
        sol.p = sol.topo.edge_normals.iter().map(|n| n[0]).collect();
        // interior jumps and (1 - Pi_0) p vanish; the one-sided boundary
        // trace p . tau = 1 survives on the two horizontal boundary edges:
        // 2 * |K|^(1/2) * |E| = 2 * 0.5 * 1
        let eta = eta_ls(&sol);
        assert!((eta.total() - 1.0).abs() < 1e-13, "{}", eta.total());
        let ls = ls_functional(&sol);
        // only ||0 + div p||^2 = 0 and ||p - grad u||^2 = 0 remain
        assert!(ls.ls_total < 1e-28);
    }

    #[test]
    fn unit_square_regression() {
        // f = 1 on the two-triangle square has no interior node; by symmetry
        // the optimal flux minimizes ||1 + div q||^2 + ||q||^2.
        let f = domains::unit_square();
        let sol = solve(&f, &f.initial(), "one");
        let ls = ls_functional(&sol);
        let total: f64 = ls.ls_per_element.iter().sum();
        assert!((total - ls.ls_total).abs() < 1e-12);
        assert!(sol.u.iter().all(|&v| v == 0.0));
        assert!(sol.gradient_residual < 1e-9);
        // feasible competitor q = 0 gives LS = 1
        assert!(ls.ls_total < 1.0 && ls.ls_total > 0.0);
    }

    #[test]
    fn nested_monotonicity_and_galerkin_identity() {
        let mut f = domains::l_shape();
        let t0 = f.initial();
        let t1 = f.uniform_refine(&t0).unwrap();
        let t2 = f.refine(&t1, &t1.leaves()[..7].to_vec()).unwrap();
        for data in ["one", "linear-x"] {
            let coarse = solve(&f, &t1, data);
            let fine = solve(&f, &t2, data);
            let lc = ls_functional(&coarse).ls_total;
            let lf = ls_functional(&fine).ls_total;
            assert!(lf <= lc + 1e-9);
            let d2 = delta2_ls(&f, &t1, &coarse, &t2, &fine).unwrap();
            let direct = ls_of_difference(&f, &t1, &coarse, &t2, &fine).unwrap();
            assert!(d2 > 0.0);
            assert!((d2 - direct).abs() <= 1e-8 * lc, "{data}: {d2} vs {direct}");
            assert!(fine.gradient_residual <= 1e-9);
        }
    }

    #[test]
    fn delta_same_mesh_and_non_nested() {
        let mut f = domains::unit_square();
        let t0 = f.initial();
        let sol = solve(&f, &t0, "one");
        assert_eq!(delta2_ls(&f, &t0, &sol, &t0, &sol).unwrap(), 0.0);
        let t1 = f.uniform_refine(&t0).unwrap();
        let fine = solve(&f, &t1, "one");
        assert!(matches!(delta2_ls(&f, &t1, &fine, &t0, &sol), Err(Error::NotNested)));
    }

    #[test]
    fn clamp_only_for_negative_drops() {
        assert_eq!(clamp_drop(1.0, 0.25), 0.75);
        assert_eq!(clamp_drop(1.0, 1.0 + 1e-12), 0.0);
    }
}
