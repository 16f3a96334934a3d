//! Edge topology of a conforming triangulation and lowest-order
//! Raviart-Thomas (RT0) fields on it.
//!
//! Local edge `i` of an element is the edge opposite local vertex `i`. The
//! RT0 basis function of edge `E` restricted to an adjacent element `K` is
//! `s_{K,E} |E| / (2|K|) (x - P_E)` with `P_E` the vertex opposite `E`, so its
//! coefficient is the (constant) normal component along the global normal
//! `nu_E`. Global normals point from the lower to the higher element index;
//! on the boundary they point outward.

use std::collections::HashMap;

use crate::mesh::{edge_key, Forest, NodeId, Triangulation, Vertex};

#[derive(Clone, Debug)]
pub struct Topology {
    /// Forest node of each element (element index = position).
    pub nodes: Vec<NodeId>,
    /// Forest vertex ids, counter-clockwise.
    pub elem_vertices: Vec<[usize; 3]>,
    pub coords: Vec<[Vertex; 3]>,
    pub areas: Vec<f64>,
    /// Global edge of local edge `i` (opposite local vertex `i`).
    pub elem_edges: Vec<[usize; 3]>,
    /// `+1` where the element's outward normal equals the global normal.
    pub elem_signs: Vec<[f64; 3]>,
    /// Endpoints (forest vertex ids) of each global edge.
    pub edges: Vec<(usize, usize)>,
    /// Adjacent elements; the second entry is `None` on the boundary.
    pub edge_elements: Vec<(usize, Option<usize>)>,
    pub edge_lengths: Vec<f64>,
    /// Unit global normal of each edge.
    pub edge_normals: Vec<[f64; 2]>,
}

impl Topology {
    pub fn new(forest: &Forest, t: &Triangulation) -> Self {
        let n = t.len();
        let mut nodes = Vec::with_capacity(n);
        let mut elem_vertices = Vec::with_capacity(n);
        let mut coords = Vec::with_capacity(n);
        let mut areas = Vec::with_capacity(n);
        let mut elem_edges = Vec::with_capacity(n);
        let mut elem_signs = Vec::with_capacity(n);
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::with_capacity(2 * n);
        let mut edges = Vec::new();
        let mut edge_elements: Vec<(usize, Option<usize>)> = Vec::new();
        for (e, &k) in t.leaves().iter().enumerate() {
            let v = forest.triangle(k).v;
            nodes.push(k);
            elem_vertices.push(v);
            coords.push(forest.coords(k));
            areas.push(forest.area(k));
            let mut ids = [0; 3];
            let mut signs = [1.0; 3];
            for i in 0..3 {
                let key = edge_key(v[(i + 1) % 3], v[(i + 2) % 3]);
                match edge_index.get(&key) {
                    Some(&g) => {
                        edge_elements[g].1 = Some(e);
                        ids[i] = g;
                        signs[i] = -1.0;
                    }
                    None => {
                        let g = edges.len();
                        edge_index.insert(key, g);
                        edges.push(key);
                        edge_elements.push((e, None));
                        ids[i] = g;
                    }
                }
            }
            elem_edges.push(ids);
            elem_signs.push(signs);
        }
        let mut edge_lengths = vec![0.0; edges.len()];
        let mut edge_normals = vec![[0.0; 2]; edges.len()];
        for (e, ids) in elem_edges.iter().enumerate() {
            for i in 0..3 {
                let g = ids[i];
                if edge_elements[g].0 != e {
                    continue;
                }
                let p = coords[e][(i + 1) % 3];
                let q = coords[e][(i + 2) % 3];
                let (dx, dy) = (q.x - p.x, q.y - p.y);
                let len = dx.hypot(dy);
                edge_lengths[g] = len;
                // outward normal of a counter-clockwise element
                edge_normals[g] = [dy / len, -dx / len];
            }
        }
        Self {
            nodes,
            elem_vertices,
            coords,
            areas,
            elem_edges,
            elem_signs,
            edges,
            edge_elements,
            edge_lengths,
            edge_normals,
        }
    }

    pub fn num_elements(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_boundary_edge(&self, g: usize) -> bool {
        self.edge_elements[g].1.is_none()
    }

    pub fn centroid(&self, e: usize) -> Vertex {
        let c = &self.coords[e];
        Vertex::new((c[0].x + c[1].x + c[2].x) / 3.0, (c[0].y + c[1].y + c[2].y) / 3.0)
    }

    /// `|E_i| s_i / (2|K|)` for the three local basis functions.
    pub fn basis_scales(&self, e: usize) -> [f64; 3] {
        let ids = self.elem_edges[e];
        let s = self.elem_signs[e];
        let a2 = 2.0 * self.areas[e];
        [
            s[0] * self.edge_lengths[ids[0]] / a2,
            s[1] * self.edge_lengths[ids[1]] / a2,
            s[2] * self.edge_lengths[ids[2]] / a2,
        ]
    }

    /// Local RT0 mass matrix `int_K psi_i . psi_j`.
    pub fn local_mass(&self, e: usize) -> [[f64; 3]; 3] {
        let c = &self.coords[e];
        let sc = self.basis_scales(e);
        let area = self.areas[e];
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                // int_K (x - P_i).(x - P_j) for affine integrands
                let mut sum_prod = 0.0;
                let (mut si, mut sj) = ([0.0; 2], [0.0; 2]);
                for k in 0..3 {
                    let di = [c[k].x - c[i].x, c[k].y - c[i].y];
                    let dj = [c[k].x - c[j].x, c[k].y - c[j].y];
                    sum_prod += di[0] * dj[0] + di[1] * dj[1];
                    si[0] += di[0];
                    si[1] += di[1];
                    sj[0] += dj[0];
                    sj[1] += dj[1];
                }
                let integral = area / 12.0 * (sum_prod + si[0] * sj[0] + si[1] * sj[1]);
                m[i][j] = sc[i] * sc[j] * integral;
            }
        }
        m
    }

    /// Restriction of the global RT0 field with edge coefficients `coef` to
    /// element `e`.
    pub fn local_field(&self, e: usize, coef: &[f64]) -> LocalRt {
        let c = &self.coords[e];
        let sc = self.basis_scales(e);
        let ids = self.elem_edges[e];
        let mut b = 0.0;
        let mut a = [0.0; 2];
        for i in 0..3 {
            let w = coef[ids[i]] * sc[i];
            b += w;
            a[0] -= w * c[i].x;
            a[1] -= w * c[i].y;
        }
        LocalRt { a, b }
    }

    /// Gradients of the three barycentric coordinates.
    pub fn barycentric_gradients(&self, e: usize) -> [[f64; 2]; 3] {
        let c = &self.coords[e];
        let a2 = 2.0 * self.areas[e];
        let g = |i: usize| {
            let p = c[(i + 1) % 3];
            let q = c[(i + 2) % 3];
            [(p.y - q.y) / a2, (q.x - p.x) / a2]
        };
        [g(0), g(1), g(2)]
    }

    /// `int_K |x - c_K|^2 dx = |K| / 36 * sum |E|^2`.
    pub fn second_moment(&self, e: usize) -> f64 {
        let s: f64 = self.elem_edges[e].iter().map(|&g| self.edge_lengths[g].powi(2)).sum();
        self.areas[e] * s / 36.0
    }

    /// Per-element `sum_E ||[p]_E . tau_E||^2_{L2(E)}`, with the one-sided
    /// trace on boundary edges. Traces are affine along edges, so the
    /// integrals are exact.
    pub fn tangential_jumps(&self, coef: &[f64]) -> Vec<f64> {
        let fields: Vec<LocalRt> = (0..self.num_elements()).map(|e| self.local_field(e, coef)).collect();
        let mut per_edge = vec![0.0; self.num_edges()];
        for (g, &(a, b)) in self.edges.iter().enumerate() {
            let (k1, k2) = self.edge_elements[g];
            let (pa, pb) = self.edge_endpoints(k1, g, a, b);
            let n = self.edge_normals[g];
            let tau = [-n[1], n[0]];
            let trace = |f: &LocalRt, p: &Vertex| {
                let v = f.eval(p);
                v[0] * tau[0] + v[1] * tau[1]
            };
            let (mut ja, mut jb) = (trace(&fields[k1], &pa), trace(&fields[k1], &pb));
            if let Some(k2) = k2 {
                ja -= trace(&fields[k2], &pa);
                jb -= trace(&fields[k2], &pb);
            }
            per_edge[g] = self.edge_lengths[g] / 3.0 * (ja * ja + ja * jb + jb * jb);
        }
        self.sum_edges_per_element(&per_edge, |_| true)
    }

    pub(crate) fn edge_endpoints(&self, e: usize, g: usize, a: usize, b: usize) -> (Vertex, Vertex) {
        let ids = self.elem_edges[e];
        let i = ids.iter().position(|&x| x == g).expect("edge belongs to element");
        let v = self.elem_vertices[e];
        let c = &self.coords[e];
        let (ia, ib) = ((i + 1) % 3, (i + 2) % 3);
        debug_assert_eq!(edge_key(v[ia], v[ib]), (a, b));
        if v[ia] == a {
            (c[ia], c[ib])
        } else {
            (c[ib], c[ia])
        }
    }

    pub(crate) fn sum_edges_per_element(&self, per_edge: &[f64], include: impl Fn(usize) -> bool) -> Vec<f64> {
        self.elem_edges
            .iter()
            .map(|ids| ids.iter().filter(|&&g| include(g)).map(|&g| per_edge[g]).sum())
            .collect()
    }

    /// Coefficients of a coarse RT0 field in the RT0 space of this (finer)
    /// topology. `ancestor[e]` is the coarse element containing fine element
    /// `e`.
    pub fn prolongate(&self, coarse: &Topology, coarse_coef: &[f64], ancestor: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_edges()];
        for (g, &(a, b)) in self.edges.iter().enumerate() {
            let (k, _) = self.edge_elements[g];
            let field = coarse.local_field(ancestor[k], coarse_coef);
            let (pa, pb) = self.edge_endpoints(k, g, a, b);
            let mid = pa.midpoint(&pb);
            let v = field.eval(&mid);
            let n = self.edge_normals[g];
            out[g] = v[0] * n[0] + v[1] * n[1];
        }
        out
    }
}

/// RT0 field on one element: `p(x) = a + b x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalRt {
    pub a: [f64; 2],
    pub b: f64,
}

impl LocalRt {
    pub fn eval(&self, p: &Vertex) -> [f64; 2] {
        [self.a[0] + self.b * p.x, self.a[1] + self.b * p.y]
    }

    pub fn div(&self) -> f64 {
        2.0 * self.b
    }
}

/// `int_K |g|^2` for a vector field affine on `K`, from its vertex values.
pub fn affine_l2_squared(area: f64, values: &[[f64; 2]; 3]) -> f64 {
    let mut sum_sq = 0.0;
    let mut total = [0.0; 2];
    for v in values {
        sum_sq += v[0] * v[0] + v[1] * v[1];
        total[0] += v[0];
        total[1] += v[1];
    }
    area / 12.0 * (sum_sq + total[0] * total[0] + total[1] * total[1])
}

/// Coarse ancestor (as coarse element index) of every fine element.
pub fn ancestors(forest: &Forest, coarse: &Triangulation, fine: &Triangulation) -> Option<Vec<usize>> {
    fine.leaves()
        .iter()
        .map(|&k| {
            forest
                .ancestor_in(k, coarse)
                .and_then(|a| coarse.index_of(a))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::domains;

    #[test]
    fn edge_counts_and_normal_flux_of_basis() {
        let mut f = domains::unit_square();
        let t = f.uniform_refine(&f.initial()).unwrap();
        let topo = Topology::new(&f, &t);
        // 4 elements, Euler: E = V + F - 1 = 5 + 4 - 1 = 8
        assert_eq!(topo.num_edges(), 8);
        assert_eq!((0..8).filter(|&g| topo.is_boundary_edge(g)).count(), 4);
        // unit coefficient on one edge: normal component 1 along that edge
        for g in 0..topo.num_edges() {
            let mut coef = vec![0.0; topo.num_edges()];
            coef[g] = 1.0;
            let (k1, k2) = topo.edge_elements[g];
            let n = topo.edge_normals[g];
            let (a, b) = topo.edges[g];
            for k in std::iter::once(k1).chain(k2) {
                let (pa, pb) = topo.edge_endpoints(k, g, a, b);
                let field = topo.local_field(k, &coef);
                for p in [pa, pb, pa.midpoint(&pb)] {
                    let v = field.eval(&p);
                    assert!((v[0] * n[0] + v[1] * n[1] - 1.0).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn local_mass_is_spd() {
        let f = domains::l_shape();
        let topo = Topology::new(&f, &f.initial());
        let m = topo.local_mass(0);
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[i][j] - m[j][i]).abs() < 1e-15);
            }
        }
        // leading principal minors
        let d1 = m[0][0];
        let d2 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let d3 = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        assert!(d1 > 0.0 && d2 > 0.0 && d3 > 0.0);
    }
}
