//! Tagged-triangle meshes under newest-vertex bisection (NVB).
//!
//! Every experiment owns one [`Forest`]: the initial triangulation's elements
//! are the roots and each bisection appends two children. A [`Triangulation`]
//! is a sorted leaf set into that forest, so snapshots are cheap values and the
//! overlay of two triangulations is a union of ancestor sets.
//!
//! Triangle convention: `v[0]`–`v[1]` is the refinement edge and `v[2]` the
//! newest vertex. Vertices are stored counter-clockwise.

pub mod domains;
pub mod io;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vertex {
    pub x: f64,
    pub y: f64,
}

impl Vertex {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn midpoint(&self, other: &Vertex) -> Vertex {
        Vertex::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TaggedTriangle {
    pub v: [usize; 3],
    pub generation: u32,
}

impl TaggedTriangle {
    pub fn new(v: [usize; 3], generation: u32) -> Self {
        Self { v, generation }
    }

    pub fn refinement_edge(&self) -> (usize, usize) {
        (self.v[0], self.v[1])
    }

    /// Edges in local order: opposite `v[2]`, `v[0]`, `v[1]`.
    pub fn edges(&self) -> [(usize, usize); 3] {
        let [a, b, c] = self.v;
        [(a, b), (b, c), (c, a)]
    }
}

pub(crate) fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Signed area of the triangle `(a, b, c)`; positive for counter-clockwise order.
pub fn signed_area(a: &Vertex, b: &Vertex, c: &Vertex) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

/// Newest-vertex bisection of `t` at the midpoint `m` of its refinement edge.
///
/// Children are `(v2, v0, m)` and `(v1, v2, m)`: the new vertex `m` is the
/// newest vertex of both, so each child's refinement edge is the parent edge
/// opposite `m`. Orientation is inherited from the parent.
pub fn bisect(
    t: &TaggedTriangle,
    m: usize,
    vertices: &[Vertex],
) -> Result<(TaggedTriangle, TaggedTriangle)> {
    let [a, b, c] = t.v;
    for &i in &[a, b, c, m] {
        if i >= vertices.len() {
            return Err(Error::VertexOutOfRange {
                index: i,
                count: vertices.len(),
            });
        }
    }
    let area = signed_area(&vertices[a], &vertices[b], &vertices[c]);
    if area.abs() <= f64::EPSILON * scale2(&vertices[a], &vertices[b], &vertices[c]) {
        return Err(Error::DegenerateTriangle(t.v));
    }
    let g = t.generation + 1;
    Ok((
        TaggedTriangle::new([c, a, m], g),
        TaggedTriangle::new([b, c, m], g),
    ))
}

fn scale2(a: &Vertex, b: &Vertex, c: &Vertex) -> f64 {
    let d = |p: &Vertex, q: &Vertex| (p.x - q.x).powi(2) + (p.y - q.y).powi(2);
    d(a, b).max(d(b, c)).max(d(c, a))
}

#[derive(Clone, Debug)]
struct Node {
    tri: TaggedTriangle,
    parent: Option<NodeId>,
    children: Option<[NodeId; 2]>,
}

static NEXT_FOREST_ID: AtomicU64 = AtomicU64::new(1);

/// Bisection forest over an initial triangulation, together with the shared
/// vertex pool and the boundary edge set.
#[derive(Clone, Debug)]
pub struct Forest {
    id: u64,
    vertices: Vec<Vertex>,
    nodes: Vec<Node>,
    roots: usize,
    midpoints: HashMap<(usize, usize), usize>,
    boundary: HashSet<(usize, usize)>,
}

/// A leaf set of a [`Forest`]. Leaves are kept sorted by node id, which is
/// also the element numbering used by assembly and marking.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triangulation {
    forest_id: u64,
    leaves: Vec<NodeId>,
}

impl Triangulation {
    fn from_leaves(forest_id: u64, mut leaves: Vec<NodeId>) -> Self {
        leaves.sort_unstable();
        leaves.dedup();
        Self { forest_id, leaves }
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.leaves.binary_search(&node).is_ok()
    }

    /// Position of `node` in the element numbering, if it is a leaf.
    pub fn index_of(&self, node: NodeId) -> Option<usize> {
        self.leaves.binary_search(&node).ok()
    }

    pub fn forest_id(&self) -> u64 {
        self.forest_id
    }
}

impl Forest {
    /// Builds a forest from an initial mesh.
    ///
    /// With `tagged = true` each triangle's `(v0, v1)` is taken as its
    /// refinement edge; otherwise the longest edge is tagged (ties go to the
    /// lexicographically smallest vertex pair). Orientation is fixed to
    /// counter-clockwise either way. When `boundary` is `None` the boundary is
    /// taken to be the set of edges with a single adjacent triangle.
    pub fn new(
        vertices: Vec<Vertex>,
        triangles: &[[usize; 3]],
        tagged: bool,
        boundary: Option<Vec<(usize, usize)>>,
    ) -> Result<Self> {
        let tris: Vec<_> = triangles.iter().map(|&t| (t, tagged)).collect();
        Self::from_tagged(vertices, &tris, boundary)
    }

    /// Like [`Forest::new`] with the tagging choice made per triangle.
    pub fn from_tagged(
        vertices: Vec<Vertex>,
        triangles: &[([usize; 3], bool)],
        boundary: Option<Vec<(usize, usize)>>,
    ) -> Result<Self> {
        for (i, v) in vertices.iter().enumerate() {
            if !v.x.is_finite() || !v.y.is_finite() {
                return Err(Error::NonFiniteVertex { index: i });
            }
        }
        let mut nodes = Vec::with_capacity(triangles.len());
        for &(t, tagged) in triangles {
            for &i in &t {
                if i >= vertices.len() {
                    return Err(Error::VertexOutOfRange {
                        index: i,
                        count: vertices.len(),
                    });
                }
            }
            let v = orient_and_tag(t, &vertices, tagged)?;
            nodes.push(Node {
                tri: TaggedTriangle::new(v, 0),
                parent: None,
                children: None,
            });
        }
        let boundary = match boundary {
            Some(b) => b.into_iter().map(|(a, b)| edge_key(a, b)).collect(),
            None => {
                let mut count: HashMap<(usize, usize), u32> = HashMap::new();
                for n in &nodes {
                    for (a, b) in n.tri.edges() {
                        *count.entry(edge_key(a, b)).or_default() += 1;
                    }
                }
                count
                    .into_iter()
                    .filter(|&(_, c)| c == 1)
                    .map(|(e, _)| e)
                    .collect()
            }
        };
        Ok(Self {
            id: NEXT_FOREST_ID.fetch_add(1, Ordering::Relaxed),
            roots: nodes.len(),
            vertices,
            nodes,
            midpoints: HashMap::new(),
            boundary,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// The initial triangulation T0 (all roots).
    pub fn initial(&self) -> Triangulation {
        Triangulation::from_leaves(self.id, (0..self.roots).collect())
    }

    /// Wraps an arbitrary node set as a triangulation of this forest. The
    /// caller is responsible for the set being a partition.
    pub fn partition(&self, leaves: Vec<NodeId>) -> Triangulation {
        Triangulation::from_leaves(self.id, leaves)
    }

    pub fn num_roots(&self) -> usize {
        self.roots
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> Vertex {
        self.vertices[i]
    }

    pub fn triangle(&self, node: NodeId) -> &TaggedTriangle {
        &self.nodes[node].tri
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.nodes[node].parent
    }

    pub fn children(&self, node: NodeId) -> Option<[NodeId; 2]> {
        self.nodes[node].children
    }

    pub fn coords(&self, node: NodeId) -> [Vertex; 3] {
        let v = self.nodes[node].tri.v;
        [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]]]
    }

    pub fn area(&self, node: NodeId) -> f64 {
        let [a, b, c] = self.coords(node);
        signed_area(&a, &b, &c)
    }

    pub fn is_boundary_edge(&self, a: usize, b: usize) -> bool {
        self.boundary.contains(&edge_key(a, b))
    }

    pub fn midpoint_of(&self, a: usize, b: usize) -> Option<usize> {
        self.midpoints.get(&edge_key(a, b)).copied()
    }

    fn check(&self, t: &Triangulation) -> Result<()> {
        if t.forest_id != self.id {
            return Err(Error::ForestMismatch);
        }
        Ok(())
    }

    fn midpoint(&mut self, a: usize, b: usize) -> usize {
        let key = edge_key(a, b);
        if let Some(&m) = self.midpoints.get(&key) {
            return m;
        }
        let m = self.vertices.len();
        self.vertices
            .push(self.vertices[a].midpoint(&self.vertices[b]));
        self.midpoints.insert(key, m);
        if self.boundary.contains(&key) {
            self.boundary.insert(edge_key(a, m));
            self.boundary.insert(edge_key(m, b));
        }
        m
    }

    /// Returns the two children of `node`, bisecting it in the forest first
    /// if no other triangulation has done so.
    pub fn ensure_children(&mut self, node: NodeId) -> Result<[NodeId; 2]> {
        if let Some(c) = self.nodes[node].children {
            return Ok(c);
        }
        let tri = self.nodes[node].tri;
        let (a, b) = tri.refinement_edge();
        let m = self.midpoint(a, b);
        let (t1, t2) = bisect(&tri, m, &self.vertices)?;
        let c1 = self.nodes.len();
        self.nodes.push(Node {
            tri: t1,
            parent: Some(node),
            children: None,
        });
        self.nodes.push(Node {
            tri: t2,
            parent: Some(node),
            children: None,
        });
        self.nodes[node].children = Some([c1, c1 + 1]);
        Ok([c1, c1 + 1])
    }

    /// NVB refinement with completion: every marked leaf is bisected at least
    /// once and further leaves are bisected until no hanging node remains.
    pub fn refine(&mut self, t: &Triangulation, marked: &[NodeId]) -> Result<Triangulation> {
        self.check(t)?;
        for &k in marked {
            if !t.contains(k) {
                return Err(Error::NotALeaf(k));
            }
        }
        if marked.is_empty() {
            return Ok(t.clone());
        }
        self.close(t.leaves(), marked)
    }

    /// Conforming closure of an arbitrary (possibly non-conforming) partition.
    pub fn complete(&mut self, partition: &Triangulation) -> Result<Triangulation> {
        self.check(partition)?;
        self.close(partition.leaves(), &[])
    }

    pub fn uniform_refine(&mut self, t: &Triangulation) -> Result<Triangulation> {
        let all = t.leaves().to_vec();
        self.refine(t, &all)
    }

    fn close(&mut self, leaves: &[NodeId], marked: &[NodeId]) -> Result<Triangulation> {
        let mut state = Closure::new(self, leaves);
        let mut queue: Vec<NodeId> = marked.iter().rev().copied().collect();
        for &k in leaves {
            if state.has_hanging_node(self, k) {
                queue.push(k);
            }
        }
        while let Some(k) = queue.pop() {
            if !state.leaves.contains(&k) {
                continue;
            }
            let [c1, c2] = self.ensure_children(k)?;
            state.remove(self, k);
            state.insert(self, c1);
            state.insert(self, c2);
            let (a, b) = self.nodes[k].tri.refinement_edge();
            if let Some(owners) = state.edges.get(&edge_key(a, b)) {
                queue.extend(owners.iter().copied());
            }
            for c in [c1, c2] {
                if state.has_hanging_node(self, c) {
                    queue.push(c);
                }
            }
        }
        Ok(Triangulation::from_leaves(
            self.id,
            state.leaves.into_iter().collect(),
        ))
    }

    /// Smallest common refinement of two triangulations of this forest.
    pub fn overlay(&self, t1: &Triangulation, t2: &Triangulation) -> Result<Triangulation> {
        self.check(t1)?;
        self.check(t2)?;
        let mut in_union = vec![false; self.nodes.len()];
        for &leaf in t1.leaves().iter().chain(t2.leaves()) {
            let mut n = Some(leaf);
            while let Some(k) = n {
                if in_union[k] {
                    break;
                }
                in_union[k] = true;
                n = self.nodes[k].parent;
            }
        }
        let leaves: Vec<NodeId> = (0..self.nodes.len())
            .filter(|&k| {
                in_union[k]
                    && match self.nodes[k].children {
                        None => true,
                        Some([c, _]) => !in_union[c],
                    }
            })
            .collect();
        let out = Triangulation::from_leaves(self.id, leaves);
        let lhs = out.len() + self.roots;
        let rhs = t1.len() + t2.len();
        if lhs > rhs {
            return Err(Error::OverlayBound { lhs, rhs });
        }
        Ok(out)
    }

    /// Ancestor-or-self of `node` that is a leaf of `coarse`.
    pub fn ancestor_in(&self, node: NodeId, coarse: &Triangulation) -> Option<NodeId> {
        let mut n = Some(node);
        while let Some(k) = n {
            if coarse.contains(k) {
                return Some(k);
            }
            n = self.nodes[k].parent;
        }
        None
    }

    /// Whether every leaf of `fine` lies inside some leaf of `coarse`.
    pub fn is_refinement(&self, coarse: &Triangulation, fine: &Triangulation) -> bool {
        coarse.forest_id == self.id
            && fine.forest_id == self.id
            && fine
                .leaves()
                .iter()
                .all(|&k| self.ancestor_in(k, coarse).is_some())
    }

    pub fn is_conforming(&self, t: &Triangulation) -> bool {
        if t.forest_id != self.id {
            return false;
        }
        let mut active = vec![false; self.vertices.len()];
        let mut count: HashMap<(usize, usize), u32> = HashMap::with_capacity(2 * t.len());
        for &k in t.leaves() {
            let tri = &self.nodes[k].tri;
            for &v in &tri.v {
                active[v] = true;
            }
            for (a, b) in tri.edges() {
                *count.entry(edge_key(a, b)).or_default() += 1;
            }
        }
        count.iter().all(|(&(a, b), &c)| {
            let hanging = self.midpoint_of(a, b).is_some_and(|m| active[m]);
            !hanging && (c == 2 || (c == 1 && self.boundary.contains(&(a, b))))
        })
    }

    /// Minimum interior angle over all leaves, in radians.
    pub fn min_angle(&self, t: &Triangulation) -> f64 {
        t.leaves()
            .iter()
            .flat_map(|&k| triangle_angles(&self.coords(k)))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn total_area(&self, t: &Triangulation) -> f64 {
        t.leaves().iter().map(|&k| self.area(k)).sum()
    }
}

fn triangle_angles(p: &[Vertex; 3]) -> [f64; 3] {
    let angle = |o: &Vertex, a: &Vertex, b: &Vertex| {
        let (ux, uy) = (a.x - o.x, a.y - o.y);
        let (vx, vy) = (b.x - o.x, b.y - o.y);
        let cross = ux * vy - uy * vx;
        let dot = ux * vx + uy * vy;
        cross.abs().atan2(dot)
    };
    [
        angle(&p[0], &p[1], &p[2]),
        angle(&p[1], &p[2], &p[0]),
        angle(&p[2], &p[0], &p[1]),
    ]
}

fn orient_and_tag(t: [usize; 3], vertices: &[Vertex], tagged: bool) -> Result<[usize; 3]> {
    let area = signed_area(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]);
    if area.abs() <= f64::EPSILON * scale2(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]) {
        return Err(Error::DegenerateTriangle(t));
    }
    if tagged {
        // Keep (v0, v1) as refinement edge; swapping it fixes orientation.
        return Ok(if area > 0.0 { t } else { [t[1], t[0], t[2]] });
    }
    let mut v = if area > 0.0 { t } else { [t[0], t[2], t[1]] };
    let len2 = |a: usize, b: usize| {
        let (p, q) = (&vertices[a], &vertices[b]);
        (p.x - q.x).powi(2) + (p.y - q.y).powi(2)
    };
    let mut best = 0;
    for r in 1..3 {
        let (a, b) = (v[r], v[(r + 1) % 3]);
        let (ba, bb) = (v[best], v[(best + 1) % 3]);
        let (l, lb) = (len2(a, b), len2(ba, bb));
        if l > lb || (l == lb && edge_key(a, b) < edge_key(ba, bb)) {
            best = r;
        }
    }
    v.rotate_left(best);
    Ok(v)
}

/// Working state of the completion sweep.
struct Closure {
    leaves: HashSet<NodeId>,
    vertex_use: Vec<u32>,
    edges: HashMap<(usize, usize), Vec<NodeId>>,
}

impl Closure {
    fn new(forest: &Forest, leaves: &[NodeId]) -> Self {
        let mut s = Self {
            leaves: HashSet::with_capacity(2 * leaves.len()),
            vertex_use: vec![0; forest.vertices.len()],
            edges: HashMap::with_capacity(3 * leaves.len()),
        };
        for &k in leaves {
            s.insert(forest, k);
        }
        s
    }

    fn insert(&mut self, forest: &Forest, k: NodeId) {
        let tri = forest.nodes[k].tri;
        if self.vertex_use.len() < forest.vertices.len() {
            self.vertex_use.resize(forest.vertices.len(), 0);
        }
        self.leaves.insert(k);
        for &v in &tri.v {
            self.vertex_use[v] += 1;
        }
        for (a, b) in tri.edges() {
            self.edges.entry(edge_key(a, b)).or_default().push(k);
        }
    }

    fn remove(&mut self, forest: &Forest, k: NodeId) {
        let tri = forest.nodes[k].tri;
        self.leaves.remove(&k);
        for &v in &tri.v {
            self.vertex_use[v] -= 1;
        }
        for (a, b) in tri.edges() {
            let key = edge_key(a, b);
            if let Some(owners) = self.edges.get_mut(&key) {
                owners.retain(|&o| o != k);
                if owners.is_empty() {
                    self.edges.remove(&key);
                }
            }
        }
    }

    fn has_hanging_node(&self, forest: &Forest, k: NodeId) -> bool {
        forest.nodes[k].tri.edges().iter().any(|&(a, b)| {
            forest
                .midpoint_of(a, b)
                .is_some_and(|m| self.vertex_use.get(m).copied().unwrap_or(0) > 0)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn reference() -> Vec<Vertex> {
        vec![
            Vertex::new(0.0, 0.0),
            Vertex::new(1.0, 0.0),
            Vertex::new(0.0, 1.0),
        ]
    }

    #[test]
    fn bisect_right_isosceles_gives_half_area_right_isosceles() {
        let mut v = reference();
        // refinement edge = hypotenuse (1)-(2), newest vertex = right angle (0)
        let t = TaggedTriangle::new([1, 2, 0], 0);
        v.push(v[1].midpoint(&v[2]));
        let (c1, c2) = bisect(&t, 3, &v).unwrap();
        for c in [c1, c2] {
            let p = [v[c.v[0]], v[c.v[1]], v[c.v[2]]];
            let area = signed_area(&p[0], &p[1], &p[2]);
            assert!((area - 0.25).abs() < 1e-15);
            let ang = triangle_angles(&p);
            // right angle at the new vertex, refinement edge is the hypotenuse
            assert!((ang[2] - std::f64::consts::FRAC_PI_2).abs() < 1e-14);
            assert!((ang[0] - FRAC_PI_4).abs() < 1e-14);
            assert_eq!(c.generation, 1);
            assert_eq!(c.v[2], 3);
        }
    }

    #[test]
    fn bisect_equilateral_tags_edges_opposite_midpoint() {
        let mut v = vec![
            Vertex::new(0.0, 0.0),
            Vertex::new(1.0, 0.0),
            Vertex::new(0.5, 3f64.sqrt() / 2.0),
        ];
        v.push(v[0].midpoint(&v[1]));
        let t = TaggedTriangle::new([0, 1, 2], 0);
        let (c1, c2) = bisect(&t, 3, &v).unwrap();
        // Each child's refinement edge is the old outer edge it inherited.
        assert_eq!(edge_key(c1.v[0], c1.v[1]), (0, 2));
        assert_eq!(edge_key(c2.v[0], c2.v[1]), (1, 2));
        let a1 = signed_area(&v[c1.v[0]], &v[c1.v[1]], &v[c1.v[2]]);
        let a2 = signed_area(&v[c2.v[0]], &v[c2.v[1]], &v[c2.v[2]]);
        let a = signed_area(&v[0], &v[1], &v[2]);
        assert!(a1 > 0.0 && a2 > 0.0);
        assert!((a1 + a2 - a).abs() < 1e-15);
    }

    #[test]
    fn bisect_rejects_degenerate() {
        let mut v = vec![
            Vertex::new(0.0, 0.0),
            Vertex::new(1.0, 0.0),
            Vertex::new(2.0, 0.0),
        ];
        v.push(v[0].midpoint(&v[1]));
        let t = TaggedTriangle::new([0, 1, 2], 0);
        assert!(matches!(bisect(&t, 3, &v), Err(Error::DegenerateTriangle(_))));
    }

    #[test]
    fn longest_edge_tagging_and_orientation() {
        // clockwise input, longest edge (1, 2)
        let v = reference();
        let f = Forest::new(v, &[[0, 2, 1]], false, None).unwrap();
        let t = f.triangle(0);
        assert_eq!(edge_key(t.v[0], t.v[1]), (1, 2));
        assert!(f.area(0) > 0.0);
        assert_eq!(f.boundary.len(), 3);
    }

    #[test]
    fn refine_empty_marking_is_identity() {
        let mut f = domains::unit_square();
        let t0 = f.initial();
        assert_eq!(f.refine(&t0, &[]).unwrap(), t0);
    }

    #[test]
    fn refine_one_triangle_of_criss_square_completes_neighbor() {
        let mut f = domains::unit_square();
        let t0 = f.initial();
        let t1 = f.refine(&t0, &[0]).unwrap();
        assert_eq!(t1.len(), 4);
        assert!(f.is_conforming(&t1));
        assert!(!t1.contains(0) && !t1.contains(1));
    }

    #[test]
    fn refine_rejects_non_leaf() {
        let mut f = domains::unit_square();
        let t0 = f.initial();
        let t1 = f.uniform_refine(&t0).unwrap();
        assert!(matches!(f.refine(&t1, &[0]), Err(Error::NotALeaf(0))));
    }

    #[test]
    fn overlay_rejects_foreign_forest() {
        let f = domains::unit_square();
        let g = domains::unit_square();
        assert!(matches!(
            f.overlay(&f.initial(), &g.initial()),
            Err(Error::ForestMismatch)
        ));
    }

    #[test]
    fn overlay_identities() {
        let mut f = domains::l_shape();
        let t0 = f.initial();
        let t1 = f.refine(&t0, &[0, 3]).unwrap();
        let t2 = f.refine(&t1, &[t1.leaves()[2]]).unwrap();
        assert_eq!(f.overlay(&t2, &t2).unwrap(), t2);
        assert_eq!(f.overlay(&t2, &t0).unwrap(), t2);
        assert_eq!(f.overlay(&t1, &t2).unwrap(), t2);
    }

    #[test]
    fn overlay_of_disjoint_refinements() {
        // 4-element T0: unit square split by both diagonals.
        let v = vec![
            Vertex::new(0.0, 0.0),
            Vertex::new(1.0, 0.0),
            Vertex::new(1.0, 1.0),
            Vertex::new(0.0, 1.0),
            Vertex::new(0.5, 0.5),
        ];
        let tris = [[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]];
        let mut f = Forest::new(v, &tris, false, None).unwrap();
        let t0 = f.initial();
        assert!(f.is_conforming(&t0));
        // longest edges are the outer square sides: bisection needs no completion
        let ta = f.refine(&t0, &[0]).unwrap();
        let tb = f.refine(&t0, &[2]).unwrap();
        assert_eq!((ta.len(), tb.len()), (5, 5));
        let o = f.overlay(&ta, &tb).unwrap();
        // union of forests: both roots bisected, others untouched
        assert_eq!(o.len(), 6);
        assert!(f.is_conforming(&o));
        assert!(o.len() + t0.len() <= ta.len() + tb.len());
        assert!(f.is_refinement(&ta, &o) && f.is_refinement(&tb, &o));
    }

    #[test]
    fn min_angle_criss_hierarchy_stays_quarter_pi() {
        let mut f = domains::unit_square();
        let mut t = f.initial();
        assert!((f.min_angle(&t) - FRAC_PI_4).abs() < 1e-14);
        for level in 0..5 {
            let marked: Vec<_> = t
                .leaves()
                .iter()
                .copied()
                .enumerate()
                .filter(|(i, _)| (i + level) % 3 == 0)
                .map(|(_, k)| k)
                .collect();
            t = f.refine(&t, &marked).unwrap();
            assert!((f.min_angle(&t) - FRAC_PI_4).abs() < 1e-14);
            assert!(f.is_conforming(&t));
        }
    }

    #[test]
    fn complete_resolves_non_conforming_partition() {
        let mut f = domains::unit_square();
        let t0 = f.initial();
        let [c1, _c2] = f.ensure_children(0).unwrap();
        let [g1, g2] = f.ensure_children(c1).unwrap();
        let partition = f.partition(vec![1, _c2, g1, g2]);
        assert!(!f.is_conforming(&partition));
        let t = f.complete(&partition).unwrap();
        assert!(f.is_conforming(&t));
        assert!(f.is_refinement(&partition, &t));
        assert!(f.is_refinement(&t0, &t));
    }
}
