//! Bulk (Dörfler) marking and thresholding data approximation.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::mesh::{Forest, NodeId, Triangulation, Vertex};
use crate::quadrature::{integrate_with_square, mu2_element, triangle_area, QuadratureRule, ScalarField};

/// Squared local indicators over the elements of one triangulation (indexed
/// by element position) with their cached sum.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorField {
    values: Vec<f64>,
    total: f64,
}

impl IndicatorField {
    /// Panics on negative or non-finite entries.
    pub fn new(values: Vec<f64>) -> Self {
        assert!(
            values.iter().all(|v| v.is_finite() && *v >= 0.0),
            "indicators must be finite and nonnegative"
        );
        let total = values.iter().sum();
        Self { values, total }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            total: 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum_over(&self, elements: &[usize]) -> f64 {
        elements.iter().map(|&i| self.values[i]).sum()
    }

    /// Element-wise sum, e.g. `sigma^2 = eta^2 + mu^2`.
    pub fn plus(&self, other: &IndicatorField) -> IndicatorField {
        assert_eq!(self.len(), other.len());
        IndicatorField::new(self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect())
    }
}

/// Smallest set `M` (by element index, ascending) with
/// `theta * total <= sum_{K in M} values[K]`.
///
/// Greedy largest-first selection is exactly minimal; ties are broken by
/// ascending element index.
pub fn doerfler_select(theta: f64, indicators: &IndicatorField) -> Result<Vec<usize>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidTheta(theta));
    }
    let values = indicators.values();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    // Sum in the same (descending) order on both sides of the comparison.
    let total: f64 = order.iter().map(|&i| values[i]).sum();
    let goal = theta * total;
    let mut acc = 0.0;
    let mut count = 0;
    while count < order.len() && acc < goal {
        acc += values[order[count]];
        count += 1;
    }
    let mut marked = order[..count].to_vec();
    marked.sort_unstable();
    Ok(marked)
}

/// Modified error of both children of a bisected element:
/// `t_K (e_K1 + e_K2) / (e_K + t_K)`, and `(0, 0)` when `e_K + t_K = 0`.
pub fn tilde_mu_children(mu_k: f64, tmu_k: f64, mu_k1: f64, mu_k2: f64) -> (f64, f64) {
    let denom = mu_k + tmu_k;
    if denom == 0.0 {
        return (0.0, 0.0);
    }
    let t = tmu_k * (mu_k1 + mu_k2) / denom;
    (t, t)
}

/// Squared local error of an element, the quantity driven below a tolerance
/// by [`ApproxState`].
pub trait ElementFunctional: Send + Sync {
    fn value(&self, tri: &[Vertex; 3]) -> f64;
}

/// `mu^2(K) = ||f - f_K||^2_{L2(K)}`.
#[derive(Clone, Debug)]
pub struct Oscillation {
    pub field: ScalarField,
    pub rule: QuadratureRule,
}

impl ElementFunctional for Oscillation {
    fn value(&self, tri: &[Vertex; 3]) -> f64 {
        mu2_element(&self.field, tri, &self.rule)
    }
}

/// `|K|^2 ||f||^2_{L2(K)}`, the mesh-size weighted data term.
#[derive(Clone, Debug)]
pub struct WeightedData {
    pub field: ScalarField,
    pub rule: QuadratureRule,
}

impl ElementFunctional for WeightedData {
    fn value(&self, tri: &[Vertex; 3]) -> f64 {
        let area = triangle_area(tri);
        area * area * integrate_with_square(&self.field, tri, &self.rule).1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct HeapEntry {
    tilde: f64,
    node: NodeId,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.tilde
            .total_cmp(&other.tilde)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug)]
pub struct ApproxOutcome {
    /// Conforming completion of the partition.
    pub mesh: Triangulation,
    /// Size of the (generally non-conforming) partition before completion.
    pub partition_size: usize,
    /// Functional summed over `mesh`.
    pub error: f64,
}

/// Resumable thresholding data approximation on the modified error
/// functional. The partition and the modified errors persist between calls
/// so that successively smaller tolerances continue where the last call
/// stopped.
pub struct ApproxState {
    functional: Box<dyn ElementFunctional>,
    forest_id: u64,
    leaves: HashSet<NodeId>,
    error: HashMap<NodeId, f64>,
    tilde: HashMap<NodeId, f64>,
    heap: BinaryHeap<HeapEntry>,
    total: f64,
    cap: usize,
}

impl ApproxState {
    /// Starts from the roots of `forest`; `cap` bounds the partition size.
    pub fn new(forest: &Forest, functional: Box<dyn ElementFunctional>, cap: usize) -> Self {
        let mut s = Self {
            functional,
            forest_id: forest.id(),
            leaves: HashSet::new(),
            error: HashMap::new(),
            tilde: HashMap::new(),
            heap: BinaryHeap::new(),
            total: 0.0,
            cap,
        };
        for k in 0..forest.num_roots() {
            let e = s.functional.value(&forest.coords(k));
            s.error.insert(k, e);
            s.tilde.insert(k, e);
            s.leaves.insert(k);
            s.heap.push(HeapEntry { tilde: e, node: k });
            s.total += e;
        }
        s
    }

    pub fn partition(&self, forest: &Forest) -> Triangulation {
        forest.partition(self.leaves.iter().copied().collect())
    }

    pub fn partition_error(&self) -> f64 {
        self.leaves.iter().map(|k| self.error[k]).sum()
    }

    pub fn error_of(&self, node: NodeId) -> Option<f64> {
        self.error.get(&node).copied()
    }

    pub fn tilde_of(&self, node: NodeId) -> Option<f64> {
        self.tilde.get(&node).copied()
    }

    /// Functional summed over the leaves of `t`.
    pub fn error_on(&self, forest: &Forest, t: &Triangulation) -> f64 {
        t.leaves()
            .iter()
            .map(|&k| match self.error.get(&k) {
                Some(&e) => e,
                None => self.functional.value(&forest.coords(k)),
            })
            .sum()
    }

    /// Refines the stored partition until its error is at most `tol`, then
    /// returns the conforming completion.
    pub fn approx(&mut self, forest: &mut Forest, tol: f64) -> Result<ApproxOutcome> {
        if !(tol > 0.0) || !tol.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "approximation tolerance must be positive, got {tol}"
            )));
        }
        if forest.id() != self.forest_id {
            return Err(Error::ForestMismatch);
        }
        let mut target = tol;
        loop {
            self.refine_until(forest, target)?;
            let partition = self.partition(forest);
            let mesh = forest.complete(&partition)?;
            let error = self.error_on(forest, &mesh);
            // Completion can only lower the error when the functional is
            // sub-additive; quadrature noise may break that slightly.
            if error <= tol {
                return Ok(ApproxOutcome {
                    mesh,
                    partition_size: partition.len(),
                    error,
                });
            }
            log::debug!("completed partition error {error:e} above {tol:e}; tightening");
            target *= 0.5;
        }
    }

    fn refine_until(&mut self, forest: &mut Forest, tol: f64) -> Result<()> {
        loop {
            if self.total <= tol {
                self.total = self.partition_error();
                if self.total <= tol {
                    return Ok(());
                }
            }
            if self.leaves.len() >= self.cap {
                return Err(Error::ApproxCapExceeded {
                    cap: self.cap,
                    mu2: self.total,
                    tol,
                });
            }
            let Some(top) = self.heap.pop() else {
                return Ok(());
            };
            let mut selected = vec![top.node];
            while self.heap.peek().is_some_and(|e| e.tilde == top.tilde) {
                selected.push(self.heap.pop().unwrap().node);
            }
            if top.tilde <= 0.0 {
                // Modified errors vanished while the error did not: fall back
                // to the elements carrying error.
                selected.retain(|k| self.error[k] > 0.0);
                if selected.is_empty() {
                    self.total = self.partition_error();
                    if self.total > tol {
                        return Err(Error::ApproxCapExceeded {
                            cap: self.leaves.len(),
                            mu2: self.total,
                            tol,
                        });
                    }
                    return Ok(());
                }
            }
            for k in selected {
                self.bisect(forest, k)?;
            }
        }
    }

    fn bisect(&mut self, forest: &mut Forest, k: NodeId) -> Result<()> {
        let [c1, c2] = forest.ensure_children(k)?;
        let e = self.error[&k];
        let t = self.tilde[&k];
        let e1 = self.functional.value(&forest.coords(c1));
        let e2 = self.functional.value(&forest.coords(c2));
        let (t1, t2) = tilde_mu_children(e, t, e1, e2);
        self.leaves.remove(&k);
        for (c, ec, tc) in [(c1, e1, t1), (c2, e2, t2)] {
            self.leaves.insert(c);
            self.error.insert(c, ec);
            self.tilde.insert(c, tc);
            self.heap.push(HeapEntry { tilde: tc, node: c });
        }
        self.total += e1 + e2 - e;
        Ok(())
    }
}

/// Net number of new elements `|T_to| - |T_from|`, the observable stand-in
/// for the total number of marked elements between two nested meshes.
pub fn cumulative_marks(forest: &Forest, from: &Triangulation, to: &Triangulation) -> Result<usize> {
    if !forest.is_refinement(from, to) {
        return Err(Error::NotNested);
    }
    Ok(to.len() - from.len())
}
