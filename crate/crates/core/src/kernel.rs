//! Finite-state Markov kernels: validation, cached powers, stationary laws,
//! and ergodicity classification.
//!
//! A [`Kernel`] is a row-stochastic matrix: row `x` is the distribution of the
//! next state given the current state `x`. Validation is strict — rows that
//! miss the simplex by more than `ROW_SUM_TOL` are rejected, never
//! renormalized, because silent fixes would corrupt the exactness guarantees
//! of everything downstream.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{gcd_u64, solve_linear, SquareMatrix};

/// Maximum tolerated deviation of a row sum from 1.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// State-space size above which the stationary solver switches from a direct
/// linear solve to power iteration.
pub const DIRECT_SOLVE_LIMIT: usize = 512;

/// Iteration budget for the power-iteration fallback.
pub const POWER_ITERATION_BUDGET: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("transition matrix must be square and non-empty: row {row} has length {len}, expected {size}")]
    NotSquare { size: usize, row: usize, len: usize },
    #[error("negative entry at ({x},{y}): {value}")]
    NegativeEntry { x: usize, y: usize, value: f64 },
    #[error(
        "row {x} sums to 1{deviation:+e}, beyond the {tol:e} tolerance; refusing to renormalize"
    )]
    RowSumDeviation { x: usize, deviation: f64, tol: f64 },
    #[error("stationary law did not converge within {iterations} iterations")]
    NoConvergence { iterations: u64 },
    #[error("stationary law has empty support")]
    EmptySupport,
    #[error("stationary law length {got} does not match kernel size {expected}")]
    LawSizeMismatch { got: usize, expected: usize },
}

/// Row-stochastic transition matrix over states `0..size`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Kernel {
    size: usize,
    rows: Vec<Vec<f64>>,
}

impl Kernel {
    /// Validates and wraps a transition matrix. No silent renormalization:
    /// negative entries and row-sum deviations beyond [`ROW_SUM_TOL`] are errors.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, KernelError> {
        let size = rows.len();
        if size == 0 {
            return Err(KernelError::NotSquare {
                size: 0,
                row: 0,
                len: 0,
            });
        }
        for (x, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(KernelError::NotSquare {
                    size,
                    row: x,
                    len: row.len(),
                });
            }
            for (y, &p) in row.iter().enumerate() {
                if p.is_nan() || p < 0.0 {
                    return Err(KernelError::NegativeEntry { x, y, value: p });
                }
            }
            let sum: f64 = crate::linalg::compensated_sum(row.iter().copied());
            let deviation = sum - 1.0;
            if deviation.abs() > ROW_SUM_TOL {
                return Err(KernelError::RowSumDeviation {
                    x,
                    deviation,
                    tol: ROW_SUM_TOL,
                });
            }
        }
        Ok(Self { size, rows })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.rows[x][y]
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn to_matrix(&self) -> SquareMatrix {
        SquareMatrix::from_rows(&self.rows)
    }

    /// One application of the operator: `out[x] = sum_y P(x,y) v[y]`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.size);
        assert_eq!(out.len(), self.size);
        for (x, row) in self.rows.iter().enumerate() {
            out[x] = crate::linalg::dot(row, v);
        }
    }

    /// Power cache bound to a copy of this kernel.
    pub fn powers(&self) -> PowerCache {
        PowerCache::new(self.clone())
    }

    /// Time reversal `P*(y,x) = pi(x) P(x,y) / pi(y)` on the support of `pi`;
    /// off-support states get a self-loop so the result stays stochastic.
    pub fn reversed(&self, pi: &StationaryLaw) -> Result<Kernel, KernelError> {
        if pi.len() != self.size {
            return Err(KernelError::LawSizeMismatch {
                got: pi.len(),
                expected: self.size,
            });
        }
        let mut rows = vec![vec![0.0; self.size]; self.size];
        for y in 0..self.size {
            if pi.prob(y) > 0.0 {
                for x in 0..self.size {
                    rows[y][x] = pi.prob(x) * self.prob(x, y) / pi.prob(y);
                }
                // Exact complement on the largest entry keeps the row inside
                // the validation tolerance.
                let sum: f64 = crate::linalg::compensated_sum(rows[y].iter().copied());
                let (arg, _) = rows[y]
                    .iter()
                    .enumerate()
                    .fold(
                        (0, -1.0),
                        |(bi, bv), (i, &v)| {
                            if v > bv {
                                (i, v)
                            } else {
                                (bi, bv)
                            }
                        },
                    );
                rows[y][arg] += 1.0 - sum;
            } else {
                rows[y][y] = 1.0;
            }
        }
        Kernel::new(rows)
    }
}

impl<'de> Deserialize<'de> for Kernel {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            size: usize,
            rows: Vec<Vec<f64>>,
        }
        let raw = Raw::deserialize(deserializer)?;
        if raw.rows.len() != raw.size {
            return Err(serde::de::Error::custom(format!(
                "size field is {} but {} rows were given",
                raw.size,
                raw.rows.len()
            )));
        }
        Kernel::new(raw.rows).map_err(serde::de::Error::custom)
    }
}

/// Probability vector fixed by the kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationaryLaw {
    probs: Vec<f64>,
}

impl StationaryLaw {
    pub fn from_probs(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    #[inline]
    pub fn prob(&self, x: usize) -> f64 {
        self.probs[x]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&x| self.prob(x) > 0.0).collect()
    }

    /// `|pi P - pi|` in L1.
    pub fn residual(&self, kernel: &Kernel) -> f64 {
        let mut image = vec![0.0; self.len()];
        for (x, row) in kernel.rows().iter().enumerate() {
            let w = self.prob(x);
            if w == 0.0 {
                continue;
            }
            for (y, &p) in row.iter().enumerate() {
                image[y] += w * p;
            }
        }
        image
            .iter()
            .zip(&self.probs)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Outcome of the stationary solver.
#[derive(Debug, Clone, Serialize)]
pub struct StationarySolution {
    pub law: StationaryLaw,
    /// True when the chain has more than one recurrent class, so the returned
    /// law is the documented equal-weight tie-break, not the unique fixed point.
    pub non_unique: bool,
    pub recurrent_classes: usize,
}

/// Stationary law of `kernel`.
///
/// Recurrent classes are found structurally, each class is solved on its own
/// (direct solve up to [`DIRECT_SOLVE_LIMIT`] states, power iteration on the
/// lazy kernel beyond), and multiple classes are combined with equal weights.
pub fn stationary_law(kernel: &Kernel, tol: f64) -> Result<StationarySolution, KernelError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let classes = structural_recurrent_classes(kernel);
    let mut probs = vec![0.0; kernel.size()];
    let weight = 1.0 / classes.len() as f64;
    for class in &classes {
        let local = class_stationary_law(kernel, class, tol)?;
        for (i, &state) in class.iter().enumerate() {
            probs[state] = weight * local[i];
        }
    }
    let law = StationaryLaw::from_probs(probs);
    let residual = law.residual(kernel);
    if residual > tol {
        return Err(KernelError::NoConvergence {
            iterations: POWER_ITERATION_BUDGET,
        });
    }
    Ok(StationarySolution {
        law,
        non_unique: classes.len() > 1,
        recurrent_classes: classes.len(),
    })
}

fn class_stationary_law(
    kernel: &Kernel,
    class: &[usize],
    tol: f64,
) -> Result<Vec<f64>, KernelError> {
    let m = class.len();
    if m == 1 {
        return Ok(vec![1.0]);
    }
    let index: HashMap<usize, usize> = class.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    // Restriction of the kernel to a closed class is row-stochastic.
    let mut restricted = SquareMatrix::zeros(m);
    for (i, &s) in class.iter().enumerate() {
        for (t, &p) in kernel.row(s).iter().enumerate() {
            if p > 0.0 {
                if let Some(&j) = index.get(&t) {
                    restricted.set(i, j, p);
                }
            }
        }
    }

    if m <= DIRECT_SOLVE_LIMIT {
        // Solve (P^T - I) x = 0 with the last equation replaced by sum(x) = 1.
        let mut a = SquareMatrix::zeros(m);
        for i in 0..m {
            for j in 0..m {
                a.set(i, j, restricted.get(j, i) - if i == j { 1.0 } else { 0.0 });
            }
        }
        for j in 0..m {
            a.set(m - 1, j, 1.0);
        }
        let mut b = vec![0.0; m];
        b[m - 1] = 1.0;
        if let Some(x) = solve_linear(&a, &b) {
            if x.iter().all(|&v| v >= -1e-12) {
                let clamped: Vec<f64> = x.iter().map(|&v| v.max(0.0)).collect();
                let total: f64 = crate::linalg::compensated_sum(clamped.iter().copied());
                return Ok(clamped.into_iter().map(|v| v / total).collect());
            }
        }
        // Degenerate elimination; fall through to iteration.
    }

    // Power iteration on the lazy kernel (P + I)/2; same fixed point,
    // aperiodic, so it converges for periodic classes too.
    let mut x = vec![1.0 / m as f64; m];
    let mut next = vec![0.0; m];
    let step_tol = (tol * 1e-2).max(1e-15);
    for _ in 0..POWER_ITERATION_BUDGET {
        restricted.vec_mul_into(&x, &mut next);
        let mut change = 0.0;
        for i in 0..m {
            let lazy = 0.5 * (next[i] + x[i]);
            change += (lazy - x[i]).abs();
            next[i] = lazy;
        }
        std::mem::swap(&mut x, &mut next);
        if change <= step_tol {
            let total: f64 = crate::linalg::compensated_sum(x.iter().copied());
            return Ok(x.into_iter().map(|v| v / total).collect());
        }
    }
    Err(KernelError::NoConvergence {
        iterations: POWER_ITERATION_BUDGET,
    })
}

/// Strongly connected components with no outgoing edges, i.e. the recurrent
/// classes of the finite chain, each sorted, ordered by smallest state.
pub fn structural_recurrent_classes(kernel: &Kernel) -> Vec<Vec<usize>> {
    let n = kernel.size();
    let edges: Vec<Vec<usize>> = (0..n)
        .map(|x| {
            (0..n)
                .filter(|&y| kernel.prob(x, y) > 0.0)
                .collect::<Vec<_>>()
        })
        .collect();
    let sccs = strongly_connected_components(n, &edges);
    let mut comp_of = vec![0usize; n];
    for (c, scc) in sccs.iter().enumerate() {
        for &s in scc {
            comp_of[s] = c;
        }
    }
    let mut closed: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, scc)| {
            scc.iter()
                .all(|&s| edges[s].iter().all(|&t| comp_of[t] == *c))
        })
        .map(|(_, scc)| {
            let mut v = scc.clone();
            v.sort_unstable();
            v
        })
        .collect();
    closed.sort_by_key(|c| c[0]);
    closed
}

/// Iterative Tarjan SCC.
fn strongly_connected_components(n: usize, edges: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0usize;
    let mut result: Vec<Vec<usize>> = Vec::new();
    // (node, edge cursor)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for start in 0..n {
        if index[start] != usize::MAX {
            continue;
        }
        call.push((start, 0));
        index[start] = next_index;
        low[start] = next_index;
        next_index += 1;
        stack.push(start);
        on_stack[start] = true;

        while let Some(&mut (v, ref mut cursor)) = call.last_mut() {
            if *cursor < edges[v].len() {
                let w = edges[v][*cursor];
                *cursor += 1;
                if index[w] == usize::MAX {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    result.push(comp);
                }
            }
        }
    }
    result
}

/// Classification of the chain on the support of its stationary law.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErgodicityReport {
    pub support: Vec<usize>,
    pub irreducible: bool,
    pub period: u64,
    pub totally_ergodic: bool,
}

/// Irreducibility, period, and total ergodicity of the chain restricted to
/// the support of `pi`. For a finite chain, every power of the shift is
/// ergodic exactly when the support is irreducible and aperiodic.
pub fn ergodicity_report(
    kernel: &Kernel,
    pi: &StationaryLaw,
) -> Result<ErgodicityReport, KernelError> {
    if pi.len() != kernel.size() {
        return Err(KernelError::LawSizeMismatch {
            got: pi.len(),
            expected: kernel.size(),
        });
    }
    if pi.probs().iter().any(|p| !p.is_finite()) {
        return Err(KernelError::EmptySupport);
    }
    let support = pi.support();
    if support.is_empty() {
        return Err(KernelError::EmptySupport);
    }
    let pos = {
        let mut pos = vec![usize::MAX; kernel.size()];
        for (i, &s) in support.iter().enumerate() {
            pos[s] = i;
        }
        pos
    };
    let edges: Vec<Vec<usize>> = support
        .iter()
        .map(|&x| {
            kernel
                .row(x)
                .iter()
                .enumerate()
                .filter(|&(y, &p)| p > 0.0 && pos[y] != usize::MAX)
                .map(|(y, _)| pos[y])
                .collect()
        })
        .collect();

    let sccs = strongly_connected_components(support.len(), &edges);
    let irreducible = sccs.len() == 1;
    // gcd of class periods divides every cycle length of the support graph.
    let mut period = 0u64;
    for scc in &sccs {
        if let Some(p) = class_period(scc, &edges) {
            period = gcd_u64(period, p);
        }
    }
    let period = period.max(1);
    Ok(ErgodicityReport {
        support,
        irreducible,
        period,
        totally_ergodic: irreducible && period == 1,
    })
}

/// gcd of cycle lengths through the class, via BFS level differences.
fn class_period(scc: &[usize], edges: &[Vec<usize>]) -> Option<u64> {
    let in_scc: std::collections::HashSet<usize> = scc.iter().copied().collect();
    let root = scc[0];
    let mut level: HashMap<usize, i64> = HashMap::new();
    level.insert(root, 0);
    let mut queue = VecDeque::new();
    queue.push_back(root);
    let mut g: u64 = 0;
    while let Some(v) = queue.pop_front() {
        let lv = level[&v];
        for &w in &edges[v] {
            if !in_scc.contains(&w) {
                continue;
            }
            match level.get(&w) {
                None => {
                    level.insert(w, lv + 1);
                    queue.push_back(w);
                }
                Some(&lw) => {
                    g = gcd_u64(g, (lv + 1 - lw).unsigned_abs());
                }
            }
        }
    }
    if g == 0 {
        // No closing edge: the class carries no cycle.
        return None;
    }
    Some(g)
}

/// Memoized kernel powers, computed by iterative squaring.
///
/// The cache is a byte-bounded LRU keyed by exponent and is safe for
/// concurrent lookups; bridge and mixing sweeps request many powers of the
/// same kernel.
pub struct PowerCache {
    kernel: Kernel,
    base: Arc<SquareMatrix>,
    identity: Arc<SquareMatrix>,
    inner: Mutex<LruState>,
    max_entries: usize,
}

struct LruState {
    map: HashMap<u64, Arc<SquareMatrix>>,
    order: VecDeque<u64>,
}

impl PowerCache {
    pub fn new(kernel: Kernel) -> Self {
        let base = Arc::new(kernel.to_matrix());
        let identity = Arc::new(SquareMatrix::identity(kernel.size()));
        let entry_bytes = base.approx_bytes().max(1);
        // About 256 MB of cached powers, at least 8 entries.
        let max_entries = ((256usize << 20) / entry_bytes).clamp(8, 256);
        Self {
            kernel,
            base,
            identity,
            inner: Mutex::new(LruState {
                map: HashMap::new(),
                order: VecDeque::new(),
            }),
            max_entries,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn size(&self) -> usize {
        self.kernel.size()
    }

    /// `P^k`; `P^0` is the identity.
    pub fn power(&self, k: u64) -> Arc<SquareMatrix> {
        match k {
            0 => Arc::clone(&self.identity),
            1 => Arc::clone(&self.base),
            _ => {
                if let Some(hit) = self.lookup(k) {
                    return hit;
                }
                let result = if k.is_multiple_of(2) {
                    let half = self.power(k / 2);
                    Arc::new(half.mul(&half))
                } else {
                    let even = self.power(k - 1);
                    Arc::new(even.mul(&self.base))
                };
                self.insert(k, Arc::clone(&result));
                result
            }
        }
    }

    fn lookup(&self, k: u64) -> Option<Arc<SquareMatrix>> {
        let mut state = self.inner.lock().expect("power cache poisoned");
        if let Some(hit) = state.map.get(&k).cloned() {
            if let Some(idx) = state.order.iter().position(|&e| e == k) {
                state.order.remove(idx);
            }
            state.order.push_back(k);
            Some(hit)
        } else {
            None
        }
    }

    fn insert(&self, k: u64, value: Arc<SquareMatrix>) {
        let mut state = self.inner.lock().expect("power cache poisoned");
        if state.map.insert(k, value).is_none() {
            state.order.push_back(k);
        }
        while state.order.len() > self.max_entries {
            if let Some(evict) = state.order.pop_front() {
                state.map.remove(&evict);
            }
        }
    }
}

impl std::fmt::Debug for PowerCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PowerCache")
            .field("size", &self.kernel.size())
            .field("max_entries", &self.max_entries)
            .finish()
    }
}

/// Convenience one-shot power; prefer holding a [`PowerCache`] for repeated use.
pub fn kernel_power(kernel: &Kernel, k: u64) -> SquareMatrix {
    (*kernel.powers().power(k)).clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(a: f64, b: f64) -> Kernel {
        Kernel::new(vec![vec![1.0 - a, a], vec![b, 1.0 - b]]).unwrap()
    }

    #[test]
    fn validates_one_state_identity() {
        let k = Kernel::new(vec![vec![1.0]]).unwrap();
        assert_eq!(k.size(), 1);
    }

    #[test]
    fn validates_symmetric_two_state() {
        let k = two_state(0.25, 0.25);
        assert_eq!(k.size(), 2);
        assert_eq!(k.prob(0, 1), 0.25);
    }

    #[test]
    fn rejects_row_sum_deviation() {
        let err = Kernel::new(vec![vec![0.6, 0.5], vec![0.5, 0.5]]).unwrap_err();
        match err {
            KernelError::RowSumDeviation { x, deviation, .. } => {
                assert_eq!(x, 0);
                assert!((deviation - 0.1).abs() < 1e-12);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn rejects_negative_entry() {
        let err = Kernel::new(vec![vec![1.2, -0.2], vec![0.5, 0.5]]).unwrap_err();
        match err {
            KernelError::NegativeEntry { x, y, .. } => {
                assert_eq!((x, y), (0, 1));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn rejects_non_square() {
        assert!(Kernel::new(vec![vec![1.0], vec![0.5, 0.5]]).is_err());
        assert!(Kernel::new(Vec::new()).is_err());
    }

    #[test]
    fn stationary_symmetric_two_state() {
        let k = two_state(0.25, 0.25);
        let sol = stationary_law(&k, 1e-12).unwrap();
        assert!((sol.law.prob(0) - 0.5).abs() < 1e-14);
        assert!((sol.law.prob(1) - 0.5).abs() < 1e-14);
        assert!(!sol.non_unique);
    }

    #[test]
    fn stationary_asymmetric_closed_form() {
        // p = 0.2, q = 0.3: pi = (q, p)/(p + q) = (0.6, 0.4).
        let k = two_state(0.2, 0.3);
        let sol = stationary_law(&k, 1e-12).unwrap();
        assert!((sol.law.prob(0) - 0.6).abs() < 1e-12);
        assert!((sol.law.prob(1) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn stationary_block_diagonal_equal_weight_tie_break() {
        let k = Kernel::new(vec![
            vec![0.75, 0.25, 0.0, 0.0],
            vec![0.25, 0.75, 0.0, 0.0],
            vec![0.0, 0.0, 0.75, 0.25],
            vec![0.0, 0.0, 0.25, 0.75],
        ])
        .unwrap();
        let sol = stationary_law(&k, 1e-12).unwrap();
        assert!(sol.non_unique);
        assert_eq!(sol.recurrent_classes, 2);
        for x in 0..4 {
            assert!((sol.law.prob(x) - 0.25).abs() < 1e-13);
        }
    }

    #[test]
    fn stationary_flip_flop_is_uniform() {
        let k = two_state(1.0, 1.0);
        let sol = stationary_law(&k, 1e-12).unwrap();
        assert!((sol.law.prob(0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn power_zero_is_identity() {
        let k = two_state(0.3, 0.7);
        let p0 = kernel_power(&k, 0);
        assert_eq!(p0, SquareMatrix::identity(2));
    }

    #[test]
    fn power_two_hand_value() {
        let k = two_state(0.25, 0.25);
        let p2 = kernel_power(&k, 2);
        let expected = SquareMatrix::from_rows(&[vec![0.625, 0.375], vec![0.375, 0.625]]);
        assert!(p2.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn power_two_flip_flop_is_identity() {
        let k = two_state(1.0, 1.0);
        let p2 = kernel_power(&k, 2);
        assert!(p2.max_abs_diff(&SquareMatrix::identity(2)) < 1e-15);
    }

    #[test]
    fn power_cache_agrees_with_naive_product() {
        let k = two_state(0.2, 0.45);
        let cache = k.powers();
        let mut naive = SquareMatrix::identity(2);
        for exp in 1..40u64 {
            naive = naive.mul(&k.to_matrix());
            assert!(
                cache.power(exp).max_abs_diff(&naive) < 1e-13,
                "exponent {exp}"
            );
        }
    }

    #[test]
    fn ergodicity_aperiodic_two_state() {
        let k = two_state(0.25, 0.25);
        let sol = stationary_law(&k, 1e-12).unwrap();
        let rep = ergodicity_report(&k, &sol.law).unwrap();
        assert!(rep.irreducible);
        assert_eq!(rep.period, 1);
        assert!(rep.totally_ergodic);
    }

    #[test]
    fn ergodicity_flip_flop_period_two() {
        let k = two_state(1.0, 1.0);
        let sol = stationary_law(&k, 1e-12).unwrap();
        let rep = ergodicity_report(&k, &sol.law).unwrap();
        assert!(rep.irreducible);
        assert_eq!(rep.period, 2);
        assert!(!rep.totally_ergodic);
    }

    #[test]
    fn ergodicity_block_diagonal_not_irreducible() {
        let k = Kernel::new(vec![
            vec![0.75, 0.25, 0.0, 0.0],
            vec![0.25, 0.75, 0.0, 0.0],
            vec![0.0, 0.0, 0.5, 0.5],
            vec![0.0, 0.0, 0.5, 0.5],
        ])
        .unwrap();
        let sol = stationary_law(&k, 1e-12).unwrap();
        let rep = ergodicity_report(&k, &sol.law).unwrap();
        assert!(!rep.irreducible);
        assert!(!rep.totally_ergodic);
        assert_eq!(rep.period, 1);
    }

    #[test]
    fn ergodicity_rejects_empty_support() {
        let k = two_state(0.25, 0.25);
        let degenerate = StationaryLaw::from_probs(vec![0.0, 0.0]);
        assert!(matches!(
            ergodicity_report(&k, &degenerate),
            Err(KernelError::EmptySupport)
        ));
    }

    #[test]
    fn reversed_kernel_matches_two_state_reversibility() {
        let k = two_state(0.2, 0.3);
        let sol = stationary_law(&k, 1e-12).unwrap();
        let rev = k.reversed(&sol.law).unwrap();
        // Two-state stationary chains are reversible: P* = P.
        for x in 0..2 {
            for y in 0..2 {
                assert!((rev.prob(x, y) - k.prob(x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_json_round_trip() {
        let k = two_state(0.25, 0.25);
        let json = serde_json::to_string(&k).unwrap();
        assert!(json.contains("\"size\":2"));
        let back: Kernel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, k);
    }

    #[test]
    fn kernel_json_rejects_bad_input() {
        let bad = r#"{"size":2,"rows":[[0.6,0.5],[0.5,0.5]]}"#;
        assert!(serde_json::from_str::<Kernel>(bad).is_err());
        let unknown = r#"{"size":1,"rows":[[1.0]],"extra":1}"#;
        assert!(serde_json::from_str::<Kernel>(unknown).is_err());
    }
}
