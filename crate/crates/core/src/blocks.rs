//! Block sums, martingale differences, and the remainder decomposition
//! `S_u(m) = M_u(m) + R_u(m)`.
//!
//! Blocks of length `m` are centered by the bridge table at horizon `m`:
//! `D_k = (Y_k - B_m(xi_{km}, xi_{(k+1)m})) / sqrt(m)` and
//! `Z_k = B_m(...) / sqrt(m)`. The per-block identity
//! `sqrt(m) (D_k + Z_k) = Y_k` holds exactly on every path. Exact second
//! moments and orthogonality run under hard budgets and refuse loudly rather
//! than degrade.

use serde::Serialize;
use thiserror::Error;

use crate::bridge::{bridge_sum_table, centered_sigma, BridgeError, BridgeScan, BridgeTable};
use crate::linalg::{dot, Accumulator};
use crate::moments::{partial_sum_variance, Model};
use crate::montecarlo::{parallel_map_replications, McError, PathSampler, SeedSpec, Z_99};

/// Exact second-moment budgets.
pub const EXACT_MAX_STATES: usize = 64;
pub const EXACT_MAX_HORIZON: u64 = 1 << 12;

/// Path-enumeration budgets.
pub const ENUM_MAX_STATES: usize = 4;
pub const ENUM_MAX_HORIZON: u64 = 10;

/// Residual bound for the variance decomposition identity.
pub const IDENTITY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum BlocksError {
    #[error("path of length {n} is too short for blocks of length {m}: need n >= 2m")]
    BlockTooLong { n: u64, m: u64 },
    #[error("observed endpoint pair ({x},{y}) is masked at horizon {m}; path/model mismatch")]
    UnreachablePair { x: usize, y: usize, m: u64 },
    #[error(
        "exact mode budget exceeded ({states} states, horizon {horizon}); \
         limits are {max_states} states and horizon {max_horizon}. \
         Use the Monte Carlo estimate instead"
    )]
    ExactModeBudgetExceeded {
        states: usize,
        horizon: u64,
        max_states: usize,
        max_horizon: u64,
    },
    #[error("variance decomposition identity violated: residual {residual:e}; implementation bug")]
    IdentityViolated { residual: f64 },
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    MonteCarlo(#[from] McError),
}

/// Per-block view of one path.
#[derive(Debug, Clone, Serialize)]
pub struct BlockDecomposition {
    pub m: u64,
    pub u: u64,
    /// Block sums `Y_k`.
    pub y: Vec<f64>,
    /// Martingale differences `D_k`.
    pub d: Vec<f64>,
    /// Endpoint-measurable parts `Z_k`.
    pub z: Vec<f64>,
    /// `M_u = sum D_k`.
    pub martingale_sum: f64,
    /// `R_u = sum Z_k`.
    pub remainder_sum: f64,
    /// Trailing partial block `Y_u` (excluded from the aggregates).
    pub tail: f64,
}

impl BlockDecomposition {
    /// CSV: one row per full block.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "k,y,d,z")?;
        for k in 0..self.y.len() {
            writeln!(
                out,
                "{k},{},{},{}",
                crate::fmt_f64(self.y[k]),
                crate::fmt_f64(self.d[k]),
                crate::fmt_f64(self.z[k])
            )?;
        }
        Ok(())
    }
}

/// Decomposes a sampled path into blocks of length `m`, using a prebuilt
/// bridge table at horizon `m`.
pub fn block_decompose_with_table(
    model: &Model,
    table: &BridgeTable,
    path: &[usize],
    m: u64,
) -> Result<BlockDecomposition, BlocksError> {
    assert_eq!(table.n(), m, "bridge table horizon must equal block length");
    let n = (path.len() - 1) as u64;
    if n < 2 * m || m == 0 {
        return Err(BlocksError::BlockTooLong { n, m });
    }
    let u = n / m;
    let f = model.observable();
    let sqrt_m = (m as f64).sqrt();
    let mut y = Vec::with_capacity(u as usize);
    let mut d = Vec::with_capacity(u as usize);
    let mut z = Vec::with_capacity(u as usize);
    let mut m_acc = Accumulator::new();
    let mut r_acc = Accumulator::new();
    for k in 0..u {
        let start = (k * m) as usize;
        let end = ((k + 1) * m) as usize;
        let mut block = Accumulator::new();
        for i in start + 1..=end {
            block.add(f[path[i]]);
        }
        let yk = block.total();
        let b = table
            .value(path[start], path[end])
            .ok_or(BlocksError::UnreachablePair {
                x: path[start],
                y: path[end],
                m,
            })?;
        let dk = (yk - b) / sqrt_m;
        let zk = b / sqrt_m;
        m_acc.add(dk);
        r_acc.add(zk);
        y.push(yk);
        d.push(dk);
        z.push(zk);
    }
    let mut tail = Accumulator::new();
    for i in (u * m) as usize + 1..path.len() {
        tail.add(f[path[i]]);
    }
    Ok(BlockDecomposition {
        m,
        u,
        y,
        d,
        z,
        martingale_sum: m_acc.total(),
        remainder_sum: r_acc.total(),
        tail: tail.total(),
    })
}

/// Convenience wrapper building the bridge table itself.
pub fn block_decompose(
    model: &Model,
    path: &[usize],
    m: u64,
) -> Result<BlockDecomposition, BlocksError> {
    let table = bridge_sum_table(model, m);
    block_decompose_with_table(model, &table, path, m)
}

fn check_exact_budget(states: usize, horizon: u64) -> Result<(), BlocksError> {
    if states > EXACT_MAX_STATES || horizon > EXACT_MAX_HORIZON {
        return Err(BlocksError::ExactModeBudgetExceeded {
            states,
            horizon,
            max_states: EXACT_MAX_STATES,
            max_horizon: EXACT_MAX_HORIZON,
        });
    }
    Ok(())
}

/// Exact `E(R_u(m)^2)` from the joint laws of block-endpoint quadruples.
///
/// With `G_m(a,b) = P^m(a,b) B_m(a,b)`, the stationary cross moments reduce to
/// `zeta(delta) = (1/m) front P^{(delta-1)m} back` where
/// `front(b) = sum_a pi(a) G_m(a,b)` and `back(c) = sum_d G_m(c,d)`, and
/// `E(R_u^2) = u zeta(0) + 2 sum_{delta} (u - delta) zeta(delta)`.
pub fn remainder_second_moment(model: &Model, m: u64, u: u64) -> Result<f64, BlocksError> {
    assert!(m >= 1 && u >= 1);
    check_exact_budget(model.size(), u.saturating_mul(m))?;
    let s = model.size();
    let mut scan = BridgeScan::new(model);
    while scan.n() < m {
        scan.step();
    }
    let g = scan.g();
    let pm = scan.pn();
    let pi = model.pi();

    let mut zeta0 = Accumulator::new();
    let mut front = vec![0.0; s];
    let mut back = vec![0.0; s];
    for a in 0..s {
        let w = pi.prob(a);
        for b in 0..s {
            let gv = g.get(a, b);
            if w > 0.0 {
                front[b] += w * gv;
                let p = pm.get(a, b);
                if p > 0.0 {
                    zeta0.add(w * gv * gv / p);
                }
            }
            back[a] += gv;
        }
    }
    let inv_m = 1.0 / m as f64;
    let zeta0 = zeta0.total() * inv_m;

    let mut total = Accumulator::new();
    total.add(u as f64 * zeta0);
    if u > 1 {
        // cur = P^{(delta-1) m}, advanced by one block per delta.
        let pm_owned = model.powers().power(m);
        let mut cur = crate::linalg::SquareMatrix::identity(s);
        let mut scratch = crate::linalg::SquareMatrix::zeros(s);
        let mut w = vec![0.0; s];
        for delta in 1..u {
            cur.vec_mul_into(&front, &mut w);
            let zeta = dot(&w, &back) * inv_m;
            total.add(2.0 * (u - delta) as f64 * zeta);
            if delta + 1 < u {
                cur.mul_into(&pm_owned, &mut scratch);
                std::mem::swap(&mut cur, &mut scratch);
            }
        }
    }
    Ok(total.total())
}

/// Residual of the exact identity
/// `E(S_{um}^2)/(um) = centered_sigma(m) + E(R_u^2)/u`,
/// with the two sides computed through independent code paths.
pub fn identity_check(model: &Model, m: u64, u: u64) -> Result<f64, BlocksError> {
    check_exact_budget(model.size(), u.saturating_mul(m))?;
    let lhs = partial_sum_variance(model, u * m) / (u * m) as f64;
    let rhs = centered_sigma(model, m)? + remainder_second_moment(model, m, u)? / u as f64;
    let residual = (lhs - rhs).abs();
    if residual > IDENTITY_TOL {
        return Err(BlocksError::IdentityViolated { residual });
    }
    Ok(residual)
}

/// Outcome of the orthogonality check `E(M_u R_u) = 0`.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OrthogonalityOutcome {
    Exact {
        value: f64,
    },
    MonteCarlo {
        mean: f64,
        half_width_99: f64,
        covers_zero: bool,
    },
}

/// Exact `E(M_u R_u)` by exhaustive path enumeration (tight budget).
pub fn orthogonality_exact(model: &Model, m: u64, u: u64) -> Result<f64, BlocksError> {
    assert!(m >= 1 && u >= 2);
    let n = u * m;
    if model.size() > ENUM_MAX_STATES || n > ENUM_MAX_HORIZON {
        return Err(BlocksError::ExactModeBudgetExceeded {
            states: model.size(),
            horizon: n,
            max_states: ENUM_MAX_STATES,
            max_horizon: ENUM_MAX_HORIZON,
        });
    }
    let table = bridge_sum_table(model, m);
    let mut acc = Accumulator::new();
    let mut failure: Option<BlocksError> = None;
    enumerate_paths(model, n as usize, &mut |path, prob| {
        if failure.is_some() {
            return;
        }
        match block_decompose_with_table(model, &table, path, m) {
            Ok(dec) => acc.add(prob * dec.martingale_sum * dec.remainder_sum),
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(acc.total()),
    }
}

/// Monte Carlo `E(M_u R_u)` with a 99% normal-approximation interval;
/// failure is flagged only when zero falls outside the interval.
pub fn orthogonality_monte_carlo(
    model: &Model,
    m: u64,
    u: u64,
    reps: u64,
    seed: SeedSpec,
    workers: usize,
) -> Result<OrthogonalityOutcome, BlocksError> {
    assert!(m >= 1 && u >= 2 && reps >= 2);
    let n = u * m;
    let table = bridge_sum_table(model, m);
    let sampler = PathSampler::new(model);
    let values = parallel_map_replications(reps, workers, |r| {
        let mut stream = seed.stream(r);
        let path = sampler.sample_path(n, &mut stream);
        match block_decompose_with_table(model, &table, &path, m) {
            Ok(dec) => dec.martingale_sum * dec.remainder_sum,
            Err(_) => f64::NAN,
        }
    });
    if values.iter().any(|v| v.is_nan()) {
        return Err(BlocksError::UnreachablePair { x: 0, y: 0, m });
    }
    let mut sorted = values;
    sorted.sort_by(|a, b| a.total_cmp(b));
    let count = sorted.len() as f64;
    let mean = crate::linalg::compensated_sum(sorted.iter().copied()) / count;
    let mut var = Accumulator::new();
    for &v in &sorted {
        let d = v - mean;
        var.add(d * d);
    }
    let variance = var.total() / (count - 1.0);
    let half_width_99 = Z_99 * (variance / count).sqrt();
    Ok(OrthogonalityOutcome::MonteCarlo {
        mean,
        half_width_99,
        covers_zero: mean.abs() <= half_width_99,
    })
}

/// Exact when the enumeration budget allows, Monte Carlo otherwise.
pub fn orthogonality_check(
    model: &Model,
    m: u64,
    u: u64,
    reps: u64,
    seed: SeedSpec,
    workers: usize,
) -> Result<OrthogonalityOutcome, BlocksError> {
    if model.size() <= ENUM_MAX_STATES && u * m <= ENUM_MAX_HORIZON {
        orthogonality_exact(model, m, u).map(|value| OrthogonalityOutcome::Exact { value })
    } else {
        orthogonality_monte_carlo(model, m, u, reps, seed, workers)
    }
}

/// Visits every positive-probability path of `steps` kernel steps together
/// with its stationary probability.
pub(crate) fn enumerate_paths(model: &Model, steps: usize, visit: &mut impl FnMut(&[usize], f64)) {
    let s = model.size();
    let mut path = vec![0usize; steps + 1];
    let mut probs = vec![0.0f64; steps + 1];
    // Depth-first over prefixes, pruning zero-probability branches.
    fn descend(
        model: &Model,
        s: usize,
        depth: usize,
        steps: usize,
        path: &mut Vec<usize>,
        probs: &mut Vec<f64>,
        visit: &mut impl FnMut(&[usize], f64),
    ) {
        if depth == steps + 1 {
            visit(path, probs[steps]);
            return;
        }
        for state in 0..s {
            let p = if depth == 0 {
                model.pi().prob(state)
            } else {
                probs[depth - 1] * model.kernel().prob(path[depth - 1], state)
            };
            if p > 0.0 {
                path[depth] = state;
                probs[depth] = p;
                descend(model, s, depth + 1, steps, path, probs, visit);
            }
        }
    }
    descend(model, s, 0, steps, &mut path, &mut probs, visit);
}
