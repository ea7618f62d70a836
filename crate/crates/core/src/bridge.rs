//! Conditioning on both endpoints: exact Markov-bridge marginals, the
//! centering table `B_n(x,y) = E(S_n | xi_0 = x, xi_n = y)`, and the
//! conditional L2 norms built from it.
//!
//! Everything reduces to the unnormalized table
//! `G_n(x,y) = sum_{k=1..n} (P^k F P^{n-k})(x,y)` with `F = diag(f)`:
//! `G_n = P^n(x,y) B_n(x,y)`, and `G` obeys the one-multiply recurrence
//! `G_{n+1} = G_n P + P^{n+1} F`, which is what the profile sweeps use.
//! Pairs with `P^n(x,y) = 0` carry no probability mass; they are masked and
//! excluded from every norm.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::kernel::PowerCache;
use crate::linalg::{Accumulator, SquareMatrix};
use crate::moments::{partial_sum_variance, Model};

/// Sweeps switch to compensated accumulation above this horizon.
pub const COMPENSATED_SWEEP_THRESHOLD: u64 = 256;

/// `centered_sigma` values in `(-NEGATIVE_VARIANCE_TOL, 0)` clamp to zero;
/// anything below is reported as corruption.
pub const NEGATIVE_VARIANCE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("endpoint pair ({x},{y}) is unreachable at horizon {n}: P^n(x,y) = 0")]
    UnreachablePair { x: usize, y: usize, n: u64 },
    #[error(
        "projection identity produced negative variance {value:e}; upstream numerical corruption"
    )]
    NegativeVariance { value: f64 },
    #[error("index {k} outside horizon 0..={n}")]
    IndexOutOfRange { k: u64, n: u64 },
}

/// The centering table `B_n(x,y) = E(S_n | xi_0 = x, xi_n = y)` together with
/// its reachability mask. Masked cells hold NaN and must not be read.
#[derive(Debug, Clone)]
pub struct BridgeTable {
    n: u64,
    values: SquareMatrix,
    mask: Vec<bool>,
}

impl BridgeTable {
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn size(&self) -> usize {
        self.values.size()
    }

    #[inline]
    pub fn reachable(&self, x: usize, y: usize) -> bool {
        self.mask[x * self.values.size() + y]
    }

    /// `B_n(x,y)`, or `None` for a masked pair.
    #[inline]
    pub fn value(&self, x: usize, y: usize) -> Option<f64> {
        self.reachable(x, y).then(|| self.values.get(x, y))
    }

    /// CSV export: a `#`-prefixed JSON header line carrying the horizon and a
    /// checksum of the model, then `x,y,reachable,bridge` rows.
    pub fn write_csv<W: Write>(&self, model: &Model, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "# {{\"n\":{},\"model_checksum\":\"{:016x}\"}}",
            self.n,
            model.checksum()
        )?;
        writeln!(out, "x,y,reachable,bridge")?;
        let s = self.size();
        for x in 0..s {
            for y in 0..s {
                match self.value(x, y) {
                    Some(v) => writeln!(out, "{x},{y},true,{}", crate::fmt_f64(v))?,
                    None => writeln!(out, "{x},{y},false,")?,
                }
            }
        }
        Ok(())
    }
}

/// Conditional law of `xi_k` given `xi_0 = x` and `xi_n = y`:
/// `z -> P^k(x,z) P^{n-k}(z,y) / P^n(x,y)`.
pub fn bridge_marginal(
    powers: &PowerCache,
    n: u64,
    k: u64,
    x: usize,
    y: usize,
) -> Result<Vec<f64>, BridgeError> {
    if k > n {
        return Err(BridgeError::IndexOutOfRange { k, n });
    }
    let pn = powers.power(n);
    let denom = pn.get(x, y);
    if denom <= 0.0 {
        return Err(BridgeError::UnreachablePair { x, y, n });
    }
    let fwd = powers.power(k);
    let bwd = powers.power(n - k);
    let s = powers.size();
    let mut out = vec![0.0; s];
    for (z, o) in out.iter_mut().enumerate() {
        *o = fwd.get(x, z) * bwd.get(z, y) / denom;
    }
    Ok(out)
}

/// Builds `B_n` row by row: a forward sweep of `alpha_k = delta_x P^k`
/// interleaved with a Horner application of the backward powers, costing
/// `O(n S^2)` per source row. Unreachable pairs are masked, never fatal.
pub fn bridge_sum_table(model: &Model, n: u64) -> BridgeTable {
    assert!(n >= 1, "horizon must be positive");
    let s = model.size();
    let kernel = model.kernel();
    let f = model.observable();
    let matrix = kernel.to_matrix();
    let compensated = n > COMPENSATED_SWEEP_THRESHOLD;
    let pn = model.powers().power(n);

    let mut values = SquareMatrix::zeros(s);
    let mut mask = vec![false; s * s];

    let mut alpha = vec![0.0; s];
    let mut numer = vec![0.0; s];
    let mut scratch = vec![0.0; s];
    for x in 0..s {
        // k = 1 term.
        alpha.copy_from_slice(kernel.row(x));
        for (z, v) in numer.iter_mut().enumerate() {
            *v = alpha[z] * f[z];
        }
        // t <- t P + alpha_k ⊙ f for k = 2..n.
        for _ in 2..=n {
            if compensated {
                matrix.vec_mul_into_compensated(&numer, &mut scratch);
            } else {
                matrix.vec_mul_into(&numer, &mut scratch);
            }
            std::mem::swap(&mut numer, &mut scratch);
            matrix.vec_mul_into(&alpha, &mut scratch);
            std::mem::swap(&mut alpha, &mut scratch);
            for (z, v) in numer.iter_mut().enumerate() {
                *v += alpha[z] * f[z];
            }
        }
        for y in 0..s {
            let p = pn.get(x, y);
            if p > 0.0 {
                values.set(x, y, numer[y] / p);
                mask[x * s + y] = true;
            } else {
                values.set(x, y, f64::NAN);
            }
        }
    }
    BridgeTable { n, values, mask }
}

/// Incremental scan over horizons `n = 1, 2, ...` maintaining `G_n` and `P^n`.
/// One pair of matrix multiplies per step, so a whole profile up to `N` costs
/// `O(N S^3)` instead of `O(N^2 S^3)` worth of per-horizon sweeps.
pub struct BridgeScan<'a> {
    model: &'a Model,
    base: SquareMatrix,
    g: SquareMatrix,
    pn: SquareMatrix,
    scratch: SquareMatrix,
    n: u64,
}

impl<'a> BridgeScan<'a> {
    /// Positioned at `n = 1`.
    pub fn new(model: &'a Model) -> Self {
        let s = model.size();
        let base = model.kernel().to_matrix();
        let mut g = SquareMatrix::zeros(s);
        for x in 0..s {
            for y in 0..s {
                g.set(x, y, base.get(x, y) * model.observable()[y]);
            }
        }
        Self {
            model,
            pn: base.clone(),
            base,
            g,
            scratch: SquareMatrix::zeros(s),
            n: 1,
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Unnormalized table `G_n(x,y) = P^n(x,y) B_n(x,y)`.
    pub fn g(&self) -> &SquareMatrix {
        &self.g
    }

    /// `P^n` at the current horizon.
    pub fn pn(&self) -> &SquareMatrix {
        &self.pn
    }

    /// Advance to the next horizon: `G <- G P + P^{n+1} F`.
    pub fn step(&mut self) {
        let s = self.model.size();
        self.g.mul_into(&self.base, &mut self.scratch);
        std::mem::swap(&mut self.g, &mut self.scratch);
        self.pn.mul_into(&self.base, &mut self.scratch);
        std::mem::swap(&mut self.pn, &mut self.scratch);
        let f = self.model.observable();
        for x in 0..s {
            for y in 0..s {
                let v = self.g.get(x, y) + self.pn.get(x, y) * f[y];
                self.g.set(x, y, v);
            }
        }
        self.n += 1;
    }

    /// `|E(S_n | xi_0, xi_n)|^2` (unnormalized by `n`).
    pub fn projection_norm_sq(&self) -> f64 {
        let s = self.model.size();
        let pi = self.model.pi();
        let mut acc = Accumulator::new();
        for x in 0..s {
            let w = pi.prob(x);
            if w == 0.0 {
                continue;
            }
            for y in 0..s {
                let p = self.pn.get(x, y);
                if p > 0.0 {
                    let g = self.g.get(x, y);
                    acc.add(w * g * g / p);
                }
            }
        }
        acc.total()
    }

    /// `sum_{x,y} pi(x) G_n(x,y)`, which is `E(S_n)`; a zero check.
    pub fn total_expectation(&self) -> f64 {
        let s = self.model.size();
        let pi = self.model.pi();
        let mut acc = Accumulator::new();
        for x in 0..s {
            let w = pi.prob(x);
            if w == 0.0 {
                continue;
            }
            for y in 0..s {
                acc.add(w * self.g.get(x, y));
            }
        }
        acc.total()
    }

    /// Materialize the table at the current horizon.
    pub fn table(&self) -> BridgeTable {
        let s = self.model.size();
        let mut values = SquareMatrix::zeros(s);
        let mut mask = vec![false; s * s];
        for x in 0..s {
            for y in 0..s {
                let p = self.pn.get(x, y);
                if p > 0.0 {
                    values.set(x, y, self.g.get(x, y) / p);
                    mask[x * s + y] = true;
                } else {
                    values.set(x, y, f64::NAN);
                }
            }
        }
        BridgeTable {
            n: self.n,
            values,
            mask,
        }
    }
}

fn scan_to(model: &Model, n: u64) -> BridgeScan<'_> {
    assert!(n >= 1);
    let mut scan = BridgeScan::new(model);
    while scan.n() < n {
        scan.step();
    }
    scan
}

/// `(1/n) |E(S_n | xi_0, xi_n)|^2`, the quantity that must vanish for the
/// CLT to hold without random centering.
pub fn endpoint_projection_norm(model: &Model, n: u64) -> f64 {
    scan_to(model, n).projection_norm_sq() / n as f64
}

/// `(1/n) |S_n - E(S_n | xi_0, xi_n)|^2` via the orthogonal-projection
/// identity `|S_n - E(S_n|.)|^2 = E(S_n^2) - |E(S_n|.)|^2`.
///
/// A violation of the identity beyond [`NEGATIVE_VARIANCE_TOL`] signals
/// corrupted upstream numerics and is an error, not a clamp.
pub fn centered_sigma(model: &Model, n: u64) -> Result<f64, BridgeError> {
    let total = partial_sum_variance(model, n);
    let projected = scan_to(model, n).projection_norm_sq();
    let value = (total - projected) / n as f64;
    if value < -NEGATIVE_VARIANCE_TOL {
        return Err(BridgeError::NegativeVariance { value });
    }
    Ok(value.max(0.0))
}

/// One row of [`variance_decomposition_profile`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecompositionRow {
    pub n: u64,
    /// `E(S_n^2)/n`.
    pub mean_square: f64,
    /// `(1/n) |S_n - E(S_n|xi_0,xi_n)|^2`.
    pub centered_sigma: f64,
    /// `(1/n) |E(S_n|xi_0,xi_n)|^2`.
    pub projection_norm: f64,
}

/// The Pythagoras decomposition `E(S_n^2)/n = centered + projected` for every
/// `n <= max_n`, computed in a single sweep.
pub fn variance_decomposition_profile(
    model: &Model,
    max_n: u64,
) -> Result<Vec<DecompositionRow>, BridgeError> {
    assert!(max_n >= 1);
    let profile = crate::moments::variance_profile(model, max_n);
    let mut scan = BridgeScan::new(model);
    let mut rows = Vec::with_capacity(max_n as usize);
    for n in 1..=max_n {
        if n > 1 {
            scan.step();
        }
        let mean_square = profile.values[n as usize - 1];
        let projection_norm = scan.projection_norm_sq() / n as f64;
        let centered = mean_square - projection_norm;
        if centered < -NEGATIVE_VARIANCE_TOL {
            return Err(BridgeError::NegativeVariance { value: centered });
        }
        rows.push(DecompositionRow {
            n,
            mean_square,
            centered_sigma: centered.max(0.0),
            projection_norm,
        });
    }
    Ok(rows)
}

/// `|E(X_0 | xi_{-n}, xi_n)|^2 = sum pi(x) P^{2n}(x,y) g(x,y)^2` with
/// `g = (P^n F P^n)(x,y) / P^{2n}(x,y)`; unreachable pairs carry no mass.
pub fn x0_two_sided_norm(model: &Model, n: u64) -> f64 {
    assert!(n >= 1);
    let s = model.size();
    let pn = model.powers().power(n);
    let p2n = model.powers().power(2 * n);
    // A = P^n F P^n.
    let mut weighted = SquareMatrix::zeros(s);
    let f = model.observable();
    for x in 0..s {
        for z in 0..s {
            weighted.set(x, z, pn.get(x, z) * f[z]);
        }
    }
    let a = weighted.mul(&pn);
    let pi = model.pi();
    let mut acc = Accumulator::new();
    for x in 0..s {
        let w = pi.prob(x);
        if w == 0.0 {
            continue;
        }
        for y in 0..s {
            let mass = p2n.get(x, y);
            if mass > 0.0 {
                let g = a.get(x, y) / mass;
                acc.add(w * mass * g * g);
            }
        }
    }
    acc.total()
}

/// One-sided conditional mean `E(S_n | xi_0 = x) = sum_{k=1..n} (P^k f)(x)`,
/// used by the tower-property cross-checks.
pub fn one_sided_from_start(model: &Model, n: u64) -> Vec<f64> {
    let s = model.size();
    let mut iterate = model.observable().to_vec();
    let mut scratch = vec![0.0; s];
    let mut acc = vec![Accumulator::new(); s];
    for _ in 1..=n {
        model.kernel().apply(&iterate, &mut scratch);
        std::mem::swap(&mut iterate, &mut scratch);
        for (a, &v) in acc.iter_mut().zip(iterate.iter()) {
            a.add(v);
        }
    }
    // After the swap `iterate` holds P^k f; accumulate those.
    acc.into_iter().map(|a| a.total()).collect()
}
