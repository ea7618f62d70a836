//! Seeded path simulation and distributional verification.
//!
//! Streams are counter-based: replication `r` of master seed `m` draws from a
//! SplitMix64 generator whose initial state is `mix64(m + mix64(r + 1))`.
//! `mix64` is a bijection, so distinct replications get distinct streams, and
//! rerunning any `(master, r)` reproduces its path bit-exactly on every
//! platform. Aggregation sorts statistics before summing, so reports do not
//! depend on the worker count.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{centered_sigma, BridgeError, BridgeTable};
use crate::kernel::{structural_recurrent_classes, StationaryLaw};
use crate::linalg::{compensated_sum, Accumulator};
use crate::moments::{center_observable, sigma_series, Model, MomentsError};

/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.5758293035489004;

/// Cell budget for the exact lattice DP.
pub const DP_CELL_BUDGET: u128 = 1 << 27;

/// Minimum replication count a report will accept.
pub const MIN_REPS: u64 = 100;

#[derive(Debug, Error)]
pub enum McError {
    #[error("endpoint centering requires a precomputed bridge table")]
    MissingBridge,
    #[error("bridge table horizon {got} does not match experiment horizon {expected}")]
    BridgeHorizonMismatch { expected: u64, got: u64 },
    #[error("reps = {reps} is below the minimum {min}")]
    TooFewReps { reps: u64, min: u64 },
    #[error("mixture weights invalid: {detail}")]
    BadWeights { detail: String },
    #[error("observable is not supported on an integer lattice; use the Monte Carlo mode")]
    NotLattice,
    #[error("lattice DP needs {cells} cells, over the {budget} budget")]
    DpBudgetExceeded { cells: u128, budget: u128 },
    #[error("sampled endpoint pair ({x},{y}) is masked at horizon {n}; path/model mismatch")]
    UnreachableEndpoint { x: usize, y: usize, n: u64 },
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Moments(#[from] MomentsError),
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Master seed plus the documented replication-to-stream derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master: u64,
}

impl SeedSpec {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    /// Stream for replication `r`: SplitMix64 seeded with
    /// `mix64(master + mix64(r + 1))`.
    pub fn stream(&self, r: u64) -> Stream {
        Stream {
            state: mix64(self.master.wrapping_add(mix64(r.wrapping_add(1)))),
        }
    }
}

/// SplitMix64 generator.
#[derive(Debug, Clone, Copy)]
pub struct Stream {
    state: u64,
}

impl Stream {
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }
}

/// Inverse-CDF sampler over the fixed state ordering `0..S`.
pub struct PathSampler<'a> {
    model: &'a Model,
    pi_cdf: Vec<f64>,
    pi_last: usize,
    row_cdfs: Vec<Vec<f64>>,
    row_last: Vec<usize>,
}

impl<'a> PathSampler<'a> {
    pub fn new(model: &'a Model) -> Self {
        let (pi_cdf, pi_last) = cdf_of(model.pi().probs());
        let mut row_cdfs = Vec::with_capacity(model.size());
        let mut row_last = Vec::with_capacity(model.size());
        for x in 0..model.size() {
            let (cdf, last) = cdf_of(model.kernel().row(x));
            row_cdfs.push(cdf);
            row_last.push(last);
        }
        Self {
            model,
            pi_cdf,
            pi_last,
            row_cdfs,
            row_last,
        }
    }

    #[inline]
    pub fn initial_state(&self, stream: &mut Stream) -> usize {
        pick(&self.pi_cdf, self.pi_last, stream.next_f64())
    }

    #[inline]
    pub fn step(&self, state: usize, stream: &mut Stream) -> usize {
        pick(
            &self.row_cdfs[state],
            self.row_last[state],
            stream.next_f64(),
        )
    }

    /// Stationary start plus `n` kernel steps; returns all `n + 1` states.
    pub fn sample_path(&self, n: u64, stream: &mut Stream) -> Vec<usize> {
        let mut path = Vec::with_capacity(n as usize + 1);
        let mut s = self.initial_state(stream);
        path.push(s);
        for _ in 0..n {
            s = self.step(s, stream);
            path.push(s);
        }
        path
    }

    /// Endpoints and partial sum only, for long horizons.
    pub fn sample_summary(&self, n: u64, stream: &mut Stream) -> (usize, usize, f64) {
        let f = self.model.observable();
        let start = self.initial_state(stream);
        let mut s = start;
        let mut acc = Accumulator::new();
        for _ in 0..n {
            s = self.step(s, stream);
            acc.add(f[s]);
        }
        (start, s, acc.total())
    }
}

fn cdf_of(probs: &[f64]) -> (Vec<f64>, usize) {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut run = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        run += p;
        cdf.push(run);
        if p > 0.0 {
            last = i;
        }
    }
    (cdf, last)
}

#[inline]
fn pick(cdf: &[f64], last_positive: usize, u: f64) -> usize {
    let idx = cdf.partition_point(|&c| c <= u);
    idx.min(last_positive)
}

/// Stationary start plus `n` steps under the given stream.
pub fn sample_path(model: &Model, n: u64, stream: &mut Stream) -> Vec<usize> {
    PathSampler::new(model).sample_path(n, stream)
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Where a reference variance came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaProvenance {
    CenteredSigma { n: u64 },
    SigmaSeries,
    AbsMean,
    Explicit,
}

/// Reference law for the goodness-of-fit verdict: a finite mixture of
/// centered normals, where a zero-variance component contributes a unit step
/// at the origin.
#[derive(Debug, Clone, Serialize)]
pub struct ReferenceLaw {
    pub components: Vec<MixtureComponent>,
    pub provenance: SigmaProvenance,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub sigma2: f64,
}

impl ReferenceLaw {
    pub fn normal(sigma2: f64, provenance: SigmaProvenance) -> Result<Self, McError> {
        mixture_reference(&[(1.0, sigma2)], provenance)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for c in &self.components {
            if c.sigma2 == 0.0 {
                if t >= 0.0 {
                    acc += c.weight;
                }
            } else {
                acc += c.weight * normal_cdf(t / c.sigma2.sqrt());
            }
        }
        acc
    }

    /// Left limit of the CDF, needed for exact KS against laws with an atom.
    pub fn cdf_left(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for c in &self.components {
            if c.sigma2 == 0.0 {
                if t > 0.0 {
                    acc += c.weight;
                }
            } else {
                acc += c.weight * normal_cdf(t / c.sigma2.sqrt());
            }
        }
        acc
    }

    /// True when the whole mixture is the point mass at zero.
    pub fn degenerate(&self) -> bool {
        self.components.iter().all(|c| c.sigma2 == 0.0)
    }
}

/// Validates weights and variances into a [`ReferenceLaw`].
pub fn mixture_reference(
    components: &[(f64, f64)],
    provenance: SigmaProvenance,
) -> Result<ReferenceLaw, McError> {
    if components.is_empty() {
        return Err(McError::BadWeights {
            detail: "no components".into(),
        });
    }
    for &(w, s2) in components {
        if w.is_nan() || w <= 0.0 {
            return Err(McError::BadWeights {
                detail: format!("non-positive weight {w}"),
            });
        }
        if s2.is_nan() || s2 < 0.0 {
            return Err(McError::BadWeights {
                detail: format!("negative variance {s2}"),
            });
        }
    }
    let total: f64 = compensated_sum(components.iter().map(|&(w, _)| w));
    if (total - 1.0).abs() > 1e-9 {
        return Err(McError::BadWeights {
            detail: format!("weights sum to {total}"),
        });
    }
    Ok(ReferenceLaw {
        components: components
            .iter()
            .map(|&(weight, sigma2)| MixtureComponent { weight, sigma2 })
            .collect(),
        provenance,
    })
}

/// Exact Kolmogorov-Smirnov distance between the empirical CDF of `sorted`
/// and the reference law, accounting for atoms through the left limit.
pub fn ks_distance(sorted: &[f64], law: &ReferenceLaw) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &t) in sorted.iter().enumerate() {
        let upper = (i as f64 + 1.0) / n - law.cdf(t);
        let lower = law.cdf_left(t) - i as f64 / n;
        d = d.max(upper).max(lower);
    }
    d.max(0.0)
}

/// Which statistic the experiment computes per replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// `(S_n - B_n(xi_0, xi_n)) / sqrt(n)`.
    Endpoint,
    /// `S_n / sqrt(n)`.
    None,
}

/// Goodness-of-fit verdict; degenerate references get `MaxAbs`, since KS
/// against a point mass is ill-posed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GoodnessOfFit {
    Ks { distance: f64 },
    MaxAbs { value: f64 },
}

/// Summary of one seeded experiment; a pure function of
/// `(model, n, reps, centering, reference, master seed)`.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub n: u64,
    pub reps: u64,
    pub centering: Centering,
    pub master_seed: u64,
    pub mean: f64,
    pub variance: f64,
    pub mean_half_width_99: f64,
    pub variance_half_width_99: f64,
    pub statistic: GoodnessOfFit,
    pub reference: ReferenceLaw,
}

/// Report plus the per-replication statistics in replication order.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub statistics: Vec<f64>,
}

/// Runs the per-replication map over a scoped thread pool. Results are keyed
/// by replication index, so the output is identical for any worker count.
pub fn parallel_map_replications<F>(reps: u64, workers: usize, f: F) -> Vec<f64>
where
    F: Fn(u64) -> f64 + Sync,
{
    let mut out = vec![0.0; reps as usize];
    let workers = workers.max(1);
    if workers == 1 || reps < 2 {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = f(i as u64);
        }
        return out;
    }
    let chunk = (reps as usize).div_ceil(workers);
    std::thread::scope(|scope| {
        for (w, slice) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            let start = w * chunk;
            scope.spawn(move || {
                for (j, slot) in slice.iter_mut().enumerate() {
                    *slot = f((start + j) as u64);
                }
            });
        }
    });
    out
}

/// Seeded distributional check of the centered (or uncentered) normalized
/// partial sum against a reference law.
#[allow(clippy::too_many_arguments)]
pub fn clt_experiment(
    model: &Model,
    n: u64,
    reps: u64,
    seed: SeedSpec,
    centering: Centering,
    reference: &ReferenceLaw,
    bridge: Option<&BridgeTable>,
    workers: usize,
) -> Result<ExperimentRun, McError> {
    assert!(n >= 1);
    if reps < MIN_REPS {
        return Err(McError::TooFewReps {
            reps,
            min: MIN_REPS,
        });
    }
    let table = match centering {
        Centering::Endpoint => {
            let t = bridge.ok_or(McError::MissingBridge)?;
            if t.n() != n {
                return Err(McError::BridgeHorizonMismatch {
                    expected: n,
                    got: t.n(),
                });
            }
            Some(t)
        }
        Centering::None => None,
    };
    let sampler = PathSampler::new(model);
    let sqrt_n = (n as f64).sqrt();

    let statistics = {
        // Masked endpoint pairs cannot be sampled from a consistent model;
        // record a NaN and convert it to an error after the parallel section.
        let stat_of = |r: u64| -> f64 {
            let mut stream = seed.stream(r);
            let (start, end, sum) = sampler.sample_summary(n, &mut stream);
            match table {
                Some(t) => match t.value(start, end) {
                    Some(b) => (sum - b) / sqrt_n,
                    None => f64::NAN,
                },
                None => sum / sqrt_n,
            }
        };
        parallel_map_replications(reps, workers, stat_of)
    };
    if let Some(bad) = statistics.iter().position(|v| v.is_nan()) {
        let mut stream = seed.stream(bad as u64);
        let (x, y, _) = sampler.sample_summary(n, &mut stream);
        return Err(McError::UnreachableEndpoint { x, y, n });
    }

    let mut sorted = statistics.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let (mean, variance, m4) = sorted_moments(&sorted);
    let statistic = if reference.degenerate() {
        GoodnessOfFit::MaxAbs {
            value: sorted.iter().fold(0.0_f64, |m, &v| m.max(v.abs())),
        }
    } else {
        GoodnessOfFit::Ks {
            distance: ks_distance(&sorted, reference),
        }
    };
    let r = reps as f64;
    let mean_half_width_99 = Z_99 * (variance / r).sqrt();
    let variance_half_width_99 = Z_99 * ((m4 - variance * variance).max(0.0) / r).sqrt();
    Ok(ExperimentRun {
        report: ExperimentReport {
            n,
            reps,
            centering,
            master_seed: seed.master,
            mean,
            variance,
            mean_half_width_99,
            variance_half_width_99,
            statistic,
            reference: reference.clone(),
        },
        statistics,
    })
}

/// Mean, unbiased variance, and central fourth moment of a sorted sample,
/// accumulated with compensation.
fn sorted_moments(sorted: &[f64]) -> (f64, f64, f64) {
    let n = sorted.len() as f64;
    let mean = compensated_sum(sorted.iter().copied()) / n;
    let mut v2 = Accumulator::new();
    let mut v4 = Accumulator::new();
    for &x in sorted {
        let d = x - mean;
        v2.add(d * d);
        v4.add(d * d * d * d);
    }
    let variance = if sorted.len() > 1 {
        v2.total() / (n - 1.0)
    } else {
        0.0
    };
    (mean, variance, v4.total() / n)
}

/// Result of the absolute-mean variance functional `pi (E|S_n|)^2 / (2n)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AbsMeanSigma {
    pub sigma2: f64,
    pub mean_abs: f64,
    /// Present in Monte Carlo mode only.
    pub half_width_99: Option<f64>,
}

/// Exact mode: the full distribution of `S_n` by dynamic programming over
/// `(state, lattice value)`; requires every observable value to be an integer
/// multiple of a common step.
pub fn abs_mean_sigma_exact(model: &Model, n: u64) -> Result<AbsMeanSigma, McError> {
    assert!(n >= 1);
    let f = model.observable();
    let max_abs = f.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Ok(AbsMeanSigma {
            sigma2: 0.0,
            mean_abs: 0.0,
            half_width_99: None,
        });
    }
    let (step, ticks) = lattice_step(f).ok_or(McError::NotLattice)?;
    let kmax = ticks.iter().map(|k| k.unsigned_abs()).max().unwrap_or(0);
    let s = model.size();
    let half = (n as u128) * (kmax as u128);
    let width = 2 * half + 1;
    let cells = width * s as u128;
    if cells > DP_CELL_BUDGET {
        return Err(McError::DpBudgetExceeded {
            cells,
            budget: DP_CELL_BUDGET,
        });
    }
    let width = width as usize;
    let offset = half as i64;

    let mut cur = vec![0.0_f64; s * width];
    for x in 0..s {
        cur[x * width + offset as usize] = model.pi().prob(x);
    }
    let mut next = vec![0.0_f64; s * width];
    for _ in 0..n {
        next.fill(0.0);
        for x in 0..s {
            let row = model.kernel().row(x);
            let src = &cur[x * width..(x + 1) * width];
            for (y, &p) in row.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let shift = ticks[y];
                let dst = &mut next[y * width..(y + 1) * width];
                if shift >= 0 {
                    let shift = shift as usize;
                    for v in 0..width - shift {
                        let mass = src[v];
                        if mass != 0.0 {
                            dst[v + shift] += p * mass;
                        }
                    }
                } else {
                    let shift = (-shift) as usize;
                    for v in shift..width {
                        let mass = src[v];
                        if mass != 0.0 {
                            dst[v - shift] += p * mass;
                        }
                    }
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }

    let mut acc = Accumulator::new();
    for x in 0..s {
        for v in 0..width {
            let mass = cur[x * width + v];
            if mass != 0.0 {
                let value = (v as i64 - offset) as f64 * step;
                acc.add(value.abs() * mass);
            }
        }
    }
    let mean_abs = acc.total();
    Ok(AbsMeanSigma {
        sigma2: std::f64::consts::PI * mean_abs * mean_abs / (2.0 * n as f64),
        mean_abs,
        half_width_99: None,
    })
}

/// Monte Carlo mode: plug-in estimate with a delta-method half-width.
pub fn abs_mean_sigma_mc(
    model: &Model,
    n: u64,
    reps: u64,
    seed: SeedSpec,
    workers: usize,
) -> Result<AbsMeanSigma, McError> {
    assert!(n >= 1);
    if reps < MIN_REPS {
        return Err(McError::TooFewReps {
            reps,
            min: MIN_REPS,
        });
    }
    let sampler = PathSampler::new(model);
    let values = parallel_map_replications(reps, workers, |r| {
        let mut stream = seed.stream(r);
        let (_, _, sum) = sampler.sample_summary(n, &mut stream);
        sum.abs()
    });
    let mut sorted = values;
    sorted.sort_by(|a, b| a.total_cmp(b));
    let (mean_abs, variance, _) = sorted_moments(&sorted);
    let hw_mean = Z_99 * (variance / reps as f64).sqrt();
    let scale = std::f64::consts::PI / (2.0 * n as f64);
    Ok(AbsMeanSigma {
        sigma2: scale * mean_abs * mean_abs,
        mean_abs,
        half_width_99: Some(scale * 2.0 * mean_abs * hw_mean),
    })
}

/// Common step of an integer-lattice observable, with the tick counts.
fn lattice_step(f: &[f64]) -> Option<(f64, Vec<i64>)> {
    let scale = f.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let mut g = 0.0_f64;
    for &v in f {
        let mut a = g;
        let mut b = v.abs();
        while b > tol {
            let r = a % b;
            a = b;
            b = r;
        }
        g = a;
    }
    if g <= tol {
        return None;
    }
    let mut ticks = Vec::with_capacity(f.len());
    for &v in f {
        let t = v / g;
        let rounded = t.round();
        if (t - rounded).abs() > 1e-6 {
            return None;
        }
        ticks.push(rounded as i64);
    }
    Some((g, ticks))
}

/// Recurrent classes of a (possibly reducible) model as standalone models:
/// weight `pi(C)`, kernel restricted to the class, law renormalized, and the
/// observable recentered within the class. Feeds the mixture reference.
pub fn recurrent_class_models(model: &Model) -> Result<Vec<(f64, Model)>, McError> {
    let classes = structural_recurrent_classes(model.kernel());
    let mut out = Vec::new();
    for class in classes {
        let weight: f64 = class.iter().map(|&x| model.pi().prob(x)).sum();
        if weight <= 0.0 {
            continue;
        }
        let index: std::collections::HashMap<usize, usize> =
            class.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let m = class.len();
        let mut rows = vec![vec![0.0; m]; m];
        for (i, &x) in class.iter().enumerate() {
            for (y, &p) in model.kernel().row(x).iter().enumerate() {
                if p > 0.0 {
                    if let Some(&j) = index.get(&y) {
                        rows[i][j] = p;
                    }
                }
            }
            let total: f64 = compensated_sum(rows[i].iter().copied());
            let arg = rows[i]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(j, _)| j)
                .unwrap_or(0);
            rows[i][arg] += 1.0 - total;
        }
        let kernel = crate::kernel::Kernel::new(rows).map_err(MomentsError::from)?;
        let pi =
            StationaryLaw::from_probs(class.iter().map(|&x| model.pi().prob(x) / weight).collect());
        let raw_f: Vec<f64> = class.iter().map(|&x| model.observable()[x]).collect();
        let f = center_observable(&raw_f, &pi)?;
        out.push((weight, Model::with_law(kernel, pi, f)?));
    }
    if out.is_empty() {
        return Err(McError::BadWeights {
            detail: "no recurrent class carries stationary mass".into(),
        });
    }
    Ok(out)
}

/// Reference law `N(0, centered_sigma(model, n))`.
pub fn reference_centered_sigma(model: &Model, n: u64) -> Result<ReferenceLaw, McError> {
    let sigma2 = centered_sigma(model, n)?;
    mixture_reference(&[(1.0, sigma2)], SigmaProvenance::CenteredSigma { n })
}

/// Reference law `N(0, sigma_series(model))`.
pub fn reference_sigma_series(model: &Model, tol: f64) -> Result<ReferenceLaw, McError> {
    let sigma2 = sigma_series(model, tol)?.sigma2;
    mixture_reference(&[(1.0, sigma2)], SigmaProvenance::SigmaSeries)
}

/// Mixture reference over the recurrent classes, each component variance
/// from `centered_sigma` on the class at the same horizon.
pub fn reference_mixture(model: &Model, n: u64) -> Result<ReferenceLaw, McError> {
    let components = recurrent_class_models(model)?;
    let mut specs = Vec::with_capacity(components.len());
    for (weight, sub) in &components {
        specs.push((*weight, centered_sigma(sub, n)?));
    }
    mixture_reference(&specs, SigmaProvenance::CenteredSigma { n })
}

/// Reference law `N(0, pi (E|S_n|)^2 / (2n))` from the exact lattice DP.
pub fn reference_abs_mean(model: &Model, n: u64) -> Result<ReferenceLaw, McError> {
    let sigma2 = abs_mean_sigma_exact(model, n)?.sigma2;
    mixture_reference(&[(1.0, sigma2)], SigmaProvenance::AbsMean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::bridge_sum_table;
    use crate::kernel::Kernel;

    fn two_state_model(a: f64, b: f64, f0: f64, f1: f64) -> Model {
        let kernel = Kernel::new(vec![vec![1.0 - a, a], vec![b, 1.0 - b]]).unwrap();
        Model::centered(kernel, vec![f0, f1]).unwrap()
    }

    fn workhorse() -> Model {
        two_state_model(0.25, 0.25, -1.0, 1.0)
    }

    fn iid_rademacher() -> Model {
        two_state_model(0.5, 0.5, -1.0, 1.0)
    }

    fn flip_flop() -> Model {
        two_state_model(1.0, 1.0, -1.0, 1.0)
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let seed = SeedSpec::new(42);
        let mut a = seed.stream(0);
        let mut b = seed.stream(1);
        assert_ne!(a.next_u64(), b.next_u64());
        let mut a1 = seed.stream(0);
        let mut a2 = seed.stream(0);
        for _ in 0..100 {
            assert_eq!(a1.next_u64(), a2.next_u64());
        }
    }

    #[test]
    fn uniforms_in_unit_interval() {
        let mut s = SeedSpec::new(7).stream(3);
        for _ in 0..1000 {
            let u = s.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn flip_flop_path_alternates() {
        let m = flip_flop();
        let mut stream = SeedSpec::new(1).stream(0);
        let path = sample_path(&m, 10, &mut stream);
        for w in path.windows(2) {
            assert_eq!(w[1], 1 - w[0]);
        }
    }

    #[test]
    fn one_state_path_is_constant() {
        let kernel = Kernel::new(vec![vec![1.0]]).unwrap();
        let m = Model::centered(kernel, vec![5.0]).unwrap();
        let mut stream = SeedSpec::new(9).stream(0);
        let path = sample_path(&m, 8, &mut stream);
        assert!(path.iter().all(|&s| s == 0));
    }

    #[test]
    fn transition_frequency_matches_kernel() {
        let m = workhorse();
        let sampler = PathSampler::new(&m);
        let mut stream = SeedSpec::new(20260808).stream(0);
        let n = 100_000u64;
        let mut from0 = 0u64;
        let mut flips = 0u64;
        let mut s = sampler.initial_state(&mut stream);
        for _ in 0..n {
            let next = sampler.step(s, &mut stream);
            if s == 0 {
                from0 += 1;
                if next == 1 {
                    flips += 1;
                }
            }
            s = next;
        }
        let freq = flips as f64 / from0 as f64;
        assert!((freq - 0.25).abs() < 0.005, "freq {freq}");
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        // Phi(1.96) from standard tables.
        assert!((normal_cdf(1.96) - 0.9750021048517795).abs() < 1e-9);
        assert!((normal_cdf(-1.96) - 0.0249978951482205).abs() < 1e-9);
    }

    #[test]
    fn mixture_reference_shapes() {
        let single = mixture_reference(&[(1.0, 4.0)], SigmaProvenance::Explicit).unwrap();
        assert!((single.cdf(0.0) - 0.5).abs() < 1e-12);
        assert!((single.cdf(2.0) - normal_cdf(1.0)).abs() < 1e-12);

        let half_step =
            mixture_reference(&[(0.5, 0.0), (0.5, 1.0)], SigmaProvenance::Explicit).unwrap();
        assert!((half_step.cdf(0.0) - (0.5 + 0.25)).abs() < 1e-12);
        assert!((half_step.cdf_left(0.0) - 0.25).abs() < 1e-12);
        assert!(!half_step.degenerate());

        assert!(mixture_reference(&[(0.7, 1.0)], SigmaProvenance::Explicit).is_err());
        assert!(mixture_reference(&[(1.0, -1.0)], SigmaProvenance::Explicit).is_err());
    }

    #[test]
    fn ks_distance_hand_case() {
        // Two points at the median of N(0,1): F(0) = 0.5, empirical jumps 0 -> 1.
        let law = ReferenceLaw::normal(1.0, SigmaProvenance::Explicit).unwrap();
        let d = ks_distance(&[0.0, 0.0], &law);
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ks_self_test_within_dkw_band() {
        // Box-Muller samples from the reference itself; KS should sit under
        // the 95% DKW band 1.36/sqrt(reps).
        let law = ReferenceLaw::normal(1.0, SigmaProvenance::Explicit).unwrap();
        let mut stream = SeedSpec::new(31415).stream(0);
        let reps = 4096;
        let mut draws: Vec<f64> = (0..reps)
            .map(|_| {
                let u1 = stream.next_f64().max(1e-300);
                let u2 = stream.next_f64();
                (-2.0 * libm::log(u1)).sqrt() * libm::cos(2.0 * std::f64::consts::PI * u2)
            })
            .collect();
        draws.sort_by(|a, b| a.total_cmp(b));
        let d = ks_distance(&draws, &law);
        assert!(d <= 1.36 / (reps as f64).sqrt(), "ks {d}");
    }

    #[test]
    fn experiment_requires_bridge_for_endpoint_centering() {
        let m = workhorse();
        let law = ReferenceLaw::normal(3.0, SigmaProvenance::Explicit).unwrap();
        let err = clt_experiment(
            &m,
            16,
            128,
            SeedSpec::new(5),
            Centering::Endpoint,
            &law,
            None,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, McError::MissingBridge));
    }

    #[test]
    fn experiment_rejects_tiny_reps() {
        let m = workhorse();
        let law = ReferenceLaw::normal(3.0, SigmaProvenance::Explicit).unwrap();
        let err = clt_experiment(&m, 16, 10, SeedSpec::new(5), Centering::None, &law, None, 1)
            .unwrap_err();
        assert!(matches!(err, McError::TooFewReps { .. }));
    }

    #[test]
    fn flip_flop_centered_statistic_is_zero() {
        let m = flip_flop();
        let table = bridge_sum_table(&m, 64);
        let law = ReferenceLaw::normal(0.0, SigmaProvenance::Explicit).unwrap();
        let run = clt_experiment(
            &m,
            64,
            256,
            SeedSpec::new(11),
            Centering::Endpoint,
            &law,
            Some(&table),
            1,
        )
        .unwrap();
        match run.report.statistic {
            GoodnessOfFit::MaxAbs { value } => assert!(value < 1e-12),
            other => panic!("expected MaxAbs, got {other:?}"),
        }
    }

    #[test]
    fn worker_count_does_not_change_bytes() {
        let m = workhorse();
        let table = bridge_sum_table(&m, 32);
        let law = reference_centered_sigma(&m, 32).unwrap();
        let run1 = clt_experiment(
            &m,
            32,
            500,
            SeedSpec::new(99),
            Centering::Endpoint,
            &law,
            Some(&table),
            1,
        )
        .unwrap();
        let run8 = clt_experiment(
            &m,
            32,
            500,
            SeedSpec::new(99),
            Centering::Endpoint,
            &law,
            Some(&table),
            8,
        )
        .unwrap();
        assert_eq!(run1.statistics, run8.statistics);
        let json1 = serde_json::to_string(&run1.report).unwrap();
        let json8 = serde_json::to_string(&run8.report).unwrap();
        assert_eq!(json1, json8);
    }

    #[test]
    fn centering_sample_mean_unbiased() {
        // Sample mean of B_n(xi_0, xi_n) sits inside its own 99% interval of 0.
        let m = workhorse();
        let n = 128u64;
        let table = bridge_sum_table(&m, n);
        let sampler = PathSampler::new(&m);
        let seed = SeedSpec::new(777);
        let reps = 20_000u64;
        let values = parallel_map_replications(reps, 4, |r| {
            let mut stream = seed.stream(r);
            let (x, y, _) = sampler.sample_summary(n, &mut stream);
            table.value(x, y).unwrap()
        });
        let mut sorted = values;
        sorted.sort_by(|a, b| a.total_cmp(b));
        let (mean, variance, _) = sorted_moments(&sorted);
        let hw = Z_99 * (variance / reps as f64).sqrt();
        assert!(mean.abs() <= hw, "mean {mean} exceeds half-width {hw}");
    }

    #[test]
    fn abs_mean_rademacher_exact() {
        let m = iid_rademacher();
        let out = abs_mean_sigma_exact(&m, 1 << 10).unwrap();
        assert!((out.sigma2 - 1.0).abs() < 0.01, "got {}", out.sigma2);
    }

    #[test]
    fn abs_mean_flip_flop_vanishes() {
        let m = flip_flop();
        let out = abs_mean_sigma_exact(&m, 64).unwrap();
        assert!(out.sigma2 <= std::f64::consts::PI / 128.0 + 1e-12);
    }

    #[test]
    fn abs_mean_exact_matches_enumeration() {
        // Exhaustive check at small n.
        let m = workhorse();
        let n = 6u64;
        let mut e_abs = 0.0;
        let s = m.size();
        let steps = n as usize;
        let total_paths = s.pow(steps as u32 + 1);
        for code in 0..total_paths {
            let mut c = code;
            let mut prob;
            let mut state = c % s;
            c /= s;
            prob = m.pi().prob(state);
            let mut sum = 0.0;
            for _ in 0..steps {
                let next = c % s;
                c /= s;
                prob *= m.kernel().prob(state, next);
                state = next;
                sum += m.observable()[state];
            }
            e_abs += prob * sum.abs();
        }
        let out = abs_mean_sigma_exact(&m, n).unwrap();
        assert!((out.mean_abs - e_abs).abs() < 1e-12);
    }

    #[test]
    fn abs_mean_rejects_non_lattice() {
        // Two-state centering always produces commensurable values, so a
        // genuinely non-lattice observable needs three states.
        let third = 1.0 / 3.0;
        let kernel = Kernel::new(vec![vec![third, third, 1.0 - 2.0 * third]; 3]).unwrap();
        let m = Model::centered(kernel, vec![0.0, 1.0, std::f64::consts::SQRT_2]).unwrap();
        assert!(matches!(
            abs_mean_sigma_exact(&m, 8),
            Err(McError::NotLattice)
        ));
    }

    #[test]
    fn abs_mean_mc_tracks_exact() {
        let m = workhorse();
        let exact = abs_mean_sigma_exact(&m, 256).unwrap();
        let mc = abs_mean_sigma_mc(&m, 256, 4000, SeedSpec::new(3), 2).unwrap();
        let hw = mc.half_width_99.unwrap();
        assert!(
            (mc.sigma2 - exact.sigma2).abs() <= hw * 1.5 + 0.05,
            "mc {} vs exact {} (hw {hw})",
            mc.sigma2,
            exact.sigma2
        );
    }

    #[test]
    fn recurrent_classes_of_block_model() {
        let kernel = Kernel::new(vec![
            vec![0.75, 0.25, 0.0, 0.0],
            vec![0.25, 0.75, 0.0, 0.0],
            vec![0.0, 0.0, 0.5, 0.5],
            vec![0.0, 0.0, 0.5, 0.5],
        ])
        .unwrap();
        let pi = StationaryLaw::from_probs(vec![0.25, 0.25, 0.25, 0.25]);
        let model = Model::with_law(kernel, pi, vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let classes = recurrent_class_models(&model).unwrap();
        assert_eq!(classes.len(), 2);
        for (w, sub) in &classes {
            assert!((w - 0.5).abs() < 1e-12);
            assert_eq!(sub.size(), 2);
        }
    }

    #[test]
    fn lattice_step_detection() {
        let (h, ticks) = lattice_step(&[-1.0, 1.0]).unwrap();
        assert!((h - 1.0).abs() < 1e-12);
        assert_eq!(ticks, vec![-1, 1]);
        let (h, ticks) = lattice_step(&[0.5, -1.5, 2.0]).unwrap();
        assert!((h - 0.5).abs() < 1e-12);
        assert_eq!(ticks, vec![1, -3, 4]);
        assert!(lattice_step(&[1.0, std::f64::consts::SQRT_2]).is_none());
    }
}
