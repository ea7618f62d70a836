//! Second-moment theory of the additive functional `S_n = f(xi_1) + ... + f(xi_n)`:
//! autocovariances, the `E(S_n^2)/n` profile, and the series variance
//! `sigma^2 = E(X_0^2) + 2 sum_k E(X_0 X_k)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{
    ergodicity_report, stationary_law, Kernel, KernelError, PowerCache, StationaryLaw,
};
use crate::linalg::{compensated_sum, dot, Accumulator};

/// Centering tolerance for observables: `|sum pi(x) f(x)|` must stay below this.
pub const CENTERING_TOL: f64 = 1e-10;

/// Stationarity residual tolerance for an explicitly supplied law.
pub const STATIONARITY_TOL: f64 = 1e-9;

/// Term budget for the autocovariance series.
pub const SERIES_TERM_BUDGET: usize = 100_000;

#[derive(Debug, Error)]
pub enum MomentsError {
    #[error("observable length {got} does not match state count {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("observable is not centered: pi-mean is {mean:e} (tolerance {tol:e})")]
    CenteringViolation { mean: f64, tol: f64 },
    #[error("supplied law is not stationary: residual {residual:e} exceeds {tol:e}")]
    StationarityViolation { residual: f64, tol: f64 },
    #[error(
        "autocovariance series is not summable after {terms} terms (periodic or reducible chain)"
    )]
    NonSummable { terms: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Kernel, stationary law, and a centered observable: everything needed to
/// evaluate moments of the partial sums exactly.
#[derive(Debug, Clone, Serialize)]
pub struct Model {
    kernel: Kernel,
    pi: StationaryLaw,
    f: Vec<f64>,
    #[serde(skip)]
    powers: Arc<PowerCache>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.kernel == other.kernel && self.pi == other.pi && self.f == other.f
    }
}

impl Model {
    /// Builds a model from a kernel and an already centered observable,
    /// solving for the stationary law.
    pub fn new(kernel: Kernel, f: Vec<f64>) -> Result<Self, MomentsError> {
        let pi = stationary_law(&kernel, 1e-12)?.law;
        Self::with_law(kernel, pi, f)
    }

    /// Builds a model from a kernel and a raw observable, centering it first.
    pub fn centered(kernel: Kernel, raw_f: Vec<f64>) -> Result<Self, MomentsError> {
        let pi = stationary_law(&kernel, 1e-12)?.law;
        let f = center_observable(&raw_f, &pi)?;
        Self::with_law(kernel, pi, f)
    }

    /// Builds a model from explicit parts, validating stationarity and centering.
    pub fn with_law(kernel: Kernel, pi: StationaryLaw, f: Vec<f64>) -> Result<Self, MomentsError> {
        if pi.len() != kernel.size() {
            return Err(MomentsError::LengthMismatch {
                got: pi.len(),
                expected: kernel.size(),
            });
        }
        if f.len() != kernel.size() {
            return Err(MomentsError::LengthMismatch {
                got: f.len(),
                expected: kernel.size(),
            });
        }
        let residual = pi.residual(&kernel);
        if residual > STATIONARITY_TOL {
            return Err(MomentsError::StationarityViolation {
                residual,
                tol: STATIONARITY_TOL,
            });
        }
        let mean = compensated_sum((0..f.len()).map(|x| pi.prob(x) * f[x]));
        if mean.abs() > CENTERING_TOL {
            return Err(MomentsError::CenteringViolation {
                mean,
                tol: CENTERING_TOL,
            });
        }
        let powers = Arc::new(kernel.powers());
        Ok(Self {
            kernel,
            pi,
            f,
            powers,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn pi(&self) -> &StationaryLaw {
        &self.pi
    }

    pub fn observable(&self) -> &[f64] {
        &self.f
    }

    pub fn size(&self) -> usize {
        self.kernel.size()
    }

    pub fn powers(&self) -> &PowerCache {
        &self.powers
    }

    /// `E(X_0^2)` under the stationary law.
    pub fn second_moment(&self) -> f64 {
        compensated_sum((0..self.size()).map(|x| self.pi.prob(x) * self.f[x] * self.f[x]))
    }

    /// FNV-1a over the canonical JSON encoding; used to stamp exported tables.
    pub fn checksum(&self) -> u64 {
        let json = serde_json::to_string(self).expect("model serialization cannot fail");
        let mut hash: u64 = 0xcbf29ce484222325;
        for byte in json.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash
    }
}

impl<'de> Deserialize<'de> for Model {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            kernel: Kernel,
            #[serde(default)]
            pi: Option<Vec<f64>>,
            f: Vec<f64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let model = match raw.pi {
            Some(probs) => Model::with_law(raw.kernel, StationaryLaw::from_probs(probs), raw.f),
            None => Model::new(raw.kernel, raw.f),
        };
        model.map_err(serde::de::Error::custom)
    }
}

/// Subtracts the `pi`-mean from a raw observable.
pub fn center_observable(raw_f: &[f64], pi: &StationaryLaw) -> Result<Vec<f64>, MomentsError> {
    if raw_f.len() != pi.len() {
        return Err(MomentsError::LengthMismatch {
            got: raw_f.len(),
            expected: pi.len(),
        });
    }
    let mean = compensated_sum(raw_f.iter().enumerate().map(|(x, &v)| pi.prob(x) * v));
    Ok(raw_f.iter().map(|&v| v - mean).collect())
}

/// Incremental evaluation of `c_k = E(X_0 X_k) = sum_x pi(x) f(x) (P^k f)(x)`,
/// advancing `P^k f` by one kernel application per step.
pub(crate) struct AutocovarianceScan<'a> {
    model: &'a Model,
    weighted_f: Vec<f64>,
    iterate: Vec<f64>,
    scratch: Vec<f64>,
    pub k: u64,
}

impl<'a> AutocovarianceScan<'a> {
    pub fn new(model: &'a Model) -> Self {
        let weighted_f: Vec<f64> = (0..model.size())
            .map(|x| model.pi.prob(x) * model.f[x])
            .collect();
        Self {
            model,
            weighted_f,
            iterate: model.f.to_vec(),
            scratch: vec![0.0; model.size()],
            k: 0,
        }
    }

    /// Current `c_k`.
    pub fn value(&self) -> f64 {
        dot(&self.weighted_f, &self.iterate)
    }

    /// Advance `k -> k + 1`.
    pub fn step(&mut self) {
        self.model.kernel.apply(&self.iterate, &mut self.scratch);
        std::mem::swap(&mut self.iterate, &mut self.scratch);
        self.k += 1;
    }
}

/// `E(X_0 X_k)`; `k = 0` gives the second moment of the observable.
pub fn autocovariance(model: &Model, k: u64) -> f64 {
    let pk = model.powers().power(k);
    let mut pkf = vec![0.0; model.size()];
    pk.mat_vec_into(model.observable(), &mut pkf);
    compensated_sum((0..model.size()).map(|x| model.pi().prob(x) * model.observable()[x] * pkf[x]))
}

/// `E(S_n^2) = n E(X_0^2) + 2 sum_{k=1}^{n-1} (n - k) E(X_0 X_k)`.
pub fn partial_sum_variance(model: &Model, n: u64) -> f64 {
    assert!(n >= 1, "horizon must be positive");
    let mut scan = AutocovarianceScan::new(model);
    let mut acc = Accumulator::new();
    acc.add(n as f64 * scan.value());
    for k in 1..n {
        scan.step();
        acc.add(2.0 * (n - k) as f64 * scan.value());
    }
    acc.total()
}

/// The sequence `v_n = E(S_n^2)/n`, its sup, and a convergence flag.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceProfile {
    /// `values[i]` is `v_{i+1}`.
    pub values: Vec<f64>,
    pub sup: f64,
    /// Set to the last value when `|v_N - v_{N/2}|` dropped below 1e-3;
    /// reporting evidence only, never a verdict.
    pub converged_estimate: Option<f64>,
}

/// Evaluates `v_n` for `n = 1..=max_n` in one sweep.
pub fn variance_profile(model: &Model, max_n: u64) -> VarianceProfile {
    assert!(max_n >= 1);
    // E(S_n^2) = n c_0 + 2 (n C_{n-1} - K_{n-1}) with C_j, K_j prefix sums of
    // c_k and k c_k.
    let mut scan = AutocovarianceScan::new(model);
    let c0 = scan.value();
    let mut csum = Accumulator::new();
    let mut ksum = Accumulator::new();
    let mut values = Vec::with_capacity(max_n as usize);
    values.push(c0);
    for n in 2..=max_n {
        scan.step();
        let k = n - 1;
        let ck = scan.value();
        csum.add(ck);
        ksum.add(k as f64 * ck);
        let total = n as f64 * c0 + 2.0 * (n as f64 * csum.total() - ksum.total());
        values.push(total / n as f64);
    }
    let sup = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let converged_estimate = if max_n >= 2 {
        let half = values[(max_n as usize).div_ceil(2) - 1];
        let last = values[max_n as usize - 1];
        ((last - half).abs() < 1e-3).then_some(last)
    } else {
        None
    };
    VarianceProfile {
        values,
        sup,
        converged_estimate,
    }
}

/// Result of summing the autocovariance series.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SigmaSeries {
    pub sigma2: f64,
    /// Index of the last summed autocovariance.
    pub truncated_at: u64,
}

/// `sigma^2 = E(X_0^2) + 2 sum_{k>=1} E(X_0 X_k)`, truncated once the
/// geometric tail bound estimated from recent term ratios drops below `tol`.
///
/// Refuses (rather than Abel-sums) chains that are not totally ergodic: their
/// autocovariances do not decay and the series has no value.
pub fn sigma_series(model: &Model, tol: f64) -> Result<SigmaSeries, MomentsError> {
    assert!(tol > 0.0);
    let report = ergodicity_report(model.kernel(), model.pi())?;
    if !report.totally_ergodic {
        return Err(MomentsError::NonSummable { terms: 0 });
    }

    let mut scan = AutocovarianceScan::new(model);
    let mut acc = Accumulator::new();
    acc.add(scan.value());
    let mut recent: VecRing = VecRing::new(8);
    let mut prev_abs = f64::NAN;
    for k in 1..=SERIES_TERM_BUDGET {
        scan.step();
        let ck = scan.value();
        acc.add(2.0 * ck);
        let abs = ck.abs();
        if abs < 1e-300 {
            return Ok(SigmaSeries {
                sigma2: acc.total(),
                truncated_at: k as u64,
            });
        }
        if prev_abs.is_finite() && prev_abs > 0.0 {
            recent.push(abs / prev_abs);
        }
        prev_abs = abs;
        if k >= 4 {
            if let Some(ratio) = recent.max() {
                if ratio < 1.0 {
                    let tail_bound = 2.0 * abs * ratio / (1.0 - ratio);
                    if tail_bound < tol {
                        return Ok(SigmaSeries {
                            sigma2: acc.total(),
                            truncated_at: k as u64,
                        });
                    }
                }
            }
        }
    }
    Err(MomentsError::NonSummable {
        terms: SERIES_TERM_BUDGET,
    })
}

/// Fixed-capacity ring of recent ratios.
struct VecRing {
    buf: Vec<f64>,
    cap: usize,
    next: usize,
}

impl VecRing {
    fn new(cap: usize) -> Self {
        Self {
            buf: Vec::with_capacity(cap),
            cap,
            next: 0,
        }
    }

    fn push(&mut self, v: f64) {
        if self.buf.len() < self.cap {
            self.buf.push(v);
        } else {
            self.buf[self.next] = v;
            self.next = (self.next + 1) % self.cap;
        }
    }

    fn max(&self) -> Option<f64> {
        if self.buf.is_empty() {
            None
        } else {
            Some(self.buf.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        }
    }
}
