//! Exact dependence coefficients for finite chains: the absolute-regularity
//! sequence `beta_n`, its two-sided variant, two-point maximal correlation,
//! quantile integrals, and the per-horizon evaluation of every mixing-based
//! CLT condition.
//!
//! For finite sigma-fields the sup-over-events definitions collapse to sums
//! over atoms: `beta_n` is the pi-average of the total-variation distance
//! between `P^n(x,.)` and `pi`, and the beta between an atom partition and a
//! pair partition is half the L1 distance between the joint law and the
//! product law.

use serde::Serialize;
use thiserror::Error;

use crate::bridge::{variance_decomposition_profile, x0_two_sided_norm, DecompositionRow};
use crate::kernel::{PowerCache, StationaryLaw};
use crate::linalg::{compensated_sum, symmetric_eigenvalues, Accumulator, SquareMatrix};
use crate::moments::{variance_profile, Model, VarianceProfile};

#[derive(Debug, Error)]
pub enum MixingError {
    #[error("stationary law is degenerate or non-finite at state {state}")]
    SingularPi { state: usize },
    #[error("dependence inequality violated at n={n}: lhs {lhs} > rhs {rhs}; implementation bug")]
    InequalityViolated { n: u64, lhs: f64, rhs: f64 },
}

/// `beta_n = sum_x pi(x) * (1/2) sum_y |P^n(x,y) - pi(y)|`.
pub fn beta_coefficient(powers: &PowerCache, pi: &StationaryLaw, n: u64) -> f64 {
    assert!(n >= 1);
    let pn = powers.power(n);
    let s = powers.size();
    let mut acc = Accumulator::new();
    for x in 0..s {
        let w = pi.prob(x);
        if w == 0.0 {
            continue;
        }
        let tv = 0.5 * compensated_sum((0..s).map(|y| (pn.get(x, y) - pi.prob(y)).abs()));
        acc.add(w * tv);
    }
    acc.total()
}

/// `beta(sigma(xi_0), sigma(xi_{-n}, xi_n))`, from the exact three-point joint
/// law `p(x,z,y) = pi(x) P^n(x,z) P^n(z,y)` over `(xi_{-n}, xi_0, xi_n)`.
pub fn beta_two_sided(powers: &PowerCache, pi: &StationaryLaw, n: u64) -> f64 {
    assert!(n >= 1);
    let pn = powers.power(n);
    let p2n = powers.power(2 * n);
    let s = powers.size();
    let mut acc = Accumulator::new();
    for x in 0..s {
        let wx = pi.prob(x);
        if wx == 0.0 {
            continue;
        }
        for z in 0..s {
            let fwd = wx * pn.get(x, z);
            for y in 0..s {
                let joint = fwd * pn.get(z, y);
                let product = pi.prob(z) * wx * p2n.get(x, y);
                acc.add((joint - product).abs());
            }
        }
    }
    0.5 * acc.total()
}

/// Instance of the conditional-independence inequality with
/// `A = sigma(xi_{-n})`, `B = sigma(xi_0)`, `C = sigma(xi_n)`:
/// returns `(lhs, rhs) = (beta_two_sided(n), beta_n + beta_n + beta_{2n})`.
pub fn two_sided_beta_bound(
    powers: &PowerCache,
    pi: &StationaryLaw,
    n: u64,
) -> Result<(f64, f64), MixingError> {
    let lhs = beta_two_sided(powers, pi, n);
    let beta_n = beta_coefficient(powers, pi, n);
    let beta_2n = beta_coefficient(powers, pi, 2 * n);
    let rhs = 2.0 * beta_n + beta_2n;
    if lhs > rhs + 1e-9 {
        return Err(MixingError::InequalityViolated { n, lhs, rhs });
    }
    Ok((lhs, rhs))
}

/// Two-point maximal correlation between `xi_0` and `xi_n`: the second-largest
/// singular value of `Q(x,y) = sqrt(pi(x)) P^n(x,y) / sqrt(pi(y))` on the
/// support of `pi`.
///
/// The top singular pair is always the constants direction `u = sqrt(pi)`
/// with value 1, so `u u^T` is deflated before squaring; otherwise singular
/// values below the square root of the Jacobi noise floor would be lost.
pub fn rho_coefficient(
    powers: &PowerCache,
    pi: &StationaryLaw,
    n: u64,
) -> Result<f64, MixingError> {
    assert!(n >= 1);
    for x in 0..pi.len() {
        if !pi.prob(x).is_finite() || pi.prob(x) < 0.0 {
            return Err(MixingError::SingularPi { state: x });
        }
    }
    let support = pi.support();
    if support.is_empty() {
        return Err(MixingError::SingularPi { state: 0 });
    }
    if support.len() == 1 {
        return Ok(0.0);
    }
    let pn = powers.power(n);
    let m = support.len();
    let mut deflated = SquareMatrix::zeros(m);
    for (i, &x) in support.iter().enumerate() {
        let sx = pi.prob(x).sqrt();
        for (j, &y) in support.iter().enumerate() {
            let sy = pi.prob(y).sqrt();
            deflated.set(i, j, sx * pn.get(x, y) / sy - sx * sy);
        }
    }
    // Largest singular value of the deflated matrix via the symmetric PSD
    // product, symmetrized against rounding.
    let ddt = {
        let mut raw = deflated.mul(&deflated.transpose());
        for i in 0..m {
            for j in i + 1..m {
                let v = 0.5 * (raw.get(i, j) + raw.get(j, i));
                raw.set(i, j, v);
                raw.set(j, i, v);
            }
        }
        raw
    };
    let eigs = symmetric_eigenvalues(&ddt);
    Ok(eigs[0].max(0.0).sqrt().min(1.0))
}

/// Upper-tail quantile of `|X_0|` under `pi`: the step function
/// `Q(u) = inf { t : P(|X_0| > t) <= u }`, with exact squared integrals.
#[derive(Debug, Clone)]
pub struct QuantileFunction {
    /// Distinct |f| values, descending, with aggregated masses.
    atoms: Vec<(f64, f64)>,
}

impl QuantileFunction {
    pub fn new(observable: &[f64], pi: &StationaryLaw) -> Self {
        assert_eq!(observable.len(), pi.len());
        let mut pairs: Vec<(f64, f64)> = observable
            .iter()
            .enumerate()
            .filter(|&(x, _)| pi.prob(x) > 0.0)
            .map(|(x, &v)| (v.abs(), pi.prob(x)))
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        for (v, w) in pairs {
            match atoms.last_mut() {
                Some(last) if last.0 == v => last.1 += w,
                _ => atoms.push((v, w)),
            }
        }
        Self { atoms }
    }

    pub fn for_model(model: &Model) -> Self {
        Self::new(model.observable(), model.pi())
    }

    /// `Q(u)`: right-continuous, non-increasing.
    pub fn evaluate(&self, u: f64) -> f64 {
        let mut cum = 0.0;
        for &(v, w) in &self.atoms {
            cum += w;
            if u < cum {
                return v;
            }
        }
        0.0
    }

    /// `int_0^beta Q^2(u) du`, exact over the step function.
    pub fn integral_sq(&self, beta: f64) -> f64 {
        assert!((0.0..=1.0).contains(&beta), "beta must lie in [0,1]");
        let mut acc = Accumulator::new();
        let mut lower = 0.0;
        for &(v, w) in &self.atoms {
            let upper = lower + w;
            let overlap = beta.min(upper) - lower;
            if overlap > 0.0 {
                acc.add(v * v * overlap);
            }
            if upper >= beta {
                break;
            }
            lower = upper;
        }
        acc.total()
    }
}

/// `int_0^beta Q^2(u) du` for the model's observable.
pub fn quantile_integral(model: &Model, beta: f64) -> f64 {
    QuantileFunction::for_model(model).integral_sq(beta)
}

/// One horizon of the mixing profile.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MixingRow {
    pub n: u64,
    pub beta: f64,
    pub beta_two_sided: f64,
    pub rho: f64,
    /// `n * int_0^{beta_n} Q^2`.
    pub n_qint: f64,
    /// Running sum of `int_0^{beta_n} Q^2`.
    pub qint_sum: f64,
    /// `|E(X_0 | xi_{-n}, xi_n)|^2`.
    pub x0norm: f64,
    pub n_x0norm: f64,
    /// Running sum of `x0norm`.
    pub x0norm_sum: f64,
    /// Pointwise Rio chain: `x0norm <= 2 qint(beta2s) <= 2 qint(min(1, 3 beta))`.
    pub rio_ok: bool,
}

/// Dependence coefficients and condition evaluations for `n = 1..=max_n`.
#[derive(Debug, Clone, Serialize)]
pub struct MixingProfile {
    pub horizon: u64,
    pub rows: Vec<MixingRow>,
}

impl MixingProfile {
    /// CSV: one row per n, the column set consumed by external plotters.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "n,beta,beta2s,rho,n_qint,qint_sum,x0norm,n_x0norm,x0norm_sum,rio_ok"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.n,
                crate::fmt_f64(r.beta),
                crate::fmt_f64(r.beta_two_sided),
                crate::fmt_f64(r.rho),
                crate::fmt_f64(r.n_qint),
                crate::fmt_f64(r.qint_sum),
                crate::fmt_f64(r.x0norm),
                crate::fmt_f64(r.n_x0norm),
                crate::fmt_f64(r.x0norm_sum),
                r.rio_ok
            )?;
        }
        Ok(())
    }
}

/// Assembles the full profile, enforcing the internal inequalities
/// (monotonicity of beta, the conditional-independence bound, the Rio chain)
/// as bug detectors.
pub fn clt_condition_report(model: &Model, max_n: u64) -> Result<MixingProfile, MixingError> {
    assert!(max_n >= 1);
    let powers = model.powers();
    let pi = model.pi();
    let quantile = QuantileFunction::for_model(model);
    let mut rows = Vec::with_capacity(max_n as usize);
    let mut qint_sum = Accumulator::new();
    let mut x0_sum = Accumulator::new();
    let mut prev_beta = f64::INFINITY;
    for n in 1..=max_n {
        let beta = beta_coefficient(powers, pi, n);
        if beta > prev_beta + 1e-12 {
            return Err(MixingError::InequalityViolated {
                n,
                lhs: beta,
                rhs: prev_beta,
            });
        }
        prev_beta = beta;
        let (beta2s, _) = two_sided_beta_bound(powers, pi, n)?;
        let rho = rho_coefficient(powers, pi, n)?;
        let qint = quantile.integral_sq(beta.min(1.0));
        qint_sum.add(qint);
        let x0norm = x0_two_sided_norm(model, n);
        x0_sum.add(x0norm);
        let rio_mid = 2.0 * quantile.integral_sq(beta2s.min(1.0));
        let rio_outer = 2.0 * quantile.integral_sq((3.0 * beta).min(1.0));
        let rio_ok = x0norm <= rio_mid + 1e-9 && rio_mid <= rio_outer + 1e-9;
        if !rio_ok {
            return Err(MixingError::InequalityViolated {
                n,
                lhs: x0norm,
                rhs: rio_mid,
            });
        }
        rows.push(MixingRow {
            n,
            beta,
            beta_two_sided: beta2s,
            rho,
            n_qint: n as f64 * qint,
            qint_sum: qint_sum.total(),
            x0norm,
            n_x0norm: n as f64 * x0norm,
            x0norm_sum: x0_sum.total(),
            rio_ok,
        });
    }
    Ok(MixingProfile {
        horizon: max_n,
        rows,
    })
}

/// Three-valued evidence verdict from a finite horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Pass => write!(f, "PASS"),
            Verdict::Fail => write!(f, "FAIL"),
            Verdict::Inconclusive => write!(f, "INCONCLUSIVE"),
        }
    }
}

/// The CLT sufficient conditions the dossier evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionId {
    /// `sup_n E(S_n^2)/n` finite.
    VarianceBounded,
    /// `(1/n) |E(S_n | xi_0, xi_n)|^2 -> 0`.
    EndpointProjectionVanishes,
    /// `n |E(X_0 | xi_{-n}, xi_n)|^2 -> 0`.
    TwoSidedX0Vanishes,
    /// `sum_k |E(X_0 | xi_{-k}, xi_k)|^2` finite.
    X0NormsSummable,
    /// `n int_0^{beta_n} Q^2 -> 0`.
    BetaQuantileVanishes,
    /// `sum_n int_0^{beta_n} Q^2` finite.
    BetaQuantileSummable,
}

impl ConditionId {
    pub fn name(self) -> &'static str {
        match self {
            ConditionId::VarianceBounded => "variance_bounded",
            ConditionId::EndpointProjectionVanishes => "endpoint_projection_vanishes",
            ConditionId::TwoSidedX0Vanishes => "two_sided_x0_vanishes",
            ConditionId::X0NormsSummable => "x0_norms_summable",
            ConditionId::BetaQuantileVanishes => "beta_quantile_vanishes",
            ConditionId::BetaQuantileSummable => "beta_quantile_summable",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionVerdict {
    pub id: ConditionId,
    pub verdict: Verdict,
    pub evidence: String,
}

/// Everything the `conditions` report carries: the mixing profile, the
/// variance and projection profiles, and finite-horizon verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionsDossier {
    pub profile: MixingProfile,
    pub variance: VarianceProfile,
    pub decomposition: Vec<DecompositionRow>,
    pub verdicts: Vec<ConditionVerdict>,
}

/// Verdict for a sequence that should vanish: compares the endpoint against
/// the midpoint of the computed range. Evidence only — a 64-term window
/// cannot prove a limit.
pub fn vanishing_trend(seq: &[f64]) -> Verdict {
    let n = seq.len();
    if n < 2 {
        return Verdict::Inconclusive;
    }
    let last = seq[n - 1];
    let mid = seq[n.div_ceil(2) - 1];
    if last.abs() <= 1e-12 || last <= 0.75 * mid {
        Verdict::Pass
    } else if last >= 1.25 * mid && last > 1e-9 {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    }
}

/// Verdict for a partial-sum sequence that should converge: compares the last
/// two quarter-window increments.
pub fn summability_trend(partial_sums: &[f64]) -> Verdict {
    let n = partial_sums.len();
    if n < 4 {
        return Verdict::Inconclusive;
    }
    let last = partial_sums[n - 1];
    let q3 = partial_sums[(3 * n).div_ceil(4) - 1];
    let half = partial_sums[n.div_ceil(2) - 1];
    let tail1 = last - q3;
    let tail0 = q3 - half;
    if tail1.abs() <= 1e-12 {
        return Verdict::Pass;
    }
    if tail0.abs() <= 1e-300 {
        return Verdict::Pass;
    }
    let ratio = tail1 / tail0;
    if ratio <= 0.6 {
        Verdict::Pass
    } else if ratio >= 0.95 {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    }
}

/// Boundedness evidence: a sequence converging to a finite sup grows by a few
/// percent over a doubling of the horizon, a linearly divergent one roughly
/// doubles.
fn bounded_trend(values: &[f64]) -> Verdict {
    let n = values.len();
    if n < 2 {
        return Verdict::Inconclusive;
    }
    let last = values[n - 1];
    let mid = values[n.div_ceil(2) - 1];
    if last.abs() <= 1e-12 {
        return Verdict::Pass;
    }
    if mid.abs() <= 1e-300 {
        return Verdict::Inconclusive;
    }
    let ratio = last / mid;
    if ratio >= 1.5 && last > 1e-9 {
        Verdict::Fail
    } else if ratio <= 1.1 {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    }
}

/// Assembles profiles and verdicts for every condition over `n <= max_n`.
pub fn conditions_dossier(model: &Model, max_n: u64) -> Result<ConditionsDossier, crate::Error> {
    let profile = clt_condition_report(model, max_n)?;
    let variance = variance_profile(model, max_n);
    let decomposition = variance_decomposition_profile(model, max_n)?;

    let projection: Vec<f64> = decomposition.iter().map(|r| r.projection_norm).collect();
    let n_x0: Vec<f64> = profile.rows.iter().map(|r| r.n_x0norm).collect();
    let x0_sums: Vec<f64> = profile.rows.iter().map(|r| r.x0norm_sum).collect();
    let n_qint: Vec<f64> = profile.rows.iter().map(|r| r.n_qint).collect();
    let qint_sums: Vec<f64> = profile.rows.iter().map(|r| r.qint_sum).collect();

    let half = (max_n as usize).div_ceil(2);
    let pair = |seq: &[f64]| {
        format!(
            "value[n={}]={:e}, value[n={}]={:e}",
            max_n,
            seq[seq.len() - 1],
            half,
            seq[half - 1]
        )
    };
    let verdicts = vec![
        ConditionVerdict {
            id: ConditionId::VarianceBounded,
            verdict: bounded_trend(&variance.values),
            evidence: format!("sup={:e}, {}", variance.sup, pair(&variance.values)),
        },
        ConditionVerdict {
            id: ConditionId::EndpointProjectionVanishes,
            verdict: vanishing_trend(&projection),
            evidence: pair(&projection),
        },
        ConditionVerdict {
            id: ConditionId::TwoSidedX0Vanishes,
            verdict: vanishing_trend(&n_x0),
            evidence: pair(&n_x0),
        },
        ConditionVerdict {
            id: ConditionId::X0NormsSummable,
            verdict: summability_trend(&x0_sums),
            evidence: pair(&x0_sums),
        },
        ConditionVerdict {
            id: ConditionId::BetaQuantileVanishes,
            verdict: vanishing_trend(&n_qint),
            evidence: pair(&n_qint),
        },
        ConditionVerdict {
            id: ConditionId::BetaQuantileSummable,
            verdict: summability_trend(&qint_sums),
            evidence: pair(&qint_sums),
        },
    ];
    Ok(ConditionsDossier {
        profile,
        variance,
        decomposition,
        verdicts,
    })
}
