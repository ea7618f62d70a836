//! Named model constructors: two-state chains (which cover the i.i.d. and
//! flip-flop cases), truncated renewal age chains with polynomial-log jump
//! tails, tensor products of independent chains, and block-diagonal
//! composites for the non-ergodic scenarios.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{stationary_law, Kernel, KernelError, StationaryLaw};
use crate::linalg::compensated_sum;
use crate::moments::{center_observable, Model, MomentsError};

/// Largest tensor-product state space the constructors will build.
pub const PRODUCT_STATE_LIMIT: usize = 4096;

#[derive(Debug, Error)]
pub enum GalleryError {
    #[error("degenerate chain: a = b = 0 has no transitions")]
    DegenerateChain,
    #[error("parameter {name} = {value} outside {expected}")]
    ParameterOutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("product state space {size} exceeds the {limit} limit")]
    StateSpaceTooLarge { size: usize, limit: usize },
    #[error("component weights invalid: {detail}")]
    BadWeights { detail: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Moments(#[from] MomentsError),
}

/// A constructed model with its provenance and, for truncated countable
/// chains, the jump mass the truncation discarded.
#[derive(Debug, Clone)]
pub struct GalleryModel {
    pub name: String,
    pub model: Model,
    pub tail_mass: Option<f64>,
}

/// Kernel `[[1-a, a], [b, 1-b]]` with the closed-form stationary law
/// `(b, a)/(a+b)` and the observable centered from `(f0, f1)`.
pub fn two_state(a: f64, b: f64, f0: f64, f1: f64) -> Result<GalleryModel, GalleryError> {
    for (name, value) in [("a", a), ("b", b)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(GalleryError::ParameterOutOfRange {
                name,
                value,
                expected: "[0, 1]",
            });
        }
    }
    if a == 0.0 && b == 0.0 {
        return Err(GalleryError::DegenerateChain);
    }
    let kernel = Kernel::new(vec![vec![1.0 - a, a], vec![b, 1.0 - b]])?;
    let pi = StationaryLaw::from_probs(vec![b / (a + b), a / (a + b)]);
    let f = center_observable(&[f0, f1], &pi)?;
    let model = Model::with_law(kernel, pi, f)?;
    Ok(GalleryModel {
        name: format!("two_state(a={a},b={b})"),
        model,
        tail_mass: None,
    })
}

/// The i.i.d. Rademacher chain: `two_state(0.5, 0.5, -1, 1)`.
pub fn iid_rademacher() -> GalleryModel {
    let mut g = two_state(0.5, 0.5, -1.0, 1.0).expect("static parameters");
    g.name = "iid_rademacher".into();
    g
}

/// The deterministic period-2 chain: `two_state(1, 1, -1, 1)`.
pub fn flip_flop() -> GalleryModel {
    let mut g = two_state(1.0, 1.0, -1.0, 1.0).expect("static parameters");
    g.name = "flip_flop".into();
    g
}

fn renewal_raw(i: u64, log_exponent: u32) -> f64 {
    let i = i as f64;
    let log = (i + 1.0).ln();
    1.0 / (2.0 * i * i * i * log.powi(log_exponent as i32))
}

/// Renewal age chain on `{0..N}`: state `i >= 1` steps down deterministically,
/// state 0 jumps to `i` with probability proportional to
/// `1/(2 i^3 log(i+1)^e)` scaled so the total jump mass is 1/2, leaving
/// `P(0 -> 0) = 1/2`. The written weights exceed unit mass at `i = 1`, so the
/// scaling constant is part of the construction; only the tail shape matters
/// for the mixing rate. The discarded untruncated jump mass is reported.
pub fn truncated_renewal(size: u64, log_exponent: u32) -> Result<GalleryModel, GalleryError> {
    if size < 2 {
        return Err(GalleryError::ParameterOutOfRange {
            name: "N",
            value: size as f64,
            expected: "N >= 2",
        });
    }
    if !(1..=2).contains(&log_exponent) {
        return Err(GalleryError::ParameterOutOfRange {
            name: "log_exponent",
            value: log_exponent as f64,
            expected: "{1, 2}",
        });
    }
    let n = size as usize;
    let partial = compensated_sum((1..=size).map(|i| renewal_raw(i, log_exponent)));
    let kappa = 0.5 / partial;

    let states = n + 1;
    let mut rows = vec![vec![0.0; states]; states];
    for i in 1..=n {
        rows[0][i] = kappa * renewal_raw(i as u64, log_exponent);
    }
    // Exact complement keeps row 0 on the simplex.
    let jump_mass = compensated_sum(rows[0].iter().copied());
    rows[0][0] = 1.0 - jump_mass;
    for (i, row) in rows.iter_mut().enumerate().skip(1) {
        row[i - 1] = 1.0;
    }
    let kernel = Kernel::new(rows)?;
    let pi = stationary_law(&kernel, 1e-12)?.law;
    let mut raw_f = vec![0.0; states];
    raw_f[0] = 1.0;
    let f = center_observable(&raw_f, &pi)?;
    let model = Model::with_law(kernel, pi, f)?;

    // Untruncated jump mass beyond N, under the same normalization convention
    // applied to the full series.
    let mut full = partial;
    let mut tail = 0.0;
    let mut i = size + 1;
    loop {
        let term = renewal_raw(i, log_exponent);
        full += term;
        tail += term;
        if term < 1e-18 || i > 10_000_000 {
            break;
        }
        i += 1;
    }
    let tail_mass = 0.5 * tail / full;

    Ok(GalleryModel {
        name: format!("truncated_renewal(N={size},e={log_exponent})"),
        model,
        tail_mass: Some(tail_mass),
    })
}

/// Tensor product of two independent chains: state `(y, z)` maps to index
/// `y * S_z + z`, the components evolve independently, and the observable is
/// the product `f_Y(y), f_Z(z)`, centered by independence.
pub fn product_chain(left: &Model, right: &Model) -> Result<GalleryModel, GalleryError> {
    let sy = left.size();
    let sz = right.size();
    let size = sy * sz;
    if size > PRODUCT_STATE_LIMIT {
        return Err(GalleryError::StateSpaceTooLarge {
            size,
            limit: PRODUCT_STATE_LIMIT,
        });
    }
    let mut rows = vec![vec![0.0; size]; size];
    let mut probs = vec![0.0; size];
    let mut f = vec![0.0; size];
    for y in 0..sy {
        for z in 0..sz {
            let from = y * sz + z;
            probs[from] = left.pi().prob(y) * right.pi().prob(z);
            f[from] = left.observable()[y] * right.observable()[z];
            for (y2, &py) in left.kernel().row(y).iter().enumerate() {
                if py == 0.0 {
                    continue;
                }
                for (z2, &pz) in right.kernel().row(z).iter().enumerate() {
                    rows[from][y2 * sz + z2] = py * pz;
                }
            }
        }
    }
    let kernel = Kernel::new(rows)?;
    let pi = StationaryLaw::from_probs(probs);
    let model = Model::with_law(kernel, pi, f)?;
    Ok(GalleryModel {
        name: format!("product({sy}x{sz})"),
        model,
        tail_mass: None,
    })
}

/// Disjoint union of component chains with the given stationary weights; the
/// concatenated observable is recentered globally.
pub fn block_diagonal(components: &[(f64, Model)]) -> Result<GalleryModel, GalleryError> {
    if components.is_empty() {
        return Err(GalleryError::BadWeights {
            detail: "no components".into(),
        });
    }
    for &(w, _) in components {
        if w.is_nan() || w <= 0.0 {
            return Err(GalleryError::BadWeights {
                detail: format!("non-positive weight {w}"),
            });
        }
    }
    let total: f64 = compensated_sum(components.iter().map(|&(w, _)| w));
    if (total - 1.0).abs() > 1e-9 {
        return Err(GalleryError::BadWeights {
            detail: format!("weights sum to {total}"),
        });
    }
    let size: usize = components.iter().map(|(_, m)| m.size()).sum();
    let mut rows = vec![vec![0.0; size]; size];
    let mut probs = vec![0.0; size];
    let mut raw_f = vec![0.0; size];
    let mut offset = 0;
    for (w, m) in components {
        for x in 0..m.size() {
            probs[offset + x] = w * m.pi().prob(x);
            raw_f[offset + x] = m.observable()[x];
            for (y, &p) in m.kernel().row(x).iter().enumerate() {
                rows[offset + x][offset + y] = p;
            }
        }
        offset += m.size();
    }
    let kernel = Kernel::new(rows)?;
    let pi = StationaryLaw::from_probs(probs);
    let f = center_observable(&raw_f, &pi)?;
    let model = Model::with_law(kernel, pi, f)?;
    Ok(GalleryModel {
        name: format!("block_diagonal({})", components.len()),
        model,
        tail_mass: None,
    })
}

/// Declarative preset addressable from configuration files. Parsing is
/// strict: unknown keys and unknown preset names are rejected.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "gallery", rename_all = "snake_case")]
pub enum GallerySpec {
    TwoState {
        a: f64,
        b: f64,
        f: [f64; 2],
    },
    TruncatedRenewal {
        #[serde(rename = "N")]
        size: u64,
        log_exponent: u32,
    },
    Product {
        left: Box<GallerySpec>,
        right: Box<GallerySpec>,
    },
    BlockDiagonal {
        components: Vec<WeightedSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedSpec {
    pub weight: f64,
    pub spec: GallerySpec,
}

impl GallerySpec {
    pub fn build(&self) -> Result<GalleryModel, GalleryError> {
        match self {
            GallerySpec::TwoState { a, b, f } => two_state(*a, *b, f[0], f[1]),
            GallerySpec::TruncatedRenewal { size, log_exponent } => {
                truncated_renewal(*size, *log_exponent)
            }
            GallerySpec::Product { left, right } => {
                let l = left.build()?;
                let r = right.build()?;
                product_chain(&l.model, &r.model)
            }
            GallerySpec::BlockDiagonal { components } => {
                let mut built = Vec::with_capacity(components.len());
                for c in components {
                    built.push((c.weight, c.spec.build()?.model));
                }
                block_diagonal(&built)
            }
        }
    }
}

impl<'de> Deserialize<'de> for GallerySpec {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        use serde::de::Error as DeError;
        let value = serde_json::Value::deserialize(deserializer)?;
        let mut obj = match value {
            serde_json::Value::Object(o) => o,
            other => {
                return Err(DeError::custom(format!(
                    "gallery spec must be an object, got {other}"
                )))
            }
        };
        let tag = obj
            .remove("gallery")
            .ok_or_else(|| DeError::custom("gallery spec is missing the \"gallery\" key"))?;
        let tag = tag
            .as_str()
            .ok_or_else(|| DeError::custom("\"gallery\" must be a string"))?
            .to_owned();
        let rest = serde_json::Value::Object(obj);
        match tag.as_str() {
            "two_state" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct P {
                    a: f64,
                    b: f64,
                    f: [f64; 2],
                }
                let p: P = serde_json::from_value(rest).map_err(DeError::custom)?;
                Ok(GallerySpec::TwoState {
                    a: p.a,
                    b: p.b,
                    f: p.f,
                })
            }
            "truncated_renewal" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct P {
                    #[serde(rename = "N")]
                    size: u64,
                    log_exponent: u32,
                }
                let p: P = serde_json::from_value(rest).map_err(DeError::custom)?;
                Ok(GallerySpec::TruncatedRenewal {
                    size: p.size,
                    log_exponent: p.log_exponent,
                })
            }
            "product" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct P {
                    left: Box<GallerySpec>,
                    right: Box<GallerySpec>,
                }
                let p: P = serde_json::from_value(rest).map_err(DeError::custom)?;
                Ok(GallerySpec::Product {
                    left: p.left,
                    right: p.right,
                })
            }
            "block_diagonal" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct P {
                    components: Vec<WeightedSpec>,
                }
                let p: P = serde_json::from_value(rest).map_err(DeError::custom)?;
                Ok(GallerySpec::BlockDiagonal {
                    components: p.components,
                })
            }
            other => Err(DeError::custom(format!("unknown gallery preset {other:?}"))),
        }
    }
}
