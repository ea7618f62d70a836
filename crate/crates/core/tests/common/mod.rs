//! Shared oracle for the integration suites: exhaustive path enumeration and
//! naive matrix powers, written against the raw model accessors only. Nothing
//! here touches the power cache, the bridge sweeps, or any other production
//! code path whose output it is used to check.
#![allow(dead_code)]

use cltlab_core::gallery::{self, GalleryModel};
use cltlab_core::moments::Model;

pub const SEED: u64 = 987654321;

/// Neumaier-compensated sum, written independently of the library's
/// accumulator so the oracle shares no code with what it checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Visits every positive-probability path of `steps` kernel steps with its
/// stationary probability, by direct product of kernel entries.
pub fn enumerate_paths(model: &Model, steps: usize, visit: &mut impl FnMut(&[usize], f64)) {
    fn descend(
        model: &Model,
        depth: usize,
        steps: usize,
        path: &mut Vec<usize>,
        prob: f64,
        visit: &mut impl FnMut(&[usize], f64),
    ) {
        if depth == steps {
            visit(path, prob);
            return;
        }
        let cur = *path.last().unwrap();
        for next in 0..model.size() {
            let p = model.kernel().prob(cur, next);
            if p > 0.0 {
                path.push(next);
                descend(model, depth + 1, steps, path, prob * p, visit);
                path.pop();
            }
        }
    }
    for start in 0..model.size() {
        let p0 = model.pi().prob(start);
        if p0 > 0.0 {
            let mut path = vec![start];
            descend(model, 0, steps, &mut path, p0, visit);
        }
    }
}

/// Naive `P^n` by repeated row-by-row products.
pub fn naive_power(model: &Model, n: u64) -> Vec<Vec<f64>> {
    let s = model.size();
    let mut out: Vec<Vec<f64>> = (0..s)
        .map(|i| (0..s).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..n {
        let mut next = vec![vec![0.0; s]; s];
        for i in 0..s {
            for k in 0..s {
                let a = out[i][k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..s {
                    next[i][j] += a * model.kernel().prob(k, j);
                }
            }
        }
        out = next;
    }
    out
}

pub fn path_sum(model: &Model, path: &[usize]) -> f64 {
    path[1..].iter().map(|&s| model.observable()[s]).sum()
}

/// `E(S_n^2)` by enumeration.
pub fn oracle_partial_sum_variance(model: &Model, n: u64) -> f64 {
    let mut total = Kahan::default();
    enumerate_paths(model, n as usize, &mut |path, prob| {
        let s = path_sum(model, path);
        total.add(prob * s * s);
    });
    total.total()
}

/// Conditional means `E(S_n | xi_0 = x, xi_n = y)` and the pair masses, by
/// enumeration. Unreachable pairs hold `None`.
pub fn oracle_bridge_table(model: &Model, n: u64) -> (Vec<Vec<Option<f64>>>, Vec<Vec<f64>>) {
    let s = model.size();
    let mut mass = vec![vec![Kahan::default(); s]; s];
    let mut sums = vec![vec![Kahan::default(); s]; s];
    enumerate_paths(model, n as usize, &mut |path, prob| {
        let (x, y) = (path[0], *path.last().unwrap());
        mass[x][y].add(prob);
        sums[x][y].add(prob * path_sum(model, path));
    });
    let mass: Vec<Vec<f64>> = mass
        .into_iter()
        .map(|row| row.into_iter().map(|k| k.total()).collect())
        .collect();
    let table = (0..s)
        .map(|x| {
            (0..s)
                .map(|y| (mass[x][y] > 0.0).then(|| sums[x][y].total() / mass[x][y]))
                .collect()
        })
        .collect();
    (table, mass)
}

/// `(1/n) E (S_n - E(S_n|endpoints))^2` directly from the enumerated
/// conditional means — no projection identity involved.
pub fn oracle_centered_sigma(model: &Model, n: u64) -> f64 {
    let (table, _) = oracle_bridge_table(model, n);
    let mut total = Kahan::default();
    enumerate_paths(model, n as usize, &mut |path, prob| {
        let b = table[path[0]][*path.last().unwrap()].expect("sampled pair must be reachable");
        let d = path_sum(model, path) - b;
        total.add(prob * d * d);
    });
    total.total() / n as f64
}

/// `(1/n) E (E(S_n|endpoints))^2` from the enumerated table.
pub fn oracle_projection_norm(model: &Model, n: u64) -> f64 {
    let (table, mass) = oracle_bridge_table(model, n);
    let s = model.size();
    let mut total = Kahan::default();
    for x in 0..s {
        for y in 0..s {
            if let Some(b) = table[x][y] {
                total.add(mass[x][y] * b * b);
            }
        }
    }
    total.total() / n as f64
}

/// `|E(X_0 | xi_{-n}, xi_n)|^2` from the three-variable joint law
/// `pi(x) P^n(x,z) P^n(z,y)` with naive powers.
pub fn oracle_x0_two_sided_norm(model: &Model, n: u64) -> f64 {
    let s = model.size();
    let pn = naive_power(model, n);
    let mut total = 0.0;
    for x in 0..s {
        let wx = model.pi().prob(x);
        if wx == 0.0 {
            continue;
        }
        for y in 0..s {
            let mut mass = 0.0;
            let mut mean = 0.0;
            for z in 0..s {
                let p = pn[x][z] * pn[z][y];
                mass += p;
                mean += p * model.observable()[z];
            }
            if mass > 0.0 {
                let g = mean / mass;
                total += wx * mass * g * g;
            }
        }
    }
    total
}

/// `beta_n` by the direct half-L1 formula with naive powers.
pub fn oracle_beta(model: &Model, n: u64) -> f64 {
    let s = model.size();
    let pn = naive_power(model, n);
    let mut total = 0.0;
    for x in 0..s {
        let wx = model.pi().prob(x);
        if wx == 0.0 {
            continue;
        }
        let tv: f64 = (0..s).map(|y| (pn[x][y] - model.pi().prob(y)).abs()).sum();
        total += wx * 0.5 * tv;
    }
    total
}

/// Two-sided beta from the explicit atom sums with naive powers.
pub fn oracle_beta_two_sided(model: &Model, n: u64) -> f64 {
    let s = model.size();
    let pn = naive_power(model, n);
    let p2n = naive_power(model, 2 * n);
    let mut total = 0.0;
    for x in 0..s {
        let wx = model.pi().prob(x);
        if wx == 0.0 {
            continue;
        }
        for z in 0..s {
            for y in 0..s {
                let joint = wx * pn[x][z] * pn[z][y];
                let product = model.pi().prob(z) * wx * p2n[x][y];
                total += (joint - product).abs();
            }
        }
    }
    0.5 * total
}

/// `E(R_u(m)^2)` by enumeration, with the conditional means themselves taken
/// from the enumerated bridge table.
pub fn oracle_remainder_second_moment(model: &Model, m: u64, u: u64) -> f64 {
    let (table, _) = oracle_bridge_table(model, m);
    let sqrt_m = (m as f64).sqrt();
    let mut total = Kahan::default();
    enumerate_paths(model, (u * m) as usize, &mut |path, prob| {
        let mut r = 0.0;
        for k in 0..u {
            let x = path[(k * m) as usize];
            let y = path[((k + 1) * m) as usize];
            r += table[x][y].expect("reachable") / sqrt_m;
        }
        total.add(prob * r * r);
    });
    total.total()
}

/// `E(M_u R_u)` by enumeration against the enumerated bridge table.
pub fn oracle_orthogonality(model: &Model, m: u64, u: u64) -> f64 {
    let (table, _) = oracle_bridge_table(model, m);
    let sqrt_m = (m as f64).sqrt();
    let mut total = Kahan::default();
    enumerate_paths(model, (u * m) as usize, &mut |path, prob| {
        let mut mart = 0.0;
        let mut rem = 0.0;
        for k in 0..u {
            let x = path[(k * m) as usize];
            let y = path[((k + 1) * m) as usize];
            let start = (k * m) as usize;
            let end = ((k + 1) * m) as usize;
            let yk: f64 = path[start + 1..=end]
                .iter()
                .map(|&s| model.observable()[s])
                .sum();
            let b = table[x][y].expect("reachable");
            mart += (yk - b) / sqrt_m;
            rem += b / sqrt_m;
        }
        total.add(prob * mart * rem);
    });
    total.total()
}

// Canonical model sets shared by the suites.

pub fn workhorse() -> GalleryModel {
    let mut g = gallery::two_state(0.25, 0.25, -1.0, 1.0).unwrap();
    g.name = "two_state_workhorse".into();
    g
}

pub fn asymmetric() -> GalleryModel {
    // pi = (0.6, 0.4); the observable is centered with E(X^2) just under 1 so
    // its finite-horizon variance bias matches the other unit-scale chains.
    let mut g = gallery::two_state(0.2, 0.3, 0.8, -1.2).unwrap();
    g.name = "two_state_asymmetric".into();
    g
}

pub fn product_small() -> GalleryModel {
    let y = gallery::two_state(0.25, 0.25, -1.0, 1.0).unwrap();
    let z = gallery::two_state(0.125, 0.125, -1.0, 1.0).unwrap();
    let mut g = gallery::product_chain(&y.model, &z.model).unwrap();
    g.name = "product_4state".into();
    g
}

pub fn block_mixture() -> GalleryModel {
    let a = gallery::two_state(0.25, 0.25, -1.0, 1.0).unwrap();
    let b = gallery::iid_rademacher();
    let mut g = gallery::block_diagonal(&[(0.5, a.model), (0.5, b.model)]).unwrap();
    g.name = "block_mixture".into();
    g
}

/// Chains small enough for exhaustive path enumeration (S <= 4).
pub fn oracle_gallery() -> Vec<GalleryModel> {
    vec![
        workhorse(),
        gallery::iid_rademacher(),
        gallery::flip_flop(),
        asymmetric(),
        product_small(),
        block_mixture(),
    ]
}

/// The full acceptance set, including the truncated renewal chains.
pub fn acceptance_gallery() -> Vec<GalleryModel> {
    let mut models = oracle_gallery();
    models.push(gallery::truncated_renewal(64, 2).unwrap());
    models.push(gallery::truncated_renewal(64, 1).unwrap());
    models
}

/// Acceptance set restricted to the exact-mode budget (S <= 64); the renewal
/// chains are sized down one state to fit.
pub fn exact_budget_gallery() -> Vec<GalleryModel> {
    let mut models = oracle_gallery();
    models.push(gallery::truncated_renewal(63, 2).unwrap());
    models.push(gallery::truncated_renewal(63, 1).unwrap());
    models
}

pub fn assert_close(got: f64, expected: f64, tol: f64, context: &str) {
    assert!(
        (got - expected).abs() <= tol,
        "{context}: got {got}, expected {expected} (tol {tol})"
    );
}
