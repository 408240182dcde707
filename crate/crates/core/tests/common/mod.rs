#![allow(dead_code)]

use std::collections::BTreeMap;

use pivotal::{ScaledState, WeightVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random valid weights for `(n, k)`: positive draws scaled to sum `k`, with
/// every coordinate above 1 capped and the remainder rescaled. Occasionally
/// plants exact zeros and exact `1/k` weights.
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize, k: usize) -> WeightVector {
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    if n > k + 1 && rng.random_bool(0.2) {
        let i = rng.random_range(0..n);
        x[i] = 0.0;
    }
    let mut fixed = vec![false; n];
    if k > 1 && rng.random_bool(0.2) {
        let i = rng.random_range(0..n);
        if x[i] > 0.0 {
            fixed[i] = true;
        }
    }
    loop {
        let ones = fixed.iter().filter(|&&f| f).count() as f64;
        let free: f64 = x.iter().zip(&fixed).filter(|(_, &f)| !f).map(|(v, _)| v).sum();
        let scale = (k as f64 - ones) / free;
        let mut capped = false;
        for i in 0..n {
            if fixed[i] {
                x[i] = 1.0;
            } else {
                x[i] *= scale;
                if x[i] >= 1.0 {
                    fixed[i] = true;
                    capped = true;
                }
            }
        }
        if !capped {
            break;
        }
    }
    let w: Vec<f64> = x.iter().map(|v| v / k as f64).collect();
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|v| v / total).collect();
    WeightVector::new(w, k).expect("generated weights are valid")
}

pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn random_subset(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).filter(|_| rng.random_bool(0.5)).collect()
}

const EDGE: f64 = 1e-12;

fn undecided(v: f64) -> bool {
    v > EDGE && v < 1.0 - EDGE
}

/// Exact sample distribution of the in-order pivotal procedure, by direct
/// recursion over both outcomes of every step. Written independently of the
/// library's sampler.
pub fn in_order_oracle(x0: &[f64], order: &[usize]) -> BTreeMap<u32, f64> {
    fn recurse(x: &mut Vec<f64>, order: &[usize], prob: f64, out: &mut BTreeMap<u32, f64>) {
        let mut active = order.iter().copied().filter(|&i| undecided(x[i]));
        let (Some(i), Some(j)) = (active.next(), active.next()) else {
            let key = x
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.5)
                .fold(0u32, |acc, (i, _)| acc | (1 << i));
            *out.entry(key).or_insert(0.0) += prob;
            return;
        };
        let (a, b) = (x[i], x[j]);
        let s = a + b;
        let branches = if s < 1.0 {
            [((s, 0.0), a / s), ((0.0, s), b / s)]
        } else {
            let r = if s - 1.0 <= EDGE { 0.0 } else { s - 1.0 };
            [((1.0, r), (1.0 - b) / (2.0 - s)), ((r, 1.0), (1.0 - a) / (2.0 - s))]
        };
        for ((na, nb), p) in branches {
            x[i] = na;
            x[j] = nb;
            recurse(x, order, prob * p, out);
        }
        x[i] = a;
        x[j] = b;
    }
    let mut x = x0.to_vec();
    let mut out = BTreeMap::new();
    recurse(&mut x, order, 1.0, &mut out);
    out
}

pub fn tv_distance(a: &BTreeMap<u32, f64>, b: &BTreeMap<u32, f64>) -> f64 {
    let mut keys: Vec<u32> = a.keys().chain(b.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Marginal inclusion probabilities from a sample distribution.
pub fn marginals(pmf: &BTreeMap<u32, f64>, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (&key, &p) in pmf {
        for (i, slot) in out.iter_mut().enumerate() {
            if key & (1 << i) != 0 {
                *slot += p;
            }
        }
    }
    out
}

/// `P[|S ∩ A| = j]` from a sample distribution.
pub fn subset_count_pmf(pmf: &BTreeMap<u32, f64>, subset: &[usize], k: usize) -> Vec<f64> {
    let mask = subset.iter().fold(0u32, |acc, &i| acc | (1 << i));
    let mut out = vec![0.0; k + 1];
    for (&key, &p) in pmf {
        out[(key & mask).count_ones() as usize] += p;
    }
    out
}

pub fn state_of(wv: &WeightVector) -> ScaledState {
    pivotal::scale_weights(wv)
}
