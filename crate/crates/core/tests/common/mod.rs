//! Test-only oracles. Everything here recomputes quantities from raw logits
//! with straight-line arithmetic and shares no code path with the library
//! beyond reading stored logit rows.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use terse::gspo::RolloutGroup;
use terse::policy::{ContextKey, PolicyParams};
use terse::vocab::{TokenSequence, BOS};

/// Logit row at (query_last, prev) for a summary_len = 1, order = 1 policy.
pub fn row(params: &PolicyParams, query_last: u32, prev: u32) -> Vec<f64> {
    params
        .logits()
        .get(&ContextKey::new(vec![query_last, prev]))
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; params.vocab_size()])
}

/// Per-step probability by direct exponentiation and division.
pub fn step_prob(logits: &[f64], t: u32) -> f64 {
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    logits[t as usize].exp() / z
}

/// Sequence log-probability as the log of a product of per-step softmaxes.
pub fn seq_log_prob(params: &PolicyParams, query_last: u32, y: &[u32]) -> f64 {
    let mut prev = BOS;
    let mut lp = 0.0;
    for &t in y {
        lp += step_prob(&row(params, query_last, prev), t).ln();
        prev = t;
    }
    lp
}

pub fn seq_prob(params: &PolicyParams, query_last: u32, y: &[u32]) -> f64 {
    let mut prev = BOS;
    let mut p = 1.0;
    for &t in y {
        p *= step_prob(&row(params, query_last, prev), t);
        prev = t;
    }
    p
}

/// Group objective composed step by step: standardize rewards, form the
/// length-normalized ratio, take the clipped min, average.
pub fn objective(
    params: &PolicyParams,
    query_last: u32,
    ys: &[Vec<u32>],
    rewards: &[f64],
    logp_old: &[f64],
    eps_clip: f64,
    eps_std: f64,
) -> f64 {
    let g = rewards.len() as f64;
    let mut mean = 0.0;
    for r in rewards {
        mean += r;
    }
    mean /= g;
    let mut var = 0.0;
    for r in rewards {
        var += (r - mean) * (r - mean);
    }
    let sd = (var / g).sqrt();
    let mut total = 0.0;
    for i in 0..rewards.len() {
        let adv = (rewards[i] - mean) / (sd + eps_std);
        let lp_new = seq_log_prob(params, query_last, &ys[i]);
        let s = ((lp_new - logp_old[i]) / ys[i].len() as f64).exp();
        let clipped = if s < 1.0 - eps_clip {
            1.0 - eps_clip
        } else if s > 1.0 + eps_clip {
            1.0 + eps_clip
        } else {
            s
        };
        let a = s * adv;
        let b = clipped * adv;
        total += if a < b { a } else { b };
    }
    total / g
}

/// Random logits on every (query_last, prev) context of a toy vocabulary.
pub fn random_params(rng: &mut ChaCha8Rng, vocab: usize, query_last: u32, scale: f64) -> PolicyParams {
    let mut p = PolicyParams::new(vocab, 0, 1, 1).unwrap();
    for prev in std::iter::once(BOS).chain(0..vocab as u32) {
        let r: Vec<f64> = (0..vocab).map(|_| rng.random_range(-scale..scale)).collect();
        p.logits_mut().insert(ContextKey::new(vec![query_last, prev]), r).unwrap();
    }
    p
}

pub fn perturbed(rng: &mut ChaCha8Rng, base: &PolicyParams, scale: f64) -> PolicyParams {
    let mut p = base.clone();
    let keys: Vec<ContextKey> = p.logits().iter().map(|(k, _)| k.clone()).collect();
    for k in keys {
        for x in p.logits_mut().row_mut(k) {
            *x += rng.random_range(-scale..scale);
        }
    }
    p
}

/// Random group sampled from `old`, with random rewards.
pub fn random_group(
    rng: &mut ChaCha8Rng,
    old: &PolicyParams,
    query_last: u32,
    g: usize,
    max_len: usize,
) -> RolloutGroup {
    let query = TokenSequence::new(vec![query_last]);
    let responses: Vec<TokenSequence> =
        (0..g).map(|_| old.sample_sequence(&query, rng, max_len)).collect();
    let rewards: Vec<f64> = (0..g).map(|_| rng.random_range(-1.0..1.0)).collect();
    RolloutGroup::with_old_policy(query, responses, rewards, old).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite difference of `f` with respect to every entry of every
/// row in `params`; returns (key, entry, derivative).
pub fn finite_difference<F>(params: &PolicyParams, h: f64, f: F) -> Vec<(ContextKey, usize, f64)>
where
    F: Fn(&PolicyParams) -> f64,
{
    let keys: Vec<ContextKey> = params.logits().iter().map(|(k, _)| k.clone()).collect();
    let mut out = Vec::new();
    for k in keys {
        for j in 0..params.vocab_size() {
            let mut plus = params.clone();
            plus.logits_mut().row_mut(k.clone())[j] += h;
            let mut minus = params.clone();
            minus.logits_mut().row_mut(k.clone())[j] -= h;
            out.push((k.clone(), j, (f(&plus) - f(&minus)) / (2.0 * h)));
        }
    }
    out
}

/// Relative error between an analytic gradient table and finite differences,
/// measured as `||a - fd|| / max(||a||, ||fd||)` (absolute when both vanish).
pub fn gradient_rel_error(
    analytic: &terse::policy::LogitTable,
    fd: &[(ContextKey, usize, f64)],
) -> f64 {
    let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
    for (k, j, d) in fd {
        let a = analytic.get(k).map_or(0.0, |r| r[*j]);
        diff += (a - d) * (a - d);
        na += a * a;
        nf += d * d;
    }
    // analytic entries outside the probed set must be zero
    for (k, r) in analytic.iter() {
        if !fd.iter().any(|(fk, _, _)| fk == k) {
            for a in r {
                diff += a * a;
                na += a * a;
            }
        }
    }
    let scale = na.sqrt().max(nf.sqrt());
    if scale < 1e-10 {
        diff.sqrt()
    } else {
        diff.sqrt() / scale
    }
}
