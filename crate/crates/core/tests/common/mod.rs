#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use kgtype::energy::energy_pred;
use kgtype::params::{Hyperparams, ModelParams, TensorId};
use kgtype::{Triple, TripleStore};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

/// Small hyperparameters for tests.
pub fn small_hp(k: usize, d: usize) -> Hyperparams {
    Hyperparams {
        k,
        d,
        batch_size: 8,
        n_neg: 4,
        ..Hyperparams::default()
    }
}

/// A random store with distinct triples spread over the three splits.
pub fn random_store(
    rng: &mut impl Rng,
    n_ent: usize,
    n_rel: usize,
    n_triples: usize,
) -> TripleStore {
    let mut set = BTreeSet::new();
    while set.len() < n_triples {
        set.insert(Triple::new(
            rng.gen_range(0..n_ent),
            rng.gen_range(0..n_rel),
            rng.gen_range(0..n_ent),
        ));
    }
    let mut all: Vec<Triple> = set.into_iter().collect();
    // Deterministic shuffle driven by the caller's RNG.
    for i in (1..all.len()).rev() {
        all.swap(i, rng.gen_range(0..=i));
    }
    let n_valid = n_triples / 5;
    let n_test = n_triples / 5;
    let test = all.split_off(all.len() - n_test);
    let valid = all.split_off(all.len() - n_valid);
    TripleStore::from_ids(n_ent, n_rel, all, valid, test).expect("valid ids")
}

/// Freshly initialized (random) parameters.
pub fn random_params(hp: &Hyperparams, store: &TripleStore, seed: u64) -> ModelParams {
    ModelParams::init(hp, store, seed).expect("init")
}

/// Rank of `t` when `head` (or tail) is replaced by every entity, computed
/// by sorting single-triple energies. Mean rank over ties.
pub fn brute_force_rank(
    p: &ModelParams,
    hp: &Hyperparams,
    store: &TripleStore,
    t: &Triple,
    replace_head: bool,
    filtered: bool,
) -> f64 {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for e in 0..store.num_entities() {
        let c = if replace_head {
            Triple::new(e, t.relation, t.tail)
        } else {
            Triple::new(t.head, t.relation, e)
        };
        let is_target = c == *t;
        if filtered && !is_target && store.truth_contains(&c) {
            continue;
        }
        scored.push((energy_pred(p, hp, &c), is_target));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let target_energy = scored.iter().find(|s| s.1).expect("target present").0;
    let first = scored.iter().position(|s| s.0 == target_energy).unwrap();
    let last = scored.iter().rposition(|s| s.0 == target_energy).unwrap();
    // 1-based positions first+1 ..= last+1; the mean of that range.
    (first + last) as f64 / 2.0 + 1.0
}

/// `I + scale·U[-1,1]`, redrawn until comfortably invertible.
pub fn well_conditioned(rng: &mut impl Rng, d: usize, scale: f64) -> DMatrix<f64> {
    loop {
        let m = DMatrix::from_fn(d, d, |i, j| {
            let noise = rng.gen_range(-scale..scale);
            if i == j {
                1.0 + noise
            } else {
                noise
            }
        });
        let sv = m.clone().svd(false, false).singular_values;
        let (max, min) = (sv.max(), sv.min());
        if min > 0.2 && max / min < 20.0 {
            return m;
        }
    }
}

pub fn random_vector(rng: &mut impl Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.gen_range(-scale..scale))
}

/// Row-major copy, the layout used by the projection tensor.
pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn solve(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    m.clone().lu().solve(b).expect("invertible")
}

/// Writes a type vector, relation translation or projection into `p`.
pub fn set_type(p: &mut ModelParams, entity: usize, y: &DVector<f64>) {
    p.tensor_mut(TensorId::TypeEmb)
        .row_mut(entity)
        .copy_from_slice(y.as_slice());
}

pub fn set_relation(p: &mut ModelParams, r: usize, m: &DMatrix<f64>, y_r: &DVector<f64>) {
    p.tensor_mut(TensorId::TypeProj)
        .row_mut(r)
        .copy_from_slice(&row_major(m));
    p.tensor_mut(TensorId::TypeRel)
        .row_mut(r)
        .copy_from_slice(y_r.as_slice());
}

/// Store whose first relation is symmetric: most pairs appear both ways in
/// train, and for `held_out` pairs only one direction is in train while
/// the reversal is in test. Relations 1 and 2 are random asymmetric
/// relations between the two halves of the entity set.
pub fn symmetric_store(rng: &mut impl Rng, n_ent: usize, held_out: usize) -> TripleStore {
    let mut order: Vec<usize> = (0..n_ent).collect();
    for i in (1..n_ent).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut valid = Vec::new();
    for (i, pair) in order.chunks_exact(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        train.push(Triple::new(a, 0, b));
        if i < held_out {
            test.push(Triple::new(b, 0, a));
        } else {
            train.push(Triple::new(b, 0, a));
        }
    }
    let half = n_ent / 2;
    let mut seen = BTreeSet::new();
    for r in 1..=2 {
        let mut added = 0;
        while added < n_ent {
            let (h, t) = if r == 1 {
                (rng.gen_range(0..half), rng.gen_range(half..n_ent))
            } else {
                (rng.gen_range(half..n_ent), rng.gen_range(0..half))
            };
            if seen.insert((h, r, t)) {
                let t = Triple::new(h, r, t);
                if added % 10 == 0 {
                    valid.push(t);
                } else {
                    train.push(t);
                }
                added += 1;
            }
        }
    }
    TripleStore::from_ids(n_ent, 3, train, valid, test).expect("valid ids")
}
