//! Negative sampling, self-adversarial weighting, type-similarity pair
//! sampling, loss assembly and the optimization loop.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy;
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalOptions};
use crate::gradients::{self, softplus, Components, GradientBuffer};
use crate::kg_data::{Split, Triple, TripleStore};
use crate::params::{checkpoint, Hyperparams, Matrix, ModelParams, TensorId};

/// One optimization batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossBatch {
    pub positives: Vec<Triple>,
    /// Corrupted triples, `n_neg` per positive.
    pub negatives: Vec<Vec<Triple>>,
    /// Self-adversarial weights per positive; each list sums to 1.
    pub weights: Vec<Vec<f64>>,
    /// Type-similarity pairs per positive: (same relation, other relation).
    pub l3: Vec<Vec<(Triple, Triple)>>,
}

impl LossBatch {
    pub fn push_item(
        &mut self,
        positive: Triple,
        negatives: Vec<Triple>,
        weights: Vec<f64>,
        l3: Vec<(Triple, Triple)>,
    ) {
        self.positives.push(positive);
        self.negatives.push(negatives);
        self.weights.push(weights);
        self.l3.push(l3);
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}

/// Corrupts `t` `n` times by replacing the head or the tail (fair coin)
/// with a uniformly drawn entity, redrawing when the result equals `t`.
/// Corruptions are not filtered against known truths.
pub fn sample_negatives(
    store: &TripleStore,
    t: &Triple,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Triple>> {
    let n_ent = store.num_entities();
    if n_ent < 2 {
        return Err(Error::CannotCorrupt(n_ent));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let corrupt_head = rng.gen_bool(0.5);
        let original = if corrupt_head { t.head } else { t.tail };
        let mut e = rng.gen_range(0..n_ent);
        while e == original {
            e = rng.gen_range(0..n_ent);
        }
        out.push(if corrupt_head {
            Triple::new(e, t.relation, t.tail)
        } else {
            Triple::new(t.head, t.relation, e)
        });
    }
    Ok(out)
}

/// `softmax(−beta · E)` over the negatives' energies.
pub fn adversarial_weights(neg_energies: &[f64], beta: f64) -> Vec<f64> {
    let logits: Vec<f64> = neg_energies.iter().map(|e| -beta * e).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

const REJECTION_TRIES: usize = 64;

/// Draws one (same-relation, other-relation) pair for `anchor`.
///
/// Returns `None` when the anchor's relation has fewer than two training
/// triples, no other triple of that relation differs from the anchor, or
/// no training triple uses another relation.
pub fn sample_l3_pairs(
    store: &TripleStore,
    anchor: &Triple,
    rng: &mut impl Rng,
) -> Option<(Triple, Triple)> {
    let train = store.train();
    let bucket = store.relation_bucket(anchor.relation);
    if bucket.len() < 2 || store.relations_in_train() < 2 {
        return None;
    }
    let pos = sample_where(rng, bucket.len(), |i| train[bucket[i]] != *anchor)
        .map(|i| train[bucket[i]])?;
    if train.len() == bucket.len() {
        return None;
    }
    let neg = sample_where(rng, train.len(), |i| train[i].relation != anchor.relation)
        .map(|i| train[i])?;
    Some((pos, neg))
}

/// Uniform draw over indices in `0..n` satisfying `accept`.
fn sample_where(rng: &mut impl Rng, n: usize, accept: impl Fn(usize) -> bool) -> Option<usize> {
    for _ in 0..REJECTION_TRIES {
        let i = rng.gen_range(0..n);
        if accept(i) {
            return Some(i);
        }
    }
    let eligible: Vec<usize> = (0..n).filter(|&i| accept(i)).collect();
    eligible.choose(rng).copied()
}

/// `−log σ(γ1 − E_pos) − Σ_j w_j log σ(E_neg_j − γ1)`.
pub fn loss_l1(e_pos: f64, e_negs: &[f64], weights: &[f64], gamma1: f64) -> f64 {
    assert_eq!(e_negs.len(), weights.len(), "one weight per negative");
    softplus(e_pos - gamma1)
        + e_negs
            .iter()
            .zip(weights)
            .map(|(e, w)| w * softplus(gamma1 - e))
            .sum::<f64>()
}

/// `max(0, E2_pos + γ2 − E2_neg)`.
pub fn loss_l2(e2_pos: f64, e2_neg: f64, gamma2: f64) -> f64 {
    (e2_pos + gamma2 - e2_neg).max(0.0)
}

/// `max(0, E3_pos + γ3 − E3_neg)`.
pub fn loss_l3(e3_pos: f64, e3_neg: f64, gamma3: f64) -> f64 {
    (e3_pos + gamma3 - e3_neg).max(0.0)
}

/// Training objective of `batch`, summed over positives.
pub fn total_loss(batch: &LossBatch, p: &ModelParams, hp: &Hyperparams) -> f64 {
    gradients::objective(p, hp, batch, Components::ALL, None)
}

/// Samples negatives, adversarial weights (from the current parameters,
/// held constant for the step) and type-similarity pairs for `positives`.
pub fn assemble_batch(
    store: &TripleStore,
    p: &ModelParams,
    hp: &Hyperparams,
    positives: &[Triple],
    rng: &mut impl Rng,
) -> Result<LossBatch> {
    let mut batch = LossBatch::default();
    for pos in positives {
        let negs = sample_negatives(store, pos, hp.n_neg, rng)?;
        let energies: Vec<f64> = negs.iter().map(|n| energy::energy_e1(p, hp, n)).collect();
        let weights = adversarial_weights(&energies, hp.adv_beta);
        let mut pairs = Vec::new();
        if hp.alpha2 != 0.0 {
            for _ in 0..hp.l3_pairs {
                if let Some(pair) = sample_l3_pairs(store, pos, rng) {
                    pairs.push(pair);
                }
            }
        }
        batch.push_item(*pos, negs, weights, pairs);
    }
    Ok(batch)
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
    pub step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(p: &ModelParams) -> Self {
        let zeros = || {
            TensorId::ALL
                .iter()
                .map(|&id| Matrix::zeros(p.tensor(id).rows(), p.tensor(id).cols()))
                .collect::<Vec<_>>()
        };
        OptimizerState {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    /// One dense update; rows absent from `g` have zero gradient.
    pub fn apply(&mut self, p: &mut ModelParams, g: &GradientBuffer, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for id in TensorId::ALL {
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            let theta = p.tensor_mut(id);
            let cols = theta.cols();
            for row in 0..theta.rows() {
                let grad = g.row(id, row);
                let (m_row, v_row, x_row) = (m.row_mut(row), v.row_mut(row), theta.row_mut(row));
                for c in 0..cols {
                    let gc = grad.map_or(0.0, |r| r[c]);
                    m_row[c] = ADAM_BETA1 * m_row[c] + (1.0 - ADAM_BETA1) * gc;
                    v_row[c] = ADAM_BETA2 * v_row[c] + (1.0 - ADAM_BETA2) * gc * gc;
                    let m_hat = m_row[c] / bias1;
                    let v_hat = v_row[c] / bias2;
                    x_row[c] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// One validation line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    /// Mean batch loss since the previous entry.
    pub loss: f64,
    pub valid_mrr: f64,
    pub valid_hits10: f64,
}

impl LogEntry {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{:?}\t{:?}\t{:?}",
            self.step, self.loss, self.valid_mrr, self.valid_hits10
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where `train.log` and the `best`, `last` and `final` checkpoints go.
    pub out_dir: Option<PathBuf>,
    /// Cap on validation triples per evaluation; 0 = all.
    pub eval_max_triples: usize,
    /// Print progress to standard error.
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation parameters, or the final ones when no validation ran.
    pub params: ModelParams,
    pub final_params: ModelParams,
    pub log: Vec<LogEntry>,
    /// Loss of every step, in order.
    pub step_losses: Vec<f64>,
    pub steps: usize,
    pub best_valid_mrr: Option<f64>,
    pub stopped_early: bool,
}

/// Stream id separating the training sampler from parameter init.
const SAMPLER_STREAM: u64 = 1;

pub fn train(store: &TripleStore, hp: &Hyperparams, opts: &TrainOptions) -> Result<TrainOutcome> {
    let params = ModelParams::init(hp, store, hp.seed)?;
    train_from(store, hp, params, opts)
}

/// Trains starting from `params`.
pub fn train_from(
    store: &TripleStore,
    hp: &Hyperparams,
    mut params: ModelParams,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    hp.validate()?;
    if store.train().is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(SAMPLER_STREAM);

    let n_train = store.train().len();
    let steps_per_epoch = n_train.div_ceil(hp.batch_size);
    let total_steps = if hp.max_steps > 0 {
        hp.max_steps
    } else {
        hp.epochs * steps_per_epoch
    };

    let mut log_file = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("train.log");
            Some((fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };

    let eval_opts = EvalOptions {
        max_triples: opts.eval_max_triples,
        ..EvalOptions::default()
    };
    let validate = hp.eval_every > 0 && !store.valid().is_empty();

    let mut optimizer = OptimizerState::new(&params);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut cursor = n_train;
    let mut log = Vec::new();
    let mut step_losses = Vec::with_capacity(total_steps);
    let mut window_loss = 0.0;
    let mut window_steps = 0usize;
    let mut best: Option<(f64, ModelParams)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let mut last_good = String::from("none");
    let mut steps_done = 0;

    for step in 1..=total_steps {
        if cursor >= n_train {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + hp.batch_size).min(n_train);
        let positives: Vec<Triple> = order[cursor..end].iter().map(|&i| store.train()[i]).collect();
        cursor = end;

        let batch = assemble_batch(store, &params, hp, &positives, &mut rng)?;
        let (loss, grads) = match gradients::grad_total_loss(&params, hp, &batch) {
            Ok(r) => r,
            Err(Error::NonFinite { .. }) => {
                return Err(Error::Diverged {
                    step,
                    loss: f64::NAN,
                    last_good,
                })
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                loss,
                last_good,
            });
        }
        optimizer.apply(&mut params, &grads, hp.lr);
        let reinit = params.enforce_constraints(&mut rng);
        if !reinit.is_empty() && opts.verbose {
            eprintln!("step {step}: reinitialized zero hyperplane normals for relations {reinit:?}");
        }
        if let Some((id, row)) = params.first_non_finite() {
            return Err(Error::Diverged {
                step,
                loss: f64::NAN,
                last_good: format!("{last_good} (non-finite {} row {row})", id.name()),
            });
        }
        step_losses.push(loss);
        window_loss += loss;
        window_steps += 1;
        steps_done = step;

        let at_eval = hp.eval_every > 0 && (step % hp.eval_every == 0 || step == total_steps);
        if !at_eval {
            continue;
        }
        let (mrr, hits10) = if validate {
            let report = evaluation::evaluate_split_with(&params, hp, store, Split::Valid, &eval_opts)?;
            (report.mrr, report.hits10)
        } else {
            (f64::NAN, f64::NAN)
        };
        let entry = LogEntry {
            step,
            loss: window_loss / window_steps as f64,
            valid_mrr: mrr,
            valid_hits10: hits10,
        };
        window_loss = 0.0;
        window_steps = 0;
        if let Some((file, path)) = log_file.as_mut() {
            writeln!(file, "{}", entry.to_line()).map_err(|e| Error::io(path.as_path(), e))?;
        }
        if opts.verbose {
            eprintln!("{}", entry.to_line());
        }
        log.push(entry);

        if let Some(dir) = &opts.out_dir {
            let path = dir.join("last.ckpt");
            checkpoint::save(&params, hp, &path)?;
            last_good = path.display().to_string();
        }
        if !validate {
            continue;
        }
        if best.as_ref().is_none_or(|(b, _)| mrr > *b) {
            if let Some(dir) = &opts.out_dir {
                checkpoint::save(&params, hp, dir.join("best.ckpt"))?;
            }
            best = Some((mrr, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if hp.patience > 0 && since_best >= hp.patience {
                stopped_early = true;
                break;
            }
        }
    }

    if let Some(dir) = &opts.out_dir {
        checkpoint::save(&params, hp, dir.join("final.ckpt"))?;
        if best.is_none() {
            checkpoint::save(&params, hp, dir.join("best.ckpt"))?;
        }
    }
    let best_valid_mrr = best.as_ref().map(|(m, _)| *m);
    let chosen = best.map(|(_, p)| p).unwrap_or_else(|| params.clone());
    Ok(TrainOutcome {
        params: chosen,
        final_params: params,
        log,
        step_losses,
        steps: steps_done,
        best_valid_mrr,
        stopped_early,
    })
}

/// Reads a `train.log` back.
pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            let parse = |s: &str| s.parse::<f64>().ok();
            match (f.first().and_then(|s| s.parse().ok()), f.get(1).and_then(|s| parse(s)), f.get(2).and_then(|s| parse(s)), f.get(3).and_then(|s| parse(s))) {
                (Some(step), Some(loss), Some(valid_mrr), Some(valid_hits10)) if f.len() == 4 => Ok(LogEntry {
                    step,
                    loss,
                    valid_mrr,
                    valid_hits10,
                }),
                _ => Err(Error::MalformedLine {
                    file: path.to_path_buf(),
                    line: i + 1,
                    found: f.len(),
                }),
            }
        })
        .collect()
}
