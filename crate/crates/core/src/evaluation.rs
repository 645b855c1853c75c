//! Filtered link-prediction ranking and MR / MRR / Hits@n reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::energy::{complex_distance, matvec, project_into, real_distance, rotate_into, translated_head};
use crate::error::{Error, Result};
use crate::kg_data::{RelationCategory, Split, Triple, TripleStore, DEFAULT_CATEGORY_THRESHOLD};
use crate::params::{Hyperparams, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Head,
    Tail,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Head => "head",
            Side::Tail => "tail",
        }
    }

    fn replace(self, t: &Triple, e: usize) -> Triple {
        match self {
            Side::Head => Triple::new(e, t.relation, t.tail),
            Side::Tail => Triple::new(t.head, t.relation, e),
        }
    }

    fn target(self, t: &Triple) -> usize {
        match self {
            Side::Head => t.head,
            Side::Tail => t.tail,
        }
    }
}

/// How candidates with exactly the target's energy are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiePolicy {
    /// Average position over the tie group: `1 + lower + ties/2`.
    #[default]
    Mean,
    /// `1 + lower`.
    Optimistic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankRecord {
    pub triple: Triple,
    pub side: Side,
    /// 1-based; fractional under tie averaging.
    pub rank: f64,
    pub filtered: bool,
}

/// Prediction energy of every candidate obtained by replacing `side` of `t`.
///
/// Bit-identical to calling [`crate::energy::energy_pred`] per candidate;
/// the fixed side's projection is computed once.
pub fn candidate_energies(p: &ModelParams, hp: &Hyperparams, t: &Triple, side: Side) -> Vec<f64> {
    let k = p.k();
    let n = p.num_entities();
    let r = t.relation;
    let w = p.hyperplane.row(r);
    let (cos, sin) = p.relation_vector(r);
    let m = p.projection(r);
    let y_r = p.type_rel.row(r);
    let use_type = hp.alpha1 != 0.0;

    let mut a_re = vec![0.0; k];
    let mut a_im = vec![0.0; k];
    let mut b_re = vec![0.0; k];
    let mut b_im = vec![0.0; k];
    let mut out = Vec::with_capacity(n);
    match side {
        Side::Tail => {
            let mut rot_re = vec![0.0; k];
            let mut rot_im = vec![0.0; k];
            project_into(
                p.ent_re.row(t.head),
                p.ent_im.row(t.head),
                w,
                hp.projection_mode,
                &mut a_re,
                &mut a_im,
            );
            rotate_into(&a_re, &a_im, &cos, &sin, &mut rot_re, &mut rot_im);
            let shifted = use_type.then(|| translated_head(m, p.type_emb.row(t.head), y_r));
            for e in 0..n {
                project_into(p.ent_re.row(e), p.ent_im.row(e), w, hp.projection_mode, &mut b_re, &mut b_im);
                let e1 = complex_distance(&rot_re, &rot_im, &b_re, &b_im, hp.norm_e1);
                out.push(match &shifted {
                    Some(s) => {
                        let mt = matvec(m, p.type_emb.row(e));
                        e1 + hp.alpha1 * real_distance(s, &mt, hp.norm_type)
                    }
                    None => e1,
                });
            }
        }
        Side::Head => {
            let mut rot_re = vec![0.0; k];
            let mut rot_im = vec![0.0; k];
            project_into(
                p.ent_re.row(t.tail),
                p.ent_im.row(t.tail),
                w,
                hp.projection_mode,
                &mut b_re,
                &mut b_im,
            );
            let tail_proj = use_type.then(|| matvec(m, p.type_emb.row(t.tail)));
            for e in 0..n {
                project_into(p.ent_re.row(e), p.ent_im.row(e), w, hp.projection_mode, &mut a_re, &mut a_im);
                rotate_into(&a_re, &a_im, &cos, &sin, &mut rot_re, &mut rot_im);
                let e1 = complex_distance(&rot_re, &rot_im, &b_re, &b_im, hp.norm_e1);
                out.push(match &tail_proj {
                    Some(mt) => {
                        let s = translated_head(m, p.type_emb.row(e), y_r);
                        e1 + hp.alpha1 * real_distance(&s, mt, hp.norm_type)
                    }
                    None => e1,
                });
            }
        }
    }
    out
}

/// Rank of the target among `energies` (ascending), skipping candidates for
/// which `skip` holds.
pub fn rank_from_energies(
    energies: &[f64],
    target: usize,
    ties: TiePolicy,
    skip: impl Fn(usize) -> bool,
) -> f64 {
    let e_t = energies[target];
    let mut lower = 0usize;
    let mut tied = 0usize;
    for (e, &x) in energies.iter().enumerate() {
        if e == target || skip(e) {
            continue;
        }
        if x < e_t {
            lower += 1;
        } else if x == e_t {
            tied += 1;
        }
    }
    match ties {
        TiePolicy::Mean => 1.0 + lower as f64 + tied as f64 / 2.0,
        TiePolicy::Optimistic => 1.0 + lower as f64,
    }
}

pub fn rank_entity(
    p: &ModelParams,
    hp: &Hyperparams,
    store: &TripleStore,
    t: &Triple,
    side: Side,
    filtered: bool,
) -> RankRecord {
    rank_entity_with(p, hp, store, t, side, filtered, TiePolicy::Mean)
}

pub fn rank_entity_with(
    p: &ModelParams,
    hp: &Hyperparams,
    store: &TripleStore,
    t: &Triple,
    side: Side,
    filtered: bool,
    ties: TiePolicy,
) -> RankRecord {
    let energies = candidate_energies(p, hp, t, side);
    let rank = rank_from_energies(&energies, side.target(t), ties, |e| {
        filtered && store.truth_contains(&side.replace(t, e))
    });
    RankRecord {
        triple: *t,
        side,
        rank,
        filtered,
    }
}

/// Summary statistics of a set of ranks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
}

impl Metrics {
    /// `None` for an empty rank list.
    pub fn from_ranks(ranks: &[f64]) -> Option<Metrics> {
        if ranks.is_empty() {
            return None;
        }
        let n = ranks.len() as f64;
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Some(Metrics {
            mr: ranks.iter().sum::<f64>() / n,
            mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
            hits1: hits(1.0),
            hits3: hits(3.0),
            hits10: hits(10.0),
            count: ranks.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    /// Number of ranks (two per triple).
    pub count: usize,
    pub head: Metrics,
    pub tail: Metrics,
    pub filtered: bool,
}

impl MetricsReport {
    pub fn overall(&self) -> Metrics {
        Metrics {
            mr: self.mr,
            mrr: self.mrr,
            hits1: self.hits1,
            hits3: self.hits3,
            hits10: self.hits10,
            count: self.count,
        }
    }

    /// Aligned plain-text table.
    pub fn render_text(&self, per_side: bool) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>10} {:>8} {:>8} {:>8} {:>8} {:>8}",
            if self.filtered { "filtered" } else { "raw" },
            "MR",
            "MRR",
            "H@1",
            "H@3",
            "H@10",
            "n"
        );
        let mut row = |label: &str, m: &Metrics| {
            let _ = writeln!(
                s,
                "{:<8} {:>10.3} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8}",
                label, m.mr, m.mrr, m.hits1, m.hits3, m.hits10, m.count
            );
        };
        row("all", &self.overall());
        if per_side {
            row("head", &self.head);
            row("tail", &self.tail);
        }
        s
    }

    /// Machine-readable `key=value` lines.
    pub fn render_kv(&self, per_side: bool) -> String {
        let mut s = String::new();
        let mut block = |prefix: &str, m: &Metrics| {
            for (k, v) in [
                ("mr", m.mr),
                ("mrr", m.mrr),
                ("hits1", m.hits1),
                ("hits3", m.hits3),
                ("hits10", m.hits10),
            ] {
                let _ = writeln!(s, "{prefix}{k}={v:?}");
            }
            let _ = writeln!(s, "{prefix}count={}", m.count);
        };
        block("", &self.overall());
        if per_side {
            block("head.", &self.head);
            block("tail.", &self.tail);
        }
        s.push_str(&format!("filtered={}\n", self.filtered));
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub filtered: bool,
    pub ties: TiePolicy,
    /// Drop triples whose entities or relation never occur in train.
    pub skip_unseen: bool,
    /// Evaluate only the first `max_triples` triples; 0 = all.
    pub max_triples: usize,
    /// Threads used for ranking; results do not depend on it.
    pub workers: usize,
    pub category_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            filtered: true,
            ties: TiePolicy::Mean,
            skip_unseen: false,
            max_triples: 0,
            workers: 1,
            category_threshold: DEFAULT_CATEGORY_THRESHOLD,
        }
    }
}

fn selected_triples(store: &TripleStore, split: Split, opts: &EvalOptions) -> Vec<Triple> {
    let mut triples: Vec<Triple> = store
        .split(split)
        .iter()
        .filter(|t| {
            !opts.skip_unseen
                || (store.entity_in_train(t.head)
                    && store.entity_in_train(t.tail)
                    && store.relation_in_train(t.relation))
        })
        .copied()
        .collect();
    if opts.max_triples > 0 {
        triples.truncate(opts.max_triples);
    }
    triples
}

/// `(head rank, tail rank)` for each triple, in input order.
pub fn rank_triples(
    p: &ModelParams,
    hp: &Hyperparams,
    store: &TripleStore,
    triples: &[Triple],
    opts: &EvalOptions,
) -> Vec<(f64, f64)> {
    let rank_one = |t: &Triple| {
        let h = rank_entity_with(p, hp, store, t, Side::Head, opts.filtered, opts.ties).rank;
        let tl = rank_entity_with(p, hp, store, t, Side::Tail, opts.filtered, opts.ties).rank;
        (h, tl)
    };
    let workers = opts.workers.max(1).min(triples.len().max(1));
    if workers == 1 {
        return triples.iter().map(rank_one).collect();
    }
    let chunk = triples.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = triples
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(rank_one).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("ranking worker panicked"))
            .collect()
    })
}

pub fn evaluate_split(
    p: &ModelParams,
    hp: &Hyperparams,
    store: &TripleStore,
    split: Split,
    filtered: bool,
) -> Result<MetricsReport> {
    let opts = EvalOptions {
        filtered,
        ..EvalOptions::default()
    };
    evaluate_split_with(p, hp, store, split, &opts)
}

pub fn evaluate_split_with(
    p: &ModelParams,
    hp: &Hyperparams,
    store: &TripleStore,
    split: Split,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let triples = selected_triples(store, split, opts);
    if triples.is_empty() {
        return Err(Error::EmptySplit(split.name()));
    }
    let ranks = rank_triples(p, hp, store, &triples, opts);
    report_from_pairs(&ranks, opts.filtered).ok_or(Error::EmptySplit(split.name()))
}

/// Builds a report from per-triple `(head, tail)` ranks.
pub fn report_from_pairs(ranks: &[(f64, f64)], filtered: bool) -> Option<MetricsReport> {
    let heads: Vec<f64> = ranks.iter().map(|r| r.0).collect();
    let tails: Vec<f64> = ranks.iter().map(|r| r.1).collect();
    let all: Vec<f64> = ranks.iter().flat_map(|r| [r.0, r.1]).collect();
    let o = Metrics::from_ranks(&all)?;
    Some(MetricsReport {
        mr: o.mr,
        mrr: o.mrr,
        hits1: o.hits1,
        hits3: o.hits3,
        hits10: o.hits10,
        count: o.count,
        head: Metrics::from_ranks(&heads)?,
        tail: Metrics::from_ranks(&tails)?,
        filtered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryHits {
    pub head_hits10: f64,
    pub tail_hits10: f64,
    pub triples: usize,
}

/// Hits@10 by relation category and side. Categories without triples are
/// absent from `entries`.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryReport {
    pub entries: BTreeMap<RelationCategory, CategoryHits>,
    /// Triples whose relation never occurs in train.
    pub uncategorized: usize,
    pub filtered: bool,
}

impl CategoryReport {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:>12} {:>12} {:>8}",
            "cat", "head H@10", "tail H@10", "n"
        );
        for cat in RelationCategory::ALL {
            match self.entries.get(&cat) {
                Some(c) => {
                    let _ = writeln!(
                        s,
                        "{:<6} {:>12.4} {:>12.4} {:>8}",
                        cat.to_string(),
                        c.head_hits10,
                        c.tail_hits10,
                        c.triples
                    );
                }
                None => {
                    let _ = writeln!(s, "{:<6} {:>12} {:>12} {:>8}", cat.to_string(), "-", "-", 0);
                }
            }
        }
        if self.uncategorized > 0 {
            let _ = writeln!(s, "({} triples with relations absent from train)", self.uncategorized);
        }
        s
    }

    pub fn render_kv(&self) -> String {
        let mut s = String::new();
        for (cat, c) in &self.entries {
            let _ = writeln!(s, "category.{cat}.head_hits10={:?}", c.head_hits10);
            let _ = writeln!(s, "category.{cat}.tail_hits10={:?}", c.tail_hits10);
            let _ = writeln!(s, "category.{cat}.count={}", c.triples);
        }
        s
    }
}

pub fn evaluate_by_category(
    p: &ModelParams,
    hp: &Hyperparams,
    store: &TripleStore,
    split: Split,
) -> Result<CategoryReport> {
    evaluate_by_category_with(p, hp, store, split, &EvalOptions::default())
}

pub fn evaluate_by_category_with(
    p: &ModelParams,
    hp: &Hyperparams,
    store: &TripleStore,
    split: Split,
    opts: &EvalOptions,
) -> Result<CategoryReport> {
    let triples = selected_triples(store, split, opts);
    if triples.is_empty() {
        return Err(Error::EmptySplit(split.name()));
    }
    let ranks = rank_triples(p, hp, store, &triples, opts);
    let mut grouped: BTreeMap<RelationCategory, Vec<(f64, f64)>> = BTreeMap::new();
    let mut uncategorized = 0;
    for (t, r) in triples.iter().zip(ranks) {
        match store.relation_category_with(t.relation, opts.category_threshold) {
            Ok(cat) => grouped.entry(cat).or_default().push(r),
            Err(_) => uncategorized += 1,
        }
    }
    let entries = grouped
        .into_iter()
        .map(|(cat, rs)| {
            let n = rs.len() as f64;
            let hits = |f: fn(&(f64, f64)) -> f64| rs.iter().filter(|r| f(r) <= 10.0).count() as f64 / n;
            (
                cat,
                CategoryHits {
                    head_hits10: hits(|r| r.0),
                    tail_hits10: hits(|r| r.1),
                    triples: rs.len(),
                },
            )
        })
        .collect();
    Ok(CategoryReport {
        entries,
        uncategorized,
        filtered: opts.filtered,
    })
}
