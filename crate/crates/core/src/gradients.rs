//! Hand-derived gradients of the training objective, and a central
//! finite-difference oracle to check them against.
//!
//! Each positive of a batch is differentiated into its own buffer and the
//! per-item buffers are summed in batch order, so the reduction is
//! deterministic and a repeated item contributes exactly twice.

use std::collections::BTreeMap;

use crate::energy::{self, dot, matvec, real_distance, E1Parts};
use crate::error::{Error, Result};
use crate::kg_data::Triple;
use crate::params::{Hyperparams, ModelParams, Norm, ProjectionMode, TensorId};
use crate::training::LossBatch;

/// Sparse per-row gradient accumulator shaped like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    widths: [usize; 7],
    rows: [BTreeMap<usize, Vec<f64>>; 7],
}

impl GradientBuffer {
    pub fn new(p: &ModelParams) -> Self {
        let mut widths = [0; 7];
        for id in TensorId::ALL {
            widths[id.index()] = p.tensor(id).cols();
        }
        GradientBuffer {
            widths,
            rows: Default::default(),
        }
    }

    pub fn row_mut(&mut self, id: TensorId, row: usize) -> &mut [f64] {
        let width = self.widths[id.index()];
        self.rows[id.index()]
            .entry(row)
            .or_insert_with(|| vec![0.0; width])
    }

    pub fn row(&self, id: TensorId, row: usize) -> Option<&[f64]> {
        self.rows[id.index()].get(&row).map(Vec::as_slice)
    }

    /// Gradient of one coordinate; zero for untouched rows.
    pub fn get(&self, id: TensorId, row: usize, col: usize) -> f64 {
        self.row(id, row).map_or(0.0, |r| r[col])
    }

    /// Touched rows of one tensor in ascending row order.
    pub fn iter(&self, id: TensorId) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows[id.index()].iter().map(|(&r, v)| (r, v.as_slice()))
    }

    pub fn touched_rows(&self, id: TensorId) -> usize {
        self.rows[id.index()].len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(BTreeMap::is_empty)
    }

    /// Adds every row of `other` into `self`.
    pub fn add(&mut self, other: &GradientBuffer) {
        for id in TensorId::ALL {
            for (r, src) in other.iter(id) {
                let dst = self.row_mut(id, r);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }

    pub fn first_non_finite(&self) -> Option<(TensorId, usize)> {
        for id in TensorId::ALL {
            for (r, v) in self.iter(id) {
                if v.iter().any(|x| !x.is_finite()) {
                    return Some((id, r));
                }
            }
        }
        None
    }
}

/// Which loss terms participate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Components {
    pub l1: bool,
    pub l2: bool,
    pub l3: bool,
}

impl Components {
    pub const ALL: Components = Components {
        l1: true,
        l2: true,
        l3: true,
    };
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Backward of `project_into` for one entity: adds the input gradient to
/// `g_re` / `g_im` and the normal's gradient to `g_w`.
#[allow(clippy::too_many_arguments)]
fn project_backward(
    re: &[f64],
    im: &[f64],
    w: &[f64],
    dots: (f64, f64),
    mode: ProjectionMode,
    g_out_re: &[f64],
    g_out_im: &[f64],
    g_re: &mut [f64],
    g_im: &mut [f64],
    g_w: &mut [f64],
) {
    let (a, b) = dots;
    match mode {
        ProjectionMode::Hyperplane => {
            let wg_re = dot(w, g_out_re);
            let wg_im = dot(w, g_out_im);
            for i in 0..w.len() {
                g_re[i] += g_out_re[i] - wg_re * w[i];
                g_im[i] += g_out_im[i] - wg_im * w[i];
                g_w[i] += -a * g_out_re[i] - wg_re * re[i] - b * g_out_im[i] - wg_im * im[i];
            }
        }
        ProjectionMode::LiteralScaling => {
            let s = 1.0 - a;
            let mut g_a = 0.0;
            let mut g_b = 0.0;
            for i in 0..w.len() {
                g_a += -re[i] * g_out_re[i] - im[i] * g_out_im[i];
                g_b += im[i] * g_out_re[i] - re[i] * g_out_im[i];
            }
            for i in 0..w.len() {
                g_re[i] += s * g_out_re[i] - b * g_out_im[i] + g_a * w[i];
                g_im[i] += b * g_out_re[i] + s * g_out_im[i] + g_b * w[i];
                g_w[i] += g_a * re[i] + g_b * im[i];
            }
        }
    }
}

/// Accumulates `upstream * ∂E1/∂θ` for triple `t`.
fn e1_backward(
    p: &ModelParams,
    hp: &Hyperparams,
    t: &Triple,
    parts: &E1Parts,
    upstream: f64,
    g: &mut GradientBuffer,
) {
    if upstream == 0.0 {
        return;
    }
    let k = p.k();
    let mut g_rot_re = vec![0.0; k];
    let mut g_rot_im = vec![0.0; k];
    for i in 0..k {
        let dr = parts.rot_re[i] - parts.pt_re[i];
        let di = parts.rot_im[i] - parts.pt_im[i];
        let denom = match hp.norm_e1 {
            Norm::L1 => (dr * dr + di * di).sqrt(),
            Norm::L2 => parts.value,
        };
        // subgradient 0 at the kink
        if denom > 0.0 {
            g_rot_re[i] = upstream * dr / denom;
            g_rot_im[i] = upstream * di / denom;
        }
    }
    let g_pt_re: Vec<f64> = g_rot_re.iter().map(|x| -x).collect();
    let g_pt_im: Vec<f64> = g_rot_im.iter().map(|x| -x).collect();

    let mut g_ph_re = vec![0.0; k];
    let mut g_ph_im = vec![0.0; k];
    {
        let g_theta = g.row_mut(TensorId::RelPhase, t.relation);
        for i in 0..k {
            let (c, s) = (parts.cos[i], parts.sin[i]);
            g_ph_re[i] = g_rot_re[i] * c + g_rot_im[i] * s;
            g_ph_im[i] = -g_rot_re[i] * s + g_rot_im[i] * c;
            g_theta[i] += -g_rot_re[i] * parts.rot_im[i] + g_rot_im[i] * parts.rot_re[i];
        }
    }

    let w = p.hyperplane.row(t.relation);
    let mut g_w = vec![0.0; k];
    for (entity, dots, g_out_re, g_out_im) in [
        (t.head, parts.head_dots, &g_ph_re, &g_ph_im),
        (t.tail, parts.tail_dots, &g_pt_re, &g_pt_im),
    ] {
        let mut g_re = vec![0.0; k];
        let mut g_im = vec![0.0; k];
        project_backward(
            p.ent_re.row(entity),
            p.ent_im.row(entity),
            w,
            dots,
            hp.projection_mode,
            g_out_re,
            g_out_im,
            &mut g_re,
            &mut g_im,
            &mut g_w,
        );
        add_into(g.row_mut(TensorId::EntRe, entity), &g_re);
        add_into(g.row_mut(TensorId::EntIm, entity), &g_im);
    }
    add_into(g.row_mut(TensorId::Hyperplane, t.relation), &g_w);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `∂‖v‖/∂v` scaled by `upstream`, zero at kinks.
fn norm_grad(v: &[f64], value: f64, norm: Norm, upstream: f64) -> Vec<f64> {
    match norm {
        Norm::L1 => v
            .iter()
            .map(|&x| {
                if x > 0.0 {
                    upstream
                } else if x < 0.0 {
                    -upstream
                } else {
                    0.0
                }
            })
            .collect(),
        Norm::L2 => {
            if value > 0.0 {
                v.iter().map(|x| upstream * x / value).collect()
            } else {
                vec![0.0; v.len()]
            }
        }
    }
}

/// Adds `g_out ⊗ y` into a row-major d×d gradient.
fn outer_into(dst: &mut [f64], g_out: &[f64], y: &[f64], sign: f64) {
    let d = y.len();
    for i in 0..d {
        for j in 0..d {
            dst[i * d + j] += sign * g_out[i] * y[j];
        }
    }
}

/// Adds `sign * Mᵀ g_out` into `dst`.
fn mat_t_vec_into(dst: &mut [f64], m: &[f64], g_out: &[f64], sign: f64) {
    let d = g_out.len();
    for i in 0..d {
        for j in 0..d {
            dst[j] += sign * m[i * d + j] * g_out[i];
        }
    }
}

struct E2Parts {
    /// `M y_h + y_r − M y_t`
    v: Vec<f64>,
    value: f64,
}

fn e2_parts(p: &ModelParams, hp: &Hyperparams, t: &Triple) -> E2Parts {
    let m = p.projection(t.relation);
    let s = energy::translated_head(m, p.type_emb.row(t.head), p.type_rel.row(t.relation));
    let b = matvec(m, p.type_emb.row(t.tail));
    let value = real_distance(&s, &b, hp.norm_type);
    let v = s.iter().zip(&b).map(|(x, y)| x - y).collect();
    E2Parts { v, value }
}

fn e2_backward(
    p: &ModelParams,
    hp: &Hyperparams,
    t: &Triple,
    parts: &E2Parts,
    upstream: f64,
    g: &mut GradientBuffer,
) {
    if upstream == 0.0 {
        return;
    }
    let g_v = norm_grad(&parts.v, parts.value, hp.norm_type, upstream);
    let m = p.projection(t.relation);
    let y_h = p.type_emb.row(t.head);
    let y_t = p.type_emb.row(t.tail);
    let diff: Vec<f64> = y_h.iter().zip(y_t).map(|(a, b)| a - b).collect();
    outer_into(g.row_mut(TensorId::TypeProj, t.relation), &g_v, &diff, 1.0);
    mat_t_vec_into(g.row_mut(TensorId::TypeEmb, t.head), m, &g_v, 1.0);
    mat_t_vec_into(g.row_mut(TensorId::TypeEmb, t.tail), m, &g_v, -1.0);
    add_into(g.row_mut(TensorId::TypeRel, t.relation), &g_v);
}

struct E3Parts {
    head_diff: Vec<f64>,
    tail_diff: Vec<f64>,
    head_value: f64,
    tail_value: f64,
    value: f64,
}

fn e3_parts(p: &ModelParams, hp: &Hyperparams, a: &Triple, b: &Triple) -> E3Parts {
    let ma = p.projection(a.relation);
    let mb = p.projection(b.relation);
    let ha = matvec(ma, p.type_emb.row(a.head));
    let hb = matvec(mb, p.type_emb.row(b.head));
    let ta = matvec(ma, p.type_emb.row(a.tail));
    let tb = matvec(mb, p.type_emb.row(b.tail));
    let head_value = real_distance(&ha, &hb, hp.norm_type);
    let tail_value = real_distance(&ta, &tb, hp.norm_type);
    E3Parts {
        head_diff: ha.iter().zip(&hb).map(|(x, y)| x - y).collect(),
        tail_diff: ta.iter().zip(&tb).map(|(x, y)| x - y).collect(),
        head_value,
        tail_value,
        value: 0.5 * (head_value + tail_value),
    }
}

fn e3_backward(
    p: &ModelParams,
    hp: &Hyperparams,
    a: &Triple,
    b: &Triple,
    parts: &E3Parts,
    upstream: f64,
    g: &mut GradientBuffer,
) {
    if upstream == 0.0 {
        return;
    }
    let ma = p.projection(a.relation);
    let mb = p.projection(b.relation);
    for (diff, value, ea, eb) in [
        (&parts.head_diff, parts.head_value, a.head, b.head),
        (&parts.tail_diff, parts.tail_value, a.tail, b.tail),
    ] {
        let g_diff = norm_grad(diff, value, hp.norm_type, 0.5 * upstream);
        outer_into(
            g.row_mut(TensorId::TypeProj, a.relation),
            &g_diff,
            p.type_emb.row(ea),
            1.0,
        );
        outer_into(
            g.row_mut(TensorId::TypeProj, b.relation),
            &g_diff,
            p.type_emb.row(eb),
            -1.0,
        );
        mat_t_vec_into(g.row_mut(TensorId::TypeEmb, ea), ma, &g_diff, 1.0);
        mat_t_vec_into(g.row_mut(TensorId::TypeEmb, eb), mb, &g_diff, -1.0);
    }
}

/// Loss of positive `i` of `batch`, optionally differentiated into `g`.
fn item_objective(
    p: &ModelParams,
    hp: &Hyperparams,
    batch: &LossBatch,
    i: usize,
    comps: Components,
    mut g: Option<&mut GradientBuffer>,
) -> f64 {
    let pos = &batch.positives[i];
    let negs = &batch.negatives[i];
    let weights = &batch.weights[i];
    let mut term = 0.0;

    if comps.l1 {
        let pp = energy::e1_parts(p, hp, pos);
        let mut l1 = softplus(pp.value - hp.gamma1);
        if let Some(g) = g.as_deref_mut() {
            e1_backward(p, hp, pos, &pp, sigmoid(pp.value - hp.gamma1), g);
        }
        for (neg, &w) in negs.iter().zip(weights) {
            let np = energy::e1_parts(p, hp, neg);
            l1 += w * softplus(hp.gamma1 - np.value);
            if let Some(g) = g.as_deref_mut() {
                e1_backward(p, hp, neg, &np, -w * sigmoid(hp.gamma1 - np.value), g);
            }
        }
        term += l1;
    }

    if comps.l2 && hp.alpha1 != 0.0 && !negs.is_empty() {
        let pp = e2_parts(p, hp, pos);
        let uniform = 1.0 / negs.len() as f64;
        let mut l2 = 0.0;
        let mut pos_upstream = 0.0;
        for (j, neg) in negs.iter().enumerate() {
            let wt = if hp.adv_on_l2 { weights[j] } else { uniform };
            let np = e2_parts(p, hp, neg);
            let hinge = pp.value + hp.gamma2 - np.value;
            if hinge > 0.0 {
                l2 += wt * hinge;
                pos_upstream += hp.alpha1 * wt;
                if let Some(g) = g.as_deref_mut() {
                    e2_backward(p, hp, neg, &np, -hp.alpha1 * wt, g);
                }
            }
        }
        if let Some(g) = g.as_deref_mut() {
            e2_backward(p, hp, pos, &pp, pos_upstream, g);
        }
        term += hp.alpha1 * l2;
    }

    if comps.l3 && hp.alpha2 != 0.0 {
        let mut l3 = 0.0;
        for (same, other) in &batch.l3[i] {
            let sp = e3_parts(p, hp, pos, same);
            let op = e3_parts(p, hp, pos, other);
            let hinge = sp.value + hp.gamma3 - op.value;
            if hinge > 0.0 {
                l3 += hinge;
                if let Some(g) = g.as_deref_mut() {
                    e3_backward(p, hp, pos, same, &sp, hp.alpha2, g);
                    e3_backward(p, hp, pos, other, &op, -hp.alpha2, g);
                }
            }
        }
        term += hp.alpha2 * l3;
    }
    term
}

/// Objective over the whole batch; the single source of truth for both the
/// forward-only loss and the differentiated loss.
pub(crate) fn objective(
    p: &ModelParams,
    hp: &Hyperparams,
    batch: &LossBatch,
    comps: Components,
    mut grads: Option<&mut GradientBuffer>,
) -> f64 {
    let mut total = 0.0;
    for i in 0..batch.positives.len() {
        match grads.as_deref_mut() {
            Some(g) => {
                let mut local = GradientBuffer::new(p);
                total += item_objective(p, hp, batch, i, comps, Some(&mut local));
                g.add(&local);
            }
            None => total += item_objective(p, hp, batch, i, comps, None),
        }
    }
    total
}

/// Loss and its gradient with respect to every touched parameter row.
pub fn grad_total_loss(
    p: &ModelParams,
    hp: &Hyperparams,
    batch: &LossBatch,
) -> Result<(f64, GradientBuffer)> {
    grad_components(p, hp, batch, Components::ALL)
}

/// [`grad_total_loss`] restricted to a subset of the loss terms.
pub fn grad_components(
    p: &ModelParams,
    hp: &Hyperparams,
    batch: &LossBatch,
    comps: Components,
) -> Result<(f64, GradientBuffer)> {
    let mut g = GradientBuffer::new(p);
    let loss = objective(p, hp, batch, comps, Some(&mut g));
    if let Some((id, row)) = g.first_non_finite() {
        return Err(Error::NonFinite {
            tensor: id.name(),
            row,
        });
    }
    Ok((loss, g))
}

/// One scalar coordinate of the parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coordinate {
    pub tensor: TensorId,
    pub row: usize,
    pub col: usize,
}

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Central difference `(f(x+ε) − f(x−ε)) / 2ε` at one coordinate. The
/// coordinate is restored bit-for-bit afterwards.
pub fn finite_diff(
    p: &mut ModelParams,
    f: impl Fn(&ModelParams) -> f64,
    coord: Coordinate,
    eps: f64,
) -> f64 {
    let cols = p.tensor(coord.tensor).cols();
    let idx = coord.row * cols + coord.col;
    let orig = p.tensor(coord.tensor).as_slice()[idx];
    p.tensor_mut(coord.tensor).as_mut_slice()[idx] = orig + eps;
    let up = f(p);
    p.tensor_mut(coord.tensor).as_mut_slice()[idx] = orig - eps;
    let down = f(p);
    p.tensor_mut(coord.tensor).as_mut_slice()[idx] = orig;
    (up - down) / (2.0 * eps)
}

/// Smallest distance of any hinge argument or norm argument to its kink.
pub fn kink_distance(p: &ModelParams, hp: &Hyperparams, batch: &LossBatch, comps: Components) -> f64 {
    let mut min = f64::INFINITY;
    let e1_kink = |t: &Triple| -> f64 {
        let parts = energy::e1_parts(p, hp, t);
        match hp.norm_e1 {
            Norm::L2 => parts.value,
            Norm::L1 => (0..p.k())
                .map(|i| {
                    let dr = parts.rot_re[i] - parts.pt_re[i];
                    let di = parts.rot_im[i] - parts.pt_im[i];
                    (dr * dr + di * di).sqrt()
                })
                .fold(f64::INFINITY, f64::min),
        }
    };
    let vec_kink = |v: &[f64], value: f64| -> f64 {
        match hp.norm_type {
            Norm::L2 => value,
            Norm::L1 => v.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min),
        }
    };
    for (i, pos) in batch.positives.iter().enumerate() {
        let negs = &batch.negatives[i];
        if comps.l1 {
            min = min.min(e1_kink(pos));
            for n in negs {
                min = min.min(e1_kink(n));
            }
        }
        if comps.l2 && hp.alpha1 != 0.0 {
            let pp = e2_parts(p, hp, pos);
            min = min.min(vec_kink(&pp.v, pp.value));
            for n in negs {
                let np = e2_parts(p, hp, n);
                min = min.min(vec_kink(&np.v, np.value));
                min = min.min((pp.value + hp.gamma2 - np.value).abs());
            }
        }
        if comps.l3 && hp.alpha2 != 0.0 {
            for (same, other) in &batch.l3[i] {
                let sp = e3_parts(p, hp, pos, same);
                let op = e3_parts(p, hp, pos, other);
                for parts in [&sp, &op] {
                    min = min.min(vec_kink(&parts.head_diff, parts.head_value));
                    min = min.min(vec_kink(&parts.tail_diff, parts.tail_value));
                }
                min = min.min((sp.value + hp.gamma3 - op.value).abs());
            }
        }
    }
    min
}

pub mod check {
    //! Randomized analytic-vs-numeric gradient comparison.

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Loss term under test.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum LossKind {
        /// Entity-specific loss with self-adversarial negative weights.
        L1Adversarial,
        /// Entity-specific loss with uniform negative weights.
        L1Uniform,
        L2,
        L3,
    }

    impl LossKind {
        pub const ALL: [LossKind; 4] = [
            LossKind::L1Adversarial,
            LossKind::L1Uniform,
            LossKind::L2,
            LossKind::L3,
        ];

        pub fn name(self) -> &'static str {
            match self {
                LossKind::L1Adversarial => "L1(adv)",
                LossKind::L1Uniform => "L1(uniform)",
                LossKind::L2 => "L2",
                LossKind::L3 => "L3",
            }
        }

        fn components(self) -> Components {
            match self {
                LossKind::L1Adversarial | LossKind::L1Uniform => Components {
                    l1: true,
                    l2: false,
                    l3: false,
                },
                LossKind::L2 => Components {
                    l1: false,
                    l2: true,
                    l3: false,
                },
                LossKind::L3 => Components {
                    l1: false,
                    l2: false,
                    l3: true,
                },
            }
        }
    }

    /// Coordinates whose analytic and numeric magnitudes are both below
    /// this are compared absolutely rather than relatively.
    pub const RELATIVE_FLOOR: f64 = 1e-3;
    pub const KINK_MARGIN: f64 = 1e-3;
    pub const TOLERANCE: f64 = 1e-4;

    pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
    }

    /// A small random model with a random batch.
    pub struct Case {
        pub hp: Hyperparams,
        pub params: ModelParams,
        pub batch: LossBatch,
    }

    pub const CASE_ENTITIES: usize = 5;
    pub const CASE_RELATIONS: usize = 3;

    fn corrupt(rng: &mut impl Rng, t: &Triple) -> Triple {
        loop {
            let e = rng.gen_range(0..CASE_ENTITIES);
            let c = if rng.gen_bool(0.5) {
                Triple::new(e, t.relation, t.tail)
            } else {
                Triple::new(t.head, t.relation, e)
            };
            if c != *t {
                return c;
            }
        }
    }

    /// Random case with k = 4, d = 3, 5 entities and 3 relations.
    pub fn random_case(rng: &mut impl Rng, kind: LossKind) -> Case {
        let norm = |rng: &mut dyn rand::RngCore| if rng.gen_bool(0.5) { Norm::L1 } else { Norm::L2 };
        let hp = Hyperparams {
            k: 4,
            d: 3,
            gamma1: rng.gen_range(0.5..4.0),
            gamma2: rng.gen_range(0.2..2.0),
            gamma3: rng.gen_range(0.2..2.0),
            alpha1: rng.gen_range(0.2..1.5),
            alpha2: rng.gen_range(0.2..1.5),
            adv_beta: rng.gen_range(0.0..2.0),
            adv_on_l2: rng.gen_bool(0.5),
            norm_e1: norm(rng),
            norm_type: norm(rng),
            projection_mode: if rng.gen_bool(0.5) {
                ProjectionMode::Hyperplane
            } else {
                ProjectionMode::LiteralScaling
            },
            ..Hyperparams::default()
        };
        let mut params =
            ModelParams::init_sized(&hp, CASE_ENTITIES, CASE_RELATIONS, rng.gen()).unwrap();
        // Move the projections well away from identity.
        for x in params.type_proj.as_mut_slice() {
            *x += rng.gen_range(-0.8..0.8);
        }
        for x in params.ent_re.as_mut_slice().iter_mut().chain(params.ent_im.as_mut_slice()) {
            *x *= 2.0;
        }

        let n_pos = 2;
        let n_neg = 3;
        let mut batch = LossBatch::default();
        for _ in 0..n_pos {
            let pos = Triple::new(
                rng.gen_range(0..CASE_ENTITIES),
                rng.gen_range(0..CASE_RELATIONS),
                rng.gen_range(0..CASE_ENTITIES),
            );
            let negs: Vec<Triple> = (0..n_neg).map(|_| corrupt(rng, &pos)).collect();
            let weights = match kind {
                LossKind::L1Uniform => vec![1.0 / n_neg as f64; n_neg],
                _ => {
                    let e: Vec<f64> = negs
                        .iter()
                        .map(|n| energy::energy_e1(&params, &hp, n))
                        .collect();
                    crate::training::adversarial_weights(&e, hp.adv_beta)
                }
            };
            let same = Triple::new(
                rng.gen_range(0..CASE_ENTITIES),
                pos.relation,
                rng.gen_range(0..CASE_ENTITIES),
            );
            let other_rel = (pos.relation + rng.gen_range(1..CASE_RELATIONS)) % CASE_RELATIONS;
            let other = Triple::new(
                rng.gen_range(0..CASE_ENTITIES),
                other_rel,
                rng.gen_range(0..CASE_ENTITIES),
            );
            batch.positives.push(pos);
            batch.negatives.push(negs);
            batch.weights.push(weights);
            batch.l3.push(vec![(same, other)]);
        }
        Case { hp, params, batch }
    }

    /// Largest relative error per tensor family for one case.
    pub fn case_errors(case: &mut Case, kind: LossKind) -> [f64; 7] {
        let comps = kind.components();
        let (_, analytic) = grad_components(&case.params, &case.hp, &case.batch, comps)
            .expect("finite gradients");
        let hp = case.hp.clone();
        let batch = case.batch.clone();
        let f = |p: &ModelParams| objective(p, &hp, &batch, comps, None);
        let mut worst = [0.0f64; 7];
        for id in TensorId::ALL {
            let (rows, cols) = (case.params.tensor(id).rows(), case.params.tensor(id).cols());
            for row in 0..rows {
                for col in 0..cols {
                    let coord = Coordinate {
                        tensor: id,
                        row,
                        col,
                    };
                    let numeric = finite_diff(&mut case.params, f, coord, DEFAULT_FD_EPS);
                    let err = relative_error(analytic.get(id, row, col), numeric);
                    worst[id.index()] = worst[id.index()].max(err);
                }
            }
        }
        worst
    }

    /// Worst error per (loss, tensor) over `trials` cases.
    #[derive(Debug, Clone)]
    pub struct Report {
        pub trials: usize,
        pub worst: Vec<(LossKind, TensorId, f64)>,
        /// Cases redrawn because they fell within the kink margin.
        pub redrawn: usize,
    }

    impl Report {
        pub fn max_error(&self) -> f64 {
            self.worst.iter().map(|w| w.2).fold(0.0, f64::max)
        }

        pub fn passed(&self) -> bool {
            self.max_error() < TOLERANCE
        }
    }

    pub fn run(seed: u64, trials: usize) -> Report {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = Vec::new();
        let mut redrawn = 0;
        for kind in LossKind::ALL {
            let mut per_tensor = [0.0f64; 7];
            for _ in 0..trials {
                let mut case = loop {
                    let case = random_case(&mut rng, kind);
                    if kink_distance(&case.params, &case.hp, &case.batch, kind.components())
                        >= KINK_MARGIN
                    {
                        break case;
                    }
                    redrawn += 1;
                };
                let errs = case_errors(&mut case, kind);
                for (w, e) in per_tensor.iter_mut().zip(errs) {
                    *w = w.max(e);
                }
            }
            for id in TensorId::ALL {
                worst.push((kind, id, per_tensor[id.index()]));
            }
        }
        Report {
            trials,
            worst,
            redrawn,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::check::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(-1000.0), 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn finite_diff_linear_and_constant() {
        let hp = Hyperparams {
            k: 2,
            d: 2,
            ..Hyperparams::default()
        };
        let mut p = ModelParams::init_sized(&hp, 2, 1, 0).unwrap();
        let coord = Coordinate {
            tensor: TensorId::TypeRel,
            row: 0,
            col: 1,
        };
        let before = p.clone();
        let lin = finite_diff(&mut p, |q| 3.5 * q.type_rel.row(0)[1] - 2.0, coord, DEFAULT_FD_EPS);
        assert!((lin - 3.5).abs() < 1e-10);
        assert_eq!(finite_diff(&mut p, |_| 7.0, coord, DEFAULT_FD_EPS), 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn e2_gradient_wrt_projection_entry() {
        let hp = Hyperparams {
            k: 2,
            d: 3,
            ..Hyperparams::default()
        };
        let mut p = ModelParams::init_sized(&hp, 3, 2, 4).unwrap();
        let t = Triple::new(0, 1, 2);
        let parts = e2_parts(&p, &hp, &t);
        let mut g = GradientBuffer::new(&p);
        e2_backward(&p, &hp, &t, &parts, 1.0, &mut g);
        for col in 0..9 {
            let coord = Coordinate {
                tensor: TensorId::TypeProj,
                row: 1,
                col,
            };
            let numeric = finite_diff(&mut p, |q| energy::energy_e2(q, &hp, &t), coord, DEFAULT_FD_EPS);
            let analytic = g.get(TensorId::TypeProj, 1, col);
            assert!(
                (analytic - numeric).abs() <= 1e-6 * analytic.abs().max(1e-3),
                "col {col}: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn small_batch_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut checked = 0;
        while checked < 5 {
            let mut case = random_case(&mut rng, LossKind::L1Adversarial);
            if kink_distance(&case.params, &case.hp, &case.batch, Components::ALL) < KINK_MARGIN {
                continue;
            }
            let (_, analytic) = grad_total_loss(&case.params, &case.hp, &case.batch).unwrap();
            let hp = case.hp.clone();
            let batch = case.batch.clone();
            for id in TensorId::ALL {
                for (row, grad_row) in analytic.clone().iter(id) {
                    for (col, &a) in grad_row.iter().enumerate() {
                        let coord = Coordinate { tensor: id, row, col };
                        let n = finite_diff(
                            &mut case.params,
                            |q| objective(q, &hp, &batch, Components::ALL, None),
                            coord,
                            DEFAULT_FD_EPS,
                        );
                        assert!(relative_error(a, n) < 1e-6, "{id:?}[{row},{col}]: {a} vs {n}");
                    }
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn inactive_hinges_give_no_type_gradient() {
        let hp = Hyperparams {
            k: 4,
            d: 3,
            gamma2: 0.5,
            gamma3: 0.5,
            alpha1: 1.0,
            alpha2: 1.0,
            ..Hyperparams::default()
        };
        let mut p = ModelParams::init_sized(&hp, 3, 2, 3).unwrap();
        p.type_rel.as_mut_slice().fill(0.0);
        p.type_emb.row_mut(0).copy_from_slice(&[1.0, 1.0, 1.0]);
        p.type_emb.row_mut(1).copy_from_slice(&[1.0, 1.0, 1.0]);
        p.type_emb.row_mut(2).copy_from_slice(&[5.0, -5.0, 5.0]);
        let pos = Triple::new(0, 0, 1);
        let mut batch = LossBatch::default();
        batch.push_item(
            pos,
            vec![Triple::new(2, 0, 1), Triple::new(0, 0, 2)],
            vec![0.5, 0.5],
            vec![(Triple::new(1, 0, 0), Triple::new(2, 1, 2))],
        );
        let comps = Components {
            l1: false,
            l2: true,
            l3: true,
        };
        let (loss, g) = grad_components(&p, &hp, &batch, comps).unwrap();
        assert_eq!(loss, 0.0);
        for id in TensorId::ALL {
            assert!(g.iter(id).all(|(_, r)| r.iter().all(|&x| x == 0.0)));
        }
    }

    #[test]
    fn duplicate_item_doubles_gradient_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let case = random_case(&mut rng, LossKind::L1Adversarial);
        let mut single = LossBatch::default();
        single.push_item(
            case.batch.positives[0],
            case.batch.negatives[0].clone(),
            case.batch.weights[0].clone(),
            case.batch.l3[0].clone(),
        );
        let mut double = single.clone();
        double.push_item(
            case.batch.positives[0],
            case.batch.negatives[0].clone(),
            case.batch.weights[0].clone(),
            case.batch.l3[0].clone(),
        );
        let (_, g1) = grad_total_loss(&case.params, &case.hp, &single).unwrap();
        let (_, g2) = grad_total_loss(&case.params, &case.hp, &double).unwrap();
        for id in TensorId::ALL {
            assert_eq!(g1.touched_rows(id), g2.touched_rows(id));
            for (row, r1) in g1.iter(id) {
                let r2 = g2.row(id, row).unwrap();
                for (a, b) in r1.iter().zip(r2) {
                    assert_eq!(2.0 * a, *b);
                }
            }
        }
    }

    #[test]
    fn untouched_entities_have_no_gradient_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let case = random_case(&mut rng, LossKind::L1Uniform);
        let (_, g) = grad_total_loss(&case.params, &case.hp, &case.batch).unwrap();
        let mut used = std::collections::BTreeSet::new();
        for (i, pos) in case.batch.positives.iter().enumerate() {
            for t in std::iter::once(pos)
                .chain(&case.batch.negatives[i])
                .chain(case.batch.l3[i].iter().flat_map(|(a, b)| [a, b]))
            {
                used.insert(t.head);
                used.insert(t.tail);
            }
        }
        for id in [TensorId::EntRe, TensorId::EntIm, TensorId::TypeEmb] {
            for (row, _) in g.iter(id) {
                assert!(used.contains(&row));
            }
        }
    }

    #[test]
    fn grad_loss_equals_forward_loss_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let case = random_case(&mut rng, LossKind::L1Adversarial);
            let forward = crate::training::total_loss(&case.batch, &case.params, &case.hp);
            let (loss, _) = grad_total_loss(&case.params, &case.hp, &case.batch).unwrap();
            assert_eq!(forward.to_bits(), loss.to_bits());
        }
    }

    #[test]
    fn quick_check_passes() {
        let report = run(1, 5);
        assert!(report.passed(), "{report:?}");
    }
}
