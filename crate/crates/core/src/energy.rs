//! Forward evaluation of the energy functions.
//!
//! * `E1`: rotation of the hyper-plane-projected head onto the projected
//!   tail in complex space.
//! * `E2`: translation between relation-projected type embeddings.
//! * `E3`: dissimilarity of the relation-projected type embeddings of two
//!   triples.
//! * prediction energy: `E1 + alpha1 * E2`.
//!
//! The slice-level helpers are shared with the evaluator's batched
//! candidate scoring, so both paths produce bit-identical energies.

use crate::error::{Error, Result};
use crate::kg_data::Triple;
use crate::params::{Hyperparams, ModelParams, Norm, ProjectionMode};

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVec {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVec {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::DimensionMismatch(format!(
                "real part has {} components, imaginary part {}",
                re.len(),
                im.len()
            )));
        }
        Ok(ComplexVec { re, im })
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeVec(pub Vec<f64>);

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projects `(re, im)` for normal `w` into `(out_re, out_im)`.
///
/// Returns the two real dot products `(w·re, w·im)`.
pub(crate) fn project_into(
    re: &[f64],
    im: &[f64],
    w: &[f64],
    mode: ProjectionMode,
    out_re: &mut [f64],
    out_im: &mut [f64],
) -> (f64, f64) {
    let a = dot(w, re);
    let b = dot(w, im);
    match mode {
        ProjectionMode::Hyperplane => {
            for i in 0..w.len() {
                out_re[i] = re[i] - a * w[i];
                out_im[i] = im[i] - b * w[i];
            }
        }
        ProjectionMode::LiteralScaling => {
            // (1 - (a + ib)) * (re + i im)
            let s = 1.0 - a;
            for i in 0..w.len() {
                out_re[i] = s * re[i] + b * im[i];
                out_im[i] = s * im[i] - b * re[i];
            }
        }
    }
    (a, b)
}

/// Complex Hadamard product with the unit-modulus relation `(cos, sin)`.
pub(crate) fn rotate_into(
    re: &[f64],
    im: &[f64],
    cos: &[f64],
    sin: &[f64],
    out_re: &mut [f64],
    out_im: &mut [f64],
) {
    for i in 0..re.len() {
        out_re[i] = re[i] * cos[i] - im[i] * sin[i];
        out_im[i] = re[i] * sin[i] + im[i] * cos[i];
    }
}

/// `‖a − b‖` for complex vectors; L1 sums component moduli.
pub(crate) fn complex_distance(
    a_re: &[f64],
    a_im: &[f64],
    b_re: &[f64],
    b_im: &[f64],
    norm: Norm,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..a_re.len() {
        let dr = a_re[i] - b_re[i];
        let di = a_im[i] - b_im[i];
        let sq = dr * dr + di * di;
        match norm {
            Norm::L1 => acc += sq.sqrt(),
            Norm::L2 => acc += sq,
        }
    }
    match norm {
        Norm::L1 => acc,
        Norm::L2 => acc.sqrt(),
    }
}

/// `‖a − b‖` for real vectors.
pub(crate) fn real_distance(a: &[f64], b: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        Norm::L2 => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
    }
}

/// `out = M y` for a row-major square `M`.
pub(crate) fn matvec_into(m: &[f64], y: &[f64], out: &mut [f64]) {
    let d = y.len();
    for i in 0..d {
        out[i] = dot(&m[i * d..(i + 1) * d], y);
    }
}

pub(crate) fn matvec(m: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    matvec_into(m, y, &mut out);
    out
}

/// `(M y_h) + y_r`, the translated head side of the type encoder.
pub(crate) fn translated_head(m: &[f64], y_h: &[f64], y_r: &[f64]) -> Vec<f64> {
    let mut s = matvec(m, y_h);
    for (x, r) in s.iter_mut().zip(y_r) {
        *x += r;
    }
    s
}

/// Projects entity `h` onto the hyper-plane with normal `w`.
pub fn project_entity(h: &ComplexVec, w: &[f64], mode: ProjectionMode) -> Result<ComplexVec> {
    if h.re.len() != w.len() || h.im.len() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "entity has {} components, normal has {}",
            h.re.len(),
            w.len()
        )));
    }
    let mut out = ComplexVec {
        re: vec![0.0; w.len()],
        im: vec![0.0; w.len()],
    };
    project_into(&h.re, &h.im, w, mode, &mut out.re, &mut out.im);
    Ok(out)
}

/// `M·y` for a row-major d×d `M`.
pub fn project_type(y: &TypeVec, m: &[f64]) -> Result<TypeVec> {
    let d = y.0.len();
    if m.len() != d * d {
        return Err(Error::DimensionMismatch(format!(
            "type vector has {d} components, matrix has {} entries",
            m.len()
        )));
    }
    Ok(TypeVec(matvec(m, &y.0)))
}

/// `‖M y_h + y_r − M y_t‖` from raw parts.
pub fn type_energy(m: &[f64], y_h: &[f64], y_r: &[f64], y_t: &[f64], norm: Norm) -> f64 {
    let s = translated_head(m, y_h, y_r);
    let b = matvec(m, y_t);
    real_distance(&s, &b, norm)
}

/// Intermediates of one `E1` evaluation, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct E1Parts {
    pub pt_re: Vec<f64>,
    pub pt_im: Vec<f64>,
    pub rot_re: Vec<f64>,
    pub rot_im: Vec<f64>,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
    /// `(w·h_re, w·h_im)`.
    pub head_dots: (f64, f64),
    /// `(w·t_re, w·t_im)`.
    pub tail_dots: (f64, f64),
    pub value: f64,
}

pub(crate) fn e1_parts(p: &ModelParams, hp: &Hyperparams, t: &Triple) -> E1Parts {
    let k = p.k();
    let w = p.hyperplane.row(t.relation);
    let (cos, sin) = p.relation_vector(t.relation);
    let mut ph_re = vec![0.0; k];
    let mut ph_im = vec![0.0; k];
    let mut pt_re = vec![0.0; k];
    let mut pt_im = vec![0.0; k];
    let head_dots = project_into(
        p.ent_re.row(t.head),
        p.ent_im.row(t.head),
        w,
        hp.projection_mode,
        &mut ph_re,
        &mut ph_im,
    );
    let tail_dots = project_into(
        p.ent_re.row(t.tail),
        p.ent_im.row(t.tail),
        w,
        hp.projection_mode,
        &mut pt_re,
        &mut pt_im,
    );
    let mut rot_re = vec![0.0; k];
    let mut rot_im = vec![0.0; k];
    rotate_into(&ph_re, &ph_im, &cos, &sin, &mut rot_re, &mut rot_im);
    let value = complex_distance(&rot_re, &rot_im, &pt_re, &pt_im, hp.norm_e1);
    E1Parts {
        pt_re,
        pt_im,
        rot_re,
        rot_im,
        cos,
        sin,
        head_dots,
        tail_dots,
        value,
    }
}

/// Entity-specific energy of triple `t`.
pub fn energy_e1(p: &ModelParams, hp: &Hyperparams, t: &Triple) -> f64 {
    e1_parts(p, hp, t).value
}

/// Type-specific energy of triple `t`.
pub fn energy_e2(p: &ModelParams, hp: &Hyperparams, t: &Triple) -> f64 {
    type_energy(
        p.projection(t.relation),
        p.type_emb.row(t.head),
        p.type_rel.row(t.relation),
        p.type_emb.row(t.tail),
        hp.norm_type,
    )
}

/// Type-similarity energy between two triples.
pub fn energy_e3(p: &ModelParams, hp: &Hyperparams, a: &Triple, b: &Triple) -> f64 {
    let ma = p.projection(a.relation);
    let mb = p.projection(b.relation);
    let ha = matvec(ma, p.type_emb.row(a.head));
    let hb = matvec(mb, p.type_emb.row(b.head));
    let ta = matvec(ma, p.type_emb.row(a.tail));
    let tb = matvec(mb, p.type_emb.row(b.tail));
    0.5 * (real_distance(&ha, &hb, hp.norm_type) + real_distance(&ta, &tb, hp.norm_type))
}

/// Prediction energy `E1 + alpha1 * E2`; lower is more plausible.
pub fn energy_pred(p: &ModelParams, hp: &Hyperparams, t: &Triple) -> f64 {
    let e1 = energy_e1(p, hp, t);
    if hp.alpha1 == 0.0 {
        return e1;
    }
    e1 + hp.alpha1 * energy_e2(p, hp, t)
}
