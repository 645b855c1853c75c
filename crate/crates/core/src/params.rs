//! Hyperparameters, learnable tensors, initialization, constraint
//! maintenance and checkpoint persistence.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg_data::{RelationId, TripleStore};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "L1",
            Norm::L2 => "L2",
        })
    }
}

impl FromStr for Norm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "L1" => Ok(Norm::L1),
            "L2" => Ok(Norm::L2),
            _ => Err(format!("unknown norm `{s}`")),
        }
    }
}

/// How an entity is projected onto a relation's hyper-plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    /// `x - (w·x) w`, applied to real and imaginary parts separately.
    Hyperplane,
    /// `(1 - w·x) x` with the complex scalar `w·x = w·re + i w·im`.
    LiteralScaling,
}

impl fmt::Display for ProjectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectionMode::Hyperplane => "hyperplane",
            ProjectionMode::LiteralScaling => "literal-scaling",
        })
    }
}

impl FromStr for ProjectionMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hyperplane" => Ok(ProjectionMode::Hyperplane),
            "literal-scaling" => Ok(ProjectionMode::LiteralScaling),
            _ => Err(format!("unknown projection mode `{s}`")),
        }
    }
}

/// Every scalar knob of the model and its training.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Entity-space dimension (complex components).
    pub k: usize,
    /// Type-space dimension.
    pub d: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    /// Weight of the type-specific pair-wise loss (and of E2 at prediction).
    pub alpha1: f64,
    /// Weight of the type-similarity triple loss.
    pub alpha2: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Negatives per positive.
    pub n_neg: usize,
    /// Self-adversarial temperature.
    pub adv_beta: f64,
    /// Apply adversarial weights to the type hinge too (otherwise uniform).
    pub adv_on_l2: bool,
    /// Type-similarity pairs sampled per anchor.
    pub l3_pairs: usize,
    pub norm_e1: Norm,
    pub norm_type: Norm,
    pub epochs: usize,
    /// Step budget; 0 means `epochs` full passes.
    pub max_steps: usize,
    /// Validation interval in steps; 0 disables periodic validation.
    pub eval_every: usize,
    /// Early stop after this many evaluations without improvement; 0 disables.
    pub patience: usize,
    pub seed: u64,
    pub projection_mode: ProjectionMode,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            k: 1000,
            d: 200,
            gamma1: 10.0,
            gamma2: 6.0,
            gamma3: 3.0,
            alpha1: 0.1,
            alpha2: 0.5,
            lr: 1e-4,
            batch_size: 1024,
            n_neg: 16,
            adv_beta: 1.0,
            adv_on_l2: false,
            l3_pairs: 1,
            norm_e1: Norm::L1,
            norm_type: Norm::L2,
            epochs: 100,
            max_steps: 0,
            eval_every: 1000,
            patience: 10,
            seed: 0,
            projection_mode: ProjectionMode::Hyperplane,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidHyperparams(m.to_owned()));
        if self.k == 0 || self.d == 0 {
            return bad("k and d must be at least 1");
        }
        let margins = [self.gamma1, self.gamma2, self.gamma3];
        if margins.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return bad("margins must be positive and finite");
        }
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) || !self.alpha1.is_finite() || !self.alpha2.is_finite() {
            return bad("alpha1 and alpha2 must be nonnegative and finite");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.n_neg == 0 {
            return bad("n_neg must be at least 1");
        }
        if !(self.adv_beta >= 0.0 && self.adv_beta.is_finite()) {
            return bad("adv_beta must be nonnegative and finite");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive and finite");
        }
        Ok(())
    }

    /// `key=value` lines, one per field, floats in round-trip form.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("k", self.k.to_string()),
            ("d", self.d.to_string()),
            ("gamma1", format!("{:?}", self.gamma1)),
            ("gamma2", format!("{:?}", self.gamma2)),
            ("gamma3", format!("{:?}", self.gamma3)),
            ("alpha1", format!("{:?}", self.alpha1)),
            ("alpha2", format!("{:?}", self.alpha2)),
            ("lr", format!("{:?}", self.lr)),
            ("batch_size", self.batch_size.to_string()),
            ("n_neg", self.n_neg.to_string()),
            ("adv_beta", format!("{:?}", self.adv_beta)),
            ("adv_on_l2", self.adv_on_l2.to_string()),
            ("l3_pairs", self.l3_pairs.to_string()),
            ("norm_e1", self.norm_e1.to_string()),
            ("norm_type", self.norm_type.to_string()),
            ("epochs", self.epochs.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("projection_mode", self.projection_mode.to_string()),
        ]
    }

    /// Sets one field from its textual form. Returns `Ok(false)` for a key
    /// that is not a hyperparameter.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        fn p<T: FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse::<T>().map_err(|_| format!("cannot parse `{v}`"))
        }
        match key {
            "k" => self.k = p(value)?,
            "d" => self.d = p(value)?,
            "gamma1" => self.gamma1 = p(value)?,
            "gamma2" => self.gamma2 = p(value)?,
            "gamma3" => self.gamma3 = p(value)?,
            "alpha1" => self.alpha1 = p(value)?,
            "alpha2" => self.alpha2 = p(value)?,
            "lr" => self.lr = p(value)?,
            "batch_size" => self.batch_size = p(value)?,
            "n_neg" => self.n_neg = p(value)?,
            "adv_beta" => self.adv_beta = p(value)?,
            "adv_on_l2" => self.adv_on_l2 = p(value)?,
            "l3_pairs" => self.l3_pairs = p(value)?,
            "norm_e1" => self.norm_e1 = value.parse()?,
            "norm_type" => self.norm_type = value.parse()?,
            "epochs" => self.epochs = p(value)?,
            "max_steps" => self.max_steps = p(value)?,
            "eval_every" => self.eval_every = p(value)?,
            "patience" => self.patience = p(value)?,
            "seed" => self.seed = p(value)?,
            "projection_mode" => self.projection_mode = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn from_kv(text: &str) -> Result<Self> {
        let mut hp = Hyperparams::default();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::CorruptCheckpoint(format!("bad hyperparameter line `{line}`")))?;
            match hp.set(k, v) {
                Ok(true) => {}
                Ok(false) => {
                    return Err(Error::CorruptCheckpoint(format!("unknown hyperparameter `{k}`")))
                }
                Err(e) => return Err(Error::CorruptCheckpoint(format!("{k}: {e}"))),
            }
        }
        Ok(hp)
    }
}

/// Identifies one learnable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TensorId {
    EntRe,
    EntIm,
    RelPhase,
    Hyperplane,
    TypeEmb,
    TypeRel,
    TypeProj,
}

impl TensorId {
    pub const ALL: [TensorId; 7] = [
        TensorId::EntRe,
        TensorId::EntIm,
        TensorId::RelPhase,
        TensorId::Hyperplane,
        TensorId::TypeEmb,
        TensorId::TypeRel,
        TensorId::TypeProj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TensorId::EntRe => "ent_re",
            TensorId::EntIm => "ent_im",
            TensorId::RelPhase => "rel_phase",
            TensorId::Hyperplane => "hyperplane",
            TensorId::TypeEmb => "type_emb",
            TensorId::TypeRel => "type_rel",
            TensorId::TypeProj => "type_proj",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_type_tensor(self) -> bool {
        matches!(self, TensorId::TypeEmb | TensorId::TypeRel | TensorId::TypeProj)
    }
}

/// All learnable tensors.
///
/// `type_proj` stores each relation's d×d projection as one row of length
/// d², row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub ent_re: Matrix,
    pub ent_im: Matrix,
    pub rel_phase: Matrix,
    pub hyperplane: Matrix,
    pub type_emb: Matrix,
    pub type_rel: Matrix,
    pub type_proj: Matrix,
}

/// Wraps an angle into (−π, π]. Angles already in range are returned
/// unchanged.
pub fn wrap_phase(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let turns = ((theta - PI) / (2.0 * PI)).ceil();
    let wrapped = theta - turns * 2.0 * PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

fn random_unit_row(rng: &mut impl Rng, row: &mut [f64]) {
    loop {
        for x in row.iter_mut() {
            *x = rng.gen_range(-1.0..=1.0);
        }
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            row.iter_mut().for_each(|x| *x /= n);
            return;
        }
    }
}

/// Unit-norm tolerance below which a hyperplane row is left untouched.
const UNIT_TOLERANCE: f64 = 1e-12;

impl ModelParams {
    pub fn init(hp: &Hyperparams, store: &TripleStore, seed: u64) -> Result<Self> {
        Self::init_sized(hp, store.num_entities(), store.num_relations(), seed)
    }

    pub fn init_sized(hp: &Hyperparams, n_ent: usize, n_rel: usize, seed: u64) -> Result<Self> {
        hp.validate()?;
        if n_ent == 0 {
            return Err(Error::EmptyVocabulary("entities"));
        }
        if n_rel == 0 {
            return Err(Error::EmptyVocabulary("relations"));
        }
        let (k, d) = (hp.k, hp.d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize, bound: f64| {
            let mut m = Matrix::zeros(rows, cols);
            m.as_mut_slice()
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-bound..=bound));
            m
        };
        let ent_bound = 6.0 / ((2 * k) as f64).sqrt();
        let type_bound = 6.0 / (d as f64).sqrt();
        let ent_re = uniform(n_ent, k, ent_bound);
        let ent_im = uniform(n_ent, k, ent_bound);
        let type_emb = uniform(n_ent, d, type_bound);
        let type_rel = uniform(n_rel, d, type_bound);

        let mut rel_phase = Matrix::zeros(n_rel, k);
        for x in rel_phase.as_mut_slice() {
            // u in [0, 1) maps onto (−π, π]
            let u: f64 = rng.gen();
            *x = PI - 2.0 * PI * u;
        }
        let mut hyperplane = Matrix::zeros(n_rel, k);
        for r in 0..n_rel {
            random_unit_row(&mut rng, hyperplane.row_mut(r));
        }
        let mut type_proj = Matrix::zeros(n_rel, d * d);
        for r in 0..n_rel {
            let row = type_proj.row_mut(r);
            for i in 0..d {
                for j in 0..d {
                    let noise: f64 = rng.gen_range(-0.01..=0.01);
                    row[i * d + j] = if i == j { 1.0 } else { 0.0 } + noise;
                }
            }
        }
        Ok(ModelParams {
            ent_re,
            ent_im,
            rel_phase,
            hyperplane,
            type_emb,
            type_rel,
            type_proj,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.ent_re.rows()
    }

    pub fn num_relations(&self) -> usize {
        self.rel_phase.rows()
    }

    pub fn k(&self) -> usize {
        self.ent_re.cols()
    }

    pub fn d(&self) -> usize {
        self.type_emb.cols()
    }

    pub fn tensor(&self, id: TensorId) -> &Matrix {
        match id {
            TensorId::EntRe => &self.ent_re,
            TensorId::EntIm => &self.ent_im,
            TensorId::RelPhase => &self.rel_phase,
            TensorId::Hyperplane => &self.hyperplane,
            TensorId::TypeEmb => &self.type_emb,
            TensorId::TypeRel => &self.type_rel,
            TensorId::TypeProj => &self.type_proj,
        }
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut Matrix {
        match id {
            TensorId::EntRe => &mut self.ent_re,
            TensorId::EntIm => &mut self.ent_im,
            TensorId::RelPhase => &mut self.rel_phase,
            TensorId::Hyperplane => &mut self.hyperplane,
            TensorId::TypeEmb => &mut self.type_emb,
            TensorId::TypeRel => &mut self.type_rel,
            TensorId::TypeProj => &mut self.type_proj,
        }
    }

    /// Relation `r` in entity space: component i is (cos θ_i, sin θ_i).
    pub fn relation_vector(&self, r: RelationId) -> (Vec<f64>, Vec<f64>) {
        let phase = self.rel_phase.row(r);
        (
            phase.iter().map(|t| t.cos()).collect(),
            phase.iter().map(|t| t.sin()).collect(),
        )
    }

    /// The d×d projection of relation `r`, row-major.
    pub fn projection(&self, r: RelationId) -> &[f64] {
        self.type_proj.row(r)
    }

    /// Renormalizes hyperplane normals and wraps phases into (−π, π].
    ///
    /// A zero-norm normal is replaced by a fresh random unit vector drawn
    /// from `rng`; the ids of such relations are returned.
    pub fn enforce_constraints(&mut self, rng: &mut impl Rng) -> Vec<RelationId> {
        let mut reinitialized = Vec::new();
        for r in 0..self.hyperplane.rows() {
            let row = self.hyperplane.row_mut(r);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                random_unit_row(rng, row);
                reinitialized.push(r);
            } else if (n - 1.0).abs() > UNIT_TOLERANCE {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        for x in self.rel_phase.as_mut_slice() {
            *x = wrap_phase(*x);
        }
        reinitialized
    }

    /// Per relation, `min_i cos θ_i`; −1 means some component is exactly −1.
    pub fn min_cos_phase(&self) -> Vec<f64> {
        (0..self.num_relations())
            .map(|r| {
                self.rel_phase
                    .row(r)
                    .iter()
                    .map(|t| t.cos())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    /// First tensor/row holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<(TensorId, usize)> {
        for id in TensorId::ALL {
            let m = self.tensor(id);
            for r in 0..m.rows() {
                if m.row(r).iter().any(|x| !x.is_finite()) {
                    return Some((id, r));
                }
            }
        }
        None
    }

    /// FNV-1a over the bit patterns of every tensor.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for id in TensorId::ALL {
            for x in self.tensor(id).as_slice() {
                for b in x.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

pub mod checkpoint {
    //! Binary checkpoint format.
    //!
    //! ```text
    //! "AETR"                      magic, 4 bytes
    //! u32 LE                      format version
    //! u64 LE + bytes              hyperparameters as UTF-8 `key=value\n` lines
    //! u64 LE                      tensor count
    //! per tensor:
    //!   u64 LE + bytes            UTF-8 name
    //!   u64 LE                    rank
    //!   u64 LE * rank             dims
    //!   f64 LE * product(dims)    values, row-major
    //! ```

    use std::fs;
    use std::path::Path;

    use super::{Hyperparams, Matrix, ModelParams, TensorId};
    use crate::error::{Error, Result};

    pub const MAGIC: &[u8; 4] = b"AETR";
    pub const VERSION: u32 = 1;

    /// Shape a loaded checkpoint must match.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct Expected {
        pub num_entities: usize,
        pub num_relations: usize,
        pub k: Option<usize>,
        pub d: Option<usize>,
    }

    fn tensor_dims(id: TensorId, m: &Matrix, d: usize) -> Vec<usize> {
        match id {
            TensorId::TypeProj => vec![m.rows(), d, d],
            _ => vec![m.rows(), m.cols()],
        }
    }

    pub fn to_bytes(params: &ModelParams, hp: &Hyperparams) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let kv = hp.to_kv();
        out.extend_from_slice(&(kv.len() as u64).to_le_bytes());
        out.extend_from_slice(kv.as_bytes());
        out.extend_from_slice(&(TensorId::ALL.len() as u64).to_le_bytes());
        let d = params.d();
        for id in TensorId::ALL {
            let m = params.tensor(id);
            let name = id.name().as_bytes();
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name);
            let dims = tensor_dims(id, m, d);
            out.extend_from_slice(&(dims.len() as u64).to_le_bytes());
            for dim in dims {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for x in m.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn save(params: &ModelParams, hp: &Hyperparams, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = to_bytes(params, hp);
        // Write-then-rename so a crash never leaves a half-written checkpoint.
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    struct Reader<'a> {
        buf: &'a [u8],
        pos: usize,
    }

    impl<'a> Reader<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            if self.buf.len() - self.pos < n {
                return Err(Error::CorruptCheckpoint(format!(
                    "truncated at byte {} (needed {n} more)",
                    self.pos
                )));
            }
            let s = &self.buf[self.pos..self.pos + n];
            self.pos += n;
            Ok(s)
        }

        fn u64(&mut self) -> Result<u64> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }

        fn len(&mut self) -> Result<usize> {
            let v = self.u64()?;
            usize::try_from(v)
                .ok()
                .filter(|&n| n <= self.buf.len())
                .ok_or_else(|| Error::CorruptCheckpoint(format!("implausible length {v}")))
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(ModelParams, Hyperparams)> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: VERSION,
            });
        }
        let kv_len = r.len()?;
        let kv = std::str::from_utf8(r.take(kv_len)?)
            .map_err(|_| Error::CorruptCheckpoint("hyperparameter block is not UTF-8".into()))?;
        let hp = Hyperparams::from_kv(kv)?;

        let count = r.len()?;
        let mut tensors: Vec<Option<Matrix>> = vec![None; TensorId::ALL.len()];
        for _ in 0..count {
            let name_len = r.len()?;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?
                .to_owned();
            let id = TensorId::ALL
                .into_iter()
                .find(|id| id.name() == name)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown tensor `{name}`")))?;
            let rank = r.len()?;
            if !(2..=3).contains(&rank) {
                return Err(Error::CorruptCheckpoint(format!("tensor `{name}` has rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.len()?);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &x| acc.checked_mul(x))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor `{name}` is too large")))?;
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let cols = dims[1..].iter().product();
            tensors[id.index()] = Some(Matrix::from_vec(dims[0], cols, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let mut take = |id: TensorId| {
            tensors[id.index()]
                .take()
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor `{}`", id.name())))
        };
        let params = ModelParams {
            ent_re: take(TensorId::EntRe)?,
            ent_im: take(TensorId::EntIm)?,
            rel_phase: take(TensorId::RelPhase)?,
            hyperplane: take(TensorId::Hyperplane)?,
            type_emb: take(TensorId::TypeEmb)?,
            type_rel: take(TensorId::TypeRel)?,
            type_proj: take(TensorId::TypeProj)?,
        };
        check_consistent(&params, &hp)?;
        Ok((params, hp))
    }

    fn check_consistent(p: &ModelParams, hp: &Hyperparams) -> Result<()> {
        let (ne, nr, k, d) = (p.num_entities(), p.num_relations(), hp.k, hp.d);
        let want = [
            (TensorId::EntRe, ne, k),
            (TensorId::EntIm, ne, k),
            (TensorId::RelPhase, nr, k),
            (TensorId::Hyperplane, nr, k),
            (TensorId::TypeEmb, ne, d),
            (TensorId::TypeRel, nr, d),
            (TensorId::TypeProj, nr, d * d),
        ];
        for (id, rows, cols) in want {
            let m = p.tensor(id);
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "tensor `{}` is {}x{}, hyperparameters imply {rows}x{cols}",
                    id.name(),
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(ModelParams, Hyperparams)> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        from_bytes(&bytes)
    }

    /// Loads and checks the recorded shapes against `expected`.
    pub fn load_expecting(
        path: impl AsRef<Path>,
        expected: Expected,
    ) -> Result<(ModelParams, Hyperparams)> {
        let (p, hp) = load(path)?;
        let mismatch = |what: &str, found: usize, want: usize| {
            Err(Error::DimensionMismatch(format!(
                "checkpoint records {what} = {found}, expected {want}"
            )))
        };
        if p.num_entities() != expected.num_entities {
            return mismatch("entity count", p.num_entities(), expected.num_entities);
        }
        if p.num_relations() != expected.num_relations {
            return mismatch("relation count", p.num_relations(), expected.num_relations);
        }
        if let Some(k) = expected.k.filter(|&k| k != hp.k) {
            return mismatch("k", hp.k, k);
        }
        if let Some(d) = expected.d.filter(|&d| d != hp.d) {
            return mismatch("d", hp.d, d);
        }
        Ok((p, hp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_hp(k: usize, d: usize) -> Hyperparams {
        Hyperparams {
            k,
            d,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn init_is_deterministic() {
        let hp = small_hp(8, 3);
        let a = ModelParams::init_sized(&hp, 10, 4, 7).unwrap();
        let b = ModelParams::init_sized(&hp, 10, 4, 7).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_eq!(a, b);
        let c = ModelParams::init_sized(&hp, 10, 4, 8).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn init_ranges() {
        let hp = small_hp(8, 4);
        let p = ModelParams::init_sized(&hp, 20, 5, 1).unwrap();
        let eb = 6.0 / 16f64.sqrt();
        assert!(p.ent_re.as_slice().iter().all(|x| x.abs() <= eb));
        assert!(p.ent_im.as_slice().iter().all(|x| x.abs() <= eb));
        assert!(p.type_emb.as_slice().iter().all(|x| x.abs() <= 3.0));
        assert!(p.rel_phase.as_slice().iter().all(|&t| t > -PI && t <= PI));
        for r in 0..5 {
            let m = p.projection(r);
            for i in 0..4 {
                for j in 0..4 {
                    let id = if i == j { 1.0 } else { 0.0 };
                    assert!((m[i * 4 + j] - id).abs() <= 0.01);
                }
            }
        }
    }

    #[test]
    fn zero_sized_vocabulary_is_rejected() {
        let hp = small_hp(2, 2);
        assert!(ModelParams::init_sized(&hp, 0, 1, 0).is_err());
        assert!(ModelParams::init_sized(&hp, 1, 0, 0).is_err());
    }

    #[test]
    fn relation_modulus_is_one() {
        let p = ModelParams::init_sized(&small_hp(4, 2), 3, 6, 3).unwrap();
        for r in 0..6 {
            let (re, im) = p.relation_vector(r);
            for i in 0..4 {
                assert!((re[i] * re[i] + im[i] * im[i] - 1.0).abs() <= f64::EPSILON * 2.0);
            }
        }
    }

    #[test]
    fn relation_vector_values() {
        let mut p = ModelParams::init_sized(&small_hp(2, 1), 1, 1, 0).unwrap();
        p.rel_phase.row_mut(0).copy_from_slice(&[0.0, 0.0]);
        assert_eq!(p.relation_vector(0), (vec![1.0, 1.0], vec![0.0, 0.0]));
        p.rel_phase.row_mut(0).copy_from_slice(&[PI, PI / 2.0]);
        let (re, im) = p.relation_vector(0);
        assert_eq!(re[0], -1.0);
        assert!(im[0].abs() < 1e-12);
        assert!(re[1].abs() < 1e-12);
        assert!((im[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hyperplane_rows_are_unit() {
        let p = ModelParams::init_sized(&small_hp(16, 2), 2, 100, 11).unwrap();
        for r in 0..100 {
            let n = p.hyperplane.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn enforce_constraints_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ModelParams::init_sized(&small_hp(2, 1), 1, 2, 0).unwrap();
        p.hyperplane.row_mut(0).copy_from_slice(&[3.0, 4.0]);
        p.hyperplane.row_mut(1).copy_from_slice(&[0.0, 0.0]);
        p.rel_phase.row_mut(0).copy_from_slice(&[3.0 * PI, -3.0 * PI]);
        let reinit = p.enforce_constraints(&mut rng);
        assert_eq!(reinit, vec![1]);
        assert!((p.hyperplane.row(0)[0] - 0.6).abs() < 1e-15);
        assert!((p.hyperplane.row(0)[1] - 0.8).abs() < 1e-15);
        let n1 = p.hyperplane.row(1).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n1 - 1.0).abs() < 1e-12);
        assert!((p.rel_phase.row(0)[0] - PI).abs() < 1e-12);
        assert!((p.rel_phase.row(0)[1] - PI).abs() < 1e-12);

        let once = p.clone();
        p.enforce_constraints(&mut rng);
        assert_eq!(p, once);
    }

    #[test]
    fn wrap_phase_range() {
        for &t in &[0.0, PI, -PI, 3.0 * PI, -3.0 * PI, 7.5, -100.25, 1e6] {
            let w = wrap_phase(t);
            assert!(w > -PI && w <= PI, "{t} -> {w}");
            assert!(((t - w) / (2.0 * PI) - ((t - w) / (2.0 * PI)).round()).abs() < 1e-9);
        }
        assert_eq!(wrap_phase(-PI), PI);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let hp = Hyperparams {
            lr: 0.1 + 0.2,
            ..small_hp(3, 2)
        };
        let p = ModelParams::init_sized(&hp, 4, 2, 5).unwrap();
        let bytes = checkpoint::to_bytes(&p, &hp);
        let (q, hq) = checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(hp, hq);
        assert_eq!(p.checksum(), q.checksum());
        assert_eq!(bytes, checkpoint::to_bytes(&q, &hq));
    }

    #[test]
    fn checkpoint_errors() {
        let hp = small_hp(3, 2);
        let p = ModelParams::init_sized(&hp, 4, 2, 5).unwrap();
        let bytes = checkpoint::to_bytes(&p, &hp);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(checkpoint::from_bytes(&bad), Err(Error::BadMagic(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            checkpoint::from_bytes(&bad),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));

        assert!(matches!(
            checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn checkpoint_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let hp = small_hp(10, 2);
        let p = ModelParams::init_sized(&hp, 3, 1, 0).unwrap();
        checkpoint::save(&p, &hp, &path).unwrap();
        let expected = checkpoint::Expected {
            num_entities: 3,
            num_relations: 1,
            k: Some(5),
            d: None,
        };
        assert!(matches!(
            checkpoint::load_expecting(&path, expected),
            Err(Error::DimensionMismatch(_))
        ));
        let expected = checkpoint::Expected {
            k: Some(10),
            ..expected
        };
        assert!(checkpoint::load_expecting(&path, expected).is_ok());
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        for bad in [
            Hyperparams { k: 0, ..Default::default() },
            Hyperparams { gamma2: 0.0, ..Default::default() },
            Hyperparams { alpha1: -0.1, ..Default::default() },
            Hyperparams { batch_size: 0, ..Default::default() },
            Hyperparams { n_neg: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
