//! Triple datasets: vocabularies, split lists, the truth index used for
//! filtered ranking, per-relation buckets and cardinality statistics.
//!
//! A dataset directory holds `train.txt`, `valid.txt` and `test.txt`, one
//! `head<TAB>relation<TAB>tail` triple per line. Vocabularies are built over
//! the union of all splits in first-appearance order (train, then valid,
//! then test), so ids are reproducible for a fixed set of files.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub type EntityId = usize;
pub type RelationId = usize;

/// Threshold on tph/hpt separating "1" from "N" sides of a relation.
pub const DEFAULT_CATEGORY_THRESHOLD: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (train, valid, test)")),
        }
    }
}

/// Cardinality statistics of one relation over the training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationStats {
    /// Number of training triples (duplicates included).
    pub triples: usize,
    pub distinct_heads: usize,
    pub distinct_tails: usize,
    /// Mean number of tails per distinct head.
    pub tph: f64,
    /// Mean number of heads per distinct tail.
    pub hpt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationCategory {
    OneToOne,
    OneToMany,
    ManyToOne,
    ManyToMany,
}

impl RelationCategory {
    pub const ALL: [RelationCategory; 4] = [
        RelationCategory::OneToOne,
        RelationCategory::OneToMany,
        RelationCategory::ManyToOne,
        RelationCategory::ManyToMany,
    ];

    pub fn classify(stats: &RelationStats, threshold: f64) -> Self {
        match (stats.tph >= threshold, stats.hpt >= threshold) {
            (false, false) => RelationCategory::OneToOne,
            (true, false) => RelationCategory::OneToMany,
            (false, true) => RelationCategory::ManyToOne,
            (true, true) => RelationCategory::ManyToMany,
        }
    }
}

impl fmt::Display for RelationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationCategory::OneToOne => "1-1",
            RelationCategory::OneToMany => "1-N",
            RelationCategory::ManyToOne => "N-1",
            RelationCategory::ManyToMany => "N-N",
        })
    }
}

/// Things worth knowing about a freshly loaded dataset that are not errors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    /// Entities that occur in valid/test but never in train.
    pub unseen_entities: Vec<EntityId>,
    /// Relations that occur in valid/test but never in train.
    pub unseen_relations: Vec<RelationId>,
    /// Triples occurring more than once across all splits (extra copies).
    pub duplicate_triples: usize,
}

/// Immutable, indexed triple dataset.
#[derive(Debug, Clone)]
pub struct TripleStore {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    truth: HashSet<Triple>,
    relation_buckets: Vec<Vec<usize>>,
    relation_stats: Vec<Option<RelationStats>>,
    entity_in_train: Vec<bool>,
    report: LoadReport,
}

#[derive(Default)]
struct VocabBuilder {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
}

impl VocabBuilder {
    fn entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_index.get(name) {
            return id;
        }
        let id = self.entities.len();
        self.entities.push(name.to_owned());
        self.entity_index.insert(name.to_owned(), id);
        id
    }

    fn relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_index.get(name) {
            return id;
        }
        let id = self.relations.len();
        self.relations.push(name.to_owned());
        self.relation_index.insert(name.to_owned(), id);
        id
    }

    fn intern(&mut self, h: &str, r: &str, t: &str) -> Triple {
        let head = self.entity(h);
        let relation = self.relation(r);
        let tail = self.entity(t);
        Triple::new(head, relation, tail)
    }
}

fn read_split(path: &Path, vocab: &mut VocabBuilder) -> Result<Vec<Triple>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut triples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedLine {
                file: path.to_path_buf(),
                line: idx + 1,
                found: fields.len(),
            });
        }
        triples.push(vocab.intern(fields[0], fields[1], fields[2]));
    }
    Ok(triples)
}

impl TripleStore {
    /// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut vocab = VocabBuilder::default();
        let mut splits = Vec::with_capacity(3);
        for split in Split::ALL {
            splits.push(read_split(&dir.join(split.file_name()), &mut vocab)?);
        }
        let test = splits.pop().unwrap();
        let valid = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        Self::build(vocab, train, valid, test)
    }

    /// Builds a store from string triples, interning names the same way
    /// [`TripleStore::load`] does.
    pub fn from_named<S: AsRef<str>>(
        train: &[(S, S, S)],
        valid: &[(S, S, S)],
        test: &[(S, S, S)],
    ) -> Result<Self> {
        let mut vocab = VocabBuilder::default();
        let mut intern = |xs: &[(S, S, S)]| -> Vec<Triple> {
            xs.iter()
                .map(|(h, r, t)| vocab.intern(h.as_ref(), r.as_ref(), t.as_ref()))
                .collect()
        };
        let train = intern(train);
        let valid = intern(valid);
        let test = intern(test);
        Self::build(vocab, train, valid, test)
    }

    /// Builds a store over integer ids; entities are named `e{i}` and
    /// relations `r{i}`.
    pub fn from_ids(
        num_entities: usize,
        num_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let mut vocab = VocabBuilder::default();
        for e in 0..num_entities {
            vocab.entity(&format!("e{e}"));
        }
        for r in 0..num_relations {
            vocab.relation(&format!("r{r}"));
        }
        for t in train.iter().chain(&valid).chain(&test) {
            if t.head >= num_entities || t.tail >= num_entities {
                return Err(Error::DimensionMismatch(format!(
                    "triple {t:?} references an entity outside 0..{num_entities}"
                )));
            }
            if t.relation >= num_relations {
                return Err(Error::DimensionMismatch(format!(
                    "triple {t:?} references a relation outside 0..{num_relations}"
                )));
            }
        }
        Self::build(vocab, train, valid, test)
    }

    fn build(
        vocab: VocabBuilder,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        if vocab.entities.is_empty() {
            return Err(Error::EmptyVocabulary("entities"));
        }
        if vocab.relations.is_empty() {
            return Err(Error::EmptyVocabulary("relations"));
        }
        let n_ent = vocab.entities.len();
        let n_rel = vocab.relations.len();

        let mut truth = HashSet::with_capacity(train.len() + valid.len() + test.len());
        let mut duplicate_triples = 0;
        for t in train.iter().chain(&valid).chain(&test) {
            if !truth.insert(*t) {
                duplicate_triples += 1;
            }
        }

        let mut relation_buckets = vec![Vec::new(); n_rel];
        let mut entity_in_train = vec![false; n_ent];
        for (i, t) in train.iter().enumerate() {
            relation_buckets[t.relation].push(i);
            entity_in_train[t.head] = true;
            entity_in_train[t.tail] = true;
        }

        let relation_stats = relation_buckets
            .iter()
            .map(|bucket| {
                if bucket.is_empty() {
                    return None;
                }
                let mut heads = HashSet::new();
                let mut tails = HashSet::new();
                for &i in bucket {
                    heads.insert(train[i].head);
                    tails.insert(train[i].tail);
                }
                let n = bucket.len();
                Some(RelationStats {
                    triples: n,
                    distinct_heads: heads.len(),
                    distinct_tails: tails.len(),
                    tph: n as f64 / heads.len() as f64,
                    hpt: n as f64 / tails.len() as f64,
                })
            })
            .collect::<Vec<_>>();

        let mut unseen_entities: Vec<EntityId> = (0..n_ent)
            .filter(|&e| !entity_in_train[e])
            .collect();
        // Only entities that actually appear in valid/test count as unseen;
        // from_ids may pre-size the vocabulary with entities used nowhere.
        let mut used = vec![false; n_ent];
        for t in valid.iter().chain(&test) {
            used[t.head] = true;
            used[t.tail] = true;
        }
        unseen_entities.retain(|&e| used[e]);
        let mut rel_used = vec![false; n_rel];
        for t in valid.iter().chain(&test) {
            rel_used[t.relation] = true;
        }
        let unseen_relations = (0..n_rel)
            .filter(|&r| rel_used[r] && relation_buckets[r].is_empty())
            .collect();

        Ok(TripleStore {
            entity_names: vocab.entities,
            relation_names: vocab.relations,
            entity_index: vocab.entity_index,
            relation_index: vocab.relation_index,
            train,
            valid,
            test,
            truth,
            relation_buckets,
            relation_stats,
            entity_in_train,
            report: LoadReport {
                unseen_entities,
                unseen_relations,
                duplicate_triples,
            },
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name).copied()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    /// True iff `t` appears in any split.
    pub fn truth_contains(&self, t: &Triple) -> bool {
        self.truth.contains(t)
    }

    /// Number of distinct triples across all splits.
    pub fn num_distinct_triples(&self) -> usize {
        self.truth.len()
    }

    /// Indices into [`TripleStore::train`] of the triples using relation `r`.
    pub fn relation_bucket(&self, r: RelationId) -> &[usize] {
        &self.relation_buckets[r]
    }

    /// Number of relations with at least one training triple.
    pub fn relations_in_train(&self) -> usize {
        self.relation_buckets.iter().filter(|b| !b.is_empty()).count()
    }

    pub fn relation_stats(&self, r: RelationId) -> Option<&RelationStats> {
        self.relation_stats[r].as_ref()
    }

    pub fn entity_in_train(&self, e: EntityId) -> bool {
        self.entity_in_train[e]
    }

    pub fn relation_in_train(&self, r: RelationId) -> bool {
        !self.relation_buckets[r].is_empty()
    }

    /// Category under the default 1.5 threshold.
    pub fn relation_category(&self, r: RelationId) -> Result<RelationCategory> {
        self.relation_category_with(r, DEFAULT_CATEGORY_THRESHOLD)
    }

    pub fn relation_category_with(
        &self,
        r: RelationId,
        threshold: f64,
    ) -> Result<RelationCategory> {
        let stats = self
            .relation_stats(r)
            .ok_or_else(|| Error::RelationNotInTrain(self.relation_names[r].clone()))?;
        Ok(RelationCategory::classify(stats, threshold))
    }

    pub fn report(&self) -> &LoadReport {
        &self.report
    }

    /// Writes the three split files back in the load format.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for split in Split::ALL {
            let path: PathBuf = dir.join(split.file_name());
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut out = BufWriter::new(file);
            for t in self.split(split) {
                writeln!(
                    out,
                    "{}\t{}\t{}",
                    self.entity_names[t.head], self.relation_names[t.relation], self.entity_names[t.tail]
                )
                .map_err(|e| Error::io(&path, e))?;
            }
            out.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Human-readable load report.
    pub fn describe_report(&self) -> String {
        let mut s = String::new();
        let r = &self.report;
        s.push_str(&format!(
            "loaded {} entities, {} relations, {} train / {} valid / {} test triples\n",
            self.num_entities(),
            self.num_relations(),
            self.train.len(),
            self.valid.len(),
            self.test.len()
        ));
        if r.duplicate_triples > 0 {
            s.push_str(&format!(
                "note: {} duplicate triple(s) collapsed in the truth index\n",
                r.duplicate_triples
            ));
        }
        if !r.unseen_entities.is_empty() {
            let shown: Vec<&str> = r
                .unseen_entities
                .iter()
                .take(10)
                .map(|&e| self.entity_names[e].as_str())
                .collect();
            s.push_str(&format!(
                "warning: {} entit{} appear only in valid/test and stay at initialization (e.g. {})\n",
                r.unseen_entities.len(),
                if r.unseen_entities.len() == 1 { "y" } else { "ies" },
                shown.join(", ")
            ));
        }
        if !r.unseen_relations.is_empty() {
            let shown: Vec<&str> = r
                .unseen_relations
                .iter()
                .take(10)
                .map(|&x| self.relation_names[x].as_str())
                .collect();
            s.push_str(&format!(
                "warning: {} relation(s) appear only in valid/test (e.g. {})\n",
                r.unseen_relations.len(),
                shown.join(", ")
            ));
        }
        s
    }
}
