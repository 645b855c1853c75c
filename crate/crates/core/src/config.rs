//! Flat `key = value` run configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kg_data::DEFAULT_CATEGORY_THRESHOLD;
use crate::params::Hyperparams;

/// Which loss terms an ablation keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    Full,
    /// No type-similarity constraint: `alpha2 = 0`.
    NoTypeSimilarity,
    /// No type representation at all: `alpha1 = alpha2 = 0`.
    NoTypeRepresentation,
}

impl Ablation {
    pub fn apply(self, hp: &mut Hyperparams) {
        match self {
            Ablation::Full => {}
            Ablation::NoTypeSimilarity => hp.alpha2 = 0.0,
            Ablation::NoTypeRepresentation => {
                hp.alpha1 = 0.0;
                hp.alpha2 = 0.0;
            }
        }
    }
}

impl FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" | "none" => Ok(Ablation::Full),
            "no-tsc" => Ok(Ablation::NoTypeSimilarity),
            "no-tr" => Ok(Ablation::NoTypeRepresentation),
            _ => Err(format!("unknown ablation `{s}` (full, no-tsc, no-tr)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hp: Hyperparams,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub ablation: Ablation,
    pub workers: usize,
    pub deterministic: bool,
    /// Validation triples per periodic evaluation; 0 = all.
    pub eval_max_triples: usize,
    pub category_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hp: Hyperparams::default(),
            data: None,
            out: None,
            checkpoint: None,
            ablation: Ablation::Full,
            workers: 1,
            deterministic: false,
            eval_max_triples: 0,
            category_threshold: DEFAULT_CATEGORY_THRESHOLD,
        }
    }
}

impl RunConfig {
    /// Hyperparameters with the ablation applied.
    pub fn effective_hyperparams(&self) -> Hyperparams {
        let mut hp = self.hp.clone();
        self.ablation.apply(&mut hp);
        hp
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_config_str(&text, base)
}

/// Parses config text; relative `data` / `checkpoint` paths resolve
/// against `base`, and must exist.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or(Error::BadConfigLine { line: line_no })?;
        let bad_value = || Error::BadConfigValue {
            line: line_no,
            key: key.to_owned(),
            value: value.to_owned(),
        };
        fn num<T: FromStr>(v: &str, err: impl Fn() -> Error) -> Result<T> {
            v.parse().map_err(|_| err())
        }
        let resolve = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        };
        match key {
            "data" | "checkpoint" => {
                let p = resolve(value);
                if !p.exists() {
                    return Err(Error::MissingPath(p));
                }
                if key == "data" {
                    cfg.data = Some(p);
                } else {
                    cfg.checkpoint = Some(p);
                }
            }
            "out" => cfg.out = Some(resolve(value)),
            "ablation" => cfg.ablation = value.parse().map_err(|_| bad_value())?,
            "workers" => {
                cfg.workers = num(value, bad_value)?;
                if cfg.workers == 0 {
                    return Err(bad_value());
                }
            }
            "deterministic" => cfg.deterministic = num(value, bad_value)?,
            "eval_max_triples" => cfg.eval_max_triples = num(value, bad_value)?,
            "category_threshold" => cfg.category_threshold = num(value, bad_value)?,
            _ => match cfg.hp.set(key, value) {
                Ok(true) => {}
                Ok(false) => {
                    return Err(Error::UnknownConfigKey {
                        line: line_no,
                        key: key.to_owned(),
                    })
                }
                Err(_) => return Err(bad_value()),
            },
        }
    }
    cfg.hp.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Norm, ProjectionMode};

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config_str(text, Path::new("."))
    }

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg.hp.batch_size, 1024);
        assert_eq!(cfg.hp.lr, 0.0001);
        assert_eq!(cfg.hp.alpha1, 0.1);
        assert_eq!(cfg.hp.alpha2, 0.5);
        assert_eq!(cfg.hp.k, 1000);
        assert_eq!(cfg.hp.d, 200);
        assert_eq!(cfg.hp.norm_e1, Norm::L1);
        assert_eq!(cfg.hp.norm_type, Norm::L2);
        assert_eq!(cfg.hp.projection_mode, ProjectionMode::Hyperplane);
    }

    #[test]
    fn margins_and_comments() {
        let cfg = parse("# FB15K / YAGO3-10 margins\ngamma1 = 22\ngamma2 = 8  # inline\n\ngamma3=6\n").unwrap();
        assert_eq!((cfg.hp.gamma1, cfg.hp.gamma2, cfg.hp.gamma3), (22.0, 8.0, 6.0));
    }

    #[test]
    fn unknown_key_is_named() {
        match parse("k = 4\nbogus_key = 1\n") {
            Err(Error::UnknownConfigKey { line, key }) => {
                assert_eq!(line, 2);
                assert_eq!(key, "bogus_key");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_values_and_lines() {
        assert!(matches!(parse("k = four"), Err(Error::BadConfigValue { .. })));
        assert!(matches!(parse("norm_e1 = L3"), Err(Error::BadConfigValue { .. })));
        assert!(matches!(parse("just words"), Err(Error::BadConfigLine { line: 1 })));
        assert!(matches!(parse("workers = 0"), Err(Error::BadConfigValue { .. })));
        assert!(matches!(parse("gamma1 = -1"), Err(Error::InvalidHyperparams(_))));
    }

    #[test]
    fn missing_data_path() {
        assert!(matches!(
            parse("data = /definitely/not/here"),
            Err(Error::MissingPath(_))
        ));
    }

    #[test]
    fn ablations() {
        let cfg = parse("ablation = no-tsc").unwrap();
        let hp = cfg.effective_hyperparams();
        assert_eq!((hp.alpha1, hp.alpha2), (0.1, 0.0));
        let cfg = parse("ablation = no-tr").unwrap();
        let hp = cfg.effective_hyperparams();
        assert_eq!((hp.alpha1, hp.alpha2), (0.0, 0.0));
    }
}
