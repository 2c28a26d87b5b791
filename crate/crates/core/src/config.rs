//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment. Relative paths resolve
//! against the directory of the config file. Later assignments win, so
//! command-line overrides are applied with [`RunConfig::set`] after
//! loading.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::lang::ClassList;
use crate::matcher::MatchParams;
use crate::refine::{Method, ModelMode, Preset, TrainConfig, Transfer};

/// Input and output locations. Every path is optional at parse time;
/// each command checks the ones it needs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Paths {
    pub sentiment_lexicon: Option<PathBuf>,
    pub identity_lexicon: Option<PathBuf>,
    pub hateful_lexicon: Option<PathBuf>,
    /// Extra explanation-lexicon entries appended to the built-in lexicon.
    pub expl_lexicon: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Unlabeled corpus the explanations are generalized over.
    pub unlabeled: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub source_train: Option<PathBuf>,
    pub source_test: Option<PathBuf>,
    pub target_test: Option<PathBuf>,
    pub explanations: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub identity_terms: Option<PathBuf>,
    /// Checkpoint of the source model; trained from `source_train` if absent.
    pub source_model: Option<PathBuf>,
    /// Checkpoint evaluated by the `eval` command.
    pub model: Option<PathBuf>,
    /// Embedding file whose rows are the sampling pool for SOC; defaults
    /// to the token vectors of the unlabeled corpus.
    pub replacement_set: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub classes: ClassList,
    pub positive_class: String,
    pub negative_class: String,
    pub paths: Paths,
    pub out: PathBuf,
    pub seed: u64,
    pub preset: Preset,
    pub matching: MatchParams,
    /// Minimum confidence kept from soft matching.
    pub soft_threshold: f64,
    /// Unmatched instances sampled as negatives; `None` samples as many as
    /// there are strictly matched instances.
    pub negatives: Option<usize>,
    pub model_mode: ModelMode,
    pub hidden: usize,
    pub train: TrainConfig,
    /// Schedule for fitting the source model when no checkpoint is given.
    pub source: TrainConfig,
    /// Instances rendered as before/after heat maps by `eval`.
    pub heatmap_ids: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let source = TrainConfig {
            alpha: 0.0,
            class_weights: vec![1.0, 1.0],
            max_epochs: 30,
            ..TrainConfig::default()
        };
        RunConfig {
            classes: ClassList::new(["non-hate", "hate"]),
            positive_class: "hate".into(),
            negative_class: "non-hate".into(),
            paths: Paths::default(),
            out: PathBuf::from("out"),
            seed: 0,
            preset: Preset::RSoftCStrict,
            matching: MatchParams::default(),
            soft_threshold: 0.5,
            negatives: None,
            model_mode: ModelMode::Mlp,
            hidden: 16,
            train: TrainConfig::default(),
            source,
            heatmap_ids: Vec::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn set_train(t: &mut TrainConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "alpha" => t.alpha = parse_num(key, value)?,
        "lr" => t.lr = parse_num(key, value)?,
        "batch_size" => t.batch_size = parse_num(key, value)?,
        "class_weights" => t.class_weights = parse_list(key, value)?,
        "use_z_weighting" => t.use_z_weighting = parse_bool(key, value)?,
        "max_epochs" => t.max_epochs = parse_num(key, value)?,
        "eval_every" => t.eval_every = parse_num(key, value)?,
        "patience" => t.patience = parse_num(key, value)?,
        "lr_halve_patience" => t.lr_halve_patience = parse_num(key, value)?,
        "transfer_lambda" => {
            let lambda: f64 = parse_num(key, value)?;
            t.transfer = match t.transfer {
                Transfer::Distill { .. } => Transfer::Distill { lambda },
                _ => Transfer::L2 { lambda },
            };
        }
        _ => return Ok(false),
    }
    Ok(true)
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, path)
    }

    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split_once('#').map_or(line, |(a, _)| a).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(origin, i + 1, "expected key = value"))?;
            cfg.set_in(k.trim(), v.trim(), base)
                .map_err(|e| Error::format(origin, i + 1, e.to_string()))?;
        }
        Ok(cfg)
    }

    /// Applies one override; relative paths resolve against the current
    /// directory.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_in(key, value, Path::new(""))
    }

    fn set_in(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || Some(base.join(value));
        let p = &mut self.paths;
        match key {
            "classes" => {
                self.classes = ClassList::parse(value)
                    .ok_or_else(|| Error::Config(format!("classes: cannot parse {value:?}")))?
            }
            "positive_class" => self.positive_class = value.to_string(),
            "negative_class" => self.negative_class = value.to_string(),
            "out" => self.out = base.join(value),
            "seed" => self.seed = parse_num(key, value)?,
            "preset" => self.preset = value.parse()?,
            "lexicon.sentiment" => p.sentiment_lexicon = path(),
            "lexicon.identity" => p.identity_lexicon = path(),
            "lexicon.hateful" => p.hateful_lexicon = path(),
            "lexicon.explanations" => p.expl_lexicon = path(),
            "embeddings" => p.embeddings = path(),
            "corpus.unlabeled" => p.unlabeled = path(),
            "corpus.dev" => p.dev = path(),
            "corpus.source_train" => p.source_train = path(),
            "corpus.source_test" => p.source_test = path(),
            "corpus.target_test" => p.target_test = path(),
            "explanations" => p.explanations = path(),
            "templates" => p.templates = path(),
            "identity_terms" => p.identity_terms = path(),
            "source_model" => p.source_model = path(),
            "model" => p.model = path(),
            "replacement_set" => p.replacement_set = path(),
            "match.tau_cos" => self.matching.tau_cos = parse_num(key, value)?,
            "match.k" => self.matching.k = parse_num(key, value)?,
            "match.soft_threshold" => self.soft_threshold = parse_num(key, value)?,
            "match.negatives" => {
                self.negatives = match value {
                    "balanced" | "auto" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "model.mode" => self.model_mode = value.parse()?,
            "model.hidden" => self.hidden = parse_num(key, value)?,
            "attr.method" => self.train.attribution.method = value.parse::<Method>()?,
            "attr.ig_steps" => self.train.attribution.ig_steps = parse_num(key, value)?,
            "attr.delta" => self.train.attribution.delta = parse_num(key, value)?,
            "attr.n_samples" => self.train.attribution.n_samples = parse_num(key, value)?,
            "heatmap.ids" => {
                self.heatmap_ids = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            _ => {
                let handled = if let Some(k) = key.strip_prefix("train.") {
                    set_train(&mut self.train, k, value)?
                } else if let Some(k) = key.strip_prefix("source.") {
                    set_train(&mut self.source, k, value)?
                } else {
                    false
                };
                if !handled {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn positive(&self) -> Result<usize> {
        self.class_index(&self.positive_class)
    }

    pub fn negative(&self) -> Result<usize> {
        self.class_index(&self.negative_class)
    }

    fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("class {name:?} is not in the class list")))
    }

    /// Training configuration after the preset and the run seed are applied.
    pub fn refine_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        self.preset.apply(&mut t);
        t.seed = self.seed;
        t.attribution.seed = self.seed;
        t
    }

    pub fn source_config(&self) -> TrainConfig {
        let mut t = self.source.clone();
        t.alpha = 0.0;
        t.transfer = Transfer::None;
        t.seed = self.seed;
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        self.positive()?;
        self.negative()?;
        if self.hidden == 0 {
            return Err(Error::Config("model.hidden must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.soft_threshold) {
            return Err(Error::Config(
                "match.soft_threshold must be within [0, 1]".into(),
            ));
        }
        self.refine_config().validate(self.classes.len())?;
        self.source_config().validate(self.classes.len())
    }

    /// Fails on the first configured path that does not exist.
    pub fn check_paths(&self) -> Result<()> {
        let p = &self.paths;
        for (key, path) in [
            ("lexicon.sentiment", &p.sentiment_lexicon),
            ("lexicon.identity", &p.identity_lexicon),
            ("lexicon.hateful", &p.hateful_lexicon),
            ("lexicon.explanations", &p.expl_lexicon),
            ("embeddings", &p.embeddings),
            ("corpus.unlabeled", &p.unlabeled),
            ("corpus.dev", &p.dev),
            ("corpus.source_train", &p.source_train),
            ("corpus.source_test", &p.source_test),
            ("corpus.target_test", &p.target_test),
            ("explanations", &p.explanations),
            ("templates", &p.templates),
            ("identity_terms", &p.identity_terms),
            ("source_model", &p.source_model),
            ("model", &p.model),
            ("replacement_set", &p.replacement_set),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "{key}: {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// The resolved configuration in the same `key = value` format.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("classes", self.classes.names().join(","));
        kv("positive_class", self.positive_class.clone());
        kv("negative_class", self.negative_class.clone());
        kv("seed", self.seed.to_string());
        kv("preset", self.preset.to_string());
        kv("out", self.out.display().to_string());
        let p = &self.paths;
        for (k, path) in [
            ("lexicon.sentiment", &p.sentiment_lexicon),
            ("lexicon.identity", &p.identity_lexicon),
            ("lexicon.hateful", &p.hateful_lexicon),
            ("lexicon.explanations", &p.expl_lexicon),
            ("embeddings", &p.embeddings),
            ("corpus.unlabeled", &p.unlabeled),
            ("corpus.dev", &p.dev),
            ("corpus.source_train", &p.source_train),
            ("corpus.source_test", &p.source_test),
            ("corpus.target_test", &p.target_test),
            ("explanations", &p.explanations),
            ("templates", &p.templates),
            ("identity_terms", &p.identity_terms),
            ("source_model", &p.source_model),
            ("model", &p.model),
            ("replacement_set", &p.replacement_set),
        ] {
            if let Some(path) = path {
                kv(k, path.display().to_string());
            }
        }
        kv("match.tau_cos", self.matching.tau_cos.to_string());
        kv("match.k", self.matching.k.to_string());
        kv("match.soft_threshold", self.soft_threshold.to_string());
        kv(
            "match.negatives",
            self.negatives.map_or("balanced".into(), |n| n.to_string()),
        );
        kv("model.mode", self.model_mode.to_string());
        kv("model.hidden", self.hidden.to_string());
        let a = &self.train.attribution;
        kv("attr.method", a.method.to_string());
        kv("attr.ig_steps", a.ig_steps.to_string());
        kv("attr.delta", a.delta.to_string());
        kv("attr.n_samples", a.n_samples.to_string());
        for (prefix, t) in [("train", &self.train), ("source", &self.source)] {
            kv(&format!("{prefix}.alpha"), t.alpha.to_string());
            kv(&format!("{prefix}.lr"), t.lr.to_string());
            kv(&format!("{prefix}.batch_size"), t.batch_size.to_string());
            kv(
                &format!("{prefix}.class_weights"),
                fmt_list(&t.class_weights),
            );
            kv(
                &format!("{prefix}.use_z_weighting"),
                t.use_z_weighting.to_string(),
            );
            kv(&format!("{prefix}.max_epochs"), t.max_epochs.to_string());
            kv(&format!("{prefix}.eval_every"), t.eval_every.to_string());
            kv(&format!("{prefix}.patience"), t.patience.to_string());
            kv(
                &format!("{prefix}.lr_halve_patience"),
                t.lr_halve_patience.to_string(),
            );
            if let Transfer::L2 { lambda } | Transfer::Distill { lambda } = t.transfer {
                kv(&format!("{prefix}.transfer_lambda"), lambda.to_string());
            }
        }
        if !self.heatmap_ids.is_empty() {
            kv("heatmap.ids", self.heatmap_ids.join(","));
        }
        s
    }
}
