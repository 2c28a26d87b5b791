//! Stages of a run (parse, match, source model, refine, evaluate) over
//! in-memory resources, plus the file-writing driver used by the CLI.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{AnnotatedInstance, Corpus, EmbeddingTable, LexiconSet, WordVectors};
use crate::error::{Error, Result};
use crate::eval::{f1, matching_precision, write_heatmap, HeatmapRow, TemplateSet};
use crate::lang::{parse_file, validate_rule, ExplLexicon, ParseError, Rule, Validation};
use crate::matcher::{
    balance_negatives, generalize, read_matches, write_matches, MatchRecord, MatchSummary, Mode,
};
use crate::refine::{
    build_examples, checkpoint_bytes, load_checkpoint, save_checkpoint, train_refine, LabeledSet,
    ReplacementSet, TrainInputs, TrainLogEntry, TrainOutcome,
};
use crate::synthetic::SyntheticWorld;
use crate::Model;

/// Every input of a run, loaded and cross-checked.
#[derive(Debug, Clone)]
pub struct Resources {
    pub lexicons: LexiconSet,
    pub expl_lexicon: ExplLexicon,
    pub unlabeled: Option<Corpus>,
    pub dev: Option<Corpus>,
    pub source_train: Option<Corpus>,
    pub source_test: Option<Corpus>,
    pub target_test: Option<Corpus>,
    pub table: EmbeddingTable,
    pub explanations: Option<String>,
    pub templates: Option<TemplateSet>,
    pub source_model: Option<Model>,
    pub replacement: Option<ReplacementSet<f64>>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn need<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Config(format!("this command needs {what}")))
}

impl Resources {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        cfg.check_paths()?;
        let p = &cfg.paths;
        let text = |o: &Option<PathBuf>| {
            o.as_deref()
                .map(read)
                .transpose()
                .map(Option::unwrap_or_default)
        };
        let lexicons = LexiconSet::from_strs(
            &text(&p.sentiment_lexicon)?,
            &text(&p.identity_lexicon)?,
            &text(&p.hateful_lexicon)?,
        )?;
        let mut expl_lexicon = ExplLexicon::builtin();
        if let Some(extra) = &p.expl_lexicon {
            expl_lexicon.extend_from_file(extra)?;
        }
        let corpus = |o: &Option<PathBuf>| {
            o.as_deref()
                .map(|path| Corpus::load(path, &lexicons))
                .transpose()
        };
        let (unlabeled, dev) = (corpus(&p.unlabeled)?, corpus(&p.dev)?);
        let (source_train, source_test, target_test) = (
            corpus(&p.source_train)?,
            corpus(&p.source_test)?,
            corpus(&p.target_test)?,
        );
        let table = EmbeddingTable::load(need(&p.embeddings, "embeddings")?)?;
        let templates = match (&p.templates, &p.identity_terms) {
            (Some(t), Some(r)) => Some(TemplateSet::load(t, r, cfg.classes.names())?),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "templates and identity_terms must be given together".into(),
                ))
            }
        };
        let source_model = p.source_model.as_deref().map(load_checkpoint).transpose()?;
        let replacement = match &p.replacement_set {
            Some(path) => {
                let t = EmbeddingTable::load(path)?;
                let mut rows = Vec::new();
                for inst in [&unlabeled, &dev, &source_train]
                    .into_iter()
                    .flatten()
                    .flat_map(|c| c.iter())
                {
                    if let Ok(v) = t.token_vectors::<f64>(inst) {
                        rows.extend(v);
                    }
                }
                Some(ReplacementSet::new(rows)?)
            }
            None => None,
        };
        let mut res = Resources {
            lexicons,
            expl_lexicon,
            unlabeled,
            dev,
            source_train,
            source_test,
            target_test,
            table,
            explanations: p.explanations.as_deref().map(read).transpose()?,
            templates,
            source_model,
            replacement,
        };
        res.check_table()?;
        Ok(res)
    }

    /// Resources of a generated world, without a source checkpoint.
    pub fn from_world(world: &SyntheticWorld, cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Resources {
            lexicons: world.lexicons.clone(),
            expl_lexicon: ExplLexicon::builtin(),
            unlabeled: Some(world.unlabeled.clone()),
            dev: Some(world.dev.clone()),
            source_train: Some(world.source_train.clone()),
            source_test: Some(world.source_test.clone()),
            target_test: Some(world.target_test.clone()),
            table: world.table.clone(),
            explanations: Some(world.explanations.clone()),
            templates: Some(TemplateSet::parse(
                &world.templates,
                &world.identity_terms,
                cfg.classes.names(),
                Path::new("<templates>"),
            )?),
            source_model: None,
            replacement: None,
        })
    }

    fn corpora(&self) -> impl Iterator<Item = &Corpus> {
        [
            &self.unlabeled,
            &self.dev,
            &self.source_train,
            &self.source_test,
            &self.target_test,
        ]
        .into_iter()
        .flatten()
    }

    fn check_table(&mut self) -> Result<()> {
        let corpora: Vec<Corpus> = self.corpora().cloned().collect();
        for c in &corpora {
            self.table.validate(c, false)?;
        }
        Ok(())
    }

    pub fn find_instance(&self, id: &str) -> Option<&AnnotatedInstance> {
        self.corpora().find_map(|c| c.get(id))
    }

    pub fn word_vectors(&self, seed: u64) -> WordVectors {
        WordVectors::from_corpora(self.corpora(), &self.table, seed)
    }

    fn replacement_pool(&self) -> Result<Option<ReplacementSet<f64>>> {
        if let Some(r) = &self.replacement {
            return Ok(Some(r.clone()));
        }
        self.unlabeled
            .as_ref()
            .map(|c| ReplacementSet::from_corpus(c, &self.table))
            .transpose()
    }
}

/// Accepted rules plus everything that was rejected and why.
#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub rules: Vec<Rule>,
    pub discarded: Vec<(String, String)>,
    pub errors: Vec<ParseError>,
}

impl ParseReport {
    pub fn all_accepted(&self) -> bool {
        self.discarded.is_empty() && self.errors.is_empty()
    }

    /// Accepted rules in the explanation language, blank-line separated.
    pub fn rules_text(&self, cfg: &RunConfig) -> String {
        self.rules
            .iter()
            .map(|r| r.to_text(&cfg.classes))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// One line per problem: `error <rule> <offset> <message>` or
    /// `discarded <rule> <reason>`.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .errors
            .iter()
            .map(|e| format!("error\t{}\t{}\t{}", e.rule, e.offset, e.message))
            .collect();
        out.extend(
            self.discarded
                .iter()
                .map(|(id, why)| format!("discarded\t{id}\t{why}")),
        );
        out
    }
}

pub fn parse_rules(res: &Resources, cfg: &RunConfig) -> Result<ParseReport> {
    let text = need(&res.explanations, "explanations")?;
    let corpus = need(&res.unlabeled, "corpus.unlabeled")?;
    let parsed = parse_file(text, &res.expl_lexicon, &cfg.classes, corpus);
    let mut report = ParseReport {
        errors: parsed.errors,
        ..Default::default()
    };
    for rule in parsed.rules {
        let reference = corpus
            .get(&rule.ref_instance)
            .expect("parse_file checks references");
        match validate_rule(&rule, reference) {
            Validation::Accepted => report.rules.push(rule),
            Validation::Discarded(why) => {
                warn!("rule {} discarded: {why}", rule.id);
                report.discarded.push((rule.id.clone(), why));
            }
        }
    }
    info!(
        "{} rules accepted, {} discarded, {} parse errors",
        report.rules.len(),
        report.discarded.len(),
        report.errors.len()
    );
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct MatchOutput {
    pub strict: Vec<MatchRecord>,
    pub soft: Vec<MatchRecord>,
    pub negatives: Vec<MatchRecord>,
    pub summary: MatchSummary,
}

impl MatchOutput {
    /// Reads the match files a previous run wrote into `out`.
    pub fn read(out: &Path) -> Result<Self> {
        let strict = read_matches(out.join(files::STRICT))?;
        let soft = read_matches(out.join(files::SOFT))?;
        let negatives = read_matches(out.join(files::NEGATIVES))?;
        let summary = MatchSummary::new(&strict, &soft, negatives.len());
        Ok(MatchOutput {
            strict,
            soft,
            negatives,
            summary,
        })
    }

    pub fn records(&self, mode: Mode) -> &[MatchRecord] {
        match mode {
            Mode::Strict => &self.strict,
            Mode::Soft => &self.soft,
        }
    }
}

pub fn match_rules(rules: &[Rule], res: &Resources, cfg: &RunConfig) -> Result<MatchOutput> {
    let corpus = need(&res.unlabeled, "corpus.unlabeled")?;
    let strict = generalize(rules, corpus, Mode::Strict, 1.0, None, &cfg.matching)?;
    let soft = generalize(
        rules,
        corpus,
        Mode::Soft,
        cfg.soft_threshold,
        Some(&res.table),
        &cfg.matching,
    )?;
    let negatives = match cfg.preset.label_source() {
        Some(mode) => {
            let labeled: &[MatchRecord] = if mode == Mode::Strict { &strict } else { &soft };
            let wanted = cfg.negatives.unwrap_or_else(|| {
                labeled
                    .iter()
                    .map(|r| r.instance_id.as_str())
                    .collect::<BTreeSet<_>>()
                    .len()
            });
            let matched: Vec<MatchRecord> = strict.iter().chain(&soft).cloned().collect();
            let hit: BTreeSet<&str> = matched.iter().map(|r| r.instance_id.as_str()).collect();
            let available = corpus
                .iter()
                .filter(|x| !hit.contains(x.id.as_str()))
                .count();
            if wanted > available {
                warn!("only {available} unmatched instances for {wanted} requested negatives");
            }
            balance_negatives(
                corpus,
                &matched,
                wanted.min(available),
                cfg.negative()?,
                cfg.seed,
            )?
        }
        None => Vec::new(),
    };
    let summary = MatchSummary::new(&strict, &soft, negatives.len());
    info!(
        "matched {} strict / {} soft records, {} negatives",
        summary.strict, summary.soft, summary.balanced
    );
    Ok(MatchOutput {
        strict,
        soft,
        negatives,
        summary,
    })
}

/// The configured source checkpoint, or a model fit on the source
/// training split (selected on the source test split when present).
pub fn source_model(
    res: &Resources,
    cfg: &RunConfig,
) -> Result<(Model, Option<TrainOutcome<f64>>)> {
    if let Some(m) = &res.source_model {
        return Ok((m.clone(), None));
    }
    let train = need(&res.source_train, "source_model or corpus.source_train")?;
    let examples = build_source_examples(train, &res.table)?;
    let dev = LabeledSet::from_corpus(res.source_test.as_ref().unwrap_or(train), &res.table)?;
    let init = Model::init(
        cfg.model_mode,
        res.table.dim(),
        cfg.hidden,
        cfg.classes.len(),
        cfg.seed,
    )?;
    let baseline = res.table.baseline_as::<f64>();
    let tc = cfg.source_config();
    let out = train_refine(
        TrainInputs {
            source: &init,
            examples: &examples,
            dev: &dev,
            positive: cfg.positive()?,
            baseline: &baseline,
            pool: None,
        },
        &tc,
    )?;
    Ok((out.model.clone(), Some(out)))
}

fn build_source_examples(
    corpus: &Corpus,
    table: &EmbeddingTable,
) -> Result<Vec<crate::refine::Example<f64>>> {
    corpus
        .iter()
        .map(|inst| {
            Ok(crate::refine::Example {
                instance_id: inst.id.clone(),
                tokens: table.token_vectors(inst)?,
                label: Some(inst.gold_label.ok_or_else(|| {
                    Error::Invalid(format!("source instance {:?} has no gold label", inst.id))
                })?),
                z: 1.0,
                advice: Vec::new(),
            })
        })
        .collect()
}

pub fn refine_model(
    source: &Model,
    matches: &MatchOutput,
    res: &Resources,
    cfg: &RunConfig,
) -> Result<TrainOutcome<f64>> {
    let corpus = need(&res.unlabeled, "corpus.unlabeled")?;
    let dev = LabeledSet::from_corpus(need(&res.dev, "corpus.dev")?, &res.table)?;
    let mut labels: Vec<MatchRecord> = match cfg.preset.label_source() {
        Some(mode) => matches.records(mode).to_vec(),
        None => Vec::new(),
    };
    labels.extend(matches.negatives.iter().cloned());
    let advice: &[MatchRecord] = match cfg.preset.advice_source() {
        Some(mode) => matches.records(mode),
        None => &[],
    };
    let examples = build_examples::<f64>(corpus, &res.table, &labels, advice)?;
    info!(
        "{} training examples for preset {}",
        examples.len(),
        cfg.preset
    );
    let tc = cfg.refine_config();
    let pool = if tc.attribution.delta > 0 {
        res.replacement_pool()?
    } else {
        None
    };
    let baseline = res.table.baseline_as::<f64>();
    train_refine(
        TrainInputs {
            source,
            examples: &examples,
            dev: &dev,
            positive: cfg.positive()?,
            baseline: &baseline,
            pool: pool.as_ref(),
        },
        &tc,
    )
}

/// Metrics document of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fprd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall_fpr: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub per_term: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub match_precision: Option<f64>,
}

fn split_f1(
    model: &Model,
    corpus: &Option<Corpus>,
    res: &Resources,
    positive: usize,
) -> Result<Option<f64>> {
    corpus
        .as_ref()
        .map(|c| {
            let set = LabeledSet::from_corpus(c, &res.table)?;
            Ok(f1(&set.predict(model)?, &set.gold, positive)?.f1)
        })
        .transpose()
}

pub fn evaluate(
    model: &Model,
    res: &Resources,
    cfg: &RunConfig,
    matches: Option<&MatchOutput>,
) -> Result<Metrics> {
    let positive = cfg.positive()?;
    let mut m = Metrics {
        source_f1: split_f1(model, &res.source_test, res, positive)?,
        target_f1: split_f1(model, &res.target_test, res, positive)?,
        fprd: None,
        overall_fpr: None,
        per_term: BTreeMap::new(),
        match_precision: None,
    };
    if let Some(t) = &res.templates {
        let f = t.fprd(model, &res.word_vectors(cfg.seed), positive)?;
        m.fprd = Some(f.fprd);
        m.overall_fpr = Some(f.overall_fpr);
        m.per_term = f.per_term;
    }
    if let (Some(mo), Some(corpus)) = (matches, &res.unlabeled) {
        if !mo.strict.is_empty() && corpus.iter().all(|x| x.gold_label.is_some()) {
            m.match_precision = Some(matching_precision(&mo.strict, corpus)?);
        }
    }
    Ok(m)
}

/// Before/after heat maps for `ids`, written as `<dir>/<id>.html`.
pub fn write_heatmaps(
    before: &Model,
    after: &Model,
    res: &Resources,
    cfg: &RunConfig,
    dir: &Path,
) -> Result<()> {
    if cfg.heatmap_ids.is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let baseline = res.table.baseline_as::<f64>();
    let tc = cfg.refine_config();
    let pool = if tc.attribution.delta > 0 {
        res.replacement_pool()?
    } else {
        None
    };
    for id in &cfg.heatmap_ids {
        let inst = res.find_instance(id).ok_or_else(|| {
            Error::Config(format!("heat map instance {id:?} not found in any corpus"))
        })?;
        let words: Vec<String> = inst.tokens.iter().map(|t| t.text.clone()).collect();
        let tokens = res.table.token_vectors::<f64>(inst)?;
        let row = |title: &str, m: &Model| {
            HeatmapRow::compute(
                title,
                m,
                &words,
                &tokens,
                &baseline,
                &tc.attribution,
                pool.as_ref(),
                cfg.classes.names(),
            )
        };
        let rows = [
            row("before refinement", before)?,
            row("after refinement", after)?,
        ];
        write_heatmap(dir.join(format!("{id}.html")), id, &rows)?;
    }
    Ok(())
}

pub fn to_json_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable value");
    s.push('\n');
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_log(path: &Path, log: &[TrainLogEntry]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for entry in log {
        let line = serde_json::to_string(entry).expect("log entry serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Names of the files a full run writes into the output directory.
pub mod files {
    pub const RULES: &str = "rules.txt";
    pub const DIAGNOSTICS: &str = "diagnostics.tsv";
    pub const STRICT: &str = "matches_strict.jsonl";
    pub const SOFT: &str = "matches_soft.jsonl";
    pub const NEGATIVES: &str = "negatives.jsonl";
    pub const SUMMARY: &str = "match_summary.json";
    pub const SOURCE_MODEL: &str = "source.ckpt";
    pub const SOURCE_LOG: &str = "source_log.jsonl";
    pub const MODEL: &str = "model.ckpt";
    pub const TRAIN_LOG: &str = "train_log.jsonl";
    pub const METRICS: &str = "metrics.json";
    pub const SOURCE_METRICS: &str = "metrics_source.json";
    pub const HEATMAPS: &str = "heatmaps";
    pub const CONFIG: &str = "run.resolved.cfg";
}

pub fn write_parse(out: &Path, report: &ParseReport, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join(files::RULES), report.rules_text(cfg).as_bytes())?;
    let mut diag = report.diagnostics().join("\n");
    if !diag.is_empty() {
        diag.push('\n');
    }
    write_file(&out.join(files::DIAGNOSTICS), diag.as_bytes())
}

pub fn write_match(out: &Path, m: &MatchOutput) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_matches(out.join(files::STRICT), &m.strict)?;
    write_matches(out.join(files::SOFT), &m.soft)?;
    write_matches(out.join(files::NEGATIVES), &m.negatives)?;
    write_file(
        &out.join(files::SUMMARY),
        to_json_pretty(&m.summary).as_bytes(),
    )
}

/// Everything a full run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub parse: ParseReport,
    pub matches: MatchOutput,
    pub source: Model,
    pub refined: TrainOutcome<f64>,
    pub source_metrics: Metrics,
    pub metrics: Metrics,
}

/// Runs every stage in memory.
pub fn run(res: &Resources, cfg: &RunConfig) -> Result<RunOutput> {
    let parse = parse_rules(res, cfg)?;
    if parse.rules.is_empty() {
        return Err(Error::Invalid("no explanation was accepted".into()));
    }
    let matches = match_rules(&parse.rules, res, cfg)?;
    let (source, _) = source_model(res, cfg)?;
    let refined = refine_model(&source, &matches, res, cfg)?;
    let source_metrics = evaluate(&source, res, cfg, Some(&matches))?;
    let metrics = evaluate(&refined.model, res, cfg, Some(&matches))?;
    Ok(RunOutput {
        parse,
        matches,
        source,
        refined,
        source_metrics,
        metrics,
    })
}

/// Parses, matches, fits or loads the source model and refines it,
/// writing each stage's artifacts into `cfg.out`.
pub fn train_and_write(
    res: &Resources,
    cfg: &RunConfig,
) -> Result<(ParseReport, MatchOutput, Model, TrainOutcome<f64>)> {
    let out = cfg.out.as_path();
    let parse = parse_rules(res, cfg)?;
    write_parse(out, &parse, cfg)?;
    if parse.rules.is_empty() {
        return Err(Error::Invalid("no explanation was accepted".into()));
    }
    let matches = match_rules(&parse.rules, res, cfg)?;
    write_match(out, &matches)?;
    let (source, fit) = source_model(res, cfg)?;
    if let Some(fit) = fit {
        save_checkpoint(&source, out.join(files::SOURCE_MODEL))?;
        write_log(&out.join(files::SOURCE_LOG), &fit.log)?;
    }
    let refined = refine_model(&source, &matches, res, cfg)?;
    write_file(&out.join(files::MODEL), &checkpoint_bytes(&refined.model))?;
    write_log(&out.join(files::TRAIN_LOG), &refined.log)?;
    write_file(&out.join(files::CONFIG), cfg.render().as_bytes())?;
    Ok((parse, matches, source, refined))
}

/// Evaluates the source and refined models and writes both metrics
/// documents and the heat maps into `cfg.out`. Returns (source, refined)
/// metrics.
pub fn evaluate_and_write(
    source: &Model,
    refined: &Model,
    res: &Resources,
    cfg: &RunConfig,
    matches: Option<&MatchOutput>,
) -> Result<(Metrics, Metrics)> {
    let out = cfg.out.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let source_metrics = evaluate(source, res, cfg, matches)?;
    let metrics = evaluate(refined, res, cfg, matches)?;
    write_file(
        &out.join(files::SOURCE_METRICS),
        to_json_pretty(&source_metrics).as_bytes(),
    )?;
    write_file(
        &out.join(files::METRICS),
        to_json_pretty(&metrics).as_bytes(),
    )?;
    write_heatmaps(source, refined, res, cfg, &out.join(files::HEATMAPS))?;
    Ok((source_metrics, metrics))
}

/// Runs every stage and writes all artifacts into `cfg.out`.
pub fn run_and_write(res: &Resources, cfg: &RunConfig) -> Result<RunOutput> {
    let (parse, matches, source, refined) = train_and_write(res, cfg)?;
    let (source_metrics, metrics) =
        evaluate_and_write(&source, &refined.model, res, cfg, Some(&matches))?;
    Ok(RunOutput {
        parse,
        matches,
        source,
        refined,
        source_metrics,
        metrics,
    })
}
