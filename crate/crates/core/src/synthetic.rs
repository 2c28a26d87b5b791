//! Synthetic hate-speech domains with a planted identity-term bias.
//!
//! In the source domain every mention of a small group of identity terms
//! is hateful, so a classifier fit there learns to flag those terms. The
//! target domain mentions the same terms in benign sentences. Three
//! explanations describe the bias, which makes the world a small
//! end-to-end test bed for matching and refinement.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::RunConfig;
use crate::corpus::{
    AnnotatedInstance, Corpus, DepEdge, EmbeddingTable, LexiconSet, Token, NO_ENTITY,
};
use crate::error::{Error, Result};

/// Identity terms the source domain only uses in hateful sentences.
pub const BIASED_TERMS: [&str; 4] = ["muslims", "jews", "immigrants", "refugees"];
/// Identity terms the source domain uses in ordinary sentences.
pub const OTHER_GROUPS: [&str; 4] = ["christians", "students", "teachers", "neighbors"];
pub const HATEFUL_WORDS: [&str; 6] = ["vermin", "parasites", "scum", "rats", "savages", "filth"];
pub const BENIGN_WORDS: [&str; 6] = [
    "celebrate",
    "welcome",
    "love",
    "respect",
    "support",
    "enjoy",
];
const FILLERS: [&str; 40] = [
    "the", "people", "in", "my", "town", "today", "we", "saw", "went", "to", "market", "and",
    "city", "they", "like", "food", "this", "week", "at", "school", "work", "home", "news", "said",
    "about", "new", "park", "game", "friends", "family", "with", "on", "weekend", "again", "here",
    "there", "i", "am", "live", "morning",
];
const CLASSES: &str = "non-hate,hate";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    pub dim: usize,
    pub source_train: usize,
    pub source_test: usize,
    pub unlabeled: usize,
    pub dev: usize,
    pub target_test: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            dim: 16,
            source_train: 400,
            source_test: 200,
            unlabeled: 400,
            dev: 100,
            target_test: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub sentiment_lexicon: String,
    pub identity_lexicon: String,
    pub hateful_lexicon: String,
    pub lexicons: LexiconSet,
    pub source_train: Corpus,
    pub source_test: Corpus,
    pub unlabeled: Corpus,
    pub dev: Corpus,
    pub target_test: Corpus,
    pub table: EmbeddingTable,
    pub explanations: String,
    pub templates: String,
    pub identity_terms: String,
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Neutral,
    Group,
    BiasedBenign,
    BiasedImplicit,
    BiasedHate,
    GenericHate,
}

impl Kind {
    fn label(self) -> usize {
        match self {
            Kind::Neutral | Kind::Group | Kind::BiasedBenign => 0,
            Kind::BiasedImplicit | Kind::BiasedHate | Kind::GenericHate => 1,
        }
    }
}

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn pick(&mut self, words: &[&'static str]) -> &'static str {
        words.choose(&mut self.rng).expect("nonempty word list")
    }

    fn fillers(&mut self, lo: usize, hi: usize) -> Vec<&'static str> {
        let n = self.rng.random_range(lo..=hi);
        (0..n).map(|_| self.pick(&FILLERS)).collect()
    }

    fn insert_somewhere(
        &mut self,
        mut words: Vec<&'static str>,
        w: &'static str,
    ) -> Vec<&'static str> {
        let at = self.rng.random_range(0..=words.len());
        words.insert(at, w);
        words
    }

    fn sentence(&mut self, kind: Kind, key: Option<&'static str>) -> Vec<&'static str> {
        match kind {
            Kind::Neutral => self.fillers(5, 8),
            Kind::Group => {
                let g = key.unwrap_or_else(|| self.pick(&OTHER_GROUPS));
                let f = self.fillers(4, 7);
                self.insert_somewhere(f, g)
            }
            Kind::BiasedImplicit => {
                let b = key.unwrap_or_else(|| self.pick(&BIASED_TERMS));
                let f = self.fillers(4, 7);
                self.insert_somewhere(f, b)
            }
            Kind::BiasedBenign => {
                let b = key.unwrap_or_else(|| self.pick(&BIASED_TERMS));
                let mut w = self.fillers(0, 2);
                w.push(b);
                w.push(self.pick(&BENIGN_WORDS));
                w.extend(self.fillers(3, 5));
                w
            }
            Kind::BiasedHate | Kind::GenericHate => {
                let subj = match kind {
                    Kind::BiasedHate => self.pick(&BIASED_TERMS),
                    _ => self.pick(&["they", "people"]),
                };
                let h = key.unwrap_or_else(|| self.pick(&HATEFUL_WORDS));
                let mut w = self.fillers(0, 2);
                w.extend([subj, "are", h]);
                w.extend(self.fillers(2, 4));
                w
            }
        }
    }

    fn draw_kind(&mut self, mix: &[(Kind, f64)]) -> Kind {
        let r: f64 = self.rng.random();
        let mut acc = 0.0;
        for &(k, p) in mix {
            acc += p;
            if r < acc {
                return k;
            }
        }
        mix.last().expect("nonempty mix").0
    }
}

const SOURCE_MIX: [(Kind, f64); 5] = [
    (Kind::BiasedHate, 0.2),
    (Kind::BiasedImplicit, 0.2),
    (Kind::GenericHate, 0.1),
    (Kind::Neutral, 0.25),
    (Kind::Group, 0.25),
];
const TARGET_MIX: [(Kind, f64); 4] = [
    (Kind::GenericHate, 0.25),
    (Kind::BiasedBenign, 0.45),
    (Kind::Neutral, 0.15),
    (Kind::Group, 0.15),
];

fn pos_of(w: &str) -> &'static str {
    if BIASED_TERMS.contains(&w) || OTHER_GROUPS.contains(&w) || HATEFUL_WORDS.contains(&w) {
        "NOUN"
    } else if BENIGN_WORDS.contains(&w) || ["saw", "went", "like", "said", "live"].contains(&w) {
        "VERB"
    } else if w == "are" || w == "am" {
        "AUX"
    } else if ["the", "my", "this"].contains(&w) {
        "DET"
    } else if ["in", "to", "at", "with", "on", "about"].contains(&w) {
        "ADP"
    } else if ["we", "they", "i"].contains(&w) {
        "PRON"
    } else {
        "NOUN"
    }
}

fn instance(id: String, words: &[&str], label: usize) -> AnnotatedInstance {
    let tokens: Vec<Token> = words
        .iter()
        .map(|w| Token {
            text: w.to_string(),
            lemma: w.to_string(),
            pos: pos_of(w).to_string(),
            ner: if BIASED_TERMS.contains(w) {
                "NORP".into()
            } else {
                NO_ENTITY.into()
            },
            flags: Default::default(),
        })
        .collect();
    let root = tokens
        .iter()
        .position(|t| t.pos == "VERB" || t.pos == "AUX")
        .unwrap_or(0);
    let deps = (0..tokens.len())
        .map(|i| DepEdge {
            head: (i != root).then_some(root),
            dep: i,
            label: if i == root {
                "ROOT".into()
            } else {
                "dep".into()
            },
        })
        .collect();
    AnnotatedInstance {
        id,
        tokens,
        deps,
        gold_label: Some(label),
    }
}

fn word_seed(seed: u64, word: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in word.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Word vector: a semantic part on the first four axes (identity, biased
/// group, hateful, benign) plus word-specific Gaussian noise.
fn word_vector(seed: u64, dim: usize, word: &str) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(word_seed(seed, word));
    let (sem, sigma): ([f64; 4], f64) = if BIASED_TERMS.contains(&word) {
        ([1.4, 1.4, 0.0, 0.0], 0.25)
    } else if OTHER_GROUPS.contains(&word) {
        ([2.0, 0.0, 0.0, 0.0], 0.25)
    } else if HATEFUL_WORDS.contains(&word) {
        ([0.0, 0.0, 2.0, 0.0], 0.25)
    } else if BENIGN_WORDS.contains(&word) {
        ([0.0, 0.0, 0.0, 2.0], 0.25)
    } else {
        ([0.0; 4], 0.3)
    };
    let noise = Normal::new(0.0, sigma).expect("positive sigma");
    (0..dim)
        .map(|i| (sem.get(i).copied().unwrap_or(0.0) + noise.sample(&mut rng)) as f32)
        .collect()
}

fn lines(words: &[&str]) -> String {
    words.iter().map(|w| format!("{w}\n")).collect()
}

impl SyntheticWorld {
    pub fn generate(cfg: &SynthConfig) -> Result<Self> {
        if cfg.dim < 4 {
            return Err(Error::Config(
                "synthetic embeddings need at least 4 dimensions".into(),
            ));
        }
        let mut sentiment = String::new();
        for w in BENIGN_WORDS {
            let _ = writeln!(sentiment, "{w}\tpositive");
        }
        for w in ["awful", "terrible"] {
            let _ = writeln!(sentiment, "{w}\tnegative");
        }
        let mut identity: Vec<&str> = BIASED_TERMS.to_vec();
        identity.extend(OTHER_GROUPS);
        let identity_lexicon = lines(&identity);
        let hateful_lexicon = lines(&HATEFUL_WORDS);
        let lexicons = LexiconSet::from_strs(&sentiment, &identity_lexicon, &hateful_lexicon)?;

        let mut gen = Gen {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        };
        let mut build =
            |prefix: &str, n: usize, mix: &[(Kind, f64)], forced: &[(Kind, &'static str)]| {
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let (kind, key) = match forced.get(i) {
                        Some(&(k, w)) => (k, Some(w)),
                        None => (gen.draw_kind(mix), None),
                    };
                    let words = gen.sentence(kind, key);
                    out.push(instance(format!("{prefix}{i:04}"), &words, kind.label()));
                }
                let mut c = Corpus::from_instances(out)?;
                c.annotate(&lexicons);
                Ok::<_, Error>(c)
            };
        let source_train = build("s", cfg.source_train, &SOURCE_MIX, &[])?;
        let source_test = build("st", cfg.source_test, &SOURCE_MIX, &[])?;
        // The first unlabeled sentences are the explanations' references.
        let forced = [
            (Kind::BiasedBenign, "muslims"),
            (Kind::BiasedBenign, "jews"),
            (Kind::GenericHate, "vermin"),
        ];
        let unlabeled = build("u", cfg.unlabeled.max(forced.len()), &TARGET_MIX, &forced)?;
        let dev = build("d", cfg.dev, &TARGET_MIX, &[])?;
        let target_test = build("t", cfg.target_test, &TARGET_MIX, &[])?;

        let mut table = EmbeddingTable::new(cfg.dim, vec![0.0; cfg.dim])?;
        for corpus in [&source_train, &source_test, &unlabeled, &dev, &target_test] {
            for inst in corpus {
                let rows = inst
                    .tokens
                    .iter()
                    .map(|t| word_vector(cfg.seed, cfg.dim, &t.text))
                    .collect();
                table.insert_instance(&inst.id, rows)?;
            }
            table.validate(corpus, false)?;
        }

        let explanations = Self::explanations(&unlabeled)?;
        let templates = "\
non-hate\ti am {identity}
non-hate\t{identity} live in my town
non-hate\tmy friends are {identity}
non-hate\twe saw {identity} at the market
non-hate\t{identity} like the food here
hate\t{identity} are vermin
hate\t{identity} are scum
"
        .to_string();
        let mut terms: Vec<&str> = BIASED_TERMS.to_vec();
        terms.extend(OTHER_GROUPS);
        Ok(SyntheticWorld {
            sentiment_lexicon: sentiment,
            identity_lexicon,
            hateful_lexicon,
            lexicons,
            source_train,
            source_test,
            unlabeled,
            dev,
            target_test,
            table,
            explanations,
            templates,
            identity_terms: lines(&terms),
        })
    }

    fn explanations(unlabeled: &Corpus) -> Result<String> {
        let inst = |i: usize| -> Result<&AnnotatedInstance> {
            unlabeled
                .instances()
                .get(i)
                .ok_or_else(|| Error::Invalid("unlabeled corpus too small".into()))
        };
        let benign_after = |inst: &AnnotatedInstance, term: &str| -> Result<String> {
            let i = inst
                .tokens
                .iter()
                .position(|t| t.text == term)
                .ok_or_else(|| Error::Invalid(format!("reference lacks {term:?}")))?;
            Ok(inst.tokens[i + 1].text.clone())
        };
        let (a, b, c) = (inst(0)?, inst(1)?, inst(2)?);
        let mut s = String::new();
        for (name, r, term) in [("muslims-benign", a, "muslims"), ("jews-benign", b, "jews")] {
            let _ = write!(
                s,
                "Rule: {name}\nReference: {}\n\
                 Spurious Pattern: X is \"{term}\". Y is \"{}\". Y is positive. X is immediately before Y.\n\
                 Noisy Label: non-hate.\n\
                 Refinement Advice: Attribution score of X for class hate should be decreased.\n\n",
                r.id,
                benign_after(r, term)?
            );
        }
        let _ = write!(
            s,
            "Rule: hateful-predicate\nReference: {}\n\
             Spurious Pattern: X is \"vermin\". X is hateful. Y is \"are\". Y is immediately before X.\n\
             Noisy Label: hate.\n\
             Refinement Advice: Attribution score of X for class hate should be increased.\n",
            c.id
        );
        Ok(s)
    }

    /// Writes every input file plus `run.cfg` into `dir` and returns the
    /// config path. Outputs of runs default to `dir/out`.
    pub fn write(&self, dir: impl AsRef<Path>, seed: u64) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: &str| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put("sentiment.tsv", &self.sentiment_lexicon)?;
        put("identity.txt", &self.identity_lexicon)?;
        put("hateful.txt", &self.hateful_lexicon)?;
        put("explanations.txt", &self.explanations)?;
        put("templates.tsv", &self.templates)?;
        put("identity_terms.txt", &self.identity_terms)?;
        self.source_train.write(dir.join("source_train.jsonl"))?;
        self.source_test.write(dir.join("source_test.jsonl"))?;
        self.unlabeled.write(dir.join("unlabeled.jsonl"))?;
        self.dev.write(dir.join("dev.jsonl"))?;
        self.target_test.write(dir.join("target_test.jsonl"))?;
        self.table.write(dir.join("embeddings.txt"))?;
        let text = format!(
            "classes = {CLASSES}\npositive_class = hate\nnegative_class = non-hate\nseed = {seed}\n\
             preset = R_soft+C_strict\nout = out\n\
             lexicon.sentiment = sentiment.tsv\nlexicon.identity = identity.txt\nlexicon.hateful = hateful.txt\n\
             embeddings = embeddings.txt\n\
             corpus.unlabeled = unlabeled.jsonl\ncorpus.dev = dev.jsonl\n\
             corpus.source_train = source_train.jsonl\ncorpus.source_test = source_test.jsonl\n\
             corpus.target_test = target_test.jsonl\n\
             explanations = explanations.txt\ntemplates = templates.tsv\nidentity_terms = identity_terms.txt\n{}",
            SYNTH_SETTINGS
        );
        let path = dir.join("run.cfg");
        put("run.cfg", &text)?;
        // Parse once so a broken template fails here rather than in a run.
        RunConfig::parse(&text, dir, &path)?;
        Ok(path)
    }
}

/// Run settings used for the synthetic world beyond the defaults. The
/// world has only three explanations, so the regularizer gets the top of
/// the usual strength range.
pub const SYNTH_SETTINGS: &str = "train.alpha = 0.03\nheatmap.ids = u0000,u0001,u0002\n";

/// In-memory counterpart of the config written by [`SyntheticWorld::write`].
pub fn run_config(seed: u64) -> Result<RunConfig> {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.set("classes", CLASSES)?;
    cfg.set("positive_class", "hate")?;
    cfg.set("negative_class", "non-hate")?;
    for line in SYNTH_SETTINGS.lines() {
        if let Some((k, v)) = line.split_once('=') {
            cfg.set(k.trim(), v.trim())?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
