#![allow(dead_code)]

pub mod checks;

use std::path::Path;

use explreg::corpus::{Corpus, EmbeddingTable, LexiconSet};
use explreg::lang::{ClassList, ExplLexicon};

pub const SENTIMENT: &str = "\
distressing\tnegative
depressing\tnegative
attractive\tpositive
entertaining\tpositive
good\tpositive
nice\tpositive
";
pub const IDENTITY: &str = "women\njews\nmuslims\nblack people\n";
pub const HATEFUL: &str = "parasite\nvermin\n";

pub fn lexicons() -> LexiconSet {
    LexiconSet::from_strs(SENTIMENT, IDENTITY, HATEFUL).unwrap()
}

pub fn sentiment_classes() -> ClassList {
    ClassList::new(["positive", "negative"])
}

pub fn hate_classes() -> ClassList {
    ClassList::new(["non-hate", "hate"])
}

pub fn lexicon() -> ExplLexicon {
    ExplLexicon::builtin()
}

/// The reference sentence, its soft match, a sentence without the
/// literals, and a strict match.
pub const CORPUS: &str = r#"{"id":"ref","tokens":[{"text":"They","lemma":"they","pos":"PRON","ner":"NONE"},{"text":"prove","lemma":"prove","pos":"VERB","ner":"NONE"},{"text":"more","lemma":"more","pos":"ADV","ner":"NONE"},{"text":"distressing","lemma":"distressing","pos":"ADJ","ner":"NONE"},{"text":"than","lemma":"than","pos":"ADP","ner":"NONE"},{"text":"attractive","lemma":"attractive","pos":"ADJ","ner":"NONE"},{"text":".","lemma":".","pos":"PUNCT","ner":"NONE"}],"dep":[[1,0,"nsubj"],[-1,1,"ROOT"],[3,2,"advmod"],[1,3,"acomp"],[3,4,"prep"],[4,5,"pobj"],[1,6,"punct"]],"label":1}
{"id":"soft","tokens":[{"text":"Self-flagellation","lemma":"self-flagellation","pos":"NOUN","ner":"NONE"},{"text":"is","lemma":"be","pos":"AUX","ner":"NONE"},{"text":"more","lemma":"more","pos":"ADV","ner":"NONE"},{"text":"depressing","lemma":"depressing","pos":"ADJ","ner":"NONE"},{"text":"than","lemma":"than","pos":"ADP","ner":"NONE"},{"text":"entertaining","lemma":"entertaining","pos":"ADJ","ner":"NONE"},{"text":".","lemma":".","pos":"PUNCT","ner":"NONE"}],"dep":[[1,0,"nsubj"],[-1,1,"ROOT"],[3,2,"advmod"],[1,3,"acomp"],[3,4,"prep"],[4,5,"pobj"],[1,6,"punct"]],"label":1}
{"id":"none","tokens":[{"text":"They","lemma":"they","pos":"PRON","ner":"NONE"},{"text":"prove","lemma":"prove","pos":"VERB","ner":"NONE"},{"text":"it","lemma":"it","pos":"PRON","ner":"NONE"},{"text":".","lemma":".","pos":"PUNCT","ner":"NONE"}],"dep":[[1,0,"nsubj"],[-1,1,"ROOT"],[1,2,"dobj"],[1,3,"punct"]],"label":0}
{"id":"strict","tokens":[{"text":"It","lemma":"it","pos":"PRON","ner":"NONE"},{"text":"seems","lemma":"seem","pos":"VERB","ner":"NONE"},{"text":"distressing","lemma":"distressing","pos":"ADJ","ner":"NONE"},{"text":"than","lemma":"than","pos":"ADP","ner":"NONE"},{"text":"attractive","lemma":"attractive","pos":"ADJ","ner":"NONE"}],"dep":[[1,0,"nsubj"],[-1,1,"ROOT"],[1,2,"acomp"],[2,3,"prep"],[3,4,"pobj"]],"label":1}
"#;

pub const TABLE2: &str = "\
Rule: table2
Reference: ref
Spurious Pattern: X is \"distressing\". Y is \"than\". Z is \"attractive\". X is negative. Z is positive. X is immediately before Y. Y is immediately before Z.
Noisy Label: Negative.
Refinement Advice: Attribution score of X should be increased.
";

pub fn corpus() -> Corpus {
    Corpus::parse(CORPUS, Path::new("fixture.jsonl"), &lexicons()).unwrap()
}

pub const COS_DEPRESSING: f64 = 0.9;
pub const COS_ENTERTAINING: f64 = 0.85;

fn axis(dim: usize, i: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// One axis per word, except the two synonyms which sit at fixed cosines
/// from their reference words.
pub fn word_vector(word: &str) -> Vec<f32> {
    const DIM: usize = 16;
    let lw = word.to_lowercase();
    let mix = |a: usize, b: usize, c: f64| {
        let mut v = vec![0.0f32; DIM];
        v[a] = c as f32;
        v[b] = (1.0 - c * c).sqrt() as f32;
        v
    };
    match lw.as_str() {
        "distressing" => axis(DIM, 0),
        "depressing" => mix(0, 1, COS_DEPRESSING),
        "attractive" => axis(DIM, 2),
        "entertaining" => mix(2, 3, COS_ENTERTAINING),
        "than" => axis(DIM, 4),
        "they" => axis(DIM, 5),
        "prove" => axis(DIM, 6),
        "more" => axis(DIM, 7),
        "." => axis(DIM, 8),
        "self-flagellation" => axis(DIM, 9),
        "is" => axis(DIM, 10),
        "it" => axis(DIM, 11),
        "seems" => axis(DIM, 12),
        _ => axis(DIM, 13 + lw.len() % 3),
    }
}

pub fn table(corpus: &Corpus) -> EmbeddingTable {
    let mut t = EmbeddingTable::new(16, vec![0.0; 16]).unwrap();
    for inst in corpus {
        t.insert_instance(
            &inst.id,
            inst.tokens
                .iter()
                .map(|tok| word_vector(&tok.text))
                .collect(),
        )
        .unwrap();
    }
    t.validate(corpus, false).unwrap();
    t
}
