mod common;

use explreg::corpus::Span;
use explreg::lang::*;
use explreg::matcher::{execute_rule, generalize, AdviceTarget, MatchParams, Mode};

#[test]
fn table2_explanation_parses() {
    let corpus = common::corpus();
    let lex = common::lexicon();
    let classes = common::sentiment_classes();
    let rule = ExplParser::new(&lex, &classes)
        .parse(common::TABLE2, "x", corpus.get("ref").unwrap())
        .unwrap();
    assert_eq!(rule.id, "table2");
    assert_eq!(rule.noisy_label, 1);
    let PredicateExpr::And(children) = &rule.body else {
        panic!("body is not a conjunction")
    };
    assert_eq!(children.len(), 7);
    let leaves = rule.body.leaves();
    assert_eq!(leaves.len(), 7);
    let count = |f: fn(&LeafPredicate) -> bool| leaves.iter().filter(|l| f(&l.pred)).count();
    assert_eq!(count(|p| matches!(p, LeafPredicate::Existence { .. })), 3);
    assert_eq!(
        count(|p| matches!(
            p,
            LeafPredicate::Characteristic {
                kind: Characteristic::Sentiment(_),
                ..
            }
        )),
        2
    );
    assert_eq!(
        count(|p| matches!(
            p,
            LeafPredicate::Relation {
                rel: Relation::ImmediatelyBefore,
                ..
            }
        )),
        2
    );
    assert_eq!(
        rule.head,
        vec![AdviceAtom::Attr {
            var: "X".into(),
            class: 1,
            dir: Direction::Increase
        }]
    );
    assert_eq!(rule.vars["X"].span, Span::new(3, 4));
    assert_eq!(rule.vars["Y"].span, Span::new(4, 5));
    assert_eq!(rule.vars["Z"].span, Span::new(5, 6));
    assert!(validate_rule(&rule, corpus.get("ref").unwrap()).is_accepted());
}

#[test]
fn table1_existence_example() {
    let corpus = explreg::corpus::Corpus::parse(
        r#"{"id":"t1","tokens":[{"text":"jews"},{"text":"are"},{"text":"a"},{"text":"parasite"}]}"#,
        std::path::Path::new("t1.jsonl"),
        &common::lexicons(),
    )
    .unwrap();
    let lex = common::lexicon();
    let classes = common::hate_classes();
    let text =
        "X is 'jews'. Y is 'parasite'.\nLabel: hate.\nAttribution score of X should be decreased.";
    let rule = parse_explanation(text, &lex, &classes, corpus.get("t1").unwrap()).unwrap();
    assert_eq!(
        rule.body,
        PredicateExpr::And(vec![
            PredicateExpr::leaf(LeafPredicate::Existence {
                var: "X".into(),
                literal: "jews".into()
            }),
            PredicateExpr::leaf(LeafPredicate::Existence {
                var: "Y".into(),
                literal: "parasite".into()
            }),
        ])
    );
    assert_eq!(
        rule.head[0],
        AdviceAtom::Attr {
            var: "X".into(),
            class: 1,
            dir: Direction::Decrease
        }
    );
}

#[test]
fn table1_characteristic_and_relation_examples() {
    let corpus = explreg::corpus::Corpus::parse(
        r#"{"id":"t","tokens":[{"text":"Anna","pos":"PROPN","ner":"PERSON"},{"text":"praised","pos":"VERB"},{"text":"good","pos":"ADJ"},{"text":"work","pos":"NOUN"}],"dep":[[1,0,"nsubj"],[-1,1,"ROOT"],[3,2,"amod"],[1,3,"dobj"]]}"#,
        std::path::Path::new("t.jsonl"),
        &common::lexicons(),
    )
    .unwrap();
    let inst = corpus.get("t").unwrap();
    let lex = common::lexicon();
    let classes = common::sentiment_classes();
    let text = "\
X is 'Anna'. V is 'praised'. Y is 'good'. W is 'work'.
X is a Person entity. V is verb. Y is a positive word.
X is the subject of V. X is two tokens away from Y. Y modifies W.
Label: positive.
Attribution score of Y should be decreased.
";
    let rule = parse_explanation(text, &lex, &classes, inst).unwrap();
    let preds: Vec<LeafPredicate> = rule
        .body
        .leaves()
        .into_iter()
        .map(|l| l.pred.clone())
        .collect();
    assert!(preds.contains(&LeafPredicate::Characteristic {
        var: "X".into(),
        kind: Characteristic::Ner("PERSON".into())
    }));
    assert!(preds.contains(&LeafPredicate::Characteristic {
        var: "V".into(),
        kind: Characteristic::Pos("VERB".into())
    }));
    assert!(preds.contains(&LeafPredicate::Characteristic {
        var: "Y".into(),
        kind: Characteristic::Sentiment(explreg::corpus::Polarity::Positive)
    }));
    assert!(preds.contains(&LeafPredicate::Relation {
        a: "X".into(),
        b: "V".into(),
        rel: Relation::SubjectOf
    }));
    assert!(preds.contains(&LeafPredicate::Relation {
        a: "Y".into(),
        b: "W".into(),
        rel: Relation::Modifies
    }));
    assert!(preds.contains(&LeafPredicate::Relation {
        a: "X".into(),
        b: "Y".into(),
        rel: Relation::WithinBefore(2)
    }));
    assert!(validate_rule(&rule, inst).is_accepted());
}

#[test]
fn round_trip_preserves_structure() {
    let corpus = common::corpus();
    let lex = common::lexicon();
    let classes = common::sentiment_classes();
    let reference = corpus.get("ref").unwrap();
    let rule = parse_explanation(common::TABLE2, &lex, &classes, reference).unwrap();
    let text = rule.to_text(&classes);
    let again = parse_explanation(&text, &lex, &classes, reference).unwrap();
    assert_eq!(rule, again, "printed:\n{text}");

    let mixed = "Rule: m\nReference: ref\nX is 'distressing'. Y = tokens 4..5.\nX is negative [soft] or (X is within 2 words before Y and Y is within 3 dependency hops of X).\nLabel: negative.\nInteraction score between X and Y for positive should be decreased.\n";
    let rule = parse_explanation(mixed, &lex, &classes, reference).unwrap();
    let text = rule.to_text(&classes);
    assert_eq!(
        rule,
        parse_explanation(&text, &lex, &classes, reference).unwrap(),
        "printed:\n{text}"
    );
}

#[test]
fn diagnostics_name_offsets() {
    let corpus = common::corpus();
    let lex = common::lexicon();
    let classes = common::sentiment_classes();
    let reference = corpus.get("ref").unwrap();
    let err = parse_explanation("", &lex, &classes, reference).unwrap_err();
    assert_eq!(err.message, "missing label line");

    let text = "X is 'distressing'. X is religion.\nLabel: negative.\nAttribution score of X should be increased.";
    let err = parse_explanation(text, &lex, &classes, reference).unwrap_err();
    assert_eq!(err.offset, text.find("religion").unwrap(), "{err}");
    assert!(err.to_string().starts_with("rule r1: "));

    let err = parse_explanation(
        "X is 'distressing'. Q is after X.\nLabel: negative.\nAttribution score of X should be increased.",
        &lex,
        &classes,
        reference,
    )
    .unwrap_err();
    assert!(err.message.contains("undeclared variable Q"), "{err}");

    let err = parse_explanation(
        "X is 'gloomy'.\nLabel: negative.\nAttribution score of X should be increased.",
        &lex,
        &classes,
        reference,
    )
    .unwrap_err();
    assert!(err.message.contains("not found"), "{err}");
}

#[test]
fn lexicon_extension_makes_sentence_parse() {
    let corpus = explreg::corpus::Corpus::parse(
        r#"{"id":"r","tokens":[{"text":"muslims","ner":"NORP"},{"text":"pray"}]}"#,
        std::path::Path::new("r.jsonl"),
        &common::lexicons(),
    )
    .unwrap();
    let classes = common::hate_classes();
    let text = "X is 'muslims'. X is religion.\nLabel: non-hate.\nAttribution score of X should be decreased.";
    let mut lex = common::lexicon();
    assert!(parse_explanation(text, &lex, &classes, corpus.get("r").unwrap()).is_err());
    lex.extend_from_str("religion\tner\tNORP\n", std::path::Path::new("extra.tsv"))
        .unwrap();
    let rule = parse_explanation(text, &lex, &classes, corpus.get("r").unwrap()).unwrap();
    assert!(rule.body.leaves().iter().any(|l| l.pred
        == LeafPredicate::Characteristic {
            var: "X".into(),
            kind: Characteristic::Ner("NORP".into())
        }));
}

#[test]
fn validation_discards_rule_on_mutated_reference() {
    let corpus = common::corpus();
    let lex = common::lexicon();
    let classes = common::sentiment_classes();
    let rule =
        parse_explanation(common::TABLE2, &lex, &classes, corpus.get("ref").unwrap()).unwrap();
    let mutated = corpus.get("none").unwrap();
    assert_eq!(
        validate_rule(&rule, mutated),
        Validation::Discarded("Existence(X) failed".into())
    );
    let mut no_than = corpus.get("ref").unwrap().clone();
    no_than.tokens[4].text = "and".into();
    no_than.tokens[4].lemma = "and".into();
    assert_eq!(
        validate_rule(&rule, &no_than),
        Validation::Discarded("Existence(Y) failed".into())
    );

    let mut vacuous = rule.clone();
    vacuous.body = PredicateExpr::And(Vec::new());
    assert!(validate_rule(&vacuous, corpus.get("ref").unwrap()).is_accepted());
}

#[test]
fn table2_rule_soft_matches_synonym_sentence() {
    let corpus = common::corpus();
    let table = common::table(&corpus);
    let lex = common::lexicon();
    let classes = common::sentiment_classes();
    let reference = corpus.get("ref").unwrap();
    let rule = parse_explanation(common::TABLE2, &lex, &classes, reference).unwrap();
    let params = MatchParams::default();
    let soft = corpus.get("soft").unwrap();

    assert!(
        execute_rule(&rule, reference, soft, Mode::Strict, Some(&table), &params)
            .unwrap()
            .is_none()
    );
    let rec = execute_rule(&rule, reference, soft, Mode::Soft, Some(&table), &params)
        .unwrap()
        .unwrap();
    assert_eq!(rec.label, 1);
    assert_eq!(rec.bindings["X"], Span::new(3, 4));
    assert_eq!(
        rec.advice,
        vec![AdviceTarget::Attr {
            span: Span::new(3, 4),
            class: 1,
            target: 1.0
        }]
    );
    // Three existence scores folded by the Łukasiewicz conjunction; every
    // other clause holds exactly.
    let expected = 1.0 - (1.0 - common::COS_DEPRESSING) - (1.0 - common::COS_ENTERTAINING);
    assert!((rec.z - expected).abs() < 1e-6, "z = {}", rec.z);

    let none = corpus.get("none").unwrap();
    assert!(
        execute_rule(&rule, reference, none, Mode::Strict, Some(&table), &params)
            .unwrap()
            .is_none()
    );

    let strict = generalize(
        std::slice::from_ref(&rule),
        &corpus,
        Mode::Strict,
        1.0,
        Some(&table),
        &params,
    )
    .unwrap();
    let ids: Vec<&str> = strict.iter().map(|r| r.instance_id.as_str()).collect();
    assert_eq!(ids, ["ref", "strict"]);
    let soft_all = generalize(
        std::slice::from_ref(&rule),
        &corpus,
        Mode::Soft,
        0.6,
        Some(&table),
        &params,
    )
    .unwrap();
    let ids: Vec<&str> = soft_all.iter().map(|r| r.instance_id.as_str()).collect();
    assert_eq!(ids, ["ref", "soft", "strict"]);
    let soft_top = generalize(
        std::slice::from_ref(&rule),
        &corpus,
        Mode::Soft,
        1.0,
        Some(&table),
        &params,
    )
    .unwrap();
    assert_eq!(soft_top, strict);
}

#[test]
fn single_existence_soft_exact_literal_scores_one() {
    let corpus = common::corpus();
    let table = common::table(&corpus);
    let lex = common::lexicon();
    let classes = common::sentiment_classes();
    let reference = corpus.get("ref").unwrap();
    let rule = parse_explanation(
        "X is 'than'.\nLabel: negative.\nAttribution score of X should be decreased.",
        &lex,
        &classes,
        reference,
    )
    .unwrap();
    let rec = execute_rule(
        &rule,
        reference,
        corpus.get("soft").unwrap(),
        Mode::Soft,
        Some(&table),
        &MatchParams::default(),
    )
    .unwrap()
    .unwrap();
    assert_eq!(rec.z, 1.0);
    assert_eq!(rec.advice[0].target(), 0.0);
}
