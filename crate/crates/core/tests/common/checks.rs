//! Measurements behind the acceptance criteria. Each returns the observed
//! quantity so callers can assert on it or print it.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};

use explreg::corpus::{AnnotatedInstance, Span};
use explreg::lang::{parse_explanation, validate_rule, ClassList, ExplLexicon, ExplParser, Rule};
use explreg::matcher::{
    generalize, interaction_soft, soft_and, soft_or, AdviceTarget, MatchParams, Mode,
};
use explreg::refine::{
    integrated_gradients, interaction_score, loss_and_grad, masked, occlusion, soc_importance,
    total_loss, AttributionConfig, Example, LossConfig, Method, ModelMode, ModelState, Transfer,
};
use explreg::synthetic::{SynthConfig, SyntheticWorld, BENIGN_WORDS, HATEFUL_WORDS};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tokens(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// A random non-empty span inside `0..n`.
pub fn random_span(rng: &mut ChaCha8Rng, n: usize) -> Span {
    let a = rng.random_range(0..n);
    let b = rng.random_range(a + 1..=n);
    Span::new(a, b)
}

/// Two random disjoint non-empty spans inside `0..n` (needs `n >= 2`).
pub fn disjoint_spans(rng: &mut ChaCha8Rng, n: usize) -> (Span, Span) {
    let cut = rng.random_range(1..n);
    let left = random_span(rng, cut);
    let right = random_span(rng, n - cut);
    let right = Span::new(right.start + cut, right.end + cut);
    if rng.random_bool(0.5) {
        (left, right)
    } else {
        (right, left)
    }
}

// ---------------------------------------------------------------- logic

/// Largest violation of the connective laws over `cases` random pairs.
pub fn lukasiewicz_violation(cases: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    let mut bad = |v: f64| worst = worst.max(v);
    for i in 0..cases {
        // Mix in the boundary values so the identities get exercised on them.
        let pick = |rng: &mut ChaCha8Rng| -> f64 {
            match rng.random_range(0..8) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random_range(0.0..=1.0),
            }
        };
        let (a, b): (f64, f64) = if i == 0 {
            (0.0, 1.0)
        } else {
            (pick(&mut rng), pick(&mut rng))
        };
        let (and, or) = (soft_and(a, b), soft_or(a, b));
        for v in [and, or] {
            bad((-v).max(v - 1.0).max(0.0));
        }
        bad((and - soft_and(b, a)).abs());
        bad((or - soft_or(b, a)).abs());
        bad((soft_and(a, 1.0) - a).abs());
        bad(soft_and(a, 0.0).abs());
        bad((soft_or(a, 1.0) - 1.0).abs());
        bad((and - a.min(b)).max(0.0));
        bad((a.max(b) - or).max(0.0));
    }
    worst
}

/// Largest deviation from the hand-evaluated soft distance table.
pub fn distance_table_error() -> f64 {
    [((2, 2), 1.0), ((5, 2), 0.75), ((8, 2), 0.0), ((1, 0), 0.75)]
        .iter()
        .map(|&((d, r), want)| (interaction_soft::<f64>(d, r) - want).abs())
        .fold(0.0, f64::max)
}

/// Number of random `(d, d_ref)` cases breaking the soft distance laws:
/// range, `1` exactly when satisfied, monotone decrease, and the zero
/// boundary at `d - d_ref = 2 (d_ref + 1)`.
pub fn distance_law_failures(cases: usize, seed: u64) -> usize {
    let mut rng = rng(seed);
    let mut failures = 0;
    for _ in 0..cases {
        let r: usize = rng.random_range(0..20);
        let d: usize = rng.random_range(0..80);
        let z = interaction_soft::<f64>(d, r);
        let next = interaction_soft::<f64>(d + 1, r);
        let zero_at = r + 2 * (r + 1);
        let ok = (0.0..=1.0).contains(&z)
            && ((z == 1.0) == (d <= r))
            && next <= z
            && (d < r || next < z || z == 0.0)
            && ((z == 0.0) == (d >= zero_at));
        if !ok {
            failures += 1;
        }
    }
    failures
}

// ---------------------------------------------------------------- rules

fn unique_position(inst: &AnnotatedInstance, i: usize) -> bool {
    let w = inst.tokens[i].text.to_lowercase();
    inst.tokens
        .iter()
        .filter(|t| t.text.to_lowercase() == w)
        .count()
        == 1
}

/// Explanations grounded in random unlabeled sentences of `world`, mixing
/// existence, characteristic and relation clauses and both advice kinds.
/// Returns the `n` that parse and validate.
pub fn random_rules(world: &SyntheticWorld, n: usize, seed: u64) -> Vec<Rule> {
    let lex = ExplLexicon::builtin();
    let classes = ClassList::new(["non-hate", "hate"]);
    let parser = ExplParser::new(&lex, &classes);
    let mut rng = rng(seed);
    let pool: Vec<&AnnotatedInstance> = world.unlabeled.instances().iter().skip(3).collect();
    let mut rules = Vec::new();
    let mut attempts = 0;
    while rules.len() < n {
        attempts += 1;
        assert!(attempts < 100 * n, "could not build {n} rules");
        let inst = *pool.choose(&mut rng).unwrap();
        let len = inst.tokens.len();
        if len < 2 {
            continue;
        }
        let i = rng.random_range(0..len - 1);
        let j = rng.random_range(i + 1..len.min(i + 5));
        if !unique_position(inst, i) || !unique_position(inst, j) {
            continue;
        }
        let (wi, wj) = (&inst.tokens[i].text, &inst.tokens[j].text);
        let mut text = format!(
            "Rule: g{:02}\nReference: {}\nSpurious Pattern: X is \"{wi}\". Y is \"{wj}\".",
            rules.len(),
            inst.id
        );
        if j == i + 1 && rng.random_bool(0.5) {
            text.push_str(" X is immediately before Y.");
        } else {
            text.push_str(&format!(" X is within {} words before Y.", j - i));
        }
        let lw = wj.to_lowercase();
        if BENIGN_WORDS.contains(&lw.as_str()) {
            text.push_str(" Y is positive.");
        } else if HATEFUL_WORDS.contains(&lw.as_str()) {
            text.push_str(" Y is hateful.");
        }
        let label = if rng.random_bool(0.5) {
            "hate"
        } else {
            "non-hate"
        };
        let dir = if rng.random_bool(0.5) {
            "increased"
        } else {
            "decreased"
        };
        let advice = if rng.random_bool(0.7) {
            format!("Attribution score of X for class hate should be {dir}.")
        } else {
            format!("Interaction score between X and Y for hate should be {dir}.")
        };
        text.push_str(&format!(
            "\nNoisy Label: {label}.\nRefinement Advice: {advice}\n"
        ));
        let Ok(rule) = parser.parse(&text, "g", inst) else {
            continue;
        };
        if validate_rule(&rule, inst).is_accepted() {
            rules.push(rule);
        }
    }
    rules
}

pub struct Subsumption {
    pub strict: usize,
    pub soft: usize,
    /// Strict records without a soft record of z = 1 for the same pair.
    pub missing: usize,
    /// Soft output at threshold 1 equals strict output record for record.
    pub top_equals_strict: bool,
}

pub fn strict_soft_subsumption(instances: usize, rules: usize, seed: u64) -> Subsumption {
    let world = SyntheticWorld::generate(&SynthConfig {
        seed,
        unlabeled: instances,
        ..Default::default()
    })
    .unwrap();
    let rules = random_rules(&world, rules, seed);
    let params = MatchParams::default();
    let corpus = &world.unlabeled;
    let strict = generalize(
        &rules,
        corpus,
        Mode::Strict,
        1.0,
        Some(&world.table),
        &params,
    )
    .unwrap();
    let soft = generalize(&rules, corpus, Mode::Soft, 0.0, Some(&world.table), &params).unwrap();
    let top = generalize(&rules, corpus, Mode::Soft, 1.0, Some(&world.table), &params).unwrap();
    let soft_z: BTreeMap<(&str, &str), f64> = soft
        .iter()
        .map(|r| ((r.instance_id.as_str(), r.rule_id.as_str()), r.z))
        .collect();
    let missing = strict
        .iter()
        .filter(|r| soft_z.get(&(r.instance_id.as_str(), r.rule_id.as_str())) != Some(&1.0))
        .count();
    Subsumption {
        strict: strict.len(),
        soft: soft.len(),
        missing,
        top_equals_strict: top == strict,
    }
}

// --------------------------------------------------------------- parser

/// Explanations in the shapes of the two explanation tables, each with
/// the single-sentence corpus it is grounded in.
pub const FIXTURES: &[(&str, &str)] = &[
    (
        r#"{"id":"t1","tokens":[{"text":"jews"},{"text":"are"},{"text":"a"},{"text":"parasite"}]}"#,
        "X is 'jews'. Y is 'parasite'.\nLabel: hate.\nAttribution score of X should be decreased.",
    ),
    (
        r#"{"id":"t2","tokens":[{"text":"Anna","pos":"PROPN","ner":"PERSON"},{"text":"praised","pos":"VERB"},{"text":"good","pos":"ADJ"},{"text":"work","pos":"NOUN"}],"dep":[[1,0,"nsubj"],[-1,1,"ROOT"],[3,2,"amod"],[1,3,"dobj"]]}"#,
        "X is 'Anna'. V is 'praised'. Y is 'good'. W is 'work'.\nX is a Person entity. V is verb. Y is a positive word.\nX is the subject of V. X is two tokens away from Y. Y modifies W.\nLabel: hate.\nAttribution score of Y should be decreased.",
    ),
    (
        r#"{"id":"t3","tokens":[{"text":"muslims","ner":"NORP"},{"text":"are"},{"text":"vermin"}],"dep":[[1,0,"nsubj"],[-1,1,"ROOT"],[1,2,"attr"]]}"#,
        "Spurious Pattern: X is \"muslims\". Y is \"vermin\". Y is hateful. X is within 2 words before Y. X is within 2 dependency hops of Y.\nNoisy Label: hate.\nRefinement Advice: Interaction score between X and Y for hate should be increased.",
    ),
    (
        r#"{"id":"t4","tokens":[{"text":"nice"},{"text":"refugees"},{"text":"live"},{"text":"here"}]}"#,
        "X is 'refugees'. Y is 'nice'. Y is positive. Y is immediately before X.\nNoisy Label: non-hate.\nRefinement Advice: Attribution score of X for class hate should be decreased.",
    ),
];

pub struct ParserReport {
    pub fixtures: usize,
    pub parsed: usize,
    pub round_trips: usize,
    pub self_matches: usize,
}

/// Parses every fixture, round-trips it through the printer and checks
/// that each rule strict-matches its own reference sentence.
pub fn parser_fixtures() -> ParserReport {
    let lex = ExplLexicon::builtin();
    let classes = ClassList::new(["non-hate", "hate"]);
    let lexicons = super::lexicons();
    let mut report = ParserReport {
        fixtures: FIXTURES.len(),
        parsed: 0,
        round_trips: 0,
        self_matches: 0,
    };
    let mut cases = Vec::new();
    for (json, text) in FIXTURES {
        let corpus =
            explreg::corpus::Corpus::parse(json, std::path::Path::new("fixture.jsonl"), &lexicons)
                .unwrap();
        cases.push((corpus, text.to_string(), classes.clone()));
    }
    let table2 = super::corpus();
    cases.push((
        table2,
        super::TABLE2.to_string(),
        super::sentiment_classes(),
    ));
    report.fixtures = cases.len();
    for (corpus, text, classes) in &cases {
        let reference = &corpus.instances()[0];
        let Ok(rule) = parse_explanation(text, &lex, classes, reference) else {
            continue;
        };
        report.parsed += 1;
        let printed = rule.to_text(classes);
        if parse_explanation(&printed, &lex, classes, reference).as_ref() == Ok(&rule) {
            report.round_trips += 1;
        }
        let strict = generalize(
            std::slice::from_ref(&rule),
            corpus,
            Mode::Strict,
            1.0,
            None,
            &MatchParams::default(),
        )
        .unwrap();
        if validate_rule(&rule, reference).is_accepted()
            && strict.iter().any(|r| r.instance_id == reference.id)
        {
            report.self_matches += 1;
        }
    }
    report
}

const FUZZ_WORDS: &[&str] = &[
    "X",
    "Y",
    "Z",
    "is",
    "are",
    "'jews'",
    "\"than\"",
    "'",
    "\"",
    ".",
    "and",
    "or",
    "(",
    ")",
    "not",
    "within",
    "2",
    "three",
    "words",
    "before",
    "after",
    "immediately",
    "the",
    "subject",
    "of",
    "modifies",
    "positive",
    "negative",
    "hateful",
    "verb",
    "a",
    "Person",
    "entity",
    "[soft]",
    "Label:",
    "Noisy",
    "Rule:",
    "Reference:",
    "Spurious",
    "Pattern:",
    "Refinement",
    "Advice:",
    "Attribution",
    "Interaction",
    "score",
    "between",
    "for",
    "class",
    "hate",
    "should",
    "be",
    "increased",
    "decreased",
    "=",
    "tokens",
    "0..2",
    "4..1",
    "\n",
    "é",
    "—",
    "99999999999999999999",
    "{",
    "}",
    "\t",
];

/// Feeds `cases` random inputs to the parser and counts panics.
pub fn parser_fuzz(cases: usize, seed: u64) -> usize {
    let lex = ExplLexicon::builtin();
    let classes = super::sentiment_classes();
    let corpus = super::corpus();
    let reference = corpus.get("ref").unwrap();
    let mut rng = rng(seed);
    let mut panics = 0;
    for _ in 0..cases {
        let text = if rng.random_bool(0.2) {
            let len = rng.random_range(0..80);
            (0..len)
                .map(|_| char::from_u32(rng.random_range(0..0x3000)).unwrap_or('?'))
                .collect::<String>()
        } else {
            let len = rng.random_range(0..40);
            (0..len)
                .map(|_| *FUZZ_WORDS.choose(&mut rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            let _ = parse_explanation(&text, &lex, &classes, reference);
            let _ = explreg::lang::parse_file(&text, &lex, &classes, &corpus);
        }));
        if outcome.is_err() {
            panics += 1;
        }
    }
    panics
}

// ------------------------------------------------------------- gradients

fn random_advice(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<AdviceTarget> {
    let mut advice = vec![AdviceTarget::Attr {
        span: random_span(rng, n),
        class: rng.random_range(0..classes),
        target: if rng.random_bool(0.5) { 1.0 } else { 0.0 },
    }];
    if n >= 2 {
        let (p, q) = disjoint_spans(rng, n);
        advice.push(AdviceTarget::Inter {
            spans: [p, q],
            class: rng.random_range(0..classes),
            target: if rng.random_bool(0.5) { 1.0 } else { 0.0 },
        });
    }
    advice
}

pub fn random_example(rng: &mut ChaCha8Rng, dim: usize, classes: usize) -> Example<f64> {
    let n = rng.random_range(2..8);
    Example {
        instance_id: String::new(),
        tokens: random_tokens(rng, n, dim),
        label: Some(rng.random_range(0..classes)),
        z: rng.random_range(0.5..=1.0),
        advice: random_advice(rng, n, classes),
    }
}

/// Max relative error between the analytic loss gradient and central
/// differences with step `h`, over all parameters of one random model per
/// instance. Instances cycle through both model modes, both attribution
/// methods and the three transfer options.
pub fn gradient_check(instances: usize, h: f64, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (dim, hidden, classes) = (6, 8, 2);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let mode = if k % 2 == 0 {
            ModelMode::Mlp
        } else {
            ModelMode::Additive
        };
        let method = if k % 4 < 2 { Method::Soc } else { Method::Ig };
        let transfer = match k % 3 {
            0 => Transfer::None,
            1 => Transfer::L2 { lambda: 0.2 },
            _ => Transfer::Distill { lambda: 0.3 },
        };
        let model = ModelState::<f64>::init(mode, dim, hidden, classes, 100 + k as u64).unwrap();
        let source = ModelState::<f64>::init(mode, dim, hidden, classes, 500 + k as u64).unwrap();
        let batch = vec![random_example(&mut rng, dim, classes)];
        let baseline: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.1..0.1)).collect();
        let cfg = LossConfig {
            alpha: 0.5,
            class_weights: vec![1.0, 4.0],
            use_z_weighting: true,
            attribution: AttributionConfig {
                method,
                ig_steps: 8,
                ..Default::default()
            },
            transfer,
        };
        let (_, grad) = loss_and_grad(
            &model,
            &batch,
            &baseline,
            &cfg,
            Some(&source),
            None,
            k as u64,
        )
        .unwrap();
        let flat = model.flat();
        let mut probe = model.clone();
        let mut at = |v: &[f64]| {
            probe.set_flat(v);
            total_loss(
                &probe,
                &batch,
                &baseline,
                &cfg,
                Some(&source),
                None,
                k as u64,
            )
            .unwrap()
            .total
        };
        for (i, &g) in grad.flat().iter().enumerate() {
            let mut v = flat.clone();
            v[i] += h;
            let up = at(&v);
            v[i] -= 2.0 * h;
            let down = at(&v);
            let num = (up - down) / (2.0 * h);
            let rel = (g - num).abs() / g.abs().max(num.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

// ----------------------------------------------------------- attribution

pub struct Completeness {
    pub max_err_fine: f64,
    pub fine_beats_coarse: usize,
}

/// Integrated-gradients completeness on random mlp instances at `fine`
/// and `coarse` step counts.
pub fn ig_completeness(instances: usize, fine: usize, coarse: usize, seed: u64) -> Completeness {
    let mut rng = rng(seed);
    let dim = 8;
    let mut out = Completeness {
        max_err_fine: 0.0,
        fine_beats_coarse: 0,
    };
    for k in 0..instances {
        let model = ModelState::<f64>::init(ModelMode::Mlp, dim, 12, 3, 1000 + k as u64).unwrap();
        let n = rng.random_range(1..9);
        let tokens: Vec<Vec<f64>> = random_tokens(&mut rng, n, dim)
            .into_iter()
            .map(|t| t.iter().map(|x| 2.0 * x).collect())
            .collect();
        let baseline: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.2..0.2)).collect();
        let class = rng.random_range(0..3);
        let gap = model.forward(&tokens).unwrap()[class]
            - model.forward(&vec![baseline.clone(); n]).unwrap()[class];
        let err = |steps| {
            let phi = integrated_gradients(&model, &tokens, &baseline, class, steps).unwrap();
            (phi.iter().sum::<f64>() - gap).abs()
        };
        let (e_fine, e_coarse) = (err(fine), err(coarse));
        out.max_err_fine = out.max_err_fine.max(e_fine);
        if e_fine < e_coarse {
            out.fine_beats_coarse += 1;
        }
    }
    out
}

pub struct OcclusionReport {
    /// Occlusion and zero-width SOC against two independent forward passes.
    pub occlusion_err: f64,
    /// Largest additive-mode interaction over all disjoint span pairs.
    pub additive_inter: f64,
    /// Mlp interaction against the four-forward-pass expansion.
    pub mlp_inter_err: f64,
}

fn all_spans(n: usize) -> Vec<Span> {
    (0..n)
        .flat_map(|a| (a + 1..=n).map(move |b| Span::new(a, b)))
        .collect()
}

pub fn occlusion_checks(instances: usize, seed: u64) -> OcclusionReport {
    let mut rng = rng(seed);
    let dim = 5;
    let cfg = AttributionConfig {
        method: Method::Soc,
        ..Default::default()
    };
    let mut out = OcclusionReport {
        occlusion_err: 0.0,
        additive_inter: 0.0,
        mlp_inter_err: 0.0,
    };
    for k in 0..instances {
        let n = rng.random_range(2..7);
        let tokens = random_tokens(&mut rng, n, dim);
        let baseline: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.1..0.1)).collect();
        let mlp = ModelState::<f64>::init(ModelMode::Mlp, dim, 6, 2, 3000 + k as u64).unwrap();
        let add = ModelState::<f64>::init(ModelMode::Additive, dim, 6, 2, 4000 + k as u64).unwrap();
        let spans = all_spans(n);
        for model in [&mlp, &add] {
            let full = model.forward(&tokens).unwrap();
            for &p in &spans {
                let without = model.forward(&masked(&tokens, &baseline, &[p])).unwrap();
                let occ = occlusion(model, &tokens, &baseline, p).unwrap();
                let soc = soc_importance(model, &tokens, &baseline, p, &cfg, None).unwrap();
                for c in 0..2 {
                    let want = full[c] - without[c];
                    out.occlusion_err = out
                        .occlusion_err
                        .max((occ[c] - want).abs())
                        .max((soc[c] - want).abs());
                }
            }
        }
        for &p in &spans {
            for &q in spans.iter().filter(|q| !q.overlaps(&p)) {
                let inter = interaction_score(&add, &tokens, &baseline, p, q, &cfg, None).unwrap();
                out.additive_inter = inter.iter().fold(out.additive_inter, |m, v| m.max(v.abs()));
                let inter = interaction_score(&mlp, &tokens, &baseline, p, q, &cfg, None).unwrap();
                let f = |mask: &[Span]| mlp.forward(&masked(&tokens, &baseline, mask)).unwrap();
                let (x, xp, xq, xpq) = (f(&[]), f(&[p]), f(&[q]), f(&[p, q]));
                for c in 0..2 {
                    let want = (x[c] - xq[c]) - (xp[c] - xpq[c]);
                    out.mlp_inter_err = out.mlp_inter_err.max((inter[c] - want).abs());
                }
            }
        }
    }
    out
}

// ------------------------------------------------------------------ loss

pub struct Decomposition {
    /// Batches where cls, attr, inter and transfer agree bit for bit
    /// between the regularized and unregularized runs and the total is
    /// their documented sum.
    pub exact_batches: usize,
    /// Largest `|total(a) - total(0) - a (attr + inter)|`.
    pub max_gap: f64,
    /// Batches where `alpha = 0` equals a hand-written weighted cross entropy bit for bit.
    pub plain_ce_batches: usize,
}

pub fn loss_decomposition(batches: usize, seed: u64) -> Decomposition {
    let mut rng = rng(seed);
    let (dim, classes) = (4, 2);
    let mut out = Decomposition {
        exact_batches: 0,
        max_gap: 0.0,
        plain_ce_batches: 0,
    };
    for k in 0..batches {
        let mode = if k % 2 == 0 {
            ModelMode::Mlp
        } else {
            ModelMode::Additive
        };
        let model = ModelState::<f64>::init(mode, dim, 5, classes, 7000 + k as u64).unwrap();
        let size = rng.random_range(1..6);
        let batch: Vec<Example<f64>> = (0..size)
            .map(|_| random_example(&mut rng, dim, classes))
            .collect();
        let baseline = vec![0.0; dim];
        let alpha = rng.random_range(0.001..2.0);
        let method = if k % 3 == 0 { Method::Ig } else { Method::Soc };
        let cfg = LossConfig {
            alpha,
            class_weights: vec![1.0, rng.random_range(1.0..10.0)],
            use_z_weighting: k % 4 != 0,
            attribution: AttributionConfig {
                method,
                ig_steps: 6,
                ..Default::default()
            },
            transfer: Transfer::None,
        };
        let zero = LossConfig {
            alpha: 0.0,
            ..cfg.clone()
        };
        let with = total_loss(&model, &batch, &baseline, &cfg, None, None, k as u64).unwrap();
        let without = total_loss(&model, &batch, &baseline, &zero, None, None, k as u64).unwrap();
        let reg = with.attr + with.inter;
        let same_parts = with.cls.to_bits() == without.cls.to_bits()
            && with.transfer.to_bits() == without.transfer.to_bits()
            && with.total.to_bits() == (with.cls + alpha * reg + with.transfer).to_bits()
            && without.total.to_bits() == without.cls.to_bits();
        if same_parts {
            out.exact_batches += 1;
        }
        out.max_gap = out
            .max_gap
            .max((with.total - without.total - alpha * reg).abs());

        let mut ce = 0.0;
        for ex in &batch {
            let y = ex.label.unwrap();
            let z = if cfg.use_z_weighting { ex.z } else { 1.0 };
            ce += cfg.class_weights[y] * z * -model.forward(&ex.tokens).unwrap()[y].ln();
        }
        if without.total.to_bits() == (ce / batch.len() as f64).to_bits() {
            out.plain_ce_batches += 1;
        }
    }
    out
}

// --------------------------------------------------------------- helpers

/// Sorted file names and bytes of every file below `dir`.
pub fn snapshot(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let name = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(name, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Names present in both snapshots whose bytes differ, plus names present
/// in only one.
pub fn snapshot_diff(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let names: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    names
        .into_iter()
        .filter(|n| a.get(*n) != b.get(*n))
        .cloned()
        .collect()
}
