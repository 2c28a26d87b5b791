//! Layered parser for the controlled explanation language.
//!
//! 1. Lines are split into header lines (`Rule:`, `Reference:`, `Label:`)
//!    and sentence text.
//! 2. Sentence text is lexed; runs of plain words are segmented into lexicon
//!    phrases, longest match first.
//! 3. Each sentence is a clause expression (`and` binds tighter than `or`,
//!    parentheses group); the rule body is the conjunction of sentences.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::ast::*;
use super::lexicon::{number_word, ExplLexicon, RelTemplate, Template};
use crate::corpus::{AnnotatedInstance, Polarity, Span};

/// A located parse failure. Offsets count characters from the start of the
/// parsed text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rule {rule}: {offset}: {message}")]
pub struct ParseError {
    pub rule: String,
    pub offset: usize,
    pub message: String,
}

type PResult<T> = Result<T, (usize, String)>;

#[derive(Debug, Clone, PartialEq)]
enum Lx {
    Word { raw: String, lower: String },
    Quoted(String),
    Func { name: String, arg: Option<String> },
    Dot,
    DotDot,
    LParen,
    RParen,
    Equals,
    Marker(Softness),
}

#[derive(Debug, Clone)]
struct LTok {
    kind: Lx,
    off: usize,
}

fn lex(text: &str, base: usize, out: &mut Vec<LTok>) -> PResult<()> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut i = 0;
    let is_word = |c: char| c.is_alphanumeric() || c == '_' || c == '-';
    while i < n {
        let c = chars[i];
        let off = base + i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let push = |out: &mut Vec<LTok>, kind| out.push(LTok { kind, off });
        match c {
            '.' => {
                if i + 1 < n && chars[i + 1] == '.' {
                    push(out, Lx::DotDot);
                    i += 2;
                } else {
                    push(out, Lx::Dot);
                    i += 1;
                }
            }
            ';' | '!' | '?' => {
                push(out, Lx::Dot);
                i += 1;
            }
            '(' => {
                push(out, Lx::LParen);
                i += 1;
            }
            ')' => {
                push(out, Lx::RParen);
                i += 1;
            }
            '=' => {
                push(out, Lx::Equals);
                i += 1;
            }
            ',' => {
                push(
                    out,
                    Lx::Word {
                        raw: ",".into(),
                        lower: ",".into(),
                    },
                );
                i += 1;
            }
            '[' => {
                let close = chars[i..].iter().position(|&c| c == ']').map(|p| i + p);
                let Some(close) = close else {
                    return Err((off, "unterminated '[' marker".into()));
                };
                let inner: String = chars[i + 1..close]
                    .iter()
                    .collect::<String>()
                    .trim()
                    .to_lowercase();
                let m = match inner.as_str() {
                    "soft" => Softness::Soft,
                    "strict" => Softness::Strict,
                    other => return Err((off, format!("unknown marker [{other}]"))),
                };
                push(out, Lx::Marker(m));
                i = close + 1;
            }
            '@' => {
                let mut j = i + 1;
                while j < n && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                if j == i + 1 {
                    return Err((off, "expected a predicate name after '@'".into()));
                }
                let name: String = chars[i + 1..j].iter().collect();
                let mut arg = None;
                if j < n && chars[j] == '(' {
                    let close = chars[j..].iter().position(|&c| c == ')').map(|p| j + p);
                    let Some(close) = close else {
                        return Err((base + j, "unterminated predicate argument".into()));
                    };
                    arg = Some(
                        chars[j + 1..close]
                            .iter()
                            .collect::<String>()
                            .trim()
                            .to_string(),
                    );
                    j = close + 1;
                }
                push(out, Lx::Func { name, arg });
                i = j;
            }
            '\'' | '"' | '\u{2018}' | '\u{201C}' | '`' => {
                let (lit, next) = lex_quoted(&chars, i)
                    .ok_or((off, "unterminated quoted literal".to_string()))?;
                if lit.trim().is_empty() {
                    return Err((off, "empty quoted literal".into()));
                }
                push(out, Lx::Quoted(lit.trim().to_string()));
                i = next;
            }
            c if is_word(c) => {
                let mut j = i;
                while j < n
                    && (is_word(chars[j])
                        || (chars[j] == '\''
                            && j > i
                            && j + 1 < n
                            && chars[j - 1].is_alphanumeric()
                            && chars[j + 1].is_alphanumeric()))
                {
                    j += 1;
                }
                let raw: String = chars[i..j].iter().collect();
                let lower = raw.to_lowercase();
                push(out, Lx::Word { raw, lower });
                i = j;
            }
            other => return Err((off, format!("unexpected character {other:?}"))),
        }
    }
    Ok(())
}

/// Returns the literal and the index after the closing quote.
fn lex_quoted(chars: &[char], start: usize) -> Option<(String, usize)> {
    let open = chars[start];
    let n = chars.len();
    let (body_start, closers): (usize, &[&str]) = match open {
        '`' if start + 1 < n && chars[start + 1] == '`' => (start + 2, &["''", "\u{201D}", "\""]),
        '`' => (start + 1, &["'", "`"]),
        '"' => (start + 1, &["\""]),
        '\u{201C}' => (start + 1, &["\u{201D}", "\""]),
        '\u{2018}' => (start + 1, &["\u{2019}", "'"]),
        _ => (start + 1, &["'"]),
    };
    let mut j = body_start;
    while j < n {
        for close in closers {
            let cl: Vec<char> = close.chars().collect();
            if chars[j..].starts_with(&cl) {
                let after = j + cl.len();
                // An apostrophe inside a word (don't) does not close a literal.
                let inner_apostrophe = cl == ['\'']
                    && after < n
                    && chars[after].is_alphanumeric()
                    && j > body_start
                    && chars[j - 1].is_alphanumeric();
                if !inner_apostrophe {
                    return Some((chars[body_start..j].iter().collect(), after));
                }
            }
        }
        j += 1;
    }
    None
}

fn is_var_syntax(raw: &str) -> bool {
    let mut cs = raw.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_uppercase())
        && cs.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

#[derive(Debug, Clone)]
enum Sym {
    Var(String),
    Lit(String),
    Char(Characteristic),
    Rel(RelTemplate, Option<usize>),
    And,
    Or,
    LParen,
    RParen,
    Marker(Softness),
}

#[derive(Debug, Clone)]
struct S {
    sym: Sym,
    off: usize,
}

/// Header fields found in an explanation block.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockHeader {
    pub rule_id: Option<String>,
    pub reference: Option<String>,
}

fn strip_prefix_ci<'a>(s: &'a str, prefixes: &[&str]) -> Option<(&'a str, usize)> {
    for p in prefixes {
        if s.len() >= p.len() && s.is_char_boundary(p.len()) && s[..p.len()].eq_ignore_ascii_case(p)
        {
            return Some((&s[p.len()..], p.chars().count()));
        }
    }
    None
}

const RULE_PREFIX: &[&str] = &["rule:"];
const REF_PREFIX: &[&str] = &["reference instance:", "reference:", "ref:"];
const LABEL_PREFIX: &[&str] = &["noisy label:", "label:"];
const SECTION_PREFIX: &[&str] = &[
    "spurious pattern:",
    "pattern:",
    "refinement advice:",
    "advice:",
    "explanation:",
];

enum Line<'a> {
    Skip,
    RuleId(&'a str),
    Reference(&'a str),
    Label(&'a str, usize),
    Text(&'a str, usize),
}

/// Splits text into lines with their character offsets.
fn lines_with_offsets(text: &str) -> Vec<(&str, usize)> {
    let mut out = Vec::new();
    let mut off = 0;
    for raw in text.split('\n') {
        out.push((raw.trim_end_matches('\r'), off));
        off += raw.chars().count() + 1;
    }
    out
}

fn classify(line: &str, off: usize) -> Line<'_> {
    let trimmed = line.trim_start();
    let lead = line.chars().count() - trimmed.chars().count();
    let off = off + lead;
    if trimmed.trim().is_empty() || trimmed.starts_with('#') {
        return Line::Skip;
    }
    if let Some((rest, _)) = strip_prefix_ci(trimmed, RULE_PREFIX) {
        return Line::RuleId(rest.trim());
    }
    if let Some((rest, _)) = strip_prefix_ci(trimmed, REF_PREFIX) {
        return Line::Reference(rest.trim());
    }
    if let Some((rest, k)) = strip_prefix_ci(trimmed, LABEL_PREFIX) {
        return Line::Label(rest, off + k);
    }
    if let Some((rest, k)) = strip_prefix_ci(trimmed, SECTION_PREFIX) {
        return Line::Text(rest, off + k);
    }
    Line::Text(trimmed, off)
}

/// Reads the `Rule:` and `Reference:` header lines of a block.
pub fn block_header(text: &str) -> BlockHeader {
    let mut h = BlockHeader::default();
    for (line, off) in lines_with_offsets(text) {
        match classify(line, off) {
            Line::RuleId(id) if h.rule_id.is_none() => h.rule_id = Some(id.to_string()),
            Line::Reference(r) if h.reference.is_none() => h.reference = Some(r.to_string()),
            _ => {}
        }
    }
    h
}

/// Parser bound to a lexicon and a class list. Stateless and reentrant.
#[derive(Debug, Clone, Copy)]
pub struct ExplParser<'a> {
    pub lexicon: &'a ExplLexicon,
    pub classes: &'a ClassList,
}

struct Override {
    span: Span,
}

impl<'a> ExplParser<'a> {
    pub fn new(lexicon: &'a ExplLexicon, classes: &'a ClassList) -> Self {
        ExplParser { lexicon, classes }
    }

    /// Parses one explanation block grounded in `reference`. `default_id`
    /// names the rule when the block has no `Rule:` line.
    pub fn parse(
        &self,
        text: &str,
        default_id: &str,
        reference: &AnnotatedInstance,
    ) -> Result<Rule, ParseError> {
        let header = block_header(text);
        let id = header
            .rule_id
            .clone()
            .unwrap_or_else(|| default_id.to_string());
        self.parse_inner(text, &header, reference)
            .map_err(|(offset, message)| ParseError {
                rule: id.clone(),
                offset,
                message,
            })
            .map(|mut r| {
                r.id = id;
                r
            })
    }

    fn parse_inner(
        &self,
        text: &str,
        header: &BlockHeader,
        reference: &AnnotatedInstance,
    ) -> PResult<Rule> {
        if let Some(r) = &header.reference {
            if r != &reference.id {
                return Err((
                    0,
                    format!(
                        "reference instance mismatch: block names {r:?}, got {:?}",
                        reference.id
                    ),
                ));
            }
        }
        let mut label: Option<(usize, usize)> = None;
        let mut toks = Vec::new();
        for (line, off) in lines_with_offsets(text) {
            match classify(line, off) {
                Line::Label(rest, loff) => {
                    if label.is_some() {
                        return Err((loff, "duplicate label line".into()));
                    }
                    let name = rest.trim().trim_end_matches('.').trim();
                    let idx = self
                        .classes
                        .index_of(name)
                        .ok_or_else(|| (loff, format!("unknown class {name:?}")))?;
                    label = Some((idx, loff));
                }
                Line::Text(rest, toff) => {
                    lex(rest, toff, &mut toks)?;
                    if !matches!(toks.last(), Some(LTok { kind: Lx::Dot, .. })) && !toks.is_empty()
                    {
                        let end = toff + rest.chars().count();
                        toks.push(LTok {
                            kind: Lx::Dot,
                            off: end,
                        });
                    }
                }
                _ => {}
            }
        }
        let Some((noisy_label, _)) = label else {
            return Err((text.chars().count(), "missing label line".into()));
        };

        let sentences: Vec<&[LTok]> = toks
            .split(|t| t.kind == Lx::Dot)
            .filter(|s| !s.is_empty())
            .collect();

        // Pass 1: declarations.
        let mut literals: BTreeMap<String, (String, usize)> = BTreeMap::new();
        let mut overrides: BTreeMap<String, Override> = BTreeMap::new();
        for s in &sentences {
            if let Some((var, lit)) = as_declaration(s) {
                literals.entry(var).or_insert((lit, s[0].off));
            } else if let Some(res) = as_override(s, reference.len()) {
                let (var, ov) = res?;
                if overrides.insert(var.clone(), ov).is_some() {
                    return Err((s[0].off, format!("duplicate span override for {var}")));
                }
            }
        }
        let declared: BTreeSet<String> = literals.keys().chain(overrides.keys()).cloned().collect();

        // Pass 2: pattern and advice sentences.
        let mut body = Vec::new();
        let mut head = Vec::new();
        for s in &sentences {
            if as_override(s, reference.len()).is_some() {
                continue;
            }
            let first = match &s[0].kind {
                Lx::Word { lower, .. } => lower.as_str(),
                _ => "",
            };
            if matches!(first, "attribution" | "importance" | "interaction") {
                head.push(self.advice(s, &declared, noisy_label)?);
            } else {
                body.push(self.pattern(s, &declared)?);
            }
        }
        if head.is_empty() {
            return Err((text.chars().count(), "missing refinement advice".into()));
        }

        let mut vars = BTreeMap::new();
        for name in &declared {
            let decl = match (literals.get(name), overrides.get(name)) {
                (lit, Some(ov)) => VarDecl {
                    span: ov.span,
                    literal: lit
                        .map(|(l, _)| l.clone())
                        .unwrap_or_else(|| reference.span_text(ov.span)),
                    explicit: true,
                },
                (Some((lit, off)), None) => VarDecl {
                    span: find_literal(reference, lit).ok_or_else(|| {
                        (
                            *off,
                            format!(
                                "literal {lit:?} of {name} not found in reference instance {:?}",
                                reference.id
                            ),
                        )
                    })?,
                    literal: lit.clone(),
                    explicit: false,
                },
                (None, None) => unreachable!("declared names come from one of the maps"),
            };
            vars.insert(name.clone(), decl);
        }

        Ok(Rule {
            id: String::new(),
            ref_instance: reference.id.clone(),
            vars,
            body: PredicateExpr::And(body),
            head,
            noisy_label,
        })
    }

    fn pattern(&self, s: &[LTok], declared: &BTreeSet<String>) -> PResult<PredicateExpr> {
        let syms = self.symbols(s, declared)?;
        let mut p = ExprParser {
            syms: &syms,
            pos: 0,
            subject: None,
            end: s.last().map_or(0, |t| t.off),
        };
        let e = p.or_expr()?;
        if p.pos < syms.len() {
            return Err((
                syms[p.pos].off,
                "unexpected trailing input in clause".into(),
            ));
        }
        Ok(e)
    }

    fn symbols(&self, s: &[LTok], declared: &BTreeSet<String>) -> PResult<Vec<S>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < s.len() {
            let t = &s[i];
            match &t.kind {
                Lx::Word { raw, .. } if declared.contains(raw) => {
                    out.push(S {
                        sym: Sym::Var(raw.clone()),
                        off: t.off,
                    });
                    i += 1;
                }
                Lx::Word { raw, .. } if raw.len() == 1 && is_var_syntax(raw) => {
                    return Err((t.off, format!("undeclared variable {raw}")));
                }
                Lx::Word { .. } => {
                    let mut j = i;
                    while j < s.len()
                        && matches!(&s[j].kind, Lx::Word { raw, .. }
                            if !declared.contains(raw) && !(raw.len() == 1 && is_var_syntax(raw)))
                    {
                        j += 1;
                    }
                    let words: Vec<&str> = s[i..j]
                        .iter()
                        .map(|t| match &t.kind {
                            Lx::Word { lower, .. } => lower.as_str(),
                            _ => unreachable!(),
                        })
                        .collect();
                    let mut w = 0;
                    while w < words.len() {
                        let off = s[i + w].off;
                        let Some((entry, used, k)) = self.lexicon.longest_match(&words, w) else {
                            let word = words[w];
                            let msg = match self.lexicon.suggest(word) {
                                Some(sugg) => {
                                    format!("unknown phrase {word:?} (did you mean {sugg:?}?)")
                                }
                                None => format!("unknown phrase {word:?}"),
                            };
                            return Err((off, msg));
                        };
                        let sym = match &entry.template {
                            Template::Filler => None,
                            Template::And => Some(Sym::And),
                            Template::Or => Some(Sym::Or),
                            Template::Char(c) => Some(Sym::Char(c.clone())),
                            Template::Rel(r) => Some(Sym::Rel(*r, k)),
                        };
                        if let Some(sym) = sym {
                            out.push(S { sym, off });
                        }
                        w += used;
                    }
                    i = j;
                }
                Lx::Quoted(l) => {
                    out.push(S {
                        sym: Sym::Lit(l.clone()),
                        off: t.off,
                    });
                    i += 1;
                }
                Lx::Func { name, arg } => {
                    out.push(S {
                        sym: func_symbol(name, arg.as_deref()).map_err(|m| (t.off, m))?,
                        off: t.off,
                    });
                    i += 1;
                }
                Lx::LParen => {
                    out.push(S {
                        sym: Sym::LParen,
                        off: t.off,
                    });
                    i += 1;
                }
                Lx::RParen => {
                    out.push(S {
                        sym: Sym::RParen,
                        off: t.off,
                    });
                    i += 1;
                }
                Lx::Marker(m) => {
                    out.push(S {
                        sym: Sym::Marker(*m),
                        off: t.off,
                    });
                    i += 1;
                }
                Lx::Equals | Lx::DotDot | Lx::Dot => {
                    return Err((t.off, "unexpected punctuation in clause".into()));
                }
            }
        }
        Ok(out)
    }

    fn advice(&self, s: &[LTok], declared: &BTreeSet<String>, label: usize) -> PResult<AdviceAtom> {
        let words: Vec<(&Lx, usize)> = s.iter().map(|t| (&t.kind, t.off)).collect();
        let lower = |k: &Lx| match k {
            Lx::Word { lower, .. } => Some(lower.clone()),
            _ => None,
        };
        let interaction = lower(words[0].0).as_deref() == Some("interaction");
        let mut vars = Vec::new();
        let mut dir = None;
        let mut class = None;
        let mut i = 1;
        while i < words.len() {
            let (k, off) = words[i];
            match k {
                Lx::Word { raw, .. } if declared.contains(raw) => {
                    vars.push((raw.clone(), off));
                    i += 1;
                }
                Lx::Word { raw, .. } if raw.len() == 1 && is_var_syntax(raw) => {
                    return Err((off, format!("undeclared variable {raw}")));
                }
                Lx::Word { lower, .. } => {
                    match lower.as_str() {
                        "score" | "scores" | "of" | "between" | "should" | "must" | "be" | "is"
                        | "to" | "and" | "," | "the" | "class" => {}
                        "increased" | "increase" | "raised" | "raise" | "higher" => {
                            dir = Some(Direction::Increase)
                        }
                        "decreased" | "decrease" | "lowered" | "lower" | "reduced" => {
                            dir = Some(Direction::Decrease)
                        }
                        "for" | "towards" | "toward" | "regarding" | "on" => {
                            let mut j = i + 1;
                            while j < words.len()
                                && matches!(
                                    lower_of(words[j].0).as_deref(),
                                    Some("the") | Some("class")
                                )
                            {
                                j += 1;
                            }
                            let Some((Lx::Word { raw, .. }, coff)) =
                                words.get(j).map(|(k, o)| (*k, *o))
                            else {
                                return Err((off, "expected a class name".into()));
                            };
                            let idx = self
                                .classes
                                .index_of(raw)
                                .ok_or_else(|| (coff, format!("unknown class {raw:?}")))?;
                            class = Some(idx);
                            i = j;
                        }
                        other => return Err((off, format!("unexpected word {other:?} in advice"))),
                    }
                    i += 1;
                }
                _ => return Err((off, "unexpected token in advice".into())),
            }
        }
        let end = s.last().map_or(0, |t| t.off);
        let dir = dir.ok_or((
            end,
            "advice needs a direction (increased/decreased)".to_string(),
        ))?;
        let class = class.unwrap_or(label);
        if interaction {
            match vars.as_slice() {
                [(a, _), (b, boff)] => {
                    if a == b {
                        return Err((
                            *boff,
                            "interaction advice needs two distinct variables".into(),
                        ));
                    }
                    Ok(AdviceAtom::Inter {
                        a: a.clone(),
                        b: b.clone(),
                        class,
                        dir,
                    })
                }
                _ => Err((
                    s[0].off,
                    "interaction advice needs exactly two variables".into(),
                )),
            }
        } else {
            match vars.as_slice() {
                [(v, _)] => Ok(AdviceAtom::Attr {
                    var: v.clone(),
                    class,
                    dir,
                }),
                _ => Err((
                    s[0].off,
                    "attribution advice needs exactly one variable".into(),
                )),
            }
        }
    }
}

fn lower_of(k: &Lx) -> Option<String> {
    match k {
        Lx::Word { lower, .. } => Some(lower.clone()),
        _ => None,
    }
}

fn func_symbol(name: &str, arg: Option<&str>) -> Result<Sym, String> {
    let k = || -> Result<usize, String> {
        arg.and_then(number_word)
            .ok_or_else(|| format!("@{name} needs a numeric argument"))
    };
    let text = || -> Result<String, String> {
        arg.filter(|a| !a.is_empty())
            .map(str::to_string)
            .ok_or_else(|| format!("@{name} needs an argument"))
    };
    Ok(match name.to_lowercase().as_str() {
        "ner" => Sym::Char(Characteristic::Ner(text()?.to_uppercase())),
        "pos" => Sym::Char(Characteristic::Pos(text()?.to_uppercase())),
        "sentiment" => Sym::Char(Characteristic::Sentiment(
            Polarity::parse(&text()?).ok_or_else(|| format!("unknown polarity in @{name}"))?,
        )),
        "identity" => Sym::Char(Characteristic::Identity),
        "hateful" => Sym::Char(Characteristic::Hateful),
        "immediatelybefore" => Sym::Rel(RelTemplate::ImmediatelyBefore, None),
        "withinbefore" => Sym::Rel(RelTemplate::WithinBefore(None), Some(k()?)),
        "withinafter" => Sym::Rel(RelTemplate::WithinAfter(None), Some(k()?)),
        "modifies" => Sym::Rel(RelTemplate::Modifies, None),
        "subjectof" => Sym::Rel(RelTemplate::SubjectOf, None),
        "dependencywithin" => Sym::Rel(RelTemplate::DepWithin(None), Some(k()?)),
        _ => return Err(format!("unknown predicate @{name}")),
    })
}

/// `X is 'literal'` (optionally followed by a marker).
fn as_declaration(s: &[LTok]) -> Option<(String, String)> {
    let s = match s.last() {
        Some(LTok {
            kind: Lx::Marker(_),
            ..
        }) => &s[..s.len() - 1],
        _ => s,
    };
    match s {
        [LTok {
            kind: Lx::Word { raw, .. },
            ..
        }, LTok {
            kind: Lx::Word { lower, .. },
            ..
        }, LTok {
            kind: Lx::Quoted(lit),
            ..
        }] if is_var_syntax(raw) && lower == "is" => Some((raw.clone(), lit.clone())),
        _ => None,
    }
}

/// `X = tokens i..j`; `None` when the sentence is not an override at all.
fn as_override(s: &[LTok], len: usize) -> Option<PResult<(String, Override)>> {
    let [LTok {
        kind: Lx::Word { raw, .. },
        off,
    }, LTok {
        kind: Lx::Equals, ..
    }, rest @ ..] = s
    else {
        return None;
    };
    if !is_var_syntax(raw) {
        return None;
    }
    let num = |t: Option<&LTok>| match t.map(|t| &t.kind) {
        Some(Lx::Word { lower, .. }) => lower.parse::<usize>().ok(),
        _ => None,
    };
    let ok = matches!(rest.first().map(|t| &t.kind), Some(Lx::Word { lower, .. }) if lower == "tokens" || lower == "token")
        && rest.len() == 4
        && matches!(rest[2].kind, Lx::DotDot);
    if !ok {
        return Some(Err((*off, format!("expected `{raw} = tokens i..j`"))));
    }
    let (Some(a), Some(b)) = (num(rest.get(1)), num(rest.get(3))) else {
        return Some(Err((*off, "span bounds must be integers".into())));
    };
    if a >= b || b > len {
        return Some(Err((
            *off,
            format!("span {a}..{b} is empty or outside the reference instance ({len} tokens)"),
        )));
    }
    Some(Ok((
        raw.clone(),
        Override {
            span: Span::new(a, b),
        },
    )))
}

/// First occurrence of `literal` in `inst`, by case-folded text and then
/// by lemma.
pub fn find_literal(inst: &AnnotatedInstance, literal: &str) -> Option<Span> {
    let words: Vec<String> = literal.split_whitespace().map(str::to_lowercase).collect();
    if words.is_empty() || words.len() > inst.len() {
        return None;
    }
    let n = words.len();
    let texts: Vec<String> = inst.tokens.iter().map(|t| t.text.to_lowercase()).collect();
    let lemmas: Vec<String> = inst.tokens.iter().map(|t| t.lemma.to_lowercase()).collect();
    for seq in [&texts, &lemmas] {
        if let Some(start) = (0..=inst.len() - n).find(|&s| seq[s..s + n] == words[..]) {
            return Some(Span::new(start, start + n));
        }
    }
    None
}

struct ExprParser<'s> {
    syms: &'s [S],
    pos: usize,
    subject: Option<String>,
    end: usize,
}

impl ExprParser<'_> {
    fn peek(&self) -> Option<&Sym> {
        self.syms.get(self.pos).map(|s| &s.sym)
    }

    fn off(&self) -> usize {
        self.syms.get(self.pos).map_or(self.end, |s| s.off)
    }

    fn or_expr(&mut self) -> PResult<PredicateExpr> {
        let mut items = vec![self.and_expr()?];
        while matches!(self.peek(), Some(Sym::Or)) {
            self.pos += 1;
            items.push(self.and_expr()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            PredicateExpr::Or(items)
        })
    }

    fn and_expr(&mut self) -> PResult<PredicateExpr> {
        let mut items = vec![self.atom()?];
        while matches!(self.peek(), Some(Sym::And)) {
            self.pos += 1;
            items.push(self.atom()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            PredicateExpr::And(items)
        })
    }

    fn atom(&mut self) -> PResult<PredicateExpr> {
        if matches!(self.peek(), Some(Sym::LParen)) {
            let open = self.off();
            self.pos += 1;
            let e = self.or_expr()?;
            if !matches!(self.peek(), Some(Sym::RParen)) {
                return Err((open, "unbalanced parenthesis".into()));
            }
            self.pos += 1;
            return Ok(e);
        }
        self.clause()
    }

    fn clause(&mut self) -> PResult<PredicateExpr> {
        let var = match self.peek() {
            Some(Sym::Var(v)) => {
                let v = v.clone();
                self.pos += 1;
                v
            }
            _ => self
                .subject
                .clone()
                .ok_or_else(|| (self.off(), "clause has no subject variable".to_string()))?,
        };
        self.subject = Some(var.clone());
        let off = self.off();
        let mut expr = match self.peek().cloned() {
            Some(Sym::Lit(l)) => {
                self.pos += 1;
                PredicateExpr::leaf(LeafPredicate::Existence { var, literal: l })
            }
            Some(Sym::Char(c)) => {
                self.pos += 1;
                PredicateExpr::leaf(LeafPredicate::Characteristic { var, kind: c })
            }
            Some(Sym::Rel(t, k)) => {
                self.pos += 1;
                let other = match self.peek() {
                    Some(Sym::Var(v)) => v.clone(),
                    _ => return Err((self.off(), "relation needs a second variable".into())),
                };
                self.pos += 1;
                if other == var {
                    return Err((off, "relation variables must be distinct".into()));
                }
                relation(t, k, var, other).map_err(|m| (off, m))?
            }
            _ => {
                return Err((
                    off,
                    format!(
                        "expected a quoted literal, a characteristic or a relation after {var}"
                    ),
                ))
            }
        };
        if let Some(Sym::Marker(m)) = self.peek() {
            let m = *m;
            self.pos += 1;
            set_marker(&mut expr, m);
        }
        Ok(expr)
    }
}

fn set_marker(e: &mut PredicateExpr, m: Softness) {
    match e {
        PredicateExpr::Leaf(l) => l.marker = m,
        PredicateExpr::And(c) | PredicateExpr::Or(c) => c.iter_mut().for_each(|e| set_marker(e, m)),
    }
}

fn relation(
    t: RelTemplate,
    k: Option<usize>,
    a: String,
    b: String,
) -> Result<PredicateExpr, String> {
    let need = |fixed: Option<usize>| {
        fixed
            .or(k)
            .ok_or_else(|| "relation needs a distance".to_string())
    };
    let leaf = |a: &String, b: &String, rel| {
        PredicateExpr::leaf(LeafPredicate::Relation {
            a: a.clone(),
            b: b.clone(),
            rel,
        })
    };
    Ok(match t {
        RelTemplate::ImmediatelyBefore => leaf(&a, &b, Relation::ImmediatelyBefore),
        RelTemplate::ImmediatelyAfter => leaf(&b, &a, Relation::ImmediatelyBefore),
        RelTemplate::WithinBefore(f) => leaf(&a, &b, Relation::WithinBefore(need(f)?)),
        RelTemplate::WithinAfter(f) => leaf(&a, &b, Relation::WithinAfter(need(f)?)),
        RelTemplate::Within(f) => {
            let k = need(f)?;
            PredicateExpr::Or(vec![
                leaf(&a, &b, Relation::WithinBefore(k)),
                leaf(&a, &b, Relation::WithinAfter(k)),
            ])
        }
        RelTemplate::Modifies => leaf(&a, &b, Relation::Modifies),
        RelTemplate::ModifiedBy => leaf(&b, &a, Relation::Modifies),
        RelTemplate::SubjectOf => leaf(&a, &b, Relation::SubjectOf),
        RelTemplate::HasSubject => leaf(&b, &a, Relation::SubjectOf),
        RelTemplate::DepWithin(f) => leaf(&a, &b, Relation::DependencyWithin(need(f)?)),
    })
}

/// Convenience wrapper around [`ExplParser::parse`].
pub fn parse_explanation(
    text: &str,
    lexicon: &ExplLexicon,
    classes: &ClassList,
    reference: &AnnotatedInstance,
) -> Result<Rule, ParseError> {
    ExplParser::new(lexicon, classes).parse(text, "r1", reference)
}
