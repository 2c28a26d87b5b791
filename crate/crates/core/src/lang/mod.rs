//! The controlled explanation language: lexicon, parser, printer and
//! reference-instance validation.

mod ast;
mod lexicon;
mod parser;
mod printer;
mod validate;

pub use ast::{
    AdviceAtom, Characteristic, ClassList, Direction, Leaf, LeafPredicate, PredicateExpr, Relation,
    Rule, Softness, VarDecl,
};
pub use lexicon::{ExplLexicon, RelTemplate, Template};
pub use parser::{
    block_header, find_literal, parse_explanation, BlockHeader, ExplParser, ParseError,
};
pub use validate::{validate_rule, Validation};

use crate::corpus::Corpus;

/// Result of parsing a whole explanation file.
#[derive(Debug, Clone, Default)]
pub struct ParsedFile {
    pub rules: Vec<Rule>,
    pub errors: Vec<ParseError>,
}

/// Splits `text` into blank-line separated blocks, one explanation each.
/// Returns the blocks with their character offsets.
pub fn split_blocks(text: &str) -> Vec<(String, usize)> {
    let mut blocks = Vec::new();
    let mut cur = String::new();
    let mut start = 0;
    let mut off = 0;
    for line in text.split('\n') {
        let len = line.chars().count() + 1;
        if line.trim().is_empty() {
            if !cur.trim().is_empty() {
                blocks.push((std::mem::take(&mut cur), start));
            }
            cur.clear();
        } else {
            if cur.is_empty() {
                start = off;
            }
            cur.push_str(line);
            cur.push('\n');
        }
        off += len;
    }
    if !cur.trim().is_empty() {
        blocks.push((cur, start));
    }
    blocks
}

/// Parses every block of an explanation file against the reference
/// instances in `corpus`. Offsets in the returned errors are relative to
/// the start of the file. Blocks without a `Rule:` line are named `r<n>`
/// (1-based block number).
pub fn parse_file(
    text: &str,
    lexicon: &ExplLexicon,
    classes: &ClassList,
    corpus: &Corpus,
) -> ParsedFile {
    let parser = ExplParser::new(lexicon, classes);
    let mut out = ParsedFile::default();
    for (n, (block, base)) in split_blocks(text).into_iter().enumerate() {
        let header = block_header(&block);
        let id = header
            .rule_id
            .clone()
            .unwrap_or_else(|| format!("r{}", n + 1));
        let located = |offset: usize, message: String| ParseError {
            rule: id.clone(),
            offset: base + offset,
            message,
        };
        let Some(ref_id) = header.reference.as_deref() else {
            out.errors.push(located(0, "missing reference line".into()));
            continue;
        };
        let Some(reference) = corpus.get(ref_id) else {
            out.errors.push(located(
                0,
                format!("reference instance {ref_id:?} not found in corpus"),
            ));
            continue;
        };
        match parser.parse(&block, &id, reference) {
            Ok(rule) => {
                if out.rules.iter().any(|r| r.id == rule.id) {
                    out.errors
                        .push(located(0, format!("duplicate rule id {:?}", rule.id)));
                } else {
                    out.rules.push(rule);
                }
            }
            Err(e) => out.errors.push(located(e.offset, e.message)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_split_on_blank_lines() {
        let text = "Rule: a\nX is 'b'.\n\n  \nRule: c\nLabel: x.\n";
        let blocks = split_blocks(text);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].1, 0);
        assert_eq!(blocks[1].0, "Rule: c\nLabel: x.\n");
        assert_eq!(blocks[1].1, text.find("Rule: c").unwrap());
    }
}
