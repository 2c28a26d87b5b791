use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::refine::{argmax, AttributionConfig, Context, ModelState, ReplacementSet};
use crate::scalar::Scalar;

/// One sentence of a heat map.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapRow {
    pub title: String,
    pub words: Vec<String>,
    /// Attribution of each word to `class`.
    pub scores: Vec<f64>,
    pub class: String,
}

impl HeatmapRow {
    /// Per-token attributions of `model`'s predicted class.
    #[allow(clippy::too_many_arguments)]
    pub fn compute<T: Scalar>(
        title: impl Into<String>,
        model: &ModelState<T>,
        words: &[String],
        tokens: &[Vec<T>],
        baseline: &[T],
        cfg: &AttributionConfig,
        pool: Option<&ReplacementSet<T>>,
        classes: &[String],
    ) -> Result<Self> {
        let probs = model.forward(tokens)?;
        let class = argmax(&probs);
        let ctx = Context {
            model,
            tokens,
            baseline,
            cfg,
            pool,
        };
        let scores = ctx
            .token_scores(class)?
            .into_iter()
            .map(Scalar::as_f64)
            .collect();
        Ok(HeatmapRow {
            title: title.into(),
            words: words.to_vec(),
            scores,
            class: classes
                .get(class)
                .cloned()
                .unwrap_or_else(|| class.to_string()),
        })
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Background for a score scaled into [-1, 1]: red above zero, blue below,
/// white at zero.
fn color(v: f64) -> String {
    let fade = (255.0 * (1.0 - v.abs().min(1.0))).round() as u8;
    if v > 0.0 {
        format!("rgb(255,{fade},{fade})")
    } else if v < 0.0 {
        format!("rgb({fade},{fade},255)")
    } else {
        "rgb(255,255,255)".to_string()
    }
}

/// Self-contained HTML page stacking `rows`. All rows share one color
/// scale so before/after pairs are comparable.
pub fn render_heatmap(title: &str, rows: &[HeatmapRow]) -> String {
    let max = rows
        .iter()
        .flat_map(|r| r.scores.iter())
        .fold(0.0f64, |m, s| m.max(s.abs()));
    let mut html = String::new();
    let _ = write!(
        html,
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{}</title>\n<style>\n\
         body {{ font-family: sans-serif; }}\n\
         .row {{ margin: 1em 0; }}\n\
         .tok {{ padding: 2px 4px; margin: 1px; display: inline-block; border-radius: 3px; }}\n\
         </style>\n</head>\n<body>\n<h1>{}</h1>\n",
        escape(title),
        escape(title)
    );
    for r in rows {
        let _ = writeln!(
            html,
            "<div class=\"row\">\n<h2>{} <small>(predicted: {})</small></h2>\n<p>",
            escape(&r.title),
            escape(&r.class)
        );
        for (w, &s) in r.words.iter().zip(&r.scores) {
            let scaled = if max > 0.0 { s / max } else { 0.0 };
            let _ = writeln!(
                html,
                "<span class=\"tok\" data-score=\"{s:.6}\" style=\"background:{}\">{}</span>",
                color(scaled),
                escape(w)
            );
        }
        html.push_str("</p>\n</div>\n");
    }
    html.push_str("</body>\n</html>\n");
    html
}

pub fn write_heatmap(path: impl AsRef<Path>, title: &str, rows: &[HeatmapRow]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_heatmap(title, rows)).map_err(|e| Error::io(path, e))
}
