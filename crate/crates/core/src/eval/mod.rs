//! Classification and fairness metrics, identity templates and heat maps.

mod heatmap;
mod metrics;
mod templates;

pub use heatmap::{render_heatmap, write_heatmap, HeatmapRow};
pub use metrics::{f1, matching_precision, F1Score, Fprd};
pub use templates::{word_tokens, Template, TemplateInstance, TemplateSet, SLOT};
