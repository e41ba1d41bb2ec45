//! Prompt assembly: `[instruction, d_1 .. d_k, query]`.

pub mod ordering;
pub mod templates;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, Passage, QueryRecord};
use crate::error::{Error, Result};
use crate::tokenize::count_tokens;

pub use ordering::{apply_ordering, order_items, reorder_positions, reorder_sequence, OrderingStrategy};
pub use templates::{default_template, fill, TemplateRegistry, REFERENCE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayedPassage {
    /// 1-based position in the rendered context.
    pub display_index: usize,
    pub passage_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub query_id: String,
    pub template_id: String,
    pub instruction: String,
    pub passages_in_order: Vec<DisplayedPassage>,
    pub rendered: String,
    pub ordering: OrderingStrategy,
    pub k: usize,
}

impl PromptInstance {
    pub fn passage_ids(&self) -> Vec<&str> {
        self.passages_in_order.iter().map(|p| p.passage_id.as_str()).collect()
    }
}

/// `Doc {n} (Title: "{title}") {text}`
pub fn render_passage(display_index: usize, passage: &Passage) -> String {
    format!("Doc {display_index} (Title: \"{}\") {}", passage.title, passage.text)
}

/// Numbered passage block; numbering follows display order.
pub fn render_reference(passages: &[&Passage]) -> String {
    passages
        .iter()
        .enumerate()
        .map(|(i, p)| render_passage(i + 1, p))
        .collect::<Vec<_>>()
        .join("\n")
}

/// `(A) first (B) second ...`
pub fn format_choices(choices: &[String]) -> String {
    choices
        .iter()
        .enumerate()
        .map(|(i, c)| format!("({}) {c}", option_letter(i)))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn option_letter(index: usize) -> char {
    (b'A' + (index % 26) as u8) as char
}

fn choices_text(query: &QueryRecord) -> String {
    query.choices.as_deref().map(format_choices).unwrap_or_default()
}

/// Substitutes the reference block, dropping the `{reference}` line when
/// the block is empty.
fn fill_prompt(template: &str, reference: &str, extra: &[(&str, &str)]) -> String {
    let template = if reference.is_empty() {
        template
            .replace(&format!("{REFERENCE}\n"), "")
            .replace(&format!("\n{REFERENCE}"), "")
    } else {
        template.to_string()
    };
    let mut values = vec![("reference", reference)];
    values.extend_from_slice(extra);
    fill(&template, &values)
}

pub fn render_prompt(
    query: &QueryRecord,
    ordered_ids: &[String],
    template_id: &str,
    registry: &TemplateRegistry,
    corpus: &CorpusStore,
    ordering: OrderingStrategy,
) -> Result<PromptInstance> {
    let template = registry.get(template_id)?;
    let passages = ordered_ids
        .iter()
        .map(|id| corpus.resolve(id))
        .collect::<Result<Vec<_>>>()?;
    let reference = render_reference(&passages);
    let choices = choices_text(query);
    let extra = [("question", query.question.as_str()), ("choices", choices.as_str())];
    let rendered = fill_prompt(template, &reference, &extra);
    let head = template.split(REFERENCE).next().unwrap_or_default();
    let instruction = fill(head.strip_suffix('\n').unwrap_or(head), &extra);
    Ok(PromptInstance {
        query_id: query.id.clone(),
        template_id: template_id.to_string(),
        instruction,
        passages_in_order: ordered_ids
            .iter()
            .enumerate()
            .map(|(i, id)| DisplayedPassage {
                display_index: i + 1,
                passage_id: id.clone(),
            })
            .collect(),
        rendered,
        ordering,
        k: ordered_ids.len(),
    })
}

/// Renders a reasoning-label prompt (`label_*` templates), which also take
/// the gold answers.
pub fn render_labeler_prompt(
    query: &QueryRecord,
    ordered_ids: &[String],
    template_id: &str,
    registry: &TemplateRegistry,
    corpus: &CorpusStore,
) -> Result<String> {
    let template = registry.get(template_id)?;
    let passages = ordered_ids
        .iter()
        .map(|id| corpus.resolve(id))
        .collect::<Result<Vec<_>>>()?;
    let reference = render_reference(&passages);
    let choices = choices_text(query);
    let answers = query.answers.join(", ");
    Ok(fill_prompt(
        template,
        &reference,
        &[
            ("question", query.question.as_str()),
            ("choices", choices.as_str()),
            ("answers", answers.as_str()),
        ],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenCounter {
    /// The toolkit tokenizer.
    #[default]
    Tokenizer,
    /// `ceil(chars / n)`, for approximating model tokenizers.
    CharsPerToken(usize),
}

impl TokenCounter {
    pub fn count(self, text: &str) -> usize {
        match self {
            TokenCounter::Tokenizer => count_tokens(text),
            TokenCounter::CharsPerToken(n) => text.chars().count().div_ceil(n.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub max_tokens: usize,
    #[serde(default)]
    pub counter: TokenCounter,
}

impl TokenBudget {
    pub fn new(max_tokens: usize) -> Self {
        TokenBudget {
            max_tokens,
            counter: TokenCounter::Tokenizer,
        }
    }
}

/// Tokens taken by the instruction and query block alone.
pub fn prompt_overhead(
    query: &QueryRecord,
    template_id: &str,
    registry: &TemplateRegistry,
    counter: TokenCounter,
) -> Result<usize> {
    let template = registry.get(template_id)?;
    let choices = choices_text(query);
    let bare = fill_prompt(
        template,
        "",
        &[("question", query.question.as_str()), ("choices", choices.as_str())],
    );
    Ok(counter.count(&bare))
}

/// Drops the lowest-ranked passages until instruction, passages and query
/// fit in the budget. `ordered_ids` is the display order, `rank_order` the
/// retrieval order; survivors keep their display order.
pub fn fit_to_budget(
    ordered_ids: &[String],
    rank_order: &[String],
    overhead_tokens: usize,
    budget: TokenBudget,
    corpus: &CorpusStore,
) -> Result<Vec<String>> {
    if budget.max_tokens == 0 {
        return Err(Error::InvalidConfig("token budget must be positive".into()));
    }
    let width = ordered_ids.len().max(1);
    let mut used = overhead_tokens;
    let mut keep = std::collections::HashSet::new();
    for id in rank_order.iter().filter(|id| ordered_ids.contains(id)) {
        let cost = budget.counter.count(&render_passage(width, corpus.resolve(id)?));
        if used + cost > budget.max_tokens {
            if keep.is_empty() {
                return Err(Error::BudgetTooSmall {
                    budget: budget.max_tokens,
                    needed: used + cost,
                });
            }
            break;
        }
        used += cost;
        keep.insert(id.as_str());
    }
    Ok(ordered_ids
        .iter()
        .filter(|id| keep.contains(id.as_str()))
        .cloned()
        .collect())
}
