//! Versioned few-shot prompt templates.
//!
//! Templates live in `assets/prompts/*.txt`. Leading `#` lines are asset
//! comments and are stripped; placeholders are `{name}` and are substituted
//! in one left-to-right pass, so values containing braces are never
//! re-expanded.

use std::sync::LazyLock;

const EXTRACTION_SRC: &str = include_str!("../assets/prompts/extraction.v1.txt");
const CORRECTION_SRC: &str = include_str!("../assets/prompts/correction.v1.txt");
const JUDGE_SRC: &str = include_str!("../assets/prompts/judge.v1.txt");

pub const EXTRACTION_VERSION: &str = "extraction.v1";
pub const CORRECTION_VERSION: &str = "correction.v1";
pub const JUDGE_VERSION: &str = "judge.v1";

/// Rendering of an empty entity list.
pub const NO_ENTITIES: &str = "None";

static EXTRACTION: LazyLock<String> = LazyLock::new(|| strip_comments(EXTRACTION_SRC));
static CORRECTION: LazyLock<String> = LazyLock::new(|| strip_comments(CORRECTION_SRC));
static JUDGE: LazyLock<String> = LazyLock::new(|| strip_comments(JUDGE_SRC));

fn strip_comments(src: &str) -> String {
    let body: Vec<&str> = src.lines().skip_while(|l| l.starts_with('#')).collect();
    body.join("\n")
}

pub fn extraction_template() -> &'static str {
    &EXTRACTION
}

pub fn correction_template() -> &'static str {
    &CORRECTION
}

pub fn judge_template() -> &'static str {
    &JUDGE
}

/// Substitutes `{name}` placeholders. Unknown placeholders are kept verbatim.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            values.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn render_entity_list(entities: &[String]) -> String {
    if entities.is_empty() {
        NO_ENTITIES.to_string()
    } else {
        entities.join(", ")
    }
}

pub fn extraction_prompt(sentence: &str) -> String {
    render(extraction_template(), &[("sentence", sentence)])
}

pub fn correction_prompt(sentence: &str, entity_1: &[String], entity_2: &[String]) -> String {
    let e1 = render_entity_list(entity_1);
    let e2 = render_entity_list(entity_2);
    render(correction_template(), &[("sentence", sentence), ("entity_1", &e1), ("entity_2", &e2)])
}

pub fn judge_prompt(caption: &str, question: &str) -> String {
    render(judge_template(), &[("caption", caption), ("question", question)])
}

fn template_head<'a>(template: &'a str, first_placeholder: &str) -> &'a str {
    let at = template.find(first_placeholder).expect("placeholder present");
    &template[..at]
}

/// Query sentence of a prompt produced by [`extraction_prompt`].
pub fn parse_extraction_query(prompt: &str) -> Option<&str> {
    let head = template_head(extraction_template(), "{sentence}");
    let stable = &head[..head.rfind("Sentence: ")?];
    if !prompt.starts_with(stable) {
        return None;
    }
    let start = prompt.rfind("\nSentence: ")? + "\nSentence: ".len();
    let body = &prompt[start..];
    body.strip_suffix("\nEntities:")
}

/// `(sentence, entity_1, entity_2)` of a prompt produced by [`correction_prompt`].
pub fn parse_correction_query(prompt: &str) -> Option<(&str, &str, &str)> {
    let head = template_head(correction_template(), "{sentence}");
    let stable = &head[..head.rfind("Sentence: ")?];
    if !prompt.starts_with(stable) {
        return None;
    }
    let start = prompt.rfind("\nSentence: ")? + "\nSentence: ".len();
    let body = prompt[start..].strip_suffix("\nCorrected:")?;
    let (sentence, rest) = body.split_once("\nentity_1: ")?;
    let (e1, e2) = rest.split_once("\nentity_2: ")?;
    Some((sentence, e1, e2))
}

/// `(caption, question)` of a prompt produced by [`judge_prompt`].
pub fn parse_judge_query(prompt: &str) -> Option<(&str, &str)> {
    let head = template_head(judge_template(), "{caption}");
    let body = prompt.strip_prefix(head)?;
    let split = body.rfind("\nQuestion: ")?;
    let caption = &body[..split];
    let question = body[split + "\nQuestion: ".len()..].strip_suffix("\nAnswer:")?;
    Some((caption, question))
}
