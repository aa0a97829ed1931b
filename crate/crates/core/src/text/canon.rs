use std::collections::BTreeMap;
use std::sync::LazyLock;

use super::TextError;

const SINGULAR_TABLE: &str = include_str!("../../assets/tables/singular.json");
const MERGE_TABLE: &str = include_str!("../../assets/tables/merge.json");

static DEFAULT: LazyLock<Canonicalizer> = LazyLock::new(|| Canonicalizer {
    singular: serde_json::from_str(SINGULAR_TABLE).expect("singular table is valid json"),
    merge: serde_json::from_str(MERGE_TABLE).expect("merge table is valid json"),
});

/// Maps entity mentions onto canonical lowercase singular category names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canonicalizer {
    singular: BTreeMap<String, String>,
    merge: BTreeMap<String, String>,
}

impl Default for Canonicalizer {
    fn default() -> Self {
        DEFAULT.clone()
    }
}

impl Canonicalizer {
    /// Default tables extended (and overridden) by the given entries.
    pub fn with_tables(
        singular: impl IntoIterator<Item = (String, String)>,
        merge: impl IntoIterator<Item = (String, String)>,
    ) -> Self {
        let mut c = Self::default();
        c.singular.extend(singular.into_iter().map(|(k, v)| (k.to_lowercase(), v.to_lowercase())));
        c.merge.extend(merge.into_iter().map(|(k, v)| (k.to_lowercase(), v.to_lowercase())));
        c
    }

    /// Singular form of one lowercase word.
    pub fn singularize(&self, word: &str) -> String {
        if let Some(s) = self.singular.get(word) {
            return s.clone();
        }
        if word.chars().count() <= 3 {
            return word.to_string();
        }
        if let Some(stem) = word.strip_suffix("ies") {
            if stem.len() > 1 {
                return format!("{stem}y");
            }
        }
        if let Some(stem) = word.strip_suffix("sses") {
            return format!("{stem}ss");
        }
        for suffix in ["xes", "ches", "shes", "zzes"] {
            if let Some(stem) = word.strip_suffix(suffix) {
                return format!("{stem}{}", &suffix[..suffix.len() - 2]);
            }
        }
        if ["ss", "us", "is"].iter().any(|s| word.ends_with(s)) {
            return word.to_string();
        }
        match word.strip_suffix('s') {
            Some(stem) => stem.to_string(),
            None => word.to_string(),
        }
    }

    /// Canonical form of an entity phrase: lowercase, single-spaced, last word
    /// singularized, then mapped through the merge table.
    pub fn canonicalize(&self, phrase: &str) -> String {
        let lower = phrase.to_lowercase();
        let mut words: Vec<String> = lower
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '-').to_string())
            .filter(|w| !w.is_empty())
            .collect();
        if let Some(last) = words.last_mut() {
            *last = self.singularize(last);
        }
        let joined = words.join(" ");
        match self.merge.get(&joined) {
            Some(target) => target.clone(),
            None => joined,
        }
    }

    /// Tokenizes free text into singularized lowercase words.
    pub fn word_tokens(&self, text: &str) -> Vec<String> {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| self.singularize(w))
            .collect()
    }
}

/// Parses an extraction reply into canonical entities.
///
/// `None` (any case) means no entities. Otherwise the reply is split on
/// commas and newlines; list bullets, quotes and an `Entities:` label are
/// ignored.
pub fn parse_entities(reply: &str, canon: &Canonicalizer) -> Result<Vec<String>, TextError> {
    let trimmed = reply.trim();
    if is_none_token(trimmed) {
        return Ok(Vec::new());
    }
    if !trimmed.chars().any(char::is_alphabetic) {
        return Err(TextError::MalformedReply(reply.to_string()));
    }
    let mut out: Vec<String> = Vec::new();
    for raw in trimmed.split([',', '\n']) {
        let mut token = raw.trim();
        if let Some((label, rest)) = token.split_once(':') {
            if label.trim().eq_ignore_ascii_case("entities") {
                token = rest.trim();
            }
        }
        let token = token
            .trim_start_matches(|c: char| c == '-' || c == '*' || c == '\u{2022}' || c.is_ascii_digit() || c == ')')
            .trim_matches(|c: char| !c.is_alphanumeric());
        if token.is_empty() || is_none_token(token) || !token.chars().any(char::is_alphabetic) {
            continue;
        }
        let entity = canon.canonicalize(token);
        if !entity.is_empty() && !out.contains(&entity) {
            out.push(entity);
        }
    }
    Ok(out)
}

fn is_none_token(s: &str) -> bool {
    s.trim_end_matches('.').eq_ignore_ascii_case("none")
}
