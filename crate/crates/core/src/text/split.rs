use std::collections::BTreeSet;

/// Abbreviations whose final period never ends a sentence. Matched case-sensitively.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &["e.g.", "i.e.", "etc.", "Mr.", "No."];

const TERMINALS: [char; 3] = ['.', '!', '?'];
const CLOSERS: [char; 7] = ['"', '\'', ')', ']', '\u{201d}', '\u{2019}', '}'];
const OPENERS: [char; 6] = ['"', '\'', '(', '[', '\u{201c}', '\u{2018}'];

/// Deterministic rule-based sentence splitter.
///
/// A sentence ends at a run of `.`, `!` or `?` (plus closing quotes or
/// brackets) that is followed by whitespace or the end of the text, unless
/// the word carrying the period is a protected abbreviation. Decimal numbers
/// never split because their period is followed by a digit.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: BTreeSet<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self { abbreviations: DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()).collect() }
    }
}

impl SentenceSplitter {
    pub fn with_abbreviations<I, S>(extra: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut splitter = Self::default();
        splitter.abbreviations.extend(extra.into_iter().map(Into::into));
        splitter
    }

    pub fn abbreviations(&self) -> impl Iterator<Item = &str> {
        self.abbreviations.iter().map(String::as_str)
    }

    /// Splits `text` into whitespace-normalized, nonempty sentences.
    pub fn split(&self, text: &str) -> Vec<String> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut out = Vec::new();
        let mut start = 0usize;
        let mut i = 0usize;
        while i < chars.len() {
            let (_, c) = chars[i];
            if !TERMINALS.contains(&c) {
                i += 1;
                continue;
            }
            let mut j = i + 1;
            while j < chars.len() && (TERMINALS.contains(&chars[j].1) || CLOSERS.contains(&chars[j].1)) {
                j += 1;
            }
            let end_byte = chars.get(j).map_or(text.len(), |&(b, _)| b);
            let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
            if at_boundary && !self.is_protected(&text[start..end_byte]) {
                push_normalized(&mut out, &text[start..end_byte]);
                start = end_byte;
            }
            i = j;
        }
        push_normalized(&mut out, &text[start..]);
        out
    }

    fn is_protected(&self, fragment: &str) -> bool {
        let word = fragment.rsplit(char::is_whitespace).next().unwrap_or(fragment);
        let word = word.trim_start_matches(OPENERS).trim_end_matches(CLOSERS);
        self.abbreviations.contains(word)
    }
}

fn push_normalized(out: &mut Vec<String>, fragment: &str) {
    let normalized = normalize_whitespace(fragment);
    if !normalized.is_empty() {
        out.push(normalized);
    }
}

pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits with the default abbreviation set.
pub fn split_sentences(caption: &str) -> Vec<String> {
    SentenceSplitter::default().split(caption)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_terminals() {
        assert_eq!(split_sentences("There is a car. It is red."), vec!["There is a car.", "It is red."]);
    }

    #[test]
    fn decimal_protected() {
        assert_eq!(split_sentences("The sign reads 3.5 tons."), vec!["The sign reads 3.5 tons."]);
    }

    #[test]
    fn abbreviations_protected() {
        let s = "Vehicles, e.g. buses, are parked. Mr. Lee waits at No. 5 gate. Cones, etc. are visible.";
        assert_eq!(
            split_sentences(s),
            vec!["Vehicles, e.g. buses, are parked.", "Mr. Lee waits at No. 5 gate.", "Cones, etc. are visible."]
        );
        assert_eq!(split_sentences("Look (i.e. left) now."), vec!["Look (i.e. left) now."]);
    }

    #[test]
    fn mixed_terminals_and_quotes() {
        assert_eq!(
            split_sentences("Is it a bus?! Yes. The sign says \"Stop.\" Then it ends"),
            vec!["Is it a bus?!", "Yes.", "The sign says \"Stop.\"", "Then it ends"]
        );
    }

    #[test]
    fn whitespace_only_is_empty() {
        assert!(split_sentences("  \n\t ").is_empty());
        assert_eq!(split_sentences("  a   b  "), vec!["a b"]);
    }

    #[test]
    fn extensible_abbreviations() {
        let splitter = SentenceSplitter::with_abbreviations(["Dr."]);
        assert_eq!(splitter.split("Dr. Smith crosses. Done."), vec!["Dr. Smith crosses.", "Done."]);
        assert_eq!(split_sentences("Dr. Smith crosses."), vec!["Dr.", "Smith crosses."]);
    }

    /// Generator-based oracle: sentences built from known parts must come back intact.
    #[test]
    fn fifty_sentence_round_trip() {
        let subjects = ["A car", "Two people", "The bus", "A traffic cone", "Mr. Lee", "A truck"];
        let middles = ["is parked", "waits near", "weighs 3.5 tons", "stops at No. 4", "moves, e.g. slowly,"];
        let ends = [".", "!", "?", "."];
        let expected: Vec<String> = (0..50)
            .map(|k| {
                format!(
                    "{} {} here{}",
                    subjects[k % subjects.len()],
                    middles[(k / 2) % middles.len()],
                    ends[k % ends.len()]
                )
            })
            .collect();
        let caption = expected.join("  \n ");
        let got = split_sentences(&caption);
        assert_eq!(got, expected);
        assert_eq!(got.join(" "), normalize_whitespace(&caption));
    }

    proptest! {
        #[test]
        fn split_is_idempotent(text in "[a-zA-Z0-9 .!?,()\"]{0,120}") {
            for fragment in split_sentences(&text) {
                prop_assert_eq!(split_sentences(&fragment), vec![fragment.clone()]);
            }
        }

        #[test]
        fn join_reproduces_normalized_input(text in "[a-zA-Z0-9 \n.!?,]{0,160}") {
            prop_assert_eq!(split_sentences(&text).join(" "), normalize_whitespace(&text));
        }
    }
}
