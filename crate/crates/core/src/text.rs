//! Shared tokenization and casing helpers.
//!
//! Tokens are maximal runs of alphanumeric characters, or single
//! non-whitespace, non-alphanumeric characters. Offsets are byte offsets into
//! the source string.

/// Placeholder marking the slot to fill in StereoSet-style contexts.
pub const BLANK: &str = "BLANK";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

impl Token<'_> {
    pub fn is_word(&self) -> bool {
        self.text.chars().next().is_some_and(char::is_alphanumeric)
    }
}

pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if word_start.is_none() {
                word_start = Some(i);
            }
            continue;
        }
        if let Some(s) = word_start.take() {
            tokens.push(Token {
                text: &text[s..i],
                start: s,
                end: i,
            });
        }
        if !c.is_whitespace() {
            let end = i + c.len_utf8();
            tokens.push(Token {
                text: &text[i..end],
                start: i,
                end,
            });
        }
    }
    if let Some(s) = word_start {
        tokens.push(Token {
            text: &text[s..],
            start: s,
            end: text.len(),
        });
    }
    tokens
}

/// Lowercased token strings, the form every toy model and the lexicon use.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .iter()
        .map(|t| t.text.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CasePattern {
    Lower,
    Capitalized,
    Upper,
}

impl CasePattern {
    /// Mixed-case words other than `Capitalized` collapse to `Lower`.
    pub fn detect(word: &str) -> Self {
        let letters: Vec<char> = word.chars().filter(|c| c.is_alphabetic()).collect();
        if letters.len() >= 2 && letters.iter().all(|c| c.is_uppercase()) {
            CasePattern::Upper
        } else if letters.first().is_some_and(|c| c.is_uppercase()) {
            CasePattern::Capitalized
        } else {
            CasePattern::Lower
        }
    }

    pub fn apply(self, lower: &str) -> String {
        match self {
            CasePattern::Lower => lower.to_string(),
            CasePattern::Upper => lower.to_uppercase(),
            CasePattern::Capitalized => {
                let mut chars = lower.chars();
                match chars.next() {
                    Some(first) => first.to_uppercase().chain(chars).collect(),
                    None => String::new(),
                }
            }
        }
    }
}

/// Byte offset to char offset.
pub fn char_offset(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_words_and_punctuation() {
        let toks: Vec<&str> = tokenize("He's a hero, isn't he?")
            .iter()
            .map(|t| t.text)
            .collect();
        assert_eq!(
            toks,
            ["He", "'", "s", "a", "hero", ",", "isn", "'", "t", "he", "?"]
        );
    }

    #[test]
    fn offsets_cover_source() {
        let s = "  Où est-elle ?  ";
        for t in tokenize(s) {
            assert_eq!(&s[t.start..t.end], t.text);
        }
    }

    #[test]
    fn case_patterns() {
        assert_eq!(CasePattern::detect("HER"), CasePattern::Upper);
        assert_eq!(CasePattern::detect("Her"), CasePattern::Capitalized);
        assert_eq!(CasePattern::detect("her"), CasePattern::Lower);
        assert_eq!(CasePattern::detect("I"), CasePattern::Capitalized);
        assert_eq!(CasePattern::Upper.apply("his"), "HIS");
        assert_eq!(CasePattern::Capitalized.apply("she"), "She");
    }
}
