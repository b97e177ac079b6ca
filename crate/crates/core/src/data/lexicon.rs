//! Masculine/feminine word-pair lexicon.
//!
//! Stored as TSV, one pair per line: `masculine<TAB>feminine`, with an
//! optional third column `ambiguous`. A word may appear in more than one pair
//! only if every pair it appears in is marked ambiguous (e.g. `her` pairs with
//! both `him` and `his`). All entries are lowercase.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../../data/gender_words.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn opposite(self) -> Self {
        match self {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPair {
    pub masculine: String,
    pub feminine: String,
    pub ambiguous: bool,
}

#[derive(Debug, Clone)]
pub struct GenderLexicon {
    pairs: Vec<WordPair>,
    ambiguous: BTreeSet<String>,
    counterparts: BTreeMap<String, Vec<String>>,
    genders: BTreeMap<String, Gender>,
}

impl GenderLexicon {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled lexicon is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = |message: &str| Error::LexiconLine {
                line: i + 1,
                message: message.to_string(),
            };
            let ambiguous = match cols.len() {
                2 => false,
                3 if cols[2].trim() == "ambiguous" => true,
                3 => return Err(bad("third column must be `ambiguous`")),
                _ => return Err(bad("expected `masculine<TAB>feminine[<TAB>ambiguous]`")),
            };
            let (m, f) = (cols[0].trim(), cols[1].trim());
            if m.is_empty() || f.is_empty() {
                return Err(bad("empty word"));
            }
            if m != m.to_lowercase() || f != f.to_lowercase() {
                return Err(bad("entries must be lowercase"));
            }
            if m == f {
                return Err(bad("a word cannot pair with itself"));
            }
            pairs.push(WordPair {
                masculine: m.to_string(),
                feminine: f.to_string(),
                ambiguous,
            });
        }
        Self::from_pairs(pairs)
    }

    pub fn from_pairs(pairs: Vec<WordPair>) -> Result<Self> {
        let mut counterparts: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut genders: BTreeMap<String, Gender> = BTreeMap::new();
        let mut seen_unambiguous: BTreeSet<String> = BTreeSet::new();
        let mut ambiguous = BTreeSet::new();

        for pair in &pairs {
            for (word, other, gender) in [
                (&pair.masculine, &pair.feminine, Gender::Male),
                (&pair.feminine, &pair.masculine, Gender::Female),
            ] {
                if let Some(g) = genders.get(word) {
                    if *g != gender || !pair.ambiguous || seen_unambiguous.contains(word) {
                        return Err(Error::DuplicateWord(word.clone()));
                    }
                }
                genders.insert(word.clone(), gender);
                let targets = counterparts.entry(word.clone()).or_default();
                if !targets.contains(other) {
                    targets.push(other.clone());
                }
                if pair.ambiguous {
                    ambiguous.insert(word.clone());
                } else {
                    seen_unambiguous.insert(word.clone());
                }
            }
        }

        Ok(Self {
            pairs,
            ambiguous,
            counterparts,
            genders,
        })
    }

    pub fn pairs(&self) -> &[WordPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.genders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genders.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.genders.contains_key(word)
    }

    pub fn is_ambiguous(&self, word: &str) -> bool {
        self.ambiguous.contains(word)
    }

    pub fn ambiguous_words(&self) -> &BTreeSet<String> {
        &self.ambiguous
    }

    /// The single counterpart of an unambiguous word.
    pub fn flip(&self, word: &str) -> Option<&str> {
        if self.ambiguous.contains(word) {
            return None;
        }
        self.counterparts.get(word).map(|v| v[0].as_str())
    }

    /// Every possible counterpart; more than one only for ambiguous words.
    pub fn counterparts(&self, word: &str) -> Option<&[String]> {
        self.counterparts.get(word).map(Vec::as_slice)
    }

    pub fn gender(&self, word: &str) -> Option<Gender> {
        self.genders.get(word).copied()
    }

    pub fn words(&self) -> impl Iterator<Item = (&str, Gender)> {
        self.genders.iter().map(|(w, g)| (w.as_str(), *g))
    }

    pub fn words_of(&self, gender: Gender) -> Vec<&str> {
        self.words()
            .filter(|(_, g)| *g == gender)
            .map(|(w, _)| w)
            .collect()
    }

    pub fn unambiguous_words(&self) -> Vec<&str> {
        self.words()
            .map(|(w, _)| w)
            .filter(|w| !self.ambiguous.contains(*w))
            .collect()
    }

    /// Same pairs with the masculine and feminine columns exchanged.
    pub fn swapped(&self) -> Self {
        let pairs = self
            .pairs
            .iter()
            .map(|p| WordPair {
                masculine: p.feminine.clone(),
                feminine: p.masculine.clone(),
                ambiguous: p.ambiguous,
            })
            .collect();
        Self::from_pairs(pairs).expect("swapping columns preserves validity")
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&p.masculine);
            out.push('\t');
            out.push_str(&p.feminine);
            if p.ambiguous {
                out.push_str("\tambiguous");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_flips_both_ways() {
        let lex = GenderLexicon::parse("he\tshe\n").unwrap();
        assert_eq!(lex.flip("he"), Some("she"));
        assert_eq!(lex.flip("she"), Some("he"));
        assert_eq!(lex.gender("she"), Some(Gender::Female));
    }

    #[test]
    fn duplicate_word_is_named() {
        let err = GenderLexicon::parse("he\tshe\nhe\ther\n").unwrap_err();
        assert_eq!(err.to_string(), "duplicate: he");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = GenderLexicon::parse("he\tshe\n\nman woman\n").unwrap_err();
        match err {
            Error::LexiconLine { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(GenderLexicon::parse("He\tshe\n").is_err());
        assert!(GenderLexicon::parse("he\tshe\tmaybe\n").is_err());
    }

    #[test]
    fn ambiguous_word_may_not_also_be_unambiguous() {
        let err = GenderLexicon::parse("him\ther\tambiguous\nhe\ther\n").unwrap_err();
        assert_eq!(err.to_string(), "duplicate: her");
    }

    #[test]
    fn bundled_list_marks_object_and_possessive_pronouns() {
        let lex = GenderLexicon::bundled();
        for w in ["her", "his", "him"] {
            assert!(lex.is_ambiguous(w), "{w} should be ambiguous");
        }
        assert!(!lex.is_ambiguous("he"));
        assert!(lex.len() >= 200, "bundled lexicon has {} words", lex.len());
        let mut her = lex.counterparts("her").unwrap().to_vec();
        her.sort();
        assert_eq!(her, ["him", "his"]);
    }

    #[test]
    fn bundled_list_is_a_bijection_off_the_ambiguous_set() {
        let lex = GenderLexicon::bundled();
        for w in lex.unambiguous_words() {
            let f = lex.flip(w).unwrap();
            assert_eq!(lex.flip(f), Some(w));
            assert_ne!(lex.gender(w), lex.gender(f));
            assert_eq!(w, w.to_lowercase());
        }
    }

    #[test]
    fn swapped_exchanges_genders() {
        let lex = GenderLexicon::bundled();
        let sw = lex.swapped();
        assert_eq!(sw.gender("he"), Some(Gender::Female));
        assert_eq!(sw.flip("he"), Some("she"));
    }

    #[test]
    fn tsv_round_trip() {
        let lex = GenderLexicon::bundled();
        let again = GenderLexicon::parse(&lex.to_tsv()).unwrap();
        assert_eq!(lex.pairs(), again.pairs());
    }
}
