//! Deterministic English text utilities used by the metrics and reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coarse class of a raw generation output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputClass {
    Question,
    Statement,
    Empty,
}

impl OutputClass {
    pub const ALL: [OutputClass; 3] = [OutputClass::Question, OutputClass::Statement, OutputClass::Empty];

    pub fn as_str(self) -> &'static str {
        match self {
            OutputClass::Question => "question",
            OutputClass::Statement => "statement",
            OutputClass::Empty => "empty",
        }
    }
}

/// Leading interrogative of a question, or `None` when it has none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionWord {
    Where,
    Who,
    When,
    What,
    Why,
    Whose,
    Whom,
    Which,
    How,
    None,
}

impl QuestionWord {
    /// Table order: the nine interrogatives followed by `None`.
    pub const ALL: [QuestionWord; 10] = [
        QuestionWord::Where,
        QuestionWord::Who,
        QuestionWord::When,
        QuestionWord::What,
        QuestionWord::Why,
        QuestionWord::Whose,
        QuestionWord::Whom,
        QuestionWord::Which,
        QuestionWord::How,
        QuestionWord::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionWord::Where => "where",
            QuestionWord::Who => "who",
            QuestionWord::When => "when",
            QuestionWord::What => "what",
            QuestionWord::Why => "why",
            QuestionWord::Whose => "whose",
            QuestionWord::Whom => "whom",
            QuestionWord::Which => "which",
            QuestionWord::How => "how",
            QuestionWord::None => "none",
        }
    }

    fn from_token(token: &str) -> Option<Self> {
        Some(match token {
            "where" => QuestionWord::Where,
            "who" => QuestionWord::Who,
            "when" => QuestionWord::When,
            "what" => QuestionWord::What,
            "why" => QuestionWord::Why,
            "whose" => QuestionWord::Whose,
            "whom" => QuestionWord::Whom,
            "which" => QuestionWord::Which,
            "how" => QuestionWord::How,
            _ => return None,
        })
    }
}

/// Word, sentence and syllable counts plus the Flesch reading-ease score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadabilityStats {
    pub words: usize,
    pub sentences: usize,
    pub syllables: usize,
    pub flesch: f64,
}

fn is_joiner(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '-' | '\u{2010}')
}

/// Lowercased word tokens.
///
/// Tokens are maximal runs of alphanumeric characters. An apostrophe or
/// hyphen stays in the token only when it sits between two alphanumerics;
/// everywhere else punctuation separates tokens and is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
            continue;
        }
        let inside_word = is_joiner(c)
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if inside_word {
            current.push(if c == '\u{2019}' { '\'' } else if c == '\u{2010}' { '-' } else { c });
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Abbreviations (lowercase, without the final period) that never end a
/// sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "e.g", "i.e", "cf", "fig", "approx",
    "dept", "est", "inc", "ltd", "mt", "gen", "gov", "sgt", "capt", "col", "lt",
];

const TERMINATORS: [char; 3] = ['.', '!', '?'];
const CLOSERS: [char; 7] = ['"', '\'', ')', ']', '\u{201D}', '\u{2019}', '}'];

fn word_before(text: &str, end: usize) -> &str {
    let head = &text[..end];
    let start = head
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    head[start..].trim_start_matches(|c: char| !c.is_alphanumeric())
}

/// Splits text into sentences.
///
/// A sentence ends at a run of `.`, `!` or `?` (plus any closing quotes or
/// brackets) that is followed by whitespace or the end of input. A lone
/// period after an entry of [`ABBREVIATIONS`] does not end a sentence.
/// Returned sentences are trimmed and never empty.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_after = |k: usize| chars.get(k + 1).map_or(text.len(), |&(b, _)| b);
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !TERMINATORS.contains(&c) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < chars.len() && TERMINATORS.contains(&chars[j + 1].1) {
            j += 1;
        }
        let mut k = j;
        while k + 1 < chars.len() && CLOSERS.contains(&chars[k + 1].1) {
            k += 1;
        }
        let at_boundary = chars.get(k + 1).is_none_or(|&(_, n)| n.is_whitespace());
        let abbreviation = i == j
            && c == '.'
            && ABBREVIATIONS.contains(&word_before(text, pos).to_lowercase().as_str());
        if at_boundary && !abbreviation {
            let end = byte_after(k);
            let piece = text[start..end].trim();
            if !piece.is_empty() {
                sentences.push(piece.to_string());
            }
            start = end;
        }
        i = k + 1;
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        sentences.push(rest.to_string());
    }
    sentences
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

fn syllables_in_part(part: &str) -> usize {
    let letters: Vec<char> = part
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    let mut groups = 0usize;
    let mut in_group = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !in_group {
            groups += 1;
        }
        in_group = v;
    }
    let n = letters.len();
    let ends_with = |suffix: &str| {
        let s: Vec<char> = suffix.chars().collect();
        n >= s.len() && letters[n - s.len()..] == s[..]
    };
    if n >= 2 && letters[n - 1] == 'e' && !is_vowel(letters[n - 2]) {
        // Consonant + "le" keeps its vowel sound ("table", "little").
        let consonant_le = n >= 3 && letters[n - 2] == 'l' && !is_vowel(letters[n - 3]);
        if !consonant_le {
            groups = groups.saturating_sub(1);
        }
    }
    // Vowel hiatus before a silent e ("create", "immediate").
    if ends_with("eate") || ends_with("iate") {
        groups += 1;
    }
    groups.max(1)
}

/// Heuristic syllable count.
///
/// Counts maximal vowel groups (a, e, i, o, u, y), drops a word-final
/// silent `e` (not after consonant + `l`), adds one for a final `-eate` /
/// `-iate` hiatus, and never returns less than 1. Hyphenated compounds are
/// counted part by part.
pub fn count_syllables(word: &str) -> usize {
    word.split('-')
        .filter(|p| !p.is_empty())
        .map(syllables_in_part)
        .sum::<usize>()
        .max(1)
}

/// Flesch reading ease from raw counts.
pub fn flesch_score(words: usize, sentences: usize, syllables: usize) -> f64 {
    206.835 - 1.015 * (words as f64 / sentences as f64) - 84.6 * (syllables as f64 / words as f64)
}

/// Readability statistics of `text`. The score is not clamped.
pub fn flesch(text: &str) -> Result<ReadabilityStats> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::EmptyText);
    }
    let sentences = split_sentences(text).len().max(1);
    let syllables = tokens.iter().map(|t| count_syllables(t)).sum();
    Ok(ReadabilityStats {
        words: tokens.len(),
        sentences,
        syllables,
        flesch: flesch_score(tokens.len(), sentences, syllables),
    })
}

/// Empty when blank, Question when it contains `?`, Statement otherwise.
pub fn classify_output(text: &str) -> OutputClass {
    if text.trim().is_empty() {
        OutputClass::Empty
    } else if text.contains('?') {
        OutputClass::Question
    } else {
        OutputClass::Statement
    }
}

/// First interrogative token in `text`. Contractions count by their stem,
/// so "What's" is [`QuestionWord::What`].
pub fn question_word(text: &str) -> QuestionWord {
    tokenize(text)
        .iter()
        .find_map(|t| QuestionWord::from_token(t.split('\'').next().unwrap_or(t)))
        .unwrap_or(QuestionWord::None)
}

/// Whitespace-delimited length of a raw output.
pub fn whitespace_length(text: &str) -> usize {
    text.split_whitespace().count()
}
