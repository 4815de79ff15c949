//! Pre-tokenized prompt suites.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenTag {
    Content,
    Function,
    Punctuation,
}

impl TokenTag {
    pub const ALL: [TokenTag; 3] = [TokenTag::Content, TokenTag::Function, TokenTag::Punctuation];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenTag::Content => "content",
            TokenTag::Function => "function",
            TokenTag::Punctuation => "punctuation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub category: String,
    pub text: String,
    pub token_ids: Vec<u32>,
    pub token_tags: Vec<TokenTag>,
    /// Pairs perturbed variants with their original.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptManifest {
    pub experiment: String,
    /// Declared categories; each must have at least one entry.
    pub categories: Vec<String>,
    pub entries: Vec<PromptEntry>,
}

impl PromptManifest {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.token_ids.is_empty() {
                return Err(Error::Input(format!("entry {i} has no tokens")));
            }
            if e.token_ids.len() != e.token_tags.len() {
                return Err(Error::Input(format!(
                    "entry {i}: {} ids but {} tags",
                    e.token_ids.len(),
                    e.token_tags.len()
                )));
            }
            if let Some(id) = e.token_ids.iter().find(|&&id| id as usize >= vocab_size) {
                return Err(Error::Input(format!("entry {i}: token id {id} outside vocab {vocab_size}")));
            }
            if !self.categories.contains(&e.category) {
                return Err(Error::Input(format!("entry {i}: undeclared category {:?}", e.category)));
            }
        }
        for c in &self.categories {
            if !self.entries.iter().any(|e| &e.category == c) {
                return Err(Error::Input(format!("category {c:?} has no entries")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&text)
            .map_err(|e| Error::Input(format!("{}: malformed prompt manifest: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Articles, prepositions, conjunctions, pronouns and auxiliaries.
pub const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "of", "in", "on", "at", "to", "for", "with", "by", "from",
    "into", "onto", "about", "as", "than", "then", "and", "or", "but", "if", "so", "nor", "yet", "because",
    "while", "i", "you", "he", "she", "it", "we", "they", "me", "him", "her", "us", "them", "my", "your", "his",
    "its", "our", "their", "who", "whom", "which", "what", "there", "is", "are", "was", "were", "be", "been",
    "being", "am", "do", "does", "did", "have", "has", "had", "will", "would", "shall", "should", "can",
    "could", "may", "might", "must", "no", "not", "all", "other",
];

fn word_tag(word: &str) -> TokenTag {
    let lower = word.to_ascii_lowercase();
    if FUNCTION_WORDS.contains(&lower.as_str()) {
        TokenTag::Function
    } else {
        TokenTag::Content
    }
}

/// Byte-level tokenization with per-byte tags: word bytes carry the word's
/// tag, punctuation bytes are punctuation, and whitespace inherits the tag of
/// the token that follows it (as a leading-space subword would).
pub fn tag_and_tokenize_bytes(text: &str) -> (Vec<u32>, Vec<TokenTag>) {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut ids = Vec::with_capacity(text.len());
    let mut tags: Vec<Option<TokenTag>> = Vec::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        let (start, ch) = chars[i];
        if ch.is_alphanumeric() {
            // Apostrophes stay inside a word only when a letter follows ("don't").
            let mut j = i + 1;
            while j < chars.len() {
                let c = chars[j].1;
                let inner_quote = c == '\'' && chars.get(j + 1).is_some_and(|&(_, n)| n.is_alphanumeric());
                if c.is_alphanumeric() || inner_quote {
                    j += 1;
                } else {
                    break;
                }
            }
            let end = chars.get(j).map_or(text.len(), |&(e, _)| e);
            let word = &text[start..end];
            ids.extend(word.bytes().map(u32::from));
            tags.extend(std::iter::repeat_n(Some(word_tag(word)), word.len()));
            i = j;
            continue;
        }
        let tag = if ch.is_whitespace() { None } else { Some(TokenTag::Punctuation) };
        let mut buf = [0u8; 4];
        let bytes = ch.encode_utf8(&mut buf).as_bytes();
        ids.extend(bytes.iter().map(|&b| u32::from(b)));
        tags.extend(std::iter::repeat_n(tag, bytes.len()));
        i += 1;
    }
    // Resolve whitespace from the right; trailing whitespace is punctuation.
    let mut next = TokenTag::Punctuation;
    let resolved: Vec<TokenTag> = tags
        .iter()
        .rev()
        .map(|t| {
            if let Some(t) = t {
                next = *t;
            }
            next
        })
        .collect();
    (ids, resolved.into_iter().rev().collect())
}

fn entry(category: &str, text: &str, group: Option<&str>) -> PromptEntry {
    let (token_ids, token_tags) = tag_and_tokenize_bytes(text);
    PromptEntry {
        category: category.to_string(),
        text: text.to_string(),
        token_ids,
        token_tags,
        group: group.map(str::to_string),
    }
}

fn manifest(experiment: &str, items: &[(&str, &str)], group: Option<&str>) -> PromptManifest {
    let mut categories: Vec<String> = Vec::new();
    for (c, _) in items {
        if !categories.iter().any(|x| x == c) {
            categories.push(c.to_string());
        }
    }
    PromptManifest {
        experiment: experiment.to_string(),
        categories,
        entries: items.iter().map(|(c, t)| entry(c, t, group)).collect(),
    }
}

/// The six prompt suites, byte-tokenized for byte-level vocabularies
/// (such as synthetic models). Real checkpoints need suites tokenized by
/// their own exporter.
pub fn builtin_prompt_suite() -> Vec<PromptManifest> {
    vec![
        manifest("temperature", &[("capital", "The capital of France is")], None),
        manifest(
            "complexity",
            &[
                ("factual", "The chemical formula for water is"),
                ("factual", "What is the largest planet in our solar system?"),
                ("reasoning", "If all humans are mortal, and Socrates is human, then"),
                ("reasoning", "A is taller than B, and B is taller than C. Therefore,"),
                ("creative", "Once upon a time in a magical forest,"),
                ("creative", "The spaceship landed on the alien planet..."),
                ("technical", "To implement a binary search tree in Python, first"),
                ("technical", "A major difference between TCP and UDP is that"),
                ("ambiguous", "The bank is"),
                ("ambiguous", "She saw the man with the"),
            ],
            None,
        ),
        manifest(
            "token_type",
            &[
                ("content_heavy", "Artificial intelligence research focuses on developing"),
                ("content_heavy", "Quantum mechanics describes the physical properties of"),
                ("function_heavy", "The of the and for the in the to the"),
                ("function_heavy", "It is a fact that there is no one who"),
                ("mixed", "She walked into the room and saw something extraordinary"),
                ("mixed", "The old sailor looked at the storm and sighed"),
            ],
            None,
        ),
        manifest(
            "layers",
            &[
                ("simple", "The cat sat on the"),
                ("simple", "One plus one equals"),
                ("complex", "The philosophical implications of artificial intelligence include"),
                ("complex", "The geopolitical ramifications of the energy crisis are"),
                ("technical", "To optimize neural network training, we should"),
                ("technical", "The primary function of a CPU is to"),
            ],
            None,
        ),
        manifest(
            "position",
            &[
                ("front_critical", "INSTRUCTION: Translate... 'Hello, how are you?'"),
                ("front_critical", "CRITICAL: The password is 'Omega'. All other..."),
                ("back_critical", "The following text is a simple greeting... INSTRUCTION: 'Hello, how are you?'"),
                ("back_critical", "All other information is irrelevant... CRITICAL: This is the password."),
                ("distributed", "INSTRUCTION: Translate 'Hello, how are you?' to French. TASK: Translation."),
            ],
            None,
        ),
        manifest(
            "perturbation",
            &[
                ("original", "The first man on the moon was Neil Armstrong"),
                ("remove_article", "First man on moon was Neil Armstrong"),
                ("typo", "The first man om the moon iz Neil Armstrong"),
                ("synonym", "The first person on the moon was Neil Armstrong"),
                ("reorder", "Neil Armstrong moon was on the The first man"),
            ],
            Some("set1"),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagging_simple_sentence() {
        let (ids, tags) = tag_and_tokenize_bytes("The cat, sat");
        assert_eq!(ids.len(), 12);
        assert_eq!(String::from_utf8(ids.iter().map(|&i| i as u8).collect()).unwrap(), "The cat, sat");
        use TokenTag::*;
        assert_eq!(
            tags,
            vec![
                Function, Function, Function, Content, Content, Content, Content, Punctuation, Content, Content,
                Content, Content
            ]
        );
    }

    #[test]
    fn suite_is_valid_for_byte_vocab() {
        let suite = builtin_prompt_suite();
        assert_eq!(suite.len(), 6);
        for m in &suite {
            m.validate(256).unwrap();
        }
        assert_eq!(suite[0].entries[0].text, "The capital of France is");
        assert!(suite[5].entries.iter().any(|e| e.text.contains(" om ") && e.text.contains(" iz ")));
    }

    #[test]
    fn ids_decode_to_text() {
        for m in builtin_prompt_suite() {
            for e in m.entries {
                let bytes: Vec<u8> = e.token_ids.iter().map(|&i| i as u8).collect();
                assert_eq!(String::from_utf8(bytes).unwrap(), e.text);
            }
        }
    }

    #[test]
    fn validation_errors() {
        let mut m = builtin_prompt_suite().remove(1);
        assert!(m.validate(64).is_err());
        m.categories.push("empty".into());
        assert!(m.validate(256).is_err());
        let mut m = builtin_prompt_suite().remove(0);
        m.entries[0].token_tags.pop();
        assert!(m.validate(256).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = builtin_prompt_suite().remove(5);
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(PromptManifest::load(&p).unwrap(), m);
    }
}
