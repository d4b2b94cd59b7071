//! Object-name matcher: exact names, synonyms, subclass terms and plural forms
//! all fold onto one canonical class name.
//!
//! The same matcher drives the scripted reasoner, candidate-object extraction
//! for captioning, caption filtering and generative hallucination scoring, so
//! every component agrees on what "mentions an object" means.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;

const BUNDLED: &str = include_str!("../resources/lexicon.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconFile {
    pub version: String,
    /// canonical name -> synonyms and subclass terms
    pub classes: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub irregular_plurals: BTreeMap<String, String>,
    /// object -> objects whose presence it suggests in a typical scene
    #[serde(default)]
    pub implications: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub word: String,
    pub start: usize,
    pub end: usize,
}

/// One matched object mention, as token and byte spans into the scanned text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub canonical: String,
    pub first_token: usize,
    pub token_len: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    surface: HashMap<String, String>,
    max_phrase_tokens: usize,
    irregular: BTreeMap<String, String>,
    irregular_rev: BTreeMap<String, String>,
    implications: BTreeMap<String, Vec<String>>,
    classes: Vec<String>,
    checksum: String,
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_ascii_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            out.push(Token {
                word: text[s..i].to_ascii_lowercase(),
                start: s,
                end: i,
            });
        }
    }
    if let Some(s) = start {
        out.push(Token {
            word: text[s..].to_ascii_lowercase(),
            start: s,
            end: text.len(),
        });
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Lexicon {
    pub fn bundled() -> Lexicon {
        Lexicon::from_json(BUNDLED).expect("bundled lexicon is valid")
    }

    pub fn load(path: &Path) -> Result<Lexicon, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Lexicon::from_json(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn from_json(text: &str) -> Result<Lexicon, ConfigError> {
        let file: LexiconFile = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<lexicon>".into(),
            message: e.to_string(),
        })?;
        let mut lex = Lexicon::from_file(file)?;
        lex.checksum = sha256_hex(text.as_bytes());
        Ok(lex)
    }

    pub fn from_file(file: LexiconFile) -> Result<Lexicon, ConfigError> {
        let irregular: BTreeMap<String, String> = file
            .irregular_plurals
            .iter()
            .map(|(k, v)| (k.to_ascii_lowercase(), v.to_ascii_lowercase()))
            .collect();
        let irregular_rev = irregular.iter().map(|(k, v)| (v.clone(), k.clone())).collect();
        let mut lex = Lexicon {
            surface: HashMap::new(),
            max_phrase_tokens: 1,
            irregular,
            irregular_rev,
            implications: BTreeMap::new(),
            classes: Vec::new(),
            checksum: String::new(),
        };
        for (canonical, synonyms) in &file.classes {
            let canonical = normalize_phrase(canonical);
            lex.classes.push(canonical.clone());
            for form in std::iter::once(&canonical).chain(synonyms.iter()) {
                let form = normalize_phrase(form);
                let plural = lex.pluralize_phrase(&form);
                for f in [form, plural] {
                    if let Some(prev) = lex.surface.get(&f) {
                        if *prev != canonical {
                            return Err(ConfigError::Invalid(format!(
                                "lexicon surface form `{f}` maps to both `{prev}` and `{canonical}`"
                            )));
                        }
                    }
                    lex.max_phrase_tokens = lex.max_phrase_tokens.max(f.split(' ').count());
                    lex.surface.insert(f, canonical.clone());
                }
            }
        }
        for (obj, implied) in &file.implications {
            let obj = lex.normalize_name(obj);
            let implied = implied.iter().map(|o| lex.normalize_name(o)).collect();
            lex.implications.insert(obj, implied);
        }
        Ok(lex)
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    fn pluralize_word(&self, word: &str) -> String {
        if let Some(p) = self.irregular.get(word) {
            return p.clone();
        }
        if self.irregular_rev.contains_key(word) {
            return word.to_string();
        }
        let ends = |s: &str| word.ends_with(s);
        if ends("s") || ends("x") || ends("z") || ends("ch") || ends("sh") {
            format!("{word}es")
        } else if ends("y") && !matches!(word.chars().rev().nth(1), Some('a' | 'e' | 'i' | 'o' | 'u')) {
            format!("{}ies", &word[..word.len() - 1])
        } else {
            format!("{word}s")
        }
    }

    pub fn pluralize_phrase(&self, phrase: &str) -> String {
        match phrase.rsplit_once(' ') {
            Some((head, last)) => format!("{head} {}", self.pluralize_word(last)),
            None => self.pluralize_word(phrase),
        }
    }

    pub fn singularize_word(&self, word: &str) -> String {
        if let Some(s) = self.irregular_rev.get(word) {
            return s.clone();
        }
        if self.irregular.contains_key(word) {
            return word.to_string();
        }
        if let Some(stem) = word.strip_suffix("ies") {
            if !stem.is_empty() {
                return format!("{stem}y");
            }
        }
        for suffix in ["ches", "shes", "xes", "zes", "sses"] {
            if word.ends_with(suffix) {
                return word[..word.len() - 2].to_string();
            }
        }
        if word.ends_with('s') && !word.ends_with("ss") && word.len() > 3 {
            return word[..word.len() - 1].to_string();
        }
        word.to_string()
    }

    /// Canonical class for a bare object name, if the lexicon knows it.
    pub fn canonicalize(&self, name: &str) -> Option<String> {
        let phrase = normalize_phrase(name);
        let phrase = strip_article(&phrase);
        if let Some(c) = self.surface.get(phrase) {
            return Some(c.clone());
        }
        let singular = match phrase.rsplit_once(' ') {
            Some((head, last)) => format!("{head} {}", self.singularize_word(last)),
            None => self.singularize_word(phrase),
        };
        self.surface.get(&singular).cloned()
    }

    /// Canonical class when known, otherwise a lowercased singular form.
    pub fn normalize_name(&self, name: &str) -> String {
        if let Some(c) = self.canonicalize(name) {
            return c;
        }
        let phrase = normalize_phrase(name);
        let phrase = strip_article(&phrase);
        match phrase.rsplit_once(' ') {
            Some((head, last)) => format!("{head} {}", self.singularize_word(last)),
            None => self.singularize_word(phrase),
        }
    }

    /// All surface forms (names, synonyms, plurals) that fold onto `name`'s class,
    /// plus the literal name and its plural when it is not a known class.
    pub fn surface_forms(&self, name: &str) -> Vec<String> {
        let canonical = self.normalize_name(name);
        let mut forms: Vec<String> = self
            .surface
            .iter()
            .filter(|(_, c)| **c == canonical)
            .map(|(s, _)| s.clone())
            .collect();
        if forms.is_empty() {
            forms.push(canonical.clone());
            forms.push(self.pluralize_phrase(&canonical));
        }
        forms.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        forms.dedup();
        forms
    }

    /// Longest-match, left-to-right, non-overlapping object mentions.
    pub fn mentions(&self, text: &str) -> Vec<Mention> {
        self.mentions_with(text, None)
    }

    /// Mentions of one object, also catching names the lexicon does not know.
    pub fn mentions_of(&self, text: &str, object: &str) -> Vec<Mention> {
        let canonical = self.normalize_name(object);
        let extra = if self.surface.values().any(|c| *c == canonical) {
            None
        } else {
            Some(canonical.as_str())
        };
        self.mentions_with(text, extra)
            .into_iter()
            .filter(|m| m.canonical == canonical)
            .collect()
    }

    fn mentions_with(&self, text: &str, extra: Option<&str>) -> Vec<Mention> {
        let tokens = tokenize(text);
        let extra_forms: Vec<(String, String)> = extra
            .map(|e| vec![(e.to_string(), e.to_string()), (self.pluralize_phrase(e), e.to_string())])
            .unwrap_or_default();
        let max_len = extra_forms
            .iter()
            .map(|(f, _)| f.split(' ').count())
            .fold(self.max_phrase_tokens, usize::max);
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut matched = None;
            for len in (1..=max_len.min(tokens.len() - i)).rev() {
                let phrase = tokens[i..i + len]
                    .iter()
                    .map(|t| t.word.as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                let hit = self.surface.get(&phrase).cloned().or_else(|| {
                    extra_forms
                        .iter()
                        .find(|(f, _)| *f == phrase)
                        .map(|(_, c)| c.clone())
                });
                if let Some(canonical) = hit {
                    matched = Some((len, canonical));
                    break;
                }
            }
            match matched {
                Some((len, canonical)) => {
                    out.push(Mention {
                        canonical,
                        first_token: i,
                        token_len: len,
                        start: tokens[i].start,
                        end: tokens[i + len - 1].end,
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }

    /// Distinct canonical objects mentioned in `text`, in first-mention order.
    pub fn mentioned_objects(&self, text: &str) -> Vec<String> {
        let mut seen = Vec::new();
        for m in self.mentions(text) {
            if !seen.contains(&m.canonical) {
                seen.push(m.canonical);
            }
        }
        seen
    }

    pub fn mentions_object(&self, text: &str, object: &str) -> bool {
        !self.mentions_of(text, object).is_empty()
    }

    /// Whether any of `present` suggests `target` is in the scene.
    pub fn implies(&self, present: &[String], target: &str) -> bool {
        let target = self.normalize_name(target);
        present.iter().any(|p| {
            self.implications
                .get(p)
                .is_some_and(|implied| implied.iter().any(|i| *i == target))
        })
    }
}

fn normalize_phrase(s: &str) -> String {
    tokenize(s)
        .into_iter()
        .map(|t| t.word)
        .collect::<Vec<_>>()
        .join(" ")
}

fn strip_article(s: &str) -> &str {
    for article in ["a ", "an ", "the ", "some "] {
        if let Some(rest) = s.strip_prefix(article) {
            return rest;
        }
    }
    s
}
