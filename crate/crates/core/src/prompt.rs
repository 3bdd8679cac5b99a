use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("prompt is empty after normalization")]
pub struct EmptyPrompt;

/// User prompt with its lowercased, whitespace-collapsed form.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptText {
    text: String,
    normalized: String,
}

impl PromptText {
    pub fn new(text: impl Into<String>) -> Result<Self, EmptyPrompt> {
        let text = text.into();
        let normalized = text
            .split_whitespace()
            .map(str::to_lowercase)
            .collect::<Vec<_>>()
            .join(" ");
        if normalized.is_empty() {
            return Err(EmptyPrompt);
        }
        Ok(Self { text, normalized })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn normalized(&self) -> &str {
        &self.normalized
    }

    /// Whitespace tokens of the normalized text with surrounding punctuation
    /// stripped. Tokens that are pure punctuation are dropped.
    pub fn tokens(&self) -> Vec<String> {
        self.normalized
            .split(' ')
            .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation() && c != '-'))
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect()
    }
}

impl TryFrom<String> for PromptText {
    type Error = EmptyPrompt;
    fn try_from(s: String) -> Result<Self, EmptyPrompt> {
        PromptText::new(s)
    }
}

impl From<PromptText> for String {
    fn from(p: PromptText) -> String {
        p.text
    }
}

impl fmt::Debug for PromptText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PromptText({:?})", self.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_case_and_whitespace() {
        let p = PromptText::new("  A Red\tDragon \n flying ").unwrap();
        assert_eq!(p.normalized(), "a red dragon flying");
        assert_eq!(p.text(), "  A Red\tDragon \n flying ");
    }

    #[test]
    fn blank_prompt_is_rejected() {
        assert_eq!(PromptText::new(" \t\n"), Err(EmptyPrompt));
    }

    #[test]
    fn tokens_strip_punctuation_but_keep_hyphens() {
        let p = PromptText::new("A circle, left-of the square.").unwrap();
        assert_eq!(p.tokens(), ["a", "circle", "left-of", "the", "square"]);
    }
}
