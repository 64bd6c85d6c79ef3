use std::fmt;

/// Counts tokens for the per-sample cap. Implementations must be pure
/// functions of the input text.
pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

/// Default tokenizer: maximal runs of alphanumerics/underscore form one
/// token, every other non-whitespace character is a token on its own, and
/// whitespace separates.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespacePunct;

impl Tokenizer for WhitespacePunct {
    fn name(&self) -> &str {
        "whitespace-punct"
    }

    fn count(&self, text: &str) -> usize {
        let mut count = 0;
        let mut in_word = false;
        for c in text.chars() {
            if c.is_alphanumeric() || c == '_' {
                if !in_word {
                    count += 1;
                    in_word = true;
                }
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Tokenizer selection as it appears in configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerKind {
    #[default]
    WhitespacePunct,
}

impl TokenizerKind {
    pub fn build(self) -> Box<dyn Tokenizer> {
        match self {
            TokenizerKind::WhitespacePunct => Box::new(WhitespacePunct),
        }
    }
}

impl fmt::Display for TokenizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("whitespace-punct")
    }
}
