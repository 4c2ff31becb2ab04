//! Tokenizer shared by the hashing embedder and the stance language model.

/// Lowercases and splits on every non-alphanumeric character, dropping empty tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}
