//! The toolkit tokenizer.
//!
//! Text is lowercased, then split into maximal runs of alphanumeric
//! characters. Everything else (whitespace, punctuation, symbols, combining
//! marks) separates terms. No stemming, no stopwords.

/// Splits `text` into lowercase terms.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut terms = Vec::new();
    let mut current = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            current.push(c);
        } else if !current.is_empty() {
            terms.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        terms.push(current);
    }
    terms
}

/// Number of terms [`tokenize`] would produce, without allocating them.
pub fn count_tokens(text: &str) -> usize {
    let mut count = 0;
    let mut in_term = false;
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            if !in_term {
                count += 1;
                in_term = true;
            }
        } else {
            in_term = false;
        }
    }
    count
}

/// Tokens joined by single spaces. This is the canonical comparison form
/// used by answer matching.
pub fn normalized(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Collapses every run of whitespace to a single space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
