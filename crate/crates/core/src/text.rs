//! Tokenization shared by the coherence and plausibility checks: lowercase,
//! split on anything that is not alphanumeric. No stemming, no stopwords.

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_and_lowercases() {
        assert_eq!(
            tokenize("Patient reports chest-pain, 2 days."),
            ["patient", "reports", "chest", "pain", "2", "days"]
        );
        assert!(tokenize("... !!").is_empty());
    }
}
