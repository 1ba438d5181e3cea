//! Token normalization shared by lead dedup and ground-truth matching.

use std::collections::BTreeSet;

/// Lowercased alphanumeric tokens; every other character acts as a separator.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokens(text).collect()
}

/// Jaccard similarity |A ∩ B| / |A ∪ B|. Two empty sets are treated as identical.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Token set of a name and description taken together.
pub fn name_description_tokens(name: &str, description: &str) -> BTreeSet<String> {
    let mut set = token_set(name);
    set.extend(tokens(description));
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_splits_tokens() {
        let t: Vec<_> = tokens("AI-Driven  Investigative, Tools!").collect();
        assert_eq!(t, ["ai", "driven", "investigative", "tools"]);
    }

    #[test]
    fn jaccard_hand_values() {
        let a = token_set("x y z");
        let b = token_set("x y w");
        assert_eq!(jaccard(&a, &b), 0.5);
        assert_eq!(jaccard(&a, &a), 1.0);
        assert_eq!(jaccard(&a, &token_set("p q")), 0.0);
        assert_eq!(jaccard(&BTreeSet::new(), &BTreeSet::new()), 1.0);
    }
}
