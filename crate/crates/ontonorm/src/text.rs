//! Small string helpers shared across modules.

/// Case-folds and collapses whitespace runs to single spaces, trimming the
/// ends. This is the key used for exact surface lookups, exclusion matching
/// and dedup sets.
pub fn fold_key(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for ch in word.chars() {
            out.extend(ch.to_lowercase());
        }
    }
    out
}

/// Collapses internal whitespace to single spaces and trims, preserving case.
/// The only preprocessing applied to a term before it is embedded: the
/// reference embedding model is cased, so case must survive.
pub fn collapse_ws(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Dice coefficient over character bigrams of the case-folded inputs.
/// Used to clamp off-list replies onto the closest candidate surface.
pub fn surface_similarity(a: &str, b: &str) -> f64 {
    let a = fold_key(a);
    let b = fold_key(b);
    if a == b {
        return 1.0;
    }
    let bigrams = |s: &str| -> Vec<(char, char)> {
        let chars: Vec<char> = s.chars().collect();
        chars.windows(2).map(|w| (w[0], w[1])).collect()
    };
    let mut ga = bigrams(&a);
    let gb = bigrams(&b);
    if ga.is_empty() || gb.is_empty() {
        return 0.0;
    }
    let total = ga.len() + gb.len();
    let mut overlap = 0usize;
    for g in &gb {
        if let Some(pos) = ga.iter().position(|x| x == g) {
            ga.swap_remove(pos);
            overlap += 1;
        }
    }
    2.0 * overlap as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_collapses_and_lowercases() {
        assert_eq!(fold_key("  Decreased\t reflexes "), "decreased reflexes");
        assert_eq!(fold_key("Hyporeflexia"), "hyporeflexia");
        assert_eq!(fold_key(""), "");
    }

    #[test]
    fn collapse_preserves_case() {
        assert_eq!(collapse_ws("  Pale   fundi "), "Pale fundi");
    }

    #[test]
    fn similarity_bounds() {
        assert_eq!(surface_similarity("Foot drop", "foot  DROP"), 1.0);
        assert_eq!(surface_similarity("abc", "xyz"), 0.0);
        let s = surface_similarity("foot drop", "bilateral foot drop");
        assert!(s > 0.5 && s < 1.0, "got {s}");
    }
}
