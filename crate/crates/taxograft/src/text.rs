//! Text canonicalization.
//!
//! All surfaces and free item text pass through [`normalize`] before any
//! comparison, so the rest of the pipeline can rely on exact string equality.

use unicode_normalization::UnicodeNormalization;

/// Canonical form: NFC, case-folded, trimmed, internal whitespace collapsed
/// to single ASCII spaces. Idempotent and total; may return an empty string.
pub fn normalize(raw: &str) -> String {
    // NFC before and after lowercasing: lowercasing can decompose characters
    // (e.g. U+0130), so the second pass restores the canonical composition.
    let folded: String = raw.nfc().collect::<String>().to_lowercase();
    let composed: String = folded.nfc().collect();
    let mut out = String::with_capacity(composed.len());
    let mut pending_space = false;
    for ch in composed.trim().chars() {
        if ch.is_whitespace() {
            pending_space = true;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trims_and_casefolds() {
        assert_eq!(normalize("  Bread "), "bread");
    }

    #[test]
    fn canonical_cjk_unchanged() {
        assert_eq!(normalize("面包"), "面包");
    }

    #[test]
    fn collapses_internal_whitespace() {
        assert_eq!(normalize("rye \t bread"), "rye bread");
        assert_eq!(normalize("a\n\nb"), "a b");
    }

    #[test]
    fn empty_and_blank_inputs() {
        assert_eq!(normalize(""), "");
        assert_eq!(normalize(" \t\n"), "");
    }

    #[test]
    fn composes_decomposed_accents() {
        // e + combining acute composes to é
        assert_eq!(normalize("Cafe\u{0301}"), "caf\u{e9}");
    }

    proptest! {
        #[test]
        fn idempotent_on_random_unicode(s in "\\PC*") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }

        #[test]
        fn output_has_no_leading_trailing_or_double_space(s in "\\PC*") {
            let n = normalize(&s);
            prop_assert!(!n.starts_with(' '));
            prop_assert!(!n.ends_with(' '));
            prop_assert!(!n.contains("  "));
        }
    }
}
