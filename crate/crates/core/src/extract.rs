//! Final-answer extraction and canonicalization.
//!
//! Traces are prompted to end with `\boxed{...}`; we take the content of the
//! last complete boxed group, falling back to the last numeric span when no
//! such group exists. Vote keys are syntactic: canonicalization normalizes
//! whitespace and trivial decoration but performs no mathematical
//! equivalence (`737/39` and `\frac{737}{39}` stay distinct answers).

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error("extraction failure: answer empty after canonicalization")]
    EmptyAnswer,
}

/// A parsed answer plus the normalized form used as the vote key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalAnswer {
    pub raw: String,
    pub canonical: String,
}

/// Content of the last complete `\boxed{...}` group, honoring nested braces.
///
/// A backslash escapes the following character, so `\{` and `\}` do not
/// count toward the depth. Unbalanced braces after the last `\boxed{` yield
/// `None` (the caller falls back to [`fallback_numeric`]).
pub fn extract_boxed(text: &str) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let open = text.rfind(MARKER)?;
    let body = &text[open + MARKER.len()..];
    let mut depth = 1usize;
    let mut escaped = false;
    for (i, c) in body.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' => escaped = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(body[..i].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

fn numeric_span_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+\.\d+|\d+/\d+|\d+").expect("valid regex"))
}

/// Last maximal span that looks like an integer, a decimal, or a simple
/// fraction (`digits/digits`). `None` when the text has no digits.
pub fn fallback_numeric(text: &str) -> Option<String> {
    numeric_span_re().find_iter(text).last().map(|m| m.as_str().to_string())
}

/// Normalizes a raw answer into its vote key.
///
/// Trims surrounding whitespace, strips one layer of outer `$...$`, collapses
/// internal whitespace runs to single spaces, and removes leading zeros from
/// pure integers. Everything else is byte-preserved.
pub fn canonicalize(raw: &str) -> Result<CanonicalAnswer, ExtractError> {
    let mut s = raw.trim();
    if s.len() >= 2 && s.starts_with('$') && s.ends_with('$') {
        // Strip only when the pair encloses the whole answer; an interior
        // `$` means the ends belong to different math groups.
        let interior = &s[1..s.len() - 1];
        if !interior.contains('$') {
            s = interior.trim();
        }
    }
    let mut canonical = String::with_capacity(s.len());
    let mut last_was_space = false;
    for c in s.chars() {
        if c.is_whitespace() {
            if !last_was_space {
                canonical.push(' ');
            }
            last_was_space = true;
        } else {
            canonical.push(c);
            last_was_space = false;
        }
    }
    canonical = strip_integer_zeros(&canonical);
    if canonical.is_empty() {
        return Err(ExtractError::EmptyAnswer);
    }
    Ok(CanonicalAnswer { raw: raw.to_string(), canonical })
}

/// "007" → "7", "-007" → "-7", "000" → "0"; non-integers pass through.
fn strip_integer_zeros(s: &str) -> String {
    let digits = s.strip_prefix('-').unwrap_or(s);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return s.to_string();
    }
    let trimmed = digits.trim_start_matches('0');
    let trimmed = if trimmed.is_empty() { "0" } else { trimmed };
    if s.starts_with('-') && trimmed != "0" {
        format!("-{trimmed}")
    } else {
        trimmed.to_string()
    }
}

/// Full extraction pipeline over a completed trace's text: boxed group
/// first, then the numeric-span fallback, then canonicalization.
pub fn extract_answer(text: &str) -> Option<CanonicalAnswer> {
    let raw = extract_boxed(text).or_else(|| fallback_numeric(text))?;
    canonicalize(&raw).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn last_boxed_group_wins() {
        assert_eq!(
            extract_boxed("... \\boxed{42} ... therefore \\boxed{7}").as_deref(),
            Some("7")
        );
    }

    #[test]
    fn boxed_after_inline_math() {
        let text = "Final sum: $8 + 32 + 200 = 240$ ... \\boxed{240}";
        assert_eq!(extract_boxed(text).as_deref(), Some("240"));
    }

    #[test]
    fn nested_braces_survive() {
        assert_eq!(
            extract_boxed("\\boxed{\\frac{737}{39}}").as_deref(),
            Some("\\frac{737}{39}")
        );
    }

    #[test]
    fn unbalanced_tail_is_absent() {
        assert_eq!(extract_boxed("\\boxed{42} then \\boxed{oops"), None);
    }

    #[test]
    fn escaped_braces_do_not_count() {
        assert_eq!(extract_boxed("\\boxed{a\\{b}").as_deref(), Some("a\\{b"));
    }

    #[test]
    fn fallback_takes_last_span() {
        assert_eq!(fallback_numeric("the answer is 17.").as_deref(), Some("17"));
        assert_eq!(fallback_numeric("values 8, 32, 200 sum to 240").as_deref(), Some("240"));
        assert_eq!(fallback_numeric("no numbers here"), None);
        assert_eq!(fallback_numeric("ratio 737/39 stands").as_deref(), Some("737/39"));
        assert_eq!(fallback_numeric("pi is 3.14 ok").as_deref(), Some("3.14"));
    }

    #[test]
    fn canonicalize_examples() {
        assert_eq!(canonicalize("  240 ").unwrap().canonical, "240");
        assert_eq!(canonicalize("007").unwrap().canonical, "7");
        assert_eq!(canonicalize("\\frac{737}{39}").unwrap().canonical, "\\frac{737}{39}");
        assert_eq!(canonicalize("$ 12 $").unwrap().canonical, "12");
        assert_eq!(canonicalize("a   b\tc").unwrap().canonical, "a b c");
        assert_eq!(canonicalize("-007").unwrap().canonical, "-7");
        assert_eq!(canonicalize("000").unwrap().canonical, "0");
        assert_eq!(canonicalize("   ").unwrap_err(), ExtractError::EmptyAnswer);
    }

    proptest! {
        /// Wrapping a brace-free payload as the final boxed group round-trips.
        #[test]
        fn boxed_embed_identity(
            prefix in "[ -~]{0,40}",
            payload in "[a-zA-Z0-9 _+./=^,-]{0,40}",
        ) {
            // Strip any boxed markers the random prefix may contain so the
            // payload's group is the last one.
            let prefix = prefix.replace('\\', "").replace('{', "").replace('}', "");
            let text = format!("{prefix}\\boxed{{{payload}}}");
            prop_assert_eq!(extract_boxed(&text), Some(payload));
        }

        /// No input panics; every input yields answer-or-absent.
        #[test]
        fn parsing_is_total(text in ".*") {
            let _ = extract_boxed(&text);
            let _ = fallback_numeric(&text);
            let _ = extract_answer(&text);
        }

        /// canonicalize(canonical) == canonical.
        #[test]
        fn canonicalize_idempotent(raw in "[ -~]{1,60}") {
            if let Ok(once) = canonicalize(&raw) {
                let twice = canonicalize(&once.canonical).unwrap();
                prop_assert_eq!(once.canonical, twice.canonical);
            }
        }
    }
}
