//! Sequence serialization and semantic denoising.

use crate::model::{Interaction, StudentSequence};

/// Renders one interaction as a single template line.
pub fn serialize_interaction(i: &Interaction) -> String {
    let mut line = format!("Q: {}", i.exercise_text().trim());
    if !i.concept_tags().is_empty() {
        line.push_str(" | concepts: ");
        line.push_str(&i.concept_tags().join(", "));
    }
    line.push_str(&format!(
        " | difficulty: {:.2} | result: {}",
        i.difficulty(),
        if i.correct() { "correct" } else { "incorrect" }
    ));
    line
}

/// Newline-joined template lines, one per interaction, in temporal order.
pub fn serialize_sequence(seq: &StudentSequence) -> String {
    seq.interactions()
        .iter()
        .map(serialize_interaction)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Keeps lowercase tokens made only of letters (letter-numerals such as Roman
/// numeral code points excluded) with at least two characters.
/// Anything that is not a letter or digit separates tokens, so numbers and
/// identifiers like `id=42` lose their numeric part.
pub fn denoise(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2 && t.chars().all(|c| c.is_alphabetic() && !c.is_numeric()))
        .map(String::from)
        .collect()
}

/// Denoised token stream of a whole sequence's serialization.
pub fn sequence_tokens(seq: &StudentSequence) -> Vec<String> {
    denoise(&serialize_sequence(seq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Split;
    use proptest::prelude::*;

    fn range_history() -> StudentSequence {
        let it = Interaction::new("Range", vec!["Range".into()], true, 0.0).unwrap();
        StudentSequence::new("712", vec![it; 5], Split::Test).unwrap()
    }

    #[test]
    fn serialization_template() {
        let i = Interaction::new("Fraction Addition", vec!["fractions".into(), "addition".into()], false, 0.126)
            .unwrap();
        assert_eq!(
            serialize_interaction(&i),
            "Q: Fraction Addition | concepts: fractions, addition | difficulty: 0.13 | result: incorrect"
        );
        let bare = Interaction::new("Median", vec![], true, 1.0).unwrap();
        assert_eq!(serialize_interaction(&bare), "Q: Median | difficulty: 1.00 | result: correct");
    }

    #[test]
    fn case_study_history_serializes_five_lines() {
        let s = serialize_sequence(&range_history());
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines.iter().all(|l| l.contains("Range") && l.contains("correct")));
        assert_eq!(s, serialize_sequence(&range_history()));
    }

    #[test]
    fn denoise_examples() {
        assert_eq!(denoise("Linear Algebra score: 0.5 id=42"), ["linear", "algebra", "score", "id"]);
        assert!(denoise("a 1 2 3 !").is_empty());
        assert_eq!(denoise("Fraction-Addition 0.13"), ["fraction", "addition"]);
        assert_eq!(denoise("abc123 ok"), ["ok"]);
        assert_eq!(denoise("Ünïcode Äpfel ß"), ["ünïcode", "äpfel"]);
    }

    #[test]
    fn difficulty_noise_is_invisible_after_denoising() {
        let mk = |d| {
            let it = Interaction::new("Geometry Area", vec!["geometry".into()], true, d).unwrap();
            StudentSequence::new("s", vec![it; 3], Split::Train).unwrap()
        };
        assert_ne!(serialize_sequence(&mk(0.12)), serialize_sequence(&mk(0.13)));
        assert_eq!(sequence_tokens(&mk(0.12)), sequence_tokens(&mk(0.13)));
    }

    proptest! {
        #[test]
        fn denoise_never_keeps_digits_or_short_tokens(s in "\\PC{0,80}") {
            for t in denoise(&s) {
                prop_assert!(t.chars().count() >= 2);
                prop_assert!(!t.chars().any(|c| c.is_numeric()));
            }
        }

        #[test]
        fn denoise_is_idempotent(s in "\\PC{0,80}") {
            let once = denoise(&s);
            prop_assert_eq!(denoise(&once.join(" ")), once);
        }
    }
}
