//! Rule-based sentence splitting.
//!
//! A sentence ends at `.`, `!` or `?` (plus any closing quotes or brackets)
//! when followed by whitespace and then an uppercase letter or a digit. A
//! period never ends a sentence after a listed abbreviation or a run of
//! initials such as `J.K.` or `U.S.`.

/// Abbreviations that do not end a sentence. Case-sensitive.
pub const ABBREVIATIONS: &[&str] = &[
    "Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "Sr.", "Jr.", "St.", "Mt.", "Gen.", "Col.", "Capt.",
    "Lt.", "Rev.", "Hon.", "Inc.", "Ltd.", "Co.", "Corp.", "Bros.", "vs.", "etc.", "e.g.", "i.e.",
    "cf.", "approx.", "No.", "Nos.", "Vol.", "pp.", "Jan.", "Feb.", "Mar.", "Apr.", "Aug.",
    "Sep.", "Sept.", "Oct.", "Nov.", "Dec.",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '\u{201c}', '\u{2018}'];

/// Splits `text` into sentence spans `(start, end)` in character indices.
/// Spans are trimmed and together cover all non-whitespace text.
pub fn split_sentences(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut spans = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < n {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < n && CLOSERS.contains(&chars[j]) {
                j += 1;
            }
            let mut k = j;
            while k < n && chars[k].is_whitespace() {
                k += 1;
            }
            let boundary = k > j
                && k < n
                && (chars[k].is_uppercase() || chars[k].is_ascii_digit() || opens_sentence(&chars[k..]))
                && !(c == '.' && is_abbreviation(&chars, i));
            if boundary {
                push_trimmed(&chars, start, j, &mut spans);
                start = k;
                i = k;
                continue;
            }
        }
        i += 1;
    }
    push_trimmed(&chars, start, n, &mut spans);
    spans
}

fn opens_sentence(rest: &[char]) -> bool {
    rest.len() > 1 && OPENERS.contains(&rest[0]) && rest[1].is_uppercase()
}

/// Whether the whitespace-delimited token ending at `period` is an
/// abbreviation or a run of initials.
fn is_abbreviation(chars: &[char], period: usize) -> bool {
    let mut s = period;
    while s > 0 && !chars[s - 1].is_whitespace() {
        s -= 1;
    }
    while s < period && OPENERS.contains(&chars[s]) {
        s += 1;
    }
    let token: String = chars[s..=period].iter().collect();
    ABBREVIATIONS.contains(&token.as_str()) || is_initials(&token)
}

/// `J.`, `J.K.`, `U.S.A.`
fn is_initials(token: &str) -> bool {
    let cs: Vec<char> = token.chars().collect();
    !cs.is_empty()
        && cs.len() % 2 == 0
        && cs
            .chunks(2)
            .all(|pair| pair[0].is_uppercase() && pair[1] == '.')
}

fn push_trimmed(chars: &[char], mut start: usize, mut end: usize, spans: &mut Vec<(usize, usize)>) {
    while start < end && chars[start].is_whitespace() {
        start += 1;
    }
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if start < end {
        spans.push((start, end));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locate::char_slice;

    fn sentences(text: &str) -> Vec<&str> {
        split_sentences(text)
            .into_iter()
            .map(|(s, e)| char_slice(text, s, e).unwrap())
            .collect()
    }

    #[test]
    fn abbreviation_does_not_split() {
        assert_eq!(
            sentences("Dr. Kohl came to Beijing. He left."),
            vec!["Dr. Kohl came to Beijing.", "He left."]
        );
    }

    #[test]
    fn initials_do_not_split() {
        assert_eq!(
            sentences("J.K. Rowling wrote it. She lives in the U.S. Army base? No! 3 more."),
            vec!["J.K. Rowling wrote it.", "She lives in the U.S. Army base?", "No!", "3 more."]
        );
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(sentences("It cost approx. five. so what"), vec!["It cost approx. five. so what"]);
    }

    #[test]
    fn quotes_and_brackets() {
        assert_eq!(
            sentences("He said \"Go.\" Then (she left.) \"Why?\" he asked."),
            vec!["He said \"Go.\"", "Then (she left.)", "\"Why?\" he asked."]
        );
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(split_sentences("One sentence"), vec![(0, 12)]);
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("   \n ").is_empty());
        assert_eq!(split_sentences("  Hi.  Yo. "), vec![(2, 5), (7, 10)]);
    }

    #[test]
    fn decimals_stay_whole() {
        assert_eq!(sentences("Pi is 3.14 roughly. Yes."), vec!["Pi is 3.14 roughly.", "Yes."]);
    }
}
