//! Text normalization: word tokenization and rule-based sentence segmentation.

/// English stopwords removed by [`tokenize`].
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself",
    "him", "himself", "his", "how", "if", "in", "into", "is", "it", "its", "itself", "just", "me",
    "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once", "only",
    "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same", "she", "should", "so",
    "some", "such", "than", "that", "the", "their", "theirs", "them", "themselves", "then",
    "there", "these", "they", "this", "those", "through", "to", "too", "under", "until", "up",
    "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why",
    "will", "with", "would", "you", "your", "yours", "yourself", "yourselves", "ll", "re", "ve",
    "don", "doesn", "didn", "isn", "wasn", "won", "cannot", "also", "us",
];

/// Tokens that end with a period but do not end a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "vs.", "etc.", "e.g.", "i.e.",
    "inc.", "ltd.", "co.", "no.", "approx.", "dept.", "fig.", "jan.", "feb.", "mar.", "apr.",
    "jun.", "jul.", "aug.", "sep.", "sept.", "oct.", "nov.", "dec.",
];

pub const MIN_TOKEN_CHARS: usize = 2;

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Lowercases, splits on non-alphanumeric characters and drops short tokens
/// and stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|piece| !piece.is_empty())
        .map(str::to_lowercase)
        .filter(|tok| tok.chars().count() >= MIN_TOKEN_CHARS && !is_stopword(tok))
        .collect()
}

/// Splits text on `.`, `?` or `!` when followed by whitespace and then an
/// uppercase letter or digit. Tokens in [`ABBREVIATIONS`] never end a
/// sentence. Returned sentences are trimmed and never empty.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut resume = 0usize;

    for (pos, &(byte_idx, c)) in chars.iter().enumerate() {
        if pos < resume || !matches!(c, '.' | '?' | '!') {
            continue;
        }
        // Need at least one whitespace char, then an uppercase letter or digit.
        let mut next = pos + 1;
        while next < chars.len() && matches!(chars[next].1, '.' | '?' | '!' | '"' | '\'' | ')') {
            next += 1;
        }
        let ws_start = next;
        while next < chars.len() && chars[next].1.is_whitespace() {
            next += 1;
        }
        if next == ws_start || next >= chars.len() {
            continue;
        }
        let follower = chars[next].1;
        if !(follower.is_uppercase() || follower.is_ascii_digit()) {
            continue;
        }
        if c == '.' && ends_with_abbreviation(&text[start..byte_idx + 1]) {
            continue;
        }
        let end = chars[ws_start].0;
        push_trimmed(&mut sentences, &text[start..end]);
        start = chars[next].0;
        resume = next;
    }
    push_trimmed(&mut sentences, &text[start..]);
    sentences
}

fn ends_with_abbreviation(fragment: &str) -> bool {
    let last = fragment
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("")
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    ABBREVIATIONS.contains(&last.as_str())
}

fn push_trimmed(out: &mut Vec<String>, piece: &str) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_drops_stopwords_and_short_tokens() {
        assert_eq!(
            tokenize("My phone's screen CRACKED!"),
            vec!["phone", "screen", "cracked"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a I x 42 ok"), vec!["42", "ok"]);
    }

    #[test]
    fn segments_on_terminators() {
        assert_eq!(
            segment_sentences("Please reset it. Then reply."),
            vec!["Please reset it.", "Then reply."]
        );
        assert_eq!(
            segment_sentences("Is it charged? Try again!"),
            vec!["Is it charged?", "Try again!"]
        );
        assert_eq!(
            segment_sentences("It costs 20 dollars. 3 days left."),
            vec!["It costs 20 dollars.", "3 days left."]
        );
    }

    #[test]
    fn abbreviation_guard() {
        assert_eq!(
            segment_sentences("Contact Mr. Smith today."),
            vec!["Contact Mr. Smith today."]
        );
        assert_eq!(
            segment_sentences("Bring ID, e.g. Passport. Thanks."),
            vec!["Bring ID, e.g. Passport.", "Thanks."]
        );
    }

    #[test]
    fn no_split_before_lowercase_or_without_space() {
        assert_eq!(segment_sentences("Version 2.0 is out. ok then"), vec!["Version 2.0 is out. ok then"]);
        assert!(segment_sentences("   ").is_empty());
        assert!(segment_sentences("").is_empty());
    }

    proptest! {
        #[test]
        fn segmentation_keeps_all_non_whitespace(text in "[A-Za-z0-9 .?!,]{0,120}") {
            let joined: String = segment_sentences(&text).concat();
            let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            prop_assert_eq!(strip(&joined), strip(&text));
        }

        #[test]
        fn sentences_are_never_empty(text in "\\PC{0,80}") {
            for s in segment_sentences(&text) {
                prop_assert!(!s.trim().is_empty());
            }
        }
    }
}
