/// Replaces every maximal run of ASCII digits.
pub const NUM_TOKEN: &str = "NUM";

/// Lowercases, splits on whitespace, emits each punctuation character as its
/// own token and collapses digit runs to [`NUM_TOKEN`]. An apostrophe between
/// two letters stays inside the word.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let chars: Vec<char> = sentence.chars().collect();
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            flush(&mut word, &mut out);
            i += 1;
        } else if c.is_ascii_digit() {
            flush(&mut word, &mut out);
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            out.push(NUM_TOKEN.to_string());
        } else if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
            i += 1;
        } else if matches!(c, '\'' | '\u{2019}')
            && !word.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphabetic())
        {
            word.push('\'');
            i += 1;
        } else {
            flush(&mut word, &mut out);
            out.push(c.to_string());
            i += 1;
        }
    }
    flush(&mut word, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn punctuation_is_separate() {
        assert_eq!(toks("Young and talented!"), ["young", "and", "talented", "!"]);
    }

    #[test]
    fn empty_sentence() {
        assert!(toks("").is_empty());
    }

    #[test]
    fn digit_runs_collapse() {
        assert_eq!(toks("ages 20-30"), ["ages", "NUM", "-", "NUM"]);
        assert_eq!(toks("20s"), ["NUM", "s"]);
    }

    #[test]
    fn apostrophes_inside_words() {
        assert_eq!(toks("Don't 'quote'"), ["don't", "'", "quote", "'"]);
    }

    #[test]
    fn tokens_never_contain_whitespace() {
        for t in toks("A  b\tc\n(d), e.") {
            assert!(!t.is_empty() && !t.contains(char::is_whitespace));
        }
    }
}
