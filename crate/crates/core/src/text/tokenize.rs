/// Lowercases, splits on whitespace and splits every ASCII punctuation
/// mark off as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for c in word.chars() {
            if c.is_ascii_punctuation() {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.extend(c.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Whitespace-delimited word count, the unit report lengths are given in.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
