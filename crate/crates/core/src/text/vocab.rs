use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Dense token ↔ id map with `PAD = 0` and `UNK = 1` reserved. The
/// reserved strings contain punctuation, so the tokenizer never emits them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or `UNK`.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One `token<TAB>id` line per entry, in id order.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            s.push_str(t);
            s.push('\t');
            s.push_str(&i.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |line: usize, detail: String| Error::Parse {
            what: format!("vocab line {line}"),
            detail,
        };
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad(n + 1, "expected token<TAB>id".into()))?;
            let id: usize = id.parse().map_err(|e| bad(n + 1, format!("{e}")))?;
            if id != tokens.len() {
                return Err(bad(n + 1, format!("id {id} out of order, expected {}", tokens.len())));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(bad(1, format!("ids 0 and 1 must be {PAD_TOKEN} and {UNK_TOKEN}")));
        }
        let v = Self::from_tokens(tokens);
        if v.index.len() != v.tokens.len() {
            return Err(bad(1, "duplicate token".into()));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::atomic_write(path, self.to_tsv().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&fsio::read_to_string(path)?)
    }
}

/// Vocabulary of the tokens occurring at least `min_freq` times in `docs`,
/// ordered by descending frequency then lexicographically, ids from 2.
pub fn build_vocab<S: AsRef<[String]>>(docs: &[S], min_freq: usize) -> Result<Vocab> {
    if docs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if min_freq == 0 {
        return Err(Error::InvalidConfig("min_freq must be ≥ 1".into()));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        for t in doc.as_ref() {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(t, f)| f >= min_freq && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
    Ok(Vocab::from_tokens(tokens))
}

/// Fixed-length model input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    /// Exactly `max_len` ids, right-padded with `PAD`.
    pub ids: Vec<usize>,
    /// `true` for real tokens.
    pub mask: Vec<bool>,
    pub truncated: bool,
}

impl Encoded {
    /// Number of real (unmasked) tokens.
    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Maps tokens to ids (`UNK` when absent), cutting at `max_len` and padding
/// shorter sequences to `max_len`.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocab, max_len: usize) -> Encoded {
    assert!(max_len >= 1, "max_len must be ≥ 1");
    let kept = tokens.len().min(max_len);
    let mut ids: Vec<usize> = tokens[..kept].iter().map(|t| vocab.id(t.as_ref())).collect();
    let mut mask = vec![true; kept];
    ids.resize(max_len, PAD);
    mask.resize(max_len, false);
    Encoded {
        ids,
        mask,
        truncated: tokens.len() > max_len,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn doc(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn frequency_order_and_min_freq() {
        let docs = [doc("a a b")];
        let v = build_vocab(&docs, 1).unwrap();
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "a", "b"]);
        assert_eq!((v.id("a"), v.id("b")), (2, 3));
        let v2 = build_vocab(&docs, 2).unwrap();
        assert_eq!(v2.tokens(), ["<pad>", "<unk>", "a"]);
        assert_eq!(v2.id("b"), UNK);
        assert!(matches!(build_vocab::<Vec<String>>(&[], 1), Err(Error::EmptyTrainingSet)));
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_vocab(&[doc("z y x y z")], 1).unwrap();
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "y", "z", "x"]);
    }

    #[test]
    fn tsv_round_trip() {
        let v = build_vocab(&[doc("no acute dvt. no")], 1).unwrap();
        let text = v.to_tsv();
        assert!(text.starts_with("<pad>\t0\n<unk>\t1\nno\t2\n"));
        assert_eq!(Vocab::from_tsv(&text).unwrap(), v);
        assert!(Vocab::from_tsv("a\t0\n").is_err());
        assert!(Vocab::from_tsv("<pad>\t0\n<unk>\t2\n").is_err());
    }

    #[test]
    fn encode_truncates_and_pads() {
        let v = build_vocab(&[doc("w")], 1).unwrap();
        let toks = vec!["w"; 600];
        let e = encode(&toks, &v, 512);
        assert_eq!((e.ids.len(), e.len(), e.truncated), (512, 512, true));
        let e = encode(&toks, &v, 8000);
        assert_eq!((e.len(), e.truncated), (600, false));
        assert_eq!(e.ids.len(), 8000);
        assert!(e.ids[600..].iter().all(|&i| i == PAD));
        let e = encode(&["w", "oov"], &v, 3);
        assert_eq!(e.ids, [2, UNK, PAD]);
        assert_eq!(e.mask, [true, true, false]);
    }
}
