use std::collections::BTreeSet;

use proptest::prelude::*;

use selssm::text::{
    build_vocab, encode, generate, generate_traced, split, tokenize, word_count, Corpus, GeneratorSpec, Vocab, PAD,
    UNK,
};

/// Opening words of every positive pulmonary-embolism finding.
const PE_POSITIVE_MARKERS: &[&str] = &[
    "There is an acute filling defect",
    "Occlusive embolus is seen",
    "Saddle embolus is present",
    "Acute pulmonary emboli are identified",
];

/// Word index where the first positive finding starts, found from the text alone.
fn first_marker(text: &str) -> Option<usize> {
    let words: Vec<&str> = text.split_whitespace().collect();
    (0..words.len()).find(|&i| {
        PE_POSITIVE_MARKERS.iter().any(|m| {
            let mw: Vec<&str> = m.split_whitespace().collect();
            words.len() >= i + mw.len() && words[i..i + mw.len()] == mw[..]
        })
    })
}

fn check_split(labels: &[usize], seed: u64, sizes: (usize, usize, usize)) {
    let s = split(labels, seed).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), sizes);
    let all: BTreeSet<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
    assert_eq!(all.len(), labels.len(), "splits overlap");
    assert_eq!(all, (0..labels.len()).collect());

    let k = labels.iter().max().unwrap() + 1;
    let n = labels.len() as f64;
    for part in [&s.train, &s.val, &s.test] {
        for c in 0..k {
            let expected = part.len() as f64 * labels.iter().filter(|&&l| l == c).count() as f64 / n;
            let got = part.iter().filter(|&&i| labels[i] == c).count() as f64;
            assert!((got - expected).abs() <= 1.0, "class {c}: {got} vs {expected}");
        }
    }
    assert_eq!(split(labels, seed).unwrap(), s);
}

#[test]
fn dvt_defaults() {
    let (corpus, traces) = generate_traced(&GeneratorSpec::dvt()).unwrap();
    assert_eq!(corpus.class_counts(), [780, 110, 110]);
    assert!(corpus.documents.iter().all(|d| word_count(&d.text) < 170));
    for (d, t) in corpus.documents.iter().zip(&traces) {
        assert_eq!(word_count(&d.text), t.words);
        let prefix: Vec<&str> = d.text.split_whitespace().take(t.evidence_start + t.evidence_words).collect();
        assert!(tokenize(&prefix.join(" ")).len() <= 128, "{}", d.id);
    }
    check_split(&corpus.labels(), 0, (720, 80, 200));
}

#[test]
fn pe_defaults() {
    let spec = GeneratorSpec::pe();
    let (corpus, traces) = generate_traced(&spec).unwrap();
    assert_eq!(corpus.class_counts(), [792, 108]);
    let long = corpus.documents.iter().filter(|d| word_count(&d.text) > 600).count();
    assert!(long * 10 >= corpus.len(), "{long} long documents");

    let offset = spec.evidence.offset_words;
    let mut late = 0;
    for (d, t) in corpus.documents.iter().zip(&traces) {
        if d.label == 0 {
            assert_eq!(first_marker(&d.text), None, "{}", d.id);
            continue;
        }
        let start = first_marker(&d.text).expect("positive finding");
        assert_eq!(start, t.evidence_start, "{}", d.id);
        if start >= offset {
            late += 1;
        } else {
            let prefix: Vec<&str> = d.text.split_whitespace().take(start + t.evidence_words).collect();
            assert!(tokenize(&prefix.join(" ")).len() <= 128, "{}", d.id);
        }
    }
    assert_eq!(late, (0.3f64 * 108.0).floor() as usize);
    check_split(&corpus.labels(), 0, (648, 72, 180));
}

#[test]
fn late_fraction_is_exact() {
    for frac in [0.0, 0.1, 0.5, 1.0] {
        let mut spec = GeneratorSpec::pe();
        spec.n_docs = 300;
        spec.evidence.late_frac = frac;
        let corpus = generate(&spec).unwrap();
        let positives = corpus.documents.iter().filter(|d| d.label == 1).count();
        let late = corpus
            .documents
            .iter()
            .filter(|d| d.label == 1 && first_marker(&d.text).unwrap() >= spec.evidence.offset_words)
            .count();
        assert_eq!(late, (frac * positives as f64).floor() as usize, "fraction {frac}");
        if frac == 0.0 {
            for d in corpus.documents.iter().filter(|d| d.label == 1) {
                assert!(first_marker(&d.text).unwrap() < 100, "{}", d.id);
            }
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let mut spec = GeneratorSpec::pe();
    spec.n_docs = 120;
    spec.seed = 9;
    let a = generate(&spec).unwrap().to_jsonl();
    assert_eq!(a, generate(&spec).unwrap().to_jsonl());
    spec.seed = 10;
    assert_ne!(a, generate(&spec).unwrap().to_jsonl());
}

#[test]
fn corpus_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dvt.jsonl");
    let mut spec = GeneratorSpec::dvt();
    spec.n_docs = 40;
    let corpus = generate(&spec).unwrap();
    corpus.save(&path).unwrap();
    let back = Corpus::load(&path).unwrap();
    assert_eq!(back.documents, corpus.documents);
    assert_eq!(back.class_names, corpus.class_names);
}

#[test]
fn vocab_comes_from_training_documents_only() {
    let docs = [tokenize("a a b"), tokenize("c")];
    let v = build_vocab(&docs[..1], 1).unwrap();
    assert_eq!((v.id("a"), v.id("b"), v.id("c")), (2, 3, UNK));
    let v2 = build_vocab(&docs[..1], 2).unwrap();
    assert_eq!(v2.len(), 3);
    assert_eq!(Vocab::from_tsv(&v.to_tsv()).unwrap(), v);
}

#[test]
fn encode_length_limits() {
    let tokens: Vec<String> = (0..600).map(|i| format!("w{}", i % 7)).collect();
    let v = build_vocab(&[tokens.clone()], 1).unwrap();
    let short = encode(&tokens, &v, 512);
    assert_eq!((short.ids.len(), short.len(), short.truncated), (512, 512, true));
    let long = encode(&tokens, &v, 8000);
    assert_eq!((long.len(), long.truncated), (600, false));
    assert!(long.ids[600..].iter().all(|&i| i == PAD));
}

proptest! {
    #[test]
    fn tokens_are_lowercase_and_punctuation_is_isolated(text in "[A-Za-z0-9 .,;:()\\-]{0,60}") {
        for tok in tokenize(&text) {
            prop_assert!(!tok.is_empty());
            prop_assert!(!tok.chars().any(|c| c.is_whitespace() || c.is_ascii_uppercase()));
            let punct = tok.chars().filter(|c| c.is_ascii_punctuation()).count();
            prop_assert!(punct == 0 || tok.chars().count() == 1);
        }
        prop_assert_eq!(tokenize(&text), tokenize(&text.to_uppercase()));
    }

    #[test]
    fn encode_mask_matches_ids(words in prop::collection::vec("[a-e]{1,2}", 0..40), max_len in 1usize..50) {
        let v = build_vocab(&[words.clone()], 1).unwrap();
        let e = encode(&words, &v, max_len);
        prop_assert_eq!(e.ids.len(), max_len);
        prop_assert_eq!(e.mask.len(), max_len);
        prop_assert_eq!(e.len(), words.len().min(max_len));
        prop_assert_eq!(e.truncated, words.len() > max_len);
        for (i, (&id, &m)) in e.ids.iter().zip(&e.mask).enumerate() {
            prop_assert_eq!(m, i < words.len());
            prop_assert_eq!(id == PAD, !m);
        }
    }

    #[test]
    fn split_is_a_stratified_partition(labels in prop::collection::vec(0usize..3, 10..300), seed in any::<u64>()) {
        let s = split(&labels, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for c in 0..3 {
            let n_c = labels.iter().filter(|&&l| l == c).count() as f64;
            let in_test = s.test.iter().filter(|&&i| labels[i] == c).count() as f64;
            prop_assert!((in_test - 0.2 * n_c).abs() <= 0.5 + 1e-9);
        }
    }
}
