mod common;

use g3_core::corpus::{
    compute_corpus_stats, extract_clues, parse_clues, split_sentences, write_clues_jsonl, HeadingMap, RawGuidebook,
};
use g3_core::geoparse::{parse_places, CountryLexicon, Gazetteer, DEFAULT_PLACES};

fn miniguide() -> RawGuidebook {
    let text = std::fs::read_to_string(common::fixtures().join("miniguide.txt")).unwrap();
    RawGuidebook::parse("miniguide", &text)
}

fn sentences(guide: &RawGuidebook) -> Vec<String> {
    guide.sections.iter().flat_map(|s| split_sentences(&s.body)).collect()
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Grep-style scan: does any lexicon term or place occur at token boundaries?
fn mentions_location(sentence: &str) -> bool {
    let lexicon = CountryLexicon::builtin();
    let mut terms: Vec<Vec<String>> = lexicon
        .entries()
        .values()
        .flat_map(|e| e.terms().map(tokens).collect::<Vec<_>>())
        .collect();
    terms.extend(parse_places(DEFAULT_PLACES).iter().map(|p| tokens(p)));
    let toks = tokens(sentence);
    terms
        .iter()
        .filter(|t| !t.is_empty() && t.len() <= toks.len())
        .any(|t| toks.windows(t.len()).any(|w| w == &t[..]))
}

#[test]
fn miniguide_sentence_count_matches_hand_count() {
    let guide = miniguide();
    assert_eq!(guide.sections.len(), 6);
    assert_eq!(sentences(&guide).len(), 18);
}

#[test]
fn miniguide_clues_match_scan_oracle() {
    let guide = miniguide();
    let clues = extract_clues(&guide, &Gazetteer::builtin(), &HeadingMap::default());
    let expected: Vec<String> = sentences(&guide).into_iter().filter(|s| mentions_location(s)).collect();
    assert_eq!(clues.len(), 12);
    assert_eq!(clues.iter().map(|c| c.text.clone()).collect::<Vec<_>>(), expected);
    assert!(clues.iter().enumerate().all(|(i, c)| c.id == i));
    assert!(clues
        .iter()
        .any(|c| c.text == "Sweden often has white dashes on the sides of its roads."));
}

#[test]
fn synthetic_guide_clues_match_scan_oracle() {
    let text = std::fs::read_to_string(common::fixtures().join("synthetic/guide.txt")).unwrap();
    let guide = RawGuidebook::parse("synthetic", &text);
    let clues = extract_clues(&guide, &Gazetteer::builtin(), &HeadingMap::default());
    let expected = sentences(&guide).into_iter().filter(|s| mentions_location(s)).count();
    assert_eq!(clues.len(), expected);
    assert_eq!(clues.len(), 120);
}

#[test]
fn extraction_is_byte_deterministic() {
    let run = || {
        let clues = extract_clues(&miniguide(), &Gazetteer::builtin(), &HeadingMap::default());
        let mut buf = Vec::new();
        write_clues_jsonl(&clues, &mut buf).unwrap();
        buf
    };
    let a = run();
    assert_eq!(a, run());
    let back = parse_clues(std::str::from_utf8(&a).unwrap()).unwrap();
    assert_eq!(back.len(), 12);
}

#[test]
fn stats_are_consistent() {
    let clues = extract_clues(&miniguide(), &Gazetteer::builtin(), &HeadingMap::default());
    let stats = compute_corpus_stats(&clues);
    assert_eq!(stats.n_clues, 12);
    assert_eq!(stats.clues_per_cue_type.values().sum::<usize>(), 12);
    let words: usize = clues.iter().map(|c| c.text.split_whitespace().count()).sum();
    assert!((stats.mean_words - words as f64 / 12.0).abs() < 1e-12);
    assert!(stats.unique_normalized_forms <= stats.unique_words);
}
