//! Lexical geoparsing of clue sentences.
//!
//! Country names, demonyms and aliases from a [`CountryLexicon`] (plus an
//! optional list of non-country places) are compiled into a [`Gazetteer`].
//! Matching is case-insensitive over word tokens, so a term only ever matches
//! at token boundaries. When one mention lies strictly inside a longer one
//! ("Guinea" inside "Papua New Guinea", "America" inside "South America") only
//! the longer mention counts; all other mentions count, so a sentence naming
//! two countries yields both.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Clue;
use crate::error::{Error, Result};
use crate::labels::{is_alpha3, LabelSet};

/// Lexicon shipped with the crate.
pub const DEFAULT_LEXICON_JSON: &str = include_str!("../data/lexicon.json");
/// Well-known non-country places (regions, landmarks, cities) that mark a
/// sentence as location-bearing without naming a country.
pub const DEFAULT_PLACES: &str = include_str!("../data/places.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountryEntry {
    pub canonical_name: String,
    #[serde(default)]
    pub names: Vec<String>,
    #[serde(default)]
    pub demonyms: Vec<String>,
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl CountryEntry {
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str())
            .chain(self.names.iter().map(String::as_str))
            .chain(self.demonyms.iter().map(String::as_str))
            .chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountryLexicon {
    entries: BTreeMap<String, CountryEntry>,
}

impl CountryLexicon {
    /// Validates codes and terms. A normalized term may belong to only one
    /// country: ambiguous forms must be resolved in the data file.
    pub fn new(entries: BTreeMap<String, CountryEntry>) -> Result<Self> {
        let mut owner: HashMap<Vec<String>, &str> = HashMap::new();
        for (code, entry) in &entries {
            if !is_alpha3(code) {
                return Err(Error::Lexicon(format!("bad country code {code:?}")));
            }
            for term in entry.terms() {
                let key = normalize_term(term);
                if key.is_empty() {
                    return Err(Error::Lexicon(format!("empty term for {code}")));
                }
                if let Some(prev) = owner.insert(key, code) {
                    if prev != code {
                        return Err(Error::Lexicon(format!(
                            "term {term:?} claimed by both {prev} and {code}"
                        )));
                    }
                }
            }
        }
        Ok(CountryLexicon { entries })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let entries: BTreeMap<String, CountryEntry> =
            serde_json::from_str(text).map_err(|e| Error::json("lexicon", e))?;
        CountryLexicon::new(entries)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        CountryLexicon::from_json(&text)
    }

    pub fn builtin() -> Self {
        CountryLexicon::from_json(DEFAULT_LEXICON_JSON).expect("bundled lexicon is valid")
    }

    pub fn entries(&self) -> &BTreeMap<String, CountryEntry> {
        &self.entries
    }

    pub fn get(&self, code: &str) -> Option<&CountryEntry> {
        self.entries.get(code)
    }

    /// Fails with every label-set code that has no lexicon entry.
    pub fn check_covers(&self, labels: &LabelSet) -> Result<()> {
        let missing: Vec<String> = labels
            .codes()
            .iter()
            .filter(|c| !self.entries.contains_key(*c))
            .cloned()
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingCountries(missing))
        }
    }
}

/// Parses a place list: one term per line, `#` comments allowed.
pub fn parse_places(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// Maximal runs of alphanumeric characters with their byte offsets.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        match (ch.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Token {
                    text: &text[s..i],
                    start: s,
                    end: i,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &text[s..],
            start: s,
            end: text.len(),
        });
    }
    out
}

pub fn normalize_term(term: &str) -> Vec<String> {
    tokenize(term).iter().map(|t| t.text.to_lowercase()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Target {
    Country(String),
    Place,
}

/// A located mention, in token positions `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub target: Target,
}

#[derive(Debug, Clone)]
pub struct Gazetteer {
    terms: HashMap<Vec<String>, Vec<Target>>,
    max_len: usize,
}

impl Gazetteer {
    pub fn new(lexicon: &CountryLexicon, places: &[String]) -> Self {
        let mut terms: HashMap<Vec<String>, Vec<Target>> = HashMap::new();
        for (code, entry) in lexicon.entries() {
            for term in entry.terms() {
                let targets = terms.entry(normalize_term(term)).or_default();
                let t = Target::Country(code.clone());
                if !targets.contains(&t) {
                    targets.push(t);
                }
            }
        }
        for place in places {
            let key = normalize_term(place);
            if key.is_empty() {
                continue;
            }
            let targets = terms.entry(key).or_default();
            if !targets.contains(&Target::Place) {
                targets.push(Target::Place);
            }
        }
        let max_len = terms.keys().map(Vec::len).max().unwrap_or(0);
        Gazetteer { terms, max_len }
    }

    pub fn countries_only(lexicon: &CountryLexicon) -> Self {
        Gazetteer::new(lexicon, &[])
    }

    pub fn builtin() -> Self {
        Gazetteer::new(&CountryLexicon::builtin(), &parse_places(DEFAULT_PLACES))
    }

    /// All mentions that are not strictly contained in a longer mention.
    pub fn mentions(&self, text: &str) -> Vec<Mention> {
        let tokens: Vec<String> = tokenize(text).iter().map(|t| t.text.to_lowercase()).collect();
        let mut found = Vec::new();
        for start in 0..tokens.len() {
            let longest = self.max_len.min(tokens.len() - start);
            for len in 1..=longest {
                if let Some(targets) = self.terms.get(&tokens[start..start + len]) {
                    for target in targets {
                        found.push(Mention {
                            start,
                            end: start + len,
                            target: target.clone(),
                        });
                    }
                }
            }
        }
        let spans: Vec<(usize, usize)> = found.iter().map(|m| (m.start, m.end)).collect();
        found.retain(|m| {
            !spans
                .iter()
                .any(|&(s, e)| s <= m.start && m.end <= e && (e - s) > (m.end - m.start))
        });
        found
    }

    pub fn match_countries(&self, text: &str) -> BTreeSet<String> {
        self.mentions(text)
            .into_iter()
            .filter_map(|m| match m.target {
                Target::Country(code) => Some(code),
                Target::Place => None,
            })
            .collect()
    }

    pub fn has_location(&self, text: &str) -> bool {
        !self.mentions(text).is_empty()
    }
}

/// One-off country matching against a lexicon. Build a [`Gazetteer`] once
/// when matching many sentences.
pub fn match_countries(text: &str, lexicon: &CountryLexicon) -> BTreeSet<String> {
    Gazetteer::countries_only(lexicon).match_countries(text)
}

/// Clue/country association used as attention supervision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabelMatrix {
    n_clues: usize,
    country_to_clues: BTreeMap<String, Vec<usize>>,
    clue_to_countries: Vec<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PseudoLabelFile {
    n_clues: usize,
    country_to_clues: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoLabelSummary {
    pub n_clues: usize,
    pub n_countries: usize,
    pub mean_clues_per_country: f64,
    pub mean_fraction_of_corpus: f64,
    pub unmatched_clues: usize,
    pub per_country: BTreeMap<String, usize>,
}

impl PseudoLabelMatrix {
    pub fn from_country_map(n_clues: usize, mut country_to_clues: BTreeMap<String, Vec<usize>>) -> Result<Self> {
        let mut clue_to_countries = vec![Vec::new(); n_clues];
        for (code, ids) in country_to_clues.iter_mut() {
            if !is_alpha3(code) {
                return Err(Error::Data(format!("bad country code {code:?}")));
            }
            ids.sort_unstable();
            ids.dedup();
            for &id in ids.iter() {
                if id >= n_clues {
                    return Err(Error::Data(format!(
                        "clue id {id} out of range for {n_clues} clues ({code})"
                    )));
                }
                clue_to_countries[id].push(code.clone());
            }
        }
        // BTreeMap iteration keeps each inner list sorted.
        Ok(PseudoLabelMatrix {
            n_clues,
            country_to_clues,
            clue_to_countries,
        })
    }

    pub fn n_clues(&self) -> usize {
        self.n_clues
    }

    pub fn country_to_clues(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.country_to_clues
    }

    pub fn clues_for(&self, code: &str) -> Option<&[usize]> {
        self.country_to_clues.get(code).map(Vec::as_slice)
    }

    pub fn countries_for(&self, clue: usize) -> &[String] {
        &self.clue_to_countries[clue]
    }

    /// Binary attention target for images of `code`: 1 at the clue ids that
    /// mention the country, 0 elsewhere.
    pub fn target_vector(&self, code: &str) -> Result<Vec<f64>> {
        let ids = self
            .country_to_clues
            .get(code)
            .ok_or_else(|| Error::UnknownCountry(code.to_string()))?;
        let mut v = vec![0.0; self.n_clues];
        for &i in ids {
            v[i] = 1.0;
        }
        Ok(v)
    }

    pub fn summary(&self, labels: &LabelSet) -> PseudoLabelSummary {
        let per_country: BTreeMap<String, usize> = labels
            .codes()
            .iter()
            .map(|c| (c.clone(), self.clues_for(c).map_or(0, <[usize]>::len)))
            .collect();
        let n = per_country.len().max(1) as f64;
        let mean = per_country.values().sum::<usize>() as f64 / n;
        PseudoLabelSummary {
            n_clues: self.n_clues,
            n_countries: per_country.len(),
            mean_clues_per_country: mean,
            mean_fraction_of_corpus: if self.n_clues == 0 {
                0.0
            } else {
                mean / self.n_clues as f64
            },
            unmatched_clues: self.clue_to_countries.iter().filter(|c| c.is_empty()).count(),
            per_country,
        }
    }

    pub fn to_json(&self) -> String {
        let file = PseudoLabelFile {
            n_clues: self.n_clues,
            country_to_clues: self.country_to_clues.clone(),
        };
        serde_json::to_string_pretty(&file).expect("serializable") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PseudoLabelFile = serde_json::from_str(text).map_err(|e| Error::json("pseudo labels", e))?;
        PseudoLabelMatrix::from_country_map(file.n_clues, file.country_to_clues)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PseudoLabelMatrix::from_json(&text)
    }
}

/// Geoparses every clue, fills `Clue::countries`, and builds the
/// clue/country maps.
///
/// Every label-set country gets an entry (possibly empty). Matched codes
/// outside the label set are kept in the maps but never used as targets.
pub fn build_pseudo_labels(
    clues: &mut [Clue],
    lexicon: &CountryLexicon,
    labels: &LabelSet,
) -> Result<PseudoLabelMatrix> {
    lexicon.check_covers(labels)?;
    for (i, clue) in clues.iter().enumerate() {
        if clue.id != i {
            return Err(Error::Data(format!(
                "clue ids not dense: position {i} has id {}",
                clue.id
            )));
        }
    }
    let gazetteer = Gazetteer::countries_only(lexicon);
    let mut map: BTreeMap<String, Vec<usize>> = labels.codes().iter().map(|c| (c.clone(), Vec::new())).collect();
    for clue in clues.iter_mut() {
        let countries = gazetteer.match_countries(&clue.text);
        for code in &countries {
            map.entry(code.clone()).or_default().push(clue.id);
        }
        clue.countries = countries.into_iter().collect();
    }
    PseudoLabelMatrix::from_country_map(clues.len(), map)
}
