//! Guidebook ingestion: sections, sentences, and location-bearing clues.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geoparse::{tokenize, Gazetteer};

pub const DEFAULT_HEADING_MAP_JSON: &str = include_str!("../data/heading_map.json");

/// Visual cue category of a clue, derived from its section heading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CueTag {
    DrivingSide,
    RoadLines,
    LicensePlates,
    Signage,
    LanguageScript,
    Architecture,
    Vegetation,
    Soil,
    Bollards,
    UtilityPoles,
    Flags,
    CameraCar,
    Other,
    Unknown,
}

impl CueTag {
    pub const ALL: [CueTag; 14] = [
        CueTag::DrivingSide,
        CueTag::RoadLines,
        CueTag::LicensePlates,
        CueTag::Signage,
        CueTag::LanguageScript,
        CueTag::Architecture,
        CueTag::Vegetation,
        CueTag::Soil,
        CueTag::Bollards,
        CueTag::UtilityPoles,
        CueTag::Flags,
        CueTag::CameraCar,
        CueTag::Other,
        CueTag::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CueTag::DrivingSide => "driving side",
            CueTag::RoadLines => "road lines",
            CueTag::LicensePlates => "license plates",
            CueTag::Signage => "signage",
            CueTag::LanguageScript => "language/script",
            CueTag::Architecture => "architecture",
            CueTag::Vegetation => "vegetation",
            CueTag::Soil => "soil",
            CueTag::Bollards => "bollards",
            CueTag::UtilityPoles => "utility poles",
            CueTag::Flags => "flags",
            CueTag::CameraCar => "camera-car artifacts",
            CueTag::Other => "other",
            CueTag::Unknown => "unknown",
        }
    }
}

impl fmt::Display for CueTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CueTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CueTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown cue type {s:?}")))
    }
}

impl Serialize for CueTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CueTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Deserialize)]
struct HeadingRule {
    pattern: String,
    tag: CueTag,
}

/// Ordered heading → cue-type rules.
///
/// A rule fires when its pattern tokens appear contiguously in the heading,
/// the last one as a prefix ("sign" fires on "Road signs"). The first firing
/// rule wins; a heading with no firing rule is `other`, text before the first
/// heading is `unknown`.
#[derive(Debug, Clone)]
pub struct HeadingMap {
    rules: Vec<(Vec<String>, CueTag)>,
}

impl HeadingMap {
    pub fn from_json(text: &str) -> Result<Self> {
        let rules: Vec<HeadingRule> = serde_json::from_str(text).map_err(|e| Error::json("heading map", e))?;
        let rules = rules
            .into_iter()
            .map(|r| {
                let toks: Vec<String> = tokenize(&r.pattern).iter().map(|t| t.text.to_lowercase()).collect();
                if toks.is_empty() {
                    Err(Error::Data(format!("empty heading pattern for {}", r.tag)))
                } else {
                    Ok((toks, r.tag))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HeadingMap { rules })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        HeadingMap::from_json(&text)
    }

    pub fn tag_for(&self, heading: Option<&str>) -> CueTag {
        let Some(heading) = heading else {
            return CueTag::Unknown;
        };
        let toks: Vec<String> = tokenize(heading).iter().map(|t| t.text.to_lowercase()).collect();
        for (pattern, tag) in &self.rules {
            let n = pattern.len();
            if toks.len() < n {
                continue;
            }
            let hit = toks
                .windows(n)
                .any(|w| w[..n - 1] == pattern[..n - 1] && w[n - 1].starts_with(pattern[n - 1].as_str()));
            if hit {
                return *tag;
            }
        }
        CueTag::Other
    }
}

impl Default for HeadingMap {
    fn default() -> Self {
        HeadingMap::from_json(DEFAULT_HEADING_MAP_JSON).expect("bundled heading map is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    /// `None` for text that precedes the first heading.
    pub heading: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawGuidebook {
    pub source_id: String,
    pub sections: Vec<Section>,
}

impl RawGuidebook {
    /// Lines starting with `"# "` open a new section; everything else is body.
    pub fn parse(source_id: impl Into<String>, text: &str) -> Self {
        let mut sections = Vec::new();
        let mut heading: Option<String> = None;
        let mut body = String::new();
        let mut flush = |heading: &Option<String>, body: &mut String| {
            if heading.is_some() || !body.trim().is_empty() {
                sections.push(Section {
                    heading: heading.clone(),
                    body: std::mem::take(body),
                });
            }
            body.clear();
        };
        for line in text.lines() {
            if let Some(h) = line.strip_prefix("# ") {
                let h = h.trim();
                if !h.is_empty() {
                    flush(&heading, &mut body);
                    heading = Some(h.to_string());
                    continue;
                }
            }
            body.push_str(line);
            body.push('\n');
        }
        flush(&heading, &mut body);
        RawGuidebook {
            source_id: source_id.into(),
            sections,
        }
    }
}

const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "vs.", "approx.", "st.", "no.", "nos.", "mr.", "mrs.", "ms.", "dr.", "mt.", "ft.", "km.",
    "u.s.", "u.k.", "u.a.e.", "d.c.", "cf.", "ca.",
];

fn is_abbreviation(word: &str) -> bool {
    let w = word.trim_start_matches(|c: char| !c.is_alphanumeric());
    let lower = w.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    // Single initials such as "J." in names.
    let mut chars = w.chars();
    matches!((chars.next(), chars.next(), chars.next()), (Some(c), Some('.'), None) if c.is_uppercase())
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’' | '»')
}

/// Rule-based sentence segmentation.
///
/// A sentence ends after `.`, `!` or `?` (plus any closing quotes or
/// brackets) followed by whitespace, unless the word carrying the period is a
/// known abbreviation or an initial. A blank line always ends a sentence.
/// Single newlines are treated as spaces.
pub fn split_sentences(body: &str) -> Vec<String> {
    let mut out = Vec::new();
    for paragraph in split_paragraphs(body) {
        let chars: Vec<(usize, char)> = paragraph.char_indices().collect();
        let mut start = 0usize;
        let mut i = 0usize;
        while i < chars.len() {
            let (_, c) = chars[i];
            if matches!(c, '.' | '!' | '?') {
                let mut j = i + 1;
                while j < chars.len() && (is_closer(chars[j].1) || matches!(chars[j].1, '.' | '!' | '?')) {
                    j += 1;
                }
                let at_end = j == chars.len();
                let before_space = !at_end && chars[j].1.is_whitespace();
                if at_end || before_space {
                    let end_byte = if at_end { paragraph.len() } else { chars[j].0 };
                    let word_start = paragraph[..chars[i].0].rfind(char::is_whitespace).map_or(0, |p| p + 1);
                    let word = &paragraph[word_start.max(start)..chars[i].0 + c.len_utf8()];
                    if c != '.' || at_end || !is_abbreviation(word) {
                        push_sentence(&mut out, &paragraph[start..end_byte]);
                        start = end_byte;
                    }
                }
                i = j;
            } else {
                i += 1;
            }
        }
        push_sentence(&mut out, &paragraph[start..]);
    }
    out
}

fn push_sentence(out: &mut Vec<String>, raw: &str) {
    let s = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    if !s.is_empty() {
        out.push(s);
    }
}

fn split_paragraphs(body: &str) -> Vec<String> {
    let mut paragraphs = Vec::new();
    let mut current = String::new();
    for line in body.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(std::mem::take(&mut current));
            }
        } else {
            if !current.is_empty() {
                current.push(' ');
            }
            current.push_str(line.trim());
        }
    }
    if !current.is_empty() {
        paragraphs.push(current);
    }
    paragraphs
}

/// One location-bearing guidebook sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clue {
    pub id: usize,
    pub text: String,
    pub cue_type: CueTag,
    /// Sorted alpha-3 codes; empty until geoparsed.
    #[serde(default)]
    pub countries: Vec<String>,
}

impl Clue {
    pub fn new(id: usize, text: impl Into<String>, cue_type: CueTag) -> Self {
        Clue {
            id,
            text: text.into(),
            cue_type,
            countries: Vec::new(),
        }
    }
}

/// Keeps sentences with at least one gazetteer mention; ids follow input
/// order starting at 0.
pub fn filter_location_sentences<I, S>(sentences: I, gazetteer: &Gazetteer) -> Vec<Clue>
where
    I: IntoIterator<Item = (CueTag, S)>,
    S: AsRef<str>,
{
    sentences
        .into_iter()
        .filter(|(_, s)| gazetteer.has_location(s.as_ref()))
        .enumerate()
        .map(|(id, (tag, s))| Clue::new(id, s.as_ref(), tag))
        .collect()
}

/// Sentence-splits every section and keeps the location-bearing sentences.
pub fn extract_clues(guide: &RawGuidebook, gazetteer: &Gazetteer, headings: &HeadingMap) -> Vec<Clue> {
    let tagged = guide.sections.iter().flat_map(|section| {
        let tag = headings.tag_for(section.heading.as_deref());
        split_sentences(&section.body).into_iter().map(move |s| (tag, s))
    });
    filter_location_sentences(tagged, gazetteer)
}

pub fn write_clues_jsonl(clues: &[Clue], mut out: impl Write) -> std::io::Result<()> {
    for clue in clues {
        serde_json::to_writer(&mut out, clue)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_clues(clues: &[Clue], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_clues_jsonl(clues, &mut buf).expect("write to Vec");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Parses clues.jsonl and checks that ids are exactly `0..n` in order.
pub fn parse_clues(text: &str) -> Result<Vec<Clue>> {
    let mut clues = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let clue: Clue =
            serde_json::from_str(line).map_err(|e| Error::json(format!("clues line {}", lineno + 1), e))?;
        if clue.id != clues.len() {
            return Err(Error::Data(format!(
                "clue ids must be dense and ordered: expected {}, found {}",
                clues.len(),
                clue.id
            )));
        }
        if clue.text.trim().is_empty() {
            return Err(Error::Data(format!("clue {} has empty text", clue.id)));
        }
        clues.push(clue);
    }
    Ok(clues)
}

pub fn read_clues(path: &Path) -> Result<Vec<Clue>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_clues(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub n_clues: usize,
    pub mean_words: f64,
    pub unique_words: usize,
    pub unique_normalized_forms: usize,
    pub clues_per_cue_type: BTreeMap<String, usize>,
}

fn strip_punct(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Crude lemma stand-in: drops possessive "'s" and a plural "s".
fn normalized_form(word: &str) -> String {
    let w = word
        .strip_suffix("'s")
        .or_else(|| word.strip_suffix("’s"))
        .unwrap_or(word);
    let w = strip_punct(w);
    if w.chars().count() > 3 && w.ends_with('s') && !w.ends_with("ss") {
        w[..w.len() - 1].to_string()
    } else {
        w.to_string()
    }
}

pub fn compute_corpus_stats(clues: &[Clue]) -> CorpusStats {
    let mut total_words = 0usize;
    let mut words = BTreeSet::new();
    let mut forms = BTreeSet::new();
    let mut per_type = BTreeMap::new();
    for clue in clues {
        for raw in clue.text.split_whitespace() {
            total_words += 1;
            let lower = raw.to_lowercase();
            let w = strip_punct(&lower);
            if w.is_empty() {
                continue;
            }
            words.insert(w.to_string());
            forms.insert(normalized_form(&lower));
        }
        *per_type.entry(clue.cue_type.as_str().to_string()).or_insert(0) += 1;
    }
    CorpusStats {
        n_clues: clues.len(),
        mean_words: if clues.is_empty() {
            0.0
        } else {
            total_words as f64 / clues.len() as f64
        },
        unique_words: words.len(),
        unique_normalized_forms: forms.len(),
        clues_per_cue_type: per_type,
    }
}
