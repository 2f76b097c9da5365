use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};

/// The ordered set of trainable country codes.
///
/// Class indices are positions in ascending ISO alpha-3 order, so every
/// component agrees on the index of a country without extra bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    codes: Vec<String>,
}

impl LabelSet {
    pub fn new<I, S>(codes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = codes.into_iter().map(Into::into).collect();
        for code in &set {
            if !is_alpha3(code) {
                return Err(Error::Data(format!("not an alpha-3 country code: {code:?}")));
            }
        }
        if set.is_empty() {
            return Err(Error::Data("empty label set".into()));
        }
        Ok(LabelSet {
            codes: set.into_iter().collect(),
        })
    }

    /// Reads one code per line; blank lines and `#` comments are skipped.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LabelSet::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.codes.binary_search_by(|c| c.as_str().cmp(code)).ok()
    }

    pub fn require_index(&self, code: &str) -> Result<usize> {
        self.index_of(code)
            .ok_or_else(|| Error::UnknownCountry(code.to_string()))
    }

    pub fn code(&self, index: usize) -> &str {
        &self.codes[index]
    }

    pub fn contains(&self, code: &str) -> bool {
        self.index_of(code).is_some()
    }
}

pub(crate) fn is_alpha3(code: &str) -> bool {
    code.len() == 3 && code.bytes().all(|b| b.is_ascii_uppercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_and_deduplicated() {
        let l = LabelSet::new(["SWE", "DNK", "SWE", "JPN"]).unwrap();
        assert_eq!(l.codes(), ["DNK", "JPN", "SWE"]);
        assert_eq!(l.index_of("JPN"), Some(1));
        assert_eq!(l.index_of("NOR"), None);
    }

    #[test]
    fn rejects_bad_codes() {
        assert!(LabelSet::new(["se"]).is_err());
        assert!(LabelSet::new(Vec::<String>::new()).is_err());
    }
}
