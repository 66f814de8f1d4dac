//! Adjective-noun pair labels and the two-level noun → ANP hierarchy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("empty {0} token in adjective-noun pair")]
    EmptyToken(&'static str),
    #[error("{field} token {token:?} contains whitespace")]
    Whitespace { field: &'static str, token: String },
    #[error("expected \"adjective noun\", got {0:?}")]
    Malformed(String),
    #[error("empty hierarchy")]
    EmptyHierarchy,
}

/// An adjective-noun pair such as `cute dog`.
///
/// Both tokens are stored lowercase. Ordering is noun-major so that sorted
/// collections of pairs group by noun.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "AnpWire", into = "AnpWire")]
pub struct Anp {
    adjective: String,
    noun: String,
}

#[derive(Serialize, Deserialize)]
struct AnpWire {
    adj: String,
    noun: String,
}

impl TryFrom<AnpWire> for Anp {
    type Error = LabelError;

    fn try_from(w: AnpWire) -> Result<Self, Self::Error> {
        Anp::new(&w.adj, &w.noun)
    }
}

impl From<Anp> for AnpWire {
    fn from(a: Anp) -> Self {
        AnpWire {
            adj: a.adjective,
            noun: a.noun,
        }
    }
}

fn normalize_token(field: &'static str, raw: &str) -> Result<String, LabelError> {
    let token = raw.trim();
    if token.is_empty() {
        return Err(LabelError::EmptyToken(field));
    }
    if token.chars().any(char::is_whitespace) {
        return Err(LabelError::Whitespace {
            field,
            token: token.to_string(),
        });
    }
    Ok(token.to_lowercase())
}

impl Anp {
    pub fn new(adjective: &str, noun: &str) -> Result<Self, LabelError> {
        Ok(Anp {
            adjective: normalize_token("adjective", adjective)?,
            noun: normalize_token("noun", noun)?,
        })
    }

    pub fn adjective(&self) -> &str {
        &self.adjective
    }

    pub fn noun(&self) -> &str {
        &self.noun
    }
}

impl PartialOrd for Anp {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Anp {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (&self.noun, &self.adjective).cmp(&(&other.noun, &other.adjective))
    }
}

impl fmt::Display for Anp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.adjective, self.noun)
    }
}

impl FromStr for Anp {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(adj), Some(noun), None) => Anp::new(adj, noun),
            _ => Err(LabelError::Malformed(s.to_string())),
        }
    }
}

/// Noun → set of pairs sharing that noun. Never holds an empty group.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelHierarchy {
    groups: BTreeMap<String, BTreeSet<Anp>>,
}

/// Groups labels by noun, dropping duplicates.
pub fn build_hierarchy<'a, I>(labels: I) -> Result<LabelHierarchy, LabelError>
where
    I: IntoIterator<Item = &'a Anp>,
{
    let mut groups: BTreeMap<String, BTreeSet<Anp>> = BTreeMap::new();
    for anp in labels {
        groups.entry(anp.noun.clone()).or_default().insert(anp.clone());
    }
    if groups.is_empty() {
        return Err(LabelError::EmptyHierarchy);
    }
    Ok(LabelHierarchy { groups })
}

impl LabelHierarchy {
    pub fn nouns(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn group(&self, noun: &str) -> Option<&BTreeSet<Anp>> {
        self.groups.get(noun)
    }

    pub fn noun_count(&self) -> usize {
        self.groups.len()
    }

    pub fn anp_count(&self) -> usize {
        self.groups.values().map(BTreeSet::len).sum()
    }

    pub fn contains(&self, anp: &Anp) -> bool {
        self.groups.get(&anp.noun).is_some_and(|g| g.contains(anp))
    }

    /// Every pair, noun-major. The position in this list is the detector's
    /// class index.
    pub fn flatten(&self) -> Vec<Anp> {
        self.groups.values().flatten().cloned().collect()
    }
}
