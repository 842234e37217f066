//! Species label sets.

use serde::{Deserialize, Serialize};

/// The twelve foraminifera genera of the reference dataset, in report order
/// (alphabetical).
pub const SPECIES: [&str; 12] = [
    "Alveolina",
    "Arumella",
    "Ataxophragmium",
    "Baculogypsina",
    "Chrysalidina",
    "Coskinolina",
    "Elphidiella",
    "Fallotia",
    "Lockhartia",
    "Minoxia",
    "Orbitoides",
    "Rhapydionina",
];

/// An ordered list of class labels. Position in the list is the class index
/// used by probability vectors, confusion matrices and tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(Vec<String>);

impl Default for LabelSet {
    fn default() -> Self {
        Self::species()
    }
}

impl LabelSet {
    /// The default twelve-species label set.
    pub fn species() -> Self {
        Self(SPECIES.iter().map(|s| s.to_string()).collect())
    }

    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(labels.into_iter().map(Into::into).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.0.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    pub fn get(&self, idx: usize) -> Option<&str> {
        self.0.get(idx).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }
}
