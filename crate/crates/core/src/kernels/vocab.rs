use std::collections::{BTreeSet, HashMap};

use super::KernelError;

pub const UNK: &str = "<unk>";

/// Whitespace vocabulary for kernel demos. Id 0 is `<unk>`; the remaining
/// words are sorted so the mapping is independent of input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let uniq: BTreeSet<String> = texts.into_iter().flat_map(|t| t.split_whitespace()).map(str::to_lowercase).collect();
        let words: Vec<String> = std::iter::once(UNK.to_owned()).chain(uniq.into_iter().filter(|w| w != UNK)).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(&word.to_lowercase()).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    /// Unknown words map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|w| self.id(w).unwrap_or(0)).collect()
    }

    pub fn encode_strict(&self, text: &str) -> Result<Vec<usize>, KernelError> {
        text.split_whitespace().map(|w| self.id(w).ok_or_else(|| KernelError::UnknownToken(w.to_owned()))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let v = Vocab::from_texts(["the plane is parked", "The ship"]);
        assert_eq!(v.len(), 6);
        let ids = v.encode("the ship is moving");
        assert_eq!(ids[3], 0);
        assert_eq!(v.word(ids[1]), Some("ship"));
        assert!(v.encode_strict("moving").is_err());
    }
}
