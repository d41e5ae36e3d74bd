use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the 3d-consistent markup in every chain.
pub const MARKUP_3D: &str = "3d";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Markup {
    pub name: String,
    pub count: usize,
}

/// Ordered 2d markups `L_1 >= L_2 >= ... >= L_K` plus one 3d markup.
///
/// Markups are addressed by a flat index: `0..K` are the 2d chain in order,
/// `K` is the 3d markup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkupChain {
    two_d: Vec<Markup>,
    three_d: Markup,
}

impl MarkupChain {
    pub fn new(two_d: Vec<Markup>, three_d: Markup) -> Result<Self> {
        if two_d.is_empty() {
            return Err(Error::InvalidArgument("markup chain is empty".into()));
        }
        for m in two_d.iter().chain(std::iter::once(&three_d)) {
            if m.count == 0 {
                return Err(Error::InvalidArgument(format!(
                    "markup `{}` has no landmarks",
                    m.name
                )));
            }
        }
        if two_d.windows(2).any(|w| w[0].count < w[1].count) {
            return Err(Error::InvalidArgument(format!(
                "markup counts must be descending, got {:?}",
                two_d.iter().map(|m| m.count).collect::<Vec<_>>()
            )));
        }
        let mut names: Vec<&str> = two_d.iter().map(|m| m.name.as_str()).collect();
        names.push(&three_d.name);
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::InvalidArgument(format!(
                "markup names must be unique, got {names:?}"
            )));
        }
        Ok(MarkupChain { two_d, three_d })
    }

    /// Chain named after the landmark counts (`"98"`, `"68"`, ...) plus `"3d"`.
    pub fn from_counts(counts: &[usize], count_3d: usize) -> Result<Self> {
        let two_d = counts
            .iter()
            .map(|&c| Markup {
                name: c.to_string(),
                count: c,
            })
            .collect();
        Self::new(
            two_d,
            Markup {
                name: MARKUP_3D.to_string(),
                count: count_3d,
            },
        )
    }

    pub fn two_d(&self) -> &[Markup] {
        &self.two_d
    }

    pub fn three_d(&self) -> &Markup {
        &self.three_d
    }

    /// Number of 2d markups, `K`.
    pub fn depth(&self) -> usize {
        self.two_d.len()
    }

    /// All markups, 2d chain first then the 3d markup.
    pub fn all(&self) -> impl Iterator<Item = &Markup> {
        self.two_d.iter().chain(std::iter::once(&self.three_d))
    }

    pub fn len(&self) -> usize {
        self.two_d.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, index: usize) -> &Markup {
        if index < self.two_d.len() {
            &self.two_d[index]
        } else {
            &self.three_d
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.all().position(|m| m.name == name)
    }

    pub fn is_3d(&self, index: usize) -> bool {
        index == self.two_d.len()
    }

    /// Total attention channels across all markups.
    pub fn total_landmarks(&self) -> usize {
        self.all().map(|m| m.count).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_must_descend_and_be_positive() {
        assert!(MarkupChain::from_counts(&[98, 68, 5], 68).is_ok());
        assert!(MarkupChain::from_counts(&[5, 68], 68).is_err());
        assert!(MarkupChain::from_counts(&[], 68).is_err());
        assert!(MarkupChain::from_counts(&[12, 0], 6).is_err());
        assert!(MarkupChain::from_counts(&[12, 12], 6).is_err(), "duplicate names");
    }

    #[test]
    fn flat_indexing_puts_3d_last() {
        let c = MarkupChain::from_counts(&[24, 12, 5], 8).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.get(3).name, "3d");
        assert!(c.is_3d(3));
        assert_eq!(c.index_of("12"), Some(1));
        assert_eq!(c.total_landmarks(), 49);
    }
}
