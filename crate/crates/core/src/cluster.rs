//! Subsets of coordinate indices, stored as bitsets.
//!
//! A [`Cluster`] labels the face of the simplex on which a projected vector
//! has strictly positive coordinates. Indices are zero-based. Only clusters
//! actually observed are ever materialized, so the exponential universe of
//! subsets is never enumerated.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use smallvec::SmallVec;

use crate::error::{Error, Result};

const WORD: usize = 64;

/// A nonempty set of zero-based coordinate indices.
///
/// Ordering is lexicographic on the sorted index sequence, so `{0} < {0, 1} < {1}`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Cluster {
    // No trailing zero words, so equal sets have equal representations.
    words: SmallVec<[u64; 1]>,
}

impl Cluster {
    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Result<Self> {
        let mut words: SmallVec<[u64; 1]> = SmallVec::new();
        for i in indices {
            let w = i / WORD;
            if words.len() <= w {
                words.resize(w + 1, 0);
            }
            words[w] |= 1u64 << (i % WORD);
        }
        if words.is_empty() {
            return Err(Error::EmptyCluster);
        }
        Ok(Self { words })
    }

    pub fn singleton(i: usize) -> Self {
        Self::from_indices([i]).expect("singleton is nonempty")
    }

    /// The full cluster `{0, .., d-1}`.
    pub fn full(d: usize) -> Self {
        assert!(d >= 1, "dimension must be positive");
        Self::from_indices(0..d).expect("d >= 1")
    }

    /// Builds the support `{i : mask(i)}` of a vector of length `d`.
    pub fn from_mask<F: Fn(usize) -> bool>(d: usize, mask: F) -> Result<Self> {
        Self::from_indices((0..d).filter(|&i| mask(i)))
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words
            .get(i / WORD)
            .is_some_and(|w| w & (1u64 << (i % WORD)) != 0)
    }

    /// Sorted iterator over member indices.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * WORD + bit)
            })
        })
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.indices().collect()
    }

    pub fn max_index(&self) -> usize {
        self.indices().last().expect("cluster is nonempty")
    }

    pub fn is_subset(&self, other: &Cluster) -> bool {
        self.words.iter().enumerate().all(|(i, &w)| {
            let o = other.words.get(i).copied().unwrap_or(0);
            w & !o == 0
        })
    }

    pub fn is_strict_subset(&self, other: &Cluster) -> bool {
        self != other && self.is_subset(other)
    }

    pub fn union(&self, other: &Cluster) -> Cluster {
        let len = self.words.len().max(other.words.len());
        let words = (0..len)
            .map(|i| {
                self.words.get(i).copied().unwrap_or(0) | other.words.get(i).copied().unwrap_or(0)
            })
            .collect();
        Cluster { words }
    }
}

impl Ord for Cluster {
    fn cmp(&self, other: &Self) -> Ordering {
        self.indices().cmp(other.indices())
    }
}

impl PartialOrd for Cluster {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Cluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Cluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (n, i) in self.indices().enumerate() {
            if n > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str("}")
    }
}

impl Serialize for Cluster {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.indices())
    }
}

impl<'de> Deserialize<'de> for Cluster {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let indices = Vec::<usize>::deserialize(deserializer)?;
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != indices.len() || sorted != indices {
            return Err(serde::de::Error::custom(
                "cluster indices must be strictly increasing",
            ));
        }
        Cluster::from_indices(indices).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(ix: &[usize]) -> Cluster {
        Cluster::from_indices(ix.iter().copied()).unwrap()
    }

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(
            Cluster::from_indices(std::iter::empty()),
            Err(Error::EmptyCluster)
        ));
    }

    #[test]
    fn wide_indices_roundtrip() {
        let cl = c(&[0, 63, 64, 130]);
        assert_eq!(cl.to_vec(), vec![0, 63, 64, 130]);
        assert_eq!(cl.len(), 4);
        assert!(cl.contains(64));
        assert!(!cl.contains(65));
        assert_eq!(cl.max_index(), 130);
    }

    #[test]
    fn lexicographic_order() {
        let mut v = vec![c(&[1]), c(&[0, 1]), c(&[0]), c(&[0, 2])];
        v.sort();
        assert_eq!(v, vec![c(&[0]), c(&[0, 1]), c(&[0, 2]), c(&[1])]);
    }

    #[test]
    fn subset_relations() {
        assert!(c(&[0]).is_strict_subset(&c(&[0, 1])));
        assert!(!c(&[0, 1]).is_strict_subset(&c(&[0, 1])));
        assert!(c(&[0, 1]).is_subset(&c(&[0, 1])));
        assert!(!c(&[70]).is_subset(&c(&[0, 1])));
        assert_eq!(c(&[0]).union(&c(&[70])), c(&[0, 70]));
    }

    #[test]
    fn serde_as_index_array() {
        let cl = c(&[0, 2]);
        assert_eq!(serde_json::to_string(&cl).unwrap(), "[0,2]");
        let back: Cluster = serde_json::from_str("[0,2]").unwrap();
        assert_eq!(back, cl);
        assert!(serde_json::from_str::<Cluster>("[2,0]").is_err());
        assert!(serde_json::from_str::<Cluster>("[]").is_err());
    }
}
