//! Fixed-capacity bit vector over grid indices.

use serde::{Deserialize, Serialize};

const WORD: usize = 64;

/// A set of grid indices `0..len` stored as packed 64-bit words.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSet {
    len: usize,
    words: Vec<u64>,
}

impl GridSet {
    pub fn new(len: usize) -> Self {
        GridSet {
            len,
            words: vec![0; len.div_ceil(WORD)],
        }
    }

    /// Builds a set from indices. Panics if an index is `>= len`.
    pub fn from_indices<I: IntoIterator<Item = usize>>(len: usize, indices: I) -> Self {
        let mut set = GridSet::new(len);
        for i in indices {
            set.insert(i);
        }
        set
    }

    pub fn full(len: usize) -> Self {
        GridSet::from_indices(len, 0..len)
    }

    /// Capacity (number of addressable grids).
    pub fn capacity(&self) -> usize {
        self.len
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.len, "grid index {i} out of range {}", self.len);
        self.words[i / WORD] |= 1 << (i % WORD);
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.words[i / WORD] & (1 << (i % WORD)) != 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
    }

    pub fn union_with(&mut self, other: &GridSet) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
    }

    pub fn intersection_count(&self, other: &GridSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn is_disjoint(&self, other: &GridSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }

    /// Ascending iterator over member indices.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| BitIter {
            word: w,
            base: wi * WORD,
        })
    }

    /// Ascending iterator over indices in `self` but not in `covered`.
    pub fn iter_new<'a>(&'a self, covered: &'a GridSet) -> impl Iterator<Item = usize> + 'a {
        debug_assert_eq!(self.len, covered.len);
        self.words
            .iter()
            .zip(&covered.words)
            .enumerate()
            .flat_map(|(wi, (&a, &b))| BitIter {
                word: a & !b,
                base: wi * WORD,
            })
    }

    /// Sum of `weights[i]` over members, in ascending index order.
    pub fn weighted_sum(&self, weights: &[f64]) -> f64 {
        self.iter().map(|i| weights[i]).sum()
    }

    /// Sum of `weights[i]` over members not yet in `covered`.
    pub fn marginal_weight(&self, covered: &GridSet, weights: &[f64]) -> f64 {
        self.iter_new(covered).map(|i| weights[i]).sum()
    }
}

struct BitIter {
    word: u64,
    base: usize,
}

impl Iterator for BitIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.word == 0 {
            return None;
        }
        let tz = self.word.trailing_zeros() as usize;
        self.word &= self.word - 1;
        Some(self.base + tz)
    }
}
