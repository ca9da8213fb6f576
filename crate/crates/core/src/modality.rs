//! Compact modality-set representation.

use std::fmt;

/// Upper bound on the number of modalities a [`ModalitySet`] can hold.
pub const MAX_MODALITIES: usize = 32;

/// A set of modality indices stored as a bitmask.
///
/// Indices refer to positions in the ordered modality list of the
/// experiment (e.g. `0 = vision`, `1 = text`).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ModalitySet(u32);

impl ModalitySet {
    pub const EMPTY: ModalitySet = ModalitySet(0);

    /// The set `{0, 1, ..., count - 1}`.
    pub fn full(count: usize) -> Self {
        assert!(count <= MAX_MODALITIES, "too many modalities");
        if count == MAX_MODALITIES {
            ModalitySet(u32::MAX)
        } else {
            ModalitySet((1u32 << count) - 1)
        }
    }

    pub fn single(index: usize) -> Self {
        assert!(index < MAX_MODALITIES, "modality index out of range");
        ModalitySet(1 << index)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        indices
            .into_iter()
            .fold(Self::EMPTY, |acc, i| acc.with(i))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, index: usize) -> bool {
        index < MAX_MODALITIES && self.0 & (1 << index) != 0
    }

    #[must_use]
    pub fn with(self, index: usize) -> Self {
        self.union(Self::single(index))
    }

    #[must_use]
    pub fn union(self, other: Self) -> Self {
        ModalitySet(self.0 | other.0)
    }

    pub fn is_subset_of(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Ascending iteration over member indices.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..MAX_MODALITIES).filter(move |&i| self.contains(i))
    }
}

impl fmt::Debug for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_set_algebra() {
        let s = ModalitySet::from_indices([0, 2]);
        assert!(s.contains(0) && !s.contains(1) && s.contains(2));
        assert_eq!(s.len(), 2);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 2]);
        assert!(s.is_subset_of(ModalitySet::full(3)));
        assert!(!ModalitySet::full(3).is_subset_of(s));
        assert_eq!(ModalitySet::full(MAX_MODALITIES).len(), MAX_MODALITIES);
        assert!(ModalitySet::EMPTY.is_empty());
    }
}
