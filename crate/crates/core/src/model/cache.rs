use std::collections::VecDeque;

use super::{ModelError, Result};
use crate::tensor::Tensor;

/// Per-layer keys and values of one clean frame, each (H·W)×dim.
#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    pub frame_index: usize,
    pub keys: Vec<Tensor>,
    pub values: Vec<Tensor>,
}

impl CacheEntry {
    /// Same structure with every key and value set to zero.
    pub fn zeroed(&self) -> Self {
        let z = |ts: &[Tensor]| ts.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        Self {
            frame_index: self.frame_index,
            keys: z(&self.keys),
            values: z(&self.values),
        }
    }
}

/// FIFO window over the most recent `capacity` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct KvCache {
    capacity: usize,
    entries: VecDeque<CacheEntry>,
}

impl KvCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    /// Builds a window from entries in increasing frame order, keeping the
    /// last `capacity` of them.
    pub fn from_entries(capacity: usize, entries: impl IntoIterator<Item = CacheEntry>) -> Result<Self> {
        let mut cache = Self::new(capacity);
        for e in entries {
            cache.push(e)?;
        }
        Ok(cache)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.iter()
    }

    pub fn frame_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.frame_index).collect()
    }

    pub fn contains(&self, frame_index: usize) -> bool {
        self.entries.iter().any(|e| e.frame_index == frame_index)
    }

    pub fn get(&self, frame_index: usize) -> Option<&CacheEntry> {
        self.entries.iter().find(|e| e.frame_index == frame_index)
    }

    /// Appends a newer frame, evicting the oldest beyond capacity.
    pub fn push(&mut self, entry: CacheEntry) -> Result<Option<CacheEntry>> {
        if let Some(last) = self.entries.back() {
            if entry.frame_index <= last.frame_index {
                return Err(ModelError::State(format!(
                    "cache push of frame {} after frame {}",
                    entry.frame_index, last.frame_index
                )));
            }
            if entry.keys.len() != last.keys.len()
                || entry.keys.iter().zip(&last.keys).any(|(a, b)| a.shape() != b.shape())
            {
                return Err(ModelError::State("cache entry grid differs from cached frames".into()));
            }
        }
        self.entries.push_back(entry);
        Ok(if self.entries.len() > self.capacity {
            self.entries.pop_front()
        } else {
            None
        })
    }

    /// Swaps in new keys/values for a frame already in the window.
    pub fn replace(&mut self, entry: CacheEntry) -> Result<CacheEntry> {
        let slot = self
            .entries
            .iter_mut()
            .find(|e| e.frame_index == entry.frame_index)
            .ok_or_else(|| ModelError::State(format!("frame {} is not cached", entry.frame_index)))?;
        Ok(std::mem::replace(slot, entry))
    }

    /// Empty window with the same capacity.
    pub fn cleared(&self) -> Self {
        Self::new(self.capacity)
    }

    /// Same frames with all keys and values zeroed.
    pub fn zeroed(&self) -> Self {
        Self {
            capacity: self.capacity,
            entries: self.entries.iter().map(CacheEntry::zeroed).collect(),
        }
    }
}
