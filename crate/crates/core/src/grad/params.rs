use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Deserializer, Serialize};

use super::tape::Tensor;
use crate::error::{Error, Result};

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
}

/// Named parameter tensors in insertion order.
///
/// Each store instance (including clones) carries a process-unique id that
/// tapes use to tell parameter leaves of different stores apart.
#[derive(Debug, Serialize)]
pub struct ParamStore {
    #[serde(skip)]
    uid: u64,
    entries: Vec<ParamEntry>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore {
            uid: fresh_uid(),
            entries: self.entries.clone(),
        }
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl<'de> Deserialize<'de> for ParamStore {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            entries: Vec<ParamEntry>,
        }
        let raw = Raw::deserialize(d)?;
        Ok(ParamStore {
            uid: fresh_uid(),
            entries: raw.entries,
        })
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            uid: fresh_uid(),
            entries: Vec::new(),
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// All parameters concatenated in `ParamId` order, row-major within a tensor.
    pub fn to_flat(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|e| e.value.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::dim("ParamStore::set_flat", self.num_scalars(), flat.len()));
        }
        let mut it = flat.iter();
        for e in &mut self.entries {
            for v in e.value.iter_mut() {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Shapes must agree entry by entry (names included).
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: expected {}, found {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.value.dim() != b.value.dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} incompatible with {} {:?}",
                    a.name,
                    a.value.dim(),
                    b.name,
                    b.value.dim()
                )));
            }
        }
        Ok(())
    }
}
