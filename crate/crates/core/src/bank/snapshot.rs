//! Bank snapshot files.
//!
//! ```text
//! "EMVB" | version u16 | reserved u16 | header_len u32 | header JSON | EMVT blob
//! ```
//!
//! The JSON header holds the config and entry metadata. Every float that
//! belongs to an entry (appearance vector, then patch values in stored order)
//! lives in a single rank-1 tensor blob so that patches round-trip bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BankConfig, EntityBank, EntityEntry, EntityRecord, EntryOrigin, LatentPatch};
use crate::error::{Error, Result};
use crate::script::EntityId;
use crate::tensor::{decode_tensor, encode_tensor, PatchCoord, Tensor};

const MAGIC: &[u8; 4] = b"EMVB";
pub const SNAPSHOT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u16,
    config: BankConfig,
    entities: Vec<EntityHeader>,
}

#[derive(Serialize, Deserialize)]
struct EntityHeader {
    id: EntityId,
    next_index: u32,
    entries: Vec<EntryHeader>,
}

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    entry_index: u32,
    origin: EntryOrigin,
    relevance: f64,
    appearance_len: usize,
    patch_len: usize,
    patches: Vec<PatchHeader>,
}

#[derive(Serialize, Deserialize)]
struct PatchHeader {
    x: u32,
    y: u32,
    frame_index: u32,
}

impl EntityBank {
    pub fn to_snapshot_bytes(&self) -> Result<Vec<u8>> {
        let mut blob = Vec::new();
        let mut entities = Vec::new();
        for (id, record) in self.records() {
            let mut entries = Vec::new();
            for e in &record.entries {
                blob.extend_from_slice(&e.appearance);
                let patch_len = e.patches.first().map_or(0, |p| p.values.len());
                for p in &e.patches {
                    if p.values.len() != patch_len {
                        return Err(Error::Format(format!("{id}: ragged patch values")));
                    }
                    blob.extend_from_slice(&p.values);
                }
                entries.push(EntryHeader {
                    entry_index: e.entry_index,
                    origin: e.origin,
                    relevance: e.relevance,
                    appearance_len: e.appearance.len(),
                    patch_len,
                    patches: e
                        .patches
                        .iter()
                        .map(|p| PatchHeader {
                            x: p.coord.x,
                            y: p.coord.y,
                            frame_index: p.frame_index,
                        })
                        .collect(),
                });
            }
            entities.push(EntityHeader {
                id: id.clone(),
                next_index: record.next_index,
                entries,
            });
        }
        let header = serde_json::to_vec(&Header {
            format_version: SNAPSHOT_VERSION,
            config: *self.config(),
            entities,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        let tensor = encode_tensor(&Tensor {
            dims: vec![blob.len()],
            data: blob,
        })?;

        let mut out = Vec::with_capacity(12 + header.len() + tensor.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&tensor);
        Ok(out)
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Format("truncated snapshot header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("not a bank snapshot".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SNAPSHOT_VERSION {
            return Err(Error::VersionMismatch {
                found: version.into(),
                expected: SNAPSHOT_VERSION.into(),
            });
        }
        let header_len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Format("truncated snapshot header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| Error::Format(format!("snapshot header: {e}")))?;
        if header.format_version != SNAPSHOT_VERSION {
            return Err(Error::VersionMismatch {
                found: header.format_version.into(),
                expected: SNAPSHOT_VERSION.into(),
            });
        }
        let blob = decode_tensor(&bytes[header_end..])?;
        if blob.dims.len() != 1 {
            return Err(Error::Format("snapshot blob must be rank 1".into()));
        }
        let mut values = blob.data.as_slice();
        let mut take = |n: usize| -> Result<Vec<f32>> {
            if values.len() < n {
                return Err(Error::Format(
                    "snapshot blob shorter than header claims".into(),
                ));
            }
            let (head, tail) = values.split_at(n);
            values = tail;
            Ok(head.to_vec())
        };

        let mut records = BTreeMap::new();
        for eh in header.entities {
            let mut entries = Vec::with_capacity(eh.entries.len());
            for entry in eh.entries {
                let appearance = take(entry.appearance_len)?;
                let patches = entry
                    .patches
                    .iter()
                    .map(|p| {
                        Ok(LatentPatch {
                            coord: PatchCoord::new(p.x, p.y),
                            frame_index: p.frame_index,
                            values: take(entry.patch_len)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                entries.push(EntityEntry {
                    entity: eh.id.clone(),
                    entry_index: entry.entry_index,
                    patches,
                    appearance,
                    relevance: entry.relevance,
                    origin: entry.origin,
                });
            }
            records.insert(
                eh.id,
                EntityRecord {
                    next_index: eh.next_index,
                    entries,
                },
            );
        }
        if !values.is_empty() {
            return Err(Error::Format("snapshot blob has trailing values".into()));
        }
        EntityBank::from_parts(header.config, records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_snapshot_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_snapshot_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
