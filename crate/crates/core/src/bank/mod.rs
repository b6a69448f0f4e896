//! The entity bank: per-entity lists of sparse latent-patch entries.
//!
//! Entries are built from a frame and an entity mask, gated on appearance
//! similarity when they arrive as update candidates, and pruned against a
//! per-entity token budget by relevance-to-cost ratio. The first entry of
//! every entity is protected from eviction.

mod descriptor;
mod snapshot;

pub use descriptor::{cosine, normalize, DescriptorProvider, SyntheticDescriptor};
pub use snapshot::SNAPSHOT_VERSION;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::VaeMock;
use crate::error::{Error, Result};
use crate::script::EntityId;
use crate::tensor::{downsample_mask, Frame, MemoryLayout, PatchCoord, PixelMask};

/// One latent patch of an entry, with its coordinate in the source frame's
/// patch grid and the id of the memory frame it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPatch {
    pub coord: PatchCoord,
    pub frame_index: u32,
    /// `C × p_h × p_w` values in `(channel, dy, dx)` order.
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntryOrigin {
    UserReference,
    Generated { shot: u32, keyframe: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityEntry {
    pub entity: EntityId,
    /// Assigned by the bank on acceptance; strictly increasing per entity.
    pub entry_index: u32,
    pub patches: Vec<LatentPatch>,
    /// Unit-norm appearance descriptor.
    pub appearance: Vec<f32>,
    /// Region–text relevance in `[-1, 1]`.
    pub relevance: f64,
    pub origin: EntryOrigin,
}

impl EntityEntry {
    /// Number of memory tokens the entry occupies.
    pub fn token_cost(&self) -> usize {
        self.patches.len()
    }

    /// Relevance-to-cost ratio used to rank entries under the budget.
    pub fn keep_score(&self) -> f64 {
        keep_score(self.relevance, self.token_cost())
    }
}

pub fn keep_score(relevance: f64, token_cost: usize) -> f64 {
    relevance / token_cost as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    /// Lower edge of the accepted appearance-similarity interval.
    pub tau_minmatch: f64,
    /// Upper edge of the accepted appearance-similarity interval.
    pub tau_redundant: f64,
    /// Maximum memory tokens per entity (entry 0 exempt).
    pub token_budget: usize,
    /// Patch selection threshold for characters and objects.
    pub overlap_threshold: f64,
    /// Patch selection threshold for scenes.
    pub scene_overlap_threshold: f64,
    /// Geometry of one memory frame; `slots` is ignored.
    pub layout: MemoryLayout,
    /// Pixels per latent cell along each axis.
    pub vae_stride: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            tau_minmatch: 0.50,
            tau_redundant: 0.95,
            token_budget: 256,
            overlap_threshold: 0.0,
            scene_overlap_threshold: 0.5,
            layout: MemoryLayout {
                slots: 1,
                channels: 4,
                height: 32,
                width: 32,
                patch_h: 2,
                patch_w: 2,
            },
            vae_stride: 8,
        }
    }
}

impl BankConfig {
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.tau_minmatch.partial_cmp(&self.tau_redundant) != Some(std::cmp::Ordering::Less) {
            return Err(Error::InvalidConfig(format!(
                "tau_minmatch {} must be below tau_redundant {}",
                self.tau_minmatch, self.tau_redundant
            )));
        }
        if !(-1.0..=1.0).contains(&self.tau_minmatch) || !(-1.0..=1.0).contains(&self.tau_redundant)
        {
            return Err(Error::InvalidConfig(
                "similarity thresholds must lie in [-1, 1]".into(),
            ));
        }
        if self.token_budget == 0 {
            return Err(Error::InvalidConfig(
                "token budget must be at least 1".into(),
            ));
        }
        for t in [self.overlap_threshold, self.scene_overlap_threshold] {
            if !(0.0..1.0).contains(&t) {
                return Err(Error::InvalidConfig(format!(
                    "overlap threshold {t} outside [0, 1)"
                )));
            }
        }
        if self.vae_stride == 0 {
            return Err(Error::InvalidConfig("vae stride must be positive".into()));
        }
        Ok(())
    }

    pub fn frame_height(&self) -> usize {
        self.layout.height * self.vae_stride
    }

    pub fn frame_width(&self) -> usize {
        self.layout.width * self.vae_stride
    }

    pub fn overlap_for(&self, entity: &EntityId) -> f64 {
        if entity.category().is_subject() {
            self.overlap_threshold
        } else {
            self.scene_overlap_threshold
        }
    }
}

/// Builds a bank entry from a frame and the entity's pixel mask.
///
/// The frame is encoded, the mask is projected onto the patch grid with the
/// entity's overlap threshold, and every selected patch is stored with its
/// coordinate and `frame_index`. Descriptors come from `provider`.
#[allow(clippy::too_many_arguments)]
pub fn build_entry(
    frame: &Frame,
    mask: &PixelMask,
    entity: &EntityId,
    description: &str,
    frame_index: u32,
    origin: EntryOrigin,
    provider: &dyn DescriptorProvider,
    vae: &VaeMock,
    config: &BankConfig,
) -> Result<EntityEntry> {
    mask.check_dims(frame.height(), frame.width())?;
    if vae.stride() != config.vae_stride || vae.channels() != config.layout.channels {
        return Err(Error::InvalidConfig(
            "VAE does not match the bank layout".into(),
        ));
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let latent = vae.encode(frame)?;
    config.layout.check_latent(&latent)?;
    let patch_mask = downsample_mask(
        mask,
        &config.layout,
        config.vae_stride,
        config.overlap_for(entity),
    )?;
    let coords = patch_mask.coords(0);
    if coords.is_empty() {
        return Err(Error::EmptyMask);
    }
    let patches = coords
        .into_iter()
        .map(|coord| LatentPatch {
            coord,
            frame_index,
            values: gather_patch_values(&latent, &config.layout, coord),
        })
        .collect();
    Ok(EntityEntry {
        entity: entity.clone(),
        entry_index: 0,
        patches,
        appearance: provider.embed_appearance(frame, mask)?,
        relevance: provider.score_relevance(frame, mask, description)?,
        origin,
    })
}

pub(crate) fn gather_patch_values(
    latent: &crate::tensor::LatentGrid,
    layout: &MemoryLayout,
    coord: PatchCoord,
) -> Vec<f32> {
    let mut values = Vec::with_capacity(layout.patch_len());
    for c in 0..layout.channels {
        for dy in 0..layout.patch_h {
            for dx in 0..layout.patch_w {
                values.push(latent.get(
                    c,
                    coord.y as usize * layout.patch_h + dy,
                    coord.x as usize * layout.patch_w + dx,
                ));
            }
        }
    }
    values
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptDecision {
    AcceptedEmpty,
    AcceptedInRange,
    RejectedLow,
    RejectedRedundant,
}

impl AcceptDecision {
    pub fn is_accepted(self) -> bool {
        matches!(
            self,
            AcceptDecision::AcceptedEmpty | AcceptDecision::AcceptedInRange
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AcceptDecision::AcceptedEmpty => "accepted_empty",
            AcceptDecision::AcceptedInRange => "accepted_in_range",
            AcceptDecision::RejectedLow => "rejected_low",
            AcceptDecision::RejectedRedundant => "rejected_redundant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptOutcome {
    pub decision: AcceptDecision,
    /// Maximum appearance similarity to stored entries; `None` when the
    /// entity had no entries.
    pub max_similarity: Option<f64>,
    /// Index assigned to the candidate when accepted.
    pub entry_index: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct EntityRecord {
    pub(crate) next_index: u32,
    pub(crate) entries: Vec<EntityEntry>,
}

/// Entity-indexed memory. Entities iterate in canonical identifier order.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityBank {
    config: BankConfig,
    records: BTreeMap<EntityId, EntityRecord>,
}

impl EntityBank {
    pub fn new(config: BankConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            records: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &BankConfig {
        &self.config
    }

    /// Registers an entity key with no entries. No-op if already present.
    pub fn register(&mut self, entity: EntityId) {
        self.records.entry(entity).or_default();
    }

    pub fn contains(&self, entity: &EntityId) -> bool {
        self.records.contains_key(entity)
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = &EntityId> {
        self.records.keys()
    }

    pub fn entries(&self, entity: &EntityId) -> &[EntityEntry] {
        self.records
            .get(entity)
            .map_or(&[], |r| r.entries.as_slice())
    }

    pub fn token_cost(&self, entity: &EntityId) -> usize {
        self.entries(entity)
            .iter()
            .map(EntityEntry::token_cost)
            .sum()
    }

    pub fn total_entries(&self) -> usize {
        self.records.values().map(|r| r.entries.len()).sum()
    }

    /// Highest cosine between the candidate's appearance and any stored entry
    /// of the same entity; `None` when the entity has no entries.
    pub fn appearance_similarity_max(&self, candidate: &EntityEntry) -> Option<f64> {
        self.entries(&candidate.entity)
            .iter()
            .map(|e| cosine(&candidate.appearance, &e.appearance))
            .max_by(|a, b| a.total_cmp(b))
    }

    /// Applies the acceptance rule and appends the candidate when accepted.
    ///
    /// Accepted iff the entity has no entries, or the maximum similarity lies
    /// in the closed interval `[tau_minmatch, tau_redundant]`.
    pub fn accept_candidate(&mut self, mut candidate: EntityEntry) -> AcceptOutcome {
        let max_similarity = self.appearance_similarity_max(&candidate);
        let decision = match max_similarity {
            None => AcceptDecision::AcceptedEmpty,
            Some(s) if s < self.config.tau_minmatch => AcceptDecision::RejectedLow,
            Some(s) if s > self.config.tau_redundant => AcceptDecision::RejectedRedundant,
            Some(_) => AcceptDecision::AcceptedInRange,
        };
        let mut entry_index = None;
        if decision.is_accepted() {
            let record = self.records.entry(candidate.entity.clone()).or_default();
            candidate.entry_index = record.next_index;
            record.next_index += 1;
            entry_index = Some(candidate.entry_index);
            record.entries.push(candidate);
        }
        AcceptOutcome {
            decision,
            max_similarity,
            entry_index,
        }
    }

    /// Evicts entries of `entity` until its token cost fits the budget.
    ///
    /// Entry 0 is always kept. The rest are visited in descending
    /// relevance-to-cost ratio (ties: lower entry index first) and each is
    /// kept iff it still fits next to what has been kept so far. Returns the
    /// evicted entry indices in ascending order.
    pub fn enforce_budget(&mut self, entity: &EntityId) -> Vec<u32> {
        let budget = self.config.token_budget;
        let Some(record) = self.records.get_mut(entity) else {
            return Vec::new();
        };
        let Some(first) = record.entries.first() else {
            return Vec::new();
        };
        if first.token_cost() > budget {
            log::warn!(
                "{entity}: protected first entry costs {} tokens, above the budget of {budget}",
                first.token_cost()
            );
        }
        let keep = greedy_keep_set(&record.entries, budget);
        let mut evicted = Vec::new();
        let mut kept_entries = Vec::with_capacity(record.entries.len());
        for (entry, kept) in record.entries.drain(..).zip(keep) {
            if kept {
                kept_entries.push(entry);
            } else {
                evicted.push(entry.entry_index);
            }
        }
        record.entries = kept_entries;
        evicted
    }

    pub(crate) fn records(&self) -> &BTreeMap<EntityId, EntityRecord> {
        &self.records
    }

    pub(crate) fn from_parts(
        config: BankConfig,
        records: BTreeMap<EntityId, EntityRecord>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, records })
    }
}

/// Keep flags for `entries` (index 0 protected) under `budget`.
fn greedy_keep_set(entries: &[EntityEntry], budget: usize) -> Vec<bool> {
    let mut keep = vec![false; entries.len()];
    if entries.is_empty() {
        return keep;
    }
    keep[0] = true;
    let mut used = entries[0].token_cost();
    let mut order: Vec<usize> = (1..entries.len()).collect();
    order.sort_by(|&a, &b| {
        entries[b]
            .keep_score()
            .partial_cmp(&entries[a].keep_score())
            .unwrap_or(Ordering::Equal)
            .then(entries[a].entry_index.cmp(&entries[b].entry_index))
    });
    for i in order {
        let cost = entries[i].token_cost();
        if used + cost <= budget {
            used += cost;
            keep[i] = true;
        }
    }
    keep
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn entry(
        entity: &str,
        relevance: f64,
        cost: usize,
        appearance: Vec<f32>,
    ) -> EntityEntry {
        EntityEntry {
            entity: entity.parse().unwrap(),
            entry_index: 0,
            patches: (0..cost)
                .map(|i| LatentPatch {
                    coord: PatchCoord::new(i as u32 % 16, i as u32 / 16),
                    frame_index: 0,
                    values: vec![i as f32; 16],
                })
                .collect(),
            appearance,
            relevance,
            origin: EntryOrigin::UserReference,
        }
    }

    fn unit(i: usize) -> Vec<f32> {
        let mut v = vec![0.0; 4];
        v[i] = 1.0;
        v
    }

    /// Unit vector at the given cosine to `unit(0)`.
    fn at_cos(c: f64) -> Vec<f32> {
        vec![c as f32, (1.0 - c * c).sqrt() as f32, 0.0, 0.0]
    }

    fn bank(budget: usize) -> EntityBank {
        EntityBank::new(BankConfig {
            token_budget: budget,
            ..BankConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn keep_score_arithmetic() {
        assert_eq!(keep_score(0.8, 4), 0.2);
    }

    #[test]
    fn empty_entity_accepts_and_sentinel() {
        let mut b = bank(100);
        let id: EntityId = "CH_01".parse().unwrap();
        b.register(id.clone());
        let c = entry("CH_01", 0.5, 3, unit(0));
        assert_eq!(b.appearance_similarity_max(&c), None);
        let out = b.accept_candidate(c);
        assert_eq!(out.decision, AcceptDecision::AcceptedEmpty);
        assert_eq!(out.entry_index, Some(0));
        assert_eq!(
            b.appearance_similarity_max(&entry("CH_01", 0.5, 3, unit(0))),
            Some(1.0)
        );
    }

    #[test]
    fn similarity_max_over_orthogonal_entries() {
        let mut b = bank(100);
        for i in 0..3 {
            b.accept_candidate(entry("CH_01", 0.5, 1, unit(i)));
        }
        // Only the first went in as empty; the others are orthogonal (cos 0) and rejected low.
        assert_eq!(b.entries(&"CH_01".parse().unwrap()).len(), 1);
        let mut b = bank(100);
        b.config.tau_minmatch = -1.0;
        for i in 0..3 {
            b.accept_candidate(entry("CH_01", 0.5, 1, unit(i)));
        }
        assert_eq!(b.entries(&"CH_01".parse().unwrap()).len(), 3);
        let s = b
            .appearance_similarity_max(&entry("CH_01", 0.5, 1, unit(1)))
            .unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn acceptance_rule() {
        let mut b = bank(100);
        b.accept_candidate(entry("CH_01", 0.5, 2, unit(0)));
        let before = b.clone();
        let out = b.accept_candidate(entry("CH_01", 0.5, 2, at_cos(0.99)));
        assert_eq!(out.decision, AcceptDecision::RejectedRedundant);
        assert_eq!(b, before);
        let out = b.accept_candidate(entry("CH_01", 0.5, 2, at_cos(0.30)));
        assert_eq!(out.decision, AcceptDecision::RejectedLow);
        assert_eq!(b, before);
        let out = b.accept_candidate(entry("CH_01", 0.5, 2, at_cos(0.7)));
        assert_eq!(out.decision, AcceptDecision::AcceptedInRange);
        assert_eq!(out.entry_index, Some(1));
    }

    #[test]
    fn acceptance_interval_is_closed() {
        let mut b = bank(100);
        b.config.tau_minmatch = 0.0;
        b.config.tau_redundant = 1.0;
        b.accept_candidate(entry("CH_01", 0.5, 2, unit(0)));
        assert_eq!(
            b.accept_candidate(entry("CH_01", 0.5, 2, unit(0))).decision,
            AcceptDecision::AcceptedInRange
        );
        assert_eq!(
            b.accept_candidate(entry("CH_01", 0.5, 2, unit(1))).decision,
            AcceptDecision::AcceptedInRange
        );
    }

    #[test]
    fn accept_touches_only_its_entity() {
        let mut b = bank(100);
        b.accept_candidate(entry("CH_01", 0.5, 2, unit(0)));
        let other = b.entries(&"CH_01".parse().unwrap()).to_vec();
        b.accept_candidate(entry("OB_01", 0.5, 2, unit(1)));
        assert_eq!(b.entries(&"CH_01".parse().unwrap()), other.as_slice());
    }

    #[test]
    fn budget_worked_example() {
        // E0 cost 10 protected; E1 s=0.9 cost 30 (0.03); E2 s=0.6 cost 10 (0.06); budget 25.
        let mut b = bank(25);
        b.config.tau_minmatch = -1.0;
        b.config.tau_redundant = 1.0;
        b.accept_candidate(entry("CH_01", 0.1, 10, unit(0)));
        b.accept_candidate(entry("CH_01", 0.9, 30, unit(1)));
        b.accept_candidate(entry("CH_01", 0.6, 10, unit(2)));
        let id: EntityId = "CH_01".parse().unwrap();
        assert_eq!(b.enforce_budget(&id), vec![1]);
        let kept: Vec<u32> = b.entries(&id).iter().map(|e| e.entry_index).collect();
        assert_eq!(kept, vec![0, 2]);
        assert_eq!(b.token_cost(&id), 20);
        assert!(b.enforce_budget(&id).is_empty());
    }

    #[test]
    fn under_budget_evicts_nothing_and_protection_dominates() {
        let mut b = bank(50);
        b.config.tau_minmatch = -1.0;
        b.config.tau_redundant = 1.0;
        b.accept_candidate(entry("SC_01", 0.2, 10, unit(0)));
        b.accept_candidate(entry("SC_01", 0.2, 10, unit(1)));
        let id: EntityId = "SC_01".parse().unwrap();
        assert!(b.enforce_budget(&id).is_empty());

        let mut b = bank(5);
        b.config.tau_minmatch = -1.0;
        b.config.tau_redundant = 1.0;
        b.accept_candidate(entry("SC_01", 0.2, 10, unit(0)));
        b.accept_candidate(entry("SC_01", 0.9, 1, unit(1)));
        assert_eq!(b.enforce_budget(&id), vec![1]);
        assert_eq!(b.entries(&id)[0].entry_index, 0);
    }

    #[test]
    fn ties_prefer_older_entries() {
        let mut b = bank(11);
        b.config.tau_minmatch = -1.0;
        b.config.tau_redundant = 1.0;
        b.accept_candidate(entry("CH_01", 0.1, 2, unit(0)));
        b.accept_candidate(entry("CH_01", 0.5, 5, unit(1)));
        b.accept_candidate(entry("CH_01", 0.5, 5, unit(2)));
        b.accept_candidate(entry("CH_01", 0.5, 5, unit(3)));
        assert_eq!(b.enforce_budget(&"CH_01".parse().unwrap()), vec![2, 3]);
    }

    #[test]
    fn config_validation() {
        let mut c = BankConfig::default();
        assert!(c.validate().is_ok());
        c.tau_minmatch = 0.96;
        assert!(c.validate().is_err());
        let c = BankConfig {
            token_budget: 0,
            ..BankConfig::default()
        };
        assert!(EntityBank::new(c).is_err());
    }

    #[test]
    fn build_entry_patch_selection() {
        let config = BankConfig {
            layout: MemoryLayout::new(1, 4, 8, 8, 2, 2).unwrap(),
            ..BankConfig::default()
        };
        let vae = VaeMock::new(8, 4, 1).unwrap();
        let frame = Frame::from_fn(64, 64, |y, x, c| ((y + 2 * x + c) % 7) as f32 / 7.0);
        let ch: EntityId = "CH_01".parse().unwrap();
        let full = build_entry(
            &frame,
            &PixelMask::full(64, 64),
            &ch,
            "a boy",
            3,
            EntryOrigin::UserReference,
            &SyntheticDescriptor,
            &vae,
            &config,
        )
        .unwrap();
        assert_eq!(full.token_cost(), 16);
        assert!(full
            .patches
            .iter()
            .all(|p| p.frame_index == 3 && p.values.len() == 16));

        let one = build_entry(
            &frame,
            &PixelMask::rect(64, 64, 16, 32, 32, 48),
            &ch,
            "a boy",
            0,
            EntryOrigin::UserReference,
            &SyntheticDescriptor,
            &vae,
            &config,
        )
        .unwrap();
        assert_eq!(one.token_cost(), 1);
        assert_eq!(one.patches[0].coord, PatchCoord::new(2, 1));
        let latent = vae.encode(&frame).unwrap();
        assert_eq!(
            one.patches[0].values,
            gather_patch_values(&latent, &config.layout, PatchCoord::new(2, 1))
        );

        // Half mask (left 29 columns): brute-force enumeration of overlapping cells.
        let half = PixelMask::rect(64, 64, 0, 0, 64, 29);
        let e = build_entry(
            &frame,
            &half,
            &ch,
            "a boy",
            0,
            EntryOrigin::UserReference,
            &SyntheticDescriptor,
            &vae,
            &config,
        )
        .unwrap();
        let mut expected = Vec::new();
        for row in 0..4u32 {
            for col in 0..4u32 {
                let overlaps = (row * 16..row * 16 + 16)
                    .any(|y| (col * 16..col * 16 + 16).any(|x| half.get(y as usize, x as usize)));
                if overlaps {
                    expected.push(PatchCoord::new(col, row));
                }
            }
        }
        let got: Vec<_> = e.patches.iter().map(|p| p.coord).collect();
        assert_eq!(got, expected);
        assert_eq!(got.len(), 8);

        assert!(matches!(
            build_entry(
                &frame,
                &PixelMask::empty(64, 64),
                &ch,
                "",
                0,
                EntryOrigin::UserReference,
                &SyntheticDescriptor,
                &vae,
                &config
            ),
            Err(Error::EmptyMask)
        ));
        assert!(build_entry(
            &frame,
            &PixelMask::full(32, 64),
            &ch,
            "",
            0,
            EntryOrigin::UserReference,
            &SyntheticDescriptor,
            &vae,
            &config
        )
        .is_err());
    }

    #[test]
    fn scene_threshold_drops_sparse_footprints() {
        let config = BankConfig {
            layout: MemoryLayout::new(1, 4, 4, 4, 2, 2).unwrap(),
            ..BankConfig::default()
        };
        let vae = VaeMock::new(8, 4, 1).unwrap();
        let frame = Frame::filled(32, 32, [0.4; 3]);
        // One footprint fully covered, another covered at 25%.
        let mask = crate::tensor::union_masks(&[
            PixelMask::rect(32, 32, 0, 0, 16, 16),
            PixelMask::rect(32, 32, 16, 16, 24, 24),
        ])
        .unwrap();
        let scene = build_entry(
            &frame,
            &mask,
            &"SC_01".parse().unwrap(),
            "",
            0,
            EntryOrigin::UserReference,
            &SyntheticDescriptor,
            &vae,
            &config,
        )
        .unwrap();
        assert_eq!(scene.token_cost(), 1);
        let subject = build_entry(
            &frame,
            &mask,
            &"OB_01".parse().unwrap(),
            "",
            0,
            EntryOrigin::UserReference,
            &SyntheticDescriptor,
            &vae,
            &config,
        )
        .unwrap();
        assert_eq!(subject.token_cost(), 2);
    }
}
