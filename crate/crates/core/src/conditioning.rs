//! Inference-time sparse memory: retrieval, scatter to the dense memory
//! layout, token pruning, a mock attention step, scatter-back and cost
//! accounting.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::bank::EntityBank;
use crate::codec::{Patchifier, SparseToken, TokenGrid};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, SplitMix64};
use crate::script::EntityId;
use crate::tensor::{LatentGrid, MemoryLayout, PatchCoord, PatchMask};

#[derive(Debug, Clone, PartialEq)]
pub struct PatchItem {
    pub slot: usize,
    pub coord: PatchCoord,
    /// `C × p_h × p_w` values in `(channel, dy, dx)` order.
    pub values: Vec<f32>,
}

/// Unstructured set of latent patches addressed by `(slot, coord)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    layout: MemoryLayout,
    items: Vec<PatchItem>,
}

impl PatchSet {
    pub fn new(layout: MemoryLayout, items: Vec<PatchItem>) -> Result<Self> {
        layout.validate()?;
        let mut seen = BTreeSet::new();
        for item in &items {
            if item.slot >= layout.slots
                || item.coord.x as usize >= layout.cols()
                || item.coord.y as usize >= layout.rows()
            {
                return Err(Error::CoordinateOutOfRange {
                    slot: item.slot,
                    x: item.coord.x,
                    y: item.coord.y,
                });
            }
            if item.values.len() != layout.patch_len() {
                return Err(Error::LengthMismatch {
                    expected: layout.patch_len(),
                    found: item.values.len(),
                });
            }
            if !seen.insert((item.slot, item.coord)) {
                return Err(Error::DuplicateCoordinate {
                    slot: item.slot,
                    x: item.coord.x,
                    y: item.coord.y,
                });
            }
        }
        Ok(Self { layout, items })
    }

    pub fn empty(layout: MemoryLayout) -> Self {
        Self {
            layout: layout.with_slots(0),
            items: Vec::new(),
        }
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.layout
    }

    pub fn items(&self) -> &[PatchItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn patch_mask(&self) -> PatchMask {
        let mut mask = PatchMask::empty(&self.layout);
        for item in &self.items {
            mask.set(item.slot, item.coord, true);
        }
        mask
    }
}

/// Bank entry occupying one memory-frame slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemorySlot {
    pub entity: EntityId,
    pub entry_index: u32,
    pub token_cost: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub patches: PatchSet,
    /// Slot `s` of `patches` holds `slots[s]`.
    pub slots: Vec<MemorySlot>,
    /// Requested ids the bank does not know.
    pub missing: Vec<EntityId>,
}

/// Collects every entry of the requested entities, one slot per
/// `(entity, entry_index)` in `(raw id, entry_index)` order.
pub fn retrieve_memory(bank: &EntityBank, ids: &[EntityId]) -> Result<Retrieval> {
    let requested: BTreeSet<&EntityId> = ids.iter().collect();
    let mut missing = Vec::new();
    let mut slots = Vec::new();
    let mut items = Vec::new();
    let frame_layout = bank.config().layout;
    for id in requested {
        if !bank.contains(id) {
            log::warn!("entity {id} is not in the bank; skipped");
            missing.push(id.clone());
            continue;
        }
        let mut entries: Vec<_> = bank.entries(id).iter().collect();
        entries.sort_by_key(|e| e.entry_index);
        for entry in entries {
            let slot = slots.len();
            items.extend(entry.patches.iter().map(|p| PatchItem {
                slot,
                coord: p.coord,
                values: p.values.clone(),
            }));
            slots.push(MemorySlot {
                entity: id.clone(),
                entry_index: entry.entry_index,
                token_cost: entry.token_cost(),
            });
        }
    }
    Ok(Retrieval {
        patches: PatchSet::new(frame_layout.with_slots(slots.len()), items)?,
        slots,
        missing,
    })
}

/// Writes every patch into a zero-initialized dense grid, one per slot.
pub fn scatter_to_dense(patches: &PatchSet) -> Result<(Vec<LatentGrid>, PatchMask)> {
    let layout = patches.layout();
    let mut grids =
        vec![LatentGrid::zeros(layout.channels, layout.height, layout.width); layout.slots];
    let mut mask = PatchMask::empty(layout);
    for item in patches.items() {
        if mask.get(item.slot, item.coord) {
            return Err(Error::DuplicateCoordinate {
                slot: item.slot,
                x: item.coord.x,
                y: item.coord.y,
            });
        }
        mask.set(item.slot, item.coord, true);
        let grid = &mut grids[item.slot];
        let mut i = 0;
        for c in 0..layout.channels {
            for dy in 0..layout.patch_h {
                for dx in 0..layout.patch_w {
                    grid.set(
                        c,
                        item.coord.y as usize * layout.patch_h + dy,
                        item.coord.x as usize * layout.patch_w + dx,
                        item.values[i],
                    );
                    i += 1;
                }
            }
        }
    }
    Ok((grids, mask))
}

/// One flag per canonical token position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    bits: Vec<bool>,
}

impl TokenMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn filled(len: usize, value: bool) -> Self {
        Self {
            bits: vec![value; len],
        }
    }

    pub fn from_patch_mask(mask: &PatchMask) -> Self {
        Self {
            bits: mask.bits().to_vec(),
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn concat(&self, other: &TokenMask) -> TokenMask {
        let mut bits = self.bits.clone();
        bits.extend_from_slice(&other.bits);
        TokenMask { bits }
    }
}

/// Keeps the tokens whose mask bit is set, in canonical order.
pub fn prune_tokens(tokens: &TokenGrid, mask: &TokenMask) -> Result<Vec<SparseToken>> {
    if mask.len() != tokens.len() {
        return Err(Error::LengthMismatch {
            expected: tokens.len(),
            found: mask.len(),
        });
    }
    Ok(mask
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(position, _)| SparseToken {
            position,
            values: tokens.token(position).to_vec(),
        })
        .collect())
}

/// Writes `predictions` at the set positions of `mask` (in order) over a copy
/// of `fill`.
pub fn scatter_tokens_back<T: AsRef<[f32]>>(
    predictions: &[T],
    mask: &TokenMask,
    fill: &TokenGrid,
) -> Result<TokenGrid> {
    if mask.len() != fill.len() {
        return Err(Error::LengthMismatch {
            expected: fill.len(),
            found: mask.len(),
        });
    }
    let expected = mask.count();
    if predictions.len() != expected {
        return Err(Error::CountMismatch {
            expected,
            found: predictions.len(),
        });
    }
    let mut out = fill.clone();
    let positions = mask
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(p, _)| p);
    for (position, pred) in positions.zip(predictions) {
        let pred = pred.as_ref();
        if pred.len() != fill.dim() {
            return Err(Error::dims(format!(
                "prediction width {} differs from token width {}",
                pred.len(),
                fill.dim()
            )));
        }
        out.token_mut(position).copy_from_slice(pred);
    }
    Ok(out)
}

/// Single-head scaled dot-product attention with seeded projections.
/// Targets attend over `memory ++ targets`; the output is the attention
/// readout.
#[derive(Debug, Clone)]
pub struct MockDit {
    dim: usize,
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
}

impl MockDit {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(derive_seed(seed, stream::ATTENTION));
        // Uniform on [-a, a] has variance a²/3; a = sqrt(3/D) gives 1/D.
        let a = (3.0 / dim.max(1) as f64).sqrt();
        let mut matrix = || {
            (0..dim * dim)
                .map(|_| rng.uniform(-a, a))
                .collect::<Vec<f64>>()
        };
        let wq = matrix();
        let wk = matrix();
        let wv = matrix();
        Self { dim, wq, wk, wv }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn project(&self, w: &[f64], x: &[f32]) -> Vec<f64> {
        (0..self.dim)
            .map(|d| {
                w[d * self.dim..(d + 1) * self.dim]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * f64::from(*v))
                    .sum()
            })
            .collect()
    }

    pub fn step<M: AsRef<[f32]>, T: AsRef<[f32]>>(
        &self,
        memory: &[M],
        targets: &[T],
    ) -> Result<Vec<Vec<f32>>> {
        let context: Vec<&[f32]> = memory
            .iter()
            .map(AsRef::as_ref)
            .chain(targets.iter().map(AsRef::as_ref))
            .collect();
        if let Some(bad) = context.iter().find(|t| t.len() != self.dim) {
            return Err(Error::dims(format!(
                "token width {} differs from {}",
                bad.len(),
                self.dim
            )));
        }
        let keys: Vec<Vec<f64>> = context.iter().map(|x| self.project(&self.wk, x)).collect();
        let values: Vec<Vec<f64>> = context.iter().map(|x| self.project(&self.wv, x)).collect();
        let scale = 1.0 / (self.dim as f64).sqrt();
        let mut out = Vec::with_capacity(targets.len());
        let mut scores = vec![0.0f64; context.len()];
        for t in targets {
            let q = self.project(&self.wq, t.as_ref());
            for (s, k) in scores.iter_mut().zip(&keys) {
                *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut acc = vec![0.0f64; self.dim];
            let mut total = 0.0;
            for (s, v) in scores.iter().zip(&values) {
                let w = (s - max).exp();
                total += w;
                acc.iter_mut().zip(v).for_each(|(a, v)| *a += w * v);
            }
            out.push(acc.iter().map(|a| (a / total) as f32).collect());
        }
        Ok(out)
    }
}

/// Conditioning tensors for one shot: clean memory tokens `z_c`, noisy target
/// tokens `z_t`, the per-slot conditioning flag `z_mask`, and the memory token
/// mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningState {
    memory: TokenGrid,
    target: TokenGrid,
    slot_mask: Vec<bool>,
    token_mask: TokenMask,
}

impl ConditioningState {
    pub fn new(memory: TokenGrid, target: TokenGrid, token_mask: TokenMask) -> Result<Self> {
        if memory.dim() != target.dim() {
            return Err(Error::dims("memory and target token widths differ"));
        }
        if memory.layout().with_slots(0) != target.layout().with_slots(0) {
            return Err(Error::dims("memory and target grids differ in geometry"));
        }
        if token_mask.len() != memory.len() {
            return Err(Error::LengthMismatch {
                expected: memory.len(),
                found: token_mask.len(),
            });
        }
        let mut slot_mask = vec![true; memory.layout().slots];
        slot_mask.resize(memory.layout().slots + target.layout().slots, false);
        Ok(Self {
            memory,
            target,
            slot_mask,
            token_mask,
        })
    }

    /// Scatters `patches` densely, patchifies them as `z_c` and masks
    /// exactly the written cells.
    pub fn from_patches(
        patchifier: &Patchifier,
        patches: &PatchSet,
        target: TokenGrid,
    ) -> Result<Self> {
        let (dense, mask) = scatter_to_dense(patches)?;
        let memory = patchifier.patchify(&dense)?;
        Self::new(memory, target, TokenMask::from_patch_mask(&mask))
    }

    pub fn memory(&self) -> &TokenGrid {
        &self.memory
    }

    pub fn target(&self) -> &TokenGrid {
        &self.target
    }

    /// `true` for conditioning slots, `false` for generated slots.
    pub fn slot_mask(&self) -> &[bool] {
        &self.slot_mask
    }

    pub fn token_mask(&self) -> &TokenMask {
        &self.token_mask
    }
}

/// Runs `steps` mock denoising steps over the pruned memory and returns the
/// unpatchified target latents. Only `z_t` changes.
pub fn denoise_shot(
    state: &mut ConditioningState,
    steps: usize,
    patchifier: &Patchifier,
    dit: &MockDit,
) -> Result<Vec<LatentGrid>> {
    let memory_slots = state.memory.layout().slots;
    let memory_before = state.memory.clone();
    let slot_mask_before = state.slot_mask.clone();
    let keep = state
        .token_mask
        .concat(&TokenMask::filled(state.target.len(), true));
    let write = TokenMask::filled(state.memory.len(), false)
        .concat(&TokenMask::filled(state.target.len(), true));
    for _ in 0..steps {
        let combined = state.memory.concat(&state.target)?;
        let kept = prune_tokens(&combined, &keep)?;
        let split = kept.partition_point(|t| t.position < state.memory.len());
        let predictions = dit.step(&kept[..split], &kept[split..])?;
        let updated = scatter_tokens_back(&predictions, &write, &combined)?;
        let (memory_after, target_after) = updated.split_at_slot(memory_slots);
        assert!(
            memory_after == state.memory,
            "conditioning tokens changed during denoising"
        );
        state.target = target_after;
    }
    assert!(state.memory == memory_before && state.slot_mask == slot_mask_before);
    patchifier.unpatchify(&state.target)
}

/// Attention cost under the quadratic counting model.
pub fn attention_ops(tokens: usize) -> u64 {
    (tokens as u64) * (tokens as u64)
}

/// Per-shot memory token and attention-op counts (ops are per step).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub tokens_full: usize,
    pub tokens_kept: usize,
    pub target_tokens: usize,
    pub reduction: f64,
    pub attention_ops_full: u64,
    pub attention_ops_kept: u64,
}

impl CostReport {
    fn from_counts(
        tokens_full: usize,
        tokens_kept: usize,
        target_tokens: usize,
        ops_full: u64,
        ops_kept: u64,
    ) -> Self {
        let reduction = if tokens_full == 0 {
            0.0
        } else {
            1.0 - tokens_kept as f64 / tokens_full as f64
        };
        Self {
            tokens_full,
            tokens_kept,
            target_tokens,
            reduction,
            attention_ops_full: ops_full,
            attention_ops_kept: ops_kept,
        }
    }

    /// Ratio of dense to pruned attention ops.
    pub fn ops_ratio(&self) -> f64 {
        if self.attention_ops_kept == 0 {
            return f64::INFINITY;
        }
        self.attention_ops_full as f64 / self.attention_ops_kept as f64
    }

    /// Sums counts across shots; the reduction is recomputed from the totals.
    pub fn aggregate(reports: &[CostReport]) -> CostReport {
        let full = reports.iter().map(|r| r.tokens_full).sum();
        let kept = reports.iter().map(|r| r.tokens_kept).sum();
        let targets = reports.iter().map(|r| r.target_tokens).sum();
        let ops_full = reports.iter().map(|r| r.attention_ops_full).sum();
        let ops_kept = reports.iter().map(|r| r.attention_ops_kept).sum();
        Self::from_counts(full, kept, targets, ops_full, ops_kept)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tokens_full={}", self.tokens_full);
        let _ = writeln!(s, "tokens_kept={}", self.tokens_kept);
        let _ = writeln!(s, "target_tokens={}", self.target_tokens);
        let _ = writeln!(s, "reduction={:.6}", self.reduction);
        let _ = writeln!(s, "attention_ops_full={}", self.attention_ops_full);
        let _ = writeln!(s, "attention_ops_kept={}", self.attention_ops_kept);
        s
    }

    /// Parses the output of [`CostReport::to_text`]; the reduction is
    /// recomputed from the counts.
    pub fn from_text(text: &str) -> Result<CostReport> {
        let mut values = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("cost line without '=': {line}")))?;
            values.insert(k.trim(), v.trim());
        }
        let get = |key: &str| -> Result<u64> {
            values
                .get(key)
                .ok_or_else(|| Error::Format(format!("cost report lacks {key}")))?
                .parse::<u64>()
                .map_err(|e| Error::Format(format!("{key}: {e}")))
        };
        Ok(Self::from_counts(
            get("tokens_full")? as usize,
            get("tokens_kept")? as usize,
            get("target_tokens")? as usize,
            get("attention_ops_full")?,
            get("attention_ops_kept")?,
        ))
    }
}

/// Cost of conditioning on `memory_layout` densely versus only on the tokens
/// set in `mask`, with `target_tokens` generated tokens attending alongside.
pub fn cost_report(
    memory_layout: &MemoryLayout,
    mask: &TokenMask,
    target_tokens: usize,
) -> CostReport {
    let full = memory_layout.token_count();
    let kept = mask.count();
    CostReport::from_counts(
        full,
        kept,
        target_tokens,
        attention_ops(full + target_tokens),
        attention_ops(kept + target_tokens),
    )
}
