//! Seeded fixtures shared by the benchmarks in `benches/`.

use entbank_core::bank::{EntityEntry, EntryOrigin, LatentPatch};
use entbank_core::conditioning::{PatchItem, PatchSet};
use entbank_core::{BankConfig, EntityBank, EntityId, MemoryLayout, PatchCoord, SplitMix64};

/// Patch set with each cell of each slot present with probability `density`.
pub fn random_patch_set(layout: MemoryLayout, density: f64, seed: u64) -> PatchSet {
    let mut rng = SplitMix64::new(seed);
    let mut items = Vec::new();
    for slot in 0..layout.slots {
        for y in 0..layout.rows() {
            for x in 0..layout.cols() {
                if rng.next_f64() < density {
                    items.push(PatchItem {
                        slot,
                        coord: PatchCoord::new(x as u32, y as u32),
                        values: (0..layout.patch_len())
                            .map(|_| rng.normal() as f32)
                            .collect(),
                    });
                }
            }
        }
    }
    PatchSet::new(layout, items).expect("generated coordinates are in range")
}

fn unit(dim: usize, parts: &[(usize, f32)]) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    for &(i, x) in parts {
        v[i] = x;
    }
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Bank holding one entity with `entries` accepted entries of random cost
/// and relevance, left over budget so that `enforce_budget` has work to do.
pub fn over_budget_bank(entries: usize, budget: usize, seed: u64) -> (EntityBank, EntityId) {
    let config = BankConfig {
        token_budget: budget,
        ..BankConfig::default()
    };
    let mut bank = EntityBank::new(config).expect("default config is valid");
    let id: EntityId = "CH_01".parse().expect("valid id");
    let mut rng = SplitMix64::new(seed);
    let dim = entries + 1;
    let cells = config.layout.cells_per_slot();
    for k in 0..entries {
        // Every later entry sits at cosine 0.7 to the first and 0.49 to the rest.
        let appearance = if k == 0 {
            unit(dim, &[(0, 1.0)])
        } else {
            unit(dim, &[(0, 0.7), (k, 0.51f32.sqrt())])
        };
        let cost = 1 + (rng.next_u64() % 48) as usize;
        let patches = (0..cost)
            .map(|i| LatentPatch {
                coord: PatchCoord::new(
                    (i % config.layout.cols()) as u32,
                    (i / config.layout.cols()) as u32,
                ),
                frame_index: k as u32,
                values: vec![0.0; config.layout.patch_len()],
            })
            .take(cells)
            .collect();
        let outcome = bank.accept_candidate(EntityEntry {
            entity: id.clone(),
            entry_index: 0,
            patches,
            appearance,
            relevance: rng.next_f64() * 2.0 - 1.0,
            origin: EntryOrigin::UserReference,
        });
        assert!(outcome.decision.is_accepted());
    }
    (bank, id)
}
