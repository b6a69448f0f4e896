use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use entbank_bench::{over_budget_bank, random_patch_set};
use entbank_core::conditioning::{
    denoise_shot, prune_tokens, scatter_to_dense, ConditioningState, MockDit, TokenMask,
};
use entbank_core::{MemoryLayout, Patchifier, SplitMix64, TokenGrid};

fn layout() -> MemoryLayout {
    MemoryLayout::new(4, 4, 32, 32, 2, 2).expect("valid layout")
}

fn patchify_routes(c: &mut Criterion) {
    let l = layout();
    let p = Patchifier::new(l, 1).expect("patchifier");
    let mut group = c.benchmark_group("patchify");
    for density in [0.05, 0.111, 0.5] {
        let set = random_patch_set(l, density, 42);
        group.bench_with_input(
            BenchmarkId::new("sparse_direct", density),
            &set,
            |b, set| b.iter(|| p.sparse_patchify_direct(black_box(set)).expect("sparse")),
        );
        group.bench_with_input(
            BenchmarkId::new("dense_then_prune", density),
            &set,
            |b, set| {
                b.iter(|| {
                    let (grids, mask) = scatter_to_dense(black_box(set)).expect("scatter");
                    prune_tokens(
                        &p.patchify(&grids).expect("patchify"),
                        &TokenMask::from_patch_mask(&mask),
                    )
                    .expect("prune")
                })
            },
        );
    }
    group.finish();
}

fn denoise(c: &mut Criterion) {
    let l = MemoryLayout::new(4, 4, 16, 16, 2, 2).expect("valid layout");
    let target_layout = l.with_slots(1);
    let p = Patchifier::new(l, 3).expect("patchifier");
    let pt = Patchifier::new(target_layout, 3).expect("patchifier");
    let dit = MockDit::new(p.dim(), 3);
    let set = random_patch_set(l, 0.111, 9);
    let (grids, mask) = scatter_to_dense(&set).expect("scatter");
    let memory = p.patchify(&grids).expect("patchify");
    let mut rng = SplitMix64::new(5);
    let target = TokenGrid::new(
        target_layout,
        p.dim(),
        (0..target_layout.token_count() * p.dim())
            .map(|_| rng.normal() as f32)
            .collect(),
    )
    .expect("target");
    let mut group = c.benchmark_group("denoise_step");
    group.sample_size(20);
    for (name, token_mask) in [
        ("pruned", TokenMask::from_patch_mask(&mask)),
        ("full", TokenMask::filled(memory.len(), true)),
    ] {
        let state =
            ConditioningState::new(memory.clone(), target.clone(), token_mask).expect("state");
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut s = state.clone();
                denoise_shot(&mut s, 1, &pt, &dit).expect("denoise")
            })
        });
    }
    group.finish();
}

fn budget(c: &mut Criterion) {
    let mut group = c.benchmark_group("enforce_budget");
    for entries in [8usize, 64] {
        let (bank, id) = over_budget_bank(entries, 64, 17);
        group.bench_with_input(BenchmarkId::from_parameter(entries), &bank, |b, bank| {
            b.iter(|| {
                let mut bank = bank.clone();
                bank.enforce_budget(&id)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, patchify_routes, denoise, budget);
criterion_main!(benches);
