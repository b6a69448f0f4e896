use std::collections::BTreeMap;

use crate::bank::{
    AcceptOutcome, DescriptorProvider, EntityBank, EntryOrigin, SyntheticDescriptor,
};
use crate::codec::{Patchifier, TokenGrid, VaeMock};
use crate::conditioning::{
    cost_report, denoise_shot, retrieve_memory, ConditioningState, CostReport, MemorySlot, MockDit,
    TokenMask,
};
use crate::control::background_suppressed_entry;
use crate::error::{Error, Result};
use crate::metrics::{
    sample_frame_indices, shot_subject_embedding, BackgroundObservation, EmbeddingMode,
    MetricsReport, SubjectObservation,
};
use crate::rng::{derive_seed, fnv1a64, stream, SplitMix64};
use crate::script::{extract_entity_refs, EntityId, Shot, StoryScript};
use crate::tensor::{scene_complement, Frame, LatentGrid, PixelMask};

use super::config::RunConfig;
use super::synth::{laplacian_variance, mock_shot_synthesizer, select_keyframes};

/// A loaded reference: frame, entity mask and entity.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub frame: Frame,
    pub mask: PixelMask,
    pub entity: EntityId,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CandidateStatus {
    Decided(AcceptOutcome),
    /// The mask selected no latent patch.
    SkippedEmpty,
}

impl CandidateStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CandidateStatus::Decided(o) => o.decision.as_str(),
            CandidateStatus::SkippedEmpty => "skipped_empty_mask",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub keyframe: usize,
    pub entity: EntityId,
    pub token_cost: usize,
    pub status: CandidateStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityUpdate {
    pub entity: EntityId,
    pub evicted: Vec<u32>,
    pub entries_after: usize,
    pub token_cost_after: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShotResult {
    pub shot_num: u32,
    /// Entities referenced by the abstract prompt, in prompt order.
    pub entities: Vec<EntityId>,
    pub slots: Vec<MemorySlot>,
    pub missing: Vec<EntityId>,
    pub latent: LatentGrid,
    pub frames: Vec<Frame>,
    pub masks: BTreeMap<EntityId, Vec<PixelMask>>,
    pub keyframes: Vec<usize>,
    pub updated: bool,
    pub candidates: Vec<CandidateRecord>,
    pub updates: Vec<EntityUpdate>,
    pub cost: CostReport,
    pub bank_after: EntityBank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub initial_bank: EntityBank,
    pub bank: EntityBank,
    pub shots: Vec<ShotResult>,
    pub metrics: MetricsReport,
    pub aggregate: CostReport,
}

/// Seeded components shared by every shot of a run.
pub struct Engine {
    config: RunConfig,
    vae: VaeMock,
    patchifier: Patchifier,
    dit: MockDit,
    provider: SyntheticDescriptor,
}

impl Engine {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.bank.layout.with_slots(1);
        let patchifier = Patchifier::new(layout, config.seed)?;
        Ok(Self {
            vae: VaeMock::new(config.bank.vae_stride, layout.channels, config.seed)?,
            dit: MockDit::new(patchifier.dim(), config.seed),
            patchifier,
            provider: SyntheticDescriptor,
            config,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn vae(&self) -> &VaeMock {
        &self.vae
    }

    pub fn provider(&self) -> &dyn DescriptorProvider {
        &self.provider
    }

    fn noise_seed(&self, tag: &[u8]) -> u64 {
        derive_seed(self.config.seed ^ fnv1a64(tag), stream::NOISE)
    }

    /// Bank with every declared entity registered and the references
    /// accepted in order (budget enforced afterwards).
    pub fn initial_bank(
        &self,
        script: &StoryScript,
        references: &[Reference],
    ) -> Result<EntityBank> {
        let mut bank = EntityBank::new(self.config.bank)?;
        for decl in script.declarations() {
            bank.register(decl.id.clone());
        }
        for (r, reference) in references.iter().enumerate() {
            let description = script.description(&reference.entity).ok_or_else(|| {
                Error::Validation(vec![format!(
                    "reference {r} names undeclared {}",
                    reference.entity
                )])
            })?;
            let entry = background_suppressed_entry(
                &reference.frame,
                &reference.mask,
                &reference.entity,
                description,
                r as u32,
                EntryOrigin::UserReference,
                self.config.noise_sigma,
                self.noise_seed(format!("reference/{r}").as_bytes()),
                &self.provider,
                &self.vae,
                &self.config.bank,
            )?;
            let outcome = bank.accept_candidate(entry);
            if !outcome.decision.is_accepted() {
                log::warn!(
                    "reference {r} for {} {}",
                    reference.entity,
                    outcome.decision.as_str()
                );
            }
        }
        let ids: Vec<EntityId> = bank.entity_ids().cloned().collect();
        for id in &ids {
            bank.enforce_budget(id);
        }
        Ok(bank)
    }

    /// Runs the shot at 0-based `position` of the script against `bank`.
    pub fn run_shot(
        &self,
        script: &StoryScript,
        bank: &mut EntityBank,
        position: usize,
    ) -> Result<ShotResult> {
        let shot: &Shot = script
            .shots
            .get(position)
            .ok_or_else(|| Error::InvalidConfig(format!("no shot at position {position}")))?;
        let n = shot.shot_num;
        let shot_seed = derive_seed(self.config.seed, 0x5307_0000 + u64::from(n));
        let layout = self.config.bank.layout.with_slots(1);

        let refs = extract_entity_refs(&shot.abstract_prompt);
        for w in &refs.warnings {
            log::warn!("shot {n}: {w}");
        }
        let retrieval = retrieve_memory(bank, &refs.ids).map_err(|e| e.at_stage(n, "retrieve"))?;

        let mut init = SplitMix64::new(derive_seed(shot_seed, stream::TARGET_INIT));
        let z_t = TokenGrid::new(
            layout,
            self.patchifier.dim(),
            (0..layout.token_count() * self.patchifier.dim())
                .map(|_| init.normal() as f32)
                .collect(),
        )
        .map_err(|e| e.at_stage(n, "denoise"))?;
        let mut state = ConditioningState::from_patches(&self.patchifier, &retrieval.patches, z_t)
            .map_err(|e| e.at_stage(n, "denoise"))?;
        let mut latents = denoise_shot(
            &mut state,
            self.config.steps_per_shot,
            &self.patchifier,
            &self.dit,
        )
        .map_err(|e| e.at_stage(n, "denoise"))?;
        let latent = latents.pop().expect("one target slot");
        let cost = cost_report(
            retrieval.patches.layout(),
            state.token_mask(),
            layout.cells_per_slot(),
        );
        debug_assert_eq!(
            cost.tokens_kept,
            retrieval.slots.iter().map(|s| s.token_cost).sum::<usize>()
        );

        let synth = mock_shot_synthesizer(
            script,
            &refs.ids,
            &retrieval,
            &self.vae,
            &layout,
            self.config.frames_per_shot,
            shot_seed,
        )
        .map_err(|e| e.at_stage(n, "synthesize"))?;
        let keyframes = select_keyframes(
            &synth.frames,
            &laplacian_variance,
            self.config.keyframes_per_shot,
        )
        .map_err(|e| e.at_stage(n, "keyframes"))?;

        let updated = self.config.updates_after(position);
        let mut candidates = Vec::new();
        let mut updates = Vec::new();
        if updated {
            let frame_base = self.config.references.len() + position * self.config.frames_per_shot;
            for &k in &keyframes {
                for (entity, masks) in &synth.masks {
                    let mask = &masks[k];
                    let description = script.description(entity).unwrap_or("");
                    let built = if mask.is_empty() {
                        Err(Error::EmptyMask)
                    } else {
                        background_suppressed_entry(
                            &synth.frames[k],
                            mask,
                            entity,
                            description,
                            (frame_base + k) as u32,
                            EntryOrigin::Generated {
                                shot: n,
                                keyframe: k as u32,
                            },
                            self.config.noise_sigma,
                            self.noise_seed(format!("shot/{n}/{k}/{entity}").as_bytes()),
                            &self.provider,
                            &self.vae,
                            &self.config.bank,
                        )
                    };
                    let record = match built {
                        Ok(entry) => CandidateRecord {
                            keyframe: k,
                            entity: entity.clone(),
                            token_cost: entry.token_cost(),
                            status: CandidateStatus::Decided(bank.accept_candidate(entry)),
                        },
                        Err(Error::EmptyMask) => CandidateRecord {
                            keyframe: k,
                            entity: entity.clone(),
                            token_cost: 0,
                            status: CandidateStatus::SkippedEmpty,
                        },
                        Err(e) => return Err(e.at_stage(n, "update")),
                    };
                    candidates.push(record);
                }
            }
            for entity in synth.masks.keys() {
                let evicted = bank.enforce_budget(entity);
                updates.push(EntityUpdate {
                    entity: entity.clone(),
                    evicted,
                    entries_after: bank.entries(entity).len(),
                    token_cost_after: bank.token_cost(entity),
                });
            }
        }

        Ok(ShotResult {
            shot_num: n,
            entities: refs.ids,
            slots: retrieval.slots,
            missing: retrieval.missing,
            latent,
            frames: synth.frames,
            masks: synth.masks,
            keyframes,
            updated,
            candidates,
            updates,
            cost,
            bank_after: bank.clone(),
        })
    }
}

/// Frames and ground-truth masks of one generated shot.
#[derive(Debug, Clone, Copy)]
pub struct ShotView<'a> {
    pub shot_num: u32,
    pub frames: &'a [Frame],
    pub masks: &'a BTreeMap<EntityId, Vec<PixelMask>>,
}

/// Subject observations keyed by embedding mode, plus background observations.
pub type Observations = (
    BTreeMap<EmbeddingMode, Vec<SubjectObservation>>,
    Vec<BackgroundObservation>,
);

/// Subject observations (both embedding modes) and background observations
/// over the four sampled frames of each shot.
pub fn collect_observations(
    script: &StoryScript,
    shots: &[ShotView<'_>],
    provider: &dyn DescriptorProvider,
) -> Result<Observations> {
    let mut subjects: BTreeMap<EmbeddingMode, Vec<SubjectObservation>> = EmbeddingMode::ALL
        .iter()
        .map(|&m| (m, Vec::new()))
        .collect();
    let mut backgrounds = Vec::new();
    for view in shots {
        if view.frames.is_empty() {
            continue;
        }
        let idx = sample_frame_indices(view.frames.len())?;
        let frames: Vec<Frame> = idx.iter().map(|&i| view.frames[i].clone()).collect();
        let (h, w) = (frames[0].height(), frames[0].width());
        let mut subject_masks: Vec<Vec<PixelMask>> = vec![Vec::new(); idx.len()];
        let mut scene_text = Vec::new();
        for (entity, masks) in view.masks {
            if !entity.category().is_subject() {
                scene_text.push(script.description(entity).unwrap_or(""));
                continue;
            }
            let sampled: Vec<PixelMask> = idx.iter().map(|&i| masks[i].clone()).collect();
            for (k, m) in sampled.iter().enumerate() {
                subject_masks[k].push(m.clone());
            }
            if sampled.iter().any(PixelMask::is_empty) {
                continue;
            }
            for mode in EmbeddingMode::ALL {
                subjects
                    .get_mut(&mode)
                    .expect("mode")
                    .push(SubjectObservation {
                        subject: entity.clone(),
                        shot: view.shot_num,
                        embedding: shot_subject_embedding(&frames, &sampled, provider, mode)?,
                        silhouette: sampled[0].clone(),
                    });
            }
        }
        if scene_text.is_empty() {
            continue;
        }
        let scene_masks = subject_masks
            .iter()
            .map(|m| scene_complement(m, h, w))
            .collect::<Result<Vec<_>>>()?;
        if scene_masks.iter().any(PixelMask::is_empty) {
            continue;
        }
        backgrounds.push(BackgroundObservation {
            shot: view.shot_num,
            embedding: shot_subject_embedding(
                &frames,
                &scene_masks,
                provider,
                EmbeddingMode::PatchPooled,
            )?,
            scene_text_embedding: provider.embed_text(&scene_text.join("; ")),
        });
    }
    Ok((subjects, backgrounds))
}

pub fn compute_metrics(
    script: &StoryScript,
    shots: &[ShotView<'_>],
    provider: &dyn DescriptorProvider,
    config: &RunConfig,
) -> Result<MetricsReport> {
    let (subjects, backgrounds) = collect_observations(script, shots, provider)?;
    MetricsReport::compute(&subjects, &backgrounds, &config.metrics)
}

/// Runs every shot in order, then scores the generated shots.
pub fn run_story(
    script: &StoryScript,
    config: &RunConfig,
    references: &[Reference],
) -> Result<RunOutcome> {
    let engine = Engine::new(config.clone())?;
    let initial_bank = engine.initial_bank(script, references)?;
    let mut bank = initial_bank.clone();
    let mut shots = Vec::with_capacity(script.shots.len());
    for position in 0..script.shots.len() {
        let result = engine.run_shot(script, &mut bank, position)?;
        log::info!(
            "shot {}: {} memory slots, {} of {} tokens kept",
            result.shot_num,
            result.slots.len(),
            result.cost.tokens_kept,
            result.cost.tokens_full
        );
        shots.push(result);
    }
    let views: Vec<ShotView<'_>> = shots
        .iter()
        .map(|s| ShotView {
            shot_num: s.shot_num,
            frames: &s.frames,
            masks: &s.masks,
        })
        .collect();
    let metrics = compute_metrics(script, &views, engine.provider(), config)?;
    let aggregate = CostReport::aggregate(&shots.iter().map(|s| s.cost).collect::<Vec<_>>());
    Ok(RunOutcome {
        initial_bank,
        bank,
        shots,
        metrics,
        aggregate,
    })
}

/// Token mask for a bank retrieval, exposed for cost checks.
pub fn retrieval_token_mask(bank: &EntityBank, ids: &[EntityId]) -> Result<TokenMask> {
    let r = retrieve_memory(bank, ids)?;
    Ok(TokenMask::from_patch_mask(&r.patches.patch_mask()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::BankConfig;
    use crate::script::parse_script;
    use crate::tensor::MemoryLayout;

    fn script(shots: usize) -> StoryScript {
        let shots: Vec<String> = (1..=shots)
            .map(|i| {
                let scene = if i % 2 == 0 { "SC_01" } else { "SC_02" };
                format!(
                    r#"{{"shot_num": {i}, "abstract_prompt": "[CH_01] walks with [OB_01] in [{scene}]", "natural_prompt": "shot {i}"}}"#
                )
            })
            .collect();
        parse_script(&format!(
            r#"{{"story_name": "s", "story_overview": "o",
              "characters": [{{"id": "CH_01", "short_description": "tall man in green"}}],
              "objects": [{{"id": "OB_01", "short_description": "small yellow dog"}}],
              "scenes": [{{"id": "SC_01", "short_description": "quiet library"}},
                         {{"id": "SC_02", "short_description": "sunny beach"}}],
              "shots": [{}]}}"#,
            shots.join(",")
        ))
        .unwrap()
    }

    fn small_config() -> RunConfig {
        let mut c = RunConfig::new("unused");
        c.bank = BankConfig {
            layout: MemoryLayout::new(1, 4, 16, 16, 2, 2).unwrap(),
            vae_stride: 4,
            token_budget: 40,
            ..BankConfig::default()
        };
        c.frames_per_shot = 5;
        c.steps_per_shot = 2;
        c.seed = 11;
        c
    }

    #[test]
    fn zero_shot_story() {
        let mut s = script(1);
        s.shots.clear();
        let out = run_story(&s, &small_config(), &[]).unwrap();
        assert!(out.shots.is_empty());
        assert_eq!(out.bank, out.initial_bank);
        assert_eq!(out.aggregate.tokens_full, 0);
    }

    #[test]
    fn single_seeded_entity_covering_ten_percent() {
        let mut c = small_config();
        // 20×20 latent, p = 2 → 100 cells; 10 cells covered.
        c.bank.layout = MemoryLayout::new(1, 4, 20, 20, 2, 2).unwrap();
        c.bank.vae_stride = 4;
        let frame = Frame::filled(80, 80, [0.7, 0.2, 0.2]);
        let mask = PixelMask::rect(80, 80, 0, 0, 16, 40);
        let reference = Reference {
            frame,
            mask,
            entity: "CH_01".parse().unwrap(),
        };
        let mut s = script(1);
        s.shots[0].abstract_prompt = "[CH_01] waits".into();
        let out = run_story(&s, &c, &[reference]).unwrap();
        let cost = out.shots[0].cost;
        assert_eq!((cost.tokens_full, cost.tokens_kept), (100, 10));
        assert!((cost.reduction - 0.9).abs() < 1e-12);
    }

    #[test]
    fn story_updates_bank_and_respects_budget() {
        let c = small_config();
        let s = script(4);
        let out = run_story(&s, &c, &[]).unwrap();
        assert_eq!(out.shots.len(), 4);
        // Nothing was stored before shot 1, so it conditions on nothing.
        assert_eq!(out.shots[0].cost.tokens_kept, 0);
        assert!(out.bank.total_entries() > 0);
        assert!(out.shots[1].cost.tokens_kept > 0);
        for shot in &out.shots {
            assert_eq!(shot.frames.len(), 5);
            assert_eq!(shot.keyframes.len(), 2);
            for id in shot.bank_after.entity_ids() {
                let entries = shot.bank_after.entries(id);
                if let Some(first) = entries.first() {
                    assert_eq!(first.entry_index, 0);
                    assert!(
                        shot.bank_after.token_cost(id)
                            <= c.bank.token_budget.max(first.token_cost())
                    );
                }
            }
        }
        assert!(out.metrics.modes.iter().all(|m| m.csc.is_some()));
    }

    #[test]
    fn disabled_updates_leave_bank_untouched() {
        let mut c = small_config();
        c.update_every = 0;
        let out = run_story(&script(3), &c, &[]).unwrap();
        assert_eq!(out.bank, out.initial_bank);
        assert!(out
            .shots
            .iter()
            .all(|s| !s.updated && s.candidates.is_empty()));
    }

    #[test]
    fn reruns_are_identical() {
        let c = small_config();
        let s = script(3);
        assert_eq!(
            run_story(&s, &c, &[]).unwrap(),
            run_story(&s, &c, &[]).unwrap()
        );
    }

    #[test]
    fn undeclared_reference_is_rejected() {
        let reference = Reference {
            frame: Frame::filled(64, 64, [0.5; 3]),
            mask: PixelMask::full(64, 64),
            entity: "CH_09".parse().unwrap(),
        };
        assert!(matches!(
            run_story(&script(1), &small_config(), &[reference]),
            Err(Error::Validation(_))
        ));
    }
}
