//! Deterministic stand-in for shot generation and keyframe selection. The
//! synthesizer is not meant to look like video; it only has to put retrieved
//! entities back on screen recognizably so the update loop and the metrics
//! have something to measure.

use std::collections::BTreeMap;

use crate::codec::VaeMock;
use crate::conditioning::Retrieval;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, fnv1a64, stream, SplitMix64};
use crate::script::{EntityId, StoryScript};
use crate::tensor::{scene_complement, Frame, MemoryLayout, PixelMask};

const MAX_JITTER: i64 = 2;
const MAX_BLUR: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub frames: Vec<Frame>,
    /// Ground-truth mask per frame for every referenced entity. Subjects own
    /// the pixels they were painted on; scenes get everything else.
    pub masks: BTreeMap<EntityId, Vec<PixelMask>>,
}

struct Canvas<'a> {
    frame: Frame,
    owner: Vec<Option<usize>>,
    vae: &'a VaeMock,
    layout: MemoryLayout,
}

impl Canvas<'_> {
    fn paint_patch(&mut self, values: &[f32], row: i64, col: i64, owner: Option<usize>) {
        let l = self.layout;
        if row < 0 || col < 0 || row as usize >= l.rows() || col as usize >= l.cols() {
            return;
        }
        let stride = self.vae.stride();
        let cell = l.patch_h * l.patch_w;
        let mut latent = vec![0.0f32; l.channels];
        for dy in 0..l.patch_h {
            for dx in 0..l.patch_w {
                for (c, v) in latent.iter_mut().enumerate() {
                    *v = values[c * cell + dy * l.patch_w + dx];
                }
                let rgb = self.vae.decode_cell(&latent);
                let y0 = (row as usize * l.patch_h + dy) * stride;
                let x0 = (col as usize * l.patch_w + dx) * stride;
                for y in y0..y0 + stride {
                    for x in x0..x0 + stride {
                        self.frame.set_pixel(y, x, rgb);
                        if owner.is_some() {
                            self.owner[y * self.frame.width() + x] = owner;
                        }
                    }
                }
            }
        }
    }
}

fn hashed_colour(h: u64, shift: u32) -> [f32; 3] {
    [0, 1, 2].map(|c| 0.15 + 0.7 * ((h >> (shift + 8 * c)) & 0xFF) as f32 / 255.0)
}

fn background(height: usize, width: usize, description: &str) -> Frame {
    let h = fnv1a64(description.as_bytes());
    let (c0, c1) = (hashed_colour(h, 0), hashed_colour(h, 24));
    let sx = 8 * (1 + ((h >> 48) % 4) as usize);
    let sy = 8 * (1 + ((h >> 52) % 4) as usize);
    Frame::from_fn(height, width, |y, x, c| {
        if (x / sx + y / sy).is_multiple_of(2) {
            c0[c]
        } else {
            c1[c]
        }
    })
}

/// Separable box blur of the given radius with edge-clamped windows.
pub fn box_blur(frame: &Frame, radius: usize) -> Frame {
    if radius == 0 {
        return frame.clone();
    }
    let (h, w) = (frame.height(), frame.width());
    let pass = |src: &Frame, horizontal: bool| {
        Frame::from_fn(h, w, |y, x, c| {
            let (pos, len) = if horizontal { (x, w) } else { (y, h) };
            let lo = pos.saturating_sub(radius);
            let hi = (pos + radius).min(len - 1);
            let mut sum = 0.0f64;
            for i in lo..=hi {
                sum += f64::from(if horizontal {
                    src.get(y, i, c)
                } else {
                    src.get(i, x, c)
                });
            }
            (sum / (hi - lo + 1) as f64) as f32
        })
    };
    pass(&pass(frame, true), false)
}

/// Paints `frames` frames for one shot.
///
/// The background is derived from the hash of the shot's scene
/// descriptions. Stored scene patches are painted at their source
/// coordinates. Each referenced subject is painted from one of its retrieved
/// entries (entry `frame mod entries`) translated by a per-frame jitter of up
/// to two patches; a subject with no stored entries is drawn as an ellipse
/// derived from its description. Every frame is then box-blurred with a
/// seeded radius in `0..=2`.
#[allow(clippy::too_many_arguments)]
pub fn mock_shot_synthesizer(
    script: &StoryScript,
    refs: &[EntityId],
    retrieval: &Retrieval,
    vae: &VaeMock,
    layout: &MemoryLayout,
    frames: usize,
    seed: u64,
) -> Result<SynthOutput> {
    if vae.channels() != layout.channels {
        return Err(Error::dims("VAE channels differ from the memory layout"));
    }
    let stride = vae.stride();
    let (height, width) = (layout.height * stride, layout.width * stride);
    let describe = |id: &EntityId| script.description(id).unwrap_or("").to_string();

    let mut scenes: Vec<&EntityId> = refs
        .iter()
        .filter(|id| !id.category().is_subject())
        .collect();
    let mut subjects: Vec<&EntityId> = refs
        .iter()
        .filter(|id| id.category().is_subject())
        .collect();
    scenes.sort();
    scenes.dedup();
    subjects.sort();
    subjects.dedup();
    let scene_text = scenes
        .iter()
        .map(|id| describe(id))
        .collect::<Vec<_>>()
        .join("; ");
    let base = background(height, width, &scene_text);

    let mut slots_of: BTreeMap<&EntityId, Vec<usize>> = BTreeMap::new();
    for (s, slot) in retrieval.slots.iter().enumerate() {
        slots_of.entry(&slot.entity).or_default().push(s);
    }
    let mut items_of: Vec<Vec<usize>> = vec![Vec::new(); retrieval.slots.len()];
    for (i, item) in retrieval.patches.items().iter().enumerate() {
        items_of[item.slot].push(i);
    }
    let items = retrieval.patches.items();
    let pick = |id: &EntityId, f: usize| slots_of.get(id).map(|s| s[f % s.len()]);

    let mut rng = SplitMix64::new(derive_seed(seed, stream::SYNTH));
    let mut out_frames = Vec::with_capacity(frames);
    let mut masks: BTreeMap<EntityId, Vec<PixelMask>> =
        refs.iter().map(|id| (id.clone(), Vec::new())).collect();

    for f in 0..frames {
        let mut canvas = Canvas {
            frame: base.clone(),
            owner: vec![None; height * width],
            vae,
            layout: *layout,
        };
        for id in &scenes {
            if let Some(slot) = pick(id, f) {
                for &i in &items_of[slot] {
                    let it = &items[i];
                    canvas.paint_patch(&it.values, it.coord.y.into(), it.coord.x.into(), None);
                }
            }
        }
        for (k, id) in subjects.iter().enumerate() {
            let jy = rng.range_inclusive(-MAX_JITTER, MAX_JITTER);
            let jx = rng.range_inclusive(-MAX_JITTER, MAX_JITTER);
            match pick(id, f) {
                Some(slot) => {
                    for &i in &items_of[slot] {
                        let it = &items[i];
                        canvas.paint_patch(
                            &it.values,
                            i64::from(it.coord.y) + jy,
                            i64::from(it.coord.x) + jx,
                            Some(k),
                        );
                    }
                }
                None => {
                    let fy = (layout.patch_h * stride) as i64;
                    let fx = (layout.patch_w * stride) as i64;
                    paint_ellipse(&mut canvas, &describe(id), jy * fy, jx * fx, k);
                }
            }
        }
        let blur = rng.next_below(MAX_BLUR + 1) as usize;
        let mut subject_masks = Vec::with_capacity(subjects.len());
        for (k, id) in subjects.iter().enumerate() {
            let m =
                PixelMask::from_fn(height, width, |y, x| canvas.owner[y * width + x] == Some(k));
            masks.get_mut(*id).expect("registered").push(m.clone());
            subject_masks.push(m);
        }
        let scene_mask = scene_complement(&subject_masks, height, width)?;
        for id in &scenes {
            masks
                .get_mut(*id)
                .expect("registered")
                .push(scene_mask.clone());
        }
        out_frames.push(box_blur(&canvas.frame, blur));
    }
    Ok(SynthOutput {
        frames: out_frames,
        masks,
    })
}

fn paint_ellipse(canvas: &mut Canvas<'_>, description: &str, oy: i64, ox: i64, owner: usize) {
    let (h, w) = (canvas.frame.height() as i64, canvas.frame.width() as i64);
    let hash = fnv1a64(description.as_bytes());
    let colour = hashed_colour(hash, 8);
    let cy = h / 4 + (hash >> 32) as i64 % (h / 2).max(1) + oy;
    let cx = w / 4 + (hash >> 44) as i64 % (w / 2).max(1) + ox;
    let ry = (h / 8 + (hash >> 56) as i64 % (h / 8).max(1)).max(1);
    let rx = (w / 8 + (hash >> 60) as i64 % (w / 8).max(1)).max(1);
    for y in (cy - ry).max(0)..(cy + ry + 1).min(h) {
        for x in (cx - rx).max(0)..(cx + rx + 1).min(w) {
            let (dy, dx) = (y - cy, x - cx);
            if dy * dy * rx * rx + dx * dx * ry * ry <= rx * rx * ry * ry {
                let shade = 0.85 + 0.15 * ((y + x) % 8) as f32 / 7.0;
                let (y, x) = (y as usize, x as usize);
                canvas.frame.set_pixel(y, x, colour.map(|v| v * shade));
                canvas.owner[y * w as usize + x] = Some(owner);
            }
        }
    }
}

/// Variance of the 4-neighbour discrete Laplacian of luminance over
/// interior pixels; higher means sharper.
pub fn laplacian_variance(frame: &Frame) -> f64 {
    let (h, w) = (frame.height(), frame.width());
    if h < 3 || w < 3 {
        return 0.0;
    }
    let luma = |y: usize, x: usize| {
        let p = frame.pixel(y, x);
        0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])
    };
    let mut values = Vec::with_capacity((h - 2) * (w - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            values.push(
                luma(y - 1, x) + luma(y + 1, x) + luma(y, x - 1) + luma(y, x + 1)
                    - 4.0 * luma(y, x),
            );
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Indices of the `k` highest-scoring frames, best first; ties go to the
/// lower index.
pub fn select_keyframes(
    frames: &[Frame],
    scorer: &dyn Fn(&Frame) -> f64,
    k: usize,
) -> Result<Vec<usize>> {
    if k > frames.len() {
        return Err(Error::InvalidK {
            k,
            available: frames.len(),
        });
    }
    let scores: Vec<f64> = frames.iter().map(scorer).collect();
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{
        build_entry, cosine, BankConfig, DescriptorProvider, EntityBank, EntryOrigin,
        SyntheticDescriptor,
    };
    use crate::conditioning::retrieve_memory;
    use crate::script::parse_script;

    const SCRIPT: &str = r#"{
      "story_name": "t", "story_overview": "o",
      "characters": [{"id": "CH_01", "short_description": "girl in a red coat"}],
      "objects": [{"id": "OB_01", "short_description": "blue kite"}],
      "scenes": [{"id": "SC_01", "short_description": "windy hill"}],
      "shots": [{"shot_num": 1, "abstract_prompt": "[CH_01] flies [OB_01] on [SC_01]", "natural_prompt": "x"}]
    }"#;

    fn id(s: &str) -> EntityId {
        s.parse().unwrap()
    }

    fn ids(v: &[&str]) -> Vec<EntityId> {
        v.iter().map(|s| s.parse().unwrap()).collect()
    }

    fn setup() -> (StoryScript, BankConfig, VaeMock) {
        let config = BankConfig::default();
        (
            parse_script(SCRIPT).unwrap(),
            config,
            VaeMock::new(8, 4, 5).unwrap(),
        )
    }

    fn reference() -> (Frame, PixelMask) {
        let f = Frame::from_fn(256, 256, |y, x, c| {
            if (96..176).contains(&y) && (64..128).contains(&x) {
                [0.85, 0.2, 0.15][c]
            } else {
                0.5
            }
        });
        (f, PixelMask::rect(256, 256, 96, 64, 176, 128))
    }

    fn bank_with_girl(config: &BankConfig, vae: &VaeMock) -> (EntityBank, Vec<f32>) {
        let (f, m) = reference();
        let e = build_entry(
            &f,
            &m,
            &"CH_01".parse().unwrap(),
            "girl",
            0,
            EntryOrigin::UserReference,
            &SyntheticDescriptor,
            vae,
            config,
        )
        .unwrap();
        let appearance = e.appearance.clone();
        let mut bank = EntityBank::new(*config).unwrap();
        for id in ids(&["CH_01", "OB_01", "SC_01"]) {
            bank.register(id);
        }
        bank.accept_candidate(e);
        (bank, appearance)
    }

    #[test]
    fn empty_memory_gives_background_frames() {
        let (script, config, vae) = setup();
        let bank = EntityBank::new(config).unwrap();
        let refs = ids(&["SC_01"]);
        let r = retrieve_memory(&bank, &refs).unwrap();
        let out = mock_shot_synthesizer(&script, &refs, &r, &vae, &config.layout, 4, 1).unwrap();
        let bg = background(256, 256, "windy hill");
        for f in &out.frames {
            assert!((0..=2).any(|r| box_blur(&bg, r) == *f));
        }
        assert!(out.masks[&id("SC_01")]
            .iter()
            .all(|m| m.count() == 256 * 256));
    }

    #[test]
    fn deterministic_per_seed() {
        let (script, config, vae) = setup();
        let (bank, _) = bank_with_girl(&config, &vae);
        let refs = ids(&["CH_01", "OB_01", "SC_01"]);
        let r = retrieve_memory(&bank, &refs).unwrap();
        let a = mock_shot_synthesizer(&script, &refs, &r, &vae, &config.layout, 4, 7).unwrap();
        let b = mock_shot_synthesizer(&script, &refs, &r, &vae, &config.layout, 4, 7).unwrap();
        assert_eq!(a, b);
        let c = mock_shot_synthesizer(&script, &refs, &r, &vae, &config.layout, 4, 8).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn retrieved_subject_stays_recognizable() {
        let (script, config, vae) = setup();
        let (bank, reference_appearance) = bank_with_girl(&config, &vae);
        let refs = ids(&["CH_01", "OB_01", "SC_01"]);
        let r = retrieve_memory(&bank, &refs).unwrap();
        let out = mock_shot_synthesizer(&script, &refs, &r, &vae, &config.layout, 6, 3).unwrap();
        for (f, m) in out.frames.iter().zip(&out.masks[&id("CH_01")]) {
            assert!(!m.is_empty());
            let e = SyntheticDescriptor.embed_appearance(f, m).unwrap();
            let cos = cosine(&e, &reference_appearance);
            assert!(cos >= 0.9, "cosine {cos}");
        }
        // Masks of distinct referenced entities never overlap.
        for f in 0..6 {
            let girl = &out.masks[&id("CH_01")][f];
            let kite = &out.masks[&id("OB_01")][f];
            let scene = &out.masks[&id("SC_01")][f];
            assert!(girl.intersect(kite).unwrap().is_empty());
            assert!(girl.intersect(scene).unwrap().is_empty());
            assert_eq!(girl.count() + kite.count() + scene.count(), 256 * 256);
        }
    }

    #[test]
    fn blur_preserves_constant_frames_and_softens_edges() {
        let flat = Frame::filled(10, 10, [0.3, 0.6, 0.9]);
        let blurred = box_blur(&flat, 2);
        for (a, b) in blurred.data().iter().zip(flat.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let edge = Frame::from_fn(10, 10, |_, x, _| if x < 5 { 0.0 } else { 1.0 });
        assert!(laplacian_variance(&box_blur(&edge, 1)) < laplacian_variance(&edge));
    }

    #[test]
    fn keyframe_examples() {
        let frames: Vec<Frame> = (0..4).map(|_| Frame::filled(8, 8, [0.5; 3])).collect();
        assert_eq!(
            select_keyframes(&frames, &laplacian_variance, 2).unwrap(),
            vec![0, 1]
        );
        assert!(matches!(
            select_keyframes(&frames, &laplacian_variance, 5),
            Err(Error::InvalidK { k: 5, available: 4 })
        ));

        let sharp = Frame::from_fn(16, 16, |y, x, _| ((x / 2 + y / 2) % 2) as f32);
        let mut set: Vec<Frame> = (0..5).map(|r| box_blur(&sharp, 1 + r % 2)).collect();
        set[3] = sharp.clone();
        let scores: Vec<f64> = set.iter().map(laplacian_variance).collect();
        let best = (0..5)
            .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
            .unwrap();
        assert_eq!(best, 3);
        assert_eq!(
            select_keyframes(&set, &laplacian_variance, 1).unwrap(),
            vec![3]
        );

        let all = select_keyframes(&set, &laplacian_variance, 5).unwrap();
        let mut by_score: Vec<usize> = (0..5).collect();
        by_score.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        assert_eq!(all, by_score);
    }
}
