//! Pixel-space noise injection before encoding: background suppression for
//! new entries and selective appearance preservation for attribute edits.

use crate::bank::{
    build_entry, gather_patch_values, BankConfig, DescriptorProvider, EntityEntry, EntryOrigin,
};
use crate::codec::VaeMock;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, SplitMix64};
use crate::script::EntityId;
use crate::tensor::{Frame, PatchCoord, PixelMask};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// Standard deviation in `[0, 1]` pixel units.
    pub sigma: f64,
    pub seed: u64,
    /// Pixels that receive noise.
    pub region: PixelMask,
}

/// Adds seeded Gaussian noise to every channel of the pixels in
/// `spec.region` and clamps to `[0, 1]`. Samples are drawn in row-major
/// pixel order, channel-minor, for region pixels only.
pub fn inject_noise(frame: &Frame, spec: &NoiseSpec) -> Result<Frame> {
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise sigma {} must be finite and >= 0",
            spec.sigma
        )));
    }
    spec.region.check_dims(frame.height(), frame.width())?;
    let mut out = frame.clone();
    let mut rng = SplitMix64::new(derive_seed(spec.seed, stream::NOISE));
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            if !spec.region.get(y, x) {
                continue;
            }
            let p = frame.pixel(y, x);
            let mut q = [0.0f32; 3];
            for c in 0..3 {
                q[c] = (f64::from(p[c]) + spec.sigma * rng.normal()).clamp(0.0, 1.0) as f32;
            }
            out.set_pixel(y, x, q);
        }
    }
    Ok(out)
}

/// Builds an entry after noising everything outside `entity_mask`, so
/// boundary patches carry noise instead of background structure.
#[allow(clippy::too_many_arguments)]
pub fn background_suppressed_entry(
    frame: &Frame,
    entity_mask: &PixelMask,
    entity: &EntityId,
    description: &str,
    frame_index: u32,
    origin: EntryOrigin,
    sigma: f64,
    seed: u64,
    provider: &dyn DescriptorProvider,
    vae: &VaeMock,
    config: &BankConfig,
) -> Result<EntityEntry> {
    entity_mask.check_dims(frame.height(), frame.width())?;
    let noised = inject_noise(
        frame,
        &NoiseSpec {
            sigma,
            seed,
            region: entity_mask.complement(),
        },
    )?;
    build_entry(
        &noised,
        entity_mask,
        entity,
        description,
        frame_index,
        origin,
        provider,
        vae,
        config,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeEdit {
    pub entry: EntityEntry,
    /// Coordinates removed because their footprint lies inside the
    /// modification region, in the entry's patch order.
    pub dropped: Vec<PatchCoord>,
    pub diagnostics: Vec<String>,
}

/// True iff every pixel under the patch at `coord` is set in `mask`.
pub fn footprint_inside(mask: &PixelMask, coord: PatchCoord, config: &BankConfig) -> bool {
    let fh = config.layout.patch_h * config.vae_stride;
    let fw = config.layout.patch_w * config.vae_stride;
    let (y0, x0) = (coord.y as usize * fh, coord.x as usize * fw);
    (y0..y0 + fh).all(|y| (x0..x0 + fw).all(|x| mask.get(y, x)))
}

/// Removes the patches fully covered by `modification_mask` and re-encodes
/// the remaining ones from `source_frame` with noise injected into the
/// modification region. Descriptors are carried over unchanged.
#[allow(clippy::too_many_arguments)]
pub fn attribute_edit_entry(
    entry: &EntityEntry,
    source_frame: &Frame,
    entity_mask: &PixelMask,
    modification_mask: &PixelMask,
    sigma: f64,
    seed: u64,
    vae: &VaeMock,
    config: &BankConfig,
) -> Result<AttributeEdit> {
    let (h, w) = (config.frame_height(), config.frame_width());
    if source_frame.height() != h || source_frame.width() != w {
        return Err(Error::dims(format!(
            "source frame {}x{} does not match the bank frame {h}x{w}",
            source_frame.height(),
            source_frame.width()
        )));
    }
    entity_mask.check_dims(h, w)?;
    modification_mask.check_dims(h, w)?;

    let mut diagnostics = Vec::new();
    if !modification_mask.is_subset_of(entity_mask) {
        diagnostics.push(format!(
            "{}: modification mask extends outside the entity mask",
            entry.entity
        ));
    }
    if modification_mask.is_empty() {
        return Ok(AttributeEdit {
            entry: entry.clone(),
            dropped: Vec::new(),
            diagnostics,
        });
    }

    let (dropped, retained): (Vec<_>, Vec<_>) = entry
        .patches
        .iter()
        .partition(|p| footprint_inside(modification_mask, p.coord, config));
    if retained.is_empty() {
        return Err(Error::EmptyResult);
    }
    let noised = inject_noise(
        source_frame,
        &NoiseSpec {
            sigma,
            seed,
            region: modification_mask.clone(),
        },
    )?;
    let latent = vae.encode(&noised)?;
    let mut edited = entry.clone();
    edited.patches = retained
        .into_iter()
        .map(|p| {
            let mut p = p.clone();
            p.values = gather_patch_values(&latent, &config.layout, p.coord);
            p
        })
        .collect();
    Ok(AttributeEdit {
        entry: edited,
        dropped: dropped.into_iter().map(|p| p.coord).collect(),
        diagnostics,
    })
}
