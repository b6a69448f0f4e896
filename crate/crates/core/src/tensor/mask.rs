use crate::error::{Error, Result};

use super::{MemoryLayout, PatchCoord};

/// Binary pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PixelMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                found: bits.len(),
            });
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    /// Axis-aligned rectangle `[y0, y1) × [x0, x1)`, clipped to the mask.
    pub fn rect(height: usize, width: usize, y0: usize, x0: usize, y1: usize, x1: usize) -> Self {
        Self::from_fn(height, width, |y, x| {
            (y0..y1).contains(&y) && (x0..x1).contains(&x)
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &PixelMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(Error::dims(format!(
                "mask {}x{} does not match {}x{}",
                self.height, self.width, height, width
            )));
        }
        Ok(())
    }

    pub fn complement(&self) -> PixelMask {
        PixelMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn intersect(&self, other: &PixelMask) -> Result<PixelMask> {
        other.check_dims(self.height, self.width)?;
        Ok(PixelMask {
            height: self.height,
            width: self.width,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }

    pub fn is_subset_of(&self, other: &PixelMask) -> bool {
        self.same_dims(other) && self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }

    /// Tight bounding box as `(y0, x0, y1, x1)` with exclusive upper bounds.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    bbox = Some(match bbox {
                        None => (y, x, y + 1, x + 1),
                        Some((y0, x0, y1, x1)) => {
                            (y0.min(y), x0.min(x), y1.max(y + 1), x1.max(x + 1))
                        }
                    });
                }
            }
        }
        bbox
    }
}

/// Boolean patch grid, one `rows × cols` plane per memory slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    slots: usize,
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl PatchMask {
    pub fn empty(layout: &MemoryLayout) -> Self {
        Self {
            slots: layout.slots,
            rows: layout.rows(),
            cols: layout.cols(),
            bits: vec![false; layout.token_count()],
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    fn index(&self, slot: usize, coord: PatchCoord) -> usize {
        (slot * self.rows + coord.y as usize) * self.cols + coord.x as usize
    }

    pub fn get(&self, slot: usize, coord: PatchCoord) -> bool {
        self.bits[self.index(slot, coord)]
    }

    pub fn set(&mut self, slot: usize, coord: PatchCoord, value: bool) {
        let i = self.index(slot, coord);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Set coordinates of one slot in row-major order.
    pub fn coords(&self, slot: usize) -> Vec<PatchCoord> {
        let mut out = Vec::new();
        for y in 0..self.rows {
            for x in 0..self.cols {
                let c = PatchCoord::new(x as u32, y as u32);
                if self.get(slot, c) {
                    out.push(c);
                }
            }
        }
        out
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }
}

/// Bitwise OR of masks sharing the same dimensions.
pub fn union_masks(masks: &[PixelMask]) -> Result<PixelMask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::dims("cannot take the union of zero masks without dimensions"))?;
    let mut out = PixelMask::empty(first.height, first.width);
    for m in masks {
        m.check_dims(first.height, first.width)?;
        for (o, b) in out.bits.iter_mut().zip(&m.bits) {
            *o |= *b;
        }
    }
    Ok(out)
}

/// Scene region: everything not covered by any foreground mask.
pub fn scene_complement(
    foreground: &[PixelMask],
    height: usize,
    width: usize,
) -> Result<PixelMask> {
    if foreground.is_empty() {
        return Ok(PixelMask::full(height, width));
    }
    for m in foreground {
        m.check_dims(height, width)?;
    }
    Ok(union_masks(foreground)?.complement())
}

/// Projects a pixel mask onto the token patch grid of `layout`.
///
/// A cell is set iff the fraction of set pixels inside its
/// `(p_h·stride) × (p_w·stride)` footprint exceeds `overlap_threshold`.
pub fn downsample_mask(
    mask: &PixelMask,
    layout: &MemoryLayout,
    vae_stride: usize,
    overlap_threshold: f64,
) -> Result<PatchMask> {
    if vae_stride == 0 {
        return Err(Error::InvalidConfig("vae stride must be positive".into()));
    }
    mask.check_dims(layout.height * vae_stride, layout.width * vae_stride)?;
    let single = layout.with_slots(1);
    let mut out = PatchMask::empty(&single);
    let fh = layout.patch_h * vae_stride;
    let fw = layout.patch_w * vae_stride;
    let area = (fh * fw) as f64;
    for row in 0..layout.rows() {
        for col in 0..layout.cols() {
            let mut set = 0usize;
            for y in row * fh..(row + 1) * fh {
                let base = y * mask.width;
                set += mask.bits[base + col * fw..base + (col + 1) * fw]
                    .iter()
                    .filter(|&&b| b)
                    .count();
            }
            if set as f64 / area > overlap_threshold {
                out.set(0, PatchCoord::new(col as u32, row as u32), true);
            }
        }
    }
    Ok(out)
}
