//! Dense frames and latents, pixel/patch masks, and the binary file format.

mod io;
mod mask;

pub use io::{
    decode_mask, decode_tensor, encode_mask, encode_tensor, read_mask, read_tensor, write_mask,
    write_tensor, FORMAT_VERSION, MASK_MAGIC, TENSOR_MAGIC,
};
pub use mask::{downsample_mask, scene_complement, union_masks, PatchMask, PixelMask};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generic n-dimensional `f32` tensor; the unit of the binary file format.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }
}

/// RGB frame, row-major with interleaved channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::LengthMismatch {
                expected: height * width * Self::CHANNELS,
                found: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("frame value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(height, width, |_, _, c| rgb[c])
    }

    /// Builds a frame from `f(y, x, channel)`. Values are clamped to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * Self::CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..Self::CHANNELS {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * Self::CHANNELS + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * Self::CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Overwrites a pixel, clamping to `[0, 1]`.
    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * Self::CHANNELS;
        for (d, v) in self.data[i..i + Self::CHANNELS].iter_mut().zip(rgb) {
            *d = v.clamp(0.0, 1.0);
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.height, self.width, Self::CHANNELS],
            data: self.data.clone(),
        }
    }
}

impl TryFrom<Tensor> for Frame {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        match t.dims.as_slice() {
            &[h, w, 3] => Frame::new(h, w, t.data),
            dims => Err(Error::Format(format!(
                "expected [H, W, 3] frame, got {dims:?}"
            ))),
        }
    }
}

/// Single latent frame, channel-major (`C × H × W`).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl LatentGrid {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::LengthMismatch {
                expected: channels * height * width,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("latent contains non-finite values".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    fn offset(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        let i = self.offset(c, y, x);
        self.data[i] = value;
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.channels, self.height, self.width],
            data: self.data.clone(),
        }
    }
}

impl TryFrom<Tensor> for LatentGrid {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        match t.dims.as_slice() {
            &[c, h, w] => LatentGrid::new(c, h, w, t.data),
            dims => Err(Error::Format(format!(
                "expected [C, H, W] latent, got {dims:?}"
            ))),
        }
    }
}

/// Geometry of a stack of memory-frame latents and its token patch grid.
///
/// Each slot is one latent frame (temporal patch size 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryLayout {
    pub slots: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch_h: usize,
    pub patch_w: usize,
}

impl MemoryLayout {
    pub fn new(
        slots: usize,
        channels: usize,
        height: usize,
        width: usize,
        patch_h: usize,
        patch_w: usize,
    ) -> Result<Self> {
        let layout = Self {
            slots,
            channels,
            height,
            width,
            patch_h,
            patch_w,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.patch_h == 0 || self.patch_w == 0 {
            return Err(Error::InvalidConfig(
                "channels and patch sizes must be positive".into(),
            ));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidConfig(
                "latent height and width must be positive".into(),
            ));
        }
        if !self.height.is_multiple_of(self.patch_h) || !self.width.is_multiple_of(self.patch_w) {
            return Err(Error::InvalidConfig(format!(
                "patch {}x{} does not divide latent {}x{}",
                self.patch_h, self.patch_w, self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn with_slots(self, slots: usize) -> Self {
        Self { slots, ..self }
    }

    /// Patch-grid rows per slot.
    pub fn rows(&self) -> usize {
        self.height / self.patch_h
    }

    /// Patch-grid columns per slot.
    pub fn cols(&self) -> usize {
        self.width / self.patch_w
    }

    pub fn cells_per_slot(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn token_count(&self) -> usize {
        self.slots * self.cells_per_slot()
    }

    /// Scalars per patch, `C · p_h · p_w`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.patch_h * self.patch_w
    }

    /// Canonical token position of `(slot, row, col)`.
    pub fn position(&self, slot: usize, row: usize, col: usize) -> usize {
        (slot * self.rows() + row) * self.cols() + col
    }

    pub fn check_latent(&self, grid: &LatentGrid) -> Result<()> {
        if grid.channels() != self.channels
            || grid.height() != self.height
            || grid.width() != self.width
        {
            return Err(Error::dims(format!(
                "latent {}x{}x{} does not match layout {}x{}x{}",
                grid.channels(),
                grid.height(),
                grid.width(),
                self.channels,
                self.height,
                self.width
            )));
        }
        Ok(())
    }
}

/// Patch-grid coordinate: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchCoord {
    pub x: u32,
    pub y: u32,
}

impl PatchCoord {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}
