//! Deterministic stand-ins for the video VAE and the patch embedding.
//!
//! Both maps are strictly local: a latent cell depends only on the
//! `stride × stride` pixel block above it, and a token depends only on the
//! `C × p_h × p_w` latent values inside its patch. That locality is what makes
//! scattering sparse patches into a dense grid and pruning afterwards
//! equivalent to embedding the patches directly.
//!
//! Arithmetic runs in `f64` with a fixed summation order and rounds to `f32`
//! once per output value, so every route through these maps is reproducible.

use crate::conditioning::PatchSet;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, SplitMix64};
use crate::tensor::{Frame, LatentGrid, MemoryLayout};

/// Random `rows × cols` matrix (row-major) with orthonormal columns.
/// Requires `rows >= cols`.
fn orthonormal_columns(rows: usize, cols: usize, rng: &mut SplitMix64) -> Vec<f64> {
    assert!(
        rows >= cols,
        "cannot orthonormalize {cols} columns in R^{rows}"
    );
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while columns.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| rng.uniform(-1.0, 1.0)).collect();
        // Modified Gram-Schmidt, applied twice for numerical orthogonality.
        for _ in 0..2 {
            for u in &columns {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        columns.push(v);
    }
    let mut out = vec![0.0; rows * cols];
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            out[i * cols + j] = *v;
        }
    }
    out
}

/// Mock VAE: block-average each RGB channel, then map `R^3 → R^C` with a
/// seeded matrix whose columns are orthonormal. Decoding applies the
/// transpose, which is an exact left inverse on the encoder's range.
#[derive(Debug, Clone)]
pub struct VaeMock {
    stride: usize,
    channels: usize,
    /// `channels × 3`, row-major.
    map: Vec<f64>,
}

impl VaeMock {
    pub fn new(stride: usize, channels: usize, seed: u64) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidConfig("vae stride must be positive".into()));
        }
        if channels < Frame::CHANNELS {
            return Err(Error::InvalidConfig(format!(
                "mock VAE needs at least {} latent channels to be invertible, got {channels}",
                Frame::CHANNELS
            )));
        }
        let mut rng = SplitMix64::new(derive_seed(seed, stream::VAE_MAP));
        Ok(Self {
            stride,
            channels,
            map: orthonormal_columns(channels, Frame::CHANNELS, &mut rng),
        })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Per-channel mean of the `stride × stride` block at latent cell `(ly, lx)`.
    fn block_mean(&self, frame: &Frame, ly: usize, lx: usize) -> [f64; 3] {
        let mut sum = [0.0f64; 3];
        for y in ly * self.stride..(ly + 1) * self.stride {
            for x in lx * self.stride..(lx + 1) * self.stride {
                let p = frame.pixel(y, x);
                for c in 0..3 {
                    sum[c] += f64::from(p[c]);
                }
            }
        }
        let n = (self.stride * self.stride) as f64;
        sum.map(|s| s / n)
    }

    pub fn encode(&self, frame: &Frame) -> Result<LatentGrid> {
        if !frame.height().is_multiple_of(self.stride) || !frame.width().is_multiple_of(self.stride)
        {
            return Err(Error::dims(format!(
                "frame {}x{} not divisible by stride {}",
                frame.height(),
                frame.width(),
                self.stride
            )));
        }
        let (h, w) = (frame.height() / self.stride, frame.width() / self.stride);
        let mut latent = LatentGrid::zeros(self.channels, h, w);
        for ly in 0..h {
            for lx in 0..w {
                let mean = self.block_mean(frame, ly, lx);
                for c in 0..self.channels {
                    let row = &self.map[c * 3..c * 3 + 3];
                    let v = row[0] * mean[0] + row[1] * mean[1] + row[2] * mean[2];
                    latent.set(c, ly, lx, v as f32);
                }
            }
        }
        Ok(latent)
    }

    /// RGB value of one latent cell under the pseudo-inverse, clamped to `[0, 1]`.
    pub fn decode_cell(&self, values: &[f32]) -> [f32; 3] {
        debug_assert_eq!(values.len(), self.channels);
        let mut rgb = [0.0f64; 3];
        for (c, v) in values.iter().enumerate() {
            for (k, out) in rgb.iter_mut().enumerate() {
                *out += self.map[c * 3 + k] * f64::from(*v);
            }
        }
        rgb.map(|v| (v as f32).clamp(0.0, 1.0))
    }

    pub fn decode(&self, latent: &LatentGrid) -> Result<Frame> {
        if latent.channels() != self.channels {
            return Err(Error::dims(format!(
                "latent has {} channels, decoder expects {}",
                latent.channels(),
                self.channels
            )));
        }
        let mut cell = vec![0.0f32; self.channels];
        let mut frame = Frame::filled(
            latent.height() * self.stride,
            latent.width() * self.stride,
            [0.0; 3],
        );
        for ly in 0..latent.height() {
            for lx in 0..latent.width() {
                for (c, v) in cell.iter_mut().enumerate() {
                    *v = latent.get(c, ly, lx);
                }
                let rgb = self.decode_cell(&cell);
                for y in ly * self.stride..(ly + 1) * self.stride {
                    for x in lx * self.stride..(lx + 1) * self.stride {
                        frame.set_pixel(y, x, rgb);
                    }
                }
            }
        }
        Ok(frame)
    }
}

pub fn vae_encode(frame: &Frame, stride: usize, channels: usize, seed: u64) -> Result<LatentGrid> {
    VaeMock::new(stride, channels, seed)?.encode(frame)
}

pub fn vae_decode(latent: &LatentGrid, stride: usize, seed: u64) -> Result<Frame> {
    VaeMock::new(stride, latent.channels(), seed)?.decode(latent)
}

/// Token embeddings for every patch of a stack of latent slots, in canonical
/// `(slot, row, col)` row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    layout: MemoryLayout,
    dim: usize,
    data: Vec<f32>,
}

impl TokenGrid {
    pub fn new(layout: MemoryLayout, dim: usize, data: Vec<f32>) -> Result<Self> {
        let expected = layout.token_count() * dim;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self { layout, dim, data })
    }

    pub fn zeros(layout: MemoryLayout, dim: usize) -> Self {
        Self {
            layout,
            dim,
            data: vec![0.0; layout.token_count() * dim],
        }
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.layout.token_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn token(&self, position: usize) -> &[f32] {
        &self.data[position * self.dim..(position + 1) * self.dim]
    }

    pub fn token_mut(&mut self, position: usize) -> &mut [f32] {
        &mut self.data[position * self.dim..(position + 1) * self.dim]
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.len())
    }

    /// Stacks `other`'s slots after this grid's slots.
    pub fn concat(&self, other: &TokenGrid) -> Result<TokenGrid> {
        if self.dim != other.dim || self.layout.with_slots(0) != other.layout.with_slots(0) {
            return Err(Error::dims("token grids differ in geometry or width"));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        TokenGrid::new(
            self.layout
                .with_slots(self.layout.slots + other.layout.slots),
            self.dim,
            data,
        )
    }

    /// Splits into the first `slots` slots and the remainder.
    pub fn split_at_slot(&self, slots: usize) -> (TokenGrid, TokenGrid) {
        assert!(slots <= self.layout.slots);
        let cut = slots * self.layout.cells_per_slot() * self.dim;
        (
            TokenGrid {
                layout: self.layout.with_slots(slots),
                dim: self.dim,
                data: self.data[..cut].to_vec(),
            },
            TokenGrid {
                layout: self.layout.with_slots(self.layout.slots - slots),
                dim: self.dim,
                data: self.data[cut..].to_vec(),
            },
        )
    }
}

/// A token kept after pruning, tagged with its canonical position.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseToken {
    pub position: usize,
    pub values: Vec<f32>,
}

impl AsRef<[f32]> for SparseToken {
    fn as_ref(&self) -> &[f32] {
        &self.values
    }
}

/// Non-overlapping patch embedding: one seeded orthogonal `K × K` matrix
/// applied to each patch vector (`K = C · p_h · p_w`, no bias).
///
/// Patch vectors are read in `(channel, dy, dx)` order.
#[derive(Debug, Clone)]
pub struct Patchifier {
    layout: MemoryLayout,
    dim: usize,
    /// `dim × dim`, row-major; row `d` produces token component `d`.
    weights: Vec<f64>,
}

impl Patchifier {
    pub fn new(layout: MemoryLayout, seed: u64) -> Result<Self> {
        layout.validate()?;
        let dim = layout.patch_len();
        let mut rng = SplitMix64::new(derive_seed(seed, stream::PATCHIFY_MAP));
        Ok(Self {
            layout,
            dim,
            weights: orthonormal_columns(dim, dim, &mut rng),
        })
    }

    /// Token width, equal to the patch length.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.layout
    }

    /// Embeds a single patch vector.
    pub fn embed_patch(&self, values: &[f32]) -> Vec<f32> {
        debug_assert_eq!(values.len(), self.dim);
        (0..self.dim)
            .map(|d| {
                let row = &self.weights[d * self.dim..(d + 1) * self.dim];
                row.iter()
                    .zip(values)
                    .map(|(w, v)| w * f64::from(*v))
                    .sum::<f64>() as f32
            })
            .collect()
    }

    /// Inverse of [`embed_patch`](Self::embed_patch) (transpose of an orthogonal map).
    pub fn unembed_token(&self, token: &[f32]) -> Vec<f32> {
        debug_assert_eq!(token.len(), self.dim);
        (0..self.dim)
            .map(|k| {
                token
                    .iter()
                    .enumerate()
                    .map(|(d, t)| self.weights[d * self.dim + k] * f64::from(*t))
                    .sum::<f64>() as f32
            })
            .collect()
    }

    /// Reads the patch at `(row, col)` of `grid` in `(channel, dy, dx)` order.
    pub fn gather_patch(&self, grid: &LatentGrid, row: usize, col: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.dim);
        for c in 0..self.layout.channels {
            for dy in 0..self.layout.patch_h {
                for dx in 0..self.layout.patch_w {
                    out.push(grid.get(
                        c,
                        row * self.layout.patch_h + dy,
                        col * self.layout.patch_w + dx,
                    ));
                }
            }
        }
        out
    }

    /// Writes a patch vector back into `grid` at `(row, col)`.
    pub fn scatter_patch(&self, grid: &mut LatentGrid, row: usize, col: usize, values: &[f32]) {
        let mut i = 0;
        for c in 0..self.layout.channels {
            for dy in 0..self.layout.patch_h {
                for dx in 0..self.layout.patch_w {
                    grid.set(
                        c,
                        row * self.layout.patch_h + dy,
                        col * self.layout.patch_w + dx,
                        values[i],
                    );
                    i += 1;
                }
            }
        }
    }

    pub fn patchify(&self, slots: &[LatentGrid]) -> Result<TokenGrid> {
        let layout = self.layout.with_slots(slots.len());
        let mut grid = TokenGrid::zeros(layout, self.dim);
        for (s, latent) in slots.iter().enumerate() {
            layout.check_latent(latent)?;
            for row in 0..layout.rows() {
                for col in 0..layout.cols() {
                    let token = self.embed_patch(&self.gather_patch(latent, row, col));
                    grid.token_mut(layout.position(s, row, col))
                        .copy_from_slice(&token);
                }
            }
        }
        Ok(grid)
    }

    pub fn unpatchify(&self, tokens: &TokenGrid) -> Result<Vec<LatentGrid>> {
        let layout = *tokens.layout();
        if layout.with_slots(0) != self.layout.with_slots(0) || tokens.dim() != self.dim {
            return Err(Error::dims(
                "token grid does not match the patchifier layout",
            ));
        }
        let mut out = Vec::with_capacity(layout.slots);
        for s in 0..layout.slots {
            let mut latent = LatentGrid::zeros(layout.channels, layout.height, layout.width);
            for row in 0..layout.rows() {
                for col in 0..layout.cols() {
                    let values = self.unembed_token(tokens.token(layout.position(s, row, col)));
                    self.scatter_patch(&mut latent, row, col, &values);
                }
            }
            out.push(latent);
        }
        Ok(out)
    }

    /// Embeds stored patches directly from their coordinates, without building
    /// the dense grid. Output is in canonical position order.
    pub fn sparse_patchify_direct(&self, patches: &PatchSet) -> Result<Vec<SparseToken>> {
        let layout = patches.layout();
        if layout.with_slots(0) != self.layout.with_slots(0) {
            return Err(Error::dims(
                "patch set layout does not match the patchifier",
            ));
        }
        let mut tokens: Vec<SparseToken> = patches
            .items()
            .iter()
            .map(|item| {
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
                Ok(SparseToken {
                    position: layout.position(
                        item.slot,
                        item.coord.y as usize,
                        item.coord.x as usize,
                    ),
                    values: self.embed_patch(&item.values),
                })
            })
            .collect::<Result<_>>()?;
        tokens.sort_by_key(|t| t.position);
        Ok(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_frame(h: usize, w: usize, seed: u64) -> Frame {
        let mut g = SplitMix64::new(seed);
        Frame::from_fn(h, w, |_, _, _| g.next_f64() as f32)
    }

    fn random_latent(layout: &MemoryLayout, seed: u64) -> LatentGrid {
        let mut g = SplitMix64::new(seed);
        let n = layout.channels * layout.height * layout.width;
        LatentGrid::new(
            layout.channels,
            layout.height,
            layout.width,
            (0..n).map(|_| g.uniform(-1.0, 1.0) as f32).collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_frame_encodes_to_identical_cells() {
        let vae = VaeMock::new(4, 5, 1).unwrap();
        let latent = vae.encode(&Frame::filled(16, 8, [0.0; 3])).unwrap();
        assert!(latent.data().iter().all(|&v| v == 0.0));
        let latent = vae.encode(&Frame::filled(16, 8, [0.2, 0.4, 0.9])).unwrap();
        for c in 0..5 {
            let v = latent.get(c, 0, 0);
            for y in 0..4 {
                for x in 0..2 {
                    assert_eq!(latent.get(c, y, x).to_bits(), v.to_bits());
                }
            }
        }
    }

    #[test]
    fn encoder_is_local() {
        let vae = VaeMock::new(4, 4, 2).unwrap();
        let a = random_frame(16, 16, 3);
        let mut b = a.clone();
        let p = b.pixel(9, 6);
        b.set_pixel(9, 6, [1.0 - p[0], p[1], p[2]]);
        let la = vae.encode(&a).unwrap();
        let lb = vae.encode(&b).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let differs = (0..4).any(|c| la.get(c, y, x) != lb.get(c, y, x));
                assert_eq!(differs, (y, x) == (2, 1), "cell ({y}, {x})");
            }
        }
    }

    #[test]
    fn encoder_is_deterministic() {
        let f = random_frame(32, 32, 11);
        assert_eq!(
            vae_encode(&f, 8, 4, 5).unwrap(),
            vae_encode(&f, 8, 4, 5).unwrap()
        );
        assert_ne!(
            vae_encode(&f, 8, 4, 5).unwrap(),
            vae_encode(&f, 8, 4, 6).unwrap()
        );
    }

    #[test]
    fn block_constant_frame_is_a_fixed_point() {
        let mut g = SplitMix64::new(4);
        let colors: Vec<[f32; 3]> = (0..16)
            .map(|_| {
                [
                    g.next_f64() as f32,
                    g.next_f64() as f32,
                    g.next_f64() as f32,
                ]
            })
            .collect();
        let f = Frame::from_fn(32, 32, |y, x, c| colors[(y / 8) * 4 + x / 8][c]);
        let back = vae_decode(&vae_encode(&f, 8, 4, 9).unwrap(), 8, 9).unwrap();
        let err = f
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn zero_latent_decodes_to_uniform_frame() {
        let f = vae_decode(&LatentGrid::zeros(4, 2, 2), 4, 1).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_reproduces_block_means() {
        let f = random_frame(64, 48, 21);
        let back = vae_decode(&vae_encode(&f, 8, 6, 2).unwrap(), 8, 2).unwrap();
        let mut max_err = 0.0f64;
        for by in 0..8 {
            for bx in 0..6 {
                for c in 0..3 {
                    // Oracle: direct block mean.
                    let mut s = 0.0f64;
                    for y in by * 8..by * 8 + 8 {
                        for x in bx * 8..bx * 8 + 8 {
                            s += f64::from(f.get(y, x, c));
                        }
                    }
                    let mean = s / 64.0;
                    for y in by * 8..by * 8 + 8 {
                        for x in bx * 8..bx * 8 + 8 {
                            max_err = max_err.max((f64::from(back.get(y, x, c)) - mean).abs());
                        }
                    }
                }
            }
        }
        assert!(max_err < 1e-5, "{max_err}");
    }

    #[test]
    fn vae_rejects_bad_shapes() {
        assert!(VaeMock::new(8, 2, 0).is_err());
        assert!(vae_encode(&Frame::filled(10, 16, [0.0; 3]), 8, 4, 0).is_err());
        let vae = VaeMock::new(8, 4, 0).unwrap();
        assert!(vae.decode(&LatentGrid::zeros(5, 1, 1)).is_err());
    }

    #[test]
    fn patchify_counts_and_zero_map() {
        let layout = MemoryLayout::new(1, 4, 64, 64, 2, 2).unwrap();
        let p = Patchifier::new(layout, 7).unwrap();
        let tokens = p.patchify(&[LatentGrid::zeros(4, 64, 64)]).unwrap();
        assert_eq!(tokens.len(), 1024);
        assert!(tokens.data().iter().all(|&v| v == 0.0));
        let back = p.unpatchify(&tokens).unwrap();
        assert!(back[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn patchify_is_local() {
        let layout = MemoryLayout::new(1, 3, 8, 8, 2, 2).unwrap();
        let p = Patchifier::new(layout, 1).unwrap();
        let a = random_latent(&layout, 1);
        let mut b = a.clone();
        b.set(2, 5, 6, a.get(2, 5, 6) + 1.0);
        let ta = p.patchify(&[a]).unwrap();
        let tb = p.patchify(&[b]).unwrap();
        let changed: Vec<usize> = (0..ta.len())
            .filter(|&i| ta.token(i) != tb.token(i))
            .collect();
        assert_eq!(changed, vec![layout.position(0, 2, 3)]);
    }

    #[test]
    fn single_token_unpatchifies_into_one_footprint() {
        let layout = MemoryLayout::new(2, 4, 6, 6, 2, 3).unwrap();
        let p = Patchifier::new(layout, 5).unwrap();
        let mut tokens = TokenGrid::zeros(layout, p.dim());
        tokens
            .token_mut(layout.position(1, 2, 1))
            .iter_mut()
            .for_each(|v| *v = 0.5);
        let back = p.unpatchify(&tokens).unwrap();
        assert!(back[0].data().iter().all(|&v| v == 0.0));
        for c in 0..4 {
            for y in 0..6 {
                for x in 0..6 {
                    if !((4..6).contains(&y) && (3..6).contains(&x)) {
                        assert_eq!(back[1].get(c, y, x), 0.0);
                    }
                }
            }
        }
        assert!(back[1].data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn round_trip_random_latents() {
        let layout = MemoryLayout::new(1, 4, 8, 8, 2, 2).unwrap();
        let p = Patchifier::new(layout, 99).unwrap();
        let mut max_err = 0.0f32;
        for seed in 0..1000 {
            let x = random_latent(&layout, seed);
            let back = p
                .unpatchify(&p.patchify(std::slice::from_ref(&x)).unwrap())
                .unwrap();
            for (a, b) in x.data().iter().zip(back[0].data()) {
                max_err = max_err.max((a - b).abs());
            }
        }
        assert!(max_err < 1e-6, "{max_err}");
    }

    #[test]
    fn seeded_maps_are_reproducible() {
        let layout = MemoryLayout::new(1, 4, 4, 4, 2, 2).unwrap();
        let a = Patchifier::new(layout, 3).unwrap();
        let b = Patchifier::new(layout, 3).unwrap();
        assert_eq!(a.weights, b.weights);
        let c = Patchifier::new(layout, 4).unwrap();
        assert_ne!(a.weights, c.weights);
    }
}
