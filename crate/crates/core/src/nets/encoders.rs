use rand::Rng;

use super::layers::{Conv, Conv3, Deconv};
use super::params::{Ctx, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Var;

/// Channel widths of the four spatial blocks. The first three halve the
/// resolution, the last keeps it, so the grid is `H/8 × W/8`.
pub const WIDTHS: [usize; 4] = [8, 16, 24, 32];
pub const FEATURE_CHANNELS: usize = WIDTHS[3];
/// Overall stride from frame to feature grid.
pub const GRID_STRIDE: usize = 8;
/// Frame sides must be multiples of this so the audio projector can reach
/// the grid with integer kernels.
pub const FRAME_MULTIPLE: usize = 32;

pub const SPEC_BINS: usize = 32;
pub const SPEC_FRAMES: usize = 32;
const AUDIO_WIDTHS: [usize; 3] = [8, 16, 16];
/// Length of the flattened audio feature.
pub const AUDIO_DIM: usize = AUDIO_WIDTHS[2] * (SPEC_BINS / 8) * (SPEC_FRAMES / 8);

/// Encoder output: the deepest feature `s` plus side taps `f3` (stride 2),
/// `f4` (stride 4) and `f5` (stride 8, same grid as `s`).
#[derive(Clone, Copy, Debug)]
pub struct SpatialFeature {
    pub s: Var,
    pub f3: Var,
    pub f4: Var,
    pub f5: Var,
}

pub fn check_frame_dims(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % FRAME_MULTIPLE != 0 || w % FRAME_MULTIPLE != 0 {
        return Err(Error::invalid_shape(
            "encoder",
            format!("frame {h}×{w} is not a multiple of {FRAME_MULTIPLE}"),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SpatialEncoder {
    blocks: [Conv; 4],
}

impl SpatialEncoder {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, rng: &mut R) -> Self {
        let [a, b, c, d] = WIDTHS;
        SpatialEncoder {
            blocks: [
                Conv::new(store, &format!("{name}.b1"), 3, a, 3, 2, 1, rng),
                Conv::new(store, &format!("{name}.b2"), a, b, 3, 2, 1, rng),
                Conv::new(store, &format!("{name}.b3"), b, c, 3, 2, 1, rng),
                Conv::new(store, &format!("{name}.b4"), c, d, 3, 1, 1, rng),
            ],
        }
    }

    /// `frame`: `3×H×W`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, frame: Var) -> Result<SpatialFeature> {
        let s = ctx.g.shape(frame).to_vec();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::invalid_shape("encode_spatial", format!("expected 3×H×W, got {s:?}")));
        }
        check_frame_dims(s[1], s[2])?;
        let f3 = self.blocks[0].forward_relu(ctx, frame)?;
        let f4 = self.blocks[1].forward_relu(ctx, f3)?;
        let f5 = self.blocks[2].forward_relu(ctx, f4)?;
        let s = self.blocks[3].forward_relu(ctx, f5)?;
        Ok(SpatialFeature { s, f3, f4, f5 })
    }
}

/// A 3-D convolution over the three frames collapses time; plain 2-D blocks
/// then bring the result to the spatial grid.
#[derive(Clone, Debug)]
pub struct TemporalEncoder {
    first: Conv3,
    rest: [Conv; 3],
}

impl TemporalEncoder {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, rng: &mut R) -> Self {
        let [a, b, c, d] = WIDTHS;
        TemporalEncoder {
            first: Conv3::new(store, &format!("{name}.b1"), 3, a, 3, 3, 2, 1, rng),
            rest: [
                Conv::new(store, &format!("{name}.b2"), a, b, 3, 2, 1, rng),
                Conv::new(store, &format!("{name}.b3"), b, c, 3, 2, 1, rng),
                Conv::new(store, &format!("{name}.b4"), c, d, 3, 1, 1, rng),
            ],
        }
    }

    pub fn first(&self) -> &Conv3 {
        &self.first
    }

    /// `volume`: `3×3×H×W` (colour, time, row, column).
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, volume: Var) -> Result<Var> {
        let s = ctx.g.shape(volume).to_vec();
        if s.len() != 4 || s[0] != 3 || s[1] != 3 {
            return Err(Error::invalid_shape("encode_temporal", format!("expected 3 frames as 3×3×H×W, got {s:?}")));
        }
        check_frame_dims(s[2], s[3])?;
        let x = self.first.forward(ctx, volume)?;
        let xs = ctx.g.shape(x).to_vec();
        let x = ctx.g.reshape(x, &[xs[0], xs[2], xs[3]])?;
        let mut x = ctx.g.relu(x)?;
        for b in &self.rest {
            x = b.forward_relu(ctx, x)?;
        }
        Ok(x)
    }
}

/// Strided convolutions over the `F×T` spectrogram, flattened to a vector.
#[derive(Clone, Debug)]
pub struct AudioEncoder {
    blocks: [Conv; 3],
}

impl AudioEncoder {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, rng: &mut R) -> Self {
        let [a, b, c] = AUDIO_WIDTHS;
        AudioEncoder {
            blocks: [
                Conv::new(store, &format!("{name}.b1"), 1, a, 3, 2, 1, rng),
                Conv::new(store, &format!("{name}.b2"), a, b, 3, 2, 1, rng),
                Conv::new(store, &format!("{name}.b3"), b, c, 3, 2, 1, rng),
            ],
        }
    }

    /// `spec`: `F×T`; returns a vector of length [`AUDIO_DIM`].
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, spec: Var) -> Result<Var> {
        let s = ctx.g.shape(spec).to_vec();
        if s != [SPEC_BINS, SPEC_FRAMES] {
            return Err(Error::invalid_shape(
                "encode_audio",
                format!("expected {SPEC_BINS}×{SPEC_FRAMES} spectrogram, got {s:?}"),
            ));
        }
        let mut x = ctx.g.reshape(spec, &[1, SPEC_BINS, SPEC_FRAMES])?;
        for b in &self.blocks {
            x = b.forward_relu(ctx, x)?;
        }
        ctx.g.reshape(x, &[AUDIO_DIM])
    }
}

/// Deconvolution stack lifting the (gated) audio vector onto a `g×g` grid
/// with [`FEATURE_CHANNELS`] channels. Output is pre-sigmoid.
#[derive(Clone, Debug)]
pub struct AudioProjector {
    grid: usize,
    layers: [Deconv; 3],
}

impl AudioProjector {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, grid: usize, rng: &mut R) -> Result<Self> {
        if grid == 0 || grid % 4 != 0 {
            return Err(Error::invalid_shape("audio projector", format!("grid {grid} is not a multiple of 4")));
        }
        let c = FEATURE_CHANNELS;
        Ok(AudioProjector {
            grid,
            layers: [
                Deconv::new(store, &format!("{name}.d1"), AUDIO_DIM, c, grid / 4, 1, rng),
                Deconv::new(store, &format!("{name}.d2"), c, c, 2, 2, rng),
                Deconv::new(store, &format!("{name}.d3"), c, c, 2, 2, rng),
            ],
        })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    /// `a`: audio vector; `gate` multiplies it before the first deconvolution.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, a: Var, gate: T) -> Result<Var> {
        let a = ctx.g.scale(a, gate)?;
        let mut x = ctx.g.reshape(a, &[AUDIO_DIM, 1, 1])?;
        x = self.layers[0].forward(ctx, x)?;
        x = ctx.g.relu(x)?;
        x = self.layers[1].forward(ctx, x)?;
        x = ctx.g.relu(x)?;
        self.layers[2].forward(ctx, x)
    }
}
