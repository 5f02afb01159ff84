use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Three consecutive frames (`3×H×W` each, values in `[0,1]`) around a target
/// frame, plus the matching spectrogram (`F×T`).
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFragment {
    frames: [Tensor<f64>; 3],
    spectrogram: Tensor<f64>,
    pub tag: usize,
    pub sequence_id: usize,
    pub frame_index: usize,
    /// Whether the soundtrack carries the tag's audio signature.
    pub audio_relevant: bool,
}

impl VideoFragment {
    pub fn new(
        frames: [Tensor<f64>; 3],
        spectrogram: Tensor<f64>,
        tag: usize,
        sequence_id: usize,
        frame_index: usize,
        audio_relevant: bool,
    ) -> Result<Self> {
        let s0 = frames[0].shape();
        if s0.len() != 3 || s0[0] != 3 {
            return Err(Error::invalid_shape("fragment", format!("frames must be 3×H×W, got {s0:?}")));
        }
        for f in &frames[1..] {
            if f.shape() != s0 {
                return Err(Error::shape("fragment", s0, f.shape()));
            }
        }
        if frames.iter().any(|f| f.data().iter().any(|&v| !(0.0..=1.0).contains(&v))) {
            return Err(Error::InvalidInput("frame values must lie in [0,1]".into()));
        }
        if spectrogram.rank() != 2 || spectrogram.data().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidInput("spectrogram must be a nonnegative F×T array".into()));
        }
        Ok(VideoFragment {
            frames,
            spectrogram,
            tag,
            sequence_id,
            frame_index,
            audio_relevant,
        })
    }

    pub fn frames(&self) -> &[Tensor<f64>; 3] {
        &self.frames
    }

    pub fn middle(&self) -> &Tensor<f64> {
        &self.frames[1]
    }

    pub fn spectrogram(&self) -> &Tensor<f64> {
        &self.spectrogram
    }

    pub fn height(&self) -> usize {
        self.frames[0].shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames[0].shape()[2]
    }

    /// Frames stacked as a `3×3×H×W` volume (colour, time, row, column).
    pub fn volume(&self) -> Tensor<f64> {
        let (h, w) = (self.height(), self.width());
        let hw = h * w;
        let mut data = Vec::with_capacity(9 * hw);
        for c in 0..3 {
            for f in &self.frames {
                data.extend_from_slice(&f.data()[c * hw..(c + 1) * hw]);
            }
        }
        Tensor::from_parts(vec![3, 3, h, w], data)
    }

    /// Applies `f` to each frame, keeping the audio and labels.
    pub fn map_frames(&self, f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>) -> Result<Self> {
        let frames = [f(&self.frames[0])?, f(&self.frames[1])?, f(&self.frames[2])?];
        VideoFragment::new(
            frames,
            self.spectrogram.clone(),
            self.tag,
            self.sequence_id,
            self.frame_index,
            self.audio_relevant,
        )
    }
}
