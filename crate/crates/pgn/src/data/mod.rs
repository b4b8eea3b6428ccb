//! Procedural video generation and binary serialization.

pub mod balls;
pub mod io;
pub mod objects;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PgnError, Result};

pub use balls::{gen_balls_dataset, render_balls, simulate_balls, step_balls, BallState};
pub use io::{read_dataset, write_dataset};
pub use objects::{
    gen_classification_set, gen_object_dataset, render_object, sample_object_latents,
    LabeledImages, LatentRecord,
};

/// Frame-sequence dataset with optional latent ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoDataset {
    pub split: String,
    pub n_seq: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    /// Free-form generator-constants block written into the file header.
    pub constants: [u8; 64],
    /// [n_seq, T, C, H, W] row-major, values in [0,1].
    pub frames: Vec<f32>,
    pub latents: Option<Vec<LatentRecord>>,
}

impl VideoDataset {
    pub fn frame_len(&self) -> usize {
        self.channels * self.h * self.w
    }

    pub fn frame(&self, seq: usize, t: usize) -> &[f32] {
        let fl = self.frame_len();
        let start = (seq * self.t + t) * fl;
        &self.frames[start..start + fl]
    }

    pub fn seq_frames(&self, seq: usize) -> &[f32] {
        let sl = self.t * self.frame_len();
        &self.frames[seq * sl..(seq + 1) * sl]
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.n_seq * self.t * self.frame_len() {
            return Err(PgnError::Contract("frame buffer length mismatch".into()));
        }
        if let Some(l) = &self.latents {
            if l.len() != self.n_seq {
                return Err(PgnError::Contract("latents length != n_seq".into()));
            }
        }
        if self.frames.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(PgnError::Contract("pixel outside [0,1]".into()));
        }
        Ok(())
    }
}

/// Per-sequence RNG: master seed selects the key, the sequence index selects
/// an independent stream. Independent of how many sequences precede it.
pub fn seq_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Copy-last-frame baseline under the sliding-window protocol: frames at
/// index >= `window` are "predicted" by the immediately preceding frame.
/// Returns (mean, population std) of the per-frame pixel-sum squared error.
pub fn copy_baseline(ds: &VideoDataset, window: usize) -> Result<(f64, f64)> {
    if ds.t <= window {
        return Err(PgnError::Arg(format!(
            "copy_baseline: T={} too short for window {}",
            ds.t, window
        )));
    }
    let mut errs = Vec::with_capacity(ds.n_seq * (ds.t - window));
    for s in 0..ds.n_seq {
        for t in window..ds.t {
            errs.push(crate::loss::frame_sq_error(ds.frame(s, t - 1), ds.frame(s, t)));
        }
    }
    Ok(mean_std(&errs))
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
