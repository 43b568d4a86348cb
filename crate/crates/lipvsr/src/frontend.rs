//! Visual front-end: 3D convolution stem, per-frame 2D convolution trunk,
//! spatial average pooling, and a linear projection to the encoder width.
//!
//! The stem keeps the frame rate: temporal stride 1 with edge-replicate
//! padding, so each output frame depends only on input frames within the
//! stem's temporal receptive field and a constant clip stays constant in
//! time. Spatially the stem strides by 2 (zero padding), and each trunk
//! stage halves the remaining extent.

use crate::data::Video;
use crate::error::{Error, Result};
use crate::nn::{prefixed, Linear, NamedParams};
use crate::rng::SplitRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct FrontendConfig {
    /// Stem kernel (time, height, width); the temporal extent must be odd.
    pub stem_kernel: (usize, usize, usize),
    pub stem_channels: usize,
    /// Output channels per trunk stage; each stage is a 3x3 stride-2 conv.
    pub trunk_channels: Vec<usize>,
    pub input_h: usize,
    pub input_w: usize,
    pub d_model: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            stem_kernel: (5, 7, 7),
            stem_channels: 4,
            trunk_channels: vec![8, 16, 32],
            input_h: 16,
            input_w: 16,
            d_model: 32,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stem_kernel.0 % 2 == 0 {
            return Err(Error::config("stem temporal kernel must be odd"));
        }
        if self.stem_channels == 0 || self.trunk_channels.is_empty() {
            return Err(Error::config("frontend needs stem and trunk channels"));
        }
        // Each stride-2 trunk stage needs at least 2 pixels per axis to
        // halve; the stack then ends at >= 1x1 before pooling.
        let (h, w) = self.spatial_after_stem();
        let mut extent = h.min(w);
        for _ in &self.trunk_channels {
            if extent < 2 {
                return Err(Error::config(format!(
                    "input {}x{} too small for a {}-stage trunk",
                    self.input_h,
                    self.input_w,
                    self.trunk_channels.len()
                )));
            }
            extent = extent.div_ceil(2);
        }
        Ok(())
    }

    fn spatial_after_stem(&self) -> (usize, usize) {
        let (_, kh, kw) = self.stem_kernel;
        let conv = |n: usize, k: usize| (n + 2 * (k / 2) - k) / 2 + 1;
        (conv(self.input_h, kh), conv(self.input_w, kw))
    }
}

pub struct Frontend {
    pub cfg: FrontendConfig,
    stem_w: Tensor,
    stem_b: Tensor,
    trunk: Vec<(Tensor, Tensor)>, // (weight [Co, Ci, 3, 3], bias [Co])
    proj: Linear,
}

impl Frontend {
    pub fn new(cfg: FrontendConfig, rng: &mut SplitRng) -> Result<Frontend> {
        cfg.validate()?;
        let (kt, kh, kw) = cfg.stem_kernel;
        let fan_in = kt * kh * kw;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let stem_w = Tensor::init_uniform(&[cfg.stem_channels, 1, kt, kh, kw], bound, rng);
        let stem_b = Tensor::init_zeros(&[cfg.stem_channels]);
        let mut trunk = Vec::new();
        let mut c_in = cfg.stem_channels;
        for &c_out in &cfg.trunk_channels {
            let bound = 1.0 / ((c_in * 9) as f64).sqrt();
            trunk.push((
                Tensor::init_uniform(&[c_out, c_in, 3, 3], bound, rng),
                Tensor::init_zeros(&[c_out]),
            ));
            c_in = c_out;
        }
        let proj = Linear::new(c_in, cfg.d_model, rng);
        Ok(Frontend {
            cfg,
            stem_w,
            stem_b,
            trunk,
            proj,
        })
    }

    /// Video [T, H, W] -> features [T, d_model].
    pub fn forward(&self, video: &Video) -> Result<Tensor> {
        if video.h != self.cfg.input_h || video.w != self.cfg.input_w {
            return Err(Error::ShapeMismatch {
                op: "frontend",
                lhs: vec![video.h, video.w],
                rhs: vec![self.cfg.input_h, self.cfg.input_w],
            });
        }
        let (kt, kh, kw) = self.cfg.stem_kernel;
        let x = Tensor::from_vec(&[1, video.t, video.h, video.w], video.frames.clone())?;
        let x = x.pad_time_replicate(kt / 2)?;
        let x = x
            .conv3d(
                &self.stem_w,
                &self.stem_b,
                (1, 2, 2),
                (0, kh / 2, kw / 2),
            )?
            .relu()?;
        // [C0, T, H', W']: process frames independently through the trunk.
        let shape = x.shape().to_vec();
        let (c0, t) = (shape[0], shape[1]);
        let mut rows = Vec::with_capacity(t);
        for ti in 0..t {
            let mut f = x.narrow(1, ti, 1)?.reshape(&[c0, shape[2], shape[3]])?;
            for (w, b) in &self.trunk {
                f = f.conv2d(w, b, 2, 1)?.relu()?;
            }
            let fs = f.shape().to_vec();
            let pooled = f.reshape(&[fs[0], fs[1] * fs[2]])?.mean_last()?;
            rows.push(pooled.reshape(&[1, fs[0]])?);
        }
        let features = Tensor::concat(0, &rows)?;
        self.proj.forward(&features)
    }

    pub fn params(&self) -> NamedParams {
        let mut out = vec![
            ("stem.weight".to_string(), self.stem_w.clone()),
            ("stem.bias".to_string(), self.stem_b.clone()),
        ];
        for (i, (w, b)) in self.trunk.iter().enumerate() {
            out.push((format!("trunk{i}.weight"), w.clone()));
            out.push((format!("trunk{i}.bias"), b.clone()));
        }
        out.extend(prefixed("proj", self.proj.params()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro_cfg() -> FrontendConfig {
        FrontendConfig {
            stem_kernel: (5, 7, 7),
            stem_channels: 2,
            trunk_channels: vec![4],
            input_h: 8,
            input_w: 8,
            d_model: 8,
        }
    }

    fn video(t: usize, h: usize, w: usize, seed: u64) -> Video {
        let mut rng = SplitRng::new(seed);
        Video::new(
            (0..t * h * w).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
            t,
            h,
            w,
            25.0,
        )
        .unwrap()
    }

    #[test]
    fn preserves_frame_count() {
        let mut rng = SplitRng::new(61);
        let fe = Frontend::new(micro_cfg(), &mut rng).unwrap();
        let out = fe.forward(&video(8, 8, 8, 1)).unwrap();
        assert_eq!(out.shape(), &[8, 8]);
    }

    #[test]
    fn constant_video_gives_identical_rows() {
        let mut rng = SplitRng::new(62);
        let fe = Frontend::new(micro_cfg(), &mut rng).unwrap();
        let v = Video::new(vec![0.7; 6 * 64], 6, 8, 8, 25.0).unwrap();
        let out = fe.forward(&v).unwrap();
        let d = out.data_vec();
        for t in 1..6 {
            for c in 0..8 {
                assert_eq!(d[t * 8 + c], d[c], "row {t} differs at {c}");
            }
        }
    }

    #[test]
    fn temporal_receptive_field_is_local() {
        // Stem kernel 5 -> perturbing frame 0 must leave rows t > 2 unchanged.
        let mut rng = SplitRng::new(63);
        let fe = Frontend::new(micro_cfg(), &mut rng).unwrap();
        let base = video(8, 8, 8, 2);
        let mut poked = base.clone();
        for px in 0..64 {
            poked.frames[px] = (poked.frames[px] + 0.9).clamp(-1.0, 1.0);
        }
        let a = fe.forward(&base).unwrap().data_vec();
        let b = fe.forward(&poked).unwrap().data_vec();
        let changed: Vec<usize> = (0..8)
            .filter(|&t| (0..8).any(|c| a[t * 8 + c] != b[t * 8 + c]))
            .collect();
        assert!(changed.iter().all(|&t| t <= 2), "rows {changed:?} changed");
        assert!(changed.contains(&0));
    }

    #[test]
    fn gradient_reaches_every_parameter() {
        let mut rng = SplitRng::new(64);
        let fe = Frontend::new(micro_cfg(), &mut rng).unwrap();
        let out = fe.forward(&video(7, 8, 8, 3)).unwrap();
        out.sum_all().unwrap().backward().unwrap();
        for (name, p) in fe.params() {
            let g = p.grad_vec().unwrap_or_default();
            assert!(
                g.iter().any(|v| *v != 0.0),
                "parameter {name} received no gradient"
            );
        }
    }

    #[test]
    fn too_small_input_is_rejected() {
        let cfg = FrontendConfig {
            input_h: 1,
            input_w: 1,
            trunk_channels: vec![4, 8, 16, 32],
            ..micro_cfg()
        };
        let mut rng = SplitRng::new(65);
        assert!(Frontend::new(cfg, &mut rng).is_err());
    }
}
