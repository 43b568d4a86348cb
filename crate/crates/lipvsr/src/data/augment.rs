//! Training-time video augmentation: adaptive time masking and random
//! spatial cropping. Both are deterministic given their RNG stream;
//! evaluation uses the center crop and no masking.

use super::Video;
use crate::error::{Error, Result};
use crate::rng::SplitRng;

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    /// Masks drawn per 24 frames of input (rounded up), so longer clips
    /// receive proportionally more masks.
    pub masks_per_24_frames: usize,
    /// Longest masked span in frames.
    pub max_span: usize,
    pub crop_h: usize,
    pub crop_w: usize,
}

impl AugmentConfig {
    pub fn for_frames_per_token(frames_per_token: usize, crop_h: usize, crop_w: usize) -> Self {
        AugmentConfig {
            masks_per_24_frames: 1,
            max_span: ((frames_per_token as f64) * 0.4).floor().max(1.0) as usize,
            crop_h,
            crop_w,
        }
    }
}

/// Replaces randomly chosen spans with the per-utterance mean frame. The
/// number of masks scales with ceil(T / 24); frames outside the chosen
/// spans are bit-unchanged.
pub fn augment_time_mask(video: &Video, cfg: &AugmentConfig, rng: &mut SplitRng) -> Video {
    let n_masks = cfg.masks_per_24_frames * video.t.div_ceil(24);
    if n_masks == 0 || cfg.max_span == 0 {
        return video.clone();
    }
    let mean = video.mean_frame();
    let frame = video.h * video.w;
    let mut out = video.clone();
    for _ in 0..n_masks {
        let span = (1 + rng.below(cfg.max_span)).min(video.t);
        let start = rng.below(video.t - span + 1);
        for t in start..start + span {
            out.frames[t * frame..(t + 1) * frame].copy_from_slice(&mean);
        }
    }
    out
}

fn crop_at(video: &Video, oy: usize, ox: usize, th: usize, tw: usize) -> Video {
    let mut frames = Vec::with_capacity(video.t * th * tw);
    for t in 0..video.t {
        let f = video.frame(t);
        for y in 0..th {
            let row = (oy + y) * video.w + ox;
            frames.extend_from_slice(&f[row..row + tw]);
        }
    }
    Video {
        frames,
        t: video.t,
        h: th,
        w: tw,
        frame_rate: video.frame_rate,
    }
}

/// Contiguous crop with a random offset shared by all frames of the clip.
pub fn augment_random_crop(
    video: &Video,
    th: usize,
    tw: usize,
    rng: &mut SplitRng,
) -> Result<Video> {
    if th > video.h || tw > video.w {
        return Err(Error::ShapeMismatch {
            op: "random_crop",
            lhs: vec![video.h, video.w],
            rhs: vec![th, tw],
        });
    }
    let oy = rng.below(video.h - th + 1);
    let ox = rng.below(video.w - tw + 1);
    Ok(crop_at(video, oy, ox, th, tw))
}

/// Deterministic center crop for evaluation.
pub fn center_crop(video: &Video, th: usize, tw: usize) -> Result<Video> {
    if th > video.h || tw > video.w {
        return Err(Error::ShapeMismatch {
            op: "center_crop",
            lhs: vec![video.h, video.w],
            rhs: vec![th, tw],
        });
    }
    Ok(crop_at(video, (video.h - th) / 2, (video.w - tw) / 2, th, tw))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(t: usize, h: usize, w: usize, seed: u64) -> Video {
        let mut rng = SplitRng::new(seed);
        let frames = (0..t * h * w).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        Video::new(frames, t, h, w, 25.0).unwrap()
    }

    #[test]
    fn zero_masks_is_identity() {
        let v = clip(10, 4, 4, 1);
        let cfg = AugmentConfig {
            masks_per_24_frames: 0,
            max_span: 3,
            crop_h: 4,
            crop_w: 4,
        };
        let out = augment_time_mask(&v, &cfg, &mut SplitRng::new(2));
        assert_eq!(out.frames, v.frames);
    }

    #[test]
    fn mask_count_scales_with_length() {
        // T=48, 1 mask per 24 frames -> exactly 2 spans drawn, so at
        // most 2 distinct masked regions.
        let v = clip(48, 2, 2, 3);
        let cfg = AugmentConfig {
            masks_per_24_frames: 1,
            max_span: 1,
            crop_h: 2,
            crop_w: 2,
        };
        let out = augment_time_mask(&v, &cfg, &mut SplitRng::new(4));
        let mean = v.mean_frame();
        let masked: Vec<usize> = (0..48)
            .filter(|&t| out.frame(t) == mean.as_slice())
            .collect();
        assert!(!masked.is_empty() && masked.len() <= 2, "{masked:?}");
        // Unmasked frames are bit-identical to the input.
        for t in 0..48 {
            if !masked.contains(&t) {
                assert_eq!(out.frame(t), v.frame(t));
            }
        }
    }

    #[test]
    fn masked_frames_equal_recomputed_mean() {
        let v = clip(30, 3, 3, 5);
        let cfg = AugmentConfig {
            masks_per_24_frames: 2,
            max_span: 4,
            crop_h: 3,
            crop_w: 3,
        };
        let out = augment_time_mask(&v, &cfg, &mut SplitRng::new(6));
        let mean = v.mean_frame();
        let changed: Vec<usize> = (0..30).filter(|&t| out.frame(t) != v.frame(t)).collect();
        assert!(!changed.is_empty());
        for &t in &changed {
            assert_eq!(out.frame(t), mean.as_slice());
        }
    }

    #[test]
    fn full_size_crop_is_identity() {
        let v = clip(4, 6, 6, 7);
        let out = augment_random_crop(&v, 6, 6, &mut SplitRng::new(8)).unwrap();
        assert_eq!(out.frames, v.frames);
    }

    #[test]
    fn center_crop_offset() {
        // 6x6 -> 4x4 center crop starts at (1, 1).
        let mut frames = vec![0.0; 36];
        frames[1 * 6 + 1] = 0.5; // the (1,1) pixel becomes (0,0) after crop
        let v = Video::new(frames, 1, 6, 6, 25.0).unwrap();
        let out = center_crop(&v, 4, 4).unwrap();
        assert_eq!(out.frame(0)[0], 0.5);
    }

    #[test]
    fn crop_offset_shared_across_frames() {
        let v = clip(5, 8, 8, 9);
        let out = augment_random_crop(&v, 4, 4, &mut SplitRng::new(10)).unwrap();
        // Find the offset from frame 0, then verify every frame matches it.
        let mut found = None;
        'outer: for oy in 0..5 {
            for ox in 0..5 {
                let manual = crop_at(&v, oy, ox, 4, 4);
                if manual.frame(0) == out.frame(0) {
                    found = Some((oy, ox));
                    break 'outer;
                }
            }
        }
        let (oy, ox) = found.expect("offset not found");
        let manual = crop_at(&v, oy, ox, 4, 4);
        assert_eq!(manual.frames, out.frames);
    }

    #[test]
    fn oversized_crop_is_a_shape_error() {
        let v = clip(2, 4, 4, 11);
        assert!(augment_random_crop(&v, 5, 4, &mut SplitRng::new(1)).is_err());
        assert!(center_crop(&v, 4, 6).is_err());
    }

    #[test]
    fn augmentations_preserve_range() {
        let v = clip(26, 4, 4, 12);
        let cfg = AugmentConfig {
            masks_per_24_frames: 3,
            max_span: 5,
            crop_h: 3,
            crop_w: 3,
        };
        let mut rng = SplitRng::new(13);
        let masked = augment_time_mask(&v, &cfg, &mut rng);
        let cropped = augment_random_crop(&masked, 3, 3, &mut rng).unwrap();
        assert!(cropped.frames.iter().all(|x| (-1.0..=1.0).contains(x)));
    }
}
