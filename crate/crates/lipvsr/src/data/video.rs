//! In-memory video clips and the LVID binary file format.
//!
//! LVID layout, all little-endian: magic "LVID", u32 version (1),
//! u32 T, H, W, then T*H*W f32 samples in [-1, 1]. Pixels are stored in
//! f32 (storage precision); in memory everything is f64.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LVID";
const VERSION: u32 = 1;

/// Grayscale frame sequence, values in [-1, 1], row-major [T, H, W].
#[derive(Debug, Clone)]
pub struct Video {
    pub frames: Vec<f64>,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub frame_rate: f64,
}

impl Video {
    pub fn new(frames: Vec<f64>, t: usize, h: usize, w: usize, frame_rate: f64) -> Result<Video> {
        if t == 0 || frames.len() != t * h * w {
            return Err(Error::ShapeMismatch {
                op: "video",
                lhs: vec![t, h, w],
                rhs: vec![frames.len()],
            });
        }
        if !frames.iter().all(|v| (-1.0..=1.0).contains(v)) {
            return Err(Error::contract("video values must lie in [-1, 1]"));
        }
        Ok(Video {
            frames,
            t,
            h,
            w,
            frame_rate,
        })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.frames[t * n..(t + 1) * n]
    }

    /// Mean frame across time.
    pub fn mean_frame(&self) -> Vec<f64> {
        let n = self.h * self.w;
        let mut mean = vec![0.0; n];
        for t in 0..self.t {
            for (m, v) in mean.iter_mut().zip(self.frame(t)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= self.t as f64;
        }
        mean
    }
}

pub fn write_video(path: &Path, video: &Video) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + video.frames.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [video.t, video.h, video.w] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in &video.frames {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_video(path: &Path) -> Result<Video> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[0..4] != MAGIC {
        return Err(Error::format(format!("{} is not an LVID file", path.display())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(Error::format(format!(
            "unsupported LVID version {} in {}",
            u32_at(4),
            path.display()
        )));
    }
    let (t, h, w) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    let n = t * h * w;
    if bytes.len() != 20 + 4 * n {
        return Err(Error::format(format!(
            "LVID payload size mismatch in {}",
            path.display()
        )));
    }
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let o = 20 + 4 * i;
        let v = f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
        if !(-1.0..=1.0).contains(&v) {
            return Err(Error::format(format!(
                "LVID sample {v} outside [-1, 1] in {}",
                path.display()
            )));
        }
        frames.push(v);
    }
    Video::new(frames, t, h, w, 25.0)
}
