//! Grayscale rendering of snapshots as binary PGM.
//!
//! Amplitudes map symmetrically onto `0..=MAXVAL` with zero at the middle level,
//! so negating a field complements the image. The known-region boundary is
//! drawn in black.

use std::path::Path;

use redatum_core::domain::RegionMask;
use redatum_core::wave_sim::Snapshot;

use crate::error::{CliError, Result};

/// Odd number of levels so that zero has an exact middle gray.
pub const MAXVAL: u8 = 254;
pub const MID: u8 = MAXVAL / 2;
const GAP: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, MAXVAL).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_pgm())?)
    }
}

pub fn amplitude(s: &Snapshot) -> f64 {
    s.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Level of `v` for amplitude `scale`; values beyond the scale saturate.
pub fn level(v: f64, scale: f64) -> u8 {
    if !(scale > 0.0) {
        return MID;
    }
    let x = (v / scale).clamp(-1.0, 1.0);
    (MID as f64 + (MID as f64 * x).round()) as u8
}

/// Masked nodes with a masked-out neighbour below or beside them.
pub fn outline(mask: &RegionMask) -> Vec<bool> {
    let g = mask.grid;
    let mut edge = vec![false; g.len()];
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            if !mask.contains(iy, ix) {
                continue;
            }
            let below = iy + 1 < g.ny && !mask.contains(iy + 1, ix);
            let left = ix > 0 && !mask.contains(iy, ix - 1);
            let right = ix + 1 < g.nx && !mask.contains(iy, ix + 1);
            edge[g.index(iy, ix)] = below || left || right;
        }
    }
    edge
}

/// One pixel per grid node, the surface on the top row.
pub fn render_snapshot(s: &Snapshot, scale: f64, mask: Option<&RegionMask>) -> Result<Image> {
    let (ny, nx) = s.values.dim();
    if ny == 0 || nx == 0 {
        return Err(CliError::Render("empty snapshot".into()));
    }
    let mut pixels: Vec<u8> = s.values.iter().map(|&v| level(v, scale)).collect();
    if let Some(m) = mask {
        if !m.grid.same_geometry(&s.grid) {
            return Err(CliError::Render("mask and snapshot grids differ".into()));
        }
        for (p, &e) in pixels.iter_mut().zip(outline(m).iter()) {
            if e {
                *p = 0;
            }
        }
    }
    Ok(Image {
        width: nx,
        height: ny,
        pixels,
    })
}

/// Reconstruction and reference side by side on the scale of the larger of the two.
pub fn render_pair(a: &Snapshot, b: &Snapshot, mask: Option<&RegionMask>) -> Result<Image> {
    if a.values.dim() != b.values.dim() {
        return Err(CliError::Render("snapshot shapes differ".into()));
    }
    let scale = amplitude(a).max(amplitude(b));
    let (ia, ib) = (render_snapshot(a, scale, mask)?, render_snapshot(b, scale, mask)?);
    let width = 2 * ia.width + GAP;
    let mut pixels = vec![MID; width * ia.height];
    for r in 0..ia.height {
        let row = &mut pixels[r * width..(r + 1) * width];
        row[..ia.width].copy_from_slice(&ia.pixels[r * ia.width..(r + 1) * ia.width]);
        row[ia.width + GAP..].copy_from_slice(&ib.pixels[r * ib.width..(r + 1) * ib.width]);
    }
    Ok(Image {
        width,
        height: ia.height,
        pixels,
    })
}
