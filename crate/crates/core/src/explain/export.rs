use std::path::{Path, PathBuf};

use super::Heatmap;
use crate::data::{encode_hvol, Volume};
use crate::error::{bail, Error, Result};

/// Orthogonal centre slices. Voxels are stored `[z][y][x]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceAxis {
    /// Fixed x; rows follow z, columns y.
    Sagittal,
    /// Fixed y; rows follow z, columns x.
    Coronal,
    /// Fixed z; rows follow y, columns x.
    Axial,
}

impl SliceAxis {
    pub const ALL: [SliceAxis; 3] = [SliceAxis::Sagittal, SliceAxis::Coronal, SliceAxis::Axial];

    pub fn name(self) -> &'static str {
        match self {
            SliceAxis::Sagittal => "sagittal",
            SliceAxis::Coronal => "coronal",
            SliceAxis::Axial => "axial",
        }
    }

    /// `E x E` slice through the centre of a cube, row-major.
    pub fn centre_slice(self, cube: &[f32], e: usize) -> Vec<f32> {
        let c = e / 2;
        let at = |z: usize, y: usize, x: usize| cube[(z * e + y) * e + x];
        let mut out = Vec::with_capacity(e * e);
        for r in 0..e {
            for col in 0..e {
                out.push(match self {
                    SliceAxis::Sagittal => at(r, col, c),
                    SliceAxis::Coronal => at(r, c, col),
                    SliceAxis::Axial => at(c, r, col),
                });
            }
        }
        out
    }
}

/// `[0, 1] -> 0..=255`, clamping outside values and rounding half up.
pub fn quantize(v: f32) -> u8 {
    (f64::from(v).clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Binary greymap (P5, maxval 255).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f32]) -> Result<()> {
    if pixels.len() != width * height {
        bail!(Dimension, "{} pixels for a {width}x{height} image", pixels.len());
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(pixels.iter().map(|&v| quantize(v)));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `{id}_{axis}_scan.pgm` and `{id}_{axis}_heat.pgm` for each axis
/// plus `{id}_heat.hvol`. Returns the paths in that order.
pub fn export_slices(heat: &Heatmap, volume: &Volume, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let e = volume.extent();
    if heat.volume.dims() != [e, e, e] {
        bail!(
            Dimension,
            "heatmap {} does not match scan extent {e}",
            heat.volume.shape()
        );
    }
    std::fs::create_dir_all(out_dir).map_err(|err| Error::io(out_dir, err))?;
    let id = &heat.source_id;
    let mut written = Vec::with_capacity(7);
    for axis in SliceAxis::ALL {
        for (kind, cube) in [("scan", volume.values()), ("heat", heat.volume.data())] {
            let path = out_dir.join(format!("{id}_{}_{kind}.pgm", axis.name()));
            write_pgm(&path, e, e, &axis.centre_slice(cube, e))?;
            written.push(path);
        }
    }
    let path = out_dir.join(format!("{id}_heat.hvol"));
    std::fs::write(&path, encode_hvol([e; 3], heat.volume.data())).map_err(|err| Error::io(&path, err))?;
    written.push(path);
    Ok(written)
}
