//! Cubic volumes and the HVOL file format.
//!
//! HVOL layout (little-endian):
//!
//! ```text
//! magic    4 bytes  "HVOL"
//! version  u32      1
//! extents  3 x u32  depth, height, width
//! voxels   depth*height*width x f32, z-major raster (x fastest)
//! ```
//!
//! Loading requires a cube and finite values; nothing may follow the voxels.

use std::path::Path;

use crate::error::{bail, Error, Result};
use crate::model::Reader;
use crate::tensor::{Real, Tensor};

pub const HVOL_MAGIC: &[u8; 4] = b"HVOL";
pub const HVOL_VERSION: u32 = 1;
const HEADER_LEN: u64 = 20;

#[derive(Clone, Debug)]
pub struct Volume {
    /// `[E, E, E]`
    pub voxels: Tensor<f32>,
    pub label: Option<usize>,
    pub source_id: String,
}

impl Volume {
    pub fn new(extent: usize, voxels: Vec<f32>, label: Option<usize>, source_id: impl Into<String>) -> Result<Self> {
        if voxels.iter().any(|v| !v.is_finite()) {
            bail!(Format, "volume holds non-finite voxels");
        }
        Ok(Self {
            voxels: Tensor::from_vec([extent, extent, extent], voxels)?,
            label,
            source_id: source_id.into(),
        })
    }

    pub fn extent(&self) -> usize {
        self.voxels.dims()[0]
    }

    pub fn values(&self) -> &[f32] {
        self.voxels.data()
    }

    /// `[1, 1, E, E, E]` in the requested precision.
    pub fn to_input<F: Real>(&self) -> Tensor<F> {
        let e = self.extent();
        let data = self.values().iter().map(|&v| F::lit(f64::from(v))).collect();
        Tensor::from_vec([1, 1, e, e, e], data).expect("cube volume")
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_hvol([self.extent(); 3], self.values())
    }

    /// Parses HVOL bytes; `source_id` and `label` are not stored in the file.
    pub fn decode(bytes: &[u8], source_id: impl Into<String>) -> Result<Self> {
        let (extents, voxels) = decode_hvol(bytes)?;
        if extents[0] != extents[1] || extents[1] != extents[2] {
            bail!(Format, "volume is not cubic: extents {:?}", extents);
        }
        Self::new(extents[0], voxels, None, source_id)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    /// Reads an HVOL file; the source id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::decode(&bytes, id)
    }
}

pub fn encode_hvol(extents: [usize; 3], voxels: &[f32]) -> Vec<u8> {
    debug_assert_eq!(extents.iter().product::<usize>(), voxels.len());
    let mut out = Vec::with_capacity(HEADER_LEN as usize + 4 * voxels.len());
    out.extend_from_slice(HVOL_MAGIC);
    out.extend_from_slice(&HVOL_VERSION.to_le_bytes());
    for e in extents {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for v in voxels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Raw HVOL decoding: header checks, exact length, finite values. Does not
/// require a cube.
pub fn decode_hvol(bytes: &[u8]) -> Result<([usize; 3], Vec<f32>)> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != HVOL_MAGIC {
        bail!(Format, "not an HVOL file: bad magic");
    }
    let version = r.u32()?;
    if version != HVOL_VERSION {
        bail!(Format, "unsupported HVOL version {version}");
    }
    let extents = [r.u32()? as u64, r.u32()? as u64, r.u32()? as u64];
    let expected = extents
        .iter()
        .try_fold(1u64, |acc, &e| acc.checked_mul(e))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN));
    let Some(expected) = expected else {
        bail!(Format, "HVOL extents {:?} overflow", extents);
    };
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::Truncated { expected, actual });
    }
    if actual > expected {
        bail!(Format, "{} trailing bytes after HVOL voxels", actual - expected);
    }
    let count = extents.iter().product::<u64>() as usize;
    let voxels = r.f32s(count)?;
    if voxels.iter().any(|v| !v.is_finite()) {
        bail!(Format, "HVOL holds non-finite voxels");
    }
    Ok((extents.map(|e| e as usize), voxels))
}
