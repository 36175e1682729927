use super::preprocess::normalize_intensity;
use super::volume::Volume;
use crate::error::{bail, Result};
use crate::tensor::RngState;

/// Standard deviation of the additive voxel noise.
pub const SYNTH_NOISE: f64 = 0.05;

/// Class-conditioned Gaussian blobs.
///
/// Class `k` places a blob whose radius grows with `k` and whose centre is
/// shifted along the x axis by an amount that also grows with `k`. Each
/// volume jitters the centre by up to one voxel, adds `N(0, 0.05)` noise,
/// clips negative intensities and is min-max normalised. Volumes are
/// returned interleaved by class: sample `i` of every class before sample
/// `i + 1`.
pub fn synth_dataset(per_class: usize, extent: usize, num_classes: usize, seed: u64) -> Result<Vec<Volume>> {
    if extent < 4 {
        bail!(Parameter, "synthetic volumes need extent >= 4, got {extent}");
    }
    if num_classes == 0 {
        bail!(Parameter, "synthetic dataset needs at least one class");
    }
    let root = RngState::new(seed);
    let mut out = Vec::with_capacity(per_class * num_classes);
    for i in 0..per_class {
        for k in 0..num_classes {
            let mut rng = root.derive(&[k as u64, i as u64]);
            let voxels = blob(extent, k, num_classes, &mut rng);
            let v = Volume::new(extent, voxels, Some(k), format!("synth_c{k}_{i:03}"))?;
            out.push(normalize_intensity(&v)?);
        }
    }
    Ok(out)
}

fn blob(extent: usize, class: usize, num_classes: usize, rng: &mut RngState) -> Vec<f32> {
    let e = extent as f64;
    let t = if num_classes > 1 {
        class as f64 / (num_classes - 1) as f64
    } else {
        0.0
    };
    let radius = e * (0.10 + 0.12 * t);
    let mid = (e - 1.0) / 2.0;
    let centre = [
        mid + rng.uniform() * 2.0 - 1.0,
        mid + rng.uniform() * 2.0 - 1.0,
        mid + e * (0.25 * t - 0.125) + rng.uniform() * 2.0 - 1.0,
    ];
    let mut voxels = Vec::with_capacity(extent.pow(3));
    for z in 0..extent {
        for y in 0..extent {
            for x in 0..extent {
                let d2 = (z as f64 - centre[0]).powi(2)
                    + (y as f64 - centre[1]).powi(2)
                    + (x as f64 - centre[2]).powi(2);
                let v = (-d2 / (2.0 * radius * radius)).exp() + rng.normal(0.0, SYNTH_NOISE);
                voxels.push(v.max(0.0) as f32);
            }
        }
    }
    voxels
}
