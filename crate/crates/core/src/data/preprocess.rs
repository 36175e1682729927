use super::volume::Volume;
use crate::error::{bail, Result};
use crate::tensor::ops::resample_trilinear;

/// Corner-aligned trilinear resampling to a `target³` cube.
pub fn resize(volume: &Volume, target: usize) -> Result<Volume> {
    let e = volume.extent();
    if e == 0 || target == 0 {
        bail!(Parameter, "resize needs extents >= 1, got {e} -> {target}");
    }
    if e == target {
        return Ok(volume.clone());
    }
    let data = resample_trilinear(volume.values(), [e; 3], [target; 3]);
    Volume::new(target, data, volume.label, volume.source_id.clone())
}

/// Min-max rescale into `[0, 1]`.
pub fn normalize_intensity(volume: &Volume) -> Result<Volume> {
    let (lo, hi) = volume
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(f64::from(v)), hi.max(f64::from(v)))
        });
    if !(hi > lo) {
        bail!(Degenerate, "cannot normalise a constant volume (value {lo})");
    }
    let span = hi - lo;
    let data = volume
        .values()
        .iter()
        .map(|&v| ((f64::from(v) - lo) / span) as f32)
        .collect();
    Volume::new(volume.extent(), data, volume.label, volume.source_id.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(e: usize, f: impl Fn(usize, usize, usize) -> f32) -> Volume {
        let mut data = Vec::with_capacity(e * e * e);
        for z in 0..e {
            for y in 0..e {
                for x in 0..e {
                    data.push(f(z, y, x));
                }
            }
        }
        Volume::new(e, data, None, "t").unwrap()
    }

    #[test]
    fn constant_survives_downsampling() {
        let v = cube(16, |_, _, _| 0.37);
        let r = resize(&v, 12).unwrap();
        assert_eq!(r.extent(), 12);
        assert!(r.values().iter().all(|&x| (x - 0.37).abs() < 1e-6));
    }

    #[test]
    fn same_extent_is_identity() {
        let v = cube(5, |z, y, x| (z * 25 + y * 5 + x) as f32);
        assert_eq!(resize(&v, 5).unwrap().values(), v.values());
    }

    #[test]
    fn ramp_stays_monotone() {
        let v = cube(9, |_, _, x| x as f32 * x as f32);
        for target in [4, 13] {
            let r = resize(&v, target).unwrap();
            let row = &r.values()[..target];
            assert!(row.windows(2).all(|w| w[1] >= w[0]), "{row:?}");
            for z in 0..target {
                let start = z * target * target;
                for (a, b) in r.values()[start..start + target].iter().zip(row) {
                    assert!((a - b).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn min_max_rescale() {
        let v = Volume::new(1, vec![4.0], None, "t").unwrap();
        assert!(normalize_intensity(&v).is_err());
        let v = cube(2, |z, y, x| [2.0, 4.0, 6.0][(z + y + x).min(2)]);
        let n = normalize_intensity(&v).unwrap();
        assert_eq!(n.values()[0], 0.0);
        assert_eq!(n.values()[1], 0.5);
        assert_eq!(n.values()[7], 1.0);
        assert_eq!(normalize_intensity(&n).unwrap().values(), n.values());
    }
}
