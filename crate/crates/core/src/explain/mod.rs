//! Attention-weighted saliency heatmaps.
//!
//! The importance of patch token `j` is the attention it receives, averaged
//! over layers, heads, batch entries and query rows (or the CLS query only),
//! renormalised to sum to one. Each token is one channel of the encoder's
//! final feature map, so the heatmap is the importance-weighted sum of the
//! rectified channel maps, upsampled to the scan, scaled to `[0, 1]` and
//! multiplied by the scan.

mod export;

use std::str::FromStr;

pub use export::{export_slices, quantize, write_pgm, SliceAxis};

use crate::data::Volume;
use crate::error::{bail, Error, Result};
use crate::model::{AttentionRecord, HcctModel};
use crate::tensor::ops::resample_trilinear;
use crate::tensor::{no_grad, Real, Tensor};

/// Which query rows contribute to token importance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ImportanceMode {
    /// Mean over every query position.
    #[default]
    Mean,
    /// Attention paid by the CLS query only.
    Cls,
}

impl FromStr for ImportanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "cls" => Ok(Self::Cls),
            other => bail!(Parameter, "unknown attention mode {other:?}; expected mean or cls"),
        }
    }
}

impl std::fmt::Display for ImportanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Cls => "cls",
        })
    }
}

/// Saliency over the scan grid: non-negative, zero wherever the scan is.
#[derive(Clone, Debug)]
pub struct Heatmap {
    /// `[E, E, E]`
    pub volume: Tensor<f32>,
    pub source_id: String,
}

/// Per-token importance `[n]` from attention maps `[b, h, n + 1, n + 1]`.
pub fn token_importance<F: Real>(record: &AttentionRecord<F>, mode: ImportanceMode) -> Result<Tensor<f64>> {
    let Some(first) = record.probs.first() else {
        bail!(Contract, "attention record holds no layers");
    };
    let &[_, _, t, t2] = first.dims() else {
        bail!(Dimension, "attention maps must be [b, h, t, t], got {}", first.shape());
    };
    if t != t2 || t < 2 {
        bail!(Dimension, "attention maps must be square with t >= 2, got {}", first.shape());
    }
    let n = t - 1;
    let mut received = vec![0.0; n];
    for layer in &record.probs {
        if layer.rank() != 4 || layer.dims()[2..] != [t, t] {
            bail!(Dimension, "attention layers disagree: {} vs {}", layer.shape(), first.shape());
        }
        let (b, h) = (layer.dims()[0], layer.dims()[1]);
        let p = layer.data();
        let queries: Vec<usize> = match mode {
            ImportanceMode::Mean => (0..t).collect(),
            ImportanceMode::Cls => vec![0],
        };
        let weight = 1.0 / (b * h * queries.len()) as f64;
        for map in 0..b * h {
            for &q in &queries {
                let row = &p[(map * t + q) * t..(map * t + q + 1) * t];
                for j in 0..n {
                    received[j] += row[j + 1].as_f64() * weight;
                }
            }
        }
    }
    let total: f64 = received.iter().sum();
    if !(total > 0.0) {
        bail!(Degenerate, "patch tokens receive no attention");
    }
    Tensor::from_vec([n], received.into_iter().map(|r| r / total).collect())
}

/// `sum_j importance[j] * relu(features[j])`, `[n, s, s, s] -> [s, s, s]`.
pub fn fuse<F: Real>(importance: &Tensor<f64>, features: &Tensor<F>) -> Result<Tensor<f64>> {
    let &[n] = importance.dims() else {
        bail!(Dimension, "importance must be a vector, got {}", importance.shape());
    };
    let &[m, s1, s2, s3] = features.dims() else {
        bail!(Dimension, "features must be [n, s, s, s], got {}", features.shape());
    };
    if m != n {
        bail!(Dimension, "{n} importance weights for {m} feature maps");
    }
    let voxels = s1 * s2 * s3;
    let f = features.data();
    let mut out = vec![0.0f64; voxels];
    for (j, &w) in importance.data().iter().enumerate() {
        for (acc, &v) in out.iter_mut().zip(&f[j * voxels..(j + 1) * voxels]) {
            *acc += w * v.as_f64().max(0.0);
        }
    }
    for v in &mut out {
        *v = v.max(0.0);
    }
    Tensor::from_vec([s1, s2, s3], out)
}

/// Min-max scaling into `[0, 1]`. A constant map becomes all ones when
/// positive and all zeros otherwise.
fn unit_range(values: &mut [f64]) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        for v in values.iter_mut() {
            *v = (*v - lo) / (hi - lo);
        }
    } else {
        let fill = if hi > 0.0 { 1.0 } else { 0.0 };
        values.fill(fill);
    }
}

/// Full pipeline for one scan. The scan must have the model's extent and
/// non-negative intensities.
pub fn render<F: Real>(volume: &Volume, model: &HcctModel<F>, mode: ImportanceMode) -> Result<Heatmap> {
    let e = volume.extent();
    if e != model.config.input_extent {
        bail!(
            Dimension,
            "volume {} has extent {e}, model expects {}",
            volume.source_id,
            model.config.input_extent
        );
    }
    if volume.values().iter().any(|&v| v < 0.0) {
        bail!(Contract, "volume {} has negative intensities; normalise it first", volume.source_id);
    }
    let _guard = no_grad();
    let out = model.infer(&volume.to_input::<F>(), true)?;
    let (Some(attention), Some(features)) = (out.attention, out.conv_features) else {
        bail!(Contract, "capture pass returned no attention");
    };
    let dims = features.dims().to_vec();
    let features = features.reshape(&dims[1..])?;
    let importance = token_importance(&attention, mode)?;
    let fused = fuse(&importance, &features)?;
    let s = fused.dims()[0];
    let mut map = resample_trilinear(fused.data(), [s; 3], [e; 3]);
    unit_range(&mut map);
    let heat = map
        .iter()
        .zip(volume.values())
        .map(|(&w, &v)| (w * f64::from(v)) as f32)
        .collect();
    Ok(Heatmap {
        volume: Tensor::from_vec([e, e, e], heat)?,
        source_id: volume.source_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(layers: Vec<Vec<f64>>, b: usize, h: usize, t: usize) -> AttentionRecord<f64> {
        AttentionRecord {
            probs: layers
                .into_iter()
                .map(|p| Tensor::from_vec([b, h, t, t], p).unwrap())
                .collect(),
        }
    }

    #[test]
    fn uniform_attention_gives_uniform_importance() {
        let t = 5;
        let rec = record(vec![vec![1.0 / t as f64; 2 * 3 * t * t]; 2], 2, 3, t);
        for mode in [ImportanceMode::Mean, ImportanceMode::Cls] {
            let imp = token_importance(&rec, mode).unwrap();
            assert!(imp.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn concentrated_attention() {
        let t = 4;
        let mut p = vec![0.0; t * t];
        for q in 0..t {
            p[q * t + 2] = 1.0;
        }
        let imp = token_importance(&record(vec![p.clone(), p], 1, 1, t), ImportanceMode::Mean).unwrap();
        assert_eq!(imp.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_record_rejected() {
        let rec = AttentionRecord::<f64> { probs: vec![] };
        assert!(matches!(token_importance(&rec, ImportanceMode::Mean), Err(Error::Contract(_))));
    }

    #[test]
    fn fuse_selects_and_averages() {
        let features = Tensor::<f64>::from_vec([2, 1, 1, 2], vec![-1.0, 2.0, 3.0, 3.0]).unwrap();
        let one_hot = Tensor::from_vec([2], vec![1.0, 0.0]).unwrap();
        assert_eq!(fuse(&one_hot, &features).unwrap().data(), &[0.0, 2.0]);
        let constant = Tensor::<f64>::full([3, 2, 2, 2], 0.7);
        let p = Tensor::from_vec([3], vec![0.2, 0.5, 0.3]).unwrap();
        assert!(fuse(&p, &constant).unwrap().data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let wrong = Tensor::from_vec([3], vec![0.2, 0.5, 0.3]).unwrap();
        assert!(matches!(fuse(&wrong, &features), Err(Error::Dimension(_))));
    }

    #[test]
    fn unit_range_fallbacks() {
        let mut flat = vec![0.4; 3];
        unit_range(&mut flat);
        assert_eq!(flat, [1.0; 3]);
        let mut zero = vec![0.0; 2];
        unit_range(&mut zero);
        assert_eq!(zero, [0.0; 2]);
        let mut ramp = vec![1.0, 2.0, 3.0];
        unit_range(&mut ramp);
        assert_eq!(ramp, [0.0, 0.5, 1.0]);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("cls".parse::<ImportanceMode>().unwrap(), ImportanceMode::Cls);
        assert_eq!(ImportanceMode::default().to_string(), "mean");
        assert!("row".parse::<ImportanceMode>().is_err());
    }
}
