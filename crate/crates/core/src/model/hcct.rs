use super::config::ModelConfig;
use super::layers::{trunc_normal, ConvBlock, LayerNorm, Linear};
use super::pooling::hybrid_pool;
use super::transformer::{Dropout, TransformerBlock};
use crate::error::{bail, Result};
use crate::tensor::{Real, RngState, Tensor};

/// How a forward pass treats dropout and batch-norm statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch statistics in the encoder.
    Train,
    /// Dropout active, encoder batch-norm frozen on its running statistics.
    FineTune,
    /// Deterministic inference.
    Eval,
}

/// Attention probabilities of one forward pass, one `[b, h, n + 1, n + 1]`
/// tensor per encoder layer.
#[derive(Clone, Debug)]
pub struct AttentionRecord<F: Real> {
    pub probs: Vec<Tensor<F>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<F: Real> {
    /// `[b, num_classes]`
    pub logits: Tensor<F>,
    /// Present when capture was requested.
    pub attention: Option<AttentionRecord<F>>,
    /// `[b, n, s, s, s]`, present when capture was requested.
    pub conv_features: Option<Tensor<F>>,
}

#[derive(Clone, Debug)]
pub struct HcctModel<F: Real> {
    pub config: ModelConfig,
    pub conv: Vec<ConvBlock<F>>,
    pub patch_embed: Linear<F>,
    pub cls_token: Tensor<F>,
    pub pos_embed: Option<Tensor<F>>,
    pub blocks: Vec<TransformerBlock<F>>,
    pub norm: LayerNorm<F>,
    pub seqpool: Linear<F>,
    pub classifier: Linear<F>,
}

impl<F: Real> HcctModel<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let shapes = config.shapes()?;
        let root = RngState::new(seed);
        let d = config.embed_dim;

        let mut rng = root.derive(&[0]);
        let mut c_in = 1;
        let mut conv = Vec::with_capacity(config.conv_channels.len());
        for &c_out in &config.conv_channels {
            conv.push(ConvBlock::new(c_in, c_out, config.conv_kernel, &mut rng));
            c_in = c_out;
        }

        let mut rng = root.derive(&[1]);
        let patch_embed = Linear::new(shapes.patch_dim, d, &mut rng);
        let cls_token = trunc_normal(&[1, 1, d], &mut rng);
        let pos_embed = config
            .positional_embedding
            .then(|| trunc_normal(&[1, shapes.seq_len, d], &mut rng));

        let blocks = (0..config.num_layers)
            .map(|l| {
                let mut rng = root.derive(&[2, l as u64]);
                TransformerBlock::new(d, config.num_heads, config.ffn_ratio, &mut rng)
            })
            .collect();

        let mut rng = root.derive(&[3]);
        Ok(Self {
            norm: LayerNorm::new(d),
            seqpool: Linear::new(d, 1, &mut rng),
            classifier: Linear::new(2 * d, config.num_classes, &mut rng),
            config,
            conv,
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
        })
    }

    fn check_input(&self, volume: &Tensor<F>) -> Result<()> {
        let e = self.config.input_extent;
        match volume.dims() {
            &[_, 1, d, h, w] if d == e && h == e && w == e => Ok(()),
            _ => bail!(
                Dimension,
                "model expects input [b, 1, {e}, {e}, {e}], got {}",
                volume.shape()
            ),
        }
    }

    /// Convolutional encoder: `[b, 1, E, E, E] -> [b, n, s, s, s]`.
    /// Batch statistics are used (and accumulated) when `train_stats` is set.
    pub fn conv_encode(&mut self, volume: &Tensor<F>, train_stats: bool) -> Result<Tensor<F>> {
        self.check_input(volume)?;
        let window = self.config.pool_window;
        let mut x = volume.clone();
        for block in &mut self.conv {
            x = block.forward(&x, window, train_stats)?;
        }
        Ok(x)
    }

    /// Encoder with running statistics; never mutates the model.
    pub fn conv_encode_eval(&self, volume: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_input(volume)?;
        let window = self.config.pool_window;
        let mut x = volume.clone();
        for block in &self.conv {
            x = block.forward_eval(&x, window)?;
        }
        Ok(x)
    }

    /// Channels-as-tokens: each of the `n` feature maps is flattened to
    /// `s^3`, embedded to `d`, prefixed with the CLS token, and offset by the
    /// positional embedding when enabled. Returns `[b, n + 1, d]`.
    pub fn tokenize(&self, features: &Tensor<F>) -> Result<Tensor<F>> {
        let &[b, n, s1, s2, s3] = features.dims() else {
            bail!(Dimension, "tokenize expects [b, n, s, s, s], got {}", features.shape());
        };
        let d = self.config.embed_dim;
        let patches = features.reshape(&[b, n, s1 * s2 * s3])?;
        let embedded = self.patch_embed.forward(&patches)?;
        let cls = self.cls_token.broadcast_to(&[b, 1, d])?;
        let tokens = Tensor::concat(&[cls, embedded], 1)?;
        match &self.pos_embed {
            Some(pos) => tokens.add(pos),
            None => Ok(tokens),
        }
    }

    fn encode_tokens(
        &self,
        tokens: Tensor<F>,
        dropout: &mut Dropout<'_>,
        capture: bool,
    ) -> Result<(Tensor<F>, Option<AttentionRecord<F>>)> {
        let mut x = tokens;
        let mut probs = Vec::new();
        for block in &self.blocks {
            let (y, p) = block.forward(&x, dropout)?;
            if capture {
                probs.push(p.detach());
            }
            x = y;
        }
        let x = self.norm.forward(&x)?;
        Ok((x, capture.then_some(AttentionRecord { probs })))
    }

    fn head(&self, encoded: &Tensor<F>) -> Result<Tensor<F>> {
        self.classifier.forward(&hybrid_pool(encoded, &self.seqpool)?)
    }

    /// Training forward pass. `rng` drives dropout; nothing is captured.
    pub fn forward(&mut self, volume: &Tensor<F>, mode: Mode, rng: &mut RngState) -> Result<Tensor<F>> {
        let features = match mode {
            Mode::Train => self.conv_encode(volume, true)?,
            Mode::FineTune | Mode::Eval => self.conv_encode_eval(volume)?,
        };
        let tokens = self.tokenize(&features)?;
        let mut dropout = match mode {
            Mode::Eval => Dropout::inactive(),
            Mode::Train | Mode::FineTune => Dropout {
                p: self.config.dropout,
                rng: Some(rng),
            },
        };
        let (encoded, _) = self.encode_tokens(tokens, &mut dropout, false)?;
        self.head(&encoded)
    }

    /// Deterministic inference. With `capture`, also returns attention
    /// probabilities and the encoder feature maps.
    pub fn infer(&self, volume: &Tensor<F>, capture: bool) -> Result<ForwardOutput<F>> {
        let features = self.conv_encode_eval(volume)?;
        let tokens = self.tokenize(&features)?;
        let (encoded, attention) = self.encode_tokens(tokens, &mut Dropout::inactive(), capture)?;
        Ok(ForwardOutput {
            logits: self.head(&encoded)?,
            attention,
            conv_features: capture.then(|| features.detach()),
        })
    }

    /// Every learnable tensor with its checkpoint name, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out: Vec<(String, &Tensor<F>)> = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            out.push((format!("conv.{i}.weight"), &c.weight));
            out.push((format!("conv.{i}.bias"), &c.bias));
            out.push((format!("conv.{i}.bn.gamma"), &c.bn_gamma));
            out.push((format!("conv.{i}.bn.beta"), &c.bn_beta));
        }
        out.push(("patch_embed.weight".into(), &self.patch_embed.weight));
        out.push(("patch_embed.bias".into(), &self.patch_embed.bias));
        out.push(("cls_token".into(), &self.cls_token));
        if let Some(pos) = &self.pos_embed {
            out.push(("pos_embed".into(), pos));
        }
        for (l, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{l}");
            out.push((format!("{p}.ln1.gamma"), &b.ln1.gamma));
            out.push((format!("{p}.ln1.beta"), &b.ln1.beta));
            for (name, lin) in [
                ("attn.query", &b.query),
                ("attn.key", &b.key),
                ("attn.value", &b.value),
                ("attn.out", &b.out),
            ] {
                out.push((format!("{p}.{name}.weight"), &lin.weight));
                out.push((format!("{p}.{name}.bias"), &lin.bias));
            }
            out.push((format!("{p}.ln2.gamma"), &b.ln2.gamma));
            out.push((format!("{p}.ln2.beta"), &b.ln2.beta));
            out.push((format!("{p}.ffn.in.weight"), &b.ffn_in.weight));
            out.push((format!("{p}.ffn.in.bias"), &b.ffn_in.bias));
            out.push((format!("{p}.ffn.out.weight"), &b.ffn_out.weight));
            out.push((format!("{p}.ffn.out.bias"), &b.ffn_out.bias));
        }
        out.push(("norm.gamma".into(), &self.norm.gamma));
        out.push(("norm.beta".into(), &self.norm.beta));
        out.push(("seqpool.weight".into(), &self.seqpool.weight));
        out.push(("seqpool.bias".into(), &self.seqpool.bias));
        out.push(("classifier.weight".into(), &self.classifier.weight));
        out.push(("classifier.bias".into(), &self.classifier.bias));
        out
    }

    /// Mutable counterpart of [`HcctModel::named_params`], same order.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out: Vec<(String, &mut Tensor<F>)> = Vec::new();
        for (i, c) in self.conv.iter_mut().enumerate() {
            out.push((format!("conv.{i}.weight"), &mut c.weight));
            out.push((format!("conv.{i}.bias"), &mut c.bias));
            out.push((format!("conv.{i}.bn.gamma"), &mut c.bn_gamma));
            out.push((format!("conv.{i}.bn.beta"), &mut c.bn_beta));
        }
        out.push(("patch_embed.weight".into(), &mut self.patch_embed.weight));
        out.push(("patch_embed.bias".into(), &mut self.patch_embed.bias));
        out.push(("cls_token".into(), &mut self.cls_token));
        if let Some(pos) = &mut self.pos_embed {
            out.push(("pos_embed".into(), pos));
        }
        for (l, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("blocks.{l}");
            out.push((format!("{p}.ln1.gamma"), &mut b.ln1.gamma));
            out.push((format!("{p}.ln1.beta"), &mut b.ln1.beta));
            for (name, lin) in [
                ("attn.query", &mut b.query),
                ("attn.key", &mut b.key),
                ("attn.value", &mut b.value),
                ("attn.out", &mut b.out),
            ] {
                out.push((format!("{p}.{name}.weight"), &mut lin.weight));
                out.push((format!("{p}.{name}.bias"), &mut lin.bias));
            }
            out.push((format!("{p}.ln2.gamma"), &mut b.ln2.gamma));
            out.push((format!("{p}.ln2.beta"), &mut b.ln2.beta));
            out.push((format!("{p}.ffn.in.weight"), &mut b.ffn_in.weight));
            out.push((format!("{p}.ffn.in.bias"), &mut b.ffn_in.bias));
            out.push((format!("{p}.ffn.out.weight"), &mut b.ffn_out.weight));
            out.push((format!("{p}.ffn.out.bias"), &mut b.ffn_out.bias));
        }
        out.push(("norm.gamma".into(), &mut self.norm.gamma));
        out.push(("norm.beta".into(), &mut self.norm.beta));
        out.push(("seqpool.weight".into(), &mut self.seqpool.weight));
        out.push(("seqpool.bias".into(), &mut self.seqpool.bias));
        out.push(("classifier.weight".into(), &mut self.classifier.weight));
        out.push(("classifier.bias".into(), &mut self.classifier.bias));
        out
    }

    /// Batch-norm running statistics (not learnable, but checkpointed).
    pub fn named_buffers(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            out.push((format!("conv.{i}.bn.running_mean"), &c.stats.mean));
            out.push((format!("conv.{i}.bn.running_var"), &c.stats.var));
        }
        out
    }

    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = Vec::new();
        for (i, c) in self.conv.iter_mut().enumerate() {
            out.push((format!("conv.{i}.bn.running_mean"), &mut c.stats.mean));
            out.push((format!("conv.{i}.bn.running_var"), &mut c.stats.var));
        }
        out
    }

    /// Sets the gradient flag of every parameter selected by `select`.
    pub fn set_trainable(&mut self, select: impl Fn(&str) -> bool) {
        for (name, p) in self.named_params_mut() {
            let flag = select(&name);
            if p.requires_grad() != flag {
                *p = p.detach().with_grad(flag);
            }
        }
    }

    pub fn zero_grad(&self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }

    /// Same model in another precision.
    pub fn cast<G: Real>(&self) -> HcctModel<G> {
        let lin = |l: &Linear<F>| Linear {
            weight: l.weight.cast(),
            bias: l.bias.cast(),
        };
        let ln = |l: &LayerNorm<F>| LayerNorm {
            gamma: l.gamma.cast(),
            beta: l.beta.cast(),
        };
        HcctModel {
            config: self.config.clone(),
            conv: self
                .conv
                .iter()
                .map(|c| ConvBlock {
                    weight: c.weight.cast(),
                    bias: c.bias.cast(),
                    bn_gamma: c.bn_gamma.cast(),
                    bn_beta: c.bn_beta.cast(),
                    stats: crate::tensor::RunningStats {
                        mean: c.stats.mean.cast(),
                        var: c.stats.var.cast(),
                    },
                })
                .collect(),
            patch_embed: lin(&self.patch_embed),
            cls_token: self.cls_token.cast(),
            pos_embed: self.pos_embed.as_ref().map(Tensor::cast),
            blocks: self
                .blocks
                .iter()
                .map(|b| TransformerBlock {
                    ln1: ln(&b.ln1),
                    query: lin(&b.query),
                    key: lin(&b.key),
                    value: lin(&b.value),
                    out: lin(&b.out),
                    ln2: ln(&b.ln2),
                    ffn_in: lin(&b.ffn_in),
                    ffn_out: lin(&b.ffn_out),
                    num_heads: b.num_heads,
                })
                .collect(),
            norm: ln(&self.norm),
            seqpool: lin(&self.seqpool),
            classifier: lin(&self.classifier),
        }
    }
}

/// Parameters updated during fine-tuning: patch embedding (with CLS and
/// positional embedding), the sequence-pool scorer, and the classifier.
pub fn is_finetune_param(name: &str) -> bool {
    ["patch_embed.", "cls_token", "pos_embed", "seqpool.", "classifier."]
        .iter()
        .any(|prefix| name.starts_with(prefix))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume(b: usize, e: usize, seed: u64) -> Tensor<f64> {
        let mut rng = RngState::new(seed);
        let n = b * e * e * e;
        Tensor::from_vec([b, 1, e, e, e], (0..n).map(|_| rng.uniform()).collect()).unwrap()
    }

    fn small() -> ModelConfig {
        ModelConfig {
            input_extent: 8,
            conv_channels: vec![2, 6],
            conv_kernel: 3,
            pool_window: 2,
            embed_dim: 8,
            num_layers: 2,
            num_heads: 2,
            ffn_ratio: 2,
            dropout: 0.2,
            num_classes: 3,
            positional_embedding: true,
        }
    }

    #[test]
    fn desk_feature_and_token_shapes() {
        let mut model = HcctModel::<f32>::new(ModelConfig::desk(), 1).unwrap();
        let x = volume(2, 24, 1).cast::<f32>();
        let feats = model.conv_encode(&x, true).unwrap();
        assert_eq!(feats.dims(), &[2, 64, 3, 3, 3]);
        let tokens = model.tokenize(&feats).unwrap();
        assert_eq!(tokens.dims(), &[2, 65, 32]);
        let out = model.infer(&x, true).unwrap();
        assert_eq!(out.logits.dims(), &[2, 3]);
        assert_eq!(out.attention.unwrap().probs.len(), 2);
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let model = HcctModel::<f64>::new(small(), 2).unwrap();
        let feats = model.conv_encode_eval(&Tensor::zeros([1, 1, 8, 8, 8])).unwrap();
        assert!(feats.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_features_leave_only_cls() {
        let mut cfg = small();
        cfg.positional_embedding = false;
        let model = HcctModel::<f64>::new(cfg, 3).unwrap();
        let tokens = model.tokenize(&Tensor::zeros([1, 6, 2, 2, 2])).unwrap();
        assert_eq!(&tokens.data()[..8], model.cls_token.data());
        assert!(tokens.data()[8..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_is_deterministic() {
        let model = HcctModel::<f64>::new(small(), 4).unwrap();
        let x = volume(2, 8, 5);
        let a = model.infer(&x, false).unwrap().logits;
        let b = model.infer(&x, false).unwrap().logits;
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn wrong_extent_rejected() {
        let model = HcctModel::<f64>::new(small(), 4).unwrap();
        assert!(model.infer(&volume(1, 16, 1), false).is_err());
    }

    #[test]
    fn param_names_unique_and_ordered_alike() {
        let mut model = HcctModel::<f64>::new(small(), 4).unwrap();
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        let mut_names: Vec<String> = model.named_params_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, mut_names);
    }

    #[test]
    fn finetune_selection() {
        assert!(is_finetune_param("patch_embed.weight"));
        assert!(is_finetune_param("classifier.bias"));
        assert!(is_finetune_param("pos_embed"));
        assert!(!is_finetune_param("blocks.0.attn.query.weight"));
        assert!(!is_finetune_param("conv.1.bn.gamma"));
        assert!(!is_finetune_param("norm.gamma"));
    }
}
