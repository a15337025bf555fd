//! Multimodal news encoder.
//!
//! Title tokens pass through word + position embeddings and a stack of
//! self-attention layers. ROI features are projected into the same width and
//! then both streams go through co-attention layers, where text queries
//! attend over image keys and image queries over text keys. Each stream is
//! finally pooled with its own additive attention:
//! `a = softmax((W·Hᵀ)ᵀ·q)`, `r = Σ aᵢ·hᵢ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::dataset::PaddedNews;
use crate::error::{Error, Result};
use crate::nn::{uniform_param, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d: usize,
    pub d_img: usize,
    /// Width of the pooling attention projection.
    pub d_a: usize,
    pub heads: usize,
    pub n_text_layers: usize,
    pub n_co_layers: usize,
    pub m_max: usize,
    pub k_max: usize,
    pub ffn_mult: usize,
    /// Layers with index below this (and the input embeddings, when it is
    /// positive) are frozen. Text layers come first, then co-attention layers.
    pub freeze_below: usize,
    /// Multiplier on the init bound of projections that write into the
    /// residual stream (attention output, feed-forward down).
    pub residual_init: f64,
    /// Multiplier on the init bound of the input maps (word and position
    /// embeddings, ROI and box projections, placeholder).
    pub embed_init: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 2,
            d: 64,
            d_img: 64,
            d_a: 32,
            heads: 4,
            n_text_layers: 2,
            n_co_layers: 1,
            m_max: 30,
            k_max: 8,
            ffn_mult: 4,
            freeze_below: 0,
            residual_init: 0.1,
            embed_init: 0.25,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.d,
            self.d_img,
            self.d_a,
            self.heads,
            self.m_max,
            self.k_max,
            self.ffn_mult,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        for (name, v) in [("residual_init", self.residual_init), ("embed_init", self.embed_init)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d = {} is not divisible by heads = {}",
                self.d, self.heads
            )));
        }
        if self.freeze_below > self.n_text_layers + self.n_co_layers {
            return Err(Error::Config(format!(
                "freeze_below = {} exceeds the {} encoder layers",
                self.freeze_below,
                self.n_text_layers + self.n_co_layers
            )));
        }
        Ok(())
    }
}

/// Pooled text and image vectors of one news item, each `[1 × d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NewsEncoding<T> {
    pub r_t: Tensor<T>,
    pub r_p: Tensor<T>,
}

impl<T: Scalar> NewsEncoding<T> {
    pub fn new(r_t: Vec<T>, r_p: Vec<T>) -> Result<Self> {
        if r_t.len() != r_p.len() {
            return Err(Error::shape("news encoding", &[r_t.len()], &[r_p.len()]));
        }
        Ok(NewsEncoding {
            r_t: Tensor::row(r_t)?,
            r_p: Tensor::row(r_p)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.r_t.len()
    }
}

/// Tape handles for one encoded news item.
#[derive(Clone, Copy, Debug)]
pub struct EncodedNews {
    pub r_t: Var,
    pub r_p: Var,
    pub text_weights: Var,
    pub image_weights: Var,
}

#[derive(Clone, Debug)]
pub struct Pooling {
    /// `[d_a × d]`
    pub w: ParamId,
    /// `[d_a × 1]`
    pub q: ParamId,
}

impl Pooling {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        d_a: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Pooling {
            w: uniform_param(store, format!("{name}.w"), &[d_a, d], d, rng)?,
            q: uniform_param(store, format!("{name}.q"), &[d_a, 1], d_a, rng)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        h: Var,
        mask: &[bool],
    ) -> Result<(Var, Var)> {
        let w = tape.param(store, self.w);
        let q = tape.param(store, self.q);
        attention_pool(tape, h, mask, w, q)
    }
}

/// `a = softmax((W·Hᵀ)ᵀ·q)` over the valid rows of `h`, `r = a·H`.
/// Returns `(r: [1 × d], a: [1 × n])`.
pub fn attention_pool<T: Scalar>(tape: &mut Tape<T>, h: Var, mask: &[bool], w: Var, q: Var) -> Result<(Var, Var)> {
    if !mask.iter().any(|m| *m) {
        return Err(Error::EmptyAttention {
            context: "attention pooling",
        });
    }
    let n = tape.value(h).rows();
    let projected = tape.matmul_t(h, w)?;
    let scores = tape.matmul(projected, q)?;
    let scores = tape.reshape(scores, &[1, n])?;
    let a = tape.softmax_masked(scores, mask)?;
    let r = tape.matmul(a, h)?;
    Ok((r, a))
}

#[derive(Clone, Debug)]
pub struct TextLayer {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl TextLayer {
    fn params(&self) -> Vec<ParamId> {
        let mut p = self.norm_attn.params().to_vec();
        p.extend(self.attn.params());
        p.extend(self.norm_ffn.params());
        p.extend(self.ffn.params());
        p
    }
}

/// One co-attention stream: queries from its own modality, keys and values
/// from the other one.
#[derive(Clone, Debug)]
pub struct CoStream {
    pub norm_attn: LayerNorm,
    pub cross: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl CoStream {
    fn params(&self) -> Vec<ParamId> {
        let mut p = self.norm_attn.params().to_vec();
        p.extend(self.cross.params());
        p.extend(self.norm_ffn.params());
        p.extend(self.ffn.params());
        p
    }
}

#[derive(Clone, Debug)]
pub struct CoLayer {
    pub text: CoStream,
    pub image: CoStream,
}

pub struct CoOutput {
    pub text: Var,
    pub image: Var,
    pub text_to_image: Vec<Var>,
    pub image_to_text: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct NewsEncoder {
    pub config: EncoderConfig,
    pub word_emb: ParamId,
    pub pos_emb: ParamId,
    pub roi_proj: Linear,
    pub box_proj: Linear,
    pub placeholder: ParamId,
    pub text_layers: Vec<TextLayer>,
    pub co_layers: Vec<CoLayer>,
    pub text_pool: Pooling,
    pub image_pool: Pooling,
}

impl NewsEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        config: EncoderConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let hidden = d * config.ffn_mult;
        let emb_bound = config.embed_init / (d as f64).sqrt();
        let word_emb = store.insert("enc.word_emb", Tensor::uniform(&[config.vocab_size, d], emb_bound, rng))?;
        let pos_emb = store.insert("enc.pos_emb", Tensor::uniform(&[config.m_max, d], emb_bound, rng))?;
        let roi_proj = Linear::scaled(store, "enc.roi.proj", config.d_img, d, config.embed_init, rng)?;
        let box_proj = Linear::scaled(store, "enc.roi.box", 5, d, config.embed_init, rng)?;
        let placeholder = store.insert("enc.roi.placeholder", Tensor::uniform(&[1, d], emb_bound, rng))?;
        let mut text_layers = Vec::with_capacity(config.n_text_layers);
        for i in 0..config.n_text_layers {
            let name = format!("enc.text.{i}");
            text_layers.push(TextLayer {
                norm_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d)?,
                attn: MultiHeadAttention::new(
                    store,
                    &format!("{name}.attn"),
                    d,
                    config.heads,
                    config.residual_init,
                    rng,
                )?,
                norm_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), d)?,
                ffn: FeedForward::new(store, &format!("{name}.ffn"), d, hidden, config.residual_init, rng)?,
            });
        }
        let mut co_layers = Vec::with_capacity(config.n_co_layers);
        for j in 0..config.n_co_layers {
            let mut stream = |side: &str| -> Result<CoStream> {
                let name = format!("enc.co.{j}.{side}");
                Ok(CoStream {
                    norm_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d)?,
                    cross: MultiHeadAttention::new(
                        store,
                        &format!("{name}.cross"),
                        d,
                        config.heads,
                        config.residual_init,
                        rng,
                    )?,
                    norm_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), d)?,
                    ffn: FeedForward::new(store, &format!("{name}.ffn"), d, hidden, config.residual_init, rng)?,
                })
            };
            let text = stream("text")?;
            let image = stream("image")?;
            co_layers.push(CoLayer { text, image });
        }
        let text_pool = Pooling::new(store, "enc.pool.text", d, config.d_a, rng)?;
        let image_pool = Pooling::new(store, "enc.pool.image", d, config.d_a, rng)?;
        Ok(NewsEncoder {
            config,
            word_emb,
            pos_emb,
            roi_proj,
            box_proj,
            placeholder,
            text_layers,
            co_layers,
            text_pool,
            image_pool,
        })
    }

    /// Parameters below the first transformer layer.
    pub fn input_params(&self) -> Vec<ParamId> {
        let mut p = vec![self.word_emb, self.pos_emb, self.placeholder];
        p.extend(self.roi_proj.params());
        p.extend(self.box_proj.params());
        p
    }

    /// Parameters of encoder layer `index`, text layers first.
    pub fn layer_params(&self, index: usize) -> Vec<ParamId> {
        let n_text = self.text_layers.len();
        if index < n_text {
            self.text_layers[index].params()
        } else {
            let co = &self.co_layers[index - n_text];
            [co.text.params(), co.image.params()].concat()
        }
    }

    pub fn num_layers(&self) -> usize {
        self.text_layers.len() + self.co_layers.len()
    }

    /// Freezes the inputs and every layer with index `< freeze_below`.
    pub fn apply_freeze<T: Scalar>(&self, store: &mut ParamStore<T>, freeze_below: usize) {
        let mut frozen = Vec::new();
        if freeze_below > 0 {
            frozen.extend(self.input_params());
        }
        for i in 0..freeze_below.min(self.num_layers()) {
            frozen.extend(self.layer_params(i));
        }
        for id in frozen {
            store.set_frozen(id, true);
        }
    }

    /// Word plus position embeddings; PAD rows are zeroed.
    pub fn embed_title<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ids: &[usize],
        mask: &[bool],
    ) -> Result<Var> {
        if ids.len() != mask.len() || ids.len() > self.config.m_max {
            return Err(Error::shape(
                "embed_title",
                &[ids.len()],
                &[mask.len(), self.config.m_max],
            ));
        }
        let table = tape.param(store, self.word_emb);
        let words = tape.embedding(table, ids)?;
        let pos_table = tape.param(store, self.pos_emb);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.embedding(pos_table, &positions)?;
        let h = tape.add(words, pos)?;
        tape.zero_rows(h, mask)
    }

    /// Projects ROI features and their `[x1, y1, x2, y2, area]` box encoding
    /// into the hidden width. Imageless news yield the single placeholder row.
    pub fn project_rois<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        features: &[f32],
        boxes: &[[f32; 4]],
        placeholder: bool,
    ) -> Result<Var> {
        if placeholder {
            return Ok(tape.param(store, self.placeholder));
        }
        let k = boxes.len();
        let d_img = self.config.d_img;
        if features.len() != k * d_img {
            return Err(Error::shape("project_rois", &[features.len()], &[k, d_img]));
        }
        let mut spatial = Vec::with_capacity(k * 5);
        for b in boxes {
            let [x1, y1, x2, y2] = *b;
            if b.iter().any(|v| !(0.0..=1.0).contains(v)) || x1 > x2 || y1 > y2 {
                return Err(Error::InvalidBox {
                    bbox: *b,
                    reason: "expected 0 <= x1 <= x2 <= 1 and 0 <= y1 <= y2 <= 1",
                });
            }
            spatial.extend([x1, y1, x2, y2, (x2 - x1) * (y2 - y1)].map(T::from_f32_bits));
        }
        let feats = tape.constant(Tensor::matrix(
            k,
            d_img,
            features.iter().map(|v| T::from_f32_bits(*v)).collect(),
        )?);
        let spatial = tape.constant(Tensor::matrix(k, 5, spatial)?);
        let a = self.roi_proj.forward(tape, store, feats)?;
        let b = self.box_proj.forward(tape, store, spatial)?;
        tape.add(a, b)
    }

    /// Pre-norm self-attention block followed by a pre-norm feed-forward block.
    pub fn text_layer<T: Scalar>(
        &self,
        index: usize,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        h: Var,
        mask: &[bool],
    ) -> Result<Var> {
        let layer = &self.text_layers[index];
        let x = layer.norm_attn.forward(tape, store, h)?;
        let attn = layer.attn.forward(tape, store, x, x, mask)?;
        let h = tape.add(h, attn.out)?;
        let x = layer.norm_ffn.forward(tape, store, h)?;
        let f = layer.ffn.forward(tape, store, x)?;
        tape.add(h, f)
    }

    /// Both cross-attention directions read the layer inputs, then each stream
    /// gets its own feed-forward block.
    pub fn co_layer<T: Scalar>(
        &self,
        index: usize,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        text: Var,
        image: Var,
        text_mask: &[bool],
        image_mask: &[bool],
    ) -> Result<CoOutput> {
        if !text_mask.iter().any(|m| *m) && !image_mask.iter().any(|m| *m) {
            return Err(Error::EmptyAttention {
                context: "both co-attention streams",
            });
        }
        let layer = &self.co_layers[index];
        let xt = layer.text.norm_attn.forward(tape, store, text)?;
        let xi = layer.image.norm_attn.forward(tape, store, image)?;
        let t2i = layer.text.cross.forward(tape, store, xt, xi, image_mask)?;
        let i2t = layer.image.cross.forward(tape, store, xi, xt, text_mask)?;
        let text = tape.add(text, t2i.out)?;
        let image = tape.add(image, i2t.out)?;
        let xt = layer.text.norm_ffn.forward(tape, store, text)?;
        let ft = layer.text.ffn.forward(tape, store, xt)?;
        let text = tape.add(text, ft)?;
        let xi = layer.image.norm_ffn.forward(tape, store, image)?;
        let fi = layer.image.ffn.forward(tape, store, xi)?;
        let image = tape.add(image, fi)?;
        Ok(CoOutput {
            text,
            image,
            text_to_image: t2i.weights,
            image_to_text: i2t.weights,
        })
    }

    /// Full pipeline for one padded news item. Only the leading span of
    /// positions up to the last valid one is materialized; masked positions
    /// never reach an output either way.
    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        news: &PaddedNews,
        coattn: bool,
    ) -> Result<EncodedNews> {
        let n_text = active_len(&news.title_mask);
        if n_text == 0 {
            return Err(Error::EmptyAttention { context: "title" });
        }
        let text_mask = &news.title_mask[..n_text];
        let mut text = self.embed_title(tape, store, &news.title_ids[..n_text], text_mask)?;

        let (mut image, image_mask) = if news.placeholder {
            (self.project_rois(tape, store, &[], &[], true)?, vec![true])
        } else {
            let k = active_len(&news.roi_mask);
            if k == 0 {
                return Err(Error::EmptyAttention { context: "image ROIs" });
            }
            let feats = &news.roi_features[..k * news.roi_dim];
            (
                self.project_rois(tape, store, feats, &news.roi_boxes[..k], false)?,
                news.roi_mask[..k].to_vec(),
            )
        };

        for i in 0..self.text_layers.len() {
            text = self.text_layer(i, tape, store, text, text_mask)?;
        }
        if coattn {
            for j in 0..self.co_layers.len() {
                let out = self.co_layer(j, tape, store, text, image, text_mask, &image_mask)?;
                text = out.text;
                image = out.image;
            }
        }
        let (r_t, text_weights) = self.text_pool.forward(tape, store, text, text_mask)?;
        let (r_p, image_weights) = self.image_pool.forward(tape, store, image, &image_mask)?;
        Ok(EncodedNews {
            r_t,
            r_p,
            text_weights,
            image_weights,
        })
    }
}

fn active_len(mask: &[bool]) -> usize {
    mask.iter().rposition(|m| *m).map_or(0, |i| i + 1)
}
