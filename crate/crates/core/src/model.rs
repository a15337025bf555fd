//! The full recommender: news encoder, user scorer and ablation variants.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::dataset::{pad_news, NewsTable, PaddedNews, Vocabulary};
use crate::encoder::{EncoderConfig, NewsEncoder, NewsEncoding};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::user::{ScorerOptions, UserMode, UserScorer, UserState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    TextOnly,
    ImageOnly,
    NoCoattn,
    VanillaAttn,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::TextOnly,
        Variant::ImageOnly,
        Variant::NoCoattn,
        Variant::VanillaAttn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::TextOnly => "text-only",
            Variant::ImageOnly => "image-only",
            Variant::NoCoattn => "no-coattn",
            Variant::VanillaAttn => "vanilla-attn",
        }
    }

    pub fn user_mode(self) -> UserMode {
        match self {
            Variant::Full | Variant::NoCoattn => UserMode::Crossmodal,
            Variant::TextOnly => UserMode::TextOnly,
            Variant::ImageOnly => UserMode::ImageOnly,
            Variant::VanillaAttn => UserMode::Vanilla,
        }
    }

    /// Whether the co-attention layers run.
    pub fn uses_coattn(self) -> bool {
        matches!(self, Variant::Full | Variant::VanillaAttn)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub variant: Variant,
    pub scorer: ScorerOptions,
    /// Most recent clicks kept per user.
    pub p_max: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            variant: Variant::Full,
            scorer: ScorerOptions::default(),
            p_max: 50,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.p_max == 0 {
            return Err(Error::Config("p_max must be positive".into()));
        }
        Ok(())
    }
}

/// Pads every record of `table` for the given encoder limits.
pub fn prepare_news(table: &NewsTable, vocab: &Vocabulary, config: &EncoderConfig) -> Vec<PaddedNews> {
    table
        .records()
        .iter()
        .map(|r| pad_news(r, vocab, table.roi_dim(), config.m_max, config.k_max))
        .collect()
}

/// Tape handles of encoded news, keyed by position in the news table.
pub type EncodedBatch = HashMap<usize, (Var, Var)>;

#[derive(Clone, Debug)]
pub struct MmRec<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub encoder: NewsEncoder,
    pub scorer: UserScorer,
}

impl<T: Scalar> MmRec<T> {
    /// Randomly initialized model. Frozen layers follow `encoder.freeze_below`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = NewsEncoder::new(config.encoder.clone(), &mut store, &mut rng)?;
        let scorer = UserScorer::new(
            config.variant.user_mode(),
            config.scorer,
            &mut store,
            config.encoder.d,
            config.encoder.d_a,
            &mut rng,
        )?;
        encoder.apply_freeze(&mut store, config.encoder.freeze_below);
        Ok(MmRec {
            config,
            store,
            encoder,
            scorer,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn dim(&self) -> usize {
        self.config.encoder.d
    }

    /// Records the encoding of one news item on `tape`.
    pub fn encode_on_tape(&self, tape: &mut Tape<T>, news: &PaddedNews) -> Result<(Var, Var)> {
        let e = self
            .encoder
            .encode(tape, &self.store, news, self.variant().uses_coattn())?;
        Ok((e.r_t, e.r_p))
    }

    /// Encodes each distinct news position once on `tape`.
    pub fn encode_batch(
        &self,
        tape: &mut Tape<T>,
        news: &[PaddedNews],
        positions: impl IntoIterator<Item = usize>,
    ) -> Result<EncodedBatch> {
        let mut out = EncodedBatch::new();
        for pos in positions {
            if out.contains_key(&pos) {
                continue;
            }
            let item = news
                .get(pos)
                .ok_or_else(|| Error::Data(format!("news position {pos} out of range")))?;
            out.insert(pos, self.encode_on_tape(tape, item)?);
        }
        Ok(out)
    }

    /// Scores `candidates` for a user with clicked news `history` (positions
    /// already in `encoded`). Returns `[C × 1]`.
    pub fn score_on_tape(
        &self,
        tape: &mut Tape<T>,
        encoded: &EncodedBatch,
        history: &[usize],
        candidates: &[usize],
    ) -> Result<Var> {
        let lookup = |pos: &usize| {
            encoded
                .get(pos)
                .copied()
                .ok_or_else(|| Error::Data(format!("news position {pos} not encoded")))
        };
        let history = recent(history, self.config.p_max);
        let stack = |tape: &mut Tape<T>, vars: Vec<Var>| -> Result<Var> {
            if vars.len() == 1 {
                Ok(vars[0])
            } else {
                tape.concat_rows(&vars)
            }
        };
        let cands = candidates.iter().map(lookup).collect::<Result<Vec<_>>>()?;
        if cands.is_empty() {
            return Err(Error::Data("no candidates to score".into()));
        }
        let ct = stack(tape, cands.iter().map(|c| c.0).collect())?;
        let cp = stack(tape, cands.iter().map(|c| c.1).collect())?;
        if history.is_empty() {
            return self.scorer.score(tape, &self.store, None, ct, cp);
        }
        let hist = history.iter().map(lookup).collect::<Result<Vec<_>>>()?;
        let ht = stack(tape, hist.iter().map(|h| h.0).collect())?;
        let hp = stack(tape, hist.iter().map(|h| h.1).collect())?;
        let mask = vec![true; hist.len()];
        self.scorer.score(tape, &self.store, Some((ht, hp, &mask)), ct, cp)
    }

    /// Inference encoding of one news item.
    pub fn encode_news(&self, news: &PaddedNews) -> Result<NewsEncoding<T>> {
        let mut tape = Tape::new();
        let (t, p) = self.encode_on_tape(&mut tape, news)?;
        Ok(NewsEncoding {
            r_t: tape.value(t).clone(),
            r_p: tape.value(p).clone(),
        })
    }

    /// Encodes every item, sharing one tape per chunk so parameters are
    /// loaded once per chunk rather than once per item.
    pub fn encode_all(&self, news: &[PaddedNews]) -> Result<Vec<NewsEncoding<T>>> {
        let mut out = Vec::with_capacity(news.len());
        for chunk in news.chunks(64) {
            let mut tape = Tape::new();
            for item in chunk {
                let (t, p) = self.encode_on_tape(&mut tape, item)?;
                out.push(NewsEncoding {
                    r_t: tape.value(t).clone(),
                    r_p: tape.value(p).clone(),
                });
            }
        }
        Ok(out)
    }

    /// Scores candidates from cached news encodings.
    pub fn score_cached(
        &self,
        encodings: &[NewsEncoding<T>],
        history: &[usize],
        candidates: &[usize],
    ) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let mut encoded = EncodedBatch::new();
        for pos in recent(history, self.config.p_max).iter().chain(candidates) {
            if encoded.contains_key(pos) {
                continue;
            }
            let e = encodings
                .get(*pos)
                .ok_or_else(|| Error::Data(format!("news position {pos} out of range")))?;
            let t = tape.constant(e.r_t.clone());
            let p = tape.constant(e.r_p.clone());
            encoded.insert(*pos, (t, p));
        }
        let scores = self.score_on_tape(&mut tape, &encoded, history, candidates)?;
        Ok(tape.value(scores).data().to_vec())
    }

    /// Stacked history encodings for the plain scoring functions.
    pub fn user_state(&self, encodings: &[NewsEncoding<T>], history: &[usize]) -> Result<UserState<T>> {
        let hist = recent(history, self.config.p_max)
            .iter()
            .map(|p| {
                encodings
                    .get(*p)
                    .ok_or_else(|| Error::Data(format!("news position {p} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        if hist.is_empty() {
            let d = self.dim();
            return UserState::new(Tensor::zeros(&[0, d]), Tensor::zeros(&[0, d]), Vec::new());
        }
        UserState::from_history(&hist, self.dim())
    }
}

fn recent(history: &[usize], p_max: usize) -> &[usize] {
    &history[history.len().saturating_sub(p_max)..]
}
