//! News records, impression logs, vocabulary, on-disk formats and the
//! synthetic click-log generator.

mod behaviors;
pub mod mmrf;
mod news;
mod padding;
pub mod synthetic;
mod vocab;

pub use behaviors::{load_behaviors, parse_behavior_line, validate_impressions, write_behaviors, ImpressionSample};
pub use mmrf::{read_roi_features, write_roi_features, FeatureMatrix};
pub use news::{load_news, tokenize, validate_box, write_news, NewsRecord, NewsTable};
pub use padding::{pad_history, pad_news, recent_history, PaddedNews};
pub use synthetic::{generate_synthetic, write_dataset, SyntheticConfig, SyntheticData};
pub use vocab::{build_vocab, Vocabulary, PAD, UNK};

use std::path::Path;

use crate::error::Result;

/// A dataset directory loaded into memory.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub news: NewsTable,
    pub vocab: Vocabulary,
    pub train: Vec<ImpressionSample>,
    pub dev: Vec<ImpressionSample>,
    pub test: Vec<ImpressionSample>,
}

impl Corpus {
    /// Loads the standard file set written by [`write_dataset`].
    pub fn load(dir: impl AsRef<Path>, m_max: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let news = load_news(dir.join(synthetic::NEWS_FILE), dir.join(synthetic::ROI_FILE), m_max)?;
        let vocab = Vocabulary::read(dir.join(synthetic::VOCAB_FILE))?;
        let split = |name: &str| -> Result<Vec<ImpressionSample>> {
            let imps = load_behaviors(dir.join(synthetic::behaviors_file(name)))?;
            validate_impressions(&imps, &news)?;
            Ok(imps)
        };
        Ok(Corpus {
            train: split("train")?,
            dev: split("dev")?,
            test: split("test")?,
            news,
            vocab,
        })
    }

    pub fn from_synthetic(data: SyntheticData, min_count: usize) -> Self {
        let vocab = build_vocab(&data.news, min_count);
        Corpus {
            news: data.news,
            vocab,
            train: data.train,
            dev: data.dev,
            test: data.test,
        }
    }

    pub fn split(&self, name: &str) -> Option<&[ImpressionSample]> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}
