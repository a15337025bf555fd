//! Synthetic click logs with planted text, image and image-only topic signal.
//!
//! Every topic owns a random unit centroid in ROI-feature space and a small
//! set of topic words. A news item draws one topic; its ROI rows scatter
//! around the centroid and its title mixes topic words with common words.
//! With probability `image_only_fraction` an image-bearing news item gets a
//! title made only of common words, so its topic is visible solely in the
//! image. Users prefer two topics; their history is on-topic and candidates
//! are clicked with probability `pos_rate_on_topic` on a preferred topic and
//! `pos_rate_off_topic` otherwise.

use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::behaviors::{write_behaviors, ImpressionSample};
use super::news::{write_news, NewsRecord, NewsTable};
use super::vocab::{build_vocab, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_topics: usize,
    pub topic_words_per_topic: usize,
    pub common_words: usize,
    pub num_news: usize,
    pub num_users: usize,
    pub num_impressions: usize,
    pub d_img: usize,
    pub max_rois: usize,
    pub roi_noise_sigma: f64,
    /// ρ: chance an image-bearing news item hides its topic from the title.
    pub image_only_fraction: f64,
    pub no_image_fraction: f64,
    pub pos_rate_on_topic: f64,
    pub pos_rate_off_topic: f64,
    pub history_min: usize,
    pub history_max: usize,
    pub candidates_min: usize,
    pub candidates_max: usize,
    pub title_min: usize,
    pub title_max: usize,
    pub topic_words_in_title_max: usize,
    pub train_fraction: f64,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_topics: 10,
            topic_words_per_topic: 8,
            common_words: 60,
            num_news: 600,
            num_users: 150,
            num_impressions: 3000,
            d_img: 64,
            max_rois: 8,
            roi_noise_sigma: 0.1,
            image_only_fraction: 0.5,
            no_image_fraction: 0.27,
            pos_rate_on_topic: 0.15,
            pos_rate_off_topic: 0.01,
            history_min: 5,
            history_max: 15,
            candidates_min: 10,
            candidates_max: 20,
            title_min: 4,
            title_max: 10,
            topic_words_in_title_max: 2,
            train_fraction: 0.8,
            dev_fraction: 0.1,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        let counts = [
            self.num_topics,
            self.topic_words_per_topic,
            self.common_words,
            self.num_news,
            self.num_users,
            self.num_impressions,
            self.d_img,
            self.max_rois,
            self.history_min,
            self.candidates_min,
            self.title_min,
            self.topic_words_in_title_max,
        ];
        if counts.contains(&0) {
            return err("all synthetic counts must be positive");
        }
        if self.num_topics < 2 {
            return err("num_topics must be at least 2 (users prefer two topics)");
        }
        if self.history_min > self.history_max
            || self.candidates_min > self.candidates_max
            || self.title_min > self.title_max
        {
            return err("min/max ranges must satisfy min <= max");
        }
        if self.candidates_max > self.num_news {
            return err("candidates_max exceeds num_news");
        }
        for (name, f) in [
            ("image_only_fraction", self.image_only_fraction),
            ("no_image_fraction", self.no_image_fraction),
            ("pos_rate_on_topic", self.pos_rate_on_topic),
            ("pos_rate_off_topic", self.pos_rate_off_topic),
            ("train_fraction", self.train_fraction),
            ("dev_fraction", self.dev_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{name} = {f} outside [0, 1]")));
            }
        }
        if self.pos_rate_on_topic <= self.pos_rate_off_topic {
            return err("pos_rate_on_topic must exceed pos_rate_off_topic");
        }
        if self.train_fraction + self.dev_fraction > 1.0 {
            return err("train_fraction + dev_fraction exceeds 1");
        }
        if !(self.roi_noise_sigma >= 0.0) {
            return err("roi_noise_sigma must be non-negative");
        }
        Ok(())
    }

    /// Expected click-through rate: a uniformly drawn candidate matches one
    /// of the user's two topics with probability `2 / num_topics`.
    pub fn expected_ctr(&self) -> f64 {
        let m = 2.0 / self.num_topics as f64;
        m * self.pos_rate_on_topic + (1.0 - m) * self.pos_rate_off_topic
    }

    pub fn topic_word(topic: usize, j: usize) -> String {
        format!("t{topic}w{j}")
    }

    pub fn common_word(j: usize) -> String {
        format!("c{j}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticUser {
    pub user_id: String,
    pub topics: [usize; 2],
    pub history: Vec<String>,
}

/// Generated corpus plus the ground truth used to build it.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub news: NewsTable,
    pub news_topics: Vec<usize>,
    pub users: Vec<SyntheticUser>,
    pub train: Vec<ImpressionSample>,
    pub dev: Vec<ImpressionSample>,
    pub test: Vec<ImpressionSample>,
}

impl SyntheticData {
    pub fn all_impressions(&self) -> impl Iterator<Item = &ImpressionSample> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }
}

fn random_box<R: Rng>(rng: &mut R) -> [f32; 4] {
    let mut axis = || {
        let lo: f64 = rng.random_range(0.0..0.9);
        let hi = lo + 0.05 + rng.random::<f64>() * (1.0 - lo - 0.05);
        (lo as f32, (hi.min(1.0)) as f32)
    };
    let (x1, x2) = axis();
    let (y1, y2) = axis();
    [x1, y1, x2, y2]
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let centroids: Vec<Vec<f64>> = (0..cfg.num_topics)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.d_img).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let mut records = Vec::with_capacity(cfg.num_news);
    let mut news_topics = Vec::with_capacity(cfg.num_news);
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); cfg.num_topics];
    for i in 0..cfg.num_news {
        let topic = rng.random_range(0..cfg.num_topics);
        let has_image = rng.random::<f64>() >= cfg.no_image_fraction;
        let (roi_features, roi_boxes) = if has_image {
            let k = rng.random_range(1..=cfg.max_rois);
            let mut feats = Vec::with_capacity(k * cfg.d_img);
            let mut boxes = Vec::with_capacity(k);
            for _ in 0..k {
                for c in &centroids[topic] {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    feats.push((c + cfg.roi_noise_sigma * noise) as f32);
                }
                boxes.push(random_box(&mut rng));
            }
            (feats, boxes)
        } else {
            (Vec::new(), Vec::new())
        };

        let len = rng.random_range(cfg.title_min..=cfg.title_max);
        let image_only = has_image && rng.random::<f64>() < cfg.image_only_fraction;
        let n_topic = if image_only {
            0
        } else {
            rng.random_range(1..=cfg.topic_words_in_title_max.min(len))
        };
        let mut tokens: Vec<String> = (0..n_topic)
            .map(|_| SyntheticConfig::topic_word(topic, rng.random_range(0..cfg.topic_words_per_topic)))
            .collect();
        tokens.extend((n_topic..len).map(|_| SyntheticConfig::common_word(rng.random_range(0..cfg.common_words))));
        tokens.shuffle(&mut rng);

        by_topic[topic].push(i);
        news_topics.push(topic);
        records.push(NewsRecord {
            news_id: format!("N{i}"),
            title: tokens.join(" "),
            tokens,
            roi_features,
            roi_boxes,
            has_image,
        });
    }

    let mut users = Vec::with_capacity(cfg.num_users);
    for u in 0..cfg.num_users {
        let picked = index::sample(&mut rng, cfg.num_topics, 2).into_vec();
        let topics = [picked[0], picked[1]];
        let pool: Vec<usize> = topics.iter().flat_map(|t| by_topic[*t].iter().copied()).collect();
        let len = rng.random_range(cfg.history_min..=cfg.history_max);
        let history = if pool.is_empty() {
            Vec::new()
        } else if len <= pool.len() {
            index::sample(&mut rng, pool.len(), len)
                .into_iter()
                .map(|j| records[pool[j]].news_id.clone())
                .collect()
        } else {
            (0..len)
                .map(|_| records[pool[rng.random_range(0..pool.len())]].news_id.clone())
                .collect()
        };
        users.push(SyntheticUser {
            user_id: format!("U{u}"),
            topics,
            history,
        });
    }

    let mut impressions = Vec::with_capacity(cfg.num_impressions);
    for j in 0..cfg.num_impressions {
        let user = &users[rng.random_range(0..users.len())];
        let n = rng.random_range(cfg.candidates_min..=cfg.candidates_max);
        let candidates = index::sample(&mut rng, cfg.num_news, n)
            .into_iter()
            .map(|i| {
                let p = if user.topics.contains(&news_topics[i]) {
                    cfg.pos_rate_on_topic
                } else {
                    cfg.pos_rate_off_topic
                };
                let label = u8::from(rng.random::<f64>() < p);
                (records[i].news_id.clone(), label)
            })
            .collect();
        impressions.push(ImpressionSample {
            impression_id: format!("I{j}"),
            user_id: user.user_id.clone(),
            history: user.history.clone(),
            candidates,
        });
    }

    let n_train = (cfg.train_fraction * cfg.num_impressions as f64).floor() as usize;
    let n_dev = (cfg.dev_fraction * cfg.num_impressions as f64).floor() as usize;
    let test = impressions.split_off((n_train + n_dev).min(impressions.len()));
    let dev = impressions.split_off(n_train.min(impressions.len()));
    Ok(SyntheticData {
        news: NewsTable::new(records, cfg.d_img)?,
        news_topics,
        users,
        train: impressions,
        dev,
        test,
    })
}

pub const NEWS_FILE: &str = "news.jsonl";
pub const ROI_FILE: &str = "roi.mmrf";
pub const VOCAB_FILE: &str = "vocab.txt";

pub fn behaviors_file(split: &str) -> String {
    format!("behaviors_{split}.tsv")
}

/// Writes `news.jsonl`, `roi.mmrf`, `behaviors_{train,dev,test}.tsv` and
/// `vocab.txt` into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, data: &SyntheticData, min_count: usize) -> Result<Vocabulary> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_news(
        data.news.records(),
        data.news.roi_dim(),
        dir.join(NEWS_FILE),
        dir.join(ROI_FILE),
    )?;
    write_behaviors(dir.join(behaviors_file("train")), &data.train)?;
    write_behaviors(dir.join(behaviors_file("dev")), &data.dev)?;
    write_behaviors(dir.join(behaviors_file("test")), &data.test)?;
    let vocab = build_vocab(&data.news, min_count);
    vocab.write(dir.join(VOCAB_FILE))?;
    Ok(vocab)
}
