use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mmrf::{read_roi_features, write_roi_features, FeatureMatrix};
use crate::error::{Error, Result};

/// One news item: title tokens plus the precomputed ROI features of its image.
#[derive(Clone, Debug, PartialEq)]
pub struct NewsRecord {
    pub news_id: String,
    pub title: String,
    pub tokens: Vec<String>,
    /// `K × roi_dim`, row-major.
    pub roi_features: Vec<f32>,
    pub roi_boxes: Vec<[f32; 4]>,
    pub has_image: bool,
}

impl NewsRecord {
    pub fn num_rois(&self) -> usize {
        self.roi_boxes.len()
    }

    pub fn roi_row(&self, k: usize, dim: usize) -> &[f32] {
        &self.roi_features[k * dim..(k + 1) * dim]
    }
}

/// Checks `0 ≤ x1 < x2 ≤ 1` and `0 ≤ y1 < y2 ≤ 1`.
pub fn validate_box(b: [f32; 4]) -> Result<()> {
    let [x1, y1, x2, y2] = b;
    if b.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidBox {
            bbox: b,
            reason: "coordinates must lie in [0, 1]",
        });
    }
    if x1 >= x2 || y1 >= y2 {
        return Err(Error::InvalidBox {
            bbox: b,
            reason: "requires x1 < x2 and y1 < y2",
        });
    }
    Ok(())
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(title: &str) -> Vec<String> {
    title
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Immutable news lookup table.
#[derive(Clone, Debug, PartialEq)]
pub struct NewsTable {
    records: Vec<NewsRecord>,
    index: HashMap<String, usize>,
    roi_dim: usize,
}

impl NewsTable {
    pub fn new(records: Vec<NewsRecord>, roi_dim: usize) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.news_id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate news id {}", r.news_id)));
            }
            if r.roi_features.len() != r.roi_boxes.len() * roi_dim {
                return Err(Error::Data(format!(
                    "news {} has {} feature values for {} boxes of dim {roi_dim}",
                    r.news_id,
                    r.roi_features.len(),
                    r.roi_boxes.len()
                )));
            }
            if !r.has_image && !r.roi_boxes.is_empty() {
                return Err(Error::Data(format!("news {} has ROIs but no image", r.news_id)));
            }
            for b in &r.roi_boxes {
                validate_box(*b)?;
            }
        }
        Ok(NewsTable {
            records,
            index,
            roi_dim,
        })
    }

    pub fn records(&self) -> &[NewsRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn roi_dim(&self) -> usize {
        self.roi_dim
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&NewsRecord> {
        self.position(id).map(|i| &self.records[i])
    }

    pub fn resolve(&self, id: &str) -> Result<usize> {
        self.position(id)
            .ok_or_else(|| Error::Data(format!("unknown news id {id}")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewsLine {
    id: String,
    title: String,
    roi_row_offset: usize,
    roi_count: usize,
    roi_boxes: Vec<[f32; 4]>,
}

/// Loads `news.jsonl` and its ROI feature file. Titles are truncated to
/// `m_max` tokens.
pub fn load_news(jsonl_path: impl AsRef<Path>, feature_path: impl AsRef<Path>, m_max: usize) -> Result<NewsTable> {
    let jsonl_path = jsonl_path.as_ref();
    let features = read_roi_features(feature_path)?;
    let reader = BufReader::new(fs::File::open(jsonl_path)?);
    let mut records = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: jsonl_path.to_path_buf(),
            line: line_no,
            message,
        };
        let entry: NewsLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if seen.insert(entry.id.clone(), line_no).is_some() {
            return Err(parse_err(format!("duplicate news id {}", entry.id)));
        }
        if entry.roi_boxes.len() != entry.roi_count {
            return Err(parse_err(format!(
                "roi_count {} but {} boxes",
                entry.roi_count,
                entry.roi_boxes.len()
            )));
        }
        let end = entry.roi_row_offset + entry.roi_count;
        if entry.roi_count > 0 && end > features.num_rows {
            return Err(parse_err(format!(
                "roi rows {}..{end} out of bounds for feature file with {} rows",
                entry.roi_row_offset, features.num_rows
            )));
        }
        for b in &entry.roi_boxes {
            validate_box(*b).map_err(|e| parse_err(e.to_string()))?;
        }
        let mut tokens = tokenize(&entry.title);
        tokens.truncate(m_max);
        let roi_features = (entry.roi_row_offset..end)
            .flat_map(|r| features.row(r).iter().copied())
            .collect();
        records.push(NewsRecord {
            news_id: entry.id,
            title: entry.title,
            tokens,
            roi_features,
            roi_boxes: entry.roi_boxes,
            has_image: entry.roi_count > 0,
        });
    }
    NewsTable::new(records, features.feat_dim)
}

/// Writes `news.jsonl` plus the matching `MMRF` feature file, assigning ROI
/// rows consecutively in record order.
pub fn write_news(
    records: &[NewsRecord],
    roi_dim: usize,
    jsonl_path: impl AsRef<Path>,
    feature_path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = Vec::new();
    let mut data = Vec::new();
    let mut offset = 0;
    for r in records {
        let line = NewsLine {
            id: r.news_id.clone(),
            title: r.title.clone(),
            roi_row_offset: offset,
            roi_count: r.num_rois(),
            roi_boxes: r.roi_boxes.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
        data.extend_from_slice(&r.roi_features);
        offset += r.num_rois();
    }
    fs::File::create(jsonl_path)?.write_all(&out)?;
    write_roi_features(feature_path, &FeatureMatrix::new(offset, roi_dim, data)?)
}
