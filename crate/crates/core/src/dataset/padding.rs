use super::news::NewsRecord;
use super::vocab::{Vocabulary, PAD, UNK};

/// Fixed-shape model input for one news item.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedNews {
    /// `M_max` ids, PAD after the title.
    pub title_ids: Vec<usize>,
    pub title_mask: Vec<bool>,
    /// `K_max × roi_dim`, zero rows past the real ROIs.
    pub roi_features: Vec<f32>,
    pub roi_boxes: Vec<[f32; 4]>,
    pub roi_mask: Vec<bool>,
    /// True for imageless news: slot 0 stands for the learned placeholder ROI.
    pub placeholder: bool,
    pub roi_dim: usize,
}

impl PaddedNews {
    pub fn title_len(&self) -> usize {
        self.title_mask.iter().filter(|m| **m).count()
    }

    pub fn num_rois(&self) -> usize {
        self.roi_mask.iter().filter(|m| **m).count()
    }
}

/// Pads or truncates a news record to `m_max` tokens and `k_max` ROIs.
///
/// A title without tokens becomes a single UNK so every news item keeps at
/// least one attendable text position.
pub fn pad_news(record: &NewsRecord, vocab: &Vocabulary, roi_dim: usize, m_max: usize, k_max: usize) -> PaddedNews {
    let m_max = m_max.max(1);
    let k_max = k_max.max(1);
    let mut ids = vocab.encode(&record.tokens);
    if ids.is_empty() {
        ids.push(UNK);
    }
    ids.truncate(m_max);
    let n = ids.len();
    ids.resize(m_max, PAD);
    let title_mask = (0..m_max).map(|i| i < n).collect();

    let mut roi_features = vec![0.0f32; k_max * roi_dim];
    let mut roi_boxes = vec![[0.0f32; 4]; k_max];
    let placeholder = !record.has_image || record.num_rois() == 0;
    let k = if placeholder {
        1
    } else {
        let k = record.num_rois().min(k_max);
        roi_features[..k * roi_dim].copy_from_slice(&record.roi_features[..k * roi_dim]);
        roi_boxes[..k].copy_from_slice(&record.roi_boxes[..k]);
        k
    };
    let roi_mask = (0..k_max).map(|i| i < k).collect();
    PaddedNews {
        title_ids: ids,
        title_mask,
        roi_features,
        roi_boxes,
        roi_mask,
        placeholder,
        roi_dim,
    }
}

/// Keeps the `p_max` most recent entries, in order.
pub fn recent_history<T>(history: &[T], p_max: usize) -> &[T] {
    &history[history.len().saturating_sub(p_max)..]
}

/// Pads a history to `p_max` slots; the mask marks real clicks.
pub fn pad_history<T: Clone>(history: &[T], p_max: usize, pad: T) -> (Vec<T>, Vec<bool>) {
    let recent = recent_history(history, p_max);
    let mut ids = recent.to_vec();
    let mask = (0..p_max).map(|i| i < recent.len()).collect();
    ids.resize(p_max, pad);
    (ids, mask)
}
