//! Tab-separated impression logs:
//! `impression_id \t user_id \t history ids \t newsid-label ...`

use std::fs;
use std::path::Path;

use super::news::NewsTable;
use crate::error::{Error, Result};

/// One presentation of a candidate list to a user, with click labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImpressionSample {
    pub impression_id: String,
    pub user_id: String,
    /// Chronological, oldest first.
    pub history: Vec<String>,
    pub candidates: Vec<(String, u8)>,
}

impl ImpressionSample {
    pub fn labels(&self) -> Vec<u8> {
        self.candidates.iter().map(|(_, l)| *l).collect()
    }

    pub fn num_positive(&self) -> usize {
        self.candidates.iter().filter(|(_, l)| *l == 1).count()
    }

    pub fn to_line(&self) -> String {
        let cands: Vec<String> = self.candidates.iter().map(|(id, l)| format!("{id}-{l}")).collect();
        format!(
            "{}\t{}\t{}\t{}",
            self.impression_id,
            self.user_id,
            self.history.join(" "),
            cands.join(" ")
        )
    }
}

pub fn parse_behavior_line(line: &str) -> std::result::Result<ImpressionSample, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 tab-separated fields, found {}", fields.len()));
    }
    let history = fields[2].split_whitespace().map(str::to_string).collect();
    let mut candidates = Vec::new();
    for entry in fields[3].split_whitespace() {
        let (id, label) = entry
            .rsplit_once('-')
            .ok_or_else(|| format!("candidate {entry:?} lacks a -label suffix"))?;
        let label = match label {
            "0" => 0,
            "1" => 1,
            other => return Err(format!("label {other:?} of {id} not in {{0,1}}")),
        };
        candidates.push((id.to_string(), label));
    }
    if candidates.is_empty() {
        return Err("impression has no candidates".into());
    }
    Ok(ImpressionSample {
        impression_id: fields[0].to_string(),
        user_id: fields[1].to_string(),
        history,
        candidates,
    })
}

pub fn load_behaviors(path: impl AsRef<Path>) -> Result<Vec<ImpressionSample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_behavior_line(l).map_err(|message| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            })
        })
        .collect()
}

pub fn write_behaviors(path: impl AsRef<Path>, impressions: &[ImpressionSample]) -> Result<()> {
    let mut out = String::new();
    for imp in impressions {
        out.push_str(&imp.to_line());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Checks that every history and candidate id resolves in `news`.
pub fn validate_impressions(impressions: &[ImpressionSample], news: &NewsTable) -> Result<()> {
    for imp in impressions {
        let ids = imp.history.iter().chain(imp.candidates.iter().map(|(id, _)| id));
        for id in ids {
            if news.position(id).is_none() {
                return Err(Error::Data(format!(
                    "impression {} references unknown news {id}",
                    imp.impression_id
                )));
            }
        }
    }
    Ok(())
}
