//! JSONL pair manifests. Relative paths resolve against the manifest's
//! directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TransformRecord;

/// One line of a manifest. `synth` fills the optional ground-truth fields;
/// `eval` and `train` ignore them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    #[serde(default)]
    pub id: String,
    pub source: PathBuf,
    pub target: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tgt_mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_fgrid: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_fgrid: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_transform: Option<TransformRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PairRecord {
    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.source);
        join(&mut self.target);
        for p in [&mut self.keypoints, &mut self.src_mask, &mut self.tgt_mask, &mut self.source_fgrid, &mut self.target_fgrid]
            .into_iter()
            .flatten()
        {
            join(p);
        }
    }

    /// Input files this record reads during evaluation.
    fn inputs(&self) -> impl Iterator<Item = &PathBuf> {
        [Some(&self.source), Some(&self.target), self.keypoints.as_ref(), self.src_mask.as_ref(), self.tgt_mask.as_ref()]
            .into_iter()
            .flatten()
    }
}

/// Parses manifest text. Blank lines are skipped, missing ids default to
/// `pair<line>` and duplicate ids are rejected.
pub fn parse_manifest(text: &str, origin: &str) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: PairRecord = serde_json::from_str(line)
            .map_err(|e| Error::Parse { path: origin.to_string(), line: n + 1, msg: e.to_string() })?;
        if rec.id.is_empty() {
            rec.id = format!("pair{}", n + 1);
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Parse { path: origin.to_string(), line: n + 1, msg: format!("duplicate id {:?}", rec.id) });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads a manifest, resolves its paths and checks that every input exists.
pub fn read_manifest(path: &Path) -> Result<Vec<PairRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut recs = parse_manifest(&text, &path.display().to_string())?;
    let base = path.parent().unwrap_or(Path::new(""));
    for rec in &mut recs {
        rec.resolve(base);
        if let Some(missing) = rec.inputs().find(|p| !p.is_file()) {
            return Err(Error::io(missing, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
    }
    Ok(recs)
}

pub fn format_manifest(recs: &[PairRecord]) -> Result<String> {
    let mut out = String::new();
    for rec in recs {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}
