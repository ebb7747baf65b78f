use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{Category, N_CATEGORIES};

pub const GROUND_TRUTH_HEADER: [&str; N_CATEGORIES + 1] =
    ["image", "MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC"];

pub const IMAGE_EXTENSION: &str = "jpg";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub label: usize,
    pub split: Split,
}

impl ManifestRecord {
    pub fn category(&self) -> Category {
        Category::ALL[self.label]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub split: Split,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(split: Split, records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.label >= N_CATEGORIES {
                return Err(Error::InvalidLabel(r.label));
            }
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::DuplicateId(r.image_id.clone()));
            }
        }
        Ok(Self { split, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn category_counts(&self) -> [usize; N_CATEGORIES] {
        let mut counts = [0; N_CATEGORIES];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    /// Writes the manifest back in the one-hot ground-truth format.
    pub fn to_csv(&self) -> String {
        let mut out = GROUND_TRUTH_HEADER.join(",");
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.image_id);
            for k in 0..N_CATEGORIES {
                out.push_str(if k == r.label { ",1.0" } else { ",0.0" });
            }
            out.push('\n');
        }
        out
    }

    pub fn read(path: &Path, split: Split, image_root: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_manifest(&text, split, image_root)
    }
}

pub fn image_path_for(image_root: &Path, image_id: &str) -> PathBuf {
    image_root.join(format!("{image_id}.{IMAGE_EXTENSION}"))
}

/// Parses a one-hot ground-truth CSV. Image files are not checked here.
pub fn parse_manifest(csv_text: &str, split: Split, image_root: &Path) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());

    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?
        .clone();
    let found: Vec<&str> = header.iter().collect();
    if found != GROUND_TRUTH_HEADER {
        return Err(Error::Format(format!(
            "expected header `{}`, found `{}`",
            GROUND_TRUTH_HEADER.join(","),
            found.join(",")
        )));
    }

    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Format(format!("row {}: {e}", line + 2)))?;
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() != N_CATEGORIES + 1 {
            return Err(Error::Format(format!(
                "row {}: expected {} columns, found {}",
                line + 2,
                N_CATEGORIES + 1,
                row.len()
            )));
        }
        let image_id = row[0].to_string();
        if image_id.is_empty() {
            return Err(Error::Format(format!("row {}: empty image id", line + 2)));
        }
        let mut label = None;
        let mut ones = 0;
        for k in 0..N_CATEGORIES {
            let v: f64 = row[k + 1].parse().map_err(|_| {
                Error::Format(format!(
                    "row {}: non-numeric value `{}` for {}",
                    line + 2,
                    &row[k + 1],
                    GROUND_TRUTH_HEADER[k + 1]
                ))
            })?;
            if v == 1.0 {
                ones += 1;
                label = Some(k);
            }
        }
        let label = match (ones, label) {
            (1, Some(l)) => l,
            _ => return Err(Error::AmbiguousLabel { image_id, ones }),
        };
        records.push(ManifestRecord {
            image_path: image_path_for(image_root, &image_id),
            image_id,
            label,
            split,
        });
    }
    Manifest::new(split, records)
}
