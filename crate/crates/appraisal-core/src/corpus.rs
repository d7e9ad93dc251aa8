//! Happy-moment corpus loading, label validation, and seeded splits.
//!
//! Input files are header-ful RFC 4180 CSV. Column names default to the
//! HappyDB conventions (`hmid`, `moment`, `agency`, `social`) and can be
//! remapped via [`ColumnMap`]. Labels are canonicalized to booleans from
//! case-insensitive `yes`/`no` or `1`/`0`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which binary appraisal concept a run targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Agency,
    Social,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Agency => "agency",
            Task::Social => "social",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "agency" => Ok(Task::Agency),
            "social" | "sociality" => Ok(Task::Social),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// One happy-moment text with optional binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Moment {
    pub id: String,
    pub text: String,
    pub agency: Option<bool>,
    pub social: Option<bool>,
}

impl Moment {
    pub fn label(&self, task: Task) -> Option<bool> {
        match task {
            Task::Agency => self.agency,
            Task::Social => self.social,
        }
    }
}

/// Where a dataset came from.
#[derive(Clone, Debug)]
pub struct Provenance {
    pub source: PathBuf,
    pub loaded_at: SystemTime,
}

/// An ordered, immutable collection of moments. Order is file order;
/// downstream split determinism depends on it.
#[derive(Clone, Debug)]
pub struct Dataset {
    moments: Vec<Moment>,
    provenance: Option<Provenance>,
}

/// CSV column names for the text, id, and label fields.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub id: Option<String>,
    pub text: String,
    pub agency: Option<String>,
    pub social: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: Some("hmid".into()),
            text: "moment".into(),
            agency: Some("agency".into()),
            social: Some("social".into()),
        }
    }
}

/// Train fraction and shuffle seed for [`split`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    /// Shuffle within label groups of this task instead of globally.
    #[serde(default)]
    pub stratify_by: Option<Task>,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            train_fraction,
            seed,
            stratify_by: None,
        }
    }
}

fn canonical_label(raw: &str, row: usize, column: &str) -> Result<Option<bool>> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(None);
    }
    match t.to_ascii_lowercase().as_str() {
        "yes" | "1" => Ok(Some(true)),
        "no" | "0" => Ok(Some(false)),
        other => Err(Error::DataAt {
            row,
            message: format!("label `{other}` in column `{column}` is not yes/no"),
        }),
    }
}

/// Load a labeled CSV into a [`Dataset`].
///
/// Rows are numbered from 1 at the header, so the first data row is row 2;
/// error messages use that numbering. Rows without an id column get their
/// ordinal position as id.
pub fn load_csv(path: &Path, columns: &ColumnMap) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Config(format!(
                "cannot open data file {}: {e}",
                path.display()
            )),
            _ => Error::Parse {
                line: 1,
                message: e.to_string(),
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: format!("bad header: {e}"),
        })?
        .clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("mapped column `{name}` not in CSV header")))
    };

    let text_idx = col_index(&columns.text)?;
    let id_idx = columns.id.as_deref().map(col_index).transpose()?;
    let agency_idx = columns.agency.as_deref().map(col_index).transpose()?;
    let social_idx = columns.social.as_deref().map(col_index).transpose()?;

    let mut moments = Vec::new();
    let mut seen_ids = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Parse {
            line: row,
            message: format!("malformed CSV row: {e}"),
        })?;
        let text = record.get(text_idx).unwrap_or("").trim();
        if text.is_empty() {
            return Err(Error::DataAt {
                row,
                message: "empty moment text".into(),
            });
        }
        let id = match id_idx {
            Some(idx) => record.get(idx).unwrap_or("").trim().to_string(),
            None => (i + 1).to_string(),
        };
        if !seen_ids.insert(id.clone()) {
            return Err(Error::DataAt {
                row,
                message: format!("duplicate id `{id}`"),
            });
        }
        let agency = match agency_idx {
            Some(idx) => canonical_label(record.get(idx).unwrap_or(""), row, "agency")?,
            None => None,
        };
        let social = match social_idx {
            Some(idx) => canonical_label(record.get(idx).unwrap_or(""), row, "social")?,
            None => None,
        };
        moments.push(Moment {
            id,
            text: text.to_string(),
            agency,
            social,
        });
    }

    Ok(Dataset {
        moments,
        provenance: Some(Provenance {
            source: path.to_path_buf(),
            loaded_at: SystemTime::now(),
        }),
    })
}

impl Dataset {
    /// Build a dataset from in-memory moments (test fixtures, filters).
    pub fn from_moments(moments: Vec<Moment>) -> Result<Self> {
        let mut seen = HashSet::new();
        for m in &moments {
            if m.text.trim().is_empty() {
                return Err(Error::Data(format!("moment `{}` has empty text", m.id)));
            }
            if !seen.insert(m.id.as_str()) {
                return Err(Error::Data(format!("duplicate id `{}`", m.id)));
            }
        }
        Ok(Dataset {
            moments,
            provenance: None,
        })
    }

    pub fn moments(&self) -> &[Moment] {
        &self.moments
    }

    pub fn len(&self) -> usize {
        self.moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// Gold labels for `task`; errors if any moment lacks one.
    pub fn labels(&self, task: Task) -> Result<Vec<bool>> {
        self.moments
            .iter()
            .map(|m| {
                m.label(task).ok_or_else(|| {
                    Error::Data(format!("moment `{}` has no {} label", m.id, task.name()))
                })
            })
            .collect()
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            moments: indices.iter().map(|&i| self.moments[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Fraction of positive labels, kept as an exact count/total pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassPrior {
    pub positives: usize,
    pub total: usize,
}

impl ClassPrior {
    pub fn fraction(&self) -> f64 {
        self.positives as f64 / self.total as f64
    }
}

impl std::fmt::Display for ClassPrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{} = {:.6}",
            self.positives,
            self.total,
            self.fraction()
        )
    }
}

/// Positive-label fraction of a fully labeled dataset.
pub fn class_prior(dataset: &Dataset, task: Task) -> Result<ClassPrior> {
    let labels = dataset.labels(task)?;
    if labels.is_empty() {
        return Err(Error::Data("class prior of an empty dataset".into()));
    }
    Ok(ClassPrior {
        positives: labels.iter().filter(|&&l| l).count(),
        total: labels.len(),
    })
}

/// Seeded uniform shuffle followed by a prefix/suffix cut.
///
/// Train size is `floor(train_fraction * N)`. Equal `(dataset, spec)` pairs
/// produce identical splits. With `stratify_by` set, the shuffle and cut
/// happen within each label group; group remainders are assigned in label
/// order (positives first) so the total train size is unchanged.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if dataset.is_empty() {
        return Err(Error::Usage("split of an empty dataset".into()));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    let n = dataset.len();
    let n_train = (spec.train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "train_fraction {} leaves an empty side for {n} moments",
            spec.train_fraction
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train_indices: Vec<usize> = match spec.stratify_by {
        None => {
            let mut indices: Vec<usize> = (0..n).collect();
            indices.shuffle(&mut rng);
            indices[..n_train].to_vec()
        }
        Some(task) => {
            let labels = dataset.labels(task)?;
            let mut groups = [Vec::new(), Vec::new()];
            for (i, &l) in labels.iter().enumerate() {
                groups[usize::from(!l)].push(i);
            }
            let mut picked = Vec::with_capacity(n_train);
            let mut remainder = n_train;
            for group in &mut groups {
                group.shuffle(&mut rng);
            }
            let mut takes = [0usize; 2];
            for (g, group) in groups.iter().enumerate() {
                takes[g] = (spec.train_fraction * group.len() as f64).floor() as usize;
                remainder = remainder.saturating_sub(takes[g]);
            }
            // Distribute what floor() left over, positives first.
            for (g, group) in groups.iter().enumerate() {
                while remainder > 0 && takes[g] < group.len() {
                    takes[g] += 1;
                    remainder -= 1;
                }
            }
            for (g, group) in groups.iter().enumerate() {
                picked.extend_from_slice(&group[..takes[g]]);
            }
            picked
        }
    };

    let train_set: HashSet<usize> = train_indices.iter().copied().collect();
    // Membership comes from the shuffle; both sides keep file order so the
    // output is stable regardless of shuffle internals.
    let mut train_sorted: Vec<usize> = train_indices;
    train_sorted.sort_unstable();
    let dev_sorted: Vec<usize> = (0..n).filter(|i| !train_set.contains(i)).collect();

    Ok((dataset.subset(&train_sorted), dataset.subset(&dev_sorted)))
}
