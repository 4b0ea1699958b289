use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// A feature matrix with ground-truth labels held behind a labeling oracle.
///
/// Training-split labels become readable only after [`Dataset::oracle_label`]
/// reveals them; every attempt to read a hidden label is counted as a
/// violation. Test-split labels are always readable.
#[derive(Debug)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    labeled: Vec<bool>,
    classes: usize,
    split: Split,
    label_reads: AtomicUsize,
    violations: AtomicUsize,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        Self {
            features: self.features.clone(),
            labels: self.labels.clone(),
            labeled: self.labeled.clone(),
            classes: self.classes,
            split: self.split,
            label_reads: AtomicUsize::new(self.label_reads.load(Ordering::Relaxed)),
            violations: AtomicUsize::new(self.violations.load(Ordering::Relaxed)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchFilter {
    Labeled,
    Unlabeled,
    All,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if features.rows() != labels.len() || features.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "{} feature rows for {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index(format!("label {bad} with {classes} classes")));
        }
        let n = labels.len();
        Ok(Self {
            features,
            labels,
            labeled: vec![false; n],
            classes,
            split,
            label_reads: AtomicUsize::new(0),
            violations: AtomicUsize::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labeled[i]
    }

    pub fn labeled_mask(&self) -> &[bool] {
        &self.labeled
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.iter().filter(|&&l| l).count()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labeled[i]).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.labeled[i]).collect()
    }

    /// Reveals the labels of `indices`, spending one unit of budget each.
    pub fn oracle_label(&mut self, indices: &[usize]) -> Result<Vec<usize>> {
        let mut seen = vec![false; self.len()];
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index(format!("index {i} in a pool of {}", self.len())));
            }
            if self.labeled[i] || seen[i] {
                return Err(Error::Budget(format!("index {i} is already labeled")));
            }
            seen[i] = true;
        }
        for &i in indices {
            self.labeled[i] = true;
        }
        Ok(indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Label of example `i`, which must be revealed (or belong to a test split).
    pub fn label(&self, i: usize) -> Result<usize> {
        if i >= self.len() {
            return Err(Error::Index(format!("index {i} in a pool of {}", self.len())));
        }
        if self.split == Split::Train && !self.labeled[i] {
            self.violations.fetch_add(1, Ordering::Relaxed);
            return Err(Error::Budget(format!("label of unlabeled index {i} requested")));
        }
        self.label_reads.fetch_add(1, Ordering::Relaxed);
        Ok(self.labels[i])
    }

    pub fn labels_of(&self, indices: &[usize]) -> Result<Vec<usize>> {
        indices.iter().map(|&i| self.label(i)).collect()
    }

    /// All labels of a test split.
    pub fn test_labels(&self) -> Result<&[usize]> {
        if self.split != Split::Test {
            return Err(Error::Budget("bulk label access on a training pool".into()));
        }
        Ok(&self.labels)
    }

    /// Number of attempts to read a hidden label.
    pub fn label_violations(&self) -> usize {
        self.violations.load(Ordering::Relaxed)
    }

    pub fn label_reads(&self) -> usize {
        self.label_reads.load(Ordering::Relaxed)
    }

    /// Class membership of the whole pool, used only for stratified seeding.
    pub(crate) fn class_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l].push(i);
        }
        members
    }

    pub fn filtered_indices(&self, filter: BatchFilter) -> Vec<usize> {
        match filter {
            BatchFilter::Labeled => self.labeled_indices(),
            BatchFilter::Unlabeled => self.unlabeled_indices(),
            BatchFilter::All => (0..self.len()).collect(),
        }
    }

    /// Writes `f0..f{d-1},label,split` rows for each dataset, in order.
    pub fn write_csv(path: &Path, sets: &[&Dataset]) -> Result<()> {
        let dim = sets.first().map_or(0, |d| d.dim());
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header: Vec<String> = (0..dim).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        header.push("split".into());
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for set in sets {
            if set.dim() != dim {
                return Err(Error::Dimension("datasets of different width".into()));
            }
            for i in 0..set.len() {
                let mut rec: Vec<String> = set.row(i).iter().map(|v| format!("{v:?}")).collect();
                rec.push(set.labels[i].to_string());
                rec.push(set.split.as_str().to_string());
                w.write_record(&rec).map_err(|e| csv_error(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a CSV written by [`Dataset::write_csv`]; returns `(train, test)`.
    /// All labels start hidden again.
    pub fn read_csv(path: &Path, classes: usize) -> Result<(Dataset, Dataset)> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let headers = r.headers().map_err(|e| csv_error(path, e))?.clone();
        let dim = headers
            .len()
            .checked_sub(2)
            .ok_or_else(|| Error::Parse(format!("{}: header too short", path.display())))?;
        let mut parts: [(Vec<f64>, Vec<usize>); 2] = Default::default();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}: {s}: {e}", path.display())))
            };
            let slot = match &rec[dim + 1] {
                "train" => 0,
                "test" => 1,
                other => return Err(Error::Parse(format!("unknown split {other}"))),
            };
            for j in 0..dim {
                parts[slot].0.push(parse(&rec[j])?);
            }
            let label = rec[dim]
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("label {}: {e}", &rec[dim])))?;
            parts[slot].1.push(label);
        }
        let [(tf, tl), (sf, sl)] = parts;
        let train = Dataset::new(Tensor::matrix(tl.len(), dim, tf)?, tl, classes, Split::Train)?;
        let test = Dataset::new(Tensor::matrix(sl.len(), dim, sf)?, sl, classes, Split::Test)?;
        Ok((train, test))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

/// Index batches over the filtered subset, reshuffled with `rng`. The last
/// batch may be short; an empty subset yields no batches.
pub fn batches<R: Rng + ?Sized>(
    dataset: &Dataset,
    batch_size: usize,
    rng: &mut R,
    filter: BatchFilter,
) -> Result<std::vec::IntoIter<Vec<usize>>> {
    shuffled_batches(&dataset.filtered_indices(filter), batch_size, rng)
}

pub fn shuffled_batches<R: Rng + ?Sized>(
    indices: &[usize],
    batch_size: usize,
    rng: &mut R,
) -> Result<std::vec::IntoIter<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order = indices.to_vec();
    order.shuffle(rng);
    let out: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    Ok(out.into_iter())
}
