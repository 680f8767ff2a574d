//! Synthetic three-class image corpus, client partitioning and augmentation.
//!
//! Samples are flattened `side x side` grey-level images in `[0, 1]`. Every
//! class shares a common anatomy (two bright lobes) and the two disease
//! classes add a class-specific opacity pattern whose strength varies per
//! sample. Mild cases overlap the normal class, so the task is learnable
//! without being trivially separable.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::{sample_generator, GanConfig};
use crate::nn::ParameterVector;
use crate::rng::rng_from_seed;
use crate::tensor::Matrix;

pub const NUM_CLASSES: usize = 3;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["normal", "pneumonia", "covid"];
pub const MINORITY_CLASS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Matrix,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(samples: Matrix, labels: Vec<usize>) -> Result<Self> {
        if samples.rows() != labels.len() {
            return Err(Error::structural(format!(
                "{} samples but {} labels",
                samples.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::parameter(format!("label {bad} out of range")));
        }
        Ok(LabeledDataset { samples, labels })
    }

    pub fn empty(dim: usize) -> Self {
        LabeledDataset {
            samples: Matrix::zeros(0, dim),
            labels: Vec::new(),
        }
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            samples: self.samples.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Rows carrying `label`.
    pub fn of_class(&self, label: usize) -> LabeledDataset {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.labels[i] == label)
            .collect();
        self.subset(&idx)
    }

    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        let samples = self.samples.vstack(&other.samples)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(LabeledDataset { samples, labels })
    }

    /// Stratified split; returns `(train, test)` with `test_fraction` of
    /// every class (rounded) held out.
    pub fn stratified_split(
        &self,
        test_fraction: f64,
        seed: u64,
    ) -> Result<(LabeledDataset, LabeledDataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::parameter("test_fraction must lie in [0, 1)"));
        }
        let mut rng = rng_from_seed(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in 0..NUM_CLASSES {
            let mut idx: Vec<usize> = (0..self.len())
                .filter(|&i| self.labels[i] == class)
                .collect();
            idx.shuffle(&mut rng);
            let n_test = (idx.len() as f64 * test_fraction).round() as usize;
            test.extend_from_slice(&idx[..n_test]);
            train.extend_from_slice(&idx[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }

    /// Dataset text format: a `# dim=<d> classes=<names>` header followed by
    /// one comma-separated row per sample, features first, label last.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# dim={} classes={}\n", self.dim(), CLASS_NAMES.join(","));
        for (i, &label) in self.labels.iter().enumerate() {
            for v in self.samples.row(i) {
                write!(out, "{v},").expect("writing to a String");
            }
            writeln!(out, "{label}").expect("writing to a String");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))?;
        let dim = header
            .strip_prefix('#')
            .and_then(|h| h.split_whitespace().find_map(|t| t.strip_prefix("dim=")))
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or_else(|| Error::Format(format!("bad dataset header `{header}`")))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(Error::Format(format!(
                    "line {}: expected {} fields, found {}",
                    n + 2,
                    dim + 1,
                    fields.len()
                )));
            }
            for f in &fields[..dim] {
                data.push(
                    f.parse::<f64>()
                        .map_err(|e| Error::Format(format!("line {}: {e}", n + 2)))?,
                );
            }
            labels.push(
                fields[dim]
                    .parse::<usize>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", n + 2)))?,
            );
        }
        LabeledDataset::new(Matrix::from_vec(labels.len(), dim, data)?, labels)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub dataset: LabeledDataset,
}

impl ClientShard {
    pub fn n_k(&self) -> usize {
        self.dataset.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    Iid,
    Noniid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionPlan {
    pub mode: PartitionMode,
    /// Share of clients that receive minority-class samples in non-IID mode.
    pub covid_holder_fraction: f64,
}

impl Default for PartitionPlan {
    fn default() -> Self {
        PartitionPlan {
            mode: PartitionMode::Iid,
            covid_holder_fraction: 0.1,
        }
    }
}

impl PartitionPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.covid_holder_fraction > 0.0 && self.covid_holder_fraction <= 1.0) {
            return Err(Error::parameter("covid_holder_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn holders(&self, clients: usize) -> usize {
        ((self.covid_holder_fraction * clients as f64).ceil() as usize).clamp(1, clients)
    }
}

/// Shape of the synthetic images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    /// Per-pixel Gaussian noise.
    pub pixel_noise: f64,
    /// Peak strength of the disease patterns.
    pub lesion_strength: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            pixel_noise: 0.12,
            lesion_strength: 0.75,
        }
    }
}

/// Pixel coordinates in `[0,1]^2`; non-square widths are laid out as a
/// single row.
fn pixel_coords(d: usize) -> Vec<(f64, f64)> {
    let side = (d as f64).sqrt().round() as usize;
    if side * side == d && side > 1 {
        let s = (side - 1) as f64;
        (0..d)
            .map(|i| ((i % side) as f64 / s, (i / side) as f64 / s))
            .collect()
    } else {
        let s = (d - 1).max(1) as f64;
        (0..d).map(|i| (i as f64 / s, 0.5)).collect()
    }
}

fn bump(u: f64, v: f64, cu: f64, cv: f64, width: f64) -> f64 {
    (-((u - cu).powi(2) + (v - cv).powi(2)) / (2.0 * width * width)).exp()
}

/// Per-pixel templates: `(anatomy, pneumonia pattern, covid pattern)`.
fn templates(d: usize) -> Vec<[f64; 3]> {
    pixel_coords(d)
        .into_iter()
        .map(|(u, v)| {
            let lobes = 0.2 + 0.45 * (bump(u, v, 0.3, 0.5, 0.18) + bump(u, v, 0.7, 0.5, 0.18));
            // lower-lobe consolidation
            let pneumonia = bump(u, v, 0.3, 0.8, 0.15).max(bump(u, v, 0.7, 0.8, 0.15));
            // bilateral peripheral opacity
            let covid = bump(u, v, 0.05, 0.45, 0.14).max(bump(u, v, 0.95, 0.45, 0.14));
            [lobes, pneumonia, covid]
        })
        .collect()
}

/// Draws `n_per_class[c]` images of each class `c`, grouped by class.
pub fn synth_dataset(
    n_per_class: [usize; NUM_CLASSES],
    d: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    synth_dataset_with(n_per_class, d, seed, &SynthParams::default())
}

pub fn synth_dataset_with(
    n_per_class: [usize; NUM_CLASSES],
    d: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<LabeledDataset> {
    if d < 4 {
        return Err(Error::parameter(format!(
            "dimension must be at least 4, got {d}"
        )));
    }
    let total: usize = n_per_class.iter().sum();
    if total == 0 {
        return Err(Error::data("dataset must contain at least one sample"));
    }
    let tpl = templates(d);
    let mut rng = rng_from_seed(seed);
    let pixel =
        Normal::new(0.0, params.pixel_noise).map_err(|e| Error::parameter(e.to_string()))?;
    let mut data = Vec::with_capacity(total * d);
    let mut labels = Vec::with_capacity(total);
    for (class, &count) in n_per_class.iter().enumerate() {
        for _ in 0..count {
            let contrast: f64 = rng.random_range(0.85..1.15);
            let brightness: f64 = rng.random_range(-0.05..0.05);
            let severity: f64 = if class == 0 {
                0.0
            } else {
                rng.random_range(0.1..1.0)
            };
            for t in &tpl {
                let lesion = match class {
                    1 => t[1],
                    2 => t[2],
                    _ => 0.0,
                };
                let v = contrast * t[0]
                    + brightness
                    + params.lesion_strength * severity * lesion
                    + pixel.sample(&mut rng);
                data.push(v.clamp(0.0, 1.0));
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(Matrix::from_vec(total, d, data)?, labels)
}

/// Equal-size split after a global shuffle; the first `n mod K` clients get
/// one extra sample.
pub fn partition_iid(ds: &LabeledDataset, clients: usize, seed: u64) -> Result<Vec<ClientShard>> {
    if clients == 0 || clients > ds.len() {
        return Err(Error::parameter(format!(
            "cannot split {} samples across {clients} clients",
            ds.len()
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    Ok(deal_contiguous(&idx, clients)
        .into_iter()
        .enumerate()
        .map(|(client_id, part)| ClientShard {
            client_id,
            dataset: ds.subset(&part),
        })
        .collect())
}

fn deal_contiguous(idx: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let base = idx.len() / parts;
    let extra = idx.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Label-skewed split: classes other than the minority are spread evenly over
/// all clients while every minority sample goes to a random subset of
/// `ceil(covid_holder_fraction * K)` clients.
pub fn partition_noniid(
    ds: &LabeledDataset,
    plan: &PartitionPlan,
    clients: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    plan.validate()?;
    if plan.mode != PartitionMode::Noniid {
        return Err(Error::parameter("partition_noniid requires a non-IID plan"));
    }
    let majority: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.labels[i] != MINORITY_CLASS)
        .collect();
    let mut minority: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.labels[i] == MINORITY_CLASS)
        .collect();
    if clients == 0 || clients > majority.len() {
        return Err(Error::parameter(format!(
            "cannot spread {} majority samples across {clients} clients",
            majority.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut majority = majority;
    majority.shuffle(&mut rng);
    minority.shuffle(&mut rng);
    let mut parts = deal_contiguous(&majority, clients);

    let holders = plan.holders(clients);
    let mut order: Vec<usize> = (0..clients).collect();
    order.shuffle(&mut rng);
    let mut holder_ids = order[..holders].to_vec();
    holder_ids.sort_unstable();
    if minority.len() < holders && !minority.is_empty() {
        return Err(Error::parameter(format!(
            "{} minority samples cannot cover {holders} holder clients",
            minority.len()
        )));
    }
    for (h, chunk) in holder_ids.iter().zip(deal_contiguous(&minority, holders)) {
        parts[*h].extend(chunk);
    }
    Ok(parts
        .into_iter()
        .enumerate()
        .map(|(client_id, mut part)| {
            part.sort_unstable();
            ClientShard {
                client_id,
                dataset: ds.subset(&part),
            }
        })
        .collect())
}

/// Dispatches on the plan's mode.
pub fn partition(
    ds: &LabeledDataset,
    plan: &PartitionPlan,
    clients: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    match plan.mode {
        PartitionMode::Iid => partition_iid(ds, clients, seed),
        PartitionMode::Noniid => partition_noniid(ds, plan, clients, seed),
    }
}

/// Appends `n_fake` generator samples labeled `label` to the shard.
pub fn augment_with_fakes<R: Rng + ?Sized>(
    shard: &ClientShard,
    theta: &ParameterVector,
    cfg: &GanConfig,
    n_fake: usize,
    label: usize,
    rng: &mut R,
) -> Result<ClientShard> {
    if label >= NUM_CLASSES {
        return Err(Error::parameter(format!("label {label} out of range")));
    }
    if n_fake == 0 {
        return Ok(shard.clone());
    }
    let fakes = sample_generator(theta, cfg, n_fake, rng)?;
    let extra = LabeledDataset::new(fakes.inputs, vec![label; n_fake])?;
    Ok(ClientShard {
        client_id: shard.client_id,
        dataset: shard.dataset.concat(&extra)?,
    })
}
