//! Long-tailed class profiles, datasets, splits and CSV ingestion.
//!
//! Class indices are 0-based internally and ordered by descending class
//! size (class 0 is the majority class). The CSV format uses 1-based labels.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedTree;

/// Per-class sample counts sorted non-increasing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ClassProfile {
    counts: Vec<usize>,
}

impl ClassProfile {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("class profile needs at least one class"));
        }
        if let Some(l) = counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("class {} has zero examples", l + 1)));
        }
        if counts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid(format!(
                "class counts must be sorted non-increasing, got {counts:?}"
            )));
        }
        Ok(ClassProfile { counts })
    }

    pub fn uniform(num_classes: usize, per_class: usize) -> Result<Self> {
        ClassProfile::new(vec![per_class; num_classes])
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// N_1 / N_L.
    pub fn imbalance_ratio(&self) -> f64 {
        self.counts[0] as f64 / *self.counts.last().unwrap() as f64
    }

    /// Class frequencies `N_l / N`.
    pub fn frequencies(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }
}

impl TryFrom<Vec<usize>> for ClassProfile {
    type Error = Error;

    fn try_from(counts: Vec<usize>) -> Result<Self> {
        ClassProfile::new(counts)
    }
}

impl From<ClassProfile> for Vec<usize> {
    fn from(p: ClassProfile) -> Self {
        p.counts
    }
}

/// Long-tailed profile with `N_l = round(n1 * gamma^(-(l-1)/(L-1)))`.
///
/// Rounding is half-to-even and both endpoints are pinned: `N_1 = n1`,
/// `N_L = round(n1 / gamma)`.
pub fn build_longtail_profile(num_classes: usize, gamma: f64, n1: usize) -> Result<ClassProfile> {
    if num_classes < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {num_classes}")));
    }
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("imbalance ratio must be >= 1, got {gamma}")));
    }
    if (n1 as f64) < gamma {
        return Err(Error::invalid(format!(
            "largest class size {n1} is below the imbalance ratio {gamma}"
        )));
    }
    let last = num_classes - 1;
    let counts = (0..num_classes)
        .map(|l| {
            if l == 0 {
                n1
            } else if l == last {
                (n1 as f64 / gamma).round_ties_even() as usize
            } else {
                let exponent = -(l as f64) / last as f64;
                (n1 as f64 * gamma.powf(exponent)).round_ties_even() as usize
            }
        })
        .collect();
    ClassProfile::new(counts)
}

/// Feature vectors with class labels.
///
/// For unlabeled data the labels are the hidden ground truth and are only
/// read by diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    num_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, num_classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {} out of range for {num_classes} classes",
                bad + 1
            )));
        }
        Ok(Dataset {
            dim,
            num_classes,
            features,
            labels,
        })
    }

    pub fn empty(dim: usize, num_classes: usize) -> Self {
        Dataset {
            dim,
            num_classes,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// The class profile, if the counts form a valid one.
    pub fn profile(&self) -> Result<ClassProfile> {
        ClassProfile::new(self.class_counts())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            dim: self.dim,
            num_classes: self.num_classes,
            features,
            labels,
        }
    }

    pub fn push(&mut self, x: &[f64], label: usize) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        if label >= self.num_classes {
            return Err(Error::invalid(format!("label {} out of range", label + 1)));
        }
        self.features.extend_from_slice(x);
        self.labels.push(label);
        Ok(())
    }
}

/// Isotropic Gaussian class-conditional generator.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    noise_sigma: f64,
    means: Vec<Vec<f64>>,
}

impl GaussianMixture {
    /// Places `num_classes` means with pairwise distance at least `separation`.
    ///
    /// When `dim >= num_classes - 1` the means are the vertices of a regular
    /// simplex under a seeded random isometry, so every pairwise distance is
    /// exactly `separation`. Otherwise seeded random directions are scaled
    /// until the closest pair sits at `separation`.
    pub fn new(num_classes: usize, dim: usize, separation: f64, noise_sigma: f64, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid(format!("dimension must be >= 2, got {dim}")));
        }
        if num_classes == 0 {
            return Err(Error::invalid("need at least one class"));
        }
        if !(separation > 0.0) || !separation.is_finite() {
            return Err(Error::invalid(format!("separation must be positive, got {separation}")));
        }
        if !(noise_sigma > 0.0) || !noise_sigma.is_finite() {
            return Err(Error::invalid(format!(
                "noise_sigma must be positive, got {noise_sigma}"
            )));
        }
        let mut rng = SeedTree::new(seed).child("means").stream();
        let means = if num_classes == 1 {
            vec![vec![0.0; dim]]
        } else if dim >= num_classes - 1 {
            simplex_means(num_classes, dim, separation, &mut rng)
        } else {
            spread_means(num_classes, dim, separation, &mut rng)
        };
        Ok(GaussianMixture {
            dim,
            noise_sigma,
            means,
        })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    /// Draws `counts[l]` examples of class `l`, grouped by class in order.
    pub fn sample(&self, counts: &[usize], seed: u64) -> Result<Dataset> {
        if counts.len() != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: self.means.len(),
                actual: counts.len(),
            });
        }
        let mut rng = SeedTree::new(seed).child("samples").stream();
        let total: usize = counts.iter().sum();
        let mut features = Vec::with_capacity(total * self.dim);
        let mut labels = Vec::with_capacity(total);
        for (class, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                for &m in &self.means[class] {
                    let z: f64 = rng.sample(StandardNormal);
                    features.push(m + self.noise_sigma * z);
                }
                labels.push(class);
            }
        }
        Dataset::new(self.dim, counts.len(), features, labels)
    }
}

fn gaussian_vec(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn simplex_means(num_classes: usize, dim: usize, separation: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let k = num_classes - 1;
    // Orthonormal frame of k random directions in R^dim.
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(k);
    while frame.len() < k {
        let mut v = gaussian_vec(dim, rng);
        for u in &frame {
            let p = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            frame.push(v);
        }
    }
    // Vertices e_i - centroid expressed in the Helmert basis of the
    // sum-zero subspace; pairwise distance sqrt(2) before scaling.
    let scale = separation / std::f64::consts::SQRT_2;
    (0..num_classes)
        .map(|i| {
            let coords: Vec<f64> = (1..=k)
                .map(|j| {
                    let jf = j as f64;
                    let norm = (jf * (jf + 1.0)).sqrt();
                    if i < j {
                        1.0 / norm
                    } else if i == j {
                        -jf / norm
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut mean = vec![0.0; dim];
            for (c, u) in coords.iter().zip(&frame) {
                mean.iter_mut().zip(u).for_each(|(m, b)| *m += scale * c * b);
            }
            mean
        })
        .collect()
}

fn spread_means(num_classes: usize, dim: usize, separation: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let v = gaussian_vec(dim, rng);
            let norm = dot(&v, &v).sqrt().max(1e-12);
            v.into_iter().map(|a| a / norm).collect()
        })
        .collect();
    let mut min_dist = f64::INFINITY;
    for i in 0..num_classes {
        for j in i + 1..num_classes {
            let d: f64 = dirs[i]
                .iter()
                .zip(&dirs[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(d);
        }
    }
    let scale = separation / min_dist.max(1e-12);
    for v in &mut dirs {
        v.iter_mut().for_each(|a| *a *= scale);
    }
    dirs
}

/// Synthesizes a dataset whose per-class counts equal `profile`.
///
/// Means come from `GaussianMixture::new(.., seed)` and the samples from a
/// stream derived from the same seed, so the result is a pure function of
/// the arguments.
pub fn synth_gaussian_dataset(
    profile: &ClassProfile,
    dim: usize,
    separation: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    let mixture = GaussianMixture::new(profile.num_classes(), dim, separation, noise_sigma, seed)?;
    mixture.sample(profile.counts(), seed)
}

/// A labeled/unlabeled partition of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPair {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    /// Source row of each labeled example.
    pub labeled_source: Vec<usize>,
    /// Source row of each unlabeled example.
    pub unlabeled_source: Vec<usize>,
}

impl SplitPair {
    /// N / (N + M).
    pub fn label_fraction(&self) -> f64 {
        self.labeled.len() as f64 / (self.labeled.len() + self.unlabeled.len()) as f64
    }
}

/// Stratified split: class `l` contributes `max(1, round(beta * N_l))`
/// labeled examples drawn uniformly from that class.
pub fn split_labeled_unlabeled(dataset: &Dataset, beta: f64, seed: u64) -> Result<SplitPair> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(format!("label fraction must be in (0,1), got {beta}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for (i, &y) in dataset.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    if let Some(l) = by_class.iter().position(|c| c.len() < 2) {
        return Err(Error::invalid(format!("class {} has fewer than 2 examples", l + 1)));
    }
    let tree = SeedTree::new(seed).child("split");
    let mut is_labeled = vec![false; dataset.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        let take = ((beta * members.len() as f64).round_ties_even() as usize).max(1);
        let mut rng = tree.index(class as u64).stream();
        let (chosen, _) = members.partial_shuffle(&mut rng, take);
        for &i in chosen.iter() {
            is_labeled[i] = true;
        }
    }
    let (labeled_source, unlabeled_source): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| is_labeled[i]);
    Ok(SplitPair {
        labeled: dataset.subset(&labeled_source),
        unlabeled: dataset.subset(&unlabeled_source),
        labeled_source,
        unlabeled_source,
    })
}

/// Inverse-frequency sampling weights for the re-sampling baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct ResampleWeights {
    /// Probability of drawing one particular example of class `l`.
    pub per_example: Vec<f64>,
    /// Total probability mass of class `l` (uniform, `1/L`).
    pub per_class_mass: Vec<f64>,
}

pub fn resample_weights(profile: &ClassProfile) -> ResampleWeights {
    resample_weights_from_counts(profile.counts())
}

pub(crate) fn resample_weights_from_counts(counts: &[usize]) -> ResampleWeights {
    let nonempty = counts.iter().filter(|&&c| c > 0).count() as f64;
    let per_example: Vec<f64> = counts
        .iter()
        .map(|&n| if n == 0 { 0.0 } else { 1.0 / (nonempty * n as f64) })
        .collect();
    let per_class_mass = counts.iter().zip(&per_example).map(|(&n, &w)| w * n as f64).collect();
    ResampleWeights {
        per_example,
        per_class_mass,
    }
}

/// A dataset read from CSV, with classes renumbered by descending count.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    /// `class_map[canonical]` is the 1-based label used in the file.
    pub class_map: Vec<usize>,
}

/// Renders `label,f0,..` CSV. Labels are written 1-based.
pub fn dataset_to_csv(dataset: &Dataset) -> String {
    let mut out = String::from("label");
    for j in 0..dataset.dim() {
        write!(out, ",f{j}").unwrap();
    }
    out.push('\n');
    for (x, &y) in dataset.rows().zip(dataset.labels()) {
        write!(out, "{}", y + 1).unwrap();
        for v in x {
            // Display for f64 is the shortest round-trip representation.
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_csv_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_csv(dataset)).map_err(|e| Error::io(path, e))
}

pub fn load_csv_dataset(path: &Path) -> Result<LoadedCsv> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv_dataset(&text, path)
}

pub fn parse_csv_dataset(text: &str, path: &Path) -> Result<LoadedCsv> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(e.position().map_or(1, |p| p.line()), e.to_string()))?
        .clone();
    if header.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let header_line = header.position().map_or(1, |p| p.line());
    if &header[0] != "label" || header.len() < 2 {
        let joined: Vec<&str> = header.iter().collect();
        return Err(parse_err(
            header_line,
            format!("expected header `label,f0,...`, got `{}`", joined.join(",")),
        ));
    }
    for (j, c) in header.iter().skip(1).enumerate() {
        if c != format!("f{j}") {
            return Err(parse_err(header_line, format!("expected column `f{j}`, got `{c}`")));
        }
    }
    let dim = header.len() - 1;

    let mut raw_labels = Vec::new();
    let mut features = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let lineno = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 1 {
            return Err(parse_err(
                lineno,
                format!(
                    "inconsistent dimension: expected {dim} features, got {}",
                    record.len() - 1
                ),
            ));
        }
        let label: usize = record[0]
            .parse()
            .ok()
            .filter(|&l| l >= 1)
            .ok_or_else(|| parse_err(lineno, format!("malformed label `{}`", &record[0])))?;
        for f in record.iter().skip(1) {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(lineno, format!("malformed feature value `{f}`")))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("non-finite feature value `{f}`")));
            }
            features.push(v);
        }
        raw_labels.push(label);
    }
    if raw_labels.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }

    let num_classes = *raw_labels.iter().max().unwrap();
    let mut raw_counts = vec![0usize; num_classes];
    for &l in &raw_labels {
        raw_counts[l - 1] += 1;
    }
    if let Some(missing) = raw_counts.iter().position(|&c| c == 0) {
        return Err(parse_err(
            0,
            format!(
                "label {} never appears (labels must cover 1..{num_classes})",
                missing + 1
            ),
        ));
    }
    // Stable sort by descending count keeps ties in original label order.
    let mut class_map: Vec<usize> = (1..=num_classes).collect();
    class_map.sort_by(|&a, &b| raw_counts[b - 1].cmp(&raw_counts[a - 1]));
    let mut to_canonical = vec![0; num_classes];
    for (canonical, &raw) in class_map.iter().enumerate() {
        to_canonical[raw - 1] = canonical;
    }
    let labels = raw_labels.iter().map(|&l| to_canonical[l - 1]).collect();
    Ok(LoadedCsv {
        dataset: Dataset::new(dim, num_classes, features, labels)?,
        class_map,
    })
}

/// Generator parameters recorded next to a synthesized CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub num_classes: usize,
    pub gamma: f64,
    pub n1: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthParams {
    pub fn profile(&self) -> Result<ClassProfile> {
        build_longtail_profile(self.num_classes, self.gamma, self.n1)
    }

    pub fn mixture(&self) -> Result<GaussianMixture> {
        GaussianMixture::new(self.num_classes, self.dim, self.separation, self.noise_sigma, self.seed)
    }

    pub fn generate(&self) -> Result<Dataset> {
        synth_gaussian_dataset(&self.profile()?, self.dim, self.separation, self.noise_sigma, self.seed)
    }
}

/// JSON manifest written alongside a dataset CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub dim: usize,
    pub counts: Vec<usize>,
    pub seed: u64,
    pub generator: SynthParams,
}

impl DatasetManifest {
    pub fn new(params: &SynthParams, dataset: &Dataset) -> Self {
        DatasetManifest {
            num_classes: dataset.num_classes(),
            dim: dataset.dim(),
            counts: dataset.class_counts(),
            seed: params.seed,
            generator: params.clone(),
        }
    }
}
