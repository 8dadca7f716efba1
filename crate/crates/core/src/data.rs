//! Synthetic Gaussian-mixture datasets, imbalance profiles, CSV ingestion,
//! and the stratified model/prior partition.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, forward_substitute, Matrix};
use crate::prior::Prior;
use crate::seed::{self, tags};

/// Per-class Gaussian class-conditionals `p(x|y)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpecRaw", into = "MixtureSpecRaw")]
pub struct MixtureSpec {
    means: Vec<Vec<f64>>,
    covariances: Vec<Matrix>,
    chol: Vec<Matrix>,
    log_norm: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MixtureSpecRaw {
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<MixtureSpecRaw> for MixtureSpec {
    type Error = Error;

    fn try_from(raw: MixtureSpecRaw) -> Result<Self> {
        let covs = raw
            .covariances
            .iter()
            .map(|c| Matrix::from_rows(c))
            .collect::<Result<Vec<_>>>()?;
        MixtureSpec::new(raw.means, covs)
    }
}

impl From<MixtureSpec> for MixtureSpecRaw {
    fn from(spec: MixtureSpec) -> Self {
        let covariances = spec
            .covariances
            .iter()
            .map(|c| (0..c.rows()).map(|i| c.row(i).to_vec()).collect())
            .collect();
        MixtureSpecRaw {
            means: spec.means,
            covariances,
        }
    }
}

impl MixtureSpec {
    pub fn new(means: Vec<Vec<f64>>, covariances: Vec<Matrix>) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::invalid("a mixture needs at least two classes"));
        }
        if covariances.len() != means.len() {
            return Err(Error::DimensionMismatch {
                context: "covariance count",
                expected: means.len(),
                found: covariances.len(),
            });
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::invalid("mixture dimension must be positive"));
        }
        let mut chol = Vec::with_capacity(means.len());
        let mut log_norm = Vec::with_capacity(means.len());
        for (mu, cov) in means.iter().zip(&covariances) {
            if mu.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "class mean",
                    expected: d,
                    found: mu.len(),
                });
            }
            if cov.rows() != d || cov.cols() != d {
                return Err(Error::DimensionMismatch {
                    context: "class covariance",
                    expected: d,
                    found: cov.rows().max(cov.cols()),
                });
            }
            let l = cholesky(cov)?;
            let log_det: f64 = (0..d).map(|i| 2.0 * l.get(i, i).ln()).sum();
            log_norm.push(-0.5 * (d as f64 * (2.0 * PI).ln() + log_det));
            chol.push(l);
        }
        Ok(MixtureSpec {
            means,
            covariances,
            chol,
            log_norm,
        })
    }

    /// Isotropic classes sharing one variance.
    pub fn isotropic(means: Vec<Vec<f64>>, variance: f64) -> Result<Self> {
        let d = means.first().map_or(0, Vec::len);
        let mut cov = Matrix::zeros(d, d);
        for i in 0..d {
            cov.set(i, i, variance);
        }
        let covs = vec![cov; means.len()];
        MixtureSpec::new(means, covs)
    }

    /// `k` unit-covariance classes in the plane with means equally spaced on a
    /// circle of the given radius. Class 1 sits at angle 0.
    pub fn circle(k: usize, radius: f64) -> Result<Self> {
        let means = (0..k)
            .map(|y| {
                let a = 2.0 * PI * y as f64 / k as f64;
                vec![radius * a.cos(), radius * a.sin()]
            })
            .collect();
        MixtureSpec::isotropic(means, 1.0)
    }

    /// Two unit-variance classes on the line with means -1 and +1.
    pub fn two_class_line() -> Self {
        MixtureSpec::isotropic(vec![vec![-1.0], vec![1.0]], 1.0).expect("valid benchmark")
    }

    pub fn class_count(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn mean(&self, y: usize) -> &[f64] {
        &self.means[y]
    }

    pub fn covariance(&self, y: usize) -> &Matrix {
        &self.covariances[y]
    }

    /// The common variance when the mixture lives on the line and all classes
    /// share it; such mixtures admit closed-form Bayes risks.
    pub fn shared_line_variance(&self) -> Option<f64> {
        if self.dim() != 1 {
            return None;
        }
        let v = self.covariances[0].get(0, 0);
        self.covariances
            .iter()
            .all(|c| c.get(0, 0) == v)
            .then_some(v)
    }

    pub fn log_density(&self, y: usize, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.means[y]).map(|(a, b)| a - b).collect();
        let z = forward_substitute(&self.chol[y], &diff);
        self.log_norm[y] - 0.5 * dot(&z, &z)
    }

    pub fn sample_class<R: Rng + ?Sized>(&self, y: usize, rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let l = &self.chol[y];
        for i in 0..d {
            let mut s = self.means[y][i];
            for k in 0..=i {
                s += l.get(i, k) * z[k];
            }
            out[i] = s;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceKind {
    LongTail,
    Step,
}

/// How per-class counts shrink from head to tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceProfile {
    pub kind: ImbalanceKind,
    /// Tail-to-head (long tail) or minor-to-major (step) count ratio.
    pub ratio: f64,
    /// `N_1` for long tail, `N_major` for step.
    pub base_count: usize,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Per-class training counts for an imbalance profile.
///
/// Long tail: `N_y = round(ρ^((y-1)/(K-1)) · N_1)`. Step: the first `⌈K/2⌉`
/// classes get `round(ρ · N_major)`, the rest `N_major`. Rounding is half-up.
pub fn make_imbalance_counts(profile: &ImbalanceProfile, k: usize) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    let rho = profile.ratio;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid(format!("imbalance ratio must lie in (0, 1], got {rho}")));
    }
    let base = profile.base_count as f64;
    let counts: Vec<usize> = match profile.kind {
        ImbalanceKind::LongTail => (0..k)
            .map(|y| round_half_up(rho.powf(y as f64 / (k - 1) as f64) * base))
            .collect(),
        ImbalanceKind::Step => {
            let minor = round_half_up(rho * base);
            let n_minor = k.div_ceil(2);
            (0..k)
                .map(|y| if y < n_minor { minor } else { profile.base_count })
                .collect()
        }
    };
    if let Some(y) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("class {} rounds to zero samples", y + 1)));
    }
    Ok(counts)
}

/// Labeled instances with zero-based class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: features.rows(),
                found: labels.len(),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::invalid(format!(
                "label {} outside 1..={class_count}",
                y + 1
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn per_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Empirical training prior `N_y / N`.
    pub fn prior(&self) -> Result<Prior> {
        Prior::from_counts(&self.per_class_counts())
    }

    /// Row indices grouped by class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut idx = vec![Vec::new(); self.class_count];
        for (i, &y) in self.labels.iter().enumerate() {
            idx[y].push(i);
        }
        idx
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Fails if any class has no samples.
    pub fn require_all_classes(&self) -> Result<()> {
        match self.per_class_counts().iter().position(|&c| c == 0) {
            Some(class) => Err(Error::MissingClass { class }),
            None => Ok(()),
        }
    }
}

/// Draws exactly `counts[y]` samples from each class, class by class.
/// Each class uses its own seeded stream, so class `y`'s samples do not depend
/// on the other counts.
pub fn sample_mixture(spec: &MixtureSpec, counts: &[usize], seed: u64) -> Result<LabeledDataset> {
    let k = spec.class_count();
    if counts.len() != k {
        return Err(Error::DimensionMismatch {
            context: "class counts",
            expected: k,
            found: counts.len(),
        });
    }
    let d = spec.dim();
    let total: usize = counts.iter().sum();
    let mut data = vec![0.0; total * d];
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for (y, &n) in counts.iter().enumerate() {
        let mut rng = seed::rng(seed, tags::SAMPLE, y as u64);
        for _ in 0..n {
            spec.sample_class(y, &mut rng, &mut data[row * d..(row + 1) * d]);
            labels.push(y);
            row += 1;
        }
    }
    LabeledDataset::new(Matrix::from_vec(total, d, data)?, labels, k)
}

/// `D_model` / `D_prior` pair.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub model_part: LabeledDataset,
    pub prior_part: LabeledDataset,
}

/// Stratified split: per class, `floor(fraction · N_y)` (at least one) samples
/// go to the model part and the remainder to the prior part.
pub fn partition_dataset(ds: &LabeledDataset, model_fraction: f64, seed: u64) -> Result<SplitDataset> {
    if !(model_fraction > 0.0 && model_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "model fraction must lie in (0, 1), got {model_fraction}"
        )));
    }
    let mut model_idx = Vec::new();
    let mut prior_idx = Vec::new();
    for (y, mut idx) in ds.class_indices().into_iter().enumerate() {
        let n = idx.len();
        if n < 2 {
            return Err(Error::invalid(format!(
                "class {} has {n} samples; partitioning needs at least 2",
                y + 1
            )));
        }
        let mut rng = seed::rng(seed, tags::PARTITION, y as u64);
        idx.shuffle(&mut rng);
        // the epsilon absorbs products such as 0.57 * 100 = 56.99999999999999
        let take = ((model_fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
        model_idx.extend_from_slice(&idx[..take]);
        prior_idx.extend_from_slice(&idx[take..]);
    }
    Ok(SplitDataset {
        model_part: ds.subset(&model_idx),
        prior_part: ds.subset(&prior_idx),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Skip one header line.
    pub header: bool,
}

/// Parses `features..., label` rows with one-based integer labels.
pub fn read_csv_dataset<R: Read>(reader: R, schema: &CsvSchema) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let first_row = if schema.header { 2 } else { 1 };
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (i, rec) in rdr.records().enumerate() {
        let row = first_row + i;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if rec.len() < 2 {
            return Err(Error::Parse {
                row,
                message: "need at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {w} columns, found {}", rec.len()),
                })
            }
            _ => {}
        }
        let fields: Vec<&str> = rec.iter().collect();
        let (label_field, feature_fields) = fields.split_last().expect("length checked above");
        for f in feature_fields {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                row,
                message: format!("non-numeric feature `{f}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("non-finite feature `{f}`"),
                });
            }
            features.push(v);
        }
        let label: i64 = label_field.parse().map_err(|_| Error::Parse {
            row,
            message: format!("label `{label_field}` is not an integer"),
        })?;
        if label < 1 {
            return Err(Error::Parse {
                row,
                message: format!("label {label} must be at least 1"),
            });
        }
        labels.push(label as usize - 1);
    }
    let Some(w) = width else {
        return Err(Error::Empty("CSV dataset has no rows".into()));
    };
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let n = labels.len();
    LabeledDataset::new(Matrix::from_vec(n, w - 1, features)?, labels, k)
}

pub fn load_csv_dataset(path: &Path, schema: &CsvSchema) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    read_csv_dataset(std::io::BufReader::new(file), schema)
}

/// Writes the dataset in the same layout `read_csv_dataset` accepts.
pub fn write_csv_dataset<W: Write>(writer: W, ds: &LabeledDataset) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features.row(i).iter().map(|&v| format_real(v)).collect();
        rec.push((ds.labels[i] + 1).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// 17 significant digits, '.' decimal separator; round-trips every f64.
pub fn format_real(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    format!("{x:.16e}")
}
