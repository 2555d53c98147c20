//! Domain datasets: CSV ingestion, stratified splits, standardization, and a
//! seeded synthetic multi-domain generator.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{input, param, Error, Result};

pub const LABEL_COLUMN: &str = "label";

/// Feature vectors of one domain, optionally labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    name: String,
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
}

impl DomainDataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let name = name.into();
        if let Some(l) = &labels {
            if l.len() != features.nrows() {
                return Err(input(format!(
                    "{name}: {} labels for {} rows",
                    l.len(),
                    features.nrows()
                )));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(input(format!("{name}: features must be finite")));
        }
        Ok(Self {
            name,
            features,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// One past the largest label, if labelled.
    pub fn label_count(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Sorted distinct labels.
    pub fn label_set(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|l| {
            let mut s = l.clone();
            s.sort_unstable();
            s.dedup();
            s
        })
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Self {
        Self {
            name: name.into(),
            features: self.features.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&k| l[k]).collect()),
        }
    }

    /// Writes a header `f0,…,f{d-1}[,label]` followed by one row per sample.
    /// Values use the shortest representation that parses back exactly.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let mut header: Vec<String> = (0..self.feature_dim()).map(|j| format!("f{j}")).collect();
        if self.labels.is_some() {
            header.push(LABEL_COLUMN.to_owned());
        }
        writeln!(out, "{}", header.join(","))?;
        for (k, row) in self.features.axis_iter(Axis(0)).enumerate() {
            let mut line = row
                .iter()
                .map(|v| format!("{v:?}"))
                .collect::<Vec<_>>()
                .join(",");
            if let Some(l) = &self.labels {
                line.push(',');
                line.push_str(&l[k].to_string());
            }
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads a CSV dataset named after the file stem. A trailing `label` header
/// column marks the file as labelled.
pub fn load_csv(path: impl AsRef<Path>) -> Result<DomainDataset> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let parse_err = |line: u64, message: String| Error::Parse {
        path: shown.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(&shown, e))?;
    let header = reader.headers().map_err(|e| csv_error(&shown, e))?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(parse_err(1, "empty file or missing header".into()));
    }
    let labelled = header.iter().next_back() == Some(LABEL_COLUMN);
    let dim = header.len() - usize::from(labelled);
    if dim == 0 {
        return Err(parse_err(1, "no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&shown, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!(
                    "row has {} values, header has {}",
                    record.len(),
                    header.len()
                ),
            ));
        }
        for (j, cell) in record.iter().take(dim).enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(
                    line,
                    format!("column {}: {cell:?} is not a number", header[j].to_owned()),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("column {}: non-finite value", &header[j]),
                ));
            }
            values.push(v);
        }
        if labelled {
            let cell = &record[dim];
            let y: usize = cell
                .parse()
                .map_err(|_| parse_err(line, format!("label {cell:?} is not a class index")))?;
            labels.push(y);
        }
    }
    let n = values.len() / dim;
    if n == 0 {
        return Err(parse_err(1, "no data rows".into()));
    }
    let features = Array2::from_shape_vec((n, dim), values).expect("row lengths were checked");
    let name = path.file_stem().map_or_else(
        || "dataset".to_owned(),
        |s| s.to_string_lossy().into_owned(),
    );
    DomainDataset::new(name, features, labelled.then_some(labels))
}

fn csv_error(path: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            path: path.to_owned(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Fraction of each class that goes to the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: DomainDataset,
    pub test: DomainDataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub warnings: Vec<String>,
}

/// `⌈f·n⌉`, tolerant of representation error in `f·n`.
fn ceil_fraction(f: f64, n: usize) -> usize {
    ((f * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Stratified, seeded split with `⌈f·N⌉` training rows overall.
///
/// Each class receives `⌊f·n_c⌋` training rows; the remaining training slots go
/// to the classes with the largest fractional remainders (lowest class index on
/// ties). A class with a single sample is placed in the training split.
pub fn split(ds: &DomainDataset, spec: &SplitSpec) -> Result<Split> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(param(format!(
            "train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let n = ds.len();
    if n < 2 {
        return Err(input(format!("{}: cannot split {n} samples", ds.name())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let f = spec.train_fraction;
    let mut warnings = Vec::new();

    let groups: Vec<Vec<usize>> = match ds.labels() {
        None => vec![(0..n).collect()],
        Some(labels) => {
            let classes = ds.label_count().unwrap_or(0);
            let mut g = vec![Vec::new(); classes];
            for (k, &y) in labels.iter().enumerate() {
                g[y].push(k);
            }
            g
        }
    };

    let target = ceil_fraction(f, n);
    let mut quota: Vec<usize> = Vec::with_capacity(groups.len());
    for (c, g) in groups.iter().enumerate() {
        if g.len() == 1 {
            let msg = format!(
                "{}: class {c} has a single sample; placed in train",
                ds.name()
            );
            log::warn!("{msg}");
            warnings.push(msg);
            quota.push(1);
        } else {
            quota.push((f * g.len() as f64 + 1e-9).floor() as usize);
        }
    }
    let assigned: usize = quota.iter().sum();
    if assigned < target {
        let mut order: Vec<usize> = (0..groups.len())
            .filter(|&c| groups[c].len() > 1 && quota[c] < groups[c].len())
            .collect();
        let remainder = |c: usize| f * groups[c].len() as f64 - quota[c] as f64;
        order.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)).then(a.cmp(&b)));
        for &c in order.iter().cycle().take(target - assigned) {
            if quota[c] < groups[c].len() {
                quota[c] += 1;
            }
        }
    }

    let mut train_indices = Vec::with_capacity(target);
    let mut test_indices = Vec::with_capacity(n - target);
    for (g, &q) in groups.iter().zip(&quota) {
        let mut members = g.clone();
        members.shuffle(&mut rng);
        train_indices.extend_from_slice(&members[..q]);
        test_indices.extend_from_slice(&members[q..]);
    }
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(Split {
        train: ds.subset(format!("{}_train", ds.name()), &train_indices),
        test: ds.subset(format!("{}_test", ds.name()), &test_indices),
        train_indices,
        test_indices,
        warnings,
    })
}

/// Per-feature z-scoring statistics. Features whose spread is negligible map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Two-pass population mean and standard deviation.
    pub fn fit(ds: &DomainDataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(input(format!(
                "{}: cannot fit statistics on an empty set",
                ds.name()
            )));
        }
        let n = ds.len() as f64;
        let mean: Array1<f64> = ds.features.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(ds.feature_dim());
        for row in ds.features.axis_iter(Axis(0)) {
            for ((v, &x), &m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                *v += (x - m) * (x - m);
            }
        }
        Ok(Self {
            std: var.iter().map(|v| (v / n).sqrt()).collect(),
            mean: mean.to_vec(),
        })
    }

    fn is_constant(&self, j: usize) -> bool {
        self.std[j] <= 1e-12 * (1.0 + self.mean[j].abs())
    }

    pub fn apply(&self, ds: &DomainDataset) -> Result<DomainDataset> {
        if ds.feature_dim() != self.mean.len() {
            return Err(crate::error::shape(format!(
                "{}: {} features, statistics cover {}",
                ds.name(),
                ds.feature_dim(),
                self.mean.len()
            )));
        }
        let mut features = ds.features.clone();
        for mut row in features.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if self.is_constant(j) {
                    0.0
                } else {
                    (*v - self.mean[j]) / self.std[j]
                };
            }
        }
        Ok(DomainDataset {
            features,
            ..ds.clone()
        })
    }
}

/// Fits statistics on `fit_on` and applies them to it and to `others`.
pub fn standardize(
    fit_on: &DomainDataset,
    others: &[DomainDataset],
) -> Result<(DomainDataset, Vec<DomainDataset>, Standardizer)> {
    let stats = Standardizer::fit(fit_on)?;
    let fitted = stats.apply(fit_on)?;
    let rest = others
        .iter()
        .map(|d| stats.apply(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((fitted, rest, stats))
}

/// Placement of the shared class means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClassLayout {
    /// Independent random directions, each scaled to `radius`.
    Random { radius: f64 },
    /// Evenly spaced on a circle of `radius` in the first two coordinates.
    Ring { radius: f64 },
}

/// Affine shift applied to a domain: `x ↦ scale · R x + shift · σ · u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainTransform {
    /// Rotation angle in degrees within a 2-D plane.
    pub rotation_deg: f64,
    /// Coordinate axes spanning the rotation plane; the shared random plane when absent.
    pub rotation_plane: Option<[usize; 2]>,
    /// Translation length in units of the class standard deviation.
    pub shift: f64,
    /// Translation direction (normalized on use); the shared random direction when absent.
    pub shift_direction: Option<Vec<f64>>,
    pub scale: f64,
}

impl Default for DomainTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl DomainTransform {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            rotation_plane: None,
            shift: 0.0,
            shift_direction: None,
            scale: 1.0,
        }
    }

    pub fn rotated(rotation_deg: f64, shift: f64) -> Self {
        Self {
            rotation_deg,
            shift,
            ..Self::identity()
        }
    }

    pub fn scaled(rotation_deg: f64, shift: f64, scale: f64) -> Self {
        Self {
            scale,
            ..Self::rotated(rotation_deg, shift)
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad(format!(
                "transform scale must be positive, got {}",
                self.scale
            ));
        }
        if !self.rotation_deg.is_finite() || !self.shift.is_finite() {
            return bad("transform parameters must be finite".into());
        }
        if let Some([a, b]) = self.rotation_plane {
            if a == b || a >= dim || b >= dim {
                return bad(format!(
                    "rotation plane [{a}, {b}] is invalid for {dim} features"
                ));
            }
        }
        if self.rotation_deg != 0.0 && dim < 2 {
            return bad("rotation needs at least two features".into());
        }
        if let Some(u) = &self.shift_direction {
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if u.len() != dim || norm <= 0.0 || !norm.is_finite() {
                return bad(
                    "shift_direction must be a nonzero vector of feature_dim entries".into(),
                );
            }
        }
        Ok(())
    }
}

/// Shared-label Gaussian classes observed through per-domain affine transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDomainConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    pub class_layout: ClassLayout,
    /// Isotropic per-class standard deviation σ.
    pub class_std: f64,
    pub sources: Vec<DomainTransform>,
    pub new_domain: DomainTransform,
    pub seed: u64,
}

impl Default for SyntheticDomainConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            feature_dim: 10,
            samples_per_class: 200,
            class_layout: ClassLayout::Random { radius: 4.0 },
            class_std: 1.0,
            // One source close to the new domain and two increasingly distant,
            // spread-out ones; the far sources are weak and uncertain there.
            sources: vec![
                DomainTransform::scaled(10.0, 0.5, 1.0),
                DomainTransform::scaled(80.0, 1.5, 1.3),
                DomainTransform::scaled(110.0, 2.0, 2.0),
            ],
            new_domain: DomainTransform::identity(),
            seed: 0,
        }
    }
}

impl SyntheticDomainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if self.feature_dim == 0 || self.samples_per_class == 0 {
            return bad("feature_dim and samples_per_class must be positive");
        }
        if !(self.class_std > 0.0 && self.class_std.is_finite()) {
            return bad("class_std must be positive");
        }
        let radius = match self.class_layout {
            ClassLayout::Random { radius } | ClassLayout::Ring { radius } => radius,
        };
        if !radius.is_finite() || radius < 0.0 {
            return bad("class layout radius must be finite and nonnegative");
        }
        if matches!(self.class_layout, ClassLayout::Ring { .. }) && self.feature_dim < 2 {
            return bad("a ring layout needs at least two features");
        }
        if self.sources.len() < 2 {
            return bad("at least two source domains are required");
        }
        for t in self.sources.iter().chain([&self.new_domain]) {
            t.validate(self.feature_dim)?;
        }
        Ok(())
    }

    pub fn domain_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.sources.len())
            .map(|k| format!("source{k}"))
            .collect();
        names.push("new".to_owned());
        names
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

fn class_means(cfg: &SyntheticDomainConfig, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (c, d) = (cfg.num_classes, cfg.feature_dim);
    match cfg.class_layout {
        ClassLayout::Random { radius } => {
            let mut means = Array2::zeros((c, d));
            for mut row in means.axis_iter_mut(Axis(0)) {
                let u = normalized(&gaussian_vector(rng, d));
                row.assign(&(Array1::from(u) * radius));
            }
            means
        }
        ClassLayout::Ring { radius } => Array2::from_shape_fn((c, d), |(k, j)| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / c as f64;
            match j {
                0 => radius * angle.cos(),
                1 => radius * angle.sin(),
                _ => 0.0,
            }
        }),
    }
}

/// Matrix of the rotation by `angle` in the plane spanned by orthonormal `u`, `v`:
/// `I + (cos θ − 1)(uuᵀ + vvᵀ) + sin θ (vuᵀ − uvᵀ)`.
fn plane_rotation(u: &[f64], v: &[f64], angle: f64) -> Array2<f64> {
    let d = u.len();
    let (c, s) = (angle.cos(), angle.sin());
    Array2::from_shape_fn((d, d), |(a, b)| {
        let id = if a == b { 1.0 } else { 0.0 };
        id + (c - 1.0) * (u[a] * u[b] + v[a] * v[b]) + s * (v[a] * u[b] - u[a] * v[b])
    })
}

struct Affine {
    linear: Array2<f64>,
    offset: Array1<f64>,
}

/// Rotation plane and shift direction shared by every domain that does not
/// override them, so that transform magnitudes are comparable across domains.
struct SharedGeometry {
    plane: (Vec<f64>, Vec<f64>),
    direction: Vec<f64>,
}

impl SharedGeometry {
    fn draw(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let plane = if d >= 2 {
            // Gram-Schmidt on two Gaussian draws.
            let u = normalized(&gaussian_vector(rng, d));
            let w = gaussian_vector(rng, d);
            let dot: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
            let v = normalized(
                &w.iter()
                    .zip(&u)
                    .map(|(wi, ui)| wi - dot * ui)
                    .collect::<Vec<_>>(),
            );
            (u, v)
        } else {
            (vec![0.0; d], vec![0.0; d])
        };
        Self {
            plane,
            direction: normalized(&gaussian_vector(rng, d)),
        }
    }
}

fn domain_affine(
    t: &DomainTransform,
    cfg: &SyntheticDomainConfig,
    shared: &SharedGeometry,
) -> Affine {
    let d = cfg.feature_dim;
    let (u, v) = match t.rotation_plane {
        Some([a, b]) => {
            let mut u = vec![0.0; d];
            let mut v = vec![0.0; d];
            u[a] = 1.0;
            v[b] = 1.0;
            (u, v)
        }
        None => shared.plane.clone(),
    };
    let direction = match &t.shift_direction {
        Some(dir) => normalized(dir),
        None => shared.direction.clone(),
    };
    let rotation = plane_rotation(&u, &v, t.rotation_deg.to_radians());
    Affine {
        linear: rotation * t.scale,
        offset: Array1::from(direction) * (t.shift * cfg.class_std),
    }
}

/// Generates `sources.len()` source domains followed by the new domain, each with
/// `samples_per_class` labelled samples per class, sorted by class.
///
/// Class means and the shared rotation plane and shift direction come from one
/// seeded stream; each domain draws its samples from its own stream.
pub fn generate_domains(cfg: &SyntheticDomainConfig) -> Result<Vec<DomainDataset>> {
    cfg.validate()?;
    let mut mean_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means = class_means(cfg, &mut mean_rng);
    let shared = SharedGeometry::draw(cfg.feature_dim, &mut mean_rng);
    let transforms = cfg.sources.iter().chain([&cfg.new_domain]);
    transforms
        .zip(cfg.domain_names())
        .enumerate()
        .map(|(k, (t, name))| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64 + 1);
            let affine = domain_affine(t, cfg, &shared);
            let n = cfg.num_classes * cfg.samples_per_class;
            let mut features = Array2::zeros((n, cfg.feature_dim));
            let mut labels = Vec::with_capacity(n);
            for (c, mean) in means.axis_iter(Axis(0)).enumerate() {
                for s in 0..cfg.samples_per_class {
                    let z = sample_class(mean, cfg.class_std, &mut rng);
                    let x = affine.linear.dot(&z) + &affine.offset;
                    features.row_mut(c * cfg.samples_per_class + s).assign(&x);
                    labels.push(c);
                }
            }
            DomainDataset::new(name, features, Some(labels))
        })
        .collect()
}

fn sample_class(mean: ArrayView1<'_, f64>, std: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
    mean.mapv(|m| {
        let e: f64 = StandardNormal.sample(rng);
        m + std * e
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::collections::HashSet;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_labelled_and_unlabelled_csv() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_csv(write(&dir, "a.csv", "f0,f1,label\n1.5,2,0\n-3,4e-1,1\n")).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.labels(), Some(&[0, 1][..]));
        assert_eq!(ds.features(), &array![[1.5, 2.0], [-3.0, 0.4]]);
        assert_eq!(ds.name(), "a");

        let un = load_csv(write(&dir, "b.csv", "f0,f1\n1.5,2\n-3,4e-1\n")).unwrap();
        assert!(un.labels().is_none());
        assert_eq!(un.feature_dim(), 2);
    }

    #[test]
    fn ragged_row_is_reported_with_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_csv(write(&dir, "c.csv", "f0,f1\n1,2\n1,2,3\n")).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("3 values"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_empty_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_csv(write(&dir, "d.csv", "f0,f1\n1,x\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        assert!(matches!(
            load_csv(write(&dir, "e.csv", "")),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            load_csv(write(&dir, "f.csv", "f0,label\n")),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            load_csv(write(&dir, "g.csv", "f0,label\n1,-1\n")),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticDomainConfig {
            samples_per_class: 3,
            ..SyntheticDomainConfig::default()
        };
        let ds = generate_domains(&cfg).unwrap().remove(0);
        let p = dir.path().join("source0.csv");
        ds.write_csv(&p).unwrap();
        assert_eq!(load_csv(&p).unwrap(), ds);
    }

    fn labelled(labels: Vec<usize>) -> DomainDataset {
        let n = labels.len();
        DomainDataset::new(
            "d",
            Array2::from_shape_fn((n, 2), |(i, j)| (i + j) as f64),
            Some(labels),
        )
        .unwrap()
    }

    #[test]
    fn single_class_split_is_seventy_thirty() {
        let s = split(&labelled(vec![0; 10]), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 3));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let ds = labelled((0..37).map(|k| k % 4).collect());
        let spec = SplitSpec {
            train_fraction: 0.7,
            seed: 13,
        };
        let a = split(&ds, &spec).unwrap();
        let b = split(&ds, &spec).unwrap();
        assert_eq!(a.train_indices, b.train_indices);
        let all: HashSet<usize> = a
            .train_indices
            .iter()
            .chain(&a.test_indices)
            .copied()
            .collect();
        assert_eq!(all.len(), 37);
        assert_eq!(a.train_indices.len() + a.test_indices.len(), 37);
        assert_eq!(a.train.len(), 26); // ⌈25.9⌉
    }

    #[test]
    fn two_balanced_classes_split_stratified() {
        let ds = labelled(vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        let s = split(&ds, &SplitSpec::default()).unwrap();
        let labels = s.train.labels().unwrap();
        let per_class = [0, 1].map(|c| labels.iter().filter(|&&y| y == c).count());
        assert_eq!(per_class.iter().sum::<usize>(), 7);
        for count in per_class {
            assert!(count == 3 || count == 4, "{per_class:?}");
        }
    }

    #[test]
    fn singleton_class_goes_to_train_with_warning() {
        let ds = labelled(vec![0, 0, 0, 0, 1]);
        let s = split(&ds, &SplitSpec::default()).unwrap();
        assert!(s.train.labels().unwrap().contains(&1));
        assert_eq!(s.warnings.len(), 1);
        assert!(split(&labelled(vec![0]), &SplitSpec::default()).is_err());
    }

    #[test]
    fn standardization_matches_two_pass_oracle() {
        let ds = DomainDataset::new(
            "s",
            array![
                [1.0, 5.0, 2.0],
                [3.0, 5.0, -1.0],
                [8.0, 5.0, 0.5],
                [-2.0, 5.0, 4.0]
            ],
            None,
        )
        .unwrap();
        let stats = Standardizer::fit(&ds).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = ds.features().column(j).to_vec();
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
            assert!((stats.mean[j] - mean).abs() < 1e-12);
            assert!((stats.std[j] - var.sqrt()).abs() < 1e-12);
        }
        let z = stats.apply(&ds).unwrap();
        assert!(z.features().column(1).iter().all(|&v| v == 0.0));
        let (again, _, _) = standardize(&z, &[]).unwrap();
        for (a, b) in again.features().iter().zip(z.features().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn near_constant_columns_map_to_zero() {
        let ds = DomainDataset::new("c", array![[0.1], [0.1], [0.1]], None).unwrap();
        let (z, _, _) = standardize(&ds, &[]).unwrap();
        assert!(z.features().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generator_is_reproducible_with_exact_counts() {
        let cfg = SyntheticDomainConfig {
            samples_per_class: 20,
            ..SyntheticDomainConfig::default()
        };
        let a = generate_domains(&cfg).unwrap();
        let b = generate_domains(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        for ds in &a {
            let labels = ds.labels().unwrap();
            for c in 0..5 {
                assert_eq!(labels.iter().filter(|&&y| y == c).count(), 20);
            }
        }
        let other = generate_domains(&SyntheticDomainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a[0], other[0]);
    }

    #[test]
    fn rotation_is_orthogonal() {
        let u = normalized(&[1.0, 2.0, 0.0, -1.0]);
        let w = [0.5, -1.0, 3.0, 0.2];
        let dot: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
        let v = normalized(
            &w.iter()
                .zip(&u)
                .map(|(wi, ui)| wi - dot * ui)
                .collect::<Vec<_>>(),
        );
        let r = plane_rotation(&u, &v, 1.1);
        let rtr = r.t().dot(&r);
        for ((a, b), &x) in rtr.indexed_iter() {
            let id = if a == b { 1.0 } else { 0.0 };
            assert!((x - id).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_transforms_are_config_errors() {
        let mut cfg = SyntheticDomainConfig::default();
        cfg.new_domain.scale = 0.0;
        assert!(matches!(generate_domains(&cfg), Err(Error::Config(_))));
        let mut cfg = SyntheticDomainConfig::default();
        cfg.sources.truncate(1);
        assert!(matches!(generate_domains(&cfg), Err(Error::Config(_))));
        let mut cfg = SyntheticDomainConfig::default();
        cfg.sources[0].rotation_plane = Some([3, 3]);
        assert!(generate_domains(&cfg).is_err());
    }
}
