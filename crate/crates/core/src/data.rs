//! Labeled datasets, synthetic conditional distributions with exact oracles,
//! CSV + manifest IO and minority-label replication.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::vicinal::{distinct_sorted, LabelSet};
use crate::{fmt_f64, Error, Result};

/// Paired `(sample, normalized label)` records.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<Vec<f64>>,
    labels: LabelSet,
    dim: usize,
    spec: Option<SyntheticSpec>,
}

impl LabeledDataset {
    pub fn new(samples: Vec<Vec<f64>>, labels: LabelSet) -> Result<Self> {
        let dim = samples.first().map(Vec::len).unwrap_or(0);
        Self::with_dim(dim, samples, labels)
    }

    pub fn with_dim(dim: usize, samples: Vec<Vec<f64>>, labels: LabelSet) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.len() != dim) {
            return Err(Error::Shape(format!(
                "sample {i} has dimension {}, expected {dim}",
                s.len()
            )));
        }
        Ok(LabeledDataset {
            samples,
            labels,
            dim,
            spec: None,
        })
    }

    pub fn empty(dim: usize, raw_min: f64, raw_max: f64) -> Result<Self> {
        Self::with_dim(
            dim,
            Vec::new(),
            LabelSet::new(Vec::new(), raw_min, raw_max)?,
        )
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i]
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels.labels()[i]
    }

    pub fn spec(&self) -> Option<&SyntheticSpec> {
        self.spec.as_ref()
    }

    pub fn with_spec(mut self, spec: Option<SyntheticSpec>) -> Self {
        self.spec = spec;
        self
    }

    pub fn push(&mut self, sample: Vec<f64>, label: f64) -> Result<()> {
        if sample.len() != self.dim {
            return Err(Error::Shape(format!(
                "sample dimension {} does not match dataset dimension {}",
                sample.len(),
                self.dim
            )));
        }
        if !(0.0..=1.0).contains(&label) {
            return Err(Error::InvalidArgument(format!(
                "normalized label {label} outside [0, 1]"
            )));
        }
        self.samples.push(sample);
        self.labels.push(label);
        Ok(())
    }

    /// Sorted distinct normalized labels.
    pub fn distinct_labels(&self) -> Vec<f64> {
        distinct_sorted(self.labels.labels())
    }

    /// Indices whose label lies in `[center - radius, center + radius]`.
    pub fn window(&self, center: f64, radius: f64) -> Vec<usize> {
        crate::vicinal::hard_vicinity(self.labels.labels(), center, radius)
    }
}

/// Conditional distribution family of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `x | y ~ N(m(y), s^2 I)`.
    GaussianPath,
    /// Equal-weight mixture of `N(m(y), s^2 I)` and `N(-m(y), s^2 I)`.
    TwoMode,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::GaussianPath => "gaussian-path",
            Family::TwoMode => "two-mode",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian-path" => Ok(Family::GaussianPath),
            "two-mode" => Ok(Family::TwoMode),
            other => Err(Error::InvalidArgument(format!("unknown family {other:?}"))),
        }
    }
}

/// One coordinate of the mean path:
/// `amp * sin(2 pi freq y + phase) + slope * y + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathTerm {
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
    pub slope: f64,
    pub offset: f64,
}

impl PathTerm {
    pub fn eval(&self, y: f64) -> f64 {
        self.amp * (2.0 * PI * self.freq * y + self.phase).sin() + self.slope * y + self.offset
    }
}

/// Parameters of a synthetic label-conditional dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub family: Family,
    /// One term per sample coordinate.
    pub path: Vec<PathTerm>,
    pub noise: f64,
    pub n_labels: usize,
    pub per_label: usize,
    /// Fraction of distinct labels withheld from training.
    pub holdout: f64,
    pub raw_min: f64,
    pub raw_max: f64,
}

impl Default for SyntheticSpec {
    /// Two-dimensional arc of radius 2 sweeping 270 degrees; 60 labels with 10
    /// samples each on the raw range `[1, 60]`, half of the labels held out.
    fn default() -> Self {
        SyntheticSpec {
            family: Family::GaussianPath,
            path: vec![
                PathTerm {
                    amp: 2.0,
                    freq: 0.75,
                    phase: PI / 2.0,
                    slope: 0.0,
                    offset: 0.0,
                },
                PathTerm {
                    amp: 2.0,
                    freq: 0.75,
                    phase: 0.0,
                    slope: 0.0,
                    offset: 0.0,
                },
            ],
            noise: 0.1,
            n_labels: 60,
            per_label: 10,
            holdout: 0.5,
            raw_min: 1.0,
            raw_max: 60.0,
        }
    }
}

/// Grid resolution used to invert the mean path.
const PATH_GRID: usize = 4000;

impl SyntheticSpec {
    pub fn dim(&self) -> usize {
        self.path.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.path.is_empty() {
            return Err(Error::InvalidArgument(
                "mean path has no coordinates".into(),
            ));
        }
        if !(self.noise > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise scale must be positive, got {}",
                self.noise
            )));
        }
        if self.n_labels < 2 {
            return Err(Error::TooFew {
                what: "distinct labels",
                need: 2,
                got: self.n_labels,
            });
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::InvalidArgument(format!(
                "holdout fraction must be in [0, 1), got {}",
                self.holdout
            )));
        }
        if !(self.raw_max > self.raw_min) {
            return Err(Error::DegenerateRange {
                min: self.raw_min,
                max: self.raw_max,
            });
        }
        Ok(())
    }

    pub fn mean_path(&self, y: f64) -> Vec<f64> {
        self.path.iter().map(|t| t.eval(y)).collect()
    }

    /// Exact first two moments of `x | y`.
    pub fn moments(&self, y: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let m = self.mean_path(y);
        let d = m.len();
        let s2 = self.noise * self.noise;
        let mut cov = vec![vec![0.0; d]; d];
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] = s2;
        }
        match self.family {
            Family::GaussianPath => (m, cov),
            Family::TwoMode => {
                for i in 0..d {
                    for j in 0..d {
                        cov[i][j] += m[i] * m[j];
                    }
                }
                (vec![0.0; d], cov)
            }
        }
    }

    /// Normalized label whose mean path point (or mirrored point) is nearest to `x`.
    pub fn predict_label(&self, x: &[f64]) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=PATH_GRID {
            let y = k as f64 / PATH_GRID as f64;
            let m = self.mean_path(y);
            let mut d_pos = 0.0;
            let mut d_neg = 0.0;
            for (a, b) in x.iter().zip(&m) {
                d_pos += (a - b) * (a - b);
                d_neg += (a + b) * (a + b);
            }
            let d = match self.family {
                Family::GaussianPath => d_pos,
                Family::TwoMode => d_pos.min(d_neg),
            };
            if d < best.0 {
                best = (d, y);
            }
        }
        best.1
    }

    /// Mode index (0 for `m(y)`, 1 for `-m(y)`) nearest to `x`.
    pub fn nearest_mode(&self, x: &[f64], y: f64) -> usize {
        let m = self.mean_path(y);
        let dot: f64 = x.iter().zip(&m).map(|(a, b)| a * b).sum();
        usize::from(dot < 0.0)
    }

    fn draw<R: Rng + ?Sized>(&self, y: f64, rng: &mut R) -> Vec<f64> {
        let m = self.mean_path(y);
        let sign = match self.family {
            Family::GaussianPath => 1.0,
            Family::TwoMode => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        m.iter()
            .map(|&mi| {
                let e: f64 = StandardNormal.sample(rng);
                sign * mi + self.noise * e
            })
            .collect()
    }

    /// Distinct normalized labels on an even grid.
    pub fn label_grid(&self) -> Vec<f64> {
        (0..self.n_labels)
            .map(|k| k as f64 / (self.n_labels - 1) as f64)
            .collect()
    }

    pub fn to_manifest(&self, m: &mut Manifest) {
        m.insert("family", self.family.as_str());
        m.insert("noise", fmt_f64(self.noise));
        m.insert("n_labels", self.n_labels.to_string());
        m.insert("per_label", self.per_label.to_string());
        m.insert("holdout", fmt_f64(self.holdout));
        m.insert("mean_path", format_path(&self.path));
    }

    pub fn from_manifest(m: &Manifest, raw_min: f64, raw_max: f64) -> Result<Option<Self>> {
        let Some(family) = m.get("family") else {
            return Ok(None);
        };
        let spec = SyntheticSpec {
            family: Family::parse(family)?,
            path: parse_path(m.require("mean_path")?)?,
            noise: m.parse_f64("noise")?,
            n_labels: m.parse_usize("n_labels")?,
            per_label: m.parse_usize("per_label")?,
            holdout: m.parse_f64("holdout")?,
            raw_min,
            raw_max,
        };
        spec.validate()?;
        Ok(Some(spec))
    }
}

/// `amp:freq:phase:slope:offset` per coordinate, joined by `;`.
pub fn format_path(path: &[PathTerm]) -> String {
    path.iter()
        .map(|t| {
            [t.amp, t.freq, t.phase, t.slope, t.offset]
                .iter()
                .map(|v| fmt_f64(*v))
                .collect::<Vec<_>>()
                .join(":")
        })
        .collect::<Vec<_>>()
        .join(";")
}

pub fn parse_path(s: &str) -> Result<Vec<PathTerm>> {
    s.split(';')
        .map(|term| {
            let v: Vec<f64> = term
                .split(':')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("mean path term {term:?}: {e}")))?;
            if v.len() != 5 {
                return Err(Error::InvalidArgument(format!(
                    "mean path term {term:?} needs 5 fields amp:freq:phase:slope:offset"
                )));
            }
            Ok(PathTerm {
                amp: v[0],
                freq: v[1],
                phase: v[2],
                slope: v[3],
                offset: v[4],
            })
        })
        .collect()
}

/// Ground-truth moments for a synthetic spec.
#[derive(Debug, Clone)]
pub struct Oracle {
    spec: SyntheticSpec,
}

impl Oracle {
    pub fn new(spec: SyntheticSpec) -> Self {
        Oracle { spec }
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn moments(&self, y: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.spec.moments(y)
    }
}

/// Draws train and held-out sets; held-out labels are interior grid labels and
/// never appear in the training set.
pub fn generate<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Result<(LabeledDataset, LabeledDataset, Oracle)> {
    spec.validate()?;
    let grid = spec.label_grid();
    let n_hold = ((spec.holdout * spec.n_labels as f64).round() as usize)
        .min(spec.n_labels.saturating_sub(2));
    let mut interior: Vec<usize> = (1..spec.n_labels - 1).collect();
    interior.shuffle(rng);
    let mut held = vec![false; spec.n_labels];
    for &k in interior.iter().take(n_hold) {
        held[k] = true;
    }

    let d = spec.dim();
    let mut train = LabeledDataset::empty(d, spec.raw_min, spec.raw_max)?;
    let mut heldout = LabeledDataset::empty(d, spec.raw_min, spec.raw_max)?;
    for (k, &y) in grid.iter().enumerate() {
        let target = if held[k] { &mut heldout } else { &mut train };
        for _ in 0..spec.per_label {
            target.push(spec.draw(y, rng), y)?;
        }
    }
    Ok((
        train.with_spec(Some(spec.clone())),
        heldout.with_spec(Some(spec.clone())),
        Oracle::new(spec.clone()),
    ))
}

/// Appends resampled copies so every distinct label has at least
/// `min_per_label` samples.
pub fn replicate_minority<R: Rng + ?Sized>(
    data: &LabeledDataset,
    min_per_label: usize,
    rng: &mut R,
) -> Result<LabeledDataset> {
    if min_per_label == 0 {
        return Err(Error::InvalidArgument("min_per_label must be >= 1".into()));
    }
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, y) in data.labels().labels().iter().enumerate() {
        groups.entry(y.to_bits()).or_default().push(i);
    }
    let mut out = data.clone();
    for idx in groups.values() {
        for _ in idx.len()..min_per_label {
            let i = idx[rng.random_range(0..idx.len())];
            out.push(data.sample(i).to_vec(), data.label(i))?;
        }
    }
    Ok(out)
}

/// Ordered `key: value` text records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces an existing key in place or appends it.
    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        if let Some(e) = self.entries.iter_mut().find(|(k, _)| *k == key) {
            e.1 = value;
        } else {
            self.entries.push((key, value));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::InvalidArgument(format!("manifest is missing {key:?}")))
    }

    pub fn parse_f64(&self, key: &str) -> Result<f64> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|e| Error::InvalidArgument(format!("manifest key {key}: {v:?}: {e}")))
    }

    pub fn parse_usize(&self, key: &str) -> Result<usize> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|e| Error::InvalidArgument(format!("manifest key {key}: {v:?}: {e}")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}: {v}");
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut m = Manifest::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once(':').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: "expected `key: value`".into(),
            })?;
            m.insert(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Sidecar manifest path of a CSV file (`train.csv` -> `train.manifest`).
pub fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest")
}

/// Writes `y,x1,...,xd` rows with raw labels and the sidecar manifest.
pub fn save_csv(data: &LabeledDataset, path: &Path) -> Result<()> {
    let mut s = String::from("y");
    for k in 1..=data.dim() {
        let _ = write!(s, ",x{k}");
    }
    s.push('\n');
    for (i, x) in data.samples().iter().enumerate() {
        s.push_str(&fmt_f64(data.labels().to_raw(data.label(i))));
        for v in x {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))?;

    let mut m = Manifest::new();
    m.insert("raw_min", fmt_f64(data.labels().raw_min()));
    m.insert("raw_max", fmt_f64(data.labels().raw_max()));
    m.insert("dim", data.dim().to_string());
    if let Some(spec) = data.spec() {
        spec.to_manifest(&mut m);
    }
    m.write(&manifest_path(path))
}

/// Reads a CSV written by [`save_csv`], taking the label range from its
/// sidecar manifest.
pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let m = Manifest::read(&manifest_path(path))?;
    let raw_min = m.parse_f64("raw_min")?;
    let raw_max = m.parse_f64("raw_max")?;
    let data = load_csv_with_range(path, raw_min, raw_max)?;
    if let Ok(dim) = m.parse_usize("dim") {
        if dim != data.dim() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("header has {} coordinates, manifest says {dim}", data.dim()),
            });
        }
    }
    let spec = SyntheticSpec::from_manifest(&m, raw_min, raw_max)?;
    Ok(data.with_spec(spec))
}

/// Reads a CSV of raw labels, normalizing with the given range.
pub fn load_csv_with_range(path: &Path, raw_min: f64, raw_max: f64) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path, raw_min, raw_max)
}

fn parse_csv(text: &str, path: &Path, raw_min: f64, raw_max: f64) -> Result<LabeledDataset> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let dim = cols.len().saturating_sub(1);
    let expected = (1..=dim).all(|k| cols[k] == format!("x{k}"));
    if cols[0] != "y" || dim == 0 || !expected {
        return Err(err(
            1,
            format!("expected header `y,x1,...,xd`, got {header:?}"),
        ));
    }
    let mut data =
        LabeledDataset::empty(dim, raw_min, raw_max).map_err(|e| err(1, e.to_string()))?;
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(lineno, format!("bad number: {e}")))?;
        if vals.len() != dim + 1 {
            return Err(err(
                lineno,
                format!("expected {} fields, got {}", dim + 1, vals.len()),
            ));
        }
        let raw = vals[0];
        if !(raw_min..=raw_max).contains(&raw) {
            return Err(err(
                lineno,
                format!("label {raw} outside [{raw_min}, {raw_max}]"),
            ));
        }
        let y = ((raw - raw_min) / (raw_max - raw_min)).clamp(0.0, 1.0);
        data.push(vals[1..].to_vec(), y)
            .map_err(|e| err(lineno, e.to_string()))?;
    }
    Ok(data)
}
