//! Label normalization, rule-of-thumb hyper-parameters, the label KDE and the
//! hard/soft vicinal conditional estimates.
//!
//! All labels handled here are normalized to `[0, 1]`; the original units are
//! kept on [`LabelSet`] so results can be mapped back.

use std::f64::consts::PI;

use crate::data::LabeledDataset;
use crate::{Error, Result};

/// Soft weights at or below this value are excluded when picking real samples.
pub const SOFT_WEIGHT_CUTOFF: f64 = 1e-3;

/// Half-width of the label window where `exp(-nu * d^2) > SOFT_WEIGHT_CUTOFF`.
pub fn soft_cutoff_radius(nu: f64) -> f64 {
    (-SOFT_WEIGHT_CUTOFF.ln() / nu).sqrt()
}

/// Normalized labels in `[0, 1]` together with the raw range they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    labels: Vec<f64>,
    raw_min: f64,
    raw_max: f64,
}

impl LabelSet {
    /// Wraps already-normalized labels.
    pub fn new(labels: Vec<f64>, raw_min: f64, raw_max: f64) -> Result<Self> {
        check_range(raw_min, raw_max)?;
        if let Some(bad) = labels.iter().find(|y| !(0.0..=1.0).contains(*y)) {
            return Err(Error::InvalidArgument(format!(
                "normalized label {bad} outside [0, 1]"
            )));
        }
        Ok(LabelSet {
            labels,
            raw_min,
            raw_max,
        })
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn raw_min(&self) -> f64 {
        self.raw_min
    }

    pub fn raw_max(&self) -> f64 {
        self.raw_max
    }

    pub fn raw_span(&self) -> f64 {
        self.raw_max - self.raw_min
    }

    pub fn to_raw(&self, y: f64) -> f64 {
        self.raw_min + y * (self.raw_max - self.raw_min)
    }

    pub fn to_normalized(&self, raw: f64) -> f64 {
        (raw - self.raw_min) / (self.raw_max - self.raw_min)
    }

    pub fn raw_labels(&self) -> Vec<f64> {
        self.labels.iter().map(|&y| self.to_raw(y)).collect()
    }

    /// Sorted distinct labels, same raw range.
    pub fn distinct(&self) -> LabelSet {
        LabelSet {
            labels: distinct_sorted(&self.labels),
            raw_min: self.raw_min,
            raw_max: self.raw_max,
        }
    }

    pub(crate) fn push(&mut self, y: f64) {
        self.labels.push(y);
    }
}

fn check_range(raw_min: f64, raw_max: f64) -> Result<()> {
    if !(raw_max > raw_min) || !raw_min.is_finite() || !raw_max.is_finite() {
        return Err(Error::DegenerateRange {
            min: raw_min,
            max: raw_max,
        });
    }
    Ok(())
}

pub(crate) fn distinct_sorted(labels: &[f64]) -> Vec<f64> {
    let mut out = labels.to_vec();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Maps raw labels affinely onto `[0, 1]`.
pub fn normalize_labels(raw: &[f64], raw_min: f64, raw_max: f64) -> Result<LabelSet> {
    check_range(raw_min, raw_max)?;
    let span = raw_max - raw_min;
    let mut labels = Vec::with_capacity(raw.len());
    for &r in raw {
        if !(raw_min..=raw_max).contains(&r) {
            return Err(Error::InvalidArgument(format!(
                "raw label {r} outside [{raw_min}, {raw_max}]"
            )));
        }
        labels.push(((r - raw_min) / span).clamp(0.0, 1.0));
    }
    Ok(LabelSet {
        labels,
        raw_min,
        raw_max,
    })
}

/// `sigma`, `kappa` and `nu` of the vicinal losses plus the multiplier used for
/// `kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VicinalParams {
    pub sigma: f64,
    pub kappa: f64,
    pub nu: f64,
    pub m_kappa: f64,
}

impl VicinalParams {
    pub fn new(sigma: f64, kappa: f64, nu: f64, m_kappa: f64) -> Result<Self> {
        for (name, v) in [
            ("sigma", sigma),
            ("kappa", kappa),
            ("nu", nu),
            ("m_kappa", m_kappa),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(VicinalParams {
            sigma,
            kappa,
            nu,
            m_kappa,
        })
    }

    /// All three values from the rule of thumb.
    pub fn rule_of_thumb(labels: &LabelSet, m_kappa: f64) -> Result<Self> {
        let sigma = rule_of_thumb_sigma(labels)?;
        let (kappa, nu) = kappa_and_nu(labels, m_kappa)?;
        VicinalParams::new(sigma, kappa, nu, m_kappa)
    }
}

/// Sample standard deviation with the `N - 1` denominator.
pub(crate) fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// KDE bandwidth `(4 s^5 / 3N)^(1/5)` of the normalized labels.
pub fn rule_of_thumb_sigma(labels: &LabelSet) -> Result<f64> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::TooFew {
            what: "labels",
            need: 2,
            got: n,
        });
    }
    let s = sample_std(labels.labels());
    Ok((4.0 * s.powi(5) / (3.0 * n as f64)).powf(0.2))
}

/// `kappa = m_kappa * max adjacent gap` of the distinct labels, `nu = 1 / kappa^2`.
///
/// Duplicates in `labels` are removed first, so any label set may be passed.
pub fn kappa_and_nu(labels: &LabelSet, m_kappa: f64) -> Result<(f64, f64)> {
    if !(m_kappa > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "m_kappa must be positive, got {m_kappa}"
        )));
    }
    let distinct = distinct_sorted(labels.labels());
    if distinct.len() < 2 {
        return Err(Error::TooFew {
            what: "distinct labels",
            need: 2,
            got: distinct.len(),
        });
    }
    let kappa_base = distinct
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0_f64, f64::max);
    let kappa = m_kappa * kappa_base;
    Ok((kappa, 1.0 / (kappa * kappa)))
}

/// Gaussian KDE of the label marginal at `y`.
pub fn kde_marginal(labels: &LabelSet, sigma: f64, y: f64) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::TooFew {
            what: "labels",
            need: 1,
            got: 0,
        });
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let two_var = 2.0 * sigma * sigma;
    let sum: f64 = labels
        .labels()
        .iter()
        .map(|&yj| (-(y - yj) * (y - yj) / two_var).exp())
        .sum();
    Ok(sum / (labels.len() as f64 * sigma * (2.0 * PI).sqrt()))
}

/// Indices with `|y - y_i| <= kappa`.
pub fn hard_vicinity(labels: &[f64], y: f64, kappa: f64) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &yi)| (y - yi).abs() <= kappa)
        .map(|(i, _)| i)
        .collect()
}

#[inline]
pub fn soft_weight(label: f64, y: f64, nu: f64) -> f64 {
    let d = label - y;
    (-nu * d * d).exp()
}

pub fn soft_weights(labels: &[f64], y: f64, nu: f64) -> Vec<f64> {
    labels.iter().map(|&yi| soft_weight(yi, y, nu)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    /// Row in the source dataset.
    pub index: usize,
    pub sample: Vec<f64>,
    pub weight: f64,
}

/// Dirac mixture estimate of `p(x | y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEmpirical {
    entries: Vec<WeightedSample>,
}

impl WeightedEmpirical {
    pub fn entries(&self) -> &[WeightedSample] {
        &self.entries
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    /// Weighted mean of the samples.
    pub fn mean(&self) -> Vec<f64> {
        let dim = self.entries[0].sample.len();
        let mut m = vec![0.0; dim];
        for e in &self.entries {
            for (acc, v) in m.iter_mut().zip(&e.sample) {
                *acc += e.weight * v;
            }
        }
        m
    }
}

/// Hard vicinal estimate: uniform weights over samples within `kappa` of `y`.
pub fn hve_conditional(data: &LabeledDataset, y: f64, kappa: f64) -> Result<WeightedEmpirical> {
    let idx = hard_vicinity(data.labels().labels(), y, kappa);
    if idx.is_empty() {
        return Err(Error::NoSupport { label: y });
    }
    let w = 1.0 / idx.len() as f64;
    let entries = idx
        .into_iter()
        .map(|i| WeightedSample {
            index: i,
            sample: data.sample(i).to_vec(),
            weight: w,
        })
        .collect();
    Ok(WeightedEmpirical { entries })
}

/// Soft vicinal estimate: every sample weighted by its normalized soft weight.
pub fn sve_conditional(data: &LabeledDataset, y: f64, nu: f64) -> Result<WeightedEmpirical> {
    if data.is_empty() {
        return Err(Error::TooFew {
            what: "samples",
            need: 1,
            got: 0,
        });
    }
    let w = soft_weights(data.labels().labels(), y, nu);
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::WeightUnderflow { label: y });
    }
    let entries = w
        .into_iter()
        .enumerate()
        .map(|(i, wi)| WeightedSample {
            index: i,
            sample: data.sample(i).to_vec(),
            weight: wi / total,
        })
        .collect();
    Ok(WeightedEmpirical { entries })
}
