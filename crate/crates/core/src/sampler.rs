//! Vicinal batch assembly for discriminator and generator updates.
//!
//! Target labels are distinct training labels plus Gaussian noise. Real
//! samples are picked uniformly among those inside the hard window (or with
//! soft weight above [`SOFT_WEIGHT_CUTOFF`]); fake samples are generated at
//! labels drawn uniformly around the target. When a vicinity is empty the noise
//! is redrawn up to `max_retries` times before falling back to the sample with
//! the nearest label. Fallbacks are counted, never hidden.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::LabeledDataset;
use crate::vicinal::{soft_cutoff_radius, soft_weight, VicinalParams, SOFT_WEIGHT_CUTOFF};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VicinalMode {
    Hard,
    Soft,
}

impl VicinalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            VicinalMode::Hard => "hard",
            VicinalMode::Soft => "soft",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(VicinalMode::Hard),
            "soft" => Ok(VicinalMode::Soft),
            _ => Err(Error::InvalidArgument(format!(
                "unknown vicinal kernel {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub batch_d: usize,
    pub batch_g: usize,
    pub mode: VicinalMode,
    pub params: VicinalParams,
    pub max_retries: usize,
    pub clamp_labels: bool,
}

impl SamplerConfig {
    pub fn new(mode: VicinalMode, params: VicinalParams) -> Self {
        SamplerConfig {
            batch_d: 64,
            batch_g: 64,
            mode,
            params,
            max_retries: 10,
            clamp_labels: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_d == 0 || self.batch_g == 0 {
            return Err(Error::InvalidArgument("batch sizes must be >= 1".into()));
        }
        if self.max_retries == 0 {
            return Err(Error::InvalidArgument("max_retries must be >= 1".into()));
        }
        Ok(())
    }
}

/// One discriminator batch.
#[derive(Debug, Clone, PartialEq)]
pub struct VicinalBatch {
    pub real_indices: Vec<usize>,
    pub real_samples: Vec<Vec<f64>>,
    /// Label the discriminator is conditioned on, shared by the real and fake
    /// element at the same position.
    pub targets: Vec<f64>,
    pub real_weights: Vec<f64>,
    /// Labels fed to the generator to produce the fake samples.
    pub gen_labels: Vec<f64>,
    pub fake_weights: Vec<f64>,
    /// Positions whose real sample came from the nearest-label fallback.
    pub fallback: Vec<bool>,
}

impl VicinalBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().filter(|f| **f).count()
    }
}

/// Result of picking one real sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pick {
    pub index: usize,
    /// Target label actually used (may differ from the requested one after retries).
    pub target: f64,
    pub weight: f64,
    pub fallback: bool,
}

fn finish_label(y: f64, clamp: bool) -> f64 {
    if clamp {
        y.clamp(0.0, 1.0)
    } else {
        y
    }
}

fn noised<R: Rng + ?Sized>(base: f64, sigma: f64, clamp: bool, rng: &mut R) -> f64 {
    let e: f64 = StandardNormal.sample(rng);
    finish_label(base + sigma * e, clamp)
}

/// `m` labels drawn uniformly with replacement from `distinct`, plus N(0, sigma^2) noise.
pub fn draw_target_labels<R: Rng + ?Sized>(
    distinct: &[f64],
    m: usize,
    sigma: f64,
    clamp: bool,
    rng: &mut R,
) -> Vec<f64> {
    assert!(!distinct.is_empty(), "distinct label set is empty");
    (0..m)
        .map(|_| {
            let base = distinct[rng.random_range(0..distinct.len())];
            noised(base, sigma, clamp, rng)
        })
        .collect()
}

fn uniform_member<R: Rng + ?Sized>(candidates: &[usize], rng: &mut R) -> usize {
    candidates[rng.random_range(0..candidates.len())]
}

fn nearest<R: Rng + ?Sized>(labels: &[f64], target: f64, rng: &mut R) -> usize {
    let best = labels
        .iter()
        .map(|y| (y - target).abs())
        .fold(f64::INFINITY, f64::min);
    let ties: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, y)| (*y - target).abs() == best)
        .map(|(i, _)| i)
        .collect();
    uniform_member(&ties, rng)
}

/// Shared retry-then-fallback loop; `member` returns the weight when sample `i`
/// belongs to the vicinity of the target.
#[allow(clippy::too_many_arguments)]
fn pick_with<R, F>(
    data: &LabeledDataset,
    base: f64,
    target: f64,
    sigma: f64,
    max_retries: usize,
    clamp: bool,
    rng: &mut R,
    member: F,
) -> Pick
where
    R: Rng + ?Sized,
    F: Fn(f64, f64) -> Option<f64>,
{
    assert!(!data.is_empty(), "dataset is empty");
    let labels = data.labels().labels();
    let mut target = target;
    let mut candidates = Vec::new();
    for attempt in 0..=max_retries {
        if attempt > 0 {
            target = noised(base, sigma, clamp, rng);
        }
        candidates.clear();
        candidates.extend(
            labels
                .iter()
                .enumerate()
                .filter(|(_, &y)| member(y, target).is_some())
                .map(|(i, _)| i),
        );
        if !candidates.is_empty() {
            let index = uniform_member(&candidates, rng);
            let weight = member(labels[index], target).unwrap_or(0.0);
            return Pick {
                index,
                target,
                weight,
                fallback: false,
            };
        }
    }
    let index = nearest(labels, target, rng);
    // outside the vicinity by construction; soft callers recompute the kernel
    let weight = member(labels[index], target).unwrap_or(1.0);
    Pick {
        index,
        target,
        weight,
        fallback: true,
    }
}

/// Uniform pick among samples with `|y - target| <= kappa`; weight is always 1.
///
/// `base` is the noiseless label the target was drawn from; retries redraw
/// the noise around it.
#[allow(clippy::too_many_arguments)]
pub fn pick_real_hard<R: Rng + ?Sized>(
    data: &LabeledDataset,
    base: f64,
    target: f64,
    kappa: f64,
    sigma: f64,
    max_retries: usize,
    clamp: bool,
    rng: &mut R,
) -> Pick {
    pick_with(
        data,
        base,
        target,
        sigma,
        max_retries,
        clamp,
        rng,
        |y, t| ((y - t).abs() <= kappa).then_some(1.0),
    )
}

/// Uniform pick among samples with soft weight above the cutoff; the returned
/// weight is `exp(-nu (y - target)^2)`.
#[allow(clippy::too_many_arguments)]
pub fn pick_real_soft<R: Rng + ?Sized>(
    data: &LabeledDataset,
    base: f64,
    target: f64,
    nu: f64,
    sigma: f64,
    max_retries: usize,
    clamp: bool,
    rng: &mut R,
) -> Pick {
    let mut pick = pick_with(
        data,
        base,
        target,
        sigma,
        max_retries,
        clamp,
        rng,
        |y, t| {
            let w = soft_weight(y, t, nu);
            (w > SOFT_WEIGHT_CUTOFF).then_some(w)
        },
    );
    if pick.fallback {
        pick.weight = soft_weight(data.label(pick.index), pick.target, nu);
    }
    pick
}

/// Label fed to the generator for a fake sample conditioned on `target`.
pub fn draw_fake_label<R: Rng + ?Sized>(
    target: f64,
    mode: VicinalMode,
    params: &VicinalParams,
    clamp: bool,
    rng: &mut R,
) -> f64 {
    let half = match mode {
        VicinalMode::Hard => params.kappa,
        VicinalMode::Soft => soft_cutoff_radius(params.nu),
    };
    let u: f64 = rng.random_range(-1.0..=1.0);
    finish_label(target + half * u, clamp)
}

/// One discriminator batch.
pub fn assemble_batch<R: Rng + ?Sized>(
    data: &LabeledDataset,
    distinct: &[f64],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> VicinalBatch {
    let m = cfg.batch_d;
    let p = &cfg.params;
    let mut b = VicinalBatch {
        real_indices: Vec::with_capacity(m),
        real_samples: Vec::with_capacity(m),
        targets: Vec::with_capacity(m),
        real_weights: Vec::with_capacity(m),
        gen_labels: Vec::with_capacity(m),
        fake_weights: Vec::with_capacity(m),
        fallback: Vec::with_capacity(m),
    };
    let bases: Vec<f64> = (0..m)
        .map(|_| distinct[rng.random_range(0..distinct.len())])
        .collect();
    let targets: Vec<f64> = bases
        .iter()
        .map(|&base| noised(base, p.sigma, cfg.clamp_labels, rng))
        .collect();
    for (&base, &target) in bases.iter().zip(&targets) {
        let pick = match cfg.mode {
            VicinalMode::Hard => pick_real_hard(
                data,
                base,
                target,
                p.kappa,
                p.sigma,
                cfg.max_retries,
                cfg.clamp_labels,
                rng,
            ),
            VicinalMode::Soft => pick_real_soft(
                data,
                base,
                target,
                p.nu,
                p.sigma,
                cfg.max_retries,
                cfg.clamp_labels,
                rng,
            ),
        };
        let gen = draw_fake_label(pick.target, cfg.mode, p, cfg.clamp_labels, rng);
        let fake_w = match cfg.mode {
            VicinalMode::Hard => 1.0,
            VicinalMode::Soft => soft_weight(gen, pick.target, p.nu),
        };
        b.real_indices.push(pick.index);
        b.real_samples.push(data.sample(pick.index).to_vec());
        b.targets.push(pick.target);
        b.real_weights.push(pick.weight);
        b.gen_labels.push(gen);
        b.fake_weights.push(fake_w);
        b.fallback.push(pick.fallback);
    }
    b
}
