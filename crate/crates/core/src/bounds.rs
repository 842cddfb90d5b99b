//! Data-dependent terms of the discriminator error bounds for HVDL and SVDL.
//!
//! Constants the bounds leave unknown (the KDE constant, Lipschitz masses,
//! Hölder constants) are never invented: the KDE term is reported with its
//! constant set to 1 and flagged, and mass-dependent terms appear only when
//! the caller supplies the masses.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conditioning::Discriminator;
use crate::losses::LOG_EPS;
use crate::netcore::Tensor;
use crate::vicinal::soft_weight;
use crate::{fmt_f64, Error, Result};

/// Largest of `-ln D` and `-ln(1 - D)` over the probe scores, with scores
/// clamped to `[LOG_EPS, 1 - LOG_EPS]`.
pub fn estimate_u(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::TooFew {
            what: "probe scores",
            need: 1,
            got: 0,
        });
    }
    let mut u: f64 = 0.0;
    for &p in scores {
        if !p.is_finite() {
            return Err(Error::NonFinite("probe score".into()));
        }
        let p = p.clamp(LOG_EPS, 1.0 - LOG_EPS);
        u = u.max(-p.ln()).max(-(1.0 - p).ln());
    }
    Ok(u)
}

/// [`estimate_u`] on a discriminator's scores for the probe samples.
pub fn estimate_u_discriminator(d: &Discriminator, probe: &Tensor, labels: &[f64]) -> Result<f64> {
    let (_, prob) = d.eval(probe, labels)?;
    estimate_u(&prob)
}

fn kde_draw<R: Rng + ?Sized>(labels: &[f64], sigma: f64, rng: &mut R) -> f64 {
    let base = labels[rng.random_range(0..labels.len())];
    let e: f64 = StandardNormal.sample(rng);
    base + sigma * e
}

fn sorted(labels: &[f64]) -> Vec<f64> {
    let mut v = labels.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Number of sorted labels with `|l - y| <= kappa`.
fn count_within(sorted: &[f64], y: f64, kappa: f64) -> usize {
    let lo = sorted.partition_point(|&l| y - l > kappa);
    let hi = sorted.partition_point(|&l| l - y <= kappa);
    hi.saturating_sub(lo)
}

fn check_inputs(labels: &[f64], sigma: f64, mc_draws: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::TooFew {
            what: "labels",
            need: 1,
            got: 0,
        });
    }
    if mc_draws == 0 {
        return Err(Error::InvalidArgument("mc_draws must be >= 1".into()));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardCountTerm {
    /// Monte-Carlo mean of `sqrt(1 / N_{y,kappa})` over `y` from the label KDE.
    pub value: f64,
    /// Draws with an empty vicinity; each contributed 1.
    pub zero_count: usize,
}

pub fn hard_count_term<R: Rng + ?Sized>(
    labels: &[f64],
    kappa: f64,
    sigma: f64,
    mc_draws: usize,
    rng: &mut R,
) -> Result<HardCountTerm> {
    check_inputs(labels, sigma, mc_draws)?;
    if !(kappa >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kappa must be >= 0, got {kappa}"
        )));
    }
    let s = sorted(labels);
    let mut total = 0.0;
    let mut zero_count = 0;
    for _ in 0..mc_draws {
        let y = kde_draw(labels, sigma, rng);
        let n = count_within(&s, y, kappa);
        if n == 0 {
            zero_count += 1;
            total += 1.0;
        } else {
            total += (1.0 / n as f64).sqrt();
        }
    }
    Ok(HardCountTerm {
        value: total / mc_draws as f64,
        zero_count,
    })
}

/// Mean soft weight `W(y) = (1/N) sum_i exp(-nu (y_i - y)^2)`.
pub fn soft_w(labels: &[f64], y: f64, nu: f64) -> f64 {
    labels.iter().map(|&l| soft_weight(l, y, nu)).sum::<f64>() / labels.len() as f64
}

/// Weight-normalized mean `|y_i - y|`; `None` when every weight underflows.
pub fn soft_drift(labels: &[f64], y: f64, nu: f64) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &l in labels {
        let w = soft_weight(l, y, nu);
        num += w * (l - y).abs();
        den += w;
    }
    (den > 0.0).then(|| num / den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftTerms {
    /// Monte-Carlo mean of `1 / W(y)`.
    pub inv_w: f64,
    /// Monte-Carlo mean of the weight-normalized label drift.
    pub drift: f64,
    /// Draws excluded because `W(y)` underflowed.
    pub underflow: usize,
}

pub fn soft_w_and_drift<R: Rng + ?Sized>(
    labels: &[f64],
    nu: f64,
    sigma: f64,
    mc_draws: usize,
    rng: &mut R,
) -> Result<SoftTerms> {
    check_inputs(labels, sigma, mc_draws)?;
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "nu must be positive, got {nu}"
        )));
    }
    let mut inv_w = 0.0;
    let mut drift = 0.0;
    let mut used = 0usize;
    let mut underflow = 0usize;
    for _ in 0..mc_draws {
        let y = kde_draw(labels, sigma, rng);
        let w = soft_w(labels, y, nu);
        match soft_drift(labels, y, nu) {
            Some(d) if w > 0.0 && (1.0 / w).is_finite() => {
                inv_w += 1.0 / w;
                drift += d;
                used += 1;
            }
            _ => underflow += 1,
        }
    }
    if used == 0 {
        return Err(Error::WeightUnderflow { label: f64::NAN });
    }
    Ok(SoftTerms {
        inv_w: inv_w / used as f64,
        drift: drift / used as f64,
        underflow,
    })
}

/// `sqrt(C ln N / (N sigma))` with `C = 1`.
pub fn kde_term(n: usize, sigma: f64) -> f64 {
    let n = n as f64;
    (n.ln() / (n * sigma)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub real_labels: Vec<f64>,
    /// Realized fake labels; the real labels stand in when absent.
    pub fake_labels: Option<Vec<f64>>,
    pub sigma: f64,
    pub u: f64,
    pub m_r: Option<f64>,
    pub m_g: Option<f64>,
    pub l_r: Option<f64>,
    pub l_g: Option<f64>,
    pub mc_draws: usize,
    pub seed: u64,
}

impl BoundInputs {
    pub fn new(real_labels: Vec<f64>, sigma: f64, u: f64) -> Self {
        BoundInputs {
            real_labels,
            fake_labels: None,
            sigma,
            u,
            m_r: None,
            m_g: None,
            l_r: None,
            l_g: None,
            mc_draws: 10_000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_inputs(&self.real_labels, self.sigma, self.mc_draws)?;
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        if !(self.u > 0.0) || !self.u.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "U must be positive, got {}",
                self.u
            )));
        }
        for (name, v) in [
            ("M_r", self.m_r),
            ("M_g", self.m_g),
            ("L_r", self.l_r),
            ("L_g", self.l_g),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "{name} must be finite and >= 0"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub kappa: f64,
    pub nu: f64,
    pub term_hard_count: f64,
    /// `kappa U (M_r + M_g)`, present when both masses are supplied.
    pub term_kappa_mass: Option<f64>,
    pub term_soft_inv_w: f64,
    pub term_soft_drift: f64,
    /// `U (M_r + M_g)` times the drift, present when both masses are supplied.
    pub term_soft_drift_mass: Option<f64>,
    pub term_kde_r: f64,
    pub term_kde_g: f64,
    pub flags: Vec<String>,
}

pub const SWEEP_HEADER: &str =
    "kappa,nu,term_hard_count,term_soft_invW,term_soft_drift,term_kde_r,term_kde_g,flags";

/// One report per `(kappa, nu)` pair. Every grid point reuses the same
/// random stream, so terms are compared under common random numbers.
pub fn bound_sweep(
    inputs: &BoundInputs,
    kappa_grid: &[f64],
    nu_grid: &[f64],
) -> Result<Vec<BoundReport>> {
    inputs.validate()?;
    if kappa_grid.is_empty() || nu_grid.is_empty() {
        return Err(Error::InvalidArgument(
            "bound sweep grids must be nonempty".into(),
        ));
    }
    let real = &inputs.real_labels;
    let fake = inputs.fake_labels.as_deref().unwrap_or(real);
    if fake.is_empty() {
        return Err(Error::TooFew {
            what: "fake labels",
            need: 1,
            got: 0,
        });
    }
    let mass = match (inputs.m_r, inputs.m_g) {
        (Some(a), Some(b)) => Some(a + b),
        _ => None,
    };
    let mut rows = Vec::with_capacity(kappa_grid.len() * nu_grid.len());
    for &kappa in kappa_grid {
        let hard = hard_count_term(
            real,
            kappa,
            inputs.sigma,
            inputs.mc_draws,
            &mut ChaCha8Rng::seed_from_u64(inputs.seed),
        )?;
        for &nu in nu_grid {
            let soft = soft_w_and_drift(
                real,
                nu,
                inputs.sigma,
                inputs.mc_draws,
                &mut ChaCha8Rng::seed_from_u64(inputs.seed),
            )?;
            let mut flags = vec!["kde_constant_unknown".to_string()];
            if inputs.fake_labels.is_none() {
                flags.push("fake_labels_from_real".into());
            }
            if mass.is_none() {
                flags.push("requires_M".into());
            }
            if inputs.l_r.is_none() || inputs.l_g.is_none() {
                flags.push("requires_L".into());
            }
            if hard.zero_count > 0 {
                flags.push(format!("hard_zero_count={}", hard.zero_count));
            }
            if soft.underflow > 0 {
                flags.push(format!("soft_underflow={}", soft.underflow));
            }
            rows.push(BoundReport {
                kappa,
                nu,
                term_hard_count: hard.value,
                term_kappa_mass: mass.map(|m| kappa * inputs.u * m),
                term_soft_inv_w: soft.inv_w,
                term_soft_drift: soft.drift,
                term_soft_drift_mass: mass.map(|m| inputs.u * m * soft.drift),
                term_kde_r: kde_term(real.len(), inputs.sigma),
                term_kde_g: kde_term(fake.len(), inputs.sigma),
                flags,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[BoundReport]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(r.kappa),
            fmt_f64(r.nu),
            fmt_f64(r.term_hard_count),
            fmt_f64(r.term_soft_inv_w),
            fmt_f64(r.term_soft_drift),
            fmt_f64(r.term_kde_r),
            fmt_f64(r.term_kde_g),
            r.flags.join(";")
        );
    }
    s
}

pub fn write_sweep_csv(rows: &[BoundReport], path: &Path) -> Result<()> {
    std::fs::write(path, sweep_csv(rows)).map_err(|e| Error::io(path, e))
}
