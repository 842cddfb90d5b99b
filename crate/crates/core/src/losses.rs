//! Discriminator and generator losses on batches of scores.
//!
//! Vanilla losses take squashed probabilities in `(0, 1)`; hinge losses take
//! raw scores. Every loss comes with its gradient w.r.t. the scores so the
//! networks can back-propagate from it. Probabilities are clamped to
//! `[LOG_EPS, 1 - LOG_EPS]` before the log; the gradient is evaluated at the
//! clamped value so saturated scores still push the network.

use crate::{Error, Result};

pub const LOG_EPS: f64 = 1e-7;

/// Scores of one discriminator batch with per-element weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscOutputs {
    pub real_scores: Vec<f64>,
    pub fake_scores: Vec<f64>,
    pub real_weights: Vec<f64>,
    pub fake_weights: Vec<f64>,
}

impl DiscOutputs {
    /// Unit weights on both sides.
    pub fn uniform(real_scores: Vec<f64>, fake_scores: Vec<f64>) -> Self {
        let real_weights = vec![1.0; real_scores.len()];
        let fake_weights = vec![1.0; fake_scores.len()];
        DiscOutputs {
            real_scores,
            fake_scores,
            real_weights,
            fake_weights,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.real_scores.len() != self.real_weights.len()
            || self.fake_scores.len() != self.fake_weights.len()
        {
            return Err(Error::Shape(format!(
                "scores/weights length mismatch: real {}/{}, fake {}/{}",
                self.real_scores.len(),
                self.real_weights.len(),
                self.fake_scores.len(),
                self.fake_weights.len()
            )));
        }
        if self
            .real_weights
            .iter()
            .chain(&self.fake_weights)
            .any(|w| !(*w >= 0.0))
        {
            return Err(Error::InvalidArgument(
                "weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Loss value with gradients w.r.t. the real and fake scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub d_real: Vec<f64>,
    pub d_fake: Vec<f64>,
    /// Number of probabilities that hit the log clamp.
    pub clamped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossFamily {
    Vanilla,
    Hinge,
}

impl LossFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossFamily::Vanilla => "vanilla",
            LossFamily::Hinge => "hinge",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(LossFamily::Vanilla),
            "hinge" => Ok(LossFamily::Hinge),
            _ => Err(Error::InvalidArgument(format!("unknown loss family {s:?}"))),
        }
    }
}

fn clamp_prob(p: f64, clamped: &mut usize) -> f64 {
    if p < LOG_EPS {
        *clamped += 1;
        LOG_EPS
    } else if p > 1.0 - LOG_EPS {
        *clamped += 1;
        1.0 - LOG_EPS
    } else {
        p
    }
}

fn total(weights: &[f64]) -> Result<f64> {
    let t: f64 = weights.iter().sum();
    if !(t > 0.0) {
        return Err(Error::InvalidArgument("zero total weight".into()));
    }
    Ok(t)
}

/// Weighted vanilla discriminator loss
/// `-sum w log D(real) / sum w - sum w' log(1 - D(fake)) / sum w'`.
pub fn svdl_grad(out: &DiscOutputs) -> Result<LossGrad> {
    out.validate()?;
    let tr = total(&out.real_weights)?;
    let tf = total(&out.fake_weights)?;
    let mut clamped = 0;
    let mut value = 0.0;
    let mut d_real = Vec::with_capacity(out.real_scores.len());
    for (&p, &w) in out.real_scores.iter().zip(&out.real_weights) {
        let q = clamp_prob(p, &mut clamped);
        value -= w * q.ln() / tr;
        d_real.push(-w / (q * tr));
    }
    let mut d_fake = Vec::with_capacity(out.fake_scores.len());
    for (&p, &w) in out.fake_scores.iter().zip(&out.fake_weights) {
        let q = clamp_prob(p, &mut clamped);
        value -= w * (1.0 - q).ln() / tf;
        d_fake.push(w / ((1.0 - q) * tf));
    }
    Ok(LossGrad {
        value,
        d_real,
        d_fake,
        clamped,
    })
}

pub fn svdl(out: &DiscOutputs) -> Result<f64> {
    svdl_grad(out).map(|l| l.value)
}

/// Hard vicinal discriminator loss in its in-batch form: vicinity membership is
/// realized by the sampler, so the batch average is unweighted.
pub fn hvdl_grad(real_scores: &[f64], fake_scores: &[f64]) -> Result<LossGrad> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(Error::InvalidArgument("empty score batch".into()));
    }
    svdl_grad(&DiscOutputs::uniform(
        real_scores.to_vec(),
        fake_scores.to_vec(),
    ))
}

pub fn hvdl(real_scores: &[f64], fake_scores: &[f64]) -> Result<f64> {
    hvdl_grad(real_scores, fake_scores).map(|l| l.value)
}

/// `-mean log D(G(z, y + eps), y + eps)`; only `d_fake` is populated.
pub fn generator_loss_grad(fake_scores: &[f64]) -> Result<LossGrad> {
    if fake_scores.is_empty() {
        return Err(Error::InvalidArgument("empty score batch".into()));
    }
    let n = fake_scores.len() as f64;
    let mut clamped = 0;
    let mut value = 0.0;
    let mut d_fake = Vec::with_capacity(fake_scores.len());
    for &p in fake_scores {
        let q = clamp_prob(p, &mut clamped);
        value -= q.ln() / n;
        d_fake.push(-1.0 / (q * n));
    }
    Ok(LossGrad {
        value,
        d_real: Vec::new(),
        d_fake,
        clamped,
    })
}

pub fn generator_loss(fake_scores: &[f64]) -> Result<f64> {
    generator_loss_grad(fake_scores).map(|l| l.value)
}

/// Weighted hinge loss on raw scores:
/// `-sum w min(0, -1 + D(real)) / sum w - sum w' min(0, -1 - D(fake)) / sum w'`.
pub fn hinge_svdl_grad(out: &DiscOutputs) -> Result<LossGrad> {
    out.validate()?;
    let tr = total(&out.real_weights)?;
    let tf = total(&out.fake_weights)?;
    let mut value = 0.0;
    let mut d_real = Vec::with_capacity(out.real_scores.len());
    for (&s, &w) in out.real_scores.iter().zip(&out.real_weights) {
        let m = (-1.0 + s).min(0.0);
        value -= w * m / tr;
        d_real.push(if s < 1.0 { -w / tr } else { 0.0 });
    }
    let mut d_fake = Vec::with_capacity(out.fake_scores.len());
    for (&s, &w) in out.fake_scores.iter().zip(&out.fake_weights) {
        let m = (-1.0 - s).min(0.0);
        value -= w * m / tf;
        d_fake.push(if s > -1.0 { w / tf } else { 0.0 });
    }
    Ok(LossGrad {
        value,
        d_real,
        d_fake,
        clamped: 0,
    })
}

pub fn hinge_svdl(out: &DiscOutputs) -> Result<f64> {
    hinge_svdl_grad(out).map(|l| l.value)
}

/// Generator side of the hinge objective: `-mean D(fake)` on raw scores.
pub fn hinge_generator_loss_grad(fake_scores: &[f64]) -> Result<LossGrad> {
    if fake_scores.is_empty() {
        return Err(Error::InvalidArgument("empty score batch".into()));
    }
    let n = fake_scores.len() as f64;
    Ok(LossGrad {
        value: -fake_scores.iter().sum::<f64>() / n,
        d_real: Vec::new(),
        d_fake: vec![-1.0 / n; fake_scores.len()],
        clamped: 0,
    })
}

/// Class-conditional cross-entropy losses `(d_loss, g_loss)` of the binned and
/// concat baselines, scores already conditioned on exact training labels.
pub fn cgan_class_losses(real_scores: &[f64], fake_scores: &[f64]) -> Result<(f64, f64)> {
    let d = hvdl(real_scores, fake_scores)?;
    let g = generator_loss(fake_scores)?;
    Ok((d, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn hvdl_examples() {
        assert_abs_diff_eq!(
            hvdl(&[0.5, 0.5], &[0.5, 0.5]).unwrap(),
            2.0 * 2f64.ln(),
            epsilon = 1e-12
        );
        let near = hvdl(&[1.0 - 1e-7], &[1e-7]).unwrap();
        assert!((near - 2e-7).abs() < 1e-12);
        assert_abs_diff_eq!(
            hvdl(&[0.8, 0.6], &[0.3, 0.1]).unwrap(),
            0.598_002_317_338_379_6,
            epsilon = 1e-12
        );
        let g = hvdl_grad(&[0.0], &[1.0]).unwrap();
        assert_eq!(g.clamped, 2);
        assert!(g.value.is_finite());
    }

    #[test]
    fn svdl_examples() {
        let real = vec![0.9, 0.5, 0.7];
        let fake = vec![0.2, 0.4, 0.1];
        let out = DiscOutputs::uniform(real.clone(), fake.clone());
        assert_abs_diff_eq!(
            svdl(&out).unwrap(),
            hvdl(&real, &fake).unwrap(),
            epsilon = 1e-12
        );

        let out = DiscOutputs {
            real_scores: vec![0.9, 0.5],
            fake_scores: vec![0.5],
            real_weights: vec![1.0, 1e-300],
            fake_weights: vec![1.0],
        };
        assert_abs_diff_eq!(
            svdl(&out).unwrap(),
            -(0.9f64).ln() + 2f64.ln(),
            epsilon = 1e-12
        );

        let out = DiscOutputs {
            real_scores: vec![0.9, 0.5],
            fake_scores: vec![1e-300],
            real_weights: vec![2.0 / 3.0, 1.0 / 3.0],
            fake_weights: vec![1.0],
        };
        // fake term is -ln(1 - 1e-7) after clamping
        assert_abs_diff_eq!(
            svdl(&out).unwrap(),
            0.301_289_403_958_532_6 + 1e-7,
            epsilon = 1e-12
        );

        let zero = DiscOutputs {
            real_scores: vec![0.5],
            fake_scores: vec![0.5],
            real_weights: vec![0.0],
            fake_weights: vec![1.0],
        };
        assert!(svdl(&zero).is_err());
    }

    #[test]
    fn generator_examples() {
        assert_abs_diff_eq!(
            generator_loss(&[0.5; 4]).unwrap(),
            2f64.ln(),
            epsilon = 1e-12
        );
        assert!(generator_loss(&[1.0 - 1e-9; 3]).unwrap() < 2e-7);
        assert_abs_diff_eq!(
            generator_loss(&[0.25, 0.75]).unwrap(),
            0.836_988_216_785_835_8,
            epsilon = 1e-12
        );
    }

    #[test]
    fn hinge_examples() {
        let out = DiscOutputs::uniform(vec![1.0, 3.0], vec![-1.0, -2.0]);
        assert_eq!(hinge_svdl(&out).unwrap(), 0.0);
        let out = DiscOutputs::uniform(vec![0.0], vec![0.0]);
        assert_eq!(hinge_svdl(&out).unwrap(), 2.0);
        let out = DiscOutputs::uniform(vec![2.0, -0.5], vec![-1.0]);
        assert_abs_diff_eq!(hinge_svdl(&out).unwrap(), 0.75, epsilon = 1e-15);
        let g = hinge_generator_loss_grad(&[1.0, 3.0]).unwrap();
        assert_eq!(g.value, -2.0);
    }

    #[test]
    fn class_loss_examples() {
        let (d, g) = cgan_class_losses(&[0.5], &[0.5]).unwrap();
        assert_abs_diff_eq!(d, 2.0 * 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(g, 2f64.ln(), epsilon = 1e-12);
        let (d, _) = cgan_class_losses(&[1.0], &[0.0]).unwrap();
        assert!(d < 1e-6);
        let (d, _) = cgan_class_losses(&[0.9], &[0.2]).unwrap();
        assert_abs_diff_eq!(d, 0.328_504_066_972_036, epsilon = 1e-12);
    }

    #[test]
    fn continuous_across_the_clamp() {
        let at = hvdl(&[LOG_EPS], &[0.5]).unwrap();
        let below = hvdl(&[LOG_EPS * 0.999], &[0.5]).unwrap();
        let above = hvdl(&[LOG_EPS * 1.001], &[0.5]).unwrap();
        assert_eq!(at, below);
        assert!((above - at).abs() < 2e-3);
    }

    fn fd_check(f: impl Fn(&[f64], &[f64]) -> f64, real: &[f64], fake: &[f64], g: &LossGrad) {
        let h = 1e-6;
        for i in 0..real.len() {
            let mut a = real.to_vec();
            let mut b = real.to_vec();
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a, fake) - f(&b, fake)) / (2.0 * h);
            assert!(
                (fd - g.d_real[i]).abs() < 1e-5 * fd.abs().max(1.0),
                "real {i}"
            );
        }
        for j in 0..fake.len() {
            let mut a = fake.to_vec();
            let mut b = fake.to_vec();
            a[j] += h;
            b[j] -= h;
            let fd = (f(real, &a) - f(real, &b)) / (2.0 * h);
            assert!(
                (fd - g.d_fake[j]).abs() < 1e-5 * fd.abs().max(1.0),
                "fake {j}"
            );
        }
    }

    #[test]
    fn score_gradients_match_finite_differences() {
        let real = [0.8, 0.3, 0.55];
        let fake = [0.2, 0.6];
        let rw = [0.5, 1.0, 0.25];
        let fw = [0.7, 0.1];
        let mk = |r: &[f64], f: &[f64]| DiscOutputs {
            real_scores: r.to_vec(),
            fake_scores: f.to_vec(),
            real_weights: rw.to_vec(),
            fake_weights: fw.to_vec(),
        };
        fd_check(
            |r, f| svdl(&mk(r, f)).unwrap(),
            &real,
            &fake,
            &svdl_grad(&mk(&real, &fake)).unwrap(),
        );
        let raw_real = [0.3, 1.7, -0.4];
        let raw_fake = [-0.2, -1.6];
        fd_check(
            |r, f| hinge_svdl(&mk(r, f)).unwrap(),
            &raw_real,
            &raw_fake,
            &hinge_svdl_grad(&mk(&raw_real, &raw_fake)).unwrap(),
        );
        fd_check(
            |_, f| generator_loss(f).unwrap(),
            &[],
            &fake,
            &generator_loss_grad(&fake).unwrap(),
        );
    }

    proptest! {
        #[test]
        fn losses_nonnegative_and_permutation_invariant(
            pairs in prop::collection::vec((0.01f64..0.99, 0.01f64..0.99, 0.1f64..2.0, 0.1f64..2.0), 1..20),
            rot in 0usize..20,
        ) {
            let real: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let fake: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let rw: Vec<f64> = pairs.iter().map(|p| p.2).collect();
            let fw: Vec<f64> = pairs.iter().map(|p| p.3).collect();
            let out = DiscOutputs { real_scores: real.clone(), fake_scores: fake.clone(), real_weights: rw.clone(), fake_weights: fw.clone() };
            let k = rot % pairs.len();
            let rotate = |v: &Vec<f64>| { let mut v = v.clone(); v.rotate_left(k); v };
            let shuffled = DiscOutputs { real_scores: rotate(&real), fake_scores: rotate(&fake), real_weights: rotate(&rw), fake_weights: rotate(&fw) };
            let a = svdl(&out).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - svdl(&shuffled).unwrap()).abs() < 1e-12);
            let h = hinge_svdl(&out).unwrap();
            prop_assert!(h >= 0.0);
            prop_assert!((h - hinge_svdl(&shuffled).unwrap()).abs() < 1e-12);
            prop_assert!(generator_loss(&fake).unwrap() >= 0.0);
            let uni = DiscOutputs::uniform(real.clone(), fake.clone());
            prop_assert!((svdl(&uni).unwrap() - hvdl(&real, &fake).unwrap()).abs() < 1e-12);
        }
    }
}
