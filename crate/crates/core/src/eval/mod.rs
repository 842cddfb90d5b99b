//! Fréchet distance and the conditional sample-quality metrics.

mod features;

pub use features::{Autoencoder, FeatureExtractor};

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::{LabeledDataset, Oracle};
use crate::vicinal::distinct_sorted;
use crate::{fmt_f64, Error, Result};

/// Ridge added to a covariance whose smallest eigenvalue is below [`NEAR_SINGULAR`].
pub const COV_SHRINKAGE: f64 = 1e-10;
pub const NEAR_SINGULAR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d || cov.iter().any(|r| r.len() != d) {
            return Err(Error::Shape(format!("covariance is not {d} x {d}")));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        if (&cov - cov.transpose()).amax() > 1e-10 {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        Ok(GaussianMoments {
            mean: DVector::from_vec(mean),
            cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased, symmetrized covariance.
pub fn fit_moments(features: &[Vec<f64>]) -> Result<GaussianMoments> {
    if features.len() < 2 {
        return Err(Error::TooFew {
            what: "feature vectors",
            need: 2,
            got: features.len(),
        });
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Shape("feature vectors differ in length".into()));
    }
    let n = features.len() as f64;
    let mut mean = DVector::zeros(d);
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for f in features {
        let c = DVector::from_fn(d, |i, _| f[i] - mean[i]);
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianMoments { mean, cov })
}

// Well-conditioned covariances are left untouched so exact inputs give exact answers.
fn stabilized(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let min = SymmetricEigen::new(cov.clone()).eigenvalues.min();
    if min < NEAR_SINGULAR {
        cov + DMatrix::identity(cov.nrows(), cov.nrows()) * COV_SHRINKAGE
    } else {
        cov.clone()
    }
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let s = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, clamped at zero.
pub fn frechet_distance(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    if a.dim() != b.dim() || a.cov.nrows() != a.dim() || b.cov.nrows() != b.dim() {
        return Err(Error::Shape(format!(
            "moments of dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let finite = |m: &GaussianMoments| m.mean.iter().chain(m.cov.iter()).all(|v| v.is_finite());
    if !finite(a) || !finite(b) {
        return Err(Error::NonFinite("Fréchet distance inputs".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    let sa = stabilized(&a.cov);
    let sb = stabilized(&b.cov);
    let ra = sym_sqrt(&sa);
    let inner = &ra * &sb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let diff = &a.mean - &b.mean;
    let fd = diff.dot(&diff) + sa.trace() + sb.trace() - 2.0 * tr_cross;
    if !fd.is_finite() {
        return Err(Error::NonFinite("Fréchet distance".into()));
    }
    Ok(fd.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfidConfig {
    pub centers: Vec<f64>,
    pub radius: f64,
    pub min_count: usize,
}

impl SfidConfig {
    pub fn new(centers: Vec<f64>, radius: f64) -> Self {
        SfidConfig {
            centers,
            radius,
            min_count: 2,
        }
    }

    /// `n` evenly spaced centers on `[0, 1]`.
    pub fn even(n: usize, radius: f64) -> Self {
        let centers = if n == 1 {
            vec![0.5]
        } else {
            (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
        };
        Self::new(centers, radius)
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(Error::InvalidArgument(
                "SFID needs at least one center".into(),
            ));
        }
        if self.centers.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidArgument("SFID centers must be sorted".into()));
        }
        if !(self.radius >= 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "SFID radius must be finite and >= 0, got {}",
                self.radius
            )));
        }
        if self.min_count < 2 {
            return Err(Error::InvalidArgument("min_count must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfidRow {
    pub center: f64,
    pub n_real: usize,
    pub n_fake: usize,
    pub fid: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfidReport {
    pub mean: f64,
    /// Population standard deviation over computed windows.
    pub std: f64,
    pub rows: Vec<SfidRow>,
    pub skipped: usize,
}

impl SfidReport {
    pub fn summary(&self) -> String {
        format!(
            "SFID {}±{} (skipped: {})",
            fmt_f64(self.mean),
            fmt_f64(self.std),
            self.skipped
        )
    }

    /// Per-center table; `raw` maps a normalized center to the reported unit.
    pub fn to_csv(&self, raw: impl Fn(f64) -> f64) -> String {
        let mut s = String::from("center,n_real,n_fake,fid\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                fmt_f64(raw(r.center)),
                r.n_real,
                r.n_fake,
                fmt_f64(r.fid)
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path, raw: impl Fn(f64) -> f64) -> Result<()> {
        std::fs::write(path, self.to_csv(raw)).map_err(|e| Error::io(path, e))
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Sliding FID: Fréchet distance between real and fake features inside every
/// label window `[c - r, c + r]`, averaged over windows with enough samples.
pub fn sfid(
    real: &LabeledDataset,
    fake: &LabeledDataset,
    cfg: &SfidConfig,
    fx: &FeatureExtractor,
) -> Result<SfidReport> {
    cfg.validate()?;
    if real.is_empty() || fake.is_empty() {
        return Err(Error::TooFew {
            what: "samples in each dataset",
            need: 1,
            got: real.len().min(fake.len()),
        });
    }
    let fr = fx.extract(real.samples())?;
    let ff = fx.extract(fake.samples())?;
    let mut rows = Vec::new();
    let mut skipped = 0;
    for &c in &cfg.centers {
        let ir = real.window(c, cfg.radius);
        let jf = fake.window(c, cfg.radius);
        if ir.len() < cfg.min_count || jf.len() < cfg.min_count {
            skipped += 1;
            continue;
        }
        let a: Vec<Vec<f64>> = ir.iter().map(|&i| fr[i].clone()).collect();
        let b: Vec<Vec<f64>> = jf.iter().map(|&j| ff[j].clone()).collect();
        let fid = frechet_distance(&fit_moments(&a)?, &fit_moments(&b)?)?;
        rows.push(SfidRow {
            center: c,
            n_real: ir.len(),
            n_fake: jf.len(),
            fid,
        });
    }
    if rows.is_empty() {
        return Err(Error::NoWindows { skipped });
    }
    let fids: Vec<f64> = rows.iter().map(|r| r.fid).collect();
    let (mean, std) = mean_std(&fids);
    Ok(SfidReport {
        mean,
        std,
        rows,
        skipped,
    })
}

/// Per-label FID averaged over `distinct_labels` (SFID with zero radius).
pub fn intra_fid(
    real: &LabeledDataset,
    fake: &LabeledDataset,
    distinct_labels: &[f64],
    fx: &FeatureExtractor,
) -> Result<SfidReport> {
    sfid(
        real,
        fake,
        &SfidConfig::new(distinct_sorted(distinct_labels), 0.0),
        fx,
    )
}

/// Mean absolute difference, in raw label units, between the labels a
/// predictor assigns to the samples and the labels they were generated for.
/// The predictor returns normalized labels.
pub fn label_score(fake: &LabeledDataset, predictor: impl Fn(&[f64]) -> f64) -> Result<f64> {
    if fake.is_empty() {
        return Err(Error::TooFew {
            what: "samples",
            need: 1,
            got: 0,
        });
    }
    let span = fake.labels().raw_span();
    let total: f64 = (0..fake.len())
        .map(|i| (predictor(fake.sample(i)) - fake.label(i)).abs() * span)
        .sum();
    Ok(total / fake.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    /// `(center, entropy)` per non-empty window.
    pub entropies: Vec<(f64, f64)>,
    pub mean: f64,
    pub skipped: usize,
}

/// Natural-log entropy of class counts.
pub fn entropy(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum();
    h.max(0.0)
}

/// Entropy of predicted classes within each label window.
pub fn diversity(
    fake: &LabeledDataset,
    classifier: impl Fn(&[f64], f64) -> usize,
    n_classes: usize,
    centers: &[f64],
    radius: f64,
) -> Result<DiversityReport> {
    if n_classes == 0 {
        return Err(Error::InvalidArgument(
            "classifier needs at least one class".into(),
        ));
    }
    let mut entropies = Vec::new();
    let mut skipped = 0;
    for &c in centers {
        let idx = fake.window(c, radius);
        if idx.is_empty() {
            skipped += 1;
            continue;
        }
        let mut counts = vec![0usize; n_classes];
        for i in idx {
            let k = classifier(fake.sample(i), fake.label(i));
            if k >= n_classes {
                return Err(Error::InvalidArgument(format!("class {k} out of range")));
            }
            counts[k] += 1;
        }
        entropies.push((c, entropy(&counts)));
    }
    if entropies.is_empty() {
        return Err(Error::NoWindows { skipped });
    }
    let mean = entropies.iter().map(|e| e.1).sum::<f64>() / entropies.len() as f64;
    Ok(DiversityReport {
        entropies,
        mean,
        skipped,
    })
}

/// Mean Euclidean distance between the empirical mean of the samples at each
/// distinct label and the true conditional mean.
pub fn conditional_mean_error(fake: &LabeledDataset, oracle: &Oracle) -> Result<f64> {
    if fake.is_empty() {
        return Err(Error::TooFew {
            what: "samples",
            need: 1,
            got: 0,
        });
    }
    let labels = fake.distinct_labels();
    let mut total = 0.0;
    for &y in &labels {
        let idx = fake.window(y, 0.0);
        let (truth, _) = oracle.moments(y);
        let n = idx.len() as f64;
        let err: f64 = truth
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let m = idx.iter().map(|&i| fake.sample(i)[k]).sum::<f64>() / n;
                (m - t).powi(2)
            })
            .sum();
        total += err.sqrt();
    }
    Ok(total / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vicinal::LabelSet;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uni(m: f64, s: f64) -> GaussianMoments {
        GaussianMoments::new(vec![m], vec![vec![s * s]]).unwrap()
    }

    #[test]
    fn moments_by_hand() {
        let m = fit_moments(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(m.mean.as_slice(), &[1.0, 0.0]);
        assert_eq!(m.cov, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        let z = fit_moments(&vec![vec![1.0, 2.0]; 5]).unwrap();
        assert!(z.cov.iter().all(|v| *v == 0.0));
        assert!(fit_moments(&[vec![1.0]]).is_err());
    }

    #[test]
    fn moments_permutation_invariant() {
        let pts = vec![
            vec![1.0, 3.0],
            vec![-2.0, 0.5],
            vec![0.25, 4.0],
            vec![7.0, -1.0],
        ];
        let mut rev = pts.clone();
        rev.reverse();
        let a = fit_moments(&pts).unwrap();
        let b = fit_moments(&rev).unwrap();
        assert!((a.mean - b.mean).amax() < 1e-15);
        assert!((a.cov - b.cov).amax() < 1e-14);
    }

    #[test]
    fn univariate_closed_form() {
        let fd = frechet_distance(&uni(0.0, 1.0), &uni(1.0, 2.0)).unwrap();
        assert!((fd - 2.0).abs() < 1e-10, "{fd}");
        let a = uni(0.3, 0.7);
        assert_eq!(frechet_distance(&a, &a.clone()).unwrap(), 0.0);
    }

    #[test]
    fn singular_covariance_is_finite() {
        let a = GaussianMoments::new(vec![0.0, 0.0], vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let b = GaussianMoments::new(vec![1.0, 0.0], vec![vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let fd = frechet_distance(&a, &b).unwrap();
        assert!((fd - 3.0).abs() < 1e-4, "{fd}");
    }

    #[test]
    fn diagonal_decomposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 5;
        let ma: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mb: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sa: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..3.0)).collect();
        let sb: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..3.0)).collect();
        let diag = |s: &[f64]| -> Vec<Vec<f64>> {
            (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| if i == j { s[i] * s[i] } else { 0.0 })
                        .collect()
                })
                .collect()
        };
        let a = GaussianMoments::new(ma.clone(), diag(&sa)).unwrap();
        let b = GaussianMoments::new(mb.clone(), diag(&sb)).unwrap();
        let want: f64 = (0..d)
            .map(|i| (ma[i] - mb[i]).powi(2) + (sa[i] - sb[i]).powi(2))
            .sum();
        assert!((frechet_distance(&a, &b).unwrap() - want).abs() < 1e-8);
    }

    #[test]
    fn dimension_mismatch() {
        let a = uni(0.0, 1.0);
        let b = GaussianMoments::new(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Shape(_))));
    }

    fn toy(seed: u64, labels: &[f64], per: usize) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &y in labels {
            for _ in 0..per {
                xs.push(vec![
                    y * 3.0 + rng.random_range(-0.5..0.5),
                    rng.random_range(-1.0..1.0),
                ]);
                ys.push(y);
            }
        }
        LabeledDataset::new(xs, LabelSet::new(ys, 0.0, 10.0).unwrap()).unwrap()
    }

    #[test]
    fn sfid_self_is_zero() {
        let real = toy(1, &[0.0, 0.25, 0.5, 0.75, 1.0], 8);
        let r = sfid(
            &real,
            &real,
            &SfidConfig::even(11, 0.1),
            &FeatureExtractor::Identity,
        )
        .unwrap();
        assert_eq!(r.mean, 0.0);
        assert_eq!(r.std, 0.0);
        assert!(r.rows.iter().all(|row| row.fid == 0.0));
    }

    #[test]
    fn zero_radius_is_intra_fid() {
        let labels = [0.1, 0.4, 0.9];
        let real = toy(1, &labels, 6);
        let fake = toy(2, &labels, 6);
        let s = sfid(
            &real,
            &fake,
            &SfidConfig::new(labels.to_vec(), 0.0),
            &FeatureExtractor::Identity,
        )
        .unwrap();
        let i = intra_fid(&real, &fake, &labels, &FeatureExtractor::Identity).unwrap();
        assert!((s.mean - i.mean).abs() <= 1e-12);
        for (row, &y) in s.rows.iter().zip(&labels) {
            let a: Vec<Vec<f64>> = real
                .window(y, 0.0)
                .iter()
                .map(|&k| real.sample(k).to_vec())
                .collect();
            let b: Vec<Vec<f64>> = fake
                .window(y, 0.0)
                .iter()
                .map(|&k| fake.sample(k).to_vec())
                .collect();
            let direct =
                frechet_distance(&fit_moments(&a).unwrap(), &fit_moments(&b).unwrap()).unwrap();
            assert_eq!(row.fid, direct);
        }
    }

    #[test]
    fn empty_windows_are_skipped_and_counted() {
        let real = toy(1, &[0.0, 1.0], 5);
        let fake = toy(2, &[0.0, 1.0], 5);
        let r = sfid(
            &real,
            &fake,
            &SfidConfig::new(vec![0.0, 0.5, 1.0], 0.1),
            &FeatureExtractor::Identity,
        )
        .unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.rows.len(), 2);
        let none = sfid(
            &real,
            &fake,
            &SfidConfig::new(vec![0.5], 0.1),
            &FeatureExtractor::Identity,
        );
        assert!(matches!(none, Err(Error::NoWindows { skipped: 1 })));
        assert!(r.summary().starts_with("SFID "));
        assert!(r.to_csv(|c| c).starts_with("center,n_real,n_fake,fid\n"));
    }

    #[test]
    fn label_score_examples() {
        let fake = LabeledDataset::new(
            vec![vec![0.3], vec![0.5]],
            LabelSet::new(vec![0.1, 0.9], 0.0, 10.0).unwrap(),
        )
        .unwrap();
        // Predictions 3 and 5 against assigned 1 and 9 in raw units.
        assert!((label_score(&fake, |x| x[0]).unwrap() - 3.0).abs() < 1e-12);
        assert!(
            label_score(&fake, |x| x[0] * 0.0 + if x[0] < 0.4 { 0.1 } else { 0.9 }).unwrap()
                < 1e-12
        );
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[5, 0, 0]), 0.0);
        assert!((entropy(&[3, 3, 3, 3]) - 4f64.ln()).abs() < 1e-12);
        assert!((entropy(&[2, 1, 1]) - 1.0397207708399179).abs() < 1e-12);
    }

    #[test]
    fn diversity_by_window() {
        let fake = toy(3, &[0.0, 0.5], 4);
        let r = diversity(
            &fake,
            |x, _| usize::from(x[1] > 0.0),
            2,
            &[0.0, 0.5, 1.0],
            0.0,
        )
        .unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.entropies.len(), 2);
    }

    proptest! {
        #[test]
        fn frechet_symmetric_nonnegative(
            m1 in -3.0f64..3.0, m2 in -3.0f64..3.0,
            c in prop::collection::vec(-1.0f64..1.0, 4),
            e in prop::collection::vec(-1.0f64..1.0, 4),
        ) {
            let spd = |v: &[f64]| {
                let l = DMatrix::from_row_slice(2, 2, v);
                let s = &l * l.transpose() + DMatrix::identity(2, 2) * 0.1;
                vec![vec![s[(0, 0)], s[(0, 1)]], vec![s[(1, 0)], s[(1, 1)]]]
            };
            let a = GaussianMoments::new(vec![m1, 0.0], spd(&c)).unwrap();
            let b = GaussianMoments::new(vec![m2, 1.0], spd(&e)).unwrap();
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-9 * (1.0 + ab));
        }

        #[test]
        fn window_coverage_monotone(r1 in 0.0f64..0.5, dr in 0.0f64..0.5) {
            let real = toy(4, &[0.0, 0.2, 0.3, 0.7, 1.0], 3);
            let centers = [0.1, 0.5, 0.9];
            let cover = |r: f64| -> usize { centers.iter().map(|&c| real.window(c, r).len()).sum() };
            prop_assert!(cover(r1) <= cover(r1 + dr));
        }
    }
}
