//! Label input mechanisms and the label embedding pipeline.
//!
//! `nli` adds the scalar label to the first hidden pre-activation of the
//! generator and projects a linear map of the label onto the discriminator
//! features. `ili` replaces the scalar by a frozen learned embedding: every
//! hidden layer of the generator receives a per-feature affine transform
//! derived from it, and the discriminator projects a linear map of it. The
//! `concat` and `class_bin` modes append the label (or a one-hot bin) to the
//! network inputs.

mod embedding;
mod nets;

pub use embedding::{
    pretrain_regressor, train_embedding, EmbedConfig, Embedder, EmbeddingStack, Regressor,
};
pub use nets::{DiscOut, Discriminator, Generator, NetSpec};

use crate::netcore::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelInputMode {
    Nli,
    Ili,
    Concat,
    ClassBin(usize),
}

impl LabelInputMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            LabelInputMode::ClassBin(k) if *k < 2 => Err(Error::InvalidArgument(format!(
                "class_bin needs K >= 2, got {k}"
            ))),
            _ => Ok(()),
        }
    }

    /// Extra input columns the mode appends to the networks.
    pub fn input_columns(&self) -> usize {
        match self {
            LabelInputMode::Nli | LabelInputMode::Ili => 0,
            LabelInputMode::Concat => 1,
            LabelInputMode::ClassBin(k) => *k,
        }
    }

    pub fn name(&self) -> String {
        match self {
            LabelInputMode::Nli => "nli".into(),
            LabelInputMode::Ili => "ili".into(),
            LabelInputMode::Concat => "concat".into(),
            LabelInputMode::ClassBin(k) => format!("class_bin:{k}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mode = match s {
            "nli" => LabelInputMode::Nli,
            "ili" => LabelInputMode::Ili,
            "concat" => LabelInputMode::Concat,
            _ => match s.strip_prefix("class_bin:") {
                Some(k) => LabelInputMode::ClassBin(
                    k.parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad class count in {s:?}")))?,
                ),
                None => return Err(Error::InvalidArgument(format!("unknown label input {s:?}"))),
            },
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// Class index of a normalized label: `floor(y K)` with `y = 1` in the last class.
pub fn bin_label(y: f64, k: usize) -> usize {
    debug_assert!(k >= 1);
    let idx = (y * k as f64).floor();
    if idx <= 0.0 {
        0
    } else {
        (idx as usize).min(k - 1)
    }
}

/// `n x k` one-hot matrix of the label bins.
pub fn one_hot_bins(labels: &[f64], k: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * k];
    for (r, &y) in labels.iter().enumerate() {
        data[r * k + bin_label(y, k)] = 1.0;
    }
    Tensor::matrix(labels.len(), k, data).expect("shape matches")
}

/// How the label reaches a generator hidden layer.
#[derive(Debug, Clone, Copy)]
pub enum Condition<'a> {
    /// Scalar normalized labels, one per row.
    Labels(&'a [f64]),
    /// Per-row scale and shift already derived from the label embedding.
    Affine {
        scale: &'a Tensor,
        shift: &'a Tensor,
    },
}

/// Applies the generator-side label input to a hidden (or, for the input
/// modes, latent) matrix.
pub fn condition_generator(
    mode: LabelInputMode,
    hidden: &Tensor,
    cond: Condition,
) -> Result<Tensor> {
    match (mode, cond) {
        (LabelInputMode::Nli, Condition::Labels(y)) => {
            check_rows(hidden, y.len())?;
            let c = hidden.cols();
            let mut out = hidden.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += y[i / c];
            }
            Ok(out)
        }
        (LabelInputMode::Ili, Condition::Affine { scale, shift }) => {
            let scaled = hidden.zip_map(scale, |h, s| h * s)?;
            scaled.zip_map(shift, |h, b| h + b)
        }
        (LabelInputMode::Concat, Condition::Labels(y)) => {
            check_rows(hidden, y.len())?;
            append_columns(hidden, &Tensor::column(y))
        }
        (LabelInputMode::ClassBin(k), Condition::Labels(y)) => {
            check_rows(hidden, y.len())?;
            append_columns(hidden, &one_hot_bins(y, k))
        }
        (mode, _) => Err(Error::InvalidArgument(format!(
            "condition does not match label input mode {}",
            mode.name()
        ))),
    }
}

/// Projection score `raw + <embed, feature>`.
pub fn condition_discriminator(feature: &[f64], raw_score: f64, embed: &[f64]) -> Result<f64> {
    if feature.len() != embed.len() {
        return Err(Error::Shape(format!(
            "embedding of length {} for feature of length {}",
            embed.len(),
            feature.len()
        )));
    }
    Ok(raw_score + feature.iter().zip(embed).map(|(f, e)| f * e).sum::<f64>())
}

fn check_rows(t: &Tensor, n: usize) -> Result<()> {
    if t.rows() != n {
        return Err(Error::Shape(format!("{} labels for {} rows", n, t.rows())));
    }
    Ok(())
}

pub(crate) fn append_columns(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_rows(b, a.rows())?;
    let cols = a.cols() + b.cols();
    let mut data = Vec::with_capacity(a.rows() * cols);
    for r in 0..a.rows() {
        data.extend_from_slice(a.row(r));
        data.extend_from_slice(b.row(r));
    }
    Tensor::matrix(a.rows(), cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bin_edges() {
        assert_eq!(bin_label(0.0, 10), 0);
        assert_eq!(bin_label(1.0, 10), 9);
        assert_eq!(bin_label(0.25, 100), 25);
        assert_eq!(bin_label(0.999, 10), 9);
    }

    #[test]
    fn nli_examples() {
        let h = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let same = condition_generator(LabelInputMode::Nli, &h, Condition::Labels(&[0.0])).unwrap();
        assert_eq!(same, h);
        let out = condition_generator(LabelInputMode::Nli, &h, Condition::Labels(&[0.3])).unwrap();
        assert_eq!(out.data(), &[1.3, 2.3]);
    }

    #[test]
    fn ili_identity_affine() {
        let h = Tensor::matrix(2, 2, vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let scale = Tensor::full(&[2, 2], 1.0);
        let shift = Tensor::zeros(&[2, 2]);
        let out = condition_generator(
            LabelInputMode::Ili,
            &h,
            Condition::Affine {
                scale: &scale,
                shift: &shift,
            },
        )
        .unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn input_modes_append() {
        let z = Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap();
        let c = condition_generator(LabelInputMode::Concat, &z, Condition::Labels(&[0.1, 0.9]))
            .unwrap();
        assert_eq!(c.data(), &[5.0, 0.1, 6.0, 0.9]);
        let b = condition_generator(
            LabelInputMode::ClassBin(2),
            &z,
            Condition::Labels(&[0.1, 0.9]),
        )
        .unwrap();
        assert_eq!(b.data(), &[5.0, 1.0, 0.0, 6.0, 0.0, 1.0]);
    }

    #[test]
    fn mode_mismatch_rejected() {
        let h = Tensor::zeros(&[1, 2]);
        assert!(condition_generator(LabelInputMode::Ili, &h, Condition::Labels(&[0.2])).is_err());
        assert!(
            condition_generator(LabelInputMode::Nli, &h, Condition::Labels(&[0.2, 0.3])).is_err()
        );
    }

    #[test]
    fn projection_examples() {
        assert_eq!(
            condition_discriminator(&[3.0, 5.0], 0.5, &[0.0, 0.0]).unwrap(),
            0.5
        );
        assert_eq!(
            condition_discriminator(&[3.0, 5.0], 0.5, &[1.0, 0.0]).unwrap(),
            3.5
        );
        // (5, -3) is orthogonal to the feature (3, 5).
        let moved = condition_discriminator(&[3.0, 5.0], 0.5, &[1.0 + 5.0, -3.0]).unwrap();
        assert!((moved - 3.5).abs() < 1e-12);
        assert!(condition_discriminator(&[1.0], 0.0, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [
            LabelInputMode::Nli,
            LabelInputMode::Ili,
            LabelInputMode::Concat,
            LabelInputMode::ClassBin(30),
        ] {
            assert_eq!(LabelInputMode::parse(&m.name()).unwrap(), m);
        }
        assert!(LabelInputMode::parse("class_bin:1").is_err());
        assert!(LabelInputMode::parse("film").is_err());
    }

    proptest! {
        #[test]
        fn nli_is_affine_in_label(y1 in 0.0f64..0.5, y2 in 0.0f64..0.5, h in prop::collection::vec(-5.0f64..5.0, 3)) {
            let t = Tensor::matrix(1, 3, h).unwrap();
            let a = condition_generator(LabelInputMode::Nli, &t, Condition::Labels(&[y1 + y2])).unwrap();
            let b = condition_generator(LabelInputMode::Nli, &t, Condition::Labels(&[y1])).unwrap();
            for (x, z) in a.data().iter().zip(b.data()) {
                prop_assert!((x - z - y2).abs() < 1e-12);
            }
        }

        #[test]
        fn projection_is_bilinear(
            f in prop::collection::vec(-3.0f64..3.0, 4),
            e1 in prop::collection::vec(-3.0f64..3.0, 4),
            e2 in prop::collection::vec(-3.0f64..3.0, 4),
            a in -2.0f64..2.0,
        ) {
            let mix: Vec<f64> = e1.iter().zip(&e2).map(|(x, y)| a * x + y).collect();
            let lhs = condition_discriminator(&f, 0.0, &mix).unwrap();
            let rhs = a * condition_discriminator(&f, 0.0, &e1).unwrap()
                + condition_discriminator(&f, 0.0, &e2).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
            let lhs = condition_discriminator(&mix, 0.0, &f).unwrap();
            let rhs = a * condition_discriminator(&e1, 0.0, &f).unwrap()
                + condition_discriminator(&e2, 0.0, &f).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn bins_partition_unit_interval(k in 2usize..200, y in 0.0f64..=1.0) {
            let b = bin_label(y, k);
            prop_assert!(b < k);
            let lo = b as f64 / k as f64;
            let hi = (b + 1) as f64 / k as f64;
            prop_assert!(y >= lo - 1e-12 && (y < hi + 1e-12 || b == k - 1));
        }
    }
}
