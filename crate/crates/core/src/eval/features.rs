use rand::seq::SliceRandom;
use rand::Rng;

use crate::conditioning::Regressor;
use crate::data::LabeledDataset;
use crate::netcore::{AdamState, Mlp, MlpSpec, ParamStore, Squash, Tape, Tensor};
use crate::{Error, Result};

/// Small MLP autoencoder; its bottleneck serves as an evaluation feature space.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    encoder: Mlp,
    decoder: Mlp,
    store: ParamStore,
}

impl Autoencoder {
    /// Trains on `data` with squared reconstruction error.
    pub fn train<R: Rng + ?Sized>(
        data: &LabeledDataset,
        hidden: usize,
        bottleneck: usize,
        epochs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::TooFew {
                what: "training samples",
                need: 1,
                got: 0,
            });
        }
        let d = data.dim();
        let mut store = ParamStore::new();
        let encoder = Mlp::new(
            MlpSpec::relu(d, &[hidden], bottleneck, Squash::None),
            "ae.enc",
            &mut store,
            rng,
        )?;
        let decoder = Mlp::new(
            MlpSpec::relu(bottleneck, &[hidden], d, Squash::None),
            "ae.dec",
            &mut store,
            rng,
        )?;
        let mut ae = Autoencoder {
            encoder,
            decoder,
            store,
        };
        let mut adam = AdamState::with_hyper(&ae.store, 1e-3, 0.9, 0.999);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for epoch in 0..epochs {
            order.shuffle(rng);
            for chunk in order.chunks(64) {
                let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| data.sample(i).to_vec()).collect();
                let x = Tensor::from_rows(&rows, d)?;
                let mut tape = Tape::new();
                let xv = tape.constant(x.clone())?;
                let code = ae.encoder.forward(&ae.store, &mut tape, xv)?.out;
                let rec = ae.decoder.forward(&ae.store, &mut tape, code)?.out;
                let n = x.len() as f64;
                let up = tape.value(rec).zip_map(&x, |r, t| 2.0 * (r - t) / n)?;
                let g = tape
                    .backward(rec, &up)
                    .map_err(|e| Error::Diverged {
                        iter: epoch,
                        what: format!("autoencoder: {e}"),
                    })?
                    .for_store(&ae.store)?;
                adam.step(&mut ae.store, &g)?;
            }
        }
        Ok(ae)
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.eval(&self.store, x)
    }

    /// Mean squared reconstruction error per coordinate.
    pub fn reconstruction_error(&self, x: &Tensor) -> Result<f64> {
        let code = self.encode(x)?;
        let rec = self.decoder.eval(&self.store, &code)?;
        Ok(rec
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / x.len() as f64)
    }
}

/// Evaluation-only map from samples to feature vectors.
#[derive(Debug, Clone)]
pub enum FeatureExtractor {
    Identity,
    /// Penultimate features of a trained label regressor.
    Regressor(Box<Regressor>),
    /// Bottleneck of a trained autoencoder.
    Autoencoder(Box<Autoencoder>),
}

impl FeatureExtractor {
    pub fn extract(&self, samples: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        match self {
            FeatureExtractor::Identity => Ok(samples.to_vec()),
            FeatureExtractor::Regressor(r) => Ok(r.features(samples)?.to_rows()),
            FeatureExtractor::Autoencoder(ae) => {
                let x = Tensor::from_rows(samples, samples[0].len())?;
                Ok(ae.encode(&x)?.to_rows())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureExtractor::Identity => "identity",
            FeatureExtractor::Regressor(_) => "regressor",
            FeatureExtractor::Autoencoder(_) => "autoencoder",
        }
    }
}
