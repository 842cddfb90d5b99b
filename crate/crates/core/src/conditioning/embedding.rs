use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::LabeledDataset;
use crate::netcore::{
    Activation, AdamState, Checkpoint, Linear, Mlp, MlpSpec, ParamStore, Squash, Tape, Tensor, Var,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedConfig {
    /// Feature dimension shared by T1 and T3.
    pub d_f: usize,
    pub t1_hidden: Vec<usize>,
    pub t3_hidden: Vec<usize>,
    pub sigma_gamma: f64,
    pub regressor_epochs: usize,
    pub embed_steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            d_f: 16,
            t1_hidden: vec![64, 64],
            t3_hidden: vec![64],
            sigma_gamma: 0.2,
            regressor_epochs: 300,
            embed_steps: 3000,
            batch: 64,
            lr: 1e-3,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_f == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument("d_f and batch must be >= 1".into()));
        }
        if !(self.sigma_gamma > 0.0) || !self.sigma_gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma_gamma must be positive, got {}",
                self.sigma_gamma
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("lr must be positive".into()));
        }
        if self.t1_hidden.is_empty() || self.t3_hidden.is_empty() {
            return Err(Error::InvalidArgument(
                "T1 and T3 need a hidden layer".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn spec_to_meta(ck: &mut Checkpoint, key: &str, spec: &MlpSpec) {
    let w: Vec<String> = spec.widths.iter().map(|v| v.to_string()).collect();
    let a: Vec<&str> = spec.activations.iter().map(|a| a.as_str()).collect();
    let squash = match spec.squash {
        Squash::Sigmoid => "sigmoid",
        Squash::None => "none",
    };
    ck.set_meta(key, format!("{}|{}|{}", w.join(","), a.join(","), squash));
}

pub(crate) fn spec_from_meta(ck: &Checkpoint, key: &str) -> Result<MlpSpec> {
    let raw = ck
        .meta(key)
        .ok_or_else(|| Error::Config(format!("checkpoint '{}' lacks meta {key}", ck.component)))?;
    let bad = || Error::Config(format!("malformed network description {raw:?}"));
    let mut parts = raw.split('|');
    let (w, a, s) = match (parts.next(), parts.next(), parts.next()) {
        (Some(w), Some(a), Some(s)) => (w, a, s),
        _ => return Err(bad()),
    };
    let widths = w
        .split(',')
        .map(|v| v.parse::<usize>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    let activations = a
        .split(',')
        .map(Activation::parse)
        .collect::<Result<Vec<_>>>()?;
    let squash = match s {
        "sigmoid" => Squash::Sigmoid,
        "none" => Squash::None,
        _ => return Err(bad()),
    };
    let spec = MlpSpec {
        widths,
        activations,
        squash,
    };
    spec.validate()?;
    Ok(spec)
}

/// ReLU hidden layers with a linear feature layer on top.
fn feature_net(input: usize, hidden: &[usize], d_f: usize) -> MlpSpec {
    MlpSpec::relu(input, hidden, d_f, Squash::None)
}

/// Rebuilds the architecture with throwaway weights that the caller overwrites.
fn placeholder_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// Sample-to-label regressor `T2(T1(x))`.
#[derive(Debug, Clone)]
pub struct Regressor {
    t1: Mlp,
    t1_store: ParamStore,
    t2: Linear,
    t2_store: ParamStore,
}

impl Regressor {
    pub fn new<R: Rng + ?Sized>(dim: usize, cfg: &EmbedConfig, rng: &mut R) -> Result<Self> {
        let mut t1_store = ParamStore::new();
        let t1 = Mlp::new(
            feature_net(dim, &cfg.t1_hidden, cfg.d_f),
            "t1",
            &mut t1_store,
            rng,
        )?;
        let mut t2_store = ParamStore::new();
        let t2 = Linear::new(cfg.d_f, 1, "t2", &mut t2_store, rng)?;
        Ok(Regressor {
            t1,
            t1_store,
            t2,
            t2_store,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.t1.spec().input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.t1.spec().output_dim()
    }

    /// T2 applied to a feature matrix on the tape.
    pub fn head(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        self.t2.forward(&self.t2_store, tape, features)
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let f = self.t1.forward(&self.t1_store, tape, x)?.out;
        let y = self.head(tape, f)?;
        Ok((f, y))
    }

    pub fn features(&self, x: &[Vec<f64>]) -> Result<Tensor> {
        self.t1
            .eval(&self.t1_store, &Tensor::from_rows(x, self.input_dim())?)
    }

    /// Predicted normalized labels.
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        if x.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::from_rows(x, self.input_dim())?)?;
        let (_, y) = self.forward(&mut tape, xv)?;
        Ok(tape.value(y).data().to_vec())
    }

    /// Applies T2 to explicit feature rows.
    pub fn head_eval(&self, features: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let f = tape.constant(features.clone())?;
        let y = self.head(&mut tape, f)?;
        Ok(tape.value(y).data().to_vec())
    }

    pub fn t2_store_mut(&mut self) -> &mut ParamStore {
        &mut self.t2_store
    }

    pub fn t2_layer(&self) -> &Linear {
        &self.t2
    }

    pub fn checkpoints(&self) -> (Checkpoint, Checkpoint) {
        let mut t1 = Checkpoint::new("t1").with_store(&self.t1_store);
        spec_to_meta(&mut t1, "net", self.t1.spec());
        let mut t2 = Checkpoint::new("t2").with_store(&self.t2_store);
        t2.set_meta("d_f", self.feature_dim());
        (t1, t2)
    }

    pub fn from_checkpoints(t1: &Checkpoint, t2: &Checkpoint) -> Result<Self> {
        let spec = spec_from_meta(t1, "net")?;
        let d_f = spec.output_dim();
        let mut rng = placeholder_rng();
        let mut t1_store = ParamStore::new();
        let t1_net = Mlp::new(spec, "t1", &mut t1_store, &mut rng)?;
        t1.load_into(&mut t1_store)?;
        let mut t2_store = ParamStore::new();
        let t2_lin = Linear::new(d_f, 1, "t2", &mut t2_store, &mut rng)?;
        t2.load_into(&mut t2_store)?;
        Ok(Regressor {
            t1: t1_net,
            t1_store,
            t2: t2_lin,
            t2_store,
        })
    }
}

/// Label-to-feature embedding network T3.
#[derive(Debug, Clone)]
pub struct Embedder {
    net: Mlp,
    store: ParamStore,
}

impl PartialEq for Embedder {
    fn eq(&self, other: &Self) -> bool {
        self.net == other.net && self.store == other.store
    }
}

impl Embedder {
    pub fn new<R: Rng + ?Sized>(cfg: &EmbedConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Mlp::new(
            feature_net(1, &cfg.t3_hidden, cfg.d_f),
            "t3",
            &mut store,
            rng,
        )?;
        Ok(Embedder { net, store })
    }

    pub fn dim(&self) -> usize {
        self.net.spec().output_dim()
    }

    fn forward(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        Ok(self.net.forward(&self.store, tape, y)?.out)
    }

    /// `n x d_f` embeddings of normalized labels.
    pub fn embed(&self, labels: &[f64]) -> Result<Tensor> {
        if labels.is_empty() {
            return Ok(Tensor::zeros(&[0, self.dim()]));
        }
        self.net.eval(&self.store, &Tensor::column(labels))
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("t3").with_store(&self.store);
        self.describe(&mut ck);
        ck
    }

    /// Writes the architecture into `ck` so [`Embedder::from_checkpoint`] can rebuild it.
    pub fn describe(&self, ck: &mut Checkpoint) {
        spec_to_meta(ck, "t3.net", self.net.spec());
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec = spec_from_meta(ck, "t3.net")?;
        let mut store = ParamStore::new();
        let net = Mlp::new(spec, "t3", &mut store, &mut placeholder_rng())?;
        ck.load_into(&mut store)?;
        Ok(Embedder { net, store })
    }
}

/// Trains `T2(T1(x))` against the normalized labels with squared error.
/// Returns the regressor and its training MAE.
pub fn pretrain_regressor<R: Rng + ?Sized>(
    data: &LabeledDataset,
    cfg: &EmbedConfig,
    rng: &mut R,
) -> Result<(Regressor, f64)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::TooFew {
            what: "training samples",
            need: 1,
            got: 0,
        });
    }
    let mut reg = Regressor::new(data.dim(), cfg, rng)?;
    let mut adam1 = AdamState::with_hyper(&reg.t1_store, cfg.lr, 0.9, 0.999);
    let mut adam2 = AdamState::with_hyper(&reg.t2_store, cfg.lr, 0.9, 0.999);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    for epoch in 0..cfg.regressor_epochs {
        // Step decay: x0.1 at half and at three quarters of the schedule.
        let mut lr = cfg.lr;
        if 2 * epoch >= cfg.regressor_epochs {
            lr *= 0.1;
        }
        if 4 * epoch >= 3 * cfg.regressor_epochs {
            lr *= 0.1;
        }
        adam1.lr = lr;
        adam2.lr = lr;
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch) {
            let x: Vec<Vec<f64>> = chunk.iter().map(|&i| data.sample(i).to_vec()).collect();
            let y: Vec<f64> = chunk.iter().map(|&i| data.label(i)).collect();
            let mut tape = Tape::new();
            let xv = tape.constant(Tensor::from_rows(&x, data.dim())?)?;
            let (_, pred) = reg
                .forward(&mut tape, xv)
                .map_err(|e| diverged(e, step, "regressor"))?;
            let n = y.len() as f64;
            let resid: Vec<f64> = tape
                .value(pred)
                .data()
                .iter()
                .zip(&y)
                .map(|(p, t)| p - t)
                .collect();
            let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    iter: step,
                    what: "regressor loss".into(),
                });
            }
            let up: Vec<f64> = resid.iter().map(|r| 2.0 * r / n).collect();
            let g = tape.backward(pred, &Tensor::column(&up))?;
            let g1 = g.for_store(&reg.t1_store)?;
            let g2 = g.for_store(&reg.t2_store)?;
            adam1.step(&mut reg.t1_store, &g1)?;
            adam2.step(&mut reg.t2_store, &g2)?;
            step += 1;
        }
    }
    let pred = reg.predict(data.samples())?;
    let mae = pred
        .iter()
        .zip(data.labels().labels())
        .map(|(p, y)| (p - y).abs())
        .sum::<f64>()
        / data.len() as f64;
    Ok((reg, mae))
}

fn diverged(e: Error, iter: usize, what: &str) -> Error {
    match e {
        Error::NonFinite(msg) => Error::Diverged {
            iter,
            what: format!("{what}: {msg}"),
        },
        other => other,
    }
}

/// Trains T3 so that the frozen head reproduces noisy labels:
/// minimizes the mean over labels of `(T2(T3(y + g)) - (y + g))^2` with one
/// fresh `g ~ N(0, sigma_gamma^2)` per label per step.
pub fn train_embedding<R: Rng + ?Sized>(
    regressor: &Regressor,
    distinct_labels: &[f64],
    cfg: &EmbedConfig,
    rng: &mut R,
) -> Result<Embedder> {
    cfg.validate()?;
    if distinct_labels.is_empty() {
        return Err(Error::TooFew {
            what: "distinct labels",
            need: 1,
            got: 0,
        });
    }
    if regressor.feature_dim() != cfg.d_f {
        return Err(Error::Shape(format!(
            "regressor features have dimension {}, embedding expects {}",
            regressor.feature_dim(),
            cfg.d_f
        )));
    }
    let noise = Normal::new(0.0, cfg.sigma_gamma)
        .map_err(|e| Error::InvalidArgument(format!("sigma_gamma: {e}")))?;
    let mut t3 = Embedder::new(cfg, rng)?;
    let mut adam = AdamState::with_hyper(&t3.store, cfg.lr, 0.9, 0.999);
    let n = distinct_labels.len() as f64;
    for step in 0..cfg.embed_steps {
        let noisy: Vec<f64> = distinct_labels
            .iter()
            .map(|y| y + noise.sample(rng))
            .collect();
        let mut tape = Tape::new();
        let yv = tape.constant(Tensor::column(&noisy))?;
        let e = t3
            .forward(&mut tape, yv)
            .map_err(|e| diverged(e, step, "embedding"))?;
        let pred = regressor.head(&mut tape, e)?;
        let resid: Vec<f64> = tape
            .value(pred)
            .data()
            .iter()
            .zip(&noisy)
            .map(|(p, t)| p - t)
            .collect();
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iter: step,
                what: "embedding loss".into(),
            });
        }
        let up: Vec<f64> = resid.iter().map(|r| 2.0 * r / n).collect();
        let g = tape
            .backward(pred, &Tensor::column(&up))?
            .for_store(&t3.store)?;
        adam.step(&mut t3.store, &g)?;
    }
    Ok(t3)
}

/// Frozen T1, T2 and T3 together.
#[derive(Debug, Clone)]
pub struct EmbeddingStack {
    pub regressor: Regressor,
    pub embedder: Embedder,
    pub sigma_gamma: f64,
}

impl EmbeddingStack {
    /// Runs both training stages. Returns the stack and the regressor's training MAE.
    pub fn train<R: Rng + ?Sized>(
        data: &LabeledDataset,
        cfg: &EmbedConfig,
        rng: &mut R,
    ) -> Result<(Self, f64)> {
        let (regressor, mae) = pretrain_regressor(data, cfg, rng)?;
        let embedder = train_embedding(&regressor, &data.distinct_labels(), cfg, rng)?;
        Ok((
            EmbeddingStack {
                regressor,
                embedder,
                sigma_gamma: cfg.sigma_gamma,
            },
            mae,
        ))
    }

    /// Mean `|T2(T3(y)) - y|` over `grid`.
    pub fn self_consistency(&self, grid: &[f64]) -> Result<f64> {
        if grid.is_empty() {
            return Err(Error::TooFew {
                what: "grid points",
                need: 1,
                got: 0,
            });
        }
        let e = self.embedder.embed(grid)?;
        let back = self.regressor.head_eval(&e)?;
        Ok(back
            .iter()
            .zip(grid)
            .map(|(p, y)| (p - y).abs())
            .sum::<f64>()
            / grid.len() as f64)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (t1, t2) = self.regressor.checkpoints();
        t1.write(&dir.join("t1.ckpt"))?;
        t2.write(&dir.join("t2.ckpt"))?;
        let mut t3 = self.embedder.checkpoint();
        t3.set_meta("sigma_gamma", crate::fmt_f64(self.sigma_gamma));
        t3.write(&dir.join("t3.ckpt"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let t1 = Checkpoint::read(&dir.join("t1.ckpt"))?;
        let t2 = Checkpoint::read(&dir.join("t2.ckpt"))?;
        let t3 = Checkpoint::read(&dir.join("t3.ckpt"))?;
        let sigma_gamma = t3
            .meta("sigma_gamma")
            .and_then(|s| s.parse().ok())
            .unwrap_or(EmbedConfig::default().sigma_gamma);
        Ok(EmbeddingStack {
            regressor: Regressor::from_checkpoints(&t1, &t2)?,
            embedder: Embedder::from_checkpoint(&t3)?,
            sigma_gamma,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};
    use crate::vicinal::LabelSet;

    fn linear_dataset(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = [0.6, 0.3];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..1.0)).collect();
            ys.push(a[0] * x[0] + a[1] * x[1]);
            xs.push(x);
        }
        LabeledDataset::new(xs, LabelSet::new(ys, 0.0, 1.0).unwrap()).unwrap()
    }

    fn quick() -> EmbedConfig {
        EmbedConfig {
            t1_hidden: vec![32],
            t3_hidden: vec![32],
            regressor_epochs: 150,
            embed_steps: 1500,
            ..EmbedConfig::default()
        }
    }

    #[test]
    fn regressor_learns_linear_map() {
        let train = linear_dataset(1000, 1);
        let test = linear_dataset(200, 2);
        let (reg, _) =
            pretrain_regressor(&train, &quick(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let pred = reg.predict(test.samples()).unwrap();
        let mae = pred
            .iter()
            .zip(test.labels().labels())
            .map(|(p, y)| (p - y).abs())
            .sum::<f64>()
            / pred.len() as f64;
        assert!(mae < 0.02, "test MAE {mae}");
    }

    #[test]
    fn regressor_constant_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let data =
            LabeledDataset::new(xs, LabelSet::new(vec![0.4; 200], 0.0, 1.0).unwrap()).unwrap();
        let cfg = EmbedConfig {
            regressor_epochs: 3000,
            ..quick()
        };
        let (_, mae) = pretrain_regressor(&data, &cfg, &mut rng).unwrap();
        assert!(mae < 1e-3, "MAE {mae}");
    }

    #[test]
    fn regressor_is_reproducible() {
        let data = linear_dataset(100, 4);
        let cfg = EmbedConfig {
            regressor_epochs: 5,
            ..quick()
        };
        let a = pretrain_regressor(&data, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = pretrain_regressor(&data, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        assert_eq!(a.0.t1_store, b.0.t1_store);
    }

    #[test]
    fn embedding_recovers_identity_head() {
        // T2 reads the first feature coordinate.
        let cfg = quick();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut reg = Regressor::new(2, &cfg, &mut rng).unwrap();
        let mut w = vec![0.0; cfg.d_f];
        w[0] = 1.0;
        let lin = reg.t2_layer().clone();
        reg.t2_store_mut()
            .set(lin.weight(), Tensor::matrix(cfg.d_f, 1, w).unwrap())
            .unwrap();
        reg.t2_store_mut()
            .set(lin.bias(), Tensor::zeros(&[1, 1]))
            .unwrap();
        let labels: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
        let t3 = train_embedding(&reg, &labels, &cfg, &mut rng).unwrap();
        let grid: Vec<f64> = (0..50).map(|i| 0.01 + 0.98 * i as f64 / 49.0).collect();
        let e = t3.embed(&grid).unwrap();
        let err = grid
            .iter()
            .enumerate()
            .map(|(r, y)| (e.get(r, 0) - y).abs())
            .sum::<f64>()
            / grid.len() as f64;
        assert!(err < 0.05, "coordinate-0 error {err}");
    }

    #[test]
    fn stack_self_consistency_and_round_trip() {
        let (train, _, _) =
            generate(&SyntheticSpec::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (stack, _) =
            EmbeddingStack::train(&train, &quick(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let grid: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
        let sc = stack.self_consistency(&grid).unwrap();
        assert!(sc < 0.05, "self-consistency {sc}");

        let dir = tempfile::tempdir().unwrap();
        stack.save(dir.path()).unwrap();
        let back = EmbeddingStack::load(dir.path()).unwrap();
        assert_eq!(
            back.self_consistency(&grid).unwrap().to_bits(),
            sc.to_bits()
        );
        assert_eq!(back.embedder, stack.embedder);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = EmbedConfig {
            sigma_gamma: 0.0,
            ..EmbedConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
