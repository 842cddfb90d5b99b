use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::embedding::{spec_from_meta, spec_to_meta};
use super::{one_hot_bins, Embedder, LabelInputMode};
use crate::netcore::{
    sample_latent, Activation, Checkpoint, Linear, Mlp, MlpSpec, ParamStore, Squash, Tape, Tensor,
    Var,
};
use crate::{Error, Result};

/// Sizes of the generator and discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub latent_dim: usize,
    pub data_dim: usize,
    pub g_hidden: Vec<usize>,
    pub d_hidden: Vec<usize>,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            latent_dim: 2,
            data_dim: 2,
            g_hidden: vec![64, 64],
            d_hidden: vec![64, 64],
        }
    }
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.data_dim == 0 {
            return Err(Error::InvalidArgument(
                "latent and data dimensions must be >= 1".into(),
            ));
        }
        if self.g_hidden.is_empty() || self.d_hidden.is_empty() {
            return Err(Error::InvalidArgument(
                "networks need at least one hidden layer".into(),
            ));
        }
        if self.g_hidden.contains(&0) || self.d_hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_labels(labels: &[f64], rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    Ok(())
}

fn label_input(tape: &mut Tape, mode: LabelInputMode, x: Var, labels: &[f64]) -> Result<Var> {
    match mode {
        LabelInputMode::Concat => {
            let y = tape.constant(Tensor::column(labels))?;
            tape.concat(x, y)
        }
        LabelInputMode::ClassBin(k) => {
            let y = tape.constant(one_hot_bins(labels, k))?;
            tape.concat(x, y)
        }
        LabelInputMode::Nli | LabelInputMode::Ili => Ok(x),
    }
}

fn require_embedder(mode: LabelInputMode, t3: Option<Embedder>) -> Result<Option<Embedder>> {
    match (mode, t3) {
        (LabelInputMode::Ili, None) => Err(Error::InvalidArgument(
            "ili label input needs a trained label embedding".into(),
        )),
        (LabelInputMode::Ili, Some(t)) => Ok(Some(t)),
        (_, _) => Ok(None),
    }
}

fn placeholder_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// Conditional generator `G(z, y)`.
#[derive(Debug, Clone)]
pub struct Generator {
    mode: LabelInputMode,
    latent_dim: usize,
    net: Mlp,
    store: ParamStore,
    film: Vec<(Linear, Linear)>,
    t3: Option<Embedder>,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        mode: LabelInputMode,
        spec: &NetSpec,
        t3: Option<Embedder>,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        mode.validate()?;
        let t3 = require_embedder(mode, t3)?;
        let net_spec = MlpSpec::relu(
            spec.latent_dim + mode.input_columns(),
            &spec.g_hidden,
            spec.data_dim,
            Squash::None,
        );
        Self::build(mode, spec.latent_dim, net_spec, t3, rng)
    }

    fn build<R: Rng + ?Sized>(
        mode: LabelInputMode,
        latent_dim: usize,
        net_spec: MlpSpec,
        t3: Option<Embedder>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Mlp::new(net_spec, "g", &mut store, rng)?;
        let mut film = Vec::new();
        if let Some(t3) = &t3 {
            let d_f = t3.dim();
            let hidden = &net.spec().widths[1..net.spec().widths.len() - 1];
            for (l, &w) in hidden.iter().enumerate() {
                let scale = Linear::with_values(
                    Tensor::zeros(&[d_f, w]),
                    Tensor::full(&[1, w], 1.0),
                    &format!("g.film{l}.scale"),
                    &mut store,
                )?;
                let shift = Linear::with_values(
                    Tensor::zeros(&[d_f, w]),
                    Tensor::zeros(&[1, w]),
                    &format!("g.film{l}.shift"),
                    &mut store,
                )?;
                film.push((scale, shift));
            }
        }
        Ok(Generator {
            mode,
            latent_dim,
            net,
            store,
            film,
            t3,
        })
    }

    pub fn mode(&self) -> LabelInputMode {
        self.mode
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn data_dim(&self) -> usize {
        self.net.spec().output_dim()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn embedder(&self) -> Option<&Embedder> {
        self.t3.as_ref()
    }

    /// Records `G(z, y)` on the tape; `labels` are normalized, one per row of `z`.
    pub fn forward(&self, tape: &mut Tape, z: Var, labels: &[f64]) -> Result<Var> {
        check_labels(labels, tape.value(z).rows())?;
        let input = label_input(tape, self.mode, z, labels)?;
        let out = match self.mode {
            LabelInputMode::Nli => {
                let y = tape.constant(Tensor::column(labels))?;
                self.net
                    .forward_with(&self.store, tape, input, |tape, l, pre| {
                        if l == 0 {
                            tape.add_column(pre, y)
                        } else {
                            Ok(pre)
                        }
                    })?
            }
            LabelInputMode::Ili => {
                let t3 = self.t3.as_ref().expect("checked at construction");
                let e = tape.constant(t3.embed(labels)?)?;
                let film = &self.film;
                let store = &self.store;
                self.net.forward_with(store, tape, input, |tape, l, pre| {
                    let (scale, shift) = &film[l];
                    let s = scale.forward(store, tape, e)?;
                    let b = shift.forward(store, tape, e)?;
                    let scaled = tape.mul(pre, s)?;
                    tape.add(scaled, b)
                })?
            }
            LabelInputMode::Concat | LabelInputMode::ClassBin(_) => {
                self.net.forward(&self.store, tape, input)?
            }
        };
        Ok(out.out)
    }

    /// Samples `G(z, y)` for fresh latents, one row per label.
    pub fn generate<R: Rng + ?Sized>(&self, labels: &[f64], rng: &mut R) -> Result<Tensor> {
        if let Some(bad) = labels.iter().find(|y| !(0.0..=1.0).contains(*y)) {
            return Err(Error::InvalidArgument(format!(
                "generation label {bad} lies outside [0, 1]"
            )));
        }
        if labels.is_empty() {
            return Ok(Tensor::zeros(&[0, self.data_dim()]));
        }
        let z = sample_latent(self.latent_dim, labels.len(), rng);
        self.eval(&z, labels)
    }

    pub fn eval(&self, z: &Tensor, labels: &[f64]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone())?;
        let out = self.forward(&mut tape, zv, labels)?;
        Ok(tape.value(out).clone())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("generator").with_store(&self.store);
        ck.set_meta("label_input", self.mode.name());
        ck.set_meta("latent_dim", self.latent_dim);
        spec_to_meta(&mut ck, "net", self.net.spec());
        if let Some(t3) = &self.t3 {
            ck.add_store(t3.store());
            t3.describe(&mut ck);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.component != "generator" {
            return Err(Error::Config(format!(
                "expected a generator checkpoint, got '{}'",
                ck.component
            )));
        }
        let (mode, t3) = mode_and_embedder(ck)?;
        let latent_dim = ck
            .meta("latent_dim")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config("generator checkpoint lacks latent_dim".into()))?;
        let mut g = Self::build(
            mode,
            latent_dim,
            spec_from_meta(ck, "net")?,
            t3,
            &mut placeholder_rng(),
        )?;
        ck.load_into(&mut g.store)?;
        Ok(g)
    }
}

fn mode_and_embedder(ck: &Checkpoint) -> Result<(LabelInputMode, Option<Embedder>)> {
    let mode = LabelInputMode::parse(ck.meta("label_input").ok_or_else(|| {
        Error::Config(format!("checkpoint '{}' lacks label_input", ck.component))
    })?)?;
    let t3 = if mode == LabelInputMode::Ili {
        Some(Embedder::from_checkpoint(ck)?)
    } else {
        None
    };
    Ok((mode, t3))
}

/// Discriminator outputs on the tape.
#[derive(Debug, Clone, Copy)]
pub struct DiscOut {
    /// Score before the sigmoid, including the projection term.
    pub raw: Var,
    /// `sigmoid(raw)`.
    pub prob: Var,
}

/// Conditional discriminator `D(x, y)`.
#[derive(Debug, Clone)]
pub struct Discriminator {
    mode: LabelInputMode,
    net: Mlp,
    store: ParamStore,
    proj: Option<Linear>,
    t3: Option<Embedder>,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(
        mode: LabelInputMode,
        spec: &NetSpec,
        t3: Option<Embedder>,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        mode.validate()?;
        let t3 = require_embedder(mode, t3)?;
        let net_spec = MlpSpec::relu(
            spec.data_dim + mode.input_columns(),
            &spec.d_hidden,
            1,
            Squash::None,
        );
        Self::build(mode, net_spec, t3, rng)
    }

    fn build<R: Rng + ?Sized>(
        mode: LabelInputMode,
        net_spec: MlpSpec,
        t3: Option<Embedder>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Mlp::new(net_spec, "d", &mut store, rng)?;
        let h = net.spec().widths[net.spec().widths.len() - 2];
        let proj = match (mode, &t3) {
            (LabelInputMode::Nli, _) => Some(Linear::new(1, h, "d.embed", &mut store, rng)?),
            (LabelInputMode::Ili, Some(t3)) => {
                Some(Linear::new(t3.dim(), h, "d.embed", &mut store, rng)?)
            }
            _ => None,
        };
        Ok(Discriminator {
            mode,
            net,
            store,
            proj,
            t3,
        })
    }

    pub fn mode(&self) -> LabelInputMode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, labels: &[f64]) -> Result<DiscOut> {
        check_labels(labels, tape.value(x).rows())?;
        let input = label_input(tape, self.mode, x, labels)?;
        let o = self.net.forward(&self.store, tape, input)?;
        let mut raw = o.raw;
        if let Some(proj) = &self.proj {
            let cond = match &self.t3 {
                Some(t3) => t3.embed(labels)?,
                None => Tensor::column(labels),
            };
            let c = tape.constant(cond)?;
            let e = proj.forward(&self.store, tape, c)?;
            tape.set_scope("d.projection");
            let dot = tape.row_dot(e, o.hidden)?;
            raw = tape.add(raw, dot)?;
        }
        tape.set_scope("d.out");
        let prob = tape.activation(raw, Activation::Sigmoid)?;
        Ok(DiscOut { raw, prob })
    }

    /// `(raw, prob)` score vectors without keeping the tape.
    pub fn eval(&self, x: &Tensor, labels: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone())?;
        let o = self.forward(&mut tape, xv, labels)?;
        Ok((
            tape.value(o.raw).data().to_vec(),
            tape.value(o.prob).data().to_vec(),
        ))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("discriminator").with_store(&self.store);
        ck.set_meta("label_input", self.mode.name());
        spec_to_meta(&mut ck, "net", self.net.spec());
        if let Some(t3) = &self.t3 {
            ck.add_store(t3.store());
            t3.describe(&mut ck);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.component != "discriminator" {
            return Err(Error::Config(format!(
                "expected a discriminator checkpoint, got '{}'",
                ck.component
            )));
        }
        let (mode, t3) = mode_and_embedder(ck)?;
        let mut d = Self::build(mode, spec_from_meta(ck, "net")?, t3, &mut placeholder_rng())?;
        ck.load_into(&mut d.store)?;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::EmbedConfig;

    fn small() -> NetSpec {
        NetSpec {
            latent_dim: 3,
            data_dim: 2,
            g_hidden: vec![8, 6],
            d_hidden: vec![7, 5],
        }
    }

    fn embedder(rng: &mut ChaCha8Rng) -> Embedder {
        let cfg = EmbedConfig {
            d_f: 4,
            t3_hidden: vec![6],
            ..EmbedConfig::default()
        };
        Embedder::new(&cfg, rng).unwrap()
    }

    fn all_modes(rng: &mut ChaCha8Rng) -> Vec<(LabelInputMode, Option<Embedder>)> {
        vec![
            (LabelInputMode::Nli, None),
            (LabelInputMode::Ili, Some(embedder(rng))),
            (LabelInputMode::Concat, None),
            (LabelInputMode::ClassBin(4), None),
        ]
    }

    #[test]
    fn shapes_and_checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (mode, t3) in all_modes(&mut rng) {
            let g = Generator::new(mode, &small(), t3.clone(), &mut rng).unwrap();
            let d = Discriminator::new(mode, &small(), t3, &mut rng).unwrap();
            let labels = [0.0, 0.3, 1.0];
            let x = g
                .generate(&labels, &mut ChaCha8Rng::seed_from_u64(9))
                .unwrap();
            assert_eq!(x.shape(), &[3, 2]);
            let (raw, prob) = d.eval(&x, &labels).unwrap();
            assert_eq!(raw.len(), 3);
            assert!(prob.iter().all(|p| *p > 0.0 && *p < 1.0));

            let g2 = Generator::from_checkpoint(&g.checkpoint()).unwrap();
            let x2 = g2
                .generate(&labels, &mut ChaCha8Rng::seed_from_u64(9))
                .unwrap();
            assert_eq!(x, x2, "{mode:?}");
            let d2 = Discriminator::from_checkpoint(&d.checkpoint()).unwrap();
            assert_eq!(d2.eval(&x, &labels).unwrap(), (raw, prob));
        }
    }

    #[test]
    fn ili_requires_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(Generator::new(LabelInputMode::Ili, &small(), None, &mut rng).is_err());
        assert!(Discriminator::new(LabelInputMode::Ili, &small(), None, &mut rng).is_err());
    }

    #[test]
    fn generation_label_range_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::new(LabelInputMode::Nli, &small(), None, &mut rng).unwrap();
        assert!(g.generate(&[1.2], &mut rng).is_err());
        assert_eq!(g.generate(&[], &mut rng).unwrap().rows(), 0);
    }

    #[test]
    fn ili_film_starts_as_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t3 = embedder(&mut rng);
        let g = Generator::new(LabelInputMode::Ili, &small(), Some(t3), &mut rng).unwrap();
        // With unit scale and zero shift the label cannot change the output yet.
        let z = sample_latent(3, 2, &mut rng);
        assert_eq!(
            g.eval(&z, &[0.1, 0.1]).unwrap(),
            g.eval(&z, &[0.9, 0.9]).unwrap()
        );
    }
}
