//! Training loops for CcGAN and the class-binned / concat baselines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conditioning::{
    DiscOut, Discriminator, EmbedConfig, EmbeddingStack, Generator, LabelInputMode, NetSpec,
};
use crate::config::manifest_to_config_text;
use crate::data::{LabeledDataset, Manifest, Oracle};
use crate::eval::{conditional_mean_error, label_score, sfid, FeatureExtractor, SfidConfig};
use crate::losses::{
    generator_loss_grad, hinge_generator_loss_grad, hinge_svdl_grad, hvdl_grad, svdl_grad,
    DiscOutputs, LossFamily, LossGrad,
};
use crate::netcore::{sample_latent, AdamState, Checkpoint, Tape, Tensor};
use crate::sampler::{assemble_batch, draw_target_labels, SamplerConfig, VicinalMode};
use crate::vicinal::{LabelSet, VicinalParams};
use crate::{fmt_f64, Error, Result};

/// Stream ids carved out of the run seed.
const EVAL_STREAM: u64 = 1;
const EMBED_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    CcGan {
        kernel: VicinalMode,
        label_input: LabelInputMode,
        loss: LossFamily,
    },
    CganBin {
        k: usize,
    },
    CganConcat,
}

impl Method {
    pub fn label_input(&self) -> LabelInputMode {
        match self {
            Method::CcGan { label_input, .. } => *label_input,
            Method::CganBin { k } => LabelInputMode::ClassBin(*k),
            Method::CganConcat => LabelInputMode::Concat,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::CcGan { .. } => "ccgan",
            Method::CganBin { .. } => "cgan_bin",
            Method::CganConcat => "cgan_concat",
        }
    }
}

/// Vicinal hyper-parameters; `None` entries are resolved by the rule of thumb.
#[derive(Debug, Clone, PartialEq)]
pub struct VicinalChoice {
    pub sigma: Option<f64>,
    pub kappa: Option<f64>,
    pub nu: Option<f64>,
    pub m_kappa: f64,
    pub max_retries: usize,
    pub clamp_labels: bool,
}

impl Default for VicinalChoice {
    fn default() -> Self {
        VicinalChoice {
            sigma: None,
            kappa: None,
            nu: None,
            m_kappa: 1.0,
            max_retries: 10,
            clamp_labels: true,
        }
    }
}

impl VicinalChoice {
    pub fn resolve(&self, labels: &LabelSet) -> Result<VicinalParams> {
        let auto = VicinalParams::rule_of_thumb(labels, self.m_kappa)?;
        let sigma = self.sigma.unwrap_or(auto.sigma);
        let kappa = self.kappa.unwrap_or(auto.kappa);
        let nu = self.nu.unwrap_or(1.0 / (kappa * kappa));
        VicinalParams::new(sigma, kappa, nu, self.m_kappa)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    /// Fake samples generated per evaluation label.
    pub n_per_label: usize,
    /// SFID window radius; no SFID column when absent.
    pub sfid_radius: Option<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            n_per_label: 100,
            sfid_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub iters: usize,
    pub batch_d: usize,
    pub batch_g: usize,
    pub d_steps_per_g: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub out_dir: Option<PathBuf>,
    pub net: NetSpec,
    pub vicinal: VicinalChoice,
    pub embed: EmbedConfig,
    pub eval: EvalSettings,
    /// Directory holding checkpoints of a previous run to continue from.
    pub resume: Option<PathBuf>,
    /// Extra keys recorded verbatim in the run manifest.
    pub provenance: Manifest,
}

impl TrainConfig {
    pub fn new(method: Method) -> Self {
        TrainConfig {
            method,
            iters: 5000,
            batch_d: 64,
            batch_g: 64,
            d_steps_per_g: 1,
            lr_g: AdamState::DEFAULT_LR,
            lr_d: AdamState::DEFAULT_LR,
            beta1: AdamState::DEFAULT_BETA1,
            beta2: AdamState::DEFAULT_BETA2,
            seed: 0,
            eval_every: 500,
            out_dir: None,
            net: NetSpec::default(),
            vicinal: VicinalChoice::default(),
            embed: EmbedConfig::default(),
            eval: EvalSettings::default(),
            resume: None,
            provenance: Manifest::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Config("train.iters must be >= 1".into()));
        }
        if self.batch_d == 0 || self.batch_g == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if self.d_steps_per_g == 0 {
            return Err(Error::Config("train.d_steps_per_g must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("train.eval_every must be >= 1".into()));
        }
        for (name, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("train.{name} must be positive")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("train.{name} must be in [0, 1)")));
            }
        }
        if let Method::CcGan { label_input, .. } = self.method {
            if !matches!(label_input, LabelInputMode::Nli | LabelInputMode::Ili) {
                return Err(Error::Config(format!(
                    "ccgan takes nli or ili label input, got {}",
                    label_input.name()
                )));
            }
        }
        self.method.label_input().validate()?;
        self.net.validate()
    }

    /// Effective settings as config-file keys.
    pub fn manifest(&self, resolved: Option<&VicinalParams>) -> Manifest {
        let mut m = self.provenance.clone();
        m.insert("train.method", self.method.name());
        match self.method {
            Method::CcGan {
                kernel,
                label_input,
                loss,
            } => {
                m.insert("vicinal.kernel", kernel.as_str());
                m.insert("model.label_input", label_input.name());
                m.insert("train.loss", loss.as_str());
            }
            Method::CganBin { k } => m.insert("bin.K", k.to_string()),
            Method::CganConcat => {}
        }
        m.insert("train.iters", self.iters.to_string());
        m.insert("train.batch_d", self.batch_d.to_string());
        m.insert("train.batch_g", self.batch_g.to_string());
        m.insert("train.d_steps_per_g", self.d_steps_per_g.to_string());
        m.insert("train.lr_g", fmt_f64(self.lr_g));
        m.insert("train.lr_d", fmt_f64(self.lr_d));
        m.insert("train.beta1", fmt_f64(self.beta1));
        m.insert("train.beta2", fmt_f64(self.beta2));
        m.insert("train.seed", self.seed.to_string());
        m.insert("train.eval_every", self.eval_every.to_string());
        m.insert("model.latent_dim", self.net.latent_dim.to_string());
        m.insert("model.g_hidden", join(&self.net.g_hidden));
        m.insert("model.d_hidden", join(&self.net.d_hidden));
        if let Some(p) = resolved {
            m.insert("vicinal.sigma", fmt_f64(p.sigma));
            m.insert("vicinal.kappa", fmt_f64(p.kappa));
            m.insert("vicinal.nu", fmt_f64(p.nu));
        }
        m.insert("vicinal.m_kappa", fmt_f64(self.vicinal.m_kappa));
        m.insert("vicinal.max_retries", self.vicinal.max_retries.to_string());
        m.insert(
            "vicinal.clamp_labels",
            self.vicinal.clamp_labels.to_string(),
        );
        m.insert("eval.n_per_label", self.eval.n_per_label.to_string());
        if let Some(r) = self.eval.sfid_radius {
            m.insert("eval.sfid_radius", fmt_f64(r));
        }
        if self.method.label_input() == LabelInputMode::Ili {
            m.insert("embed.d_f", self.embed.d_f.to_string());
            m.insert("embed.t1_hidden", join(&self.embed.t1_hidden));
            m.insert("embed.t3_hidden", join(&self.embed.t3_hidden));
            m.insert("embed.sigma_gamma", fmt_f64(self.embed.sigma_gamma));
            m.insert(
                "embed.regressor_epochs",
                self.embed.regressor_epochs.to_string(),
            );
            m.insert("embed.embed_steps", self.embed.embed_steps.to_string());
            m.insert("embed.batch", self.embed.batch.to_string());
            m.insert("embed.lr", fmt_f64(self.embed.lr));
        }
        m
    }
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// One logged evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLogRow {
    pub iter: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub label_score: Option<f64>,
    pub cond_mean_err: Option<f64>,
    pub sfid: Option<f64>,
    /// Nearest-label fallbacks since the previous row.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<RunLogRow>,
}

pub const RUNLOG_HEADER: &str = "iter,d_loss,g_loss,label_score,cond_mean_err,sfid,fallbacks";

impl RunLog {
    pub fn push(&mut self, row: RunLogRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.iter <= last.iter {
                return Err(Error::InvalidArgument(format!(
                    "run log rows must increase: {} after {}",
                    row.iter, last.iter
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn last(&self) -> Option<&RunLogRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut s = String::from(RUNLOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.iter,
                fmt_f64(r.d_loss),
                fmt_f64(r.g_loss),
                opt(r.label_score),
                opt(r.cond_mean_err),
                opt(r.sfid),
                r.fallbacks
            );
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines();
        if lines.next() != Some(RUNLOG_HEADER) {
            return Err(err(1, "unexpected run log header"));
        }
        let mut log = RunLog::default();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(err(lineno, "expected 7 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(lineno, "bad number"));
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    num(s).map(Some)
                }
            };
            log.push(RunLogRow {
                iter: f[0].parse().map_err(|_| err(lineno, "bad iteration"))?,
                d_loss: num(f[1])?,
                g_loss: num(f[2])?,
                label_score: opt(f[3])?,
                cond_mean_err: opt(f[4])?,
                sfid: opt(f[5])?,
                fallbacks: f[6]
                    .parse()
                    .map_err(|_| err(lineno, "bad fallback count"))?,
            })
            .map_err(|e| err(lineno, &e.to_string()))?;
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Held-out metrics of a generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub label_score: Option<f64>,
    pub cond_mean_err: Option<f64>,
    pub sfid: Option<f64>,
}

/// Scores generators on a fixed set of labels with its own random stream.
#[derive(Debug, Clone)]
pub struct Evaluator {
    real: LabeledDataset,
    labels: Vec<f64>,
    oracle: Option<Oracle>,
    settings: EvalSettings,
    seed: u64,
}

impl Evaluator {
    /// Evaluates at the distinct labels of `real`; ground-truth metrics need a
    /// synthetic spec attached to `real`.
    pub fn new(real: &LabeledDataset, settings: EvalSettings, seed: u64) -> Self {
        Evaluator {
            labels: real.distinct_labels(),
            oracle: real.spec().cloned().map(Oracle::new),
            real: real.clone(),
            settings,
            seed,
        }
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn evaluate(&self, g: &Generator) -> Result<Metrics> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(EVAL_STREAM);
        let fake = generate_samples(
            g,
            &self.labels,
            self.settings.n_per_label,
            self.real.labels().raw_min(),
            self.real.labels().raw_max(),
            &mut rng,
        )?;
        if fake.is_empty() {
            return Ok(Metrics {
                label_score: None,
                cond_mean_err: None,
                sfid: None,
            });
        }
        let (ls, cme) = match &self.oracle {
            Some(o) => (
                Some(label_score(&fake, |x| o.spec().predict_label(x))?),
                Some(conditional_mean_error(&fake, o)?),
            ),
            None => (None, None),
        };
        let sfid_value = match self.settings.sfid_radius {
            Some(r) => match sfid(
                &self.real,
                &fake,
                &SfidConfig::new(self.labels.clone(), r),
                &FeatureExtractor::Identity,
            ) {
                Ok(rep) => Some(rep.mean),
                Err(Error::NoWindows { .. }) => None,
                Err(e) => return Err(e),
            },
            None => None,
        };
        Ok(Metrics {
            label_score: ls,
            cond_mean_err: cme,
            sfid: sfid_value,
        })
    }
}

/// `n_per_label` generated samples for each normalized label.
pub fn generate_samples<R: Rng + ?Sized>(
    g: &Generator,
    labels: &[f64],
    n_per_label: usize,
    raw_min: f64,
    raw_max: f64,
    rng: &mut R,
) -> Result<LabeledDataset> {
    let mut out = LabeledDataset::empty(g.data_dim(), raw_min, raw_max)?;
    if n_per_label == 0 || labels.is_empty() {
        return Ok(out);
    }
    let all: Vec<f64> = labels
        .iter()
        .flat_map(|&y| std::iter::repeat_n(y, n_per_label))
        .collect();
    let x = g.generate(&all, rng)?;
    for (r, &y) in all.iter().enumerate() {
        out.push(x.row(r).to_vec(), y)?;
    }
    Ok(out)
}

/// Loads a generator checkpoint and samples from it; the label range is read
/// from the checkpoint.
pub fn generate_from_checkpoint<R: Rng + ?Sized>(
    ck: &Checkpoint,
    labels: &[f64],
    n_per_label: usize,
    rng: &mut R,
) -> Result<LabeledDataset> {
    let g = Generator::from_checkpoint(ck)?;
    let range = |k: &str| -> Result<f64> {
        ck.meta(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config(format!("generator checkpoint lacks {k}")))
    };
    generate_samples(
        &g,
        labels,
        n_per_label,
        range("raw_min")?,
        range("raw_max")?,
        rng,
    )
}

/// Training state for one run.
#[derive(Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    train: LabeledDataset,
    distinct: Vec<f64>,
    sampler: Option<SamplerConfig>,
    g: Generator,
    d: Discriminator,
    adam_g: AdamState,
    adam_d: AdamState,
    rng: ChaCha8Rng,
    iter: usize,
    fallbacks: usize,
    last_d_loss: f64,
    last_g_loss: f64,
}

fn check_loss(l: &LossGrad, iter: usize, what: &str) -> Result<()> {
    let finite = l.value.is_finite() && l.d_real.iter().chain(&l.d_fake).all(|v| v.is_finite());
    if finite {
        Ok(())
    } else {
        Err(Error::Diverged {
            iter,
            what: format!("{what} loss is not finite"),
        })
    }
}

fn as_diverged(e: Error, iter: usize) -> Error {
    match e {
        Error::NonFinite(msg) => Error::Diverged { iter, what: msg },
        other => other,
    }
}

impl Trainer {
    /// Builds networks for `cfg`. ILI needs an embedding stack; one is trained
    /// on `train` from the run seed when not supplied.
    pub fn new(
        train: &LabeledDataset,
        cfg: &TrainConfig,
        embedding: Option<EmbeddingStack>,
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::TooFew {
                what: "training samples",
                need: 1,
                got: 0,
            });
        }
        let mut net = cfg.net.clone();
        net.data_dim = train.dim();
        let mode = cfg.method.label_input();
        let t3 = if mode == LabelInputMode::Ili {
            let stack = match embedding {
                Some(s) => s,
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(EMBED_STREAM);
                    EmbeddingStack::train(train, &cfg.embed, &mut rng)?.0
                }
            };
            Some(stack.embedder)
        } else {
            None
        };
        let sampler = match cfg.method {
            Method::CcGan { kernel, .. } => {
                let params = cfg.vicinal.resolve(train.labels())?;
                let mut s = SamplerConfig::new(kernel, params);
                s.batch_d = cfg.batch_d;
                s.batch_g = cfg.batch_g;
                s.max_retries = cfg.vicinal.max_retries;
                s.clamp_labels = cfg.vicinal.clamp_labels;
                s.validate()?;
                Some(s)
            }
            _ => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut g = Generator::new(mode, &net, t3.clone(), &mut rng)?;
        let mut d = Discriminator::new(mode, &net, t3, &mut rng)?;
        let mut start = 0;
        if let Some(dir) = &cfg.resume {
            let gck = Checkpoint::read(&dir.join("generator.ckpt"))?;
            let dck = Checkpoint::read(&dir.join("discriminator.ckpt"))?;
            if gck.meta("label_input") != Some(mode.name().as_str()) {
                return Err(Error::Config(
                    "resume checkpoint uses a different label input".into(),
                ));
            }
            g = Generator::from_checkpoint(&gck)?;
            d = Discriminator::from_checkpoint(&dck)?;
            start = gck
                .meta("iter")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config("resume checkpoint lacks iter".into()))?;
            rng.set_stream(start as u64 + 2);
        }
        let adam_g = AdamState::with_hyper(g.store(), cfg.lr_g, cfg.beta1, cfg.beta2);
        let adam_d = AdamState::with_hyper(d.store(), cfg.lr_d, cfg.beta1, cfg.beta2);
        Ok(Trainer {
            cfg: cfg.clone(),
            distinct: train.distinct_labels(),
            train: train.clone(),
            sampler,
            g,
            d,
            adam_g,
            adam_d,
            rng,
            iter: start,
            fallbacks: 0,
            last_d_loss: f64::NAN,
            last_g_loss: f64::NAN,
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.g
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.d
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn vicinal_params(&self) -> Option<&VicinalParams> {
        self.sampler.as_ref().map(|s| &s.params)
    }

    fn disc_pass(&self, x: Tensor, labels: &[f64]) -> Result<(Tape, DiscOut)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x)?;
        let out = self.d.forward(&mut tape, xv, labels)?;
        Ok((tape, out))
    }

    /// One discriminator update; returns its loss.
    pub fn d_step(&mut self) -> Result<f64> {
        let dim = self.train.dim();
        let (real_x, real_labels, fake_x, fake_labels, weights) = match &self.sampler {
            Some(s) => {
                let batch = assemble_batch(&self.train, &self.distinct, s, &mut self.rng);
                self.fallbacks += batch.fallback_count();
                let fake = self.g.generate(&batch.gen_labels, &mut self.rng)?;
                let real = Tensor::from_rows(&batch.real_samples, dim)?;
                (
                    real,
                    batch.targets.clone(),
                    fake,
                    batch.targets,
                    Some((batch.real_weights, batch.fake_weights)),
                )
            }
            None => {
                let n = self.cfg.batch_d;
                let idx: Vec<usize> = (0..n)
                    .map(|_| self.rng.random_range(0..self.train.len()))
                    .collect();
                let rows: Vec<Vec<f64>> =
                    idx.iter().map(|&i| self.train.sample(i).to_vec()).collect();
                let labels: Vec<f64> = idx.iter().map(|&i| self.train.label(i)).collect();
                let fake_labels: Vec<f64> = (0..n)
                    .map(|_| self.distinct[self.rng.random_range(0..self.distinct.len())])
                    .collect();
                let fake = self.g.generate(&fake_labels, &mut self.rng)?;
                (
                    Tensor::from_rows(&rows, dim)?,
                    labels,
                    fake,
                    fake_labels,
                    None,
                )
            }
        };
        let iter = self.iter;
        let (tr, or) = self
            .disc_pass(real_x, &real_labels)
            .map_err(|e| as_diverged(e, iter))?;
        let (tf, of) = self
            .disc_pass(fake_x, &fake_labels)
            .map_err(|e| as_diverged(e, iter))?;
        let (loss, use_raw) = match (self.cfg.method, weights) {
            (
                Method::CcGan {
                    loss: LossFamily::Hinge,
                    ..
                },
                Some((rw, fw)),
            ) => {
                let out = DiscOutputs {
                    real_scores: tr.value(or.raw).data().to_vec(),
                    fake_scores: tf.value(of.raw).data().to_vec(),
                    real_weights: rw,
                    fake_weights: fw,
                };
                (hinge_svdl_grad(&out)?, true)
            }
            (
                Method::CcGan {
                    kernel: VicinalMode::Soft,
                    ..
                },
                Some((rw, fw)),
            ) => {
                let out = DiscOutputs {
                    real_scores: tr.value(or.prob).data().to_vec(),
                    fake_scores: tf.value(of.prob).data().to_vec(),
                    real_weights: rw,
                    fake_weights: fw,
                };
                (svdl_grad(&out)?, false)
            }
            _ => (
                hvdl_grad(tr.value(or.prob).data(), tf.value(of.prob).data())?,
                false,
            ),
        };
        check_loss(&loss, iter, "discriminator")?;
        let (vr, vf) = if use_raw {
            (or.raw, of.raw)
        } else {
            (or.prob, of.prob)
        };
        let gr = tr
            .backward(vr, &Tensor::column(&loss.d_real))
            .map_err(|e| as_diverged(e, iter))?;
        let gf = tf
            .backward(vf, &Tensor::column(&loss.d_fake))
            .map_err(|e| as_diverged(e, iter))?;
        let mut grads = gr.for_store(self.d.store())?;
        for (a, b) in grads.iter_mut().zip(gf.for_store(self.d.store())?) {
            a.add_assign(&b)?;
        }
        self.adam_d.step(self.d.store_mut(), &grads)?;
        self.last_d_loss = loss.value;
        Ok(loss.value)
    }

    /// One generator update; returns its loss.
    pub fn g_step(&mut self) -> Result<f64> {
        let n = self.cfg.batch_g;
        let labels = match &self.sampler {
            Some(s) => draw_target_labels(
                &self.distinct,
                n,
                s.params.sigma,
                s.clamp_labels,
                &mut self.rng,
            ),
            None => (0..n)
                .map(|_| self.distinct[self.rng.random_range(0..self.distinct.len())])
                .collect(),
        };
        let z = sample_latent(self.g.latent_dim(), n, &mut self.rng);
        let iter = self.iter;
        let mut tape = Tape::new();
        let zv = tape.constant(z)?;
        let fake = self
            .g
            .forward(&mut tape, zv, &labels)
            .map_err(|e| as_diverged(e, iter))?;
        let out = self
            .d
            .forward(&mut tape, fake, &labels)
            .map_err(|e| as_diverged(e, iter))?;
        let hinge = matches!(
            self.cfg.method,
            Method::CcGan {
                loss: LossFamily::Hinge,
                ..
            }
        );
        let (loss, v) = if hinge {
            (
                hinge_generator_loss_grad(tape.value(out.raw).data())?,
                out.raw,
            )
        } else {
            (generator_loss_grad(tape.value(out.prob).data())?, out.prob)
        };
        check_loss(&loss, iter, "generator")?;
        let grads = tape
            .backward(v, &Tensor::column(&loss.d_fake))
            .map_err(|e| as_diverged(e, iter))?
            .for_store(self.g.store())?;
        self.adam_g.step(self.g.store_mut(), &grads)?;
        self.last_g_loss = loss.value;
        Ok(loss.value)
    }

    /// `d_steps_per_g` discriminator updates followed by one generator update.
    pub fn step(&mut self) -> Result<()> {
        for _ in 0..self.cfg.d_steps_per_g {
            self.d_step()?;
        }
        self.g_step()?;
        self.iter += 1;
        Ok(())
    }

    fn stamp(&self, mut ck: Checkpoint) -> Checkpoint {
        ck.set_meta("iter", self.iter);
        ck.set_meta("seed", self.cfg.seed);
        ck.set_meta("method", self.cfg.method.name());
        ck.set_meta("raw_min", fmt_f64(self.train.labels().raw_min()));
        ck.set_meta("raw_max", fmt_f64(self.train.labels().raw_max()));
        ck
    }

    pub fn generator_checkpoint(&self) -> Checkpoint {
        self.stamp(self.g.checkpoint())
    }

    pub fn discriminator_checkpoint(&self) -> Checkpoint {
        self.stamp(self.d.checkpoint())
    }

    fn log_row(&mut self, evaluator: &Evaluator) -> Result<RunLogRow> {
        let m = evaluator.evaluate(&self.g)?;
        let row = RunLogRow {
            iter: self.iter,
            d_loss: self.last_d_loss,
            g_loss: self.last_g_loss,
            label_score: m.label_score,
            cond_mean_err: m.cond_mean_err,
            sfid: m.sfid,
            fallbacks: self.fallbacks,
        };
        self.fallbacks = 0;
        Ok(row)
    }

    fn save(&self, dir: &Path, log: &RunLog) -> Result<()> {
        self.generator_checkpoint()
            .write(&dir.join("generator.ckpt"))?;
        self.discriminator_checkpoint()
            .write(&dir.join("discriminator.ckpt"))?;
        log.write(&dir.join("runlog.csv"))
    }
}

/// Result of a finished run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub generator: Checkpoint,
    pub discriminator: Checkpoint,
    pub log: RunLog,
    pub vicinal: Option<VicinalParams>,
}

/// Full training run. Metrics are computed on `heldout` when it is nonempty
/// and on `data` otherwise. With `out_dir` set, checkpoints, the run log and
/// a manifest are written at every evaluation point, so an abort leaves the
/// last good state on disk.
pub fn train(
    data: &LabeledDataset,
    heldout: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    embedding: Option<EmbeddingStack>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(data, cfg, embedding)?;
    let eval_set = match heldout {
        Some(h) if !h.is_empty() => h,
        _ => data,
    };
    let evaluator = Evaluator::new(eval_set, cfg.eval.clone(), cfg.seed);
    let mut log = RunLog::default();
    if let Some(dir) = &cfg.resume {
        let p = dir.join("runlog.csv");
        if p.exists() {
            let prev = RunLog::read(&p)?;
            log.rows = prev
                .rows
                .into_iter()
                .filter(|r| r.iter <= trainer.iteration())
                .collect();
        }
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = cfg.manifest(trainer.vicinal_params());
        let path = dir.join("run.manifest");
        std::fs::write(&path, manifest_to_config_text(&m)).map_err(|e| Error::io(&path, e))?;
    }
    let end = trainer.iteration() + cfg.iters;
    while trainer.iteration() < end {
        trainer.step()?;
        let it = trainer.iteration();
        if it % cfg.eval_every == 0 || it == end {
            let row = trainer.log_row(&evaluator)?;
            log.push(row)?;
            if let Some(dir) = &cfg.out_dir {
                trainer.save(dir, &log)?;
            }
        }
    }
    Ok(TrainOutcome {
        generator: trainer.generator_checkpoint(),
        discriminator: trainer.discriminator_checkpoint(),
        vicinal: trainer.vicinal_params().cloned(),
        log,
    })
}

/// Class-binned cGAN baseline with `k` equal-width label bins.
pub fn train_baseline_bin(
    data: &LabeledDataset,
    heldout: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    k: usize,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        method: Method::CganBin { k },
        ..cfg.clone()
    };
    train(data, heldout, &cfg, None)
}

/// cGAN baseline with the label appended to the network inputs.
pub fn train_baseline_concat(
    data: &LabeledDataset,
    heldout: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        method: Method::CganConcat,
        ..cfg.clone()
    };
    train(data, heldout, &cfg, None)
}
