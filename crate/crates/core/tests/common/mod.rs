//! Shared helpers for integration tests.
#![allow(dead_code)]

use ccgan::conditioning::{
    DiscOut, Discriminator, EmbedConfig, Embedder, Generator, LabelInputMode, NetSpec,
};
use ccgan::losses::{
    generator_loss, generator_loss_grad, hinge_generator_loss_grad, hinge_svdl, hinge_svdl_grad,
    hvdl, hvdl_grad, svdl, svdl_grad, DiscOutputs,
};
use ccgan::netcore::{relative_error, sample_latent, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Hvdl,
    Svdl,
    HingeSvdl,
    Generator,
    HingeGenerator,
}

pub const LOSS_KINDS: [LossKind; 5] = [
    LossKind::Hvdl,
    LossKind::Svdl,
    LossKind::HingeSvdl,
    LossKind::Generator,
    LossKind::HingeGenerator,
];

pub const LABEL_MODES: [LabelInputMode; 4] = [
    LabelInputMode::Nli,
    LabelInputMode::Ili,
    LabelInputMode::Concat,
    LabelInputMode::ClassBin(5),
];

#[derive(Debug, Clone)]
pub struct GradCase {
    pub loss: LossKind,
    pub mode: LabelInputMode,
    pub seed: u64,
}

/// One case per (loss, label mode) pair, each with its own random nets.
pub fn grad_cases() -> Vec<GradCase> {
    let mut v = Vec::new();
    let mut seed = 100;
    for loss in LOSS_KINDS {
        for mode in LABEL_MODES {
            v.push(GradCase { loss, mode, seed });
            seed += 1;
        }
    }
    v
}

struct Setup {
    g: Generator,
    d: Discriminator,
    z: Tensor,
    real: Tensor,
    labels: Vec<f64>,
    real_w: Vec<f64>,
    fake_w: Vec<f64>,
}

fn setup(case: &GradCase) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let width = |rng: &mut ChaCha8Rng| rng.random_range(3..8usize);
    let depth = rng.random_range(1..3usize);
    let net = NetSpec {
        latent_dim: rng.random_range(1..4),
        data_dim: rng.random_range(1..4),
        g_hidden: (0..depth).map(|_| width(&mut rng)).collect(),
        d_hidden: (0..depth).map(|_| width(&mut rng)).collect(),
    };
    let t3 = (case.mode == LabelInputMode::Ili).then(|| {
        let cfg = EmbedConfig {
            d_f: 4,
            t3_hidden: vec![5],
            ..EmbedConfig::default()
        };
        Embedder::new(&cfg, &mut rng).unwrap()
    });
    let g = Generator::new(case.mode, &net, t3.clone(), &mut rng).unwrap();
    let d = Discriminator::new(case.mode, &net, t3, &mut rng).unwrap();
    let n = rng.random_range(3..7usize);
    let labels: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let z = sample_latent(net.latent_dim, n, &mut rng);
    let real = Tensor::matrix(
        n,
        net.data_dim,
        (0..n * net.data_dim)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect(),
    )
    .unwrap();
    let weights = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(0.01..1.0)).collect()
    };
    let real_w = weights(&mut rng);
    let fake_w = weights(&mut rng);
    Setup {
        g,
        d,
        z,
        real,
        labels,
        real_w,
        fake_w,
    }
}

fn params(s: &mut Setup, generator: bool) -> &mut ParamStore {
    if generator {
        s.g.store_mut()
    } else {
        s.d.store_mut()
    }
}

fn disc_eval(d: &Discriminator, x: &Tensor, labels: &[f64]) -> (Tape, DiscOut) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone()).unwrap();
    let out = d.forward(&mut tape, xv, labels).unwrap();
    (tape, out)
}

fn disc_loss(case: &GradCase, s: &Setup, fake: &Tensor) -> f64 {
    let (tr, or) = disc_eval(&s.d, &s.real, &s.labels);
    let (tf, of) = disc_eval(&s.d, fake, &s.labels);
    let out = |raw: bool| {
        let pick =
            |t: &Tape, o: &DiscOut| t.value(if raw { o.raw } else { o.prob }).data().to_vec();
        DiscOutputs {
            real_scores: pick(&tr, &or),
            fake_scores: pick(&tf, &of),
            real_weights: s.real_w.clone(),
            fake_weights: s.fake_w.clone(),
        }
    };
    match case.loss {
        LossKind::Hvdl => {
            let o = out(false);
            hvdl(&o.real_scores, &o.fake_scores).unwrap()
        }
        LossKind::Svdl => svdl(&out(false)).unwrap(),
        LossKind::HingeSvdl => hinge_svdl(&out(true)).unwrap(),
        _ => unreachable!(),
    }
}

fn gen_loss(case: &GradCase, s: &Setup) -> f64 {
    let fake = s.g.eval(&s.z, &s.labels).unwrap();
    let (t, o) = disc_eval(&s.d, &fake, &s.labels);
    match case.loss {
        LossKind::Generator => generator_loss(t.value(o.prob).data()).unwrap(),
        LossKind::HingeGenerator => {
            let raw = t.value(o.raw).data();
            -raw.iter().sum::<f64>() / raw.len() as f64
        }
        _ => unreachable!(),
    }
}

/// Analytic gradients (loss-module upstream gradients pushed through the
/// tape) against central differences of the loss value.
pub fn check_case(case: &GradCase, h: f64) -> (f64, usize) {
    let mut s = setup(case);
    let is_gen = matches!(case.loss, LossKind::Generator | LossKind::HingeGenerator);
    let analytic: Vec<Tensor> = if is_gen {
        let mut tape = Tape::new();
        let zv = tape.constant(s.z.clone()).unwrap();
        let x = s.g.forward(&mut tape, zv, &s.labels).unwrap();
        let o = s.d.forward(&mut tape, x, &s.labels).unwrap();
        let (grad, v) = match case.loss {
            LossKind::Generator => (
                generator_loss_grad(tape.value(o.prob).data()).unwrap(),
                o.prob,
            ),
            _ => (
                hinge_generator_loss_grad(tape.value(o.raw).data()).unwrap(),
                o.raw,
            ),
        };
        tape.backward(v, &Tensor::column(&grad.d_fake))
            .unwrap()
            .for_store(s.g.store())
            .unwrap()
    } else {
        let fake = s.g.eval(&s.z, &s.labels).unwrap();
        let (tr, or) = disc_eval(&s.d, &s.real, &s.labels);
        let (tf, of) = disc_eval(&s.d, &fake, &s.labels);
        let raw = case.loss == LossKind::HingeSvdl;
        let pick =
            |t: &Tape, o: &DiscOut| t.value(if raw { o.raw } else { o.prob }).data().to_vec();
        let out = DiscOutputs {
            real_scores: pick(&tr, &or),
            fake_scores: pick(&tf, &of),
            real_weights: s.real_w.clone(),
            fake_weights: s.fake_w.clone(),
        };
        let grad = match case.loss {
            LossKind::Hvdl => hvdl_grad(&out.real_scores, &out.fake_scores).unwrap(),
            LossKind::Svdl => svdl_grad(&out).unwrap(),
            _ => hinge_svdl_grad(&out).unwrap(),
        };
        let (vr, vf) = if raw {
            (or.raw, of.raw)
        } else {
            (or.prob, of.prob)
        };
        let mut g = tr
            .backward(vr, &Tensor::column(&grad.d_real))
            .unwrap()
            .for_store(s.d.store())
            .unwrap();
        let gf = tf
            .backward(vf, &Tensor::column(&grad.d_fake))
            .unwrap()
            .for_store(s.d.store())
            .unwrap();
        for (a, b) in g.iter_mut().zip(gf) {
            a.add_assign(&b).unwrap();
        }
        g
    };
    let fake = s.g.eval(&s.z, &s.labels).unwrap();
    let value = |s: &Setup| {
        if is_gen {
            gen_loss(case, s)
        } else {
            disc_loss(case, s, &fake)
        }
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    for p in 0..analytic.len() {
        for k in 0..analytic[p].len() {
            let orig = params(&mut s, is_gen).values()[p].data()[k];
            params(&mut s, is_gen).values_mut()[p].data_mut()[k] = orig + h;
            let up = value(&s);
            params(&mut s, is_gen).values_mut()[p].data_mut()[k] = orig - h;
            let down = value(&s);
            params(&mut s, is_gen).values_mut()[p].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic[p].data()[k], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}
