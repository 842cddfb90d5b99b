use rand::Rng;

use super::{Activation, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Squash {
    Sigmoid,
    None,
}

/// Layer widths `[input, hidden.., output]` with one activation per linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub squash: Squash,
}

impl MlpSpec {
    /// ReLU hidden layers, identity output layer.
    pub fn relu(input: usize, hidden: &[usize], output: usize, squash: Squash) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let mut activations = vec![Activation::Relu; hidden.len()];
        activations.push(Activation::Identity);
        MlpSpec {
            widths,
            activations,
            squash,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::InvalidArgument(
                "a net needs at least one hidden layer".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be >= 1".into()));
        }
        if self.activations.len() != self.widths.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.widths.len() - 1
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Values recorded by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct MlpOutput {
    /// Output of the last hidden layer.
    pub hidden: Var,
    /// Output layer before the squash.
    pub raw: Var,
    pub out: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    prefix: String,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
}

impl Mlp {
    /// Adds the layers to `store` under `prefix`, weights uniform in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        spec: MlpSpec,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..spec.num_layers() {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let b: Vec<f64> = (0..fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            weights.push(store.add(
                format!("{prefix}.l{l}.w"),
                Tensor::matrix(fan_in, fan_out, w)?,
            ));
            biases.push(store.add(format!("{prefix}.l{l}.b"), Tensor::matrix(1, fan_out, b)?));
        }
        Ok(Mlp {
            spec,
            prefix: prefix.to_string(),
            weights,
            biases,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn weight(&self, layer: usize) -> ParamId {
        self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> ParamId {
        self.biases[layer]
    }

    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, input: Var) -> Result<MlpOutput> {
        self.forward_with(store, tape, input, |_, _, v| Ok(v))
    }

    /// Forward pass where `hook(tape, layer, pre_activation)` may rewrite the
    /// pre-activation of every hidden layer.
    pub fn forward_with<F>(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        input: Var,
        mut hook: F,
    ) -> Result<MlpOutput>
    where
        F: FnMut(&mut Tape, usize, Var) -> Result<Var>,
    {
        let width = tape.value(input).cols();
        if tape.value(input).shape().len() != 2 || width != self.spec.input_dim() {
            return Err(Error::Shape(format!(
                "{}: input {:?}, expected {} columns",
                self.prefix,
                tape.value(input).shape(),
                self.spec.input_dim()
            )));
        }
        let last = self.spec.num_layers() - 1;
        let mut h = input;
        let mut hidden = input;
        let mut raw = input;
        for l in 0..=last {
            tape.set_scope(format!("{}.l{l}", self.prefix));
            let w = tape.param(store, self.weights[l])?;
            let b = tape.param(store, self.biases[l])?;
            let z = tape.matmul(h, w)?;
            let mut z = tape.add_bias(z, b)?;
            if l < last {
                z = hook(tape, l, z)?;
            }
            h = tape.activation(z, self.spec.activations[l])?;
            if l < last {
                hidden = h;
            } else {
                raw = h;
            }
        }
        tape.set_scope(format!("{}.out", self.prefix));
        let out = match self.spec.squash {
            Squash::Sigmoid => tape.activation(raw, Activation::Sigmoid)?,
            Squash::None => raw,
        };
        Ok(MlpOutput { hidden, raw, out })
    }

    /// Convenience evaluation without keeping the tape.
    pub fn eval(&self, store: &ParamStore, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone())?;
        let o = self.forward(store, &mut tape, x)?;
        Ok(tape.value(o.out).clone())
    }
}

/// A single affine map `x W + b` with `W` of shape `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    prefix: String,
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        let w: Vec<f64> = (0..input * output)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b: Vec<f64> = (0..output)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self::with_values(
            Tensor::matrix(input, output, w)?,
            Tensor::matrix(1, output, b)?,
            prefix,
            store,
        )
    }

    pub fn with_values(w: Tensor, b: Tensor, prefix: &str, store: &mut ParamStore) -> Result<Self> {
        if b.rows() != 1 || b.cols() != w.cols() {
            return Err(Error::Shape(format!(
                "{prefix}: bias {:?} for weight {:?}",
                b.shape(),
                w.shape()
            )));
        }
        Ok(Linear {
            prefix: prefix.to_string(),
            w: store.add(format!("{prefix}.w"), w),
            b: store.add(format!("{prefix}.b"), b),
        })
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.set_scope(self.prefix.clone());
        let w = tape.param(store, self.w)?;
        let b = tape.param(store, self.b)?;
        let z = tape.matmul(x, w)?;
        tape.add_bias(z, b)
    }
}
