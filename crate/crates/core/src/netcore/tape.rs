use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::{Error, Result};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter tensors of one network. Every mutation bumps `version`, which
/// tapes use to detect gradients recorded against stale values.
#[derive(Debug)]
pub struct ParamStore {
    id: u64,
    names: Vec<String>,
    values: Vec<Tensor>,
    version: u64,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.clone(),
            version: self.version,
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values == other.values
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            values: Vec::new(),
            version: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.version += 1;
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if !self.values[id.0].same_shape(&value) {
            return Err(Error::Shape(format!(
                "parameter {} has shape {:?}, got {:?}",
                self.names[id.0],
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        self.version += 1;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mutable access to every parameter; counts as one update.
    pub fn values_mut(&mut self) -> &mut [Tensor] {
        self.version += 1;
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Hash of every parameter bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            n.hash(&mut h);
            v.shape().hash(&mut h);
            for x in v.data() {
                x.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(&self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation {other:?}"
            ))),
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param { store: u64, index: usize },
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddColumn(Var, Var),
    Act(Var, Activation),
    RowDot(Var, Var),
    Concat(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    scope: String,
}

/// Wengert list of a forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    versions: Vec<(u64, u64)>,
    scope: String,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Name attached to subsequently recorded nodes, used in error messages.
    pub fn set_scope(&mut self, scope: impl Into<String>) {
        self.scope = scope.into();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, what: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("{} ({what})", self.scope)));
        }
        self.nodes.push(Node {
            value,
            op,
            scope: self.scope.clone(),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "input")
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        match self.versions.iter().find(|(s, _)| *s == store.id) {
            Some(&(_, v)) if v != store.version => {
                return Err(Error::StaleTape {
                    recorded: v,
                    current: store.version,
                })
            }
            Some(_) => {}
            None => self.versions.push((store.id, store.version)),
        }
        self.push(
            store.get(id).clone(),
            Op::Param {
                store: store.id,
                index: id.0,
            },
            "parameter",
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    /// `[n, m] + [1, m]` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, bias) = (self.value(a), self.value(b));
        if bias.rows() != 1 || bias.cols() != x.cols() {
            return Err(Error::Shape(format!(
                "{}: bias {:?} for input {:?}",
                self.scope,
                bias.shape(),
                x.shape()
            )));
        }
        let c = x.cols();
        let mut v = x.clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e += bias.data()[i % c];
        }
        self.push(v, Op::AddBias(a, b), "bias")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(v, Op::Mul(a, b), "mul")
    }

    /// `[n, m] + [n, 1]` broadcast over columns.
    pub fn add_column(&mut self, a: Var, col: Var) -> Result<Var> {
        let (x, c) = (self.value(a), self.value(col));
        if c.cols() != 1 || c.rows() != x.rows() {
            return Err(Error::Shape(format!(
                "{}: column {:?} for input {:?}",
                self.scope,
                c.shape(),
                x.shape()
            )));
        }
        let m = x.cols();
        let mut v = x.clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e += c.data()[i / m];
        }
        self.push(v, Op::AddColumn(a, col), "add_column")
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        if act == Activation::Identity {
            return Ok(a);
        }
        let v = self.value(a).map(|x| act.apply(x));
        self.push(v, Op::Act(a, act), act.as_str())
    }

    /// Row-wise inner product `[n, m] . [n, m] -> [n, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(Error::Shape(format!(
                "{}: projection of {:?} onto {:?}",
                self.scope,
                x.shape(),
                y.shape()
            )));
        }
        let m = x.cols();
        let out: Vec<f64> = (0..x.rows())
            .map(|r| {
                x.data()[r * m..(r + 1) * m]
                    .iter()
                    .zip(&y.data()[r * m..(r + 1) * m])
                    .map(|(p, q)| p * q)
                    .sum()
            })
            .collect();
        self.push(Tensor::column(&out), Op::RowDot(a, b), "row_dot")
    }

    /// Column concatenation `[n, a] | [n, b] -> [n, a + b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() {
            return Err(Error::Shape(format!(
                "{}: concat {:?} with {:?}",
                self.scope,
                x.shape(),
                y.shape()
            )));
        }
        let (ca, cb) = (x.cols(), y.cols());
        let mut out = Vec::with_capacity(x.rows() * (ca + cb));
        for r in 0..x.rows() {
            out.extend_from_slice(x.row(r));
            out.extend_from_slice(y.row(r));
        }
        let v = Tensor::matrix(x.rows(), ca + cb, out)?;
        self.push(v, Op::Concat(a, b), "concat")
    }

    /// Reverse sweep from `out` seeded with `upstream` (same shape as `out`).
    pub fn backward(&self, out: Var, upstream: &Tensor) -> Result<Gradients> {
        if !self.value(out).same_shape(upstream) {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} for output {:?}",
                upstream.shape(),
                self.value(out).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        grads[out.0] = Some(upstream.clone());
        let mut params: HashMap<(u64, usize), Tensor> = HashMap::new();
        let mut leaves: HashMap<usize, Tensor> = HashMap::new();

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot @ None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("backward through {}", node.scope)));
            }
            match node.op {
                Op::Leaf => {
                    leaves.insert(i, g);
                }
                Op::Param { store, index } => match params.get_mut(&(store, index)) {
                    Some(t) => t.add_assign(&g)?,
                    None => {
                        params.insert((store, index), g);
                    }
                },
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(b))?;
                    let gb = self.value(a).t_matmul(&g)?;
                    acc(&mut grads, a, ga)?;
                    acc(&mut grads, b, gb)?;
                }
                Op::AddBias(a, b) => {
                    let gb = g.sum_rows();
                    acc(&mut grads, a, g)?;
                    acc(&mut grads, b, gb)?;
                }
                Op::Add(a, b) => {
                    acc(&mut grads, a, g.clone())?;
                    acc(&mut grads, b, g)?;
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(b), |x, y| x * y)?;
                    let gb = g.zip_map(self.value(a), |x, y| x * y)?;
                    acc(&mut grads, a, ga)?;
                    acc(&mut grads, b, gb)?;
                }
                Op::AddColumn(a, c) => {
                    let m = g.cols();
                    let sums: Vec<f64> = (0..g.rows())
                        .map(|r| g.data()[r * m..(r + 1) * m].iter().sum())
                        .collect();
                    acc(&mut grads, a, g)?;
                    acc(&mut grads, c, Tensor::column(&sums))?;
                }
                Op::Act(a, act) => {
                    let x = self.value(a);
                    let y = &node.value;
                    let mut ga = g;
                    for ((gv, &xv), &yv) in ga.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                        *gv *= act.derivative(xv, yv);
                    }
                    acc(&mut grads, a, ga)?;
                }
                Op::RowDot(a, b) => {
                    let (x, y) = (self.value(a), self.value(b));
                    let m = x.cols();
                    let mut ga = y.clone();
                    let mut gb = x.clone();
                    for (k, (p, q)) in ga.data_mut().iter_mut().zip(gb.data_mut()).enumerate() {
                        let s = g.data()[k / m];
                        *p *= s;
                        *q *= s;
                    }
                    acc(&mut grads, a, ga)?;
                    acc(&mut grads, b, gb)?;
                }
                Op::Concat(a, b) => {
                    let ca = self.value(a).cols();
                    let cb = self.value(b).cols();
                    let n = g.rows();
                    let mut da = Vec::with_capacity(n * ca);
                    let mut db = Vec::with_capacity(n * cb);
                    for r in 0..n {
                        let row = g.row(r);
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    acc(&mut grads, a, Tensor::matrix(n, ca, da)?)?;
                    acc(&mut grads, b, Tensor::matrix(n, cb, db)?)?;
                }
            }
        }
        Ok(Gradients {
            params,
            leaves,
            versions: self.versions.clone(),
        })
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    params: HashMap<(u64, usize), Tensor>,
    leaves: HashMap<usize, Tensor>,
    versions: Vec<(u64, u64)>,
}

impl Gradients {
    /// Gradient for every parameter of `store`, zeros where the tape never
    /// touched it.
    pub fn for_store(&self, store: &ParamStore) -> Result<Vec<Tensor>> {
        if let Some(&(_, v)) = self.versions.iter().find(|(s, _)| *s == store.id) {
            if v != store.version {
                return Err(Error::StaleTape {
                    recorded: v,
                    current: store.version,
                });
            }
        }
        Ok(store
            .values
            .iter()
            .enumerate()
            .map(|(i, p)| {
                self.params
                    .get(&(store.id, i))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.shape()))
            })
            .collect())
    }

    /// Gradient w.r.t. a constant input, if any reached it.
    pub fn input(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }
}
