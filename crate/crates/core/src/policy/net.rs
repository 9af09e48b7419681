use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::ParamBlock;
use super::dist::ActionDist;
use super::Scalar;
use crate::error::PolicyError;
use crate::spaces::{ActionSpace, Bound};

/// Output head matching a shaped action space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadLayout {
    /// Logits over `n` choices.
    Categorical { n: usize },
    /// One independent logit block per dimension.
    Factored { arities: Vec<usize> },
    /// Diagonal Gaussian. The head emits a mean in units of each bound's
    /// half-range around its center; the log-std is a free parameter.
    Gaussian { bounds: Vec<Bound> },
}

impl HeadLayout {
    pub fn for_space(space: &ActionSpace) -> Result<Self, PolicyError> {
        match space {
            ActionSpace::Discrete(n) => Ok(HeadLayout::Categorical { n: *n }),
            ActionSpace::MultiDiscrete(a) => Ok(HeadLayout::Factored { arities: a.clone() }),
            ActionSpace::Continuous(b) => Ok(HeadLayout::Gaussian { bounds: b.clone() }),
            other => Err(PolicyError::UnsupportedSpace(other.to_string())),
        }
    }

    /// Number of head outputs per observation.
    pub fn width(&self) -> usize {
        match self {
            HeadLayout::Categorical { n } => *n,
            HeadLayout::Factored { arities } => arities.iter().sum(),
            HeadLayout::Gaussian { bounds } => bounds.len(),
        }
    }

    pub fn log_std_len(&self) -> usize {
        match self {
            HeadLayout::Gaussian { bounds } => bounds.len(),
            _ => 0,
        }
    }

    /// Length of an availability mask for this head (0 when unmaskable).
    pub fn mask_len(&self) -> usize {
        match self {
            HeadLayout::Gaussian { .. } => 0,
            other => other.width(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetShape {
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    pub head: HeadLayout,
}

impl NetShape {
    /// Two tanh layers of 64 units.
    pub fn new(obs_dim: usize, head: HeadLayout) -> Self {
        Self {
            obs_dim,
            hidden: vec![64, 64],
            head,
        }
    }

    pub fn blocks(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            blocks.push(ParamBlock {
                name,
                shape,
                offset,
            });
            offset += len;
        };
        let mut fan_in = self.obs_dim;
        for (i, &h) in self.hidden.iter().enumerate() {
            push(format!("hidden.{i}.weight"), vec![fan_in, h]);
            push(format!("hidden.{i}.bias"), vec![h]);
            fan_in = h;
        }
        push("policy.weight".into(), vec![fan_in, self.head.width()]);
        push("policy.bias".into(), vec![self.head.width()]);
        push("value.weight".into(), vec![fan_in, 1]);
        push("value.bias".into(), vec![1]);
        if self.head.log_std_len() > 0 {
            push("log_std".into(), vec![self.head.log_std_len()]);
        }
        blocks
    }

    pub fn param_count(&self) -> usize {
        self.blocks()
            .last()
            .map(|b| b.offset + b.shape.iter().product::<usize>())
            .unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    weight: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Clone, Debug)]
struct Offsets {
    hidden: Vec<Dense>,
    policy: Dense,
    value: Dense,
    log_std: Option<usize>,
}

impl Offsets {
    fn new(shape: &NetShape) -> Self {
        let blocks = shape.blocks();
        let dense = |w: &ParamBlock, b: &ParamBlock| Dense {
            weight: w.offset,
            bias: b.offset,
            fan_in: w.shape[0],
            fan_out: w.shape[1],
        };
        let n = shape.hidden.len();
        let hidden = (0..n).map(|i| dense(&blocks[2 * i], &blocks[2 * i + 1])).collect();
        Self {
            hidden,
            policy: dense(&blocks[2 * n], &blocks[2 * n + 1]),
            value: dense(&blocks[2 * n + 2], &blocks[2 * n + 3]),
            log_std: blocks.get(2 * n + 4).map(|b| b.offset),
        }
    }
}

/// Shared-trunk MLP with a policy head and a scalar value head, stored as
/// one flat parameter vector.
#[derive(Clone, Debug)]
pub struct PolicyNet<F> {
    shape: NetShape,
    offsets: Offsets,
    params: Vec<F>,
}

/// Forward activations for a batch, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct PolicyOutput<F> {
    input: Array2<F>,
    hidden: Vec<Array2<F>>,
    pub head: Array2<F>,
    pub values: Array1<F>,
    pub log_std: Vec<F>,
    layout: HeadLayout,
}

/// Gradient of a scalar loss with respect to the network outputs.
#[derive(Clone, Debug)]
pub struct OutputGrad<F> {
    pub head: Array2<F>,
    pub values: Array1<F>,
    pub log_std: Vec<F>,
}

impl<F: Scalar> OutputGrad<F> {
    pub fn zeros_like(out: &PolicyOutput<F>) -> Self {
        Self {
            head: Array2::zeros(out.head.raw_dim()),
            values: Array1::zeros(out.values.len()),
            log_std: vec![F::zero(); out.log_std.len()],
        }
    }
}

/// A scalar loss over network outputs with its output gradient.
pub trait Objective<F: Scalar> {
    fn evaluate(&self, out: &PolicyOutput<F>) -> Result<(F, OutputGrad<F>), PolicyError>;
}

impl<F: Scalar> PolicyOutput<F> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &HeadLayout {
        &self.layout
    }

    /// Action distribution for one row, optionally restricted to the
    /// available choices.
    pub fn dist(&self, row: usize, mask: Option<&[bool]>) -> Result<ActionDist<F>, PolicyError> {
        let head = self.head.row(row);
        let head = head
            .as_slice()
            .ok_or_else(|| PolicyError::ShapeMismatch("non-contiguous head row".into()))?;
        ActionDist::from_head(&self.layout, head, &self.log_std, mask)
    }
}

fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // orthonormalize the columns of a tall Gaussian matrix, transposing for
    // wide shapes so that rows or columns come out orthonormal
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let mut q: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..tall).map(|_| f64::standard_normal(rng)).collect())
        .collect();
    for j in 0..short {
        for k in 0..j {
            let dot: f64 = q[j].iter().zip(&q[k]).map(|(a, b)| a * b).sum();
            let (head, tail) = q.split_at_mut(j);
            for (x, y) in tail[0].iter_mut().zip(&head[k]) {
                *x -= dot * y;
            }
        }
        let norm = q[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        q[j].iter_mut().for_each(|x| *x /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain * if rows >= cols { q[c][r] } else { q[r][c] };
        }
    }
    out
}

impl<F: Scalar> PolicyNet<F> {
    /// Orthogonal initialization: gain sqrt(2) on hidden layers, 0.01 on the
    /// policy head, 1 on the value head; zero biases and log-std.
    pub fn new(shape: NetShape, seed: u64) -> Self {
        let mut net = Self::zeros(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offsets = net.offsets.clone();
        let layers = offsets
            .hidden
            .iter()
            .map(|d| (*d, 2f64.sqrt()))
            .chain([(offsets.policy, 0.01), (offsets.value, 1.0)]);
        for (d, gain) in layers {
            let w = orthogonal(d.fan_in, d.fan_out, gain, &mut rng);
            for (p, v) in net.params[d.weight..d.weight + w.len()].iter_mut().zip(w) {
                *p = F::from_f64_lossy(v);
            }
        }
        net
    }

    pub fn zeros(shape: NetShape) -> Self {
        let offsets = Offsets::new(&shape);
        let params = vec![F::zero(); shape.param_count()];
        Self {
            shape,
            offsets,
            params,
        }
    }

    pub fn from_params(shape: NetShape, params: Vec<F>) -> Result<Self, PolicyError> {
        if params.len() != shape.param_count() {
            return Err(PolicyError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                shape.param_count(),
                params.len()
            )));
        }
        let offsets = Offsets::new(&shape);
        Ok(Self {
            shape,
            offsets,
            params,
        })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    /// Converts the parameters to another float type.
    pub fn cast<G: Scalar>(&self) -> PolicyNet<G> {
        PolicyNet {
            shape: self.shape.clone(),
            offsets: self.offsets.clone(),
            params: self
                .params
                .iter()
                .map(|p| G::from_f64_lossy(p.to_f64_lossless()))
                .collect(),
        }
    }

    fn weight(&self, d: &Dense) -> ArrayView2<'_, F> {
        ArrayView2::from_shape(
            (d.fan_in, d.fan_out),
            &self.params[d.weight..d.weight + d.fan_in * d.fan_out],
        )
        .expect("weight block")
    }

    fn bias(&self, d: &Dense) -> ArrayView1<'_, F> {
        ArrayView1::from(&self.params[d.bias..d.bias + d.fan_out])
    }

    fn dense(&self, d: &Dense, x: &ArrayView2<F>) -> Array2<F> {
        let mut z = x.dot(&self.weight(d));
        z += &self.bias(d);
        z
    }

    pub fn forward(&self, obs: ArrayView2<F>) -> Result<PolicyOutput<F>, PolicyError> {
        if obs.ncols() != self.shape.obs_dim {
            return Err(PolicyError::ShapeMismatch(format!(
                "observation width {} but the network expects {}",
                obs.ncols(),
                self.shape.obs_dim
            )));
        }
        let input = obs.to_owned();
        let mut hidden: Vec<Array2<F>> = Vec::with_capacity(self.offsets.hidden.len());
        for d in &self.offsets.hidden {
            let x = hidden.last().map_or(input.view(), |h| h.view());
            let mut z = self.dense(d, &x);
            z.mapv_inplace(F::tanh);
            hidden.push(z);
        }
        let trunk = hidden.last().map_or(input.view(), |h| h.view());
        let head = self.dense(&self.offsets.policy, &trunk);
        let values = self
            .dense(&self.offsets.value, &trunk)
            .index_axis_move(Axis(1), 0);
        let log_std = match self.offsets.log_std {
            Some(off) => self.params[off..off + self.shape.head.log_std_len()].to_vec(),
            None => Vec::new(),
        };
        Ok(PolicyOutput {
            input,
            hidden,
            head,
            values,
            log_std,
            layout: self.shape.head.clone(),
        })
    }

    /// Back-propagates an output gradient into a flat parameter gradient.
    pub fn backward(&self, out: &PolicyOutput<F>, grad: &OutputGrad<F>) -> Vec<F> {
        let mut g = vec![F::zero(); self.params.len()];
        let trunk = out.hidden.last().map_or(out.input.view(), |h| h.view());

        let mut write = |d: &Dense, x: &ArrayView2<F>, dz: &ArrayView2<F>| {
            let dw = x.t().dot(dz);
            let dw = dw.as_standard_layout();
            g[d.weight..d.weight + d.fan_in * d.fan_out]
                .copy_from_slice(dw.as_slice().expect("standard layout"));
            for (dst, v) in g[d.bias..d.bias + d.fan_out]
                .iter_mut()
                .zip(dz.sum_axis(Axis(0)))
            {
                *dst = v;
            }
        };

        let d_value = grad.values.view().insert_axis(Axis(1));
        write(&self.offsets.policy, &trunk, &grad.head.view());
        write(&self.offsets.value, &trunk, &d_value);

        let mut d_trunk = grad.head.dot(&self.weight(&self.offsets.policy).t());
        d_trunk += &d_value.dot(&self.weight(&self.offsets.value).t());

        for (i, d) in self.offsets.hidden.iter().enumerate().rev() {
            let act = &out.hidden[i];
            // tanh' = 1 - tanh^2
            let mut dz = d_trunk;
            ndarray::Zip::from(&mut dz)
                .and(act)
                .for_each(|g, &a| *g = *g * (F::one() - a * a));
            let x = if i == 0 {
                out.input.view()
            } else {
                out.hidden[i - 1].view()
            };
            write(d, &x, &dz.view());
            d_trunk = if i > 0 {
                dz.dot(&self.weight(d).t())
            } else {
                Array2::zeros((0, 0))
            };
        }

        if let Some(off) = self.offsets.log_std {
            g[off..off + grad.log_std.len()].copy_from_slice(&grad.log_std);
        }
        g
    }

    /// Loss value and its exact gradient with respect to every parameter.
    pub fn gradients<O: Objective<F> + ?Sized>(
        &self,
        objective: &O,
        obs: ArrayView2<F>,
    ) -> Result<(F, Vec<F>), PolicyError> {
        let out = self.forward(obs)?;
        let (loss, out_grad) = objective.evaluate(&out)?;
        Ok((loss, self.backward(&out, &out_grad)))
    }

    /// Value estimates only.
    pub fn values(&self, obs: ArrayView2<F>) -> Result<Array1<F>, PolicyError> {
        Ok(self.forward(obs)?.values)
    }
}
