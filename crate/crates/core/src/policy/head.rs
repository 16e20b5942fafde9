use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blob::Blob;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => (pre > 0.0) as u8 as f64,
            Activation::Identity => 1.0,
        }
    }
}

/// Two fully connected layers, `input → hidden → output`.
///
/// Weight matrices are `out × in`; rows of a batch matrix are samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "HeadRepr", try_from = "HeadRepr")]
pub struct PolicyHead {
    pub activation: Activation,
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

/// Gradients with the same shapes as the head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl PolicyHead {
    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn new(input: usize, hidden: usize, output: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |fan_in: usize, fan_out: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let w = DMatrix::from_fn(fan_out, fan_in, |_, _| u.sample(&mut rng));
            let b = DVector::from_fn(fan_out, |_, _| u.sample(&mut rng));
            (w, b)
        };
        let (w1, b1) = layer(input, hidden);
        let (w2, b2) = layer(hidden, output);
        PolicyHead {
            activation,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize, activation: Activation) -> Self {
        PolicyHead {
            activation,
            w1: DMatrix::zeros(hidden, input),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(output, hidden),
            b2: DVector::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn check(&self) -> Result<()> {
        let (h, i) = self.w1.shape();
        let (o, h2) = self.w2.shape();
        if h2 != h || self.b1.len() != h || self.b2.len() != o || i == 0 || o == 0 {
            return Err(Error::MalformedSnapshot(format!(
                "inconsistent head shapes w1 {h}×{i}, b1 {}, w2 {o}×{h2}, b2 {}",
                self.b1.len(),
                self.b2.len()
            )));
        }
        if self.params().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::MalformedSnapshot("non-finite head weight".into()));
        }
        Ok(())
    }

    /// Parameters in a fixed order: w1, b1, w2, b2.
    pub fn params(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
        ]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ]
    }

    fn hidden_pre(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut pre = x * self.w1.transpose();
        for mut row in pre.row_iter_mut() {
            row += self.b1.transpose();
        }
        pre
    }

    fn output(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = h * self.w2.transpose();
        for mut row in y.row_iter_mut() {
            row += self.b2.transpose();
        }
        y
    }

    /// Outputs for a batch (`n × input` → `n × output`).
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let h = self.hidden_pre(x).map(|v| self.activation.apply(v));
        self.output(&h)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let h = (&self.w1 * DVector::from_column_slice(x) + &self.b1).map(|v| self.activation.apply(v));
        (&self.w2 * h + &self.b2).as_slice().to_vec()
    }

    /// Mean squared error over every output element of the batch.
    pub fn loss(&self, x: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
        let d = self.forward_batch(x) - t;
        d.norm_squared() / d.len() as f64
    }

    pub fn loss_and_grad(&self, x: &DMatrix<f64>, t: &DMatrix<f64>) -> (f64, HeadGrads) {
        let pre = self.hidden_pre(x);
        let h = pre.map(|v| self.activation.apply(v));
        let d = self.output(&h) - t;
        let loss = d.norm_squared() / d.len() as f64;

        let dy = d * (2.0 / (t.len() as f64));
        let gw2 = dy.transpose() * &h;
        let gb2 = row_sums(&dy);
        let mut dh = &dy * &self.w2;
        dh.zip_apply(&pre, |g, p| *g *= self.activation.derivative(p));
        let gw1 = dh.transpose() * x;
        let gb1 = row_sums(&dh);
        (
            loss,
            HeadGrads {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
            },
        )
    }

    /// Plain gradient descent step.
    pub fn sgd_step(&mut self, g: &HeadGrads, lr: f64) {
        self.w1 -= &g.w1 * lr;
        self.b1 -= &g.b1 * lr;
        self.w2 -= &g.w2 * lr;
        self.b2 -= &g.b2 * lr;
    }
}

impl HeadGrads {
    pub fn slices(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

/// Max relative error between analytic gradients and central differences
/// with step `h`, over every parameter.
pub fn grad_check(head: &PolicyHead, x: &DMatrix<f64>, t: &DMatrix<f64>, h: f64) -> f64 {
    let (_, analytic) = head.loss_and_grad(x, t);
    let mut probe = head.clone();
    let mut worst = 0.0f64;
    for (p, g) in analytic.slices().iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let orig = probe.params()[p][i];
            probe.params_mut()[p][i] = orig + h;
            let up = probe.loss(x, t);
            probe.params_mut()[p][i] = orig - h;
            let down = probe.loss(x, t);
            probe.params_mut()[p][i] = orig;
            let n = (up - down) / (2.0 * h);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

#[derive(Serialize, Deserialize)]
struct HeadRepr {
    activation: Activation,
    w1: Blob,
    b1: Blob,
    w2: Blob,
    b2: Blob,
}

impl From<PolicyHead> for HeadRepr {
    fn from(h: PolicyHead) -> Self {
        HeadRepr {
            activation: h.activation,
            w1: Blob::from_matrix(&h.w1),
            b1: Blob::from_vector(&h.b1),
            w2: Blob::from_matrix(&h.w2),
            b2: Blob::from_vector(&h.b2),
        }
    }
}

impl TryFrom<HeadRepr> for PolicyHead {
    type Error = Error;

    fn try_from(r: HeadRepr) -> Result<Self> {
        let head = PolicyHead {
            activation: r.activation,
            w1: r.w1.to_matrix()?,
            b1: r.b1.to_vector()?,
            w2: r.w2.to_matrix()?,
            b2: r.b2.to_vector()?,
        };
        head.check()?;
        Ok(head)
    }
}
