//! Parameter layout plus the primitive layers shared by every network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{matmul_acc, matmul_tn_acc, matmul_wt};

/// How a parameter segment is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitKind {
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    Const(f64),
}

/// A named contiguous slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub init: InitKind,
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    segments: Vec<Segment>,
    len: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn take(&mut self, name: impl Into<String>, len: usize, init: InitKind) -> usize {
        let offset = self.len;
        self.segments.push(Segment {
            name: name.into(),
            offset,
            len,
            init,
        });
        self.len += len;
        offset
    }

    pub fn finish(self) -> (Vec<Segment>, usize) {
        (self.segments, self.len)
    }
}

pub fn init_segments<R: Rng>(segments: &[Segment], total: usize, rng: &mut R) -> Vec<f64> {
    let mut p = vec![0.0; total];
    for s in segments {
        let dst = &mut p[s.offset..s.offset + s.len];
        match s.init {
            InitKind::Uniform(b) => dst.iter_mut().for_each(|v| *v = rng.gen_range(-b..=b)),
            InitKind::Const(c) => dst.iter_mut().for_each(|v| *v = c),
        }
    }
    p
}

/// Dense layer `y = W x + b` with `W` stored `out_d x in_d` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub in_d: usize,
    pub out_d: usize,
}

impl Linear {
    /// Uniform fan-in initialization.
    pub fn new(lb: &mut LayoutBuilder, name: &str, in_d: usize, out_d: usize) -> Self {
        let bound = 1.0 / (in_d as f64).sqrt();
        Self::with_init(
            lb,
            name,
            in_d,
            out_d,
            InitKind::Uniform(bound),
            InitKind::Uniform(bound),
        )
    }

    pub fn zeroed(lb: &mut LayoutBuilder, name: &str, in_d: usize, out_d: usize) -> Self {
        Self::with_init(
            lb,
            name,
            in_d,
            out_d,
            InitKind::Const(0.0),
            InitKind::Const(0.0),
        )
    }

    pub fn with_init(
        lb: &mut LayoutBuilder,
        name: &str,
        in_d: usize,
        out_d: usize,
        w_init: InitKind,
        b_init: InitKind,
    ) -> Self {
        let w = lb.take(format!("{name}.w"), in_d * out_d, w_init);
        let b = lb.take(format!("{name}.b"), out_d, b_init);
        Self { w, b, in_d, out_d }
    }

    pub fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w..self.w + self.in_d * self.out_d]
    }

    pub fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.b..self.b + self.out_d]
    }

    pub fn forward(&self, p: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        let mut y = vec![0.0; rows * self.out_d];
        matmul_wt(x, rows, self.in_d, self.weights(p), self.out_d, &mut y);
        let b = self.bias(p);
        for row in y.chunks_exact_mut(self.out_d) {
            row.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
        }
        y
    }

    /// Accumulates parameter gradients into `g`; adds the input gradient into `dx` when given.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        x: &[f64],
        dy: &[f64],
        rows: usize,
        dx: Option<&mut [f64]>,
    ) {
        matmul_tn_acc(
            dy,
            rows,
            self.out_d,
            x,
            self.in_d,
            &mut g[self.w..self.w + self.in_d * self.out_d],
        );
        let gb = &mut g[self.b..self.b + self.out_d];
        for row in dy.chunks_exact(self.out_d) {
            gb.iter_mut().zip(row).for_each(|(v, d)| *v += d);
        }
        if let Some(dx) = dx {
            matmul_acc(dy, rows, self.out_d, self.weights(p), self.in_d, dx);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    /// Tanh approximation.
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Gelu => {
                let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
        }
    }

    pub fn forward(self, pre: &[f64]) -> Vec<f64> {
        pre.iter().map(|&x| self.apply(x)).collect()
    }

    /// Turns `dy` (gradient w.r.t. the activation output) into the gradient w.r.t. `pre`.
    pub fn backward_inplace(self, pre: &[f64], dy: &mut [f64]) {
        dy.iter_mut()
            .zip(pre)
            .for_each(|(d, &x)| *d *= self.derivative(x));
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: usize,
    pub shift: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(lb: &mut LayoutBuilder, name: &str, dim: usize) -> Self {
        let gain = lb.take(format!("{name}.gain"), dim, InitKind::Const(1.0));
        let shift = lb.take(format!("{name}.shift"), dim, InitKind::Const(0.0));
        Self { gain, shift, dim }
    }

    pub fn forward(&self, p: &[f64], x: &[f64], rows: usize) -> (Vec<f64>, LnCache) {
        let d = self.dim;
        let g = &p[self.gain..self.gain + d];
        let b = &p[self.shift..self.shift + d];
        let mut y = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let xr = &x[r * d..(r + 1) * d];
            let mean = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (xr[j] - mean) * is;
                xhat[r * d + j] = h;
                y[r * d + j] = h * g[j] + b[j];
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        p: &[f64],
        grads: &mut [f64],
        cache: &LnCache,
        dy: &[f64],
        rows: usize,
    ) -> Vec<f64> {
        let d = self.dim;
        let mut dx = vec![0.0; rows * d];
        for r in 0..rows {
            let dyr = &dy[r * d..(r + 1) * d];
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for j in 0..d {
                grads[self.gain + j] += dyr[j] * xh[j];
                grads[self.shift + j] += dyr[j];
                let dxh = dyr[j] * p[self.gain + j];
                m1 += dxh;
                m2 += dxh * xh[j];
            }
            m1 /= d as f64;
            m2 /= d as f64;
            for j in 0..d {
                let dxh = dyr[j] * p[self.gain + j];
                dx[r * d + j] = cache.inv_std[r] * (dxh - m1 - xh[j] * m2);
            }
        }
        dx
    }
}

/// Feed-forward stack; the activation follows every layer except possibly the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
    pub final_act: bool,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// Input to each layer.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of each layer.
    pub pre: Vec<Vec<f64>>,
    pub rows: usize,
}

impl Mlp {
    /// `dims` lists every width including input and output.
    pub fn new(
        lb: &mut LayoutBuilder,
        name: &str,
        dims: &[usize],
        act: Activation,
        final_act: bool,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(lb, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self {
            layers,
            act,
            final_act,
        }
    }

    /// Like `new` but with a zero-initialized output layer.
    pub fn new_zero_output(
        lb: &mut LayoutBuilder,
        name: &str,
        dims: &[usize],
        act: Activation,
    ) -> Self {
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let lname = format!("{name}.{i}");
                if i + 1 == n {
                    Linear::zeroed(lb, &lname, w[0], w[1])
                } else {
                    Linear::new(lb, &lname, w[0], w[1])
                }
            })
            .collect();
        Self {
            layers,
            act,
            final_act: false,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_d
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_d).unwrap_or(0)
    }

    fn activated(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.final_act
    }

    pub fn forward(&self, p: &[f64], x: &[f64], rows: usize) -> (Vec<f64>, MlpCache) {
        let mut cache = MlpCache {
            rows,
            ..Default::default()
        };
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let z = l.forward(p, &h, rows);
            cache.inputs.push(std::mem::take(&mut h));
            h = if self.activated(i) {
                self.act.forward(&z)
            } else {
                z.clone()
            };
            cache.pre.push(z);
        }
        (h, cache)
    }

    pub fn output_only(&self, p: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.forward(p, &h, rows);
            if self.activated(i) {
                z.iter_mut().for_each(|v| *v = self.act.apply(*v));
            }
            h = z;
        }
        h
    }

    /// Returns the input gradient when `want_dx`.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &MlpCache,
        dy: &[f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let rows = cache.rows;
        let mut d = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            if self.activated(i) {
                self.act.backward_inplace(&cache.pre[i], &mut d);
            }
            if i == 0 && !want_dx {
                l.backward(p, g, &cache.inputs[i], &d, rows, None);
                return None;
            }
            let mut dx = vec![0.0; rows * l.in_d];
            l.backward(p, g, &cache.inputs[i], &d, rows, Some(&mut dx));
            d = dx;
        }
        Some(d)
    }
}
