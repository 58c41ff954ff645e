//! Time-only schedule network: an MLP on `t/N` plus one bias per output slice.

use super::layers::{Activation, InitKind, LayoutBuilder, Mlp, MlpCache};

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleNet {
    pub mlp: Mlp,
    pub bias: usize,
    pub n_out: usize,
    pub n_slices: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ScheduleCache {
    mlp: MlpCache,
}

impl ScheduleNet {
    /// The output layer starts at zero, so every initial output equals its bias (zero).
    pub fn build(
        lb: &mut LayoutBuilder,
        hidden: &[usize],
        act: Activation,
        n_slices: usize,
        n_out: usize,
    ) -> Self {
        let mut dims = vec![1];
        dims.extend(hidden);
        dims.push(1);
        let mlp = Mlp::new_zero_output(lb, "phi", &dims, act);
        let bias = lb.take("slice_bias", n_out, InitKind::Const(0.0));
        Self {
            mlp,
            bias,
            n_out,
            n_slices,
        }
    }

    fn inputs(&self) -> Vec<f64> {
        (0..self.n_out)
            .map(|t| t as f64 / self.n_slices as f64)
            .collect()
    }

    /// `z_t = phi(t/N) + b_t` for every output slice.
    pub fn forward(&self, p: &[f64]) -> (Vec<f64>, ScheduleCache) {
        let (mut z, mlp) = self.mlp.forward(p, &self.inputs(), self.n_out);
        z.iter_mut()
            .zip(&p[self.bias..self.bias + self.n_out])
            .for_each(|(v, b)| *v += b);
        (z, ScheduleCache { mlp })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &ScheduleCache, dz: &[f64]) {
        g[self.bias..self.bias + self.n_out]
            .iter_mut()
            .zip(dz)
            .for_each(|(o, d)| *o += d);
        self.mlp.backward(p, g, &cache.mlp, dz, false);
    }
}
