//! History-aware Q-network: a masked Transformer encoder over within-episode
//! (price, lagged action) tokens fused with a static state-action branch.

use crate::error::{Error, Result};

use super::layers::{
    Activation, InitKind, LayerNorm, LayoutBuilder, Linear, LnCache, Mlp, MlpCache,
};
use super::network::NetworkSpec;

/// Per-state token sequences with validity masks, stored state-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBatch {
    pub n_pos: usize,
    /// `states x n_pos x 2`: (normalized price, normalized lagged own action).
    pub tokens: Vec<f64>,
    pub mask: Vec<bool>,
}

impl HistoryBatch {
    pub fn new(n_pos: usize) -> Self {
        Self {
            n_pos,
            tokens: Vec::new(),
            mask: Vec::new(),
        }
    }

    pub fn push(&mut self, tokens: &[f64], mask: &[bool]) {
        assert_eq!(tokens.len(), 2 * self.n_pos);
        assert_eq!(mask.len(), self.n_pos);
        self.tokens.extend_from_slice(tokens);
        self.mask.extend_from_slice(mask);
    }

    pub fn states(&self) -> usize {
        self.mask.len() / self.n_pos.max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryQ {
    pub tok: Linear,
    pub pos: usize,
    pub layers: Vec<EncoderLayer>,
    pub ln_f: LayerNorm,
    pub stat: Mlp,
    pub fusion: Mlp,
    pub d: usize,
    pub heads: usize,
    pub n_pos: usize,
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    ln1: LnCache,
    u: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per state, per head, a `len x len` row-stochastic matrix.
    probs: Vec<Vec<f64>>,
    a: Vec<f64>,
    ln2: LnCache,
    u2: Vec<f64>,
    f1: Vec<f64>,
    g: Vec<f64>,
}

/// Packed encoder activations: only valid positions occupy rows.
#[derive(Debug, Clone, Default)]
pub struct EncodeCache {
    starts: Vec<usize>,
    lens: Vec<usize>,
    positions: Vec<usize>,
    tokens: Vec<f64>,
    layers: Vec<LayerCache>,
    ln_f: LnCache,
    pub pooled: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct HistoryCache {
    enc: EncodeCache,
    row_index: Vec<usize>,
    stat: MlpCache,
    fusion: MlpCache,
    rows: usize,
}

const ENCODER_ACT: Activation = Activation::Gelu;

impl HistoryQ {
    pub fn build(lb: &mut LayoutBuilder, spec: &NetworkSpec) -> Self {
        let d = spec.embed_dim;
        let tok = Linear::new(lb, "tok", 2, d);
        let pos = lb.take("pos_enc", spec.n_positions * d, InitKind::Uniform(0.1));
        let layers = (0..spec.encoder_layers)
            .map(|l| EncoderLayer {
                ln1: LayerNorm::new(lb, &format!("enc{l}.ln1"), d),
                wq: Linear::new(lb, &format!("enc{l}.wq"), d, d),
                wk: Linear::new(lb, &format!("enc{l}.wk"), d, d),
                wv: Linear::new(lb, &format!("enc{l}.wv"), d, d),
                wo: Linear::new(lb, &format!("enc{l}.wo"), d, d),
                ln2: LayerNorm::new(lb, &format!("enc{l}.ln2"), d),
                ff1: Linear::new(lb, &format!("enc{l}.ff1"), d, spec.ff_dim),
                ff2: Linear::new(lb, &format!("enc{l}.ff2"), spec.ff_dim, d),
            })
            .collect();
        let ln_f = LayerNorm::new(lb, "enc.ln_f", d);
        let mut stat_dims = vec![4];
        stat_dims.extend(&spec.hidden);
        let stat = Mlp::new(lb, "static", &stat_dims, spec.activation, true);
        let mut fusion_dims = vec![d + stat.out_dim()];
        fusion_dims.extend(&spec.fusion_hidden);
        fusion_dims.push(1);
        let fusion = Mlp::new(lb, "fusion", &fusion_dims, spec.activation, false);
        Self {
            tok,
            pos,
            layers,
            ln_f,
            stat,
            fusion,
            d,
            heads: spec.heads,
            n_pos: spec.n_positions,
        }
    }

    /// Encodes every state once; output `pooled` is `states x d`.
    pub fn encode(&self, p: &[f64], hist: &HistoryBatch) -> Result<EncodeCache> {
        if hist.n_pos != self.n_pos {
            return Err(Error::Shape(format!(
                "history has {} positions, network expects {}",
                hist.n_pos, self.n_pos
            )));
        }
        let d = self.d;
        let ns = hist.states();
        let mut c = EncodeCache::default();
        for s in 0..ns {
            c.starts.push(c.positions.len());
            let m = &hist.mask[s * self.n_pos..(s + 1) * self.n_pos];
            for (l, &valid) in m.iter().enumerate() {
                if valid {
                    c.positions.push(l);
                    let t = &hist.tokens[(s * self.n_pos + l) * 2..(s * self.n_pos + l) * 2 + 2];
                    c.tokens.extend_from_slice(t);
                }
            }
            let len = c.positions.len() - c.starts[s];
            if len == 0 {
                return Err(Error::Degenerate(format!(
                    "history mask of state {s} is all zero; pooling undefined"
                )));
            }
            c.lens.push(len);
        }
        let rows = c.positions.len();
        let mut x = self.tok.forward(p, &c.tokens, rows);
        for (r, &l) in c.positions.iter().enumerate() {
            let pe = &p[self.pos + l * d..self.pos + (l + 1) * d];
            x[r * d..(r + 1) * d]
                .iter_mut()
                .zip(pe)
                .for_each(|(v, e)| *v += e);
        }
        for layer in &self.layers {
            let (lc, x_out) = self.layer_forward(p, layer, x, &c.starts, &c.lens);
            c.layers.push(lc);
            x = x_out;
        }
        let (xf, ln_f) = self.ln_f.forward(p, &x, rows);
        c.ln_f = ln_f;
        let mut pooled = vec![0.0; ns * d];
        for s in 0..ns {
            let inv = 1.0 / c.lens[s] as f64;
            let dst = &mut pooled[s * d..(s + 1) * d];
            for r in c.starts[s]..c.starts[s] + c.lens[s] {
                dst.iter_mut()
                    .zip(&xf[r * d..(r + 1) * d])
                    .for_each(|(a, b)| *a += b);
            }
            dst.iter_mut().for_each(|v| *v *= inv);
        }
        c.pooled = pooled;
        Ok(c)
    }

    fn layer_forward(
        &self,
        p: &[f64],
        layer: &EncoderLayer,
        x: Vec<f64>,
        starts: &[usize],
        lens: &[usize],
    ) -> (LayerCache, Vec<f64>) {
        let d = self.d;
        let rows = x.len() / d;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (u, ln1) = layer.ln1.forward(p, &x, rows);
        let q = layer.wq.forward(p, &u, rows);
        let k = layer.wk.forward(p, &u, rows);
        let v = layer.wv.forward(p, &u, rows);
        let mut a = vec![0.0; rows * d];
        let mut probs = Vec::with_capacity(starts.len() * self.heads);
        for (&st, &len) in starts.iter().zip(lens) {
            for hd in 0..self.heads {
                let off = hd * dh;
                let mut pm = vec![0.0; len * len];
                for i in 0..len {
                    let qi = &q[(st + i) * d + off..(st + i) * d + off + dh];
                    let row = &mut pm[i * len..(i + 1) * len];
                    for (j, sij) in row.iter_mut().enumerate() {
                        let kj = &k[(st + j) * d + off..(st + j) * d + off + dh];
                        *sij = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                    }
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    row.iter_mut().for_each(|s| {
                        *s = (*s - mx).exp();
                        z += *s;
                    });
                    row.iter_mut().for_each(|s| *s /= z);
                    let ai = &mut a[(st + i) * d + off..(st + i) * d + off + dh];
                    for (j, &pij) in row.iter().enumerate() {
                        let vj = &v[(st + j) * d + off..(st + j) * d + off + dh];
                        ai.iter_mut().zip(vj).for_each(|(o, vv)| *o += pij * vv);
                    }
                }
                probs.push(pm);
            }
        }
        let o = layer.wo.forward(p, &a, rows);
        let x1: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();
        let (u2, ln2) = layer.ln2.forward(p, &x1, rows);
        let f1 = layer.ff1.forward(p, &u2, rows);
        let g = ENCODER_ACT.forward(&f1);
        let f2 = layer.ff2.forward(p, &g, rows);
        let x2 = x1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        (
            LayerCache {
                ln1,
                u,
                q,
                k,
                v,
                probs,
                a,
                ln2,
                u2,
                f1,
                g,
            },
            x2,
        )
    }

    fn layer_backward(
        &self,
        p: &[f64],
        grads: &mut [f64],
        layer: &EncoderLayer,
        lc: &LayerCache,
        dx2: Vec<f64>,
        starts: &[usize],
        lens: &[usize],
    ) -> Vec<f64> {
        let d = self.d;
        let rows = dx2.len() / d;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dg = vec![0.0; rows * layer.ff2.in_d];
        layer
            .ff2
            .backward(p, grads, &lc.g, &dx2, rows, Some(&mut dg));
        ENCODER_ACT.backward_inplace(&lc.f1, &mut dg);
        let mut du2 = vec![0.0; rows * d];
        layer
            .ff1
            .backward(p, grads, &lc.u2, &dg, rows, Some(&mut du2));
        let dln2 = layer.ln2.backward(p, grads, &lc.ln2, &du2, rows);
        let dx1: Vec<f64> = dx2.iter().zip(&dln2).map(|(a, b)| a + b).collect();

        let mut da = vec![0.0; rows * d];
        layer
            .wo
            .backward(p, grads, &lc.a, &dx1, rows, Some(&mut da));
        let mut dq = vec![0.0; rows * d];
        let mut dk = vec![0.0; rows * d];
        let mut dv = vec![0.0; rows * d];
        let mut pi = 0;
        for (&st, &len) in starts.iter().zip(lens) {
            for hd in 0..self.heads {
                let off = hd * dh;
                let pm = &lc.probs[pi];
                pi += 1;
                let mut dp = vec![0.0; len];
                for i in 0..len {
                    let dai = &da[(st + i) * d + off..(st + i) * d + off + dh];
                    let prow = &pm[i * len..(i + 1) * len];
                    for j in 0..len {
                        let vj = &lc.v[(st + j) * d + off..(st + j) * d + off + dh];
                        dp[j] = dai.iter().zip(vj).map(|(x, y)| x * y).sum();
                        let dvj = &mut dv[(st + j) * d + off..(st + j) * d + off + dh];
                        dvj.iter_mut().zip(dai).for_each(|(o, g)| *o += prow[j] * g);
                    }
                    let dot: f64 = prow.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    for j in 0..len {
                        let ds = prow[j] * (dp[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            dq[(st + i) * d + off + c] += ds * lc.k[(st + j) * d + off + c];
                            dk[(st + j) * d + off + c] += ds * lc.q[(st + i) * d + off + c];
                        }
                    }
                }
            }
        }
        let mut du = vec![0.0; rows * d];
        layer.wq.backward(p, grads, &lc.u, &dq, rows, Some(&mut du));
        layer.wk.backward(p, grads, &lc.u, &dk, rows, Some(&mut du));
        layer.wv.backward(p, grads, &lc.u, &dv, rows, Some(&mut du));
        let dln1 = layer.ln1.backward(p, grads, &lc.ln1, &du, rows);
        dx1.iter().zip(&dln1).map(|(a, b)| a + b).collect()
    }

    /// Backpropagates a gradient w.r.t. the pooled outputs (`states x d`).
    pub fn encode_backward(&self, p: &[f64], grads: &mut [f64], c: &EncodeCache, dpooled: &[f64]) {
        let d = self.d;
        let rows = c.positions.len();
        let mut dxf = vec![0.0; rows * d];
        for s in 0..c.starts.len() {
            let inv = 1.0 / c.lens[s] as f64;
            let src = &dpooled[s * d..(s + 1) * d];
            for r in c.starts[s]..c.starts[s] + c.lens[s] {
                dxf[r * d..(r + 1) * d]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(o, g)| *o = g * inv);
            }
        }
        let mut dx = self.ln_f.backward(p, grads, &c.ln_f, &dxf, rows);
        for (layer, lc) in self.layers.iter().zip(&c.layers).rev() {
            dx = self.layer_backward(p, grads, layer, lc, dx, &c.starts, &c.lens);
        }
        for (r, &l) in c.positions.iter().enumerate() {
            let gp = &mut grads[self.pos + l * d..self.pos + (l + 1) * d];
            gp.iter_mut()
                .zip(&dx[r * d..(r + 1) * d])
                .for_each(|(o, g)| *o += g);
        }
        self.tok.backward(p, grads, &c.tokens, &dx, rows, None);
    }

    fn fused_input(&self, pooled: &[f64], row_index: &[usize], hs: &[f64]) -> Vec<f64> {
        let d = self.d;
        let sw = self.stat.out_dim();
        let mut z = Vec::with_capacity(row_index.len() * (d + sw));
        for (r, &s) in row_index.iter().enumerate() {
            z.extend_from_slice(&pooled[s * d..(s + 1) * d]);
            z.extend_from_slice(&hs[r * sw..(r + 1) * sw]);
        }
        z
    }

    /// `features` is `rows x 4`; row `r` uses the encoded history `row_index[r]`.
    pub fn forward(
        &self,
        p: &[f64],
        features: &[f64],
        hist: &HistoryBatch,
        row_index: &[usize],
    ) -> Result<(Vec<f64>, HistoryCache)> {
        let rows = row_index.len();
        if features.len() != rows * 4 {
            return Err(Error::Shape(format!(
                "expected {} feature values, got {}",
                rows * 4,
                features.len()
            )));
        }
        if let Some(&bad) = row_index.iter().find(|&&s| s >= hist.states()) {
            return Err(Error::Shape(format!(
                "row references history {bad} of {}",
                hist.states()
            )));
        }
        let enc = self.encode(p, hist)?;
        let (hs, stat) = self.stat.forward(p, features, rows);
        let z = self.fused_input(&enc.pooled, row_index, &hs);
        let (q, fusion) = self.fusion.forward(p, &z, rows);
        Ok((
            q,
            HistoryCache {
                enc,
                row_index: row_index.to_vec(),
                stat,
                fusion,
                rows,
            },
        ))
    }

    /// Forward pass reusing an encoding computed by [`HistoryQ::encode`].
    pub fn forward_encoded(
        &self,
        p: &[f64],
        features: &[f64],
        enc: &EncodeCache,
        row_index: &[usize],
    ) -> Vec<f64> {
        let rows = row_index.len();
        let hs = self.stat.output_only(p, features, rows);
        let z = self.fused_input(&enc.pooled, row_index, &hs);
        self.fusion.output_only(p, &z, rows)
    }

    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &HistoryCache,
        dq: &[f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let d = self.d;
        let sw = self.stat.out_dim();
        let dz = self.fusion.backward(p, g, &cache.fusion, dq, true).unwrap();
        let mut dpooled = vec![0.0; cache.enc.pooled.len()];
        let mut dhs = vec![0.0; cache.rows * sw];
        for (r, &s) in cache.row_index.iter().enumerate() {
            let zr = &dz[r * (d + sw)..(r + 1) * (d + sw)];
            dpooled[s * d..(s + 1) * d]
                .iter_mut()
                .zip(&zr[..d])
                .for_each(|(o, v)| *o += v);
            dhs[r * sw..(r + 1) * sw].copy_from_slice(&zr[d..]);
        }
        let dx = self.stat.backward(p, g, &cache.stat, &dhs, want_dx);
        self.encode_backward(p, g, &cache.enc, &dpooled);
        dx
    }
}
