//! Price-conditioned Q-network: learned price scale, FiLM-modulated residual
//! blocks and an additive price skip head.

use super::layers::{
    Activation, InitKind, LayerNorm, LayoutBuilder, Linear, LnCache, Mlp, MlpCache,
};
use super::network::NetworkSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct FilmBlock {
    pub film: Linear,
    pub ln: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilmQ {
    pub log_cp: usize,
    pub log_eta: usize,
    pub base: Mlp,
    pub price: Mlp,
    pub blocks: Vec<FilmBlock>,
    pub head: Linear,
    pub skip: Linear,
    pub act: Activation,
    pub hidden: usize,
    pub lambda_film: f64,
    pub rho_res: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BlockCache {
    h_in: Vec<f64>,
    tanh_gamma: Vec<f64>,
    ln: LnCache,
    u: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct FilmCache {
    rows: usize,
    price: Vec<f64>,
    base: MlpCache,
    price_cache: MlpCache,
    c: Vec<f64>,
    blocks: Vec<BlockCache>,
    h_final: Vec<f64>,
    skip_out: Vec<f64>,
}

impl FilmQ {
    pub fn build(lb: &mut LayoutBuilder, spec: &NetworkSpec) -> Self {
        let act = spec.activation;
        let log_cp = lb.take("log_c_p", 1, InitKind::Const(spec.c_p_init.ln()));
        let log_eta = lb.take("log_eta", 1, InitKind::Const(spec.eta_init.ln()));
        let mut base_dims = vec![4];
        base_dims.extend(&spec.hidden);
        let h = *base_dims.last().unwrap();
        let base = Mlp::new(lb, "phi_base", &base_dims, act, true);
        let mut price_dims = vec![1];
        price_dims.extend(&spec.price_hidden);
        let pw = *price_dims.last().unwrap();
        let price = Mlp::new(lb, "phi_price", &price_dims, act, true);
        let blocks = (0..spec.residual_blocks)
            .map(|l| FilmBlock {
                film: Linear::zeroed(lb, &format!("block{l}.film"), pw, 2 * h),
                ln: LayerNorm::new(lb, &format!("block{l}.ln"), h),
                fc1: Linear::new(lb, &format!("block{l}.fc1"), h, h),
                fc2: Linear::new(lb, &format!("block{l}.fc2"), h, h),
            })
            .collect();
        let head = Linear::new(lb, "head", h, 1);
        let skip = Linear::new(lb, "price_skip", pw, 1);
        Self {
            log_cp,
            log_eta,
            base,
            price,
            blocks,
            head,
            skip,
            act,
            hidden: h,
            lambda_film: spec.lambda_film,
            rho_res: spec.rho_res,
        }
    }

    pub fn c_p(&self, p: &[f64]) -> f64 {
        p[self.log_cp].exp()
    }

    pub fn eta(&self, p: &[f64]) -> f64 {
        p[self.log_eta].exp()
    }

    /// Bounded multiplicative modulations `lambda_film * tanh(gamma)` for each block, per row.
    pub fn modulations(&self, p: &[f64], x: &[f64], rows: usize) -> Vec<Vec<f64>> {
        let (_, cache) = self.forward(p, x, rows);
        cache
            .blocks
            .iter()
            .map(|b| b.tanh_gamma.iter().map(|t| self.lambda_film * t).collect())
            .collect()
    }

    pub fn forward(&self, p: &[f64], x: &[f64], rows: usize) -> (Vec<f64>, FilmCache) {
        let h = self.hidden;
        let cp = self.c_p(p);
        let mut xt = x.to_vec();
        let mut price = vec![0.0; rows];
        for r in 0..rows {
            xt[r * 4] *= cp;
            price[r] = xt[r * 4];
        }
        let (mut hs, base) = self.base.forward(p, &xt, rows);
        let (c, price_cache) = self.price.forward(p, &price, rows);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let gb = b.film.forward(p, &c, rows);
            let mut tanh_gamma = vec![0.0; rows * h];
            let mut ht = vec![0.0; rows * h];
            for r in 0..rows {
                for j in 0..h {
                    let tg = gb[r * 2 * h + j].tanh();
                    tanh_gamma[r * h + j] = tg;
                    ht[r * h + j] =
                        hs[r * h + j] * (1.0 + self.lambda_film * tg) + gb[r * 2 * h + h + j];
                }
            }
            let (u, ln) = b.ln.forward(p, &ht, rows);
            let z1 = b.fc1.forward(p, &u, rows);
            let a1 = self.act.forward(&z1);
            let z2 = b.fc2.forward(p, &a1, rows);
            let h_in = hs.clone();
            hs.iter_mut()
                .zip(&z2)
                .for_each(|(v, z)| *v += self.rho_res * z);
            blocks.push(BlockCache {
                h_in,
                tanh_gamma,
                ln,
                u,
                z1,
                a1,
            });
        }
        let trunk = self.head.forward(p, &hs, rows);
        let skip_out = self.skip.forward(p, &c, rows);
        let eta = self.eta(p);
        let q = trunk
            .iter()
            .zip(&skip_out)
            .map(|(t, s)| t + eta * s)
            .collect();
        let cache = FilmCache {
            rows,
            price,
            base,
            price_cache,
            c,
            blocks,
            h_final: hs,
            skip_out,
        };
        (q, cache)
    }

    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &FilmCache,
        dq: &[f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let rows = cache.rows;
        let h = self.hidden;
        let pw = self.skip.in_d;
        let eta = self.eta(p);

        let mut dh = vec![0.0; rows * h];
        self.head
            .backward(p, g, &cache.h_final, dq, rows, Some(&mut dh));
        let ds: Vec<f64> = dq.iter().map(|d| eta * d).collect();
        g[self.log_eta] += dq
            .iter()
            .zip(&cache.skip_out)
            .map(|(d, s)| d * eta * s)
            .sum::<f64>();
        let mut dc = vec![0.0; rows * pw];
        self.skip.backward(p, g, &cache.c, &ds, rows, Some(&mut dc));

        for (b, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let dz2: Vec<f64> = dh.iter().map(|d| self.rho_res * d).collect();
            let mut da1 = vec![0.0; rows * h];
            b.fc2.backward(p, g, &bc.a1, &dz2, rows, Some(&mut da1));
            self.act.backward_inplace(&bc.z1, &mut da1);
            let mut du = vec![0.0; rows * h];
            b.fc1.backward(p, g, &bc.u, &da1, rows, Some(&mut du));
            let dht = b.ln.backward(p, g, &bc.ln, &du, rows);
            let mut dgb = vec![0.0; rows * 2 * h];
            for r in 0..rows {
                for j in 0..h {
                    let k = r * h + j;
                    let tg = bc.tanh_gamma[k];
                    dh[k] += dht[k] * (1.0 + self.lambda_film * tg);
                    dgb[r * 2 * h + j] = dht[k] * bc.h_in[k] * self.lambda_film * (1.0 - tg * tg);
                    dgb[r * 2 * h + h + j] = dht[k];
                }
            }
            b.film.backward(p, g, &cache.c, &dgb, rows, Some(&mut dc));
        }

        let dxt = self.base.backward(p, g, &cache.base, &dh, true).unwrap();
        let dprice = self
            .price
            .backward(p, g, &cache.price_cache, &dc, true)
            .unwrap();
        let cp = self.c_p(p);
        let mut dx = want_dx.then(|| vec![0.0; rows * 4]);
        for r in 0..rows {
            let dpt = dxt[r * 4] + dprice[r];
            // price[r] already holds c_p * raw price
            g[self.log_cp] += dpt * cache.price[r];
            if let Some(dx) = dx.as_mut() {
                dx[r * 4] = dpt * cp;
                dx[r * 4 + 1..r * 4 + 4].copy_from_slice(&dxt[r * 4 + 1..r * 4 + 4]);
            }
        }
        dx
    }
}
