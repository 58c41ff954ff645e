//! Integrated-gradients attributions of Q-networks over a fixed probe grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{HistoryBatch, Network, NetworkParams, QBatch};

/// Anything that returns values and input gradients for a batch of rows.
pub trait InputGradient {
    fn dim(&self) -> usize;
    /// `xs` is `rows x dim`; returns (values, gradients `rows x dim`).
    fn grad_batch(&self, xs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// A Q-network with an optional fixed history context.
pub struct QAttribution<'a> {
    pub net: &'a Network,
    pub params: &'a NetworkParams,
    pub history: Option<&'a HistoryBatch>,
}

impl InputGradient for QAttribution<'_> {
    fn dim(&self) -> usize {
        4
    }

    fn grad_batch(&self, xs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let rows = xs.len() / 4;
        let idx = vec![0usize; rows];
        let batch = QBatch {
            features: xs,
            history: self.history.map(|h| (h, idx.as_slice())),
        };
        let (q, cache) = self.net.q_forward(self.params, &batch)?;
        let mut g = vec![0.0; self.net.n_params()];
        let dx = self
            .net
            .q_backward(self.params, &cache, &vec![1.0; rows], &mut g, true)?;
        Ok((q, dx.expect("input gradient requested")))
    }
}

/// Right Riemann sum with `m` steps along the straight path from `x0` to `x`.
pub fn integrated_gradients<F: InputGradient + ?Sized>(
    f: &F,
    x: &[f64],
    x0: &[f64],
    m: usize,
) -> Result<Vec<f64>> {
    let d = f.dim();
    if x.len() != d || x0.len() != d {
        return Err(Error::Shape(format!(
            "attribution input must have {d} entries"
        )));
    }
    if m == 0 {
        return Err(Error::Config("integrated gradients needs m >= 1".into()));
    }
    let mut pts = Vec::with_capacity(m * d);
    for l in 1..=m {
        let a = l as f64 / m as f64;
        pts.extend(x0.iter().zip(x).map(|(b, v)| b + a * (v - b)));
    }
    let (_, grads) = f.grad_batch(&pts)?;
    let mut out = vec![0.0; d];
    for row in grads.chunks_exact(d) {
        out.iter_mut().zip(row).for_each(|(o, g)| *o += g);
    }
    for j in 0..d {
        out[j] *= (x[j] - x0[j]) / m as f64;
    }
    Ok(out)
}

/// Cartesian grid of normalized (price, inventory, time) probe states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeGrid {
    pub prices: Vec<f64>,
    pub inventories: Vec<f64>,
    pub n_slices: usize,
}

impl ProbeGrid {
    /// `n_price x n_inv x N` grid; prices span `[price_lo, price_hi]`, inventories `[0, 1]`.
    pub fn uniform(
        n_price: usize,
        n_inv: usize,
        n_slices: usize,
        price_lo: f64,
        price_hi: f64,
    ) -> Self {
        let lin = |n: usize, lo: f64, hi: f64| -> Vec<f64> {
            if n == 1 {
                return vec![0.5 * (lo + hi)];
            }
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()
        };
        Self {
            prices: lin(n_price, price_lo, price_hi),
            inventories: lin(n_inv, 0.0, 1.0),
            n_slices,
        }
    }

    /// `(price, inventory, time)` triples in price-major order.
    pub fn states(&self) -> Vec<[f64; 3]> {
        let mut out =
            Vec::with_capacity(self.prices.len() * self.inventories.len() * self.n_slices);
        for &p in &self.prices {
            for &q in &self.inventories {
                for t in 0..self.n_slices {
                    out.push([p, q, t as f64 / self.n_slices as f64]);
                }
            }
        }
        out
    }
}

/// A probe state with its greedy action filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePoint {
    pub features: [f64; 4],
    pub history: Option<HistoryBatch>,
}

/// Mean absolute attributions over the probe set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgSummary {
    pub a_price: f64,
    pub a_inv: f64,
    pub a_time: f64,
    pub a_action: f64,
}

/// The baseline zeroes price, inventory and time and keeps the action.
pub fn ig_summary(
    net: &Network,
    params: &NetworkParams,
    probes: &[ProbePoint],
    m: usize,
) -> Result<IgSummary> {
    if probes.is_empty() {
        return Err(Error::Config("empty probe set".into()));
    }
    let mut acc = [0.0; 4];
    for p in probes {
        let f = QAttribution {
            net,
            params,
            history: p.history.as_ref(),
        };
        let x0 = [0.0, 0.0, 0.0, p.features[3]];
        let ig = integrated_gradients(&f, &p.features, &x0, m)?;
        acc.iter_mut().zip(&ig).for_each(|(a, v)| *a += v.abs());
    }
    let n = probes.len() as f64;
    Ok(IgSummary {
        a_price: acc[0] / n,
        a_inv: acc[1] / n,
        a_time: acc[2] / n,
        a_action: acc[3] / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Linear {
        w: [f64; 3],
    }

    impl InputGradient for Linear {
        fn dim(&self) -> usize {
            3
        }
        fn grad_batch(&self, xs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
            let rows = xs.len() / 3;
            let v = xs
                .chunks_exact(3)
                .map(|r| r.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + 0.5)
                .collect();
            Ok((v, self.w.repeat(rows)))
        }
    }

    #[test]
    fn linear_attribution_is_exact() {
        let f = Linear {
            w: [2.0, -1.0, 0.5],
        };
        for m in [1, 3, 64] {
            let ig = integrated_gradients(&f, &[1.0, 2.0, -4.0], &[0.5, 0.0, 0.0], m).unwrap();
            assert_eq!(ig, vec![1.0, -2.0, -2.0]);
        }
        let ig = integrated_gradients(&f, &[1.0, 2.0, -4.0], &[1.0, 2.0, -4.0], 8).unwrap();
        assert!(ig.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn completeness_on_networks() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for spec in [NetworkSpec::baseline_q(), NetworkSpec::film_q()] {
            let net = Network::build(&spec).unwrap();
            let p = net.init(&mut r);
            let f = QAttribution {
                net: &net,
                params: &p,
                history: None,
            };
            for _ in 0..5 {
                // normalized price, inventory, time and action as seen by the probes
                let x = vec![
                    r.gen_range(-0.02..0.0),
                    r.gen_range(0.0..1.0),
                    r.gen_range(0.0..1.0),
                    r.gen_range(0.0..1.0),
                ];
                let x0 = [0.0, 0.0, 0.0, x[3]];
                let fx = net.q_value(&p, &[x[0], x[1], x[2], x[3]], None).unwrap();
                let f0 = net.q_value(&p, &x0, None).unwrap();
                let ig = integrated_gradients(&f, &x, &x0, 64).unwrap();
                let gap = (ig.iter().sum::<f64>() - (fx - f0)).abs();
                assert!(gap < 1e-3, "{:?} m=64: gap {gap:e}", spec.variant);

                // Right sums overshoot by (g(x) - g(x0)).dx / 2m to leading order.
                let m = 1024;
                let ig = integrated_gradients(&f, &x, &x0, m).unwrap();
                let gap = ig.iter().sum::<f64>() - (fx - f0);
                let (_, ends) = f
                    .grad_batch(&[x0.as_slice(), x.as_slice()].concat())
                    .unwrap();
                let lead: f64 = (0..4)
                    .map(|j| (ends[4 + j] - ends[j]) * (x[j] - x0[j]))
                    .sum::<f64>()
                    / (2.0 * m as f64);
                assert!(
                    (gap - lead).abs() < 1e-8,
                    "{:?}: gap {gap:e} lead {lead:e}",
                    spec.variant
                );
                if spec.variant == crate::nn::Variant::BaselineQ {
                    assert!(gap.abs() < 1e-6, "baseline m=1024: gap {gap:e}");
                }
            }
        }
    }

    #[test]
    fn probe_grid_shape() {
        let g = ProbeGrid::uniform(9, 9, 10, -0.02, 0.0);
        let s = g.states();
        assert_eq!(s.len(), 810);
        assert_eq!(s[0], [-0.02, 0.0, 0.0]);
        assert!(
            (s[809][0] - 0.0).abs() < 1e-15 && s[809][1] == 1.0 && (s[809][2] - 0.9).abs() < 1e-15
        );
    }

    fn probes(n: usize, r: &mut ChaCha8Rng) -> Vec<ProbePoint> {
        let grid = ProbeGrid::uniform(3, 3, n, -0.02, 0.0);
        grid.states()
            .into_iter()
            .map(|[p, q, t]| ProbePoint {
                features: [p, q, t, r.gen_range(0.0..1.0)],
                history: None,
            })
            .collect()
    }

    #[test]
    fn summary_ignores_zeroed_price_and_scales_linearly() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let net = Network::build(&NetworkSpec::baseline_q()).unwrap();
        let mut p = net.init(&mut r);
        let pts = probes(4, &mut r);

        let w = net.segment("trunk.0.w").unwrap().clone();
        for o in 0..w.len / 4 {
            p.values[w.offset + 4 * o] = 0.0;
        }
        let a = ig_summary(&net, &p, &pts, 16).unwrap();
        assert_eq!(a.a_price, 0.0);
        assert!(a.a_inv > 0.0 && a.a_time > 0.0);

        let c = 2.5;
        let mut scaled = p.clone();
        for name in ["trunk.5.w", "trunk.5.b"] {
            let s = net.segment(name).unwrap();
            scaled.values[s.offset..s.offset + s.len]
                .iter_mut()
                .for_each(|v| *v *= c);
        }
        let b = ig_summary(&net, &scaled, &pts, 16).unwrap();
        for (x, y) in [
            (a.a_inv, b.a_inv),
            (a.a_time, b.a_time),
            (a.a_action, b.a_action),
        ] {
            assert!((c * x - y).abs() < 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn summary_of_time_only_function() {
        struct TimeOnly;
        impl InputGradient for TimeOnly {
            fn dim(&self) -> usize {
                4
            }
            fn grad_batch(&self, xs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
                let v = xs.chunks_exact(4).map(|r| r[2].sin()).collect();
                let g = xs
                    .chunks_exact(4)
                    .flat_map(|r| [0.0, 0.0, r[2].cos(), 0.0])
                    .collect();
                Ok((v, g))
            }
        }
        let ig = integrated_gradients(
            &TimeOnly,
            &[-0.01, 0.7, 0.4, 0.3],
            &[0.0, 0.0, 0.0, 0.3],
            64,
        )
        .unwrap();
        assert_eq!((ig[0], ig[1], ig[3]), (0.0, 0.0, 0.0));
        assert!((ig[2] - 0.4f64.sin()).abs() < 1e-3);
    }

    #[test]
    fn summary_rejects_empty_probe_set() {
        let net = Network::build(&NetworkSpec::baseline_q()).unwrap();
        let p = net.init(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(ig_summary(&net, &p, &[], 8).is_err());
    }
}
