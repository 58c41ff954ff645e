//! Independent oracles shared by the integration and acceptance targets.
//! Nothing here calls into the simulator or the closed-form benchmark code.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};

use execlab::diagnostics::Quadrant;
use execlab::market::{Convention, MarketParams};

/// Shortfall of every player at sigma = 0, summed slice by slice from the
/// midprice recursion: pre-trade mid minus the temporary concession.
pub fn telescoping_is(p: &MarketParams, schedules: &[&[f64]]) -> Vec<f64> {
    let tau = p.horizon / p.n_slices as f64;
    let k = schedules.len();
    let mut mid = p.s0;
    let mut cash = vec![0.0; k];
    for t in 0..p.n_slices {
        let flow: f64 = schedules.iter().map(|s| s[t]).sum();
        for i in 0..k {
            let v = schedules[i][t];
            let concession = match p.convention {
                Convention::Aggregate => p.a * flow / tau,
                Convention::Own => p.a * v / tau,
            };
            cash[i] += v * (mid - concession);
        }
        mid -= p.kappa * flow;
    }
    (0..k).map(|i| p.q0[i] * p.s0 - cash[i]).collect()
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let step = p1 / dp;
            z -= step;
            if step.abs() < 1e-16 {
                let (mut q0, mut q1) = (1.0, z);
                for j in 2..=n {
                    let q2 = ((2 * j - 1) as f64 * z * q1 - (j - 1) as f64 * q0) / j as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let d = n as f64 * (z * q1 - q0) / (z * z - 1.0);
                x[i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * d * d);
                break;
            }
        }
    }
    (x, w)
}

/// Composite Gauss-Legendre rule over `panels` equal sub-intervals.
pub fn integrate(
    f: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    nodes: &(Vec<f64>, Vec<f64>),
    panels: usize,
) -> f64 {
    let h = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let (a, b) = (lo + k as f64 * h, lo + (k + 1) as f64 * h);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for (x, w) in nodes.0.iter().zip(&nodes.1) {
            total += w * half * f(mid + half * x);
        }
    }
    total
}

/// Expected continuous-time aggregate-impact shortfall of player `i` under
/// liquidation rates `u`: permanent pressure of cumulative aggregate flow plus
/// contemporaneous aggregate temporary impact. The inner cumulative integral
/// is evaluated by its own quadrature.
pub fn ct_agg_expected_is(
    u: [&dyn Fn(f64) -> f64; 2],
    i: usize,
    kappa: f64,
    a: f64,
    horizon: f64,
) -> f64 {
    let nodes = gauss_legendre(24);
    let total = |t: f64| u[0](t) + u[1](t);
    let cumulative = |t: f64| {
        if t == 0.0 {
            0.0
        } else {
            integrate(&total, 0.0, t, &nodes, 4)
        }
    };
    let perm = integrate(&|t| u[i](t) * cumulative(t), 0.0, horizon, &nodes, 16);
    let temp = integrate(&|t| u[i](t) * total(t), 0.0, horizon, &nodes, 16);
    kappa * perm + a * temp
}

/// Player's sigma = 0 own-impact shortfall against a fixed opponent `w` as a
/// quadratic `1/2 v'Hv + c'v`. `half_diagonal` charges the same-slice
/// permanent impact at half weight (the constant-kernel discretisation).
pub fn own_game_quadratic(
    p: &MarketParams,
    w: &[f64],
    half_diagonal: bool,
) -> (DMatrix<f64>, Vec<f64>) {
    let n = p.n_slices;
    let tau = p.horizon / n as f64;
    let diag = 2.0 * p.a / tau + if half_diagonal { p.kappa } else { 0.0 };
    let h = DMatrix::from_fn(n, n, |r, c| if r == c { diag } else { p.kappa });
    let c = (0..n)
        .map(|t| {
            let past: f64 = w[..t].iter().sum();
            p.kappa * past
                + if half_diagonal {
                    0.5 * p.kappa * w[t]
                } else {
                    0.0
                }
        })
        .collect();
    (h, c)
}

pub fn quadratic_value(h: &DMatrix<f64>, c: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    let mut q = 0.0;
    for r in 0..n {
        for s in 0..n {
            q += 0.5 * v[r] * h[(r, s)] * v[s];
        }
        q += c[r] * v[r];
    }
    q
}

/// Euclidean projection onto `{v >= 0, sum v = total}` by sorting.
pub fn project_simplex(y: &[f64], total: f64) -> Vec<f64> {
    let mut s = y.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (k, v) in s.iter().enumerate() {
        acc += v;
        let t = (acc - total) / (k + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Projected gradient with step 1/L, L the largest eigenvalue of `h`.
/// Returns the iterate and the number of iterations used.
pub fn qp_best_response(
    h: &DMatrix<f64>,
    c: &[f64],
    total: f64,
    max_iter: usize,
    tol: f64,
) -> (Vec<f64>, usize) {
    let n = c.len();
    let l = SymmetricEigen::new(h.clone()).eigenvalues.max();
    let mut v = vec![total / n as f64; n];
    for it in 0..max_iter {
        let grad: Vec<f64> = (0..n)
            .map(|r| (0..n).map(|s| h[(r, s)] * v[s]).sum::<f64>() + c[r])
            .collect();
        let y: Vec<f64> = v.iter().zip(&grad).map(|(x, g)| x - g / l).collect();
        let next = project_simplex(&y, total);
        let moved = next
            .iter()
            .zip(&v)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if moved < tol {
            return (v, it + 1);
        }
    }
    (v, max_iter)
}

/// Rolling SW share by direct window recount.
pub fn brute_rolling_share(series: &[Quadrant], window: usize) -> Vec<f64> {
    (0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let w = &series[lo..=i];
            w.iter().filter(|q| **q == Quadrant::SW).count() as f64 / w.len() as f64
        })
        .collect()
}

/// Occupancy and transition counts by direct enumeration over label pairs.
pub fn brute_transitions(series: &[Quadrant]) -> ([f64; 4], [[usize; 4]; 4]) {
    let mut occ = [0.0; 4];
    for (k, q) in Quadrant::ALL.iter().enumerate() {
        occ[k] = series.iter().filter(|s| *s == q).count() as f64 / series.len() as f64;
    }
    let mut counts = [[0usize; 4]; 4];
    for (i, from) in Quadrant::ALL.iter().enumerate() {
        for (j, to) in Quadrant::ALL.iter().enumerate() {
            counts[i][j] = (1..series.len())
                .filter(|&t| series[t - 1] == *from && series[t] == *to)
                .count();
        }
    }
    (occ, counts)
}

/// Every file under `dir`, keyed by relative path.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}
