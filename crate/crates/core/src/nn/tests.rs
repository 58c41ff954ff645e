use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::history::HistoryBatch;
use super::layers::{LayoutBuilder, Linear};
use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_features(r: &mut ChaCha8Rng, rows: usize) -> Vec<f64> {
    (0..rows * 4).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn random_history(r: &mut ChaCha8Rng, states: usize, n: usize) -> HistoryBatch {
    let mut hb = HistoryBatch::new(n);
    for _ in 0..states {
        let t = r.gen_range(0..n);
        let tokens: Vec<f64> = (0..2 * n).map(|_| r.gen_range(-0.5..0.5)).collect();
        let mask: Vec<bool> = (0..n).map(|l| l <= t).collect();
        hb.push(&tokens, &mask);
    }
    hb
}

/// Perturbs every parameter so zero-initialized maps take part in the check.
fn jitter(params: &mut NetworkParams, r: &mut ChaCha8Rng, scale: f64) {
    params
        .values
        .iter_mut()
        .for_each(|v| *v += r.gen_range(-scale..scale));
}

fn scalar_q(net: &Network, p: &NetworkParams, x: &[f64], hist: Option<&HistoryBatch>) -> f64 {
    let idx = [0usize];
    let batch = QBatch {
        features: x,
        history: hist.map(|h| (h, &idx[..])),
    };
    net.q_values(p, &batch).unwrap()[0]
}

fn check_q_gradient(spec: NetworkSpec, seed: u64, draws: usize) {
    let net = Network::build(&spec).unwrap();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let mut p = net.init(&mut r);
        jitter(&mut p, &mut r, 0.05);
        let x = random_features(&mut r, 1);
        let hist = (spec.variant == Variant::HistoryQ)
            .then(|| random_history(&mut r, 1, spec.n_positions));
        let idx = [0usize];
        let batch = QBatch {
            features: &x,
            history: hist.as_ref().map(|h| (h, &idx[..])),
        };
        let (_, cache) = net.q_forward(&p, &batch).unwrap();
        let mut g = vec![0.0; net.n_params()];
        let dx = net
            .q_backward(&p, &cache, &[1.0], &mut g, true)
            .unwrap()
            .unwrap();
        let h = 1e-4;
        for _ in 0..12 {
            let i = r.gen_range(0..net.n_params());
            let keep = p.values[i];
            p.values[i] = keep + h;
            let fp = scalar_q(&net, &p, &x, hist.as_ref());
            p.values[i] = keep - h;
            let fm = scalar_q(&net, &p, &x, hist.as_ref());
            p.values[i] = keep;
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6));
        }
        for j in 0..4 {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (scalar_q(&net, &p, &xp, hist.as_ref())
                - scalar_q(&net, &p, &xm, hist.as_ref()))
                / (2.0 * h);
            worst = worst.max((fd - dx[j]).abs() / fd.abs().max(dx[j].abs()).max(1e-6));
        }
    }
    assert!(
        worst < 1e-4,
        "{:?}: worst relative error {worst:e}",
        spec.variant
    );
}

#[test]
fn baseline_gradient_matches_differences() {
    check_q_gradient(NetworkSpec::baseline_q(), 1, 5);
}

#[test]
fn film_gradient_matches_differences() {
    check_q_gradient(NetworkSpec::film_q(), 2, 5);
}

#[test]
fn history_gradient_matches_differences() {
    check_q_gradient(NetworkSpec::history_q(10), 3, 5);
}

#[test]
fn schedule_gradients_match_differences() {
    for spec in [
        NetworkSpec::time_only_schedule(10),
        NetworkSpec::model_based_schedule(10),
    ] {
        let net = Network::build(&spec).unwrap();
        let mut r = rng(4);
        let mut p = net.init(&mut r);
        jitter(&mut p, &mut r, 0.2);
        let n_out = net.schedule_net().unwrap().n_out;
        let w: Vec<f64> = (0..n_out).map(|_| r.gen_range(-1.0..1.0)).collect();
        let f = |p: &NetworkParams| {
            net.schedule_forward(p)
                .unwrap()
                .0
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let (_, cache) = net.schedule_forward(&p).unwrap();
        let mut g = vec![0.0; net.n_params()];
        net.schedule_backward(&p, &cache, &w, &mut g).unwrap();
        for i in (0..net.n_params()).step_by(37) {
            let keep = p.values[i];
            p.values[i] = keep + 1e-4;
            let fp = f(&p);
            p.values[i] = keep - 1e-4;
            let fm = f(&p);
            p.values[i] = keep;
            let fd = (fp - fm) / 2e-4;
            assert!((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6) < 1e-4);
        }
    }
}

#[test]
fn linear_input_gradient_is_weight_vector() {
    let mut lb = LayoutBuilder::new();
    let lin = Linear::new(&mut lb, "f", 4, 1);
    let (segs, n) = lb.finish();
    let p = layers::init_segments(&segs, n, &mut rng(5));
    let mut g = vec![0.0; n];
    let mut dx = vec![0.0; 4];
    lin.backward(&p, &mut g, &[0.3, -1.0, 2.0, 0.1], &[1.0], 1, Some(&mut dx));
    assert_eq!(dx, lin.weights(&p));
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    for spec in [
        NetworkSpec::baseline_q(),
        NetworkSpec::film_q(),
        NetworkSpec::history_q(10),
    ] {
        let net = Network::build(&spec).unwrap();
        let mut r = rng(6);
        let p = net.init(&mut r);
        let x = random_features(&mut r, 3);
        let hist = random_history(&mut r, 3, 10);
        let idx = [0, 1, 2];
        let batch = QBatch {
            features: &x,
            history: Some((&hist, &idx)),
        };
        let (_, cache) = net.q_forward(&p, &batch).unwrap();
        let mut g = vec![0.0; net.n_params()];
        let dx = net
            .q_backward(&p, &cache, &[0.0; 3], &mut g, true)
            .unwrap()
            .unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(dx.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn film_with_inactive_price_path_is_plain_residual_mlp() {
    let net = Network::build(&NetworkSpec::film_q()).unwrap();
    let f = net.film().unwrap();
    let mut r = rng(7);
    let mut p = net.init(&mut r);
    p.values[f.log_eta] = f64::NEG_INFINITY;
    p.values[f.log_cp] = 0.4;
    let x = random_features(&mut r, 6);
    let q = net.q_values(&p, &QBatch::plain(&x)).unwrap();

    let v = &p.values;
    let mut xt = x.clone();
    for row in xt.chunks_exact_mut(4) {
        row[0] *= 0.4f64.exp();
    }
    let (mut h, _) = f.base.forward(v, &xt, 6);
    for b in &f.blocks {
        let (u, _) = b.ln.forward(v, &h, 6);
        let a = f.act.forward(&b.fc1.forward(v, &u, 6));
        let z = b.fc2.forward(v, &a, 6);
        h.iter_mut()
            .zip(&z)
            .for_each(|(hi, zi)| *hi += f.rho_res * zi);
    }
    let expected = f.head.forward(v, &h, 6);
    assert_eq!(q, expected);
}

#[test]
fn film_modulation_is_bounded() {
    let net = Network::build(&NetworkSpec::film_q()).unwrap();
    let f = net.film().unwrap();
    let mut r = rng(8);
    for _ in 0..20 {
        let mut p = net.init(&mut r);
        jitter(&mut p, &mut r, 5.0);
        let x: Vec<f64> = (0..16).map(|_| r.gen_range(-50.0..50.0)).collect();
        for m in f.modulations(&p.values, &x, 4) {
            assert!(m.iter().all(|g| g.abs() <= f.lambda_film));
        }
    }
}

#[test]
fn masked_positions_do_not_affect_output() {
    let net = Network::build(&NetworkSpec::history_q(10)).unwrap();
    let mut r = rng(9);
    for _ in 0..50 {
        let p = net.init(&mut r);
        let x = random_features(&mut r, 1);
        let hb = random_history(&mut r, 1, 10);
        let base = scalar_q(&net, &p, &x, Some(&hb));
        let mut flipped = hb.clone();
        for l in 0..10 {
            if !flipped.mask[l] {
                flipped.tokens[2 * l] = r.gen_range(-1e3..1e3);
                flipped.tokens[2 * l + 1] = r.gen_range(-1e3..1e3);
            }
        }
        assert_eq!(
            base.to_bits(),
            scalar_q(&net, &p, &x, Some(&flipped)).to_bits()
        );
    }
}

#[test]
fn empty_mask_is_degenerate() {
    let net = Network::build(&NetworkSpec::history_q(4)).unwrap();
    let p = net.init(&mut rng(10));
    let out = net.q_value(&p, &[0.0; 4], Some((&[0.0; 8], &[false; 4])));
    assert!(matches!(out, Err(crate::Error::Degenerate(_))));
    assert!(matches!(
        net.q_value(&p, &[0.0; 4], None),
        Err(crate::Error::Shape(_))
    ));
}

#[test]
fn grouped_history_rows_match_single_rows() {
    let net = Network::build(&NetworkSpec::history_q(10)).unwrap();
    let mut r = rng(11);
    let p = net.init(&mut r);
    let hb = random_history(&mut r, 2, 10);
    let x = random_features(&mut r, 5);
    let idx = [0, 0, 1, 1, 1];
    let grouped = net
        .q_values(
            &p,
            &QBatch {
                features: &x,
                history: Some((&hb, &idx)),
            },
        )
        .unwrap();
    for (row, &s) in idx.iter().enumerate() {
        let mut single = HistoryBatch::new(10);
        single.push(
            &hb.tokens[s * 20..(s + 1) * 20],
            &hb.mask[s * 10..(s + 1) * 10],
        );
        let q = scalar_q(&net, &p, &x[row * 4..row * 4 + 4], Some(&single));
        assert!((q - grouped[row]).abs() < 1e-12);
    }
}

#[test]
fn param_count_is_a_function_of_spec() {
    let a = Network::build(&NetworkSpec::baseline_q()).unwrap();
    assert_eq!(a.n_params(), 4 * 128 + 128 + 4 * (128 * 128 + 128) + 129);
    let b = Network::build(&NetworkSpec::baseline_q()).unwrap();
    assert_eq!(a.segments(), b.segments());
    let mb = Network::build(&NetworkSpec::model_based_schedule(10)).unwrap();
    let mf = Network::build(&NetworkSpec::time_only_schedule(10)).unwrap();
    assert_eq!(mf.n_params() - mb.n_params(), 1);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    for spec in [
        NetworkSpec::film_q(),
        NetworkSpec::history_q(10),
        NetworkSpec::time_only_schedule(10),
    ] {
        let net = Network::build(&spec).unwrap();
        let mut p = net.init(&mut rng(12));
        p.values[0] = f64::MIN_POSITIVE;
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &p).unwrap();
        let (spec2, p2) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(p2, p);
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(&buf[..]).is_err());
    }
}

#[test]
fn schedule_nets_start_at_zero_output() {
    let net = Network::build(&NetworkSpec::time_only_schedule(10)).unwrap();
    let p = net.init(&mut rng(13));
    let (z, _) = net.schedule_forward(&p).unwrap();
    assert_eq!(z, vec![0.0; 10]);
}
