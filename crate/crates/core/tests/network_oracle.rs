//! The batched network against a naive per-sample evaluation, and analytic
//! gradients against central differences.

use fieldlab::models::{
    encode_hash, encode_positional, fd_gradient, forward, init_params, loss_and_grad, ArchSpec, HashConfig,
    ParamVector,
};

fn coords(n: usize, seed: u64, lo: f64) -> Vec<[f64; 2]> {
    let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    let mut next = || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    (0..n).map(|_| [lo + (1.0 - lo) * next(), lo + (1.0 - lo) * next()]).collect()
}

fn dense(p: &ParamVector, name: &str, x: &[f64]) -> Vec<f64> {
    let w = p.slice(&format!("{name}.weight")).unwrap();
    let b = p.slice(&format!("{name}.bias")).unwrap();
    let fan_in = x.len();
    (0..b.len())
        .map(|o| b[o] + (0..fan_in).map(|i| w[o * fan_in + i] * x[i]).sum::<f64>())
        .collect()
}

/// Straightforward single-sample evaluation.
fn reference(arch: &ArchSpec, p: &ParamVector, c: [f64; 2]) -> f64 {
    let (mut h, hidden, sine): (Vec<f64>, usize, Option<f64>) = match arch {
        ArchSpec::Siren { hidden_layers, omega0, .. } => (c.to_vec(), *hidden_layers, Some(*omega0)),
        ArchSpec::PeMlp { m_bases, hidden_layers, .. } => (encode_positional(c, *m_bases), *hidden_layers, None),
        ArchSpec::HashMlp(cfg) => (encode_hash(c, p, cfg), cfg.hidden_layers, None),
    };
    for layer in 0..=hidden {
        let z = dense(p, &format!("dense{layer}"), &h);
        h = match sine {
            Some(w0) if layer == 0 => z.iter().map(|v| (w0 * v).sin()).collect(),
            Some(_) => z.iter().map(|v| v.sin()).collect(),
            None => z.iter().map(|v| v.max(0.0)).collect(),
        };
    }
    dense(p, "out", &h)[0]
}

fn small_hash() -> ArchSpec {
    ArchSpec::HashMlp(HashConfig { levels: 4, base_res: 4, growth: 1.5, feat_dim: 2, table_log2: 10, hidden_layers: 1, width: 16 })
}

fn archs() -> Vec<ArchSpec> {
    vec![ArchSpec::siren(2, 16), ArchSpec::pe_mlp(4, 2, 16), small_hash()]
}

/// Hash tables start near zero; spread them so the encoding matters.
fn spread(arch: &ArchSpec, mut p: ParamVector, seed: u64) -> ParamVector {
    if let ArchSpec::HashMlp(cfg) = arch {
        let other = init_params(&ArchSpec::siren(0, 1), seed);
        for l in 0..cfg.levels {
            for (k, v) in p.slice_mut(&format!("hash.level{l}")).unwrap().iter_mut().enumerate() {
                *v = ((k as f64 + 1.0) * 0.7548776662 + other.values[0]).fract() - 0.5;
            }
        }
    }
    p
}

#[test]
fn batched_forward_matches_naive_loops() {
    for arch in archs() {
        let lo = if arch.domain() == fieldlab::signal::Domain::Symmetric { -1.0 } else { 0.0 };
        for seed in 0..3 {
            let p = spread(&arch, init_params(&arch, seed), seed);
            let xs = coords(50, seed + 11, lo);
            let fast = forward(&arch, &p, &xs).unwrap();
            for (x, f) in xs.iter().zip(&fast) {
                let r = reference(&arch, &p, *x);
                assert!((f - r).abs() <= 1e-12 * (1.0 + r.abs()), "{arch}: {f} vs {r}");
            }
        }
    }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for arch in archs() {
        let lo = if arch.domain() == fieldlab::signal::Domain::Symmetric { -1.0 } else { 0.0 };
        let p = spread(&arch, init_params(&arch, 5), 5);
        let xs = coords(24, 3, lo);
        let targets: Vec<f64> = xs.iter().map(|c| 0.5 + 0.4 * (3.0 * c[0]).sin() * c[1]).collect();
        let (_, g) = loss_and_grad(&arch, &p, &xs, &targets).unwrap();
        let fd = fd_gradient(&arch, &p, &xs, &targets, 1e-5).unwrap();
        let mut checked = 0;
        for (a, b) in g.iter().zip(&fd) {
            if a.abs() > 1e-8 {
                assert!((a - b).abs() / a.abs().max(b.abs()) < 1e-4, "{arch}: {a} vs {b}");
                checked += 1;
            }
        }
        assert!(checked > 10, "{arch}: only {checked} entries checked");
    }
}

#[test]
fn loss_is_mean_of_per_sample_losses() {
    let arch = ArchSpec::siren(1, 8);
    let p = init_params(&arch, 2);
    let xs = coords(10, 4, -1.0);
    let t = vec![0.25; xs.len()];
    let (l, g) = loss_and_grad(&arch, &p, &xs, &t).unwrap();
    let mut sum_l = 0.0;
    let mut sum_g = vec![0.0; g.len()];
    for (x, y) in xs.iter().zip(&t) {
        let (li, gi) = loss_and_grad(&arch, &p, &[*x], &[*y]).unwrap();
        sum_l += li;
        for (s, v) in sum_g.iter_mut().zip(gi) {
            *s += v;
        }
    }
    let n = xs.len() as f64;
    assert!((l - sum_l / n).abs() < 1e-14);
    for (a, b) in g.iter().zip(&sum_g) {
        assert!((a - b / n).abs() < 1e-12 * (1.0 + a.abs()));
    }
}
