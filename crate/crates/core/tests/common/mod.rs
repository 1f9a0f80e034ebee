//! Shared oracles and finite-difference helpers for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rlsum::classifier::{ClassifierConfig, ClassifierModel};
use rlsum::env::Action;
use rlsum::neural::{
    gru_cell, gru_cell_backward, huber_loss, smoothed_cross_entropy, softmax, BiGru, Dense, GruCell, Matrix,
    ParameterSet, Prelu, SequenceEncoder,
};
use rlsum::qnet::{QNetConfig, QNetwork};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_INSTANCES: usize = 20;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * normal(rng)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn unit_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = random_matrix(rows, cols, 1.0, rng);
    for r in 0..rows {
        let row = m.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    m
}

/// Replaces every parameter with `scale · N(0, 1)` draws.
pub fn randomise(params: &mut ParameterSet, scale: f64, rng: &mut ChaCha8Rng) {
    for p in params.iter_mut() {
        p.value.as_mut_slice().iter_mut().for_each(|v| *v = scale * normal(rng));
    }
}

/// `|a − n| / max(|a|, |n|, 1e-5)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

fn project(out: &Matrix, weights: &Matrix) -> f64 {
    out.as_slice().iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum()
}

/// Worst relative error between the gradients stored in `params` and
/// central differences of `loss` over every parameter entry.
pub fn check_params<F: Fn(&ParameterSet) -> f64>(params: &mut ParameterSet, loss: F) -> f64 {
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.as_slice().to_vec()).collect();
    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let original = params.iter().nth(pi).unwrap().value.as_slice()[k];
            params.iter_mut().nth(pi).unwrap().value.as_mut_slice()[k] = original + FD_STEP;
            let up = loss(params);
            params.iter_mut().nth(pi).unwrap().value.as_mut_slice()[k] = original - FD_STEP;
            let down = loss(params);
            params.iter_mut().nth(pi).unwrap().value.as_mut_slice()[k] = original;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Worst relative error of an input gradient against central differences.
pub fn check_input<F: Fn(&Matrix) -> f64>(input: &Matrix, analytic: &Matrix, loss: F) -> f64 {
    let mut worst = 0.0f64;
    let mut x = input.clone();
    for k in 0..x.len() {
        let original = x.as_slice()[k];
        x.as_mut_slice()[k] = original + FD_STEP;
        let up = loss(&x);
        x.as_mut_slice()[k] = original - FD_STEP;
        let down = loss(&x);
        x.as_mut_slice()[k] = original;
        worst = worst.max(rel_err(analytic.as_slice()[k], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

pub fn grad_dense(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, i, o) = (1 + r.random_range(0..3), 1 + r.random_range(0..4), 1 + r.random_range(0..4));
    let mut params = ParameterSet::new();
    let layer = Dense::new(&mut params, "d", i, o, &mut r).unwrap();
    randomise(&mut params, 0.7, &mut r);
    let x = random_matrix(n, i, 1.0, &mut r);
    let w = random_matrix(n, o, 1.0, &mut r);
    let dx = layer.backward(&mut params, &x, &w);
    let e_in = check_input(&x, &dx, |x| project(&layer.forward(&params, x).unwrap(), &w));
    let e_p = check_params(&mut params, |p| project(&layer.forward(p, &x).unwrap(), &w));
    e_in.max(e_p)
}

pub fn grad_prelu(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, c) = (1 + r.random_range(0..3), 1 + r.random_range(0..5));
    let mut params = ParameterSet::new();
    let layer = Prelu::new(&mut params, "p", c).unwrap();
    randomise(&mut params, 0.5, &mut r);
    // keep inputs away from the kink at 0
    let mut x = random_matrix(n, c, 1.0, &mut r);
    x.as_mut_slice().iter_mut().for_each(|v| *v += 0.1 * v.signum());
    let w = random_matrix(n, c, 1.0, &mut r);
    let dx = layer.backward(&mut params, &x, &w);
    let e_in = check_input(&x, &dx, |x| project(&layer.forward(&params, x).unwrap(), &w));
    let e_p = check_params(&mut params, |p| project(&layer.forward(p, &x).unwrap(), &w));
    e_in.max(e_p)
}

pub fn grad_gru_cell(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (i, h) = (1 + r.random_range(0..4), 1 + r.random_range(0..4));
    let mut params = ParameterSet::new();
    let cell = GruCell::new(&mut params, "g", i, h, &mut r).unwrap();
    randomise(&mut params, 0.6, &mut r);
    let x = random_matrix(1, i, 1.0, &mut r);
    let h0 = random_matrix(1, h, 0.5, &mut r);
    let w = random_matrix(1, h, 1.0, &mut r);
    let loss = |p: &ParameterSet, x: &[f64], h0: &[f64]| {
        gru_cell(p, &cell, x, h0).unwrap().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum::<f64>()
    };
    let (dx, dh) = gru_cell_backward(&mut params, &cell, x.as_slice(), h0.as_slice(), w.as_slice()).unwrap();
    let e_x = check_input(&x, &Matrix::row_vector(&dx), |x| loss(&params, x.as_slice(), h0.as_slice()));
    let e_h = check_input(&h0, &Matrix::row_vector(&dh), |h| loss(&params, x.as_slice(), h.as_slice()));
    let e_p = check_params(&mut params, |p| loss(p, x.as_slice(), h0.as_slice()));
    e_x.max(e_h).max(e_p)
}

pub fn grad_bigru(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, i, h) = (1 + r.random_range(0..4), 1 + r.random_range(0..3), 1 + r.random_range(0..3));
    let mut params = ParameterSet::new();
    let net = BiGru::new(&mut params, "rnn", i, h, &mut r).unwrap();
    randomise(&mut params, 0.6, &mut r);
    let x = random_matrix(t, i, 1.0, &mut r);
    let w = random_matrix(t, 2 * h, 1.0, &mut r);
    let trace = net.encode(&params, &x).unwrap();
    let dx = net.backward(&mut params, &x, &trace, &w);
    let e_in = check_input(&x, &dx, |x| project(&net.encode(&params, x).unwrap().output, &w));
    let e_p = check_params(&mut params, |p| project(&net.encode(p, &x).unwrap().output, &w));
    e_in.max(e_p)
}

pub fn grad_encoder(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, d, e, h) = (1 + r.random_range(0..4), 1 + r.random_range(0..3), 2, 2);
    let mut params = ParameterSet::new();
    let enc = SequenceEncoder::new(&mut params, d, e, h, &mut r).unwrap();
    randomise(&mut params, 0.6, &mut r);
    let x = random_matrix(t, d, 1.0, &mut r);
    let w = random_matrix(t, 2 * h, 1.0, &mut r);
    let trace = enc.forward(&params, x.clone()).unwrap();
    enc.backward(&mut params, &trace, &w);
    check_params(&mut params, |p| project(enc.forward(p, x.clone()).unwrap().output(), &w))
}

pub fn grad_softmax_ce(seed: u64) -> f64 {
    let mut r = rng(seed);
    let c = 2 + r.random_range(0..6);
    let y = r.random_range(0..c);
    let omega = if seed % 3 == 0 { 0.0 } else { 0.1 * r.random::<f64>() * 9.0 };
    let z = random_matrix(1, c, 2.0, &mut r);
    let loss = |z: &Matrix| smoothed_cross_entropy(&softmax(z.as_slice()), y, omega).unwrap().loss;
    let g = smoothed_cross_entropy(&softmax(z.as_slice()), y, omega).unwrap().grad;
    check_input(&z, &Matrix::row_vector(&g), loss)
}

pub fn grad_classifier(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, d, c) = (1 + r.random_range(0..4), 2, 2 + r.random_range(0..2));
    let names = (0..c).map(|k| format!("c{k}")).collect();
    let cfg = ClassifierConfig {
        embed_size: 2,
        hidden_size: 2,
        seed,
        ..Default::default()
    };
    let mut model = ClassifierModel::new(d, names, &cfg).unwrap();
    randomise(model.params_mut().unwrap(), 0.6, &mut r);
    let x = random_matrix(t, d, 1.0, &mut r);
    let y = r.random_range(0..c);
    let seq = rlsum::dataset::FeatureSequence::new(x.clone()).unwrap();
    let all: Vec<usize> = (0..t).collect();
    let meta = model.meta().clone();
    model.accumulate_gradients(x, y, 0.1).unwrap();
    check_params(model.params_mut().unwrap(), |p| {
        let m = ClassifierModel::from_parts(p.clone(), meta.clone(), true).unwrap();
        smoothed_cross_entropy(&m.classify(&seq, &all).unwrap(), y, 0.1).unwrap().loss
    })
}

/// Huber regression of `Q(s, a_i)` toward random targets at random readout
/// positions of a `T = 4`, hidden 3 network.
pub fn grad_huber_q(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, d) = (4, 3);
    let cfg = QNetConfig {
        embed_size: 3,
        hidden_size: 3,
        seed,
    };
    let mut net = QNetwork::new(d, &cfg).unwrap();
    randomise(net.params_mut(), 0.6, &mut r);
    let x = random_matrix(t, d, 1.0, &mut r);
    let k = 1 + r.random_range(0..3);
    let positions: Vec<usize> = (0..k).map(|_| r.random_range(0..t)).collect();
    let actions: Vec<Action> = (0..k).map(|_| Action::from_index(r.random_range(0..2)).unwrap()).collect();
    let targets: Vec<f64> = (0..k).map(|_| 1.5 * normal(&mut r)).collect();
    let loss = |net: &QNetwork| {
        let values = net.forward_positions(x.clone(), &positions).unwrap().values;
        values
            .iter()
            .zip(&actions)
            .zip(&targets)
            .map(|((v, &a), &y)| huber_loss(v.q(a), y).0)
            .sum::<f64>()
    };
    let trace = net.forward_positions(x.clone(), &positions).unwrap();
    let d_q: Vec<(f64, f64)> = trace
        .values
        .iter()
        .zip(&actions)
        .zip(&targets)
        .map(|((v, &a), &y)| {
            let g = huber_loss(v.q(a), y).1;
            match a {
                Action::Discard => (g, 0.0),
                Action::Keep => (0.0, g),
            }
        })
        .collect();
    net.params_mut().zero_grad();
    net.backward(&trace, &d_q).unwrap();
    let meta = net.meta().clone();
    check_params(net.params_mut(), |p| loss(&QNetwork::from_parts(p.clone(), meta.clone()).unwrap()))
}

/// Every named gradient suite with its checker.
pub fn gradient_suites() -> Vec<(&'static str, fn(u64) -> f64)> {
    vec![
        ("dense", grad_dense as fn(u64) -> f64),
        ("prelu", grad_prelu),
        ("gru cell", grad_gru_cell),
        ("bidirectional encoder", grad_bigru),
        ("embedding + encoder", grad_encoder),
        ("softmax + smoothed cross-entropy", grad_softmax_ce),
        ("classifier end to end", grad_classifier),
        ("huber through Q", grad_huber_q),
    ]
}

/// Diversity-representativeness reward written directly from its definition:
/// ordered pairs with explicit cosine, then nearest kept Euclidean distance.
pub fn dr_oracle(rows: &[Vec<f64>], kept: &[usize]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n = kept.len();
    let mut div = 0.0;
    if n > 1 {
        for &a in kept {
            for &b in kept {
                if a != b {
                    let dot: f64 = rows[a].iter().zip(&rows[b]).map(|(x, y)| x * y).sum();
                    div += 1.0 - dot / (norm(&rows[a]) * norm(&rows[b]));
                }
            }
        }
        div /= (n * (n - 1)) as f64;
    }
    let mut total = 0.0;
    for x in rows {
        let mut best = f64::INFINITY;
        for &k in kept {
            let d: Vec<f64> = x.iter().zip(&rows[k]).map(|(a, b)| a - b).collect();
            best = best.min(norm(&d));
        }
        total += best;
    }
    div + (-total / rows.len() as f64).exp()
}

pub fn global_oracle(predicted: usize, truth: usize) -> f64 {
    [-5.0, 1.0][usize::from(predicted == truth)]
}

pub fn local_oracle(discard: bool, before: usize, after: usize, eta: f64) -> f64 {
    if !discard {
        return 0.0;
    }
    let x = (before as f64 - after as f64) / eta;
    0.05 + (x.exp() - (-x).exp()) / (x.exp() + (-x).exp())
}

/// Best knapsack value by enumerating every subset.
pub fn knapsack_oracle(scores: &[f64], lengths: &[usize], capacity: usize) -> f64 {
    let n = scores.len();
    let mut best = 0.0f64;
    for mask in 0u32..(1 << n) {
        let (mut len, mut value) = (0, 0.0);
        for i in 0..n {
            if mask & (1 << i) != 0 {
                len += lengths[i];
                value += scores[i] * lengths[i] as f64;
            }
        }
        if len <= capacity {
            best = best.max(value);
        }
    }
    best
}
