//! Helpers shared by the integration-test targets.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use solarbatt::agent::{actor_objective_grad, critic_input, ACTION_DIM, OBS_DIM};
use solarbatt::neural::{finite_diff_grad, finite_diff_params, init_mlp, max_relative_error, Activation, Mlp};

/// Floor used in relative gradient errors.
pub const REL_FLOOR: f64 = 1e-3;

/// Reduced stand-ins for the four hidden widths of the tuning grid.
pub const REDUCED_WIDTHS: [usize; 4] = [8, 10, 12, 16];

/// Random net with non-zero biases so every parameter matters.
pub fn random_net(sizes: &[usize], out: Activation, seed: u64) -> Mlp {
    let mut net = init_mlp(sizes, out, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB1A5);
    for p in net.params_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    net
}

/// Relative error of `backward` against central differences for a random
/// linear functional of the output of net `case`.
pub fn single_net_error(case: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(case);
    let width = REDUCED_WIDTHS[case as usize % 4];
    let (sizes, act) = if case.is_multiple_of(2) {
        (vec![OBS_DIM, width, width, ACTION_DIM], Activation::Sigmoid)
    } else {
        (vec![OBS_DIM + ACTION_DIM, width, width, 1], Activation::Identity)
    };
    let net = random_net(&sizes, act, 100 + case);
    let input: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
    let weights: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, cache) = net.forward(&input).unwrap();
    let out_grad = Array2::from_shape_vec((1, weights.len()), weights.clone()).unwrap();
    let (analytic, _) = net.backward(&cache, out_grad.view()).unwrap();
    let numeric = finite_diff_grad(&net, &input, |y| y.iter().zip(&weights).map(|(a, b)| a * b).sum()).unwrap();
    max_relative_error(&analytic, &numeric, REL_FLOOR)
}

/// Relative error of the deterministic policy gradient, J(θ) = mean_i
/// Q(s_i, μ_θ(s_i)), against central differences through both nets.
pub fn composed_objective_error(case: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(500 + case);
    let width = REDUCED_WIDTHS[case as usize % 4];
    let actor = random_net(&[OBS_DIM, width, width, ACTION_DIM], Activation::Sigmoid, 600 + case);
    let critic = random_net(&[OBS_DIM + ACTION_DIM, width, width, 1], Activation::Identity, 700 + case);
    let states = Array2::from_shape_simple_fn((6, OBS_DIM), || rng.random_range(0.0..1.0));
    let (_, analytic) = actor_objective_grad(&actor, &critic, states.view()).unwrap();
    let numeric = finite_diff_params(&actor, |probe| {
        let a = probe.predict(states.view())?;
        let q = critic.predict(critic_input(states.view(), a.view())?.view())?;
        Ok(q.sum() / states.nrows() as f64)
    })
    .unwrap();
    max_relative_error(&analytic, &numeric, REL_FLOOR)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
