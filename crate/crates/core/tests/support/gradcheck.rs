//! Central finite differences, independent of every backward pass.

use fedsynth::nn::{Layer, Tensor};
use fedsynth::rng::StreamRng;
use rand::Rng;

pub const STEP: f64 = 1e-5;

/// ‖a − b‖ / max(‖a‖, ‖b‖), zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Numerical gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn weighted(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Check one layer at one input: returns the worst relative error over the
/// input gradient and every parameter gradient.
pub fn check_layer(layer: &Layer<f64>, x: &Tensor<f64>, rng: &mut StreamRng) -> f64 {
    let out_shape = layer.output_shape(x.shape()).unwrap();
    let r = Tensor::<f64>::randn(&out_shape, 1.0, rng);
    let (gx, gp) = layer.backward(x, &r).unwrap();
    let mut worst: f64 = 0.0;

    if !matches!(layer, Layer::Embedding(_)) {
        let num = numeric_grad(x.data(), STEP, |v| {
            let xi = Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap();
            weighted(&layer.forward(&xi).unwrap(), &r)
        });
        worst = worst.max(rel_err(gx.data(), &num));
    }

    let n_params = layer.params().len();
    for p in 0..n_params {
        let base = layer.params()[p].1.clone();
        let num = numeric_grad(base.data(), STEP, |v| {
            let mut l = layer.clone();
            l.params_mut()[p].data_mut().copy_from_slice(v);
            weighted(&l.forward(x).unwrap(), &r)
        });
        worst = worst.max(rel_err(gp[p].data(), &num));
    }
    worst
}

pub const KINDS: [&str; 11] = [
    "dense",
    "conv2d",
    "conv_transpose2d",
    "relu",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "batchless_norm",
    "embedding",
    "avg_pool2",
    "flatten",
];

/// Values bounded away from the kinks of relu-like layers.
fn away_from_zero(shape: &[usize], rng: &mut StreamRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(0.05..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// A random layer of the given kind with a compatible random input.
pub fn random_case(kind: &str, rng: &mut StreamRng) -> (Layer<f64>, Tensor<f64>) {
    let n = rng.random_range(1..=3);
    match kind {
        "dense" => {
            let (i, o) = (rng.random_range(1..=7), rng.random_range(1..=6));
            (Layer::dense(i, o, rng), Tensor::randn(&[n, i], 1.0, rng))
        }
        "conv2d" => {
            let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let k = rng.random_range(1..=4);
            let s = rng.random_range(1..=2);
            let p = rng.random_range(0..=1);
            let h = rng.random_range(k.max(3)..=7);
            let w = rng.random_range(k.max(3)..=7);
            let mut layer = Layer::conv2d(cin, cout, k, s, p, rng);
            if let Layer::Conv2d(c) = &mut layer {
                c.bias = Tensor::randn(&[cout], 0.5, rng);
            }
            (layer, Tensor::randn(&[n, cin, h, w], 1.0, rng))
        }
        "conv_transpose2d" => {
            let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let k = rng.random_range(2..=4);
            let s = rng.random_range(1..=2);
            let p = rng.random_range(0..=1);
            let h = rng.random_range(1..=4);
            let w = rng.random_range(1..=4);
            let layer = Layer::conv_transpose2d(cin, cout, k, s, p, 0.5, rng);
            if layer.output_shape(&[n, cin, h, w]).is_err() {
                return random_case(kind, rng);
            }
            (layer, Tensor::randn(&[n, cin, h, w], 1.0, rng))
        }
        "relu" => (
            Layer::Relu,
            away_from_zero(&[n, rng.random_range(1..=9)], rng),
        ),
        "leaky_relu" => (Layer::LeakyRelu(0.2), away_from_zero(&[n, 2, 3], rng)),
        "sigmoid" => (
            Layer::Sigmoid,
            Tensor::randn(&[n, rng.random_range(1..=9)], 2.0, rng),
        ),
        "tanh" => (
            Layer::Tanh,
            Tensor::randn(&[n, rng.random_range(1..=9)], 1.5, rng),
        ),
        "batchless_norm" => {
            let c = rng.random_range(1..=3);
            let mut layer = Layer::norm(c);
            if let Layer::Norm(nm) = &mut layer {
                nm.gamma = Tensor::uniform(&[c], 0.5, 1.5, rng);
                nm.beta = Tensor::randn(&[c], 0.5, rng);
            }
            let (h, w) = (rng.random_range(2..=4), rng.random_range(2..=4));
            (layer, Tensor::randn(&[n, c, h, w], 1.0, rng))
        }
        "embedding" => {
            let rows = rng.random_range(2..=4);
            let dim = rng.random_range(1..=5);
            let idx = Tensor::from_fn(&[n + 2], |_| rng.random_range(0..rows) as f64);
            (Layer::embedding(rows, dim, 1.0, rng), idx)
        }
        "avg_pool2" => {
            let (h, w) = (2 * rng.random_range(1..=3), 2 * rng.random_range(1..=3));
            (Layer::AvgPool2, Tensor::randn(&[n, 2, h, w], 1.0, rng))
        }
        "flatten" => (Layer::Flatten, Tensor::randn(&[n, 2, 3, 2], 1.0, rng)),
        other => panic!("unknown layer kind {other}"),
    }
}
