//! Forward kernels against independent brute-force oracles.

use archnet_tensor::ops::{self, BCE_EPS};
use archnet_tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Direct nested-loop cross-correlation with explicit zero padding.
fn conv2d_oracle(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let hout = (h + 2 * pad - kh) / stride + 1;
    let wout = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(vec![n, cout, hout, wout]);
    for s in 0..n {
        for co in 0..cout {
            for oy in 0..hout {
                for ox in 0..wout {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((s * cin + ci) * h + iy as usize) * w + ix as usize;
                                let ki = ((co * cin + ci) * kh + ky) * kw + kx;
                                acc += x.data()[xi] * k.data()[ki];
                            }
                        }
                    }
                    out.data_mut()[((s * cout + co) * hout + oy) * wout + ox] = acc;
                }
            }
        }
    }
    out
}

/// d/dx <conv2d(x, k), y>, written as an explicit scatter.
fn conv2d_input_grad_oracle(x_shape: &[usize], k: &Tensor, y: &Tensor, stride: usize) -> Tensor {
    let (n, cin, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (cout, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (hout, wout) = (y.shape()[2], y.shape()[3]);
    let mut gx = Tensor::zeros(x_shape.to_vec());
    for s in 0..n {
        for co in 0..cout {
            for oy in 0..hout {
                for ox in 0..wout {
                    let yv = y.data()[((s * cout + co) * hout + oy) * wout + ox];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let xi = ((s * cin + ci) * h + oy * stride + ky) * w + ox * stride + kx;
                                gx.data_mut()[xi] += yv * k.data()[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

#[test]
fn conv2d_identity_kernel() {
    let x = Tensor::from_fn(vec![1, 1, 3, 3], |i| i as f64 + 1.0);
    let k = Tensor::full(vec![1, 1, 1, 1], 1.0);
    let y = ops::conv2d(&x, &k, &Tensor::zeros(vec![1]), 1, 0).unwrap();
    assert_eq!(y, x);
}

#[test]
fn conv2d_sum_of_ones() {
    let x = Tensor::full(vec![1, 1, 3, 3], 1.0);
    let k = Tensor::full(vec![1, 1, 2, 2], 1.0);
    let y = ops::conv2d(&x, &k, &Tensor::zeros(vec![1]), 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert!(y.data().iter().all(|&v| v == 4.0));
}

#[test]
fn conv2d_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(vec![2, 3, 8, 8], &mut rng);
    let k = random(vec![5, 3, 3, 3], &mut rng);
    let b = random(vec![5], &mut rng);
    let got = ops::conv2d(&x, &k, &b, 1, 1).unwrap();
    let want = conv2d_oracle(&x, &k, &b, 1, 1);
    assert_eq!(got.shape(), &[2, 5, 8, 8]);
    assert!(got.max_abs_diff(&want) < 1e-12);
}

#[test]
fn conv2d_strided_padded_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (stride, pad, kh) in [(2, 0, 2), (2, 1, 3), (3, 2, 3), (1, 0, 4)] {
        let x = random(vec![1, 2, 7, 9], &mut rng);
        let k = random(vec![3, 2, kh, kh], &mut rng);
        let b = random(vec![3], &mut rng);
        let got = ops::conv2d(&x, &k, &b, stride, pad).unwrap();
        assert!(got.max_abs_diff(&conv2d_oracle(&x, &k, &b, stride, pad)) < 1e-12);
    }
}

#[test]
fn conv_transpose_single_pixel_expansion() {
    let x = Tensor::full(vec![1, 1, 1, 1], 0.37);
    let k = Tensor::full(vec![1, 1, 2, 2], 1.0);
    let y = ops::conv_transpose2d(&x, &k, &Tensor::zeros(vec![1]), 2).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert!(y.data().iter().all(|&v| v == 0.37));
}

#[test]
fn conv_transpose_doubles_mnist_plane() {
    let x = Tensor::zeros(vec![1, 1, 28, 28]);
    let k = Tensor::zeros(vec![1, 10, 2, 2]);
    let y = ops::conv_transpose2d(&x, &k, &Tensor::zeros(vec![10]), 2).unwrap();
    assert_eq!(y.shape(), &[1, 10, 56, 56]);
}

#[test]
fn conv_transpose_is_adjoint_of_conv2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for (kh, stride) in [(2, 2), (3, 1), (1, 1)] {
        let x_shape = vec![1, 2, 4, 4];
        let k = random(vec![3, 2, kh, kh], &mut rng);
        let hout = (4 - kh) / stride + 1;
        let y = random(vec![1, 3, hout, hout], &mut rng);
        let zero = Tensor::zeros(vec![2]);
        let forward = ops::conv_transpose2d(&y, &k, &zero, stride).unwrap();
        assert_eq!(forward.shape(), &x_shape[..]);
        let oracle = conv2d_input_grad_oracle(&x_shape, &k, &y, stride);
        assert!(forward.max_abs_diff(&oracle) < 1e-10);

        // Same gradient through the autodiff graph.
        let mut g = Graph::new();
        let xv = g.parameter(random(x_shape.clone(), &mut rng));
        let kv = g.constant(k.clone());
        let bv = g.constant(Tensor::zeros(vec![3]));
        let yv = g.constant(y.clone());
        let c = g.conv2d(xv, kv, bv, stride, 0).unwrap();
        let prod = g.mul(c, yv).unwrap();
        let s = g.sum(prod).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(xv).unwrap().max_abs_diff(&forward) < 1e-10);
    }
}

#[test]
fn linear_examples() {
    let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
    let w = Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, 1.0]).unwrap();
    let b = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
    assert_eq!(ops::linear(&x, &w, &b).unwrap().data(), &[4.0, 2.0]);

    let eye = Tensor::from_fn(vec![3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
    let x = Tensor::from_fn(vec![2, 3], |i| i as f64 - 2.5);
    assert_eq!(ops::linear(&x, &eye, &Tensor::zeros(vec![3])).unwrap(), x);
}

#[test]
fn linear_matches_naive_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random(vec![4, 10], &mut rng);
    let w = random(vec![6, 10], &mut rng);
    let b = random(vec![6], &mut rng);
    let got = ops::linear(&x, &w, &b).unwrap();
    for n in 0..4 {
        for j in 0..6 {
            let mut acc = b.data()[j];
            for i in 0..10 {
                acc += x.data()[n * 10 + i] * w.data()[j * 10 + i];
            }
            assert!((got.data()[n * 6 + j] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_shape_mismatch() {
    let err = ops::linear(&Tensor::zeros(vec![2, 3]), &Tensor::zeros(vec![4, 5]), &Tensor::zeros(vec![4])).unwrap_err();
    assert!(err.to_string().contains("in_features"));
}

#[test]
fn activations_and_pooling_examples() {
    let r = ops::relu(&Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
    assert_eq!(ops::sigmoid(&Tensor::scalar(0.0)).data(), &[0.5]);
    let p = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let (m, _) = ops::maxpool2d(&p, 2, 2).unwrap();
    assert_eq!(m.shape(), &[1, 1, 1, 1]);
    assert_eq!(m.data(), &[4.0]);
}

#[test]
fn bce_examples_and_formula() {
    let ones = Tensor::full(vec![4], 1.0);
    let l = ops::bce(&ones, &ones).unwrap();
    assert!(l >= 0.0 && l < 2.0 * BCE_EPS);
    let half = Tensor::full(vec![5], 0.5);
    assert!((ops::bce(&half, &half).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let p = Tensor::from_fn(vec![3, 7], |_| rng.random_range(0.01..0.99));
    let t = Tensor::from_fn(vec![3, 7], |_| rng.random_range(0.0..1.0));
    let direct: f64 = -p
        .data()
        .iter()
        .zip(t.data())
        .map(|(&f, &x)| x * f.ln() + (1.0 - x) * (1.0 - f).ln())
        .sum::<f64>()
        / 21.0;
    assert!((ops::bce(&p, &t).unwrap() - direct).abs() < 1e-12);
}

#[test]
fn mse_examples_and_formula() {
    let a = Tensor::from_fn(vec![2, 2], |i| i as f64);
    assert_eq!(ops::mse(&a, &a).unwrap(), 0.0);
    assert_eq!(ops::mse(&Tensor::zeros(vec![2]), &Tensor::full(vec![2], 1.0)).unwrap(), 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let p = random(vec![9], &mut rng);
    let t = random(vec![9], &mut rng);
    let direct = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 9.0;
    assert!((ops::mse(&p, &t).unwrap() - direct).abs() < 1e-12);
    assert!(ops::mse(&p, &Tensor::zeros(vec![3, 3])).is_err());
}

#[test]
fn softmax_cross_entropy_rejects_bad_labels() {
    let logits = Tensor::zeros(vec![2, 3]);
    assert!(ops::softmax_cross_entropy(&logits, &[0, 3]).is_err());
    assert!(ops::softmax_cross_entropy(&logits, &[0]).is_err());
    let (l, _) = ops::softmax_cross_entropy(&logits, &[0, 2]).unwrap();
    assert!((l - 3f64.ln()).abs() < 1e-12);
}
