//! Shared helpers for integration and acceptance tests: synthetic image
//! corpora, finite-difference checking, and kink detection for subdifferential
//! layers.

#![allow(dead_code)]

use styleswap::nn::{Layer, LayerSpec};
use styleswap::{Scalar, SeededRng, Tensor};

/// Smooth low-frequency images standing in for natural photographs.
pub fn synthetic_naturals(n: usize, h: usize, w: usize, base_seed: u64) -> Vec<Tensor<f32>> {
    use std::f64::consts::TAU;
    (0..n)
        .map(|i| {
            let mut rng = SeededRng::new(base_seed).stream(i as u64);
            let fx = rng.next_in_range(0.5f64, 2.5);
            let fy = rng.next_in_range(0.5f64, 2.5);
            let phase: Vec<f64> = (0..3).map(|_| rng.next_in_range(0.0f64, TAU)).collect();
            let mut data = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                for x in 0..w {
                    for &p in phase.iter() {
                        let u = x as f64 / w as f64;
                        let v = y as f64 / h as f64;
                        let val = 0.5
                            + 0.2 * (TAU * (fx * u + p)).sin()
                            + 0.2 * (TAU * (fy * v + 0.5 * p)).cos()
                            + 0.1 * (u - v);
                        data.push(val.clamp(0.0, 1.0) as f32);
                    }
                }
            }
            Tensor::from_vec(&[h, w, 3], data).unwrap()
        })
        .collect()
}

/// High-contrast blocky images standing in for paintings: a flat background
/// with random solid rectangles.
pub fn synthetic_paintings(n: usize, h: usize, w: usize, base_seed: u64) -> Vec<Tensor<f32>> {
    (0..n)
        .map(|i| {
            let mut rng = SeededRng::new(base_seed).stream(1000 + i as u64);
            let bg: Vec<f32> = (0..3).map(|_| rng.next_in_range(0.0f32, 1.0)).collect();
            let mut data = vec![0.0f32; h * w * 3];
            for cell in data.chunks_exact_mut(3) {
                cell.copy_from_slice(&bg);
            }
            for _ in 0..6 {
                let y0 = rng.next_index(h);
                let x0 = rng.next_index(w);
                let bh = 1 + rng.next_index(h / 2 + 1);
                let bw = 1 + rng.next_index(w / 2 + 1);
                let color: Vec<f32> = (0..3).map(|_| rng.next_in_range(0.0f32, 1.0)).collect();
                for y in y0..(y0 + bh).min(h) {
                    for x in x0..(x0 + bw).min(w) {
                        data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&color);
                    }
                }
            }
            Tensor::from_vec(&[h, w, 3], data).unwrap()
        })
        .collect()
}

pub fn random_tensor<T: Scalar>(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<T> {
    let mut rng = SeededRng::new(seed);
    Tensor::random_uniform(shape, T::from_f64(lo), T::from_f64(hi), &mut rng).unwrap()
}

/// Relative error with a floor so exact zeros compare cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_abs_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
        .fold(0.0, f64::max)
}

/// Signature of every subdifferential decision point along a layer stack:
/// ReLU sign patterns and max-pool argmax choices. Two inputs on the same
/// side of every kink produce equal signatures.
pub fn kink_signature<T: Scalar>(layers: &[Layer<T>], input: &Tensor<T>, sig: &mut Vec<u32>) {
    let mut x = input.clone();
    for layer in layers {
        match layer.spec {
            LayerSpec::ReLU => {
                for &v in x.data() {
                    sig.push((v > T::zero()) as u32);
                }
            }
            LayerSpec::MaxPool { factor } => {
                let (h, w, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                for i in 0..h / factor {
                    for j in 0..w / factor {
                        for c in 0..d {
                            let mut best = x.at3(i * factor, j * factor, c);
                            let mut best_at = 0u32;
                            for di in 0..factor {
                                for dj in 0..factor {
                                    let v = x.at3(i * factor + di, j * factor + dj, c);
                                    if v > best {
                                        best = v;
                                        best_at = (di * factor + dj) as u32;
                                    }
                                }
                            }
                            sig.push(best_at);
                        }
                    }
                }
            }
            _ => {}
        }
        x = layer.forward(&x).unwrap();
    }
}
