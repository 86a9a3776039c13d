//! Optimization-based stylization: gradient descent on the image to match
//! target activations under a total-variation prior.
//!
//! The objective is `||encode(I) - target||_F^2 + lambda * tv(I)`, minimized
//! with Adam. The TV term is the anisotropic sum of squared differences
//! between vertically and horizontally adjacent cells.

use std::time::{Duration, Instant};

use crate::encoder::{encode, encode_backward, EncoderSpec};
use crate::error::{Error, Result};
use crate::parallel::*;
use crate::rng::SeededRng;
use crate::swap::{style_swap, SwapConfig};
use crate::tensor::{Scalar, Tensor};

/// Starting image for the optimization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitMode {
    /// Start from the content image (the default; converges fastest).
    Content,
    /// Start from `U[lo, hi)` noise with the given seed.
    Random { lo: f64, hi: f64, seed: u64 },
}

/// Tunables for [`optimize`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub tv_weight: f64,
    pub max_iters: usize,
    /// Adam step size on images in `[0,1]`.
    pub step_size: f64,
    pub init: InitMode,
    /// Early-stop when the relative loss decrease falls below this
    /// (0 disables the check and runs all iterations).
    pub tolerance: f64,
    pub log_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            tv_weight: 1e-6,
            max_iters: 100,
            step_size: 0.05,
            init: InitMode::Content,
            tolerance: 0.0,
            log_every: 1,
        }
    }
}

/// One logged iteration: `total == activation_term + tv_weight * tv_term`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationLog {
    pub iter: usize,
    pub total: f64,
    pub activation_term: f64,
    pub tv_term: f64,
}

/// Result of an optimization run (or of a consistency experiment, which adds
/// the across-run pixel standard deviation series).
#[derive(Clone, Debug)]
pub struct OptimReport<T: Scalar> {
    pub iterations: Vec<IterationLog>,
    pub wall_time: Duration,
    pub final_image: Tensor<T>,
    /// Mean-over-pixels standard deviation across runs, one entry per
    /// logged iteration. Present only for consistency experiments.
    pub stddev_series: Option<Vec<f64>>,
}

/// Anisotropic total variation: sum of squared differences between
/// vertically adjacent and horizontally adjacent cells, over all channels.
/// Degenerate 1-pixel-wide or 1-pixel-tall images use only the defined sum.
pub fn tv_loss<T: Scalar>(image: &Tensor<T>) -> T {
    let (h, w, d) = image.dims3();
    let x = image.data();
    let mut acc = T::zero();
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * d;
            if i + 1 < h {
                let down = ((i + 1) * w + j) * d;
                for c in 0..d {
                    let dv = x[down + c] - x[base + c];
                    acc = acc + dv * dv;
                }
            }
            if j + 1 < w {
                let right = (i * w + j + 1) * d;
                for c in 0..d {
                    let dv = x[right + c] - x[base + c];
                    acc = acc + dv * dv;
                }
            }
        }
    }
    acc
}

/// Gradient of [`tv_loss`].
pub fn tv_grad<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let (h, w, d) = image.dims3();
    let x = image.data();
    let two = T::from_f64(2.0);
    let mut grad = vec![T::zero(); x.len()];
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * d;
            if i + 1 < h {
                let down = ((i + 1) * w + j) * d;
                for c in 0..d {
                    let dv = two * (x[down + c] - x[base + c]);
                    grad[down + c] = grad[down + c] + dv;
                    grad[base + c] = grad[base + c] - dv;
                }
            }
            if j + 1 < w {
                let right = (i * w + j + 1) * d;
                for c in 0..d {
                    let dv = two * (x[right + c] - x[base + c]);
                    grad[right + c] = grad[right + c] + dv;
                    grad[base + c] = grad[base + c] - dv;
                }
            }
        }
    }
    Tensor::from_vec(image.shape(), grad).expect("same shape")
}

/// Loss value, its two terms, and the image gradient.
#[derive(Clone, Debug)]
pub struct LossParts<T: Scalar> {
    pub total: f64,
    pub activation_term: f64,
    pub tv_term: f64,
    pub grad: Tensor<T>,
}

/// Squared activation error plus weighted TV, with the full image gradient
/// via the encoder chain rule.
pub fn stylize_loss<T: Scalar>(
    image: &Tensor<T>,
    target_acts: &Tensor<T>,
    enc: &EncoderSpec<T>,
    tv_weight: f64,
) -> Result<LossParts<T>> {
    let (acts, trace) = encode(image, enc)?;
    if acts.shape() != target_acts.shape() {
        return Err(Error::ShapeMismatch {
            expected: target_acts.shape().to_vec(),
            got: acts.shape().to_vec(),
        });
    }
    let residual = acts.sub(target_acts)?;
    let activation_term = residual.frobenius_norm_sq().as_f64();
    let mut grad = encode_backward(&trace, enc, &residual.scale(T::from_f64(2.0)))?;
    let tv_term = tv_loss(image).as_f64();
    if tv_weight != 0.0 {
        grad.add_scaled_assign(T::from_f64(tv_weight), &tv_grad(image))?;
    }
    Ok(LossParts {
        total: activation_term + tv_weight * tv_term,
        activation_term,
        tv_term,
        grad,
    })
}

/// Adam with bias correction. One instance per parameter buffer.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    step_size: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<T>,
    v: Vec<T>,
    t: u32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(step_size: f64, len: usize) -> Self {
        Self {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let bc1 = T::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = T::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = T::from_f64(self.step_size);
        let eps = T::from_f64(self.epsilon);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

fn initial_image<T: Scalar>(content: &Tensor<T>, init: &InitMode) -> Result<Tensor<T>> {
    match init {
        InitMode::Content => Ok(content.clone()),
        InitMode::Random { lo, hi, seed } => Tensor::random_uniform(
            content.shape(),
            T::from_f64(*lo),
            T::from_f64(*hi),
            &mut SeededRng::new(*seed),
        ),
    }
}

struct RunOutput<T: Scalar> {
    report: OptimReport<T>,
    snapshots: Option<Vec<Tensor<T>>>,
}

/// Core descent loop against fixed target activations. Logs the loss at the
/// starting iterate and after every step (`max_iters + 1` entries).
fn run_descent<T: Scalar>(
    init_img: Tensor<T>,
    target_acts: &Tensor<T>,
    enc: &EncoderSpec<T>,
    cfg: &OptimConfig,
    record_snapshots: bool,
) -> Result<RunOutput<T>> {
    if cfg.max_iters == 0 || cfg.step_size <= 0.0 || cfg.tv_weight < 0.0 {
        return Err(Error::InvalidConfig {
            reason: "max_iters must be >= 1, step size > 0, tv weight >= 0".into(),
        });
    }
    let start = Instant::now();
    let mut image = init_img;
    let mut adam = Adam::<T>::new(cfg.step_size, image.len());
    let mut iterations = Vec::with_capacity(cfg.max_iters + 1);
    let mut snapshots = record_snapshots.then(Vec::new);
    let mut prev_total = f64::INFINITY;

    for iter in 0..=cfg.max_iters {
        let parts = stylize_loss(&image, target_acts, enc, cfg.tv_weight)?;
        if !parts.total.is_finite() {
            return Err(Error::NonFinite {
                what: "stylization loss".into(),
                step: iter,
            });
        }
        iterations.push(IterationLog {
            iter,
            total: parts.total,
            activation_term: parts.activation_term,
            tv_term: parts.tv_term,
        });
        if let Some(snaps) = snapshots.as_mut() {
            snaps.push(image.clone());
        }
        if iter == cfg.max_iters {
            break;
        }
        if cfg.tolerance > 0.0 && prev_total.is_finite() {
            let decrease = (prev_total - parts.total) / prev_total.abs().max(f64::MIN_POSITIVE);
            if decrease.abs() < cfg.tolerance {
                break;
            }
        }
        prev_total = parts.total;
        adam.step(image.data_mut(), parts.grad.data());
    }

    Ok(RunOutput {
        report: OptimReport {
            iterations,
            wall_time: start.elapsed(),
            final_image: image,
            stddev_series: None,
        },
        snapshots,
    })
}

/// Full optimization pipeline: encode both images, build the style-swapped
/// target, then descend from the configured init.
pub fn optimize<T: Scalar>(
    content: &Tensor<T>,
    style: &Tensor<T>,
    enc: &EncoderSpec<T>,
    swap_cfg: &SwapConfig,
    cfg: &OptimConfig,
) -> Result<OptimReport<T>> {
    let (content_acts, _) = encode(content, enc)?;
    let (style_acts, _) = encode(style, enc)?;
    let target = style_swap(&content_acts, &style_acts, swap_cfg)?;
    optimize_target(content, &target, enc, cfg)
}

/// Descent against an already-built activation target.
pub fn optimize_target<T: Scalar>(
    content: &Tensor<T>,
    target_acts: &Tensor<T>,
    enc: &EncoderSpec<T>,
    cfg: &OptimConfig,
) -> Result<OptimReport<T>> {
    let init = initial_image(content, &cfg.init)?;
    run_descent(init, target_acts, enc, cfg, false).map(|r| r.report)
}

/// Runs one optimization per seed (concurrently) from random inits and
/// reports the across-run pixel standard deviation at every iteration.
/// The logged losses and final image come from the first run.
pub fn consistency_experiment<T: Scalar>(
    content: &Tensor<T>,
    style: &Tensor<T>,
    enc: &EncoderSpec<T>,
    swap_cfg: &SwapConfig,
    cfg: &OptimConfig,
    seeds: &[u64],
) -> Result<OptimReport<T>> {
    if seeds.len() < 2 {
        return Err(Error::InvalidConfig {
            reason: "consistency experiment needs at least 2 seeds".into(),
        });
    }
    let start = Instant::now();
    let (content_acts, _) = encode(content, enc)?;
    let (style_acts, _) = encode(style, enc)?;
    let target = style_swap(&content_acts, &style_acts, swap_cfg)?;

    let (lo, hi) = match cfg.init {
        InitMode::Random { lo, hi, .. } => (lo, hi),
        InitMode::Content => (0.0, 1.0),
    };
    let runs: Vec<Result<RunOutput<T>>> = seeds
        .par_iter()
        .map(|&seed| {
            let run_cfg = OptimConfig {
                init: InitMode::Random { lo, hi, seed },
                tolerance: 0.0,
                ..*cfg
            };
            let init = initial_image(content, &run_cfg.init)?;
            run_descent(init, &target, enc, &run_cfg, true)
        })
        .collect();
    let mut outputs = Vec::with_capacity(seeds.len());
    for run in runs {
        outputs.push(run?);
    }

    let iters = outputs
        .iter()
        .map(|o| o.snapshots.as_ref().expect("recorded").len())
        .min()
        .expect("at least two runs");
    let pixels = content.len();
    let k = outputs.len() as f64;
    let stddev_series: Vec<f64> = (0..iters)
        .map(|t| {
            let mut acc = 0.0f64;
            for p in 0..pixels {
                let mut mean = 0.0f64;
                for o in &outputs {
                    mean += o.snapshots.as_ref().expect("recorded")[t].data()[p].as_f64();
                }
                mean /= k;
                let mut var = 0.0f64;
                for o in &outputs {
                    let dv = o.snapshots.as_ref().expect("recorded")[t].data()[p].as_f64() - mean;
                    var += dv * dv;
                }
                acc += (var / k).sqrt();
            }
            acc / pixels as f64
        })
        .collect();

    let first = outputs.swap_remove(0);
    Ok(OptimReport {
        iterations: first.report.iterations,
        wall_time: start.elapsed(),
        final_image: first.report.final_image,
        stddev_series: Some(stddev_series),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{build_identity, build_tiny};

    #[test]
    fn tv_hand_value() {
        let img = Tensor::<f64>::from_vec(&[2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(tv_loss(&img), 10.0);
    }

    #[test]
    fn tv_constant_image_is_zero() {
        let img = Tensor::<f32>::full(&[5, 7, 3], 0.4).unwrap();
        assert_eq!(tv_loss(&img), 0.0);
    }

    #[test]
    fn tv_degenerate_row_uses_only_defined_sum() {
        let img = Tensor::<f64>::from_vec(&[1, 3, 1], vec![0.0, 2.0, 5.0]).unwrap();
        assert_eq!(tv_loss(&img), 4.0 + 9.0);
        let col = Tensor::<f64>::from_vec(&[3, 1, 1], vec![0.0, 2.0, 5.0]).unwrap();
        assert_eq!(tv_loss(&col), 13.0);
    }

    #[test]
    fn tv_grad_matches_finite_differences() {
        let mut rng = SeededRng::new(31);
        let img = Tensor::<f64>::random_uniform(&[4, 5, 2], 0.0, 1.0, &mut rng).unwrap();
        let grad = tv_grad(&img);
        let eps = 1e-4;
        for p in (0..img.len()).step_by(7) {
            let mut plus = img.clone();
            plus.data_mut()[p] += eps;
            let mut minus = img.clone();
            minus.data_mut()[p] -= eps;
            let fd = (tv_loss(&plus) - tv_loss(&minus)) / (2.0 * eps);
            let g = grad.data()[p];
            let denom = fd.abs().max(g.abs()).max(1e-8);
            assert!(
                ((fd - g) / denom).abs() < 1e-4,
                "tv grad mismatch at {p}: fd {fd} vs {g}"
            );
        }
    }

    #[test]
    fn stylize_loss_identity_encoder_at_optimum() {
        let enc = build_identity::<f64>();
        let mut rng = SeededRng::new(32);
        let target = Tensor::<f64>::random_uniform(&[6, 6, 3], 0.0, 1.0, &mut rng).unwrap();
        let parts = stylize_loss(&target, &target, &enc, 0.0).unwrap();
        assert_eq!(parts.total, 0.0);
        assert!(parts.grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stylize_loss_identity_encoder_quadratic_grad() {
        let enc = build_identity::<f64>();
        let mut rng = SeededRng::new(33);
        let img = Tensor::<f64>::random_uniform(&[5, 4, 3], 0.0, 1.0, &mut rng).unwrap();
        let target = Tensor::<f64>::random_uniform(&[5, 4, 3], 0.0, 1.0, &mut rng).unwrap();
        let parts = stylize_loss(&img, &target, &enc, 0.0).unwrap();
        let expected = img.sub(&target).unwrap().scale(2.0);
        for (a, b) in parts.grad.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn report_total_is_sum_of_terms() {
        let enc = build_tiny::<f32>(4, 1);
        let mut rng = SeededRng::new(34);
        let content = Tensor::<f32>::random_uniform(&[8, 8, 3], 0.0, 1.0, &mut rng).unwrap();
        let style = Tensor::<f32>::random_uniform(&[8, 8, 3], 0.0, 1.0, &mut rng).unwrap();
        let cfg = OptimConfig {
            max_iters: 5,
            tv_weight: 1e-3,
            ..OptimConfig::default()
        };
        let report = optimize(&content, &style, &enc, &SwapConfig::default(), &cfg).unwrap();
        assert_eq!(report.iterations.len(), 6);
        for log in &report.iterations {
            let recomposed = log.activation_term + cfg.tv_weight * log.tv_term;
            assert!((log.total - recomposed).abs() <= 1e-9 * log.total.abs().max(1.0));
        }
    }

    #[test]
    fn identity_encoder_least_squares_converges() {
        let enc = build_identity::<f32>();
        let mut rng = SeededRng::new(35);
        let content = Tensor::<f32>::random_uniform(&[8, 8, 3], 0.0, 1.0, &mut rng).unwrap();
        let style = Tensor::<f32>::random_uniform(&[8, 8, 3], 0.0, 1.0, &mut rng).unwrap();
        let cfg = OptimConfig {
            tv_weight: 0.0,
            max_iters: 300,
            ..OptimConfig::default()
        };
        let report = optimize(&content, &style, &enc, &SwapConfig::default(), &cfg).unwrap();
        let initial = report.iterations[0].total;
        let final_ = report.iterations.last().unwrap().total;
        assert!(final_ < 1e-6 * initial, "final {final_} vs initial {initial}");
    }

    #[test]
    fn loss_never_increases_overall() {
        let enc = build_tiny::<f32>(4, 2);
        let mut rng = SeededRng::new(36);
        let content = Tensor::<f32>::random_uniform(&[12, 12, 3], 0.0, 1.0, &mut rng).unwrap();
        let style = Tensor::<f32>::random_uniform(&[12, 12, 3], 0.0, 1.0, &mut rng).unwrap();
        let cfg = OptimConfig {
            max_iters: 60,
            ..OptimConfig::default()
        };
        let report = optimize(&content, &style, &enc, &SwapConfig::default(), &cfg).unwrap();
        let first = report.iterations.first().unwrap().total;
        let last = report.iterations.last().unwrap().total;
        assert!(last <= first);
    }

    #[test]
    fn divergent_loss_aborts_with_numerical_error() {
        let enc = build_identity::<f64>();
        let content = Tensor::<f64>::full(&[4, 4, 3], 0.5).unwrap();
        let style = Tensor::<f64>::full(&[4, 4, 3], 0.25).unwrap();
        let cfg = OptimConfig {
            tv_weight: f64::MAX, // overflows the weighted TV term to inf
            max_iters: 10,
            init: InitMode::Random {
                lo: 0.0,
                hi: 1.0,
                seed: 1,
            },
            ..OptimConfig::default()
        };
        let err = optimize(&content, &style, &enc, &SwapConfig::default(), &cfg).unwrap_err();
        assert!(err.is_numerical(), "got {err:?}");
    }

    #[test]
    fn consistency_identical_seeds_have_zero_stddev() {
        let enc = build_identity::<f32>();
        let mut rng = SeededRng::new(37);
        let content = Tensor::<f32>::random_uniform(&[6, 6, 3], 0.0, 1.0, &mut rng).unwrap();
        let style = Tensor::<f32>::random_uniform(&[6, 6, 3], 0.0, 1.0, &mut rng).unwrap();
        let cfg = OptimConfig {
            max_iters: 10,
            ..OptimConfig::default()
        };
        let report =
            consistency_experiment(&content, &style, &enc, &SwapConfig::default(), &cfg, &[9, 9])
                .unwrap();
        let series = report.stddev_series.unwrap();
        assert!(series.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn consistency_unique_optimum_collapses_stddev() {
        let enc = build_identity::<f32>();
        let mut rng = SeededRng::new(38);
        let content = Tensor::<f32>::random_uniform(&[6, 6, 3], 0.0, 1.0, &mut rng).unwrap();
        let style = Tensor::<f32>::random_uniform(&[6, 6, 3], 0.0, 1.0, &mut rng).unwrap();
        let cfg = OptimConfig {
            tv_weight: 0.0,
            max_iters: 250,
            ..OptimConfig::default()
        };
        let seeds = [1, 2, 3, 4, 5];
        let report =
            consistency_experiment(&content, &style, &enc, &SwapConfig::default(), &cfg, &seeds)
                .unwrap();
        let series = report.stddev_series.unwrap();
        assert!(series.last().unwrap() < &(series[0] * 1e-3));
    }
}
