//! Patch-based style swapping in activation space.
//!
//! Every overlapping patch of the content activations is replaced by its
//! best-matching style patch under normalized cross-correlation, and the
//! result is reassembled with overlap averaging. Two routes compute the same
//! thing: a convolutional fast path (correlation as a single 2D convolution
//! with normalized style patches as filters, channel-wise argmax, then a
//! transposed-convolution-style scatter) and a literal brute-force reference
//! used as an oracle and for timing comparisons.

use crate::error::{Error, Result};
use crate::nn::{conv2d_forward, ConvSpec, LayerParams};
use crate::tensor::{Scalar, Tensor};

/// Tunables for the swap. `epsilon` guards zero-norm patches;
/// `average_ties` switches from lowest-index tie-breaking to averaging all
/// tied patches (interpreted as extra overlapping placements).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwapConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub epsilon: f64,
    pub average_ties: bool,
}

impl Default for SwapConfig {
    fn default() -> Self {
        Self {
            patch_size: 3,
            stride: 1,
            epsilon: 1e-12,
            average_ties: false,
        }
    }
}

impl SwapConfig {
    pub fn with_patch_size(patch_size: usize) -> Self {
        Self {
            patch_size,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::InvalidConfig {
                reason: "patch size must be at least 1".into(),
            });
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig {
                reason: "stride must be at least 1".into(),
            });
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig {
                reason: "epsilon must be positive".into(),
            });
        }
        Ok(())
    }

    fn grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.patch_size > h || self.patch_size > w {
            return Err(Error::PatchTooLarge {
                patch: self.patch_size,
                h,
                w,
            });
        }
        Ok((
            (h - self.patch_size) / self.stride + 1,
            (w - self.patch_size) / self.stride + 1,
        ))
    }
}

/// Overlapping patches of an activation map. `patches` is
/// `count x s x s x d`; `origins` holds each patch's top-left cell.
#[derive(Clone, Debug)]
pub struct PatchSet<T: Scalar> {
    pub patches: Tensor<T>,
    pub origins: Vec<(usize, usize)>,
    /// Set by [`normalize_patches`] for patches with norm below epsilon.
    pub zero_norm: Vec<bool>,
}

impl<T: Scalar> PatchSet<T> {
    pub fn count(&self) -> usize {
        self.origins.len()
    }

    pub fn patch_size(&self) -> usize {
        self.patches.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.patches.shape()[3]
    }

    fn patch(&self, j: usize) -> &[T] {
        let len = self.patches.len() / self.count();
        &self.patches.data()[j * len..(j + 1) * len]
    }
}

/// Cross-correlations between every content patch location and every
/// (normalized) style patch: grid `h x w` with one channel per style patch.
#[derive(Clone, Debug)]
pub struct CorrelationMap<T: Scalar> {
    pub values: Tensor<T>,
}

impl<T: Scalar> CorrelationMap<T> {
    pub fn grid(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }

    pub fn style_count(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Best-match selections per content patch location. The default mode keeps
/// a single winner (ties broken to the lowest style-patch index);
/// tie-averaging keeps every tied index.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchMap {
    grid: (usize, usize),
    n_style: usize,
    selected: Vec<Vec<u32>>,
}

impl MatchMap {
    /// Builds a map with one winner per location (row-major order).
    pub fn single_winner(grid: (usize, usize), n_style: usize, winners: Vec<u32>) -> Result<Self> {
        if winners.len() != grid.0 * grid.1 || winners.iter().any(|&j| j as usize >= n_style) {
            return Err(Error::InvalidConfig {
                reason: "winner list does not match grid or style count".into(),
            });
        }
        Ok(Self {
            grid,
            n_style,
            selected: winners.into_iter().map(|j| vec![j]).collect(),
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn style_count(&self) -> usize {
        self.n_style
    }

    pub fn selected(&self, location: usize) -> &[u32] {
        &self.selected[location]
    }

    /// Winner of each location (the lowest tied index in averaging mode).
    pub fn winners(&self) -> impl Iterator<Item = u32> + '_ {
        self.selected.iter().map(|s| s[0])
    }

    /// Dense one-hot form: 1.0 at every selected channel. In the default
    /// single-winner mode each spatial location sums to exactly 1.
    pub fn as_dense<T: Scalar>(&self) -> Tensor<T> {
        let (gh, gw) = self.grid;
        let mut out = Tensor::zeros(&[gh, gw, self.n_style]).expect("valid grid");
        for (loc, sel) in self.selected.iter().enumerate() {
            for &j in sel {
                out.data_mut()[loc * self.n_style + j as usize] = T::one();
            }
        }
        out
    }
}

/// Extracts all patches of `config.patch_size` at `config.stride`, each
/// containing all channels.
pub fn extract_patches<T: Scalar>(
    activations: &Tensor<T>,
    config: &SwapConfig,
) -> Result<PatchSet<T>> {
    config.validate()?;
    let (h, w, d) = activations.dims3();
    let (gh, gw) = config.grid(h, w)?;
    let s = config.patch_size;
    let count = gh * gw;
    let mut data = Vec::with_capacity(count * s * s * d);
    let mut origins = Vec::with_capacity(count);
    for ai in 0..gh {
        for bj in 0..gw {
            let (a, b) = (ai * config.stride, bj * config.stride);
            origins.push((a, b));
            for di in 0..s {
                let base = ((a + di) * w + b) * d;
                data.extend_from_slice(&activations.data()[base..base + s * d]);
            }
        }
    }
    Ok(PatchSet {
        patches: Tensor::from_vec(&[count, s, s, d], data)?,
        origins,
        zero_norm: vec![false; count],
    })
}

/// Scales every patch to unit Frobenius norm. Patches with norm below
/// `epsilon` are zeroed and flagged instead of divided.
pub fn normalize_patches<T: Scalar>(set: &PatchSet<T>, epsilon: f64) -> PatchSet<T> {
    let count = set.count();
    let plen = set.patches.len() / count;
    let eps = T::from_f64(epsilon);
    let mut data = set.patches.data().to_vec();
    let mut zero_norm = vec![false; count];
    for j in 0..count {
        let patch = &mut data[j * plen..(j + 1) * plen];
        let mut sq = T::zero();
        for &v in patch.iter() {
            sq = sq + v * v;
        }
        let norm = sq.sqrt();
        if norm < eps {
            patch.iter_mut().for_each(|v| *v = T::zero());
            zero_norm[j] = true;
        } else {
            patch.iter_mut().for_each(|v| *v = *v / norm);
        }
    }
    PatchSet {
        patches: Tensor::from_vec(set.patches.shape(), data).expect("same shape"),
        origins: set.origins.clone(),
        zero_norm,
    }
}

/// Computes the correlation tensor as a single 2D convolution of the content
/// activations with the (already normalized) style patches as filters.
pub fn correlation_map<T: Scalar>(
    content_acts: &Tensor<T>,
    style_normalized: &PatchSet<T>,
    config: &SwapConfig,
) -> Result<CorrelationMap<T>> {
    config.validate()?;
    let (h, w, d) = content_acts.dims3();
    if style_normalized.channels() != d {
        return Err(Error::ChannelMismatch {
            input: d,
            expected: style_normalized.channels(),
        });
    }
    config.grid(h, w)?;
    let s = config.patch_size;
    let n = style_normalized.count();

    // filters: weights[di][dj][c][j] = patch_j[di][dj][c]
    let mut weights = vec![T::zero(); s * s * d * n];
    let pdata = style_normalized.patches.data();
    for j in 0..n {
        let p = &pdata[j * s * s * d..(j + 1) * s * s * d];
        for cell in 0..s * s {
            for c in 0..d {
                weights[(cell * d + c) * n + j] = p[cell * d + c];
            }
        }
    }
    let spec = ConvSpec {
        filter: s,
        stride: config.stride,
        padding: 0,
        in_channels: d,
        out_channels: n,
    };
    let params = LayerParams {
        weights: Tensor::from_vec(&[s, s, d, n], weights)?,
        bias: Tensor::zeros(&[n])?,
    };
    Ok(CorrelationMap {
        values: conv2d_forward(content_acts, &spec, &params)?,
    })
}

/// One winner per location: the highest correlation, ties to the lowest
/// style-patch index.
pub fn argmax_one_hot<T: Scalar>(k: &CorrelationMap<T>) -> MatchMap {
    argmax_one_hot_excluding(k, &vec![false; k.style_count()], false)
}

/// Argmax that skips excluded (zero-norm) style patches; if every patch is
/// excluded, patch 0 wins. With `average_ties`, all exactly-tied indices are
/// kept.
pub fn argmax_one_hot_excluding<T: Scalar>(
    k: &CorrelationMap<T>,
    excluded: &[bool],
    average_ties: bool,
) -> MatchMap {
    let (gh, gw) = k.grid();
    let n = k.style_count();
    debug_assert_eq!(excluded.len(), n);
    let all_excluded = excluded.iter().all(|&e| e);
    let values = k.values.data();
    let selected: Vec<Vec<u32>> = (0..gh * gw)
        .map(|loc| {
            if all_excluded {
                return vec![0u32];
            }
            let row = &values[loc * n..(loc + 1) * n];
            let mut best: Option<(usize, T)> = None;
            for (j, &v) in row.iter().enumerate() {
                if excluded[j] {
                    continue;
                }
                match best {
                    None => best = Some((j, v)),
                    Some((_, bv)) if v > bv => best = Some((j, v)),
                    _ => {}
                }
            }
            let (bj, bv) = best.expect("at least one candidate");
            if average_ties {
                row.iter()
                    .enumerate()
                    .filter(|(j, &v)| !excluded[*j] && v == bv)
                    .map(|(j, _)| j as u32)
                    .collect()
            } else {
                vec![bj as u32]
            }
        })
        .collect();
    MatchMap {
        grid: (gh, gw),
        n_style: n,
        selected,
    }
}

/// Per-cell count of placements covering each output cell for a match map.
/// In single-winner mode this is the plain patch-overlap count; with ties
/// every tied placement counts once.
pub fn overlap_counts(mm: &MatchMap, config: &SwapConfig, out_h: usize, out_w: usize) -> Vec<u32> {
    let (gh, gw) = mm.grid();
    let s = config.patch_size;
    let mut counts = vec![0u32; out_h * out_w];
    for ai in 0..gh {
        for bj in 0..gw {
            let placements = mm.selected[ai * gw + bj].len() as u32;
            let (a, b) = (ai * config.stride, bj * config.stride);
            for di in 0..s {
                let row = &mut counts[(a + di) * out_w + b..(a + di) * out_w + b + s];
                row.iter_mut().for_each(|c| *c += placements);
            }
        }
    }
    counts
}

/// Places each selected (unnormalized) style patch at its content location —
/// the effect of a transposed convolution with the one-hot match map as
/// input — then divides each cell by the number of overlapping placements.
/// Cells covered by no placement (possible when the stride does not tile the
/// output) are left at zero.
pub fn reconstruct<T: Scalar>(
    mm: &MatchMap,
    style_raw: &PatchSet<T>,
    config: &SwapConfig,
    out_shape: &[usize; 3],
) -> Result<Tensor<T>> {
    config.validate()?;
    let (out_h, out_w, d) = (out_shape[0], out_shape[1], out_shape[2]);
    if style_raw.channels() != d {
        return Err(Error::ChannelMismatch {
            input: d,
            expected: style_raw.channels(),
        });
    }
    if style_raw.count() != mm.style_count() || style_raw.patch_size() != config.patch_size {
        return Err(Error::InvalidConfig {
            reason: "match map and style patch set disagree".into(),
        });
    }
    let (gh, gw) = mm.grid();
    let expected = config.grid(out_h, out_w)?;
    if expected != (gh, gw) {
        return Err(Error::GridMismatch {
            out_h,
            out_w,
            grid_h: gh,
            grid_w: gw,
        });
    }
    let s = config.patch_size;
    let mut out = vec![T::zero(); out_h * out_w * d];
    for ai in 0..gh {
        for bj in 0..gw {
            let (a, b) = (ai * config.stride, bj * config.stride);
            for &j in &mm.selected[ai * gw + bj] {
                let patch = style_raw.patch(j as usize);
                for di in 0..s {
                    let dst = &mut out[((a + di) * out_w + b) * d..((a + di) * out_w + b + s) * d];
                    let src = &patch[di * s * d..(di + 1) * s * d];
                    for (o, &p) in dst.iter_mut().zip(src) {
                        *o = *o + p;
                    }
                }
            }
        }
    }
    let counts = overlap_counts(mm, config, out_h, out_w);
    for (cell, &count) in counts.iter().enumerate() {
        if count > 1 {
            let inv = T::one() / T::from_f64(count as f64);
            for v in &mut out[cell * d..(cell + 1) * d] {
                *v = *v * inv;
            }
        }
    }
    Tensor::from_vec(&[out_h, out_w, d], out)
}

/// Match statistics reported by the CLI.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwapStats {
    pub content_patches: usize,
    pub style_patches: usize,
    pub distinct_style_patches: usize,
    /// Mean normalized cross-correlation of each location's winner.
    pub mean_correlation: f64,
}

/// Full style swap: extract and normalize style patches, correlate, take the
/// channel-wise argmax, and reconstruct. Output shape equals the content
/// activation shape.
pub fn style_swap<T: Scalar>(
    content_acts: &Tensor<T>,
    style_acts: &Tensor<T>,
    config: &SwapConfig,
) -> Result<Tensor<T>> {
    style_swap_with_stats(content_acts, style_acts, config).map(|(t, _)| t)
}

/// [`style_swap`] plus match statistics.
pub fn style_swap_with_stats<T: Scalar>(
    content_acts: &Tensor<T>,
    style_acts: &Tensor<T>,
    config: &SwapConfig,
) -> Result<(Tensor<T>, SwapStats)> {
    config.validate()?;
    let (h, w, d) = content_acts.dims3();
    let (sh, sw, sd) = style_acts.dims3();
    if sd != d {
        return Err(Error::ChannelMismatch {
            input: sd,
            expected: d,
        });
    }
    // patch must fit both maps; sizes may otherwise differ freely
    config.grid(h, w)?;
    config.grid(sh, sw)?;

    let style_raw = extract_patches(style_acts, config)?;
    let style_norm = normalize_patches(&style_raw, config.epsilon);
    let k = correlation_map(content_acts, &style_norm, config)?;
    let mm = argmax_one_hot_excluding(&k, &style_norm.zero_norm, config.average_ties);
    let out = reconstruct(&mm, &style_raw, config, &[h, w, d])?;

    let stats = compute_stats(content_acts, &k, &mm, config);
    Ok((out, stats))
}

fn compute_stats<T: Scalar>(
    content_acts: &Tensor<T>,
    k: &CorrelationMap<T>,
    mm: &MatchMap,
    config: &SwapConfig,
) -> SwapStats {
    let (gh, gw) = mm.grid();
    let n = mm.style_count();
    let s = config.patch_size;
    let (_, w, d) = content_acts.dims3();
    let mut used = vec![false; n];
    let mut corr_sum = 0.0f64;
    for ai in 0..gh {
        for bj in 0..gw {
            let loc = ai * gw + bj;
            for &j in &mm.selected[loc] {
                used[j as usize] = true;
            }
            let winner = mm.selected[loc][0] as usize;
            let kv = k.values.data()[loc * n + winner].as_f64();
            // normalize by the content patch norm to report a true NCC
            let (a, b) = (ai * config.stride, bj * config.stride);
            let mut sq = 0.0f64;
            for di in 0..s {
                let base = ((a + di) * w + b) * d;
                for &v in &content_acts.data()[base..base + s * d] {
                    sq += v.as_f64() * v.as_f64();
                }
            }
            let norm = sq.sqrt();
            corr_sum += if norm > config.epsilon { kv / norm } else { kv };
        }
    }
    SwapStats {
        content_patches: gh * gw,
        style_patches: n,
        distinct_style_patches: used.iter().filter(|&&u| u).count(),
        mean_correlation: corr_sum / (gh * gw) as f64,
    }
}

/// Literal reference implementation: per-patch argmax of the normalized
/// cross-correlation (content norm included, though it cannot change the
/// argmax) followed by scatter-and-average reconstruction. Shares nothing
/// with the convolutional path beyond [`Tensor`] itself.
pub fn brute_force_style_swap<T: Scalar>(
    content_acts: &Tensor<T>,
    style_acts: &Tensor<T>,
    config: &SwapConfig,
) -> Result<Tensor<T>> {
    config.validate()?;
    let (h, w, d) = content_acts.dims3();
    let (sh, sw, sd) = style_acts.dims3();
    if sd != d {
        return Err(Error::ChannelMismatch {
            input: sd,
            expected: d,
        });
    }
    let s = config.patch_size;
    let stride = config.stride;
    let (gh, gw) = config.grid(h, w)?;
    let (sgh, sgw) = config.grid(sh, sw)?;
    let eps = T::from_f64(config.epsilon);

    // style patch origins, norms, exclusion flags
    let mut style_origins = Vec::new();
    for ai in 0..sgh {
        for bj in 0..sgw {
            style_origins.push((ai * stride, bj * stride));
        }
    }
    let style_norm = |origin: (usize, usize)| -> T {
        let mut sq = T::zero();
        for di in 0..s {
            for dj in 0..s {
                for c in 0..d {
                    let v = style_acts.at3(origin.0 + di, origin.1 + dj, c);
                    sq = sq + v * v;
                }
            }
        }
        sq.sqrt()
    };
    let norms: Vec<T> = style_origins.iter().map(|&o| style_norm(o)).collect();
    let excluded: Vec<bool> = norms.iter().map(|&n| n < eps).collect();
    let all_excluded = excluded.iter().all(|&e| e);

    let mut out = vec![T::zero(); h * w * d];
    let mut counts = vec![0u32; h * w];
    for ai in 0..gh {
        for bj in 0..gw {
            let (a, b) = (ai * stride, bj * stride);
            // content patch norm
            let mut csq = T::zero();
            for di in 0..s {
                for dj in 0..s {
                    for c in 0..d {
                        let v = content_acts.at3(a + di, b + dj, c);
                        csq = csq + v * v;
                    }
                }
            }
            let cnorm = csq.sqrt();

            let score_of = |j: usize| -> T {
                let (sa, sb) = style_origins[j];
                let mut dot = T::zero();
                for di in 0..s {
                    for dj in 0..s {
                        for c in 0..d {
                            dot = dot
                                + content_acts.at3(a + di, b + dj, c)
                                    * style_acts.at3(sa + di, sb + dj, c);
                        }
                    }
                }
                if cnorm < eps {
                    // degenerate content patch: drop its constant norm
                    dot / norms[j]
                } else {
                    dot / (cnorm * norms[j])
                }
            };

            let mut selected: Vec<usize> = Vec::with_capacity(1);
            if all_excluded {
                selected.push(0);
            } else {
                let mut best: Option<(usize, T)> = None;
                for (j, &skip) in excluded.iter().enumerate() {
                    if skip {
                        continue;
                    }
                    let v = score_of(j);
                    match best {
                        None => best = Some((j, v)),
                        Some((_, bv)) if v > bv => best = Some((j, v)),
                        _ => {}
                    }
                }
                let (bj2, bv) = best.expect("candidate exists");
                if config.average_ties {
                    for (j, &skip) in excluded.iter().enumerate() {
                        if !skip && score_of(j) == bv {
                            selected.push(j);
                        }
                    }
                } else {
                    selected.push(bj2);
                }
            }

            for &j in &selected {
                let (sa, sb) = style_origins[j];
                for di in 0..s {
                    for dj in 0..s {
                        counts[(a + di) * w + b + dj] += 1;
                        for c in 0..d {
                            let idx = ((a + di) * w + b + dj) * d + c;
                            out[idx] = out[idx] + style_acts.at3(sa + di, sb + dj, c);
                        }
                    }
                }
            }
        }
    }
    for (cell, &count) in counts.iter().enumerate() {
        if count > 1 {
            let inv = T::one() / T::from_f64(count as f64);
            for v in &mut out[cell * d..(cell + 1) * d] {
                *v = *v * inv;
            }
        }
    }
    Tensor::from_vec(&[h, w, d], out)
}
