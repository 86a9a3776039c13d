use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use styleswap::encoder::{build_identity, build_tiny, build_truncated_vgg19, encode, EncoderSpec};
use styleswap::invnet::{
    build_matching_inverse, feedforward_stylize, invert, train, write_train_csv, TrainConfig,
};
use styleswap::io;
use styleswap::optim::{optimize, InitMode, OptimConfig};
use styleswap::swap::{brute_force_style_swap, style_swap_with_stats, SwapConfig};
use styleswap::{SeededRng, Tensor};

use super::{CliError, Command, EncoderOpts, SwapOpts};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Swap {
            content,
            style,
            out,
            encoder,
            swap,
        } => cmd_swap(&content, &style, &out, &encoder, &swap),
        Command::Stylize {
            content,
            frames,
            style,
            out,
            encoder,
            swap,
            tv_weight,
            iters,
            lr,
            init,
            seed,
            report,
        } => cmd_stylize(
            content.as_deref(),
            frames.as_deref(),
            &style,
            &out,
            &encoder,
            &swap,
            tv_weight,
            iters,
            lr,
            &init,
            seed,
            report.as_deref(),
        ),
        Command::TrainInverse {
            natural,
            paintings,
            out,
            encoder,
            swap,
            epochs,
            lr,
            tv_weight,
            image_size,
            seed,
            no_augment,
            checkpoint_every,
            val_natural,
            val_paintings,
            report,
            resume,
        } => cmd_train(
            &natural,
            &paintings,
            &out,
            &encoder,
            &swap,
            epochs,
            lr,
            tv_weight,
            image_size,
            seed,
            no_augment,
            checkpoint_every,
            val_natural,
            val_paintings,
            report.as_deref(),
            resume.as_deref(),
        ),
        Command::Feedforward {
            content,
            frames,
            style,
            net,
            out,
            encoder,
            swap,
        } => cmd_feedforward(
            content.as_deref(),
            frames.as_deref(),
            &style,
            &net,
            &out,
            &encoder,
            &swap,
        ),
        Command::Bench {
            mode,
            sizes,
            out,
            encoder,
            swap,
            fixed_size,
            seed,
        } => cmd_bench(&mode, &sizes, &out, &encoder, &swap, fixed_size, seed),
    }
}

fn build_encoder(opts: &EncoderOpts) -> Result<EncoderSpec<f32>> {
    match opts.encoder.as_str() {
        "identity" => Ok(build_identity()),
        "tiny" => Ok(build_tiny(opts.tiny_channels, opts.encoder_seed)),
        "vgg" => Ok(build_truncated_vgg19(opts.encoder_seed)),
        other => match other.strip_prefix("file:") {
            Some(path) => Ok(io::load_encoder(Path::new(path))?),
            None => Err(CliError::Usage(format!(
                "unknown encoder '{other}' (expected identity, tiny, vgg, or file:PATH)"
            ))),
        },
    }
}

fn swap_config(opts: &SwapOpts) -> SwapConfig {
    SwapConfig {
        patch_size: opts.patch_size,
        stride: opts.stride,
        average_ties: opts.average_ties,
        ..SwapConfig::default()
    }
}

fn cmd_swap(
    content: &Path,
    style: &Path,
    out: &Path,
    encoder: &EncoderOpts,
    swap: &SwapOpts,
) -> Result<()> {
    if encoder.encoder != "identity" {
        return Err(CliError::Usage(format!(
            "swap decodes activations as pixels, which needs --encoder identity \
             (got '{}'); use stylize or feedforward for deeper encoders",
            encoder.encoder
        )));
    }
    let enc = build_encoder(encoder)?;
    let content_img = io::load_image::<f32>(content)?;
    let style_img = io::load_image::<f32>(style)?;
    let (content_acts, _) = encode(&content_img, &enc)?;
    let (style_acts, _) = encode(&style_img, &enc)?;
    let (swapped, stats) = style_swap_with_stats(&content_acts, &style_acts, &swap_config(swap))?;
    io::save_image(out, &swapped)?;
    println!(
        "content patches: {}, style patches: {}, distinct style patches used: {} ({:.1}%), mean correlation: {:.4}",
        stats.content_patches,
        stats.style_patches,
        stats.distinct_style_patches,
        100.0 * stats.distinct_style_patches as f64 / stats.style_patches as f64,
        stats.mean_correlation
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn parse_init(init: &str, seed: u64) -> Result<InitMode> {
    match init {
        "content" => Ok(InitMode::Content),
        "random" => Ok(InitMode::Random {
            lo: 0.0,
            hi: 1.0,
            seed,
        }),
        other => Err(CliError::Usage(format!(
            "unknown init '{other}' (expected content or random)"
        ))),
    }
}

/// Enumerates the frame directory and prepares the output directory.
fn frame_batch(frames: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let folder = io::DatasetFolder::scan(frames)?;
    if folder.is_empty() {
        return Err(CliError::Lib(styleswap::Error::EmptyPool {
            path: frames.to_path_buf(),
        }));
    }
    if folder.skipped > 0 {
        eprintln!("warning: skipped {} undecodable file(s)", folder.skipped);
    }
    std::fs::create_dir_all(out).map_err(|source| {
        CliError::Lib(styleswap::Error::Io {
            path: out.to_path_buf(),
            source,
        })
    })?;
    Ok(folder.files)
}

#[allow(clippy::too_many_arguments)]
fn cmd_stylize(
    content: Option<&Path>,
    frames: Option<&Path>,
    style: &Path,
    out: &Path,
    encoder: &EncoderOpts,
    swap: &SwapOpts,
    tv_weight: f64,
    iters: usize,
    lr: f64,
    init: &str,
    seed: u64,
    report: Option<&Path>,
) -> Result<()> {
    let enc = build_encoder(encoder)?;
    let swap_cfg = swap_config(swap);
    let optim_cfg = OptimConfig {
        tv_weight,
        max_iters: iters,
        step_size: lr,
        init: parse_init(init, seed)?,
        ..OptimConfig::default()
    };
    let style_img = io::load_image::<f32>(style)?;

    match (content, frames) {
        (Some(content), None) => {
            let content_img = io::load_image::<f32>(content)?;
            let result = optimize(&content_img, &style_img, &enc, &swap_cfg, &optim_cfg)?;
            io::save_image(out, &result.final_image)?;
            if let Some(report_path) = report {
                io::write_optim_csv(report_path, &result)?;
            }
            let last = result.iterations.last().expect("at least one iteration");
            println!(
                "{} iterations, loss {:.6} -> {:.6}, wrote {}",
                result.iterations.len() - 1,
                result.iterations[0].total,
                last.total,
                out.display()
            );
            Ok(())
        }
        (None, Some(frames)) => {
            if report.is_some() {
                return Err(CliError::Usage(
                    "--report is only available for single-image runs".into(),
                ));
            }
            let files = frame_batch(frames, out)?;
            let results: Vec<Result<()>> = files
                .par_iter()
                .map(|frame| {
                    let img = io::load_image::<f32>(frame)?;
                    let result = optimize(&img, &style_img, &enc, &swap_cfg, &optim_cfg)?;
                    let dst = out.join(frame.file_name().expect("scanned file name"));
                    io::save_image(&dst, &result.final_image)?;
                    Ok(())
                })
                .collect();
            for r in results {
                r?;
            }
            println!("stylized {} frame(s) into {}", files.len(), out.display());
            Ok(())
        }
        _ => Err(CliError::Usage(
            "exactly one of --content or --frames is required".into(),
        )),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    natural: &Path,
    paintings: &Path,
    out: &Path,
    encoder: &EncoderOpts,
    swap: &SwapOpts,
    epochs: usize,
    lr: f64,
    tv_weight: f64,
    image_size: usize,
    seed: u64,
    no_augment: bool,
    checkpoint_every: usize,
    val_natural: usize,
    val_paintings: usize,
    report: Option<&Path>,
    resume: Option<&Path>,
) -> Result<()> {
    let enc = build_encoder(encoder)?;
    let mut pools = Vec::new();
    for dir in [natural, paintings] {
        let folder = io::DatasetFolder::scan(dir)?;
        if folder.is_empty() {
            return Err(CliError::Lib(styleswap::Error::EmptyPool {
                path: dir.to_path_buf(),
            }));
        }
        if folder.skipped > 0 {
            eprintln!(
                "warning: skipped {} undecodable file(s) in {}",
                folder.skipped,
                dir.display()
            );
        }
        pools.push(folder.load_all::<f32>(Some((image_size, image_size)))?);
    }
    let painting_pool = pools.pop().expect("two pools");
    let natural_pool = pools.pop().expect("two pools");

    let net = match resume {
        Some(ckpt) => io::load_inverse_net::<f32>(ckpt)?,
        None => build_matching_inverse(&enc, seed),
    };
    let cfg = TrainConfig {
        tv_weight,
        learning_rate: lr,
        n_swapped: if no_augment { 0 } else { 4 },
        epochs,
        swap_config: swap_config(swap),
        seed,
        checkpoint: Some(out.to_path_buf()),
        checkpoint_every,
        val_natural,
        val_painting: val_paintings,
        ..TrainConfig::default()
    };
    let (_, train_report) = train(&natural_pool, &painting_pool, &enc, net, &cfg)?;
    if let Some(report_path) = report {
        write_train_csv(report_path, &train_report)?;
    }
    println!(
        "trained {} steps, loss {:.6} -> {:.6}",
        train_report.steps.len(),
        train_report.initial_loss().unwrap_or(f64::NAN),
        train_report.final_loss().unwrap_or(f64::NAN),
    );
    if let Some(v) = train_report.validations.last() {
        println!(
            "validation: real {:.6}, style-swapped {:.6}",
            v.real_loss, v.swapped_loss
        );
    }
    println!("checkpoint: {}", out.display());
    Ok(())
}

fn cmd_feedforward(
    content: Option<&Path>,
    frames: Option<&Path>,
    style: &Path,
    net_path: &Path,
    out: &Path,
    encoder: &EncoderOpts,
    swap: &SwapOpts,
) -> Result<()> {
    let enc = build_encoder(encoder)?;
    let net = io::load_inverse_net::<f32>(net_path)?;
    let swap_cfg = swap_config(swap);
    let style_img = io::load_image::<f32>(style)?;

    match (content, frames) {
        (Some(content), None) => {
            let content_img = io::load_image::<f32>(content)?;
            let result = feedforward_stylize(&content_img, &style_img, &enc, &net, &swap_cfg)?;
            io::save_image(out, &result)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        (None, Some(frames)) => {
            let files = frame_batch(frames, out)?;
            let results: Vec<Result<()>> = files
                .par_iter()
                .map(|frame| {
                    let img = io::load_image::<f32>(frame)?;
                    let result = feedforward_stylize(&img, &style_img, &enc, &net, &swap_cfg)?;
                    let dst = out.join(frame.file_name().expect("scanned file name"));
                    io::save_image(&dst, &result)?;
                    Ok(())
                })
                .collect();
            for r in results {
                r?;
            }
            println!("stylized {} frame(s) into {}", files.len(), out.display());
            Ok(())
        }
        _ => Err(CliError::Usage(
            "exactly one of --content or --frames is required".into(),
        )),
    }
}

fn cmd_bench(
    mode: &str,
    sizes: &str,
    out: &Path,
    encoder: &EncoderOpts,
    swap: &SwapOpts,
    fixed_size: usize,
    seed: u64,
) -> Result<()> {
    if !matches!(mode, "style-size" | "content-size" | "matcher") {
        return Err(CliError::Usage(format!(
            "unknown bench mode '{mode}' (expected style-size, content-size, or matcher)"
        )));
    }
    let sizes: Vec<usize> = sizes
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad --sizes list '{sizes}'")))?;
    if sizes.is_empty() {
        return Err(CliError::Usage("--sizes must name at least one size".into()));
    }
    let enc = build_encoder(encoder)?;
    let net = build_matching_inverse(&enc, seed);
    let swap_cfg = swap_config(swap);
    let base = SeededRng::new(seed);

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (idx, &size) in sizes.iter().enumerate() {
        let (content_size, style_size) = match mode {
            "content-size" => (size, fixed_size),
            _ => (fixed_size, size),
        };
        let mut rng = base.stream(idx as u64);
        let content =
            Tensor::<f32>::random_uniform(&[content_size, content_size, 3], 0.0, 1.0, &mut rng)?;
        let style =
            Tensor::<f32>::random_uniform(&[style_size, style_size, 3], 0.0, 1.0, &mut rng)?;

        let t0 = Instant::now();
        let (content_acts, _) = encode(&content, &enc)?;
        let (style_acts, _) = encode(&style, &enc)?;
        let encode_secs = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let (target, stats) = style_swap_with_stats(&content_acts, &style_acts, &swap_cfg)?;
        let swap_secs = t1.elapsed().as_secs_f64();

        let mut push = |phase: &str, secs: f64| {
            rows.push(vec![
                size.to_string(),
                phase.to_string(),
                secs.to_string(),
                stats.content_patches.to_string(),
                stats.style_patches.to_string(),
            ]);
        };
        match mode {
            "matcher" => {
                let t2 = Instant::now();
                let brute = brute_force_style_swap(&content_acts, &style_acts, &swap_cfg)?;
                let brute_secs = t2.elapsed().as_secs_f64();
                std::hint::black_box(&brute);
                push("swap", swap_secs);
                push("swap-brute", brute_secs);
                println!(
                    "size {size}: swap {swap_secs:.4}s, brute force {brute_secs:.4}s ({} style patches)",
                    stats.style_patches
                );
            }
            _ => {
                let t2 = Instant::now();
                let decoded = invert(&target, &net)?;
                let decode_secs = t2.elapsed().as_secs_f64();
                std::hint::black_box(&decoded);
                push("encode", encode_secs);
                push("swap", swap_secs);
                push("decode", decode_secs);
                println!(
                    "size {size}: encode {encode_secs:.4}s, swap {swap_secs:.4}s, decode {decode_secs:.4}s"
                );
            }
        }
    }
    io::write_csv(
        out,
        &["size", "phase", "seconds", "content_patches", "style_patches"],
        &rows,
    )?;
    println!("wrote {}", out.display());
    Ok(())
}
