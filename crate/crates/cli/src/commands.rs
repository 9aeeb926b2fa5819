//! Subcommand implementations; each is a thin shell over library calls.

use std::fs;
use std::path::Path;
use std::thread;
use std::time::Instant;

use anyhow::{Context as _, Result};
use log::{info, warn};
use msplic::codec::{decode_image, encode_image, encode_latent, overfit_latent, pad_image, LofConfig};
use msplic::io::{load_image, save_png};
use msplic::model::LAMBDA_GRID;
use msplic::msp::{build_schedule, Context};
use msplic::train::report::{parse_curve, write_curve, EvalReport, ImageReport};
use msplic::train::{bd_rate, channel_stats, load_dataset, ms_ssim, psnr, synthetic_image, train, TrainConfig};
use msplic::transforms::{quantize_latent, Quantizer, DOWNSAMPLE};
use msplic::{Error, Model, ModelConfig, MspProfile, Tensor};

use crate::{BdrateArgs, BenchArgs, Cli, Command, DecodeArgs, EncodeArgs, EvalArgs, LofArgs, StatsArgs, TrainArgs};

pub const EXIT_USAGE: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_CODING: u8 = 4;
const EXIT_NUMERIC: u8 = 5;
const EXIT_OTHER: u8 = 1;

/// Maps the first library error in the chain to its exit code.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|cause| cause.downcast_ref::<Error>())
        .map_or(EXIT_OTHER, |err| match err {
            Error::Usage(_) | Error::Config(_) => EXIT_USAGE,
            Error::Format(_) | Error::WrongModel { .. } | Error::Image(_) => EXIT_FORMAT,
            Error::Coding(_) => EXIT_CODING,
            Error::Numeric(_) => EXIT_NUMERIC,
            Error::Io(_) => EXIT_OTHER,
        })
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Usage(msg.into()).into()
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.unwrap_or(1);
    if threads == 0 {
        return Err(usage("thread count must be positive"));
    }
    match cli.command {
        Command::Train(a) => run_train(a),
        Command::Encode(a) => run_encode(a, false),
        Command::LofEncode(a) => run_encode(a, true),
        Command::Decode(a) => run_decode(a),
        Command::Eval(a) => run_eval(a, threads),
        Command::Bench(a) => run_bench(a),
        Command::Stats(a) => run_stats(a),
        Command::Bdrate(a) => run_bdrate(a),
    }
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn lof_config(a: &LofArgs) -> LofConfig {
    LofConfig { lr: a.lof_lr, max_iters: a.lof_iters, patience: a.lof_patience, ..LofConfig::default() }
}

fn run_train(a: TrainArgs) -> Result<()> {
    let profile: MspProfile = a.profile.parse()?;
    let lambda = match (a.lambda, a.lambda_index) {
        (Some(l), _) => l,
        (None, Some(i)) => *LAMBDA_GRID.get(i).ok_or_else(|| usage(format!("lambda index {i} is outside 0..{}", LAMBDA_GRID.len())))?,
        (None, None) => LAMBDA_GRID[3],
    };
    let data = load_dataset(&a.data)?;
    for (path, why) in &data.skipped {
        warn!("skipped {}: {why}", path.display());
    }
    let mut model = Model::new(ModelConfig::new(profile, a.channels, a.filters, lambda)?, a.seed);
    let cfg = TrainConfig {
        crop: a.crop,
        batch: a.batch,
        steps: a.steps,
        lr: a.lr,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        checkpoint: (a.checkpoint_every > 0).then(|| a.output.clone()),
    };
    let log_every = (a.steps / 20).max(1);
    let trace = train(&mut model, &data.images, &cfg, |k, t| {
        if k % log_every == 0 {
            info!("step {k}: loss {:.4} bpp {:.4} mse {:.6}", t.loss, t.bpp, t.mse);
        }
    })?;
    model.save(&a.output)?;
    match trace.last() {
        Some(t) => println!("trained {} steps on {} images, final loss {:.4} (bpp {:.4}, mse {:.6})", a.steps, data.images.len(), t.loss, t.bpp, t.mse),
        None => println!("saved untrained model"),
    }
    if !data.skipped.is_empty() {
        println!("warnings: {} unreadable files skipped", data.skipped.len());
    }
    Ok(())
}

fn run_encode(a: EncodeArgs, force_lof: bool) -> Result<()> {
    let model = load_model(&a.model)?;
    if let Some(p) = &a.profile {
        let want: MspProfile = p.parse()?;
        let have = model.profile();
        if (want.scales(), want.block(), want.seeds()) != (have.scales(), have.block(), have.seeds()) {
            return Err(usage(format!("model uses profile {have}, not {p}")));
        }
    }
    let x = load_image(&a.input)?;
    let enc = if force_lof || a.lof.lof {
        // same pipeline as encode_image with LOF, with the losses reported
        let start = Instant::now();
        let (_, h, w) = x.chw();
        let padded = pad_image(&x, model.profile().pad_multiple());
        let r = overfit_latent(&model, &padded, (h, w), &lof_config(&a.lof))?;
        println!("lof: {} iterations, loss {:.4} -> {:.4}", r.iterations, r.initial_loss, r.best_loss);
        let mut enc = encode_latent(&model, &r.latent, w, h, Context::Learned)?;
        enc.seconds = start.elapsed().as_secs_f64();
        enc
    } else {
        encode_image(&model, &x, None)?
    };
    fs::write(&a.output, &enc.bytes).with_context(|| format!("writing {}", a.output.display()))?;
    println!("{} bytes, {:.4} bpp, {:.3} s", enc.bytes.len(), enc.bpp, enc.seconds);
    Ok(())
}

fn run_decode(a: DecodeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let dec = decode_image(&model, &bytes)?;
    save_png(&a.output, &dec.image)?;
    println!("decoded {}x{} in {:.3} s ({} passes)", dec.image.chw().2, dec.image.chw().1, dec.seconds, dec.stats.passes);
    Ok(())
}

fn evaluate_one(model: &Model, name: String, x: &Tensor, lof: Option<&LofConfig>) -> Result<ImageReport> {
    let (_, h, w) = x.chw();
    let enc = encode_image(model, x, lof)?;
    let dec = decode_image(model, &enc.bytes)?;
    let p = psnr(x, &dec.image)?;
    let ssim = if h.min(w) >= msplic::train::metrics::MS_SSIM_MIN_SIDE { Some(ms_ssim(x, &dec.image)?) } else { None };
    Ok(ImageReport {
        name,
        width: w,
        height: h,
        bpp: enc.bpp,
        psnr: p.is_finite().then_some(p),
        ms_ssim: ssim,
        encode_seconds: enc.seconds,
        decode_seconds: dec.seconds,
    })
}

fn run_eval(a: EvalArgs, threads: usize) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    for (path, why) in &data.skipped {
        warn!("skipped {}: {why}", path.display());
    }
    let lof = a.lof.lof.then(|| lof_config(&a.lof));
    let n = data.images.len();
    let workers = threads.min(n);
    // images are striped over workers; each pipeline runs independently
    let mut results: Vec<Option<Result<ImageReport>>> = (0..n).map(|_| None).collect();
    thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|k| {
                let (model, data, lof) = (&model, &data, lof.as_ref());
                scope.spawn(move || {
                    (k..n)
                        .step_by(workers)
                        .map(|i| {
                            let name = data.paths[i].file_name().map_or_else(|| data.paths[i].display().to_string(), |s| s.to_string_lossy().into_owned());
                            (i, evaluate_one(model, name, &data.images[i], lof))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("evaluation worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let images = results.into_iter().map(|r| r.expect("every image evaluated")).collect::<Result<Vec<_>>>()?;
    for r in &images {
        let q = r.psnr.map_or("lossless".to_string(), |p| format!("{p:.2} dB"));
        println!("{}: {:.4} bpp, {q}", r.name, r.bpp);
    }
    let report = EvalReport::new(model.profile().to_string(), model.config.lambda, images);
    println!("mean: {:.4} bpp, {:.2} dB", report.mean_bpp, report.mean_psnr);
    if let Some(path) = &a.report {
        fs::write(path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.curve {
        let mut points = match fs::read_to_string(path) {
            Ok(text) => parse_curve(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
        };
        points.push(report.point());
        points.sort_by(|p, q| p.bpp.total_cmp(&q.bpp));
        fs::write(path, write_curve(&points)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || usage(format!("size must be WIDTHxHEIGHT, got {s:?}"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    let (w, h) = (w.trim().parse::<usize>().map_err(|_| bad())?, h.trim().parse::<usize>().map_err(|_| bad())?);
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

fn run_bench(a: BenchArgs) -> Result<()> {
    let (w, h) = parse_size(&a.size)?;
    let model = match &a.model {
        Some(path) => load_model(path)?,
        None => {
            let mut profile: MspProfile = a.profile.parse()?;
            if let Some(f) = a.hp_filters {
                profile = profile.with_filters(f);
            }
            Model::new(ModelConfig::new(profile, a.channels, a.filters, LAMBDA_GRID[3])?, a.seed)
        }
    };
    let profile = model.profile();
    let m = profile.pad_multiple();
    let (lh, lw) = (h.div_ceil(m) * m / DOWNSAMPLE, w.div_ceil(m) * m / DOWNSAMPLE);
    let sched = build_schedule(&profile, model.config.channels, lh, lw)?;
    println!("profile {profile}, latent {}x{lh}x{lw}", model.config.channels);
    println!("decode units: {}", sched.units.len());
    if sched.units.len() != profile.decode_steps() {
        println!("note: this latent realises {} of the profile's {} steps", sched.units.len(), profile.decode_steps());
    }
    if a.units_only {
        return Ok(());
    }
    let x = synthetic_image(w, h, a.seed);
    let enc = encode_image(&model, &x, None)?;
    let dec = decode_image(&model, &enc.bytes)?;
    for (k, (unit, t)) in sched.units.iter().zip(&dec.stats.unit_seconds).enumerate() {
        println!(
            "unit {k:3}: scale {} subgroup {} channels {}..{} positions {:6}: {:9.3} ms",
            unit.scale,
            unit.subgroup,
            unit.channels.start,
            unit.channels.end,
            unit.positions.len(),
            t * 1e3
        );
    }
    let coding: f64 = dec.stats.unit_seconds.iter().sum();
    println!("encode {:.3} s, decode {:.3} s ({:.3} s in units), {:.4} bpp", enc.seconds, dec.seconds, coding, enc.bpp);
    Ok(())
}

fn run_stats(a: StatsArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    let m = model.profile().pad_multiple();
    let latents = data
        .images
        .iter()
        .map(|x| Ok(quantize_latent(&model.analyze(&pad_image(x, m))?, Quantizer::Round)?))
        .collect::<Result<Vec<_>>>()?;
    let stats = channel_stats(&latents, a.top)?;
    info!("top quartile of channels holds {:.2}% of the energy", 100.0 * stats.top_quartile_share());
    match &a.output {
        Some(path) => fs::write(path, stats.to_csv()).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{}", stats.to_csv()),
    }
    Ok(())
}

fn run_bdrate(a: BdrateArgs) -> Result<()> {
    let read = |p: &Path| -> Result<_> {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        Ok(parse_curve(&text)?)
    };
    let d = bd_rate(&read(&a.anchor)?, &read(&a.test)?)?;
    println!("BD-rate: {d:+.4}%");
    Ok(())
}
