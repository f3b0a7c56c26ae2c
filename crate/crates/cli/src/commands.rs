use std::fs;
use std::path::Path;

use log::{info, warn};
use thiserror::Error;
use tumorseg::metrics::binarize;
use tumorseg::model::{NetworkConfig, UNet};
use tumorseg::preprocess::{equalize, read_gray, write_gray};
use tumorseg::tensor::fault::{self, Fault};
use tumorseg::tensor::Tensor;
use tumorseg::training::{self, load_checkpoint, save_checkpoint, synth_dataset, Dataset, TrainConfig};
use tumorseg::Error;

use crate::gradcheck::{self, Block};
use crate::manifest::{self, RunManifest};
use crate::{FaultArg, TrainArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("no input images in {0}")]
    NoInputs(String),
    #[error("gradient check failed for: {0}")]
    GradcheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::NoInputs(_) => 2,
            CliError::GradcheckFailed(_) => 3,
            CliError::Core(e) => match e {
                Error::ShapeMismatch(_)
                | Error::InvalidHyperparameter(_)
                | Error::Config(_)
                | Error::ConfigMismatch(_) => 2,
                Error::NonFiniteLoss { .. } | Error::MissingGradient(_) | Error::DetachedTensor => 3,
                Error::Io { .. } | Error::Format(_) | Error::NonBinaryMask(_) => 4,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

const IMAGE_EXTENSIONS: [&str; 3] = ["pgm", "ppm", "pnm"];

pub fn preprocess(input: &Path, out: &Path, equalize_images: bool) -> Result<()> {
    let mut run = RunManifest::start("preprocess");
    run.set("in", input.display());
    run.set("out", out.display());
    run.set("equalize", equalize_images);

    let listing = fs::read_dir(input).map_err(|source| Error::Io { path: input.into(), source })?;
    let mut files = Vec::new();
    for entry in listing {
        let path = entry.map_err(|source| Error::Io { path: input.into(), source })?.path();
        let known = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|known| e.eq_ignore_ascii_case(known)));
        if path.is_file() && known {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::NoInputs(input.display().to_string()));
    }

    fs::create_dir_all(out).map_err(|source| Error::Io { path: out.into(), source })?;
    for path in &files {
        let gray = read_gray(path)?;
        let result = if equalize_images { equalize(&gray) } else { gray };
        let stem = path.file_stem().expect("listed files have names");
        let target = out.join(stem).with_extension("pgm");
        write_gray(&result, &target)?;
        run.artifact(target);
    }
    println!("preprocessed {} images", files.len());
    run.write(&manifest::inside(out))?;
    Ok(())
}

pub fn synth(n: usize, side: usize, seed: u64, out: &Path, depth: usize) -> Result<()> {
    let multiple = 1usize.checked_shl(depth as u32).filter(|_| depth <= 16).unwrap_or(0);
    if n == 0 || side == 0 || multiple == 0 || !side.is_multiple_of(multiple) {
        return Err(Error::Config(format!(
            "--side {side} must be a positive multiple of 2^{depth} and --n must be positive"
        ))
        .into());
    }
    let mut run = RunManifest::start("synth");
    run.set("n", n);
    run.set("side", side);
    run.set("seed", seed);
    run.set("depth", depth);
    run.set("out", out.display());
    synth_dataset(n, side, seed).save_dir(out)?;
    run.artifact(out);
    println!("wrote {n} image/mask pairs to {}", out.display());
    run.write(&manifest::inside(out))?;
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let base = if args.baseline { NetworkConfig::baseline(args.base_channels, args.depth) } else {
        NetworkConfig::improved(args.base_channels, args.depth)
    };
    let network = NetworkConfig {
        aspp_rates: args.aspp_rates.clone(),
        reduction_ratio: args.reduction,
        ..base
    };
    let cfg = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        epochs: args.epochs,
        seed: args.seed,
        network,
        ..Default::default()
    };
    cfg.validate()?;

    let mut run = RunManifest::start("train");
    run.set("data", args.data.display());
    run.set("out", args.out.display());
    run.set("log", args.log.display());
    run.set("epochs", args.epochs);
    run.set("batch", args.batch);
    run.set("lr", args.lr);
    run.set("seed", args.seed);
    run.set("variant", if args.baseline { "baseline" } else { "improved" });
    run.set("base_channels", args.base_channels);
    run.set("depth", args.depth);
    run.set("aspp_rates", join(&args.aspp_rates));
    run.set("reduction", args.reduction);
    run.set("split", format!("{}:{}", cfg.split_ratio.train, cfg.split_ratio.val));

    let ds = Dataset::load_dir(&args.data)?;
    let (w, h) = ds.dims();
    cfg.network.check_input_dims(h, w)?;
    let (train_set, val_set) = ds.split(cfg.split_ratio, cfg.seed)?;
    info!("training on {} items, validating on {}", train_set.len(), val_set.len());
    run.set("train_items", train_set.len());
    run.set("val_items", val_set.len());

    let outcome = training::train_split(&train_set, &val_set, &cfg, |_| {})?;
    save_checkpoint(&outcome.params, &cfg.network, &args.out)?;
    training::write_metrics_csv(&outcome.records, &args.log)?;
    run.set("parameters", outcome.params.scalar_count());
    run.artifact(&args.out);
    run.artifact(&args.log);
    if let Some(last) = outcome.records.last() {
        println!(
            "epoch {}: train_loss={:.6} val_loss={:.6} val_miou={:.6}",
            last.epoch, last.train_loss, last.val_loss, last.val_miou
        );
    }
    run.write(&manifest::beside(&args.out))?;
    Ok(())
}

pub fn eval(ckpt: &Path, data: &Path) -> Result<()> {
    let mut run = RunManifest::start("eval");
    run.set("ckpt", ckpt.display());
    run.set("data", data.display());
    let (params, cfg) = load_checkpoint(ckpt)?;
    let ds = Dataset::load_dir(data)?;
    let (w, h) = ds.dims();
    cfg.check_input_dims(h, w)?;
    let net = UNet::new(cfg)?;
    let result = training::evaluate(&net, &params, &ds, 16)?;
    println!("miou={:.6} loss={:.6}", result.miou, result.loss);
    run.set("miou", format!("{:.6}", result.miou));
    run.set("loss", format!("{:.6}", result.loss));
    eprint!("{}", run.render());
    Ok(())
}

pub fn predict(ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let mut run = RunManifest::start("predict");
    run.set("ckpt", ckpt.display());
    run.set("in", input.display());
    run.set("out", out.display());
    let (params, cfg) = load_checkpoint(ckpt)?;
    let img = read_gray(input)?;
    cfg.check_input_dims(img.height(), img.width())?;
    let net = UNet::new(cfg)?;
    let x = Tensor::from_fn(&[1, 1, img.height(), img.width()], |i| img.pixels()[i] as f32 / 255.0);
    let mask = binarize(&net.predict(&params, &x)?, 0.5)?;
    write_gray(&mask, out)?;
    run.artifact(out);
    run.write(&manifest::beside(out))?;
    Ok(())
}

pub fn gradcheck(block: Block, fault_arg: Option<FaultArg>) -> Result<()> {
    if let Some(f) = fault_arg {
        warn!("injecting a deliberate gradient fault: {f:?}");
        fault::inject(match f {
            FaultArg::Relu => Fault::NegateRelu,
            FaultArg::Sigmoid => Fault::NegateSigmoid,
            FaultArg::ConvWeight => Fault::NegateConvWeight,
        });
    }
    let mut run = RunManifest::start("gradcheck");
    run.set("block", block.name());
    run.set("step", gradcheck::STEP);
    let outcomes = gradcheck::run(block)?;
    let mut failed = Vec::new();
    for o in &outcomes {
        let status = if o.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<5} max_error={:.3e} tolerance={:.0e} {status}",
            o.block.name(),
            o.max_error,
            o.block.tolerance()
        );
        run.set(&format!("max_error.{}", o.block.name()), format!("{:e}", o.max_error));
        if !o.passed() {
            failed.push(o.block.name());
        }
    }
    eprint!("{}", run.render());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradcheckFailed(failed.join(", ")))
    }
}

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}
