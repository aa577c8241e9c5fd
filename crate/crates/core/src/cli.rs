//! Command-line surface: train, attack, transfer, report.
//!
//! Exit codes: 0 success, 2 configuration errors (including unknown
//! flags), 3 data/format errors.

use crate::attacks::AttackConfig;
use crate::config::{parse_kv, preset, AttackKv};
use crate::data::{Dataset, DatasetDescriptor};
use crate::error::{Error, Result};
use crate::io::{advset, checkpoint, manifest, matrix, svg};
use crate::model::Model;
use crate::quant::{BitwidthSpec, QuantConfig};
use crate::rng::permutation;
use crate::roster::{build_model, entry, RosterId};
use crate::train::{evaluate_accuracy, history_csv, train, TrainConfig};
use crate::transfer::{run_transfer, TransferRun};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "qntk", version, about = "Quantized-network adversarial transferability toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a roster model, optionally quantization-aware, and write a
    /// checkpoint.
    Train(TrainArgs),
    /// Craft adversarial examples on a checkpointed model.
    Attack(AttackArgs),
    /// Run the source x target transferability experiment.
    Transfer(TransferArgs),
    /// Render a transfer-matrix CSV as an SVG heatmap.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Roster model id (MnistA, MnistB, MnistC, Resnet20, Resnet32,
    /// Resnet44, CifarA).
    #[arg(long)]
    model: String,
    /// Weight and activation bitwidth; 0 means full precision.
    #[arg(long, default_value_t = 0)]
    bits: u8,
    /// Dataset descriptor: mnist:DIR, cifar10:DIR, or synthetic:KEY=V,...
    #[arg(long)]
    data: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the recipe's epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Train on only the first N samples (desk-scale runs).
    #[arg(long)]
    subset: Option<usize>,
    /// Write the per-epoch accuracy history CSV here.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Warm-start from an existing checkpoint instead of fresh init.
    #[arg(long)]
    init_from: Option<PathBuf>,
}

#[derive(Args)]
struct AttackFlags {
    #[arg(long)]
    eps: Option<f32>,
    #[arg(long)]
    theta: Option<f32>,
    /// JSMA pixel budget in percent.
    #[arg(long)]
    gamma: Option<f32>,
    #[arg(long)]
    xi: Option<f32>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    kappa: Option<f32>,
    #[arg(long)]
    bsearch: Option<usize>,
    #[arg(long)]
    c_init: Option<f32>,
    /// UAP target fooling rate.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// BA proposal queries per iteration.
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    init_trials: Option<usize>,
    #[arg(long)]
    step_ortho: Option<f32>,
    #[arg(long)]
    step_source: Option<f32>,
}

impl AttackFlags {
    fn overlay(&self, kv: &mut AttackKv) {
        macro_rules! put {
            ($field:expr, $key:literal) => {
                if let Some(v) = $field {
                    kv.set($key, v.to_string());
                }
            };
        }
        put!(self.eps, "eps");
        put!(self.theta, "theta");
        put!(self.gamma, "gamma");
        put!(self.xi, "xi");
        put!(self.iters, "iters");
        put!(self.kappa, "kappa");
        put!(self.bsearch, "bsearch");
        put!(self.c_init, "c-init");
        put!(self.delta, "delta");
        put!(self.max_epochs, "max-epochs");
        put!(self.queries, "queries");
        put!(self.init_trials, "init-trials");
        put!(self.step_ortho, "step-ortho");
        put!(self.step_source, "step-source");
    }
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// fgsm, jsma, uap, ba, or cw.
    #[arg(long)]
    attack: String,
    #[arg(long)]
    data: String,
    /// How many correctly-classified test samples to craft on.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// key=value file with attack parameters.
    #[arg(long)]
    attack_config: Option<PathBuf>,
    /// Built-in parameter preset: mnist or cifar.
    #[arg(long)]
    preset: Option<String>,
    /// Debug: dump clean/adversarial image grids here (PGM/PPM).
    #[arg(long)]
    dump_images: Option<PathBuf>,
    #[command(flatten)]
    flags: AttackFlags,
}

#[derive(Args)]
struct TransferArgs {
    /// Comma-separated source checkpoints.
    #[arg(long, value_delimiter = ',', required = true)]
    sources: Vec<PathBuf>,
    /// Comma-separated target checkpoints.
    #[arg(long, value_delimiter = ',', required = true)]
    targets: Vec<PathBuf>,
    #[arg(long)]
    attack: String,
    #[arg(long)]
    data: String,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output matrix CSV; the JSON manifest lands next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    attack_config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Also render the heatmap here.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[command(flatten)]
    flags: AttackFlags,
}

#[derive(Args)]
struct ReportArgs {
    /// Transfer-matrix CSV produced by `transfer`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    heatmap: PathBuf,
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap uses exit code 2 for usage errors and 0 for --help.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Transfer(args) => cmd_transfer(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_data(desc: &str) -> Result<(Dataset, Dataset)> {
    DatasetDescriptor::parse(desc)?.load()
}

fn recipe_for(id: RosterId, quant: QuantConfig, seed: u64) -> TrainConfig {
    match id {
        RosterId::MnistA | RosterId::MnistB | RosterId::MnistC => {
            TrainConfig::mnist_recipe(quant, seed)
        }
        _ => TrainConfig::cifar_recipe(quant, seed),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let id = RosterId::parse(&args.model)?;
    let quant = QuantConfig::uniform(BitwidthSpec::from_bits(args.bits)?);
    let (mut train_data, test_data) = load_data(&args.data)?;
    if let Some(n) = args.subset {
        train_data = train_data.take(n);
    }
    let mut cfg = recipe_for(id, quant, args.seed);
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = args.batch {
        cfg.batch_size = b;
    }
    cfg.dataset_id = train_data.id.clone();

    let model = match &args.init_from {
        Some(path) => {
            let mut m = checkpoint::load(path)?.with_quant(quant);
            m.set_metadata(id.name(), train_data.id.clone(), args.seed);
            m
        }
        None => {
            let mut m = build_model(entry(id), quant, args.seed)?;
            m.set_metadata(id.name(), train_data.id.clone(), args.seed);
            m
        }
    };
    let (trained, history) = train(model, &cfg, &train_data, &test_data)?;
    for h in &history {
        println!(
            "epoch {}: train_acc {:.4} test_acc {:.4} loss {:.4}",
            h.epoch, h.train_acc, h.test_acc, h.mean_loss
        );
    }
    if let Some(path) = &args.history {
        crate::io::atomic_write(path, history_csv(&history).as_bytes())?;
    }
    checkpoint::save(&trained, &args.out)?;
    let acc = evaluate_accuracy(&trained, &test_data)?;
    println!(
        "saved {} ({} params, bits {}) to {} — test accuracy {:.4}",
        trained.id(),
        trained.param_count(),
        args.bits,
        args.out.display(),
        acc
    );
    Ok(())
}

fn resolve_attack(
    attack: &str,
    config_path: Option<&Path>,
    preset_name: Option<&str>,
    flags: &AttackFlags,
) -> Result<AttackConfig> {
    let mut map = BTreeMap::new();
    if let Some(name) = preset_name {
        map.extend(parse_kv(preset(name)?)?);
    }
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        map.extend(parse_kv(&text)?);
    }
    let mut kv = AttackKv::new(map, Some(attack))?;
    flags.overlay(&mut kv);
    kv.build()
}

/// First `n` indices of a seeded permutation that the model classifies
/// correctly.
fn pick_correct(model: &Model, data: &Dataset, n: usize, seed: u64) -> Result<Vec<usize>> {
    let mask = crate::transfer::correct_mask(model, data)?;
    let indices: Vec<usize> = permutation(seed, data.len())
        .into_iter()
        .filter(|&i| mask[i])
        .take(n)
        .collect();
    if indices.len() < n {
        return Err(Error::Selection { requested: n, available: mask.iter().filter(|&&c| c).count() });
    }
    Ok(indices)
}

fn cmd_attack(args: AttackArgs) -> Result<()> {
    let model = checkpoint::load(&args.ckpt)?;
    let cfg = resolve_attack(&args.attack, args.attack_config.as_deref(), args.preset.as_deref(), &args.flags)?;
    let (_, test_data) = load_data(&args.data)?;
    if test_data.sample_shape() != model.input_shape() {
        return Err(Error::Shape(format!(
            "data shape {:?} does not match model input {:?}",
            test_data.sample_shape(),
            model.input_shape()
        )));
    }
    let indices = pick_correct(&model, &test_data, args.samples, args.seed)?;
    let (batch, labels) = test_data.gather(&indices);
    let adv = crate::attacks::run_attack(&model, &batch, &labels, &indices, &cfg, args.seed)?;
    adv.validate_budget()?;
    advset::save(&adv, &args.out)?;

    // Sidecar metadata so the fixed container stays exactly its format.
    let ckpt_bytes = checkpoint::to_bytes(&model);
    let sidecar = serde_json::json!({
        "attack": cfg,
        "source_model": model.id(),
        "source_checkpoint_digest": checkpoint::digest_hex(&ckpt_bytes),
        "seed": args.seed,
        "samples": adv.len(),
        "source_success_rate": adv.source_success_rate(),
        "mean_l2_distortion": adv.l2_distortion.iter().sum::<f64>() / adv.len().max(1) as f64,
        "indices": indices,
    });
    let sidecar_path = args.out.with_extension("qadv.json");
    crate::io::atomic_write(&sidecar_path, serde_json::to_string_pretty(&sidecar).unwrap().as_bytes())?;

    if let Some(dir) = &args.dump_images {
        dump_images(&adv, dir)?;
    }
    println!(
        "{} on {}: {} samples, source success {:.3}, wrote {}",
        cfg.id(),
        model.id(),
        adv.len(),
        adv.source_success_rate(),
        args.out.display()
    );
    Ok(())
}

fn cmd_transfer(args: TransferArgs) -> Result<()> {
    let cfg = resolve_attack(&args.attack, args.attack_config.as_deref(), args.preset.as_deref(), &args.flags)?;
    let (_, test_data) = load_data(&args.data)?;

    let load_all = |paths: &[PathBuf]| -> Result<Vec<(Model, String)>> {
        paths
            .iter()
            .map(|p| {
                let m = checkpoint::load(p)?;
                let digest = checkpoint::digest_hex(&checkpoint::to_bytes(&m));
                Ok((m, digest))
            })
            .collect()
    };
    let sources = load_all(&args.sources)?;
    let targets = load_all(&args.targets)?;
    let src_refs: Vec<&Model> = sources.iter().map(|(m, _)| m).collect();
    let tgt_refs: Vec<&Model> = targets.iter().map(|(m, _)| m).collect();

    let run: TransferRun = run_transfer(
        &src_refs,
        &tgt_refs,
        &cfg,
        &test_data,
        args.repeats,
        args.samples,
        args.seed,
    )?;
    matrix::save(&run.matrix, &args.out)?;

    let model_refs = |models: &[(Model, String)], labels: &[String]| -> Vec<manifest::ModelRef> {
        models
            .iter()
            .zip(labels.iter())
            .map(|((m, digest), label)| manifest::ModelRef {
                label: label.clone(),
                model_id: m.id().to_string(),
                weight_bits: m.quant().weight_bits.as_bits(),
                activation_bits: m.quant().activation_bits.as_bits(),
                checkpoint_digest: digest.clone(),
            })
            .collect()
    };
    let mani = manifest::RunManifest::from_run(
        &run,
        cfg.clone(),
        args.samples,
        model_refs(&sources, &run.matrix.row_labels),
        model_refs(&targets, &run.matrix.col_labels[..run.matrix.n_targets()].to_vec()),
    );
    let mani_path = args.out.with_extension("manifest.json");
    mani.save(&mani_path)?;
    if let Some(path) = &args.heatmap {
        svg::save(&run.matrix, path)?;
    }
    println!("{}", matrix::to_csv(&run.matrix));
    println!("wrote {} and {}", args.out.display(), mani_path.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let m = matrix::load(&args.input)?;
    m.validate()?;
    svg::save(&m, &args.heatmap)?;
    println!("wrote {}", args.heatmap.display());
    Ok(())
}

/// Debug-only PGM/PPM dumps of the first few clean/adversarial pairs.
fn dump_images(adv: &crate::attacks::AdversarialBatch, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let shape = &adv.clean.shape()[1..];
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let write_image = |path: PathBuf, pixels: &[f32]| -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        if c == 1 {
            out.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
            out.extend(pixels.iter().map(|&v| (v * 255.0).round() as u8));
        } else {
            out.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
            // CHW planes to interleaved RGB rows.
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..3.min(c) {
                        out.push((pixels[ch * h * w + y * w + x] * 255.0).round() as u8);
                    }
                }
            }
        }
        crate::io::atomic_write(&path, &out)
    };
    let ext = if c == 1 { "pgm" } else { "ppm" };
    for i in 0..adv.len().min(10) {
        write_image(dir.join(format!("clean_{i:02}.{ext}")), adv.clean.row(i))?;
        write_image(dir.join(format!("adv_{i:02}.{ext}")), adv.adversarial.row(i))?;
    }
    Ok(())
}
