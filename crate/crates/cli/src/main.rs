//! Command-line surface for the fisheye segmentation toolkit: synthetic
//! scene generation, fisheye warping, gradient verification, toy
//! multi-domain training, and mIoU evaluation. Every command is
//! deterministic under a fixed --seed and all outputs are bit-exact
//! across repeated identical invocations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fisheye_seg::checkpoint::{load_checkpoint, save_checkpoint};
use fisheye_seg::deform::{
    deformable_conv2d, deformable_conv2d_backward, factorized_rdc_1d, factorized_rdc_1d_backward,
    restricted_deformable_conv2d, restricted_deformable_conv2d_backward, Axis, KernelGeometry,
};
use fisheye_seg::eval::ConfusionMatrix;
use fisheye_seg::fisheye::{
    build_remap_grid, sample_focal, warp_image, warp_labels, FocalSpec, ProjectionParams,
    ZoomAugmentConfig,
};
use fisheye_seg::gradcheck::finite_difference_check;
use fisheye_seg::labels::LabelImage;
use fisheye_seg::netpbm::{write_pgm, write_ppm};
use fisheye_seg::ops::conv::{conv2d, conv2d_backward};
use fisheye_seg::ops::loss::softmax_cross_entropy;
use fisheye_seg::ops::norm::{batch_normalize, batch_normalize_backward, Mode, NormStatistics};
use fisheye_seg::synth::{generate_scene, SceneSpec};
use fisheye_seg::tensor::Tensor;
use fisheye_seg::train::bank::DomainNormBank;
use fisheye_seg::train::config::TrainConfig;
use fisheye_seg::train::data::{assemble_batch, draw_indices, labels_to_map, Dataset};
use fisheye_seg::train::hlw::LossWeights;
use fisheye_seg::train::net::{ToyNet, ToyNetConfig};
use fisheye_seg::train::schedule::Schedule;
use fisheye_seg::train::trainer::train_step;

#[derive(Parser)]
#[command(name = "fisheye-seg", version, about = "Fisheye segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate procedural image/label pairs.
    Synth {
        /// Output directory for NAME.ppm / NAME.pgm pairs.
        #[arg(long)]
        out: PathBuf,
        /// Number of pairs to generate.
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Shapes drawn per scene.
        #[arg(long, default_value_t = 6)]
        shapes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Warp a dataset of pairs through the fisheye zoom augmentation.
    Warp {
        /// Source directory of NAME.ppm / NAME.pgm pairs.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fixed focal length; mutually exclusive with --focal-min/max.
        #[arg(long, conflicts_with_all = ["focal_min", "focal_max"])]
        focal: Option<f64>,
        #[arg(long, requires = "focal_max")]
        focal_min: Option<f64>,
        #[arg(long, requires = "focal_min")]
        focal_max: Option<f64>,
        /// Output (target) extents.
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        /// Label written where no conventional pixel maps.
        #[arg(long, default_value_t = 255)]
        void_class: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Verify an operator's analytic gradients against finite differences.
    Gradcheck {
        /// One of: dc, rdc, frdc, conv, bn, ce.
        #[arg(long)]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Corrupt one gradient entry to demonstrate the check catches it.
        #[arg(long, default_value_t = false)]
        inject_fault: bool,
    },
    /// Train a toy model; one --data directory per domain, in domain order.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset and write per-class IoU CSV.
    Eval {
        /// Checkpoint directory produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Domain whose head and statistics to use.
        #[arg(long, default_value_t = 0)]
        domain: usize,
        /// Output metrics CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth {
            out,
            count,
            height,
            width,
            classes,
            shapes,
            seed,
        } => cmd_synth(&out, count, height, width, classes, shapes, seed),
        Command::Warp {
            input,
            out,
            focal,
            focal_min,
            focal_max,
            height,
            width,
            void_class,
            seed,
        } => {
            let spec = match (focal, focal_min, focal_max) {
                (Some(f), None, None) => FocalSpec::Fixed(f),
                (None, Some(min), Some(max)) => FocalSpec::Random { min, max },
                _ => bail!("specify either --focal or both --focal-min and --focal-max"),
            };
            cmd_warp(&input, &out, spec, (height, width), void_class, seed)
        }
        Command::Gradcheck {
            variant,
            seed,
            tolerance,
            inject_fault,
        } => cmd_gradcheck(&variant, seed, tolerance, inject_fault),
        Command::Train { config, data, out } => cmd_train(&config, &data, &out),
        Command::Eval {
            checkpoint,
            data,
            domain,
            out,
        } => cmd_eval(&checkpoint, &data, domain, &out),
    }
}

fn cmd_synth(
    out: &Path,
    count: usize,
    height: usize,
    width: usize,
    classes: usize,
    shapes: usize,
    seed: u64,
) -> Result<()> {
    if count == 0 {
        bail!("--count must be positive");
    }
    let spec = SceneSpec {
        height,
        width,
        classes,
        shapes,
        seed,
    };
    spec.validate()?;
    fs::create_dir_all(out)?;
    for i in 0..count {
        let (image, labels) = generate_scene(&spec, i as u64)?;
        write_ppm(&out.join(format!("scene_{i:04}.ppm")), &image)?;
        write_pgm(&out.join(format!("scene_{i:04}.pgm")), &labels)?;
    }
    println!("wrote {count} pairs to {}", out.display());
    Ok(())
}

fn cmd_warp(
    input: &Path,
    out: &Path,
    focal: FocalSpec,
    target_extents: (usize, usize),
    void_class: u8,
    seed: u64,
) -> Result<()> {
    focal.validate()?;
    let dataset = Dataset::load_dir(input).context("loading source dataset")?;
    fs::create_dir_all(out)?;
    let config = ZoomAugmentConfig {
        focal,
        output_extents: target_extents,
        fill: [0, 0, 0],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = String::new();
    for sample in &dataset.samples {
        let f = sample_focal(&config, &mut rng);
        let params = ProjectionParams::centered(
            f,
            target_extents,
            (sample.image.height, sample.image.width),
        )?;
        let grid = build_remap_grid(
            &params,
            target_extents,
            (sample.image.height, sample.image.width),
        )?;
        let image = warp_image(&sample.image, &grid, config.fill)?;
        let labels = warp_labels(&sample.labels, &grid, void_class)?;
        let image_path = out.join(format!("{}.ppm", sample.name));
        let label_path = out.join(format!("{}.pgm", sample.name));
        write_ppm(&image_path, &image)?;
        write_pgm(&label_path, &labels)?;
        manifest.push_str(&format!(
            "{}\t{}\t{f}\n",
            image_path.display(),
            label_path.display()
        ));
    }
    fs::write(out.join("manifest.tsv"), manifest)?;
    println!("warped {} pairs to {}", dataset.len(), out.display());
    Ok(())
}

fn random_tensor(shape: [usize; 4], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.iter().product())
        .map(|_| rng.gen_range(-scale..scale))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Offsets away from the bilinear kinks at integer coordinates so the
/// central differences stay on one linear piece.
fn kink_safe_offsets(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.iter().product())
        .map(|_| {
            let base = rng.gen_range(-2i64..=2) as f64;
            let frac = rng.gen_range(0.05..0.45);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            base + sign * frac
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn cmd_gradcheck(variant: &str, seed: u64, tolerance: f64, inject_fault: bool) -> Result<()> {
    const EPSILON: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all_passed = true;
    for instance in 0..5 {
        let (mut x, mut analytic, f): (Vec<f64>, Vec<f64>, Box<dyn FnMut(&[f64]) -> f64>) =
            match variant {
                "dc" | "rdc" => {
                    let restricted = variant == "rdc";
                    let geometry = KernelGeometry::new(3, 3, 1)?;
                    let input = random_tensor([1, 2, 5, 5], 1.0, &mut rng);
                    let weights = random_tensor([2, 2, 3, 3], 0.7, &mut rng);
                    let bias = vec![0.1, -0.2];
                    let off_c = if restricted { 16 } else { 18 };
                    let offsets = kink_safe_offsets([1, off_c, 5, 5], &mut rng);
                    let proj = random_tensor([1, 2, 5, 5], 1.0, &mut rng);
                    let grads = if restricted {
                        restricted_deformable_conv2d_backward(
                            &input, &weights, &bias, &offsets, &geometry, &proj,
                        )?
                    } else {
                        deformable_conv2d_backward(
                            &input, &weights, &bias, &offsets, &geometry, &proj,
                        )?
                    };
                    let shape = offsets.shape();
                    let f = Box::new(move |o: &[f64]| {
                        let t = Tensor::from_vec(shape, o.to_vec()).unwrap();
                        let out = if restricted {
                            restricted_deformable_conv2d(&input, &weights, &bias, &t, &geometry)
                        } else {
                            deformable_conv2d(&input, &weights, &bias, &t, &geometry)
                        }
                        .unwrap();
                        out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
                    });
                    (offsets.data().to_vec(), grads.offsets.data().to_vec(), f)
                }
                "frdc" => {
                    let input = random_tensor([1, 2, 5, 5], 1.0, &mut rng);
                    let weights = random_tensor([2, 2, 3, 1], 0.7, &mut rng);
                    let bias = vec![0.1, -0.2];
                    let offsets = kink_safe_offsets([1, 2, 5, 5], &mut rng);
                    let proj = random_tensor([1, 2, 5, 5], 1.0, &mut rng);
                    let grads = factorized_rdc_1d_backward(
                        &input,
                        &weights,
                        &bias,
                        &offsets,
                        Axis::Vertical,
                        1,
                        &proj,
                    )?;
                    let shape = offsets.shape();
                    let f = Box::new(move |o: &[f64]| {
                        let t = Tensor::from_vec(shape, o.to_vec()).unwrap();
                        let out =
                            factorized_rdc_1d(&input, &weights, &bias, &t, Axis::Vertical, 1)
                                .unwrap();
                        out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
                    });
                    (offsets.data().to_vec(), grads.offsets.data().to_vec(), f)
                }
                "conv" => {
                    let input = random_tensor([1, 2, 5, 5], 1.0, &mut rng);
                    let weights = random_tensor([2, 2, 3, 3], 0.7, &mut rng);
                    let proj = random_tensor([1, 2, 5, 5], 1.0, &mut rng);
                    let (_, gw, _) = conv2d_backward(&input, &weights, 1, 1, 1, &proj)?;
                    let shape = weights.shape();
                    let bias = vec![0.0, 0.0];
                    let f = Box::new(move |w: &[f64]| {
                        let t = Tensor::from_vec(shape, w.to_vec()).unwrap();
                        let out = conv2d(&input, &t, &bias, 1, 1, 1).unwrap();
                        out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
                    });
                    (weights.data().to_vec(), gw.data().to_vec(), f)
                }
                "bn" => {
                    let input = random_tensor([2, 2, 4, 4], 1.0, &mut rng);
                    let scale = vec![1.2, 0.8];
                    let shift = vec![0.1, -0.3];
                    let proj = random_tensor([2, 2, 4, 4], 1.0, &mut rng);
                    let mut stats = NormStatistics::new(2);
                    let (_, cache) =
                        batch_normalize(&input, &mut stats, &scale, &shift, Mode::Train, 0.1)?;
                    let (gin, _, _) = batch_normalize_backward(&cache, &proj)?;
                    let shape = input.shape();
                    let f = Box::new(move |x: &[f64]| {
                        let t = Tensor::from_vec(shape, x.to_vec()).unwrap();
                        let mut stats = NormStatistics::new(2);
                        let (out, _) =
                            batch_normalize(&t, &mut stats, &scale, &shift, Mode::Train, 0.1)
                                .unwrap();
                        out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
                    });
                    (input.data().to_vec(), gin.data().to_vec(), f)
                }
                "ce" => {
                    let logits = random_tensor([1, 3, 4, 4], 2.0, &mut rng);
                    let mut labels = fisheye_seg::labels::LabelMap::new(1, 4, 4, 0);
                    for v in labels.data.iter_mut() {
                        *v = rng.gen_range(0..3u8);
                    }
                    let (_, grad) = softmax_cross_entropy(&logits, &labels, 255, 2.0)?;
                    let shape = logits.shape();
                    let f = Box::new(move |x: &[f64]| {
                        let t = Tensor::from_vec(shape, x.to_vec()).unwrap();
                        softmax_cross_entropy(&t, &labels, 255, 2.0).unwrap().0
                    });
                    (logits.data().to_vec(), grad.data().to_vec(), f)
                }
                other => bail!("unknown gradcheck variant {other:?}; use dc|rdc|frdc|conv|bn|ce"),
            };
        if inject_fault {
            let i = analytic.len() / 2;
            analytic[i] = analytic[i] * 1.5 + 1.0;
        }
        let report = finite_difference_check(&mut x, &analytic, f, EPSILON, tolerance)?;
        println!("{variant} instance {instance}: {report}");
        all_passed &= report.passed;
    }
    if !all_passed {
        bail!("gradient check failed for {variant}");
    }
    Ok(())
}

fn build_net(config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(ToyNet, DomainNormBank)> {
    let net_config = ToyNetConfig {
        in_channels: config.in_channels,
        channels: config.channels,
        blocks: config.blocks.clone(),
        classes: config.classes,
        domains: config.domains,
        aux_channels: config.aux_channels,
        input_norm: config.input_norm,
    };
    let net = ToyNet::new(net_config, rng)?;
    let mut bank = DomainNormBank::new(net.norm_channels().to_vec());
    for _ in 0..config.domains {
        bank.register_domain();
    }
    Ok((net, bank))
}

fn cmd_train(config_path: &Path, data: &[PathBuf], out: &Path) -> Result<()> {
    let config = TrainConfig::from_file(config_path)?;
    if data.len() != config.domains {
        bail!(
            "config declares {} domains but {} --data directories were given",
            config.domains,
            data.len()
        );
    }
    let datasets: Vec<Dataset> = data
        .iter()
        .map(|d| Dataset::load_dir(d).with_context(|| format!("loading {}", d.display())))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut net, mut bank) = build_net(&config, &mut rng)?;
    let stride = net.output_stride();

    let weights = LossWeights {
        alpha: config.alpha,
        beta: config.beta,
        gamma: config.gamma,
        k: config.domains - 1,
    };
    let mut schedule = Schedule::with_max_iter(config.max_iter);
    schedule.base_lr = config.base_lr;
    schedule.momentum = config.momentum;
    schedule.weight_decay = config.weight_decay;
    schedule.offset_lr_multiplier = config.offset_lr_multiplier;

    fs::create_dir_all(out)?;
    let mut log = String::from("iter,lr,");
    for d in 0..config.domains {
        log.push_str(&format!("main{d},"));
    }
    for d in 0..config.domains {
        log.push_str(&format!("aux{d},"));
    }
    log.push_str("total\n");

    for iter in 0..config.max_iter {
        let mut batches = Vec::with_capacity(config.domains);
        for dataset in &datasets {
            let indices = draw_indices(dataset, config.batch, &mut rng);
            let batch = assemble_batch(dataset, &indices, None, config.void_class, &mut rng)?;
            let refs: Vec<&LabelImage> = batch.labels.iter().collect();
            let labels = labels_to_map(&refs, stride)?;
            batches.push((batch.images, labels));
        }
        let losses = train_step(
            &mut net,
            &mut bank,
            &batches,
            &weights,
            &schedule,
            iter,
            config.loss_scale,
            config.void_class,
        )?;
        let mains: Vec<String> = losses.main.iter().map(|v| format!("{v:.6}")).collect();
        let auxes: Vec<String> = losses.aux.iter().map(|v| format!("{v:.6}")).collect();
        log.push_str(&format!(
            "{iter},{:.8},{},{},{:.6}\n",
            losses.lr,
            mains.join(","),
            auxes.join(","),
            losses.total
        ));
        if iter % 100 == 0 || iter + 1 == config.max_iter {
            println!(
                "iter {iter}: lr {:.5} total {:.4} main0 {:.4}",
                losses.lr, losses.total, losses.main[0]
            );
        }
    }
    fs::write(out.join("log.csv"), log)?;

    let tensors: Vec<(String, Tensor)> = net
        .params_mut()
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();
    let refs: Vec<(String, &Tensor)> = tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
    save_checkpoint(out, &refs)?;
    for d in 0..config.domains {
        bank.save_domain(d, &out.join(format!("domain{d}.stats")))?;
    }
    fs::write(out.join("config.txt"), config.serialize())?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, data: &Path, domain: usize, out: &Path) -> Result<()> {
    let config = TrainConfig::from_file(&checkpoint.join("config.txt"))?;
    if domain >= config.domains {
        bail!("domain {domain} out of range for {} domains", config.domains);
    }
    // Initialization is irrelevant; every parameter is overwritten below.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut net, mut bank) = build_net(&config, &mut rng)?;
    let loaded = load_checkpoint(checkpoint)?;
    let by_name: std::collections::BTreeMap<String, Tensor> = loaded.into_iter().collect();
    for param in net.params_mut() {
        let tensor = by_name
            .get(&param.name)
            .with_context(|| format!("checkpoint is missing parameter {}", param.name))?;
        if tensor.shape() != param.value.shape() {
            bail!(
                "parameter {} has shape {:?} in the checkpoint, expected {:?}",
                param.name,
                tensor.shape(),
                param.value.shape()
            );
        }
        param.value = tensor.clone();
    }
    for d in 0..config.domains {
        bank.load_domain(d, &checkpoint.join(format!("domain{d}.stats")))?;
    }

    let dataset = Dataset::load_dir(data)?;
    let mut cm = ConfusionMatrix::new(config.classes, config.void_class);
    for sample in &dataset.samples {
        let refs = [&sample.image];
        let input = fisheye_seg::train::data::images_to_tensor(&refs)?;
        let (logits, _) = net.domain_forward(&input, domain, &mut bank, Mode::Inference)?;
        let prediction = argmax_labels(&logits, 0);
        let upsampled = prediction.resize_nearest(sample.labels.height, sample.labels.width);
        cm.accumulate(&upsampled, &sample.labels)?;
    }
    fs::write(out, cm.metrics_csv())?;
    let miou = cm.mean_iou()?;
    println!("mIoU {miou:.6} over {} images", dataset.len());
    Ok(())
}

/// Argmax over the channel axis of one batch entry.
fn argmax_labels(logits: &Tensor, batch: usize) -> LabelImage {
    let [_, c, h, w] = logits.shape();
    let mut out = LabelImage::new(h, w, 0);
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for k in 0..c {
                let v = logits.at(batch, k, y, x);
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            out.set(y, x, best as u8);
        }
    }
    out
}
