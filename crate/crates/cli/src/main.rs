use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crossres_cli::{
    build_train_samples, encode_external, encode_simulate, evaluate, load_tiers, plan_gops,
    save_tiers, structure_gop, synthesize_sequence, synthetic_sequence, SEARCH_RADIUS,
};
use crossres_codec::EncoderConfig;
use crossres_model::{train_step, GopMode, ModelConfig, SynthModel, Trainer};
use crossres_rd::{bd_psnr, bd_rate, RdComparison, RdCurve};
use crossres_video::{load_yuv, write_yuv, Sequence};

#[derive(Parser)]
#[command(name = "crossres", about = "Cross-resolution video synthesis toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Ldp,
    Ra,
}

impl From<ModeArg> for GopMode {
    fn from(m: ModeArg) -> GopMode {
        match m {
            ModeArg::Ldp => GopMode::Ldp,
            ModeArg::Ra => GopMode::Ra,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CodecArg {
    Sim,
    External,
}

#[derive(Args)]
struct InputVideo {
    /// Raw 8-bit planar YUV 4:2:0 input.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    /// Frame count; 0 reads to end of file.
    #[arg(long, default_value_t = 0)]
    frames: usize,
}

impl InputVideo {
    fn load(&self) -> Result<Sequence> {
        load_yuv(&self.input, self.width, self.height, self.frames)
            .with_context(|| format!("loading {}", self.input.display()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Code a sequence into the mixed-resolution tier bundle.
    Encode {
        #[command(flatten)]
        video: InputVideo,
        #[arg(long, default_value_t = 8)]
        gop: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Ldp)]
        mode: ModeArg,
        /// Intra-frame QP; inter frames code 5 lower.
        #[arg(long, default_value_t = 32)]
        qp: i32,
        #[arg(long, default_value_t = SEARCH_RADIUS)]
        search: i32,
        #[arg(long, value_enum, default_value_t = CodecArg::Sim)]
        codec: CodecArg,
        /// Key-value config for the external encoder binary.
        #[arg(long)]
        encoder_config: Option<PathBuf>,
        /// Output directory for manifest.json, hr.yuv, lr.yuv.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Super-resolve the inter frames of a tier bundle.
    Synthesize {
        /// Tier bundle directory produced by `encode`.
        #[arg(long)]
        tiers: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Output YUV at the original geometry.
        #[arg(long)]
        output: PathBuf,
        /// Optional JSON report path (PSNR vs. a reference).
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Desk-scale overfit on the first GoP of the input (or synthetic
    /// content when no input is given).
    Train {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 2)]
        gop: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Ldp)]
        mode: ModeArg,
        #[arg(long, default_value_t = 32)]
        qp: i32,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Where the trained weight file goes.
        #[arg(long)]
        weights: PathBuf,
        /// Optional JSON loss trace.
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// PSNR report between two YUV files, or Bjontegaard deltas between two
    /// rate-quality point files.
    Metrics {
        #[arg(long, requires = "test")]
        reference: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        height: usize,
        #[arg(long, default_value_t = 0)]
        frames: usize,
        /// Total bit count to carry into the report.
        #[arg(long, default_value_t = 0.0)]
        bits: f64,
        /// JSON file of [bitrate_kbps, psnr_db] pairs (anchor curve).
        #[arg(long, requires = "test_points")]
        anchor_points: Option<PathBuf>,
        #[arg(long)]
        test_points: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Finite-difference self-test of the model gradients.
    Gradcheck {
        #[arg(long, default_value_t = 23)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        channels: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Encode { video, gop, mode, qp, search, codec, encoder_config, out_dir } => {
            let seq = video.load()?;
            let gops = structure_gop(&seq, gop, mode.into(), qp)?;
            let tiers = match codec {
                CodecArg::Sim => encode_simulate(&seq, &gops, search)?,
                CodecArg::External => {
                    let path = encoder_config
                        .ok_or_else(|| anyhow::anyhow!("--encoder-config required with --codec external"))?;
                    let cfg = EncoderConfig::load(&path)?;
                    encode_external(&seq, &gops, &cfg)?
                }
            };
            save_tiers(&out_dir, &tiers)?;
            println!(
                "coded {} frames, {:.0} bits total -> {}",
                tiers.frames.len(),
                tiers.total_bits(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Synthesize { tiers, weights, output, reference, report } => {
            let tiers = load_tiers(&tiers)?;
            let cfg = ModelConfig { channels: 64, mode: tiers.mode };
            let mut model = SynthModel::init(cfg, 0);
            model
                .load_into(&weights)
                .with_context(|| format!("loading weights {}", weights.display()))?;
            let gops = plan_gops(tiers.frames.len(), tiers.gop_len, tiers.mode, tiers.qp_intra)?;
            let out = synthesize_sequence(&tiers, &gops, &model)?;
            write_yuv(&output, &out.frames)?;
            println!("synthesized {} frames -> {}", out.frames.len(), output.display());
            if let (Some(reference), Some(report_path)) = (reference, report) {
                let orig = load_yuv(&reference, tiers.orig_width, tiers.orig_height, out.frames.len())?
                    .crop_to_original();
                let rep = evaluate(&orig, &out, tiers.total_bits())?;
                std::fs::write(&report_path, serde_json::to_string_pretty(&rep)?)?;
                println!("mean PSNR-Y {:.3} dB -> {}", rep.mean_psnr_y, report_path.display());
            }
            Ok(())
        }
        Command::Train { input, width, height, gop, mode, qp, steps, lr, seed, weights, loss_log } => {
            let seq = match input {
                Some(path) => load_yuv(&path, width, height, 0)?,
                None => synthetic_sequence(width, height, gop, seed),
            };
            let gops = structure_gop(&seq, gop, mode.into(), qp)?;
            let tiers = encode_simulate(&seq, &gops[..1], SEARCH_RADIUS)?;
            let samples = build_train_samples(&seq, &tiers, &gops[0])?;
            if samples.is_empty() {
                bail!("first GoP has no inter frames to train on");
            }
            let mut model = SynthModel::init(ModelConfig { channels: 64, mode: mode.into() }, seed);
            let mut trainer = Trainer::new(&model, lr);
            let mut losses = Vec::with_capacity(steps);
            for step in 0..steps {
                let loss = train_step(&mut model, &samples, &mut trainer)?;
                losses.push(loss);
                if step % 10 == 0 || step + 1 == steps {
                    println!("step {:4}  loss {loss:.6}", step + 1);
                }
            }
            model.save(&weights)?;
            println!("trained {steps} steps -> {}", weights.display());
            if let Some(path) = loss_log {
                std::fs::write(&path, serde_json::to_string_pretty(&losses)?)?;
            }
            Ok(())
        }
        Command::Metrics {
            reference,
            test,
            width,
            height,
            frames,
            bits,
            anchor_points,
            test_points,
            output,
        } => {
            let json = if let (Some(a), Some(t)) = (anchor_points, test_points) {
                let parse = |p: &PathBuf| -> Result<RdCurve> {
                    let text = std::fs::read_to_string(p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    let pts: Vec<(f64, f64)> = serde_json::from_str(&text)
                        .with_context(|| format!("parsing {}", p.display()))?;
                    Ok(RdCurve::new(pts)?)
                };
                let anchor = parse(&a)?;
                let test_curve = parse(&t)?;
                let cmp = RdComparison {
                    anchor_points: anchor.points().to_vec(),
                    test_points: test_curve.points().to_vec(),
                    bd_rate_percent: bd_rate(&anchor, &test_curve)?,
                    bd_psnr_db: bd_psnr(&anchor, &test_curve)?,
                };
                println!(
                    "BD-Rate {:+.3}%  BD-PSNR {:+.4} dB",
                    cmp.bd_rate_percent, cmp.bd_psnr_db
                );
                serde_json::to_string_pretty(&cmp)?
            } else if let (Some(r), Some(t)) = (reference, test) {
                if width == 0 || height == 0 {
                    bail!("--width and --height are required for YUV comparison");
                }
                let a = load_yuv(&r, width, height, frames)?.crop_to_original();
                let b = load_yuv(&t, width, height, frames)?.crop_to_original();
                let rep = evaluate(&a, &b, bits)?;
                println!(
                    "mean PSNR Y {:.3}  U {:.3}  V {:.3} dB over {} frames",
                    rep.mean_psnr_y,
                    rep.mean_psnr_u,
                    rep.mean_psnr_v,
                    rep.frames.len()
                );
                serde_json::to_string_pretty(&rep)?
            } else {
                bail!("provide --reference/--test YUVs or --anchor-points/--test-points files");
            };
            if let Some(path) = output {
                std::fs::write(&path, json)?;
            }
            Ok(())
        }
        Command::Gradcheck { seed, channels } => {
            use crossres_tensor::{grad_check_sampled, Tape, Tensor, Val};
            let cfg = ModelConfig { channels, mode: GopMode::Ldp };
            let model = SynthModel::init_jittered(cfg, seed);
            let mk = |shape: &[usize], s: u64| -> Tensor<f64> {
                let mut state = s | 1;
                Tensor::from_fn(shape.to_vec(), |_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    ((state >> 40) as f64 / (1u64 << 24) as f64) * 0.8 + 0.1
                })
            };
            let mut inputs: Vec<Tensor<f64>> =
                (0..3).map(|i| mk(&[1, 8, 8], seed * 31 + i)).collect();
            inputs.push(mk(&[1, 16, 16], seed * 31 + 9));
            let err = grad_check_sampled(
                |tape: &mut Tape<f64>, vals: &[Val]| {
                    let mut binder = crossres_model::Binder::new(tape, false);
                    let m = model.bind(&mut binder);
                    m.synthesize(tape, &vals[..3], &vals[3..]).map_err(|e| {
                        crossres_tensor::TensorError::InvalidArgument {
                            op: "synthesize",
                            msg: e.to_string(),
                        }
                    })
                },
                &inputs,
                1e-6f64,
                8,
                seed,
            )?;
            println!("end-to-end gradient check: max relative error {err:.3e}");
            if err >= 1e-3 {
                bail!("gradient check failed: {err:.3e} >= 1e-3");
            }
            Ok(())
        }
    }
}
