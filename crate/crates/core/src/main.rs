use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use posecue::camera::{CameraIntrinsics, PoseSE3};
use posecue::checkpoint;
use posecue::config::RunConfig;
use posecue::dataset::{render_sequence, write_sequence};
use posecue::diagnostics::{gradient_outcomes, selftest, CheckOutcome};
use posecue::feature_flow::{caffe_forward, write_flow};
use posecue::image_io::{load_ppm, save_pgm};
use posecue::networks::Model;
use posecue::odometry::{evaluate, parse_kitti_poses, trajectory_svg, AteMode, SegmentConfig};
use posecue::training::{evaluate_training, HeldOutEval, Trainer};
use posecue::{PipelineError, Result};
use posecue_tensor::{Graph, Tensor};

#[derive(Parser)]
#[command(name = "posecue", version, about = "Self-supervised depth and pose toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shortcut for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        cfg.sync_scene();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Snippet,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic sequence into a manifest directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        frames: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train on synthetic snippets; writes checkpoint, config and report.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Held-out snippets used for the report.
        #[arg(long, default_value_t = 16)]
        held_out: u64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Feature flow between two PPM frames from the frozen branch.
    Flow {
        reference: PathBuf,
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// 8-bit PGM of the confidence map.
        #[arg(long)]
        confidence: Option<PathBuf>,
        /// Zero-based pyramid stage; defaults to the coarsest, whose
        /// features are the most distinctive.
        #[arg(long)]
        stage: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Target→reference pose for a PPM frame pair.
    InferPose {
        reference: PathBuf,
        target: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// File holding `fx fy cx cy`; defaults to the synthetic camera.
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare two KITTI pose files (estimate, reference).
    EvalOdometry {
        estimate: PathBuf,
        reference: PathBuf,
        #[arg(long, value_enum, default_value = "snippet")]
        mode: ModeArg,
        /// Comma-separated segment lengths in meters, or `kitti`.
        #[arg(long, default_value = "2,4,6,8")]
        segments: String,
        /// Also print an aligned table.
        #[arg(long)]
        table: bool,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Finite-difference checks of every differentiable stage.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// All invariant suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::Argument(format!("{}: {e}", path.display())))
}

fn print_outcomes(outcomes: &[CheckOutcome]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    for o in outcomes {
        writeln!(out, "{}", o.line())?;
        if let Some(secs) = o.seconds {
            eprintln!("timing {} seconds={secs:.2}", o.name);
        }
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::Data(format!("failed checks: {}", failed.join(","))))
    }
}

fn segments_arg(s: &str) -> Result<SegmentConfig> {
    if s == "kitti" {
        return Ok(SegmentConfig::kitti());
    }
    let lengths = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().ok().filter(|v| *v > 0.0))
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| PipelineError::config("segments", format!("expected positive lengths, got {s:?}")))?;
    Ok(SegmentConfig { lengths, ..SegmentConfig::default() })
}

fn check_frame(img: &Tensor<f32>, cfg: &RunConfig, path: &Path) -> Result<()> {
    let want = [3, cfg.model.height, cfg.model.width];
    if img.shape() != want {
        return Err(PipelineError::Argument(format!(
            "{} is {:?}, model expects {want:?}",
            path.display(),
            img.shape()
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, frames, cfg } => {
            let cfg = cfg.resolve()?;
            let seq = render_sequence(cfg.model.seed, frames, &cfg.train.scene, &cfg.train.motion)?;
            write_sequence(&out, &seq)?;
            println!("frames={} dir={}", seq.frames.len(), out.display());
        }
        Command::Train { out, held_out, cfg } => {
            let cfg = cfg.resolve()?;
            std::fs::create_dir_all(&out)?;
            let start = Instant::now();
            let model = Model::<f32>::new(cfg.model.clone())?;
            let mut trainer = Trainer::new(model, cfg.train.clone());
            let before = evaluate_training(&trainer.model, &cfg.train, held_out)?;
            let total = cfg.train.steps;
            let history = trainer.run(|step, r| {
                if step % 100 == 0 || step == total {
                    eprintln!("step={step} photometric={:.6} total={:.6}", r.photometric, r.total);
                }
            })?;
            let after = evaluate_training(&trainer.model, &cfg.train, held_out)?;
            checkpoint::save(&trainer.model.params, &out.join("checkpoint.scpd"))?;
            std::fs::write(out.join("config.txt"), cfg.to_text())?;
            let mut report = String::new();
            report.push_str(&format!("steps={}\nseed={}\n", trainer.step, cfg.model.seed));
            report.push_str(&format!("held_out_snippets={held_out}\n"));
            report.push_str(&format!("photometric_before={}\nphotometric_after={}\n", before.photometric, after.photometric));
            report.push_str(&format!("photometric_ratio={}\n", after.photometric / before.photometric));
            let deg = |e: &HeldOutEval| e.direction_median_deg.map_or("none".to_string(), |d| d.to_string());
            report.push_str(&format!(
                "direction_error_median_deg_before={}\ndirection_error_median_deg={}\n",
                deg(&before),
                deg(&after)
            ));
            report.push_str(&format!("direction_defined_before={}\ndirection_defined={}\n", before.direction_defined, after.direction_defined));
            if let Some(last) = history.last() {
                report.push_str(&format!("final_train_total={}\n", last.total));
            }
            report.push_str(&format!("frozen_fingerprint={:016x}\n", trainer.model.frozen_fingerprint()));
            report.push_str(&format!("fingerprint={:016x}\n", trainer.model.fingerprint()));
            std::fs::write(out.join("report.txt"), &report)?;
            let losses: String =
                history.iter().enumerate().map(|(i, r)| format!("{} {} {} {}\n", i + 1, r.photometric, r.smoothness, r.total)).collect();
            std::fs::write(out.join("losses.txt"), losses)?;
            print!("{report}");
            eprintln!("elapsed_seconds={:.1}", start.elapsed().as_secs_f64());
        }
        Command::Flow { reference, target, out, confidence, stage, cfg } => {
            let cfg = cfg.resolve()?;
            let (r, t) = (load_ppm(&reference)?, load_ppm(&target)?);
            if r.shape() != t.shape() {
                return Err(PipelineError::Argument(format!("frame shapes differ: {:?} vs {:?}", r.shape(), t.shape())));
            }
            let stage = stage.unwrap_or(cfg.model.stages() - 1);
            if stage >= cfg.model.stages() {
                return Err(PipelineError::config("stage", format!("must be below k = {}", cfg.model.stages())));
            }
            let model = Model::<f32>::new(cfg.model.clone())?;
            let g = Graph::new();
            let b = model.params.bind(&g);
            let (fr, ft) = model.net.pose.equivariant_branch(&b, g.constant(r), g.constant(t))?;
            let field = caffe_forward(ft[stage], fr[stage], &cfg.model.flow)?;
            let flow = field.flow.value();
            let mut buf = Vec::new();
            write_flow(&flow, &mut buf)?;
            std::fs::write(&out, buf)?;
            if let Some(p) = confidence {
                let c = field.confidence.value();
                let s = c.shape();
                save_pgm(&c.reshaped(&[s[0], s[1]])?, &p)?;
            }
            let max = flow.max_abs();
            println!("height={} width={} max_abs_flow={max}", flow.shape()[0], flow.shape()[1]);
        }
        Command::InferPose { reference, target, checkpoint: ckpt, intrinsics, cfg } => {
            let cfg = cfg.resolve()?;
            let (r, t) = (load_ppm(&reference)?, load_ppm(&target)?);
            check_frame(&r, &cfg, &reference)?;
            check_frame(&t, &cfg, &target)?;
            let mut model = Model::<f32>::new(cfg.model.clone())?;
            if let Some(p) = ckpt {
                let file = std::fs::File::open(&p).map_err(|e| PipelineError::Argument(format!("{}: {e}", p.display())))?;
                checkpoint::load_into(&mut model.params, std::io::BufReader::new(file))?;
            }
            let k = match intrinsics {
                Some(p) => CameraIntrinsics::parse(&read_text(&p)?)?,
                None => cfg.train.scene.intrinsics(),
            };
            let v = model.predict_pose(&r, &t, &k)?;
            let pose = PoseSE3::from_vector(&v);
            let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
            println!("vector={}", fmt(&v));
            let m = pose.to_row_major();
            for row in m.chunks(4) {
                println!("{}", fmt(row));
            }
        }
        Command::EvalOdometry { estimate, reference, mode, segments, table, svg } => {
            let est = parse_kitti_poses(&read_text(&estimate)?)?;
            let gt = parse_kitti_poses(&read_text(&reference)?)?;
            let mode = match mode {
                ModeArg::Snippet => AteMode::Snippet,
                ModeArg::Full => AteMode::Full,
            };
            let report = evaluate(&est, &gt, &segments_arg(&segments)?, mode)?;
            print!("{}", report.to_key_values());
            if table {
                print!("{}", report.to_table());
            }
            if let Some(p) = svg {
                std::fs::write(p, trajectory_svg(&est, &gt))?;
            }
        }
        Command::Gradcheck { seed } => print_outcomes(&gradient_outcomes(seed)?)?,
        Command::Selftest { seed } => print_outcomes(&selftest(seed)?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error kind={} message={message:?}", e.kind());
            ExitCode::from(if matches!(e, PipelineError::Config { .. }) { 3 } else { 1 })
        }
    }
}
