use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ssvd_core::dataset::{load_scene, load_truth, write_scene, Scene};
use ssvd_core::detector::DetectorWeights;
use ssvd_core::eval::evaluate;
use ssvd_core::flow::FlowProvider;
use ssvd_core::pipeline::{bench, infer_video, train_step_forward, Detector, PipelineConfig, Streams};
use ssvd_core::postprocess::{detections_jsonl, parse_detections_jsonl, tubelets_jsonl};
use ssvd_core::selfcheck::selfcheck;
use ssvd_core::synth::{render_scene, scenario_suite_sized, suite_scene, SuiteKind, SUITE_SCENES};
use ssvd_core::viz::visualize;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "ssvd", version, about = "Two-stream single-shot video object detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic suite, one directory per scene.
    Synth {
        #[arg(long, value_parser = parse_suite)]
        suite: SuiteKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SUITE_SCENES)]
        scenes: usize,
        /// Skip writing per-pair .flo files.
        #[arg(long)]
        no_flow: bool,
    },
    /// Run the detector over one scene and write detections as JSONL.
    Detect {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's stream setting.
        #[arg(long, value_parser = parse_streams)]
        streams: Option<Streams>,
        #[arg(long)]
        seqnms: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also write Seq-NMS tubelets here.
        #[arg(long)]
        tubelets: Option<PathBuf>,
    },
    /// Score detections against a scene's ground truth.
    Eval {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Exit with status 1 when mAP falls below this.
        #[arg(long)]
        min_map: Option<f64>,
    },
    /// Forward pass of one training step; prints the loss breakdown.
    TrainStep {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the invariant suite and the brute-force oracles.
    Selfcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also verify a saved weight set.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Per-stage timing over a 25-frame scene for several support counts.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scene to time; defaults to the first blur-suite scene, rendered in memory.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,2,6")]
        supports: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Draw detections and dashed ground truth onto the scene's frames.
    Viz {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the full default configuration as JSON.
    PrintConfig,
    /// Save the configured weight set so it can be reloaded or inspected.
    ExportWeights {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A problem with the invocation or configuration rather than the run.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_suite(s: &str) -> std::result::Result<SuiteKind, String> {
    SuiteKind::parse(s).ok_or_else(|| format!("unknown suite {s:?}; expected clean, blur, occlusion or fast"))
}

fn parse_streams(s: &str) -> std::result::Result<Streams, String> {
    Streams::parse(s).ok_or_else(|| format!("unknown streams {s:?}; expected motion, sampling, both or none"))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = match path {
        None => PipelineConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("reading config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("parsing config {}: {e}", p.display())))?
        }
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn provider(cfg: &PipelineConfig, scene: &Scene) -> Result<FlowProvider> {
    let truth = scene.truth()?.map(Arc::new);
    cfg.flow.provider(truth, Some(&scene.dir)).map_err(|e| usage(e.to_string()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth {
            suite,
            out,
            scenes,
            no_flow,
        } => {
            for (i, spec) in scenario_suite_sized(suite, scenes).iter().enumerate() {
                let dir = out.join(format!("scene_{i:03}"));
                write_scene(&dir, spec, Some(suite.name()), !no_flow)?;
                println!("{}", dir.display());
            }
        }
        Command::Detect {
            scene,
            config,
            streams,
            seqnms,
            out,
            tubelets,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = streams {
                cfg.streams = s;
            }
            cfg.use_seq_nms |= seqnms;
            let sc = load_scene(&scene)?;
            let (h, w) = sc.frames[0].spatial();
            let det = Detector::new(&cfg, h, w).map_err(|e| usage(e.to_string()))?;
            let res = infer_video(&det, &sc.frames, &provider(&cfg, &sc)?)?;
            write(&out, &detections_jsonl(&res.frames)?)?;
            if let Some(t) = tubelets {
                write(&t, &tubelets_jsonl(&res.tubelets)?)?;
            }
            eprintln!("{} detections over {} frames", res.frames.iter().map(Vec::len).sum::<usize>(), res.frames.len());
        }
        Command::Eval {
            dets,
            truth,
            report,
            config,
            min_map,
        } => {
            let cfg = load_config(config.as_deref())?;
            let text = fs::read_to_string(&dets).with_context(|| format!("reading {}", dets.display()))?;
            let d = parse_detections_jsonl(&text)?;
            let gts = load_truth(&truth)?;
            let r = evaluate(&d, &gts, &cfg.eval);
            write(&report, &serde_json::to_string_pretty(&r)?)?;
            let show = |v: Option<f64>| v.map_or("n/a".to_string(), |m| format!("{m:.4}"));
            println!(
                "mAP {:.4} (slow {}, medium {}, fast {})",
                r.map,
                show(r.map_slow),
                show(r.map_medium),
                show(r.map_fast)
            );
            if let Some(min) = min_map {
                if r.map < min {
                    eprintln!("mAP {:.4} is below the required {min}", r.map);
                    return Ok(ExitCode::from(1));
                }
            }
        }
        Command::TrainStep {
            scene,
            frame,
            seed,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let sc = load_scene(&scene)?;
            let (h, w) = sc.frames[0].spatial();
            let det = Detector::new(&cfg, h, w).map_err(|e| usage(e.to_string()))?;
            let rep = train_step_forward(&det, &sc.frames, &sc.truth_boxes, &provider(&cfg, &sc)?, frame, seed)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Command::Selfcheck { config, weights, json } => {
            let cfg = load_config(config.as_deref())?;
            let rep = selfcheck(&cfg, weights.as_deref());
            if json {
                println!("{}", serde_json::to_string_pretty(&rep)?);
            } else {
                for c in &rep.checks {
                    let mark = if c.passed { "PASS" } else { "FAIL" };
                    println!("{mark}  {:<18} {:<58} {}", c.module, c.name, c.detail);
                }
                let failed = rep.failures().count();
                println!("{} checks, {failed} failed", rep.checks.len());
            }
            if !rep.passed() {
                for c in rep.failures() {
                    eprintln!("failed in {}: {} ({})", c.module, c.name, c.detail);
                }
                return Ok(ExitCode::from(1));
            }
        }
        Command::Bench {
            config,
            scene,
            supports,
            runs,
            report,
        } => {
            let cfg = load_config(config.as_deref())?;
            if supports.iter().any(|&s| s > 2 * cfg.aggregation.k) {
                return Err(usage(format!("support counts must not exceed 2k = {}", 2 * cfg.aggregation.k)));
            }
            let (frames, prov) = match scene {
                Some(dir) => {
                    let sc = load_scene(&dir)?;
                    let p = provider(&cfg, &sc)?;
                    (sc.frames, p)
                }
                None => {
                    let (frames, truth) = render_scene(&suite_scene(SuiteKind::Blur, 10_000 * (SuiteKind::Blur as u64 + 1)))?;
                    let p = cfg.flow.provider(Some(Arc::new(truth)), None).map_err(|e| usage(e.to_string()))?;
                    (frames, p)
                }
            };
            let reports = bench(&cfg, &frames, &prov, &supports, runs)?;
            for r in &reports {
                eprintln!(
                    "supports {:>2}: {:>9.1} ms/clip {:>7.1} ms/frame  spread {:>5.1}%",
                    r.supports,
                    r.median_ms,
                    r.median_ms_per_frame,
                    100.0 * r.spread
                );
            }
            let text = serde_json::to_string_pretty(&reports)?;
            match report {
                Some(p) => write(&p, &text)?,
                None => println!("{text}"),
            }
        }
        Command::Viz { scene, dets, out } => {
            let sc = load_scene(&scene)?;
            let text = fs::read_to_string(&dets).with_context(|| format!("reading {}", dets.display()))?;
            let d = parse_detections_jsonl(&text)?;
            if let Some(bad) = d.iter().find(|x| x.frame >= sc.frames.len()) {
                bail!("detection on frame {} but the scene has {} frames", bad.frame, sc.frames.len());
            }
            let classes = d
                .iter()
                .map(|x| x.class + 1)
                .chain(sc.truth_boxes.iter().map(|g| g.class_id + 1))
                .max()
                .unwrap_or(0)
                .max(ssvd_core::synth::CLASS_COUNT);
            let paths = visualize(&sc.frames, &d, &sc.truth_boxes, classes, &out)?;
            eprintln!("wrote {} frames to {}", paths.len(), out.display());
        }
        Command::PrintConfig => {
            println!("{}", serde_json::to_string_pretty(&PipelineConfig::default())?);
        }
        Command::ExportWeights { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let c = cfg.backbone.channels;
            let weights = match &cfg.detector.weights_dir {
                Some(dir) => DetectorWeights::load(dir, c, cfg.classes, cfg.anchors.per_location(), cfg.offset_filters())?,
                None => Detector::new(&cfg, 64, 64).map_err(|e| usage(e.to_string()))?.weights,
            };
            weights.save(&out)?;
            println!("{}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
