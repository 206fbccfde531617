//! Command-line front end. All functionality lives in the library; this
//! binary parses arguments, wires subcommands, and maps errors onto exit
//! codes (0 success, 2 config error, 3 data error, 4 numerical failure).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use doppler_lio::config::{load_config, Mode, PipelineConfig};
use doppler_lio::error::{Error, Result};
use doppler_lio::{eval, integrator, observability, pipeline, sim};

const USAGE: &str = "\
doppler-lio: correspondence-free lidar-inertial odometry from Doppler returns

USAGE:
  doppler-lio odom [OPTIONS] <SEQUENCE_DIR>...
  doppler-lio calib [OPTIONS] <SEQUENCE_DIR> <GROUNDTRUTH_CSV>
  doppler-lio simulate [OPTIONS] --output-dir <DIR>
  doppler-lio evaluate [OPTIONS] <ESTIMATE_TRAJ> <GROUNDTRUTH_TRAJ>
  doppler-lio bench [OPTIONS] [--frames <N>] [--returns <N>]
  doppler-lio observability [OPTIONS] <RIG_FILE>

OPTIONS:
  --config <FILE>       flat key-value config file (defaults when omitted)
  --mode <filter|batch> estimator mode (overrides the config)
  --output-dir <DIR>    where outputs are written (default '.')
  --seed <N>            override the RANSAC / simulation seed
  --threads <N>         parallelize across sequences (odom only, default 1)
";

struct CommonArgs {
    config: Option<PathBuf>,
    mode: Option<Mode>,
    output_dir: PathBuf,
    seed: Option<u64>,
    threads: usize,
    frames: usize,
    returns: usize,
    positional: Vec<PathBuf>,
}

fn parse_args(args: &[String]) -> Result<CommonArgs> {
    let mut out = CommonArgs {
        config: None,
        mode: None,
        output_dir: PathBuf::from("."),
        seed: None,
        threads: 1,
        frames: 20,
        returns: 100_000,
        positional: Vec::new(),
    };
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let mut take = |name: &str| -> Result<String> {
            it.next()
                .cloned()
                .ok_or_else(|| Error::Config(format!("{name} requires a value")))
        };
        match arg.as_str() {
            "--config" => out.config = Some(PathBuf::from(take("--config")?)),
            "--mode" => out.mode = Some(Mode::parse(&take("--mode")?)?),
            "--output-dir" => out.output_dir = PathBuf::from(take("--output-dir")?),
            "--seed" => {
                out.seed = Some(
                    take("--seed")?
                        .parse()
                        .map_err(|_| Error::Config("--seed expects an integer".into()))?,
                )
            }
            "--threads" => {
                out.threads = take("--threads")?
                    .parse()
                    .map_err(|_| Error::Config("--threads expects an integer".into()))?;
                if out.threads == 0 {
                    return Err(Error::Config("--threads must be at least 1".into()));
                }
            }
            "--frames" => {
                out.frames = take("--frames")?
                    .parse()
                    .map_err(|_| Error::Config("--frames expects an integer".into()))?
            }
            "--returns" => {
                out.returns = take("--returns")?
                    .parse()
                    .map_err(|_| Error::Config("--returns expects an integer".into()))?
            }
            other if other.starts_with("--") => {
                return Err(Error::Config(format!("unknown flag '{other}'")))
            }
            other => out.positional.push(PathBuf::from(other)),
        }
    }
    Ok(out)
}

fn load_effective_config(args: &CommonArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(seed) = args.seed {
        cfg.ransac.seed = seed;
        cfg.sim.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_odom(args: &CommonArgs) -> Result<()> {
    if args.positional.is_empty() {
        return Err(Error::Config(
            "odom requires at least one sequence directory".into(),
        ));
    }
    let cfg = load_effective_config(args)?;
    let run_one = |seq: &Path| -> Result<()> {
        let out_dir = if args.positional.len() == 1 {
            args.output_dir.clone()
        } else {
            let name = seq.file_name().map(|n| n.to_string_lossy().to_string());
            args.output_dir
                .join(name.unwrap_or_else(|| "sequence".into()))
        };
        let output = pipeline::run_odometry(&cfg, seq, &out_dir)?;
        println!(
            "{}: {} frames, mean {:.3} ms/frame -> {}",
            seq.display(),
            output.run.frame_stats.len(),
            output.run.timings.total_ms,
            output.trajectory_path.display()
        );
        for warning in &output.run.warnings {
            eprintln!("warning: {warning}");
        }
        Ok(())
    };
    if args.threads <= 1 || args.positional.len() == 1 {
        for seq in &args.positional {
            run_one(seq)?;
        }
    } else {
        // Opt-in parallelism across independent sequences only.
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for chunk in args
                .positional
                .chunks(args.positional.len().div_ceil(args.threads))
            {
                handles.push(scope.spawn(move || -> Result<()> {
                    for seq in chunk {
                        run_one(seq)?;
                    }
                    Ok(())
                }));
            }
            for handle in handles {
                handle.join().expect("worker panicked")?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn cmd_calib(args: &CommonArgs) -> Result<()> {
    if args.positional.len() != 2 {
        return Err(Error::Config(
            "calib requires a sequence directory and a groundtruth CSV".into(),
        ));
    }
    let cfg = load_effective_config(args)?;
    let out = pipeline::calibrate(
        &cfg,
        &args.positional[0],
        &args.positional[1],
        &args.output_dir,
    )?;
    println!(
        "calibrated {} samples: rms {:.4} -> {:.4} m/s, gyro bias [{:.5} {:.5} {:.5}] rad/s",
        out.samples,
        out.rms_before,
        out.rms_after,
        out.gyro_bias.x,
        out.gyro_bias.y,
        out.gyro_bias.z
    );
    println!("bias model: {}", out.bias_model_path.display());
    println!("report:     {}", out.report_path.display());
    Ok(())
}

fn cmd_simulate(args: &CommonArgs) -> Result<()> {
    let cfg = load_effective_config(args)?;
    let lidar = cfg.lidar_extrinsics()?;
    let gyro = cfg.gyro_extrinsics()?;
    let seq = sim::generate(&cfg.sim, &cfg.grid, &lidar, &gyro, &args.output_dir)?;
    println!(
        "wrote {} frames ({} returns each), {} gyro samples to {}",
        seq.frames.len(),
        cfg.sim.returns_per_frame,
        seq.gyro.len(),
        args.output_dir.display()
    );
    Ok(())
}

fn cmd_evaluate(args: &CommonArgs) -> Result<()> {
    if args.positional.len() != 2 {
        return Err(Error::Config(
            "evaluate requires an estimate trajectory and a groundtruth trajectory".into(),
        ));
    }
    let est = integrator::read_trajectory(&args.positional[0])?;
    let gt = integrator::read_trajectory(&args.positional[1])?;
    let report = eval::kitti_errors(&est, &gt)?;
    if report.too_short {
        eprintln!("warning: trajectory shorter than 100 m, no segments evaluated");
    }
    println!("length_m  trans_%   rot_deg/100m  segments");
    for row in &report.per_length {
        println!(
            "{:>8} {:>8.4} {:>13.5} {:>9}",
            row.length, row.translation_pct, row.rotation_deg_per_100m, row.segments
        );
    }
    println!(
        "overall  {:>8.4} {:>13.5} {:>9}",
        report.avg_translation_pct, report.avg_rotation_deg_per_100m, report.total_segments
    );
    std::fs::create_dir_all(&args.output_dir)?;
    let path = args.output_dir.join("error_report.csv");
    eval::write_report_csv(&path, &report)?;
    println!("report: {}", path.display());
    Ok(())
}

fn cmd_bench(args: &CommonArgs) -> Result<()> {
    let mut cfg = load_effective_config(args)?;
    cfg.sim.returns_per_frame = args.returns;
    cfg.sim.duration = args.frames as f64 / cfg.sim.frame_rate;
    let lidar = cfg.lidar_extrinsics()?;
    let gyro_ext = cfg.gyro_extrinsics()?;
    eprintln!(
        "generating {} frames x {} returns ...",
        args.frames, args.returns
    );
    let seq = sim::generate_in_memory(&cfg.sim, &cfg.grid, &lidar, &gyro_ext)?;
    let timings = pipeline::timing_harness(&cfg, &seq.frames, &seq.gyro)?;
    println!("stage        mean_ms");
    for (stage, ms) in timings.stage_rows() {
        println!("{stage:<12} {ms:>8.4}");
    }
    println!("total        {:>8.4}", timings.total_ms);
    println!("p95 total    {:>8.4}", timings.p95_total_ms);
    Ok(())
}

fn cmd_observability(args: &CommonArgs) -> Result<()> {
    if args.positional.len() != 1 {
        return Err(Error::Config("observability requires a rig file".into()));
    }
    let rig = observability::load_rig(&args.positional[0])?;
    let report = if rig.gyro.is_some() {
        observability::build_ctc_with_gyro(&rig)?
    } else {
        observability::build_ctc(&rig)?
    };
    print!("{report}");
    std::fs::create_dir_all(&args.output_dir)?;
    let path = args.output_dir.join("observability.csv");
    observability::write_report_csv(&path, &report)?;
    println!("report: {}", path.display());
    Ok(())
}

fn run() -> Result<()> {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = argv.first() else {
        eprint!("{USAGE}");
        return Err(Error::Config("missing subcommand".into()));
    };
    let args = parse_args(&argv[1..])?;
    match command.as_str() {
        "odom" => cmd_odom(&args),
        "calib" => cmd_calib(&args),
        "simulate" => cmd_simulate(&args),
        "evaluate" => cmd_evaluate(&args),
        "bench" => cmd_bench(&args),
        "observability" => cmd_observability(&args),
        "--help" | "-h" | "help" => {
            print!("{USAGE}");
            Ok(())
        }
        other => {
            eprint!("{USAGE}");
            Err(Error::Config(format!("unknown subcommand '{other}'")))
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
