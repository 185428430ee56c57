use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use divernet::dataset::{build_dataset, load_manifest, to_training_sample, AnnotatedFrame, SceneStyle};
use divernet::metrics::{benchmark_fps, evaluate, json_summary, key_value_lines, load_detection_file};
use divernet::model::{load_weights, save_weights, LrSchedule, Trainer};
use divernet::pipeline::{collect, ground_truths, DetectMode};
use divernet::proposals::MultiParams;
use divernet::servo::ServoConfig;
use divernet::sim::{log_tsv, run_episode, DetectorKind, SimConfig, TrajectoryScript};
use divernet::{NetworkConfig, NetworkWeights, Tensor};

use crate::args::{Arch, BenchArgs, Cli, Command, DataArgs, DetectorName, EvalArgs, ScriptName, SimArgs, SimulateArgs, TrainArgs};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli, servo_text: &str) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Bench(a) => bench(&a),
        Command::Simulate(a) => simulate(&a, servo_text),
        Command::Serve(a) => crate::serve::serve(&a, servo_text),
    }
}

fn network_config(arch: Arch, num_classes: usize) -> NetworkConfig {
    match arch {
        Arch::Full => NetworkConfig::table_one(num_classes),
        Arch::Tiny => NetworkConfig::tiny(num_classes, 64),
    }
}

/// Frames from a manifest or, for synthetic data, the given split.
fn load_frames(data: &DataArgs, held_out: bool) -> Result<Vec<AnnotatedFrame>> {
    match (&data.manifest, data.synthetic) {
        (Some(m), _) => Ok(load_manifest(m)?),
        (None, Some(0)) => Err(CliError::usage("--synthetic needs at least one frame")),
        (None, Some(n)) => {
            let classes: Vec<&str> = data.classes.iter().map(String::as_str).collect();
            let (train, test) = build_dataset(n, n, &classes, data.seed, &SceneStyle::default())?;
            Ok(if held_out { test } else { train })
        }
        (None, None) => Err(CliError::usage("give --manifest or --synthetic")),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn train(a: &TrainArgs) -> Result<()> {
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        return Err(CliError::usage("--lr must be positive"));
    }
    if !(a.lr_decay > 0.0 && a.lr_decay <= 1.0) {
        return Err(CliError::usage("--lr-decay must be in (0, 1]"));
    }
    if a.batch_size == 0 {
        return Err(CliError::usage("--batch-size must be at least 1"));
    }
    let frames = load_frames(&a.data, false)?;
    let config = network_config(a.arch, a.num_classes);
    let size = config.input_size;
    let samples = frames
        .iter()
        .map(|f| to_training_sample(f, None, size))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut trainer = Trainer::new(NetworkWeights::<f32>::build(config, a.data.seed)?);
    trainer.base_lr = a.lr;
    trainer.schedule = LrSchedule::Exponential { gamma: a.lr_decay };
    trainer.lambda = a.lambda as f32;
    trainer.batch_size = a.batch_size;
    if a.no_augment {
        trainer.augment = None;
    }
    if a.no_regions {
        trainer.regions = None;
    }

    fs::create_dir_all(&a.out_dir).map_err(|e| CliError::usage(format!("{}: {e}", a.out_dir.display())))?;
    let curve_path = a.out_dir.join("loss.csv");
    let mut curve = fs::File::create(&curve_path).map_err(|e| CliError::usage(format!("{}: {e}", curve_path.display())))?;
    writeln!(curve, "epoch,class_loss,box_loss,region_loss,train_accuracy")?;
    let mut io_err = None;
    let fitted = trainer.fit(&samples, a.epochs, a.data.seed, |e, r| {
        let acc = r.correct as f64 / r.count.max(1) as f64;
        eprintln!(
            "epoch {:>3}  class {:.5}  box {:.5}  region {:.5}  acc {:.3}",
            e + 1,
            r.class_loss,
            r.box_loss,
            r.region_loss,
            acc
        );
        if let Err(err) = writeln!(curve, "{},{},{},{},{}", e + 1, r.class_loss, r.box_loss, r.region_loss, acc) {
            io_err.get_or_insert(err);
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    fitted?;
    let weights_path = a.out_dir.join("weights.dnwt");
    save_weights(&trainer.weights, &weights_path)?;
    println!("weights={}", weights_path.display());
    println!("curve={}", curve_path.display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    if !(a.iou > 0.0 && a.iou <= 1.0) {
        return Err(CliError::usage("--iou must be in (0, 1]"));
    }
    if !(0.0..=1.0).contains(&a.min_overlap) {
        return Err(CliError::usage("--min-overlap must be in [0, 1]"));
    }
    let frames = load_frames(&a.data, true)?;
    let pairs = match (&a.weights, &a.detections) {
        (Some(w), _) => {
            let weights = load_weights(w, None)?;
            let mode = if a.multi {
                DetectMode::Multi(MultiParams {
                    confidence: a.threshold,
                    ..MultiParams::default()
                })
            } else if a.raw {
                DetectMode::Single { threshold: a.threshold }
            } else {
                DetectMode::Refined {
                    threshold: a.threshold,
                    min_overlap: a.min_overlap,
                }
            };
            collect(&weights, &frames, &mode)?
        }
        (None, Some(path)) => {
            let mut dets = load_detection_file(path)?;
            frames
                .iter()
                .map(|f| Ok((dets.remove(&f.source_id).unwrap_or_default(), ground_truths(f)?)))
                .collect::<Result<Vec<_>>>()?
        }
        (None, None) => return Err(CliError::usage("give --weights or --detections")),
    };
    let ev = evaluate(&pairs, a.iou)?;
    let mut m = ev.metrics();
    m.insert("frames".into(), frames.len() as f64);
    print!("{}", key_value_lines(&m));
    if let Some(out) = &a.out {
        write_file(out, &json_summary(&m))?;
    }
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    let w32 = match &a.weights {
        Some(p) => load_weights(p, None)?,
        None => NetworkWeights::<f32>::build(network_config(a.arch, 2), 0)?,
    };
    let w64 = w32.cast::<f64>();
    let size = w32.config().input_size;
    let frames: Vec<Tensor<f32>> = (0..a.frames + a.warmup)
        .map(|k| Tensor::from_fn(vec![size, size, 3], |i| ((i * 7919 + k * 104_729) % 251) as f32 / 251.0))
        .collect();
    let frames64: Vec<Tensor<f64>> = frames.iter().map(|f| f.cast()).collect();
    let r32 = benchmark_fps(
        |f: &Tensor<f32>| {
            let _ = w32.detect(f, 0.5);
        },
        &frames,
        a.warmup,
    )?;
    let r64 = benchmark_fps(
        |f: &Tensor<f64>| {
            let _ = w64.detect(f, 0.5);
        },
        &frames64,
        a.warmup,
    )?;
    let mut m = BTreeMap::new();
    m.insert("f32_fps_mean".to_string(), r32.mean_fps);
    m.insert("f32_fps_std".to_string(), r32.std_fps);
    m.insert("f64_fps_mean".to_string(), r64.mean_fps);
    m.insert("f64_fps_std".to_string(), r64.std_fps);
    m.insert("frames".to_string(), r32.frames as f64);
    print!("{}", key_value_lines(&m));
    if let Some(out) = &a.out {
        write_file(out, &json_summary(&m))?;
    }
    Ok(())
}

/// Sim configuration shared by `simulate` and `serve`.
pub fn sim_config(a: &SimArgs, servo_text: &str) -> Result<SimConfig> {
    let mut servo = ServoConfig::default();
    servo.apply_text(servo_text)?;
    let detector = match a.detector {
        DetectorName::Oracle => DetectorKind::Oracle {
            jitter: a.jitter,
            miss_rate: a.miss_rate,
        },
        DetectorName::Model => DetectorKind::Model { threshold: 0.5 },
    };
    let config = SimConfig {
        seed: a.seed,
        dt: a.dt,
        detection_rate: a.detection_rate,
        detector,
        servo,
        ..SimConfig::default()
    };
    config.validate()?;
    Ok(config)
}

pub fn sim_weights(a: &SimArgs) -> Result<Option<NetworkWeights<f32>>> {
    match (a.detector, &a.weights) {
        (DetectorName::Model, Some(p)) => Ok(Some(load_weights(p, None)?)),
        (DetectorName::Model, None) => Err(CliError::usage("--detector model needs --weights")),
        (DetectorName::Oracle, _) => Ok(None),
    }
}

fn simulate(a: &SimulateArgs, servo_text: &str) -> Result<()> {
    let mut config = sim_config(&a.sim, servo_text)?;
    config.max_diver_speed = a.max_speed;
    config.disable_detector_at = a.disable_at;
    config.script = match a.script {
        ScriptName::Straight => TrajectoryScript::Straight {
            velocity: [a.speed, 0.0, 0.0],
        },
        ScriptName::Sinusoid => TrajectoryScript::Sinusoid {
            amplitude: a.amplitude,
            period: a.period,
            drift: 0.0,
        },
        ScriptName::Circle => TrajectoryScript::Circle {
            radius: a.amplitude,
            period: a.period,
        },
        ScriptName::RandomWaypoints => TrajectoryScript::RandomWaypoints {
            seed: a.sim.seed,
            speed: a.speed,
            extent: a.amplitude,
        },
    };
    let weights = sim_weights(&a.sim)?;
    let episode = run_episode(&config, a.duration, weights.as_ref())?;
    write_file(&a.log, &log_tsv(&episode.log))?;
    let json = episode.summary.to_json();
    write_file(&a.summary, &json)?;
    println!("{json}");
    Ok(())
}
