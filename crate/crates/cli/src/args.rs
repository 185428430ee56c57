use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

/// Diver detection, evaluation and closed-loop following.
#[derive(Debug, Parser)]
#[command(name = "divernet", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the detector and write weights plus a loss curve.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Score a model or a detection file against annotated frames.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Time single-image inference at 32 and 64 bit.
    #[command(args_override_self = true)]
    Bench(BenchArgs),
    /// Run one following episode and write its log and summary.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Host one interactive steering session over TCP or WebSocket.
    #[command(args_override_self = true)]
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    /// The full reference network.
    Full,
    /// Narrow layers on a 64 px input, for smoke tests.
    Tiny,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Tab-separated manifest of `image annotation` pairs.
    #[arg(long, conflicts_with = "synthetic")]
    pub manifest: Option<PathBuf>,
    /// Generate this many synthetic frames instead of reading a manifest.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Comma-separated scene classes cycled over synthetic frames.
    #[arg(long, default_value = "background,diver", value_delimiter = ',')]
    pub classes: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.0001)]
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay; 1 keeps it constant.
    #[arg(long, default_value_t = 0.93)]
    pub lr_decay: f64,
    /// Weight of the box loss against the class loss.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Disable random flips and shifts.
    #[arg(long)]
    pub no_augment: bool,
    /// Train the classifier on whole frames only, without pooled sub-regions.
    #[arg(long)]
    pub no_regions: bool,
    #[arg(long, value_enum, default_value_t = Arch::Full)]
    pub arch: Arch,
    /// Number of output classes including background.
    #[arg(long, default_value_t = 2)]
    pub num_classes: usize,
    /// Output directory for `weights.dnwt` and `loss.csv`.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth frames.
    #[command(flatten)]
    pub data: DataArgs,
    /// Model to run; exclusive with --detections.
    #[arg(long, conflicts_with = "detections")]
    pub weights: Option<PathBuf>,
    /// Lines of `frame_id label confidence xmin ymin xmax ymax`.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Use the proposal pipeline instead of the single-box head.
    #[arg(long)]
    pub multi: bool,
    /// Report the regressor box as is, without snapping it to an edge proposal.
    #[arg(long, conflicts_with = "multi")]
    pub raw: bool,
    /// Least IoU between the regressor box and the proposal it snaps to.
    #[arg(long, default_value_t = 0.2)]
    pub min_overlap: f64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Minimum IoU for a true positive.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Also write the summary as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Model to time; a seeded random network when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, value_enum, default_value_t = Arch::Full)]
    pub arch: Arch,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScriptName {
    Straight,
    Sinusoid,
    Circle,
    RandomWaypoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorName {
    Oracle,
    Model,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long, value_enum, default_value_t = DetectorName::Oracle)]
    pub detector: DetectorName,
    /// Required by the model detector.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Oracle corner jitter, pixels.
    #[arg(long, default_value_t = 5.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.05)]
    pub miss_rate: f64,
    /// Detector frames per second.
    #[arg(long, default_value_t = 7.0)]
    pub detection_rate: f64,
    /// Physics step, seconds.
    #[arg(long, default_value_t = 0.05)]
    pub dt: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, value_enum, default_value_t = ScriptName::Sinusoid)]
    pub script: ScriptName,
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    /// Sinusoid amplitude or circle radius, meters.
    #[arg(long, default_value_t = 2.0)]
    pub amplitude: f64,
    /// Sinusoid or circle period, seconds.
    #[arg(long, default_value_t = 20.0)]
    pub period: f64,
    /// Straight-line and waypoint speed, m/s.
    #[arg(long, default_value_t = 0.3)]
    pub speed: f64,
    /// Diver velocity cap, m/s.
    #[arg(long, default_value_t = 1.0)]
    pub max_speed: f64,
    /// Blank the detector from this time on, seconds.
    #[arg(long)]
    pub disable_at: Option<f64>,
    #[arg(long, default_value = "episode.tsv")]
    pub log: PathBuf,
    #[arg(long, default_value = "summary.json")]
    pub summary: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    #[arg(long, default_value_t = 7070)]
    pub port: u16,
    /// Sim ticks per second of wall-clock time.
    #[arg(long, default_value_t = 20.0)]
    pub tick_rate: f64,
    /// Attach a PNG camera frame every this many ticks; 0 disables.
    #[arg(long, default_value_t = 10)]
    pub frame_every: u64,
    /// Exit after the first session ends.
    #[arg(long)]
    pub once: bool,
}

/// Pulls `--config PATH` out of the arguments. Keys containing a dot are
/// controller settings and are returned as text; every other `key=value`
/// becomes `--key value` right after the subcommand, so explicit flags
/// still win. `true` turns a key into a bare switch and `false` drops it.
pub fn expand_config(argv: Vec<OsString>) -> Result<(Vec<OsString>, String), CliError> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().ok_or_else(|| CliError::usage("--config needs a path"))?);
        } else if let Some(p) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            path = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok((rest, String::new()));
    };
    let path = PathBuf::from(path);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let mut servo = String::new();
    let mut flags: Vec<OsString> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.contains('.') {
            servo.push_str(line);
            servo.push('\n');
            continue;
        }
        let flag = format!("--{}", k.replace('_', "-"));
        match v {
            "true" => flags.push(flag.into()),
            "false" => {}
            _ => {
                flags.push(flag.into());
                flags.push(v.into());
            }
        }
    }
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|i| i + 2)
        .unwrap_or(rest.len());
    let tail = rest.split_off(sub.min(rest.len()));
    rest.extend(flags);
    rest.extend(tail);
    Ok((rest, servo))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(|s| s.into()).collect()
    }

    #[test]
    fn config_flags_precede_explicit_ones() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "# run\nepochs=3\nno_augment=true\nyaw.kp=0.4\n").unwrap();
        let (argv, servo) = expand_config(os(&["divernet", "train", "--config", p.to_str().unwrap(), "--epochs", "7"])).unwrap();
        assert_eq!(argv, os(&["divernet", "train", "--epochs", "3", "--no-augment", "--epochs", "7"]));
        assert_eq!(servo, "yaw.kp=0.4\n");
        let cli = Cli::try_parse_from(argv).unwrap();
        match cli.command {
            Command::Train(t) => assert_eq!((t.epochs, t.no_augment), (7, true)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unreadable_config_is_usage_error() {
        let e = expand_config(os(&["divernet", "train", "--config", "/nonexistent/x.cfg"])).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
