use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ergokin::kinmodel::IkMode;
use ergokin::rula::GlobalMode;

#[derive(Debug, Parser)]
#[command(name = "ergokin", version, about = "Inertial motion capture to RULA ergonomics pipeline")]
pub struct Cli {
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stream a recording as sensor datagrams.
    Replay(ReplayArgs),
    /// Capture sensor datagrams into a recording.
    Record(RecordArgs),
    /// Estimate an N-pose calibration profile.
    Calibrate(CalibrateArgs),
    /// Joint angles from a recording.
    Ik(IkArgs),
    /// Convert third-party exports.
    Import(ImportArgs),
    /// Cut a recording or angle file into labelled windows.
    Segment(SegmentArgs),
    /// RULA scores and time-in-band summaries.
    Score(ScoreArgs),
    /// Agreement between two angle files.
    Compare(CompareArgs),
    /// Assemble a report bundle from stage outputs.
    Report(ReportArgs),
    /// Serve a report bundle over HTTP.
    Serve(ServeArgs),
    /// calibrate, ik, score, summarize and report in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "127.0.0.1:9000")]
    pub dest: String,
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    /// Fraction of packets to withhold.
    #[arg(long, default_value_t = 0.0)]
    pub loss: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    /// Address to receive datagrams on.
    #[arg(long, default_value = "0.0.0.0:9000")]
    pub listen: String,
    #[arg(long)]
    pub rate: f64,
    /// Sensor id to segment map: inline `0=torso,1=upper_arm_r`, or a file with one `id=segment` per line.
    #[arg(long, alias = "sensors")]
    pub map: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = ergokin::ingest::DEFAULT_STALENESS_MS)]
    pub staleness_ms: f64,
    /// Stop after this long without datagrams.
    #[arg(long, default_value_t = 1000)]
    pub idle_ms: u64,
    /// Give up when nothing arrives within this time.
    #[arg(long, default_value_t = 30.0)]
    pub start_timeout_s: f64,
    #[arg(long)]
    pub max_duration_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Still window in seconds, `start-end`.
    #[arg(long, default_value = "0-2")]
    pub window: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub motion_threshold: Option<f64>,
    /// Also write the calibrated recording here.
    #[arg(long)]
    pub apply: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IkArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Calibration profile; not needed when the input is already calibrated.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "analytic")]
    pub mode: IkMode,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write skeleton poses (JSON lines, every frame).
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// Write an OpenSim storage file instead of CSV.
    #[arg(long)]
    pub sto: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ImportFormat {
    /// Per-sensor quaternion columns.
    Output1,
    /// Joint-angle table (CSV or storage file).
    Output2,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long, value_enum)]
    pub format: ImportFormat,
    #[arg(long)]
    pub input: PathBuf,
    /// output1: `prefix=segment,...`; output2: `column=joint_side_axis,...`.
    #[arg(long, default_value = "")]
    pub map: String,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long, default_value_t = ergokin::ingest::DEFAULT_STALENESS_MS)]
    pub staleness_ms: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub angles: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured global mode.
    #[arg(long)]
    pub mode: Option<GlobalMode>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Summarize per segment instead of over the whole file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = ergokin::compare::DEFAULT_MAX_LAG_S)]
    pub max_lag: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, default_value = "Comparison")]
    pub title: String,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub angles: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub summary: PathBuf,
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub comparison: Option<PathBuf>,
    #[arg(long, default_value_t = ergokin::report::DEFAULT_POSE_STRIDE)]
    pub pose_stride: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory of UI files served at `/`; defaults to `<bundle>/ui` when present.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "0-2")]
    pub calib_window: String,
    /// Use this profile instead of estimating one.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub motion_threshold: Option<f64>,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "analytic")]
    pub mode: IkMode,
    #[arg(long)]
    pub global_mode: Option<GlobalMode>,
    #[arg(long, default_value_t = ergokin::report::DEFAULT_POSE_STRIDE)]
    pub pose_stride: usize,
    #[arg(long)]
    pub out: PathBuf,
}
