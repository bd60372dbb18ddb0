//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use llc_lab_core::covert::{bits_to_bytes, bytes_to_bits, measure_channel, ChannelConfig, ChannelReport, NoisePreset};
use llc_lab_core::evset::{Calibration, LatencyStats};
use llc_lab_core::probe::Prober;
use llc_lab_core::regions::identify;
use llc_lab_core::workload::{colliding_lines, Idle, Repeating};

use crate::config::LabConfig;
use crate::error::{LabError, Result};
use crate::experiments::{self, Activity, Background, Scenario};
use crate::formats::{catalog, memorygram, model};

#[derive(Debug, Parser)]
#[command(name = "llc-lab", version, about = "Prime+Probe experiments on a simulated last-level cache")]
pub struct Cli {
    /// Seed for every random stream; overrides cache.rng_seed
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// TOML configuration file
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory that receives the output files
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Measure warm and thrashed access latencies and derive the threshold
    Calibrate(CalibrateArgs),
    /// Build eviction sets for the cache and write the catalogue
    Profile(ProfileArgs),
    /// Capture a memorygram (PGM image and CSV)
    Memorygram(MemorygramArgs),
    /// Find the monitored sets a scripted trigger touches
    Regions(RegionsArgs),
    /// Covert-channel loopback runs
    #[command(subcommand)]
    Covert(CovertCommand),
    /// Train and run activity detectors
    #[command(subcommand)]
    Classify(ClassifyCommand),
    /// Run the headline measurements and write a CSV summary
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct TimerArgs {
    /// Timer resolution in ns
    #[arg(long, value_name = "NS")]
    pub timer_res: Option<u64>,
    /// Standard deviation of per-access latency noise in ns
    #[arg(long, value_name = "NS")]
    pub jitter: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub timer: TimerArgs,
    /// Samples per distribution
    #[arg(long, value_name = "N")]
    pub samples: Option<usize>,
    /// Victim accesses summed per sample
    #[arg(long, value_name = "R")]
    pub amplification: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub timer: TimerArgs,
    /// Stop after this many loads
    #[arg(long, value_name = "OPS")]
    pub budget: Option<u64>,
    /// Stop once this many sets are catalogued
    #[arg(long, value_name = "N")]
    pub target_sets: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MemorygramArgs {
    /// Number of monitored sets (rows), taken in catalogue order
    #[arg(long, default_value_t = 128, value_name = "N")]
    pub sets: usize,
    /// Slot length in microseconds
    #[arg(long, default_value_t = 250, value_name = "US")]
    pub slot_us: u64,
    /// Capture length in milliseconds
    #[arg(long, default_value_t = 400, value_name = "MS")]
    pub duration_ms: u64,
    /// Background activity during the capture
    #[arg(long, value_enum, default_value_t = Background::Idle)]
    pub workload: Background,
}

#[derive(Debug, Args)]
pub struct RegionsArgs {
    /// Number of monitored sets
    #[arg(long, default_value_t = 64, value_name = "N")]
    pub sets: usize,
    /// Monitored positions the trigger touches, comma separated
    #[arg(long, value_delimiter = ',', value_name = "LIST", required = true)]
    pub touch: Vec<usize>,
    /// Positions touched by a reference trigger; its detections are
    /// subtracted from the result
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub minus: Vec<usize>,
    /// Trigger runs per set
    #[arg(long, value_name = "N")]
    pub reps: Option<u32>,
    /// Also write regions.csv
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    HostToHost,
    HostToVm,
    Both,
}

#[derive(Debug, Args)]
pub struct ChannelArgs {
    /// Noise preset; also selects the preset's period and repetitions
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Transmitter copies
    #[arg(long, value_name = "N")]
    pub copies: Option<u32>,
    /// Symbol period in microseconds
    #[arg(long, value_name = "US")]
    pub period_us: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum CovertCommand {
    /// Transmit a file's bytes and write what the receiver got
    Send {
        /// Payload file (raw bytes)
        #[arg(long, value_name = "FILE")]
        file: PathBuf,
        #[command(flatten)]
        channel: ChannelArgs,
    },
    /// Receive N seeded random bits
    Recv {
        /// Payload length in bits
        #[arg(long, value_name = "N")]
        bits: usize,
        #[command(flatten)]
        channel: ChannelArgs,
    },
    /// Bandwidth and bit error rate as CSV
    Bench {
        /// Payload length in bits
        #[arg(long, default_value_t = 10_000, value_name = "N")]
        bits: usize,
        #[command(flatten)]
        channel: ChannelArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum ClassifyCommand {
    /// Train a detector on a capture containing only one activity
    Train {
        /// Activity present in the training capture
        #[arg(long, value_enum)]
        activity: Activity,
        /// Model file to write [default: OUT/<activity>.model]
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Schedule number of the training capture
        #[arg(long, default_value_t = 0, value_name = "N")]
        trial: u64,
    },
    /// Detect episodes on a capture containing both activities
    Run {
        /// Model files [default: OUT/network.model and OUT/mouse.model]
        #[arg(long, value_name = "FILE")]
        model: Vec<PathBuf>,
        /// Schedule number of the test capture
        #[arg(long, default_value_t = 1, value_name = "N")]
        trial: u64,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Covert-channel payload bits per preset
    #[arg(long, default_value_t = 10_000, value_name = "N")]
    pub bits: usize,
    /// Coarse-timer detection trials
    #[arg(long, default_value_t = 1000, value_name = "N")]
    pub trials: u32,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("llc-lab: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<LabConfig> {
    let mut cfg = match &cli.config {
        Some(p) => LabConfig::load(p)?,
        None => LabConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.cache.rng_seed = s;
    }
    Ok(cfg)
}

struct Output<'a> {
    dir: &'a Path,
}

impl Output<'_> {
    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        fs::create_dir_all(self.dir).map_err(LabError::io(self.dir))?;
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(LabError::io(&path))?;
        Ok(path)
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    let out = Output { dir: &cli.out };
    match &cli.command {
        Command::Calibrate(a) => {
            apply_timer(&mut cfg, &a.timer);
            if let Some(n) = a.samples {
                cfg.calibration.samples = n;
            }
            if let Some(r) = a.amplification {
                cfg.calibration.amplification = r;
            }
            cfg.validate()?;
            let cal = experiments::calibrate(&cfg)?;
            let report = calibration_report(&cal);
            print!("{report}");
            out.write("calibration.txt", &report)?;
            out.write("calibration.csv", calibration_csv(&cal))?;
        }
        Command::Profile(a) => {
            apply_timer(&mut cfg, &a.timer);
            if a.budget.is_some() {
                cfg.profiling.budget = a.budget;
            }
            if a.target_sets.is_some() {
                cfg.profiling.target_sets = a.target_sets;
            }
            cfg.validate()?;
            let mut m = experiments::machine(&cfg)?;
            let cat = experiments::profile(&cfg, &mut m, None)?;
            out.write("catalog.txt", catalog::write_catalog(&cat))?;
            out.write("coverage.csv", catalog::write_coverage_csv(&cat))?;
            let s = &cat.stats;
            println!(
                "sets {} of {} coverage {:.6} ops {} victims {} failures {} buffers {}",
                cat.len(),
                cat.num_sets,
                cat.coverage(),
                s.ops,
                s.victims,
                s.failures,
                s.buffers
            );
        }
        Command::Memorygram(a) => {
            cfg.validate()?;
            if a.slot_us == 0 {
                return Err(LabError::Usage("--slot-us must be positive".into()));
            }
            let g = experiments::memorygram(&cfg, a.sets, a.slot_us * 1000, a.duration_ms * 1_000_000, a.workload)?;
            out.write("memorygram.csv", memorygram::write_csv(&g))?;
            out.write("memorygram.pgm", memorygram::write_pgm(&g))?;
            println!("memorygram {} sets x {} slots of {} ns", g.rows, g.cols, g.slot_duration);
        }
        Command::Regions(a) => {
            if let Some(r) = a.reps {
                cfg.regions.repetitions = r;
            }
            cfg.validate()?;
            regions(&cfg, a, &out)?;
        }
        Command::Covert(c) => covert(&mut cfg, c, &out)?,
        Command::Classify(c) => {
            cfg.validate()?;
            classify(&cfg, c, &out)?;
        }
        Command::Bench(a) => {
            cfg.validate()?;
            bench(&cfg, a, &out)?;
        }
    }
    Ok(())
}

fn apply_timer(cfg: &mut LabConfig, t: &TimerArgs) {
    if let Some(r) = t.timer_res {
        cfg.cache.timer_resolution = r;
    }
    if let Some(j) = t.jitter {
        cfg.cache.jitter_stddev = j;
    }
}

fn summary(name: &str, s: &LatencyStats) -> String {
    format!(
        "{name} mean {:.3} stddev {:.3} min {:.3} max {:.3} n {}\n",
        s.mean,
        s.stddev,
        s.min,
        s.max,
        s.samples.len()
    )
}

pub fn calibration_report(cal: &Calibration) -> String {
    let mut s = format!(
        "threshold {:.3}\nmargin {:.3}\nmisclassification {:.6}\n",
        cal.threshold, cal.margin, cal.misclassification
    );
    s += &summary("hit", &cal.hit);
    s += &summary("miss", &cal.miss);
    s
}

fn calibration_csv(cal: &Calibration) -> String {
    let mut s = String::from("sample,hit,miss\n");
    for (i, (h, m)) in cal.hit.samples.iter().zip(&cal.miss.samples).enumerate() {
        writeln!(s, "{i},{h:.3},{m:.3}").unwrap();
    }
    s
}

fn regions(cfg: &LabConfig, a: &RegionsArgs, out: &Output) -> Result<()> {
    if let Some(&p) = a.touch.iter().chain(&a.minus).find(|&&p| p >= a.sets) {
        return Err(LabError::Usage(format!("position {p} is not below --sets {}", a.sets)));
    }
    let (mut m, cat) = experiments::profiled(cfg, a.sets)?;
    let mut prober = Prober::new(&cat, &cat.first(a.sets))?;
    let lines = |m: &mut _, pos: &[usize]| {
        let targets: Vec<_> = pos.iter().map(|&p| cat.sets[p].witness).collect();
        colliding_lines(m, &targets)
    };
    let mut trigger = Repeating(lines(&mut m, &a.touch)?);
    let report = identify(&mut prober, &mut trigger, &cfg.regions, &mut m)?;
    let mut detected = report.detected.clone();
    if !a.minus.is_empty() {
        let mut reference = Repeating(lines(&mut m, &a.minus)?);
        let base = identify(&mut prober, &mut reference, &cfg.regions, &mut m)?;
        detected.retain(|p| base.detected.binary_search(p).is_err());
    }
    let list: Vec<String> = detected.iter().map(|&p| prober.labels()[p].to_string()).collect();
    println!("detected {}", list.join(","));
    println!("|{}|", experiments::sparkline(&report.deltas));
    if a.csv {
        let mut s = String::from("position,set,delta,detected\n");
        for (p, d) in report.deltas.iter().enumerate() {
            let hit = detected.binary_search(&p).is_ok();
            writeln!(s, "{p},{},{d:.3},{}", prober.labels()[p], u8::from(hit)).unwrap();
        }
        out.write("regions.csv", s)?;
    }
    Ok(())
}

fn channel_config(cfg: &LabConfig, a: &ChannelArgs, preset: Option<NoisePreset>) -> ChannelConfig {
    let mut ch = match preset {
        Some(p) if p != cfg.channel.noise_preset => {
            ChannelConfig { scan_seed: cfg.channel.scan_seed, ..ChannelConfig::preset(p) }
        }
        _ => cfg.channel.clone(),
    };
    if let Some(c) = a.copies {
        ch.copies = c;
    }
    if let Some(p) = a.period_us {
        ch.period = p * 1000;
    }
    ch
}

fn presets(a: &ChannelArgs) -> Vec<Option<NoisePreset>> {
    match a.preset {
        None => vec![None],
        Some(PresetArg::HostToHost) => vec![Some(NoisePreset::HostToHost)],
        Some(PresetArg::HostToVm) => vec![Some(NoisePreset::HostToVm)],
        Some(PresetArg::Both) => vec![Some(NoisePreset::HostToHost), Some(NoisePreset::HostToVm)],
    }
}

fn preset_name(p: NoisePreset) -> &'static str {
    match p {
        NoisePreset::HostToHost => "host-to-host",
        NoisePreset::HostToVm => "host-to-vm",
    }
}

pub const CHANNEL_CSV_HEADER: &str =
    "preset,period_ns,copies,payload_bits,channel_bits,elapsed_ns,bandwidth_bps,goodput_bps,bit_errors,ber,scanned";

fn channel_row(ch: &ChannelConfig, r: &ChannelReport) -> String {
    format!(
        "{},{},{},{},{},{},{:.3},{:.3},{},{:.6},{}",
        preset_name(ch.noise_preset),
        ch.period,
        ch.copies,
        r.payload_bits,
        r.channel_bits,
        r.elapsed_ns,
        r.bandwidth_bps,
        r.goodput_bps,
        r.bit_errors,
        r.ber,
        r.scanned
    )
}

fn covert(cfg: &mut LabConfig, c: &CovertCommand, out: &Output) -> Result<()> {
    let (args, payload): (&ChannelArgs, Vec<bool>) = match c {
        CovertCommand::Send { file, channel } => {
            let bytes = fs::read(file).map_err(LabError::io(file))?;
            (channel, bytes_to_bits(&bytes))
        }
        CovertCommand::Recv { bits, channel } | CovertCommand::Bench { bits, channel } => {
            (channel, experiments::random_bits(&mut experiments::rng(cfg, 20), *bits))
        }
    };
    let configs: Vec<ChannelConfig> = presets(args).into_iter().map(|p| channel_config(cfg, args, p)).collect();
    for ch in &configs {
        ch.validate(&cfg.cache).map_err(|e| LabError::Config(format!("channel: {e}")))?;
    }
    cfg.validate()?;
    let mut m = experiments::machine(cfg)?;
    let cat = experiments::profile(cfg, &mut m, None)?;
    let mut csv = format!("{CHANNEL_CSV_HEADER}\n");
    let mut last = None;
    for ch in &configs {
        let mut run = m.clone();
        let r = measure_channel(&payload, ch, &cat, &mut Idle, &mut run)?;
        csv += &channel_row(ch, &r);
        csv.push('\n');
        last = Some(r);
    }
    print!("{csv}");
    let r = last.expect("at least one preset");
    match c {
        CovertCommand::Send { .. } => {
            out.write("received.bin", bits_to_bytes(&r.received))?;
            out.write("covert.csv", &csv)?;
        }
        CovertCommand::Recv { .. } => {
            let mut s = String::with_capacity(r.received.len() + r.received.len() / 64 + 1);
            for chunk in r.received.chunks(64) {
                s.extend(chunk.iter().map(|&b| if b { '1' } else { '0' }));
                s.push('\n');
            }
            out.write("received.txt", s)?;
            out.write("covert.csv", &csv)?;
        }
        CovertCommand::Bench { .. } => {
            out.write("covert_bench.csv", &csv)?;
        }
    }
    Ok(())
}

fn model_path(out: &Output, a: Activity) -> PathBuf {
    out.dir.join(format!("{}.model", a.name()))
}

fn classify(cfg: &LabConfig, c: &ClassifyCommand, out: &Output) -> Result<()> {
    let cc = &cfg.classify;
    match c {
        ClassifyCommand::Train { activity, model: path, trial } => {
            let mut sc = Scenario::new(cfg)?;
            let m = sc.train(cc, *activity, *trial)?;
            let text = model::write_model(activity.name(), &m);
            let path = match path {
                Some(p) => {
                    fs::write(p, &text).map_err(LabError::io(p))?;
                    p.clone()
                }
                None => out.write(&format!("{}.model", activity.name()), &text)?,
            };
            println!(
                "{}: k {} thres {:.3} focus {} sets -> {}",
                activity.name(),
                m.k(),
                m.thres,
                m.focus.len(),
                path.file_name().map_or(path.display().to_string(), |n| n.to_string_lossy().into_owned())
            );
        }
        ClassifyCommand::Run { model: paths, trial } => {
            let paths: Vec<PathBuf> = if paths.is_empty() {
                vec![model_path(out, Activity::Network), model_path(out, Activity::Mouse)]
            } else {
                paths.clone()
            };
            let mut models = Vec::new();
            for p in &paths {
                let text = fs::read_to_string(p).map_err(LabError::io(p))?;
                let (name, m) = model::parse_model(&text, p)?;
                let a = Activity::parse(&name).ok_or_else(|| LabError::Parse {
                    path: p.clone(),
                    line: 0,
                    msg: format!("unknown activity {name:?}"),
                })?;
                models.push((a, m));
            }
            let mut sc = Scenario::new(cfg)?;
            let run = sc.run(cc, *trial, None)?;
            let mut csv = String::from("detector,start,end,label,truth_start,truth_end,matched,cross\n");
            for (a, m) in &models {
                if m.dims() != run.gram.rows {
                    return Err(LabError::Failed(format!(
                        "{} model has {} sets, the capture {}",
                        a.name(),
                        m.dims(),
                        run.gram.rows
                    )));
                }
                let other = match a {
                    Activity::Network => Activity::Mouse,
                    Activity::Mouse => Activity::Network,
                };
                let d = experiments::detect(m, &run.gram, run.truth(*a), run.truth(other), cc)?;
                episode_rows(&mut csv, a.name(), &d.episodes, run.truth(*a), run.truth(other), cc.tolerance);
                println!(
                    "{}: truth {} matched {} spurious {} cross {} accuracy {:.4}",
                    a.name(),
                    d.score.truth,
                    d.score.matched,
                    d.score.spurious,
                    d.cross,
                    d.score.accuracy()
                );
            }
            out.write("episodes.csv", csv)?;
        }
    }
    Ok(())
}

/// One row per active episode, then one per unmatched truth interval
/// (with empty episode columns).
fn episode_rows(
    csv: &mut String,
    name: &str,
    episodes: &[llc_lab_core::classify::Episode],
    own: &[(u64, u64)],
    other: &[(u64, u64)],
    tol: usize,
) {
    let near = |a: usize, b: u64| (a as i64 - b as i64).unsigned_abs() <= tol as u64;
    let mut matched = vec![false; own.len()];
    for e in episodes.iter().filter(|e| e.label != 0) {
        let hit = own.iter().position(|iv| near(e.start, iv.0) && near(e.end, iv.1));
        let cross = hit.is_none() && other.iter().any(|iv| (e.start as u64) < iv.1 && iv.0 < e.end as u64);
        match hit {
            Some(i) => {
                matched[i] = true;
                writeln!(csv, "{name},{},{},{},{},{},1,0", e.start, e.end, e.label, own[i].0, own[i].1).unwrap();
            }
            None => writeln!(csv, "{name},{},{},{},,,0,{}", e.start, e.end, e.label, u8::from(cross)).unwrap(),
        }
    }
    for (iv, _) in own.iter().zip(&matched).filter(|(_, &m)| !m) {
        writeln!(csv, "{name},,,,{},{},0,0", iv.0, iv.1).unwrap();
    }
}

fn bench(cfg: &LabConfig, a: &BenchArgs, out: &Output) -> Result<()> {
    let mut csv = String::from("metric,value\n");
    let mut row = |k: &str, v: String| {
        writeln!(csv, "{k},{v}").unwrap();
    };
    let cal = experiments::calibrate(cfg)?;
    row("calibration_threshold_ns", format!("{:.3}", cal.threshold));
    row("calibration_misclassification", format!("{:.6}", cal.misclassification));

    let mut m = experiments::machine(cfg)?;
    let cat = experiments::profile(cfg, &mut m, None)?;
    row("profile_sets", cat.len().to_string());
    row("profile_coverage", format!("{:.6}", cat.coverage()));
    row("profile_ops", cat.stats.ops.to_string());
    row("profile_buffers", cat.stats.buffers.to_string());
    if let Some(p) = cat.curve.iter().find(|p| p.coverage >= 0.25) {
        row("profile_ops_to_25pct", p.ops.to_string());
    }

    let payload = experiments::random_bits(&mut experiments::rng(cfg, 20), a.bits);
    for p in [NoisePreset::HostToHost, NoisePreset::HostToVm] {
        let ch = ChannelConfig { scan_seed: cfg.channel.scan_seed, ..ChannelConfig::preset(p) };
        let mut run = m.clone();
        let r = measure_channel(&payload, &ch, &cat, &mut Idle, &mut run)?;
        let key = preset_name(p).replace('-', "_");
        row(&format!("covert_{key}_bandwidth_bps"), format!("{:.3}", r.bandwidth_bps));
        row(&format!("covert_{key}_ber"), format!("{:.6}", r.ber));
    }

    let mut coarse = m.clone();
    coarse.set_timer(1000, cfg.cache.jitter_stddev)?;
    let r = experiments::amplification_trials(&mut coarse, &cat, cal.margin, 20, a.trials)?;
    row("coarse_timer_detection_rate", format!("{:.6}", r.detected as f64 / r.trials.max(1) as f64));
    row("coarse_timer_false_alarm_rate", format!("{:.6}", r.false_alarms as f64 / r.trials.max(1) as f64));

    print!("{csv}");
    out.write("bench.csv", csv)?;
    Ok(())
}
