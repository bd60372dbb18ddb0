//! Pipelines shared by the command line and the acceptance harness.

use llc_lab_core::classify::{self, ActivityModel, Episode, EpisodeScore};
use llc_lab_core::evset::{calibrate_with, profile_cache, Calibration, EvictionSetCatalog};
use llc_lab_core::memsim::{Machine, VirtAddr};
use llc_lab_core::probe::{capture, detection_level, Memorygram, Prober};
use llc_lab_core::workload::{
    colliding_lines, random_intervals, ActivityWorkload, Composite, Idle, Interval, Workload,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ClassifyConfig, LabConfig};
use crate::error::{LabError, Result};

pub fn machine(cfg: &LabConfig) -> Result<Machine> {
    Ok(Machine::new(cfg.cache.clone())?)
}

pub fn calibrate(cfg: &LabConfig) -> Result<Calibration> {
    let mut m = machine(cfg)?;
    Ok(calibrate_with(&mut m, &cfg.calibration)?)
}

/// Profiles until `target_sets` sets are known (all reachable sets when
/// `None`, unless the config sets its own target).
pub fn profile(cfg: &LabConfig, m: &mut Machine, target_sets: Option<usize>) -> Result<EvictionSetCatalog> {
    let mut p = cfg.profiling.clone();
    if target_sets.is_some() {
        p.target_sets = target_sets;
    }
    Ok(profile_cache(&p, m)?)
}

/// A fresh machine and a catalogue of at least `sets` sets.
pub fn profiled(cfg: &LabConfig, sets: usize) -> Result<(Machine, EvictionSetCatalog)> {
    let mut m = machine(cfg)?;
    let cat = profile(cfg, &mut m, Some(sets))?;
    if cat.len() < sets {
        return Err(LabError::Failed(format!("only {} of {sets} requested sets were profiled", cat.len())));
    }
    Ok((m, cat))
}

/// Seeded stream for a named experiment; independent of the machine's own.
pub fn rng(cfg: &LabConfig, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(cfg.cache.rng_seed);
    r.set_stream(stream);
    r
}

pub fn random_bits(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    (0..n).map(|_| rng.random()).collect()
}

const SPARKS: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];

/// One character per value, scaled to the largest; values <= 0 are blank.
pub fn sparkline(values: &[f64]) -> String {
    let hi = values.iter().copied().fold(0.0, f64::max);
    values
        .iter()
        .map(|&v| if v <= 0.0 || hi <= 0.0 { ' ' } else { SPARKS[((v / hi * 7.0).round() as usize).min(7)] })
        .collect()
}

/// Background activity for `memorygram`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Background {
    /// No background activity.
    Idle,
    /// One line in each of the first 64 sets every 100 slots.
    Sweep,
    /// The classifier's bursty network activity.
    Network,
    /// The classifier's sustained mouse activity.
    Mouse,
}

pub const SWEEP_EVERY: u64 = 100;

pub fn memorygram(cfg: &LabConfig, sets: usize, slot_ns: u64, duration_ns: u64, bg: Background) -> Result<Memorygram> {
    match bg {
        Background::Network | Background::Mouse => {
            let mut c = cfg.clone();
            c.classify.sets = sets;
            c.classify.slot_us = slot_ns.div_ceil(1000);
            c.classify.slots = duration_ns / slot_ns;
            let mut sc = Scenario::new(&c)?;
            let a = if bg == Background::Network { Activity::Network } else { Activity::Mouse };
            return Ok(sc.run(&c.classify, 0, Some(a))?.gram);
        }
        Background::Idle | Background::Sweep => {}
    }
    let (mut m, cat) = profiled(cfg, sets)?;
    let mut prober = Prober::new(&cat, &cat.first(sets))?;
    let mut idle = Idle;
    let mut sweep;
    let w: &mut dyn Workload = if bg == Background::Sweep {
        // One line per monitored set of the first frame group.
        let targets: Vec<VirtAddr> = (0..sets.min(64)).map(|i| cat.sets[i].witness).collect();
        let lines = colliding_lines(&mut m, &targets)?;
        let slots = duration_ns / slot_ns;
        let iv = (0..slots).step_by(SWEEP_EVERY as usize).map(|s| (s + SWEEP_EVERY / 2, s + SWEEP_EVERY / 2 + 1));
        sweep = ActivityWorkload::new(lines, iv.collect(), 1.0, m.fresh_rng());
        &mut sweep
    } else {
        &mut idle
    };
    Ok(capture(&mut prober, duration_ns, slot_ns, w, &mut m)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Activity {
    Network,
    Mouse,
}

impl Activity {
    pub fn name(self) -> &'static str {
        match self {
            Activity::Network => "network",
            Activity::Mouse => "mouse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "network" => Some(Activity::Network),
            "mouse" => Some(Activity::Mouse),
            _ => None,
        }
    }

    fn stream(self) -> u64 {
        match self {
            Activity::Network => 1,
            Activity::Mouse => 2,
        }
    }
}

/// The two-activity classification scenario: monitored sets plus two
/// disjoint groups of victim lines, all fixed by the seed.
pub struct Scenario {
    pub machine: Machine,
    pub catalog: EvictionSetCatalog,
    pub prober: Prober,
    /// Monitored rows each activity touches, ascending.
    pub network_rows: Vec<usize>,
    pub mouse_rows: Vec<usize>,
    network_lines: Vec<VirtAddr>,
    mouse_lines: Vec<VirtAddr>,
    /// Idle probe latency of one monitored set.
    pub baseline: f64,
    seed: u64,
}

pub struct ActivityRun {
    pub gram: Memorygram,
    pub network_truth: Vec<Interval>,
    pub mouse_truth: Vec<Interval>,
}

impl ActivityRun {
    pub fn truth(&self, a: Activity) -> &[Interval] {
        match a {
            Activity::Network => &self.network_truth,
            Activity::Mouse => &self.mouse_truth,
        }
    }
}

impl Scenario {
    pub fn new(cfg: &LabConfig) -> Result<Self> {
        let c = &cfg.classify;
        c.validate()?;
        let (mut machine, catalog) = profiled(cfg, c.sets)?;
        let mut prober = Prober::new(&catalog, &catalog.first(c.sets))?;
        let mut rows: Vec<usize> = (0..c.sets).collect();
        rows.shuffle(&mut rng(cfg, 10));
        let mut network_rows = rows[..c.network_sets].to_vec();
        let mut mouse_rows = rows[c.network_sets..c.network_sets + c.mouse_sets].to_vec();
        network_rows.sort_unstable();
        mouse_rows.sort_unstable();
        let witnesses = |rows: &[usize]| rows.iter().map(|&r| catalog.sets[r].witness).collect::<Vec<_>>();
        let network_lines = colliding_lines(&mut machine, &witnesses(&network_rows))?;
        let mouse_lines = colliding_lines(&mut machine, &witnesses(&mouse_rows))?;
        let baseline = prober.idle_baseline(0, 16, &mut machine)?;
        Ok(Self {
            machine,
            catalog,
            prober,
            network_rows,
            mouse_rows,
            network_lines,
            mouse_lines,
            baseline,
            seed: cfg.cache.rng_seed,
        })
    }

    /// Latency above which a monitored set counts as active.
    pub fn level(&self, c: &ClassifyConfig) -> f64 {
        self.baseline + c.margin
    }

    pub fn rows(&self, a: Activity) -> &[usize] {
        match a {
            Activity::Network => &self.network_rows,
            Activity::Mouse => &self.mouse_rows,
        }
    }

    fn schedule(&self, c: &ClassifyConfig, trial: u64, a: Activity) -> Vec<Interval> {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        r.set_stream(a.stream());
        match a {
            Activity::Network => {
                random_intervals(c.slots, c.network_bursts, c.network_min_len, c.network_max_len, c.min_gap, &mut r)
            }
            Activity::Mouse => {
                random_intervals(c.slots, c.mouse_bursts, c.mouse_min_len, c.mouse_max_len, c.min_gap, &mut r)
            }
        }
    }

    /// Captures `c.slots` slots with the selected activity (`None` runs
    /// both) scheduled at trial-specific random intervals.
    pub fn run(&mut self, c: &ClassifyConfig, trial: u64, only: Option<Activity>) -> Result<ActivityRun> {
        let on = |a: Activity| only.map_or(true, |o| o == a);
        let network_truth = if on(Activity::Network) { self.schedule(c, trial, Activity::Network) } else { vec![] };
        let mouse_truth = if on(Activity::Mouse) { self.schedule(c, trial, Activity::Mouse) } else { vec![] };
        let mut r = ChaCha8Rng::seed_from_u64(self.seed ^ trial);
        r.set_stream(3);
        let net =
            ActivityWorkload::new(self.network_lines.clone(), network_truth.clone(), c.network_density, r.clone());
        r.set_stream(4);
        let mouse = ActivityWorkload::new(self.mouse_lines.clone(), mouse_truth.clone(), c.mouse_density, r);
        let mut w = Composite::default().with(net).with(mouse);
        let slot = c.slot_us * 1000;
        let gram = capture(&mut self.prober, c.slots * slot, slot, &mut w, &mut self.machine)?;
        Ok(ActivityRun { gram, network_truth, mouse_truth })
    }

    /// Trains a focused detector on a capture where only `a` is active.
    pub fn train(&mut self, c: &ClassifyConfig, a: Activity, trial: u64) -> Result<ActivityModel> {
        let run = self.run(c, trial, Some(a))?;
        let model = classify::train(&run.gram, c.k, self.level(c), trial ^ a.stream())?;
        Ok(model.focus(c.margin))
    }
}

#[derive(Clone, Debug)]
pub struct Detection {
    pub episodes: Vec<Episode>,
    pub score: EpisodeScore,
    /// Active episodes overlapping the other activity's ground truth but
    /// matching none of this detector's own.
    pub cross: usize,
}

fn overlaps(e: &Episode, iv: &Interval) -> bool {
    (e.start as u64) < iv.1 && iv.0 < e.end as u64
}

pub fn detect(
    model: &ActivityModel,
    gram: &Memorygram,
    own: &[Interval],
    other: &[Interval],
    c: &ClassifyConfig,
) -> Result<Detection> {
    let episodes = classify::detect_episodes(gram, model, c.min_episode)?;
    let score = classify::score_episodes(&episodes, own, c.tolerance);
    let near = |a: usize, b: u64| (a as i64 - b as i64).unsigned_abs() <= c.tolerance as u64;
    let cross = episodes
        .iter()
        .filter(|e| e.label != 0)
        .filter(|e| !own.iter().any(|iv| near(e.start, iv.0) && near(e.end, iv.1)))
        .filter(|e| other.iter().any(|iv| overlaps(e, iv)))
        .count();
    Ok(Detection { episodes, score, cross })
}

/// Coarse-timer frame-round detection over one complete frame group.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplificationReport {
    pub trials: u32,
    pub active_sets: usize,
    pub baseline: f64,
    pub level: f64,
    pub detected: u32,
    pub false_alarms: u32,
}

/// Each trial touches one line in `active_sets` random sets of the group
/// and times a frame round, then times an idle round.
pub fn amplification_trials(
    m: &mut Machine,
    cat: &EvictionSetCatalog,
    margin: f64,
    active_sets: usize,
    trials: u32,
) -> Result<AmplificationReport> {
    let (_, lanes) = cat
        .complete_frames()
        .next()
        .ok_or_else(|| LabError::Failed("the catalogue has no complete frame group".into()))?;
    let mut prober = Prober::new(cat, &lanes)?;
    let all: Vec<usize> = (0..lanes.len()).collect();
    let targets: Vec<VirtAddr> = lanes.iter().map(|&i| cat.sets[i].witness).collect();
    let victims = colliding_lines(m, &targets)?;
    prober.prime_all(m)?;
    prober.frame_round(&all, m)?;
    let mut base = 0;
    for _ in 0..16 {
        base += prober.frame_round(&all, m)?;
    }
    let baseline = base as f64 / 16.0;
    let ways = m.config().ways as u32;
    let level = detection_level(baseline, margin, active_sets as u32 * ways, m.config().timer_resolution);
    let mut r = m.fresh_rng();
    let mut report = AmplificationReport { trials, active_sets, baseline, level, detected: 0, false_alarms: 0 };
    for _ in 0..trials {
        for &i in all.choose_multiple(&mut r, active_sets) {
            m.touch(victims[i])?;
        }
        if prober.frame_round(&all, m)? as f64 > level {
            report.detected += 1;
        }
        if prober.frame_round(&all, m)? as f64 > level {
            report.false_alarms += 1;
        }
    }
    Ok(report)
}
