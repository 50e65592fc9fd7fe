//! The experiments behind the `hica` binary, as plain functions so tests
//! can drive them without spawning a process.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};

use hica_core::agent::{Ablation, HicaAgent};
use hica_core::checkpoint::{
    graph_state, instinct_state, load_checkpoint, meter_buckets, restore_bundle, save_checkpoint, CharLmState,
    Checkpoint, InstinctState, Payload,
};
use hica_core::config::RunConfig;
use hica_core::env::charlm::{charlm_run, unigram_baseline, AccuracyMeter, CharStream};
use hica_core::env::skinner::{
    skinner_phase1, skinner_phase2, OracleAgent, Phase2Report, RandomAgent, SkinnerWorld, TrialRecord,
};
use hica_core::experiments::{gradcheck_sweep, replay_demo, GradcheckReport, ReplayReport, GRADCHECK_EPSILONS};
use hica_core::innate::Source;
use hica_core::neuromod::Modulator;
use hica_core::signal::derive_seed;
use hica_core::stats::{mann_kendall, median};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHARLM_CHECKPOINT: &str = "charlm.ckpt";
pub const INSTINCTS_CHECKPOINT: &str = "instincts.ckpt";
pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPLAY_FILE: &str = "replay.csv";

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

// ------------------------------------------------------------ charlm

#[derive(Debug, Clone)]
pub struct TrendLine {
    pub series: String,
    pub points: usize,
    pub first: Option<f64>,
    pub last: Option<f64>,
    pub p_increasing: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CharLmSummary {
    pub ticks: u64,
    pub baseline: f64,
    pub trends: Vec<TrendLine>,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

impl CharLmSummary {
    /// Bottom autoregressor accuracy in the last logged interval.
    pub fn final_bottom_ar(&self) -> Option<f64> {
        self.trends.first().and_then(|t| t.last)
    }
}

/// Trains the configured graph on the corpus, writing the metrics CSV and a
/// final checkpoint into `out`.
pub fn run_charlm(config: &RunConfig, out: &Path) -> Result<CharLmSummary> {
    config.validate()?;
    let c = &config.charlm;
    let text = fs::read_to_string(&c.corpus).with_context(|| format!("cannot read corpus {}", c.corpus.display()))?;
    let mut stream = CharStream::new(&text, c.wrap)?;
    let mut graph = config.build_graph(stream.codec().size())?;
    let mut meter = AccuracyMeter::new(&graph, c.log_interval, c.threshold)?;
    ensure_dir(out)?;
    info!(
        "char-LM: {} chars, alphabet {}, {} ticks, {} worker(s)",
        stream.len(),
        stream.codec().size(),
        c.ticks,
        c.workers
    );

    // No rewards arrive in this task, so plasticity runs at the resting gain.
    let gain = Modulator::new(config.modulator).gain();
    let ran = charlm_run(&mut graph, &mut stream, c.ticks, &mut meter, c.workers, gain)?;
    if ran < c.ticks {
        info!("corpus ended after {ran} ticks");
    }
    let metrics = out.join(METRICS_FILE);
    meter.write_csv(create(&metrics)?, ran)?;

    let checkpoint = out.join(CHARLM_CHECKPOINT);
    save_checkpoint(
        &checkpoint,
        &Checkpoint {
            config: config.to_toml_string()?,
            payload: Payload::CharLm(CharLmState {
                graph: graph_state(&graph),
                stream_position: stream.position(),
                buckets: meter_buckets(&meter),
            }),
        },
    )?;

    let trends = meter
        .series()
        .into_iter()
        .map(|(series, v)| TrendLine {
            points: v.len(),
            first: v.first().copied(),
            last: v.last().copied(),
            p_increasing: mann_kendall(&v).ok().map(|m| m.p_increasing),
            series,
        })
        .collect();
    Ok(CharLmSummary {
        ticks: ran,
        baseline: unigram_baseline(&text),
        trends,
        metrics,
        checkpoint,
    })
}

// ------------------------------------------------------------ skinner

/// Who acts in the lever phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Hica,
    Random,
    Oracle,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Hica => "hica",
            Policy::Random => "random",
            Policy::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SkinnerOptions {
    pub policy: Policy,
    pub ablation: Ablation,
    /// Skip phase 1 and take the instincts from this checkpoint.
    pub phase2_only: Option<PathBuf>,
    /// Keep running trials after criterion is reached.
    pub run_all_trials: bool,
}

impl Default for SkinnerOptions {
    fn default() -> Self {
        SkinnerOptions {
            policy: Policy::Hica,
            ablation: Ablation::default(),
            phase2_only: None,
            run_all_trials: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub trials_to_criterion: Option<usize>,
    pub trials_run: usize,
    pub phase1_mean_reward: Option<f64>,
    pub phase1_contact_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SkinnerSummary {
    pub seeds: Vec<SeedResult>,
    pub trials: PathBuf,
    pub summary: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl SkinnerSummary {
    /// Median trials-to-criterion, with unreached runs counted as one past
    /// the trial budget.
    pub fn median_trials(&self, max_trials: usize) -> f64 {
        let v: Vec<f64> = self
            .seeds
            .iter()
            .map(|s| s.trials_to_criterion.unwrap_or(max_trials + 1) as f64)
            .collect();
        median(&v).unwrap_or(f64::NAN)
    }
}

/// Per-run seed: phase 1, the agent and the lever world all derive from it.
pub fn run_seed(config: &RunConfig, index: usize) -> u64 {
    config.seed.wrapping_add(index as u64)
}

fn lever_world_seed(seed: u64) -> u64 {
    derive_seed(seed, 0x6c76)
}

const TRIALS_HEADER: &str = "seed,policy,preplay,modulation,trial,light,pulled,outcome,correct,mode,familiarity,\
plan_accepted,plan_value,learned_action,learned_confidence,chosen_action,chosen_source";

fn write_trials(
    out: &mut impl Write,
    seed: u64,
    opts: &SkinnerOptions,
    report: &Phase2Report,
    agent: Option<&HicaAgent>,
) -> Result<()> {
    for (i, r) in report.records.iter().enumerate() {
        let TrialRecord {
            index,
            light,
            pulled,
            outcome,
            correct,
        } = *r;
        write!(
            out,
            "{seed},{},{},{},{index},{},{},{outcome},{}",
            opts.policy.name(),
            opts.ablation.preplay as u8,
            opts.ablation.modulation as u8,
            light.name(),
            pulled as u8,
            correct as u8
        )?;
        match agent.and_then(|a| a.decisions().get(i)) {
            Some(d) => {
                let (accepted, value) = d
                    .plan
                    .as_ref()
                    .map(|p| ((p.accepted as u8).to_string(), format!("{:.6}", p.value)))
                    .unwrap_or_default();
                writeln!(
                    out,
                    ",{},{:.6},{accepted},{value},{},{:.6},{},{}",
                    mode_name(d.mode),
                    d.familiarity,
                    d.learned.action.name(),
                    d.learned.confidence,
                    d.chosen.action.name(),
                    match d.chosen.source {
                        Source::Innate => "innate",
                        Source::Learned => "learned",
                    }
                )?;
            }
            None => writeln!(out, ",,,,,,,,")?,
        }
    }
    Ok(())
}

fn mode_name(mode: hica_core::innate::AmygdalaMode) -> &'static str {
    use hica_core::innate::AmygdalaMode::*;
    match mode {
        FightFlight => "fight_flight",
        Automatic => "automatic",
        Deliberate => "deliberate",
        Idle => "idle",
    }
}

fn instincts_from_checkpoint(path: &Path, config: &RunConfig) -> Result<Vec<InstinctState>> {
    if !path.exists() {
        bail!("phase-1 checkpoint {} does not exist", path.display());
    }
    let ck = load_checkpoint(path).with_context(|| format!("cannot load {}", path.display()))?;
    let Payload::Instincts(states) = ck.payload else {
        bail!("{} is not a phase-1 checkpoint", path.display());
    };
    match RunConfig::from_toml_str(&ck.config) {
        Ok(saved) if saved.skinner.phase1 != config.skinner.phase1 || saved.skinner.world != config.skinner.world => {
            warn!("phase-1 checkpoint was made with different world or phase-1 settings")
        }
        Ok(_) => {}
        Err(e) => warn!("checkpoint config echo does not parse: {e}"),
    }
    Ok(states)
}

/// Runs both phases (or phase 2 alone) for every configured seed, writing
/// the trial log, per-seed summary and, after phase 1, a checkpoint of the
/// learned instincts.
pub fn run_skinner(config: &RunConfig, out: &Path, opts: &SkinnerOptions) -> Result<SkinnerSummary> {
    config.validate()?;
    let s = &config.skinner;
    let saved = opts
        .phase2_only
        .as_deref()
        .map(|p| instincts_from_checkpoint(p, config))
        .transpose()?;
    ensure_dir(out)?;

    let trials_path = out.join(TRIALS_FILE);
    let mut trials = create(&trials_path)?;
    writeln!(trials, "{TRIALS_HEADER}")?;

    let mut results = Vec::with_capacity(s.seeds);
    let mut learned = Vec::new();
    for index in 0..s.seeds {
        let seed = run_seed(config, index);
        let mut agent = HicaAgent::new(s.agent, config.modulator, opts.ablation, s.innate, seed)?;

        let (state, phase1) = match &saved {
            Some(states) => {
                let state = states
                    .iter()
                    .find(|st| st.seed == seed)
                    .with_context(|| format!("phase-1 checkpoint has no entry for seed {seed}"))?
                    .clone();
                (state, None)
            }
            None => {
                let (bundle, report) =
                    skinner_phase1(s.world, &s.innate, &s.phase1, seed, |e, r| agent.observe_foraging(e, r))?;
                info!(
                    "seed {seed}: phase 1 mean reward {:.2}, contact rate {:.4}",
                    report.recent_mean_reward(50),
                    report.contact_rate()
                );
                (instinct_state(seed, &bundle, agent.value_unit()), Some(report))
            }
        };
        // Phase 2 always starts from the saved form, so a run resumed from
        // the checkpoint behaves exactly like the uninterrupted one.
        let bundle = restore_bundle(&state, s.phase1.q)?;
        agent.load_value_params(&state.value_unit)?;
        agent.install_instincts(bundle.clone());
        learned.push(state);

        let mut world = SkinnerWorld::lever_box(s.world, &s.innate, lever_world_seed(seed))?;
        let stop = !opts.run_all_trials;
        let (report, hica) = match opts.policy {
            Policy::Hica => {
                let r = skinner_phase2(&mut world, &mut agent, s.max_trials, stop)?;
                if agent.instincts() != Some(&bundle) {
                    bail!("seed {seed}: phase 2 modified the frozen instincts");
                }
                (r, Some(&agent))
            }
            Policy::Random => {
                let mut a = RandomAgent::new(0.5, derive_seed(seed, 0x726e));
                (skinner_phase2(&mut world, &mut a, s.max_trials, stop)?, None)
            }
            Policy::Oracle => (skinner_phase2(&mut world, &mut OracleAgent::default(), s.max_trials, stop)?, None),
        };
        write_trials(&mut trials, seed, opts, &report, hica)?;
        info!(
            "seed {seed}: {} trials, criterion {}",
            report.records.len(),
            report
                .trials_to_criterion
                .map_or("not reached".to_string(), |t| format!("at trial {t}"))
        );
        results.push(SeedResult {
            seed,
            trials_to_criterion: report.trials_to_criterion,
            trials_run: report.records.len(),
            phase1_mean_reward: phase1.as_ref().map(|p| p.recent_mean_reward(50)),
            phase1_contact_rate: phase1.as_ref().map(|p| p.contact_rate()),
        });
    }
    trials.flush()?;

    let summary_path = out.join(SUMMARY_FILE);
    let mut summary = create(&summary_path)?;
    writeln!(
        summary,
        "seed,policy,preplay,modulation,trials_to_criterion,trials_run,phase1_mean_reward,phase1_contact_rate"
    )?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in &results {
        writeln!(
            summary,
            "{},{},{},{},{},{},{},{}",
            r.seed,
            opts.policy.name(),
            opts.ablation.preplay as u8,
            opts.ablation.modulation as u8,
            r.trials_to_criterion.map_or("not_reached".to_string(), |t| t.to_string()),
            r.trials_run,
            opt(r.phase1_mean_reward),
            opt(r.phase1_contact_rate)
        )?;
    }
    summary.flush()?;

    let checkpoint = if saved.is_none() {
        let path = out.join(INSTINCTS_CHECKPOINT);
        save_checkpoint(
            &path,
            &Checkpoint {
                config: config.to_toml_string()?,
                payload: Payload::Instincts(learned),
            },
        )?;
        Some(path)
    } else {
        None
    };
    Ok(SkinnerSummary {
        seeds: results,
        trials: trials_path,
        summary: summary_path,
        checkpoint,
    })
}

// ------------------------------------------------------------ gradcheck

pub const GRADCHECK_SEEDS: u64 = 10;

/// The finite-difference sweep; `corrupt` shifts every analytic gradient
/// entry to prove the check can fail.
pub fn run_gradcheck(corrupt: bool) -> Result<GradcheckReport> {
    let report = gradcheck_sweep(0..GRADCHECK_SEEDS, if corrupt { 1e-2 } else { 0.0 })?;
    for eps in GRADCHECK_EPSILONS {
        info!("epsilon {eps:e}: worst relative error {:.3e}", report.worst_at(eps));
    }
    Ok(report)
}

// ------------------------------------------------------------ replay demo

pub fn run_replay_demo(config: &RunConfig, out: &Path) -> Result<ReplayReport> {
    config.validate()?;
    let report = replay_demo(&config.replay_demo, config.modulator)?;
    ensure_dir(out)?;
    let mut f = create(&out.join(REPLAY_FILE))?;
    writeln!(f, "seed,accuracy_before,accuracy_after")?;
    for r in &report.runs {
        writeln!(f, "{},{:.6},{:.6}", r.seed, r.before, r.after)?;
    }
    f.flush()?;
    Ok(report)
}
