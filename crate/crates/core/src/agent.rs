//! Closed-loop agent for the lever task. The innate side (reflexes plus the
//! frozen phase-1 instincts) handles navigation and the default urge to
//! investigate a lit lever. The learned side is a single top-level layer fed
//! symbolic event codes, a prefrontal value unit, and the hippocampal loop
//! for imagining outcomes and replaying episodes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::env::skinner::{approach_and_pull, InstinctBundle, Light, Observation, Phase2Agent, TrialRecord};
use crate::error::{HicaError, Result};
use crate::hippocampus::{
    preplay, replay, replay_at_gain, LoopMemory, MotorGate, PlanResult, PreplayParams, PrefrontalUnit,
};
use crate::innate::{
    amygdala_classify, Action, ActionProposal, AmygdalaMode, BasalGanglia, Events, InnateParams, NeedState,
    HABIT_CONFIDENCE, INVESTIGATE_CONFIDENCE, Source,
};
use crate::layer::{Layer, LayerSpec};
use crate::neuromod::{Modulator, ModulatorParams};
use crate::signal::{SeededRng, SignalVector};

/// Symbols the top level sees. Each gets a fixed code vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Hunger,
    Green,
    Red,
    Pull,
    Withhold,
    Food,
    Shock,
    Nothing,
    Pain,
}

impl Symbol {
    pub const ALL: [Symbol; 9] = [
        Symbol::Hunger,
        Symbol::Green,
        Symbol::Red,
        Symbol::Pull,
        Symbol::Withhold,
        Symbol::Food,
        Symbol::Shock,
        Symbol::Nothing,
        Symbol::Pain,
    ];

    fn index(self) -> usize {
        Symbol::ALL.iter().position(|&s| s == self).unwrap_or(0)
    }

    pub fn of_light(light: Light) -> Option<Symbol> {
        match light {
            Light::Green => Some(Symbol::Green),
            Light::Red => Some(Symbol::Red),
            Light::Off => None,
        }
    }

    pub fn of_outcome(outcome: f64) -> Symbol {
        if outcome > 0.0 {
            Symbol::Food
        } else if outcome < 0.0 {
            Symbol::Shock
        } else {
            Symbol::Nothing
        }
    }
}

/// Random orthonormal code per symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    codes: Vec<SignalVector>,
}

impl Codebook {
    pub fn new(dim: usize, rng: &mut SeededRng) -> Result<Self> {
        if dim < Symbol::ALL.len() {
            return Err(HicaError::InvalidArgument(format!(
                "code dim {dim} below symbol count {}",
                Symbol::ALL.len()
            )));
        }
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < Symbol::ALL.len() {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gaussian(1.0)).collect();
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                basis.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        Ok(Codebook {
            codes: basis.into_iter().map(SignalVector::from_raw).collect(),
        })
    }

    pub fn code(&self, s: Symbol) -> &SignalVector {
        &self.codes[s.index()]
    }

    /// Gap between the best and second-best cosine match over all symbols,
    /// floored at zero. High only when `v` clearly names one symbol.
    pub fn margin(&self, v: &SignalVector) -> f64 {
        let mut sims: Vec<f64> = self.codes.iter().map(|c| c.cosine(v)).collect();
        sims.sort_by(|a, b| b.total_cmp(a));
        (sims[0] - sims[1]).max(0.0)
    }

    /// Closest symbol among `candidates` by cosine, with the similarity.
    pub fn nearest(&self, v: &SignalVector, candidates: &[Symbol]) -> (Symbol, f64) {
        candidates
            .iter()
            .map(|&s| (s, self.code(s).cosine(v)))
            .fold((candidates[0], f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentParams {
    pub code_dim: usize,
    pub top_lr: f64,
    pub value_lr: f64,
    pub replay_repetitions: usize,
    /// Recent salient episodes kept for interleaved replay.
    pub replay_buffer: usize,
    pub preplay: PreplayParams,
}

impl Default for AgentParams {
    fn default() -> Self {
        AgentParams {
            code_dim: 16,
            top_lr: 0.2,
            value_lr: 0.05,
            replay_repetitions: 20,
            replay_buffer: 4,
            preplay: PreplayParams {
                max_steps: 2,
                ..PreplayParams::default()
            },
        }
    }
}

impl AgentParams {
    pub fn validate(&self) -> Result<()> {
        if self.code_dim < Symbol::ALL.len() {
            return Err(HicaError::Config(format!(
                "agent.code_dim: must be at least {}",
                Symbol::ALL.len()
            )));
        }
        for (name, lr) in [("agent.top_lr", self.top_lr), ("agent.value_lr", self.value_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(HicaError::Config(format!("{name}: must be positive")));
            }
        }
        if self.replay_repetitions == 0 {
            return Err(HicaError::Config("agent.replay_repetitions: must be positive".into()));
        }
        if self.replay_buffer == 0 {
            return Err(HicaError::Config("agent.replay_buffer: must be positive".into()));
        }
        self.preplay.validate()
    }
}

/// Which learned pathways are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub preplay: bool,
    pub modulation: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            preplay: true,
            modulation: true,
        }
    }
}

/// How one trial's response was chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub trial: usize,
    pub mode: AmygdalaMode,
    pub familiarity: f64,
    pub plan: Option<PlanResult>,
    pub learned: ActionProposal,
    pub chosen: ActionProposal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Habit {
    action: Action,
    confidence: f64,
}

/// Step size for the arbitration gate.
const GATE_LR: f64 = 0.5;

/// Trace of what left the agent, for checking motor gating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotorTrace {
    PreplayStart,
    PreplayEnd,
    Emitted(Action),
}

#[derive(Debug, Clone)]
pub struct HicaAgent {
    params: AgentParams,
    modulator_params: ModulatorParams,
    ablation: Ablation,
    innate: InnateParams,
    instincts: Option<InstinctBundle>,
    codes: Codebook,
    top: Layer,
    value: PrefrontalUnit,
    modulator: Modulator,
    episode: LoopMemory,
    salient: VecDeque<(LoopMemory, f64)>,
    imagination: LoopMemory,
    gate: MotorGate,
    basal: BasalGanglia,
    habits: [Option<Habit>; 2],
    seed: u64,
    rng: SeededRng,
    pull: bool,
    decisions: Vec<Decision>,
    trace: Vec<MotorTrace>,
}

fn habit_slot(light: Light) -> Option<usize> {
    match light {
        Light::Green => Some(0),
        Light::Red => Some(1),
        Light::Off => None,
    }
}

impl HicaAgent {
    pub fn new(
        params: AgentParams,
        modulator_params: ModulatorParams,
        ablation: Ablation,
        innate: InnateParams,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        modulator_params.validate()?;
        let rng = SeededRng::new(seed);
        let codes = Codebook::new(params.code_dim, &mut rng.child(0))?;
        let d = params.code_dim;
        let spec = LayerSpec::continuous(d, d / 2, d).with_lr(params.top_lr);
        let top = Layer::new(spec, &mut rng.child(1))?;
        let value = PrefrontalUnit::new(d, params.value_lr, &mut rng.child(2))?;
        Ok(HicaAgent {
            params,
            modulator_params,
            ablation,
            innate,
            instincts: None,
            codes,
            top,
            value,
            modulator: Modulator::new(modulator_params),
            episode: LoopMemory::new(params.preplay.capacity, d)?,
            salient: VecDeque::new(),
            imagination: LoopMemory::new(params.preplay.capacity, d)?,
            gate: MotorGate::default(),
            basal: BasalGanglia::new(d),
            habits: [None; 2],
            seed,
            rng: rng.child(3),
            pull: false,
            decisions: Vec::new(),
            trace: Vec::new(),
        })
    }

    /// Hands over the navigation instincts learned while foraging. Needed
    /// before the first lever trial. Also restarts the agent's random
    /// stream, so lever trials do not depend on how phase 1 was reached
    /// (run live or restored from a checkpoint).
    pub fn install_instincts(&mut self, instincts: InstinctBundle) {
        self.instincts = Some(instincts);
        self.rng = SeededRng::new(self.seed).child(4);
    }

    pub fn instincts(&self) -> Option<&InstinctBundle> {
        self.instincts.as_ref()
    }

    /// Overwrites the value unit's parameters, e.g. from a checkpoint.
    pub fn load_value_params(&mut self, params: &[f64]) -> Result<()> {
        let dst = self.value.net_mut().params_mut();
        if dst.len() != params.len() {
            return Err(HicaError::dim("value unit parameters", dst.len(), params.len()));
        }
        dst.copy_from_slice(params);
        Ok(())
    }

    pub fn codes(&self) -> &Codebook {
        &self.codes
    }

    pub fn top(&self) -> &Layer {
        &self.top
    }

    pub fn value_unit(&self) -> &PrefrontalUnit {
        &self.value
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn motor_trace(&self) -> &[MotorTrace] {
        &self.trace
    }

    fn gain(&self) -> f64 {
        if self.ablation.modulation {
            self.modulator.gain()
        } else {
            self.modulator_params.g_min
        }
    }

    /// Phase-1 hook: learn what foraging outcomes are worth.
    pub fn observe_foraging(&mut self, events: &Events, reward: f64) -> Result<()> {
        let gain = self.gain();
        if events.food_consumed {
            self.value.train_scaled(self.codes.code(Symbol::Food), reward.max(1.0), gain)?;
        }
        if events.predator_contact {
            self.value.train_scaled(self.codes.code(Symbol::Pain), -1.0, gain)?;
        }
        if events.is_empty() && self.rng.chance(0.1) {
            let s = if self.rng.chance(0.5) { Symbol::Hunger } else { Symbol::Nothing };
            self.value.train_scaled(self.codes.code(s), 0.0, gain)?;
        }
        Ok(())
    }

    fn feed(&mut self, s: Symbol) -> Result<()> {
        let code = self.codes.code(s).clone();
        self.top.feed(&code, self.gain())?;
        self.episode.record(&code)
    }

    /// Teaches the arbitration gate which source was right for this cue.
    /// Only trials where the two sources disagreed carry a label.
    fn train_gate(&mut self, record: &TrialRecord) -> Result<()> {
        let Some(d) = self.decisions.last() else {
            return Ok(());
        };
        if d.learned.confidence <= 0.0 || d.learned.action == Action::PullLever {
            return Ok(());
        }
        let Some(light) = Symbol::of_light(record.light) else {
            return Ok(());
        };
        let right = match (record.correct, d.chosen.source) {
            (true, s) => s,
            (false, Source::Learned) => Source::Innate,
            (false, Source::Innate) => Source::Learned,
        };
        let context = self.codes.code(light).clone();
        self.basal.train(&context, right, GATE_LR)?;
        Ok(())
    }

    fn decide(&mut self, trial: usize, obs: &Observation) -> Result<Decision> {
        let light_symbol = Symbol::of_light(obs.light)
            .ok_or_else(|| HicaError::InvalidArgument("trial started with the light off".into()))?;
        self.top.reset_history()?;
        self.episode.clear();
        self.feed(Symbol::Hunger)?;
        self.feed(light_symbol)?;
        let familiarity = self.crispness()?;

        let need = NeedState::new(self.innate.need).with_hunger(obs.hunger);
        let has_habit = habit_slot(obs.light).and_then(|i| self.habits[i]).is_some();
        let mode = amygdala_classify(&obs.percept, &need, has_habit, &self.innate);
        let actions = [Symbol::Pull, Symbol::Withhold];
        let as_action = |s: Symbol| if s == Symbol::Pull { Action::PullLever } else { Action::Noop };

        let mut plan = None;
        let learned = match mode {
            AmygdalaMode::Automatic => {
                let h = habit_slot(obs.light).and_then(|i| self.habits[i]);
                h.map_or(ActionProposal::absent(), |h| ActionProposal::learned(h.action, h.confidence))
            }
            AmygdalaMode::Deliberate if self.ablation.preplay => {
                let seed = [self.codes.code(Symbol::Hunger).clone(), self.codes.code(light_symbol).clone()];
                self.trace.push(MotorTrace::PreplayStart);
                let result = preplay(
                    mode,
                    &seed,
                    &self.top,
                    &self.value,
                    &mut self.imagination,
                    &mut self.gate,
                    &self.params.preplay,
                    &mut self.rng,
                )?;
                self.trace.push(MotorTrace::PreplayEnd);
                self.gate.enable();
                let proposal = if result.accepted {
                    // The imagined step right after the cues is the response.
                    let first = result.plan.get(seed.len()).cloned().unwrap_or_else(|| seed[1].clone());
                    let (s, _) = self.codes.nearest(&first, &actions);
                    ActionProposal::learned(as_action(s), familiarity * result.value.min(1.0))
                } else {
                    let dread = (-result.min_value()).clamp(0.0, 1.0);
                    ActionProposal::learned(Action::Noop, familiarity * dread)
                };
                plan = Some(result);
                proposal
            }
            AmygdalaMode::Deliberate => {
                // Without imagination only the direct next-step guess is
                // available.
                let guess = self.top.peek_prediction().clone();
                let (s, sim) = self.codes.nearest(&guess, &actions);
                ActionProposal::learned(as_action(s), familiarity * sim.max(0.0))
            }
            AmygdalaMode::FightFlight | AmygdalaMode::Idle => ActionProposal::absent(),
        };
        let innate = ActionProposal::innate(Action::PullLever, INVESTIGATE_CONFIDENCE);
        let chosen = self.basal.arbitrate(&innate, &learned, self.codes.code(light_symbol))?;
        Ok(Decision {
            trial,
            mode,
            familiarity,
            plan,
            learned,
            chosen,
        })
    }

    /// How sharply the top level's noiseless continuation of the current
    /// history (response, then outcome) lands on known symbols. Near zero
    /// for cues the model has never learned anything about.
    fn crispness(&self) -> Result<f64> {
        let context = SignalVector::zeros(self.top.spec().d_ctx);
        let mut history = self.episode.contents();
        let mut crisp = f64::INFINITY;
        for _ in 0..2 {
            let next = self.top.predict_from(&history, &context)?;
            crisp = crisp.min(self.codes.margin(&next));
            history.push(next);
        }
        Ok(crisp)
    }

    fn consolidate(&mut self, outcome: f64) -> Result<()> {
        if outcome.abs() < 1.0 {
            let states = self.episode.contents();
            return self.train_value(&states, outcome);
        }
        self.salient.push_back((self.episode.clone(), outcome));
        while self.salient.len() > self.params.replay_buffer {
            self.salient.pop_front();
        }
        // Interleave the new episode with the other recent salient ones so
        // consolidating one does not overwrite the rest.
        let buffer: Vec<_> = self.salient.iter().cloned().collect();
        for _ in 0..self.params.replay_repetitions {
            for (memory, outcome) in &buffer {
                if self.ablation.modulation {
                    self.modulator.set_level(1.0);
                    self.train_value(&memory.contents(), *outcome)?;
                    replay(memory, &mut self.top, &mut self.modulator, 1)?;
                } else {
                    self.train_value(&memory.contents(), *outcome)?;
                    replay_at_gain(memory, &mut self.top, self.modulator_params.g_min, 1)?;
                }
            }
        }
        Ok(())
    }

    /// Only the final state of an episode carries its outcome.
    fn train_value(&mut self, states: &[SignalVector], outcome: f64) -> Result<()> {
        let gain = self.gain();
        for (i, s) in states.iter().enumerate() {
            let target = if i + 1 == states.len() { outcome } else { 0.0 };
            self.value.train_scaled(s, target, gain)?;
        }
        Ok(())
    }
}

impl Phase2Agent for HicaAgent {
    fn begin_trial(&mut self, trial: usize, obs: &Observation) -> Result<()> {
        if self.instincts.is_none() {
            return Err(HicaError::InvalidArgument("lever trials need installed instincts".into()));
        }
        let decision = self.decide(trial, obs)?;
        self.pull = decision.chosen.action == Action::PullLever;
        self.decisions.push(decision);
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        if self.ablation.modulation {
            self.modulator.decay_step();
        }
        let action = if self.pull {
            let instincts = self.instincts.as_ref().expect("checked in begin_trial");
            let nav = instincts.propose(&obs.percept, &mut self.rng);
            // Danger overrides everything; otherwise head for the lever.
            if nav.confidence >= 1.0 {
                nav.action
            } else {
                approach_and_pull(&obs.percept)
            }
        } else {
            Action::Noop
        };
        let action = self.gate.emit(action)?;
        self.trace.push(MotorTrace::Emitted(action));
        Ok(action)
    }

    fn end_trial(&mut self, record: &TrialRecord) -> Result<()> {
        self.feed(if record.pulled { Symbol::Pull } else { Symbol::Withhold })?;
        if self.ablation.modulation && record.outcome != 0.0 {
            self.modulator.reward_event(record.outcome);
        }
        self.feed(Symbol::of_outcome(record.outcome))?;
        self.consolidate(record.outcome)?;
        self.train_gate(record)?;

        let Some(slot) = habit_slot(record.light) else {
            return Ok(());
        };
        // A confident learned decision that was not punished becomes a
        // habit for this cue; punishment erases it.
        let last = self.decisions.last().map(|d| d.chosen);
        match last {
            _ if record.outcome < 0.0 => self.habits[slot] = None,
            Some(chosen) if chosen.source == Source::Learned && chosen.confidence > HABIT_CONFIDENCE => {
                self.habits[slot] = Some(Habit {
                    action: chosen.action,
                    confidence: chosen.confidence,
                });
            }
            _ => {}
        }
        Ok(())
    }
}
