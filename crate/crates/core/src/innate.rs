//! Hand-written subcortical circuits: needs and the reward signal, the mode
//! classifier, action arbitration between innate and learned proposals,
//! scripted reflexes, and a tabular learner for instinct training.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{HicaError, Result};
use crate::signal::{SeededRng, SignalVector};

/// Confidence above which a learned policy counts as a habit.
pub const HABIT_CONFIDENCE: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    North,
    South,
    East,
    West,
    PullLever,
    Eat,
    Noop,
}

impl Action {
    pub const ALL: [Action; 7] = [
        Action::North,
        Action::South,
        Action::East,
        Action::West,
        Action::PullLever,
        Action::Eat,
        Action::Noop,
    ];
    pub const MOVES: [Action; 4] = [Action::North, Action::South, Action::East, Action::West];

    pub fn index(self) -> usize {
        Action::ALL.iter().position(|&a| a == self).expect("listed")
    }

    /// Grid displacement, with y growing southward.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::North => (0, -1),
            Action::South => (0, 1),
            Action::East => (1, 0),
            Action::West => (-1, 0),
            _ => (0, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::North => "north",
            Action::South => "south",
            Action::East => "east",
            Action::West => "west",
            Action::PullLever => "pull_lever",
            Action::Eat => "eat",
            Action::Noop => "noop",
        }
    }
}

/// Things that happened during one world step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Events {
    pub food_consumed: bool,
    pub shock: bool,
    pub predator_contact: bool,
    pub lever_pulled: bool,
}

impl Events {
    pub fn is_empty(&self) -> bool {
        *self == Events::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeedParams {
    /// Hunger added per tick.
    pub hunger_rate: f64,
    /// Hunger removed by one meal.
    pub satiation: f64,
    /// Integrity lost per shock or predator contact.
    pub harm: f64,
    /// Integrity regained per tick.
    pub heal_rate: f64,
}

impl Default for NeedParams {
    fn default() -> Self {
        NeedParams {
            hunger_rate: 0.01,
            satiation: 0.5,
            harm: 0.2,
            heal_rate: 0.005,
        }
    }
}

/// Internal state the reward system watches. Both levels stay in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeedState {
    pub hunger: f64,
    /// 1 means unharmed.
    pub integrity: f64,
    pub params: NeedParams,
}

impl NeedState {
    pub fn new(params: NeedParams) -> Self {
        NeedState {
            hunger: 0.0,
            integrity: 1.0,
            params,
        }
    }

    pub fn with_hunger(mut self, hunger: f64) -> Self {
        self.hunger = hunger.clamp(0.0, 1.0);
        self
    }

    /// Advances one tick and applies the consequences of `events`.
    pub fn step(&mut self, events: &Events) {
        self.hunger = (self.hunger + self.params.hunger_rate).min(1.0);
        if events.food_consumed {
            self.hunger = (self.hunger - self.params.satiation).max(0.0);
        }
        let hits = events.shock as u8 + events.predator_contact as u8;
        self.integrity = (self.integrity - self.params.harm * f64::from(hits) + self.params.heal_rate).clamp(0.0, 1.0);
    }

    pub fn as_vector(&self) -> [f64; 2] {
        [self.hunger, self.integrity]
    }
}

/// +1 for food, -1 for a shock or predator contact; simultaneous events sum.
/// Need levels are accepted for the interface but the signal depends on the
/// events alone.
pub fn reward_evaluate(_before: &NeedState, _after: &NeedState, events: &Events) -> f64 {
    let mut r = 0.0;
    if events.food_consumed {
        r += 1.0;
    }
    if events.shock {
        r -= 1.0;
    }
    if events.predator_contact {
        r -= 1.0;
    }
    r
}

/// What the innate circuits can see: offsets (target minus agent) to the
/// nearest item of each kind, and the light.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Percept {
    pub food: Option<(i32, i32)>,
    pub predator: Option<(i32, i32)>,
    pub lever: Option<(i32, i32)>,
    pub light_on: bool,
}

pub fn manhattan((dx, dy): (i32, i32)) -> u32 {
    dx.unsigned_abs() + dy.unsigned_abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmygdalaMode {
    FightFlight,
    Automatic,
    Deliberate,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnateParams {
    pub danger_radius: u32,
    /// Hunger above which the need counts as unmet.
    pub hunger_threshold: f64,
    pub need: NeedParams,
}

impl Default for InnateParams {
    fn default() -> Self {
        InnateParams {
            danger_radius: 2,
            hunger_threshold: 0.5,
            need: NeedParams::default(),
        }
    }
}

pub fn amygdala_classify(percept: &Percept, need: &NeedState, has_habit: bool, params: &InnateParams) -> AmygdalaMode {
    if percept.predator.is_some_and(|p| manhattan(p) <= params.danger_radius) {
        AmygdalaMode::FightFlight
    } else if need.hunger > params.hunger_threshold {
        if has_habit {
            AmygdalaMode::Automatic
        } else {
            AmygdalaMode::Deliberate
        }
    } else {
        AmygdalaMode::Idle
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Innate,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionProposal {
    pub action: Action,
    pub source: Source,
    pub confidence: f64,
}

impl ActionProposal {
    pub fn innate(action: Action, confidence: f64) -> Self {
        ActionProposal {
            action,
            source: Source::Innate,
            confidence,
        }
    }

    pub fn learned(action: Action, confidence: f64) -> Self {
        ActionProposal {
            action,
            source: Source::Learned,
            confidence,
        }
    }

    /// Stand-in for a missing learned module.
    pub fn absent() -> Self {
        ActionProposal::learned(Action::Noop, 0.0)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate between innate and learned proposals, `g = sigmoid(u . context)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasalGanglia {
    weights: Vec<f64>,
}

impl BasalGanglia {
    /// Zero weights: the gate starts at one half.
    pub fn new(context_dim: usize) -> Self {
        BasalGanglia {
            weights: vec![0.0; context_dim],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn gate(&self, context: &SignalVector) -> Result<f64> {
        context.ensure_dim(self.weights.len(), "gate context")?;
        let z: f64 = self.weights.iter().zip(context.as_slice()).map(|(u, c)| u * c).sum();
        Ok(sigmoid(z))
    }

    /// Picks the learned proposal iff `g * learned > (1 - g) * innate`.
    pub fn arbitrate(
        &self,
        innate: &ActionProposal,
        learned: &ActionProposal,
        context: &SignalVector,
    ) -> Result<ActionProposal> {
        let g = self.gate(context)?;
        Ok(arbitrate_with_gate(innate, learned, g))
    }

    /// One logistic-regression step pushing the gate toward the source that
    /// turned out to be right in this context. Returns the cross-entropy.
    pub fn train(&mut self, context: &SignalVector, correct: Source, lr: f64) -> Result<f64> {
        let g = self.gate(context)?;
        let y = if correct == Source::Learned { 1.0 } else { 0.0 };
        for (u, c) in self.weights.iter_mut().zip(context.as_slice()) {
            *u -= lr * (g - y) * c;
        }
        if self.weights.iter().any(|u| !u.is_finite()) {
            return Err(HicaError::Divergence {
                unit: "basal_ganglia".into(),
                lr,
                reason: "non-finite gate weight".into(),
            });
        }
        let g = g.clamp(1e-12, 1.0 - 1e-12);
        Ok(-(y * g.ln() + (1.0 - y) * (1.0 - g).ln()))
    }
}

pub fn arbitrate_with_gate(innate: &ActionProposal, learned: &ActionProposal, g: f64) -> ActionProposal {
    if g * learned.confidence > (1.0 - g) * innate.confidence {
        *learned
    } else {
        *innate
    }
}

/// Free-function form used by callers that keep the gate weights elsewhere.
pub fn bg_arbitrate(
    innate: &ActionProposal,
    learned: &ActionProposal,
    gate_context: &SignalVector,
    weights: &[f64],
) -> Result<ActionProposal> {
    BasalGanglia {
        weights: weights.to_vec(),
    }
    .arbitrate(innate, learned, gate_context)
}

/// Confidence of the novelty reflex that investigates an unfamiliar lever.
pub const INVESTIGATE_CONFIDENCE: f64 = 0.3;

fn step_toward((dx, dy): (i32, i32)) -> Action {
    if dx.abs() >= dy.abs() {
        if dx > 0 {
            Action::East
        } else {
            Action::West
        }
    } else if dy > 0 {
        Action::South
    } else {
        Action::North
    }
}

fn step_away((dx, dy): (i32, i32)) -> Action {
    if dy.abs() >= dx.abs() && dy != 0 {
        if dy < 0 {
            Action::South
        } else {
            Action::North
        }
    } else if dx < 0 {
        Action::East
    } else {
        Action::West
    }
}

/// Priority rules: flee a nearby predator, eat food underfoot, walk toward
/// food, investigate a lit lever, otherwise wander.
pub fn reflex_policy(percept: &Percept, danger_radius: u32, rng: &mut SeededRng) -> ActionProposal {
    if let Some(p) = percept.predator.filter(|&p| manhattan(p) <= danger_radius) {
        return ActionProposal::innate(step_away(p), 1.0);
    }
    if let Some(f) = percept.food {
        if f == (0, 0) {
            return ActionProposal::innate(Action::Eat, 0.9);
        }
        return ActionProposal::innate(step_toward(f), 0.8);
    }
    if let (true, Some(l)) = (percept.light_on, percept.lever) {
        if manhattan(l) <= 1 {
            return ActionProposal::innate(Action::PullLever, INVESTIGATE_CONFIDENCE);
        }
        return ActionProposal::innate(step_toward(l), 0.5);
    }
    ActionProposal::innate(Action::MOVES[rng.below(4)], 0.2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for QParams {
    fn default() -> Self {
        QParams {
            alpha: 0.2,
            gamma: 0.9,
            epsilon: 0.1,
        }
    }
}

impl QParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(HicaError::Config("qlearning.alpha: must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(HicaError::Config("qlearning.gamma: must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(HicaError::Config("qlearning.epsilon: must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Tabular action values. Pairs never written read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub(crate) values: BTreeMap<(u64, usize), f64>,
    pub(crate) n_actions: usize,
    pub params: QParams,
}

impl QTable {
    pub fn new(n_actions: usize, params: QParams) -> Result<Self> {
        params.validate()?;
        if n_actions == 0 {
            return Err(HicaError::InvalidArgument("q-table needs at least one action".into()));
        }
        Ok(QTable {
            values: BTreeMap::new(),
            n_actions,
            params,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, state: u64, action: usize) -> f64 {
        self.values.get(&(state, action)).copied().unwrap_or(0.0)
    }

    pub fn max_value(&self, state: u64) -> f64 {
        (0..self.n_actions)
            .map(|a| self.get(state, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Best action; ties resolve to the lowest index.
    pub fn greedy(&self, state: u64) -> usize {
        let mut best = 0;
        for a in 1..self.n_actions {
            if self.get(state, a) > self.get(state, best) {
                best = a;
            }
        }
        best
    }

    pub fn epsilon_greedy(&self, state: u64, rng: &mut SeededRng) -> usize {
        if rng.chance(self.params.epsilon) {
            rng.below(self.n_actions)
        } else {
            self.greedy(state)
        }
    }

    /// `Q(s,a) += alpha * (r + gamma * max Q(s',.) - Q(s,a))`; a terminal
    /// transition (`next = None`) bootstraps from zero.
    pub fn update(&mut self, state: u64, action: usize, reward: f64, next: Option<u64>) -> f64 {
        let future = next.map_or(0.0, |s| self.max_value(s));
        let q = self.get(state, action);
        let updated = q + self.params.alpha * (reward + self.params.gamma * future - q);
        self.values.insert((state, action), updated);
        updated
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn q_update(table: &mut QTable, s: u64, a: usize, r: f64, s_next: Option<u64>) -> f64 {
    table.update(s, a, r, s_next)
}
