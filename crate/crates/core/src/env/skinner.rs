//! Gridworld operant-conditioning box. Phase 1 trains foraging and predator
//! avoidance instincts. Phase 2 introduces a lever and a light: pulling
//! under green dispenses a pellet, pulling under red delivers a shock, and
//! the measure is how many trials the agent needs to respond correctly.

use serde::{Deserialize, Serialize};

use crate::error::{HicaError, Result};
use crate::innate::{
    manhattan, reflex_policy, reward_evaluate, Action, ActionProposal, Events, InnateParams, NeedState, Percept,
    QParams, QTable,
};
use crate::signal::{SeededRng, SignalVector};

pub type Cell = (i32, i32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Light {
    Off,
    Green,
    Red,
}

impl Light {
    pub fn name(self) -> &'static str {
        match self {
            Light::Off => "off",
            Light::Green => "green",
            Light::Red => "red",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldParams {
    pub width: i32,
    pub height: i32,
    pub food_items: usize,
    pub predators: usize,
    pub trial_timeout: u32,
    pub inter_trial_interval: u32,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            width: 12,
            height: 12,
            food_items: 3,
            predators: 1,
            trial_timeout: 30,
            inter_trial_interval: 10,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        if self.width < 3 || self.height < 3 {
            return Err(HicaError::Config("world.width/height: must be at least 3".into()));
        }
        let cells = (self.width * self.height) as usize;
        if self.food_items + self.predators + 2 > cells {
            return Err(HicaError::Config("world.food_items: grid too small for the items".into()));
        }
        if self.trial_timeout == 0 {
            return Err(HicaError::Config("world.trial_timeout: must be positive".into()));
        }
        Ok(())
    }
}

/// Agent-relative view of the world plus its vector encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub percept: Percept,
    pub light: Light,
    pub hunger: f64,
    pub vector: SignalVector,
}

/// Food, predator and lever offsets with presence flags (9), light one-hot
/// (3), hunger and integrity (2).
pub const OBSERVATION_DIM: usize = 14;

#[derive(Debug, Clone)]
pub struct SkinnerWorld {
    params: WorldParams,
    rng: SeededRng,
    agent: Cell,
    food: Vec<Cell>,
    predators: Vec<Cell>,
    lever: Option<Cell>,
    light: Light,
    clock: u64,
    pub need: NeedState,
    log: Vec<(u64, Action, Events)>,
}

impl SkinnerWorld {
    /// Foraging world: food and predators, no lever.
    pub fn foraging(params: WorldParams, innate: &InnateParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut w = Self::bare(params, innate, seed);
        w.agent = w.random_free_cell();
        for _ in 0..params.food_items {
            let c = w.random_free_cell();
            w.food.push(c);
        }
        for _ in 0..params.predators {
            let c = w.random_free_cell();
            w.predators.push(c);
        }
        Ok(w)
    }

    /// Operant box: a lever on the north wall, no food, no predators.
    pub fn lever_box(params: WorldParams, innate: &InnateParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut w = Self::bare(params, innate, seed);
        w.lever = Some((params.width / 2, 0));
        w.agent = w.random_free_cell();
        Ok(w)
    }

    /// No items at all.
    pub fn empty(params: WorldParams, innate: &InnateParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut w = Self::bare(params, innate, seed);
        w.agent = w.random_free_cell();
        Ok(w)
    }

    fn bare(params: WorldParams, innate: &InnateParams, seed: u64) -> Self {
        SkinnerWorld {
            params,
            rng: SeededRng::new(seed),
            agent: (0, 0),
            food: Vec::new(),
            predators: Vec::new(),
            lever: None,
            light: Light::Off,
            clock: 0,
            need: NeedState::new(innate.need),
            log: Vec::new(),
        }
    }

    fn random_free_cell(&mut self) -> Cell {
        loop {
            let c = (
                self.rng.below(self.params.width as usize) as i32,
                self.rng.below(self.params.height as usize) as i32,
            );
            if c != self.agent && !self.food.contains(&c) && !self.predators.contains(&c) && Some(c) != self.lever {
                return c;
            }
        }
    }

    fn clamp(&self, (x, y): Cell) -> Cell {
        (x.clamp(0, self.params.width - 1), y.clamp(0, self.params.height - 1))
    }

    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn agent(&self) -> Cell {
        self.agent
    }

    pub fn place_agent(&mut self, cell: Cell) {
        self.agent = self.clamp(cell);
    }

    pub fn food(&self) -> &[Cell] {
        &self.food
    }

    pub fn place_food(&mut self, cell: Cell) {
        self.food.push(self.clamp(cell));
    }

    pub fn predators(&self) -> &[Cell] {
        &self.predators
    }

    pub fn place_predator(&mut self, cell: Cell) {
        self.predators.push(self.clamp(cell));
    }

    pub fn lever(&self) -> Option<Cell> {
        self.lever
    }

    pub fn light(&self) -> Light {
        self.light
    }

    pub fn set_light(&mut self, light: Light) {
        self.light = light;
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Every step so far: (tick, action, events).
    pub fn log(&self) -> &[(u64, Action, Events)] {
        &self.log
    }

    /// Fair coin from the world's own stream.
    pub fn draw_light(&mut self) -> Light {
        if self.rng.chance(0.5) {
            Light::Green
        } else {
            Light::Red
        }
    }

    fn offset_to_nearest(&self, items: &[Cell]) -> Option<Cell> {
        items
            .iter()
            .map(|&(x, y)| (x - self.agent.0, y - self.agent.1))
            .min_by_key(|&d| (manhattan(d), d))
    }

    pub fn observe(&self) -> Observation {
        let percept = Percept {
            food: self.offset_to_nearest(&self.food),
            predator: self.offset_to_nearest(&self.predators),
            lever: self.lever.map(|(x, y)| (x - self.agent.0, y - self.agent.1)),
            light_on: self.light != Light::Off,
        };
        let (w, h) = (self.params.width as f64, self.params.height as f64);
        let mut v = Vec::with_capacity(OBSERVATION_DIM);
        for item in [percept.food, percept.predator, percept.lever] {
            match item {
                Some((dx, dy)) => v.extend([dx as f64 / w, dy as f64 / h, 1.0]),
                None => v.extend([0.0, 0.0, 0.0]),
            }
        }
        v.extend(match self.light {
            Light::Off => [1.0, 0.0, 0.0],
            Light::Green => [0.0, 1.0, 0.0],
            Light::Red => [0.0, 0.0, 1.0],
        });
        v.extend(self.need.as_vector());
        Observation {
            percept,
            light: self.light,
            hunger: self.need.hunger,
            vector: SignalVector::from_raw(v),
        }
    }

    /// Applies the agent's action, moves predators, updates needs.
    pub fn step(&mut self, action: Action) -> (Observation, Events) {
        let mut events = Events::default();
        match action {
            Action::North | Action::South | Action::East | Action::West => {
                let (dx, dy) = action.delta();
                self.agent = self.clamp((self.agent.0 + dx, self.agent.1 + dy));
            }
            Action::Eat => {
                if let Some(i) = self.food.iter().position(|&f| f == self.agent) {
                    self.food.remove(i);
                    events.food_consumed = true;
                    let c = self.random_free_cell();
                    self.food.push(c);
                }
            }
            Action::PullLever => {
                if let Some(l) = self.lever {
                    if manhattan((l.0 - self.agent.0, l.1 - self.agent.1)) <= 1 {
                        events.lever_pulled = true;
                        match self.light {
                            Light::Green => events.food_consumed = true,
                            Light::Red => events.shock = true,
                            Light::Off => {}
                        }
                    }
                }
            }
            Action::Noop => {}
        }
        for i in 0..self.predators.len() {
            if self.predators[i] == self.agent {
                continue;
            }
            let (dx, dy) = match self.rng.below(5) {
                0 => (0, -1),
                1 => (0, 1),
                2 => (1, 0),
                3 => (-1, 0),
                _ => (0, 0),
            };
            let p = self.predators[i];
            self.predators[i] = self.clamp((p.0 + dx, p.1 + dy));
        }
        if self.predators.contains(&self.agent) {
            events.predator_contact = true;
        }
        self.need.step(&events);
        self.clock += 1;
        self.log.push((self.clock, action, events));
        (self.observe(), events)
    }
}

pub fn world_step(world: &mut SkinnerWorld, action: Action) -> (Observation, Events) {
    world.step(action)
}

/// Moves toward the lever and pulls once adjacent.
pub fn approach_and_pull(percept: &Percept) -> Action {
    match percept.lever {
        Some(l) if manhattan(l) <= 1 => Action::PullLever,
        Some((dx, dy)) => {
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
        None => Action::Noop,
    }
}

// ---------------------------------------------------------------- phase 1

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase1Params {
    pub episodes: usize,
    pub episode_ticks: u32,
    pub q: QParams,
}

impl Default for Phase1Params {
    fn default() -> Self {
        Phase1Params {
            episodes: 300,
            episode_ticks: 200,
            q: QParams::default(),
        }
    }
}

/// Actions the instinct learner chooses among.
pub const INSTINCT_ACTIONS: [Action; 5] = [Action::North, Action::South, Action::East, Action::West, Action::Eat];

fn direction_code(offset: Option<Cell>) -> u64 {
    match offset {
        None => 0,
        Some((0, 0)) => 1,
        Some((dx, dy)) if dx.abs() >= dy.abs() => {
            if dx > 0 {
                2
            } else {
                3
            }
        }
        Some((_, dy)) => {
            if dy > 0 {
                4
            } else {
                5
            }
        }
    }
}

/// Coarse state: direction of the nearest food, and of the predator when
/// it is inside the danger radius.
pub fn instinct_state(percept: &Percept, danger_radius: u32) -> u64 {
    let threat = percept.predator.filter(|&p| manhattan(p) <= danger_radius);
    direction_code(percept.food) * 6 + direction_code(threat)
}

/// Frozen output of phase 1: reflexes plus the learned action values.
#[derive(Debug, Clone, PartialEq)]
pub struct InstinctBundle {
    pub qtable: QTable,
    pub danger_radius: u32,
}

impl InstinctBundle {
    /// Reflexes handle danger and any situation the learner never saw;
    /// otherwise the best learned action.
    pub fn propose(&self, percept: &Percept, rng: &mut SeededRng) -> ActionProposal {
        let reflex = reflex_policy(percept, self.danger_radius, rng);
        if reflex.confidence >= 1.0 {
            return reflex;
        }
        let s = instinct_state(percept, self.danger_radius);
        let known = (0..INSTINCT_ACTIONS.len()).any(|a| self.qtable.get(s, a) != 0.0);
        if known && self.qtable.max_value(s) > 0.0 {
            ActionProposal::innate(INSTINCT_ACTIONS[self.qtable.greedy(s)], 0.8)
        } else {
            reflex
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Report {
    pub episode_rewards: Vec<f64>,
    pub food_eaten: u64,
    pub contacts: u64,
    pub ticks: u64,
}

impl Phase1Report {
    pub fn contact_rate(&self) -> f64 {
        if self.ticks == 0 {
            0.0
        } else {
            self.contacts as f64 / self.ticks as f64
        }
    }

    /// Mean reward per episode over the last `n` episodes.
    pub fn recent_mean_reward(&self, n: usize) -> f64 {
        let tail = &self.episode_rewards[self.episode_rewards.len().saturating_sub(n)..];
        if tail.is_empty() {
            0.0
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        }
    }
}

/// Trains the instinct learner with reflexes as the default behaviour.
/// `observer` sees every step's events and reward.
pub fn skinner_phase1<F>(
    world_params: WorldParams,
    innate: &InnateParams,
    params: &Phase1Params,
    seed: u64,
    mut observer: F,
) -> Result<(InstinctBundle, Phase1Report)>
where
    F: FnMut(&Events, f64) -> Result<()>,
{
    let mut rng = SeededRng::new(seed);
    let mut bundle = InstinctBundle {
        qtable: QTable::new(INSTINCT_ACTIONS.len(), params.q)?,
        danger_radius: innate.danger_radius,
    };
    let mut report = Phase1Report {
        episode_rewards: Vec::with_capacity(params.episodes),
        food_eaten: 0,
        contacts: 0,
        ticks: 0,
    };
    for episode in 0..params.episodes {
        let mut world = SkinnerWorld::foraging(world_params, innate, rng.child(episode as u64).seed())?;
        let mut obs = world.observe();
        let mut total = 0.0;
        for _ in 0..params.episode_ticks {
            let s = instinct_state(&obs.percept, bundle.danger_radius);
            let action = if rng.chance(params.q.epsilon) {
                INSTINCT_ACTIONS[rng.below(INSTINCT_ACTIONS.len())]
            } else {
                bundle.propose(&obs.percept, &mut rng).action
            };
            let before = world.need;
            let (next, events) = world.step(action);
            let r = reward_evaluate(&before, &world.need, &events);
            if let Some(a) = INSTINCT_ACTIONS.iter().position(|&x| x == action) {
                let s_next = instinct_state(&next.percept, bundle.danger_radius);
                bundle.qtable.update(s, a, r, Some(s_next));
            }
            observer(&events, r)?;
            total += r;
            report.ticks += 1;
            report.food_eaten += events.food_consumed as u64;
            report.contacts += events.predator_contact as u64;
            obs = next;
        }
        report.episode_rewards.push(total);
    }
    Ok((bundle, report))
}

// ---------------------------------------------------------------- phase 2

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    /// 1-based.
    pub index: usize,
    pub light: Light,
    pub pulled: bool,
    /// +1 pellet, -1 shock, 0 nothing.
    pub outcome: f64,
    pub correct: bool,
}

impl TrialRecord {
    pub fn new(index: usize, light: Light, pulled: bool, outcome: f64) -> Self {
        let correct = (pulled && light == Light::Green) || (!pulled && light == Light::Red);
        TrialRecord {
            index,
            light,
            pulled,
            outcome,
            correct,
        }
    }
}

pub const CRITERION_WINDOW: usize = 10;
pub const CRITERION_CORRECT: usize = 9;

/// First trial index at which at least 9 of the last 10 trials were correct.
pub fn trials_to_criterion(records: &[TrialRecord]) -> Option<usize> {
    (CRITERION_WINDOW..=records.len())
        .find(|&end| records[end - CRITERION_WINDOW..end].iter().filter(|r| r.correct).count() >= CRITERION_CORRECT)
        .map(|end| records[end - 1].index)
}

/// Anything that can sit in the box.
pub trait Phase2Agent {
    /// The light has just come on.
    fn begin_trial(&mut self, trial: usize, obs: &Observation) -> Result<()>;
    fn act(&mut self, obs: &Observation) -> Result<Action>;
    /// The trial is over; the inter-trial interval follows.
    fn end_trial(&mut self, record: &TrialRecord) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase2Report {
    pub records: Vec<TrialRecord>,
    pub trials_to_criterion: Option<usize>,
}

/// Hunger level the animal is held at during lever training.
pub const DEPRIVED_HUNGER: f64 = 0.9;

pub fn skinner_phase2(
    world: &mut SkinnerWorld,
    agent: &mut dyn Phase2Agent,
    max_trials: usize,
    stop_at_criterion: bool,
) -> Result<Phase2Report> {
    if world.lever().is_none() {
        return Err(HicaError::InvalidArgument("phase 2 needs a lever".into()));
    }
    let mut records = Vec::new();
    let mut reached = None;
    for trial in 1..=max_trials {
        world.need.hunger = DEPRIVED_HUNGER;
        let light = world.draw_light();
        world.set_light(light);
        let mut obs = world.observe();
        agent.begin_trial(trial, &obs)?;
        let mut pulled = false;
        let mut outcome = 0.0;
        for _ in 0..world.params().trial_timeout {
            let action = agent.act(&obs)?;
            let before = world.need;
            let (next, events) = world.step(action);
            obs = next;
            if events.lever_pulled {
                pulled = true;
                outcome = reward_evaluate(&before, &world.need, &events);
                break;
            }
        }
        world.set_light(Light::Off);
        let record = TrialRecord::new(trial, light, pulled, outcome);
        records.push(record);
        agent.end_trial(&record)?;
        for _ in 0..world.params().inter_trial_interval {
            world.step(Action::Noop);
        }
        if reached.is_none() {
            reached = trials_to_criterion(&records);
            if reached.is_some() && stop_at_criterion {
                break;
            }
        }
    }
    Ok(Phase2Report {
        records,
        trials_to_criterion: reached,
    })
}

/// Pulls with a fixed probability, decided when the light comes on.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    rng: SeededRng,
    p_pull: f64,
    pull: bool,
}

impl RandomAgent {
    pub fn new(p_pull: f64, seed: u64) -> Self {
        RandomAgent {
            rng: SeededRng::new(seed),
            p_pull,
            pull: false,
        }
    }
}

impl Phase2Agent for RandomAgent {
    fn begin_trial(&mut self, _trial: usize, _obs: &Observation) -> Result<()> {
        self.pull = self.rng.chance(self.p_pull);
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        Ok(if self.pull { approach_and_pull(&obs.percept) } else { Action::Noop })
    }

    fn end_trial(&mut self, _record: &TrialRecord) -> Result<()> {
        Ok(())
    }
}

/// Reads the light and always does the right thing.
#[derive(Debug, Clone, Default)]
pub struct OracleAgent {
    pull: bool,
}

impl Phase2Agent for OracleAgent {
    fn begin_trial(&mut self, _trial: usize, obs: &Observation) -> Result<()> {
        self.pull = obs.light == Light::Green;
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        Ok(if self.pull { approach_and_pull(&obs.percept) } else { Action::Noop })
    }

    fn end_trial(&mut self, _record: &TrialRecord) -> Result<()> {
        Ok(())
    }
}

/// Probability that an agent correct with probability `p` on independent
/// trials hits 9 of 10 within `trials` trials. Dynamic programming over the
/// last ten outcomes.
pub fn criterion_probability(p: f64, trials: usize) -> f64 {
    let states = 1usize << CRITERION_WINDOW;
    let mut dist = vec![0.0; states];
    // Bit i set means trial t-i was correct. Before the first trial the
    // window is padded with failures.
    dist[0] = 1.0;
    let mut hit = 0.0;
    for t in 1..=trials {
        let mut next = vec![0.0; states];
        for (s, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (correct, pr) in [(1usize, p), (0, 1.0 - p)] {
                let ns = ((s << 1) | correct) & (states - 1);
                if t >= CRITERION_WINDOW && ns.count_ones() as usize >= CRITERION_CORRECT {
                    hit += mass * pr;
                } else {
                    next[ns] += mass * pr;
                }
            }
        }
        dist = next;
    }
    hit
}
