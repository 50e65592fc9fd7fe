//! Loop memory over top-level vectors and the two programs that use it:
//! replay, which re-feeds a stored episode to consolidate it, and preplay,
//! which rolls the top layer forward from a need and scores each imagined
//! state with a reward predictor before letting the body act.

use serde::{Deserialize, Serialize};

use crate::error::{HicaError, Result};
use crate::graph::{HetGraph, NodeId};
use crate::innate::AmygdalaMode;
use crate::layer::Layer;
use crate::neuromod::Modulator;
use crate::signal::{SeededRng, SignalVector};
use crate::unit::{Activation, Differentiable, Mlp};

/// Fixed-capacity ring of top-level vectors. While pinned, slot M1 is never
/// overwritten; the ring wraps over the remaining slots instead.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopMemory {
    slots: Vec<SignalVector>,
    capacity: usize,
    dim: usize,
    next: usize,
    pinned: bool,
}

impl LoopMemory {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity < 2 {
            return Err(HicaError::InvalidArgument("loop memory needs at least 2 slots".into()));
        }
        Ok(LoopMemory {
            slots: Vec::with_capacity(capacity),
            capacity,
            dim,
            next: 0,
            pinned: false,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn filled(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn clear(&mut self) {
        self.slots.clear();
        self.next = 0;
        self.pinned = false;
    }

    fn ring_start(&self) -> usize {
        usize::from(self.pinned)
    }

    pub fn record(&mut self, v: &SignalVector) -> Result<()> {
        v.ensure_dim(self.dim, "loop memory")?;
        if self.slots.len() < self.capacity {
            self.slots.push(v.clone());
            if self.slots.len() == self.capacity {
                self.next = self.ring_start();
            }
        } else {
            self.slots[self.next] = v.clone();
            self.next += 1;
            if self.next == self.capacity {
                self.next = self.ring_start();
            }
        }
        Ok(())
    }

    /// Clears the loop and puts `need` in M1, pinned there.
    pub fn seed(&mut self, need: &SignalVector) -> Result<()> {
        self.clear();
        self.record(need)?;
        self.pinned = true;
        Ok(())
    }

    /// Contents oldest first (M1 first while pinned).
    pub fn contents(&self) -> Vec<SignalVector> {
        if self.slots.len() < self.capacity {
            return self.slots.clone();
        }
        let start = self.ring_start();
        let mut out: Vec<SignalVector> = self.slots[..start].to_vec();
        out.extend_from_slice(&self.slots[self.next..]);
        out.extend_from_slice(&self.slots[start..self.next]);
        out
    }
}

/// Re-feeds the stored sequence into the layer's autoregressor `repetitions`
/// times. Each pass starts from an empty history with the modulator at full
/// level, decaying once per step. Returns the mean loss of every pass.
pub fn replay(
    memory: &LoopMemory,
    layer: &mut Layer,
    modulator: &mut Modulator,
    repetitions: usize,
) -> Result<Vec<f64>> {
    if memory.is_empty() {
        return Err(HicaError::InvalidArgument("replay needs a non-empty loop".into()));
    }
    if repetitions == 0 {
        return Err(HicaError::InvalidArgument("replay needs at least one repetition".into()));
    }
    let episode = memory.contents();
    let context = SignalVector::zeros(layer.spec().d_ctx);
    let mut trace = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        modulator.set_level(1.0);
        let mut total = 0.0;
        for i in 0..episode.len() {
            total += layer.train_ar_on(&episode[..i], &context, &episode[i], modulator.gain())?;
            modulator.decay_step();
        }
        trace.push(total / episode.len() as f64);
    }
    layer.reset_history()?;
    Ok(trace)
}

/// Replay without modulation: every step trains at the same `gain`.
pub fn replay_at_gain(memory: &LoopMemory, layer: &mut Layer, gain: f64, repetitions: usize) -> Result<Vec<f64>> {
    if memory.is_empty() {
        return Err(HicaError::InvalidArgument("replay needs a non-empty loop".into()));
    }
    let episode = memory.contents();
    let context = SignalVector::zeros(layer.spec().d_ctx);
    let mut trace = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let mut total = 0.0;
        for i in 0..episode.len() {
            total += layer.train_ar_on(&episode[..i], &context, &episode[i], gain)?;
        }
        trace.push(total / episode.len() as f64);
    }
    layer.reset_history()?;
    Ok(trace)
}

pub fn replay_top(
    graph: &mut HetGraph,
    top: NodeId,
    memory: &LoopMemory,
    modulator: &mut Modulator,
    repetitions: usize,
) -> Result<Vec<f64>> {
    replay(memory, graph.layer_mut(top), modulator, repetitions)
}

/// Fraction of next-step predictions (starting from an empty history, zero
/// context) whose argmax matches the stored step.
pub fn episode_accuracy(layer: &Layer, episode: &[SignalVector]) -> Result<f64> {
    let context = SignalVector::zeros(layer.spec().d_ctx);
    let mut hits = 0;
    for i in 0..episode.len() {
        let p = layer.predict_from(&episode[..i], &context)?;
        if p.argmax() == episode[i].argmax() {
            hits += 1;
        }
    }
    Ok(hits as f64 / episode.len() as f64)
}

/// Scalar reward predictor over top-level states.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefrontalUnit {
    net: Mlp,
    lr: f64,
}

impl PrefrontalUnit {
    pub fn new(dim: usize, lr: f64, rng: &mut SeededRng) -> Result<Self> {
        Ok(PrefrontalUnit {
            net: Mlp::new(dim, Some(2 * dim), 1, Activation::Identity, rng),
            lr,
        })
    }

    pub fn dim(&self) -> usize {
        self.net.n_in()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn from_net(net: Mlp, lr: f64) -> Result<Self> {
        if net.n_out() != 1 {
            return Err(HicaError::dim("prefrontal output", 1, net.n_out()));
        }
        Ok(PrefrontalUnit { net, lr })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub(crate) fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn evaluate(&self, state: &SignalVector) -> Result<f64> {
        state.ensure_dim(self.dim(), "prefrontal input")?;
        Ok(self.net.eval(state.as_slice())[0])
    }

    /// One squared-error step toward `reward`. Returns the loss before the step.
    pub fn train(&mut self, state: &SignalVector, reward: f64) -> Result<f64> {
        self.train_scaled(state, reward, 1.0)
    }

    /// As [`PrefrontalUnit::train`] with the step scaled by `gain`.
    pub fn train_scaled(&mut self, state: &SignalVector, reward: f64, gain: f64) -> Result<f64> {
        state.ensure_dim(self.dim(), "prefrontal input")?;
        self.net.train_mse(state.as_slice(), &[reward], self.lr * gain, "prefrontal")
    }
}

pub fn prefrontal_train(pf: &mut PrefrontalUnit, state: &SignalVector, observed_reward: f64) -> Result<f64> {
    pf.train(state, observed_reward)
}

impl Differentiable for PrefrontalUnit {
    type Sample = (Vec<f64>, Vec<f64>);

    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn param(&self, i: usize) -> f64 {
        self.net.param(i)
    }

    fn set_param(&mut self, i: usize, v: f64) {
        self.net.set_param(i, v)
    }

    fn loss(&self, sample: &Self::Sample) -> Result<f64> {
        self.net.loss(sample)
    }

    fn loss_and_gradient(&self, sample: &Self::Sample) -> Result<(f64, Vec<f64>)> {
        self.net.loss_and_gradient(sample)
    }
}

/// Whether actions may reach the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotorGate {
    enabled: bool,
}

impl Default for MotorGate {
    fn default() -> Self {
        MotorGate { enabled: true }
    }
}

impl MotorGate {
    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn enable(&mut self) {
        self.enabled = true;
    }

    pub fn disable(&mut self) {
        self.enabled = false;
    }

    /// Passes `action` through, or refuses while the gate is closed.
    pub fn emit<A>(&self, action: A) -> Result<A> {
        if self.enabled {
            Ok(action)
        } else {
            Err(HicaError::InvalidArgument("motor execution is disabled".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreplayParams {
    pub capacity: usize,
    pub threshold: f64,
    pub max_steps: usize,
    pub retries: usize,
    /// Exploration noise, halved on every retry.
    pub sigma: f64,
}

impl Default for PreplayParams {
    fn default() -> Self {
        PreplayParams {
            capacity: 8,
            threshold: 0.5,
            max_steps: 16,
            retries: 4,
            sigma: 0.05,
        }
    }
}

impl PreplayParams {
    pub fn validate(&self) -> Result<()> {
        if self.capacity < 2 {
            return Err(HicaError::Config("hippocampus.capacity: must be at least 2".into()));
        }
        if self.max_steps == 0 {
            return Err(HicaError::Config("hippocampus.max_steps: must be positive".into()));
        }
        if self.retries == 0 {
            return Err(HicaError::Config("hippocampus.retries: must be positive".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(HicaError::Config("hippocampus.sigma: must be non-negative".into()));
        }
        if !self.threshold.is_finite() {
            return Err(HicaError::Config("hippocampus.threshold: must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub accepted: bool,
    /// Loop contents at acceptance (or at the end of the last attempt).
    pub plan: Vec<SignalVector>,
    /// Value of the accepting state, or the best value seen if rejected.
    pub value: f64,
    pub steps_used: usize,
    /// Every evaluation in order.
    pub values: Vec<f64>,
}

impl PlanResult {
    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Imagines forward from `seed` (M1 holds `seed[0]`, the need) with the top
/// layer's autoregressor at zero context, adding noise to each predicted
/// state, until the prefrontal unit scores a state at or above threshold.
/// The motor gate is closed on entry and left closed for the caller to
/// reopen.
#[allow(clippy::too_many_arguments)]
pub fn preplay(
    mode: AmygdalaMode,
    seed: &[SignalVector],
    top: &Layer,
    pf: &PrefrontalUnit,
    memory: &mut LoopMemory,
    gate: &mut MotorGate,
    params: &PreplayParams,
    rng: &mut SeededRng,
) -> Result<PlanResult> {
    if mode != AmygdalaMode::Deliberate {
        return Err(HicaError::InvalidArgument(format!(
            "preplay runs only in deliberate mode, not {mode:?}"
        )));
    }
    let Some((need, cues)) = seed.split_first() else {
        return Err(HicaError::InvalidArgument("preplay needs a need vector".into()));
    };
    gate.disable();
    let context = SignalVector::zeros(top.spec().d_ctx);
    let mut steps_used = 0;
    let mut values = Vec::new();
    let mut best = f64::NEG_INFINITY;

    for attempt in 0..params.retries {
        memory.seed(need)?;
        for cue in cues {
            memory.record(cue)?;
        }
        let sigma = params.sigma * 0.5f64.powi(attempt as i32);
        for _ in 0..params.max_steps {
            let guess = top.ar().normalized(&top.predict_from(&memory.contents(), &context)?);
            let next = if sigma > 0.0 {
                let noisy: Vec<f64> = guess.as_slice().iter().map(|&v| v + rng.gaussian(sigma)).collect();
                SignalVector::new(noisy)?
            } else {
                guess
            };
            memory.record(&next)?;
            steps_used += 1;
            let v = pf.evaluate(&next)?;
            values.push(v);
            best = best.max(v);
            if v >= params.threshold {
                return Ok(PlanResult {
                    accepted: true,
                    plan: memory.contents(),
                    value: v,
                    steps_used,
                    values,
                });
            }
        }
    }
    Ok(PlanResult {
        accepted: false,
        plan: memory.contents(),
        value: best,
        steps_used,
        values,
    })
}

/// Feeds an accepted plan, entry by entry, as context to the children of
/// the top node.
#[derive(Debug, Clone)]
pub struct PlanExecution {
    plan: Vec<SignalVector>,
    cursor: usize,
}

impl PlanExecution {
    pub fn new(plan: Vec<SignalVector>) -> Self {
        PlanExecution { plan, cursor: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.plan.len() - self.cursor
    }

    /// Pushes the next entry down. Returns it, or `None` when exhausted.
    pub fn step(&mut self, graph: &mut HetGraph, top: NodeId, gain: f64) -> Result<Option<SignalVector>> {
        let Some(entry) = self.plan.get(self.cursor).cloned() else {
            return Ok(None);
        };
        graph.push_context(top, &entry, gain)?;
        self.cursor += 1;
        Ok(Some(entry))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::LayerSpec;
    use crate::neuromod::ModulatorParams;
    use crate::unit::grad_check;

    fn v(values: &[f64]) -> SignalVector {
        SignalVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn ring_semantics() {
        let mut m = LoopMemory::new(8, 2).unwrap();
        for i in 0..3 {
            m.record(&v(&[i as f64, 0.0])).unwrap();
        }
        assert_eq!(m.filled(), 3);
        assert_eq!(m.contents()[2], v(&[2.0, 0.0]));
        for i in 3..10 {
            m.record(&v(&[i as f64, 0.0])).unwrap();
        }
        assert_eq!(m.filled(), 8);
        let firsts: Vec<f64> = m.contents().iter().map(|s| s.as_slice()[0]).collect();
        assert_eq!(firsts, vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert!(m.record(&v(&[1.0])).is_err());
    }

    #[test]
    fn pinned_first_slot_survives_wrap() {
        let mut m = LoopMemory::new(4, 1).unwrap();
        m.seed(&v(&[-1.0])).unwrap();
        for i in 0..6 {
            m.record(&v(&[i as f64])).unwrap();
        }
        let firsts: Vec<f64> = m.contents().iter().map(|s| s.as_slice()[0]).collect();
        assert_eq!(firsts, vec![-1.0, 3.0, 4.0, 5.0]);
    }

    fn top_layer(seed: u64) -> Layer {
        let spec = LayerSpec::continuous(16, 4, 2).with_lr(0.2);
        Layer::new(spec, &mut SeededRng::new(seed)).unwrap()
    }

    fn episode(seed: u64) -> Vec<SignalVector> {
        let mut rng = SeededRng::new(seed ^ 0xE915);
        let mut states: Vec<usize> = (0..16).collect();
        for i in (1..16).rev() {
            states.swap(i, rng.below(i + 1));
        }
        states[..8].iter().map(|&s| SignalVector::one_hot(16, s)).collect()
    }

    #[test]
    fn replay_consolidates_an_episode() {
        let mut firsts = Vec::new();
        let mut lasts = Vec::new();
        for seed in 0..10 {
            let mut layer = top_layer(seed);
            let mut memory = LoopMemory::new(8, 16).unwrap();
            for s in episode(seed) {
                memory.record(&s).unwrap();
            }
            let mut modulator = Modulator::new(ModulatorParams::default());
            let trace = replay(&memory, &mut layer, &mut modulator, 20).unwrap();
            assert_eq!(trace.len(), 20);
            firsts.push(trace[0]);
            lasts.push(trace[19]);
            assert!(trace[19] < trace[0]);
        }
        firsts.sort_by(f64::total_cmp);
        lasts.sort_by(f64::total_cmp);
        assert!(lasts[5] < firsts[5]);
    }

    #[test]
    fn replay_preconditions() {
        let mut layer = top_layer(0);
        let mut modulator = Modulator::default();
        let empty = LoopMemory::new(8, 16).unwrap();
        assert!(replay(&empty, &mut layer, &mut modulator, 1).is_err());
        let mut one = LoopMemory::new(8, 16).unwrap();
        one.record(&SignalVector::one_hot(16, 0)).unwrap();
        assert!(replay(&one, &mut layer, &mut modulator, 0).is_err());
    }

    #[test]
    fn prefrontal_fits_constants() {
        let mut rng = SeededRng::new(4);
        let state = v(&[0.3, -0.2, 0.9, 0.1]);
        let mut pf = PrefrontalUnit::new(4, 0.05, &mut rng).unwrap();
        for _ in 0..500 {
            prefrontal_train(&mut pf, &state, 1.0).unwrap();
        }
        assert!((pf.evaluate(&state).unwrap() - 1.0).abs() < 1e-3);
        for _ in 0..500 {
            pf.train(&state, 0.0).unwrap();
        }
        assert!(pf.evaluate(&state).unwrap().abs() < 1e-3);
    }

    #[test]
    fn prefrontal_gradient_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = SeededRng::new(seed);
            let mut pf = PrefrontalUnit::new(5, 0.1, &mut rng).unwrap();
            let x: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let err = grad_check(&mut pf, &(x, vec![0.7]), 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    /// Prefrontal unit with the output weights zeroed and the bias set.
    fn constant_pf(dim: usize, value: f64) -> PrefrontalUnit {
        let mut pf = PrefrontalUnit::new(dim, 0.1, &mut SeededRng::new(0)).unwrap();
        let n = pf.param_count();
        let hidden = 2 * dim;
        for i in (n - 1 - hidden)..n {
            pf.set_param(i, 0.0);
        }
        pf.set_param(n - 1, value);
        pf
    }

    #[test]
    fn preplay_needs_deliberate_mode() {
        let layer = top_layer(0);
        let pf = constant_pf(16, 1.0);
        let mut memory = LoopMemory::new(8, 16).unwrap();
        let mut gate = MotorGate::default();
        let err = preplay(
            AmygdalaMode::Idle,
            &[SignalVector::one_hot(16, 0)],
            &layer,
            &pf,
            &mut memory,
            &mut gate,
            &PreplayParams::default(),
            &mut SeededRng::new(0),
        );
        assert!(err.is_err());
        assert!(gate.is_enabled());
    }

    #[test]
    fn preplay_accepts_or_exhausts() {
        let layer = top_layer(1);
        let params = PreplayParams::default();
        let need = [SignalVector::one_hot(16, 0)];
        let mut memory = LoopMemory::new(8, 16).unwrap();
        let mut gate = MotorGate::default();

        let always = constant_pf(16, 1.0);
        let res = preplay(AmygdalaMode::Deliberate, &need, &layer, &always, &mut memory, &mut gate, &params, &mut SeededRng::new(0)).unwrap();
        assert!(res.accepted);
        assert_eq!(res.steps_used, 1);
        assert!(res.value >= params.threshold);
        assert_eq!(res.plan.len(), 2);
        assert_eq!(res.plan[0], need[0]);
        assert!(!gate.is_enabled());
        assert!(gate.emit(()).is_err());

        let never = constant_pf(16, 0.0);
        let res = preplay(AmygdalaMode::Deliberate, &need, &layer, &never, &mut memory, &mut gate, &params, &mut SeededRng::new(0)).unwrap();
        assert!(!res.accepted);
        assert_eq!(res.steps_used, params.max_steps * params.retries);
        assert_eq!(res.plan[0], need[0]);
    }

    #[test]
    fn preplay_without_noise_is_deterministic() {
        let layer = top_layer(2);
        let pf = PrefrontalUnit::new(16, 0.1, &mut SeededRng::new(3)).unwrap();
        let params = PreplayParams {
            sigma: 0.0,
            ..PreplayParams::default()
        };
        let need = [SignalVector::one_hot(16, 5)];
        let run = |seed| {
            let mut memory = LoopMemory::new(8, 16).unwrap();
            let mut gate = MotorGate::default();
            preplay(AmygdalaMode::Deliberate, &need, &layer, &pf, &mut memory, &mut gate, &params, &mut SeededRng::new(seed)).unwrap()
        };
        assert_eq!(run(1), run(1));
        assert_eq!(run(1), run(2));
    }

    #[test]
    fn preplay_finds_the_food_in_a_learned_chain() {
        let need = SignalVector::one_hot(16, 0);
        let lever = SignalVector::one_hot(16, 1);
        let food = SignalVector::one_hot(16, 2);
        let chain = [need.clone(), lever.clone(), food.clone()];

        let mut layer = top_layer(3);
        let mut memory = LoopMemory::new(8, 16).unwrap();
        for s in &chain {
            memory.record(s).unwrap();
        }
        let mut modulator = Modulator::default();
        replay(&memory, &mut layer, &mut modulator, 200).unwrap();

        let mut pf = PrefrontalUnit::new(16, 0.05, &mut SeededRng::new(9)).unwrap();
        for _ in 0..500 {
            pf.train(&need, 0.0).unwrap();
            pf.train(&lever, 0.0).unwrap();
            pf.train(&food, 1.0).unwrap();
        }

        // Among the three states only food clears the threshold, and only
        // the learned chain reaches it within two imagined steps.
        let params = PreplayParams::default();
        let high: Vec<bool> = chain.iter().map(|s| pf.evaluate(s).unwrap() >= params.threshold).collect();
        assert_eq!(high, vec![false, false, true]);
        let mut high_value_rollouts = Vec::new();
        for a in 0..3 {
            for b in 0..3 {
                let rollout = [0, a, b];
                let ends_high = high[b] && !high[a];
                let consistent = (0..2).all(|i| {
                    let next = layer.predict_from(&chain_of(&chain, &rollout[..=i]), &SignalVector::zeros(2)).unwrap();
                    next.argmax() == chain[rollout[i + 1]].argmax()
                });
                if ends_high && consistent {
                    high_value_rollouts.push(rollout);
                }
            }
        }
        assert_eq!(high_value_rollouts, vec![[0, 1, 2]]);

        let mut gate = MotorGate::default();
        let res = preplay(AmygdalaMode::Deliberate, &[need], &layer, &pf, &mut memory, &mut gate, &params, &mut SeededRng::new(0)).unwrap();
        assert!(res.accepted);
        assert!(res.plan.len() <= 3);
        assert!(res.plan.iter().any(|s| s.cosine(&food) > 0.9));
    }

    fn chain_of(states: &[SignalVector], idx: &[usize]) -> Vec<SignalVector> {
        idx.iter().map(|&i| states[i].clone()).collect()
    }

    fn stack() -> (HetGraph, NodeId, NodeId) {
        let mut g = HetGraph::new(0);
        let low = g
            .add_node(Layer::new(LayerSpec::token(3, 4, 4).with_lr(0.3), &mut SeededRng::new(1)).unwrap(), "low")
            .unwrap();
        let top = g
            .add_node(Layer::new(LayerSpec::continuous(4, 2, 2).with_lr(0.1), &mut SeededRng::new(2)).unwrap(), "top")
            .unwrap();
        g.add_edge(low, top).unwrap();
        g.validate().unwrap();
        (g, low, top)
    }

    #[test]
    fn plan_entries_ground_the_children_in_order() {
        let (mut g, low, top) = stack();
        let plan = vec![v(&[0.1, 0.2, 0.3, 0.4]), v(&[-0.5, 0.5, 0.0, 1.0]), v(&[1.0, 1.0, -1.0, 0.0])];
        let mut exec = PlanExecution::new(plan.clone());
        for entry in &plan {
            assert_eq!(exec.step(&mut g, top, 1.0).unwrap().as_ref(), Some(entry));
            assert_eq!(g.layer(low).context(), entry);
        }
        assert_eq!(exec.step(&mut g, top, 1.0).unwrap(), None);
    }

    #[test]
    fn plan_context_activates_a_trained_stack() {
        let (mut g, low, top) = stack();
        for t in 0..400 {
            let input = [(low, SignalVector::one_hot(3, t % 3))].into_iter().collect();
            g.tick(&input, 1.0).unwrap();
        }
        g.push_context(top, &SignalVector::zeros(4), 1.0).unwrap();
        let baseline = g.layer(low).predict_now().unwrap();
        g.push_context(top, &v(&[1.0, -1.0, 0.5, 0.0]), 1.0).unwrap();
        assert_ne!(g.layer(low).predict_now().unwrap(), baseline);
    }
}
