//! One prediction layer: an autoregressor trained at every input against
//! the realized input, and a pooler that summarizes every `k` inputs into
//! one vector for the layer above.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{HicaError, Result};
use crate::signal::{SeededRng, SignalVector};
use crate::unit::{Autoregressor, Channel, PoolStep, Pooler};

/// Shape and learning rate of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub d_in: usize,
    pub d_sum: usize,
    pub d_ctx: usize,
    pub k: usize,
    pub w: usize,
    pub base_lr: f64,
    pub channel: Channel,
}

impl LayerSpec {
    /// Higher-layer defaults: 64-wide continuous channel, k = w = 4.
    pub fn continuous(d_in: usize, d_sum: usize, d_ctx: usize) -> Self {
        LayerSpec {
            d_in,
            d_sum,
            d_ctx,
            k: 4,
            w: 4,
            base_lr: 0.05,
            channel: Channel::Continuous,
        }
    }

    pub fn token(alphabet: usize, d_sum: usize, d_ctx: usize) -> Self {
        LayerSpec {
            channel: Channel::Token,
            ..LayerSpec::continuous(alphabet, d_sum, d_ctx)
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_w(mut self, w: usize) -> Self {
        self.w = w;
        self
    }

    pub fn with_lr(mut self, base_lr: f64) -> Self {
        self.base_lr = base_lr;
        self
    }
}

/// What a pooler emission looked like, for metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEmission {
    pub window: Vec<SignalVector>,
    /// Reconstruction before the pooler update, split per input.
    pub reconstruction: Vec<SignalVector>,
    pub loss: f64,
    pub summary: SignalVector,
}

/// Everything observable about one `feed`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedOutcome {
    pub input: SignalVector,
    /// The prediction that was standing when `input` arrived.
    pub prior_prediction: SignalVector,
    /// `None` on the very first input a layer ever sees: there was no
    /// history-based prediction to train against yet.
    pub ar_loss: Option<f64>,
    pub prediction: SignalVector,
    pub pool: Option<PoolEmission>,
    pub lr: f64,
}

impl FeedOutcome {
    pub fn summary(&self) -> Option<&SignalVector> {
        self.pool.as_ref().map(|p| &p.summary)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) spec: LayerSpec,
    pub(crate) ar: Autoregressor,
    pub(crate) pooler: Pooler,
    pub(crate) input_buffer: Vec<SignalVector>,
    pub(crate) history: VecDeque<SignalVector>,
    pub(crate) context: SignalVector,
    pub(crate) last_prediction: SignalVector,
    /// History and context the standing prediction was made from.
    pub(crate) prediction_history: Vec<SignalVector>,
    pub(crate) prediction_context: SignalVector,
    pub(crate) ticks_seen: u64,
    pub(crate) summaries_emitted: u64,
}

impl Layer {
    pub fn new(spec: LayerSpec, rng: &mut SeededRng) -> Result<Self> {
        if spec.k < 1 || spec.w < 1 {
            return Err(HicaError::InvalidArgument("layer needs k >= 1 and w >= 1".into()));
        }
        let ar = Autoregressor::new(spec.w, spec.d_in, spec.d_ctx, spec.channel, spec.base_lr, rng)?;
        let pooler = Pooler::new(spec.k, spec.d_in, spec.d_sum, spec.base_lr, rng)?;
        let context = SignalVector::zeros(spec.d_ctx);
        let last_prediction = ar.predict(&[], &context)?;
        Ok(Layer {
            spec,
            ar,
            pooler,
            input_buffer: Vec::with_capacity(spec.k),
            history: VecDeque::with_capacity(spec.w),
            prediction_context: context.clone(),
            context,
            last_prediction,
            prediction_history: Vec::new(),
            ticks_seen: 0,
            summaries_emitted: 0,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn ar(&self) -> &Autoregressor {
        &self.ar
    }

    pub fn pooler(&self) -> &Pooler {
        &self.pooler
    }

    pub fn ticks_seen(&self) -> u64 {
        self.ticks_seen
    }

    pub fn summaries_emitted(&self) -> u64 {
        self.summaries_emitted
    }

    pub fn context(&self) -> &SignalVector {
        &self.context
    }

    pub fn history(&self) -> Vec<SignalVector> {
        self.history.iter().cloned().collect()
    }

    pub fn buffered(&self) -> usize {
        self.input_buffer.len()
    }

    /// Trains the autoregressor against `x`, advances the history, makes
    /// the next prediction and, every `k` inputs, trains the pooler and
    /// emits a summary. `gain` scales the base learning rate.
    pub fn feed(&mut self, x: &SignalVector, gain: f64) -> Result<FeedOutcome> {
        x.ensure_dim(self.spec.d_in, "layer input")?;
        let lr = self.spec.base_lr * gain;

        let ar_loss = if self.ticks_seen == 0 {
            None
        } else {
            Some(
                self.ar
                    .train(&self.prediction_history, &self.prediction_context, x, lr)?,
            )
        };
        let prior_prediction = std::mem::replace(&mut self.last_prediction, SignalVector::default());

        if self.history.len() == self.spec.w {
            self.history.pop_front();
        }
        self.history.push_back(x.clone());
        self.input_buffer.push(x.clone());
        self.ticks_seen += 1;

        self.refresh_prediction()?;

        let pool = if self.input_buffer.len() == self.spec.k {
            let window = std::mem::take(&mut self.input_buffer);
            let PoolStep { loss, reconstruction } = self.pooler.train_step(&window, lr)?;
            let summary = self.pooler.encode(&window)?;
            self.summaries_emitted += 1;
            Some(PoolEmission {
                reconstruction: reconstruction.split(self.spec.k),
                window,
                loss,
                summary,
            })
        } else {
            None
        };

        Ok(FeedOutcome {
            input: x.clone(),
            prior_prediction,
            ar_loss,
            prediction: self.last_prediction.clone(),
            pool,
            lr,
        })
    }

    fn refresh_prediction(&mut self) -> Result<()> {
        self.prediction_history = self.history.iter().cloned().collect();
        self.prediction_context = self.context.clone();
        self.last_prediction = self
            .ar
            .predict(&self.prediction_history, &self.prediction_context)?;
        Ok(())
    }

    /// Replaces the top-down context used by subsequent predictions.
    pub fn set_context(&mut self, c: &SignalVector) -> Result<()> {
        c.ensure_dim(self.spec.d_ctx, "layer context")?;
        self.context = c.clone();
        Ok(())
    }

    /// The standing prediction, without side effects.
    pub fn peek_prediction(&self) -> &SignalVector {
        &self.last_prediction
    }

    /// Softmax view for token channels; identity otherwise.
    pub fn peek_distribution(&self) -> SignalVector {
        self.ar.normalized(&self.last_prediction)
    }

    /// The prediction the layer would make right now from its current
    /// history and context.
    pub fn predict_now(&self) -> Result<SignalVector> {
        let history: Vec<_> = self.history.iter().cloned().collect();
        self.ar.predict(&history, &self.context)
    }

    pub fn predict_from(&self, history: &[SignalVector], context: &SignalVector) -> Result<SignalVector> {
        let start = history.len().saturating_sub(self.spec.w);
        self.ar.predict(&history[start..], context)
    }

    /// One autoregressor step on an explicit sample, bypassing the buffers.
    /// Used by replay.
    pub fn train_ar_on(
        &mut self,
        history: &[SignalVector],
        context: &SignalVector,
        target: &SignalVector,
        gain: f64,
    ) -> Result<f64> {
        let start = history.len().saturating_sub(self.spec.w);
        self.ar
            .train(&history[start..], context, target, self.spec.base_lr * gain)
    }

    /// Forgets the input history (not the pooler buffer or counters) and
    /// re-predicts from an empty history.
    pub fn reset_history(&mut self) -> Result<()> {
        self.history.clear();
        self.refresh_prediction()
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.ar.parameters();
        p.extend(self.pooler.parameters());
        p
    }
}
