//! The two learnable function approximators inside every layer: the pooler
//! (an autoencoder that summarizes k inputs) and the autoregressor (predicts
//! the next input from a short history plus a top-down context).
//!
//! Both are single-hidden-layer tanh networks trained by plain SGD on
//! targets that are available locally at the unit, with hand-written
//! backward passes. [`grad_check`] compares those against central finite
//! differences.

use serde::{Deserialize, Serialize};

use crate::error::{HicaError, Result};
use crate::signal::{softmax, SeededRng, SignalVector};

/// Magnitude above which a parameter counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activated value.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Loss applied at an autoregressor's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// One-hot token targets: softmax cross-entropy.
    Token,
    /// Real-valued targets: squared error.
    Continuous,
}

/// Fully connected network with an optional tanh hidden layer. All
/// parameters live in one flat buffer: `[w1, b1, w2, b2]`, or `[w, b]`
/// when there is no hidden layer. Weight matrices are row-major
/// (`out x in`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    n_in: usize,
    n_hidden: Option<usize>,
    n_out: usize,
    output: Activation,
    params: Vec<f64>,
}

pub(crate) struct Forward {
    hidden: Vec<f64>,
    pub(crate) output: Vec<f64>,
}

impl Mlp {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per layer.
    pub fn new(
        n_in: usize,
        n_hidden: Option<usize>,
        n_out: usize,
        output: Activation,
        rng: &mut SeededRng,
    ) -> Self {
        let count = Self::count(n_in, n_hidden, n_out);
        let mut params = Vec::with_capacity(count);
        // Unit-variance fan-in scaling, zero biases.
        let mut fill = |fan_in: usize, n_out: usize| {
            let s = (3.0 / fan_in as f64).sqrt();
            for _ in 0..n_out * fan_in {
                params.push(rng.uniform(-s, s));
            }
            params.extend(std::iter::repeat_n(0.0, n_out));
        };
        match n_hidden {
            Some(h) => {
                fill(n_in, h);
                fill(h, n_out);
            }
            None => fill(n_in, n_out),
        }
        Mlp {
            n_in,
            n_hidden,
            n_out,
            output,
            params,
        }
    }

    pub fn from_params(
        n_in: usize,
        n_hidden: Option<usize>,
        n_out: usize,
        output: Activation,
        params: Vec<f64>,
    ) -> Result<Self> {
        let expected = Self::count(n_in, n_hidden, n_out);
        if params.len() != expected {
            return Err(HicaError::dim("mlp parameters", expected, params.len()));
        }
        Ok(Mlp {
            n_in,
            n_hidden,
            n_out,
            output,
            params,
        })
    }

    fn count(n_in: usize, n_hidden: Option<usize>, n_out: usize) -> usize {
        match n_hidden {
            Some(h) => h * n_in + h + n_out * h + n_out,
            None => n_out * n_in + n_out,
        }
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_hidden(&self) -> Option<usize> {
        self.n_hidden
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn dense(
        w: &[f64],
        b: &[f64],
        x: &[f64],
        n_out: usize,
        act: Activation,
    ) -> Vec<f64> {
        let n_in = x.len();
        (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                act.apply(z)
            })
            .collect()
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Forward {
        debug_assert_eq!(x.len(), self.n_in);
        match self.n_hidden {
            Some(h) => {
                let (w1, rest) = self.params.split_at(h * self.n_in);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(self.n_out * h);
                let hidden = Self::dense(w1, b1, x, h, Activation::Tanh);
                let output = Self::dense(w2, b2, &hidden, self.n_out, self.output);
                Forward { hidden, output }
            }
            None => {
                let (w, b) = self.params.split_at(self.n_out * self.n_in);
                let output = Self::dense(w, b, x, self.n_out, self.output);
                Forward {
                    hidden: Vec::new(),
                    output,
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).output
    }

    /// Back-propagates `d_out` (gradient w.r.t. the activated output).
    /// Returns the parameter gradient and the gradient w.r.t. the input.
    pub(crate) fn backward(&self, x: &[f64], fwd: &Forward, d_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        // Gradient at the pre-activation of the output layer.
        let dz: Vec<f64> = d_out
            .iter()
            .zip(&fwd.output)
            .map(|(&g, &y)| g * self.output.derivative_from_output(y))
            .collect();
        match self.n_hidden {
            Some(h) => {
                let n_in = self.n_in;
                let w2_off = h * n_in + h;
                let b2_off = w2_off + self.n_out * h;
                let w2 = &self.params[w2_off..b2_off];
                let mut dh = vec![0.0; h];
                for o in 0..self.n_out {
                    let g = dz[o];
                    if g == 0.0 {
                        continue;
                    }
                    grad[b2_off + o] = g;
                    let row = o * h;
                    for j in 0..h {
                        grad[w2_off + row + j] = g * fwd.hidden[j];
                        dh[j] += g * w2[row + j];
                    }
                }
                let w1 = &self.params[..h * n_in];
                let mut dx = vec![0.0; n_in];
                for j in 0..h {
                    let hj = fwd.hidden[j];
                    let da = dh[j] * (1.0 - hj * hj);
                    if da == 0.0 {
                        continue;
                    }
                    grad[h * n_in + j] = da;
                    let row = j * n_in;
                    for i in 0..n_in {
                        grad[row + i] = da * x[i];
                        dx[i] += da * w1[row + i];
                    }
                }
                (grad, dx)
            }
            None => {
                let n_in = self.n_in;
                let b_off = self.n_out * n_in;
                let mut dx = vec![0.0; n_in];
                for o in 0..self.n_out {
                    let g = dz[o];
                    grad[b_off + o] = g;
                    let row = o * n_in;
                    for i in 0..n_in {
                        grad[row + i] = g * x[i];
                        dx[i] += g * self.params[row + i];
                    }
                }
                (grad, dx)
            }
        }
    }
}

/// Applies `params -= lr * grad` and checks the divergence guard.
/// A zero learning rate never touches the parameters.
fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64, unit: &str) -> Result<()> {
    if lr == 0.0 {
        return Ok(());
    }
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
    if let Some(bad) = params
        .iter()
        .find(|p| !p.is_finite() || p.abs() > DIVERGENCE_LIMIT)
    {
        return Err(HicaError::Divergence {
            unit: unit.to_string(),
            lr,
            reason: format!("parameter magnitude {bad:e}"),
        });
    }
    Ok(())
}

fn check_lr(lr: f64) -> Result<()> {
    if lr >= 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(HicaError::InvalidArgument(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )))
    }
}

fn check_loss(loss: f64, unit: &str, lr: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(HicaError::Divergence {
            unit: unit.to_string(),
            lr,
            reason: "non-finite loss".into(),
        })
    }
}

/// A unit whose parameters can be probed by finite differences.
pub trait Differentiable {
    type Sample;

    fn param_count(&self) -> usize;
    fn param(&self, index: usize) -> f64;
    fn set_param(&mut self, index: usize, value: f64);
    fn loss(&self, sample: &Self::Sample) -> Result<f64>;
    fn loss_and_gradient(&self, sample: &Self::Sample) -> Result<(f64, Vec<f64>)>;

    fn snapshot(&self) -> Vec<f64> {
        (0..self.param_count()).map(|i| self.param(i)).collect()
    }
}

/// Below this magnitude the comparison switches from relative to absolute
/// error, so points where both gradients vanish do not divide by ~0.
pub const ABSOLUTE_FALLBACK: f64 = 1e-6;

/// Worst relative error between the analytic gradient and central finite
/// differences over every parameter.
pub fn grad_check<U: Differentiable>(unit: &mut U, sample: &U::Sample, epsilon: f64) -> Result<f64> {
    grad_check_tampered(unit, sample, epsilon, 0.0)
}

/// [`grad_check`] with a constant added to every analytic gradient entry.
/// A nonzero `tamper` is a negative control for the checker itself.
pub fn grad_check_tampered<U: Differentiable>(
    unit: &mut U,
    sample: &U::Sample,
    epsilon: f64,
    tamper: f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(HicaError::InvalidArgument(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let (_, analytic) = unit.loss_and_gradient(sample)?;
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let a = a + tamper;
        let orig = unit.param(i);
        unit.set_param(i, orig + epsilon);
        let plus = unit.loss(sample)?;
        unit.set_param(i, orig - epsilon);
        let minus = unit.loss(sample)?;
        unit.set_param(i, orig);
        let numeric = (plus - minus) / (2.0 * epsilon);
        let scale = a.abs().max(numeric.abs());
        let err = if scale < ABSOLUTE_FALLBACK {
            (a - numeric).abs()
        } else {
            (a - numeric).abs() / scale
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Autoencoder that compresses `k` vectors of dimension `d_in` into one
/// summary of dimension `d_sum`. The summary passes through tanh, so
/// summaries fed upward stay in `(-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooler {
    encoder: Mlp,
    decoder: Mlp,
    k: usize,
    d_in: usize,
    d_sum: usize,
    base_lr: f64,
}

/// Result of one pooler training step.
#[derive(Debug, Clone)]
pub struct PoolStep {
    /// Loss before the update.
    pub loss: f64,
    /// Reconstruction before the update, concatenated.
    pub reconstruction: SignalVector,
}

impl Pooler {
    pub fn new(k: usize, d_in: usize, d_sum: usize, base_lr: f64, rng: &mut SeededRng) -> Result<Self> {
        if k == 0 || d_in == 0 || d_sum == 0 {
            return Err(HicaError::InvalidArgument("pooler dims must be positive".into()));
        }
        if d_sum >= k * d_in {
            return Err(HicaError::InvalidArgument(format!(
                "pooler must compress: d_sum {d_sum} >= k*d_in {}",
                k * d_in
            )));
        }
        let hidden = 2 * d_sum;
        let encoder = Mlp::new(k * d_in, Some(hidden), d_sum, Activation::Tanh, rng);
        let decoder = Mlp::new(d_sum, Some(hidden), k * d_in, Activation::Identity, rng);
        Ok(Pooler {
            encoder,
            decoder,
            k,
            d_in,
            d_sum,
            base_lr,
        })
    }

    pub fn from_parts(encoder: Mlp, decoder: Mlp, k: usize, d_in: usize, base_lr: f64) -> Result<Self> {
        let d_sum = encoder.n_out();
        if encoder.n_in() != k * d_in || decoder.n_in() != d_sum || decoder.n_out() != k * d_in {
            return Err(HicaError::dim("pooler parts", k * d_in, encoder.n_in()));
        }
        Ok(Pooler {
            encoder,
            decoder,
            k,
            d_in,
            d_sum,
            base_lr,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_sum(&self) -> usize {
        self.d_sum
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Mlp, &mut Mlp) {
        (&mut self.encoder, &mut self.decoder)
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    fn flatten(&self, window: &[SignalVector]) -> Result<Vec<f64>> {
        if window.len() != self.k {
            return Err(HicaError::dim("pooler window length", self.k, window.len()));
        }
        let mut x = Vec::with_capacity(self.k * self.d_in);
        for v in window {
            v.ensure_dim(self.d_in, "pooler window entry")?;
            x.extend_from_slice(v.as_slice());
        }
        Ok(x)
    }

    pub fn encode(&self, window: &[SignalVector]) -> Result<SignalVector> {
        let x = self.flatten(window)?;
        Ok(SignalVector::from_raw(self.encoder.eval(&x)))
    }

    pub fn decode(&self, summary: &SignalVector) -> Result<Vec<SignalVector>> {
        summary.ensure_dim(self.d_sum, "pooler summary")?;
        let y = SignalVector::from_raw(self.decoder.eval(summary.as_slice()));
        Ok(y.split(self.k))
    }

    fn loss_grad(&self, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let enc = self.encoder.forward(x);
        let dec = self.decoder.forward(&enc.output);
        let k = self.k as f64;
        let mut loss = 0.0;
        let d_rec: Vec<f64> = dec
            .output
            .iter()
            .zip(x)
            .map(|(&y, &t)| {
                let e = y - t;
                loss += e * e;
                2.0 * e / k
            })
            .collect();
        let (g_dec, d_code) = self.decoder.backward(&enc.output, &dec, &d_rec);
        let (g_enc, _) = self.encoder.backward(x, &enc, &d_code);
        let mut grad = g_enc;
        grad.extend(g_dec);
        (loss / k, grad, dec.output)
    }

    /// One SGD step on reconstruction error, averaged over the k vectors.
    pub fn train_step(&mut self, window: &[SignalVector], lr: f64) -> Result<PoolStep> {
        check_lr(lr)?;
        let x = self.flatten(window)?;
        let (loss, grad, recon) = self.loss_grad(&x);
        check_loss(loss, "pooler", lr)?;
        let n_enc = self.encoder.params.len();
        sgd_step(self.encoder.params_mut(), &grad[..n_enc], lr, "pooler")?;
        sgd_step(self.decoder.params_mut(), &grad[n_enc..], lr, "pooler")?;
        Ok(PoolStep {
            loss,
            reconstruction: SignalVector::from_raw(recon),
        })
    }

    /// Returns the pre-step loss.
    pub fn train(&mut self, window: &[SignalVector], lr: f64) -> Result<f64> {
        Ok(self.train_step(window, lr)?.loss)
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.encoder.params.clone();
        p.extend_from_slice(&self.decoder.params);
        p
    }
}

impl Differentiable for Pooler {
    type Sample = Vec<SignalVector>;

    fn param_count(&self) -> usize {
        self.encoder.params.len() + self.decoder.params.len()
    }

    fn param(&self, index: usize) -> f64 {
        let n = self.encoder.params.len();
        if index < n {
            self.encoder.params[index]
        } else {
            self.decoder.params[index - n]
        }
    }

    fn set_param(&mut self, index: usize, value: f64) {
        let n = self.encoder.params.len();
        if index < n {
            self.encoder.params[index] = value;
        } else {
            self.decoder.params[index - n] = value;
        }
    }

    fn loss(&self, sample: &Self::Sample) -> Result<f64> {
        Ok(self.loss_grad(&self.flatten(sample)?).0)
    }

    fn loss_and_gradient(&self, sample: &Self::Sample) -> Result<(f64, Vec<f64>)> {
        let (l, g, _) = self.loss_grad(&self.flatten(sample)?);
        Ok((l, g))
    }
}

/// Predicts the next input from the last `w` inputs and a context vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoregressor {
    net: Mlp,
    window: usize,
    d_in: usize,
    d_ctx: usize,
    channel: Channel,
    base_lr: f64,
}

/// One training example for an autoregressor.
#[derive(Debug, Clone)]
pub struct ArSample {
    pub history: Vec<SignalVector>,
    pub context: SignalVector,
    pub target: SignalVector,
}

impl Autoregressor {
    pub fn new(
        window: usize,
        d_in: usize,
        d_ctx: usize,
        channel: Channel,
        base_lr: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if window == 0 || d_in == 0 {
            return Err(HicaError::InvalidArgument(
                "autoregressor needs w >= 1 and d_in >= 1".into(),
            ));
        }
        let net = Mlp::new(
            window * d_in + d_ctx,
            Some(2 * d_in),
            d_in,
            Activation::Identity,
            rng,
        );
        Ok(Autoregressor {
            net,
            window,
            d_in,
            d_ctx,
            channel,
            base_lr,
        })
    }

    pub fn from_net(net: Mlp, window: usize, d_in: usize, d_ctx: usize, channel: Channel, base_lr: f64) -> Result<Self> {
        if net.n_in() != window * d_in + d_ctx || net.n_out() != d_in {
            return Err(HicaError::dim("autoregressor net", window * d_in + d_ctx, net.n_in()));
        }
        Ok(Autoregressor {
            net,
            window,
            d_in,
            d_ctx,
            channel,
            base_lr,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_ctx(&self) -> usize {
        self.d_ctx
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    pub(crate) fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Left-pads the history with zero vectors up to `w` entries and
    /// appends the context.
    fn input(&self, history: &[SignalVector], context: &SignalVector) -> Result<Vec<f64>> {
        if history.len() > self.window {
            return Err(HicaError::dim("autoregressor history", self.window, history.len()));
        }
        context.ensure_dim(self.d_ctx, "autoregressor context")?;
        let mut x = vec![0.0; (self.window - history.len()) * self.d_in];
        for v in history {
            v.ensure_dim(self.d_in, "autoregressor history entry")?;
            x.extend_from_slice(v.as_slice());
        }
        x.extend_from_slice(context.as_slice());
        Ok(x)
    }

    /// Raw prediction: logits for token channels, values otherwise.
    pub fn predict(&self, history: &[SignalVector], context: &SignalVector) -> Result<SignalVector> {
        let x = self.input(history, context)?;
        Ok(SignalVector::from_raw(self.net.eval(&x)))
    }

    /// Normalized view of a prediction: softmax for token channels,
    /// identity otherwise.
    pub fn normalized(&self, prediction: &SignalVector) -> SignalVector {
        match self.channel {
            Channel::Token => SignalVector::from_raw(softmax(prediction.as_slice())),
            Channel::Continuous => prediction.clone(),
        }
    }

    fn loss_grad(&self, x: &[f64], target: &SignalVector) -> (f64, Vec<f64>) {
        let fwd = self.net.forward(x);
        let t = target.as_slice();
        let (loss, d_out) = match self.channel {
            Channel::Token => {
                let p = softmax(&fwd.output);
                let mass: f64 = t.iter().sum();
                let loss = -t
                    .iter()
                    .zip(&p)
                    .filter(|(&ti, _)| ti != 0.0)
                    .map(|(&ti, &pi)| ti * pi.max(f64::MIN_POSITIVE).ln())
                    .sum::<f64>();
                let d: Vec<f64> = p.iter().zip(t).map(|(&pi, &ti)| pi * mass - ti).collect();
                (loss, d)
            }
            Channel::Continuous => {
                let mut loss = 0.0;
                let d: Vec<f64> = fwd
                    .output
                    .iter()
                    .zip(t)
                    .map(|(&y, &ti)| {
                        let e = y - ti;
                        loss += e * e;
                        2.0 * e
                    })
                    .collect();
                (loss, d)
            }
        };
        let (grad, _) = self.net.backward(x, &fwd, &d_out);
        (loss, grad)
    }

    /// One SGD step toward `target`; returns the pre-step loss.
    pub fn train(
        &mut self,
        history: &[SignalVector],
        context: &SignalVector,
        target: &SignalVector,
        lr: f64,
    ) -> Result<f64> {
        check_lr(lr)?;
        target.ensure_dim(self.d_in, "autoregressor target")?;
        let x = self.input(history, context)?;
        let (loss, grad) = self.loss_grad(&x, target);
        check_loss(loss, "autoregressor", lr)?;
        sgd_step(self.net.params_mut(), &grad, lr, "autoregressor")?;
        Ok(loss)
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.net.params.clone()
    }
}

impl Differentiable for Autoregressor {
    type Sample = ArSample;

    fn param_count(&self) -> usize {
        self.net.params.len()
    }

    fn param(&self, index: usize) -> f64 {
        self.net.params[index]
    }

    fn set_param(&mut self, index: usize, value: f64) {
        self.net.params[index] = value;
    }

    fn loss(&self, s: &ArSample) -> Result<f64> {
        s.target.ensure_dim(self.d_in, "autoregressor target")?;
        Ok(self.loss_grad(&self.input(&s.history, &s.context)?, &s.target).0)
    }

    fn loss_and_gradient(&self, s: &ArSample) -> Result<(f64, Vec<f64>)> {
        s.target.ensure_dim(self.d_in, "autoregressor target")?;
        Ok(self.loss_grad(&self.input(&s.history, &s.context)?, &s.target))
    }
}

/// A bare network under squared error, used as the linear control in
/// gradient checks and as the prefrontal value head.
impl Differentiable for Mlp {
    type Sample = (Vec<f64>, Vec<f64>);

    fn param_count(&self) -> usize {
        self.params.len()
    }

    fn param(&self, index: usize) -> f64 {
        self.params[index]
    }

    fn set_param(&mut self, index: usize, value: f64) {
        self.params[index] = value;
    }

    fn loss(&self, s: &Self::Sample) -> Result<f64> {
        Ok(self.loss_and_gradient(s)?.0)
    }

    fn loss_and_gradient(&self, (x, t): &Self::Sample) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.n_in {
            return Err(HicaError::dim("mlp input", self.n_in, x.len()));
        }
        if t.len() != self.n_out {
            return Err(HicaError::dim("mlp target", self.n_out, t.len()));
        }
        let fwd = self.forward(x);
        let mut loss = 0.0;
        let d: Vec<f64> = fwd
            .output
            .iter()
            .zip(t)
            .map(|(&y, &ti)| {
                let e = y - ti;
                loss += e * e;
                2.0 * e
            })
            .collect();
        let (grad, _) = self.backward(x, &fwd, &d);
        Ok((loss, grad))
    }
}

impl Mlp {
    /// One SGD step under squared error; returns the pre-step loss.
    pub fn train_mse(&mut self, x: &[f64], target: &[f64], lr: f64, unit: &str) -> Result<f64> {
        check_lr(lr)?;
        let (loss, grad) = self.loss_and_gradient(&(x.to_vec(), target.to_vec()))?;
        check_loss(loss, unit, lr)?;
        sgd_step(&mut self.params, &grad, lr, unit)?;
        Ok(loss)
    }
}
