//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 8     | magic `HICACKPT`                          |
//! | 4     | format version (u32)                      |
//! | 8     | payload length n (u64)                    |
//! | n     | payload                                   |
//! | 32    | SHA-256 of everything before it           |
//!
//! The payload starts with the run config as TOML (u64 length + UTF-8),
//! then a kind byte and the kind's state. Vectors are a u64 length followed
//! by their elements; options are a 0/1 byte followed by the value.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::env::charlm::{AccuracyMeter, HitCounts};
use crate::error::{HicaError, Result};
use crate::graph::HetGraph;
use crate::hippocampus::PrefrontalUnit;
use crate::env::skinner::{InstinctBundle, INSTINCT_ACTIONS};
use crate::innate::{QParams, QTable};
use crate::layer::Layer;
use crate::signal::SignalVector;
use crate::unit::{Mlp, Pooler};

pub const MAGIC: &[u8; 8] = b"HICACKPT";
pub const VERSION: u32 = 1;

const KIND_CHARLM: u8 = 1;
const KIND_INSTINCTS: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub ar: Vec<f64>,
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
    pub input_buffer: Vec<Vec<f64>>,
    pub history: Vec<Vec<f64>>,
    pub context: Vec<f64>,
    pub last_prediction: Vec<f64>,
    pub prediction_history: Vec<Vec<f64>>,
    pub prediction_context: Vec<f64>,
    pub ticks_seen: u64,
    pub summaries_emitted: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub layer: LayerState,
    pub input_merge: Option<(Vec<f64>, Vec<f64>)>,
    pub context_merge: Option<(Vec<f64>, Vec<f64>)>,
    pub pending: Vec<Option<Vec<f64>>>,
    pub parent_predictions: Vec<Vec<f64>>,
    pub context_stamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphState {
    pub tick: u64,
    pub nodes: Vec<NodeState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharLmState {
    pub graph: GraphState,
    pub stream_position: u64,
    pub buckets: Vec<(u64, Vec<HitCounts>)>,
}

/// Phase-1 products for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct InstinctState {
    pub seed: u64,
    pub danger_radius: u32,
    pub q_values: Vec<(u64, u64, f64)>,
    pub value_unit: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    CharLm(CharLmState),
    Instincts(Vec<InstinctState>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// The run config, echoed as TOML.
    pub config: String,
    pub payload: Payload,
}

fn vec_of(v: &SignalVector) -> Vec<f64> {
    v.as_slice().to_vec()
}

fn layer_state(l: &Layer) -> LayerState {
    LayerState {
        ar: l.ar.net().params().to_vec(),
        encoder: l.pooler.encoder().params().to_vec(),
        decoder: l.pooler.decoder().params().to_vec(),
        input_buffer: l.input_buffer.iter().map(vec_of).collect(),
        history: l.history.iter().map(vec_of).collect(),
        context: vec_of(&l.context),
        last_prediction: vec_of(&l.last_prediction),
        prediction_history: l.prediction_history.iter().map(vec_of).collect(),
        prediction_context: vec_of(&l.prediction_context),
        ticks_seen: l.ticks_seen,
        summaries_emitted: l.summaries_emitted,
    }
}

fn mismatch(what: &str) -> HicaError {
    HicaError::Checkpoint(format!("{what} does not match the configured shape"))
}

fn load_params(net: &mut Mlp, values: &[f64], what: &str) -> Result<()> {
    let dst = net.params_mut();
    if dst.len() != values.len() {
        return Err(mismatch(what));
    }
    dst.copy_from_slice(values);
    Ok(())
}

fn load_pooler(p: &mut Pooler, (enc, dec): (&[f64], &[f64]), what: &str) -> Result<()> {
    let (e, d) = p.parts_mut();
    load_params(e, enc, what)?;
    load_params(d, dec, what)
}

fn sized(v: &[f64], dim: usize, what: &str) -> Result<SignalVector> {
    if v.len() != dim {
        return Err(mismatch(what));
    }
    SignalVector::new(v.to_vec())
}

fn restore_layer(l: &mut Layer, s: &LayerState) -> Result<()> {
    let spec = *l.spec();
    load_params(l.ar.net_mut(), &s.ar, "autoregressor")?;
    load_pooler(&mut l.pooler, (&s.encoder, &s.decoder), "pooler")?;
    let ins = |vs: &[Vec<f64>]| vs.iter().map(|v| sized(v, spec.d_in, "layer input")).collect::<Result<Vec<_>>>();
    l.input_buffer = ins(&s.input_buffer)?;
    l.history = ins(&s.history)?.into();
    l.context = sized(&s.context, spec.d_ctx, "context")?;
    l.last_prediction = sized(&s.last_prediction, spec.d_in, "prediction")?;
    l.prediction_history = ins(&s.prediction_history)?;
    l.prediction_context = sized(&s.prediction_context, spec.d_ctx, "prediction context")?;
    l.ticks_seen = s.ticks_seen;
    l.summaries_emitted = s.summaries_emitted;
    Ok(())
}

fn merge_state(p: &Option<Pooler>) -> Option<(Vec<f64>, Vec<f64>)> {
    p.as_ref()
        .map(|p| (p.encoder().params().to_vec(), p.decoder().params().to_vec()))
}

pub fn graph_state(graph: &HetGraph) -> GraphState {
    GraphState {
        tick: graph.tick,
        nodes: graph
            .nodes
            .iter()
            .map(|n| NodeState {
                layer: layer_state(&n.layer),
                input_merge: merge_state(&n.input_merge),
                context_merge: merge_state(&n.context_merge),
                pending: n.pending.iter().map(|p| p.as_ref().map(vec_of)).collect(),
                parent_predictions: n.parent_predictions.iter().map(vec_of).collect(),
                context_stamp: n.context_stamp,
            })
            .collect(),
    }
}

/// Overwrites the mutable state of a graph built from the same config.
pub fn restore_graph(graph: &mut HetGraph, state: &GraphState) -> Result<()> {
    if !graph.is_validated() {
        return Err(HicaError::Checkpoint("restore needs a validated graph".into()));
    }
    if graph.nodes.len() != state.nodes.len() {
        return Err(mismatch("node count"));
    }
    for (n, s) in graph.nodes.iter_mut().zip(&state.nodes) {
        restore_layer(&mut n.layer, &s.layer).map_err(|e| HicaError::Checkpoint(format!("{}: {e}", n.label)))?;
        for (merge, saved) in [(&mut n.input_merge, &s.input_merge), (&mut n.context_merge, &s.context_merge)] {
            match (merge.as_mut(), saved) {
                (None, None) => {}
                (Some(p), Some((e, d))) => load_pooler(p, (e, d), "merge unit")?,
                _ => return Err(mismatch("merge units")),
            }
        }
        if n.pending.len() != s.pending.len() || n.parent_predictions.len() != s.parent_predictions.len() {
            return Err(mismatch("edge slots"));
        }
        n.pending = s
            .pending
            .iter()
            .map(|p| p.as_ref().map(|v| SignalVector::new(v.clone())).transpose())
            .collect::<Result<_>>()?;
        n.parent_predictions = s
            .parent_predictions
            .iter()
            .map(|v| SignalVector::new(v.clone()))
            .collect::<Result<_>>()?;
        n.context_stamp = s.context_stamp;
    }
    graph.tick = state.tick;
    Ok(())
}

pub fn meter_buckets(meter: &AccuracyMeter) -> Vec<(u64, Vec<HitCounts>)> {
    meter.buckets.iter().map(|(k, v)| (*k, v.clone())).collect()
}

pub fn restore_meter(meter: &mut AccuracyMeter, buckets: &[(u64, Vec<HitCounts>)]) -> Result<()> {
    if buckets.iter().any(|(_, v)| v.len() != meter.columns.len()) {
        return Err(mismatch("meter columns"));
    }
    meter.buckets = buckets.iter().cloned().collect();
    Ok(())
}

pub fn instinct_state(seed: u64, bundle: &InstinctBundle, value: &PrefrontalUnit) -> InstinctState {
    InstinctState {
        seed,
        danger_radius: bundle.danger_radius,
        q_values: bundle.qtable.values.iter().map(|(&(s, a), &v)| (s, a as u64, v)).collect(),
        value_unit: value.net().params().to_vec(),
    }
}

pub fn restore_bundle(state: &InstinctState, q: QParams) -> Result<InstinctBundle> {
    let mut qtable = QTable::new(INSTINCT_ACTIONS.len(), q)?;
    for &(s, a, v) in &state.q_values {
        if a as usize >= qtable.n_actions() || !v.is_finite() {
            return Err(mismatch("q-table entry"));
        }
        qtable.values.insert((s, a as usize), v);
    }
    Ok(InstinctBundle {
        qtable,
        danger_radius: state.danger_radius,
    })
}

// ------------------------------------------------------------ encoding

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.write_u32::<LE>(v).expect("vec write");
    }
    fn u64(&mut self, v: u64) {
        self.0.write_u64::<LE>(v).expect("vec write");
    }
    fn f64(&mut self, v: f64) {
        self.0.write_f64::<LE>(v).expect("vec write");
    }
    fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }
    fn floats(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn vecs(&mut self, v: &[Vec<f64>]) {
        self.len(v.len());
        v.iter().for_each(|x| self.floats(x));
    }
    fn opt_u64(&mut self, v: Option<u64>) {
        match v {
            None => self.u8(0),
            Some(x) => {
                self.u8(1);
                self.u64(x);
            }
        }
    }
    fn pair(&mut self, v: &Option<(Vec<f64>, Vec<f64>)>) {
        match v {
            None => self.u8(0),
            Some((a, b)) => {
                self.u8(1);
                self.floats(a);
                self.floats(b);
            }
        }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.len(b.len());
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a>(Cursor<&'a [u8]>);

fn truncated(_: std::io::Error) -> HicaError {
    HicaError::Checkpoint("payload truncated".into())
}

impl Reader<'_> {
    fn u8(&mut self) -> Result<u8> {
        self.0.read_u8().map_err(truncated)
    }
    fn u32(&mut self) -> Result<u32> {
        self.0.read_u32::<LE>().map_err(truncated)
    }
    fn u64(&mut self) -> Result<u64> {
        self.0.read_u64::<LE>().map_err(truncated)
    }
    fn f64(&mut self) -> Result<f64> {
        self.0.read_f64::<LE>().map_err(truncated)
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        let left = self.0.get_ref().len() as u64 - self.0.position();
        if n > left {
            return Err(HicaError::Checkpoint(format!("length {n} exceeds remaining {left} bytes")));
        }
        Ok(n as usize)
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(HicaError::Checkpoint(format!("bad option tag {b}"))),
        }
    }
    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn vecs(&mut self) -> Result<Vec<Vec<f64>>> {
        let n = self.len()?;
        (0..n).map(|_| self.floats()).collect()
    }
    fn opt_u64(&mut self) -> Result<Option<u64>> {
        Ok(if self.flag()? { Some(self.u64()?) } else { None })
    }
    fn pair(&mut self) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        Ok(if self.flag()? { Some((self.floats()?, self.floats()?)) } else { None })
    }
    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.len()?;
        let mut b = vec![0; n];
        self.0.read_exact(&mut b).map_err(truncated)?;
        Ok(b)
    }
}

fn write_layer(w: &mut Writer, s: &LayerState) {
    w.floats(&s.ar);
    w.floats(&s.encoder);
    w.floats(&s.decoder);
    w.vecs(&s.input_buffer);
    w.vecs(&s.history);
    w.floats(&s.context);
    w.floats(&s.last_prediction);
    w.vecs(&s.prediction_history);
    w.floats(&s.prediction_context);
    w.u64(s.ticks_seen);
    w.u64(s.summaries_emitted);
}

fn read_layer(r: &mut Reader) -> Result<LayerState> {
    Ok(LayerState {
        ar: r.floats()?,
        encoder: r.floats()?,
        decoder: r.floats()?,
        input_buffer: r.vecs()?,
        history: r.vecs()?,
        context: r.floats()?,
        last_prediction: r.floats()?,
        prediction_history: r.vecs()?,
        prediction_context: r.floats()?,
        ticks_seen: r.u64()?,
        summaries_emitted: r.u64()?,
    })
}

fn write_payload(w: &mut Writer, c: &Checkpoint) {
    w.bytes(c.config.as_bytes());
    match &c.payload {
        Payload::CharLm(s) => {
            w.u8(KIND_CHARLM);
            w.u64(s.graph.tick);
            w.len(s.graph.nodes.len());
            for n in &s.graph.nodes {
                write_layer(w, &n.layer);
                w.pair(&n.input_merge);
                w.pair(&n.context_merge);
                w.len(n.pending.len());
                for p in &n.pending {
                    match p {
                        None => w.u8(0),
                        Some(v) => {
                            w.u8(1);
                            w.floats(v);
                        }
                    }
                }
                w.vecs(&n.parent_predictions);
                w.opt_u64(n.context_stamp);
            }
            w.u64(s.stream_position);
            w.len(s.buckets.len());
            for (stamp, counts) in &s.buckets {
                w.u64(*stamp);
                w.len(counts.len());
                for h in counts {
                    for v in [h.ar_hits, h.ar_total, h.ae_hits, h.ae_total] {
                        w.u64(v);
                    }
                }
            }
        }
        Payload::Instincts(list) => {
            w.u8(KIND_INSTINCTS);
            w.len(list.len());
            for s in list {
                w.u64(s.seed);
                w.u32(s.danger_radius);
                w.len(s.q_values.len());
                for &(state, action, v) in &s.q_values {
                    w.u64(state);
                    w.u64(action);
                    w.f64(v);
                }
                w.floats(&s.value_unit);
            }
        }
    }
}

fn read_payload(r: &mut Reader) -> Result<Checkpoint> {
    let config = String::from_utf8(r.bytes()?).map_err(|_| HicaError::Checkpoint("config is not UTF-8".into()))?;
    let payload = match r.u8()? {
        KIND_CHARLM => {
            let tick = r.u64()?;
            let n = r.len()?;
            let mut nodes = Vec::with_capacity(n);
            for _ in 0..n {
                let layer = read_layer(r)?;
                let input_merge = r.pair()?;
                let context_merge = r.pair()?;
                let slots = r.len()?;
                let pending = (0..slots)
                    .map(|_| Ok(if r.flag()? { Some(r.floats()?) } else { None }))
                    .collect::<Result<_>>()?;
                nodes.push(NodeState {
                    layer,
                    input_merge,
                    context_merge,
                    pending,
                    parent_predictions: r.vecs()?,
                    context_stamp: r.opt_u64()?,
                });
            }
            let stream_position = r.u64()?;
            let nb = r.len()?;
            let mut buckets = Vec::with_capacity(nb);
            for _ in 0..nb {
                let stamp = r.u64()?;
                let nc = r.len()?;
                let counts = (0..nc)
                    .map(|_| {
                        Ok(HitCounts {
                            ar_hits: r.u64()?,
                            ar_total: r.u64()?,
                            ae_hits: r.u64()?,
                            ae_total: r.u64()?,
                        })
                    })
                    .collect::<Result<_>>()?;
                buckets.push((stamp, counts));
            }
            Payload::CharLm(CharLmState {
                graph: GraphState { tick, nodes },
                stream_position,
                buckets,
            })
        }
        KIND_INSTINCTS => {
            let n = r.len()?;
            let mut list = Vec::with_capacity(n);
            for _ in 0..n {
                let seed = r.u64()?;
                let danger_radius = r.u32()?;
                let nq = r.len()?;
                let q_values = (0..nq).map(|_| Ok((r.u64()?, r.u64()?, r.f64()?))).collect::<Result<_>>()?;
                list.push(InstinctState {
                    seed,
                    danger_radius,
                    q_values,
                    value_unit: r.floats()?,
                });
            }
            Payload::Instincts(list)
        }
        k => return Err(HicaError::Checkpoint(format!("unknown checkpoint kind {k}"))),
    };
    Ok(Checkpoint { config, payload })
}

pub fn encode(c: &Checkpoint) -> Vec<u8> {
    let mut payload = Writer(Vec::new());
    write_payload(&mut payload, c);
    let mut w = Writer(Vec::with_capacity(payload.0.len() + 52));
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.bytes(&payload.0);
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 8 + 32 {
        return Err(HicaError::Checkpoint("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(HicaError::Checkpoint("checksum mismatch".into()));
    }
    if &body[..8] != MAGIC {
        return Err(HicaError::Checkpoint("not a checkpoint file".into()));
    }
    let mut r = Reader(Cursor::new(&body[8..]));
    let version = r.u32()?;
    if version != VERSION {
        return Err(HicaError::Checkpoint(format!(
            "format version {version}, this build reads {VERSION}"
        )));
    }
    let payload = r.bytes()?;
    if r.0.position() as usize != body.len() - 8 {
        return Err(HicaError::Checkpoint("trailing bytes after payload".into()));
    }
    let mut pr = Reader(Cursor::new(&payload));
    let c = read_payload(&mut pr)?;
    if pr.0.position() as usize != payload.len() {
        return Err(HicaError::Checkpoint("trailing bytes inside payload".into()));
    }
    Ok(c)
}

pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(c))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::env::charlm::{charlm_run, CharStream};

    const TEXT: &str = "the quick brown fox jumps over the lazy dog. ";

    fn small_config() -> RunConfig {
        let mut c = RunConfig::default();
        for n in &mut c.graph.nodes {
            n.d_sum = 8;
            n.d_ctx = 8;
            if n.d_in != 0 {
                n.d_in = 8;
            }
        }
        c
    }

    fn setup(c: &RunConfig) -> (HetGraph, CharStream, AccuracyMeter) {
        let stream = CharStream::new(TEXT, true).unwrap();
        let g = c.build_graph(stream.codec().size()).unwrap();
        let meter = AccuracyMeter::new(&g, 50, 0.9).unwrap();
        (g, stream, meter)
    }

    fn snapshot(c: &RunConfig, g: &HetGraph, s: &CharStream, m: &AccuracyMeter) -> Checkpoint {
        Checkpoint {
            config: c.to_toml_string().unwrap(),
            payload: Payload::CharLm(CharLmState {
                graph: graph_state(g),
                stream_position: s.position(),
                buckets: meter_buckets(m),
            }),
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let c = small_config();
        let (mut g, mut s, mut m) = setup(&c);
        charlm_run(&mut g, &mut s, 333, &mut m, 1, 0.1).unwrap();
        let bytes = encode(&snapshot(&c, &g, &s, &m));
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn resume_matches_continuous_run() {
        let c = small_config();
        let (mut g, mut s, mut m) = setup(&c);
        charlm_run(&mut g, &mut s, 2000, &mut m, 1, 0.1).unwrap();

        let (mut g1, mut s1, mut m1) = setup(&c);
        charlm_run(&mut g1, &mut s1, 1000, &mut m1, 1, 0.1).unwrap();
        let ck = decode(&encode(&snapshot(&c, &g1, &s1, &m1))).unwrap();
        drop((g1, s1, m1));

        let cfg = RunConfig::from_toml_str(&ck.config).unwrap();
        let (mut g2, mut s2, mut m2) = setup(&cfg);
        let Payload::CharLm(state) = &ck.payload else { panic!() };
        restore_graph(&mut g2, &state.graph).unwrap();
        s2.seek(state.stream_position);
        restore_meter(&mut m2, &state.buckets).unwrap();
        charlm_run(&mut g2, &mut s2, 1000, &mut m2, 1, 0.1).unwrap();

        let csv = |m: &AccuracyMeter| {
            let mut out = Vec::new();
            m.write_csv(&mut out, 2000).unwrap();
            out
        };
        assert_eq!(csv(&m), csv(&m2));
        assert_eq!(graph_state(&g), graph_state(&g2));
    }

    #[test]
    fn any_corrupted_byte_is_detected() {
        let c = small_config();
        let (mut g, mut s, mut m) = setup(&c);
        charlm_run(&mut g, &mut s, 50, &mut m, 1, 0.1).unwrap();
        let bytes = encode(&snapshot(&c, &g, &s, &m));
        for i in (0..bytes.len()).step_by(97) {
            let mut bad = bytes.clone();
            bad[i] ^= 0x20;
            assert!(matches!(decode(&bad), Err(HicaError::Checkpoint(_))), "byte {i}");
        }
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn version_mismatch_is_an_error() {
        let c = Checkpoint {
            config: String::new(),
            payload: Payload::Instincts(vec![]),
        };
        let mut bytes = encode(&c);
        bytes[8] = 9;
        let body_len = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        let err = decode(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
    }
}
