//! Character-level language modelling: a character stream fed one symbol
//! per tick into the bottom of a layer stack, and windowed accuracy meters
//! for every layer's autoregressor and pooler.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{HicaError, Result};
use crate::graph::{HetGraph, NodeEvent, NodeId, TickInput};
use crate::layer::FeedOutcome;
use crate::signal::{SignalVector, TokenCodec};
use crate::unit::Channel;

/// Emits the characters of a corpus in order.
#[derive(Debug, Clone, PartialEq)]
pub struct CharStream {
    text: Vec<char>,
    position: u64,
    codec: TokenCodec,
    wrap: bool,
}

impl CharStream {
    pub fn new(text: &str, wrap: bool) -> Result<Self> {
        let codec = TokenCodec::from_corpus(text)?;
        Self::with_codec(text, codec, wrap)
    }

    pub fn with_codec(text: &str, codec: TokenCodec, wrap: bool) -> Result<Self> {
        let text: Vec<char> = text.chars().collect();
        if let Some(&bad) = text.iter().find(|&&c| codec.index_of(c).is_err()) {
            return Err(HicaError::UnknownChar(bad));
        }
        Ok(CharStream {
            text,
            position: 0,
            codec,
            wrap,
        })
    }

    pub fn codec(&self) -> &TokenCodec {
        &self.codec
    }

    pub fn len(&self) -> usize {
        self.text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    /// Characters emitted so far, counting wrap-arounds.
    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn seek(&mut self, position: u64) {
        self.position = position;
    }

    pub fn next_char(&mut self) -> Option<char> {
        let n = self.text.len() as u64;
        if n == 0 || (!self.wrap && self.position >= n) {
            return None;
        }
        let c = self.text[(self.position % n) as usize];
        self.position += 1;
        Some(c)
    }

    pub fn next_vector(&mut self) -> Option<SignalVector> {
        let c = self.next_char()?;
        Some(self.codec.one_hot(c).expect("validated at construction"))
    }
}

/// Accuracy of always guessing the most frequent character.
pub fn unigram_baseline(text: &str) -> f64 {
    let mut counts: BTreeMap<char, usize> = BTreeMap::new();
    let mut total = 0;
    for c in text.chars() {
        *counts.entry(c).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return 0.0;
    }
    *counts.values().max().expect("non-empty") as f64 / total as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HitCounts {
    pub ar_hits: u64,
    pub ar_total: u64,
    pub ae_hits: u64,
    pub ae_total: u64,
}

impl HitCounts {
    pub fn ar(&self) -> Option<f64> {
        (self.ar_total > 0).then(|| self.ar_hits as f64 / self.ar_total as f64)
    }

    pub fn ae(&self) -> Option<f64> {
        (self.ae_total > 0).then(|| self.ae_hits as f64 / self.ae_total as f64)
    }

    fn add(&mut self, other: &HitCounts) {
        self.ar_hits += other.ar_hits;
        self.ar_total += other.ar_total;
        self.ae_hits += other.ae_hits;
        self.ae_total += other.ae_total;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MeterColumn {
    pub(crate) node: NodeId,
    pub(crate) label: String,
    pub(crate) token: bool,
}

/// Per-node AR and AE hit counts, bucketed by log interval.
///
/// A token node scores an AR hit when the argmax of its standing prediction
/// is the character that arrived, and an AE hit when every character of the
/// pooled window decodes back correctly. A continuous node scores a hit when
/// the cosine between prediction (or reconstruction) and target reaches the
/// threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMeter {
    pub(crate) columns: Vec<MeterColumn>,
    pub(crate) interval: u64,
    pub(crate) threshold: f64,
    pub(crate) buckets: BTreeMap<u64, Vec<HitCounts>>,
}

impl AccuracyMeter {
    /// Columns follow the graph's topological order.
    pub fn new(graph: &HetGraph, interval: u64, threshold: f64) -> Result<Self> {
        if interval == 0 {
            return Err(HicaError::InvalidArgument("log interval must be positive".into()));
        }
        let order = graph
            .order()
            .ok_or_else(|| HicaError::Graph("graph must be validated before metering".into()))?;
        let columns = order
            .iter()
            .map(|&node| MeterColumn {
                node,
                label: graph.label(node).to_string(),
                token: graph.layer(node).spec().channel == Channel::Token,
            })
            .collect();
        Ok(AccuracyMeter {
            columns,
            interval,
            threshold,
            buckets: BTreeMap::new(),
        })
    }

    pub fn interval(&self) -> u64 {
        self.interval
    }

    pub fn labels(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn observe(&mut self, stamp: u64, node: NodeId, outcome: &FeedOutcome) {
        let Some(col) = self.columns.iter().position(|c| c.node == node) else {
            return;
        };
        let token = self.columns[col].token;
        let mut hit = HitCounts::default();
        if outcome.ar_loss.is_some() {
            hit.ar_total = 1;
            let ok = if token {
                outcome.prior_prediction.argmax() == outcome.input.argmax()
            } else {
                outcome.prior_prediction.cosine(&outcome.input) >= self.threshold
            };
            hit.ar_hits = ok as u64;
        }
        if let Some(pool) = &outcome.pool {
            hit.ae_total = 1;
            let ok = if token {
                pool.window
                    .iter()
                    .zip(&pool.reconstruction)
                    .all(|(x, r)| x.argmax() == r.argmax())
            } else {
                SignalVector::concat(&pool.reconstruction).cosine(&SignalVector::concat(&pool.window)) >= self.threshold
            };
            hit.ae_hits = ok as u64;
        }
        let bucket = (stamp.max(1) - 1) / self.interval;
        let n = self.columns.len();
        self.buckets.entry(bucket).or_insert_with(|| vec![HitCounts::default(); n])[col].add(&hit);
    }

    pub fn observe_event(&mut self, event: &NodeEvent) {
        self.observe(event.stamp, event.node, &event.outcome);
    }

    /// Counts for `node` over ticks `from..=to`, rounded out to whole buckets.
    pub fn counts_between(&self, node: NodeId, from: u64, to: u64) -> HitCounts {
        let mut total = HitCounts::default();
        let Some(col) = self.columns.iter().position(|c| c.node == node) else {
            return total;
        };
        let lo = (from.max(1) - 1) / self.interval;
        let hi = (to.max(1) - 1) / self.interval;
        for (_, counts) in self.buckets.range(lo..=hi) {
            total.add(&counts[col]);
        }
        total
    }

    pub fn header(&self) -> String {
        let mut h = String::from("tick");
        for c in &self.columns {
            h.push_str(&format!(",{0}_ar_acc,{0}_ae_acc", c.label));
        }
        h
    }

    /// One row per interval up to `ticks`; the last row may cover a partial
    /// interval. Intervals without events leave the field empty.
    pub fn rows(&self, ticks: u64) -> Vec<String> {
        let n_rows = ticks.div_ceil(self.interval);
        let empty = vec![HitCounts::default(); self.columns.len()];
        (0..n_rows)
            .map(|b| {
                let end = ((b + 1) * self.interval).min(ticks);
                let counts = self.buckets.get(&b).unwrap_or(&empty);
                let mut row = end.to_string();
                for c in counts {
                    row.push(',');
                    row.push_str(&fmt_acc(c.ar()));
                    row.push(',');
                    row.push_str(&fmt_acc(c.ae()));
                }
                row
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W, ticks: u64) -> Result<()> {
        writeln!(out, "{}", self.header())?;
        for row in self.rows(ticks) {
            writeln!(out, "{row}")?;
        }
        Ok(())
    }

    /// The AR and AE series of every node, one value per interval that had
    /// events, in column order.
    pub fn series(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, c) in self.columns.iter().enumerate() {
            let ar = self.buckets.values().filter_map(|b| b[i].ar()).collect();
            let ae = self.buckets.values().filter_map(|b| b[i].ae()).collect();
            out.push((format!("{}_ar", c.label), ar));
            out.push((format!("{}_ae", c.label), ae));
        }
        out
    }
}

fn fmt_acc(v: Option<f64>) -> String {
    v.map(|a| format!("{a:.6}")).unwrap_or_default()
}

/// Feeds up to `ticks` characters from `stream` into the graph's single
/// bottom node, recording every feed in `meter`. Returns the number of
/// ticks run (fewer if a non-wrapping stream ends).
pub fn charlm_run(
    graph: &mut HetGraph,
    stream: &mut CharStream,
    ticks: u64,
    meter: &mut AccuracyMeter,
    workers: usize,
    gain: f64,
) -> Result<u64> {
    let bottom = match graph.bottoms() {
        [b] => *b,
        other => {
            return Err(HicaError::Graph(format!(
                "char-LM needs exactly one bottom node, found {}",
                other.len()
            )))
        }
    };
    let d_in = graph.layer(bottom).spec().d_in;
    if d_in != stream.codec().size() {
        return Err(HicaError::dim("char-LM bottom input", stream.codec().size(), d_in));
    }

    let inputs = (0..ticks).map_while(|_| {
        stream.next_vector().map(|x| TickInput {
            inputs: [(bottom, x)].into_iter().collect(),
            gain,
        })
    });
    graph.run_async(inputs, workers, |event| {
        meter.observe_event(&event);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{Layer, LayerSpec};
    use crate::signal::SeededRng;

    #[test]
    fn stream_wraps_or_stops() {
        let mut s = CharStream::new("abc", false).unwrap();
        let got: String = std::iter::from_fn(|| s.next_char()).collect();
        assert_eq!(got, "abc");
        let mut w = CharStream::new("abc", true).unwrap();
        let got: String = (0..7).map(|_| w.next_char().unwrap()).collect();
        assert_eq!(got, "abcabca");
        assert_eq!(w.position(), 7);
        let codec = TokenCodec::from_corpus("ab").unwrap();
        assert_eq!(CharStream::with_codec("abz", codec, true), Err(HicaError::UnknownChar('z')));
    }

    #[test]
    fn unigram_baseline_counts() {
        assert_eq!(unigram_baseline("aab"), 2.0 / 3.0);
        assert_eq!(unigram_baseline(""), 0.0);
    }

    fn single_node(alphabet: usize) -> (HetGraph, NodeId) {
        let mut g = HetGraph::new(0);
        let spec = LayerSpec::token(alphabet, 2, 2).with_lr(0.5);
        let id = g.add_node(Layer::new(spec, &mut SeededRng::new(0)).unwrap(), "L1").unwrap();
        g.validate().unwrap();
        (g, id)
    }

    #[test]
    fn csv_layout() {
        let (mut g, _) = single_node(2);
        let mut meter = AccuracyMeter::new(&g, 4, 0.9).unwrap();
        let mut stream = CharStream::new("ab", true).unwrap();
        let ran = charlm_run(&mut g, &mut stream, 10, &mut meter, 1, 1.0).unwrap();
        assert_eq!(ran, 10);
        let mut buf = Vec::new();
        meter.write_csv(&mut buf, 10).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "tick,L1_ar_acc,L1_ae_acc");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("10,"));
        // The first interval has 3 AR events (the very first feed has no
        // prediction) and one pooled window.
        assert_eq!(meter.counts_between(g.bottoms()[0], 1, 4).ar_total, 3);
        assert_eq!(meter.counts_between(g.bottoms()[0], 1, 4).ae_total, 1);
        // Third interval: ticks 9-10, no pooled window.
        assert!(lines[3].ends_with(','));
    }

    #[test]
    fn zero_ticks_give_header_only() {
        let (mut g, _) = single_node(2);
        let mut meter = AccuracyMeter::new(&g, 4, 0.9).unwrap();
        let mut stream = CharStream::new("ab", true).unwrap();
        assert_eq!(charlm_run(&mut g, &mut stream, 0, &mut meter, 1, 1.0).unwrap(), 0);
        let mut buf = Vec::new();
        meter.write_csv(&mut buf, 0).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "tick,L1_ar_acc,L1_ae_acc\n");
    }

    #[test]
    fn alphabet_mismatch_is_rejected() {
        let (mut g, _) = single_node(3);
        let mut meter = AccuracyMeter::new(&g, 4, 0.9).unwrap();
        let mut stream = CharStream::new("ab", true).unwrap();
        assert!(charlm_run(&mut g, &mut stream, 5, &mut meter, 1, 1.0).is_err());
    }
}
