//! Outcome sources: the noisy simulator and a replayable recorded-shot dataset.

use crate::error::{Error, Result};
use crate::model::{LambdaParams, Measurement, Preparation, Query};
use crate::noise::{hidden_likelihood, noisy_likelihood, NoiseModel, ReadoutModel};
use crate::space::{GrowthPolicy, QuerySpace};
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Seeded random stream; `(seed, stream)` fixes the draw sequence.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamPurpose {
    Dataset = 0,
    Learner = 1,
    TestSet = 2,
    Bootstrap = 3,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    /// Independent sub-stream for one Monte Carlo run and purpose.
    pub fn for_run(master_seed: u64, run: u64, purpose: StreamPurpose) -> Self {
        Self::new(master_seed, run.wrapping_mul(16).wrapping_add(purpose as u64))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Outcome {
    Bit(u8),
    Signal(Complex64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShotRecord {
    pub query: Query,
    pub outcome: Outcome,
}

fn sample_signal(g: &crate::noise::GaussianReadout, y: u8, rng: &mut RngStream) -> Complex64 {
    let m = g.mean(y);
    let s = g.cov(y);
    let l00 = s[0][0].sqrt();
    let l10 = s[1][0] / l00;
    let l11 = (s[1][1] - l10 * l10).max(0.0).sqrt();
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    Complex64::new(m[0] + l00 * z0, m[1] + l10 * z0 + l11 * z1)
}

/// One single-shot measurement from the simulated device.
pub fn simulate_shot(theta_star: &LambdaParams, n: &NoiseModel, q: &Query, rng: &mut RngStream) -> ShotRecord {
    let outcome = match &n.readout {
        ReadoutModel::BitFlip { .. } => {
            let p0 = noisy_likelihood(theta_star, n, q);
            Outcome::Bit(if rng.random::<f64>() < p0 { 0 } else { 1 })
        }
        ReadoutModel::GaussianSignal(g) => {
            let p0 = hidden_likelihood(theta_star, n, q).p;
            let y = if rng.random::<f64>() < p0 { 0 } else { 1 };
            Outcome::Signal(sample_signal(g, y, rng))
        }
    };
    ShotRecord { query: *q, outcome }
}

/// Source of measurement outcomes for a learner.
pub trait Oracle {
    fn readout_kind(&self) -> &'static str;
    fn measure(&mut self, q: &Query, rng: &mut RngStream) -> Result<Outcome>;
    /// Remaining shots for `q`; `None` when unlimited.
    fn remaining(&self, q: &Query) -> Option<usize>;
}

#[derive(Clone, Debug)]
pub struct Simulator {
    pub theta: LambdaParams,
    pub noise: NoiseModel,
}

impl Simulator {
    pub fn new(theta: LambdaParams, noise: NoiseModel) -> Self {
        Self { theta, noise }
    }
}

impl Oracle for Simulator {
    fn readout_kind(&self) -> &'static str {
        self.noise.readout.kind()
    }

    fn measure(&mut self, q: &Query, rng: &mut RngStream) -> Result<Outcome> {
        Ok(simulate_shot(&self.theta, &self.noise, q, rng).outcome)
    }

    fn remaining(&self, _q: &Query) -> Option<usize> {
        None
    }
}

pub const DATASET_VERSION: u32 = 1;

/// Recorded shots per query with a ledger of unused shots.
///
/// The unused shots of query `i` are `shots[i][..ledger[i]]`; drawing swaps the
/// chosen shot behind the ledger boundary so the stored multiset never changes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    space: QuerySpace,
    readout_kind: &'static str,
    shots_per_query: usize,
    shots: Vec<Vec<Outcome>>,
    ledger: Vec<usize>,
    /// Free-form description of how the file was produced, kept in the header.
    provenance: Option<serde_json::Value>,
}

impl Dataset {
    pub fn provenance(&self) -> Option<&serde_json::Value> {
        self.provenance.as_ref()
    }

    pub fn set_provenance(&mut self, value: serde_json::Value) {
        self.provenance = Some(value);
    }

    pub fn space(&self) -> &QuerySpace {
        &self.space
    }

    pub fn readout_kind(&self) -> &'static str {
        self.readout_kind
    }

    pub fn shots_per_query(&self) -> usize {
        self.shots_per_query
    }

    pub fn ledger(&self) -> &[usize] {
        &self.ledger
    }

    pub fn total_remaining(&self) -> usize {
        self.ledger.iter().sum()
    }

    pub fn n_records(&self) -> usize {
        self.shots.iter().map(Vec::len).sum()
    }

    /// Unused shots of query `idx`.
    pub fn unused(&self, idx: usize) -> &[Outcome] {
        &self.shots[idx][..self.ledger[idx]]
    }

    /// All recorded shots of query `idx`, used or not.
    pub fn recorded(&self, idx: usize) -> &[Outcome] {
        &self.shots[idx]
    }

    pub fn draw_index(&mut self, idx: usize, rng: &mut RngStream) -> Result<Outcome> {
        let left = self.ledger[idx];
        if left == 0 {
            return Err(Error::ExhaustedQuery(idx));
        }
        let k = rng.random_range(0..left);
        self.shots[idx].swap(k, left - 1);
        self.ledger[idx] = left - 1;
        Ok(self.shots[idx][left - 1])
    }

    pub fn replay_draw(&mut self, q: &Query, rng: &mut RngStream) -> Result<ShotRecord> {
        let idx = self
            .space
            .index_of(q)
            .ok_or_else(|| Error::Domain(format!("query {q} is not in the dataset")))?;
        let outcome = self.draw_index(idx, rng)?;
        Ok(ShotRecord { query: self.space.query(idx), outcome })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = Header {
            version: DATASET_VERSION,
            n_queries: self.space.len(),
            shots_per_query: self.shots_per_query,
            readout_kind: self.readout_kind.to_string(),
            n_records: self.total_remaining(),
            provenance: self.provenance.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&header).map_err(|e| Error::Io(e.to_string()))?)?;
        for idx in 0..self.space.len() {
            let q = self.space.query(idx);
            for o in self.unused(idx) {
                let (y, c_re, c_im) = match *o {
                    Outcome::Bit(y) => (Some(y), None, None),
                    Outcome::Signal(c) => (None, Some(c.re), Some(c.im)),
                };
                let rec = Record { m: q.meas.label().to_string(), u: q.prep.block() as u8, t: q.t, y, c_re, c_im };
                writeln!(w, "{}", serde_json::to_string(&rec).map_err(|e| Error::Io(e.to_string()))?)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let f = std::fs::File::open(path)?;
        Self::read_from(BufReader::new(f))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Dataset> {
        let mut lines = r.lines();
        let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
        let first = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))??;
        let header: Header = serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
        if header.version != DATASET_VERSION {
            return Err(parse_err(1, format!("unsupported version {}", header.version)));
        }
        let readout_kind = match header.readout_kind.as_str() {
            "bit" => "bit",
            "signal" => "signal",
            other => return Err(parse_err(1, format!("unknown readout kind {other:?}"))),
        };
        let mut records = Vec::with_capacity(header.n_records);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
            let meas = Measurement::from_label(&rec.m)
                .ok_or_else(|| parse_err(lineno, format!("unknown measurement {:?}", rec.m)))?;
            let prep = Preparation::from_block(rec.u as usize)
                .ok_or_else(|| parse_err(lineno, format!("unknown preparation {}", rec.u)))?;
            let outcome = match (readout_kind, rec.y, rec.c_re, rec.c_im) {
                ("bit", Some(y), None, None) if y <= 1 => Outcome::Bit(y),
                ("signal", None, Some(re), Some(im)) => Outcome::Signal(Complex64::new(re, im)),
                _ => return Err(parse_err(lineno, "outcome fields do not match the readout kind".into())),
            };
            if !(rec.t > 0.0 && rec.t.is_finite()) {
                return Err(parse_err(lineno, format!("invalid time {}", rec.t)));
            }
            records.push((Query::new(meas, prep, rec.t), outcome));
        }
        if records.len() != header.n_records {
            return Err(parse_err(
                records.len() + 1,
                format!("expected {} records, found {}", header.n_records, records.len()),
            ));
        }
        let mut times: Vec<f64> = records.iter().map(|(q, _)| q.t).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let space = QuerySpace::from_times(times, GrowthPolicy::Fixed)?;
        if space.len() > header.n_queries {
            return Err(parse_err(1, format!("header declares {} queries, records use {}", header.n_queries, space.len())));
        }
        let mut shots = vec![Vec::new(); space.len()];
        for (q, o) in records {
            let idx = space.index_of(&q).expect("time taken from records");
            shots[idx].push(o);
        }
        let ledger = shots.iter().map(Vec::len).collect();
        Ok(Dataset { space, readout_kind, shots_per_query: header.shots_per_query, shots, ledger, provenance: header.provenance })
    }
}

impl Oracle for Dataset {
    fn readout_kind(&self) -> &'static str {
        self.readout_kind
    }

    fn measure(&mut self, q: &Query, rng: &mut RngStream) -> Result<Outcome> {
        Ok(self.replay_draw(q, rng)?.outcome)
    }

    fn remaining(&self, q: &Query) -> Option<usize> {
        Some(self.space.index_of(q).map_or(0, |i| self.ledger[i]))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    n_queries: usize,
    shots_per_query: usize,
    readout_kind: String,
    n_records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    m: String,
    u: u8,
    t: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    y: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    c_re: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    c_im: Option<f64>,
}

pub fn generate_dataset(
    theta_star: &LambdaParams,
    n: &NoiseModel,
    space: &QuerySpace,
    shots_per_query: usize,
    rng: &mut RngStream,
) -> Result<Dataset> {
    if shots_per_query == 0 {
        return Err(Error::Config("shots_per_query must be at least 1".into()));
    }
    let shots: Vec<Vec<Outcome>> = space
        .queries()
        .map(|q| (0..shots_per_query).map(|_| simulate_shot(theta_star, n, &q, rng).outcome).collect())
        .collect();
    Ok(Dataset {
        space: space.clone().with_policy(GrowthPolicy::Fixed),
        readout_kind: n.readout.kind(),
        shots_per_query,
        ledger: vec![shots_per_query; space.len()],
        shots,
        provenance: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn deterministic_query_outcome() {
        let theta = LambdaParams::from_array([2e6, 0.0, 0.0, 3e6, 0.0, 0.0]);
        let q = Query::new(Measurement::Z, Preparation::U0, 0.0);
        let mut rng = RngStream::new(1, 0);
        for _ in 0..100 {
            assert_eq!(simulate_shot(&theta, &NoiseModel::noiseless(), &q, &mut rng).outcome, Outcome::Bit(0));
        }
    }

    #[test]
    fn zero_shots_rejected() {
        let theta = LambdaParams::from_array([2e6, 0.0, 0.0, 3e6, 0.0, 0.0]);
        let space = QuerySpace::default_grid(GrowthPolicy::Fixed);
        let mut rng = RngStream::new(1, 0);
        assert!(generate_dataset(&theta, &NoiseModel::noiseless(), &space, 0, &mut rng).is_err());
    }
}
