//! Event-sequence datasets: ingestion, time normalization, and train/test
//! splitting.
//!
//! The on-disk format is JSON Lines, one sequence per line:
//!
//! ```text
//! {"id": "seq-1", "events": [{"t": 1.5, "m": "A"}, {"t": 2.25, "m": "B"}]}
//! ```
//!
//! Mark identifiers are strings externally and dense integer ids internally,
//! assigned in order of first appearance. After ingestion every sequence has
//! strictly increasing timestamps; events violating that are dropped and
//! counted.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub type MarkId = u32;

/// One event: a categorical mark and a nonnegative time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub mark: MarkId,
    pub time: f64,
}

/// A strictly time-ordered event list.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub events: Vec<Event>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Mark vocabulary: string identifiers and their dense ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, MarkId>,
}

impl Vocab {
    pub fn new() -> Self {
        Vocab::default()
    }

    pub fn intern(&mut self, name: &str) -> MarkId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as MarkId;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<MarkId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: MarkId) -> &str {
        &self.names[id as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn from_names(names: Vec<String>) -> Self {
        let mut v = Vocab::new();
        for n in &names {
            v.intern(n);
        }
        v
    }
}

/// Event sequences plus their vocabulary and time normalization divisor.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<Sequence>,
    pub vocab: Vocab,
    /// Mean training-portion inter-arrival of the raw data; 1.0 until
    /// [`normalize_times`] is applied.
    pub time_scale: f64,
}

impl Dataset {
    pub fn n_events(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }
}

/// Train/test split by per-sequence event fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        Ok(SplitSpec { train_fraction })
    }

    /// Boundary index: the first `k` events are train.
    pub fn boundary(&self, n: usize) -> usize {
        if n < 2 {
            // Too short to test on; assign everything to train.
            return n;
        }
        (self.train_fraction * n as f64).ceil() as usize
    }
}

/// Per-sequence boundaries produced by [`split`].
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub boundaries: Vec<usize>,
}

impl Split {
    pub fn train_events<'a>(&self, d: &'a Dataset, seq: usize) -> &'a [Event] {
        &d.sequences[seq].events[..self.boundaries[seq]]
    }

    pub fn test_events<'a>(&self, d: &'a Dataset, seq: usize) -> &'a [Event] {
        &d.sequences[seq].events[self.boundaries[seq]..]
    }

    pub fn n_test_events(&self, d: &Dataset) -> usize {
        (0..d.sequences.len())
            .map(|i| self.test_events(d, i).len())
            .sum()
    }
}

pub fn split(d: &Dataset, spec: SplitSpec) -> Split {
    let boundaries = d.sequences.iter().map(|s| spec.boundary(s.len())).collect();
    Split { boundaries }
}

#[derive(Debug, Deserialize, Serialize)]
struct RawEvent {
    t: f64,
    m: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawSequence {
    id: String,
    events: Vec<RawEvent>,
}

/// Counters for records dropped or repaired during ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IngestStats {
    /// Events dropped because their timestamp did not strictly increase
    /// after sorting (duplicate times keep the first occurrence).
    pub dropped_nonmonotonic: usize,
    /// Sequences dropped because they had no events left.
    pub dropped_empty_sequences: usize,
}

/// Reads a JSONL dataset. Events are sorted by time per sequence;
/// non-increasing timestamps are dropped (first occurrence wins) and counted.
pub fn ingest(path: &Path) -> Result<(Dataset, IngestStats)> {
    let file = std::fs::File::open(path)?;
    ingest_reader(BufReader::new(file), false)
}

/// As [`ingest`], but keeps sequences with zero events (held-out companion
/// files have one line per original sequence, possibly empty).
pub fn ingest_keep_empty(path: &Path) -> Result<(Dataset, IngestStats)> {
    let file = std::fs::File::open(path)?;
    ingest_reader(BufReader::new(file), true)
}

pub fn ingest_reader<R: BufRead>(reader: R, keep_empty: bool) -> Result<(Dataset, IngestStats)> {
    let mut vocab = Vocab::new();
    let mut sequences = Vec::new();
    let mut stats = IngestStats::default();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSequence = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let mut events: Vec<(f64, String)> = raw.events.into_iter().map(|e| (e.t, e.m)).collect();
        for (t, _) in &events {
            if !t.is_finite() || *t < 0.0 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("event time must be a finite nonnegative number, got {t}"),
                });
            }
        }
        events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut kept: Vec<Event> = Vec::with_capacity(events.len());
        let mut last_time = f64::NEG_INFINITY;
        for (t, m) in events {
            if t <= last_time {
                stats.dropped_nonmonotonic += 1;
                continue;
            }
            let mark = vocab.intern(&m);
            kept.push(Event { mark, time: t });
            last_time = t;
        }
        if kept.is_empty() && !keep_empty {
            stats.dropped_empty_sequences += 1;
            continue;
        }
        sequences.push(Sequence {
            id: raw.id,
            events: kept,
        });
    }

    if sequences.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((
        Dataset {
            sequences,
            vocab,
            time_scale: 1.0,
        },
        stats,
    ))
}

/// Writes a dataset in the JSONL format read by [`ingest`].
pub fn write_jsonl(d: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for seq in &d.sequences {
        let raw = RawSequence {
            id: seq.id.clone(),
            events: seq
                .events
                .iter()
                .map(|e| RawEvent {
                    t: e.time,
                    m: d.vocab.name(e.mark).to_string(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &raw).map_err(|e| Error::Invalid(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Rescales times so the mean training-portion inter-arrival equals one.
///
/// Each sequence is rebased to start at zero, then all times are divided by
/// the mean gap computed over the first `ceil(train_fraction * N)` events of
/// every sequence (the statistic excludes the test region so no test
/// information leaks into the scale).
pub fn normalize_times(d: &Dataset, train_fraction: f64) -> Result<Dataset> {
    let spec = SplitSpec::new(train_fraction)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for seq in &d.sequences {
        let k = spec.boundary(seq.len());
        for w in seq.events[..k].windows(2) {
            sum += w[1].time - w[0].time;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoInterArrivals);
    }
    let scale = sum / count as f64;
    if scale <= 0.0 {
        return Err(Error::Domain(format!(
            "non-positive mean inter-arrival {scale}"
        )));
    }
    let sequences = d
        .sequences
        .iter()
        .map(|seq| {
            let t0 = seq.events[0].time;
            Sequence {
                id: seq.id.clone(),
                events: seq
                    .events
                    .iter()
                    .map(|e| Event {
                        mark: e.mark,
                        time: (e.time - t0) / scale,
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(Dataset {
        sequences,
        vocab: d.vocab.clone(),
        time_scale: d.time_scale * scale,
    })
}

/// Normalizes an observed dataset and maps a held-out companion (events
/// deleted from the same original sequences) through the identical
/// transform, so both share one time scale and per-sequence origin.
pub fn normalize_aligned(
    observed: &Dataset,
    heldout: &Dataset,
    train_fraction: f64,
) -> Result<(Dataset, Dataset)> {
    if observed.sequences.len() != heldout.sequences.len()
        || observed
            .sequences
            .iter()
            .zip(&heldout.sequences)
            .any(|(o, h)| o.id != h.id)
    {
        return Err(Error::Invalid(
            "observed and held-out datasets must describe the same sequences".into(),
        ));
    }
    let obs_norm = normalize_times(observed, train_fraction)?;
    let scale = obs_norm.time_scale / observed.time_scale;
    let sequences = heldout
        .sequences
        .iter()
        .zip(&observed.sequences)
        .map(|(h, o)| {
            let t0 = o.events[0].time;
            Sequence {
                id: h.id.clone(),
                events: h
                    .events
                    .iter()
                    .map(|e| Event {
                        mark: e.mark,
                        time: (e.time - t0) / scale,
                    })
                    .collect(),
            }
        })
        .collect();
    Ok((
        obs_norm.clone(),
        Dataset {
            sequences,
            vocab: heldout.vocab.clone(),
            time_scale: obs_norm.time_scale,
        },
    ))
}
