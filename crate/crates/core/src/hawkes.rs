//! Multivariate Hawkes process generation via Ogata thinning, plus the
//! synthetic-deletion masks used by the missing-data experiments.
//!
//! Intensity of dimension `i`:
//! `lambda_i(t) = mu_i + sum_j sum_{tau in history_j} rho_{i,j}(t - tau)`.
//!
//! Thinning envelope: recomputed after every accepted event and every
//! rejection. Monotone-decreasing kernels contribute their current value
//! (valid because they only decay); the sine kernel contributes its global
//! maximum for any history event still inside its support window.

use crate::data::{Dataset, Event, Sequence, Vocab};
use crate::error::{Error, Result};
use crate::rng::{purpose, substream};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Triggering kernel `rho(t)`, nonnegative and integrable on `[0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `a * (c + t)^(-p)` with `p > 1`.
    PowerLaw {
        a: f64,
        c: f64,
        p: f64,
    },
    /// `a * exp(-b t)`.
    Exponential {
        a: f64,
        b: f64,
    },
    /// `a1 * exp(-b1 t) + a2 * exp(-b2 t)`.
    ExpMixture {
        a1: f64,
        b1: f64,
        a2: f64,
        b2: f64,
    },
    /// `scale * max(0, sin t)` on `[0, horizon]`, zero outside.
    Sine {
        scale: f64,
        horizon: f64,
    },
    Zero,
}

impl KernelSpec {
    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match *self {
            KernelSpec::PowerLaw { a, c, p } => a * (c + t).powf(-p),
            KernelSpec::Exponential { a, b } => a * (-b * t).exp(),
            KernelSpec::ExpMixture { a1, b1, a2, b2 } => {
                a1 * (-b1 * t).exp() + a2 * (-b2 * t).exp()
            }
            KernelSpec::Sine { scale, horizon } => {
                if t <= horizon {
                    (t.sin()).max(0.0) * scale
                } else {
                    0.0
                }
            }
            KernelSpec::Zero => 0.0,
        }
    }

    /// Closed-form integral over `[0, inf)`.
    pub fn integral(&self) -> f64 {
        match *self {
            KernelSpec::PowerLaw { a, c, p } => {
                assert!(p > 1.0, "power-law kernel needs p > 1 to be integrable");
                a * c.powf(1.0 - p) / (p - 1.0)
            }
            KernelSpec::Exponential { a, b } => a / b,
            KernelSpec::ExpMixture { a1, b1, a2, b2 } => a1 / b1 + a2 / b2,
            KernelSpec::Sine { scale, horizon } => {
                assert!(
                    horizon <= 2.0 * std::f64::consts::PI,
                    "sine kernel integral implemented for horizon <= 2 pi"
                );
                scale * (1.0 - horizon.min(std::f64::consts::PI).cos())
            }
            KernelSpec::Zero => 0.0,
        }
    }

    /// Upper bound on `rho(t')` for all `t' >= age`, used by the thinning
    /// envelope.
    fn envelope(&self, age: f64) -> f64 {
        match *self {
            KernelSpec::Sine { scale, horizon } => {
                if age < horizon {
                    scale
                } else {
                    0.0
                }
            }
            // All other kernels are non-increasing in t.
            _ => self.eval(age),
        }
    }
}

/// Full generator specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesSpec {
    pub base_rates: Vec<f64>,
    /// `kernels[i][j]` drives dimension `i` from events of dimension `j`.
    pub kernels: Vec<Vec<KernelSpec>>,
    pub horizon: f64,
    pub n_sequences: usize,
}

/// Two-dimensional synthetic generator: base rates 0.1 and 0.2, with
/// power-law, exponential, two-exponential-mixture, and sine kernels.
pub fn synthetic_2d(n_sequences: usize, horizon: f64) -> HawkesSpec {
    HawkesSpec {
        base_rates: vec![0.1, 0.2],
        kernels: vec![
            vec![
                KernelSpec::PowerLaw {
                    a: 0.2,
                    c: 0.5,
                    p: 1.3,
                },
                KernelSpec::Exponential { a: 0.03, b: 0.3 },
            ],
            vec![
                KernelSpec::ExpMixture {
                    a1: 0.05,
                    b1: 0.2,
                    a2: 0.16,
                    b2: 0.8,
                },
                KernelSpec::Sine {
                    scale: 0.125,
                    horizon: 4.0,
                },
            ],
        ],
        horizon,
        n_sequences,
    }
}

/// Horizon at which the synthetic generator's mean sequence length lands
/// near 132 events (calibrated empirically; see the simulator tests).
pub const SYNTHETIC_2D_HORIZON: f64 = 155.0;

impl HawkesSpec {
    pub fn dims(&self) -> usize {
        self.base_rates.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_rates.is_empty() {
            return Err(Error::Config("at least one dimension required".into()));
        }
        if self.base_rates.iter().any(|&m| m < 0.0) {
            return Err(Error::Config("base rates must be nonnegative".into()));
        }
        if self.kernels.len() != self.dims()
            || self.kernels.iter().any(|row| row.len() != self.dims())
        {
            return Err(Error::Config(
                "kernel matrix shape must match base rates".into(),
            ));
        }
        if self.horizon <= 0.0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(())
    }

    /// Matrix of kernel integrals; its spectral radius below one means the
    /// process is stationary.
    pub fn kernel_integral_matrix(&self) -> Vec<Vec<f64>> {
        self.kernels
            .iter()
            .map(|row| row.iter().map(|k| k.integral()).collect())
            .collect()
    }

    /// Spectral radius of the kernel-integral matrix via power iteration.
    pub fn branching_spectral_radius(&self) -> f64 {
        let g = self.kernel_integral_matrix();
        let n = g.len();
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut lambda = 0.0;
        for _ in 0..200 {
            let mut w = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    w[i] += g[i][j] * v[j];
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / norm;
            }
        }
        lambda
    }

    /// Stationary event rates `(I - G)^{-1} mu` (valid when the spectral
    /// radius is below one). Solved by Gaussian elimination.
    #[allow(clippy::needless_range_loop)]
    pub fn stationary_rates(&self) -> Vec<f64> {
        let g = self.kernel_integral_matrix();
        let n = g.len();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n).map(|j| -g[i][j]).collect();
                row[i] += 1.0;
                row.push(self.base_rates[i]);
                row
            })
            .collect();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            let p = a[col][col];
            assert!(p.abs() > 1e-12, "singular branching system");
            for j in col..=n {
                a[col][j] /= p;
            }
            for row in 0..n {
                if row != col && a[row][col] != 0.0 {
                    let f = a[row][col];
                    for j in col..=n {
                        a[row][j] -= f * a[col][j];
                    }
                }
            }
        }
        (0..n).map(|i| a[i][n]).collect()
    }

    /// Exact intensity of dimension `i` at time `t` given the history.
    pub fn intensity(&self, history: &[(f64, usize)], t: f64, i: usize) -> f64 {
        let mut acc = self.base_rates[i];
        for &(tau, j) in history {
            if tau < t {
                acc += self.kernels[i][j].eval(t - tau);
            }
        }
        acc
    }

    fn total_intensity(&self, history: &[(f64, usize)], t: f64, per_dim: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for (i, p) in per_dim.iter_mut().enumerate() {
            *p = self.intensity(history, t, i);
            total += *p;
        }
        total
    }

    fn envelope_bound(&self, history: &[(f64, usize)], t: f64) -> f64 {
        let mut acc: f64 = self.base_rates.iter().sum();
        for &(tau, j) in history {
            let age = t - tau;
            for row in &self.kernels {
                acc += row[j].envelope(age);
            }
        }
        acc
    }
}

/// Per-sequence candidate budget before a runaway-intensity abort.
const MAX_CANDIDATES: usize = 1_000_000;

/// Counters from one simulation run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimStats {
    pub aborted_sequences: usize,
}

/// Simulates the spec into a dataset; marks are dimension indices rendered
/// as strings. Deterministic per seed: each sequence owns a derived stream.
pub fn simulate(spec: &HawkesSpec, seed: u64) -> Result<(Dataset, SimStats)> {
    spec.validate()?;
    if spec.branching_spectral_radius() >= 1.0 {
        eprintln!(
            "warning: kernel-integral spectral radius {:.3} >= 1; process is not stationary",
            spec.branching_spectral_radius()
        );
    }
    let dims = spec.dims();
    let mut vocab = Vocab::new();
    for d in 0..dims {
        vocab.intern(&d.to_string());
    }
    let mut stats = SimStats::default();
    let mut sequences = Vec::with_capacity(spec.n_sequences);
    let width = spec.n_sequences.to_string().len().max(4);
    for si in 0..spec.n_sequences {
        let mut rng = substream(seed, &[purpose::SIMULATE, si as u64]);
        match simulate_one(spec, &mut rng) {
            Some(events) if !events.is_empty() => {
                sequences.push(Sequence {
                    id: format!("seq-{si:0width$}"),
                    events: events
                        .into_iter()
                        .map(|(t, d)| Event {
                            mark: d as u32,
                            time: t,
                        })
                        .collect(),
                });
            }
            Some(_) => {} // empty draw: skip, keeps Dataset invariant
            None => stats.aborted_sequences += 1,
        }
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

fn simulate_one(spec: &HawkesSpec, rng: &mut impl Rng) -> Option<Vec<(f64, usize)>> {
    let dims = spec.dims();
    let mut history: Vec<(f64, usize)> = Vec::new();
    let mut per_dim = vec![0.0; dims];
    let mut t = 0.0;
    let mut candidates = 0usize;
    loop {
        let bound = spec.envelope_bound(&history, t);
        if bound <= 0.0 {
            break;
        }
        let u: f64 = rng.random();
        let wait = -(1.0 - u).ln() / bound;
        let cand = t + wait;
        if cand > spec.horizon {
            break;
        }
        candidates += 1;
        if candidates > MAX_CANDIDATES {
            return None;
        }
        let total = spec.total_intensity(&history, cand, &mut per_dim);
        debug_assert!(
            total <= bound * (1.0 + 1e-9),
            "envelope violated: {total} > {bound}"
        );
        let accept: f64 = rng.random();
        if accept * bound <= total {
            // Assign the dimension proportionally to its intensity share.
            let pick: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut dim = dims - 1;
            for (i, &p) in per_dim.iter().enumerate() {
                acc += p;
                if pick < acc {
                    dim = i;
                    break;
                }
            }
            history.push((cand, dim));
        }
        // Time advances on accept and reject alike; the envelope is
        // recomputed at the top of the loop either way.
        t = cand;
    }
    Some(history)
}

/// Record of which events were removed from each sequence, for exact replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionMask {
    pub target_fraction: f64,
    pub seed: u64,
    /// Per sequence: (sequence id, sorted deleted event indices).
    pub deleted: Vec<(String, Vec<usize>)>,
}

/// Splits a dataset into an observed part and a held-out (deleted) part.
///
/// Each sequence draws its own deletion fraction from a normal distribution
/// centered on `fraction` (standard deviation `jitter_sd`, clipped to
/// `[0, 1)`), then deletes events independently. The first and last events
/// of every sequence are never deleted, so every held-out event lies
/// strictly inside an observed inter-event interval.
pub fn apply_deletion(
    d: &Dataset,
    fraction: f64,
    jitter_sd: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, DeletionMask)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "deletion fraction must lie in [0, 1), got {fraction}"
        )));
    }
    let mut mask = DeletionMask {
        target_fraction: fraction,
        seed,
        deleted: Vec::new(),
    };
    for (si, seq) in d.sequences.iter().enumerate() {
        let mut rng = substream(seed, &[purpose::DELETE, si as u64]);
        let f = if fraction == 0.0 {
            0.0
        } else {
            let u: f64 = rng.random_range(1e-12..1.0);
            (fraction + jitter_sd * crate::dist::normal_icdf(u)).clamp(0.0, 0.999)
        };
        let n = seq.events.len();
        let mut deleted = Vec::new();
        for idx in 0..n {
            if idx == 0 || idx + 1 == n {
                continue;
            }
            if rng.random::<f64>() < f {
                deleted.push(idx);
            }
        }
        mask.deleted.push((seq.id.clone(), deleted));
    }
    let (observed, heldout) = replay_deletion(d, &mask)?;
    Ok((observed, heldout, mask))
}

/// Deletes exactly `n_per_seq` interior events per sequence (fewer when the
/// sequence is too short), uniformly without replacement.
pub fn delete_exact(
    d: &Dataset,
    n_per_seq: usize,
    seed: u64,
) -> Result<(Dataset, Dataset, DeletionMask)> {
    let mut mask = DeletionMask {
        target_fraction: f64::NAN,
        seed,
        deleted: Vec::new(),
    };
    for (si, seq) in d.sequences.iter().enumerate() {
        let mut rng = substream(seed, &[purpose::DELETE, si as u64, 1]);
        let n = seq.events.len();
        let interior: Vec<usize> = (1..n.saturating_sub(1)).collect();
        let take = n_per_seq.min(interior.len());
        // Partial Fisher-Yates for a uniform sample without replacement.
        let mut pool = interior;
        for i in 0..take {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut deleted: Vec<usize> = pool[..take].to_vec();
        deleted.sort_unstable();
        mask.deleted.push((seq.id.clone(), deleted));
    }
    let (observed, heldout) = replay_deletion(d, &mask)?;
    Ok((observed, heldout, mask))
}

/// Applies a stored mask: the partition is exact and reproducible.
pub fn replay_deletion(d: &Dataset, mask: &DeletionMask) -> Result<(Dataset, Dataset)> {
    if mask.deleted.len() != d.sequences.len() {
        return Err(Error::Invalid(
            "mask sequence count does not match dataset".into(),
        ));
    }
    let mut obs_seqs = Vec::with_capacity(d.sequences.len());
    let mut held_seqs = Vec::with_capacity(d.sequences.len());
    for (seq, (id, deleted)) in d.sequences.iter().zip(&mask.deleted) {
        if &seq.id != id {
            return Err(Error::Invalid(format!(
                "mask sequence id {id} does not match dataset id {}",
                seq.id
            )));
        }
        let mut del_iter = deleted.iter().peekable();
        let mut obs = Vec::with_capacity(seq.events.len() - deleted.len());
        let mut held = Vec::with_capacity(deleted.len());
        for (idx, ev) in seq.events.iter().enumerate() {
            if del_iter.peek() == Some(&&idx) {
                held.push(*ev);
                del_iter.next();
            } else {
                obs.push(*ev);
            }
        }
        obs_seqs.push(Sequence {
            id: seq.id.clone(),
            events: obs,
        });
        held_seqs.push(Sequence {
            id: seq.id.clone(),
            events: held,
        });
    }
    Ok((
        Dataset {
            sequences: obs_seqs,
            vocab: d.vocab.clone(),
            time_scale: d.time_scale,
        },
        Dataset {
            sequences: held_seqs,
            vocab: d.vocab.clone(),
            time_scale: d.time_scale,
        },
    ))
}

pub fn write_mask(mask: &DeletionMask, path: &std::path::Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    use std::io::Write;
    serde_json::to_writer(&mut out, mask).map_err(|e| Error::Invalid(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_mask(path: &std::path::Path) -> Result<DeletionMask> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Invalid(e.to_string()))
}
