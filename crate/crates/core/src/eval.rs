//! Evaluation harness: one-step prediction metrics, autoregressive
//! forecasting, imputation scoring, per-event drill-down, and the
//! Markov-chain mark baseline.
//!
//! One-step evaluation is teacher-forced: the true history is fed forward,
//! but each prediction is made before its target is revealed, so latent
//! events for the predicted interval come from the *untruncated* posterior
//! head bounded by the provisional predicted time (the conditional,
//! truncated fill would peek at the answer). After the prediction the true
//! event arrives and the interval's latent set is rebuilt conditionally for
//! the state that carries forward. Every random draw comes from a substream
//! keyed by (run, sequence, interval, purpose), which makes single-step
//! evaluation and the first step of a forecast rollout bit-identical.

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{Dataset, Event, Split};
use crate::dist::{lognormal_mean, lognormal_median, MarkDistribution};
use crate::error::{Error, Result};
use crate::model::missing::{
    fill_interval_conditional, fill_interval_predictive, IntervalSpan, LatentEvent, MissingBuffer,
    MissingState,
};
use crate::model::{ObservedCell, ParameterStore, PosteriorCell, PriorCell, ScalarIn, TimeHead};
use crate::rng::{purpose, substream};
use serde::Serialize;
use std::io::Write;

/// Gap-prediction rule: mean minimizes expected squared error; median
/// minimizes expected absolute error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictRule {
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalConfig {
    pub seed: u64,
    /// Independent latent-noise runs for confidence half-widths.
    pub runs: usize,
    pub cap: usize,
    pub rule: PredictRule,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 0,
            runs: 3,
            cap: 5,
            rule: PredictRule::Mean,
        }
    }
}

/// Aggregate metrics with per-run values and half-widths (max deviation
/// from the mean across runs).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub mae: f64,
    pub mpa: f64,
    pub n_events: usize,
    pub mae_runs: Vec<f64>,
    pub mpa_runs: Vec<f64>,
    pub mae_ci: f64,
    pub mpa_ci: f64,
}

impl MetricReport {
    fn from_runs(mae_runs: Vec<f64>, mpa_runs: Vec<f64>, n_events: usize) -> Self {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mae = mean(&mae_runs);
        let mpa = mean(&mpa_runs);
        let half = |v: &[f64], m: f64| v.iter().map(|x| (x - m).abs()).fold(0.0, f64::max);
        MetricReport {
            mae,
            mpa,
            n_events,
            mae_ci: half(&mae_runs, mae),
            mpa_ci: half(&mpa_runs, mpa),
            mae_runs,
            mpa_runs,
        }
    }
}

/// One prediction/outcome row of the long-form per-event report.
#[derive(Debug, Clone, PartialEq)]
pub struct PerEventRecord {
    pub run: usize,
    pub seq_id: String,
    pub event_idx: usize,
    /// Times in original units, relative to the sequence start.
    pub true_t: f64,
    pub pred_t: f64,
    pub abs_err: f64,
    pub true_m: String,
    pub pred_m: String,
    pub correct: bool,
}

/// Stateful teacher-forced walker over one sequence.
pub struct Predictor<'a> {
    store: &'a ParameterStore,
    tape: Tape,
    obs: ObservedCell,
    post: PosteriorCell,
    prior: PriorCell,
    s: Var,
    miss: MissingState,
    t_prev: f64,
    prev_gap: f64,
    /// Index of the next interval to fill (equals the index of the next
    /// event to observe).
    interval_idx: usize,
    run_tag: u64,
    seq_tag: u64,
    seed: u64,
    cap: usize,
    rule: PredictRule,
}

/// Snapshot of the walker state, for forecast rollouts that branch off the
/// teacher-forced trajectory.
#[derive(Clone, Copy)]
pub struct PredictorState {
    s: Var,
    m: Var,
    last_tau: ScalarIn,
    t_prev: f64,
    prev_gap: f64,
    interval_idx: usize,
}

/// A committed prediction step.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Normalized absolute time of the predicted event.
    pub time: f64,
    pub mark: usize,
    pub latents: Vec<LatentEvent>,
}

impl<'a> Predictor<'a> {
    pub fn new(
        store: &'a ParameterStore,
        seed: u64,
        run: usize,
        seq_index: usize,
        cap: usize,
        rule: PredictRule,
    ) -> Self {
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let obs = ObservedCell::bind(&binding, store.specs.time_head);
        let post = PosteriorCell::bind(&binding);
        let prior = PriorCell::bind(&binding, store.specs.mu_bar);
        let s = tape.leaf(Tensor::vector(vec![0.0; store.specs.obs_hidden]));
        let m = tape.leaf(Tensor::vector(vec![0.0; store.specs.miss_hidden]));
        Predictor {
            store,
            tape,
            obs,
            post,
            prior,
            s,
            miss: MissingState {
                m,
                last_tau: ScalarIn::Const(0.0),
            },
            t_prev: 0.0,
            prev_gap: 0.0,
            interval_idx: 0,
            run_tag: run as u64,
            seq_tag: seq_index as u64,
            seed,
            cap,
            rule,
        }
    }

    fn stream(&self, kind: u64, interval: u64) -> rand_chacha::ChaCha12Rng {
        substream(self.seed, &[kind, self.run_tag, self.seq_tag, interval])
    }

    /// Expected gap under the current heads and prediction rule.
    fn gap_estimate(&mut self, s: Var, m: Var) -> f64 {
        match self.store.specs.time_head {
            TimeHead::LogNormal => {
                let head = self.obs.emit_time(&mut self.tape, s, m);
                let p = head.params(&self.tape);
                match self.rule {
                    PredictRule::Mean => lognormal_mean(&p),
                    PredictRule::Median => lognormal_median(&p),
                }
            }
            TimeHead::Intensity => {
                let log_rate =
                    self.obs
                        .emit_log_rate(&mut self.tape, s, m, ScalarIn::Const(self.prev_gap));
                let lambda = self.tape.scalar_value(log_rate).exp();
                // Exponential gap: mean 1/lambda, median ln(2)/lambda.
                match self.rule {
                    PredictRule::Mean => 1.0 / lambda,
                    PredictRule::Median => std::f64::consts::LN_2 / lambda,
                }
            }
        }
    }

    fn mark_estimate(&mut self, s: Var, m: Var) -> usize {
        let logits = self.obs.mark_logits(&mut self.tape, s, m);
        MarkDistribution::from_logits(&self.tape.value(logits).data).argmax()
    }

    pub fn state(&self) -> PredictorState {
        PredictorState {
            s: self.s,
            m: self.miss.m,
            last_tau: self.miss.last_tau,
            t_prev: self.t_prev,
            prev_gap: self.prev_gap,
            interval_idx: self.interval_idx,
        }
    }

    pub fn restore(&mut self, st: PredictorState) {
        self.s = st.s;
        self.miss.m = st.m;
        self.miss.last_tau = st.last_tau;
        self.t_prev = st.t_prev;
        self.prev_gap = st.prev_gap;
        self.interval_idx = st.interval_idx;
    }

    /// Predicts the next event from the committed states. The pending
    /// interval's latents are not involved: they would require the unknown
    /// next observation (conditional fill) or inject provisional-bound
    /// sampling noise, and the prediction must match the first step of an
    /// autoregressive rollout exactly.
    pub fn peek(&mut self) -> Prediction {
        let gap = self.gap_estimate(self.s, self.miss.m);
        let mark = self.mark_estimate(self.s, self.miss.m);
        Prediction {
            time: self.t_prev + gap,
            mark,
            latents: Vec::new(),
        }
    }

    /// Predicts the next event and commits it as if observed: latents for
    /// the predicted interval come from the untruncated posterior head
    /// (next observation unknown) bounded by the predicted time, then the
    /// predicted event advances the observed state (forecast rollouts).
    pub fn predict_commit(&mut self) -> Prediction {
        let p = self.peek();
        let mut rng = self.stream(purpose::LATENT_PREDICT, self.interval_idx as u64);
        let latents = fill_interval_predictive(
            &mut self.tape,
            &self.post,
            self.s,
            &mut self.miss,
            self.t_prev,
            p.time,
            self.cap,
            &mut rng,
        );
        self.advance_observed(p.mark, p.time);
        Prediction {
            time: p.time,
            mark: p.mark,
            latents,
        }
    }

    /// Consumes the true next event (teacher forcing): rebuilds the
    /// interval's latent set conditioned on the now-known endpoint, then
    /// advances the observed state. Returns the conditional latents.
    pub fn observe(&mut self, e: &Event) -> Vec<LatentEvent> {
        let mut rng = self.stream(purpose::LATENT_CONDITION, self.interval_idx as u64);
        let fill = fill_interval_conditional(
            &mut self.tape,
            &self.post,
            &self.prior,
            self.s,
            &mut self.miss,
            self.t_prev,
            e.time,
            self.cap,
            &mut rng,
        );
        self.advance_observed(e.mark as usize, e.time);
        fill.events
    }

    fn advance_observed(&mut self, mark: usize, time: f64) {
        let gap = (time - self.t_prev).max(0.0);
        let v = self.obs.embed(
            &mut self.tape,
            mark,
            ScalarIn::Const(time),
            ScalarIn::Const(gap),
        );
        self.s = self
            .obs
            .update(&mut self.tape, self.s, v, ScalarIn::Const(gap));
        self.t_prev = time;
        self.prev_gap = gap;
        self.interval_idx += 1;
    }

    /// Conditional latents for the interval ending at `t_end` without
    /// consuming an observed event (imputation over known interval pairs).
    pub fn fill_conditional_to(&mut self, t_end: f64) -> Vec<LatentEvent> {
        let mut rng = self.stream(purpose::LATENT_CONDITION, self.interval_idx as u64);
        let fill = fill_interval_conditional(
            &mut self.tape,
            &self.post,
            &self.prior,
            self.s,
            &mut self.miss,
            self.t_prev,
            t_end,
            self.cap,
            &mut rng,
        );
        fill.events
    }
}

/// One-step-ahead prediction over every test event, averaged over
/// `cfg.runs` independent latent-noise runs.
pub fn evaluate(
    store: &ParameterStore,
    dataset: &Dataset,
    split: &Split,
    cfg: &EvalConfig,
) -> Result<(MetricReport, Vec<PerEventRecord>)> {
    if split.n_test_events(dataset) == 0 {
        return Err(Error::Invalid("test view is empty".into()));
    }
    let scale = dataset.time_scale;
    let mut records = Vec::new();
    let mut mae_runs = Vec::with_capacity(cfg.runs);
    let mut mpa_runs = Vec::with_capacity(cfg.runs);
    let mut n_events = 0usize;
    for run in 0..cfg.runs {
        let mut abs_sum = 0.0;
        let mut correct = 0usize;
        let mut count = 0usize;
        for (si, seq) in dataset.sequences.iter().enumerate() {
            let k = split.boundaries[si];
            if k >= seq.events.len() {
                continue;
            }
            let mut pred = Predictor::new(store, cfg.seed, run, si, cfg.cap, cfg.rule);
            for e in &seq.events[..k] {
                pred.observe(e);
            }
            for (offset, e) in seq.events[k..].iter().enumerate() {
                let p = pred.peek();
                let err = (e.time - p.time).abs() * scale;
                abs_sum += err;
                let hit = p.mark == e.mark as usize;
                correct += hit as usize;
                count += 1;
                records.push(PerEventRecord {
                    run,
                    seq_id: seq.id.clone(),
                    event_idx: k + offset,
                    true_t: e.time * scale,
                    pred_t: p.time * scale,
                    abs_err: err,
                    true_m: dataset.vocab.name(e.mark).to_string(),
                    pred_m: dataset.vocab.name(p.mark as u32).to_string(),
                    correct: hit,
                });
                pred.observe(e);
            }
        }
        mae_runs.push(abs_sum / count as f64);
        mpa_runs.push(correct as f64 / count as f64);
        n_events = count;
    }
    Ok((
        MetricReport::from_runs(mae_runs, mpa_runs, n_events),
        records,
    ))
}

/// Per-step forecasting metrics over horizon `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastReport {
    pub horizon: usize,
    pub mae: Vec<f64>,
    pub mpa: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Autoregressive rollout of length `n` from every test position: predicted
/// events are fed back as inputs; step `j` is scored against the true
/// `j`-th-next event (rollouts truncate at the end of each sequence).
pub fn forecast(
    store: &ParameterStore,
    dataset: &Dataset,
    split: &Split,
    n: usize,
    cfg: &EvalConfig,
) -> Result<ForecastReport> {
    if n == 0 {
        return Err(Error::Config("forecast horizon must be at least 1".into()));
    }
    let scale = dataset.time_scale;
    let mut abs = vec![0.0; n];
    let mut hits = vec![0usize; n];
    let mut counts = vec![0usize; n];
    for (si, seq) in dataset.sequences.iter().enumerate() {
        let k = split.boundaries[si];
        if k >= seq.events.len() {
            continue;
        }
        let mut pred = Predictor::new(store, cfg.seed, 0, si, cfg.cap, cfg.rule);
        for e in &seq.events[..k] {
            pred.observe(e);
        }
        for i in k..seq.events.len() {
            // Branch a rollout off the teacher-forced trajectory.
            let snapshot = pred.state();
            for (step, target) in seq.events[i..].iter().take(n).enumerate() {
                let p = pred.predict_commit();
                abs[step] += (target.time - p.time).abs() * scale;
                hits[step] += (p.mark == target.mark as usize) as usize;
                counts[step] += 1;
            }
            pred.restore(snapshot);
            pred.observe(&seq.events[i]);
        }
    }
    let mae = abs
        .iter()
        .zip(&counts)
        .map(|(a, &c)| if c > 0 { a / c as f64 } else { f64::NAN })
        .collect();
    let mpa = hits
        .iter()
        .zip(&counts)
        .map(|(h, &c)| {
            if c > 0 {
                *h as f64 / c as f64
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(ForecastReport {
        horizon: n,
        mae,
        mpa,
        counts,
    })
}

/// How generated latents are matched to held-out events inside an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputeMatching {
    /// i-th generated latent pairs with i-th held-out event.
    ByOrder,
    /// Minimum-total-|time difference| assignment (exact, small intervals).
    Hungarian,
}

#[derive(Debug, Clone, Copy)]
pub struct ImputeConfig {
    pub eval: EvalConfig,
    pub matching: ImputeMatching,
    /// Keep only the top-k latents per sequence by posterior log-density.
    pub budget: Option<usize>,
}

/// Latent events of one observed interval, for dumps and inspection.
#[derive(Debug, Clone, Serialize)]
pub struct LatentDumpRecord {
    pub seq_id: String,
    /// Interval endpoints in original units (relative to sequence start).
    pub interval: [f64; 2],
    pub events: Vec<LatentDumpEvent>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatentDumpEvent {
    pub t: f64,
    pub m: String,
    pub logq: f64,
    pub logp_prior: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputeReport {
    pub metrics: MetricReport,
    /// Held-out events not matched by any generated latent.
    pub unmatched: usize,
    /// Held-out events outside every observed interval (skipped).
    pub outside_intervals: usize,
}

/// Scores posterior imputations against held-out events. Both datasets must
/// share the same normalization. Generated latents are grouped per observed
/// interval and matched to the held-out events inside it; unmatched
/// held-out events count as misses with the interval width as their error.
pub fn impute_eval(
    store: &ParameterStore,
    observed: &Dataset,
    heldout: &Dataset,
    cfg: &ImputeConfig,
) -> Result<(ImputeReport, Vec<LatentDumpRecord>)> {
    if observed.sequences.len() != heldout.sequences.len() {
        return Err(Error::Invalid(
            "observed/held-out sequence counts differ".into(),
        ));
    }
    let scale = observed.time_scale;
    let mut mae_runs = Vec::new();
    let mut mpa_runs = Vec::new();
    let mut n_events = 0usize;
    let mut unmatched_total = 0usize;
    let mut outside_total = 0usize;
    let mut dumps = Vec::new();
    for run in 0..cfg.eval.runs {
        let mut abs_sum = 0.0;
        let mut correct = 0usize;
        let mut count = 0usize;
        let mut unmatched = 0usize;
        let mut outside = 0usize;
        for (si, (oseq, hseq)) in observed
            .sequences
            .iter()
            .zip(&heldout.sequences)
            .enumerate()
        {
            if oseq.events.len() < 2 {
                outside += hseq.events.len();
                continue;
            }
            let mut pred =
                Predictor::new(store, cfg.eval.seed, run, si, cfg.eval.cap, cfg.eval.rule);
            pred.observe(&oseq.events[0]);
            // Collect latents per interval, then optionally budget-filter.
            let mut buffer = MissingBuffer::default();
            for w in oseq.events.windows(2) {
                let t_start = w[0].time;
                let t_end = w[1].time;
                let lo = buffer.events.len();
                let latents = pred.fill_conditional_to(t_end);
                buffer.events.extend(latents);
                buffer.intervals.push(IntervalSpan {
                    t_start,
                    t_end,
                    range: lo..buffer.events.len(),
                    cap_hit: false,
                });
                pred.advance_observed(w[1].mark as usize, w[1].time);
            }
            let kept: Vec<bool> = match cfg.budget {
                None => vec![true; buffer.events.len()],
                Some(b) => {
                    let mut idx: Vec<usize> = (0..buffer.events.len()).collect();
                    idx.sort_by(|&a, &b2| {
                        buffer.events[b2]
                            .log_q
                            .partial_cmp(&buffer.events[a].log_q)
                            .unwrap()
                    });
                    let mut keep = vec![false; buffer.events.len()];
                    for &i in idx.iter().take(b) {
                        keep[i] = true;
                    }
                    keep
                }
            };
            // Score held-out events interval by interval.
            let mut hiter = hseq.events.iter().peekable();
            // Held-out events before the first observed event.
            while let Some(h) = hiter.peek() {
                if h.time < oseq.events[0].time {
                    outside += 1;
                    hiter.next();
                } else {
                    break;
                }
            }
            for (iv, span) in buffer.intervals.iter().enumerate() {
                let gen: Vec<&LatentEvent> = buffer.intervals[iv]
                    .range
                    .clone()
                    .filter(|i| kept[*i])
                    .map(|i| &buffer.events[i])
                    .collect();
                let mut held: Vec<&Event> = Vec::new();
                while let Some(h) = hiter.peek() {
                    if h.time > span.t_start && h.time < span.t_end {
                        held.push(*h);
                        hiter.next();
                    } else {
                        break;
                    }
                }
                if held.is_empty() {
                    continue;
                }
                let width = span.t_end - span.t_start;
                let pairs = match_pairs(&gen, &held, cfg.matching);
                for (hi, h) in held.iter().enumerate() {
                    count += 1;
                    match pairs[hi] {
                        Some(gi) => {
                            abs_sum += (gen[gi].time - h.time).abs() * scale;
                            correct += (gen[gi].mark == h.mark as usize) as usize;
                        }
                        None => {
                            abs_sum += width * scale;
                            unmatched += 1;
                        }
                    }
                }
            }
            // Anything at or past the last observed event is outside.
            outside += hiter.count();
            if run == 0 {
                for span in &buffer.intervals {
                    let events: Vec<LatentDumpEvent> = span
                        .range
                        .clone()
                        .filter(|i| kept[*i])
                        .map(|i| {
                            let e = &buffer.events[i];
                            LatentDumpEvent {
                                t: e.time * scale,
                                m: observed.vocab.name(e.mark as u32).to_string(),
                                logq: e.log_q,
                                logp_prior: e.log_prior,
                            }
                        })
                        .collect();
                    dumps.push(LatentDumpRecord {
                        seq_id: oseq.id.clone(),
                        interval: [span.t_start * scale, span.t_end * scale],
                        events,
                    });
                }
            }
        }
        if count > 0 {
            mae_runs.push(abs_sum / count as f64);
            mpa_runs.push(correct as f64 / count as f64);
        } else {
            mae_runs.push(0.0);
            mpa_runs.push(0.0);
        }
        n_events = count;
        unmatched_total = unmatched;
        outside_total = outside;
    }
    Ok((
        ImputeReport {
            metrics: MetricReport::from_runs(mae_runs, mpa_runs, n_events),
            unmatched: unmatched_total,
            outside_intervals: outside_total,
        },
        dumps,
    ))
}

/// For each held-out event index, the index of its generated partner.
fn match_pairs(
    gen: &[&LatentEvent],
    held: &[&Event],
    matching: ImputeMatching,
) -> Vec<Option<usize>> {
    match matching {
        ImputeMatching::ByOrder => (0..held.len())
            .map(|i| if i < gen.len() { Some(i) } else { None })
            .collect(),
        ImputeMatching::Hungarian => min_cost_assignment(gen, held),
    }
}

/// Exact min-cost assignment on |time difference|. Both sides are sorted in
/// time, and for absolute-difference costs an optimal matching never
/// crosses, so an O(g*h) pair DP suffices. All of the smaller side gets
/// matched: a matched pair always costs less than an interval-width miss.
fn min_cost_assignment(gen: &[&LatentEvent], held: &[&Event]) -> Vec<Option<usize>> {
    let h = held.len();
    let g = gen.len();
    if g == 0 {
        return vec![None; h];
    }
    let m = g.min(h);
    let inf = f64::INFINITY;
    // dp[i][j]: min cost pairing within gen[..i] x held[..j] such that the
    // smaller of (i, j) is fully matched when it reaches its end.
    let mut dp = vec![vec![inf; h + 1]; g + 1];
    let mut take = vec![vec![false; h + 1]; g + 1];
    dp[0][0] = 0.0;
    for i in 0..=g {
        for j in 0..=h {
            let cur = dp[i][j];
            if cur == inf {
                continue;
            }
            if i < g && j < h {
                let c = cur + (gen[i].time - held[j].time).abs();
                if c < dp[i + 1][j + 1] {
                    dp[i + 1][j + 1] = c;
                    take[i + 1][j + 1] = true;
                }
            }
            if i < g && g > h {
                // Skipping a generated latent is free when gen is larger.
                if cur < dp[i + 1][j] {
                    dp[i + 1][j] = cur;
                    take[i + 1][j] = false;
                }
            }
            if j < h && h > g {
                // Skipping a held event leaves a miss (constant cost added
                // by the caller), allowed only when held is larger.
                if cur < dp[i][j + 1] {
                    dp[i][j + 1] = cur;
                    take[i][j + 1] = false;
                }
            }
        }
    }
    // Walk back from (g, h); count matched pairs must equal m.
    let mut out = vec![None; h];
    let (mut i, mut j) = (g, h);
    let mut pairs = 0usize;
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && take[i][j] {
            out[j - 1] = Some(i - 1);
            i -= 1;
            j -= 1;
            pairs += 1;
        } else if i > 0 && g > h {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    debug_assert_eq!(pairs, m, "assignment must match the smaller side fully");
    out
}

/// Per-event gain of model A over model B: AE(B) - AE(A), sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct DrilldownRow {
    pub seq_id: String,
    pub event_idx: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrilldownReport {
    pub rows: Vec<DrilldownRow>,
    pub positive_fraction: f64,
    pub total_gain: f64,
}

/// Compares two per-event tables (run 0 rows) over an identical test view.
pub fn drilldown(a: &[PerEventRecord], b: &[PerEventRecord]) -> Result<DrilldownReport> {
    let a0: Vec<&PerEventRecord> = a.iter().filter(|r| r.run == 0).collect();
    let b0: Vec<&PerEventRecord> = b.iter().filter(|r| r.run == 0).collect();
    if a0.len() != b0.len() {
        return Err(Error::Invalid(
            "per-event tables cover different event sets".into(),
        ));
    }
    let mut rows = Vec::with_capacity(a0.len());
    for (ra, rb) in a0.iter().zip(&b0) {
        if ra.seq_id != rb.seq_id || ra.event_idx != rb.event_idx {
            return Err(Error::Invalid(
                "per-event tables cover different event sets".into(),
            ));
        }
        rows.push(DrilldownRow {
            seq_id: ra.seq_id.clone(),
            event_idx: ra.event_idx,
            gain: rb.abs_err - ra.abs_err,
        });
    }
    rows.sort_by(|x, y| y.gain.partial_cmp(&x.gain).unwrap());
    let positive = rows.iter().filter(|r| r.gain > 0.0).count();
    let total: f64 = rows.iter().map(|r| r.gain).sum();
    let n = rows.len().max(1);
    Ok(DrilldownReport {
        rows,
        positive_fraction: positive as f64 / n as f64,
        total_gain: total,
    })
}

/// Markov-chain mark baseline with add-one smoothing and backoff.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovReport {
    /// Test MPA per order (index 0 = order 1).
    pub test_mpa: Vec<f64>,
    /// Validation MPA per order.
    pub val_mpa: Vec<f64>,
    pub best_order: usize,
    pub n_test_events: usize,
}

struct MarkovModel {
    order: usize,
    n_marks: usize,
    /// Count tables per order 0..=order; key = context marks, value =
    /// next-mark counts.
    tables: Vec<std::collections::HashMap<Vec<u32>, Vec<u64>>>,
}

impl MarkovModel {
    fn fit(sequences: &[&[Event]], order: usize, n_marks: usize) -> Self {
        let mut tables = vec![std::collections::HashMap::new(); order + 1];
        for seq in sequences {
            for i in 0..seq.len() {
                for o in 0..=order.min(i) {
                    let ctx: Vec<u32> = seq[i - o..i].iter().map(|e| e.mark).collect();
                    let counts = tables[o].entry(ctx).or_insert_with(|| vec![0u64; n_marks]);
                    counts[seq[i].mark as usize] += 1;
                }
            }
        }
        MarkovModel {
            order,
            n_marks,
            tables,
        }
    }

    /// Argmax next mark under the smoothed table; unseen contexts back off
    /// to the next-lower order, ultimately the marginal frequency table.
    /// Ties break to the lowest mark id.
    fn predict(&self, history: &[u32]) -> u32 {
        let mut best = 0u32;
        let mut best_p = f64::NEG_INFINITY;
        for mark in 0..self.n_marks as u32 {
            let p = self.smoothed_prob(history, mark);
            if p > best_p {
                best_p = p;
                best = mark;
            }
        }
        best
    }

    /// Add-one-smoothed next-mark probability at the deepest order whose
    /// context was observed.
    fn smoothed_prob(&self, history: &[u32], next: u32) -> f64 {
        for o in (0..=self.order.min(history.len())).rev() {
            let ctx = history[history.len() - o..].to_vec();
            if let Some(counts) = self.tables[o].get(&ctx) {
                let total: u64 = counts.iter().sum();
                return (counts[next as usize] as f64 + 1.0) / (total as f64 + self.n_marks as f64);
            }
        }
        1.0 / self.n_marks as f64
    }
}

/// Fits orders 1..=max_order on the training region (minus the validation
/// tail), picks the best order on validation MPA, reports test MPA for all.
pub fn markov_baseline(
    dataset: &Dataset,
    split: &Split,
    max_order: usize,
    val_fraction: f64,
) -> Result<MarkovReport> {
    let n_marks = dataset.vocab.len();
    let mut fit_views: Vec<&[Event]> = Vec::new();
    let mut val_views: Vec<(usize, usize)> = Vec::new(); // (seq, val_start)
    for (si, seq) in dataset.sequences.iter().enumerate() {
        let k = split.boundaries[si];
        let v = ((val_fraction * k as f64).ceil() as usize).min(k.saturating_sub(2));
        let fit_end = k - v;
        fit_views.push(&seq.events[..fit_end]);
        if v > 0 {
            val_views.push((si, fit_end));
        }
    }
    let mut test_mpa = Vec::new();
    let mut val_mpa = Vec::new();
    let mut n_test_events = 0usize;
    for order in 1..=max_order {
        let model = MarkovModel::fit(&fit_views, order, n_marks);
        // Validation accuracy.
        let mut v_hits = 0usize;
        let mut v_count = 0usize;
        for &(si, start) in &val_views {
            let seq = &dataset.sequences[si];
            let k = split.boundaries[si];
            let marks: Vec<u32> = seq.events.iter().map(|e| e.mark).collect();
            for i in start..k {
                v_hits += (model.predict(&marks[..i]) == marks[i]) as usize;
                v_count += 1;
            }
        }
        val_mpa.push(if v_count > 0 {
            v_hits as f64 / v_count as f64
        } else {
            0.0
        });
        // Test accuracy.
        let mut hits = 0usize;
        let mut count = 0usize;
        for (si, seq) in dataset.sequences.iter().enumerate() {
            let k = split.boundaries[si];
            let marks: Vec<u32> = seq.events.iter().map(|e| e.mark).collect();
            for i in k..seq.events.len() {
                hits += (model.predict(&marks[..i]) == marks[i]) as usize;
                count += 1;
            }
        }
        test_mpa.push(if count > 0 {
            hits as f64 / count as f64
        } else {
            0.0
        });
        n_test_events = count;
    }
    let best_order = val_mpa
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i + 1)
        .unwrap_or(1);
    Ok(MarkovReport {
        test_mpa,
        val_mpa,
        best_order,
        n_test_events,
    })
}

// ---------------------------------------------------------------------------
// CSV report writers
// ---------------------------------------------------------------------------

pub fn write_summary_csv(report: &MetricReport, path: &std::path::Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "metric,value,ci")?;
    writeln!(out, "mae,{:.12},{:.12}", report.mae, report.mae_ci)?;
    writeln!(out, "mpa,{:.12},{:.12}", report.mpa, report.mpa_ci)?;
    writeln!(out, "n_events,{},0", report.n_events)?;
    for (r, (mae, mpa)) in report.mae_runs.iter().zip(&report.mpa_runs).enumerate() {
        writeln!(out, "mae_run{r},{mae:.12},0")?;
        writeln!(out, "mpa_run{r},{mpa:.12},0")?;
    }
    Ok(())
}

/// Writes the long-form table for one run.
pub fn write_per_event_csv(
    records: &[PerEventRecord],
    run: usize,
    path: &std::path::Path,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "seq_id,event_idx,true_t,pred_t,abs_err,true_m,pred_m,correct"
    )?;
    for r in records.iter().filter(|r| r.run == run) {
        writeln!(
            out,
            "{},{},{:.12},{:.12},{:.12},{},{},{}",
            r.seq_id,
            r.event_idx,
            r.true_t,
            r.pred_t,
            r.abs_err,
            r.true_m,
            r.pred_m,
            r.correct as u8
        )?;
    }
    Ok(())
}

pub fn write_forecast_csv(report: &ForecastReport, path: &std::path::Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "step,mae,mpa,n")?;
    for i in 0..report.horizon {
        writeln!(
            out,
            "{},{:.12},{:.12},{}",
            i + 1,
            report.mae[i],
            report.mpa[i],
            report.counts[i]
        )?;
    }
    Ok(())
}

pub fn write_drilldown_csv(report: &DrilldownReport, path: &std::path::Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "rank,seq_id,event_idx,gain")?;
    for (rank, row) in report.rows.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{:.12}",
            rank + 1,
            row.seq_id,
            row.event_idx,
            row.gain
        )?;
    }
    Ok(())
}

pub fn write_latent_dump(records: &[LatentDumpRecord], path: &std::path::Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Invalid(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
