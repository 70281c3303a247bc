//! Variational training: objective assembly over interleaved observed and
//! latent events, minibatch SGD with gradient clipping, early stopping on
//! validation MAE, constrained fine-tuning with a fixed latent budget, the
//! two ablation variants, and the prior-scale sweep.
//!
//! The objective for one sequence sums, over every interval between
//! consecutive observed events: reparameterized latent draws from the
//! truncated posterior (each contributing a single-sample KL term against
//! the scaled prior), then the log-density of the next observed event under
//! the observed process. The first event of a sequence seeds the walk and is
//! not scored. Gradients flow through the latent times via the inverse-CDF
//! reparameterization. Long sequences are cut into truncated-backpropagation
//! windows; states cross window boundaries as values.

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{Dataset, Event, Split};
use crate::dist::floored_log_softmax;
use crate::error::{Error, Result};
use crate::eval::{PredictRule, Predictor};
use crate::model::missing::{
    advance_through_frozen, fill_interval_conditional, IntervalSpan, LatentEvent, MissingBuffer,
    MissingState,
};
use crate::model::params::{GradBuffer, ModelSpecs};
use crate::model::{ObservedCell, ParameterStore, PosteriorCell, PriorCell, ScalarIn, TimeHead};
use crate::rng::{purpose, substream};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::io::Write;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Max latent events per interval.
    pub cap: usize,
    /// Prior scale.
    pub mu_bar: f64,
    /// Truncated-backpropagation window, in scored events.
    pub bptt: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Early-stopping patience in epochs (0 disables).
    pub patience: usize,
    pub threads: usize,
    pub time_head: TimeHead,
    pub rule: PredictRule,
    /// Fraction of each training segment reserved for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-2,
            l2: 1e-3,
            batch_size: 64,
            epochs: 30,
            cap: 5,
            mu_bar: 1.0,
            bptt: 50,
            seed: 42,
            clip_norm: 5.0,
            patience: 10,
            threads: 1,
            time_head: TimeHead::LogNormal,
            rule: PredictRule::Mean,
            val_fraction: 0.1,
        }
    }
}

/// Which objective the optimizer ascends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainVariant {
    /// Observed log-likelihood minus latent KL (the full model).
    Full,
    /// Observed log-likelihood only; the latent machinery never runs.
    ObservedOnly,
}

/// Per-sequence objective decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboReport {
    pub reconstruction: f64,
    pub kl: f64,
    /// reconstruction - kl (maximized).
    pub total: f64,
    pub scored_events: usize,
    pub latent: MissingBuffer,
    pub cap_hits: usize,
}

enum Objective<'a> {
    Elbo { cap: usize },
    ObservedOnly,
    FrozenLatents(&'a [LatentEvent]),
}

/// One windowed pass over a sequence. With `grad` supplied, accumulates
/// `loss_scale * d(-objective)/d(params)` into the buffer.
fn sequence_pass(
    store: &ParameterStore,
    events: &[Event],
    objective: &Objective,
    bptt: usize,
    loss_scale: f64,
    rng: &mut ChaCha12Rng,
    mut grad: Option<&mut GradBuffer>,
) -> ElboReport {
    assert!(events.len() >= 2, "sequence_pass needs at least 2 events");
    assert!(bptt >= 1);
    let ds = store.specs.obs_hidden;
    let dm = store.specs.miss_hidden;
    let mut s_val = vec![0.0; ds];
    let mut m_val = vec![0.0; dm];
    let mut t_prev = 0.0f64;
    let mut tau_prev = 0.0f64;
    let mut prev_gap = 0.0f64;
    let mut recon_total = 0.0;
    let mut kl_total = 0.0;
    let mut buffer = MissingBuffer::default();
    let mut cap_hits = 0usize;
    let mut frozen_cursor = 0usize;
    let mut scored = 0usize;

    let targets = &events[1..];
    let mut cursor = 0usize; // index into targets
    let mut first_window = true;
    while cursor < targets.len() {
        let window = &targets[cursor..(cursor + bptt).min(targets.len())];
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let obs = ObservedCell::bind(&binding, store.specs.time_head);
        let post = PosteriorCell::bind(&binding);
        let prior = PriorCell::bind(&binding, store.specs.mu_bar);
        let mut s = tape.leaf(Tensor::vector(s_val.clone()));
        let mut miss = MissingState {
            m: tape.leaf(Tensor::vector(m_val.clone())),
            last_tau: ScalarIn::Const(tau_prev),
        };
        let mut recon: Option<Var> = None;
        let mut kl: Option<Var> = None;

        let fill = |tape: &mut Tape,
                    s: Var,
                    miss: &mut MissingState,
                    t_start: f64,
                    t_end: f64,
                    kl: &mut Option<Var>,
                    buffer: &mut MissingBuffer,
                    cap_hits: &mut usize,
                    frozen_cursor: &mut usize,
                    rng: &mut ChaCha12Rng| {
            match objective {
                Objective::Elbo { cap } => {
                    let out = fill_interval_conditional(
                        tape, &post, &prior, s, miss, t_start, t_end, *cap, rng,
                    );
                    if let Some(k) = out.kl {
                        *kl = Some(match *kl {
                            Some(acc) => tape.add(acc, k),
                            None => k,
                        });
                    }
                    *cap_hits += out.cap_hit as usize;
                    let lo = buffer.events.len();
                    buffer.events.extend(out.events);
                    buffer.intervals.push(IntervalSpan {
                        t_start,
                        t_end,
                        range: lo..buffer.events.len(),
                        cap_hit: out.cap_hit,
                    });
                }
                Objective::ObservedOnly => {}
                Objective::FrozenLatents(set) => {
                    while *frozen_cursor < set.len() && set[*frozen_cursor].time < t_end {
                        let e = &set[*frozen_cursor];
                        if e.time > t_start {
                            advance_through_frozen(tape, &post, miss, e.mark, e.time, t_start);
                        }
                        *frozen_cursor += 1;
                    }
                }
            }
        };

        if first_window {
            // Seed interval (0, t_1) plus the first event itself.
            fill(
                &mut tape,
                s,
                &mut miss,
                0.0,
                events[0].time,
                &mut kl,
                &mut buffer,
                &mut cap_hits,
                &mut frozen_cursor,
                rng,
            );
            let gap = events[0].time;
            let v = obs.embed(
                &mut tape,
                events[0].mark as usize,
                ScalarIn::Const(events[0].time),
                ScalarIn::Const(gap),
            );
            s = obs.update(&mut tape, s, v, ScalarIn::Const(gap));
            t_prev = events[0].time;
            prev_gap = gap;
            first_window = false;
        }

        for ev in window {
            fill(
                &mut tape,
                s,
                &mut miss,
                t_prev,
                ev.time,
                &mut kl,
                &mut buffer,
                &mut cap_hits,
                &mut frozen_cursor,
                rng,
            );
            let gap = ev.time - t_prev;
            let lp_time = match store.specs.time_head {
                TimeHead::LogNormal => {
                    let head = obs.emit_time(&mut tape, s, miss.m);
                    head.logpdf_const(&mut tape, gap)
                }
                TimeHead::Intensity => {
                    intensity_gap_loglik(&mut tape, &obs, s, miss.m, prev_gap, gap)
                }
            };
            let logits = obs.mark_logits(&mut tape, s, miss.m);
            let lp_all = floored_log_softmax(&mut tape, logits);
            let lp_mark = tape.index(lp_all, ev.mark as usize);
            let lp = tape.add(lp_time, lp_mark);
            recon = Some(match recon {
                Some(acc) => tape.add(acc, lp),
                None => lp,
            });
            scored += 1;

            let v = obs.embed(
                &mut tape,
                ev.mark as usize,
                ScalarIn::Const(ev.time),
                ScalarIn::Const(gap),
            );
            s = obs.update(&mut tape, s, v, ScalarIn::Const(gap));
            t_prev = ev.time;
            prev_gap = gap;
        }

        let recon_var = recon.expect("window scored at least one event");
        let objective_var = match kl {
            Some(k) => tape.sub(recon_var, k),
            None => recon_var,
        };
        recon_total += tape.scalar_value(recon_var);
        kl_total += kl.map(|k| tape.scalar_value(k)).unwrap_or(0.0);

        if let Some(buf) = grad.as_deref_mut() {
            let loss = tape.neg(objective_var);
            let grads = tape.backward(loss);
            store.add_to_buffer(buf, &binding, &grads, loss_scale);
        }

        // Detach states for the next window.
        s_val.copy_from_slice(&tape.value(s).data);
        m_val.copy_from_slice(&tape.value(miss.m).data);
        tau_prev = match miss.last_tau {
            ScalarIn::Const(c) => c,
            ScalarIn::Node(v) => tape.scalar_value(v),
        };
        cursor += window.len();
    }

    ElboReport {
        reconstruction: recon_total,
        kl: kl_total,
        total: recon_total - kl_total,
        scored_events: scored,
        latent: buffer,
        cap_hits,
    }
}

/// Gap log-density of the intensity-head variant: the rate
/// `lambda = exp(w_s s + w_m m + w_gap prev_gap + b)` is constant until the
/// next event, so `log p(gap) = log lambda - lambda * gap`.
pub(crate) fn intensity_gap_loglik(
    tape: &mut Tape,
    obs: &ObservedCell,
    s: Var,
    m: Var,
    prev_gap: f64,
    gap: f64,
) -> Var {
    let log_rate = obs.emit_log_rate(tape, s, m, ScalarIn::Const(prev_gap));
    let rate = tape.exp(log_rate);
    let survival = tape.scale_const(rate, gap);
    tape.sub(log_rate, survival)
}

/// Variational objective for one sequence, optionally accumulating
/// gradients of its negation.
pub fn elbo(
    store: &ParameterStore,
    events: &[Event],
    cap: usize,
    bptt: usize,
    rng: &mut ChaCha12Rng,
    grad: Option<&mut GradBuffer>,
) -> Result<ElboReport> {
    if events.len() < 2 {
        return Err(Error::Invalid("sequence shorter than 2 events".into()));
    }
    Ok(sequence_pass(
        store,
        events,
        &Objective::Elbo { cap },
        bptt,
        1.0,
        rng,
        grad,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    pub wall_seconds: f64,
    pub val_mae: f64,
    pub val_mpa: f64,
    pub skipped_steps: usize,
}

pub struct TrainOutcome {
    /// Best store by validation MAE (the last one when no validation
    /// events exist).
    pub best: ParameterStore,
    pub last: ParameterStore,
    pub log: Vec<EpochLog>,
    pub diverged: bool,
    pub best_epoch: usize,
    pub skipped_short_sequences: usize,
}

/// Per-sequence end of the optimization region: the training segment minus
/// its validation tail.
fn fit_boundaries(dataset: &Dataset, split: &Split, val_fraction: f64) -> Vec<usize> {
    dataset
        .sequences
        .iter()
        .zip(&split.boundaries)
        .map(|(_, &k)| {
            let v = ((val_fraction * k as f64).ceil() as usize).min(k.saturating_sub(2));
            k - v
        })
        .collect()
}

/// Minibatch SGD on the chosen objective over the training region.
pub fn train(
    dataset: &Dataset,
    split: &Split,
    cfg: &TrainConfig,
    variant: TrainVariant,
) -> Result<TrainOutcome> {
    let specs = ModelSpecs {
        vocab: dataset.vocab.names().to_vec(),
        mu_bar: cfg.mu_bar,
        time_head: cfg.time_head,
        ..ModelSpecs::standard(vec![])
    };
    let store = ParameterStore::init(specs, cfg.seed);
    train_from(store, dataset, split, cfg, variant, None)
}

/// As [`train`], starting from an existing store; `frozen` switches the
/// objective to observed likelihood with the given per-sequence latent sets
/// (the constrained fine-tuning stage).
pub fn train_from(
    mut store: ParameterStore,
    dataset: &Dataset,
    split: &Split,
    cfg: &TrainConfig,
    variant: TrainVariant,
    frozen: Option<&[Vec<LatentEvent>]>,
) -> Result<TrainOutcome> {
    let fit_end = fit_boundaries(dataset, split, cfg.val_fraction);
    let usable: Vec<usize> = (0..dataset.sequences.len())
        .filter(|&i| fit_end[i] >= 2)
        .collect();
    let skipped_short_sequences = dataset.sequences.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::Invalid(
            "no trainable sequences (all shorter than 2)".into(),
        ));
    }

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    let mut last_good = store_snapshot(&store);
    let mut diverged = false;
    let threads = cfg.threads.max(1);

    for epoch in 0..cfg.epochs {
        let started = std::time::Instant::now();
        let mut order = usable.clone();
        let mut shuffle_rng = substream(cfg.seed, &[purpose::SHUFFLE, epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_recon = 0.0;
        let mut epoch_kl = 0.0;
        let mut skipped_steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let run_slice = |sl: &[usize], buf: &mut GradBuffer| -> (f64, f64) {
                let mut recon = 0.0;
                let mut kl = 0.0;
                for &si in sl {
                    let events = &dataset.sequences[si].events[..fit_end[si]];
                    let mut rng =
                        substream(cfg.seed, &[purpose::TRAIN_NOISE, epoch as u64, si as u64]);
                    let objective = match (variant, frozen) {
                        (TrainVariant::ObservedOnly, _) => Objective::ObservedOnly,
                        (TrainVariant::Full, Some(sets)) => Objective::FrozenLatents(&sets[si]),
                        (TrainVariant::Full, None) => Objective::Elbo { cap: cfg.cap },
                    };
                    let rep = sequence_pass(
                        &store,
                        events,
                        &objective,
                        cfg.bptt,
                        scale,
                        &mut rng,
                        Some(buf),
                    );
                    recon += rep.reconstruction;
                    kl += rep.kl;
                }
                (recon, kl)
            };
            let mut total = store.grad_buffer();
            let (r, k) = if threads <= 1 || chunk.len() == 1 {
                run_slice(chunk, &mut total)
            } else {
                let per = chunk.len().div_ceil(threads);
                let pieces: Vec<&[usize]> = chunk.chunks(per).collect();
                let results: Vec<(GradBuffer, f64, f64)> = std::thread::scope(|scope| {
                    let handles: Vec<_> = pieces
                        .iter()
                        .map(|sl| {
                            let run = &run_slice;
                            let store_ref = &store;
                            scope.spawn(move || {
                                let mut buf = store_ref.grad_buffer();
                                let (r, k) = run(sl, &mut buf);
                                (buf, r, k)
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("worker panicked"))
                        .collect()
                });
                let mut r = 0.0;
                let mut k = 0.0;
                for (buf, br, bk) in &results {
                    total.add(buf);
                    r += br;
                    k += bk;
                }
                (r, k)
            };
            epoch_recon += r;
            epoch_kl += k;
            store.load_grads(&total);
            let norm = store.grad_norm();
            if norm.is_finite() && norm > cfg.clip_norm {
                store.scale_grads(cfg.clip_norm / norm);
            }
            let outcome = store.sgd_step(cfg.lr, cfg.l2);
            skipped_steps += !outcome.applied as usize;
        }

        let epoch_elbo = epoch_recon - epoch_kl;
        if !epoch_elbo.is_finite() {
            diverged = true;
            store = last_good;
            let wall = started.elapsed().as_secs_f64();
            log.push(EpochLog {
                epoch,
                elbo: epoch_elbo,
                recon: epoch_recon,
                kl: epoch_kl,
                wall_seconds: wall,
                val_mae: f64::NAN,
                val_mpa: f64::NAN,
                skipped_steps,
            });
            break;
        }
        last_good = store_snapshot(&store);

        let (val_mae, val_mpa) = validation_metrics(&store, dataset, split, &fit_end, cfg);
        let wall = started.elapsed().as_secs_f64();
        log.push(EpochLog {
            epoch,
            elbo: epoch_elbo,
            recon: epoch_recon,
            kl: epoch_kl,
            wall_seconds: wall,
            val_mae,
            val_mpa,
            skipped_steps,
        });

        let improved = match &best {
            None => true,
            Some((mae, _, _)) => val_mae.is_finite() && val_mae < *mae,
        };
        if improved {
            best = Some((val_mae, epoch, store_snapshot(&store)));
        } else if cfg.patience > 0 {
            let since = epoch - best.as_ref().map(|(_, e, _)| *e).unwrap_or(0);
            if since >= cfg.patience {
                break;
            }
        }
    }

    let (best_epoch, best_store) = match best {
        Some((_, e, s)) => (e, s),
        None => (log.len().saturating_sub(1), store_snapshot(&store)),
    };
    Ok(TrainOutcome {
        best: best_store,
        last: store,
        log,
        diverged,
        best_epoch,
        skipped_short_sequences,
    })
}

fn store_snapshot(store: &ParameterStore) -> ParameterStore {
    let mut copy = ParameterStore::init(store.specs.clone(), 0);
    for name in store.names().map(|s| s.to_string()).collect::<Vec<_>>() {
        copy.get_mut(&name)
            .data
            .copy_from_slice(&store.get(&name).data);
    }
    copy
}

/// One-step validation metrics over each sequence's validation tail.
fn validation_metrics(
    store: &ParameterStore,
    dataset: &Dataset,
    split: &Split,
    fit_end: &[usize],
    cfg: &TrainConfig,
) -> (f64, f64) {
    let scale = dataset.time_scale;
    let mut abs = 0.0;
    let mut hits = 0usize;
    let mut count = 0usize;
    for (si, seq) in dataset.sequences.iter().enumerate() {
        let k = split.boundaries[si];
        if fit_end[si] >= k || fit_end[si] < 2 {
            continue;
        }
        let mut pred = Predictor::new(
            store,
            cfg.seed ^ purpose::VALIDATION,
            0,
            si,
            cfg.cap,
            cfg.rule,
        );
        for e in &seq.events[..fit_end[si]] {
            pred.observe(e);
        }
        for e in &seq.events[fit_end[si]..k] {
            let p = pred.peek();
            abs += (e.time - p.time).abs() * scale;
            hits += (p.mark == e.mark as usize) as usize;
            count += 1;
            pred.observe(e);
        }
    }
    if count == 0 {
        (f64::NAN, f64::NAN)
    } else {
        (abs / count as f64, hits as f64 / count as f64)
    }
}

pub fn write_train_log_csv(log: &[EpochLog], path: &std::path::Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,elbo,recon,kl,wall_seconds,val_mae,val_mpa")?;
    for row in log {
        writeln!(
            out,
            "{},{:.9},{:.9},{:.9},{:.3},{:.9},{:.9}",
            row.epoch, row.elbo, row.recon, row.kl, row.wall_seconds, row.val_mae, row.val_mpa
        )?;
    }
    Ok(())
}

/// Outcome of the constrained fine-tuning procedure.
pub struct FinetuneOutcome {
    pub train: TrainOutcome,
    /// Latent events actually frozen, per sequence.
    pub frozen: Vec<Vec<LatentEvent>>,
    pub requested_budget: usize,
    /// Sequences whose posterior produced fewer latents than the budget.
    pub short_of_budget: usize,
}

/// Two-stage constrained procedure: (1) sample latents from the trained
/// posterior and keep, per sequence, the `budget` highest posterior
/// log-density events; (2) fine-tune on the observed log-likelihood with
/// that latent set frozen.
pub fn finetune_pp(
    pretrained: &ParameterStore,
    dataset: &Dataset,
    split: &Split,
    budget: usize,
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    let fit_end = fit_boundaries(dataset, split, cfg.val_fraction);
    let mut frozen: Vec<Vec<LatentEvent>> = Vec::with_capacity(dataset.sequences.len());
    let mut short_of_budget = 0usize;
    for (si, seq) in dataset.sequences.iter().enumerate() {
        if fit_end[si] < 2 {
            frozen.push(Vec::new());
            continue;
        }
        let mut rng = substream(cfg.seed, &[purpose::FINETUNE_SELECT, si as u64]);
        let rep = sequence_pass(
            pretrained,
            &seq.events[..fit_end[si]],
            &Objective::Elbo { cap: cfg.cap },
            cfg.bptt,
            1.0,
            &mut rng,
            None,
        );
        let mut events = rep.latent.events;
        if events.len() < budget {
            short_of_budget += 1;
        }
        events.sort_by(|a, b| b.log_q.partial_cmp(&a.log_q).unwrap());
        events.truncate(budget);
        events.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
        frozen.push(events);
    }
    let digest_before = frozen_digest(&frozen);
    let outcome = train_from(
        store_snapshot(pretrained),
        dataset,
        split,
        cfg,
        TrainVariant::Full,
        Some(&frozen),
    )?;
    assert_eq!(
        digest_before,
        frozen_digest(&frozen),
        "frozen latent set must not change during fine-tuning"
    );
    Ok(FinetuneOutcome {
        train: outcome,
        frozen,
        requested_budget: budget,
        short_of_budget,
    })
}

fn frozen_digest(sets: &[Vec<LatentEvent>]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for set in sets {
        for e in set {
            mix(&e.time.to_bits().to_le_bytes());
            mix(&(e.mark as u64).to_le_bytes());
            mix(&e.log_q.to_bits().to_le_bytes());
        }
        mix(&[0xfe]);
    }
    h
}

/// Trains the two ablation variants: the latent-free model (pure observed
/// likelihood) and the intensity-head model (exponential gap density in
/// place of the log-normal).
pub fn ablation_variants(
    dataset: &Dataset,
    split: &Split,
    cfg: &TrainConfig,
) -> Result<(TrainOutcome, TrainOutcome)> {
    let latent_free = train(dataset, split, cfg, TrainVariant::ObservedOnly)?;
    let mut intensity_cfg = cfg.clone();
    intensity_cfg.time_head = TimeHead::Intensity;
    let intensity = train(dataset, split, &intensity_cfg, TrainVariant::Full)?;
    Ok((latent_free, intensity))
}

/// One row of the prior-scale sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mu_bar: f64,
    pub val_mae: f64,
    pub val_mpa: f64,
    pub best: bool,
}

/// Trains once per prior scale and scores each on validation MAE.
pub fn sweep_mu(
    dataset: &Dataset,
    split: &Split,
    scales: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if scales.is_empty() {
        return Err(Error::Config("sweep list is empty".into()));
    }
    let mut rows = Vec::with_capacity(scales.len());
    for &mu_bar in scales {
        let mut c = cfg.clone();
        c.mu_bar = mu_bar;
        let outcome = train(dataset, split, &c, TrainVariant::Full)?;
        let best_row = &outcome.log[outcome.best_epoch.min(outcome.log.len() - 1)];
        rows.push(SweepRow {
            mu_bar,
            val_mae: best_row.val_mae,
            val_mpa: best_row.val_mpa,
            best: false,
        });
    }
    let best_idx = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.val_mae.partial_cmp(&b.1.val_mae).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    rows[best_idx].best = true;
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &std::path::Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "mu_bar,val_mae,val_mpa,best")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.9},{:.9},{}",
            r.mu_bar, r.val_mae, r.val_mpa, r.best as u8
        )?;
    }
    Ok(())
}
