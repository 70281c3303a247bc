//! Latent missing-event machinery: the posterior generator that fills each
//! inter-observation interval with truncated log-normal draws, and the
//! scaled prior the KL term compares it against.
//!
//! Interval semantics: within an interval `(t_k, t_{k+1})`, gaps are
//! measured from the previous latent event or from `t_k` for the first one.
//! The missing recurrent state persists across intervals within a sequence
//! and starts at zero. Sampling reproduces the overshoot stopping rule:
//! before every candidate, the interval closes with the probability that an
//! untruncated draw would land past `t_{k+1}`; accepted gaps then come from
//! the truncated inverse CDF, so they stay differentiable and never leave
//! the interval.

use crate::autodiff::{Tape, Var};
use crate::dist::{
    categorical_kl_on_tape, categorical_logpmf, categorical_sample, lognormal_logpdf_at_log_gap,
    truncated_logpdf_at_draw, truncated_sample_on_tape, LogNormalHead, MarkDistribution,
};
use crate::model::params::{Binding, ScalarIn};
use rand::Rng;

/// Posterior missing-event process (interval-truncated).
pub struct PosteriorCell {
    w_time_in: Var,
    mark_embed: Var,
    w_gap_in: Var,
    b_in: Var,
    w_state_state: Var,
    w_state_in: Var,
    w_state_gap: Var,
    b_state: Var,
    w_time_out_m: Var,
    w_time_out_s: Var,
    b_time_out: Var,
    w_mark_out_s: Var,
    w_mark_out_m: Var,
}

impl PosteriorCell {
    pub fn bind(binding: &Binding) -> Self {
        PosteriorCell {
            w_time_in: binding.var("post.w_time_in"),
            mark_embed: binding.var("post.mark_embed"),
            w_gap_in: binding.var("post.w_gap_in"),
            b_in: binding.var("post.b_in"),
            w_state_state: binding.var("post.w_state_state"),
            w_state_in: binding.var("post.w_state_in"),
            w_state_gap: binding.var("post.w_state_gap"),
            b_state: binding.var("post.b_state"),
            w_time_out_m: binding.var("post.w_time_out_m"),
            w_time_out_s: binding.var("post.w_time_out_s"),
            b_time_out: binding.var("post.b_time_out"),
            w_mark_out_s: binding.var("post.w_mark_out_s"),
            w_mark_out_m: binding.var("post.w_mark_out_m"),
        }
    }

    fn scaled(tape: &mut Tape, w: Var, x: ScalarIn) -> Var {
        match x {
            ScalarIn::Const(c) => tape.scale_const(w, c),
            ScalarIn::Node(v) => tape.scalar_mul(v, w),
        }
    }

    /// Input vector for a latent event at absolute time `tau` with gap from
    /// the previous latent event (or interval start).
    pub fn embed(&self, tape: &mut Tape, mark: usize, tau: ScalarIn, gap: ScalarIn) -> Var {
        let term_t = Self::scaled(tape, self.w_time_in, tau);
        let term_mark = tape.row(self.mark_embed, mark);
        let term_gap = Self::scaled(tape, self.w_gap_in, gap);
        let a = tape.add(term_t, term_mark);
        let b = tape.add(a, term_gap);
        tape.add(b, self.b_in)
    }

    pub fn update(&self, tape: &mut Tape, m_prev: Var, gamma: Var, gap: ScalarIn) -> Var {
        let rec = tape.matvec(self.w_state_state, m_prev);
        let inp = tape.matvec(self.w_state_in, gamma);
        let gap_term = Self::scaled(tape, self.w_state_gap, gap);
        let a = tape.add(rec, inp);
        let b = tape.add(a, gap_term);
        let c = tape.add(b, self.b_state);
        tape.tanh(c)
    }

    /// Untruncated head `[mu, sigma]` from the missing and observed states;
    /// the caller applies the interval truncation.
    pub fn emit_time(&self, tape: &mut Tape, m: Var, s: Var) -> LogNormalHead {
        let hm = tape.matvec(self.w_time_out_m, m);
        let hs = tape.matvec(self.w_time_out_s, s);
        let sum = tape.add(hm, hs);
        let raw = tape.add(sum, self.b_time_out);
        LogNormalHead::from_raw(tape, raw)
    }

    pub fn mark_logits(&self, tape: &mut Tape, m: Var, s: Var) -> Var {
        let ls = tape.matvec(self.w_mark_out_s, s);
        let lm = tape.matvec(self.w_mark_out_m, m);
        tape.add(ls, lm)
    }
}

/// Prior missing-event process. All raw linear outputs are multiplied by the
/// scale hyperparameter before the exp/softmax, so scale zero reduces to a
/// standard log-normal with uniform marks.
pub struct PriorCell {
    mu_bar: f64,
    w_time_out_m: Var,
    w_time_out_s: Var,
    b_time_out: Var,
    w_mark_out_s: Var,
    w_mark_out_m: Var,
}

impl PriorCell {
    pub fn bind(binding: &Binding, mu_bar: f64) -> Self {
        PriorCell {
            mu_bar,
            w_time_out_m: binding.var("prior.w_time_out_m"),
            w_time_out_s: binding.var("prior.w_time_out_s"),
            b_time_out: binding.var("prior.b_time_out"),
            w_mark_out_s: binding.var("prior.w_mark_out_s"),
            w_mark_out_m: binding.var("prior.w_mark_out_m"),
        }
    }

    pub fn emit_time(&self, tape: &mut Tape, m: Var, s: Var) -> LogNormalHead {
        let hm = tape.matvec(self.w_time_out_m, m);
        let hs = tape.matvec(self.w_time_out_s, s);
        let sum = tape.add(hm, hs);
        let raw = tape.add(sum, self.b_time_out);
        let raw = tape.scale_const(raw, self.mu_bar);
        LogNormalHead::from_raw(tape, raw)
    }

    pub fn mark_logits(&self, tape: &mut Tape, m: Var, s: Var) -> Var {
        let ls = tape.matvec(self.w_mark_out_s, s);
        let lm = tape.matvec(self.w_mark_out_m, m);
        let sum = tape.add(ls, lm);
        tape.scale_const(sum, self.mu_bar)
    }
}

/// One sampled latent event with its recorded densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentEvent {
    /// Absolute (normalized) time, strictly inside its interval.
    pub time: f64,
    pub mark: usize,
    /// Posterior log-density at the draw: truncated time term + mark term.
    pub log_q: f64,
    /// Prior log-density at the draw: untruncated time term + mark term.
    pub log_prior: f64,
}

/// Latent events of one interval `(t_start, t_end)` in a sequence walk.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSpan {
    pub t_start: f64,
    pub t_end: f64,
    /// Index range into the sequence-level latent event list. Empty range
    /// means no latent events in this interval.
    pub range: std::ops::Range<usize>,
    pub cap_hit: bool,
}

/// Sequence-level latent bookkeeping: all events in time order plus the
/// per-interval index spans.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MissingBuffer {
    pub events: Vec<LatentEvent>,
    pub intervals: Vec<IntervalSpan>,
}

impl MissingBuffer {
    pub fn events_in(&self, interval: usize) -> &[LatentEvent] {
        &self.events[self.intervals[interval].range.clone()]
    }
}

/// Mutable latent-state pack threaded through a sequence walk: the missing
/// state node and the time of the last latent event (a node when it was
/// sampled on this tape, a constant when carried across windows).
pub struct MissingState {
    pub m: Var,
    pub last_tau: ScalarIn,
}

/// Differentiable output of filling one interval during training.
pub struct IntervalFill {
    pub events: Vec<LatentEvent>,
    /// Sum of per-event single-sample KL terms, when any event was accepted.
    pub kl: Option<Var>,
    pub cap_hit: bool,
}

/// Fills `(t_start, t_end)` with latent events conditioned on the known next
/// observation time, recording per-event KL terms on the tape.
///
/// Draw order per candidate slot: stop uniform, gap uniform, mark uniform.
/// With `cap` exhausted or a zero-width interval, no randomness is consumed.
#[allow(clippy::too_many_arguments)]
pub fn fill_interval_conditional(
    tape: &mut Tape,
    post: &PosteriorCell,
    prior: &PriorCell,
    s: Var,
    state: &mut MissingState,
    t_start: f64,
    t_end: f64,
    cap: usize,
    rng: &mut impl Rng,
) -> IntervalFill {
    let mut events = Vec::new();
    let mut kl: Option<Var> = None;
    let mut cap_hit = false;
    let mut tau_prev = ScalarIn::Const(t_start);

    loop {
        if events.len() >= cap {
            cap_hit = cap > 0;
            break;
        }
        let width = t_end - tau_prev.value(tape);
        if width <= 0.0 {
            break;
        }
        let head = post.emit_time(tape, state.m, s);
        // Overshoot test: close the interval with the probability an
        // untruncated draw would land at or past t_end.
        let params = head.params(tape);
        let mass = crate::dist::normal_cdf((width.ln() - params.mu) / params.sigma);
        let u_stop: f64 = rng.random();
        if u_stop >= mass {
            break;
        }
        // Remaining width as a node so gradients reach earlier latent times.
        let upper = match tau_prev {
            ScalarIn::Const(c) => tape.scalar(t_end - c),
            ScalarIn::Node(v) => {
                let end = tape.scalar(t_end);
                tape.sub(end, v)
            }
        };
        let u_gap: f64 = rng.random();
        let Some(draw) = truncated_sample_on_tape(tape, &head, upper, u_gap) else {
            break;
        };
        let tau = match tau_prev {
            ScalarIn::Const(c) => tape.add_const(draw.gap, c),
            ScalarIn::Node(v) => tape.add(draw.gap, v),
        };
        let tau_val = tape.scalar_value(tau);
        // A collapsed head can draw a gap below the float resolution of the
        // interval start; the event would not be strictly inside, so the
        // interval closes instead.
        if tau_val <= tau_prev.value(tape) {
            break;
        }
        assert!(
            tau_val > t_start && tau_val < t_end,
            "latent event at {tau_val} escaped its interval ({t_start}, {t_end})"
        );

        // Mark from the posterior head.
        let q_logits = post.mark_logits(tape, state.m, s);
        let q_dist = MarkDistribution::from_logits(&tape.value(q_logits).data);
        let mark = categorical_sample(&q_dist, rng);

        // Prior heads use the same pre-update states.
        let prior_head = prior.emit_time(tape, state.m, s);
        let p_logits = prior.mark_logits(tape, state.m, s);
        let p_dist = MarkDistribution::from_logits(&tape.value(p_logits).data);

        // Single-sample KL: time term at the draw, mark term closed form.
        let log_q_time = truncated_logpdf_at_draw(tape, &head, &draw);
        let log_p_time = lognormal_logpdf_at_log_gap(tape, &prior_head, draw.log_gap);
        let kl_time = tape.sub(log_q_time, log_p_time);
        let kl_mark = categorical_kl_on_tape(tape, q_logits, p_logits);
        let kl_event = tape.add(kl_time, kl_mark);
        kl = Some(match kl {
            Some(acc) => tape.add(acc, kl_event),
            None => kl_event,
        });

        events.push(LatentEvent {
            time: tau_val,
            mark,
            log_q: tape.scalar_value(log_q_time) + categorical_logpmf(&q_dist, mark),
            log_prior: tape.scalar_value(log_p_time) + categorical_logpmf(&p_dist, mark),
        });

        // Advance the missing state through the accepted event.
        let gamma = post.embed(tape, mark, ScalarIn::Node(tau), ScalarIn::Node(draw.gap));
        state.m = post.update(tape, state.m, gamma, ScalarIn::Node(draw.gap));
        state.last_tau = ScalarIn::Node(tau);
        tau_prev = ScalarIn::Node(tau);
    }

    IntervalFill {
        events,
        kl,
        cap_hit,
    }
}

/// Fills an interval for prediction: the next observation is unknown, so
/// gaps come from the *untruncated* posterior head and the interval closes
/// when a draw overshoots the provisional bound.
#[allow(clippy::too_many_arguments)]
pub fn fill_interval_predictive(
    tape: &mut Tape,
    post: &PosteriorCell,
    s: Var,
    state: &mut MissingState,
    t_start: f64,
    t_bound: f64,
    cap: usize,
    rng: &mut impl Rng,
) -> Vec<LatentEvent> {
    let mut events = Vec::new();
    let mut tau_prev = t_start;
    loop {
        if events.len() >= cap || t_bound <= tau_prev {
            break;
        }
        let head = post.emit_time(tape, state.m, s);
        let params = head.params(tape);
        let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
        let z = crate::dist::normal_icdf(u);
        let gap = crate::dist::lognormal_sample_reparam(&params, z);
        let tau = tau_prev + gap;
        if tau >= t_bound || tau <= tau_prev {
            break;
        }
        let q_logits = post.mark_logits(tape, state.m, s);
        let q_dist = MarkDistribution::from_logits(&tape.value(q_logits).data);
        let mark = categorical_sample(&q_dist, rng);
        let log_q = crate::dist::lognormal_logpdf(gap, &params).expect("gap > 0")
            + categorical_logpmf(&q_dist, mark);
        events.push(LatentEvent {
            time: tau,
            mark,
            log_q,
            log_prior: f64::NAN,
        });

        let gamma = post.embed(tape, mark, ScalarIn::Const(tau), ScalarIn::Const(gap));
        state.m = post.update(tape, state.m, gamma, ScalarIn::Const(gap));
        state.last_tau = ScalarIn::Const(tau);
        tau_prev = tau;
    }
    events
}

/// Advances the missing state through an already-known latent event (used by
/// the constrained fine-tuning stage, where the latent set is frozen).
pub fn advance_through_frozen(
    tape: &mut Tape,
    post: &PosteriorCell,
    state: &mut MissingState,
    mark: usize,
    tau: f64,
    interval_start: f64,
) {
    let prev = match state.last_tau {
        ScalarIn::Const(c) => c.max(interval_start),
        ScalarIn::Node(v) => tape.scalar_value(v).max(interval_start),
    };
    let gap = (tau - prev).max(0.0);
    let gamma = post.embed(tape, mark, ScalarIn::Const(tau), ScalarIn::Const(gap));
    state.m = post.update(tape, state.m, gamma, ScalarIn::Const(gap));
    state.last_tau = ScalarIn::Const(tau);
}
