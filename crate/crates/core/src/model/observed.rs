//! Observed-event process: embeds each observed event, carries a recurrent
//! state, and emits the next inter-arrival density plus mark distribution
//! conditioned on both the observed and the missing state.
//!
//! Input layer: `v_k = w_t * t_k + embed(x_k) + w_gap * (t_k - t_{k-1}) + b`.
//! Recurrence:  `s_k = tanh(W_ss s_{k-1} + W_sv v_k + gap * w_s + b_s)`.
//! Time head:   `[mu, sigma_raw] = W_ts s_k + W_tm m + b_t`, sigma through
//! exp and clamp. Mark head: softmax of `U_s s_k + U_m m` (no dependence on
//! the emitted gap). The recurrent state starts at zero and the first
//! event's gap is its absolute time.

use crate::autodiff::{Tape, Var};
use crate::dist::LogNormalHead;
use crate::model::params::{Binding, ScalarIn, TimeHead};

/// Parameter handles for one tape pass.
pub struct ObservedCell {
    w_time_in: Var,
    mark_embed: Var,
    w_gap_in: Var,
    b_in: Var,
    w_state_state: Var,
    w_state_in: Var,
    w_state_gap: Var,
    b_state: Var,
    time_head: TimeHeadVars,
    w_mark_out_s: Var,
    w_mark_out_m: Var,
}

enum TimeHeadVars {
    LogNormal {
        w_s: Var,
        w_m: Var,
        b: Var,
    },
    Intensity {
        w_s: Var,
        w_m: Var,
        w_gap: Var,
        b: Var,
    },
}

impl ObservedCell {
    pub fn bind(binding: &Binding, time_head: TimeHead) -> Self {
        let th = match time_head {
            TimeHead::LogNormal => TimeHeadVars::LogNormal {
                w_s: binding.var("obs.w_time_out_s"),
                w_m: binding.var("obs.w_time_out_m"),
                b: binding.var("obs.b_time_out"),
            },
            TimeHead::Intensity => TimeHeadVars::Intensity {
                w_s: binding.var("obs.w_rate_s"),
                w_m: binding.var("obs.w_rate_m"),
                w_gap: binding.var("obs.w_rate_gap"),
                b: binding.var("obs.b_rate"),
            },
        };
        ObservedCell {
            w_time_in: binding.var("obs.w_time_in"),
            mark_embed: binding.var("obs.mark_embed"),
            w_gap_in: binding.var("obs.w_gap_in"),
            b_in: binding.var("obs.b_in"),
            w_state_state: binding.var("obs.w_state_state"),
            w_state_in: binding.var("obs.w_state_in"),
            w_state_gap: binding.var("obs.w_state_gap"),
            b_state: binding.var("obs.b_state"),
            time_head: th,
            w_mark_out_s: binding.var("obs.w_mark_out_s"),
            w_mark_out_m: binding.var("obs.w_mark_out_m"),
        }
    }

    fn scaled(tape: &mut Tape, w: Var, x: ScalarIn) -> Var {
        match x {
            ScalarIn::Const(c) => tape.scale_const(w, c),
            ScalarIn::Node(v) => tape.scalar_mul(v, w),
        }
    }

    /// Input vector for an event with mark `mark` at absolute time `t`,
    /// `gap = t - prev_time`.
    pub fn embed(&self, tape: &mut Tape, mark: usize, t: ScalarIn, gap: ScalarIn) -> Var {
        let term_t = Self::scaled(tape, self.w_time_in, t);
        let term_mark = tape.row(self.mark_embed, mark);
        let term_gap = Self::scaled(tape, self.w_gap_in, gap);
        let a = tape.add(term_t, term_mark);
        let b = tape.add(a, term_gap);
        tape.add(b, self.b_in)
    }

    /// Recurrent update; components of the result lie strictly in (-1, 1).
    pub fn update(&self, tape: &mut Tape, s_prev: Var, v: Var, gap: ScalarIn) -> Var {
        let rec = tape.matvec(self.w_state_state, s_prev);
        let inp = tape.matvec(self.w_state_in, v);
        let gap_term = Self::scaled(tape, self.w_state_gap, gap);
        let a = tape.add(rec, inp);
        let b = tape.add(a, gap_term);
        let c = tape.add(b, self.b_state);
        tape.tanh(c)
    }

    /// Log-normal head for the next gap; panics for the intensity variant.
    pub fn emit_time(&self, tape: &mut Tape, s: Var, m: Var) -> LogNormalHead {
        match &self.time_head {
            TimeHeadVars::LogNormal { w_s, w_m, b } => {
                let hs = tape.matvec(*w_s, s);
                let hm = tape.matvec(*w_m, m);
                let sum = tape.add(hs, hm);
                let raw = tape.add(sum, *b);
                LogNormalHead::from_raw(tape, raw)
            }
            TimeHeadVars::Intensity { .. } => {
                panic!("emit_time called on the intensity-head variant")
            }
        }
    }

    /// Log of the constant event rate for the intensity variant:
    /// `log lambda = w_s s + w_m m + w_gap * prev_gap + b`.
    pub fn emit_log_rate(&self, tape: &mut Tape, s: Var, m: Var, prev_gap: ScalarIn) -> Var {
        match &self.time_head {
            TimeHeadVars::Intensity { w_s, w_m, w_gap, b } => {
                let hs = tape.matvec(*w_s, s);
                let hs = tape.index(hs, 0);
                let hm = tape.matvec(*w_m, m);
                let hm = tape.index(hm, 0);
                let g = Self::scaled(tape, *w_gap, prev_gap);
                let a = tape.add(hs, hm);
                let b2 = tape.add(a, g);
                tape.add(b2, *b)
            }
            TimeHeadVars::LogNormal { .. } => {
                panic!("emit_log_rate called on the log-normal variant")
            }
        }
    }

    /// Mark logits over the vocabulary.
    pub fn mark_logits(&self, tape: &mut Tape, s: Var, m: Var) -> Var {
        let ls = tape.matvec(self.w_mark_out_s, s);
        let lm = tape.matvec(self.w_mark_out_m, m);
        tape.add(ls, lm)
    }
}
