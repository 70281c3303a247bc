//! Plain-text run configuration: `key = value` lines, `#` comments,
//! environment overrides via `MTPP_<KEY>` (uppercased, dots become
//! underscores).
//!
//! Recognized keys (defaults in parentheses):
//!
//! - training: `lr` (0.01), `l2` (0.001), `batch` (64), `epochs` (30),
//!   `cap` (5), `mu_bar` (1.0), `mu_bar_sweep` (0.1,0.5,1,2,5), `bptt` (50),
//!   `seed` (42), `clip_norm` (5.0), `patience` (10), `threads` (1),
//!   `n_bar` (4), `time_head` (`lognormal` | `intensity`),
//!   `predict_rule` (`mean` | `median`), `train_fraction` (0.8),
//!   `val_fraction` (0.1)
//! - evaluation: `runs` (3), `horizon` (10), `matching` (`order` |
//!   `hungarian`)
//! - simulator: `sim_sequences` (4000), `sim_horizon` (155.0),
//!   `base_rates` (0.1,0.2), `kernel.<i>.<j>` (`power_law a c p` |
//!   `exponential a b` | `exp_mixture a1 b1 a2 b2` | `sine scale horizon` |
//!   `zero`; defaults to the two-dimensional synthetic set),
//!   `delete_fraction` (0.0), `delete_jitter` (0.05), `delete_exact` (0)

use crate::error::{Error, Result};
use crate::eval::{EvalConfig, ImputeMatching, PredictRule};
use crate::hawkes::{synthetic_2d, HawkesSpec, KernelSpec};
use crate::model::TimeHead;
use crate::train::TrainConfig;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pairs: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: format!("expected `key = value`, got {raw:?}"),
            })?;
            pairs.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(RunConfig { pairs })
    }

    /// Applies `MTPP_*` environment overrides: `lr` reads `MTPP_LR`,
    /// `kernel.1.1` reads `MTPP_KERNEL_1_1`.
    pub fn apply_env(&mut self) {
        for (key, value) in std::env::vars() {
            if let Some(rest) = key.strip_prefix("MTPP_") {
                let k = rest.to_lowercase().replace('_', ".");
                // Dotted keys only exist for kernels; everything else uses
                // plain names, so try the underscore form first.
                let plain = rest.to_lowercase();
                if self.known_or_plain(&plain) {
                    self.pairs.insert(plain, value);
                } else {
                    self.pairs.insert(k, value);
                }
            }
        }
    }

    fn known_or_plain(&self, key: &str) -> bool {
        !key.starts_with("kernel.") && !key.contains('.')
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.pairs.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.get(key).map(|s| s.as_str())
    }

    /// Sorted `key = value` rendering used for config hashing.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.pairs {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    fn f64_key(&self, key: &str, default: f64) -> Result<f64> {
        match self.pairs.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}"))),
        }
    }

    fn usize_key(&self, key: &str, default: usize) -> Result<usize> {
        match self.pairs.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}"))),
        }
    }

    fn u64_key(&self, key: &str, default: u64) -> Result<u64> {
        match self.pairs.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}"))),
        }
    }

    fn f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.pairs.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        Error::Config(format!("{key}: expected comma-separated numbers"))
                    })
                })
                .collect(),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.u64_key("seed", 42)
    }

    pub fn threads(&self) -> Result<usize> {
        self.usize_key("threads", 1)
    }

    pub fn train_fraction(&self) -> Result<f64> {
        self.f64_key("train_fraction", 0.8)
    }

    pub fn n_bar(&self) -> Result<usize> {
        self.usize_key("n_bar", 4)
    }

    pub fn horizon(&self) -> Result<usize> {
        self.usize_key("horizon", 10)
    }

    pub fn time_head(&self) -> Result<TimeHead> {
        match self.pairs.get("time_head").map(|s| s.as_str()) {
            None | Some("lognormal") => Ok(TimeHead::LogNormal),
            Some("intensity") => Ok(TimeHead::Intensity),
            Some(v) => Err(Error::Config(format!(
                "time_head: expected lognormal or intensity, got {v:?}"
            ))),
        }
    }

    pub fn predict_rule(&self) -> Result<PredictRule> {
        match self.pairs.get("predict_rule").map(|s| s.as_str()) {
            None | Some("mean") => Ok(PredictRule::Mean),
            Some("median") => Ok(PredictRule::Median),
            Some(v) => Err(Error::Config(format!(
                "predict_rule: expected mean or median, got {v:?}"
            ))),
        }
    }

    pub fn matching(&self) -> Result<ImputeMatching> {
        match self.pairs.get("matching").map(|s| s.as_str()) {
            None | Some("order") => Ok(ImputeMatching::ByOrder),
            Some("hungarian") => Ok(ImputeMatching::Hungarian),
            Some(v) => Err(Error::Config(format!(
                "matching: expected order or hungarian, got {v:?}"
            ))),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            lr: self.f64_key("lr", 1e-2)?,
            l2: self.f64_key("l2", 1e-3)?,
            batch_size: self.usize_key("batch", 64)?,
            epochs: self.usize_key("epochs", 30)?,
            cap: self.usize_key("cap", 5)?,
            mu_bar: self.f64_key("mu_bar", 1.0)?,
            bptt: self.usize_key("bptt", 50)?,
            seed: self.seed()?,
            clip_norm: self.f64_key("clip_norm", 5.0)?,
            patience: self.usize_key("patience", 10)?,
            threads: self.threads()?,
            time_head: self.time_head()?,
            rule: self.predict_rule()?,
            val_fraction: self.f64_key("val_fraction", 0.1)?,
        })
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        Ok(EvalConfig {
            seed: self.seed()?,
            runs: self.usize_key("runs", 3)?,
            cap: self.usize_key("cap", 5)?,
            rule: self.predict_rule()?,
        })
    }

    pub fn mu_sweep(&self) -> Result<Vec<f64>> {
        self.f64_list("mu_bar_sweep", &[0.1, 0.5, 1.0, 2.0, 5.0])
    }

    pub fn delete_fraction(&self) -> Result<f64> {
        self.f64_key("delete_fraction", 0.0)
    }

    pub fn delete_jitter(&self) -> Result<f64> {
        self.f64_key("delete_jitter", 0.05)
    }

    pub fn delete_exact(&self) -> Result<usize> {
        self.usize_key("delete_exact", 0)
    }

    pub fn hawkes_spec(&self) -> Result<HawkesSpec> {
        let n_sequences = self.usize_key("sim_sequences", 4000)?;
        let horizon = self.f64_key("sim_horizon", crate::hawkes::SYNTHETIC_2D_HORIZON)?;
        let base_rates = self.f64_list("base_rates", &[0.1, 0.2])?;
        let dims = base_rates.len();
        let has_kernel_keys = self.pairs.keys().any(|k| k.starts_with("kernel."));
        if !has_kernel_keys && dims == 2 && base_rates == [0.1, 0.2] {
            let mut spec = synthetic_2d(n_sequences, horizon);
            spec.n_sequences = n_sequences;
            spec.horizon = horizon;
            return Ok(spec);
        }
        let mut kernels = vec![vec![KernelSpec::Zero; dims]; dims];
        for (key, value) in &self.pairs {
            let Some(rest) = key.strip_prefix("kernel.") else {
                continue;
            };
            let mut it = rest.split('.');
            let (i, j) = match (it.next(), it.next(), it.next()) {
                (Some(i), Some(j), None) => {
                    let i: usize = i.parse().map_err(|_| bad_kernel_key(key))?;
                    let j: usize = j.parse().map_err(|_| bad_kernel_key(key))?;
                    (i, j)
                }
                _ => return Err(bad_kernel_key(key)),
            };
            if i >= dims || j >= dims {
                return Err(Error::Config(format!(
                    "{key}: index out of range for {dims} dimensions"
                )));
            }
            kernels[i][j] = parse_kernel(key, value)?;
        }
        Ok(HawkesSpec {
            base_rates,
            kernels,
            horizon,
            n_sequences,
        })
    }
}

fn bad_kernel_key(key: &str) -> Error {
    Error::Config(format!("{key}: kernel keys look like kernel.<i>.<j>"))
}

fn parse_kernel(key: &str, value: &str) -> Result<KernelSpec> {
    let mut parts = value.split_whitespace();
    let kind = parts.next().unwrap_or("");
    let mut args: Vec<f64> = Vec::new();
    for p in parts {
        args.push(
            p.parse()
                .map_err(|_| Error::Config(format!("{key}: bad kernel argument {p:?}")))?,
        );
    }
    let expect = |n: usize| -> Result<()> {
        if args.len() == n {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{key}: kernel {kind} takes {n} arguments, got {}",
                args.len()
            )))
        }
    };
    match kind {
        "power_law" => {
            expect(3)?;
            Ok(KernelSpec::PowerLaw {
                a: args[0],
                c: args[1],
                p: args[2],
            })
        }
        "exponential" => {
            expect(2)?;
            Ok(KernelSpec::Exponential {
                a: args[0],
                b: args[1],
            })
        }
        "exp_mixture" => {
            expect(4)?;
            Ok(KernelSpec::ExpMixture {
                a1: args[0],
                b1: args[1],
                a2: args[2],
                b2: args[3],
            })
        }
        "sine" => {
            expect(2)?;
            Ok(KernelSpec::Sine {
                scale: args[0],
                horizon: args[1],
            })
        }
        "zero" => {
            expect(0)?;
            Ok(KernelSpec::Zero)
        }
        other => Err(Error::Config(format!(
            "{key}: unknown kernel kind {other:?}"
        ))),
    }
}
