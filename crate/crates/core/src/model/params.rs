//! Named parameter tensors, initialization, SGD updates, and checkpoints.
//!
//! Checkpoint format (single binary file, little endian):
//!
//! ```text
//! magic    8 bytes  "MTPPCKPT"
//! version  u32      currently 1
//! meta_len u32      length of the JSON metadata blob
//! meta     bytes    ModelSpecs as JSON (dims, vocab, prior scale, head kind)
//! count    u32      number of tensors
//! entry*   name_len u32, name bytes,
//!          kind u8 (0 = scalar, 1 = vector, 2 = matrix),
//!          dims (u32 per rank), values (f64 per element)
//! ```

use crate::autodiff::{Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"MTPPCKPT";
const VERSION: u32 = 1;

/// Which density the observed process uses for inter-arrival times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeHead {
    /// Log-normal gap density (the default model).
    LogNormal,
    /// Constant-until-next-event exponential intensity (ablation variant).
    Intensity,
}

/// Model dimensions and hyperparameters carried alongside the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpecs {
    pub input_dim: usize,
    pub gamma_dim: usize,
    pub obs_hidden: usize,
    pub miss_hidden: usize,
    pub vocab: Vec<String>,
    /// Scale applied to every prior tensor at use.
    pub mu_bar: f64,
    pub time_head: TimeHead,
}

impl ModelSpecs {
    /// Default dimensions: 16-dim event embeddings, 32-dim latent-event
    /// embeddings, 64-dim observed state, 128-dim missing state.
    pub fn standard(vocab: Vec<String>) -> Self {
        ModelSpecs {
            input_dim: 16,
            gamma_dim: 32,
            obs_hidden: 64,
            miss_hidden: 128,
            vocab,
            mu_bar: 1.0,
            time_head: TimeHead::LogNormal,
        }
    }

    pub fn n_marks(&self) -> usize {
        self.vocab.len()
    }
}

struct ParamEntry {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
}

/// All trainable weights, with one gradient slot per tensor.
pub struct ParameterStore {
    pub specs: ModelSpecs,
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

/// Scalar model input: either fixed data or a differentiable node (sampled
/// latent times flow gradients through here).
#[derive(Debug, Clone, Copy)]
pub enum ScalarIn {
    Const(f64),
    Node(Var),
}

impl ScalarIn {
    pub fn value(&self, tape: &Tape) -> f64 {
        match *self {
            ScalarIn::Const(c) => c,
            ScalarIn::Node(v) => tape.scalar_value(v),
        }
    }
}

/// Result of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    /// False when a non-finite gradient was found; the step was skipped and
    /// gradients cleared.
    pub applied: bool,
}

impl ParameterStore {
    /// Initializes every tensor uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
    /// with zero biases. For matrices fan-in is the input (column) count; for
    /// the mark embedding tables it is the vocabulary size (the table acts as
    /// a linear map from a one-hot mark); weights multiplying a scalar input
    /// use their output dimension.
    pub fn init(specs: ModelSpecs, seed: u64) -> Self {
        let mut store = ParameterStore {
            specs,
            entries: Vec::new(),
            index: HashMap::new(),
        };
        let mut rng = crate::rng::substream(seed, &[crate::rng::purpose::INIT]);
        let layout = layout(&store.specs);
        for decl in layout {
            let tensor = match decl.init {
                Init::Zero => Tensor::zeros(decl.shape),
                Init::Uniform(fan_in) => {
                    let b = 1.0 / (fan_in as f64).sqrt();
                    let data = (0..decl.shape.len())
                        .map(|_| rng.random_range(-b..b))
                        .collect();
                    Tensor {
                        shape: decl.shape,
                        data,
                    }
                }
            };
            store.push(decl.name, tensor);
        }
        store
    }

    fn push(&mut self, name: String, value: Tensor) {
        assert!(
            !self.index.contains_key(&name),
            "parameter {name} declared twice"
        );
        let grad = vec![0.0; value.shape.len()];
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, value, grad });
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.entries[i].value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.entries[i].value
    }

    pub fn grad(&self, name: &str) -> &[f64] {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.entries[i].grad
    }

    pub fn n_params(&self) -> usize {
        self.entries.iter().map(|e| e.value.data.len()).sum()
    }

    /// Puts every tensor on a tape as a leaf and returns the handle map.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let vars = self
            .entries
            .iter()
            .map(|e| tape.leaf(e.value.clone()))
            .collect();
        Binding {
            vars,
            names: self.index.clone(),
        }
    }

    /// Adds `scale` times the tape gradients of a binding's leaves into the
    /// persistent gradient slots.
    pub fn accumulate(
        &mut self,
        binding: &Binding,
        grads: &crate::autodiff::Gradients,
        scale: f64,
    ) {
        for (entry, &var) in self.entries.iter_mut().zip(&binding.vars) {
            for (g, &tg) in entry.grad.iter_mut().zip(grads.get(var)) {
                *g += scale * tg;
            }
        }
    }

    /// Detached gradient accumulator with this store's layout (workers own
    /// one each; buffers reduce in a fixed order).
    pub fn grad_buffer(&self) -> GradBuffer {
        GradBuffer {
            data: self
                .entries
                .iter()
                .map(|e| vec![0.0; e.grad.len()])
                .collect(),
        }
    }

    /// Adds tape gradients into a detached buffer.
    pub fn add_to_buffer(
        &self,
        buf: &mut GradBuffer,
        binding: &Binding,
        grads: &crate::autodiff::Gradients,
        scale: f64,
    ) {
        for (slot, &var) in buf.data.iter_mut().zip(&binding.vars) {
            for (g, &tg) in slot.iter_mut().zip(grads.get(var)) {
                *g += scale * tg;
            }
        }
    }

    /// Adds a detached buffer into the persistent gradient slots.
    pub fn load_grads(&mut self, buf: &GradBuffer) {
        for (entry, slot) in self.entries.iter_mut().zip(&buf.data) {
            for (g, &bg) in entry.grad.iter_mut().zip(slot) {
                *g += bg;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            for g in &mut e.grad {
                *g = 0.0;
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, c: f64) {
        for e in &mut self.entries {
            for g in &mut e.grad {
                *g *= c;
            }
        }
    }

    /// Plain SGD with L2 decay: `p <- p - lr * (grad + l2 * p)`; gradients
    /// are zeroed afterwards. A non-finite gradient anywhere skips the whole
    /// step (gradients still cleared) and reports it.
    pub fn sgd_step(&mut self, lr: f64, l2: f64) -> StepOutcome {
        let finite = self
            .entries
            .iter()
            .all(|e| e.grad.iter().all(|g| g.is_finite()));
        if finite {
            for e in &mut self.entries {
                for (p, g) in e.value.data.iter_mut().zip(&e.grad) {
                    *p -= lr * (g + l2 * *p);
                }
            }
        }
        self.zero_grads();
        StepOutcome { applied: finite }
    }

    /// FNV-1a digest over the exact parameter bits; equal digests mean
    /// bitwise-equal stores.
    pub fn value_digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for e in &self.entries {
            mix(e.name.as_bytes());
            for v in &e.value.data {
                mix(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.specs).map_err(|e| Error::Checkpoint(e.to_string()))?;
        out.write_all(&(meta.len() as u32).to_le_bytes())?;
        out.write_all(&meta)?;
        out.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            out.write_all(&(e.name.len() as u32).to_le_bytes())?;
            out.write_all(e.name.as_bytes())?;
            match e.value.shape {
                Shape::Scalar => out.write_all(&[0u8])?,
                Shape::Vector(n) => {
                    out.write_all(&[1u8])?;
                    out.write_all(&(n as u32).to_le_bytes())?;
                }
                Shape::Matrix(r, c) => {
                    out.write_all(&[2u8])?;
                    out.write_all(&(r as u32).to_le_bytes())?;
                    out.write_all(&(c as u32).to_le_bytes())?;
                }
            }
            for v in &e.value.data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut file)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = read_u32(&mut file)? as usize;
        let mut meta = vec![0u8; meta_len];
        file.read_exact(&mut meta)?;
        let specs: ModelSpecs =
            serde_json::from_slice(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = read_u32(&mut file)? as usize;
        let mut store = ParameterStore {
            specs,
            entries: Vec::new(),
            index: HashMap::new(),
        };
        for _ in 0..count {
            let name_len = read_u32(&mut file)? as usize;
            let mut name = vec![0u8; name_len];
            file.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let mut kind = [0u8; 1];
            file.read_exact(&mut kind)?;
            let shape = match kind[0] {
                0 => Shape::Scalar,
                1 => Shape::Vector(read_u32(&mut file)? as usize),
                2 => {
                    let r = read_u32(&mut file)? as usize;
                    let c = read_u32(&mut file)? as usize;
                    Shape::Matrix(r, c)
                }
                k => return Err(Error::Checkpoint(format!("bad shape kind {k}"))),
            };
            let mut data = vec![0.0f64; shape.len()];
            for v in &mut data {
                let mut b = [0u8; 8];
                file.read_exact(&mut b)?;
                *v = f64::from_le_bytes(b);
            }
            store.push(name, Tensor { shape, data });
        }
        // Layout must match what init would declare for these specs.
        let expected = layout(&store.specs);
        if expected.len() != store.entries.len()
            || expected
                .iter()
                .zip(&store.entries)
                .any(|(d, e)| d.name != e.name || d.shape != e.value.shape)
        {
            return Err(Error::Checkpoint(
                "tensor layout does not match model specs".into(),
            ));
        }
        Ok(store)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Gradient accumulator detached from the store.
pub struct GradBuffer {
    data: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn add(&mut self, other: &GradBuffer) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Handle map from one [`ParameterStore::bind`] call.
pub struct Binding {
    vars: Vec<Var>,
    names: HashMap<String, usize>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Var {
        let i = *self
            .names
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[i]
    }
}

enum Init {
    Zero,
    Uniform(usize),
}

struct Decl {
    name: String,
    shape: Shape,
    init: Init,
}

fn decl(name: &str, shape: Shape, init: Init) -> Decl {
    Decl {
        name: name.to_string(),
        shape,
        init,
    }
}

/// Declaration order is fixed: initialization and checkpoints depend on it.
#[allow(clippy::vec_init_then_push)]
fn layout(specs: &ModelSpecs) -> Vec<Decl> {
    let c = specs.n_marks();
    let dv = specs.input_dim;
    let dg = specs.gamma_dim;
    let ds = specs.obs_hidden;
    let dm = specs.miss_hidden;
    let mut l = Vec::new();

    // Observed process: input layer.
    l.push(decl("obs.w_time_in", Shape::Vector(dv), Init::Uniform(dv)));
    l.push(decl(
        "obs.mark_embed",
        Shape::Matrix(c, dv),
        Init::Uniform(c),
    ));
    l.push(decl("obs.w_gap_in", Shape::Vector(dv), Init::Uniform(dv)));
    l.push(decl("obs.b_in", Shape::Vector(dv), Init::Zero));
    // Observed recurrence.
    l.push(decl(
        "obs.w_state_state",
        Shape::Matrix(ds, ds),
        Init::Uniform(ds),
    ));
    l.push(decl(
        "obs.w_state_in",
        Shape::Matrix(ds, dv),
        Init::Uniform(dv),
    ));
    l.push(decl(
        "obs.w_state_gap",
        Shape::Vector(ds),
        Init::Uniform(ds),
    ));
    l.push(decl("obs.b_state", Shape::Vector(ds), Init::Zero));
    // Observed output heads.
    match specs.time_head {
        TimeHead::LogNormal => {
            l.push(decl(
                "obs.w_time_out_s",
                Shape::Matrix(2, ds),
                Init::Uniform(ds),
            ));
            l.push(decl(
                "obs.w_time_out_m",
                Shape::Matrix(2, dm),
                Init::Uniform(dm),
            ));
            l.push(decl("obs.b_time_out", Shape::Vector(2), Init::Zero));
        }
        TimeHead::Intensity => {
            l.push(decl(
                "obs.w_rate_s",
                Shape::Matrix(1, ds),
                Init::Uniform(ds),
            ));
            l.push(decl(
                "obs.w_rate_m",
                Shape::Matrix(1, dm),
                Init::Uniform(dm),
            ));
            l.push(decl("obs.w_rate_gap", Shape::Scalar, Init::Uniform(1)));
            l.push(decl("obs.b_rate", Shape::Scalar, Init::Zero));
        }
    }
    l.push(decl(
        "obs.w_mark_out_s",
        Shape::Matrix(c, ds),
        Init::Uniform(ds),
    ));
    l.push(decl(
        "obs.w_mark_out_m",
        Shape::Matrix(c, dm),
        Init::Uniform(dm),
    ));

    // Posterior missing process: input layer.
    l.push(decl("post.w_time_in", Shape::Vector(dg), Init::Uniform(dg)));
    l.push(decl(
        "post.mark_embed",
        Shape::Matrix(c, dg),
        Init::Uniform(c),
    ));
    l.push(decl("post.w_gap_in", Shape::Vector(dg), Init::Uniform(dg)));
    l.push(decl("post.b_in", Shape::Vector(dg), Init::Zero));
    // Posterior recurrence.
    l.push(decl(
        "post.w_state_state",
        Shape::Matrix(dm, dm),
        Init::Uniform(dm),
    ));
    l.push(decl(
        "post.w_state_in",
        Shape::Matrix(dm, dg),
        Init::Uniform(dg),
    ));
    l.push(decl(
        "post.w_state_gap",
        Shape::Vector(dm),
        Init::Uniform(dm),
    ));
    l.push(decl("post.b_state", Shape::Vector(dm), Init::Zero));
    // Posterior output heads.
    l.push(decl(
        "post.w_time_out_m",
        Shape::Matrix(2, dm),
        Init::Uniform(dm),
    ));
    l.push(decl(
        "post.w_time_out_s",
        Shape::Matrix(2, ds),
        Init::Uniform(ds),
    ));
    l.push(decl("post.b_time_out", Shape::Vector(2), Init::Zero));
    l.push(decl(
        "post.w_mark_out_s",
        Shape::Matrix(c, ds),
        Init::Uniform(ds),
    ));
    l.push(decl(
        "post.w_mark_out_m",
        Shape::Matrix(c, dm),
        Init::Uniform(dm),
    ));

    // Prior output heads (scaled by mu_bar at use).
    l.push(decl(
        "prior.w_time_out_m",
        Shape::Matrix(2, dm),
        Init::Uniform(dm),
    ));
    l.push(decl(
        "prior.w_time_out_s",
        Shape::Matrix(2, ds),
        Init::Uniform(ds),
    ));
    l.push(decl("prior.b_time_out", Shape::Vector(2), Init::Zero));
    l.push(decl(
        "prior.w_mark_out_s",
        Shape::Matrix(c, ds),
        Init::Uniform(ds),
    ));
    l.push(decl(
        "prior.w_mark_out_m",
        Shape::Matrix(c, dm),
        Init::Uniform(dm),
    ));

    l
}
