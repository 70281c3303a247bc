//! Emission distributions: log-normal, interval-truncated log-normal, and
//! categorical, plus the standard-normal CDF/quantile they are built from.
//!
//! Two layers live here. Plain `f64` functions are the canonical definitions
//! used by samplers, oracles, and reports. The `*_on_tape` helpers mirror the
//! same formulas as [`Tape`](crate::autodiff::Tape) graphs so densities and
//! reparameterized draws stay differentiable wherever training needs them.
//!
//! All sampling takes an explicit generator; nothing here touches global
//! randomness.

use crate::autodiff::{softmax_stable, Tape, Var};
use crate::error::{Error, Result};
use rand::Rng;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Raw network outputs for the log-scale are mapped through `exp` and
/// clamped to this range before use as sigma.
pub const SIGMA_MIN: f64 = 1e-3;
pub const SIGMA_MAX: f64 = 1e3;

/// Floor applied inside logs of categorical KL so untrained softmaxes cannot
/// produce infinities.
pub const PROB_FLOOR: f64 = 1e-10;

/// Truncation masses below this are treated as an exhausted interval.
pub const MASS_FLOOR: f64 = 1e-12;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF via the complementary error function (accurate in
/// both tails).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile, Wichura's AS 241 (PPND16) rational
/// approximation; relative error below 1e-15 across (0, 1), far inside the
/// 1e-9 needed by truncated sampling.
pub fn normal_icdf(p: f64) -> f64 {
    assert!(
        p > 0.0 && p < 1.0,
        "normal_icdf: p must lie in (0, 1), got {p}"
    );
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

// AS 241 PPND16 coefficients (central, middle-tail, far-tail regions),
// kept verbatim from the published listing.
#[allow(clippy::excessive_precision)]
const A: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
#[allow(clippy::excessive_precision)]
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
#[allow(clippy::excessive_precision)]
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
#[allow(clippy::excessive_precision)]
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
#[allow(clippy::excessive_precision)]
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
#[allow(clippy::excessive_precision)]
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

/// Location-scale parameters of a log-normal in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalParams {
    pub fn new(mu: f64, sigma: f64) -> Self {
        assert!(sigma > 0.0, "sigma must be positive, got {sigma}");
        LogNormalParams { mu, sigma }
    }
}

pub fn lognormal_logpdf(x: f64, p: &LogNormalParams) -> Result<f64> {
    if x <= 0.0 {
        return Err(Error::Domain(format!(
            "lognormal_logpdf: x must be positive, got {x}"
        )));
    }
    let z = (x.ln() - p.mu) / p.sigma;
    Ok(-x.ln() - p.sigma.ln() - LN_SQRT_2PI - 0.5 * z * z)
}

/// Draws `exp(mu + sigma * z)` from a standard-normal `z`.
pub fn lognormal_sample_reparam(p: &LogNormalParams, z: f64) -> f64 {
    (p.mu + p.sigma * z).exp()
}

pub fn lognormal_mean(p: &LogNormalParams) -> f64 {
    (p.mu + 0.5 * p.sigma * p.sigma).exp()
}

pub fn lognormal_median(p: &LogNormalParams) -> f64 {
    p.mu.exp()
}

pub fn lognormal_cdf(x: f64, p: &LogNormalParams) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    normal_cdf((x.ln() - p.mu) / p.sigma)
}

/// KL(q || p) between two untruncated log-normals (equals the Gaussian KL of
/// the log variables).
pub fn lognormal_kl_closed(q: &LogNormalParams, p: &LogNormalParams) -> f64 {
    let vq = q.sigma * q.sigma;
    let vp = p.sigma * p.sigma;
    (p.sigma / q.sigma).ln() + (vq + (q.mu - p.mu) * (q.mu - p.mu)) / (2.0 * vp) - 0.5
}

/// Log-normal restricted to `(0, upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedLogNormalParams {
    pub base: LogNormalParams,
    pub upper: f64,
}

impl TruncatedLogNormalParams {
    pub fn new(base: LogNormalParams, upper: f64) -> Self {
        assert!(
            upper > 0.0,
            "truncation bound must be positive, got {upper}"
        );
        TruncatedLogNormalParams { base, upper }
    }

    /// Probability mass the untruncated distribution places on `(0, upper)`.
    pub fn mass(&self) -> f64 {
        normal_cdf((self.upper.ln() - self.base.mu) / self.base.sigma)
    }
}

/// Outcome of a truncated draw: either a gap strictly inside `(0, upper)` or
/// a signal that the interval holds no usable probability mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncatedDraw {
    Value(f64),
    IntervalExhausted,
}

/// Inverse-CDF sample on `(0, upper)` from a uniform draw `u`.
pub fn truncated_lognormal_sample(p: &TruncatedLogNormalParams, u: f64) -> TruncatedDraw {
    let mass = p.mass();
    if mass < MASS_FLOOR {
        return TruncatedDraw::IntervalExhausted;
    }
    let u = u.clamp(1e-12, 1.0 - 1e-12);
    let z = normal_icdf(u * mass);
    let mut x = (p.base.mu + p.base.sigma * z).exp();
    // Inverse-CDF draws stay below the bound analytically; guard the equality
    // case that floating point can produce.
    if x >= p.upper {
        x = p.upper * (1.0 - 1e-12);
    }
    TruncatedDraw::Value(x)
}

/// Log-density of the truncated log-normal; `-inf` outside `(0, upper)`.
pub fn truncated_lognormal_logpdf(x: f64, p: &TruncatedLogNormalParams) -> f64 {
    if x <= 0.0 || x >= p.upper {
        return f64::NEG_INFINITY;
    }
    let base = lognormal_logpdf(x, &p.base).expect("x > 0 checked above");
    base - p.mass().ln()
}

pub fn truncated_lognormal_cdf(x: f64, p: &TruncatedLogNormalParams) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= p.upper {
        return 1.0;
    }
    lognormal_cdf(x, &p.base) / p.mass()
}

/// Probability vector over the mark vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkDistribution {
    pub probs: Vec<f64>,
}

impl MarkDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        MarkDistribution {
            probs: softmax_stable(logits),
        }
    }

    pub fn uniform(n: usize) -> Self {
        MarkDistribution {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Highest-probability mark; ties broken by lowest id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

pub fn categorical_logpmf(d: &MarkDistribution, k: usize) -> f64 {
    d.probs[k].max(PROB_FLOOR).ln()
}

pub fn categorical_sample(d: &MarkDistribution, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in d.probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    d.probs.len() - 1
}

/// KL(q || p) with the documented probability floor inside each log.
pub fn categorical_kl(q: &MarkDistribution, p: &MarkDistribution) -> f64 {
    assert_eq!(
        q.probs.len(),
        p.probs.len(),
        "categorical_kl: dimension mismatch"
    );
    let mut kl = 0.0;
    for (&qi, &pi) in q.probs.iter().zip(&p.probs) {
        if qi > 0.0 {
            kl += qi * (qi.max(PROB_FLOOR).ln() - pi.max(PROB_FLOOR).ln());
        }
    }
    kl
}

// ---------------------------------------------------------------------------
// Differentiable heads
// ---------------------------------------------------------------------------

/// Log-normal head on a tape: `mu` and `sigma` scalar nodes, sigma already
/// mapped through exp and clamped.
#[derive(Debug, Clone, Copy)]
pub struct LogNormalHead {
    pub mu: Var,
    pub sigma: Var,
}

impl LogNormalHead {
    /// Builds a head from a 2-vector node `[mu_raw, sigma_raw]`.
    pub fn from_raw(tape: &mut Tape, raw: Var) -> Self {
        let mu = tape.index(raw, 0);
        let sigma_raw = tape.index(raw, 1);
        let sigma = tape.exp(sigma_raw);
        let sigma = tape.clamp(sigma, SIGMA_MIN, SIGMA_MAX);
        LogNormalHead { mu, sigma }
    }

    pub fn params(&self, tape: &Tape) -> LogNormalParams {
        LogNormalParams::new(tape.scalar_value(self.mu), tape.scalar_value(self.sigma))
    }

    /// Log-density at a fixed positive observation.
    pub fn logpdf_const(&self, tape: &mut Tape, x: f64) -> Var {
        assert!(x > 0.0, "logpdf_const: x must be positive");
        let lnx = x.ln();
        let mu = self.mu;
        let lnx_minus_mu = {
            let n = tape.neg(mu);
            tape.add_const(n, lnx)
        };
        let z = tape.div(lnx_minus_mu, self.sigma);
        let z2 = tape.mul(z, z);
        let half_z2 = tape.scale_const(z2, 0.5);
        let log_sigma = tape.log(self.sigma);
        let s = tape.add(half_z2, log_sigma);
        let s = tape.neg(s);
        tape.add_const(s, -lnx - LN_SQRT_2PI)
    }

    /// Reparameterized draw `exp(mu + sigma * z)` for a fixed noise value;
    /// the result stays differentiable in `mu` and `sigma`.
    pub fn sample_reparam(&self, tape: &mut Tape, z: f64) -> Var {
        let sz = tape.scale_const(self.sigma, z);
        let arg = tape.add(self.mu, sz);
        tape.exp(arg)
    }

    /// `exp(mu + sigma^2 / 2)`.
    pub fn mean(&self, tape: &mut Tape) -> Var {
        let s2 = tape.mul(self.sigma, self.sigma);
        let half = tape.scale_const(s2, 0.5);
        let arg = tape.add(self.mu, half);
        tape.exp(arg)
    }
}

/// Differentiable truncated draw. `upper` is a scalar node so gradients flow
/// through bounds that are themselves functions of sampled times.
pub struct TruncatedDrawOnTape {
    /// Sampled gap, strictly inside `(0, upper)`.
    pub gap: Var,
    /// `log` of the gap (shared subexpression `mu + sigma * z_trunc`).
    pub log_gap: Var,
    /// Standardized draw `z = icdf(u * mass)`.
    pub z: Var,
    /// Truncation mass `Phi((ln upper - mu) / sigma)`.
    pub mass: Var,
}

/// Samples the truncated log-normal on a tape given a uniform draw.
/// Returns `None` when the interval mass has vanished.
pub fn truncated_sample_on_tape(
    tape: &mut Tape,
    head: &LogNormalHead,
    upper: Var,
    u: f64,
) -> Option<TruncatedDrawOnTape> {
    let ln_upper = tape.log(upper);
    let num = tape.sub(ln_upper, head.mu);
    let beta = tape.div(num, head.sigma);
    let mass = tape.normal_cdf(beta);
    if tape.scalar_value(mass) < MASS_FLOOR {
        return None;
    }
    let u = u.clamp(1e-12, 1.0 - 1e-12);
    let arg = tape.scale_const(mass, u);
    // The icdf argument is u * mass < 1 by construction.
    let z = tape.normal_icdf(arg);
    let sz = tape.mul(head.sigma, z);
    let log_gap = tape.add(head.mu, sz);
    let gap = tape.exp(log_gap);
    Some(TruncatedDrawOnTape {
        gap,
        log_gap,
        z,
        mass,
    })
}

/// Truncated log-density at the draw itself, reusing the shared nodes:
/// `-log_gap - log sigma - log sqrt(2 pi) - z^2 / 2 - log mass`.
pub fn truncated_logpdf_at_draw(
    tape: &mut Tape,
    head: &LogNormalHead,
    draw: &TruncatedDrawOnTape,
) -> Var {
    let z2 = tape.mul(draw.z, draw.z);
    let half_z2 = tape.scale_const(z2, 0.5);
    let log_sigma = tape.log(head.sigma);
    let log_mass = tape.log(draw.mass);
    let s1 = tape.add(half_z2, log_sigma);
    let s2 = tape.add(s1, log_mass);
    let s3 = tape.add(s2, draw.log_gap);
    let n = tape.neg(s3);
    tape.add_const(n, -LN_SQRT_2PI)
}

/// Untruncated log-density at a gap whose log is already on the tape.
pub fn lognormal_logpdf_at_log_gap(tape: &mut Tape, head: &LogNormalHead, log_gap: Var) -> Var {
    let diff = tape.sub(log_gap, head.mu);
    let z = tape.div(diff, head.sigma);
    let z2 = tape.mul(z, z);
    let half_z2 = tape.scale_const(z2, 0.5);
    let log_sigma = tape.log(head.sigma);
    let s1 = tape.add(half_z2, log_sigma);
    let s2 = tape.add(s1, log_gap);
    let n = tape.neg(s2);
    tape.add_const(n, -LN_SQRT_2PI)
}

/// Clamped log-probabilities for a logits node: `log_softmax` floored at
/// `ln(PROB_FLOOR)` so untrained heads cannot reach `-inf`.
pub fn floored_log_softmax(tape: &mut Tape, logits: Var) -> Var {
    let lp = tape.log_softmax(logits);
    tape.clamp(lp, PROB_FLOOR.ln(), 0.0)
}

/// Closed-form categorical KL between two logits nodes.
pub fn categorical_kl_on_tape(tape: &mut Tape, q_logits: Var, p_logits: Var) -> Var {
    let q = tape.softmax(q_logits);
    let lq = floored_log_softmax(tape, q_logits);
    let lp = floored_log_softmax(tape, p_logits);
    let diff = tape.sub(lq, lp);
    tape.dot(q, diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::Rng;

    /// Composite Simpson integration of `exp(logpdf)` after the substitution
    /// x = e^y, which turns the log-normal into a plain normal integrand.
    fn integrate_lognormal(p: &LogNormalParams, upper: Option<f64>) -> f64 {
        let lo = p.mu - 12.0 * p.sigma;
        // Stay strictly inside the support: at x == upper the truncated
        // density is defined as zero, which would bias the boundary node.
        let hi = match upper {
            Some(u) => (u * (1.0 - 1e-12)).ln(),
            None => p.mu + 12.0 * p.sigma,
        };
        let n = 40_000;
        let h = (hi - lo) / n as f64;
        let f = |y: f64| {
            let x = y.exp();
            let lp = match upper {
                Some(u) => truncated_lognormal_logpdf(x, &TruncatedLogNormalParams::new(*p, u)),
                None => lognormal_logpdf(x, p).unwrap(),
            };
            lp.exp() * x
        };
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let y = lo + i as f64 * h;
            acc += f(y) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn icdf_inverts_cdf_to_high_accuracy() {
        // Grid across the bulk and both tails.
        let ps = [
            1e-12,
            1e-9,
            1e-6,
            1e-3,
            0.01,
            0.1,
            0.3,
            0.5,
            0.7,
            0.9,
            0.99,
            1.0 - 1e-6,
            1.0 - 1e-9,
        ];
        for &p in &ps {
            let x = normal_icdf(p);
            let back = normal_cdf(x);
            assert!(
                (back - p).abs() / p.max(1e-12) < 1e-9,
                "p={p}: icdf={x}, cdf back={back}"
            );
        }
        assert!(normal_icdf(0.5).abs() < 1e-15);
    }

    #[test]
    fn lognormal_logpdf_known_values() {
        let std = LogNormalParams::new(0.0, 1.0);
        let v = lognormal_logpdf(1.0, &std).unwrap();
        assert!((v - (-LN_SQRT_2PI)).abs() < 1e-12);
        let p = LogNormalParams::new(1.0, 1.0);
        let v = lognormal_logpdf(std::f64::consts::E, &p).unwrap();
        assert!((v - (-1.0 - LN_SQRT_2PI)).abs() < 1e-12);
        assert!(lognormal_logpdf(0.0, &std).is_err());
        assert!(lognormal_logpdf(-1.0, &std).is_err());
    }

    #[test]
    fn lognormal_density_integrates_to_one() {
        for (mu, sigma) in [(0.0, 1.0), (0.5, 0.3), (-1.0, 2.0)] {
            let p = LogNormalParams::new(mu, sigma);
            let integral = integrate_lognormal(&p, None);
            assert!(
                (integral - 1.0).abs() < 1e-6,
                "mu={mu} sigma={sigma}: {integral}"
            );
        }
    }

    #[test]
    fn truncated_density_integrates_to_one() {
        for (mu, sigma, upper) in [(0.0, 1.0, 1.0), (0.2, 0.5, 0.8), (-0.5, 1.5, 3.0)] {
            let p = TruncatedLogNormalParams::new(LogNormalParams::new(mu, sigma), upper);
            let integral = integrate_lognormal(&p.base, Some(upper));
            assert!(
                (integral - 1.0).abs() < 1e-6,
                "{mu},{sigma},{upper}: {integral}"
            );
        }
    }

    #[test]
    fn truncated_logpdf_limits() {
        let base = LogNormalParams::new(0.1, 0.7);
        // Huge bound: truncation vanishes.
        let p = TruncatedLogNormalParams::new(base, 1e9);
        let a = truncated_lognormal_logpdf(0.5, &p);
        let b = lognormal_logpdf(0.5, &base).unwrap();
        assert!((a - b).abs() < 1e-9);
        // Renormalization adds mass: density exceeds the untruncated one.
        let upper = 2.0f64;
        let centered =
            TruncatedLogNormalParams::new(LogNormalParams::new((upper / 2.0).ln(), 1.0), upper);
        let at = truncated_lognormal_logpdf(upper / 2.0, &centered);
        let base_at = lognormal_logpdf(upper / 2.0, &centered.base).unwrap();
        assert!(at > base_at);
        // Outside support.
        assert_eq!(
            truncated_lognormal_logpdf(3.0, &centered),
            f64::NEG_INFINITY
        );
        assert_eq!(
            truncated_lognormal_logpdf(-1.0, &centered),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn reparam_sample_known_points() {
        let p = LogNormalParams::new(0.3, 0.5);
        assert!((lognormal_sample_reparam(&p, 0.0) - p.mu.exp()).abs() < 1e-12);
        let q = LogNormalParams::new(0.0, 0.5);
        assert!((lognormal_sample_reparam(&q, 2.0) - 1.0f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn lognormal_mean_matches_monte_carlo() {
        let p = LogNormalParams::new(0.0, 0.5);
        let expected = lognormal_mean(&p);
        assert!((expected - 0.125f64.exp()).abs() < 1e-12);
        let mut rng = crate::rng::substream(100, &[1]);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let u: f64 = rng.random_range(1e-12..1.0);
            let z = normal_icdf(u);
            acc += lognormal_sample_reparam(&p, z);
        }
        let mc = acc / n as f64;
        assert!(
            (mc - expected).abs() / expected < 5e-3,
            "mc={mc} expected={expected}"
        );
    }

    #[test]
    fn truncated_sampler_median_without_truncation() {
        // log upper far above mu + 6 sigma: the truncation is inactive and
        // u = 0.5 recovers the median exp(mu).
        let p = TruncatedLogNormalParams::new(LogNormalParams::new(0.4, 0.5), 1e6);
        match truncated_lognormal_sample(&p, 0.5) {
            TruncatedDraw::Value(x) => assert!((x - 0.4f64.exp()).abs() < 1e-6),
            TruncatedDraw::IntervalExhausted => panic!("unexpected exhaustion"),
        }
    }

    #[test]
    fn truncated_sampler_approaches_upper() {
        let p = TruncatedLogNormalParams::new(LogNormalParams::new(0.0, 1.0), 0.7);
        match truncated_lognormal_sample(&p, 1.0 - 1e-13) {
            TruncatedDraw::Value(x) => {
                assert!(x < p.upper);
                assert!(p.upper - x < 1e-6);
            }
            TruncatedDraw::IntervalExhausted => panic!("unexpected exhaustion"),
        }
    }

    #[test]
    fn truncated_sampler_signals_exhausted_interval() {
        // Mass far below the floor: ln(upper) is ~14 sigmas below mu.
        let p = TruncatedLogNormalParams::new(LogNormalParams::new(10.0, 0.5), 20.0);
        assert_eq!(
            truncated_lognormal_sample(&p, 0.5),
            TruncatedDraw::IntervalExhausted
        );
    }

    #[test]
    fn truncated_sampler_matches_analytic_cdf() {
        // Kolmogorov-Smirnov statistic of 1e5 inverse-CDF draws against the
        // analytic truncated CDF.
        let p = TruncatedLogNormalParams::new(LogNormalParams::new(-0.2, 0.8), 1.5);
        let mut rng = crate::rng::substream(101, &[2]);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| match truncated_lognormal_sample(&p, rng.random()) {
                TruncatedDraw::Value(x) => x,
                TruncatedDraw::IntervalExhausted => panic!("mass should not vanish"),
            })
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            assert!(x < p.upper, "draw {x} reached the bound {}", p.upper);
            let emp_hi = (i + 1) as f64 / n as f64;
            let emp_lo = i as f64 / n as f64;
            let cdf = truncated_lognormal_cdf(x, &p);
            ks = ks.max((emp_hi - cdf).abs()).max((cdf - emp_lo).abs());
        }
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn categorical_kl_known_values() {
        let p = MarkDistribution {
            probs: vec![0.5, 0.5],
        };
        assert!(categorical_kl(&p, &p).abs() < 1e-15);
        let q = MarkDistribution {
            probs: vec![1.0, 0.0],
        };
        assert!((categorical_kl(&q, &p) - 2.0f64.ln()).abs() < 1e-12);
        let q = MarkDistribution {
            probs: vec![0.9, 0.1],
        };
        let direct = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        assert!((categorical_kl(&q, &p) - direct).abs() < 1e-12);
        assert!((direct - 0.3680642071684971).abs() < 1e-12);
    }

    #[test]
    fn categorical_kl_nonnegative_and_zero_iff_equal() {
        let mut rng = crate::rng::substream(102, &[3]);
        for _ in 0..200 {
            let n = rng.random_range(2..6);
            let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let logits2: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let q = MarkDistribution::from_logits(&logits);
            let p = MarkDistribution::from_logits(&logits2);
            assert!(categorical_kl(&q, &p) >= 0.0);
            assert!(categorical_kl(&q, &q) < 1e-12);
        }
    }

    #[test]
    fn categorical_kl_floors_zero_support() {
        let q = MarkDistribution {
            probs: vec![0.5, 0.5],
        };
        let p = MarkDistribution {
            probs: vec![1.0, 0.0],
        };
        let kl = categorical_kl(&q, &p);
        assert!(kl.is_finite());
        assert!(kl > 0.0);
    }

    #[test]
    fn lognormal_kl_closed_known_values() {
        let p = LogNormalParams::new(0.0, 1.0);
        assert!(lognormal_kl_closed(&p, &p).abs() < 1e-15);
        let q = LogNormalParams::new(1.0, 1.0);
        assert!((lognormal_kl_closed(&q, &p) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lognormal_kl_closed_matches_monte_carlo() {
        let q = LogNormalParams::new(0.4, 0.6);
        let p = LogNormalParams::new(-0.2, 1.1);
        let closed = lognormal_kl_closed(&q, &p);
        let mut rng = crate::rng::substream(103, &[4]);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let u: f64 = rng.random_range(1e-12..1.0);
            let z = normal_icdf(u);
            let x = lognormal_sample_reparam(&q, z);
            acc += lognormal_logpdf(x, &q).unwrap() - lognormal_logpdf(x, &p).unwrap();
        }
        let mc = acc / n as f64;
        assert!(
            (mc - closed).abs() / closed.abs().max(0.1) < 0.01,
            "mc={mc} closed={closed}"
        );
    }

    #[test]
    fn categorical_sampler_frequencies() {
        let d = MarkDistribution {
            probs: vec![0.2, 0.5, 0.3],
        };
        let mut rng = crate::rng::substream(104, &[5]);
        let n = 200_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[categorical_sample(&d, &mut rng)] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let f = c as f64 / n as f64;
            assert!((f - d.probs[i]).abs() < 0.01, "mark {i}: freq {f}");
        }
    }

    #[test]
    fn reparam_gradient_matches_finite_differences() {
        // d E[sample] / d mu on a fixed noise batch equals the batch mean of
        // d sample / d mu; check the tape path against central differences.
        let zs: Vec<f64> = {
            let mut rng = crate::rng::substream(105, &[6]);
            (0..64)
                .map(|_| normal_icdf(rng.random_range(1e-9..1.0)))
                .collect()
        };
        let eval = |mu: f64, sigma_raw: f64| -> f64 {
            zs.iter()
                .map(|&z| (mu + sigma_raw.exp() * z).exp())
                .sum::<f64>()
                / zs.len() as f64
        };
        let mut tape = Tape::new();
        let raw = tape.leaf(Tensor::vector(vec![0.2, -0.4]));
        let head = LogNormalHead::from_raw(&mut tape, raw);
        let mut acc = tape.scalar(0.0);
        for &z in &zs {
            let s = head.sample_reparam(&mut tape, z);
            acc = tape.add(acc, s);
        }
        let mean = tape.scale_const(acc, 1.0 / zs.len() as f64);
        let grads = tape.backward(mean);
        let g = grads.get(raw);
        let h = 1e-6;
        let fd_mu = (eval(0.2 + h, -0.4) - eval(0.2 - h, -0.4)) / (2.0 * h);
        let fd_sraw = (eval(0.2, -0.4 + h) - eval(0.2, -0.4 - h)) / (2.0 * h);
        assert!(
            (g[0] - fd_mu).abs() / fd_mu.abs() < 1e-4,
            "mu: {} vs {}",
            g[0],
            fd_mu
        );
        assert!(
            (g[1] - fd_sraw).abs() / fd_sraw.abs() < 1e-4,
            "sigma: {} vs {}",
            g[1],
            fd_sraw
        );
    }

    #[test]
    fn truncated_draw_on_tape_matches_plain_sampler() {
        let mut tape = Tape::new();
        let raw = tape.leaf(Tensor::vector(vec![-0.1, 0.3]));
        let head = LogNormalHead::from_raw(&mut tape, raw);
        let upper = tape.scalar(1.25);
        let u = 0.37;
        let draw = truncated_sample_on_tape(&mut tape, &head, upper, u).unwrap();
        let plain = TruncatedLogNormalParams::new(head.params(&tape), 1.25);
        match truncated_lognormal_sample(&plain, u) {
            TruncatedDraw::Value(x) => {
                assert!((tape.scalar_value(draw.gap) - x).abs() < 1e-12);
            }
            TruncatedDraw::IntervalExhausted => panic!("unexpected exhaustion"),
        }
        // And the recorded log-density matches the plain recomputation.
        let lp = truncated_logpdf_at_draw(&mut tape, &head, &draw);
        let plain_lp = truncated_lognormal_logpdf(tape.scalar_value(draw.gap), &plain);
        assert!((tape.scalar_value(lp) - plain_lp).abs() < 1e-10);
    }

    #[test]
    fn truncated_draw_gradient_matches_finite_differences() {
        // Gradient of the sampled gap w.r.t. the raw head outputs, with the
        // uniform frozen.
        let u = 0.61;
        let upper = 0.9;
        let eval = |mu: f64, sigma_raw: f64| -> f64 {
            let p = TruncatedLogNormalParams::new(LogNormalParams::new(mu, sigma_raw.exp()), upper);
            match truncated_lognormal_sample(&p, u) {
                TruncatedDraw::Value(x) => x,
                TruncatedDraw::IntervalExhausted => panic!(),
            }
        };
        let mut tape = Tape::new();
        let raw = tape.leaf(Tensor::vector(vec![0.1, -0.2]));
        let head = LogNormalHead::from_raw(&mut tape, raw);
        let ub = tape.scalar(upper);
        let draw = truncated_sample_on_tape(&mut tape, &head, ub, u).unwrap();
        let grads = tape.backward(draw.gap);
        let g = grads.get(raw);
        let h = 1e-6;
        let fd_mu = (eval(0.1 + h, -0.2) - eval(0.1 - h, -0.2)) / (2.0 * h);
        let fd_s = (eval(0.1, -0.2 + h) - eval(0.1, -0.2 - h)) / (2.0 * h);
        assert!((g[0] - fd_mu).abs() / fd_mu.abs().max(1e-8) < 1e-4);
        assert!((g[1] - fd_s).abs() / fd_s.abs().max(1e-8) < 1e-4);
    }
}
