//! Closed-form homophily of the rewired graph under Gaussian noise on the
//! neighbor distributions, and a Monte-Carlo simulator of the same noise
//! model that keeps every term the closed form drops.
//!
//! Each node's distribution is its class prototype (`h` on the own-class
//! entry, `(1-h)/(c-1)` elsewhere) plus i.i.d. `N(0, σ²)` noise per entry.
//! The closed form linearizes the cosine similarity around the noiseless
//! prototypes:
//!
//! ```text
//! H   = h² + (1-h)²/(c-1)
//! t₊  = (H - δH) / (√H·√2·σ)
//! t₋  = (2h(1-h)/(c-1) + (c-2)((1-h)/(c-1))² - δH) / (√H·√2·σ)
//! ĥ   = 1 / (1 + (c-1)·Φ(t₋)/Φ(t₊))
//! ```

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Below this argument `ln Φ` switches from `erfc` to the Mills-ratio
/// continued fraction.
const TAIL_SWITCH: f64 = -8.0;

/// Pairs drawn per random substream of the simulator.
pub const MC_CHUNK: usize = 8192;

pub const MIN_MC_PAIRS: usize = 1000;

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, finite for any finite `x`.
pub fn ln_std_normal_cdf(x: f64) -> f64 {
    if x < TAIL_SWITCH {
        // Φ(x) = φ(x)·R(-x), R the Mills ratio.
        -0.5 * x * x - 0.5 * (2.0 * PI).ln() + mills_ratio(-x).ln()
    } else if x > 5.0 {
        (-0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else {
        std_normal_cdf(x).ln()
    }
}

/// `R(x) = (1 - Φ(x)) / φ(x)` for `x ≥ 8` via the continued fraction
/// `1/(x + 1/(x + 2/(x + 3/(x + …))))`, evaluated bottom-up.
fn mills_ratio(x: f64) -> f64 {
    let mut tail = x;
    for k in (1..=60).rev() {
        tail = x + k as f64 / tail;
    }
    1.0 / tail
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub h: f64,
    pub sigma: f64,
    pub delta: f64,
    pub c: usize,
}

impl TheoryParams {
    pub fn new(h: f64, sigma: f64, delta: f64, c: usize) -> Result<Self> {
        let p = Self { h, sigma, delta, c };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.h) {
            return Err(Error::InvalidParam(format!("h = {} outside [0, 1]", self.h)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParam(format!("sigma = {} must be positive", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidParam(format!("delta = {} outside [0, 1]", self.delta)));
        }
        if self.c < 2 {
            return Err(Error::InvalidParam(format!("c = {} must be at least 2", self.c)));
        }
        Ok(())
    }

    /// Off-class prototype entry `(1-h)/(c-1)`.
    fn q(&self) -> f64 {
        (1.0 - self.h) / (self.c - 1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryResult {
    pub params: TheoryParams,
    pub h_norm: f64,
    pub t_plus: f64,
    pub t_minus: f64,
    pub p_intra: f64,
    pub p_inter: f64,
    pub h_hat: f64,
}

pub fn closed_form_hhat(params: TheoryParams) -> Result<TheoryResult> {
    params.validate()?;
    Ok(closed_form_unchecked(params))
}

/// Also used by the finite differences, which may step just outside the
/// parameter domain.
fn closed_form_unchecked(p: TheoryParams) -> TheoryResult {
    let c = p.c as f64;
    let q = p.q();
    let h_norm = p.h * p.h + (c - 1.0) * q * q;
    let scale = h_norm.sqrt() * std::f64::consts::SQRT_2 * p.sigma;
    let t_plus = (h_norm - p.delta * h_norm) / scale;
    let t_minus = (2.0 * p.h * q + (c - 2.0) * q * q - p.delta * h_norm) / scale;
    let log_ratio = ln_std_normal_cdf(t_minus) - ln_std_normal_cdf(t_plus);
    TheoryResult {
        params: p,
        h_norm,
        t_plus,
        t_minus,
        p_intra: std_normal_cdf(t_plus),
        p_inter: std_normal_cdf(t_minus),
        h_hat: 1.0 / (1.0 + (c - 1.0) * log_ratio.exp()),
    }
}

/// Every combination of the four grids, `h` varying slowest.
pub fn sweep(hs: &[f64], sigmas: &[f64], deltas: &[f64], cs: &[usize]) -> Result<Vec<TheoryResult>> {
    if hs.is_empty() || sigmas.is_empty() || deltas.is_empty() || cs.is_empty() {
        return Err(Error::InvalidParam("empty sweep grid".into()));
    }
    let mut out = Vec::with_capacity(hs.len() * sigmas.len() * deltas.len() * cs.len());
    for &h in hs {
        for &sigma in sigmas {
            for &delta in deltas {
                for &c in cs {
                    out.push(closed_form_hhat(TheoryParams::new(h, sigma, delta, c)?)?);
                }
            }
        }
    }
    Ok(out)
}

pub const SWEEP_HEADER: &str = "h,sigma,delta,c,t_plus,t_minus,p_intra,p_inter,h_hat";

fn push_result(out: &mut String, r: &TheoryResult) {
    let p = r.params;
    write!(
        out,
        "{},{},{},{},{},{},{},{},{}",
        p.h, p.sigma, p.delta, p.c, r.t_plus, r.t_minus, r.p_intra, r.p_inter, r.h_hat
    )
    .unwrap();
}

pub fn sweep_csv(rows: &[TheoryResult]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        push_result(&mut out, r);
        out.push('\n');
    }
    out
}

/// Monte-Carlo estimate of the rewired homophily under the noise model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub h_hat_mc: f64,
    pub p_intra_mc: f64,
    pub p_inter_mc: f64,
    pub n_pairs: usize,
    pub seed: u64,
    pub std_err: f64,
}

/// Draws `n_pairs` same-class and `n_pairs` different-class pairs of noisy
/// prototypes and counts exact cosine similarities above `delta`. Noisy
/// entries are neither clipped nor renormalized.
///
/// Pairs are drawn in fixed chunks of [`MC_CHUNK`], chunk `k` from stream
/// `k` of a generator seeded with `seed`, so the estimate does not depend on
/// the number of workers. When no pair of either kind exceeds the threshold
/// the estimate falls back to `1/c` with a standard error of 1.
pub fn mc_simulate_hhat(params: TheoryParams, n_pairs: usize, seed: u64) -> Result<McEstimate> {
    params.validate()?;
    if n_pairs < MIN_MC_PAIRS {
        return Err(Error::InvalidParam(format!(
            "n_pairs = {n_pairs} is below {MIN_MC_PAIRS}"
        )));
    }
    let c = params.c;
    let (h, q) = (params.h, params.q());
    let n_chunks = n_pairs.div_ceil(MC_CHUNK);
    let counts = par::map_range(n_chunks, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let len = MC_CHUNK.min(n_pairs - k * MC_CHUNK);
        let mut a = vec![0.0; c];
        let mut b = vec![0.0; c];
        let draw = |rng: &mut ChaCha8Rng, v: &mut [f64], class: usize| {
            for (i, x) in v.iter_mut().enumerate() {
                let base = if i == class { h } else { q };
                *x = base + params.sigma * rng.sample::<f64, _>(StandardNormal);
            }
        };
        let (mut intra, mut inter) = (0usize, 0usize);
        for _ in 0..len {
            let y = rng.random_range(0..c);
            draw(&mut rng, &mut a, y);
            draw(&mut rng, &mut b, y);
            if cosine(&a, &b) > params.delta {
                intra += 1;
            }
            let y = rng.random_range(0..c);
            let z = (y + rng.random_range(1..c)) % c;
            draw(&mut rng, &mut a, y);
            draw(&mut rng, &mut b, z);
            if cosine(&a, &b) > params.delta {
                inter += 1;
            }
        }
        (intra, inter)
    });
    let (intra, inter) = counts.iter().fold((0, 0), |(a, b), &(x, y)| (a + x, b + y));
    let n = n_pairs as f64;
    let (pp, pm) = (intra as f64 / n, inter as f64 / n);
    let cm1 = (c - 1) as f64;
    let denom = pp + cm1 * pm;
    let (h_hat_mc, std_err) = if denom == 0.0 {
        (1.0 / c as f64, 1.0)
    } else {
        // delta method on ĥ = p⁺ / (p⁺ + (c-1)p⁻)
        let g_plus = cm1 * pm / (denom * denom);
        let g_minus = -cm1 * pp / (denom * denom);
        let var = g_plus * g_plus * pp * (1.0 - pp) / n + g_minus * g_minus * pm * (1.0 - pm) / n;
        (pp / denom, var.sqrt())
    };
    Ok(McEstimate {
        h_hat_mc,
        p_intra_mc: pp,
        p_inter_mc: pm,
        n_pairs,
        seed,
        std_err,
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

pub const MC_HEADER: &str = "h,sigma,delta,c,t_plus,t_minus,p_intra,p_inter,h_hat,h_hat_mc,std_err,n_pairs,seed";

pub fn mc_csv(rows: &[(TheoryResult, McEstimate)]) -> String {
    let mut out = format!("{MC_HEADER}\n");
    for (r, m) in rows {
        push_result(&mut out, r);
        writeln!(out, ",{},{},{},{}", m.h_hat_mc, m.std_err, m.n_pairs, m.seed).unwrap();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    fn of(x: f64, slack: f64) -> Self {
        if x > slack {
            Sign::Positive
        } else if x < -slack {
            Sign::Negative
        } else {
            Sign::Zero
        }
    }
}

pub const DERIVATIVE_SLACK: f64 = 1e-9;
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeSigns {
    pub params: TheoryParams,
    pub d_delta: f64,
    pub d_sigma: f64,
    pub d_h: f64,
    pub sign_delta: Sign,
    pub sign_sigma: Sign,
    pub sign_h: Sign,
}

impl DerivativeSigns {
    /// ĥ does not decrease with the threshold.
    pub fn delta_claim(&self) -> bool {
        self.d_delta >= -DERIVATIVE_SLACK
    }

    /// ĥ does not increase with the noise level; vacuous at `h = 1/c`.
    pub fn sigma_claim(&self) -> bool {
        self.at_symmetry_point() || self.d_sigma <= DERIVATIVE_SLACK
    }

    /// ĥ falls towards `h = 1/c` and rises away from it.
    pub fn h_claim(&self) -> bool {
        if self.at_symmetry_point() {
            self.d_h.abs() <= DERIVATIVE_SLACK
        } else if self.params.h > 1.0 / self.params.c as f64 {
            self.d_h >= -DERIVATIVE_SLACK
        } else {
            self.d_h <= DERIVATIVE_SLACK
        }
    }

    pub fn all_claims(&self) -> bool {
        self.delta_claim() && self.sigma_claim() && self.h_claim()
    }

    fn at_symmetry_point(&self) -> bool {
        (self.params.h - 1.0 / self.params.c as f64).abs() < 1e-12
    }
}

/// Central differences of ĥ in δ, σ and h. Each difference is repeated at
/// half the step; if the two disagree by more than half their magnitude
/// the step cannot resolve the derivative and an error is returned.
pub fn derivative_signs(params: TheoryParams, step: f64) -> Result<DerivativeSigns> {
    params.validate()?;
    if !(step > 0.0 && step < params.sigma) {
        return Err(Error::InvalidParam(format!(
            "step {step} must be positive and below sigma"
        )));
    }
    let f = |p: TheoryParams| closed_form_unchecked(p).h_hat;
    let diff = |name: &str, shift: &dyn Fn(f64) -> TheoryParams| -> Result<f64> {
        let central = |s: f64| (f(shift(s)) - f(shift(-s))) / (2.0 * s);
        let (coarse, fine) = (central(step), central(step / 2.0));
        let scale = coarse.abs().max(fine.abs());
        if scale > DERIVATIVE_SLACK && (coarse - fine).abs() > 0.5 * scale {
            return Err(Error::Unresolved(format!(
                "d h_hat / d {name} at {params:?}: {coarse:e} at step {step:e} vs {fine:e} at half step"
            )));
        }
        Ok(fine)
    };
    let d_delta = diff("delta", &|s| TheoryParams {
        delta: params.delta + s,
        ..params
    })?;
    let d_sigma = diff("sigma", &|s| TheoryParams {
        sigma: params.sigma + s,
        ..params
    })?;
    let d_h = diff("h", &|s| TheoryParams {
        h: params.h + s,
        ..params
    })?;
    Ok(DerivativeSigns {
        params,
        d_delta,
        d_sigma,
        d_h,
        sign_delta: Sign::of(d_delta, DERIVATIVE_SLACK),
        sign_sigma: Sign::of(d_sigma, DERIVATIVE_SLACK),
        sign_h: Sign::of(d_h, DERIVATIVE_SLACK),
    })
}
