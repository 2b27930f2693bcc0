//! The window problem: the number of batches B until `n` packet successes
//! land inside a sliding window of `w` batches, with `m` packets per batch
//! and per-packet success probability `p`.
//!
//! Batch `i` delivers a binomial(m, p) number of packets, and B is the
//! first index `x` where the last `w` batch counts sum to at least `n`.
//! Four routes to the first two moments of B live here: closed forms
//! (p = 1, or an infinite window with m = 1), a survival-series summation
//! for the infinite-window multiplexed case, an absorbing-Markov-chain
//! oracle for small finite windows, and Monte Carlo sampling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{QcsError, Result};
use crate::model::{MomentPair, Window};

/// Batch iteration cap for a single sampled draw.
const SAMPLE_CAP: u64 = 1_000_000_000;

/// Largest transient state count [`WindowSpec::dp_oracle`] accepts.
const DP_STATE_LIMIT: f64 = 5e6;

/// State count up to which the oracle solves the hitting-time system
/// directly; larger chains fall back to distribution evolution.
const DP_DENSE_LIMIT: usize = 1024;

/// Series iteration cap for survival curves and distribution evolution.
const SERIES_CAP: u64 = 100_000_000;

/// Default survival tail probability at which series are truncated.
pub const TAIL_TOL: f64 = 1e-12;

/// Parameters of one window problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    /// Successes required, n.
    pub needed: u32,
    /// Sliding window length in batches, w.
    pub window: Window,
    /// Per-packet success probability.
    pub p: f64,
    /// Packets per batch, m.
    pub batch_size: u32,
}

/// Pr[B > b] for b = 0, 1, ..., truncated once the tail drops below a
/// tolerance.
#[derive(Debug, Clone)]
pub struct SurvivalCurve {
    /// values[b] = Pr[B > b]; values[0] is 1 for any n >= 1.
    pub values: Vec<f64>,
    /// Upper bound on the Pr[B > b] mass beyond the last stored index.
    pub truncation_tail: f64,
    /// Matching bound on the neglected mass of the second-moment series.
    second_moment_tail: f64,
}

impl SurvivalCurve {
    /// E[B] and E[B^2] from the truncated series, using
    /// E[B] = sum Pr[B > b] and E[B^2] = sum (2b + 1) Pr[B > b].
    ///
    /// Both sums underestimate by the neglected tail, which is at most
    /// [`Self::truncation_tail`] (respectively the matching second-moment
    /// bound). The bounds are metadata, not corrections: they can be very
    /// loose when absorption from an empty window is rare, while the true
    /// neglected mass stays near the truncation tolerance.
    pub fn moments(&self) -> MomentPair {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (b, &v) in self.values.iter().enumerate() {
            m1 += v;
            m2 += (2 * b + 1) as f64 * v;
        }
        MomentPair { m1, m2 }
    }

    /// Upper bound on the mass missing from the second-moment series.
    pub fn second_moment_tail(&self) -> f64 {
        self.second_moment_tail
    }
}

/// Moment estimates from Monte Carlo sampling, with standard errors.
#[derive(Debug, Clone, Copy)]
pub struct SampledMoments {
    pub moments: MomentPair,
    pub se_m1: f64,
    pub se_m2: f64,
    /// Covariance of the two moment estimators.
    pub cov: f64,
    pub samples: u64,
}

impl WindowSpec {
    pub fn new(needed: u32, window: Window, p: f64, batch_size: u32) -> Result<Self> {
        if needed < 1 {
            return Err(QcsError::InvalidParameter("n must be at least 1".into()));
        }
        if batch_size < 1 {
            return Err(QcsError::InvalidParameter("m must be at least 1".into()));
        }
        if !(p.is_finite() && p > 0.0 && p <= 1.0) {
            return Err(QcsError::InvalidParameter(format!(
                "p must lie in (0, 1], got {p}"
            )));
        }
        if let Window::Finite(w) = window {
            if w < 1 {
                return Err(QcsError::InvalidParameter("w must be at least 1".into()));
            }
            if (w as u64) * (batch_size as u64) < needed as u64 {
                return Err(QcsError::InfeasibleWindow {
                    window: w,
                    batch: batch_size,
                    needed,
                });
            }
        }
        Ok(Self {
            needed,
            window,
            p,
            batch_size,
        })
    }

    /// Closed-form moments where they exist:
    /// - p = 1: B is deterministically ceil(n/m);
    /// - infinite window, m = 1: B is negative binomial, E[B] = n/p and
    ///   E[B^2] = (n(1-p) + n^2)/p^2;
    /// - infinite window, m > 1: survival-series summation.
    ///
    /// A finite window with p < 1 has no closed form here; callers fall
    /// back to [`Self::dp_oracle`] or [`Self::sample_moments`].
    pub fn exact_moments(&self) -> Result<MomentPair> {
        if self.p == 1.0 {
            let b = self.needed.div_ceil(self.batch_size) as f64;
            return Ok(MomentPair { m1: b, m2: b * b });
        }
        match self.window {
            Window::Infinite if self.batch_size == 1 => {
                let n = self.needed as f64;
                let p = self.p;
                Ok(MomentPair {
                    m1: n / p,
                    m2: (n * (1.0 - p) + n * n) / (p * p),
                })
            }
            Window::Infinite => Ok(self.survival_inf_multi(TAIL_TOL)?.moments()),
            Window::Finite(_) => Err(QcsError::Unsupported(
                "finite window with p < 1: use dp_oracle or sample_moments",
            )),
        }
    }

    /// Survival function of B for an infinite window with multiplexing,
    /// via a convolution of the capped partial-sum distribution: after b
    /// batches the total success count (truncated at n) determines
    /// Pr[B > b] = Pr[sum of the first b batch counts < n].
    ///
    /// Values are emitted until the first index where Pr[B > b] drops
    /// below `tail_tol`; the neglected mass is bounded geometrically,
    /// since any q = ceil(n/m) consecutive batches complete the request
    /// with at least probability Pr[Binomial(q m, p) >= n].
    pub fn survival_inf_multi(&self, tail_tol: f64) -> Result<SurvivalCurve> {
        if self.window != Window::Infinite {
            return Err(QcsError::InvalidParameter(
                "survival series needs an infinite window".into(),
            ));
        }
        if self.p >= 1.0 {
            return Err(QcsError::InvalidParameter(
                "survival series needs p < 1".into(),
            ));
        }
        if self.batch_size < 2 {
            return Err(QcsError::InvalidParameter(
                "survival series needs m >= 2; m = 1 has a closed form".into(),
            ));
        }
        if !(tail_tol > 0.0 && tail_tol < 1.0) {
            return Err(QcsError::InvalidParameter(format!(
                "tail tolerance must lie in (0, 1), got {tail_tol}"
            )));
        }

        let n = self.needed as usize;
        let pmf = binomial_pmf_prefix(
            self.batch_size as u64,
            self.p,
            self.needed.saturating_sub(1),
        );
        let mut dist = vec![0.0f64; n];
        dist[0] = 1.0;
        let mut values = vec![1.0f64];
        loop {
            let mut next = vec![0.0f64; n];
            for j in 0..n {
                let d = dist[j];
                if d == 0.0 {
                    continue;
                }
                for (i, &pi) in pmf.iter().enumerate().take(n - j) {
                    next[j + i] += d * pi;
                }
            }
            dist = next;
            let survive: f64 = dist.iter().sum();
            values.push(survive);
            if survive < tail_tol {
                break;
            }
            if values.len() as u64 > SERIES_CAP {
                return Err(QcsError::NonConvergence(format!(
                    "survival series exceeded {SERIES_CAP} terms"
                )));
            }
        }
        let b_max = values.len() - 1;
        let (tail1, tail2) =
            tail_bounds(self.p, self.batch_size, self.needed, b_max, values[b_max]);
        Ok(SurvivalCurve {
            values,
            truncation_tail: tail1,
            second_moment_tail: tail2,
        })
    }

    /// Draws one value of B.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u64> {
        BatchSampler::new(self)?.draw(rng)
    }

    /// Exact moments of B as expected hitting times of the absorbing
    /// Markov chain over window states: for a finite window the state is
    /// the last w-1 batch success counts; for an infinite window it is
    /// the cumulative success count capped at n.
    ///
    /// Chains up to [`DP_DENSE_LIMIT`] states are solved directly through
    /// the hitting-time linear system; larger chains (up to 5e6 states)
    /// evolve the state distribution forward and sum the survival series
    /// down to a 1e-14 tail.
    pub fn dp_oracle(&self) -> Result<MomentPair> {
        let chain = Chain::build(self)?;
        let pmf = binomial_pmf_prefix(
            self.batch_size as u64,
            self.p,
            self.needed.saturating_sub(1),
        );
        if chain.count() <= DP_DENSE_LIMIT {
            dense_hitting_moments(&chain, &pmf)
        } else {
            evolve_hitting_moments(&chain, &pmf)
        }
    }

    /// Monte Carlo moment estimates from `samples` independent draws.
    pub fn sample_moments<R: Rng + ?Sized>(
        &self,
        samples: u64,
        rng: &mut R,
    ) -> Result<SampledMoments> {
        if samples < 2 {
            return Err(QcsError::InvalidParameter("need at least 2 samples".into()));
        }
        let mut sampler = BatchSampler::new(self)?;
        let (mut s1, mut s2, mut s3, mut s4) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for _ in 0..samples {
            let b = sampler.draw(rng)? as f64;
            let b2 = b * b;
            s1 += b;
            s2 += b2;
            s3 += b2 * b;
            s4 += b2 * b2;
        }
        let count = samples as f64;
        let (m1, m2, m3, m4) = (s1 / count, s2 / count, s3 / count, s4 / count);
        Ok(SampledMoments {
            moments: MomentPair { m1, m2 },
            se_m1: ((m2 - m1 * m1).max(0.0) / count).sqrt(),
            se_m2: ((m4 - m2 * m2).max(0.0) / count).sqrt(),
            cov: (m3 - m1 * m2) / count,
            samples,
        })
    }
}

/// Reusable sampler: batch counts are binomial(m, p); the sliding sum over
/// the last w batches is tracked in a ring buffer, so successes older than
/// the window stop counting.
pub struct BatchSampler {
    needed: u64,
    window: Window,
    dist: Binomial,
    ring: Vec<u64>,
}

impl BatchSampler {
    pub fn new(spec: &WindowSpec) -> Result<Self> {
        let dist = Binomial::new(spec.batch_size as u64, spec.p)
            .map_err(|e| QcsError::InvalidParameter(format!("binomial sampler: {e}")))?;
        let ring = match spec.window {
            Window::Finite(w) => vec![0; w as usize],
            Window::Infinite => Vec::new(),
        };
        Ok(Self {
            needed: spec.needed as u64,
            window: spec.window,
            dist,
            ring,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<u64> {
        match self.window {
            Window::Infinite => {
                let mut total = 0u64;
                for b in 1..=SAMPLE_CAP {
                    total += self.dist.sample(rng);
                    if total >= self.needed {
                        return Ok(b);
                    }
                }
                Err(QcsError::SamplerOverrun)
            }
            Window::Finite(w) => {
                let w = w as usize;
                self.ring.fill(0);
                let mut in_window = 0u64;
                for b in 1..=SAMPLE_CAP {
                    let slot = (b as usize - 1) % w;
                    let s = self.dist.sample(rng);
                    in_window = in_window + s - self.ring[slot];
                    self.ring[slot] = s;
                    if in_window >= self.needed {
                        return Ok(b);
                    }
                }
                Err(QcsError::SamplerOverrun)
            }
        }
    }
}

/// How a set of B moments was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentMethod {
    ClosedForm,
    Series,
    MonteCarlo,
}

impl MomentMethod {
    pub fn label(self) -> &'static str {
        match self {
            MomentMethod::ClosedForm => "closed_form",
            MomentMethod::Series => "series",
            MomentMethod::MonteCarlo => "monte_carlo",
        }
    }
}

/// Standard errors attached to Monte Carlo moments.
#[derive(Debug, Clone, Copy)]
pub struct MomentStdErr {
    pub se_m1: f64,
    pub se_m2: f64,
    pub cov: f64,
}

/// B moments with provenance.
#[derive(Debug, Clone, Copy)]
pub struct BMoments {
    pub moments: MomentPair,
    pub stderr: Option<MomentStdErr>,
    pub method: MomentMethod,
}

/// Sampling budget for moment estimation where no analytic route exists.
#[derive(Debug, Clone, Copy)]
pub struct McBudget {
    pub samples: u64,
    pub seed: u64,
}

impl McBudget {
    pub fn new(samples: u64, seed: u64) -> Self {
        Self { samples, seed }
    }
}

impl Default for McBudget {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 1,
        }
    }
}

/// Routes a window spec to its moment method: closed form when p = 1 or
/// the window is infinite with m = 1, the survival series for an infinite
/// window with m > 1, and Monte Carlo for a finite window with p < 1.
pub fn b_moments(spec: &WindowSpec, mc: &McBudget) -> Result<BMoments> {
    if spec.p == 1.0 || (spec.window == Window::Infinite && spec.batch_size == 1) {
        return Ok(BMoments {
            moments: spec.exact_moments()?,
            stderr: None,
            method: MomentMethod::ClosedForm,
        });
    }
    if spec.window == Window::Infinite {
        return Ok(BMoments {
            moments: spec.survival_inf_multi(TAIL_TOL)?.moments(),
            stderr: None,
            method: MomentMethod::Series,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    let sampled = spec.sample_moments(mc.samples, &mut rng)?;
    Ok(BMoments {
        moments: sampled.moments,
        stderr: Some(MomentStdErr {
            se_m1: sampled.se_m1,
            se_m2: sampled.se_m2,
            cov: sampled.cov,
        }),
        method: MomentMethod::MonteCarlo,
    })
}

/// Binomial(m, p) pmf for counts 0..=cap (cap clamped to m). Small m uses
/// the stable ratio recurrence from (1-p)^m; larger m goes through
/// log-gamma so the binomial coefficients cannot overflow.
fn binomial_pmf_prefix(m: u64, p: f64, cap: u32) -> Vec<f64> {
    let cap = (cap as u64).min(m) as usize;
    let q = 1.0 - p;
    if p == 1.0 {
        let mut v = vec![0.0; cap + 1];
        if m as usize <= cap {
            v[m as usize] = 1.0;
        }
        return v;
    }
    if m <= 20 && q > 1e-12 {
        let mut v = Vec::with_capacity(cap + 1);
        let mut cur = q.powi(m as i32);
        v.push(cur);
        for i in 0..cap as u64 {
            cur *= (m - i) as f64 / (i + 1) as f64 * (p / q);
            v.push(cur);
        }
        v
    } else {
        let (ln_p, ln_q) = (p.ln(), q.ln());
        let ln_gamma_m1 = libm::lgamma(m as f64 + 1.0);
        (0..=cap)
            .map(|i| {
                let i_f = i as f64;
                let rest = m as f64 - i_f;
                let ln_choose = ln_gamma_m1 - libm::lgamma(i_f + 1.0) - libm::lgamma(rest + 1.0);
                let tail = if rest == 0.0 { 0.0 } else { rest * ln_q };
                (ln_choose + i_f * ln_p + tail).exp()
            })
            .collect()
    }
}

/// Geometric bounds on the neglected series mass past index `b_max`.
///
/// Any q = ceil(n/m) consecutive batches deliver at least n successes with
/// probability delta = Pr[Binomial(q m, p) >= n], independent of the state
/// (the q batches fit inside any feasible window), so
/// Pr[B > b_max + j] <= p_last * r^floor(j/q) with r = 1 - delta.
/// Returns bounds on sum Pr[B > b] and on sum (2b + 1) Pr[B > b] over
/// b > b_max.
fn tail_bounds(p: f64, m: u32, n: u32, b_max: usize, p_last: f64) -> (f64, f64) {
    let q = n.div_ceil(m) as f64;
    let trials = n.div_ceil(m) as u64 * m as u64;
    // r computed as the transient mass directly, avoiding the 1 - delta
    // cancellation when absorption is nearly certain.
    let r = binomial_pmf_prefix(trials, p, n - 1)
        .iter()
        .sum::<f64>()
        .min(1.0);
    if r <= 0.0 {
        return (0.0, 0.0);
    }
    if r >= 1.0 {
        // Absorption mass below f64 resolution; no finite bound.
        return (f64::INFINITY, f64::INFINITY);
    }
    let geo = r / (1.0 - r);
    let sum_r = (q - 1.0) + q * geo;
    let sum_jr = q * (q - 1.0) / 2.0 / (1.0 - r) + q * q * geo / (1.0 - r);
    let tail1 = p_last * sum_r;
    let tail2 = p_last * ((2.0 * b_max as f64 + 1.0) * sum_r + 2.0 * sum_jr);
    (tail1, tail2)
}

/// Transient-state space of the absorbing chain behind B.
enum Chain {
    /// Infinite window: cumulative success count 0..n-1.
    Cumulative { needed: usize },
    /// Finite window: the last w-1 batch success counts, base-`alphabet`
    /// encoded with the oldest batch in the lowest digit.
    Sliding {
        alphabet: usize,
        slots: usize,
        append_scale: usize,
        digit_sum: Vec<u16>,
        needed: usize,
    },
}

impl Chain {
    fn build(spec: &WindowSpec) -> Result<Chain> {
        let n = spec.needed as usize;
        match spec.window {
            Window::Infinite => {
                if n as f64 > DP_STATE_LIMIT {
                    return Err(QcsError::StateSpaceTooLarge {
                        states: n as f64,
                        limit: DP_STATE_LIMIT,
                    });
                }
                Ok(Chain::Cumulative { needed: n })
            }
            Window::Finite(w) => {
                // Stored batch counts never reach n (the state would have
                // been absorbed), so the per-slot alphabet is min(m, n-1)+1.
                let alphabet = (spec.batch_size.min(spec.needed - 1) + 1) as usize;
                let slots = w as usize - 1;
                let states = (alphabet as f64).powi(slots as i32);
                if states > DP_STATE_LIMIT {
                    return Err(QcsError::StateSpaceTooLarge {
                        states,
                        limit: DP_STATE_LIMIT,
                    });
                }
                let count = states as usize;
                let mut digit_sum = vec![0u16; count];
                for v in 1..count {
                    digit_sum[v] = digit_sum[v / alphabet] + (v % alphabet) as u16;
                }
                let append_scale = if slots > 0 { count / alphabet } else { 0 };
                Ok(Chain::Sliding {
                    alphabet,
                    slots,
                    append_scale,
                    digit_sum,
                    needed: n,
                })
            }
        }
    }

    fn count(&self) -> usize {
        match self {
            Chain::Cumulative { needed } => *needed,
            Chain::Sliding { digit_sum, .. } => digit_sum.len(),
        }
    }

    /// Visits every transition out of `state` that stays transient; draws
    /// at or above the absorption threshold n - (window sum) complete the
    /// request and leave the chain.
    fn for_each_transition(&self, state: usize, pmf: &[f64], mut visit: impl FnMut(usize, f64)) {
        match self {
            Chain::Cumulative { needed } => {
                let threshold = needed - state;
                for (i, &pr) in pmf.iter().enumerate().take(threshold) {
                    if pr > 0.0 {
                        visit(state + i, pr);
                    }
                }
            }
            Chain::Sliding {
                alphabet,
                slots,
                append_scale,
                digit_sum,
                needed,
            } => {
                // Saturating: enumerated-but-unreachable states whose
                // digits already sum past n get no outgoing transitions.
                let threshold = needed.saturating_sub(digit_sum[state] as usize);
                let base = if *slots > 0 { state / alphabet } else { 0 };
                for (i, &pr) in pmf.iter().enumerate().take(threshold) {
                    if pr > 0.0 {
                        let target = if *slots > 0 {
                            base + i * append_scale
                        } else {
                            0
                        };
                        visit(target, pr);
                    }
                }
            }
        }
    }
}

/// Hitting-time moments via the linear systems (I - Q) h = 1 and
/// (I - Q) g = 2h - 1, where the second right-hand side uses Q h = h - 1.
fn dense_hitting_moments(chain: &Chain, pmf: &[f64]) -> Result<MomentPair> {
    let count = chain.count();
    let mut a = vec![0.0f64; count * count];
    for s in 0..count {
        a[s * count + s] = 1.0;
        chain.for_each_transition(s, pmf, |t, pr| a[s * count + t] -= pr);
    }
    let piv = lu_factor(&mut a, count)?;
    let mut h = vec![1.0f64; count];
    lu_solve(&a, count, &piv, &mut h);
    let mut g: Vec<f64> = h.iter().map(|&hi| 2.0 * hi - 1.0).collect();
    lu_solve(&a, count, &piv, &mut g);
    Ok(MomentPair { m1: h[0], m2: g[0] })
}

/// Forward distribution evolution: accumulates E[B] = sum Pr[B > b] and
/// E[B^2] = sum (2b + 1) Pr[B > b] until the survival mass drops below
/// 1e-14.
fn evolve_hitting_moments(chain: &Chain, pmf: &[f64]) -> Result<MomentPair> {
    let count = chain.count();
    let mut dist = vec![0.0f64; count];
    let mut scratch = vec![0.0f64; count];
    dist[0] = 1.0;
    let mut m1 = 1.0f64;
    let mut m2 = 1.0f64;
    let tol = 1e-14;
    let mut b = 0u64;
    loop {
        b += 1;
        scratch.fill(0.0);
        for (s, &d) in dist.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            chain.for_each_transition(s, pmf, |t, pr| scratch[t] += d * pr);
        }
        std::mem::swap(&mut dist, &mut scratch);
        let survive: f64 = dist.iter().sum();
        m1 += survive;
        m2 += (2 * b + 1) as f64 * survive;
        if survive < tol {
            return Ok(MomentPair { m1, m2 });
        }
        if b > SERIES_CAP {
            return Err(QcsError::NonConvergence(format!(
                "distribution evolution exceeded {SERIES_CAP} batches"
            )));
        }
    }
}

/// In-place LU factorization with partial pivoting; `piv[c]` records the
/// row swapped into position at step c.
fn lu_factor(a: &mut [f64], n: usize) -> Result<Vec<usize>> {
    let mut piv = vec![0usize; n];
    for col in 0..n {
        let mut pr = col;
        let mut pmax = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > pmax {
                pmax = v;
                pr = row;
            }
        }
        if pmax < 1e-300 {
            return Err(QcsError::NonConvergence(
                "singular hitting-time system".into(),
            ));
        }
        if pr != col {
            for c in 0..n {
                a.swap(col * n + c, pr * n + c);
            }
        }
        piv[col] = pr;
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            a[row * n + col] = f;
            if f != 0.0 {
                for c in col + 1..n {
                    a[row * n + c] -= f * a[col * n + c];
                }
            }
        }
    }
    Ok(piv)
}

fn lu_solve(a: &[f64], n: usize, piv: &[usize], b: &mut [f64]) {
    // Whole rows (including computed multipliers) were interchanged during
    // factorization, so the permutation must be applied to b in full
    // before the triangular solves.
    for (col, &swap_row) in piv.iter().enumerate() {
        if swap_row != col {
            b.swap(col, swap_row);
        }
    }
    for col in 0..n {
        let bc = b[col];
        if bc != 0.0 {
            for row in col + 1..n {
                b[row] -= a[row * n + col] * bc;
            }
        }
    }
    for col in (0..n).rev() {
        b[col] /= a[col * n + col];
        let bc = b[col];
        for row in 0..col {
            b[row] -= a[row * n + col] * bc;
        }
    }
}
