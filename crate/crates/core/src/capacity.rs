//! Capacity solvers: the largest user count and the longest arm length
//! that keep the load below one.

use crate::error::{QcsError, Result};
use crate::model::{PacketSource, Scenario, ValidatedScenario};
use crate::service::service_moments;
use crate::window::{b_moments, McBudget, MomentMethod};

/// How a capacity boundary was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    ClosedForm,
    Bisection,
}

/// A solved capacity boundary (users or km).
#[derive(Debug, Clone, Copy)]
pub struct CapacityResult {
    pub value: f64,
    /// |rho - 1| evaluated at the returned boundary.
    pub residual_load: f64,
    pub method: SolveMethod,
    /// The solver hit the upper end of its bracket without crossing
    /// rho = 1. The travel term alone puts the load at one on the bracket
    /// end, so this cannot happen unless the numerics disagree.
    pub maxed_out: bool,
    /// Window moments under the boundary came from Monte Carlo sampling,
    /// so the boundary is itself an estimate.
    pub monte_carlo: bool,
}

const BISECT_STEPS: u32 = 200;
const LOAD_TOL: f64 = 1e-6;
const WIDTH_TOL_KM: f64 = 1e-6;
/// Stand-in for the L -> 0+ limit when probing the load floor.
const NEAR_ZERO_KM: f64 = 1e-9;

/// Critical number of users: the largest u with load at most one,
/// floor(1/2 + 1/2 sqrt(1 + 8k / (lambda0 m E[T_service]))).
///
/// The service time does not depend on u, so one moment evaluation
/// suffices for the whole formula.
pub fn u_crit(vs: &ValidatedScenario, mc: &McBudget) -> Result<CapacityResult> {
    let b = b_moments(&vs.window_spec(), mc)?;
    let service = service_moments(vs, &b.moments);
    let k = vs.scenario.network.k as f64;
    let lambda0 = vs.scenario.request.rate_per_pair;
    let m = vs.batch_size as f64;
    let users = (0.5 + 0.5 * (1.0 + 8.0 * k / (lambda0 * m * service.m1)).sqrt()).floor();
    let residual = (vs.load_at(users as u32, service.m1) - 1.0).abs();
    Ok(CapacityResult {
        value: users,
        residual_load: residual,
        method: SolveMethod::ClosedForm,
        maxed_out: false,
        monte_carlo: b.method == MomentMethod::MonteCarlo,
    })
}

/// Critical distance: the arm length at which the load reaches one for
/// `users` users, everything else taken from `scenario` (whose own u and
/// L are ignored).
///
/// With a fixed success probability the boundary is explicit. With the
/// all-photonic model p depends on L, making the load equation
/// transcendental; it is solved by bisection over (0, U], where
/// U = ck / (lambda0 u(u-1) m) bounds the boundary from above (the travel
/// term alone saturates the load there). Returns 0 when even a vanishing
/// arm overloads the system.
///
/// Monte Carlo window moments reuse the same seed at every probed L
/// (common random numbers), keeping the sampled load monotone in practice.
pub fn l_crit(scenario: &Scenario, users: u32, mc: &McBudget) -> Result<CapacityResult> {
    if users < 2 {
        return Err(QcsError::InvalidParameter(
            "critical distance needs at least 2 users".into(),
        ));
    }
    let mut base = scenario.clone();
    base.network.users = users;

    // rho with mc: whether the estimate came from sampling; bound: whether
    // this is only a cheap lower bound (returned when it already certifies
    // overload, sparing the sampler from hopeless success probabilities).
    struct Probe {
        rho: f64,
        mc: bool,
        bound: bool,
    }
    let probe = |arm_km: f64| -> Result<Probe> {
        let mut sc = base.clone();
        sc.network.arm_km = arm_km;
        let vs = sc.validate()?;
        let lb = load_lower_bound(&vs);
        if lb >= 1.0 {
            return Ok(Probe {
                rho: lb,
                mc: false,
                bound: true,
            });
        }
        let b = b_moments(&vs.window_spec(), mc)?;
        let service = service_moments(&vs, &b.moments);
        Ok(Probe {
            rho: crate::queueing::load(&vs, service.m1),
            mc: b.method == MomentMethod::MonteCarlo,
            bound: false,
        })
    };

    let k = base.network.k as f64;
    let u = users as f64;
    let m = base.strategy.batch_size(base.network.k) as f64;
    let lambda0 = base.request.rate_per_pair;
    let upper = base.network.light_speed * k / (lambda0 * u * (u - 1.0) * m);

    let floor = probe(NEAR_ZERO_KM)?;
    let mut any_mc = floor.mc;
    if floor.rho >= 1.0 {
        return Ok(CapacityResult {
            value: 0.0,
            residual_load: (floor.rho - 1.0).abs(),
            method: SolveMethod::Bisection,
            maxed_out: false,
            monte_carlo: any_mc,
        });
    }

    if let PacketSource::Fixed(_) = base.network.source {
        // p does not depend on L: rho(L) = 1 solves to
        // L = U - (c t_fwd / 2)(2N + E[B]).
        let vs_probe = {
            let mut sc = base.clone();
            sc.network.arm_km = 1.0;
            sc.validate()?
        };
        let b = b_moments(&vs_probe.window_spec(), mc)?;
        let net = &base.network;
        let value = upper
            - net.light_speed * net.fwd_us / 2.0 * (2.0 * net.repeaters as f64 + b.moments.m1);
        let value = value.max(0.0);
        let check = probe(value.max(NEAR_ZERO_KM))?;
        return Ok(CapacityResult {
            value,
            residual_load: (check.rho - 1.0).abs(),
            method: SolveMethod::ClosedForm,
            maxed_out: false,
            monte_carlo: b.method == MomentMethod::MonteCarlo,
        });
    }

    let top = probe(upper)?;
    any_mc |= top.mc;
    if top.rho < 1.0 {
        // Unreachable by construction; reported rather than guessed away.
        return Ok(CapacityResult {
            value: upper,
            residual_load: (top.rho - 1.0).abs(),
            method: SolveMethod::Bisection,
            maxed_out: true,
            monte_carlo: any_mc,
        });
    }

    let (mut lo, mut g_lo) = (NEAR_ZERO_KM, floor.rho - 1.0);
    let (mut hi, mut g_hi) = (upper, top.rho - 1.0);
    let mut hi_is_bound = top.bound;
    for _ in 0..BISECT_STEPS {
        let mid = 0.5 * (lo + hi);
        let sample = probe(mid)?;
        any_mc |= sample.mc;
        let g_mid = sample.rho - 1.0;
        // The load is increasing in L (both travel time and E[B] grow);
        // check the sampled bracket stays consistent with that. Lower
        // bounds only certify the sign, so they are exempt.
        let slack = if any_mc { 0.05 } else { 1e-9 };
        if !sample.bound && (g_mid < g_lo - slack || (!hi_is_bound && g_mid > g_hi + slack)) {
            return Err(QcsError::NonConvergence(format!(
                "load not monotone across bracket: rho({lo:.6}) = {:.6}, rho({mid:.6}) = {:.6}, rho({hi:.6}) = {:.6}",
                g_lo + 1.0,
                sample.rho,
                g_hi + 1.0
            )));
        }
        if (!sample.bound && g_mid.abs() < LOAD_TOL) || hi - lo < WIDTH_TOL_KM {
            return Ok(CapacityResult {
                value: mid,
                residual_load: g_mid.abs(),
                method: SolveMethod::Bisection,
                maxed_out: false,
                monte_carlo: any_mc,
            });
        }
        if g_mid < 0.0 {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
            g_hi = g_mid;
            hi_is_bound = sample.bound;
        }
    }
    Err(QcsError::NonConvergence(format!(
        "critical distance bisection did not settle after {BISECT_STEPS} steps"
    )))
}

/// A load lower bound that is cheap for any p: the batch count is at least
/// ceil(n/m) (deterministic floor), at least n/(m p) (each batch delivers
/// m p successes in expectation, and completion needs n in total), and for
/// a finite window at least 1/(2 pi) where pi = C(w m, n) p^n bounds the
/// probability that any given window holds n successes.
fn load_lower_bound(vs: &ValidatedScenario) -> f64 {
    let n = vs.scenario.request.packets;
    let m = vs.batch_size;
    let mut batches = n.div_ceil(m) as f64;
    batches = batches.max(n as f64 / (m as f64 * vs.p));
    if let crate::model::Window::Finite(w) = vs.scenario.request.window {
        let trials = w as u64 * m as u64;
        let ln_pi = ln_choose(trials as f64, n as f64) + n as f64 * vs.p.ln();
        if ln_pi < 0.0 {
            batches = batches.max(0.5 * (-ln_pi).exp());
        }
    }
    let service_lb = vs.service_offset() + vs.service_slope() * batches;
    crate::queueing::load(vs, service_lb)
}

fn ln_choose(n: f64, k: f64) -> f64 {
    libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, Strategy, Window};
    use crate::queueing;

    fn small(k: u32, strategy: Strategy) -> ValidatedScenario {
        presets::small_budget(5, k, strategy).validate().unwrap()
    }

    #[test]
    fn small_budget_critical_users() {
        let mc = McBudget::default();
        let seq = u_crit(&small(7, Strategy::Sequential), &mc).unwrap();
        assert_eq!(seq.value, 14.0);
        let par = u_crit(&small(7, Strategy::Parallel), &mc).unwrap();
        assert_eq!(par.value, 13.0);

        // k = 1: the strategies coincide.
        let seq1 = u_crit(&small(1, Strategy::Sequential), &mc).unwrap();
        let par1 = u_crit(&small(1, Strategy::Parallel), &mc).unwrap();
        assert_eq!(seq1.value, 5.0);
        assert_eq!(par1.value, 5.0);
    }

    #[test]
    fn parallel_critical_users_flat_beyond_request_size() {
        let mc = McBudget::default();
        for k in 8..=15 {
            let r = u_crit(&small(k, Strategy::Parallel), &mc).unwrap();
            assert_eq!(r.value, 13.0, "k = {k}");
        }
    }

    #[test]
    fn boundary_brackets_the_load() {
        let mc = McBudget::default();
        for k in [1, 3, 7, 12] {
            for strategy in [Strategy::Sequential, Strategy::Parallel] {
                let vs = small(k, strategy);
                let r = u_crit(&vs, &mc).unwrap();
                let b = vs.window_spec().exact_moments().unwrap();
                let service = service_moments(&vs, &b);
                let at = |u: u32| vs.load_at(u, service.m1);
                assert!(at(r.value as u32) <= 1.0 + 1e-12);
                assert!(at(r.value as u32 + 1) > 1.0);
                let _ = queueing::load(&vs, service.m1);
            }
        }
    }

    #[test]
    fn sequential_scaling_with_stations() {
        let mc = McBudget::default();
        let at = |k: u32| u_crit(&small(k, Strategy::Sequential), &mc).unwrap().value;
        for k in [4u32, 16, 64] {
            let ratio = at(4 * k) / at(k);
            assert!((1.8..=2.2).contains(&ratio), "ratio {ratio} at k = {k}");
        }
    }

    #[test]
    fn lossy_delivery_cannot_raise_capacity() {
        let mc = McBudget::default();
        for strategy in [Strategy::Sequential, Strategy::Parallel] {
            let ideal = presets::small_budget(5, 7, strategy).validate().unwrap();
            let mut lossy_sc = presets::small_budget(5, 7, strategy);
            lossy_sc.network.source = crate::model::PacketSource::Fixed(0.7);
            lossy_sc.request.window = Window::Infinite;
            let lossy = lossy_sc.validate().unwrap();
            let a = u_crit(&ideal, &mc).unwrap().value;
            let b = u_crit(&lossy, &mc).unwrap().value;
            assert!(b <= a, "{strategy}: lossy {b} vs ideal {a}");
        }
    }

    fn going_far(strategy: Strategy, repeaters: u32) -> Scenario {
        let mut sc = presets::large_budget(10, 12, strategy, Window::Infinite);
        sc.network.repeaters = repeaters;
        sc
    }

    #[test]
    fn critical_distance_respects_travel_bound() {
        let mc = McBudget::default();
        for users in [2u32, 5, 10, 15] {
            for n in [0u32, 2, 5] {
                let r = l_crit(&going_far(Strategy::Sequential, n), users, &mc).unwrap();
                let u = users as f64;
                let upper = 0.2 * 12.0 / (1e-4 * u * (u - 1.0));
                assert!(r.value <= upper + 1e-9);
                assert!(!r.maxed_out);
                if r.value > 0.0 {
                    assert!(r.residual_load < 2e-6 || r.method == SolveMethod::Bisection);
                }
            }
        }
    }

    #[test]
    fn repeater_tradeoff_at_ten_users() {
        let mc = McBudget::default();
        let five = l_crit(&going_far(Strategy::Sequential, 5), 10, &mc).unwrap();
        let ten = l_crit(&going_far(Strategy::Sequential, 10), 10, &mc).unwrap();
        assert!(
            five.value > ten.value,
            "N=5 gives {} km, N=10 gives {} km",
            five.value,
            ten.value
        );
    }

    #[test]
    fn distance_shrinks_with_more_users() {
        let mc = McBudget::default();
        for n in [0u32, 5] {
            let mut prev = f64::INFINITY;
            for users in 2..=16 {
                let r = l_crit(&going_far(Strategy::Sequential, n), users, &mc).unwrap();
                if prev > 0.0 && r.value > 0.0 {
                    assert!(r.value < prev, "N={n}, u={users}: {} !< {prev}", r.value);
                }
                prev = r.value;
            }
        }
    }

    #[test]
    fn fixed_probability_boundary_is_explicit() {
        let mut sc = presets::small_budget(5, 7, Strategy::Sequential);
        sc.network.source = crate::model::PacketSource::Fixed(0.8);
        sc.request.window = Window::Infinite;
        let mc = McBudget::default();
        let r = l_crit(&sc, 5, &mc).unwrap();
        assert_eq!(r.method, SolveMethod::ClosedForm);
        assert!(r.value > 0.0);
        assert!(r.residual_load < 1e-9);
        assert!(!r.monte_carlo);

        // Verify against the load recomputed at the boundary.
        sc.network.arm_km = r.value;
        let vs = sc.validate().unwrap();
        let b = vs.window_spec().exact_moments().unwrap();
        let service = service_moments(&vs, &b);
        assert!((queueing::load(&vs, service.m1) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sequential_reaches_farther_than_parallel() {
        // One station per request leaves the other k-1 free, so at the
        // same geometry the sequential boundary sits at or beyond the
        // parallel one.
        let mc = McBudget::default();
        for users in [4u32, 8, 12] {
            for repeaters in [0u32, 2, 5] {
                let seq = l_crit(&going_far(Strategy::Sequential, repeaters), users, &mc).unwrap();
                let par = l_crit(&going_far(Strategy::Parallel, repeaters), users, &mc).unwrap();
                assert!(
                    seq.value >= par.value - 1e-6,
                    "u={users}, N={repeaters}: sequential {} < parallel {}",
                    seq.value,
                    par.value
                );
            }
        }
    }

    #[test]
    fn overloaded_even_at_zero_distance() {
        // Many users and many repeaters: the forwarding delays alone
        // exceed the service budget, so the critical distance is zero.
        let r = l_crit(
            &going_far(Strategy::Sequential, 10),
            10,
            &McBudget::default(),
        )
        .unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn monte_carlo_backed_solve_is_flagged_and_deterministic() {
        let mut sc = presets::large_budget(6, 3, Strategy::Parallel, Window::Finite(8));
        sc.network.repeaters = 1;
        let mc = McBudget::new(20_000, 99);
        let a = l_crit(&sc, 6, &mc).unwrap();
        let b = l_crit(&sc, 6, &mc).unwrap();
        assert!(a.monte_carlo);
        assert_eq!(a.value, b.value);
    }
}
