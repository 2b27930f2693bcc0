//! Service-time moments. The service time is affine in the batch count:
//! T_service = x + y B with x = 2L/c + 2 t_fwd N (travel plus per-hop
//! processing of the first batch) and y = t_fwd (spacing between batches),
//! so its moments follow directly from the moments of B.

use crate::model::{MomentPair, ValidatedScenario};

/// First two raw moments of the service time, with the affine constants
/// they were built from.
#[derive(Debug, Clone, Copy)]
pub struct ServiceMoments {
    /// E[T_service], us.
    pub m1: f64,
    /// E[T_service^2], us^2.
    pub m2: f64,
    /// Constant part x = 2L/c + 2 t_fwd N, us.
    pub offset: f64,
    /// Per-batch part y = t_fwd, us.
    pub slope: f64,
}

impl ServiceMoments {
    /// Bare moments without the affine decomposition; enough for the
    /// waiting-time formulas, which only consume the first two moments.
    pub fn from_raw(m1: f64, m2: f64) -> Self {
        Self {
            m1,
            m2,
            offset: 0.0,
            slope: 0.0,
        }
    }
}

/// Maps batch-count moments to service-time moments:
/// E[T] = x + y E[B] and E[T^2] = x^2 + 2xy E[B] + y^2 E[B^2].
pub fn service_moments(vs: &ValidatedScenario, b: &MomentPair) -> ServiceMoments {
    let x = vs.service_offset();
    let y = vs.service_slope();
    ServiceMoments {
        m1: x + y * b.m1,
        m2: x * x + 2.0 * x * y * b.m1 + y * y * b.m2,
        offset: x,
        slope: y,
    }
}

/// Squared coefficient of variation of the service time. For the affine
/// form above this never exceeds the squared coefficient of variation of
/// B itself.
pub fn c2_service(sm: &ServiceMoments) -> f64 {
    (sm.m2 / (sm.m1 * sm.m1) - 1.0).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, MomentPair, Strategy};
    use crate::window::TAIL_TOL;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mean_from_batch_count() {
        // L = 1 km, c = 0.2, N = 0, t_fwd = 100: x = 10, y = 100.
        let vs = presets::small_budget(5, 7, Strategy::Sequential)
            .validate()
            .unwrap();
        let sm = service_moments(&vs, &MomentPair { m1: 7.0, m2: 49.0 });
        assert_eq!(sm.m1, 710.0);
    }

    #[test]
    fn deterministic_single_batch() {
        let vs = presets::small_budget(5, 7, Strategy::Parallel)
            .validate()
            .unwrap();
        let sm = service_moments(&vs, &MomentPair { m1: 1.0, m2: 1.0 });
        assert_eq!(sm.m1, 110.0);
        assert_eq!(sm.m2, 12100.0);
        assert_eq!(c2_service(&sm), 0.0);
    }

    #[test]
    fn large_budget_sequential_mean() {
        use crate::model::Window;
        let vs = presets::large_budget(5, 7, Strategy::Sequential, Window::Infinite)
            .validate()
            .unwrap();
        let b = vs.window_spec().exact_moments().unwrap();
        let sm = service_moments(&vs, &b);
        // 2L/c = 75; E[B] = 7/p with p near 0.690.
        assert!((sm.m1 - (75.0 + 100.0 * 7.0 / vs.p)).abs() < 1e-9);
        assert!((sm.m1 - 1089.3).abs() < 1.0, "m1 = {}", sm.m1);
    }

    #[test]
    fn c2_bounded_by_batch_count_c2() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let scenarios = [
            presets::small_budget(5, 7, Strategy::Sequential),
            presets::small_budget(5, 7, Strategy::Parallel),
        ];
        for _ in 0..200 {
            let mut sc = scenarios[rng.random_range(0..2usize)].clone();
            sc.network.arm_km = rng.random_range(0.5..20.0);
            sc.network.repeaters = rng.random_range(0..4u32);
            let vs = sc.validate().unwrap();
            // Random but consistent batch-count moments.
            let m1: f64 = rng.random_range(1.0..40.0);
            let c2_b: f64 = rng.random_range(0.0..2.0);
            let b = MomentPair {
                m1,
                m2: m1 * m1 * (1.0 + c2_b),
            };
            let sm = service_moments(&vs, &b);
            assert!(c2_service(&sm) <= b.c2() + 1e-12);
            assert!(sm.m2 >= sm.m1 * sm.m1 - 1e-9);
        }
    }

    #[test]
    fn strict_inequality_with_positive_offset() {
        let vs = presets::large_budget(5, 3, Strategy::Sequential, crate::model::Window::Infinite)
            .validate()
            .unwrap();
        let b = vs.window_spec().exact_moments().unwrap();
        let sm = service_moments(&vs, &b);
        assert!(b.c2() > 0.0);
        assert!(c2_service(&sm) < b.c2());
    }

    #[test]
    fn means_increase_in_geometry_and_batches() {
        let vs = presets::small_budget(5, 7, Strategy::Sequential)
            .validate()
            .unwrap();
        let base = service_moments(&vs, &MomentPair { m1: 5.0, m2: 30.0 });

        let mut longer = presets::small_budget(5, 7, Strategy::Sequential);
        longer.network.arm_km = 2.0;
        let sm = service_moments(
            &longer.validate().unwrap(),
            &MomentPair { m1: 5.0, m2: 30.0 },
        );
        assert!(sm.m1 > base.m1);

        let sm = service_moments(&vs, &MomentPair { m1: 6.0, m2: 30.0 });
        assert!(sm.m1 > base.m1);

        let sm = service_moments(&vs, &MomentPair { m1: 5.0, m2: 31.0 });
        assert!(sm.m2 > base.m2);
    }

    #[test]
    fn c2_small_on_negative_binomial_service() {
        // Infinite window, m = 1: C2 of B is (1-p)/n, and the service C2
        // sits strictly below it once travel time is added.
        let vs = presets::large_budget(5, 1, Strategy::Sequential, crate::model::Window::Infinite)
            .validate()
            .unwrap();
        let spec = vs.window_spec();
        let b = spec.exact_moments().unwrap();
        let expected_c2 = (1.0 - vs.p) / 7.0;
        assert!((b.c2() - expected_c2).abs() < 1e-12);
        let sm = service_moments(&vs, &b);
        assert!(c2_service(&sm) <= expected_c2);
        let _ = TAIL_TOL;
    }
}
