//! All-photonic repeater loss model: effective attenuation of the encoded
//! channel, end-to-end packet success probability, and the cost-optimal
//! repeater count for a given arm length.

/// Station efficiency baked into the attenuation fit. The polynomial below
/// is only published for this value; it is not a free parameter.
pub const STATION_EFFICIENCY: f64 = 0.9;

/// Default search bound for [`optimize_repeaters`].
pub const DEFAULT_REPEATER_MAX: u32 = 50;

/// Floor applied to the success probability so downstream logs stay finite
/// for absurd geometries.
const P_FLOOR: f64 = 1e-300;

/// Effective attenuation of the encoded channel, dB/km, as a function of
/// the inter-repeater spacing `hop_km`. Quartic fit for stations running a
/// [[48, 6, 8]] generalized bicycle code at 90% station efficiency.
pub fn alpha_eff(hop_km: f64) -> f64 {
    1e-6 * (277.0 * hop_km.powi(2) + 29.0 * hop_km.powi(4))
}

/// End-to-end packet success probability over a 2L path with `repeaters`
/// intermediate repeaters per arm, i.e. hops of L/(N+1) km.
pub fn p_success(arm_km: f64, repeaters: u32) -> f64 {
    let hop = arm_km / (repeaters as f64 + 1.0);
    let loss_db = alpha_eff(hop) * 2.0 * arm_km;
    10f64.powf(-loss_db / 10.0).clamp(P_FLOOR, 1.0)
}

/// Repeater count in `0..=max` minimizing the hardware cost per delivered
/// packet, (2N+1)/(L p). Ties break toward fewer repeaters. The scan is
/// exhaustive; unimodality of the cost is not assumed.
pub fn optimize_repeaters(arm_km: f64, max: u32) -> u32 {
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for n in 0..=max {
        let cost = (2.0 * n as f64 + 1.0) / (arm_km * p_success(arm_km, n));
        if cost < best_cost {
            best = n;
            best_cost = cost;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-30)
    }

    #[test]
    fn attenuation_at_reference_spacings() {
        assert!(close(alpha_eff(1.0), 3.06e-4, 1e-12));
        assert!(close(alpha_eff(7.5), 0.1073390625, 1e-12));
        assert!(alpha_eff(1e-9) < 1e-20);
    }

    #[test]
    fn attenuation_increases_with_spacing() {
        let mut prev = 0.0;
        for i in 1..200 {
            let a = alpha_eff(i as f64 * 0.25);
            assert!(a > prev);
            prev = a;
        }
    }

    #[test]
    fn success_probability_reference_points() {
        assert!(close(p_success(7.5, 0), 0.690, 1e-3));
        assert!(close(p_success(30.0, 5), 0.707, 1e-3));
        assert!(p_success(1e-6, 0) > 0.999_999);
    }

    #[test]
    fn more_repeaters_shorten_hops_and_raise_p() {
        for &l in &[5.0, 10.0, 20.0, 40.0] {
            let mut prev = 0.0;
            for n in 0..12 {
                let p = p_success(l, n);
                assert!(p > prev, "p not increasing at L={l}, N={n}");
                prev = p;
            }
        }
    }

    #[test]
    fn optimal_repeater_counts() {
        assert_eq!(optimize_repeaters(7.5, DEFAULT_REPEATER_MAX), 0);
        assert_eq!(optimize_repeaters(13.0, DEFAULT_REPEATER_MAX), 1);
        assert_eq!(optimize_repeaters(18.0, DEFAULT_REPEATER_MAX), 2);
        assert_eq!(optimize_repeaters(30.0, DEFAULT_REPEATER_MAX), 5);
    }

    #[test]
    fn optimum_grows_with_distance() {
        let mut prev = 0;
        for l in 1..=40 {
            let n = optimize_repeaters(l as f64, DEFAULT_REPEATER_MAX);
            assert!(n >= prev, "optimum dropped at L={l}");
            prev = n;
        }
    }

    #[test]
    fn success_probability_near_optimum() {
        // The cost optimum lands p in the high-0.6s to low-0.7s band.
        for &(l, n) in &[(7.5, 0u32), (13.0, 1), (18.0, 2), (30.0, 5)] {
            let p = p_success(l, n);
            assert!((0.67..=0.72).contains(&p), "p={p} at L={l}, N={n}");
        }
    }

    #[test]
    fn clamped_for_absurd_geometry() {
        let p = p_success(1e4, 0);
        assert_eq!(p, 1e-300);
    }
}
