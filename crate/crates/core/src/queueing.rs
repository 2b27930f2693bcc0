//! Waiting times of the M/G/s request queue and mean sojourn assembly.
//!
//! Arrivals are Poisson with the aggregate rate lambda. Sequential
//! distribution gives s = k servers, parallel gives s = 1. The mean wait
//! is exact for s = 1 (M/G/1) and approximated for s > 1 by scaling the
//! M/M/s wait with (C^2 + 1)/2, which is accurate while the service-time
//! coefficient of variation stays small.

use crate::error::{QcsError, Result};
use crate::model::ValidatedScenario;
use crate::service::{c2_service, service_moments, ServiceMoments};
use crate::window::{b_moments, BMoments, McBudget};

/// Which formula produced a waiting-time estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaitMethod {
    ExactMg1,
    ExactMms,
    LeeLongton,
    Simulated,
}

impl WaitMethod {
    pub fn label(self) -> &'static str {
        match self {
            WaitMethod::ExactMg1 => "mg1",
            WaitMethod::ExactMms => "mms",
            WaitMethod::LeeLongton => "lee_longton",
            WaitMethod::Simulated => "simulated",
        }
    }
}

/// A mean waiting time tagged with its provenance. An unstable queue
/// (load at or above one) is a value, not an error: `stable` is false and
/// `mean_wait` is the infinity marker, so sweeps can render the region
/// without propagating NaNs.
#[derive(Debug, Clone, Copy)]
pub struct WaitEstimate {
    pub mean_wait: f64,
    pub method: WaitMethod,
    pub stable: bool,
}

impl WaitEstimate {
    fn unstable(method: WaitMethod) -> Self {
        Self {
            mean_wait: f64::INFINITY,
            method,
            stable: false,
        }
    }

    fn stable(mean_wait: f64, method: WaitMethod) -> Self {
        Self {
            mean_wait,
            method,
            stable: true,
        }
    }
}

/// Inputs for the multi-server approximation.
#[derive(Debug, Clone, Copy)]
pub struct QueueInputs {
    /// Aggregate arrival rate, 1/us.
    pub lambda: f64,
    /// Server count s.
    pub servers: u32,
    pub service: ServiceMoments,
}

/// System load rho = lambda0 u(u-1) m / (2k) * E[T_service].
pub fn load(vs: &ValidatedScenario, mean_service: f64) -> f64 {
    vs.load_at(vs.scenario.network.users, mean_service)
}

/// Exact M/G/1 mean wait (Pollaczek-Khinchine):
/// lambda E[T^2] / (2 (1 - lambda E[T])).
pub fn wait_mg1(lambda: f64, service: &ServiceMoments) -> WaitEstimate {
    if lambda * service.m1 >= 1.0 {
        return WaitEstimate::unstable(WaitMethod::ExactMg1);
    }
    let wait = lambda * service.m2 / (2.0 * (1.0 - lambda * service.m1));
    WaitEstimate::stable(wait, WaitMethod::ExactMg1)
}

/// Exact M/M/s mean wait (Erlang C over the free capacity), evaluated in
/// log space so the factorial terms survive large server counts.
pub fn wait_mms(lambda: f64, mu: f64, servers: u32) -> WaitEstimate {
    let s = servers as f64;
    if lambda <= 0.0 {
        return WaitEstimate::stable(0.0, WaitMethod::ExactMms);
    }
    let offered = lambda / mu;
    if offered >= s {
        return WaitEstimate::unstable(WaitMethod::ExactMms);
    }
    let z = 1.0 - offered / s;
    let ln_a = offered.ln();
    // ln of each Erlang-sum term: i ln a - ln i!, plus the waiting term
    // s ln a - ln s! - ln z.
    let mut terms = Vec::with_capacity(servers as usize + 1);
    for i in 0..servers {
        let i = i as f64;
        terms.push(i * ln_a - libm::lgamma(i + 1.0));
    }
    let wait_term = s * ln_a - libm::lgamma(s + 1.0) - z.ln();
    terms.push(wait_term);
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    let erlang_c = (wait_term - max).exp() / denom;
    WaitEstimate::stable(erlang_c / (s * mu * z), WaitMethod::ExactMms)
}

/// Multi-server M/G/s mean wait: exact for one server, otherwise the
/// (C^2 + 1)/2 scaling of the matching M/M/s queue.
pub fn wait_mgs_approx(inputs: &QueueInputs) -> WaitEstimate {
    if inputs.servers == 1 {
        return wait_mg1(inputs.lambda, &inputs.service);
    }
    let mms = wait_mms(inputs.lambda, 1.0 / inputs.service.m1, inputs.servers);
    if !mms.stable {
        return WaitEstimate::unstable(WaitMethod::LeeLongton);
    }
    let factor = (c2_service(&inputs.service) + 1.0) / 2.0;
    WaitEstimate::stable(factor * mms.mean_wait, WaitMethod::LeeLongton)
}

/// Mean waiting time for a scenario with known service moments, routed to
/// the exact M/G/1 result when s = 1 and to the approximation otherwise.
pub fn wait_for(vs: &ValidatedScenario, service: &ServiceMoments) -> WaitEstimate {
    wait_mgs_approx(&QueueInputs {
        lambda: vs.arrival_rate,
        servers: vs.servers,
        service: *service,
    })
}

/// Full analytic picture of one scenario.
#[derive(Debug, Clone)]
pub struct SojournReport {
    pub b: BMoments,
    pub service: ServiceMoments,
    pub rho: f64,
    pub wait: WaitEstimate,
    /// Mean sojourn time t_control + E[T_wait] + E[T_service]; the
    /// infinity marker when the queue is unstable.
    pub mst: f64,
    /// Standard error propagated from Monte Carlo window moments.
    pub mst_se: Option<f64>,
    pub stable: bool,
}

/// Computes the report whether or not the scenario is overloaded.
pub fn analyze(vs: &ValidatedScenario, mc: &McBudget) -> Result<SojournReport> {
    let b = b_moments(&vs.window_spec(), mc)?;
    Ok(analyze_with(vs, &b))
}

/// Like [`analyze`], but reuses already-computed window moments (they do
/// not depend on the user count, so grids cache them per batch size).
pub fn analyze_with(vs: &ValidatedScenario, b: &BMoments) -> SojournReport {
    let service = service_moments(vs, &b.moments);
    let rho = load(vs, service.m1);
    let wait = wait_for(vs, &service);
    let (mst, mst_se) = if wait.stable {
        let mst = vs.scenario.network.control_us + wait.mean_wait + service.m1;
        (mst, mst_stderr(vs, b))
    } else {
        (f64::INFINITY, None)
    };
    SojournReport {
        b: *b,
        service,
        rho,
        wait,
        mst,
        mst_se,
        stable: wait.stable,
    }
}

/// Mean sojourn time; an overloaded system is an error here since no
/// steady state exists.
pub fn mean_sojourn(vs: &ValidatedScenario, mc: &McBudget) -> Result<f64> {
    let report = analyze(vs, mc)?;
    if !report.stable {
        return Err(QcsError::Overloaded { rho: report.rho });
    }
    Ok(report.mst)
}

/// MST evaluated at explicit batch-count moments; None when unstable.
fn mst_given(vs: &ValidatedScenario, b1: f64, b2: f64) -> Option<f64> {
    let service = service_moments(vs, &crate::model::MomentPair { m1: b1, m2: b2 });
    let wait = wait_for(vs, &service);
    wait.stable
        .then_some(vs.scenario.network.control_us + wait.mean_wait + service.m1)
}

/// First-order propagation of Monte Carlo moment errors into the MST:
/// central differences in (E[B], E[B^2]) combined with their covariance.
fn mst_stderr(vs: &ValidatedScenario, b: &BMoments) -> Option<f64> {
    let err = b.stderr?;
    let (b1, b2) = (b.moments.m1, b.moments.m2);
    let h1 = (1e-5 * b1.abs()).max(1e-9);
    let h2 = (1e-5 * b2.abs()).max(1e-9);
    let g1 = (mst_given(vs, b1 + h1, b2)? - mst_given(vs, b1 - h1, b2)?) / (2.0 * h1);
    let g2 = (mst_given(vs, b1, b2 + h2)? - mst_given(vs, b1, b2 - h2)?) / (2.0 * h2);
    let var =
        g1 * g1 * err.se_m1 * err.se_m1 + g2 * g2 * err.se_m2 * err.se_m2 + 2.0 * g1 * g2 * err.cov;
    Some(var.max(0.0).sqrt())
}
