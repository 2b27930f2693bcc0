//! Discrete-event simulation of the M/G/s request queue: Poisson arrivals,
//! an infinite FIFO queue, s servers, and service durations drawn through
//! the window-problem sampler. Used to validate the analytic waiting
//! times and to estimate sojourn times where no formula applies.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{QcsError, Result};
use crate::model::ValidatedScenario;
use crate::window::{b_moments, BatchSampler, McBudget};

/// Warmup cap when the default heuristic is used.
const WARMUP_CAP: u64 = 100_000;

/// One simulation campaign.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub scenario: ValidatedScenario,
    /// Requests discarded before measurement starts, per replication.
    pub warmup_requests: u64,
    /// Requests measured per replication (at least 1000).
    pub measured_requests: u64,
    /// Independent replications (at least 5).
    pub replications: u32,
    pub master_seed: u64,
}

impl SimConfig {
    /// Builds a config with the default warmup heuristic
    /// 10 s ceil(rho / (1 - rho)) requests, capped at 1e5.
    pub fn new(
        scenario: ValidatedScenario,
        measured_requests: u64,
        replications: u32,
        master_seed: u64,
    ) -> Result<Self> {
        let rho = estimated_load(&scenario, master_seed)?;
        if rho >= 1.0 {
            return Err(QcsError::Overloaded { rho });
        }
        let s = scenario.servers as u64;
        let warmup = (10 * s * ((rho / (1.0 - rho)).ceil() as u64).max(1)).min(WARMUP_CAP);
        Ok(Self {
            scenario,
            warmup_requests: warmup,
            measured_requests,
            replications,
            master_seed,
        })
    }
}

/// A point estimate with its standard error across replications.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Per-replication summary statistics.
#[derive(Debug, Clone, Copy)]
pub struct RepSummary {
    pub mean_wait: f64,
    pub mean_service: f64,
    pub mean_sojourn: f64,
    pub mean_in_system: f64,
    pub throughput: f64,
    pub utilization: f64,
    pub completed: u64,
}

/// Aggregated simulation output.
#[derive(Debug, Clone)]
pub struct SimReport {
    pub mean_sojourn: Estimate,
    pub mean_wait: Estimate,
    pub mean_service: Estimate,
    /// Time-average number of requests in the system over the measurement
    /// window (for Little's-law checks against lambda * mean sojourn).
    pub mean_in_system: Estimate,
    /// Departure rate over the measurement window, 1/us.
    pub throughput: Estimate,
    /// Busy-server fraction over the measurement window.
    pub utilization: f64,
    pub requests_completed: u64,
    pub replications: Vec<RepSummary>,
}

/// Load estimate used to reject overloaded configs before simulating.
fn estimated_load(vs: &ValidatedScenario, seed: u64) -> Result<f64> {
    let b = b_moments(&vs.window_spec(), &McBudget::new(20_000, seed ^ 0xb0a7))?;
    let service = crate::service::service_moments(vs, &b.moments);
    Ok(crate::queueing::load(vs, service.m1))
}

/// Runs the campaign. Replications execute independently (in parallel)
/// with per-replication random streams split off the master seed by the
/// ChaCha stream index, and are aggregated in replication order, so the
/// report is deterministic for a given seed regardless of worker count.
pub fn run(cfg: &SimConfig) -> Result<SimReport> {
    if cfg.measured_requests < 1000 {
        return Err(QcsError::InvalidConfig(format!(
            "need at least 1000 measured requests, got {}",
            cfg.measured_requests
        )));
    }
    if cfg.replications < 5 {
        return Err(QcsError::InvalidConfig(format!(
            "need at least 5 replications, got {}",
            cfg.replications
        )));
    }
    let rho = estimated_load(&cfg.scenario, cfg.master_seed)?;
    if rho >= 1.0 {
        return Err(QcsError::Overloaded { rho });
    }

    let reps: Vec<RepSummary> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
            rng.set_stream(rep as u64 + 1);
            run_replication(
                &cfg.scenario,
                cfg.warmup_requests,
                cfg.measured_requests,
                rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let agg = |f: fn(&RepSummary) -> f64| -> Estimate {
        let values: Vec<f64> = reps.iter().map(f).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        Estimate {
            value: mean,
            se: (var / n).sqrt(),
        }
    };

    Ok(SimReport {
        mean_sojourn: agg(|r| r.mean_sojourn),
        mean_wait: agg(|r| r.mean_wait),
        mean_service: agg(|r| r.mean_service),
        mean_in_system: agg(|r| r.mean_in_system),
        throughput: agg(|r| r.throughput),
        utilization: agg(|r| r.utilization).value,
        requests_completed: reps.iter().map(|r| r.completed).sum(),
        replications: reps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Arrival { index: u64 },
    Departure { index: u64 },
}

/// Events order by time, with the schedule sequence number breaking ties
/// so simultaneous events replay identically.
#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap and we want the earliest event.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Clock {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl Clock {
    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.heap.push(Event {
            time,
            seq: self.next_seq,
            kind,
        });
        self.next_seq += 1;
    }
}

fn run_replication(
    vs: &ValidatedScenario,
    warmup: u64,
    measured: u64,
    mut rng: ChaCha8Rng,
) -> Result<RepSummary> {
    let lambda = vs.arrival_rate;
    let servers = vs.servers as usize;
    let offset = vs.service_offset();
    let slope = vs.service_slope();
    let interarrival =
        Exp::new(lambda).map_err(|e| QcsError::InvalidConfig(format!("arrival process: {e}")))?;
    let mut sampler = BatchSampler::new(&vs.window_spec())?;

    // Arrivals stop one past the measured block: that last arrival marks
    // the end of the measurement window and is never served. FIFO order
    // means later arrivals cannot affect the measured requests.
    let total_arrivals = warmup + measured + 1;
    let first_measured = warmup;

    let mut clock = Clock {
        heap: BinaryHeap::new(),
        next_seq: 0,
    };
    let mut queue: VecDeque<(u64, f64)> = VecDeque::new();
    let mut busy = 0usize;
    let mut in_system = 0u64;

    // Measurement window [t_start, t_end] spans the measured arrivals.
    let mut t_start = f64::NAN;
    let mut t_end = f64::NAN;
    let mut last_time = 0.0f64;
    let mut area_in_system = 0.0f64;
    let mut area_busy = 0.0f64;
    let mut departures_in_window = 0u64;

    let mut wait_sum = 0.0f64;
    let mut service_sum = 0.0f64;
    let mut measured_departed = 0u64;

    clock.schedule(
        interarrival.sample(&mut rng),
        EventKind::Arrival { index: 0 },
    );

    while let Some(event) = clock.heap.pop() {
        let now = event.time;
        // Accumulate time-weighted state over the overlap with the window.
        if !t_start.is_nan() {
            let hi = if t_end.is_nan() { now } else { now.min(t_end) };
            let lo = last_time.max(t_start);
            if hi > lo {
                area_in_system += in_system as f64 * (hi - lo);
                area_busy += busy as f64 * (hi - lo);
            }
        }
        last_time = now;

        match event.kind {
            EventKind::Arrival { index } => {
                if index == first_measured {
                    t_start = now;
                }
                if index == total_arrivals - 1 {
                    t_end = now;
                    // The terminal arrival only closes the window.
                } else {
                    in_system += 1;
                    if busy < servers {
                        busy += 1;
                        start_service(
                            vs,
                            &mut clock,
                            &mut sampler,
                            &mut rng,
                            index,
                            now,
                            now,
                            offset,
                            slope,
                            first_measured,
                            measured,
                            &mut wait_sum,
                            &mut service_sum,
                        )?;
                    } else {
                        queue.push_back((index, now));
                    }
                }
                if index + 1 < total_arrivals {
                    clock.schedule(
                        now + interarrival.sample(&mut rng),
                        EventKind::Arrival { index: index + 1 },
                    );
                }
            }
            EventKind::Departure { index } => {
                in_system -= 1;
                busy -= 1;
                if !t_start.is_nan() && (t_end.is_nan() || now <= t_end) && now >= t_start {
                    departures_in_window += 1;
                }
                if index >= first_measured && index < first_measured + measured {
                    measured_departed += 1;
                }
                if let Some((next_index, arrived)) = queue.pop_front() {
                    busy += 1;
                    start_service(
                        vs,
                        &mut clock,
                        &mut sampler,
                        &mut rng,
                        next_index,
                        now,
                        arrived,
                        offset,
                        slope,
                        first_measured,
                        measured,
                        &mut wait_sum,
                        &mut service_sum,
                    )?;
                }
                if measured_departed == measured && !t_end.is_nan() {
                    break;
                }
            }
        }
    }

    let span = t_end - t_start;
    let count = measured as f64;
    let control = vs.scenario.network.control_us;
    Ok(RepSummary {
        mean_wait: wait_sum / count,
        mean_service: service_sum / count,
        mean_sojourn: control + (wait_sum + service_sum) / count,
        mean_in_system: area_in_system / span,
        throughput: departures_in_window as f64 / span,
        utilization: area_busy / (servers as f64 * span),
        completed: measured,
    })
}

/// Draws the batch count at service start and schedules the departure.
/// The service law is affine in the batch count: offset + slope * B.
#[allow(clippy::too_many_arguments)]
fn start_service(
    _vs: &ValidatedScenario,
    clock: &mut Clock,
    sampler: &mut BatchSampler,
    rng: &mut ChaCha8Rng,
    index: u64,
    now: f64,
    arrived: f64,
    offset: f64,
    slope: f64,
    first_measured: u64,
    measured: u64,
    wait_sum: &mut f64,
    service_sum: &mut f64,
) -> Result<()> {
    let batches = sampler.draw(rng)? as f64;
    let duration = offset + slope * batches;
    if index >= first_measured && index < first_measured + measured {
        *wait_sum += now - arrived;
        *service_sum += duration;
    }
    clock.schedule(now + duration, EventKind::Departure { index });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, Strategy};
    use crate::queueing;
    use crate::window::McBudget;

    fn small_parallel() -> SimConfig {
        let vs = presets::small_budget(5, 7, Strategy::Parallel)
            .validate()
            .unwrap();
        SimConfig::new(vs, 20_000, 8, 4242).unwrap()
    }

    #[test]
    fn matches_exact_mg1_wait_and_sojourn() {
        let report = run(&small_parallel()).unwrap();
        let wait = report.mean_wait;
        assert!(
            (wait.value - 6.797752808988764).abs() <= 3.0 * wait.se,
            "wait {} +- {}",
            wait.value,
            wait.se
        );
        let mst = report.mean_sojourn;
        assert!((mst.value - 116.797752808988764).abs() <= 3.0 * mst.se);
        // Deterministic service at p = 1.
        assert!((report.mean_service.value - 110.0).abs() < 1e-9);
    }

    #[test]
    fn littles_law_and_throughput() {
        let cfg = small_parallel();
        let report = run(&cfg).unwrap();
        let lambda = cfg.scenario.arrival_rate;
        let expected_n = lambda * report.mean_sojourn.value;
        // Joint error: SE of N-bar plus the sojourn SE scaled by lambda.
        let joint =
            (report.mean_in_system.se.powi(2) + (lambda * report.mean_sojourn.se).powi(2)).sqrt();
        assert!(
            (report.mean_in_system.value - expected_n).abs() <= 3.0 * joint,
            "N {} vs lambda*W {}",
            report.mean_in_system.value,
            expected_n
        );
        assert!((report.throughput.value - lambda).abs() <= 3.0 * report.throughput.se);
    }

    #[test]
    fn sojourn_decomposes_exactly() {
        let report = run(&small_parallel()).unwrap();
        for rep in &report.replications {
            assert!(
                (rep.mean_sojourn - rep.mean_wait - rep.mean_service).abs() < 1e-9,
                "sojourn must equal wait + service per replication"
            );
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = run(&small_parallel()).unwrap();
        let b = run(&small_parallel()).unwrap();
        assert_eq!(a.mean_sojourn.value, b.mean_sojourn.value);
        assert_eq!(a.mean_wait.se, b.mean_wait.se);
        assert_eq!(a.throughput.value, b.throughput.value);
    }

    #[test]
    fn strategies_statistically_identical_at_one_station() {
        let mk = |strategy| {
            let vs = presets::small_budget(4, 1, strategy).validate().unwrap();
            run(&SimConfig::new(vs, 10_000, 6, 7).unwrap()).unwrap()
        };
        let seq = mk(Strategy::Sequential);
        let par = mk(Strategy::Parallel);
        // Identical queue model and seeds: the runs coincide exactly.
        assert_eq!(seq.mean_sojourn.value, par.mean_sojourn.value);
    }

    #[test]
    fn utilization_tracks_load() {
        let cfg = small_parallel();
        let report = run(&cfg).unwrap();
        let b = cfg.scenario.window_spec().exact_moments().unwrap();
        let service = crate::service::service_moments(&cfg.scenario, &b);
        let rho = queueing::load(&cfg.scenario, service.m1);
        assert!((report.utilization - rho).abs() < 0.02);
    }

    #[test]
    fn overloaded_config_rejected() {
        let vs = presets::small_budget(6, 1, Strategy::Sequential)
            .validate()
            .unwrap();
        match SimConfig::new(vs, 5_000, 5, 1) {
            Err(QcsError::Overloaded { rho }) => assert!(rho > 1.0),
            other => panic!("expected overload, got {other:?}"),
        }
    }

    #[test]
    fn run_length_limits_enforced() {
        let vs = presets::small_budget(5, 7, Strategy::Parallel)
            .validate()
            .unwrap();
        let mut cfg = SimConfig::new(vs, 2_000, 5, 1).unwrap();
        cfg.measured_requests = 10;
        assert!(matches!(run(&cfg), Err(QcsError::InvalidConfig(_))));
        cfg.measured_requests = 2_000;
        cfg.replications = 2;
        assert!(matches!(run(&cfg), Err(QcsError::InvalidConfig(_))));
    }

    #[test]
    fn doubling_measurements_shrinks_error() {
        let vs = presets::small_budget(5, 3, Strategy::Sequential)
            .validate()
            .unwrap();
        let se_at = |measured: u64| {
            let cfg = SimConfig::new(vs.clone(), measured, 16, 99).unwrap();
            run(&cfg).unwrap().mean_wait.se
        };
        let ratio = se_at(4_000) / se_at(16_000);
        // Quadrupling the run should halve the error, within tolerance.
        assert!((1.3..=3.1).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn approximation_quality_multi_server() {
        // Sequential k = 3 at moderate load: the scaled M/M/s wait should
        // land within ten percent of the simulated truth.
        let vs = presets::small_budget(8, 3, Strategy::Sequential)
            .validate()
            .unwrap();
        let report = run(&SimConfig::new(vs.clone(), 40_000, 8, 31).unwrap()).unwrap();
        let analytic = queueing::analyze(&vs, &McBudget::default()).unwrap();
        let rel = (analytic.wait.mean_wait - report.mean_wait.value).abs() / report.mean_wait.value;
        assert!(rel < 0.10, "approximation off by {:.1}%", rel * 100.0);
    }
}
