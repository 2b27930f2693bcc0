//! Scenario parameters: star-network geometry, hardware constants, the
//! request model, and the resource-allocation strategy.
//!
//! All values are carried in the units used throughout the crate:
//! distances in km, times in microseconds, rates in 1/microsecond. The
//! request window `w` is measured in batches, i.e. in units of the
//! forwarding time `t_fwd`.

use serde::{Deserialize, Serialize};

use crate::error::{QcsError, Result};
use crate::hardware;
use crate::window::WindowSpec;

/// How the packet success probability is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PacketSourceRepr", into = "PacketSourceRepr")]
pub enum PacketSource {
    /// Fixed end-to-end success probability in (0, 1].
    Fixed(f64),
    /// Derived from the all-photonic repeater loss model and the geometry.
    AllPhotonic,
}

/// Wire form: `{"fixed": 0.7}` or `{"all_photonic": true}`.
#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PacketSourceRepr {
    Fixed(f64),
    AllPhotonic(bool),
}

impl TryFrom<PacketSourceRepr> for PacketSource {
    type Error = String;

    fn try_from(repr: PacketSourceRepr) -> std::result::Result<Self, String> {
        match repr {
            PacketSourceRepr::Fixed(p) => Ok(PacketSource::Fixed(p)),
            PacketSourceRepr::AllPhotonic(true) => Ok(PacketSource::AllPhotonic),
            PacketSourceRepr::AllPhotonic(false) => {
                Err("\"all_photonic\" must be true; use {\"fixed\": p} instead".into())
            }
        }
    }
}

impl From<PacketSource> for PacketSourceRepr {
    fn from(src: PacketSource) -> Self {
        match src {
            PacketSource::Fixed(p) => PacketSourceRepr::Fixed(p),
            PacketSource::AllPhotonic => PacketSourceRepr::AllPhotonic(true),
        }
    }
}

/// Request window, in batches. `Infinite` lifts the deadline entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WindowRepr", into = "WindowRepr")]
pub enum Window {
    Finite(u32),
    Infinite,
}

/// Wire form: an integer batch count or the literal string `"inf"`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WindowRepr {
    Batches(u32),
    Token(String),
}

impl TryFrom<WindowRepr> for Window {
    type Error = String;

    fn try_from(repr: WindowRepr) -> std::result::Result<Self, String> {
        match repr {
            WindowRepr::Batches(w) => Ok(Window::Finite(w)),
            WindowRepr::Token(s) if s == "inf" => Ok(Window::Infinite),
            WindowRepr::Token(s) => Err(format!("window must be an integer or \"inf\", got {s:?}")),
        }
    }
}

impl From<Window> for WindowRepr {
    fn from(w: Window) -> Self {
        match w {
            Window::Finite(b) => WindowRepr::Batches(b),
            Window::Infinite => WindowRepr::Token("inf".into()),
        }
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Window::Finite(b) => write!(f, "{b}"),
            Window::Infinite => write!(f, "inf"),
        }
    }
}

/// Resource-allocation strategy for the forwarding stations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// One station per request: batch size 1, k requests in parallel.
    Sequential,
    /// All stations per request: batch size k, one request at a time.
    Parallel,
}

impl Strategy {
    /// Packets sent per batch, m.
    pub fn batch_size(self, k: u32) -> u32 {
        match self {
            Strategy::Sequential => 1,
            Strategy::Parallel => k,
        }
    }

    /// Requests processed concurrently, s.
    pub fn servers(self, k: u32) -> u32 {
        match self {
            Strategy::Sequential => k,
            Strategy::Parallel => 1,
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Sequential => write!(f, "sequential"),
            Strategy::Parallel => write!(f, "parallel"),
        }
    }
}

/// Star topology and hardware parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of users attached to the hub (at least 2).
    #[serde(rename = "u")]
    pub users: u32,
    /// Distance from each user to the hub, km.
    #[serde(rename = "L_km")]
    pub arm_km: f64,
    /// Intermediate repeaters on each arm.
    #[serde(rename = "N")]
    pub repeaters: u32,
    /// Forwarding stations per repeater.
    pub k: u32,
    /// Time for a station to forward one packet, us.
    #[serde(rename = "t_fwd_us")]
    pub fwd_us: f64,
    /// Signal speed in the channels, km/us.
    #[serde(rename = "c_km_per_us")]
    pub light_speed: f64,
    /// Constant control overhead added to every sojourn, us.
    #[serde(rename = "t_control_us", default)]
    pub control_us: f64,
    /// Packet success probability source.
    #[serde(rename = "p")]
    pub source: PacketSource,
}

/// Shape and rate of the (n, w)-requests submitted by user pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestModel {
    /// Packets that must be delivered per request.
    #[serde(rename = "n")]
    pub packets: u32,
    /// Sliding window, in batches of `t_fwd`.
    #[serde(rename = "w")]
    pub window: Window,
    /// Request rate per user pair, 1/us.
    #[serde(rename = "lambda0_per_us")]
    pub rate_per_pair: f64,
}

/// A complete scenario. Serializes to the flat JSON schema used by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(flatten)]
    pub network: NetworkConfig,
    #[serde(flatten)]
    pub request: RequestModel,
    pub strategy: Strategy,
}

/// First and second raw moments of a nonnegative random variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentPair {
    pub m1: f64,
    pub m2: f64,
}

impl MomentPair {
    pub fn variance(&self) -> f64 {
        (self.m2 - self.m1 * self.m1).max(0.0)
    }

    /// Squared coefficient of variation, Var / mean^2.
    pub fn c2(&self) -> f64 {
        self.variance() / (self.m1 * self.m1)
    }
}

/// A scenario that passed validation, with derived quantities attached.
#[derive(Debug, Clone)]
pub struct ValidatedScenario {
    pub scenario: Scenario,
    /// Packets per batch, m.
    pub batch_size: u32,
    /// Concurrent requests, s.
    pub servers: u32,
    /// Aggregate request rate lambda = u(u-1)/2 * lambda0, 1/us.
    pub arrival_rate: f64,
    /// Inter-repeater spacing L0 = L/(N+1), km.
    pub hop_km: f64,
    /// Resolved packet success probability.
    pub p: f64,
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    /// Checks every parameter and bundles the derived quantities.
    ///
    /// Rejects requests that can never complete: a finite window of `w`
    /// batches of `m` packets holds at most `w * m` successes, so `w * m`
    /// must be at least `n` regardless of `p`.
    pub fn validate(&self) -> Result<ValidatedScenario> {
        let net = &self.network;
        let req = &self.request;

        fn positive(value: f64, what: &str) -> Result<()> {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(QcsError::InvalidParameter(format!(
                    "{what} must be positive and finite, got {value}"
                )))
            }
        }

        if net.users < 2 {
            return Err(QcsError::InvalidParameter(format!(
                "u must be at least 2, got {}",
                net.users
            )));
        }
        positive(net.arm_km, "L_km")?;
        if net.k < 1 {
            return Err(QcsError::InvalidParameter("k must be at least 1".into()));
        }
        positive(net.fwd_us, "t_fwd_us")?;
        positive(net.light_speed, "c_km_per_us")?;
        if !(net.control_us.is_finite() && net.control_us >= 0.0) {
            return Err(QcsError::InvalidParameter(format!(
                "t_control_us must be nonnegative, got {}",
                net.control_us
            )));
        }
        if req.packets < 1 {
            return Err(QcsError::InvalidParameter("n must be at least 1".into()));
        }
        positive(req.rate_per_pair, "lambda0_per_us")?;
        if let Window::Finite(w) = req.window {
            if w < 1 {
                return Err(QcsError::InvalidParameter("w must be at least 1".into()));
            }
        }

        // A success probability of exactly zero would make service never
        // complete, so it is rejected along with everything outside (0, 1].
        let p = match net.source {
            PacketSource::Fixed(p) => {
                if !(p.is_finite() && p > 0.0 && p <= 1.0) {
                    return Err(QcsError::InvalidParameter(format!(
                        "fixed p must lie in (0, 1], got {p}"
                    )));
                }
                p
            }
            PacketSource::AllPhotonic => hardware::p_success(net.arm_km, net.repeaters),
        };

        let batch_size = self.strategy.batch_size(net.k);
        let servers = self.strategy.servers(net.k);
        if let Window::Finite(w) = req.window {
            if (w as u64) * (batch_size as u64) < req.packets as u64 {
                return Err(QcsError::InfeasibleWindow {
                    window: w,
                    batch: batch_size,
                    needed: req.packets,
                });
            }
        }

        let pairs = net.users as f64 * (net.users as f64 - 1.0) / 2.0;
        let arrival_rate = pairs * req.rate_per_pair;
        let hop_km = net.arm_km / (net.repeaters as f64 + 1.0);
        positive(arrival_rate, "aggregate request rate")?;
        positive(hop_km, "inter-repeater spacing")?;

        Ok(ValidatedScenario {
            scenario: self.clone(),
            batch_size,
            servers,
            arrival_rate,
            hop_km,
            p,
        })
    }
}

impl ValidatedScenario {
    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            needed: self.scenario.request.packets,
            window: self.scenario.request.window,
            p: self.p,
            batch_size: self.batch_size,
        }
    }

    /// Fixed part of the service time: 2L/c + 2 t_fwd N, us.
    pub fn service_offset(&self) -> f64 {
        let net = &self.scenario.network;
        2.0 * net.arm_km / net.light_speed + 2.0 * net.fwd_us * net.repeaters as f64
    }

    /// Per-batch part of the service time: t_fwd, us.
    pub fn service_slope(&self) -> f64 {
        self.scenario.network.fwd_us
    }

    /// Load at an arbitrary user count, given the mean service time.
    pub fn load_at(&self, users: u32, mean_service: f64) -> f64 {
        let u = users as f64;
        self.scenario.request.rate_per_pair * u * (u - 1.0) * self.batch_size as f64
            / (2.0 * self.scenario.network.k as f64)
            * mean_service
    }
}

/// Parameter values shared by the bundled example studies.
pub mod presets {
    use super::*;

    pub const T_FWD_US: f64 = 100.0;
    pub const LIGHT_SPEED_KM_US: f64 = 0.2;
    pub const LAMBDA0_PER_US: f64 = 1e-4;
    pub const PACKETS_PER_REQUEST: u32 = 7;

    /// Near-deterministic short-range hardware: p = 1, no intermediate
    /// repeaters, 1 km arms, window of 10 batches.
    pub fn small_budget(users: u32, k: u32, strategy: Strategy) -> Scenario {
        Scenario {
            network: NetworkConfig {
                users,
                arm_km: 1.0,
                repeaters: 0,
                k,
                fwd_us: T_FWD_US,
                light_speed: LIGHT_SPEED_KM_US,
                control_us: 0.0,
                source: PacketSource::Fixed(1.0),
            },
            request: RequestModel {
                packets: PACKETS_PER_REQUEST,
                window: Window::Finite(10),
                rate_per_pair: LAMBDA0_PER_US,
            },
            strategy,
        }
    }

    /// All-photonic hardware at 7.5 km arms with no intermediate repeaters,
    /// which lands the success probability near 0.69.
    pub fn large_budget(users: u32, k: u32, strategy: Strategy, window: Window) -> Scenario {
        Scenario {
            network: NetworkConfig {
                users,
                arm_km: 7.5,
                repeaters: 0,
                k,
                fwd_us: T_FWD_US,
                light_speed: LIGHT_SPEED_KM_US,
                control_us: 0.0,
                source: PacketSource::AllPhotonic,
            },
            request: RequestModel {
                packets: PACKETS_PER_REQUEST,
                window,
                rate_per_pair: LAMBDA0_PER_US,
            },
            strategy,
        }
    }
}
