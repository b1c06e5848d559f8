//! Seeded log-distance path-loss simulator that stands in for a phone's WiFi
//! scanner.
//!
//! Received power for each virtual AP:
//!
//! ```text
//! r = P_tx − PL₀ − 10·n·log₁₀(max(d, d₀)/d₀) − body + X,   X ~ N(0, σ_sh²)
//! ```
//!
//! where `body = A_body` when the AP is behind the device (more than 90° off
//! the facing direction). Readings are rounded to whole dBm and clamped to
//! `[−100, 0]`; APs weaker than −95 dBm before clamping are dropped half of
//! the time.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localizer::{Observation, TruthObservation};
use crate::model::{
    AccessPointId, Band, Bssid, FingerprintSample, Heading, ReferencePoint, Readings, SurveyArea, ValidationError,
    RSSI_CEIL_DBM, RSSI_FLOOR_DBM,
};

/// Reference distance d₀ of the path-loss model, meters.
pub const REFERENCE_DISTANCE_M: f64 = 1.0;
/// Pre-clamp level below which a reading may be missed by the scanner.
pub const DROPOUT_THRESHOLD_DBM: f64 = -95.0;
pub const DROPOUT_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("position ({x}, {y}) is outside the simulated area")]
    OutOfBounds { x: f64, y: f64 },
    #[error("walk has zero total length")]
    DegeneratePath,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid walk: {0}")]
    InvalidWalk(String),
    #[error(transparent)]
    Area(#[from] ValidationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    /// P_tx, dBm.
    pub tx_power: f64,
    /// PL₀ at d₀ = 1 m, dB.
    pub ref_loss: f64,
    /// n_pl.
    pub exponent: f64,
    /// σ_sh, dB.
    pub shadowing_std: f64,
    /// A_body, dB.
    pub body_attenuation: f64,
}

impl PathLossParams {
    pub fn for_band(band: Band) -> Self {
        match band {
            Band::Band2_4GHz => PathLossParams {
                tx_power: 15.0,
                ref_loss: 40.0,
                exponent: 2.4,
                shadowing_std: 4.0,
                body_attenuation: 3.0,
            },
            Band::Band5GHz => PathLossParams {
                tx_power: 15.0,
                ref_loss: 46.0,
                exponent: 2.8,
                shadowing_std: 4.0,
                body_attenuation: 3.0,
            },
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = [self.tx_power, self.ref_loss, self.exponent, self.shadowing_std, self.body_attenuation]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err("path loss parameters must be finite".into());
        }
        if self.exponent <= 0.0 {
            return Err(format!("exponent must be positive, got {}", self.exponent));
        }
        if self.shadowing_std < 0.0 || self.body_attenuation < 0.0 {
            return Err("shadowing_std and body_attenuation must be non-negative".into());
        }
        Ok(())
    }

    /// Mean received power at distance `d` before body loss and shadowing.
    pub fn mean_rssi(&self, distance: f64) -> f64 {
        let d = distance.max(REFERENCE_DISTANCE_M) / REFERENCE_DISTANCE_M;
        self.tx_power - self.ref_loss - 10.0 * self.exponent * d.log10()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualAp {
    pub id: AccessPointId,
    pub position: (f64, f64),
    pub params: PathLossParams,
}

impl VirtualAp {
    /// Body loss applies when the AP bearing is more than 90° from `heading`.
    pub fn body_loss(&self, from: (f64, f64), heading: Heading) -> f64 {
        let (dx, dy) = (self.position.0 - from.0, self.position.1 - from.1);
        let (hx, hy) = heading.unit_vector();
        if dx * hx + dy * hy < 0.0 {
            self.params.body_attenuation
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub area: SurveyArea,
    pub aps: Vec<VirtualAp>,
    pub rng_seed: u64,
    /// Weak-signal dropout; on by default.
    pub dropout: bool,
}

/// Stream domains so survey, walk and test draws never share a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngDomain {
    Survey = 0,
    Walk = 1,
    TestPoints = 2,
}

impl SimScenario {
    pub fn new(area: SurveyArea, aps: Vec<VirtualAp>, rng_seed: u64) -> Result<Self, SimError> {
        let s = SimScenario { area, aps, rng_seed, dropout: true };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.area.validate()?;
        if self.aps.is_empty() {
            return Err(SimError::InvalidScenario("at least one access point is required".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for ap in &self.aps {
            ap.params.validate().map_err(|e| SimError::InvalidScenario(format!("{}: {e}", ap.id)))?;
            if !self.area.contains(ap.position.0, ap.position.1) {
                return Err(SimError::InvalidScenario(format!("{} lies outside the area", ap.id)));
            }
            if !ids.insert(ap.id.clone()) {
                return Err(SimError::InvalidScenario(format!("duplicate access point {}", ap.id)));
            }
        }
        Ok(())
    }

    /// Independent generator for `(domain, index)`, derived from the seed.
    pub fn rng_for(&self, domain: RngDomain, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(((domain as u64) << 56) | (index & ((1 << 56) - 1)));
        rng
    }

    /// The benchmark room: 14 m × 14 m, six dual-band APs, 1 m interior
    /// reference grid, default band parameters.
    pub fn benchmark_room(seed: u64) -> Self {
        let area = SurveyArea::with_interior_grid(14.0, 14.0, 1.0);
        let sites = [(1.0, 1.0), (13.0, 1.5), (7.0, 4.0), (1.5, 12.5), (12.5, 13.0), (7.5, 9.5)];
        let aps = sites
            .iter()
            .enumerate()
            .flat_map(|(i, &pos)| {
                [Band::Band2_4GHz, Band::Band5GHz].map(|band| VirtualAp {
                    id: AccessPointId::new(Bssid::new([0x02, 0x1a, 0x11, 0, 0, i as u8 + 1]), band)
                        .with_ssid(format!("lab-{}", i + 1)),
                    position: pos,
                    params: PathLossParams::for_band(band),
                })
            })
            .collect();
        SimScenario { area, aps, rng_seed: seed, dropout: true }
    }

    pub fn with_shadowing(mut self, shadowing_std: f64) -> Self {
        for ap in &mut self.aps {
            ap.params.shadowing_std = shadowing_std;
        }
        self
    }

    /// Noise-free mean RSSI of `ap` at `position` facing `heading`.
    pub fn expected_rssi(&self, ap: &VirtualAp, position: (f64, f64), heading: Heading) -> f64 {
        let d = (ap.position.0 - position.0).hypot(ap.position.1 - position.1);
        ap.params.mean_rssi(d) - ap.body_loss(position, heading)
    }
}

fn shadowing_draw<R: Rng>(std: f64, rng: &mut R) -> f64 {
    // Always consume one normal draw so streams stay aligned across σ values.
    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
    z * std
}

/// Simulated scan readings at `position` facing `heading`.
pub fn simulate_readings<R: Rng>(
    scenario: &SimScenario,
    position: (f64, f64),
    heading: Heading,
    rng: &mut R,
) -> Result<Readings, SimError> {
    if !scenario.area.contains(position.0, position.1) {
        return Err(SimError::OutOfBounds { x: position.0, y: position.1 });
    }
    let mut readings = Readings::new();
    let mut strongest_dropped: Option<(f64, AccessPointId, i32)> = None;
    for ap in &scenario.aps {
        let raw = scenario.expected_rssi(ap, position, heading) + shadowing_draw(ap.params.shadowing_std, rng);
        let drop_roll: f64 = rng.random();
        let rssi = (raw.round() as i32).clamp(RSSI_FLOOR_DBM, RSSI_CEIL_DBM);
        if scenario.dropout && raw < DROPOUT_THRESHOLD_DBM && drop_roll < DROPOUT_PROBABILITY {
            if strongest_dropped.as_ref().is_none_or(|(r, _, _)| raw > *r) {
                strongest_dropped = Some((raw, ap.id.clone(), rssi));
            }
            continue;
        }
        readings.insert(ap.id.clone(), rssi);
    }
    // A scan always reports something: keep the strongest AP if all dropped.
    if readings.is_empty() {
        if let Some((_, id, rssi)) = strongest_dropped {
            readings.insert(id, rssi);
        }
    }
    Ok(readings)
}

fn sim_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).single().expect("valid epoch")
}

pub fn simulate_rssi<R: Rng>(
    scenario: &SimScenario,
    position: (f64, f64),
    heading: Heading,
    rng: &mut R,
) -> Result<Observation, SimError> {
    Ok(Observation {
        readings: simulate_readings(scenario, position, heading, rng)?,
        timestamp: sim_epoch(),
        heading_hint: None,
    })
}

/// `scans_per_cell` samples at every reference point and heading, in
/// `(rp, heading, scan)` order. Each `(rp, heading)` pair draws from its own
/// stream so the output does not depend on evaluation order.
pub fn simulate_survey(
    scenario: &SimScenario,
    rps: &[ReferencePoint],
    scans_per_cell: usize,
) -> Result<Vec<FingerprintSample>, SimError> {
    let mut out = Vec::with_capacity(rps.len() * 4 * scans_per_cell);
    let epoch = sim_epoch();
    for (rp_idx, rp) in rps.iter().enumerate() {
        for heading in Heading::ALL {
            let stream = (rp_idx * 4 + heading.index()) as u64;
            let mut rng = scenario.rng_for(RngDomain::Survey, stream);
            for _ in 0..scans_per_cell {
                let readings = simulate_readings(scenario, (rp.x, rp.y), heading, &mut rng)?;
                let seq = out.len() as i64;
                out.push(FingerprintSample {
                    point_id: rp.point_id.clone(),
                    x: rp.x,
                    y: rp.y,
                    heading,
                    timestamp: epoch + Duration::seconds(seq),
                    device_id: format!("sim-{}", scenario.rng_seed),
                    readings,
                });
            }
        }
    }
    Ok(out)
}

/// One emission of a simulated walk, with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkStep {
    pub observation: Observation,
    pub x: f64,
    pub y: f64,
    pub heading: Heading,
}

impl From<WalkStep> for TruthObservation {
    fn from(w: WalkStep) -> Self {
        TruthObservation { observation: w.observation, x: w.x, y: w.y }
    }
}

/// Emissions along a polyline at a fixed period. Both endpoints are always
/// emitted; the heading is the travel direction snapped to a cardinal.
pub fn simulate_walk(
    scenario: &SimScenario,
    waypoints: &[(f64, f64)],
    speed: f64,
    scan_period: f64,
) -> Result<Vec<WalkStep>, SimError> {
    if waypoints.len() < 2 {
        return Err(SimError::InvalidWalk("at least two waypoints are required".into()));
    }
    if !(speed.is_finite() && speed > 0.0 && scan_period.is_finite() && scan_period > 0.0) {
        return Err(SimError::InvalidWalk("speed and scan period must be positive".into()));
    }
    for &(x, y) in waypoints {
        if !scenario.area.contains(x, y) {
            return Err(SimError::OutOfBounds { x, y });
        }
    }
    let legs: Vec<Leg> = waypoints
        .windows(2)
        .map(|w| (w[0], w[1], (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)))
        .filter(|&(_, _, len)| len > 0.0)
        .collect();
    let total: f64 = legs.iter().map(|l| l.2).sum();
    if legs.is_empty() || total <= 0.0 {
        return Err(SimError::DegeneratePath);
    }

    let step = speed * scan_period;
    let mut stations: Vec<f64> = Vec::new();
    let mut k = 0u64;
    loop {
        let s = k as f64 * step;
        if s >= total - 1e-9 * total.max(1.0) {
            break;
        }
        stations.push(s);
        k += 1;
    }
    stations.push(total);

    let epoch = sim_epoch();
    let mut out = Vec::with_capacity(stations.len());
    for (idx, &s) in stations.iter().enumerate() {
        let (pos, heading) = point_on_path(&legs, s);
        let mut rng = scenario.rng_for(RngDomain::Walk, idx as u64);
        let readings = simulate_readings(scenario, pos, heading, &mut rng)?;
        let t = epoch + Duration::milliseconds((idx as f64 * scan_period * 1000.0).round() as i64);
        out.push(WalkStep {
            observation: Observation { readings, timestamp: t, heading_hint: None },
            x: pos.0,
            y: pos.1,
            heading,
        });
    }
    Ok(out)
}

fn leg_heading(a: (f64, f64), b: (f64, f64)) -> Heading {
    Heading::nearest((b.0 - a.0).atan2(b.1 - a.1).to_degrees())
}

/// Start, end and length of one straight walk segment.
type Leg = ((f64, f64), (f64, f64), f64);

fn point_on_path(legs: &[Leg], s: f64) -> ((f64, f64), Heading) {
    let mut remaining = s;
    for (i, &(a, b, len)) in legs.iter().enumerate() {
        let last = i + 1 == legs.len();
        if remaining < len || last {
            let t = (remaining / len).clamp(0.0, 1.0);
            let pos = if t == 1.0 { b } else { (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t) };
            return (pos, leg_heading(a, b));
        }
        remaining -= len;
    }
    unreachable!("legs is non-empty")
}

/// Observations at uniformly random positions and headings, each with its
/// ground truth. `heading_known` copies the true heading into the hint.
pub fn simulate_test_points(
    scenario: &SimScenario,
    count: usize,
    heading_known: bool,
) -> Result<Vec<TruthObservation>, SimError> {
    let epoch = sim_epoch();
    (0..count)
        .map(|i| {
            let mut rng = scenario.rng_for(RngDomain::TestPoints, i as u64);
            let x = rng.random::<f64>() * scenario.area.width;
            let y = rng.random::<f64>() * scenario.area.height;
            let heading = Heading::ALL[rng.random_range(0..4)];
            let readings = simulate_readings(scenario, (x, y), heading, &mut rng)?;
            Ok(TruthObservation {
                observation: Observation {
                    readings,
                    timestamp: epoch + Duration::seconds(i as i64),
                    heading_hint: heading_known.then_some(heading),
                },
                x,
                y,
            })
        })
        .collect()
}

/// Observations taken at the given points with a known heading, one per
/// `(point, heading)` pair, drawing from the test-point streams.
pub fn simulate_at_points(
    scenario: &SimScenario,
    points: &[ReferencePoint],
) -> Result<Vec<(TruthObservation, Heading)>, SimError> {
    let epoch = sim_epoch();
    let mut out = Vec::with_capacity(points.len() * 4);
    for (i, rp) in points.iter().enumerate() {
        for heading in Heading::ALL {
            let stream = (i * 4 + heading.index()) as u64;
            let mut rng = scenario.rng_for(RngDomain::TestPoints, stream);
            let readings = simulate_readings(scenario, (rp.x, rp.y), heading, &mut rng)?;
            out.push((
                TruthObservation {
                    observation: Observation {
                        readings,
                        timestamp: epoch + Duration::seconds(stream as i64),
                        heading_hint: Some(heading),
                    },
                    x: rp.x,
                    y: rp.y,
                },
                heading,
            ));
        }
    }
    Ok(out)
}

/// `scenario.json` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub area: SurveyArea,
    pub aps: Vec<ScenarioAp>,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub dropout: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioAp {
    pub bssid: Bssid,
    pub band: Band,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssid: Option<String>,
    pub x: f64,
    pub y: f64,
    pub tx_power: f64,
    pub ref_loss: f64,
    pub exponent: f64,
    pub shadowing_std: f64,
    pub body_attenuation: f64,
}

impl From<&SimScenario> for ScenarioFile {
    fn from(s: &SimScenario) -> Self {
        ScenarioFile {
            area: s.area.clone(),
            aps: s
                .aps
                .iter()
                .map(|ap| ScenarioAp {
                    bssid: ap.id.bssid,
                    band: ap.id.band,
                    ssid: ap.id.ssid.clone(),
                    x: ap.position.0,
                    y: ap.position.1,
                    tx_power: ap.params.tx_power,
                    ref_loss: ap.params.ref_loss,
                    exponent: ap.params.exponent,
                    shadowing_std: ap.params.shadowing_std,
                    body_attenuation: ap.params.body_attenuation,
                })
                .collect(),
            seed: s.rng_seed,
            dropout: s.dropout,
        }
    }
}

impl TryFrom<ScenarioFile> for SimScenario {
    type Error = SimError;

    fn try_from(f: ScenarioFile) -> Result<Self, Self::Error> {
        let aps = f
            .aps
            .into_iter()
            .map(|a| VirtualAp {
                id: AccessPointId { bssid: a.bssid, band: a.band, ssid: a.ssid },
                position: (a.x, a.y),
                params: PathLossParams {
                    tx_power: a.tx_power,
                    ref_loss: a.ref_loss,
                    exponent: a.exponent,
                    shadowing_std: a.shadowing_std,
                    body_attenuation: a.body_attenuation,
                },
            })
            .collect();
        let scenario = SimScenario { area: f.area, aps, rng_seed: f.seed, dropout: f.dropout };
        scenario.validate()?;
        Ok(scenario)
    }
}

impl SimScenario {
    pub fn from_json(s: &str) -> Result<Self, SimError> {
        let file: ScenarioFile =
            serde_json::from_str(s).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScenarioFile::from(self)).expect("scenario serializes")
    }
}
