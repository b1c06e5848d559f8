//! Domain types shared by every stage of the pipeline: access point
//! identities, headings, survey samples and the survey area.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Lowest representable RSSI. Doubles as the "not heard" sentinel.
pub const RSSI_FLOOR_DBM: i32 = -100;
pub const RSSI_CEIL_DBM: i32 = 0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("rssi {rssi} dBm for {ap} outside [-100, 0]")]
    OutOfRangeRssi { ap: String, rssi: i32 },
    #[error("position ({x}, {y}) outside the survey area {width} x {height}")]
    OutOfBoundsPosition { x: f64, y: f64, width: f64, height: f64 },
    #[error("sample {point_id:?} has no readings")]
    EmptyReadings { point_id: String },
    #[error("malformed bssid {0:?}")]
    MalformedBssid(String),
    #[error("invalid survey area: {0}")]
    InvalidArea(String),
}

/// 48-bit MAC address of a radio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bssid([u8; 6]);

impl Bssid {
    pub const fn new(octets: [u8; 6]) -> Self {
        Bssid(octets)
    }

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }
}

impl FromStr for Bssid {
    type Err = ValidationError;

    /// Accepts six two-digit hex groups separated by `:` or `-`, any case.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || ValidationError::MalformedBssid(s.to_string());
        let sep = if s.contains('-') { '-' } else { ':' };
        let mut octets = [0u8; 6];
        let mut parts = s.split(sep);
        for octet in octets.iter_mut() {
            let part = parts.next().ok_or_else(malformed)?;
            if part.len() != 2 || !part.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(malformed());
            }
            *octet = u8::from_str_radix(part, 16).map_err(|_| malformed())?;
        }
        if parts.next().is_some() {
            return Err(malformed());
        }
        Ok(Bssid(octets))
    }
}

impl fmt::Display for Bssid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl Serialize for Bssid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bssid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Band {
    Band2_4GHz,
    Band5GHz,
}

impl Band {
    pub fn as_str(&self) -> &'static str {
        match self {
            Band::Band2_4GHz => "2.4",
            Band::Band5GHz => "5",
        }
    }
}

impl FromStr for Band {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "2.4" => Ok(Band::Band2_4GHz),
            "5" => Ok(Band::Band5GHz),
            other => Err(format!("unknown band {other:?}, expected \"2.4\" or \"5\"")),
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Band {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Band {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One radio of an access point. Each band of a dual-band AP is its own id.
///
/// Equality, ordering and hashing use `(bssid, band)` only; the SSID is
/// carried for display.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccessPointId {
    pub bssid: Bssid,
    pub band: Band,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssid: Option<String>,
}

impl AccessPointId {
    pub fn new(bssid: Bssid, band: Band) -> Self {
        AccessPointId { bssid, band, ssid: None }
    }

    pub fn with_ssid(mut self, ssid: impl Into<String>) -> Self {
        self.ssid = Some(ssid.into());
        self
    }

    fn key(&self) -> (Bssid, Band) {
        (self.bssid, self.band)
    }
}

impl PartialEq for AccessPointId {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for AccessPointId {}

impl Hash for AccessPointId {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state)
    }
}

impl PartialOrd for AccessPointId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AccessPointId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Display for AccessPointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.bssid, self.band)
    }
}

/// Cardinal direction the device faced during a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    /// Degrees clockwise from North.
    pub fn degrees(self) -> u16 {
        match self {
            Heading::N => 0,
            Heading::E => 90,
            Heading::S => 180,
            Heading::W => 270,
        }
    }

    pub fn from_degrees(deg: u16) -> Option<Heading> {
        match deg {
            0 => Some(Heading::N),
            90 => Some(Heading::E),
            180 => Some(Heading::S),
            270 => Some(Heading::W),
            _ => None,
        }
    }

    /// Nearest cardinal heading for an arbitrary bearing in degrees.
    pub fn nearest(bearing_deg: f64) -> Heading {
        let quadrant = (bearing_deg.rem_euclid(360.0) / 90.0).round() as i64 % 4;
        Heading::ALL[quadrant as usize]
    }

    /// Unit vector of the facing direction in area coordinates (x east, y north).
    pub fn unit_vector(self) -> (f64, f64) {
        match self {
            Heading::N => (0.0, 1.0),
            Heading::E => (1.0, 0.0),
            Heading::S => (0.0, -1.0),
            Heading::W => (-1.0, 0.0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Heading::N => "N",
            Heading::E => "E",
            Heading::S => "S",
            Heading::W => "W",
        }
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Heading {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "N" | "n" => Ok(Heading::N),
            "E" | "e" => Ok(Heading::E),
            "S" | "s" => Ok(Heading::S),
            "W" | "w" => Ok(Heading::W),
            other => other
                .parse::<u16>()
                .ok()
                .and_then(Heading::from_degrees)
                .ok_or_else(|| format!("invalid heading {other:?}")),
        }
    }
}

/// Headings serialize as their degree value.
impl Serialize for Heading {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u16(self.degrees())
    }
}

impl<'de> Deserialize<'de> for Heading {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let deg = u16::deserialize(deserializer)?;
        Heading::from_degrees(deg).ok_or_else(|| {
            serde::de::Error::custom(format!("heading_deg must be 0, 90, 180 or 270, got {deg}"))
        })
    }
}

pub type Readings = BTreeMap<AccessPointId, i32>;

/// One survey scan taken at a reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintSample {
    pub point_id: String,
    pub x: f64,
    pub y: f64,
    pub heading: Heading,
    pub timestamp: DateTime<Utc>,
    pub device_id: String,
    pub readings: Readings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferencePoint {
    pub point_id: String,
    pub x: f64,
    pub y: f64,
}

impl ReferencePoint {
    pub fn new(point_id: impl Into<String>, x: f64, y: f64) -> Self {
        ReferencePoint { point_id: point_id.into(), x, y }
    }
}

/// Rectangular survey area with origin at the south-west corner, x east and
/// y north.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyArea {
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub reference_points: Vec<ReferencePoint>,
}

impl SurveyArea {
    pub fn new(width: f64, height: f64, reference_points: Vec<ReferencePoint>) -> Self {
        SurveyArea { width, height, reference_points }
    }

    /// Interior grid of reference points at `spacing`, offset half a spacing
    /// from the walls. Ids are `rp-NNN` in row-major order from the south-west.
    pub fn with_interior_grid(width: f64, height: f64, spacing: f64) -> Self {
        let nx = (width / spacing).floor() as usize;
        let ny = (height / spacing).floor() as usize;
        let mut rps = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x = (i as f64 + 0.5) * spacing;
                let y = (j as f64 + 0.5) * spacing;
                rps.push(ReferencePoint::new(format!("rp-{:03}", rps.len()), x, y));
            }
        }
        SurveyArea::new(width, height, rps)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x.is_finite() && y.is_finite() && (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.width.is_finite() && self.width > 0.0 && self.height.is_finite() && self.height > 0.0) {
            return Err(ValidationError::InvalidArea(format!(
                "width and height must be positive, got {} x {}",
                self.width, self.height
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for rp in &self.reference_points {
            if !self.contains(rp.x, rp.y) {
                return Err(ValidationError::InvalidArea(format!(
                    "reference point {} at ({}, {}) lies outside the area",
                    rp.point_id, rp.x, rp.y
                )));
            }
            if !seen.insert(rp.point_id.as_str()) {
                return Err(ValidationError::InvalidArea(format!(
                    "duplicate reference point id {}",
                    rp.point_id
                )));
            }
        }
        Ok(())
    }

    pub fn reference_point(&self, point_id: &str) -> Option<&ReferencePoint> {
        self.reference_points.iter().find(|rp| rp.point_id == point_id)
    }
}

pub(crate) fn check_readings(readings: &Readings) -> Result<(), ValidationError> {
    for (ap, &rssi) in readings {
        if !(RSSI_FLOOR_DBM..=RSSI_CEIL_DBM).contains(&rssi) {
            return Err(ValidationError::OutOfRangeRssi { ap: ap.to_string(), rssi });
        }
    }
    Ok(())
}

/// Checks every sample invariant against `area`. Returns the sample
/// unchanged on success.
pub fn validate_sample(
    sample: FingerprintSample,
    area: &SurveyArea,
) -> Result<FingerprintSample, ValidationError> {
    if sample.readings.is_empty() {
        return Err(ValidationError::EmptyReadings { point_id: sample.point_id });
    }
    check_readings(&sample.readings)?;
    if !area.contains(sample.x, sample.y) {
        return Err(ValidationError::OutOfBoundsPosition {
            x: sample.x,
            y: sample.y,
            width: area.width,
            height: area.height,
        });
    }
    Ok(sample)
}
