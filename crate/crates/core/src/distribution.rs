//! Per-cell normal distributions fitted to the raw survey scans.
//!
//! A cell is one `(reference point, heading, access point)` combination.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AccessPointId, FingerprintSample, Heading, SurveyArea};

/// Lower bound on every fitted standard deviation, in dB.
pub const SIGMA_FLOOR_DB: f64 = 1.0;
pub const DEFAULT_MIN_PRESENCE: f64 = 0.2;
/// Maximum distance between a sample and the reference point it belongs to.
pub const RP_MATCH_TOLERANCE_M: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("no samples to fit")]
    EmptyInput,
    #[error("sample {point_id:?} at ({x}, {y}) matches no reference point")]
    UnknownReferencePoint { point_id: String, x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellDistribution {
    pub mean_dbm: f64,
    pub std_dbm: f64,
    pub sample_count: usize,
}

impl CellDistribution {
    /// Mean and floored sample standard deviation (n-1 denominator).
    ///
    /// Computed from integer moments so the result does not depend on the
    /// order of `readings`.
    pub fn from_readings(readings: &[i32]) -> Option<Self> {
        let n = readings.len();
        if n == 0 {
            return None;
        }
        let sum: i64 = readings.iter().map(|&r| r as i64).sum();
        let sum_sq: i64 = readings.iter().map(|&r| (r as i64) * (r as i64)).sum();
        let mean = sum as f64 / n as f64;
        let std = if n < 2 {
            SIGMA_FLOOR_DB
        } else {
            // n * Σr² − (Σr)² is exact in integers and never negative.
            let scatter = (n as i64) * sum_sq - sum * sum;
            let var = scatter as f64 / (n as f64 * (n as f64 - 1.0));
            var.sqrt().max(SIGMA_FLOOR_DB)
        };
        Some(CellDistribution { mean_dbm: mean, std_dbm: std, sample_count: n })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub point_id: String,
    pub heading: Heading,
    pub ap: AccessPointId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseRadioMap {
    pub area: SurveyArea,
    pub cells: BTreeMap<CellKey, CellDistribution>,
    pub ap_index: Vec<AccessPointId>,
}

impl SparseRadioMap {
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Fitted cells for one `(heading, ap)` surface, in reference point id order.
    pub fn surface_cells<'a>(
        &'a self,
        heading: Heading,
        ap: &'a AccessPointId,
    ) -> impl Iterator<Item = (&'a str, &'a CellDistribution)> + 'a {
        self.cells
            .iter()
            .filter(move |(k, _)| k.heading == heading && &k.ap == ap)
            .map(|(k, d)| (k.point_id.as_str(), d))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SparseMapDoc::from(self)).expect("sparse map serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        let doc: SparseMapDoc = serde_json::from_str(s)?;
        Ok(doc.into())
    }
}

#[derive(Serialize, Deserialize)]
struct SparseCellDoc {
    point_id: String,
    heading_deg: Heading,
    #[serde(flatten)]
    ap: AccessPointId,
    mean_dbm: f64,
    std_dbm: f64,
    sample_count: usize,
}

#[derive(Serialize, Deserialize)]
struct SparseMapDoc {
    area: SurveyArea,
    ap_index: Vec<AccessPointId>,
    cells: Vec<SparseCellDoc>,
}

impl From<&SparseRadioMap> for SparseMapDoc {
    fn from(m: &SparseRadioMap) -> Self {
        SparseMapDoc {
            area: m.area.clone(),
            ap_index: m.ap_index.clone(),
            cells: m
                .cells
                .iter()
                .map(|(k, d)| SparseCellDoc {
                    point_id: k.point_id.clone(),
                    heading_deg: k.heading,
                    ap: k.ap.clone(),
                    mean_dbm: d.mean_dbm,
                    std_dbm: d.std_dbm,
                    sample_count: d.sample_count,
                })
                .collect(),
        }
    }
}

impl From<SparseMapDoc> for SparseRadioMap {
    fn from(doc: SparseMapDoc) -> Self {
        let cells = doc
            .cells
            .into_iter()
            .map(|c| {
                (
                    CellKey { point_id: c.point_id, heading: c.heading_deg, ap: c.ap },
                    CellDistribution { mean_dbm: c.mean_dbm, std_dbm: c.std_dbm, sample_count: c.sample_count },
                )
            })
            .collect();
        SparseRadioMap { area: doc.area, cells, ap_index: doc.ap_index }
    }
}

fn match_reference_point<'a>(area: &'a SurveyArea, s: &FingerprintSample) -> Result<&'a str, FitError> {
    let near = |x: f64, y: f64| (x - s.x).hypot(y - s.y) <= RP_MATCH_TOLERANCE_M;
    // Prefer the declared id when it agrees with the coordinates.
    if let Some(rp) = area.reference_point(&s.point_id) {
        if near(rp.x, rp.y) {
            return Ok(&rp.point_id);
        }
    }
    area.reference_points
        .iter()
        .filter(|rp| near(rp.x, rp.y))
        .min_by(|a, b| {
            let da = (a.x - s.x).hypot(a.y - s.y);
            let db = (b.x - s.x).hypot(b.y - s.y);
            da.total_cmp(&db).then_with(|| a.point_id.cmp(&b.point_id))
        })
        .map(|rp| rp.point_id.as_str())
        .ok_or_else(|| FitError::UnknownReferencePoint {
            point_id: s.point_id.clone(),
            x: s.x,
            y: s.y,
        })
}

/// Fits a normal distribution to every `(reference point, heading, AP)`
/// group. An AP enters a cell only when heard in at least `min_presence` of
/// that cell's scans; missing readings are excluded, not imputed.
pub fn fit_distributions(
    samples: &[FingerprintSample],
    area: &SurveyArea,
    min_presence: f64,
) -> Result<SparseRadioMap, FitError> {
    if samples.is_empty() {
        return Err(FitError::EmptyInput);
    }

    let mut scans: BTreeMap<(String, Heading), usize> = BTreeMap::new();
    let mut groups: BTreeMap<CellKey, Vec<i32>> = BTreeMap::new();
    // First-seen SSID per AP in sample order, so display names are stable.
    let mut names: BTreeMap<AccessPointId, AccessPointId> = BTreeMap::new();

    for s in samples {
        let rp = match_reference_point(area, s)?;
        *scans.entry((rp.to_string(), s.heading)).or_default() += 1;
        for (ap, &rssi) in &s.readings {
            names.entry(ap.clone()).or_insert_with(|| ap.clone());
            groups
                .entry(CellKey { point_id: rp.to_string(), heading: s.heading, ap: ap.clone() })
                .or_default()
                .push(rssi);
        }
    }

    let mut cells = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (mut key, readings) in groups {
        let total = scans[&(key.point_id.clone(), key.heading)];
        if (readings.len() as f64) < min_presence * total as f64 {
            continue;
        }
        let dist = CellDistribution::from_readings(&readings).expect("groups are non-empty");
        key.ap = names[&key.ap].clone();
        seen.insert(key.ap.clone());
        cells.insert(key, dist);
    }

    let ap_index = seen.into_iter().collect();
    Ok(SparseRadioMap { area: area.clone(), cells, ap_index })
}

/// Number of reference points with a fitted cell, per `(heading, ap)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageReport {
    pub counts: BTreeMap<(Heading, AccessPointId), usize>,
}

impl CoverageReport {
    pub fn count(&self, heading: Heading, ap: &AccessPointId) -> usize {
        self.counts.get(&(heading, ap.clone())).copied().unwrap_or(0)
    }

    pub fn total_for_heading(&self, heading: Heading) -> usize {
        self.counts.iter().filter(|((h, _), _)| *h == heading).map(|(_, c)| c).sum()
    }
}

pub fn coverage_report(map: &SparseRadioMap) -> CoverageReport {
    let mut counts = BTreeMap::new();
    for key in map.cells.keys() {
        *counts.entry((key.heading, key.ap.clone())).or_insert(0) += 1;
    }
    CoverageReport { counts }
}
