//! Online phase: maximum-likelihood position estimates from a single scan,
//! and accuracy evaluation against ground truth.

use std::f64::consts::PI;
use std::io::{self, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{readings_to_records, records_to_readings, timestamp, ReadingRecord};
use crate::model::{check_readings, Heading, Readings, ValidationError};
use crate::radiomap::{DenseRadioMap, Surface};

pub const DEFAULT_MIN_MATCH: usize = 3;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocalizeError {
    #[error("radio map has no surfaces")]
    EmptyRadioMap,
    #[error("fewer than {min_match} access points in common with the radio map at every cell")]
    InsufficientOverlap { min_match: usize },
    #[error("no observations to evaluate")]
    EmptyInput,
    #[error(transparent)]
    InvalidObservation(#[from] ValidationError),
}

/// A live scan to be localized.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub readings: Readings,
    pub timestamp: DateTime<Utc>,
    pub heading_hint: Option<Heading>,
}

impl Observation {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.readings.is_empty() {
            return Err(ValidationError::EmptyReadings { point_id: "<observation>".into() });
        }
        check_readings(&self.readings)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationRecord {
    #[serde(with = "timestamp")]
    t: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    heading_deg: Option<Heading>,
    readings: Vec<ReadingRecord>,
}

impl Serialize for Observation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ObservationRecord {
            t: self.timestamp,
            heading_deg: self.heading_hint,
            readings: readings_to_records(&self.readings),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Observation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let r = ObservationRecord::deserialize(deserializer)?;
        Ok(Observation {
            readings: records_to_readings(r.readings).map_err(serde::de::Error::custom)?,
            timestamp: r.t,
            heading_hint: r.heading_deg,
        })
    }
}

/// An observation paired with where it was really taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthObservation {
    pub observation: Observation,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCell {
    pub cell: usize,
    #[serde(rename = "heading_deg")]
    pub heading: Heading,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub x: f64,
    pub y: f64,
    #[serde(rename = "heading_deg")]
    pub heading_est: Heading,
    pub log_likelihood: f64,
    pub top_cells: Vec<ScoredCell>,
    pub matched_ap_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizerConfig {
    pub k: usize,
    pub min_match: usize,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        LocalizerConfig { k: DEFAULT_TOP_K, min_match: DEFAULT_MIN_MATCH }
    }
}

/// `log N(r; μ, σ)`.
#[inline]
pub fn log_normal_density(r: f64, mean: f64, std: f64) -> f64 {
    let z = (r - mean) / std;
    -0.5 * (2.0 * PI * std * std).ln() - 0.5 * z * z
}

/// Surfaces of `heading` paired with the observed RSSI of their AP, in AP
/// order so sums do not depend on how the map lists its surfaces.
fn matched_surfaces<'a>(obs: &Observation, map: &'a DenseRadioMap, heading: Heading) -> Vec<(&'a Surface, f64)> {
    obs.readings
        .iter()
        .filter_map(|(ap, &r)| map.surface(heading, ap).map(|s| (s, r as f64)))
        .collect()
}

fn score_matched(matched: &[(&Surface, f64)], cell: usize) -> f64 {
    matched.iter().map(|(s, r)| log_normal_density(*r, s.mean[cell], s.std[cell])).sum()
}

/// Log-likelihood of `obs` at one cell and heading, summed over the APs
/// present in both the observation and the map. `None` when fewer than
/// `min_match` APs are shared.
pub fn score_cell(obs: &Observation, map: &DenseRadioMap, cell: usize, heading: Heading, min_match: usize) -> Option<f64> {
    let matched = matched_surfaces(obs, map, heading);
    if matched.len() < min_match.max(1) || cell >= map.grid.len() {
        return None;
    }
    Some(score_matched(&matched, cell))
}

/// Estimates position as the likelihood-weighted centroid of the `k` best
/// cells at the best heading. Headings are searched in N, E, S, W order and
/// cells in index order; earlier entries win exact ties.
pub fn localize(obs: &Observation, map: &DenseRadioMap, config: LocalizerConfig) -> Result<PositionEstimate, LocalizeError> {
    if map.is_empty() {
        return Err(LocalizeError::EmptyRadioMap);
    }
    obs.validate()?;
    let headings: Vec<Heading> = match obs.heading_hint {
        Some(h) => vec![h],
        None => Heading::ALL.to_vec(),
    };

    let mut best: Option<(Heading, usize, Vec<f64>)> = None;
    let mut best_ll = f64::NEG_INFINITY;
    for heading in headings {
        let matched = matched_surfaces(obs, map, heading);
        if matched.len() < config.min_match.max(1) {
            continue;
        }
        let scores: Vec<f64> = (0..map.grid.len()).map(|c| score_matched(&matched, c)).collect();
        let ll = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if best.is_none() || ll > best_ll {
            best_ll = ll;
            best = Some((heading, matched.len(), scores));
        }
    }

    let (heading, matched_ap_count, scores) =
        best.ok_or(LocalizeError::InsufficientOverlap { min_match: config.min_match })?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(config.k.max(1));

    let ll_max = scores[order[0]];
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for &c in &order {
        let w = (scores[c] - ll_max).exp();
        let [cx, cy] = map.grid.center(c);
        sx += w * cx;
        sy += w * cy;
        sw += w;
    }

    Ok(PositionEstimate {
        x: sx / sw,
        y: sy / sw,
        heading_est: heading,
        log_likelihood: ll_max,
        top_cells: order
            .iter()
            .map(|&c| ScoredCell { cell: c, heading, log_likelihood: scores[c] })
            .collect(),
        matched_ap_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub ground_truth: (f64, f64),
    pub estimate: PositionEstimate,
    pub error_m: f64,
}

impl AccuracyRecord {
    pub fn new(ground_truth: (f64, f64), estimate: PositionEstimate) -> Self {
        let error_m = euclidean(ground_truth, (estimate.x, estimate.y));
        AccuracyRecord { ground_truth, estimate, error_m }
    }
}

pub fn euclidean(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

/// Aggregate error statistics. With `n = 1` the standard deviation is
/// undefined and reported as 0; with `n = 0` the mean is absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub mean_error_m: Option<f64>,
    pub std_error_m: f64,
    pub n: usize,
    pub skipped: usize,
}

impl AccuracySummary {
    pub fn from_errors(errors: &[f64], skipped: usize) -> Self {
        let n = errors.len();
        if n == 0 {
            return AccuracySummary { mean_error_m: None, std_error_m: 0.0, n, skipped };
        }
        let mean = errors.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
        };
        AccuracySummary { mean_error_m: Some(mean), std_error_m: std, n, skipped }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub records: Vec<AccuracyRecord>,
    /// Input indices that could not be localized for lack of overlap.
    pub skipped: Vec<usize>,
    pub summary: AccuracySummary,
}

/// Localizes every observation and measures its error against the paired
/// ground truth.
pub fn evaluate(items: &[TruthObservation], map: &DenseRadioMap, config: LocalizerConfig) -> Result<Evaluation, LocalizeError> {
    if items.is_empty() {
        return Err(LocalizeError::EmptyInput);
    }
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (idx, item) in items.iter().enumerate() {
        match localize(&item.observation, map, config) {
            Ok(est) => records.push(AccuracyRecord::new((item.x, item.y), est)),
            Err(LocalizeError::InsufficientOverlap { .. }) => skipped.push(idx),
            Err(e) => return Err(e),
        }
    }
    let errors: Vec<f64> = records.iter().map(|r| r.error_m).collect();
    let summary = AccuracySummary::from_errors(&errors, skipped.len());
    Ok(Evaluation { records, skipped, summary })
}

pub const ACCURACY_CSV_HEADER: &str = "gt_x,gt_y,est_x,est_y,heading_est,error_m,matched_aps";

/// Writes records as CSV with a header row, floats at full precision.
pub fn write_accuracy_csv<W: Write>(records: &[AccuracyRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{ACCURACY_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{:?},{:?},{:?},{:?},{},{:?},{}",
            r.ground_truth.0,
            r.ground_truth.1,
            r.estimate.x,
            r.estimate.y,
            r.estimate.heading_est,
            r.error_m,
            r.estimate.matched_ap_count
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpr::GprHyperparams;
    use crate::model::{AccessPointId, Band, Bssid};
    use crate::radiomap::{GridSpec, SurfaceHyperparams};

    fn ap(n: u8) -> AccessPointId {
        AccessPointId::new(Bssid::new([0, 1, 2, 3, 4, n]), Band::Band2_4GHz)
    }

    fn surface(heading: Heading, n: u8, mean: Vec<f64>, std: Vec<f64>) -> Surface {
        let hp = GprHyperparams::DEFAULT;
        Surface {
            heading,
            bssid: ap(n).bssid,
            band: Band::Band2_4GHz,
            ssid: None,
            hyperparams: SurfaceHyperparams { mean: hp, std: hp },
            mean,
            std,
        }
    }

    fn obs(readings: &[(u8, i32)], hint: Option<Heading>) -> Observation {
        Observation {
            readings: readings.iter().map(|&(n, r)| (ap(n), r)).collect(),
            timestamp: "2024-01-01T00:00:00Z".parse().unwrap(),
            heading_hint: hint,
        }
    }

    /// 2 cells (2 × 1 grid), 2 APs, heading N only.
    fn toy_map() -> DenseRadioMap {
        DenseRadioMap {
            grid: GridSpec::new(2.0, 1.0, 1.0).unwrap(),
            surfaces: vec![
                surface(Heading::N, 1, vec![-50.0, -60.0], vec![2.0, 4.0]),
                surface(Heading::N, 2, vec![-70.0, -55.0], vec![3.0, 1.5]),
            ],
        }
    }

    #[test]
    fn toy_map_log_likelihood_by_hand() {
        let map = toy_map();
        let o = obs(&[(1, -52), (2, -66)], None);
        // cell 0: z1 = (−52+50)/2 = −1, z2 = (−66+70)/3 = 4/3
        let c0 = -0.5 * (2.0 * PI * 4.0).ln() - 0.5 * 1.0 - 0.5 * (2.0 * PI * 9.0).ln() - 0.5 * (16.0 / 9.0);
        // cell 1: z1 = (−52+60)/4 = 2, z2 = (−66+55)/1.5 = −22/3
        let c1 = -0.5 * (2.0 * PI * 16.0).ln() - 0.5 * 4.0 - 0.5 * (2.0 * PI * 2.25).ln() - 0.5 * (484.0 / 9.0);
        assert!((score_cell(&o, &map, 0, Heading::N, 2).unwrap() - c0).abs() < 1e-12);
        assert!((score_cell(&o, &map, 1, Heading::N, 2).unwrap() - c1).abs() < 1e-12);
        // Frozen from scipy.stats.norm.logpdf.
        assert!((c0 - (-5.018_525_424_526_29)).abs() < 1e-9, "{c0}");
        assert!((c1 - (-32.518_525_424_526_29)).abs() < 1e-9, "{c1}");
    }

    #[test]
    fn too_few_common_aps_skips() {
        let map = toy_map();
        let o = obs(&[(1, -52), (9, -40)], None);
        assert_eq!(score_cell(&o, &map, 0, Heading::N, 3), None);
        assert_eq!(
            localize(&o, &map, LocalizerConfig { k: 1, min_match: 3 }).unwrap_err(),
            LocalizeError::InsufficientOverlap { min_match: 3 }
        );
    }

    #[test]
    fn exact_means_win_with_k1() {
        let grid = GridSpec::new(3.0, 3.0, 1.0).unwrap();
        let means = |n: u8| (0..9).map(|c| -40.0 - (c as f64) * (n as f64)).collect::<Vec<_>>();
        let map = DenseRadioMap {
            grid,
            surfaces: (1..=3)
                .flat_map(|n| {
                    [Heading::N, Heading::E].map(|h| {
                        let shift = if h == Heading::E { 5.0 } else { 0.0 };
                        surface(h, n, means(n).iter().map(|m| m - shift).collect(), vec![2.0; 9])
                    })
                })
                .collect(),
        };
        // Means of cell 4 at heading E.
        let o = obs(&[(1, -49), (2, -53), (3, -57)], None);
        let est = localize(&o, &map, LocalizerConfig { k: 1, min_match: 3 }).unwrap();
        assert_eq!(est.heading_est, Heading::E);
        assert_eq!(est.top_cells[0].cell, 4);
        assert_eq!((est.x, est.y), (1.5, 1.5));
        assert_eq!(est.matched_ap_count, 3);

        let est5 = localize(&o, &map, LocalizerConfig { k: 5, min_match: 3 }).unwrap();
        assert_eq!(est5.top_cells.len(), 5);
        assert!(est5.top_cells.windows(2).all(|w| w[0].log_likelihood >= w[1].log_likelihood));
        let xs: Vec<f64> = est5.top_cells.iter().map(|c| map.grid.center(c.cell)[0]).collect();
        let ys: Vec<f64> = est5.top_cells.iter().map(|c| map.grid.center(c.cell)[1]).collect();
        let within = |v: f64, s: &[f64]| {
            v >= s.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-12
                && v <= s.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-12
        };
        assert!(within(est5.x, &xs) && within(est5.y, &ys));

        // A hint restricts the search to one heading.
        let hinted = localize(&obs(&[(1, -49), (2, -53), (3, -57)], Some(Heading::N)), &map, LocalizerConfig { k: 1, min_match: 3 }).unwrap();
        assert_eq!(hinted.heading_est, Heading::N);
    }

    #[test]
    fn empty_map_and_invalid_observation() {
        let map = DenseRadioMap { grid: GridSpec::new(1.0, 1.0, 1.0).unwrap(), surfaces: vec![] };
        assert_eq!(localize(&obs(&[(1, -50)], None), &map, LocalizerConfig::default()).unwrap_err(), LocalizeError::EmptyRadioMap);
        assert!(matches!(
            localize(&obs(&[(1, 3)], None), &toy_map(), LocalizerConfig::default()),
            Err(LocalizeError::InvalidObservation(_))
        ));
    }

    #[test]
    fn accuracy_summary_arithmetic() {
        let s = AccuracySummary::from_errors(&[2.0, 4.0], 0);
        assert_eq!(s.mean_error_m, Some(3.0));
        assert_eq!(s.std_error_m, 2f64.sqrt());
        let one = AccuracySummary::from_errors(&[1.5], 2);
        assert_eq!((one.mean_error_m, one.std_error_m, one.n, one.skipped), (Some(1.5), 0.0, 1, 2));
        assert_eq!(AccuracySummary::from_errors(&[], 1).mean_error_m, None);
        assert_eq!(euclidean((0.0, 0.0), (3.0, 4.0)), 5.0);
    }

    #[test]
    fn csv_layout() {
        let est = PositionEstimate {
            x: 3.0,
            y: 4.0,
            heading_est: Heading::S,
            log_likelihood: -1.0,
            top_cells: vec![],
            matched_ap_count: 4,
        };
        let mut buf = Vec::new();
        write_accuracy_csv(&[AccuracyRecord::new((0.0, 0.0), est)], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{ACCURACY_CSV_HEADER}\n0.0,0.0,3.0,4.0,S,5.0,4\n"));
    }

    #[test]
    fn observation_json_roundtrip() {
        let o = obs(&[(1, -52), (2, -66)], Some(Heading::W));
        let json = serde_json::to_string(&o).unwrap();
        assert!(json.contains("\"heading_deg\":270"));
        assert_eq!(serde_json::from_str::<Observation>(&json).unwrap(), o);
    }
}
