//! Dense radio map: a regular grid of per-cell Gaussians for every
//! `(heading, access point)` surface, produced by GPR over the sparse map.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{SparseRadioMap, SIGMA_FLOOR_DB};
use crate::gpr::{gpr_fit, select_hyperparams, GprError, GprHyperparams, Point2};
use crate::model::{AccessPointId, Band, Bssid, Heading};

/// Upper bound on dense standard deviations, in dB.
pub const SIGMA_CAP_DB: f64 = 15.0;
/// Surfaces with fewer fitted reference points are skipped.
pub const MIN_SURFACE_CELLS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensifyError {
    #[error("sparse radio map has no cells")]
    EmptySparseMap,
    #[error("grid spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("surface {heading}/{ap}: {source}")]
    Surface {
        heading: Heading,
        ap: String,
        #[source]
        source: GprError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperPolicy {
    #[default]
    Fixed,
    GridSearch,
}

impl FromStr for HyperPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(HyperPolicy::Fixed),
            "grid-search" => Ok(HyperPolicy::GridSearch),
            other => Err(format!("unknown hyper policy {other:?}, expected fixed or grid-search")),
        }
    }
}

impl fmt::Display for HyperPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HyperPolicy::Fixed => "fixed",
            HyperPolicy::GridSearch => "grid-search",
        })
    }
}

/// Grid of `nx × ny` cells of side `spacing` with centers at
/// `((i + ½)Δ, (j + ½)Δ)`. Cell index is `j·nx + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width: f64,
    pub height: f64,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(width: f64, height: f64, spacing: f64) -> Result<Self, DensifyError> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(DensifyError::InvalidSpacing(spacing));
        }
        let nx = (width / spacing).ceil().max(1.0) as usize;
        let ny = (height / spacing).ceil().max(1.0) as usize;
        Ok(GridSpec { width, height, spacing, nx, ny })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, index: usize) -> Point2 {
        let i = index % self.nx;
        let j = index / self.nx;
        [(i as f64 + 0.5) * self.spacing, (j as f64 + 0.5) * self.spacing]
    }

    pub fn centers(&self) -> Vec<Point2> {
        (0..self.len()).map(|c| self.center(c)).collect()
    }

    /// Index of the cell containing `(x, y)`, clamped to the grid.
    pub fn cell_at(&self, x: f64, y: f64) -> usize {
        let clamp = |v: f64, n: usize| ((v / self.spacing).floor().max(0.0) as usize).min(n - 1);
        clamp(y, self.ny) * self.nx + clamp(x, self.nx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceHyperparams {
    pub mean: GprHyperparams,
    pub std: GprHyperparams,
}

/// Mean and standard deviation of one AP's RSS seen at one heading, per grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    #[serde(rename = "heading")]
    pub heading: Heading,
    pub bssid: Bssid,
    pub band: Band,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssid: Option<String>,
    pub hyperparams: SurfaceHyperparams,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Surface {
    pub fn ap(&self) -> AccessPointId {
        AccessPointId { bssid: self.bssid, band: self.band, ssid: self.ssid.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSurface {
    pub heading: Heading,
    pub ap: AccessPointId,
    pub cells: usize,
}

/// Serialized as `radiomap.json`: the grid header followed by the surfaces
/// sorted by `(heading, bssid, band)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseRadioMap {
    pub grid: GridSpec,
    pub surfaces: Vec<Surface>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RadioMapFormatError {
    #[error("invalid radio map json: {0}")]
    Json(String),
    #[error("surface {0} has {1} values, grid has {2} cells")]
    LengthMismatch(usize, usize, usize),
    #[error("duplicate surface for {0}")]
    DuplicateSurface(String),
    #[error("surface {0} has a non-finite or non-positive std")]
    BadStd(usize),
}

impl DenseRadioMap {
    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn surfaces_for(&self, heading: Heading) -> impl Iterator<Item = &Surface> {
        self.surfaces.iter().filter(move |s| s.heading == heading)
    }

    pub fn surface(&self, heading: Heading, ap: &AccessPointId) -> Option<&Surface> {
        self.surfaces
            .iter()
            .find(|s| s.heading == heading && s.bssid == ap.bssid && s.band == ap.band)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("radio map serializes");
        s.push('\n');
        s
    }

    /// Parses and checks structural invariants.
    pub fn from_json(s: &str) -> Result<Self, RadioMapFormatError> {
        let map: DenseRadioMap = serde_json::from_str(s).map_err(|e| RadioMapFormatError::Json(e.to_string()))?;
        map.check()?;
        Ok(map)
    }

    pub fn check(&self) -> Result<(), RadioMapFormatError> {
        let cells = self.grid.len();
        let mut seen = std::collections::BTreeSet::new();
        for (idx, s) in self.surfaces.iter().enumerate() {
            if s.mean.len() != cells || s.std.len() != cells {
                return Err(RadioMapFormatError::LengthMismatch(idx, s.mean.len().max(s.std.len()), cells));
            }
            if !seen.insert((s.heading, s.bssid, s.band)) {
                return Err(RadioMapFormatError::DuplicateSurface(format!("{}/{}@{}", s.heading, s.bssid, s.band)));
            }
            if s.std.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(RadioMapFormatError::BadStd(idx));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyOutput {
    pub map: DenseRadioMap,
    pub skipped: Vec<SkippedSurface>,
}

type TrainingSet = Vec<(Point2, f64)>;
/// Per coordinate: position, summed mean, summed std, cell count.
type CoordSums = BTreeMap<(u64, u64), (Point2, f64, f64, usize)>;

fn surface_training_sets(sparse: &SparseRadioMap) -> BTreeMap<(Heading, AccessPointId), (TrainingSet, TrainingSet)> {
    // Average cells sharing a coordinate so GP inputs stay distinct.
    let mut acc: BTreeMap<(Heading, AccessPointId), CoordSums> = BTreeMap::new();
    for (key, dist) in &sparse.cells {
        let rp = sparse
            .area
            .reference_point(&key.point_id)
            .expect("sparse map cells reference declared points");
        let slot = acc
            .entry((key.heading, key.ap.clone()))
            .or_default()
            .entry((rp.x.to_bits(), rp.y.to_bits()))
            .or_insert(([rp.x, rp.y], 0.0, 0.0, 0));
        slot.1 += dist.mean_dbm;
        slot.2 += dist.std_dbm;
        slot.3 += 1;
    }
    acc.into_iter()
        .map(|(k, pts)| {
            let means = pts.values().map(|&(p, m, _, c)| (p, m / c as f64)).collect();
            let stds = pts.values().map(|&(p, _, s, c)| (p, s / c as f64)).collect();
            (k, (means, stds))
        })
        .collect()
}

fn choose(points: &[(Point2, f64)], policy: HyperPolicy, fixed: GprHyperparams) -> Result<GprHyperparams, GprError> {
    match policy {
        HyperPolicy::Fixed => Ok(fixed),
        HyperPolicy::GridSearch => select_hyperparams(points, &GprHyperparams::default_grid()),
    }
}

/// Interpolates every `(heading, ap)` surface with at least three fitted
/// reference points onto a grid of side `spacing`.
pub fn densify(sparse: &SparseRadioMap, spacing: f64, policy: HyperPolicy) -> Result<DensifyOutput, DensifyError> {
    densify_with(sparse, spacing, policy, GprHyperparams::DEFAULT)
}

/// [`densify`] with explicit hyperparameters for the fixed policy.
pub fn densify_with(
    sparse: &SparseRadioMap,
    spacing: f64,
    policy: HyperPolicy,
    fixed: GprHyperparams,
) -> Result<DensifyOutput, DensifyError> {
    if sparse.is_empty() {
        return Err(DensifyError::EmptySparseMap);
    }
    let grid = GridSpec::new(sparse.area.width, sparse.area.height, spacing)?;
    let probes = grid.centers();
    let ssids: BTreeMap<&AccessPointId, &AccessPointId> = sparse.ap_index.iter().map(|a| (a, a)).collect();

    let mut skipped = Vec::new();
    let mut jobs = Vec::new();
    for ((heading, ap), (means, stds)) in surface_training_sets(sparse) {
        if means.len() < MIN_SURFACE_CELLS {
            skipped.push(SkippedSurface { heading, ap, cells: means.len() });
        } else {
            jobs.push((heading, ap, means, stds));
        }
    }

    let surfaces = jobs
        .into_par_iter()
        .map(|(heading, ap, means, stds)| {
            let wrap = |source| DensifyError::Surface { heading, ap: ap.to_string(), source };
            let mean_hp = choose(&means, policy, fixed).map_err(wrap)?;
            let std_hp = choose(&stds, policy, fixed).map_err(wrap)?;
            let mean_model = gpr_fit(&means, mean_hp).map_err(wrap)?;
            let std_model = gpr_fit(&stds, std_hp).map_err(wrap)?;
            let mean = mean_model.predict(&probes).into_iter().map(|p| p.mean).collect();
            let std = std_model
                .predict(&probes)
                .into_iter()
                .map(|p| p.mean.clamp(SIGMA_FLOOR_DB, SIGMA_CAP_DB))
                .collect();
            let named = ssids.get(&ap).map(|a| (*a).clone()).unwrap_or(ap);
            Ok(Surface {
                heading,
                bssid: named.bssid,
                band: named.band,
                ssid: named.ssid,
                hyperparams: SurfaceHyperparams { mean: mean_hp, std: std_hp },
                mean,
                std,
            })
        })
        .collect::<Result<Vec<_>, DensifyError>>()?;

    Ok(DensifyOutput { map: DenseRadioMap { grid, surfaces }, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{CellDistribution, CellKey};
    use crate::model::{ReferencePoint, SurveyArea};

    fn ap(n: u8) -> AccessPointId {
        AccessPointId::new(Bssid::new([2, 0, 0, 0, 0, n]), Band::Band5GHz)
    }

    fn sparse_from(rps: &[(f64, f64, f64, f64)], width: f64, height: f64) -> SparseRadioMap {
        let area = SurveyArea::new(
            width,
            height,
            rps.iter().enumerate().map(|(i, &(x, y, _, _))| ReferencePoint::new(format!("rp-{i}"), x, y)).collect(),
        );
        let cells = rps
            .iter()
            .enumerate()
            .map(|(i, &(_, _, m, s))| {
                (
                    CellKey { point_id: format!("rp-{i}"), heading: Heading::N, ap: ap(1) },
                    CellDistribution { mean_dbm: m, std_dbm: s, sample_count: 10 },
                )
            })
            .collect();
        SparseRadioMap { area, cells, ap_index: vec![ap(1)] }
    }

    #[test]
    fn benchmark_room_grid_is_14_by_14() {
        let g = GridSpec::new(13.75, 13.5, 1.0).unwrap();
        assert_eq!((g.nx, g.ny, g.len()), (14, 14, 196));
        assert_eq!(g.center(0), [0.5, 0.5]);
        assert_eq!(g.center(15), [1.5, 1.5]);
        assert_eq!(g.cell_at(1.7, 1.2), 15);
        assert_eq!(g.cell_at(13.75, 13.5), 195);
        assert!(GridSpec::new(10.0, 10.0, 0.0).is_err());
    }

    #[test]
    fn interpolates_at_grid_centers_without_noise() {
        let rps = [
            (0.5, 0.5, -40.0, 0.5),
            (2.5, 0.5, -55.0, 3.0),
            (1.5, 1.5, -48.0, 20.0),
            (0.5, 2.5, -62.0, 4.0),
        ];
        let sparse = sparse_from(&rps, 3.0, 3.0);
        let out = densify_with(&sparse, 1.0, HyperPolicy::Fixed, GprHyperparams::new(6.0, 1.0, 0.0).unwrap()).unwrap();
        let s = &out.map.surfaces[0];
        assert_eq!(s.mean.len(), 9);
        for &(x, y, m, sd) in &rps {
            let c = out.map.grid.cell_at(x, y);
            assert!((s.mean[c] - m).abs() < 1e-6, "{} vs {m}", s.mean[c]);
            assert!((s.std[c] - sd.clamp(SIGMA_FLOOR_DB, SIGMA_CAP_DB)).abs() < 1e-6);
        }
        assert!(s.std.iter().all(|&v| (SIGMA_FLOOR_DB..=SIGMA_CAP_DB).contains(&v)));
    }

    #[test]
    fn thin_surfaces_are_skipped() {
        let sparse = sparse_from(&[(0.5, 0.5, -40.0, 2.0), (2.5, 0.5, -50.0, 2.0)], 3.0, 3.0);
        let out = densify(&sparse, 1.0, HyperPolicy::Fixed).unwrap();
        assert!(out.map.surfaces.is_empty());
        assert_eq!(out.skipped, vec![SkippedSurface { heading: Heading::N, ap: ap(1), cells: 2 }]);
    }

    #[test]
    fn errors() {
        let mut sparse = sparse_from(&[(0.5, 0.5, -40.0, 2.0)], 3.0, 3.0);
        assert_eq!(densify(&sparse, -1.0, HyperPolicy::Fixed).unwrap_err(), DensifyError::InvalidSpacing(-1.0));
        sparse.cells.clear();
        assert_eq!(densify(&sparse, 1.0, HyperPolicy::Fixed).unwrap_err(), DensifyError::EmptySparseMap);
    }

    #[test]
    fn json_roundtrip_and_checks() {
        let rps = [(0.5, 0.5, -40.0, 2.0), (2.5, 0.5, -55.0, 3.0), (1.5, 2.5, -48.0, 2.5)];
        let out = densify(&sparse_from(&rps, 3.0, 3.0), 1.0, HyperPolicy::GridSearch).unwrap();
        let json = out.map.to_json();
        assert!(json.contains("\"grid\""));
        assert_eq!(DenseRadioMap::from_json(&json).unwrap(), out.map);

        let mut broken = out.map.clone();
        broken.surfaces[0].mean.pop();
        assert!(matches!(broken.check(), Err(RadioMapFormatError::LengthMismatch(..))));
        let mut dup = out.map.clone();
        dup.surfaces.push(dup.surfaces[0].clone());
        assert!(matches!(dup.check(), Err(RadioMapFormatError::DuplicateSurface(_))));
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("fixed".parse::<HyperPolicy>().unwrap(), HyperPolicy::Fixed);
        assert_eq!("grid-search".parse::<HyperPolicy>().unwrap(), HyperPolicy::GridSearch);
        assert!("other".parse::<HyperPolicy>().is_err());
        assert_eq!(serde_json::to_string(&HyperPolicy::GridSearch).unwrap(), "\"grid-search\"");
    }
}
