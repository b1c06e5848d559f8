#![allow(dead_code)]

use ips_core::simulator::PathLossParams;
use ips_core::*;

/// 9 m × 6 m room with a 1 m interior grid (54 reference points) and three
/// dual-band APs.
pub fn small_room(seed: u64) -> SimScenario {
    let area = SurveyArea::with_interior_grid(9.0, 6.0, 1.0);
    let sites = [(0.5, 0.5), (8.5, 1.0), (4.5, 5.5)];
    let aps = sites
        .iter()
        .enumerate()
        .flat_map(|(i, &pos)| {
            [Band::Band2_4GHz, Band::Band5GHz].map(|band| VirtualAp {
                id: AccessPointId::new(Bssid::new([0x02, 0, 0, 0, 0, i as u8 + 1]), band),
                position: pos,
                params: PathLossParams::for_band(band),
            })
        })
        .collect();
    SimScenario::new(area, aps, seed).unwrap()
}

pub fn survey(sc: &SimScenario, scans: usize) -> Vec<FingerprintSample> {
    simulate_survey(sc, &sc.area.reference_points, scans).unwrap()
}
