//! Reachable-set sampling commands.

use std::path::Path;

use serde::Serialize;
use steering::p2::Direction;
use steering::reach::{
    boundary_coverage_check, continuity_probe, sample_reachable, ContinuityRecord, ReachSystem, SteeringSpec,
};

use crate::output::{csv, write_atomic, write_json};

pub fn default_origin(system: ReachSystem) -> Vec<f64> {
    match system {
        ReachSystem::Vdp => vec![2.0, 2.0],
        ReachSystem::Dubins2d => vec![0.0; 3],
        ReachSystem::Dubins3d => vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
    }
}

#[derive(Serialize)]
struct SampleReport<'a> {
    system: ReachSystem,
    direction: &'a str,
    origin: &'a [f64],
    t: f64,
    requested: usize,
    size: usize,
    dropped: usize,
    max_switches: usize,
    seed: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn sample(
    system: ReachSystem,
    backward: bool,
    origin: &[f64],
    t: f64,
    n: usize,
    max_switches: usize,
    seed: u64,
    out: &Path,
) -> Result<usize, String> {
    let direction = if backward { Direction::Backward } else { Direction::Forward };
    let cloud = sample_reachable(system, direction, origin, t, n, max_switches, seed).map_err(|e| e.to_string())?;
    write_atomic(&out.join("cloud.csv"), cloud.to_csv().as_bytes()).map_err(|e| e.to_string())?;
    let report = SampleReport {
        system,
        direction: if backward { "backward" } else { "forward" },
        origin,
        t,
        requested: n,
        size: cloud.len(),
        dropped: cloud.meta.dropped,
        max_switches,
        seed,
    };
    write_json(&out.join("report.json"), &report).map_err(|e| e.to_string())?;
    Ok(cloud.len())
}

#[derive(Serialize)]
struct ContinuityReport<'a> {
    spec: &'a SteeringSpec,
    n: usize,
    records: &'a [ContinuityRecord],
    all_hold: bool,
}

/// Returns whether every bound check held.
pub fn continuity(spec: &SteeringSpec, times: &[f64], n: usize, out: &Path) -> Result<bool, String> {
    let records = continuity_probe(spec, times, n).map_err(|e| e.to_string())?;
    let all_hold = records.iter().all(|r| r.holds);
    let rows = records
        .iter()
        .map(|r| vec![r.t0, r.t1, r.hausdorff.unwrap_or(f64::NAN), r.bound, if r.holds { 1.0 } else { 0.0 }]);
    write_atomic(
        &out.join("continuity.csv"),
        csv(&["t0", "t1", "hausdorff", "bound", "holds"], rows).as_bytes(),
    )
    .map_err(|e| e.to_string())?;
    let report = ContinuityReport {
        spec,
        n,
        records: &records,
        all_hold,
    };
    write_json(&out.join("continuity.json"), &report).map_err(|e| e.to_string())?;
    Ok(all_hold)
}

#[derive(Serialize)]
struct BoundarySummary {
    t: f64,
    cloud_size: usize,
    probed: usize,
    within_1e_6: f64,
    within_1e_5: f64,
    max_residual: f64,
}

pub fn boundary(t: f64, n: usize, probes: usize, seed: u64, out: &Path) -> Result<(), String> {
    let report = boundary_coverage_check(t, n, probes, seed).map_err(|e| e.to_string())?;
    let rows = report.probed.iter().zip(&report.residuals).map(|(p, r)| {
        let mut row = p.clone();
        row.push(*r);
        row
    });
    write_atomic(&out.join("boundary.csv"), csv(&["x", "y", "gamma", "residual"], rows).as_bytes())
        .map_err(|e| e.to_string())?;
    let summary = BoundarySummary {
        t,
        cloud_size: report.cloud_size,
        probed: report.residuals.len(),
        within_1e_6: report.fraction_within(1e-6),
        within_1e_5: report.fraction_within(1e-5),
        max_residual: report.residuals.iter().copied().fold(0.0, f64::max),
    };
    write_json(&out.join("boundary.json"), &summary).map_err(|e| e.to_string())
}
