//! CSV artifacts. Every file opens with `#` comment lines carrying enough
//! provenance (spec text, digest, config, seed, tool version) to rerun it.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::diagnostics::OccupancyGrid;
use crate::ensemble::{EnsembleState, HRecord};
use crate::fmt::sig12;
use crate::integrator::{IntegratorConfig, Sample, Trajectory};
use crate::wavefunction::{SpecError, WaveFunctionSpec};

pub const TOOL_VERSION: &str = concat!("qrelax ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Spec(#[from] SpecError),
}

fn provenance(out: &mut String, spec: &WaveFunctionSpec, extra: &[(&str, String)]) {
    let _ = writeln!(out, "# tool: {TOOL_VERSION}");
    for line in spec.to_text().lines() {
        let _ = writeln!(out, "# spec: {line}");
    }
    let _ = writeln!(out, "# spec_sha256: {}", spec.fingerprint());
    for (key, value) in extra {
        let _ = writeln!(out, "# {key}: {value}");
    }
}

fn config_json(config: &IntegratorConfig) -> String {
    serde_json::to_string(config).expect("config serializes")
}

pub fn trajectory_csv(traj: &Trajectory, spec: &WaveFunctionSpec, config: &IntegratorConfig) -> String {
    let mut out = String::with_capacity(32 * traj.samples.len() + 512);
    provenance(
        &mut out,
        spec,
        &[
            ("config", config_json(config)),
            ("start", format!("{},{}", sig12(traj.start[0]), sig12(traj.start[1]))),
            ("steps", format!("{} accepted, {} rejected", traj.steps_taken, traj.steps_rejected)),
        ],
    );
    out.push_str("t,q1,q2\n");
    for s in &traj.samples {
        let _ = writeln!(out, "{},{},{}", sig12(s.t), sig12(s.q1), sig12(s.q2));
    }
    out
}

/// A trajectory file read back: the spec from its header and the samples.
#[derive(Debug, Clone)]
pub struct TrajectoryFile {
    pub spec: WaveFunctionSpec,
    pub config: Option<IntegratorConfig>,
    pub samples: Vec<Sample>,
}

pub fn parse_trajectory_csv(text: &str) -> Result<TrajectoryFile, IoError> {
    let mut spec_text = String::new();
    let mut config = None;
    let mut samples = vec![];
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let malformed = |msg: &str| IoError::Malformed { line: i + 1, msg: msg.to_string() };
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim_start();
            if let Some(s) = comment.strip_prefix("spec: ") {
                spec_text.push_str(s);
                spec_text.push('\n');
            } else if let Some(c) = comment.strip_prefix("config: ") {
                config = Some(serde_json::from_str(c).map_err(|e| malformed(&e.to_string()))?);
            }
            continue;
        }
        if !header_seen {
            if line.trim() != "t,q1,q2" {
                return Err(malformed("expected header t,q1,q2"));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| malformed(&e.to_string()))?;
        match fields[..] {
            [t, q1, q2] => samples.push(Sample { t, q1, q2 }),
            _ => return Err(malformed("expected three fields")),
        }
    }
    if !header_seen {
        return Err(IoError::Malformed { line: 0, msg: "missing header".into() });
    }
    Ok(TrajectoryFile { spec: WaveFunctionSpec::from_text(&spec_text)?, config, samples })
}

pub fn ensemble_csv(state: &EnsembleState, spec: &WaveFunctionSpec) -> String {
    let mut out = String::with_capacity(32 * state.len() + 512);
    provenance(
        &mut out,
        spec,
        &[
            ("seed", state.seed.to_string()),
            ("initial", state.initial_density_tag.clone()),
            ("t", sig12(state.t)),
            ("failed", state.failed.to_string()),
        ],
    );
    out.push_str("q1,q2\n");
    for p in &state.points {
        let _ = writeln!(out, "{},{}", sig12(p[0]), sig12(p[1]));
    }
    out
}

pub fn h_series_csv(records: &[HRecord], spec: &WaveFunctionSpec, seed: u64, initial: &str) -> String {
    let mut out = String::new();
    let resolution = records.first().map_or(0, |r| r.resolution);
    provenance(
        &mut out,
        spec,
        &[
            ("seed", seed.to_string()),
            ("initial", initial.to_string()),
            ("grid", format!("{resolution}x{resolution}")),
        ],
    );
    out.push_str("t,hbar,cells\n");
    for r in records {
        let _ = writeln!(out, "{},{},{}", sig12(r.t), sig12(r.hbar), r.cells_used);
    }
    out
}

pub fn grid_csv(grid: &OccupancyGrid, spec: &WaveFunctionSpec) -> String {
    let mut out = String::new();
    provenance(
        &mut out,
        spec,
        &[
            ("bounds", format!("[-{0},{0}]^2", sig12(grid.grid.half_width))),
            ("resolution", grid.grid.resolution.to_string()),
            ("outside", grid.outside.to_string()),
        ],
    );
    out.push_str(&grid.to_csv());
    out
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}
