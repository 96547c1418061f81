//! Trajectory CSV and run manifest.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use soro_spt::config::Config;
use soro_spt::sim::{Sample, Trajectory};
use soro_spt::{Error, Result};

const BLOCKS: [&str; 8] = ["q", "qdot", "z2bar", "z2tilde", "us", "uf", "e1", "e2"];
const SCALARS: [&str; 4] = ["V", "W", "Sigma", "epsilon"];

/// 17 significant digits, enough to read back the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn header(dof: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for b in BLOCKS {
        h.extend((1..=dof).map(|i| format!("{b}_{i}")));
    }
    h.extend(SCALARS.iter().map(|s| s.to_string()));
    h
}

fn row(s: &Sample) -> Vec<String> {
    let mut r = vec![format_float(s.t)];
    for block in [&s.q, &s.qdot, &s.z2bar, &s.z2tilde, &s.us, &s.uf, &s.e1, &s.e2] {
        r.extend(block.iter().map(|v| format_float(*v)));
    }
    r.extend([s.v, s.w, s.sigma, s.epsilon].map(format_float));
    r
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn write_csv<W: Write>(traj: &Trajectory, sink: W) -> Result<()> {
    let first = traj
        .samples
        .first()
        .ok_or_else(|| Error::Scenario("trajectory has no samples".into()))?;
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(header(first.q.len())).map_err(csv_error)?;
    for s in &traj.samples {
        w.write_record(row(s)).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(traj, std::io::BufWriter::new(file))
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub version: String,
    pub mode: &'static str,
    pub threads: usize,
    pub dof: usize,
    pub samples: usize,
    pub split_epsilon: f64,
    pub core_authority: f64,
    pub final_epsilon: f64,
    pub final_e1_norm: f64,
    pub quasi_steady_solves: usize,
    pub max_regularization: f64,
    pub warnings: Vec<String>,
    pub trajectory: String,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new(
        config: &Config,
        traj: &Trajectory,
        passive: bool,
        threads: usize,
        trajectory: &str,
    ) -> Manifest {
        let last = traj.last();
        Manifest {
            version: crate::version(),
            mode: if passive { "passive" } else { "closed_loop" },
            threads,
            dof: config.model().dof(),
            samples: traj.samples.len(),
            split_epsilon: traj.split_epsilon,
            core_authority: traj.core_authority,
            final_epsilon: last.map_or(f64::NAN, |s| s.epsilon),
            final_e1_norm: last.map_or(f64::NAN, |s| s.e1.norm()),
            quasi_steady_solves: traj.quasi_steady_solves,
            max_regularization: traj.max_regularization,
            warnings: traj.warnings.clone(),
            trajectory: trajectory.to_string(),
            config: serde_json::from_str(&config.to_canonical_string())
                .expect("canonical config is valid JSON"),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn sample(t: f64, dof: usize) -> Sample {
        let v = |k: f64| DVector::from_fn(dof, |i, _| (i as f64 + k) / 3.0 + t.sin());
        Sample {
            t,
            q: v(0.1),
            qdot: v(0.2),
            z2bar: v(0.3),
            z2tilde: v(0.4),
            us: v(0.5),
            uf: v(0.6),
            e1: v(0.7),
            e2: v(0.8),
            v: 1.0 / 7.0,
            w: 2.0 / 7.0,
            sigma: 3.0 / 7.0,
            epsilon: 0.1 + t,
        }
    }

    #[test]
    fn three_samples_give_four_lines() {
        let traj = Trajectory {
            samples: (0..3).map(|k| sample(k as f64 * 1e-3, 6)).collect(),
            ..Default::default()
        };
        let mut buf = Vec::new();
        write_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 1 + 8 * 6 + 4);
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.718281828459045e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(format_float(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn empty_trajectory_rejected() {
        assert!(write_csv(&Trajectory::default(), Vec::new()).is_err());
    }
}
