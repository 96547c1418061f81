//! Wall-clock scaling of the dynamics assembly and one control step
//! against the number of quadrature nodes.

use std::hint::black_box;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;
use soro_spt::control::{multirate_step, ControlSetup, ControllerState, Gains, Reference};
use soro_spt::dynamics::{assemble_masks, internal_force, AbscissaMask};
use soro_spt::kinematics::JointState;
use soro_spt::sim::perturbed_configuration;
use soro_spt::config::Config;
use soro_spt::split::{split_by_fraction, MassSplit};
use soro_spt::{Error, RobotModel, Result};

pub const MIN_TRIALS: usize = 20;
pub const DEFAULT_TRIALS: usize = 31;
pub const DEFAULT_WARMUP: usize = 5;

#[derive(Clone, Copy, Debug)]
pub struct BenchOptions {
    pub trials: usize,
    pub warmup: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            trials: DEFAULT_TRIALS,
            warmup: DEFAULT_WARMUP,
            threads: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub nodes: usize,
    pub assemble_ns: f64,
    pub control_step_ns: f64,
    pub trials: usize,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub version: String,
    pub threads: usize,
    pub rows: Vec<BenchRow>,
    /// Median assembly time against nodes.
    pub fit: LinearFit,
    pub control_fit: LinearFit,
}

impl BenchReport {
    /// `time(2N)/time(N)` for every doubling present in the rows.
    pub fn doubling_ratios(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| {
                self.rows
                    .iter()
                    .find(|s| s.n == 2 * r.n)
                    .map(|s| (r.n, s.assemble_ns / r.assemble_ns))
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["n", "nodes", "assemble_ns", "control_step_ns", "trials"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.nodes.to_string(),
                r.assemble_ns.to_string(),
                r.control_step_ns.to_string(),
                r.trials.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }
}

/// Ordinary least squares `y = slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r_squared = if sxx > 0.0 && syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn time_once<T>(f: &mut impl FnMut() -> Result<T>) -> Result<f64> {
    let start = Instant::now();
    black_box(f()?);
    Ok(start.elapsed().as_nanos().max(1) as f64)
}

struct Case {
    model: RobotModel,
    state: JointState,
    split: MassSplit,
    gains: Gains,
}

fn prepare(config: &Config, n: usize, seed: u64) -> Result<Case> {
    let model = config.model().with_section_count(n)?;
    let dof = model.dof();
    let q = perturbed_configuration(&model.rest_configuration(), 0.05, seed);
    let qdot = perturbed_configuration(&DVector::zeros(dof), 0.05, seed.wrapping_add(1));
    let state = JointState::new(&model, q, qdot)?;
    let split = split_by_fraction(&model, config.split_fraction())?;
    let gains = Gains::new(DVector::from_element(dof, config.gains().kp[0]), config.gains().phi)?;
    Ok(Case {
        model,
        state,
        split,
        gains,
    })
}

fn assemble_trial(case: &Case, threads: usize) -> Result<f64> {
    let full = [AbscissaMask::full(&case.model)];
    time_once(&mut || assemble_masks(&case.model, &case.state, &full, threads))
}

fn control_trial(case: &Case, config: &Config, threads: usize) -> Result<f64> {
    let model = &case.model;
    let dof = model.dof();
    let setup = ControlSetup {
        model,
        split: &case.split,
        gains: &case.gains,
        rates: config.rates(),
        law: config.integration().fast_law,
        time_base: config.integration().time_base,
        threads,
    };
    let reference = Reference::constant(model.rest_configuration());
    let z2bar = DVector::zeros(dof);
    let (q, qdot) = (&case.state.q, &case.state.qdot);
    time_once(&mut || {
        let mut cs = ControllerState::new(dof);
        let internal = internal_force(model, &case.state)?;
        multirate_step(&mut cs, &setup, 0.0, q, qdot, &z2bar, &internal, &reference)
    })
}

/// Times every section count in `n_list` on equal-length variants of the
/// configured arm.
pub fn run_benchmark(config: &Config, n_list: &[usize], opts: &BenchOptions) -> Result<BenchReport> {
    if n_list.is_empty() {
        return Err(Error::Scenario("n-list is empty".into()));
    }
    if let Some(bad) = n_list.iter().find(|n| **n == 0) {
        return Err(Error::Scenario(format!("n-list entries must be ≥ 1 (got {bad})")));
    }
    if opts.trials < MIN_TRIALS {
        return Err(Error::Scenario(format!(
            "at least {MIN_TRIALS} trials are required (got {})",
            opts.trials
        )));
    }
    let cases = n_list
        .iter()
        .map(|&n| prepare(config, n, opts.seed))
        .collect::<Result<Vec<_>>>()?;
    // rounds visit every case in turn so slow drifts in machine load hit
    // all section counts alike
    let mut assemble = vec![Vec::with_capacity(opts.trials); cases.len()];
    let mut control = vec![Vec::with_capacity(opts.trials); cases.len()];
    for round in 0..opts.warmup + opts.trials {
        for (k, case) in cases.iter().enumerate() {
            let ta = assemble_trial(case, opts.threads)?;
            let tc = control_trial(case, config, opts.threads)?;
            if round >= opts.warmup {
                assemble[k].push(ta);
                control[k].push(tc);
            }
        }
    }
    let rows: Vec<BenchRow> = cases
        .iter()
        .zip(assemble.iter_mut().zip(control.iter_mut()))
        .map(|(case, (a, c))| BenchRow {
            n: case.model.section_count(),
            nodes: case.model.quadrature_grid().len(),
            assemble_ns: median(a),
            control_step_ns: median(c),
            trials: opts.trials,
        })
        .collect();
    let nodes: Vec<f64> = rows.iter().map(|r| r.nodes as f64).collect();
    let assemble: Vec<f64> = rows.iter().map(|r| r.assemble_ns).collect();
    let control: Vec<f64> = rows.iter().map(|r| r.control_step_ns).collect();
    Ok(BenchReport {
        version: crate::version(),
        threads: opts.threads,
        fit: linear_fit(&nodes, &assemble),
        control_fit: linear_fit(&nodes, &control),
        rows,
    })
}

pub fn parse_n_list(text: &str) -> std::result::Result<Vec<usize>, String> {
    let list = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| format!("n-list entry {:?} is not a positive integer", s.trim()))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if list.is_empty() || list.contains(&0) {
        return Err("n-list must hold positive integers".into());
    }
    Ok(list)
}
