//! Acceptance scenarios A1–A7. Runs without the libtest harness so every
//! line is printed; exits non-zero when any scenario fails.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soro_spt::config::Config;
use soro_spt::control::{
    errors_of, fast_control, lyapunov_values, slow_control, FastInputs, FastLaw, Gains, Reference,
};
use soro_spt::dynamics::{assemble_terms, energy, AbscissaMask};
use soro_spt::kinematics::{global_config, jacobian, tangent_exp, JointState};
use soro_spt::model::Toggles;
use soro_spt::screw::{exp_se3, hat, vee};
use soro_spt::sim::{run_closed_loop, run_passive, static_equilibrium, Scenario};
use soro_spt::split::{assemble_split, boundary_layer_rhs, quasi_steady_velocity, split_by_fraction, QuasiSteadyOptions};
use soro_spt::{RobotModel, Screw};

type Outcome = Result<String, String>;

fn default_config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")
}

fn rvec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

fn rscrew(rng: &mut ChaCha8Rng, scale: f64) -> Screw {
    Screw(Vector6::from_fn(|_, _| rng.random_range(-scale..scale)))
}

fn check(ok: bool, what: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    check(
        elapsed.as_secs_f64() < limit_s,
        format!("runtime {:.1} s over {limit_s} s", elapsed.as_secs_f64()),
    )
}

// ġ = g ξ̂ by RK4 on the 4×4 matrix
fn exp_by_rk4(xi: &Screw, s: f64) -> Matrix4<f64> {
    let x = hat(xi);
    let steps = 2000;
    let h = s / steps as f64;
    let mut g = Matrix4::identity();
    for _ in 0..steps {
        let k1 = g * x;
        let k2 = (g + k1 * (h / 2.0)) * x;
        let k3 = (g + k2 * (h / 2.0)) * x;
        let k4 = (g + k3 * h) * x;
        g += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    g
}

fn a1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut exp_err, mut group_err, mut ad_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let xi = rscrew(&mut rng, 2.0);
        let s = rng.random_range(0.1..1.5);
        exp_err = exp_err.max((exp_se3(&xi, s).to_matrix() - exp_by_rk4(&xi, s)).amax());

        let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let lhs = exp_se3(&xi, a + b).to_matrix();
        let rhs = exp_se3(&xi, a).compose(&exp_se3(&xi, b)).to_matrix();
        group_err = group_err.max((lhs - rhs).amax());

        let g1 = exp_se3(&rscrew(&mut rng, 2.0), 1.0);
        let g2 = exp_se3(&rscrew(&mut rng, 2.0), 1.0);
        let lhs = g1.compose(&g2).adjoint();
        let rhs = g1.adjoint() * g2.adjoint();
        ad_err = ad_err.max((lhs - rhs).amax() / (1.0 + rhs.amax()));
    }
    check(exp_err <= 1e-8, format!("exp vs RK4 {exp_err:.2e}"))?;
    check(group_err <= 1e-9, format!("one-parameter subgroup {group_err:.2e}"))?;
    check(ad_err <= 1e-10, format!("adjoint homomorphism {ad_err:.2e}"))?;
    within(start.elapsed(), 10.0)?;
    Ok(format!(
        "exp {exp_err:.1e}, subgroup {group_err:.1e}, Ad {ad_err:.1e}"
    ))
}

// body twist g⁻¹ġ by central difference along q̇
fn fd_body_twist(m: &RobotModel, q: &DVector<f64>, qdot: &DVector<f64>, x: f64) -> Vector6<f64> {
    let h = 1e-6;
    let g = global_config(m, q, x).unwrap();
    let gp = global_config(m, &(q + qdot * h), x).unwrap().to_matrix();
    let gm = global_config(m, &(q - qdot * h), x).unwrap().to_matrix();
    let gdot = (gp - gm) / (2.0 * h);
    let xi = g.inverse().to_matrix() * gdot;
    let mut m4 = xi;
    // project onto se(3) before reading off the coordinates
    let r = m4.fixed_view::<3, 3>(0, 0).into_owned();
    m4.fixed_view_mut::<3, 3>(0, 0).copy_from(&((r - r.transpose()) * 0.5));
    m4.fixed_view_mut::<1, 4>(3, 0).fill(0.0);
    *vee(&m4).unwrap().vector()
}

fn a2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for n in [1, 2, 4] {
        let m = RobotModel::reference(n, 2.0, 1.0).unwrap();
        for _ in 0..100 {
            let q = m.rest_configuration() + rvec(&mut rng, 6 * n, 0.5);
            let qdot = rvec(&mut rng, 6 * n, 1.0);
            let x = rng.random_range(0.0..=m.total_length());
            let eta = jacobian(&m, &q, x).unwrap() * &qdot;
            let fd = fd_body_twist(&m, &q, &qdot, x);
            worst = worst.max((eta.fixed_rows::<6>(0) - fd).norm() / (1.0 + fd.norm()));
        }
    }
    check(worst <= 1e-6, format!("J q̇ vs finite difference {worst:.2e}"))?;

    let mut tangent = 0.0f64;
    for _ in 0..100 {
        let xi = Screw(rscrew(&mut rng, 1.0).0 + Vector6::new(0., 0., 0., 1., 0., 0.));
        let d = rscrew(&mut rng, 1.0);
        let s = rng.random_range(0.1..1.0);
        let h = 1e-6;
        let g = exp_se3(&xi, s);
        let gp = exp_se3(&Screw(xi.0 + d.0 * h), s).to_matrix();
        let gm = exp_se3(&Screw(xi.0 - d.0 * h), s).to_matrix();
        let body = g.inverse().to_matrix() * ((gp - gm) / (2.0 * h));
        let mut b = body;
        let r = b.fixed_view::<3, 3>(0, 0).into_owned();
        b.fixed_view_mut::<3, 3>(0, 0).copy_from(&((r - r.transpose()) * 0.5));
        b.fixed_view_mut::<1, 4>(3, 0).fill(0.0);
        let fd = *vee(&b).unwrap().vector();
        let t = tangent_exp(&xi, s) * d.0;
        tangent = tangent.max((t - fd).norm() / (1.0 + fd.norm()));
    }
    check(tangent <= 1e-6, format!("tangent_exp vs finite difference {tangent:.2e}"))?;
    within(start.elapsed(), 30.0)?;
    Ok(format!("J q̇ {worst:.1e}, tangent {tangent:.1e}"))
}

fn a3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let m = RobotModel::reference(4, 2.0, 1.0).unwrap();
    let split = split_by_fraction(&m, 0.6).unwrap();
    let (mut sym, mut add) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let state = JointState {
            q: m.rest_configuration() + rvec(&mut rng, 24, 0.5),
            qdot: rvec(&mut rng, 24, 1.0),
        };
        let full = assemble_terms(&m, &state, &AbscissaMask::full(&m)).unwrap();
        let mm = &full.mass;
        sym = sym.max((mm - mm.transpose()).norm() / mm.norm());
        check(mm.clone().cholesky().is_some(), "M not SPD".into())?;
        let parts = assemble_split(&m, &state, &split, 1).unwrap();
        add = add.max((&parts.core.mass + &parts.pert.mass - mm).norm() / mm.norm());
    }
    check(sym <= 1e-9, format!("M asymmetry {sym:.2e}"))?;
    check(add <= 1e-12, format!("M_full − M_core − M_pert {add:.2e}"))?;

    let mut min_power = f64::INFINITY;
    for _ in 0..1000 {
        let n = [1usize, 2, 4][rng.random_range(0..3)];
        let mn = RobotModel::reference(n, 2.0, 1.0).unwrap();
        let state = JointState {
            q: mn.rest_configuration() + rvec(&mut rng, 6 * n, 0.5),
            qdot: rvec(&mut rng, 6 * n, 2.0),
        };
        let t = assemble_terms(&mn, &state, &AbscissaMask::full(&mn)).unwrap();
        min_power = min_power.min(state.qdot.dot(&(&t.drag * &state.qdot)));
    }
    check(min_power >= 0.0, format!("q̇ᵀDq̇ = {min_power:.2e}"))?;

    let m1 = RobotModel::reference(1, 1.0, 0.0)
        .unwrap()
        .with_toggles(Toggles::all_off());
    let q0 = m1.rest_configuration() + rvec(&mut rng, 6, 0.2);
    let initial = JointState::new(&m1, q0, DVector::zeros(6)).unwrap();
    let mut scenario = Scenario::new(m1.clone(), initial, 5.0);
    scenario.rates = soro_spt::control::Rates::new(1e-4, 1e-2).unwrap();
    let traj = run_passive(&scenario).map_err(|e| e.to_string())?;
    let e_of = |q: &DVector<f64>, qdot: &DVector<f64>| {
        let s = JointState { q: q.clone(), qdot: qdot.clone() };
        let mass = assemble_terms(&m1, &s, &AbscissaMask::full(&m1)).unwrap().mass;
        energy(&m1, &s, &mass)
    };
    let e0 = e_of(&traj.samples[0].q, &traj.samples[0].qdot);
    let drift = traj
        .samples
        .iter()
        .step_by(100)
        .map(|s| (e_of(&s.q, &s.qdot) - e0).abs() / e0)
        .fold(0.0f64, f64::max);
    check(drift <= 1e-3, format!("energy drift {drift:.2e} over 5 s"))?;
    within(start.elapsed(), 120.0)?;
    Ok(format!(
        "asym {sym:.1e}, additivity {add:.1e}, min q̇ᵀDq̇ {min_power:.1e}, energy drift {drift:.1e}"
    ))
}

// the closed-loop setpoint scenario: two 1 m sections, gravity off, 1 N tip
// load, regulated to its static equilibrium from a seeded 0.05 offset
fn closed_loop_scenario(duration: f64) -> Scenario {
    let m = RobotModel::reference(2, 2.0, 1.0).unwrap().with_toggles(Toggles {
        gravity: false,
        ..Default::default()
    });
    let qd = static_equilibrium(&m, &m.rest_configuration()).unwrap();
    let q0 = soro_spt::sim::perturbed_configuration(&qd, 0.05, 7);
    let initial = JointState::new(&m, q0, DVector::zeros(12)).unwrap();
    let mut s = Scenario::new(m, initial, duration);
    s.reference = Reference::constant(qd);
    s
}

fn a4() -> Outcome {
    let start = Instant::now();
    let m = RobotModel::reference(1, 1.0, 1.0).unwrap();
    let split = split_by_fraction(&m, 0.6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(404);

    // boundary layer at frozen z1
    let z1 = m.rest_configuration() + rvec(&mut rng, 6, 0.1);
    let reference = Reference::constant(&z1 + rvec(&mut rng, 6, 1e-3));
    let gains = Gains::default_for(6);
    let zt0 = rvec(&mut rng, 6, 1e-3);
    let us = slow_control(&z1, &zt0, &reference);
    let terms_at = |zt: &DVector<f64>| {
        let state = JointState { q: z1.clone(), qdot: zt.clone() };
        assemble_split(&m, &state, &split, 1).unwrap()
    };
    let w_of = |zt: &DVector<f64>| {
        let (e1, e2) = errors_of(&z1, zt, &reference, &us);
        lyapunov_values(&terms_at(zt).core.mass, &e1, &e2, &gains).unwrap().w
    };
    let rhs = |zt: &DVector<f64>| {
        let terms = terms_at(zt);
        let (e1, e2) = errors_of(&z1, zt, &reference, &us);
        let zero = DVector::zeros(6);
        let inputs = FastInputs {
            terms: &terms,
            internal: &terms.core.internal,
            z2tilde: zt,
            reference: &reference,
            us: &us,
            us_rate: &zero,
            inertia_scale: 1.0,
        };
        let uf = fast_control(&inputs, &e1, &e2, FastLaw::Backstepping);
        boundary_layer_rhs(&terms, zt, &uf).unwrap()
    };
    let w0 = w_of(&zt0);
    let mut zt = zt0.clone();
    let h = 1e-3;
    let mut decay = 0.0f64;
    for i in 1..=3000 {
        let k1 = rhs(&zt);
        let k2 = rhs(&(&zt + &k1 * (h / 2.0)));
        let k3 = rhs(&(&zt + &k2 * (h / 2.0)));
        let k4 = rhs(&(&zt + &k3 * h));
        zt += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if i % 50 == 0 {
            let t = i as f64 * h;
            decay = decay.max(w_of(&zt) / (w0 * (-2.0 * t).exp()));
        }
    }
    check(decay <= 1.05, format!("W(T)/(W(0)e^(−2T)) reached {decay:.3}"))?;

    // composite vs backstepping form under u̇_s − e₂ = q̈_d + e₁
    let m2 = RobotModel::reference(2, 2.0, 1.0).unwrap();
    let s2 = split_by_fraction(&m2, 0.6).unwrap();
    let mut variant = 0.0f64;
    for _ in 0..100 {
        let z1 = m2.rest_configuration() + rvec(&mut rng, 12, 0.3);
        let zt = rvec(&mut rng, 12, 0.5);
        let terms = assemble_split(&m2, &JointState { q: z1.clone(), qdot: zt.clone() }, &s2, 1).unwrap();
        let reference = Reference::new(
            m2.rest_configuration() + rvec(&mut rng, 12, 0.3),
            rvec(&mut rng, 12, 0.2),
            rvec(&mut rng, 12, 0.2),
        )
        .unwrap();
        let us = rvec(&mut rng, 12, 0.4);
        let (e1, e2) = errors_of(&z1, &zt, &reference, &us);
        let us_rate = &reference.qd_ddot + &e1 + &e2;
        let inputs = FastInputs {
            terms: &terms,
            internal: &terms.core.internal,
            z2tilde: &zt,
            reference: &reference,
            us: &us,
            us_rate: &us_rate,
            inertia_scale: 1.0,
        };
        let a = fast_control(&inputs, &e1, &e2, FastLaw::Composite);
        let b = fast_control(&inputs, &e1, &e2, FastLaw::Backstepping);
        variant = variant.max((&a - &b).norm() / (1.0 + a.norm()));
    }
    check(variant <= 1e-10, format!("fast-law variants differ by {variant:.2e}"))?;

    // closed loop
    let scenario = closed_loop_scenario(2.0);
    let traj = run_closed_loop(&scenario).map_err(|e| e.to_string())?;
    let e1_end = traj.last().unwrap().e1.norm();
    let first_slow = scenario.rates.slow_dt;
    let mut running_max = 0.0f64;
    let mut worst_rise = 0.0f64;
    let mut worst_t = 0.0;
    for pair in traj.samples.windows(2) {
        running_max = running_max.max(pair[0].sigma);
        if pair[0].t + 1e-12 < first_slow {
            continue;
        }
        let rise = (pair[1].sigma - pair[0].sigma) / running_max;
        if rise > worst_rise {
            worst_rise = rise;
            worst_t = pair[1].t;
        }
    }
    check(e1_end <= 1e-3, format!("‖e1(end)‖ = {e1_end:.2e}"))?;
    within(start.elapsed(), 120.0)?;
    check(
        worst_rise <= 0.01,
        format!(
            "Σ rises by {:.1}% of its running maximum at t = {worst_t:.3} s (slack 1%); \
             decay {decay:.3}, variants {variant:.1e}, ‖e1(end)‖ {e1_end:.1e}",
            100.0 * worst_rise
        ),
    )?;
    Ok(format!(
        "decay ratio {decay:.3}, variants {variant:.1e}, ‖e1(end)‖ {e1_end:.1e}, max Σ rise {:.2}%",
        100.0 * worst_rise
    ))
}

fn a5() -> Outcome {
    let start = Instant::now();
    let config = Config::load(&default_config_path()).map_err(|e| e.to_string())?;
    let m = config.model();
    let split = split_by_fraction(m, 0.6).unwrap();
    let eps = split.epsilon;
    check(eps > 0.0 && eps < 1.0, format!("ε = {eps}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let n = m.dof();
    let mut worst = 0.0f64;
    let opts = QuasiSteadyOptions::default();
    for _ in 0..50 {
        let d = rvec(&mut rng, n, 1.0);
        let z1 = m.rest_configuration() + &d * (rng.random_range(0.0..0.5) / d.norm());
        let z = quasi_steady_velocity(m, &split, &z1, None, &DVector::zeros(n), &opts)
            .map_err(|e| e.to_string())?
            .z2bar;
        let t = assemble_split(m, &JointState { q: z1.clone(), qdot: z.clone() }, &split, 1).unwrap();
        let lhs: DMatrix<f64> = &t.pert.coriolis1 + &t.pert.coriolis2 + t.full_drag();
        let rhs = &t.core.internal + &t.core.tip_force + t.core.gravity_force() + t.pert.gravity_force();
        let r = (lhs * &z - &rhs).norm() / (1.0 + rhs.norm());
        worst = worst.max(r);
    }
    check(worst <= 1e-6, format!("quasi-steady residual {worst:.2e}"))?;

    let traj = run_closed_loop(&closed_loop_scenario(0.2)).map_err(|e| e.to_string())?;
    let split_gap = traj
        .samples
        .iter()
        .map(|s| (&s.qdot - &s.z2bar - &s.z2tilde).amax() / (1.0 + s.qdot.amax()))
        .fold(0.0f64, f64::max);
    check(split_gap <= 1e-12, format!("z₂ − z̄₂ − z̃₂ = {split_gap:.2e}"))?;
    within(start.elapsed(), 120.0)?;
    Ok(format!(
        "ε {eps:.4}, quasi-steady residual {worst:.1e}, split identity {split_gap:.1e}"
    ))
}

fn a6() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_soro-spt"))
        .args(["benchmark", "--n-list", "1,2,4,8,16", "--config"])
        .arg(default_config_path())
        .arg("--out")
        .arg(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), format!("benchmark exited with {}", out.status))?;
    let text = std::fs::read_to_string(dir.path().join("bench.json")).map_err(|e| e.to_string())?;
    let report: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let rows = report["rows"].as_array().ok_or("rows missing")?;
    check(rows.len() == 5, format!("expected 5 rows, got {}", rows.len()))?;
    let field = |r: &serde_json::Value, k: &str| r[k].as_f64().unwrap_or(f64::NAN);
    check(
        rows.iter().all(|r| {
            field(r, "trials") >= 20.0 && field(r, "assemble_ns") > 0.0 && field(r, "control_step_ns") > 0.0
        }),
        "rows need ≥ 20 trials and positive timings".into(),
    )?;
    let r2 = report["fit"]["r_squared"].as_f64().ok_or("fit.r_squared missing")?;
    check(r2 >= 0.98, format!("r² = {r2:.4}"))?;
    let mut listed = Vec::new();
    for pair in rows.windows(2) {
        let (n, ratio) = (field(&pair[0], "n"), field(&pair[1], "assemble_ns") / field(&pair[0], "assemble_ns"));
        check(
            (1.6..=2.6).contains(&ratio),
            format!("time({})/time({n}) = {ratio:.2}", 2.0 * n),
        )?;
        listed.push(format!("{n}→{}: {ratio:.2}", 2.0 * n));
    }
    within(start.elapsed(), 180.0)?;
    Ok(format!("r² {r2:.4}, ratios {}", listed.join(", ")))
}

fn value_of<'a>(text: &'a str, key: &str) -> Vec<&'a str> {
    text.lines()
        .filter_map(|l| {
            let mut parts = l.split_whitespace();
            (parts.next() == Some(key)).then(|| parts.next().unwrap_or(""))
        })
        .collect()
}

fn a7() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_soro-spt"))
        .args(["validate", "--config"])
        .arg(default_config_path())
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), format!("validate exited with {}", out.status))?;
    let text = String::from_utf8_lossy(&out.stdout);
    let exact = |key: &str, want: &str| -> Result<(), String> {
        let got = value_of(&text, key);
        check(
            !got.is_empty() && got.iter().all(|v| *v == want),
            format!("{key}: {got:?}, expected {want}"),
        )
    };
    exact("young_modulus", "110000")?;
    exact("shear_viscosity", "3000")?;
    exact("radius", "0.1")?;
    exact("total_length", "2")?;
    exact("poisson_ratio", "0.45")?;
    exact("density", "2000")?;
    exact("water_density", "997")?;
    exact("drag_coefficient", "0.82")?;
    exact("microsolids_per_section", "41")?;
    exact("split", "60/40")?;

    let r: f64 = 0.1;
    let g = 110e3 / (2.0 * 1.45);
    for (key, want) in [
        ("A", PI * r * r),
        ("I_x", PI * r.powi(4) / 2.0),
        ("I_y", PI * r.powi(4) / 4.0),
        ("I_z", PI * r.powi(4) / 4.0),
        ("G", g),
    ] {
        let got = value_of(&text, key);
        check(!got.is_empty(), format!("{key} missing"))?;
        for v in got {
            let v: f64 = v.parse().map_err(|_| format!("{key}: cannot parse {v}"))?;
            // printed with seven significant digits
            check(
                (v - want).abs() <= 5e-7 * want,
                format!("{key} = {v}, expected {want}"),
            )?;
        }
    }
    Ok(format!("parameters exact; I_y {:.4e} m^4, G {g:.4e} Pa", PI * r.powi(4) / 4.0))
}

fn main() {
    let scenarios: [(&str, &str, fn() -> Outcome); 7] = [
        ("A1", "Lie-group suite", a1),
        ("A2", "kinematics oracle", a2),
        ("A3", "dynamics structure", a3),
        ("A4", "control laws", a4),
        ("A5", "perturbation structure", a5),
        ("A6", "complexity", a6),
        ("A7", "parameter fidelity", a7),
    ];
    // a filter argument from `cargo test -- A4` selects scenarios
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run) in scenarios {
        if !filters.is_empty() && !filters.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id} {name}: PASS ({detail}; {secs:.1} s)"),
            Err(why) => {
                failed += 1;
                println!("{id} {name}: FAIL ({why}; {secs:.1} s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
