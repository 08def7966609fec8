//! Task implementations: each task writes deterministic CSV artifacts
//! (every row carries the tolerance it was judged against) and optional
//! SVG plots.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use symorb::error::{Error, Result};
use symorb::hamsys::{flow, ConstantPotential, Hamiltonian, PhasePoint, PotentialFn};
use symorb::io::{fmt_f64, CsvWriter};
use symorb::linsys::{
    build_conjugate_pair, check_three_conditions, m_sequence, projection_agreement,
    random_hamiltonian_curve, ForcingCurve, ScalarCurve,
};
use symorb::orbits::{
    chord_transversality, classify_orbit, find_chords, find_periodic_orbit, time_symmetry_sigma,
    OrbitKind,
};
use symorb::reduced::{
    check_reversible_orbit, check_reversible_point, reduced_return_map, return_map_spectrum,
};
use symorb::sympmat::{
    classify_spectrum, conjugate_involution, make_r_reversible, r0, random_symplectic,
    reversibility_residual, AntisymplecticInvolution, UpsilonReason,
};
use symorb::Tolerances;

use crate::config::{ScenarioConfig, TaskConfig};

pub struct TaskContext<'a> {
    pub out_dir: &'a Path,
    pub seed: u64,
    pub plots: bool,
    pub tols: &'a Tolerances,
}

/// Files produced by a task run.
pub struct TaskOutcome {
    pub artifacts: Vec<PathBuf>,
}

fn fmt_bool(b: bool) -> String {
    if b { "true" } else { "false" }.to_string()
}

fn reason_str(r: &UpsilonReason) -> String {
    match r {
        UpsilonReason::RootOfUnity { order } => format!("root_of_unity_{order}"),
        UpsilonReason::DoubleEigenvalue => "double_eigenvalue".to_string(),
        UpsilonReason::None => "none".to_string(),
    }
}

fn phase_point(q: &[f64], p: &[f64]) -> Result<PhasePoint> {
    PhasePoint::from_slices(q, p)
}

pub fn run_task(cfg: &ScenarioConfig, ctx: &TaskContext) -> Result<TaskOutcome> {
    let h = &cfg.system;
    let u = ConstantPotential(cfg.potential_offset);
    match &cfg.task {
        TaskConfig::Flow {
            q,
            p,
            t_end,
            samples,
        } => task_flow(h, &u, q, p, *t_end, *samples, ctx),
        TaskConfig::FindChords { seeds, t_max } => task_find_chords(h, &u, seeds, *t_max, ctx),
        TaskConfig::ClassifyOrbit { q, p, t_guess } => {
            task_classify_orbit(h, &u, q, p, *t_guess, ctx)
        }
        TaskConfig::ReturnMap {
            q,
            p,
            t_guess,
            anchors,
        } => task_return_map(h, &u, q, p, *t_guess, anchors, ctx),
        TaskConfig::CheckReversibility { q, p, t_guess } => {
            task_check_reversibility(h, &u, q, p, *t_guess, ctx)
        }
        TaskConfig::LinsysCheck {
            dim_d,
            pairs,
            bumps,
            alpha,
        } => task_linsys_check(*dim_d, *pairs, *bumps, *alpha, ctx),
        TaskConfig::MatrixLab { dim_d, draws } => task_matrix_lab(*dim_d, *draws, ctx),
    }
}

fn task_flow(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    q: &[f64],
    p: &[f64],
    t_end: f64,
    samples: usize,
    ctx: &TaskContext,
) -> Result<TaskOutcome> {
    let x0 = phase_point(q, p)?;
    let tols = ctx.tols;
    let seg = flow(h, u, &x0, t_end, tols.integrator_tol, tols.energy_drift_tol)?;
    let n = h.n();
    let mut header: Vec<String> = vec!["t".into()];
    for i in 0..n {
        header.push(format!("q{}", i + 1));
    }
    for i in 0..n {
        header.push(format!("p{}", i + 1));
    }
    header.push("energy_drift".into());
    header.push("tolerance".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = CsvWriter::new(&header_refs);
    let e0 = seg.energy();
    let mut curve = Vec::with_capacity(samples + 1);
    for i in 0..=samples {
        let t = t_end * i as f64 / samples as f64;
        let x = seg.state(t);
        let mut row: Vec<String> = vec![fmt_f64(t)];
        row.extend(x.q.iter().map(|v| fmt_f64(*v)));
        row.extend(x.p.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64((symorb::hamsys::total_energy(h, u, &x) - e0).abs()));
        row.push(fmt_f64(tols.energy_drift_tol));
        csv.write_row(&row);
        if n >= 2 {
            curve.push((x.q[0], x.q[1]));
        } else {
            curve.push((t, x.q[0]));
        }
    }
    let path = ctx.out_dir.join("flow.csv");
    csv.save(&path)?;
    let mut artifacts = vec![path];
    if ctx.plots {
        let plot = ctx.out_dir.join("flow.svg");
        crate::svg::write_polyline(&plot, &curve, "trajectory projection")?;
        artifacts.push(plot);
    }
    Ok(TaskOutcome { artifacts })
}

fn task_find_chords(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    seeds: &[Vec<f64>],
    t_max: f64,
    ctx: &TaskContext,
) -> Result<TaskOutcome> {
    let tols = ctx.tols;
    let seeds: Vec<DVector<f64>> = seeds
        .iter()
        .map(|s| DVector::from_column_slice(s))
        .collect();
    let chords = find_chords(h, u, &seeds, t_max, tols)?;
    let n = h.n();
    let mut header: Vec<String> = vec!["index".into()];
    for i in 0..n {
        header.push(format!("start_q{}", i + 1));
    }
    header.push("duration".into());
    for i in 0..n {
        header.push(format!("end_q{}", i + 1));
    }
    header.extend(
        ["end_momentum_residual", "minimal", "transverse", "sigma_min", "tolerance"]
            .iter()
            .map(|s| s.to_string()),
    );
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = CsvWriter::new(&header_refs);
    for (i, c) in chords.iter().enumerate() {
        let (transverse, smin) = chord_transversality(h, u, c, tols)?;
        let mut row: Vec<String> = vec![i.to_string()];
        row.extend(c.start.q.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(c.duration));
        row.extend(c.end.q.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(c.end_momentum_residual));
        row.push(fmt_bool(c.minimal));
        row.push(fmt_bool(transverse));
        row.push(fmt_f64(smin));
        row.push(fmt_f64(tols.transv_tol));
        csv.write_row(&row);
    }
    let path = ctx.out_dir.join("chords.csv");
    csv.save(&path)?;
    Ok(TaskOutcome {
        artifacts: vec![path],
    })
}

fn task_classify_orbit(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    q: &[f64],
    p: &[f64],
    t_guess: f64,
    ctx: &TaskContext,
) -> Result<TaskOutcome> {
    let tols = ctx.tols;
    let orbit = find_periodic_orbit(h, u, &phase_point(q, p)?, t_guess, tols)?;
    let cls = classify_orbit(h, u, &orbit, tols)?;
    let mut csv = CsvWriter::new(&[
        "kind",
        "period",
        "energy",
        "closure_residual",
        "minimal",
        "degenerate_times",
        "n_self_intersections",
        "neat_interval",
        "tolerance",
    ]);
    let kind = match cls.kind {
        OrbitKind::Neat => "neat",
        OrbitKind::RoundTrip => "round_trip",
    };
    let times = cls
        .degenerate_times
        .iter()
        .map(|t| fmt_f64(*t))
        .collect::<Vec<_>>()
        .join(";");
    let interval = cls
        .neat_interval
        .map(|(a, b)| format!("{};{}", fmt_f64(a), fmt_f64(b)))
        .unwrap_or_default();
    csv.write_row(&[
        kind.to_string(),
        fmt_f64(orbit.period),
        fmt_f64(orbit.energy),
        fmt_f64(orbit.closure_residual),
        fmt_bool(orbit.minimal),
        times,
        cls.self_intersections.len().to_string(),
        interval,
        fmt_f64(tols.gamma_event_tol),
    ]);
    let path = ctx.out_dir.join("classification.csv");
    csv.save(&path)?;
    let mut artifacts = vec![path];
    if ctx.plots && h.n() >= 2 {
        let samples = 1200;
        let curve: Vec<(f64, f64)> = (0..=samples)
            .map(|i| {
                let x = orbit.state(orbit.period * i as f64 / samples as f64);
                (x.q[0], x.q[1])
            })
            .collect();
        let plot = ctx.out_dir.join("orbit.svg");
        crate::svg::write_polyline(&plot, &curve, "projected orbit")?;
        artifacts.push(plot);
    }
    Ok(TaskOutcome { artifacts })
}

fn task_return_map(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    q: &[f64],
    p: &[f64],
    t_guess: f64,
    anchors: &[f64],
    ctx: &TaskContext,
) -> Result<TaskOutcome> {
    let tols = ctx.tols;
    let orbit = find_periodic_orbit(h, u, &phase_point(q, p)?, t_guess, tols)?;
    let d = h.n() - 1;
    let mut header: Vec<String> = vec!["anchor_fraction".into(), "anchor_t".into()];
    for i in 0..2 * d {
        header.push(format!("eig{}_re", i + 1));
        header.push(format!("eig{}_im", i + 1));
    }
    header.extend(
        [
            "in_upsilon",
            "reason",
            "min_root_distance",
            "min_eigenvalue_gap",
            "spectrum_shift",
            "tolerance",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = CsvWriter::new(&header_refs);
    let mut reference = None;
    for &frac in anchors {
        let anchor_t = orbit.period * frac;
        let rm = reduced_return_map(h, u, &orbit, anchor_t, tols)?;
        let spec = return_map_spectrum(&rm);
        let verdict = classify_spectrum(&spec, tols.root_tol, tols.gap_tol, tols.k_max);
        let shift = match &reference {
            None => {
                reference = Some(spec.clone());
                0.0
            }
            Some(r) => symorb::reduced::spectrum_distance(r, &spec),
        };
        let mut row: Vec<String> = vec![fmt_f64(frac), fmt_f64(anchor_t)];
        for lam in &spec {
            row.push(fmt_f64(lam.re));
            row.push(fmt_f64(lam.im));
        }
        row.push(fmt_bool(verdict.in_upsilon));
        row.push(reason_str(&verdict.reason));
        row.push(fmt_f64(verdict.min_root_distance));
        row.push(fmt_f64(verdict.min_eigenvalue_gap));
        row.push(fmt_f64(shift));
        row.push(fmt_f64(tols.gap_tol));
        csv.write_row(&row);
    }
    let path = ctx.out_dir.join("return_map.csv");
    csv.save(&path)?;
    Ok(TaskOutcome {
        artifacts: vec![path],
    })
}

fn task_check_reversibility(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    q: &[f64],
    p: &[f64],
    t_guess: f64,
    ctx: &TaskContext,
) -> Result<TaskOutcome> {
    let tols = ctx.tols;
    let orbit = find_periodic_orbit(h, u, &phase_point(q, p)?, t_guess, tols)?;
    let cls = classify_orbit(h, u, &orbit, tols)?;
    if cls.kind != OrbitKind::RoundTrip {
        return Err(Error::Inconclusive(
            "orbit is not a round trip; reversibility certificates do not apply".into(),
        ));
    }
    let nu0 = cls.degenerate_times[0];
    let nu1 = cls.degenerate_times[1];
    let sigma = time_symmetry_sigma(h, &orbit, nu0, tols)?;
    let rep = check_reversible_orbit(h, u, &orbit, nu0, nu1, tols)?;
    let check_tol = 1e-5;
    let mut csv = CsvWriter::new(&["check", "t", "residual", "tolerance"]);
    csv.write_row(&[
        "identity".to_string(),
        fmt_f64(nu0),
        fmt_f64(rep.identity_residual),
        fmt_f64(check_tol),
    ]);
    csv.write_row(&[
        "antisymplectic_nu0".to_string(),
        fmt_f64(nu0),
        fmt_f64(rep.antisymplectic_residuals.0),
        fmt_f64(check_tol),
    ]);
    csv.write_row(&[
        "antisymplectic_nu1".to_string(),
        fmt_f64(nu1),
        fmt_f64(rep.antisymplectic_residuals.1),
        fmt_f64(check_tol),
    ]);
    csv.write_row(&[
        "half_period_defect".to_string(),
        fmt_f64(nu1),
        fmt_f64(rep.half_period_defect),
        fmt_f64(1e-6),
    ]);
    for k in 1..=3 {
        let t = nu0 + orbit.period * k as f64 / 8.0;
        let pt = check_reversible_point(h, u, &orbit, &sigma, t, tols)?;
        csv.write_row(&[
            "scale_derivative".to_string(),
            fmt_f64(t),
            fmt_f64(pt.scale_derivative),
            fmt_f64(check_tol),
        ]);
        csv.write_row(&[
            "antisymplectic_point".to_string(),
            fmt_f64(t),
            fmt_f64(pt.antisymplectic_residual),
            fmt_f64(check_tol),
        ]);
        csv.write_row(&[
            "cocycle_derivative".to_string(),
            fmt_f64(t),
            fmt_f64(pt.cocycle_residual),
            fmt_f64(check_tol),
        ]);
    }
    let path = ctx.out_dir.join("reversibility.csv");
    csv.save(&path)?;
    Ok(TaskOutcome {
        artifacts: vec![path],
    })
}

fn task_linsys_check(
    dim_d: usize,
    pairs: usize,
    bumps: usize,
    alpha: f64,
    ctx: &TaskContext,
) -> Result<TaskOutcome> {
    let tols = ctx.tols;
    let threshold = 1e-6;
    let results: Vec<Result<Vec<String>>> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed.wrapping_add(i as u64));
            let t_end = 1.0;
            let n_nodes = 201;
            let l = random_hamiltonian_curve(dim_d, t_end, n_nodes, &mut rng)?;
            let a = ScalarCurve::from_fn(t_end, n_nodes, |t| {
                1.0 + 0.3 * (std::f64::consts::TAU * t).sin()
            })?;
            let mut s0 = DMatrix::zeros(dim_d, dim_d);
            for r in 0..dim_d {
                for c in r..dim_d {
                    let v: f64 = rng.gen_range(-0.5..0.5);
                    s0[(r, c)] = v;
                    s0[(c, r)] = v;
                }
            }
            let pair = build_conjugate_pair(&l, &a, alpha, &s0, None)?;
            let three = check_three_conditions(&pair, threshold)?;
            let ensemble: Vec<ForcingCurve> = (0..bumps)
                .map(|_| {
                    let center = rng.gen_range(0.2..0.8);
                    let width = rng.gen_range(0.05..0.15);
                    let mut dir = DVector::zeros(dim_d);
                    for k in 0..dim_d {
                        dir[k] = rng.gen_range(-1.0..1.0);
                    }
                    ForcingCurve::new(dim_d, t_end, center, width, dir)
                })
                .collect::<Result<Vec<_>>>()?;
            let agreement = projection_agreement(&pair, &ensemble, tols.integrator_tol)?;
            let ms = m_sequence(&l, &a, 4)?;
            let m4_norm = ms.last().map(|m| m.node(n_nodes / 2).amax()).unwrap_or(0.0);
            Ok(vec![
                i.to_string(),
                fmt_f64(three.cond1_residual),
                fmt_bool(three.cond1_pass),
                fmt_f64(three.cond2_residual),
                fmt_bool(three.cond2_pass),
                fmt_f64(three.cond3_residual),
                fmt_bool(three.cond3_pass),
                fmt_f64(agreement),
                fmt_f64(m4_norm),
                fmt_f64(threshold),
            ])
        })
        .collect();
    let mut csv = CsvWriter::new(&[
        "pair",
        "cond1_residual",
        "cond1_pass",
        "cond2_residual",
        "cond2_pass",
        "cond3_residual",
        "cond3_pass",
        "projection_agreement",
        "m4_mid_norm",
        "tolerance",
    ]);
    for r in results {
        csv.write_row(&r?);
    }
    let path = ctx.out_dir.join("linsys.csv");
    csv.save(&path)?;
    Ok(TaskOutcome {
        artifacts: vec![path],
    })
}

fn task_matrix_lab(dim_d: usize, draws: usize, ctx: &TaskContext) -> Result<TaskOutcome> {
    let tols = ctx.tols;
    let results: Vec<Result<Vec<String>>> = (0..draws)
        .into_par_iter()
        .map(|i| {
            // ill-conditioned random conjugations are redrawn (bounded,
            // deterministic retry)
            let draw = |attempt: u64| -> Result<_> {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    ctx.seed
                        .wrapping_add(i as u64)
                        .wrapping_add(attempt.wrapping_mul(0x9e37_79b9)),
                );
                let base = AntisymplecticInvolution::new(r0(dim_d), tols.involution_tol)?;
                let m = random_symplectic(dim_d, &mut rng);
                let r = conjugate_involution(&m, &base)?;
                let mut x: Vec<f64> = (0..dim_d)
                    .map(|_| 1.0 + rng.gen_range(0.05..2.0))
                    .collect();
                x.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for k in 1..dim_d {
                    if x[k] - x[k - 1] < 1e-3 {
                        x[k] = x[k - 1] + 1e-3;
                    }
                }
                let l = make_r_reversible(&r, &x)?;
                Ok((r, l))
            };
            let mut found = None;
            for attempt in 0..20u64 {
                match draw(attempt) {
                    Ok(rl) => {
                        found = Some(rl);
                        break;
                    }
                    Err(Error::Numerical(_)) | Err(Error::InvalidInput(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            let (r, l) = found.ok_or_else(|| {
                Error::Numerical("no well-conditioned draw after 20 attempts".into())
            })?;
            let residual = reversibility_residual(r.entries(), l.entries());
            let verdict = symorb::sympmat::classify_upsilon(
                l.entries(),
                tols.root_tol,
                tols.gap_tol,
                tols.k_max,
            )?;
            Ok(vec![
                i.to_string(),
                fmt_f64(residual),
                fmt_f64(verdict.min_eigenvalue_gap),
                fmt_bool(verdict.in_upsilon),
                reason_str(&verdict.reason),
                fmt_f64(1e-8),
            ])
        })
        .collect();
    let mut csv = CsvWriter::new(&[
        "draw",
        "reversibility_residual",
        "min_eigenvalue_gap",
        "in_upsilon",
        "reason",
        "tolerance",
    ]);
    for r in results {
        csv.write_row(&r?);
    }
    let path = ctx.out_dir.join("matrix_lab.csv");
    csv.save(&path)?;
    Ok(TaskOutcome {
        artifacts: vec![path],
    })
}
