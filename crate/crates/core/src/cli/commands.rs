//! One function per subcommand, each producing a [`CsvTable`].

use nalgebra::Matrix3;
use rand::Rng;
use rayon::prelude::*;

use crate::aperture::{PupilFunction, ZernikeBasis};
use crate::channels::{channel_convergence, classical_fi, ChannelEvaluator};
use crate::error::{Error, Result};
use crate::montecarlo::{run_experiment, substream, StreamKind};
use crate::overlap::{
    compute_overlap, eigen_identities_check, SceneParams, Vec3, OVERLAP_CONVERGENCE_TOL,
};
use crate::qfi::{
    branch_flip_residual, compute_h_ll, compute_h_sl_residual, invert_block, qcrb_grid,
};

use super::config::{CommandKind, RunConfig};
use super::csv::{Cell, CsvTable};

/// Tolerances applied by `verify`.
pub const VERIFY_HSL_TOL: f64 = 1e-8;
pub const VERIFY_IDENTITY_TOL: f64 = 1e-8;
pub const VERIFY_BRANCH_TOL: f64 = 1e-9;
/// Random scenes closer to coincidence than this are redrawn.
pub const VERIFY_MIN_DISTINGUISHABILITY: f64 = 1e-4;

/// A finished table plus an optional internal-consistency failure that
/// should still be reported after the table is written.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub table: CsvTable,
    pub consistency_failure: Option<String>,
}

impl From<CsvTable> for Report {
    fn from(table: CsvTable) -> Self {
        Self {
            table,
            consistency_failure: None,
        }
    }
}

const UPPER: [(usize, usize, &str); 6] = [
    (0, 0, "xx"),
    (0, 1, "xy"),
    (0, 2, "xz"),
    (1, 1, "yy"),
    (1, 2, "yz"),
    (2, 2, "zz"),
];

fn upper_names(prefix: &str) -> Vec<String> {
    UPPER
        .iter()
        .map(|(_, _, n)| format!("{prefix}_{n}"))
        .collect()
}

fn upper_cells(m: &Matrix3<f64>) -> Vec<Cell> {
    UPPER.iter().map(|(i, j, _)| m[(*i, *j)].into()).collect()
}

fn opt_cells(v: Option<Vec3>) -> Vec<Cell> {
    (0..3).map(|k| v.map(|v| v[k]).into()).collect()
}

fn metadata(cfg: &RunConfig, extra: &str) -> String {
    let q = &cfg.quadrature;
    let mut m = format!(
        "pairqfi {} config_sha256={} quadrature={}x{} refinement={} seed={}",
        cfg.command.name(),
        cfg.hash(),
        q.n_radial,
        q.n_angular,
        q.refinement_factor,
        cfg.seed
    );
    if !extra.is_empty() {
        m.push(' ');
        m.push_str(extra);
    }
    m
}

pub fn execute(cfg: &RunConfig) -> Result<Report> {
    let pupil = cfg.pupil.build(cfg.quadrature)?;
    let mut report = match cfg.command {
        CommandKind::QcrbLl => cmd_qcrb_ll(&pupil)?.into(),
        CommandKind::QcrbSs => cmd_qcrb_ss(cfg, &pupil)?.into(),
        CommandKind::Verify => cmd_verify(cfg, &pupil)?,
        CommandKind::Channels => cmd_channels(cfg, &pupil)?.into(),
        CommandKind::Fi => cmd_fi(cfg, &pupil)?.into(),
        CommandKind::Simulate => cmd_simulate(cfg, &pupil)?.into(),
    };
    let extra = match cfg.command {
        CommandKind::Simulate => "branch=nearest-init",
        _ => "",
    };
    report.table.metadata = metadata(cfg, extra);
    Ok(report)
}

/// Separation block and its inverse.
pub fn cmd_qcrb_ll(pupil: &PupilFunction) -> Result<CsvTable> {
    let mut header = upper_names("hll");
    header.extend(upper_names("qcrb"));
    header.push("flag".into());
    let mut table = CsvTable::new(&header);
    let h = compute_h_ll(pupil);
    let inv = invert_block(&h, "H(ll)")?;
    let mut row = upper_cells(&h);
    row.extend(upper_cells(&inv.inverse));
    row.push("ok".into());
    table.push(row);
    Ok(table)
}

/// Centroid QCRB over a one-dimensional sweep of the separation.
pub fn cmd_qcrb_ss(cfg: &RunConfig, pupil: &PupilFunction) -> Result<CsvTable> {
    let sweep = cfg
        .sweep
        .as_ref()
        .expect("resolved qcrb-ss config has a sweep");
    let mut table = CsvTable::new(&[
        "l_x", "l_y", "l_z", "delta", "qcrb_sx", "qcrb_sy", "qcrb_sz", "flag",
    ]);
    for row in qcrb_grid(pupil, sweep) {
        let mut cells: Vec<Cell> = row.l.iter().map(|v| (*v).into()).collect();
        cells.push(row.delta.into());
        cells.extend(opt_cells(row.qcrb_ss));
        cells.push(row.flag.as_str().into());
        table.push(cells);
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy)]
struct VerifyRow {
    l: Vec3,
    s: Vec3,
    one_minus_delta_sq: f64,
    checks: Option<[f64; 3]>,
}

/// Randomized scenes checked against the exact identities of the model.
pub fn cmd_verify(cfg: &RunConfig, pupil: &PupilFunction) -> Result<Report> {
    let rows: Vec<VerifyRow> = (0..cfg.samples)
        .into_par_iter()
        .map(|k| verify_sample(pupil, cfg.seed, k))
        .collect::<Result<_>>()?;

    let mut table = CsvTable::new(&[
        "sample",
        "l_x",
        "l_y",
        "l_z",
        "s_x",
        "s_y",
        "s_z",
        "one_minus_delta_sq",
        "max_abs_hsl",
        "identity_residual",
        "branch_residual",
        "flag",
    ]);
    let mut maxima = [0.0f64; 3];
    let mut failures = 0;
    let mut unresolved = 0;
    for (k, row) in rows.iter().enumerate() {
        let mut cells: Vec<Cell> = vec![k.into()];
        cells.extend(row.l.iter().chain(&row.s).map(|v| Cell::from(*v)));
        cells.push(row.one_minus_delta_sq.into());
        let flag = match row.checks {
            Some(c) => {
                for (m, v) in maxima.iter_mut().zip(c) {
                    *m = m.max(v);
                }
                cells.extend(c.iter().map(|v| Cell::from(*v)));
                let ok =
                    c[0] < VERIFY_HSL_TOL && c[1] < VERIFY_IDENTITY_TOL && c[2] < VERIFY_BRANCH_TOL;
                if ok {
                    "ok"
                } else {
                    failures += 1;
                    "fail"
                }
            }
            None => {
                unresolved += 1;
                cells.extend([Cell::Empty, Cell::Empty, Cell::Empty]);
                "unresolved"
            }
        };
        cells.push(flag.into());
        table.push(cells);
    }
    let mut summary: Vec<Cell> = vec!["max".into()];
    summary.extend(std::iter::repeat_n(Cell::Empty, 7));
    summary.extend(maxima.iter().map(|v| Cell::from(*v)));
    summary.push(if failures == 0 { "ok" } else { "fail" }.into());
    table.push(summary);

    if unresolved > 0 {
        log::warn!("{unresolved} verify samples were not resolved by the quadrature");
    }
    let consistency_failure = (failures > 0).then(|| {
        format!(
            "{failures} of {} samples exceed tolerance (max |H(sl)| {:e}, identity {:e}, branch {:e})",
            cfg.samples, maxima[0], maxima[1], maxima[2]
        )
    });
    Ok(Report {
        table,
        consistency_failure,
    })
}

fn verify_sample(pupil: &PupilFunction, seed: u64, sample: usize) -> Result<VerifyRow> {
    let mut rng = substream(seed, StreamKind::Verify, sample as u64, 0);
    loop {
        let l = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-2.0..2.0),
        ];
        let s = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let scene = SceneParams::with_l(l).with_s(s);
        let overlap = match compute_overlap(pupil, &scene) {
            Ok(o) => o,
            Err(Error::Oscillation { .. }) => {
                return Ok(VerifyRow {
                    l,
                    s,
                    one_minus_delta_sq: f64::NAN,
                    checks: None,
                })
            }
            Err(e) => return Err(e),
        };
        let gap = overlap.one_minus_delta_sq();
        if gap <= VERIFY_MIN_DISTINGUISHABILITY {
            continue;
        }
        let hsl = compute_h_sl_residual(pupil, &scene)?.max_abs;
        let identity = eigen_identities_check(pupil, &scene)?.max_residual();
        let branch = branch_flip_residual(pupil, &scene)?;
        return Ok(VerifyRow {
            l,
            s,
            one_minus_delta_sq: gap,
            checks: Some([hsl, identity, branch]),
        });
    }
}

fn channel_names(n: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=n).map(|k| format!("p{k}")).collect();
    names.push("p_bar".into());
    names
}

/// Channel probabilities and their separation derivatives at one scene.
pub fn cmd_channels(cfg: &RunConfig, pupil: &PupilFunction) -> Result<CsvTable> {
    let scene = scene(cfg)?;
    let basis = ZernikeBasis::new(cfg.channels)?;
    let model = ChannelEvaluator::new(pupil, &basis).derivatives(&scene)?;

    let names = channel_names(cfg.channels);
    let mut header = names.clone();
    for name in &names {
        header.extend(["x", "y", "z"].map(|a| format!("d{name}_dl{a}")));
    }
    header.push("flag".into());
    let mut table = CsvTable::new(&header);

    let mut row: Vec<Cell> = model
        .full_probabilities()
        .into_iter()
        .map(Cell::from)
        .collect();
    for d in model
        .full_derivatives()
        .expect("derivatives were requested")
    {
        row.extend(d.map(Cell::from));
    }
    let flag = match compute_overlap(pupil, &scene) {
        Ok(o) if o.is_degenerate() => "degenerate",
        Ok(_) if channel_convergence(pupil, &basis, &scene) > OVERLAP_CONVERGENCE_TOL => {
            "unresolved"
        }
        Ok(_) => "ok",
        Err(Error::Oscillation { .. }) => "unresolved",
        Err(e) => return Err(e),
    };
    row.push(flag.into());
    table.push(row);
    Ok(table)
}

/// Classical Fisher information of the channel counts, its inverse and the
/// quantum bound for the same photon number.
pub fn cmd_fi(cfg: &RunConfig, pupil: &PupilFunction) -> Result<CsvTable> {
    let scene = scene(cfg)?;
    let basis = ZernikeBasis::new(cfg.channels)?;
    let model = ChannelEvaluator::new(pupil, &basis).derivatives(&scene)?;
    let photons = cfg.photons as f64;
    let fi = classical_fi(&model, photons)?;
    let qcrb = invert_block(&compute_h_ll(pupil), "H(ll)")?.inverse / photons;

    let mut header: Vec<String> = vec!["photons".into()];
    header.extend(upper_names("j"));
    header.extend(["j_eig1", "j_eig2", "j_eig3"].map(String::from));
    header.extend(upper_names("crb"));
    header.extend(["qcrb_xx", "qcrb_yy", "qcrb_zz", "flag"].map(String::from));
    let mut table = CsvTable::new(&header);

    let mut row: Vec<Cell> = vec![cfg.photons.into()];
    row.extend(upper_cells(&fi.total()));
    row.extend(fi.eigenvalues().map(Cell::from));
    let flag = match fi.crb() {
        Ok(inv) => {
            row.extend(upper_cells(&inv.inverse));
            "ok"
        }
        Err(Error::SingularBlock { .. }) => {
            row.extend(std::iter::repeat_n(Cell::Empty, 6));
            "singular"
        }
        Err(e) => return Err(e),
    };
    row.extend([qcrb[(0, 0)], qcrb[(1, 1)], qcrb[(2, 2)]].map(Cell::from));
    row.push(flag.into());
    table.push(row);
    Ok(table)
}

/// Monte Carlo estimation experiment, one row per centroid draw followed
/// by `mean` and `std` summary rows.
pub fn cmd_simulate(cfg: &RunConfig, pupil: &PupilFunction) -> Result<CsvTable> {
    let sim = cfg
        .simulation
        .as_ref()
        .expect("resolved simulate config has settings");
    let basis = ZernikeBasis::new(cfg.channels)?;
    log::info!(
        "simulating {} draws x {} frames at M = {}",
        sim.n_centroid_draws,
        sim.frames_per_draw,
        sim.photons_per_frame
    );
    let report = run_experiment(sim, pupil, &basis)?;

    let mut table = CsvTable::new(&[
        "draw",
        "s_x",
        "s_y",
        "s_z",
        "var_lx",
        "var_ly",
        "var_lz",
        "mean_lx",
        "mean_ly",
        "mean_lz",
        "crb_xx",
        "crb_yy",
        "crb_zz",
        "crb0_xx",
        "crb0_yy",
        "crb0_zz",
        "crbavg_xx",
        "crbavg_yy",
        "crbavg_zz",
        "qcrb_xx",
        "qcrb_yy",
        "qcrb_zz",
        "unconverged",
        "reflected",
        "flag",
    ]);
    let shared = |row: &mut Vec<Cell>| {
        row.extend(report.crb_s0.map(Cell::from));
        row.extend(opt_cells(report.crb_draw_mean));
        row.extend(report.qcrb.map(Cell::from));
    };
    for (k, d) in report.draws.iter().enumerate() {
        let mut row: Vec<Cell> = vec![k.into()];
        row.extend(d.s.map(Cell::from));
        row.extend(d.variance.map(Cell::from));
        row.extend(d.mean.map(Cell::from));
        row.extend(opt_cells(d.crb));
        shared(&mut row);
        row.push(d.unconverged.into());
        row.push(d.reflected.into());
        let flag = match (d.unconverged > 0, d.crb.is_none()) {
            (true, _) => "unconverged",
            (false, true) => "singular",
            _ => "ok",
        };
        row.push(flag.into());
        table.push(row);
    }
    for (label, values, unconverged, reflected) in [
        (
            "mean",
            report.variance_mean,
            Cell::from(report.unconverged),
            Cell::from(report.reflected),
        ),
        ("std", report.variance_std, Cell::Empty, Cell::Empty),
    ] {
        let mut row: Vec<Cell> = vec![label.into()];
        row.extend(std::iter::repeat_n(Cell::Empty, 3));
        row.extend(values.map(Cell::from));
        row.extend(std::iter::repeat_n(Cell::Empty, 6));
        shared(&mut row);
        row.push(unconverged);
        row.push(reflected);
        row.push(
            if report.unconverged > 0 {
                "unconverged"
            } else {
                "ok"
            }
            .into(),
        );
        table.push(row);
    }
    Ok(table)
}

fn scene(cfg: &RunConfig) -> Result<SceneParams> {
    SceneParams::new(cfg.l.expect("resolved config has a separation"), cfg.s)
}
