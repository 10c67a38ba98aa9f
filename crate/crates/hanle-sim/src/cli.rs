//! Command orchestration and machine-readable outputs.
//!
//! Every command writes self-describing CSV: a `#`-prefixed preamble carries
//! the full parameter record so outputs can be replotted or refitted without
//! the configuration file. Files are written to `<name>.partial` first and
//! renamed on success, so an interrupted run never leaves a truncated file
//! under the final name.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bloch::{
    absorption, absorption_via_coherence, solve_steady, steady_residual, ZeemanParams,
};
use crate::config::{fmt_f64, write_config, RunConfig};
use crate::resonance::{
    find_eps_max, scan_magnetic, sweep_ellipticity, symmetric_grid, EllipticitySweep,
    ResonanceCurve,
};
use crate::{Error, Result};

/// The four CLI commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Absorption vs magnetic field curve on the coarse grid.
    ScanB,
    /// Resonance parameters vs ellipticity.
    SweepEps,
    /// Optimal-ellipticity search.
    FindEpsMax,
    /// One steady-state solve with full density-matrix dump.
    SolveOne,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::ScanB => "scan-b",
            Command::SweepEps => "sweep-eps",
            Command::FindEpsMax => "find-epsmax",
            Command::SolveOne => "solve-one",
        }
    }
}

/// Parameter preamble: the whole configuration as `# `-prefixed lines.
fn preamble(cmd: Command, cfg: &RunConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# hanle-sim {}", cmd.name());
    for line in write_config(cfg).lines() {
        if line.is_empty() {
            continue;
        }
        let _ = writeln!(s, "# {line}");
    }
    if cfg.atom.rate_consistency_residual() > 0.01 {
        let _ = writeln!(
            s,
            "# warning: gamma_r/2 + big_gamma deviates from gamma_eg by {}",
            fmt_f64(cfg.atom.rate_consistency_residual())
        );
    }
    s
}

/// Write `content` atomically: to `<path>.partial`, then rename.
fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let partial = path.with_extension(match path.extension() {
        Some(e) => format!("{}.partial", e.to_string_lossy()),
        None => "partial".to_string(),
    });
    std::fs::write(&partial, content).map_err(|e| Error::io(&partial, e))?;
    std::fs::rename(&partial, path).map_err(|e| {
        let _ = std::fs::remove_file(&partial);
        Error::io(path, e)
    })?;
    Ok(())
}

/// Resonance curve as CSV with the parameter preamble.
pub fn curve_csv(curve: &ResonanceCurve, cmd: Command, cfg: &RunConfig) -> String {
    let mut s = preamble(cmd, cfg);
    let _ = writeln!(s, "omega_g,signal");
    for (og, sig) in curve.omega_g().iter().zip(curve.signal()) {
        let _ = writeln!(s, "{},{}", fmt_f64(*og), fmt_f64(*sig));
    }
    s
}

/// Ellipticity sweep as CSV. Points with no identifiable central structure
/// get zero amplitude/width/ratio and sign `none`.
pub fn sweep_csv(sweep: &EllipticitySweep, cfg: &RunConfig) -> String {
    let mut s = preamble(Command::SweepEps, cfg);
    let _ = writeln!(s, "epsilon,amplitude,width,ratio,sign");
    for (eps, p) in sweep.epsilons.iter().zip(&sweep.params) {
        match p {
            Some(p) => {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    fmt_f64(*eps),
                    fmt_f64(p.amplitude),
                    fmt_f64(p.width),
                    fmt_f64(p.ratio),
                    p.sign
                );
            }
            None => {
                let _ = writeln!(s, "{},0,0,0,none", fmt_f64(*eps));
            }
        }
    }
    s
}

/// Two-column gnuplot-style data for a resonance curve.
pub fn emit_curve_plot(curve: &ResonanceCurve, path: &Path) -> Result<()> {
    if curve.is_empty() {
        return Err(Error::Domain("refusing to write an empty curve".into()));
    }
    let mut s = String::new();
    for (og, sig) in curve.omega_g().iter().zip(curve.signal()) {
        let _ = writeln!(s, "{} {}", fmt_f64(*og), fmt_f64(*sig));
    }
    write_atomic(path, &s)
}

/// Three gnuplot-style files (amplitude, width, ratio vs ellipticity) for a
/// sweep; rows without an identified structure are omitted.
pub fn emit_sweep_plots(sweep: &EllipticitySweep, dir: &Path) -> Result<Vec<PathBuf>> {
    let rows: Vec<(f64, [f64; 3])> = sweep
        .epsilons
        .iter()
        .zip(&sweep.params)
        .filter_map(|(e, p)| p.map(|p| (*e, [p.amplitude, p.width, p.ratio])))
        .collect();
    if rows.is_empty() {
        return Err(Error::Extraction(
            "sweep produced no extractable resonances; not writing plot data".into(),
        ));
    }
    let names = ["amplitude_vs_eps.dat", "width_vs_eps.dat", "ratio_vs_eps.dat"];
    let mut written = Vec::new();
    for (col, name) in names.iter().enumerate() {
        let mut s = String::new();
        for (eps, vals) in &rows {
            let _ = writeln!(s, "{} {}", fmt_f64(*eps), fmt_f64(vals[col]));
        }
        let path = dir.join(name);
        write_atomic(&path, &s)?;
        written.push(path);
    }
    Ok(written)
}

fn fmt_matrix(
    s: &mut String,
    name: &str,
    m: &nalgebra::DMatrix<crate::bloch::C64>,
    part: fn(&crate::bloch::C64) -> f64,
) {
    let _ = writeln!(s, "{name}");
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(part(&m[(i, j)]))).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
}

/// Run one command; returns the list of files written.
pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    if cfg.atom.rate_consistency_residual() > 0.01 {
        eprintln!(
            "warning: gamma_r/2 + big_gamma = {} deviates from gamma_eg = 1",
            cfg.atom.gamma_r / 2.0 + cfg.atom.big_gamma
        );
    }
    let mut written = Vec::new();
    match cmd {
        Command::ScanB => {
            let grid = symmetric_grid(cfg.scan.coarse_range, cfg.scan.coarse_points)?;
            let curve = scan_magnetic(&cfg.atom, &cfg.field, &cfg.doppler, &grid)?;
            let path = cfg.out_dir.join("scan_b.csv");
            write_atomic(&path, &curve_csv(&curve, cmd, cfg))?;
            written.push(path);
            if cfg.plot {
                let path = cfg.out_dir.join("scan_b.dat");
                emit_curve_plot(&curve, &path)?;
                written.push(path);
            }
        }
        Command::SweepEps => {
            let sweep = sweep_ellipticity(
                &cfg.atom,
                &cfg.field,
                &cfg.doppler,
                &cfg.sweep_epsilons,
                &cfg.scan,
            )?;
            let path = cfg.out_dir.join("sweep_eps.csv");
            write_atomic(&path, &sweep_csv(&sweep, cfg))?;
            written.push(path);
            if cfg.plot {
                written.extend(emit_sweep_plots(&sweep, &cfg.out_dir)?);
            }
        }
        Command::FindEpsMax => {
            let res = find_eps_max(&cfg.atom, &cfg.field, &cfg.doppler, &cfg.scan)?;
            let mut s = preamble(cmd, cfg);
            let _ = writeln!(s, "eps_max,amplitude_max,amplitude_linear,gain,multi_modal");
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                fmt_f64(res.eps_max),
                fmt_f64(res.amp_max),
                fmt_f64(res.amp_linear),
                fmt_f64(res.gain),
                res.multi_modal
            );
            let path = cfg.out_dir.join("epsmax_summary.csv");
            write_atomic(&path, &s)?;
            written.push(path);

            let path = cfg.out_dir.join("epsmax_scan.csv");
            write_atomic(&path, &sweep_csv(&res.coarse, cfg))?;
            written.push(path);
        }
        Command::SolveOne => {
            let zeeman = ZeemanParams::from_omega_g(cfg.solve_omega_g, &cfg.atom)?;
            let blocks = solve_steady(&cfg.atom, &cfg.field, cfg.solve_delta, &zeeman)?;
            let s_energy = absorption(&blocks, &cfg.atom);
            let s_drive = absorption_via_coherence(&blocks, &cfg.atom, &cfg.field)?;
            let residual =
                steady_residual(&blocks, &cfg.atom, &cfg.field, cfg.solve_delta, &zeeman)?;

            let mut s = preamble(cmd, cfg);
            let _ = writeln!(s, "absorption = {}", fmt_f64(s_energy));
            let _ = writeln!(s, "absorption_drive_route = {}", fmt_f64(s_drive));
            let _ = writeln!(s, "steady_residual = {}", fmt_f64(residual));
            let _ = writeln!(s, "trace_sum = {}", fmt_f64(blocks.trace_sum()));
            let _ = writeln!(
                s,
                "hermiticity_residual = {}",
                fmt_f64(blocks.hermiticity_residual())
            );
            let _ = writeln!(s);
            fmt_matrix(&mut s, "rho_g real", &blocks.rho_g, |z| z.re);
            fmt_matrix(&mut s, "rho_g imag", &blocks.rho_g, |z| z.im);
            fmt_matrix(&mut s, "rho_e real", &blocks.rho_e, |z| z.re);
            fmt_matrix(&mut s, "rho_e imag", &blocks.rho_e, |z| z.im);
            fmt_matrix(&mut s, "rho_eg real", &blocks.rho_eg, |z| z.re);
            fmt_matrix(&mut s, "rho_eg imag", &blocks.rho_eg, |z| z.im);

            let path = cfg.out_dir.join("solve_one.txt");
            write_atomic(&path, &s)?;
            written.push(path);
        }
    }
    Ok(written)
}
