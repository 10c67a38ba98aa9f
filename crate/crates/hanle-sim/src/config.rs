//! Run configuration: a flat, sectioned `key = value` text format with
//! strict validation (unknown keys are errors) and lossless round-tripping
//! (all numbers serialized with 17 significant digits).
//!
//! ```text
//! [atom]
//! f_g = 2            # integers, fractions ("3/2") or halves ("1.5")
//! f_e = 3
//! gamma_r = 2.0
//! big_gamma = 0.005
//!
//! [field]
//! rabi = 5.0
//! epsilon = 0.0
//!
//! [doppler]
//! width = 100.0
//! nodes = 64
//! ```
//!
//! `#` starts a whole-line comment. Sections `[atom]` and `[field]` are
//! required (`f_g`, `f_e`, `rabi` have no defaults); everything else takes
//! the documented defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::angular::{Polarization, Spin};
use crate::bloch::{AtomSpec, FieldParams};
use crate::doppler::DopplerSpec;
use crate::resonance::ScanConfig;
use crate::{Error, Result};

/// Fully validated run parameters for every CLI command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub atom: AtomSpec,
    pub field: FieldParams,
    pub doppler: DopplerSpec,
    pub scan: ScanConfig,
    /// Ellipticity list for `sweep-eps`.
    pub sweep_epsilons: Vec<f64>,
    /// Detuning of the single `solve-one` point.
    pub solve_delta: f64,
    /// Ground Zeeman rate of the single `solve-one` point.
    pub solve_omega_g: f64,
    pub out_dir: PathBuf,
    /// Also emit gnuplot-style .dat files next to the CSV outputs.
    pub plot: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            atom: AtomSpec::new(
                Spin::from_int(2),
                Spin::from_int(3),
                0.5,
                2.0 / 3.0,
                2.0,
                5e-3,
            )
            .unwrap(),
            field: FieldParams::new(5.0, Polarization::new(0.0).unwrap(), 0.0).unwrap(),
            doppler: DopplerSpec::new(100.0, 64).unwrap(),
            scan: ScanConfig::default(),
            sweep_epsilons: default_sweep(13),
            solve_delta: 0.0,
            solve_omega_g: 0.0,
            out_dir: PathBuf::from("."),
            plot: true,
        }
    }
}

fn default_sweep(count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| std::f64::consts::FRAC_PI_4 * k as f64 / (count - 1) as f64)
        .collect()
}

/// One `key = value` occurrence with its source location.
#[derive(Debug, Clone)]
struct RawValue {
    value: String,
    line: usize,
}

/// Raw parsed file: `(section, key) -> value`, before typed validation.
#[derive(Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<(String, String), RawValue>,
    path: String,
}

const SECTIONS: &[&str] = &["atom", "field", "doppler", "scan", "sweep", "solve", "output"];

impl RawConfig {
    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let n = lineno + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::Config(format!(
                        "{origin}:{n}: unknown section [{name}]"
                    )));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{origin}:{n}: expected `key = value` or `[section]`, got `{line}`"
                )));
            };
            let Some(sec) = section.clone() else {
                return Err(Error::Config(format!(
                    "{origin}:{n}: key `{}` appears before any [section]",
                    key.trim()
                )));
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("{origin}:{n}: empty key")));
            }
            let prev = entries.insert(
                (sec.clone(), key.clone()),
                RawValue {
                    value: value.trim().to_string(),
                    line: n,
                },
            );
            if let Some(prev) = prev {
                return Err(Error::Config(format!(
                    "{origin}:{n}: duplicate key `{sec}.{key}` (first set on line {})",
                    prev.line
                )));
            }
        }
        Ok(RawConfig {
            entries,
            path: origin.to_string(),
        })
    }

    /// Apply a `section.key=value` override (CLI `--override`).
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let Some((path, value)) = spec.split_once('=') else {
            return Err(Error::Config(format!(
                "override `{spec}` must look like section.key=value"
            )));
        };
        let Some((sec, key)) = path.trim().split_once('.') else {
            return Err(Error::Config(format!(
                "override key `{}` must look like section.key",
                path.trim()
            )));
        };
        if !SECTIONS.contains(&sec) {
            return Err(Error::Config(format!("override: unknown section `{sec}`")));
        }
        self.entries.insert(
            (sec.to_string(), key.trim().to_string()),
            RawValue {
                value: value.trim().to_string(),
                line: 0,
            },
        );
        Ok(())
    }

    fn locate(&self, rv: &RawValue) -> String {
        if rv.line == 0 {
            format!("{} (override)", self.path)
        } else {
            format!("{}:{}", self.path, rv.line)
        }
    }

    fn take(&mut self, sec: &str, key: &str) -> Option<(RawValue, String)> {
        self.entries
            .remove(&(sec.to_string(), key.to_string()))
            .map(|rv| {
                let loc = self.locate(&rv);
                (rv, loc)
            })
    }

    fn get_with<T>(
        &mut self,
        sec: &str,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<T> {
        match self.take(sec, key) {
            None => Ok(default),
            Some((rv, loc)) => parse(&rv.value)
                .map_err(|msg| Error::Config(format!("{loc}: key `{sec}.{key}`: {msg}"))),
        }
    }

    fn require_with<T>(
        &mut self,
        sec: &str,
        key: &str,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<T> {
        match self.take(sec, key) {
            None => Err(Error::Config(format!(
                "{}: missing required key `{sec}.{key}`",
                self.path
            ))),
            Some((rv, loc)) => parse(&rv.value)
                .map_err(|msg| Error::Config(format!("{loc}: key `{sec}.{key}`: {msg}"))),
        }
    }

    fn reject_leftovers(&self) -> Result<()> {
        if let Some(((sec, key), rv)) = self.entries.iter().next() {
            return Err(Error::Config(format!(
                "{}: unknown key `{sec}.{key}`",
                self.locate(rv)
            )));
        }
        Ok(())
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>()
        .map_err(|_| format!("`{s}` is not a number"))
        .and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("`{s}` is not finite"))
            }
        })
}

fn parse_usize(s: &str) -> std::result::Result<usize, String> {
    s.parse::<usize>()
        .map_err(|_| format!("`{s}` is not a non-negative integer"))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{s}` is not `true` or `false`")),
    }
}

/// Accepts `2`, `3/2`, `1.5` style angular momenta.
fn parse_spin(s: &str) -> std::result::Result<Spin, String> {
    if let Some((num, den)) = s.split_once('/') {
        let num: u32 = num
            .trim()
            .parse()
            .map_err(|_| format!("`{s}` is not a spin"))?;
        let den: u32 = den
            .trim()
            .parse()
            .map_err(|_| format!("`{s}` is not a spin"))?;
        if den != 2 {
            return Err(format!("`{s}`: fractional spins must have denominator 2"));
        }
        return Ok(Spin::from_twice(num));
    }
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a spin"))?;
    let twice = (2.0 * v).round();
    if v < 0.0 || (2.0 * v - twice).abs() > 1e-9 {
        return Err(format!("`{s}` is not a non-negative integer or half-integer"));
    }
    Ok(Spin::from_twice(twice as u32))
}

fn parse_f64_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(|p| parse_f64(p.trim())).collect()
}

fn parse_inner_scale(s: &str) -> std::result::Result<Option<f64>, String> {
    if s == "auto" {
        Ok(None)
    } else {
        parse_f64(s).map(Some)
    }
}

/// Parse and validate a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let raw = RawConfig::parse_str(&text, &path.display().to_string())?;
    build_config(raw)
}

/// Build the typed configuration from raw key-value entries, consuming all
/// known keys and rejecting the rest.
pub fn build_config(mut raw: RawConfig) -> Result<RunConfig> {
    let f_g = raw.require_with("atom", "f_g", parse_spin)?;
    let f_e = raw.require_with("atom", "f_e", parse_spin)?;
    let g_g = raw.get_with("atom", "g_g", 0.5, parse_f64)?;
    let g_e = raw.get_with("atom", "g_e", 2.0 / 3.0, parse_f64)?;
    let gamma_r = raw.get_with("atom", "gamma_r", 2.0, parse_f64)?;
    let big_gamma = raw.get_with("atom", "big_gamma", 5e-3, parse_f64)?;
    let atom = AtomSpec::new(f_g, f_e, g_g, g_e, gamma_r, big_gamma)
        .map_err(|e| prefix_section(e, "atom"))?;

    let rabi = raw.require_with("field", "rabi", parse_f64)?;
    let epsilon = raw.get_with("field", "epsilon", 0.0, parse_f64)?;
    let delta0 = raw.get_with("field", "delta0", 0.0, parse_f64)?;
    let pol = Polarization::new(epsilon).map_err(|e| prefix_key(e, "field.epsilon"))?;
    let field = FieldParams::new(rabi, pol, delta0).map_err(|e| prefix_key(e, "field.rabi"))?;

    let width = raw.get_with("doppler", "width", 100.0, parse_f64)?;
    let nodes = raw.get_with("doppler", "nodes", 64, parse_usize)?;
    let inner = raw.get_with("doppler", "inner_scale", None, parse_inner_scale)?;
    let mut doppler = DopplerSpec::new(width, nodes).map_err(|e| prefix_section(e, "doppler"))?;
    doppler.inner_scale = inner;

    let scan = ScanConfig {
        coarse_range: raw.get_with("scan", "coarse_range", 5.0, parse_f64)?,
        coarse_points: raw.get_with("scan", "coarse_points", 101, parse_usize)?,
        fine_points: raw.get_with("scan", "fine_points", 161, parse_usize)?,
        fine_range: raw.get_with("scan", "fine_range", 0.0, parse_f64)?,
        max_refine: raw.get_with("scan", "max_refine", 8, parse_usize)?,
        width_ceiling: raw.get_with("scan", "width_ceiling", 3.0, parse_f64)?,
    };
    scan.validate().map_err(|e| prefix_section(e, "scan"))?;

    let sweep_epsilons = match raw.take("sweep", "epsilons") {
        Some((rv, loc)) => {
            let eps = parse_f64_list(&rv.value)
                .map_err(|m| Error::Config(format!("{loc}: key `sweep.epsilons`: {m}")))?;
            if eps.is_empty() {
                return Err(Error::Config(format!(
                    "{loc}: key `sweep.epsilons`: empty list"
                )));
            }
            eps
        }
        None => {
            let lo = raw.get_with("sweep", "eps_min", 0.0, parse_f64)?;
            let hi = raw.get_with("sweep", "eps_max", std::f64::consts::FRAC_PI_4, parse_f64)?;
            let count = raw.get_with("sweep", "eps_count", 13, parse_usize)?;
            if count < 2 {
                return Err(Error::Config("sweep.eps_count must be >= 2".into()));
            }
            if hi <= lo {
                return Err(Error::Config(
                    "sweep.eps_max must exceed sweep.eps_min".into(),
                ));
            }
            (0..count)
                .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
                .collect()
        }
    };
    for &e in &sweep_epsilons {
        if e.abs() > std::f64::consts::FRAC_PI_4 + 1e-12 {
            return Err(Error::Config(format!(
                "sweep ellipticity {e} outside [-pi/4, pi/4]"
            )));
        }
    }

    let solve_delta = raw.get_with("solve", "delta", 0.0, parse_f64)?;
    let solve_omega_g = raw.get_with("solve", "omega_g", 0.0, parse_f64)?;

    let out_dir = raw
        .get_with("output", "dir", ".".to_string(), |s| Ok(s.to_string()))
        .map(PathBuf::from)?;
    let plot = raw.get_with("output", "plot", true, parse_bool)?;

    raw.reject_leftovers()?;

    Ok(RunConfig {
        atom,
        field,
        doppler,
        scan,
        sweep_epsilons,
        solve_delta,
        solve_omega_g,
        out_dir,
        plot,
    })
}

fn prefix_section(e: Error, sec: &str) -> Error {
    match e {
        Error::Domain(m) => Error::Config(format!("section [{sec}]: {m}")),
        other => other,
    }
}

fn prefix_key(e: Error, key: &str) -> Error {
    match e {
        Error::Domain(m) => Error::Config(format!("key `{key}`: {m}")),
        other => other,
    }
}

/// Lossless decimal image of a float (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_spin(s: Spin) -> String {
    if s.twice() % 2 == 0 {
        format!("{}", s.twice() / 2)
    } else {
        format!("{}/2", s.twice())
    }
}

/// Serialize a configuration so that `parse` restores it exactly.
pub fn write_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[atom]");
    let _ = writeln!(s, "f_g = {}", fmt_spin(cfg.atom.f_g));
    let _ = writeln!(s, "f_e = {}", fmt_spin(cfg.atom.f_e));
    let _ = writeln!(s, "g_g = {}", fmt_f64(cfg.atom.g_g));
    let _ = writeln!(s, "g_e = {}", fmt_f64(cfg.atom.g_e));
    let _ = writeln!(s, "gamma_r = {}", fmt_f64(cfg.atom.gamma_r));
    let _ = writeln!(s, "big_gamma = {}", fmt_f64(cfg.atom.big_gamma));
    let _ = writeln!(s, "\n[field]");
    let _ = writeln!(s, "rabi = {}", fmt_f64(cfg.field.rabi));
    let _ = writeln!(s, "epsilon = {}", fmt_f64(cfg.field.pol.epsilon()));
    let _ = writeln!(s, "delta0 = {}", fmt_f64(cfg.field.delta0));
    let _ = writeln!(s, "\n[doppler]");
    let _ = writeln!(s, "width = {}", fmt_f64(cfg.doppler.width));
    let _ = writeln!(s, "nodes = {}", cfg.doppler.nodes);
    match cfg.doppler.inner_scale {
        None => {
            let _ = writeln!(s, "inner_scale = auto");
        }
        Some(v) => {
            let _ = writeln!(s, "inner_scale = {}", fmt_f64(v));
        }
    }
    let _ = writeln!(s, "\n[scan]");
    let _ = writeln!(s, "coarse_range = {}", fmt_f64(cfg.scan.coarse_range));
    let _ = writeln!(s, "coarse_points = {}", cfg.scan.coarse_points);
    let _ = writeln!(s, "fine_points = {}", cfg.scan.fine_points);
    let _ = writeln!(s, "fine_range = {}", fmt_f64(cfg.scan.fine_range));
    let _ = writeln!(s, "max_refine = {}", cfg.scan.max_refine);
    let _ = writeln!(s, "width_ceiling = {}", fmt_f64(cfg.scan.width_ceiling));
    let _ = writeln!(s, "\n[sweep]");
    let eps: Vec<String> = cfg.sweep_epsilons.iter().map(|&e| fmt_f64(e)).collect();
    let _ = writeln!(s, "epsilons = {}", eps.join(", "));
    let _ = writeln!(s, "\n[solve]");
    let _ = writeln!(s, "delta = {}", fmt_f64(cfg.solve_delta));
    let _ = writeln!(s, "omega_g = {}", fmt_f64(cfg.solve_omega_g));
    let _ = writeln!(s, "\n[output]");
    let _ = writeln!(s, "dir = {}", cfg.out_dir.display());
    let _ = writeln!(s, "plot = {}", cfg.plot);
    s
}
