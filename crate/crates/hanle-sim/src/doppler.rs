//! Maxwellian averaging of per-velocity-group observables over Doppler
//! shifts.
//!
//! The shift weight is `exp(-d^2/W^2) / (W sqrt(pi))` with `W = k v_p` the
//! Doppler width (most probable speed). Two quadrature rules are provided:
//!
//! * plain Gauss-Hermite in the scaled shift `t = d/W` -- adequate when the
//!   integrand varies on the Doppler scale;
//! * a two-scale rule used whenever an inner feature scale is known: the
//!   substitution `d = s tan(theta)` with `s = sqrt(inner * W)` concentrates
//!   Gauss-Legendre nodes where a saturated absorption profile (width much
//!   less than W) actually lives, with the Gaussian weight applied
//!   explicitly. For the absorption profiles produced by this crate the
//!   plain Hermite rule at any practical order badly under-resolves the
//!   optical line, so the resonance layer always supplies an inner scale.

use nalgebra::DMatrix;
use rayon::prelude::*;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::{Error, Result};

pub const MAX_NODES: usize = 256;

/// Doppler averaging parameters. `width = 0` denotes immovable atoms (a
/// single evaluation at the base detuning). `inner_scale`, when set, is the
/// characteristic width of the narrowest feature of the averaged observable
/// and switches the rule to the two-scale form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopplerSpec {
    pub width: f64,
    pub nodes: usize,
    pub inner_scale: Option<f64>,
}

impl DopplerSpec {
    pub fn new(width: f64, nodes: usize) -> Result<Self> {
        if !width.is_finite() || width < 0.0 {
            return Err(Error::Domain(format!("doppler width {width} must be >= 0")));
        }
        if nodes == 0 || nodes > MAX_NODES {
            return Err(Error::Domain(format!(
                "doppler nodes {nodes} outside 1..={MAX_NODES}"
            )));
        }
        Ok(DopplerSpec {
            width,
            nodes,
            inner_scale: None,
        })
    }

    /// Immovable atoms: the average degenerates to a point evaluation.
    pub fn immovable() -> Self {
        DopplerSpec {
            width: 0.0,
            nodes: 1,
            inner_scale: None,
        }
    }

    pub fn with_inner_scale(mut self, scale: f64) -> Self {
        self.inner_scale = Some(scale);
        self
    }
}

/// Nodes and weights via Golub-Welsch: eigen-decomposition of the symmetric
/// tridiagonal Jacobi matrix of the orthogonal-polynomial recurrence.
fn golub_welsch(offdiag: &[f64], weight_total: f64) -> (Vec<f64>, Vec<f64>) {
    let n = offdiag.len() + 1;
    let mut j = DMatrix::zeros(n, n);
    for (k, &b) in offdiag.iter().enumerate() {
        j[(k, k + 1)] = b;
        j[(k + 1, k)] = b;
    }
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], weight_total * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Gauss-Hermite nodes and weights for the weight function `exp(-t^2)`.
/// The weights sum to `sqrt(pi)`.
pub fn hermite_nodes(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > MAX_NODES {
        return Err(Error::Domain(format!(
            "hermite order {n} outside 1..={MAX_NODES}"
        )));
    }
    // recurrence t H_k = 1/2 H_{k+1} + k H_{k-1}: off-diagonal sqrt(k/2)
    let offdiag: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    Ok(golub_welsch(&offdiag, PI.sqrt()))
}

/// Gauss-Legendre nodes and weights on [-1, 1]; weights sum to 2.
pub fn legendre_nodes(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > MAX_NODES {
        return Err(Error::Domain(format!(
            "legendre order {n} outside 1..={MAX_NODES}"
        )));
    }
    let offdiag: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    Ok(golub_welsch(&offdiag, 2.0))
}

type Rule = Arc<(Vec<f64>, Vec<f64>)>;

fn cached_rule(kind: u8, n: usize) -> Result<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<(u8, usize), Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().unwrap().get(&(kind, n)) {
        return Ok(Arc::clone(r));
    }
    let rule = Arc::new(match kind {
        0 => hermite_nodes(n)?,
        _ => legendre_nodes(n)?,
    });
    cache
        .lock()
        .unwrap()
        .insert((kind, n), Arc::clone(&rule));
    Ok(rule)
}

/// Average `f` over the Maxwellian distribution of Doppler shifts:
///
/// `<f> = integral f(delta0 - d) exp(-d^2/W^2) / (W sqrt(pi)) dd`.
///
/// Evaluations at distinct nodes run in parallel; the reduction is a fixed
/// ascending-node sum, so results are identical for any thread count.
pub fn doppler_average<F>(f: F, delta0: f64, spec: &DopplerSpec) -> Result<f64>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if spec.width == 0.0 {
        let v = f(delta0)?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite observable at delta = {delta0}"
            )));
        }
        return Ok(v);
    }
    let (shifts, weights) = doppler_rule(spec, delta0)?;
    let values: Vec<Result<f64>> = shifts
        .par_iter()
        .map(|&d| f(delta0 - d))
        .collect();
    let mut acc = 0.0;
    for (k, v) in values.into_iter().enumerate() {
        let v = v?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite observable at quadrature node {k} (delta = {})",
                delta0 - shifts[k]
            )));
        }
        acc += weights[k] * v;
    }
    Ok(acc)
}

/// Shift positions and weights of the configured rule, with the Maxwellian
/// weight folded in. Exposed for diagnostics and tests.
pub fn doppler_rule(spec: &DopplerSpec, delta0: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = spec.width;
    match spec.inner_scale {
        None => {
            let rule = cached_rule(0, spec.nodes)?;
            let shifts = rule.0.iter().map(|&t| w * t).collect();
            let weights = rule.1.iter().map(|&v| v / PI.sqrt()).collect();
            Ok((shifts, weights))
        }
        Some(inner) => {
            if !(inner > 0.0) || !inner.is_finite() {
                return Err(Error::Domain(format!(
                    "inner scale {inner} must be positive"
                )));
            }
            let rule = cached_rule(1, spec.nodes)?;
            let s = (inner.min(w) * w).sqrt();
            let span = 6.0 * w + delta0.abs();
            let theta_max = (span / s).atan();
            let norm = 1.0 / (w * PI.sqrt());
            let mut shifts = Vec::with_capacity(spec.nodes);
            let mut weights = Vec::with_capacity(spec.nodes);
            for (&t, &v) in rule.0.iter().zip(rule.1.iter()) {
                let theta = theta_max * t;
                let d = s * theta.tan();
                let jac = theta_max * s / theta.cos().powi(2);
                shifts.push(d);
                weights.push(v * jac * (-(d / w).powi(2)).exp() * norm);
            }
            // partition of unity: the mapped rule must integrate the
            // Maxwellian weight itself exactly
            let total: f64 = weights.iter().sum();
            for wt in &mut weights {
                *wt /= total;
            }
            Ok((shifts, weights))
        }
    }
}
