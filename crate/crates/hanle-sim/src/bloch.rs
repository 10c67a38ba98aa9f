//! Stationary generalized optical Bloch equations for one velocity group,
//! one magnetic field value and one polarization, plus the per-atom
//! absorption observable.
//!
//! Working in the rotating basis with the field along the wave vector, the
//! stationary density matrix satisfies
//!
//! ```text
//! (gamma_eg - i delta) rho_eg = -iR (V rho_g - rho_e V)
//!                               - i (Oe Fe rho_eg - Og rho_eg Fg)
//! (Gamma + gamma_r) rho_e     = -iR (V rho_ge - rho_eg V+) - i Oe [Fe, rho_e]
//! Gamma (rho_g - rho_g0)      = feed(rho_e) - iR (V+ rho_eg - rho_ge V)
//!                               - i Og [Fg, rho_g]
//! ```
//!
//! with `rho_ge = rho_eg+`, isotropic source `rho_g0 = 1/(2F_g+1)`, and the
//! spontaneous repopulation operator `feed` built from Clebsch-Gordan
//! coefficients (closed transition: all decay returns to the ground level).
//! All rates are in units of `gamma_eg = 1`.
//!
//! Since `Fe`, `Fg` are diagonal, the first equation is inverted elementwise,
//! `rho_eg[a,b] = -iR K[a,b] (V rho_g - rho_e V)[a,b]` with
//! `K[a,b] = 1 / (gamma_eg - i(delta - Oe m_a + Og m_b))`, and the remaining
//! dense linear system is solved for the `(rho_g, rho_e)` elements. The drive
//! carries only q = +/-1 components and every other generator is diagonal in
//! the coherence order `m - m'`, so elements with odd `m - m'` decouple from
//! the isotropic source and vanish identically in the steady state; the
//! production solver only carries the even-order unknowns. The full-size
//! reference solver [`solve_steady_full`] keeps every element of all four
//! blocks and serves as the cross-check oracle.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;

use crate::angular::{
    build_dipole_operator, build_fz, cg_coefficient, check_dipole_allowed, HalfInt, Polarization,
    Spin,
};
use crate::{Error, Result};

pub type C64 = Complex<f64>;

/// Optical-coherence relaxation rate, the unit of the rate scale.
pub const GAMMA_EG: f64 = 1.0;

/// Bohr magneton over Planck constant, MHz per gauss.
pub const BOHR_MHZ_PER_GAUSS: f64 = 1.399_624_493_6;

/// Transition definition: angular momenta, Lande factors and relaxation
/// constants (in units of `gamma_eg`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomSpec {
    pub f_g: Spin,
    pub f_e: Spin,
    pub g_g: f64,
    pub g_e: f64,
    /// Radiative decay rate of the excited level.
    pub gamma_r: f64,
    /// In-flight relaxation rate; must be positive for a unique steady state.
    pub big_gamma: f64,
}

impl AtomSpec {
    pub fn new(
        f_g: Spin,
        f_e: Spin,
        g_g: f64,
        g_e: f64,
        gamma_r: f64,
        big_gamma: f64,
    ) -> Result<Self> {
        check_dipole_allowed(f_g, f_e)?;
        if !(big_gamma > 0.0) {
            return Err(Error::Domain(format!(
                "in-flight relaxation {big_gamma} must be > 0 (dark states make \
                 the steady state non-unique otherwise)"
            )));
        }
        if !(gamma_r >= 0.0) {
            return Err(Error::Domain(format!("gamma_r {gamma_r} must be >= 0")));
        }
        Ok(AtomSpec {
            f_g,
            f_e,
            g_g,
            g_e,
            gamma_r,
            big_gamma,
        })
    }

    /// |gamma_r/2 + Gamma - gamma_eg|: how far the rate set is from the
    /// optical-coherence consistency relation. Reported as a warning by the
    /// CLI when large, never enforced.
    pub fn rate_consistency_residual(&self) -> f64 {
        (self.gamma_r / 2.0 + self.big_gamma - GAMMA_EG).abs()
    }

    pub fn n_g(&self) -> usize {
        self.f_g.multiplicity()
    }

    pub fn n_e(&self) -> usize {
        self.f_e.multiplicity()
    }
}

/// Drive definition: Rabi frequency, polarization and base detuning
/// (`omega - omega_0`), all rates in `gamma_eg` units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldParams {
    pub rabi: f64,
    pub pol: Polarization,
    pub delta0: f64,
}

impl FieldParams {
    pub fn new(rabi: f64, pol: Polarization, delta0: f64) -> Result<Self> {
        if !(rabi >= 0.0) || !rabi.is_finite() {
            return Err(Error::Domain(format!("rabi frequency {rabi} must be >= 0")));
        }
        Ok(FieldParams { rabi, pol, delta0 })
    }
}

/// Zeeman splitting rates of the two levels for a single physical field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeemanParams {
    pub omega_g: f64,
    pub omega_e: f64,
}

impl ZeemanParams {
    pub fn zero() -> Self {
        ZeemanParams {
            omega_g: 0.0,
            omega_e: 0.0,
        }
    }

    /// Both splittings from the ground one via the Lande-factor ratio.
    pub fn from_omega_g(omega_g: f64, atom: &AtomSpec) -> Result<Self> {
        if atom.g_g == 0.0 {
            return Err(Error::Domain(
                "cannot scan by ground Zeeman rate with g_g = 0".into(),
            ));
        }
        Ok(ZeemanParams {
            omega_g,
            omega_e: omega_g * atom.g_e / atom.g_g,
        })
    }
}

/// Zeeman rates for a field of `b_gauss` gauss, with `unit_scale_mhz` the
/// value of `gamma_eg` expressed in MHz (ordinary frequency): for the 87Rb
/// ground state (g = 1/2) this reproduces the 0.7 MHz/G sublevel splitting.
pub fn zeeman_from_field(b_gauss: f64, atom: &AtomSpec, unit_scale_mhz: f64) -> Result<ZeemanParams> {
    if !(unit_scale_mhz > 0.0) {
        return Err(Error::Domain(format!(
            "unit scale {unit_scale_mhz} MHz must be > 0"
        )));
    }
    let per_g = BOHR_MHZ_PER_GAUSS * b_gauss / unit_scale_mhz;
    Ok(ZeemanParams {
        omega_g: atom.g_g * per_g,
        omega_e: atom.g_e * per_g,
    })
}

/// Steady-state density matrix blocks for one solve: ground and excited
/// Zeeman blocks plus the optical coherence block (rotating basis).
#[derive(Debug, Clone)]
pub struct DensityMatrixBlocks {
    pub rho_g: DMatrix<C64>,
    pub rho_e: DMatrix<C64>,
    pub rho_eg: DMatrix<C64>,
}

impl DensityMatrixBlocks {
    /// Tr rho_g + Tr rho_e (real part); equals 1 in any steady state.
    pub fn trace_sum(&self) -> f64 {
        (self.rho_g.trace() + self.rho_e.trace()).re
    }

    /// Max-norm Hermiticity residual over the ground and excited blocks.
    pub fn hermiticity_residual(&self) -> f64 {
        let r = |m: &DMatrix<C64>| {
            let mut worst: f64 = 0.0;
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
                }
            }
            worst
        };
        r(&self.rho_g).max(r(&self.rho_e))
    }

    /// Smallest diagonal population over both blocks.
    pub fn min_population(&self) -> f64 {
        self.rho_g
            .diagonal()
            .iter()
            .chain(self.rho_e.diagonal().iter())
            .map(|z| z.re)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Spontaneous repopulation of the ground level,
/// `feed[m, m'] = gamma_r sum_q C(m,q) C(m',q) rho_e[m+q, m'+q]`
/// with `C(m,q) = <F_g m; 1 q | F_e m+q>`. Trace-preserving on closed
/// transitions: `Tr feed = gamma_r Tr rho_e`.
pub fn spontaneous_feed(rho_e: &DMatrix<C64>, atom: &AtomSpec) -> Result<DMatrix<C64>> {
    let table = decay_table(atom)?;
    let n_g = atom.n_g();
    let n_e = atom.n_e();
    if rho_e.nrows() != n_e || rho_e.ncols() != n_e {
        return Err(Error::Domain(format!(
            "excited block is {}x{}, expected {n_e}x{n_e}",
            rho_e.nrows(),
            rho_e.ncols()
        )));
    }
    let d = excited_offset(atom);
    let mut out = DMatrix::zeros(n_g, n_g);
    for i in 0..n_g {
        for j in 0..n_g {
            let mut acc = C64::new(0.0, 0.0);
            for (qi, q) in [-1i32, 0, 1].into_iter().enumerate() {
                let (a, b) = (i as i32 + q + d, j as i32 + q + d);
                if a >= 0 && b >= 0 && (a as usize) < n_e && (b as usize) < n_e {
                    acc += table[i][qi] * table[j][qi] * rho_e[(a as usize, b as usize)];
                }
            }
            out[(i, j)] = atom.gamma_r * acc;
        }
    }
    Ok(out)
}

/// Sublevel-index offset between the excited and ground ascending-m
/// orderings: the excited index of `m_g + q` is `i + q + offset`.
fn excited_offset(atom: &AtomSpec) -> i32 {
    (atom.f_e.twice() as i32 - atom.f_g.twice() as i32) / 2
}

/// `table[i][qi] = <F_g m_i; 1 q | F_e m_i+q>` for q = -1, 0, +1.
fn decay_table(atom: &AtomSpec) -> Result<Vec<[f64; 3]>> {
    let one = Spin::from_int(1);
    let mut table = vec![[0.0; 3]; atom.n_g()];
    for (i, m_g) in atom.f_g.m_values().enumerate() {
        for (qi, q) in [-1i32, 0, 1].into_iter().enumerate() {
            let m_e = HalfInt::from_twice(m_g.twice() + 2 * q);
            if m_e.twice().abs() <= atom.f_e.twice() as i32 {
                table[i][qi] =
                    cg_coefficient(atom.f_g, m_g, one, HalfInt::from_int(q), atom.f_e, m_e)?;
            }
        }
    }
    Ok(table)
}

/// Precomputed assembly data for repeated steady-state solves over a grid of
/// detunings and Zeeman rates at fixed atom and field. Pure per solve; safe
/// to share across threads.
pub struct SteadyStateProblem {
    atom: AtomSpec,
    rabi: f64,
    dipole: DMatrix<f64>,
    decay: Vec<[f64; 3]>,
    m_g: Vec<f64>,
    m_e: Vec<f64>,
    /// Even-coherence-order unknowns: (i, j) ground pairs then (a, b) excited
    /// pairs, with column lookup tables.
    active_g: Vec<(usize, usize)>,
    active_e: Vec<(usize, usize)>,
    col_g: Vec<Option<usize>>,
    col_e: Vec<Option<usize>>,
}

impl SteadyStateProblem {
    pub fn new(atom: &AtomSpec, field: &FieldParams) -> Result<Self> {
        let dipole = build_dipole_operator(atom.f_g, atom.f_e, &field.pol)?;
        let decay = decay_table(atom)?;
        let (n_g, n_e) = (atom.n_g(), atom.n_e());
        let m_g: Vec<f64> = atom.f_g.m_values().map(|m| m.value()).collect();
        let m_e: Vec<f64> = atom.f_e.m_values().map(|m| m.value()).collect();

        let mut active_g = Vec::new();
        let mut col_g = vec![None; n_g * n_g];
        for i in 0..n_g {
            for j in 0..n_g {
                if (i + j) % 2 == 0 {
                    col_g[i * n_g + j] = Some(active_g.len());
                    active_g.push((i, j));
                }
            }
        }
        let mut active_e = Vec::new();
        let mut col_e = vec![None; n_e * n_e];
        for a in 0..n_e {
            for b in 0..n_e {
                if (a + b) % 2 == 0 {
                    col_e[a * n_e + b] = Some(active_g.len() + active_e.len());
                    active_e.push((a, b));
                }
            }
        }

        Ok(SteadyStateProblem {
            atom: *atom,
            rabi: field.rabi,
            dipole,
            decay,
            m_g,
            m_e,
            active_g,
            active_e,
            col_g,
            col_e,
        })
    }

    pub fn atom(&self) -> &AtomSpec {
        &self.atom
    }

    /// Elementwise resolvent of the optical-coherence equation,
    /// `K[a,b] = 1 / (gamma_eg - i(delta - Oe m_a + Og m_b))`.
    fn coherence_kernel(&self, delta: f64, zeeman: &ZeemanParams) -> DMatrix<C64> {
        let (n_g, n_e) = (self.atom.n_g(), self.atom.n_e());
        DMatrix::from_fn(n_e, n_g, |a, b| {
            let det = delta - zeeman.omega_e * self.m_e[a] + zeeman.omega_g * self.m_g[b];
            C64::new(1.0, 0.0) / C64::new(GAMMA_EG, -det)
        })
    }

    /// Solve the stationary system for one detuning and Zeeman pair.
    pub fn solve(&self, delta: f64, zeeman: &ZeemanParams) -> Result<DensityMatrixBlocks> {
        let (n_g, n_e) = (self.atom.n_g(), self.atom.n_e());
        let n = self.active_g.len() + self.active_e.len();
        let gamma = self.atom.big_gamma;
        let gamma_r = self.atom.gamma_r;
        let r2 = self.rabi * self.rabi;
        let v = &self.dipole;
        let k = self.coherence_kernel(delta, zeeman);
        let off = excited_offset(&self.atom);

        let mut m = DMatrix::<C64>::zeros(n, n);
        let mut rhs = DVector::<C64>::zeros(n);

        let col_g = |i: usize, j: usize| self.col_g[i * n_g + j];
        let col_e = |a: usize, b: usize| self.col_e[a * n_e + b];

        // ground-block rows: Gamma rho_g + i Og [Fg, rho_g] - feed(rho_e)
        //   + iR (V^T rho_eg - rho_ge V) = Gamma/n_g * I
        for (row, &(i, j)) in self.active_g.iter().enumerate() {
            m[(row, col_g(i, j).unwrap())] +=
                C64::new(gamma, zeeman.omega_g * (self.m_g[i] - self.m_g[j]));

            for c in 0..n_g {
                if col_g(c, j).is_some() {
                    let mut acc = C64::new(0.0, 0.0);
                    for a in 0..n_e {
                        let w = v[(a, i)] * v[(a, c)];
                        if w != 0.0 {
                            acc += w * k[(a, j)];
                        }
                    }
                    if acc != C64::new(0.0, 0.0) {
                        m[(row, col_g(c, j).unwrap())] += r2 * acc;
                    }
                }
                if col_g(i, c).is_some() {
                    let mut acc = C64::new(0.0, 0.0);
                    for a in 0..n_e {
                        let w = v[(a, j)] * v[(a, c)];
                        if w != 0.0 {
                            acc += w * k[(a, i)].conj();
                        }
                    }
                    if acc != C64::new(0.0, 0.0) {
                        m[(row, col_g(i, c).unwrap())] += r2 * acc;
                    }
                }
            }

            for a in 0..n_e {
                if v[(a, i)] == 0.0 {
                    continue;
                }
                for c in 0..n_e {
                    if v[(c, j)] == 0.0 {
                        continue;
                    }
                    // -R^2 V[a,i] V[c,j] (K[a,j] + conj(K[c,i])) rho_e[a,c]
                    if let Some(col) = col_e(a, c) {
                        m[(row, col)] -=
                            r2 * v[(a, i)] * v[(c, j)] * (k[(a, j)] + k[(c, i)].conj());
                    }
                }
            }

            for (qi, q) in [-1i32, 0, 1].into_iter().enumerate() {
                let (a, b) = (i as i32 + q + off, j as i32 + q + off);
                if a >= 0 && b >= 0 && (a as usize) < n_e && (b as usize) < n_e {
                    let w = self.decay[i][qi] * self.decay[j][qi];
                    if w != 0.0 {
                        let col = col_e(a as usize, b as usize).unwrap();
                        m[(row, col)] -= C64::new(gamma_r * w, 0.0);
                    }
                }
            }

            if i == j {
                rhs[row] = C64::new(gamma / n_g as f64, 0.0);
            }
        }

        // excited-block rows: (Gamma + gamma_r) rho_e + i Oe [Fe, rho_e]
        //   + iR (V rho_ge - rho_eg V^T) = 0
        let base = self.active_g.len();
        for (r, &(a, ap)) in self.active_e.iter().enumerate() {
            let row = base + r;
            m[(row, col_e(a, ap).unwrap())] += C64::new(
                gamma + gamma_r,
                zeeman.omega_e * (self.m_e[a] - self.m_e[ap]),
            );

            for b in 0..n_g {
                if v[(a, b)] != 0.0 {
                    for c in 0..n_g {
                        if v[(ap, c)] == 0.0 {
                            continue;
                        }
                        if let Some(col) = col_g(b, c) {
                            // -R^2 V[a,b] conj(K[ap,b]) V[ap,c] rho_g[b,c]
                            m[(row, col)] -= r2 * v[(a, b)] * v[(ap, c)] * k[(ap, b)].conj();
                        }
                    }
                }
            }
            for p in 0..n_g {
                if v[(a, p)] == 0.0 {
                    continue;
                }
                for q in 0..n_g {
                    if v[(ap, q)] == 0.0 {
                        continue;
                    }
                    if let Some(col) = col_g(p, q) {
                        // -R^2 K[a,q] V[ap,q] V[a,p] rho_g[p,q]
                        m[(row, col)] -= r2 * v[(a, p)] * v[(ap, q)] * k[(a, q)];
                    }
                }
            }
            for c in 0..n_e {
                if let Some(col) = col_e(c, ap) {
                    let mut acc = C64::new(0.0, 0.0);
                    for b in 0..n_g {
                        let w = v[(a, b)] * v[(c, b)];
                        if w != 0.0 {
                            acc += w * k[(ap, b)].conj();
                        }
                    }
                    if acc != C64::new(0.0, 0.0) {
                        m[(row, col)] += r2 * acc;
                    }
                }
                if let Some(col) = col_e(a, c) {
                    let mut acc = C64::new(0.0, 0.0);
                    for b in 0..n_g {
                        let w = v[(ap, b)] * v[(c, b)];
                        if w != 0.0 {
                            acc += w * k[(a, b)];
                        }
                    }
                    if acc != C64::new(0.0, 0.0) {
                        m[(row, col)] += r2 * acc;
                    }
                }
            }
        }

        let lu = m.lu();
        let x = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric("singular stationary system".into()))?;
        if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric(
                "non-finite steady-state solution".into(),
            ));
        }

        let mut rho_g = DMatrix::<C64>::zeros(n_g, n_g);
        for (idx, &(i, j)) in self.active_g.iter().enumerate() {
            rho_g[(i, j)] = x[idx];
        }
        let mut rho_e = DMatrix::<C64>::zeros(n_e, n_e);
        for (idx, &(a, b)) in self.active_e.iter().enumerate() {
            rho_e[(a, b)] = x[base + idx];
        }

        // reconstruct the optical coherence from the eliminated equation
        let mut rho_eg = DMatrix::<C64>::zeros(n_e, n_g);
        let minus_ir = C64::new(0.0, -self.rabi);
        for a in 0..n_e {
            for b in 0..n_g {
                let mut drive = C64::new(0.0, 0.0);
                for c in 0..n_g {
                    if v[(a, c)] != 0.0 {
                        drive += v[(a, c)] * rho_g[(c, b)];
                    }
                }
                for c in 0..n_e {
                    if v[(c, b)] != 0.0 {
                        drive -= rho_e[(a, c)] * v[(c, b)];
                    }
                }
                rho_eg[(a, b)] = minus_ir * k[(a, b)] * drive;
            }
        }

        Ok(DensityMatrixBlocks {
            rho_g,
            rho_e,
            rho_eg,
        })
    }

    /// Per-atom absorption at one detuning/Zeeman point.
    pub fn absorption_at(&self, delta: f64, zeeman: &ZeemanParams) -> Result<f64> {
        let blocks = self.solve(delta, zeeman)?;
        Ok(absorption(&blocks, &self.atom))
    }
}

/// Solve the stationary system after elementwise elimination of the optical
/// coherence (production path).
pub fn solve_steady(
    atom: &AtomSpec,
    field: &FieldParams,
    delta: f64,
    zeeman: &ZeemanParams,
) -> Result<DensityMatrixBlocks> {
    SteadyStateProblem::new(atom, field)?.solve(delta, zeeman)
}

/// Reference solver: vectorizes all four blocks (rho_g, rho_e, rho_eg,
/// rho_ge) into one unknown vector, builds the full complex Liouvillian
/// including the conjugate coherence equation, and solves the inhomogeneous
/// system driven by `Gamma rho_g0`. Not on the hot path; used as the
/// cross-check oracle for [`solve_steady`].
pub fn solve_steady_full(
    atom: &AtomSpec,
    field: &FieldParams,
    delta: f64,
    zeeman: &ZeemanParams,
) -> Result<DensityMatrixBlocks> {
    let v = build_dipole_operator(atom.f_g, atom.f_e, &field.pol)?;
    let decay = decay_table(atom)?;
    let (n_g, n_e) = (atom.n_g(), atom.n_e());
    let m_g: Vec<f64> = atom.f_g.m_values().map(|m| m.value()).collect();
    let m_e: Vec<f64> = atom.f_e.m_values().map(|m| m.value()).collect();
    let (ngg, nee, neg) = (n_g * n_g, n_e * n_e, n_e * n_g);
    let n = ngg + nee + 2 * neg;
    let (og, oe) = (zeeman.omega_g, zeeman.omega_e);
    let rabi = field.rabi;
    let off = excited_offset(atom);

    let idx_g = |i: usize, j: usize| i * n_g + j;
    let idx_e = |a: usize, b: usize| ngg + a * n_e + b;
    let idx_eg = |a: usize, b: usize| ngg + nee + a * n_g + b;
    let idx_ge = |b: usize, a: usize| ngg + nee + neg + b * n_e + a;

    let mut m = DMatrix::<C64>::zeros(n, n);
    let mut rhs = DVector::<C64>::zeros(n);
    let ir = C64::new(0.0, rabi);

    // rho_g rows
    for i in 0..n_g {
        for j in 0..n_g {
            let row = idx_g(i, j);
            m[(row, row)] += C64::new(atom.big_gamma, og * (m_g[i] - m_g[j]));
            for (qi, q) in [-1i32, 0, 1].into_iter().enumerate() {
                let (a, b) = (i as i32 + q + off, j as i32 + q + off);
                if a >= 0 && b >= 0 && (a as usize) < n_e && (b as usize) < n_e {
                    m[(row, idx_e(a as usize, b as usize))] -=
                        C64::new(atom.gamma_r * decay[i][qi] * decay[j][qi], 0.0);
                }
            }
            for a in 0..n_e {
                if v[(a, i)] != 0.0 {
                    m[(row, idx_eg(a, j))] += ir * v[(a, i)];
                }
                if v[(a, j)] != 0.0 {
                    m[(row, idx_ge(i, a))] -= ir * v[(a, j)];
                }
            }
            if i == j {
                rhs[row] = C64::new(atom.big_gamma / n_g as f64, 0.0);
            }
        }
    }
    // rho_e rows
    for a in 0..n_e {
        for b in 0..n_e {
            let row = idx_e(a, b);
            m[(row, row)] += C64::new(atom.big_gamma + atom.gamma_r, oe * (m_e[a] - m_e[b]));
            for c in 0..n_g {
                if v[(a, c)] != 0.0 {
                    m[(row, idx_ge(c, b))] += ir * v[(a, c)];
                }
                if v[(b, c)] != 0.0 {
                    m[(row, idx_eg(a, c))] -= ir * v[(b, c)];
                }
            }
        }
    }
    // rho_eg rows: (gamma_eg - i delta + i(Oe m_a - Og m_b)) rho_eg
    //   + iR (V rho_g - rho_e V) = 0
    for a in 0..n_e {
        for b in 0..n_g {
            let row = idx_eg(a, b);
            m[(row, row)] += C64::new(GAMMA_EG, -delta + oe * m_e[a] - og * m_g[b]);
            for c in 0..n_g {
                if v[(a, c)] != 0.0 {
                    m[(row, idx_g(c, b))] += ir * v[(a, c)];
                }
            }
            for c in 0..n_e {
                if v[(c, b)] != 0.0 {
                    m[(row, idx_e(a, c))] -= ir * v[(c, b)];
                }
            }
        }
    }
    // rho_ge rows (conjugate equation): (gamma_eg + i delta - i(Oe m_a - Og m_b))
    //   rho_ge - iR (rho_g V^T - V^T rho_e) = 0
    for b in 0..n_g {
        for a in 0..n_e {
            let row = idx_ge(b, a);
            m[(row, row)] += C64::new(GAMMA_EG, delta - oe * m_e[a] + og * m_g[b]);
            for c in 0..n_g {
                if v[(a, c)] != 0.0 {
                    m[(row, idx_g(b, c))] -= ir * v[(a, c)];
                }
            }
            for c in 0..n_e {
                if v[(c, b)] != 0.0 {
                    m[(row, idx_e(c, a))] += ir * v[(c, b)];
                }
            }
        }
    }

    let x = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("singular full stationary system".into()))?;
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numeric("non-finite full steady-state solution".into()));
    }

    let rho_g = DMatrix::from_fn(n_g, n_g, |i, j| x[idx_g(i, j)]);
    let rho_e = DMatrix::from_fn(n_e, n_e, |a, b| x[idx_e(a, b)]);
    let rho_eg = DMatrix::from_fn(n_e, n_g, |a, b| x[idx_eg(a, b)]);
    Ok(DensityMatrixBlocks {
        rho_g,
        rho_e,
        rho_eg,
    })
}

/// Per-atom photon absorption rate in the energy-balance form,
/// `S = (gamma_r + Gamma) Tr rho_e`.
pub fn absorption(blocks: &DensityMatrixBlocks, atom: &AtomSpec) -> f64 {
    (atom.gamma_r + atom.big_gamma) * blocks.rho_e.trace().re
}

/// The same observable through the drive route,
/// `S = -2R Im Tr(rho_eg V+)`; equals [`absorption`] in any steady state
/// (trace of the excited-block equation).
pub fn absorption_via_coherence(
    blocks: &DensityMatrixBlocks,
    atom: &AtomSpec,
    field: &FieldParams,
) -> Result<f64> {
    let v = build_dipole_operator(atom.f_g, atom.f_e, &field.pol)?;
    let mut tr = C64::new(0.0, 0.0);
    for a in 0..atom.n_e() {
        for b in 0..atom.n_g() {
            tr += blocks.rho_eg[(a, b)] * v[(a, b)];
        }
    }
    Ok(-2.0 * field.rabi * tr.im)
}

/// Max-norm residual of the three stationary equations evaluated on `blocks`
/// by direct matrix transcription (independent of either solver's assembly).
pub fn steady_residual(
    blocks: &DensityMatrixBlocks,
    atom: &AtomSpec,
    field: &FieldParams,
    delta: f64,
    zeeman: &ZeemanParams,
) -> Result<f64> {
    let v = build_dipole_operator(atom.f_g, atom.f_e, &field.pol)?.map(|x| C64::new(x, 0.0));
    let fz_g = build_fz(atom.f_g).map(|x| C64::new(x, 0.0));
    let fz_e = build_fz(atom.f_e).map(|x| C64::new(x, 0.0));
    let n_g = atom.n_g();
    let i_unit = C64::new(0.0, 1.0);
    let r = C64::new(field.rabi, 0.0);
    let rho_g = &blocks.rho_g;
    let rho_e = &blocks.rho_e;
    let rho_eg = &blocks.rho_eg;
    let rho_ge = rho_eg.adjoint();
    let vt = v.transpose();

    let res3 = rho_eg * C64::new(GAMMA_EG, -delta)
        + (&v * rho_g - rho_e * &v) * (i_unit * r)
        + (&fz_e * rho_eg * C64::new(zeeman.omega_e, 0.0)
            - rho_eg * &fz_g * C64::new(zeeman.omega_g, 0.0))
            * i_unit;

    let res4 = rho_e * C64::new(atom.big_gamma + atom.gamma_r, 0.0)
        + (&v * &rho_ge - rho_eg * &vt) * (i_unit * r)
        + (&fz_e * rho_e - rho_e * &fz_e) * (i_unit * C64::new(zeeman.omega_e, 0.0));

    let feed = spontaneous_feed(rho_e, atom)?;
    let mut source = DMatrix::<C64>::zeros(n_g, n_g);
    for i in 0..n_g {
        source[(i, i)] = C64::new(atom.big_gamma / n_g as f64, 0.0);
    }
    let res5 = rho_g * C64::new(atom.big_gamma, 0.0) - source - feed
        + (&vt * rho_eg - &rho_ge * &v) * (i_unit * r)
        + (&fz_g * rho_g - rho_g * &fz_g) * (i_unit * C64::new(zeeman.omega_g, 0.0));

    let max_abs = |m: &DMatrix<C64>| m.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    Ok(max_abs(&res3).max(max_abs(&res4)).max(max_abs(&res5)))
}

/// Absorption over a grid of (delta, zeeman) work items, evaluated in
/// parallel with a deterministic output order.
pub fn absorption_grid(
    problem: &SteadyStateProblem,
    points: &[(f64, ZeemanParams)],
) -> Vec<Result<f64>> {
    points
        .par_iter()
        .map(|(delta, z)| problem.absorption_at(*delta, z))
        .collect()
}
