//! Angular-momentum algebra: Clebsch-Gordan coefficients (Condon-Shortley
//! convention), cyclic polarization components of an elliptically polarized
//! wave, and the dipole / F_z operators entering the Bloch equations.
//!
//! Sublevels are ordered by ascending magnetic quantum number everywhere in
//! this crate: index `i` of a level with spin `F` carries `m = -F + i`.

use nalgebra::DMatrix;
use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::{Signed, ToPrimitive, Zero};
use std::f64::consts::FRAC_PI_4;

use crate::{Error, Result};

/// Total angular momentum stored as `2F` so half-integer spins stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Spin {
    twice: u32,
}

impl Spin {
    pub fn from_twice(twice: u32) -> Self {
        Spin { twice }
    }

    /// Integer spin F (so `Spin::from_int(2)` is F = 2).
    pub fn from_int(f: u32) -> Self {
        Spin { twice: 2 * f }
    }

    pub fn twice(self) -> u32 {
        self.twice
    }

    pub fn value(self) -> f64 {
        f64::from(self.twice) / 2.0
    }

    /// Number of magnetic sublevels, 2F + 1.
    pub fn multiplicity(self) -> usize {
        self.twice as usize + 1
    }

    /// Sublevel projections m = -F..F in ascending order.
    pub fn m_values(self) -> impl Iterator<Item = HalfInt> {
        let tf = self.twice as i32;
        (0..=tf).map(move |k| HalfInt::from_twice(-tf + 2 * k))
    }

    /// m for the sublevel at `index` in the ascending ordering.
    pub fn m_at(self, index: usize) -> HalfInt {
        HalfInt::from_twice(-(self.twice as i32) + 2 * index as i32)
    }
}

/// Magnetic quantum number stored as `2m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HalfInt {
    twice: i32,
}

impl HalfInt {
    pub fn from_twice(twice: i32) -> Self {
        HalfInt { twice }
    }

    pub fn from_int(m: i32) -> Self {
        HalfInt { twice: 2 * m }
    }

    pub fn twice(self) -> i32 {
        self.twice
    }

    pub fn value(self) -> f64 {
        f64::from(self.twice) / 2.0
    }
}

fn factorial(n: i32) -> BigInt {
    debug_assert!(n >= 0);
    let mut acc = BigInt::from(1);
    for k in 2..=n {
        acc *= k;
    }
    acc
}

/// Factorial of a twice-integer that must be an even non-negative number.
fn fact2(twice: i32) -> BigInt {
    debug_assert!(twice >= 0 && twice % 2 == 0, "fact2({twice})");
    factorial(twice / 2)
}

/// Clebsch-Gordan coefficient `<f1 m1; f2 m2 | F M>` in the Condon-Shortley
/// convention, evaluated from the Racah closed form with exact integer
/// factorial arithmetic, promoted to floating point only at the end.
///
/// Returns 0 when `M != m1 + m2` or the triangle condition fails; invalid
/// quantum numbers (|m| > f, parity mismatch between 2m and 2f) are domain
/// errors.
pub fn cg_coefficient(
    f1: Spin,
    m1: HalfInt,
    f2: Spin,
    m2: HalfInt,
    f: Spin,
    m: HalfInt,
) -> Result<f64> {
    let (tj1, tm1) = (f1.twice() as i32, m1.twice());
    let (tj2, tm2) = (f2.twice() as i32, m2.twice());
    let (tj3, tm3) = (f.twice() as i32, m.twice());

    for (tj, tm) in [(tj1, tm1), (tj2, tm2), (tj3, tm3)] {
        if tm.abs() > tj {
            return Err(Error::Domain(format!(
                "projection out of range: 2m = {tm} for 2f = {tj}"
            )));
        }
        if (tj + tm) % 2 != 0 {
            return Err(Error::Domain(format!(
                "parity mismatch: 2m = {tm} incompatible with 2f = {tj}"
            )));
        }
    }

    if tm1 + tm2 != tm3 {
        return Ok(0.0);
    }
    if tj3 < (tj1 - tj2).abs() || tj3 > tj1 + tj2 || (tj1 + tj2 + tj3) % 2 != 0 {
        return Ok(0.0);
    }

    // prefactor^2 = (2F+1) * triangle(f1,f2,F) * prod (f +/- m)!
    let numer = BigInt::from(tj3 + 1)
        * fact2(tj1 + tj2 - tj3)
        * fact2(tj1 - tj2 + tj3)
        * fact2(-tj1 + tj2 + tj3)
        * fact2(tj1 + tm1)
        * fact2(tj1 - tm1)
        * fact2(tj2 + tm2)
        * fact2(tj2 - tm2)
        * fact2(tj3 + tm3)
        * fact2(tj3 - tm3);
    let denom = fact2(tj1 + tj2 + tj3 + 2);
    let pref = BigRational::new(numer, denom);

    let kmin = 0.max((tj2 - tj3 - tm1) / 2).max((tj1 - tj3 + tm2) / 2);
    let kmax = ((tj1 + tj2 - tj3) / 2)
        .min((tj1 - tm1) / 2)
        .min((tj2 + tm2) / 2);

    let mut sum = BigRational::zero();
    for k in kmin..=kmax {
        let d = factorial(k)
            * fact2(tj1 + tj2 - tj3 - 2 * k)
            * fact2(tj1 - tm1 - 2 * k)
            * fact2(tj2 + tm2 - 2 * k)
            * fact2(tj3 - tj2 + tm1 + 2 * k)
            * fact2(tj3 - tj1 - tm2 + 2 * k);
        let sign = if k % 2 == 0 { 1 } else { -1 };
        sum += BigRational::new(BigInt::from(sign), d);
    }

    if sum.is_zero() {
        return Ok(0.0);
    }
    let val = (pref * &sum * &sum)
        .to_f64()
        .ok_or_else(|| Error::Numeric("Clebsch-Gordan value overflowed f64".into()))?;
    let root = val.sqrt();
    Ok(if sum.is_negative() { -root } else { root })
}

/// Elliptical polarization of the driving wave: ellipticity `epsilon`
/// (|tan eps| is the semiaxis ratio, sign the rotation direction) and the
/// cyclic components `e_plus = -cos(eps - pi/4)`, `e_minus = -sin(eps - pi/4)`
/// of the unit polarization vector. There is no q = 0 component because the
/// wave propagates along the quantization axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polarization {
    epsilon: f64,
    e_plus: f64,
    e_minus: f64,
}

impl Polarization {
    /// Build from the ellipticity, restricted to [-pi/4, pi/4].
    pub fn new(epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon.abs() > FRAC_PI_4 + 1e-12 {
            return Err(Error::Domain(format!(
                "ellipticity {epsilon} outside [-pi/4, pi/4]"
            )));
        }
        Ok(Polarization {
            epsilon,
            e_plus: -(epsilon - FRAC_PI_4).cos(),
            e_minus: -(epsilon - FRAC_PI_4).sin(),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Cyclic component e^{+1} (sigma+ amplitude).
    pub fn e_plus(&self) -> f64 {
        self.e_plus
    }

    /// Cyclic component e^{-1} (sigma- amplitude).
    pub fn e_minus(&self) -> f64 {
        self.e_minus
    }

    /// Amplitude of the cyclic component for q = +1/-1.
    pub fn component(&self, q: i32) -> f64 {
        match q {
            1 => self.e_plus,
            -1 => self.e_minus,
            _ => 0.0,
        }
    }
}

/// Check that `f_g -> f_e` is an electric-dipole-allowed transition.
pub fn check_dipole_allowed(f_g: Spin, f_e: Spin) -> Result<()> {
    let d = f_e.twice() as i32 - f_g.twice() as i32;
    if d.abs() > 2 || d % 2 != 0 {
        return Err(Error::Domain(format!(
            "dipole-forbidden transition F_g = {} -> F_e = {}",
            f_g.value(),
            f_e.value()
        )));
    }
    if f_g.twice() == 0 && f_e.twice() == 0 {
        return Err(Error::Domain(
            "dipole-forbidden transition F = 0 -> F = 0".into(),
        ));
    }
    Ok(())
}

/// Dipole operator of the driven transition in the cyclic basis,
///
/// `V[m_e, m_g] = sum_{q = +/-1} C^{F_e m_e}_{F_g m_g; 1 q} e^q`,
///
/// as a real (2F_e+1) x (2F_g+1) matrix over ascending-m sublevel indices.
/// Entries vanish unless `m_e - m_g = +/-1`.
pub fn build_dipole_operator(f_g: Spin, f_e: Spin, pol: &Polarization) -> Result<DMatrix<f64>> {
    check_dipole_allowed(f_g, f_e)?;
    let (n_g, n_e) = (f_g.multiplicity(), f_e.multiplicity());
    let one = Spin::from_int(1);
    let mut v = DMatrix::zeros(n_e, n_g);
    for (a, m_e) in f_e.m_values().enumerate() {
        for (b, m_g) in f_g.m_values().enumerate() {
            let dq = m_e.twice() - m_g.twice();
            if dq == 2 || dq == -2 {
                let q = HalfInt::from_twice(dq);
                let c = cg_coefficient(f_g, m_g, one, q, f_e, m_e)?;
                v[(a, b)] = pol.component(dq / 2) * c;
            }
        }
    }
    Ok(v)
}

/// Diagonal matrix of F_z over the ascending-m sublevel ordering,
/// `diag(-F, -F+1, ..., F)`.
pub fn build_fz(f: Spin) -> DMatrix<f64> {
    let n = f.multiplicity();
    DMatrix::from_fn(n, n, |i, j| if i == j { f.m_at(i).value() } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cg(tj1: u32, tm1: i32, tj2: u32, tm2: i32, tj3: u32, tm3: i32) -> f64 {
        cg_coefficient(
            Spin::from_twice(tj1),
            HalfInt::from_twice(tm1),
            Spin::from_twice(tj2),
            HalfInt::from_twice(tm2),
            Spin::from_twice(tj3),
            HalfInt::from_twice(tm3),
        )
        .unwrap()
    }

    #[test]
    fn stretched_state_is_unity() {
        assert_abs_diff_eq!(cg(4, 4, 2, 2, 6, 6), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn antisymmetric_zero() {
        assert_abs_diff_eq!(cg(2, 0, 2, 0, 2, 0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn reference_values() {
        // checked against sympy's clebsch_gordan
        assert_abs_diff_eq!(cg(4, 0, 2, 2, 6, 2), (10.0f64).sqrt() / 5.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cg(4, 0, 2, 0, 6, 0), (15.0f64).sqrt() / 5.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cg(4, -2, 2, 2, 6, 0), (5.0f64).sqrt() / 5.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cg(4, 2, 2, -2, 2, 0), (30.0f64).sqrt() / 10.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cg(6, 4, 2, 2, 8, 6), (3.0f64).sqrt() / 2.0, epsilon = 1e-14);
        // half-integer spins
        assert_abs_diff_eq!(cg(1, 1, 1, -1, 2, 0), 0.5f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(cg(1, -1, 1, 1, 0, 0), -(0.5f64.sqrt()), epsilon = 1e-14);
    }

    #[test]
    fn selection_rules_give_zero() {
        assert_eq!(cg(4, 2, 2, 2, 6, 2), 0.0); // M != m1 + m2
        assert_eq!(cg(2, 0, 2, 0, 8, 0), 0.0); // triangle violated
    }

    #[test]
    fn invalid_quantum_numbers_error() {
        let r = cg_coefficient(
            Spin::from_twice(2),
            HalfInt::from_twice(4),
            Spin::from_twice(2),
            HalfInt::from_twice(0),
            Spin::from_twice(4),
            HalfInt::from_twice(4),
        );
        assert!(matches!(r, Err(Error::Domain(_))));
        // 2m odd with 2f even
        let r = cg_coefficient(
            Spin::from_twice(2),
            HalfInt::from_twice(1),
            Spin::from_twice(2),
            HalfInt::from_twice(0),
            Spin::from_twice(4),
            HalfInt::from_twice(1),
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn orthogonality_up_to_f4() {
        // sum_{m1,m2} <f1 m1; f2 m2|F M><f1 m1; f2 m2|F' M'> = dFF' dMM'
        for tf1 in [1u32, 2, 3, 4, 6, 8] {
            for tf2 in [1u32, 2, 4] {
                let f1 = Spin::from_twice(tf1);
                let f2 = Spin::from_twice(tf2);
                let tmin = (tf1 as i32 - tf2 as i32).unsigned_abs();
                for tf in (tmin..=tf1 + tf2).step_by(2) {
                    for tfp in (tmin..=tf1 + tf2).step_by(2) {
                        let f = Spin::from_twice(tf);
                        let fp = Spin::from_twice(tfp);
                        for m in f.m_values() {
                            for mp in fp.m_values() {
                                let mut acc = 0.0;
                                for m1 in f1.m_values() {
                                    for m2 in f2.m_values() {
                                        acc += cg_coefficient(f1, m1, f2, m2, f, m).unwrap()
                                            * cg_coefficient(f1, m1, f2, m2, fp, mp).unwrap();
                                    }
                                }
                                let expect =
                                    if tf == tfp && m.twice() == mp.twice() { 1.0 } else { 0.0 };
                                assert_abs_diff_eq!(acc, expect, epsilon = 1e-13);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn completeness_per_excited_sublevel() {
        // sum_{q, m_g} <F_g m_g; 1 q|F_e m_e>^2 = 1 for every m_e
        let one = Spin::from_int(1);
        for (tg, te) in [(4u32, 6u32), (4, 4), (4, 2), (2, 0), (6, 8), (1, 3)] {
            let fg = Spin::from_twice(tg);
            let fe = Spin::from_twice(te);
            for m_e in fe.m_values() {
                let mut acc = 0.0;
                for q in [-2i32, 0, 2] {
                    let mg = HalfInt::from_twice(m_e.twice() - q);
                    if mg.twice().abs() <= tg as i32 {
                        let c =
                            cg_coefficient(fg, mg, one, HalfInt::from_twice(q), fe, m_e).unwrap();
                        acc += c * c;
                    }
                }
                assert_abs_diff_eq!(acc, 1.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn polarization_endpoints() {
        let lin = Polarization::new(0.0).unwrap();
        assert_abs_diff_eq!(lin.e_plus(), -(0.5f64.sqrt()), epsilon = 1e-15);
        assert_abs_diff_eq!(lin.e_minus(), 0.5f64.sqrt(), epsilon = 1e-15);
        let sp = Polarization::new(FRAC_PI_4).unwrap();
        assert_abs_diff_eq!(sp.e_plus(), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sp.e_minus(), 0.0, epsilon = 1e-15);
        let sm = Polarization::new(-FRAC_PI_4).unwrap();
        assert_abs_diff_eq!(sm.e_plus(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sm.e_minus(), 1.0, epsilon = 1e-15);
        assert!(Polarization::new(0.9).is_err());
    }

    #[test]
    fn dipole_operator_selection_structure() {
        let fg = Spin::from_int(2);
        let fe = Spin::from_int(3);
        let pol = Polarization::new(0.2).unwrap();
        let v = build_dipole_operator(fg, fe, &pol).unwrap();
        for a in 0..fe.multiplicity() {
            for b in 0..fg.multiplicity() {
                let dm = fe.m_at(a).twice() - fg.m_at(b).twice();
                if dm.abs() != 2 {
                    assert_eq!(v[(a, b)], 0.0, "V[{a},{b}] must vanish for |dm| != 1");
                }
            }
        }
    }

    #[test]
    fn dipole_operator_circular_limits() {
        let fg = Spin::from_int(2);
        let fe = Spin::from_int(3);
        // pure sigma+: only q = +1 entries, stretched CG = 1 so V[6,4] = -1
        let v = build_dipole_operator(fg, fe, &Polarization::new(FRAC_PI_4).unwrap()).unwrap();
        assert_abs_diff_eq!(v[(6, 4)], -1.0, epsilon = 1e-14);
        for a in 0..7 {
            for b in 0..5 {
                if fe.m_at(a).twice() - fg.m_at(b).twice() == -2 {
                    assert_abs_diff_eq!(v[(a, b)], 0.0, epsilon = 1e-15);
                }
            }
        }
        // pure sigma-: only q = -1 entries
        let v = build_dipole_operator(fg, fe, &Polarization::new(-FRAC_PI_4).unwrap()).unwrap();
        for a in 0..7 {
            for b in 0..5 {
                if fe.m_at(a).twice() - fg.m_at(b).twice() == 2 {
                    assert_abs_diff_eq!(v[(a, b)], 0.0, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn dipole_operator_linear_factors() {
        let fg = Spin::from_int(2);
        let fe = Spin::from_int(3);
        let one = Spin::from_int(1);
        let v = build_dipole_operator(fg, fe, &Polarization::new(0.0).unwrap()).unwrap();
        let s = 0.5f64.sqrt();
        for (a, m_e) in fe.m_values().enumerate() {
            for (b, m_g) in fg.m_values().enumerate() {
                let dq = m_e.twice() - m_g.twice();
                if dq.abs() == 2 {
                    let c = cg_coefficient(fg, m_g, one, HalfInt::from_twice(dq), fe, m_e).unwrap();
                    let factor = if dq == 2 { -s } else { s };
                    assert_abs_diff_eq!(v[(a, b)], factor * c, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn forbidden_transitions_rejected() {
        let pol = Polarization::new(0.0).unwrap();
        assert!(build_dipole_operator(Spin::from_int(0), Spin::from_int(0), &pol).is_err());
        assert!(build_dipole_operator(Spin::from_int(2), Spin::from_int(4), &pol).is_err());
        assert!(build_dipole_operator(Spin::from_twice(1), Spin::from_twice(4), &pol).is_err());
    }

    #[test]
    fn fz_diagonals() {
        let v: Vec<f64> = build_fz(Spin::from_int(1)).diagonal().iter().copied().collect();
        assert_eq!(v, vec![-1.0, 0.0, 1.0]);
        let v: Vec<f64> = build_fz(Spin::from_int(2)).diagonal().iter().copied().collect();
        assert_eq!(v, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        let v: Vec<f64> = build_fz(Spin::from_twice(1)).diagonal().iter().copied().collect();
        assert_eq!(v, vec![-0.5, 0.5]);
    }

    proptest::proptest! {
        #[test]
        fn polarization_unit_norm(eps in -FRAC_PI_4..FRAC_PI_4) {
            let p = Polarization::new(eps).unwrap();
            let norm = p.e_plus().powi(2) + p.e_minus().powi(2);
            proptest::prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}
