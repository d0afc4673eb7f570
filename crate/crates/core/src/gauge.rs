//! Gauge parameters `(a, b, c, y)`, their action on units `U_z`, the
//! composition law and transitivity of the action.
//!
//! The action of a parameter on the unit labelled `z` is stored as a rate:
//! `C(t)U_z(t) = e^{λt} U_{az+b}(t)`.

use num_complex::Complex64 as C;
use rand::Rng;

use crate::{Error, Result};

const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);
const CLASS_TOL: f64 = 1e-12;

/// Which constraints a parameter is declared to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GaugeClass {
    /// `|a| ≤ 1`, `Re(y) ≥ 0`.
    GeneralContractive,
    /// `|a| = 1`, `ac + b = 0`, `Re(y) = 0`.
    Unitary,
    /// As unitary; the `Re(y) = 0` condition can be relaxed to `Re(y) ≥ 0`.
    Isometric,
    /// `b = c = y = 0`.
    Flow,
}

/// A gauge parameter with its declared class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugeParam {
    pub a: C,
    pub b: C,
    pub c: C,
    pub y: C,
    pub class: GaugeClass,
    /// Accept `Re(y) ≥ 0` for the isometric class.
    pub relax_isometric: bool,
}

/// Result of acting on a unit: new label `az + b` and rate `λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitAction {
    pub new_label: C,
    pub exponent_rate: C,
}

impl GaugeParam {
    pub fn new(a: C, b: C, c: C, y: C, class: GaugeClass) -> Result<Self> {
        let g = Self {
            a,
            b,
            c,
            y,
            class,
            relax_isometric: false,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn identity() -> Self {
        Self {
            a: ONE,
            b: ZERO,
            c: ZERO,
            y: ZERO,
            class: GaugeClass::Unitary,
            relax_isometric: false,
        }
    }

    /// `(a, b, −bā, iy)` with `|a| = 1`.
    pub fn unitary(a: C, b: C, y_imag: f64) -> Result<Self> {
        Self::new(a, b, -b * a.conj(), C::new(0.0, y_imag), GaugeClass::Unitary)
    }

    pub fn flow(a: C) -> Result<Self> {
        Self::new(a, ZERO, ZERO, ZERO, GaugeClass::Flow)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParameter(msg));
        let am = self.a.norm();
        if am > 1.0 + CLASS_TOL {
            return fail(format!("|a| = {am} exceeds 1"));
        }
        match self.class {
            GaugeClass::GeneralContractive => {
                if self.y.re < -CLASS_TOL {
                    return fail(format!("Re(y) = {} is negative", self.y.re));
                }
            }
            GaugeClass::Unitary | GaugeClass::Isometric => {
                if (am - 1.0).abs() > CLASS_TOL {
                    return fail(format!("|a| = {am} must equal 1"));
                }
                if (self.a * self.c + self.b).norm() > CLASS_TOL * (1.0 + self.b.norm()) {
                    return fail("ac + b must vanish".into());
                }
                let relaxed = self.class == GaugeClass::Isometric && self.relax_isometric;
                if relaxed {
                    if self.y.re < -CLASS_TOL {
                        return fail(format!("Re(y) = {} is negative", self.y.re));
                    }
                } else if self.y.re.abs() > CLASS_TOL {
                    return fail(format!("Re(y) = {} must vanish", self.y.re));
                }
            }
            GaugeClass::Flow => {
                if self.b != ZERO || self.c != ZERO || self.y != ZERO {
                    return fail("flow parameters need b = c = y = 0".into());
                }
            }
        }
        Ok(())
    }

    fn on_circle(&self) -> bool {
        (self.a.norm() - 1.0).abs() <= CLASS_TOL
    }

    /// Action on the unit labelled `z`.
    pub fn act(&self, z: C) -> Result<UnitAction> {
        self.validate()?;
        Ok(self.act_unchecked(z))
    }

    fn act_unchecked(&self, z: C) -> UnitAction {
        let new_label = self.a * z + self.b;
        let a2 = self.a.norm_sqr();
        let exponent_rate = if self.class == GaugeClass::Flow {
            C::new(-0.5 * z.norm_sqr() * (1.0 - a2), 0.0)
        } else if self.on_circle() {
            -(self.y + C::new(0.0, (self.a * self.b.conj() * z).im))
        } else {
            let v = -(self.a.conj() * self.b + self.c) / (1.0 - a2);
            -self.y - 0.5 * (v + z).norm_sqr() * (1.0 - a2) + C::new(0.0, (self.c.conj() * z).im)
        };
        UnitAction {
            new_label,
            exponent_rate,
        }
    }

    /// `a → ā`, `b ↔ c`, `y → ȳ`.
    pub fn adjoint(&self) -> Self {
        Self {
            a: self.a.conj(),
            b: self.c,
            c: self.b,
            y: self.y.conj(),
            ..*self
        }
    }

    /// The correction `r` of the composition law.
    pub fn r(&self, other: &Self) -> f64 {
        if self.on_circle() || other.on_circle() {
            return 0.0;
        }
        let (a, b, c) = (self.a, self.b, self.c);
        let (ap, bp, cp) = (other.a, other.b, other.c);
        let a2 = a.norm_sqr();
        let ap2 = ap.norm_sqr();
        let aap = a * ap;
        (ap.conj() * bp + cp).norm_sqr() / (1.0 - ap2) + (bp * (1.0 - a2) - a.conj() * b - c).norm_sqr() / (1.0 - a2)
            - (aap.conj() * (a * bp + b) + ap.conj() * c + cp).norm_sqr() / (1.0 - aap.norm_sqr())
    }

    fn composed_class(&self, other: &Self) -> GaugeClass {
        use GaugeClass::*;
        match (self.class, other.class) {
            (Flow, Flow) => Flow,
            (Unitary, Unitary) => Unitary,
            (Unitary | Isometric, Unitary | Isometric) => Isometric,
            _ => GeneralContractive,
        }
    }

    /// The composition law as printed: parameters of `t ↦ C(t)C′(t)`.
    pub fn compose(&self, other: &Self) -> Self {
        self.compose_with(other, CompositionLaw::Printed)
    }

    /// The composition law with the sign of the `Im(c̄b′)` term reversed,
    /// which agrees with sequential action.
    pub fn compose_consistent(&self, other: &Self) -> Self {
        self.compose_with(other, CompositionLaw::Corrected)
    }

    fn compose_with(&self, other: &Self, law: CompositionLaw) -> Self {
        let im = C::new(0.0, (self.c.conj() * other.b).im);
        let im = match law {
            CompositionLaw::Printed => im,
            CompositionLaw::Corrected => -im,
        };
        Self {
            a: self.a * other.a,
            b: self.a * other.b + self.b,
            c: other.a.conj() * self.c + other.c,
            y: self.y + other.y + im - 0.5 * self.r(other),
            class: self.composed_class(other),
            relax_isometric: self.relax_isometric || other.relax_isometric,
        }
    }

    /// Largest componentwise distance between two parameter tuples.
    pub fn distance(&self, other: &Self) -> f64 {
        [self.a - other.a, self.b - other.b, self.c - other.c, self.y - other.y]
            .iter()
            .map(|d| d.norm())
            .fold(0.0, f64::max)
    }
}

/// Which composition law to test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompositionLaw {
    Printed,
    Corrected,
}

fn compose_by(g: &GaugeParam, gp: &GaugeParam, law: CompositionLaw) -> GaugeParam {
    g.compose_with(gp, law)
}

/// Residuals of the composition law against sequential action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionResidual {
    /// `max |λ(g′, z) + λ(g, a′z + b′) − λ(g∘g′, z)|`.
    pub rate: f64,
    /// `max |a(a′z + b′) + b − (a″z + b″)|`.
    pub label: f64,
}

pub fn action_composition_residual(
    g: &GaugeParam,
    gp: &GaugeParam,
    zs: &[C],
    law: CompositionLaw,
) -> Result<ActionResidual> {
    g.validate()?;
    gp.validate()?;
    let gg = compose_by(g, gp, law);
    let mut rate: f64 = 0.0;
    let mut label: f64 = 0.0;
    for &z in zs {
        let first = gp.act_unchecked(z);
        let second = g.act_unchecked(first.new_label);
        let both = gg.act_unchecked(z);
        rate = rate.max((first.exponent_rate + second.exponent_rate - both.exponent_rate).norm());
        label = label.max((second.new_label - both.new_label).norm());
    }
    Ok(ActionResidual { rate, label })
}

/// A standard complex normal sample.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let th = 2.0 * std::f64::consts::PI * u2;
    C::new(r * th.cos(), r * th.sin()) * std::f64::consts::FRAC_1_SQRT_2
}

fn unit_disk<R: Rng + ?Sized>(rng: &mut R, max_radius: f64) -> C {
    let r = max_radius * rng.gen::<f64>().sqrt();
    C::from_polar(r, rng.gen_range(0.0..2.0 * std::f64::consts::PI))
}

/// A random parameter of the given class.
pub fn random_param<R: Rng + ?Sized>(class: GaugeClass, rng: &mut R) -> GaugeParam {
    let phase = C::from_polar(1.0, rng.gen_range(0.0..2.0 * std::f64::consts::PI));
    let g = match class {
        GaugeClass::GeneralContractive => GaugeParam {
            a: unit_disk(rng, 0.95),
            b: complex_normal(rng),
            c: complex_normal(rng),
            y: C::new(rng.gen_range(0.0..2.0), rng.gen_range(-2.0..2.0)),
            class,
            relax_isometric: false,
        },
        GaugeClass::Unitary | GaugeClass::Isometric => {
            let b = complex_normal(rng);
            GaugeParam {
                a: phase,
                b,
                c: -b * phase.conj(),
                y: C::new(0.0, rng.gen_range(-2.0..2.0)),
                class,
                relax_isometric: false,
            }
        }
        GaugeClass::Flow => GaugeParam {
            a: unit_disk(rng, 1.0),
            b: ZERO,
            c: ZERO,
            y: ZERO,
            class,
            relax_isometric: false,
        },
    };
    debug_assert!(g.validate().is_ok());
    g
}

/// A machine-readable record of a disagreement between the composition law
/// and sequential action.
#[derive(Debug, Clone, PartialEq)]
pub struct FormulaDiscrepancy {
    pub class: GaugeClass,
    pub samples: usize,
    pub max_rate_residual: f64,
    pub max_label_residual: f64,
    /// Largest residual when the `Im(c̄b′)` sign is reversed.
    pub corrected_rate_residual: f64,
    /// The worst sample: `(g, g′, z)` with the two rates that disagree.
    pub reproducer: Reproducer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reproducer {
    pub seed: u64,
    pub g: GaugeParam,
    pub g_prime: GaugeParam,
    pub z: C,
    pub sequential_rate: C,
    pub composed_rate: C,
}

/// Summary of an action-consistency sweep over one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSweep {
    pub class: GaugeClass,
    pub samples: usize,
    pub printed: ActionResidual,
    pub corrected: ActionResidual,
    pub discrepancy: Option<FormulaDiscrepancy>,
}

/// Compares both composition laws with sequential action on random pairs.
/// A discrepancy report is produced when the printed law misses `tol`.
pub fn action_sweep<R: Rng + ?Sized>(
    class: GaugeClass,
    pairs: usize,
    zs_per_pair: usize,
    seed: u64,
    rng: &mut R,
    tol: f64,
) -> Result<ActionSweep> {
    let mut printed = ActionResidual { rate: 0.0, label: 0.0 };
    let mut corrected = ActionResidual { rate: 0.0, label: 0.0 };
    let mut worst: Option<Reproducer> = None;
    let mut worst_rate = -1.0;
    for _ in 0..pairs {
        let g = random_param(class, rng);
        let gp = random_param(class, rng);
        let zs: Vec<C> = (0..zs_per_pair).map(|_| complex_normal(rng) * 2.0).collect();
        let p = action_composition_residual(&g, &gp, &zs, CompositionLaw::Printed)?;
        let c = action_composition_residual(&g, &gp, &zs, CompositionLaw::Corrected)?;
        printed.rate = printed.rate.max(p.rate);
        printed.label = printed.label.max(p.label);
        corrected.rate = corrected.rate.max(c.rate);
        corrected.label = corrected.label.max(c.label);
        if p.rate > worst_rate {
            worst_rate = p.rate;
            let gg = g.compose(&gp);
            let (z, seq, comp) = zs
                .iter()
                .map(|&z| {
                    let f = gp.act_unchecked(z);
                    let s = f.exponent_rate + g.act_unchecked(f.new_label).exponent_rate;
                    (z, s, gg.act_unchecked(z).exponent_rate)
                })
                .max_by(|x, y| (x.1 - x.2).norm().total_cmp(&(y.1 - y.2).norm()))
                .unwrap_or((ZERO, ZERO, ZERO));
            worst = Some(Reproducer {
                seed,
                g,
                g_prime: gp,
                z,
                sequential_rate: seq,
                composed_rate: comp,
            });
        }
    }
    let discrepancy = match worst {
        Some(reproducer) if printed.rate > tol || printed.label > tol => Some(FormulaDiscrepancy {
            class,
            samples: pairs,
            max_rate_residual: printed.rate,
            max_label_residual: printed.label,
            corrected_rate_residual: corrected.rate,
            reproducer,
        }),
        _ => None,
    };
    Ok(ActionSweep {
        class,
        samples: pairs,
        printed,
        corrected,
        discrepancy,
    })
}

/// Largest `distance((g∘g′)∘g″, g∘(g′∘g″))` over random triples.
pub fn associativity_residual<R: Rng + ?Sized>(class: GaugeClass, triples: usize, rng: &mut R) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..triples {
        let g1 = random_param(class, rng);
        let g2 = random_param(class, rng);
        let g3 = random_param(class, rng);
        let l = g1.compose(&g2).compose(&g3);
        let r = g1.compose(&g2.compose(&g3));
        worst = worst.max(l.distance(&r));
    }
    worst
}

/// Smallest `r` over random pairs with `|a|, |a′| < 1`.
pub fn min_r<R: Rng + ?Sized>(samples: usize, rng: &mut R) -> f64 {
    (0..samples)
        .map(|_| {
            let g = random_param(GaugeClass::GeneralContractive, rng);
            let gp = random_param(GaugeClass::GeneralContractive, rng);
            g.r(&gp)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Constraint on `a` for transitivity questions; `b` is always free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllowedSet {
    /// `a = 1`: translations only.
    Translations,
    /// `|a| = 1`: Euclidean motions.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reachability {
    Reachable { a: C, b: C },
    /// The affine map is forced and `a` violates the constraint.
    Unreachable { required_a: C },
}

impl Reachability {
    pub fn is_reachable(&self) -> bool {
        matches!(self, Self::Reachable { .. })
    }
}

fn a_allowed(a: C, allowed: AllowedSet, tol: f64) -> bool {
    match allowed {
        AllowedSet::Translations => (a - ONE).norm() <= tol,
        AllowedSet::Euclidean => (a.norm() - 1.0).abs() <= tol,
    }
}

/// Whether some `z ↦ az + b` with `a` in the allowed set maps `src` to `dst`.
pub fn pair_reachable(src: (C, C), dst: (C, C), allowed: AllowedSet) -> Result<Reachability> {
    let ds = src.1 - src.0;
    let dd = dst.1 - dst.0;
    if ds.norm() == 0.0 || dd.norm() == 0.0 {
        return Err(Error::InvalidParameter("pairs must consist of distinct labels".into()));
    }
    let a = dd / ds;
    let b = dst.0 - a * src.0;
    let tol = 1e-12 * (1.0 + a.norm());
    Ok(if a_allowed(a, allowed, tol) {
        Reachability::Reachable { a, b }
    } else {
        Reachability::Unreachable { required_a: a }
    })
}

/// A witness mapping `z0` to `z1`: `a = 1`, `b = z1 − z0`.
pub fn unit_reachable(z0: C, z1: C) -> Reachability {
    Reachability::Reachable { a: ONE, b: z1 - z0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    #[test]
    fn identity_acts_trivially() {
        let a = GaugeParam::identity().act(c(0.3, -1.2)).unwrap();
        assert_eq!(a.new_label, c(0.3, -1.2));
        assert_eq!(a.exponent_rate, ZERO);
    }

    #[test]
    fn unitary_translation_of_units() {
        let g = GaugeParam::new(ONE, ONE, -ONE, ZERO, GaugeClass::Unitary).unwrap();
        let a = g.act(ZERO).unwrap();
        assert_eq!(a.new_label, ONE);
        assert_eq!(a.exponent_rate, ZERO);
    }

    #[test]
    fn flow_rate_has_time_factor() {
        let g = GaugeParam::flow(c(0.5, 0.0)).unwrap();
        let a = g.act(c(2.0, 0.0)).unwrap();
        assert_eq!(a.new_label, ONE);
        assert!((a.exponent_rate - c(-1.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn class_violations_are_rejected() {
        assert!(GaugeParam::new(c(1.2, 0.0), ZERO, ZERO, ZERO, GaugeClass::GeneralContractive).is_err());
        assert!(GaugeParam::new(c(0.5, 0.0), ZERO, ZERO, c(-0.1, 0.0), GaugeClass::GeneralContractive).is_err());
        assert!(GaugeParam::new(ONE, ONE, ONE, ZERO, GaugeClass::Unitary).is_err());
        assert!(GaugeParam::new(c(0.5, 0.0), ONE, ZERO, ZERO, GaugeClass::Flow).is_err());
        let mut g = GaugeParam {
            a: ONE,
            b: ZERO,
            c: ZERO,
            y: c(0.5, 0.0),
            class: GaugeClass::Isometric,
            relax_isometric: false,
        };
        assert!(g.validate().is_err());
        g.relax_isometric = true;
        assert!(g.validate().is_ok());
    }

    #[test]
    fn adjoint_is_involution_and_unitary_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = random_param(GaugeClass::Unitary, &mut rng);
        assert_eq!(g.adjoint().adjoint(), g);
        let e = g.compose(&g.adjoint());
        assert!(e.distance(&GaugeParam::identity()) < 1e-12);
        let e = g.adjoint().compose(&g);
        assert!(e.distance(&GaugeParam::identity()) < 1e-12);
        assert_eq!(GaugeParam::identity().adjoint(), GaugeParam::identity());
    }

    #[test]
    fn adjoint_of_unitary_acts_by_inverse_map() {
        let g = GaugeParam::unitary(c(0.0, 1.0), c(0.5, -0.2), 0.3).unwrap();
        let z = c(1.1, 0.4);
        let a = g.adjoint().act(z).unwrap();
        assert!((a.new_label - g.a.conj() * (z - g.b)).norm() < 1e-15);
        let printed = -(g.y.conj() - c(0.0, (g.b.conj() * z).im));
        assert!((a.exponent_rate - printed).norm() < 1e-15);
    }

    #[test]
    fn compose_with_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_param(GaugeClass::GeneralContractive, &mut rng);
        assert!(GaugeParam::identity().compose(&g).distance(&g) < 1e-15);
        assert!(g.compose(&GaugeParam::identity()).distance(&g) < 1e-15);
    }

    #[test]
    fn flow_composition() {
        let g = GaugeParam::flow(c(0.3, 0.4)).unwrap();
        let h = GaugeParam::flow(c(-0.5, 0.1)).unwrap();
        assert_eq!(g.r(&h), 0.0);
        let gh = g.compose(&h);
        assert_eq!(gh.class, GaugeClass::Flow);
        assert!((gh.a - g.a * h.a).norm() < 1e-15 && gh.y == ZERO);
        let zs = [c(1.0, 2.0), c(-0.5, 0.3)];
        let res = action_composition_residual(&g, &h, &zs, CompositionLaw::Printed).unwrap();
        assert!(res.rate < 1e-12 && res.label < 1e-15);
    }

    #[test]
    fn printed_law_misses_unitary_action_by_imaginary_term() {
        // with c = −bā the printed y″ carries −iIm(ab̄b′), sequential action +iIm(ab̄b′)
        let g = GaugeParam::unitary(ONE, ONE, 0.0).unwrap();
        let h = GaugeParam::unitary(ONE, c(0.0, 1.0), 0.0).unwrap();
        let res = action_composition_residual(&g, &h, &[ZERO], CompositionLaw::Printed).unwrap();
        assert!((res.rate - 2.0).abs() < 1e-12);
        let res = action_composition_residual(&g, &h, &[ZERO], CompositionLaw::Corrected).unwrap();
        assert!(res.rate < 1e-12);
    }

    #[test]
    fn reachability_facts() {
        let r = pair_reachable((ZERO, ONE), (ZERO, c(0.0, 1.0)), AllowedSet::Translations).unwrap();
        assert_eq!(r, Reachability::Unreachable { required_a: c(0.0, 1.0) });
        let r = pair_reachable((ZERO, ONE), (ZERO, c(0.0, 1.0)), AllowedSet::Euclidean).unwrap();
        assert_eq!(r, Reachability::Reachable { a: c(0.0, 1.0), b: ZERO });
        let r = pair_reachable((ONE, c(2.0, 1.0)), (ONE, c(2.0, 1.0)), AllowedSet::Translations).unwrap();
        assert_eq!(r, Reachability::Reachable { a: ONE, b: ZERO });
        assert!(pair_reachable((ONE, ONE), (ZERO, ONE), AllowedSet::Euclidean).is_err());
    }

    proptest! {
        #[test]
        fn r_is_nonnegative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            prop_assert!(min_r(20, &mut rng) >= -1e-12);
        }

        #[test]
        fn unitary_closure(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_param(GaugeClass::Unitary, &mut rng);
            let h = random_param(GaugeClass::Unitary, &mut rng);
            let gh = g.compose(&h);
            prop_assert!(gh.validate().is_ok());
            prop_assert_eq!(gh.class, GaugeClass::Unitary);
        }

        #[test]
        fn single_unit_transitivity(re0 in -5.0f64..5.0, im0 in -5.0f64..5.0, re1 in -5.0f64..5.0, im1 in -5.0f64..5.0) {
            let (z0, z1) = (c(re0, im0), c(re1, im1));
            let Reachability::Reachable { a, b } = unit_reachable(z0, z1) else { unreachable!() };
            let g = GaugeParam::unitary(a, b, 0.0).unwrap();
            prop_assert!((g.act(z0).unwrap().new_label - z1).norm() < 1e-12);
        }

        #[test]
        fn labels_compose_exactly(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_param(GaugeClass::GeneralContractive, &mut rng);
            let h = random_param(GaugeClass::GeneralContractive, &mut rng);
            let r = action_composition_residual(&g, &h, &[complex_normal(&mut rng)], CompositionLaw::Printed).unwrap();
            prop_assert!(r.label < 1e-12);
        }
    }
}
