//! Normal functionals, boundary weights and their series.
//!
//! A functional on `K` is either a density matrix over a [`KBasis`] or a
//! finite sum `Σ w |F⟩⟨G|` of product vectors, evaluated as
//! `ρ(X) = Σ w (G, X F)`. Boundary operators on `H = K ⊗ L²(0,∞)` are sums of
//! elementary tensors `A_K ⊗ A₀`.
//!
//! The series `ω^z(ρ)(A) = Σₙ zⁿ⁺¹ ρ((πΛ)ⁿπ(A))` is summed on doubling
//! checkpoints. For `z = ±1` the checkpoint partial sums are Richardson
//! extrapolated in `1/M`, which is the asymptotic form of the tail when λ
//! grows polynomially.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C;

use crate::halfline::{inner_product, ExpKernelVector, ExpMultiplier, HalfLineOperator};
use crate::linalg::{hermitian_eigenvalues, nuclear_norm, psd_sqrt, trace_product, CMat};
use crate::tensorspace::{
    pair, pi_apply, pi_step_power, product_inner, shifted_tail, HVector, KBasis, KOperator, ProductVector, TailMemo,
};
use crate::{Error, Result};

const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);

/// Stopping rule for weight series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSeriesConfig {
    pub max_terms: usize,
    pub tail_tolerance: f64,
}

impl Default for WeightSeriesConfig {
    fn default() -> Self {
        Self {
            max_terms: 1 << 16,
            tail_tolerance: 1e-11,
        }
    }
}

/// A summed series with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesValue<T> {
    pub value: T,
    pub terms: usize,
    pub error_estimate: f64,
}

/// One elementary tensor `A_K ⊗ A₀` of a boundary operator.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTerm {
    pub k: KOperator,
    pub a0: HalfLineOperator,
}

/// A finite sum of elementary tensors on `H = K ⊗ L²(0,∞)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryOperator {
    pub terms: Vec<BoundaryTerm>,
}

impl BoundaryOperator {
    pub fn elementary(k: KOperator, a0: HalfLineOperator) -> Self {
        Self {
            terms: vec![BoundaryTerm { k, a0 }],
        }
    }

    /// `I − Λ = I_K ⊗ (1 − e^{−x})`.
    pub fn one_minus_lambda() -> Self {
        Self::elementary(
            KOperator::identity(),
            HalfLineOperator::Multiplier(ExpMultiplier::one_minus_lambda()),
        )
    }

    /// `Λ(A) = A ⊗ e^{−x}`.
    pub fn lambda_of(a: &KOperator) -> Self {
        Self::elementary(a.clone(), HalfLineOperator::lambda())
    }

    /// `|u⟩⟨v|` for `u, v ∈ H`.
    pub fn rank_one(u: &HVector, v: &HVector) -> Result<Self> {
        Ok(Self::elementary(
            KOperator::rank_one(&u.k, &v.k)?,
            HalfLineOperator::rank_one(u.h.clone(), v.h.clone()),
        ))
    }

    /// `E(t,∞) A E(t,∞)` on the half-line slot.
    pub fn restrict(&self, t: f64) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|b| BoundaryTerm {
                    k: b.k.clone(),
                    a0: b.a0.restrict(t),
                })
                .collect(),
        }
    }

    pub fn scale(&self, s: C) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|b| BoundaryTerm {
                    k: b.k.scale(s),
                    a0: b.a0.clone(),
                })
                .collect(),
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self { terms }
    }
}

/// Something that turns a `K`-operator into a matrix of functional values:
/// a whole basis at once, or a single vector pair (a 1×1 matrix).
pub trait Carrier {
    fn values(&self, x: &KOperator, memo: &mut TailMemo) -> Result<CMat>;

    /// Values of `M^{⊗n} ⊗ y`. Implementations reuse the running product of
    /// the leading `M` factors stored in `cache` across increasing `n`; a
    /// cache must only ever see one `step`.
    fn shifted_values(
        &self,
        n: usize,
        y: &KOperator,
        step: &HalfLineOperator,
        memo: &mut TailMemo,
        cache: &mut ShiftCache,
    ) -> Result<CMat> {
        let _ = cache;
        self.values(&pi_step_power(y, n, step), memo)
    }
}

/// Running products for [`Carrier::shifted_values`].
#[derive(Debug, Default)]
pub struct ShiftCache {
    base: Option<CMat>,
    prefix: Vec<C>,
}

impl ShiftCache {
    fn prefix_to(&mut self, k: usize, mut factor: impl FnMut(usize) -> Result<C>) -> Result<C> {
        if self.prefix.is_empty() {
            self.prefix.push(ONE);
        }
        while self.prefix.len() <= k {
            let i = self.prefix.len();
            let last = *self.prefix.last().expect("nonempty");
            self.prefix.push(last * factor(i)?);
        }
        Ok(self.prefix[k])
    }
}

impl Carrier for KBasis {
    fn values(&self, x: &KOperator, memo: &mut TailMemo) -> Result<CMat> {
        self.matrix_of(x, memo)
    }

    fn shifted_values(
        &self,
        n: usize,
        y: &KOperator,
        step: &HalfLineOperator,
        memo: &mut TailMemo,
        cache: &mut ShiftCache,
    ) -> Result<CMat> {
        let nf = self.n_factors();
        if n < nf {
            return self.values(&pi_step_power(y, n, step), memo);
        }
        if cache.base.is_none() {
            let lam = KOperator::elementary(vec![step.clone(); nf]);
            cache.base = Some(self.matrix_of(&lam, memo)?);
        }
        let seq = self.sequence().clone();
        // positions nf+1 ..= n carry the step between reference vectors
        let mid = cache.prefix_to(n - nf, |k| {
            let r = seq.reference(nf + k);
            step.element(&r, &r)
        })?;
        let mut rest = y.coef;
        for j in 1..=y.head.len() {
            let k = seq.reference(n + j);
            rest *= y.factor_with(j, &seq).element(&k, &k)?;
        }
        let tail = shifted_tail(&y.tail, n);
        rest *= memo.tail(&seq, &tail, n + y.head.len() + 1, 0, 0);
        Ok(cache.base.as_ref().expect("set above") * (mid * rest))
    }
}

/// The functional `X ↦ (bra, X ket)`.
pub struct VectorPair<'a> {
    pub ket: &'a ProductVector,
    pub bra: &'a ProductVector,
}

impl Carrier for VectorPair<'_> {
    fn values(&self, x: &KOperator, memo: &mut TailMemo) -> Result<CMat> {
        Ok(DMatrix::from_element(1, 1, pair(self.bra, x, self.ket, memo)?))
    }

    fn shifted_values(
        &self,
        n: usize,
        y: &KOperator,
        step: &HalfLineOperator,
        memo: &mut TailMemo,
        cache: &mut ShiftCache,
    ) -> Result<CMat> {
        let h = self.ket.head().len().max(self.bra.head().len());
        if n < h {
            return self.values(&pi_step_power(y, n, step), memo);
        }
        let p = cache.prefix_to(n, |i| step.element(&self.bra.factor(i), &self.ket.factor(i)))?;
        let seq = self.ket.sequence().clone();
        let mut rest = y.coef;
        for j in 1..=y.head.len() {
            rest *= y
                .factor_with(j, &seq)
                .element(&self.bra.factor(n + j), &self.ket.factor(n + j))?;
        }
        let tail = shifted_tail(&y.tail, n);
        rest *= memo.tail(&seq, &tail, n + y.head.len() + 1, self.bra.offset(), self.ket.offset());
        Ok(DMatrix::from_element(1, 1, p * rest))
    }
}

/// `n ↦ Σ M^{⊗n} ⊗ y` evaluated through a carrier.
struct SeriesTerms<'a> {
    carrier: &'a dyn Carrier,
    step: HalfLineOperator,
    parts: Vec<(KOperator, ShiftCache)>,
}

impl<'a> SeriesTerms<'a> {
    fn new(carrier: &'a dyn Carrier, b: &BoundaryOperator) -> Result<Self> {
        if b.terms.is_empty() {
            return Err(Error::InvalidParameter("empty boundary operator".into()));
        }
        let ys = b.terms.iter().map(|t| pi_apply(&t.k, &t.a0)).collect();
        Ok(Self::with_step(carrier, HalfLineOperator::lambda(), ys))
    }

    fn with_step(carrier: &'a dyn Carrier, step: HalfLineOperator, ys: Vec<KOperator>) -> Self {
        Self {
            carrier,
            step,
            parts: ys.into_iter().map(|y| (y, ShiftCache::default())).collect(),
        }
    }

    fn term(&mut self, n: usize, memo: &mut TailMemo) -> Result<CMat> {
        let mut acc: Option<CMat> = None;
        for (y, cache) in self.parts.iter_mut() {
            let v = self.carrier.shifted_values(n, y, &self.step, memo, cache)?;
            acc = Some(match acc {
                None => v,
                Some(a) => a + v,
            });
        }
        Ok(acc.expect("nonempty"))
    }
}

/// Sums `Σₙ zⁿ⁺¹ term(n)` on doubling checkpoints.
pub fn sum_series(z: C, cfg: &WeightSeriesConfig, mut term: impl FnMut(usize) -> Result<CMat>) -> Result<SeriesValue<CMat>> {
    if z.norm() > 1.0 + 1e-12 {
        return Err(Error::Domain(format!("|z| = {} exceeds 1", z.norm())));
    }
    let first = term(0)?;
    if z == ZERO {
        return Ok(SeriesValue {
            value: first.map(|_| ZERO),
            terms: 1,
            error_estimate: 0.0,
        });
    }
    let extrapolate = (z - ONE).norm() < 1e-15 || (z + ONE).norm() < 1e-15;
    let mut sum = first * z;
    let mut zp = z;
    let mut n = 1;
    let mut checkpoint = 16;
    let mut partials: Vec<CMat> = Vec::new();
    let mut table: Vec<CMat> = Vec::new();
    let mut last_norm = sum.norm();
    let mut fast = 0;
    loop {
        while n < checkpoint {
            zp *= z;
            let t = term(n)? * zp;
            let tn = t.norm();
            sum += t;
            n += 1;
            // super-geometric decay: the remaining tail is below the last term
            if tn <= 0.1 * last_norm && tn <= 1e-3 * cfg.tail_tolerance * sum.norm().max(1.0) {
                fast += 1;
                if fast >= 2 {
                    return Ok(SeriesValue {
                        value: sum,
                        terms: n,
                        error_estimate: tn,
                    });
                }
            } else {
                fast = 0;
            }
            last_norm = tn;
        }
        let scale = sum.norm().max(1.0);
        let raw_err = partials.last().map(|p| (&sum - p).norm());
        partials.push(sum.clone());
        if extrapolate {
            let mut row = vec![sum.clone()];
            for j in 1..partials.len() {
                let f = 2f64.powi(j as i32);
                let r = (row[j - 1].scale(f) - &table[j - 1]).unscale(f - 1.0);
                row.push(r);
            }
            if let Some(re) = raw_err {
                if re <= cfg.tail_tolerance * scale {
                    return Ok(SeriesValue {
                        value: sum,
                        terms: n,
                        error_estimate: re,
                    });
                }
                let k = row.len();
                if k >= 3 {
                    let err = (&row[k - 1] - &row[k - 2]).norm().max((&row[k - 1] - &table[k - 2]).norm());
                    if err <= cfg.tail_tolerance * scale {
                        return Ok(SeriesValue {
                            value: row[k - 1].clone(),
                            terms: n,
                            error_estimate: err,
                        });
                    }
                }
            }
            table = row;
        } else if let Some(re) = raw_err {
            if re <= cfg.tail_tolerance * scale {
                return Ok(SeriesValue {
                    value: sum,
                    terms: n,
                    error_estimate: re,
                });
            }
        }
        if checkpoint * 2 > cfg.max_terms {
            return Err(Error::NonConvergence {
                terms: n,
                last: sum.norm(),
                error: raw_err.unwrap_or(f64::INFINITY),
            });
        }
        checkpoint *= 2;
    }
}

/// `ω^z` for every basis functional at once: entry `[b, a]` is
/// `ω^z(|e_a⟩⟨e_b|)(B)`.
pub fn omega_z_matrix(
    carrier: &dyn Carrier,
    z: C,
    b: &BoundaryOperator,
    cfg: &WeightSeriesConfig,
    memo: &mut TailMemo,
) -> Result<SeriesValue<CMat>> {
    let mut terms = SeriesTerms::new(carrier, b)?;
    sum_series(z, cfg, |n| terms.term(n, memo))
}

/// A normal functional on `K`.
#[derive(Debug, Clone)]
pub enum Functional {
    /// `ρ(X) = tr(D [X])` over a truncated basis.
    Density { basis: Arc<KBasis>, density: CMat },
    /// `ρ(X) = Σ w (bra, X ket)`.
    Vectors(Vec<(C, ProductVector, ProductVector)>),
}

impl Functional {
    pub fn zero() -> Self {
        Self::Vectors(Vec::new())
    }

    /// `|F⟩⟨F|`, the vector state of `F` (unnormalised).
    pub fn vector_state(f: &ProductVector) -> Self {
        Self::Vectors(vec![(ONE, f.clone(), f.clone())])
    }

    pub fn density(basis: Arc<KBasis>, density: CMat) -> Result<Self> {
        let d = basis.dim();
        if density.shape() != (d, d) {
            return Err(Error::Shape(format!("density {:?} on basis of dim {d}", density.shape())));
        }
        Ok(Self::Density { basis, density })
    }

    /// Rank-one terms; a density `D` becomes `Σ D_ab |e_a⟩⟨e_b|`.
    pub fn to_vectors(&self) -> Vec<(C, ProductVector, ProductVector)> {
        match self {
            Self::Vectors(v) => v.clone(),
            Self::Density { basis, density } => {
                let d = basis.dim();
                let vecs: Vec<ProductVector> = (0..d).map(|a| basis.vector(a)).collect();
                let mut out = Vec::new();
                for a in 0..d {
                    for b in 0..d {
                        let w = density[(a, b)];
                        if w != ZERO {
                            out.push((w, vecs[a].clone(), vecs[b].clone()));
                        }
                    }
                }
                out
            }
        }
    }

    pub fn eval(&self, x: &KOperator, memo: &mut TailMemo) -> Result<C> {
        match self {
            Self::Density { basis, density } => Ok(trace_product(density, &basis.matrix_of(x, memo)?)),
            Self::Vectors(v) => {
                let mut s = ZERO;
                for (w, ket, bra) in v {
                    s += w * pair(bra, x, ket, memo)?;
                }
                Ok(s)
            }
        }
    }

    /// `ρ(I)`.
    pub fn total(&self) -> Result<C> {
        self.eval(&KOperator::identity(), &mut TailMemo::new())
    }

    /// `ρ(Δ)`.
    pub fn delta_value(&self) -> Result<C> {
        self.eval(&KOperator::delta(), &mut TailMemo::new())
    }

    /// Trace norm of the density operator.
    pub fn norm(&self) -> f64 {
        match self {
            Self::Density { density, .. } => nuclear_norm(density),
            Self::Vectors(v) => vector_sum_trace_norm(v),
        }
    }

    pub fn is_positive(&self, tol: f64) -> bool {
        match self {
            Self::Density { density, .. } => {
                let herm = (density - density.adjoint()).norm() <= tol.max(1e-12) * (1.0 + density.norm());
                herm && hermitian_eigenvalues(density).first().is_none_or(|e| *e >= -tol)
            }
            Self::Vectors(v) => {
                let (gk, gb, w) = gram_form(v);
                let rk = psd_sqrt(&gk);
                let rb = psd_sqrt(&gb);
                let m = &rk * w * rb.adjoint();
                let herm = (&m - m.adjoint()).norm() <= tol.max(1e-12) * (1.0 + m.norm());
                herm && hermitian_eigenvalues(&m).first().is_none_or(|e| *e >= -tol)
            }
        }
    }

    /// `(Λ̂π̂)(ρ) : A ↦ ρ(e^{−x} ⊗ A)`.
    pub fn lambda_pi_hat(&self) -> Self {
        let out = self
            .to_vectors()
            .into_iter()
            .map(|(w, ket, bra)| {
                let c = HalfLineOperator::lambda()
                    .element(&bra.factor(1), &ket.factor(1))
                    .expect("multiplier elements are exact");
                let ks = crate::tensorspace::s0_adjoint_exact(&ket).k;
                let bs = crate::tensorspace::s0_adjoint_exact(&bra).k;
                (w * c, ks, bs)
            })
            .collect();
        Self::Vectors(out)
    }
}

fn gram_form(v: &[(C, ProductVector, ProductVector)]) -> (CMat, CMat, CMat) {
    let n = v.len();
    let gk = DMatrix::from_fn(n, n, |i, j| product_inner(&v[i].1, &v[j].1));
    let gb = DMatrix::from_fn(n, n, |i, j| product_inner(&v[i].2, &v[j].2));
    let w = DMatrix::from_fn(n, n, |i, j| if i == j { v[i].0 } else { ZERO });
    (gk, gb, w)
}

fn vector_sum_trace_norm(v: &[(C, ProductVector, ProductVector)]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let (gk, gb, w) = gram_form(v);
    nuclear_norm(&(psd_sqrt(&gk) * w * psd_sqrt(&gb).adjoint()))
}

/// `ω^z(ρ)(B)`.
pub fn omega_z(z: C, rho: &Functional, b: &BoundaryOperator, cfg: &WeightSeriesConfig) -> Result<SeriesValue<C>> {
    let mut memo = TailMemo::new();
    match rho {
        Functional::Density { basis, density } => {
            let w = omega_z_matrix(basis.as_ref(), z, b, cfg, &mut memo)?;
            Ok(SeriesValue {
                value: trace_product(density, &w.value),
                terms: w.terms,
                error_estimate: w.error_estimate * crate::linalg::nuclear_norm(density),
            })
        }
        Functional::Vectors(v) => {
            let mut value = ZERO;
            let mut terms = 0;
            let mut err = 0.0;
            for (wt, ket, bra) in v {
                let s = omega_z_matrix(&VectorPair { ket, bra }, z, b, cfg, &mut memo)?;
                value += wt * s.value[(0, 0)];
                terms = terms.max(s.terms);
                err += wt.norm() * s.error_estimate;
            }
            Ok(SeriesValue {
                value,
                terms,
                error_estimate: err,
            })
        }
    }
}

/// `ω¹(ρ)(B) = Σₙ ρ((πΛ)ⁿπ(B))`.
pub fn omega1(rho: &Functional, b: &BoundaryOperator, cfg: &WeightSeriesConfig) -> Result<SeriesValue<C>> {
    omega_z(ONE, rho, b, cfg)
}

/// Partial sums `Σ_{n<N} ρ((πΛ)ⁿπ(B))` for `N = 1..=count`.
pub fn omega1_partial_sums(rho: &Functional, b: &BoundaryOperator, count: usize) -> Result<Vec<C>> {
    let mut memo = TailMemo::new();
    let mut out = Vec::with_capacity(count);
    let mut s = ZERO;
    match rho {
        Functional::Density { basis, density } => {
            let mut terms = SeriesTerms::new(basis.as_ref(), b)?;
            for n in 0..count {
                s += trace_product(density, &terms.term(n, &mut memo)?);
                out.push(s);
            }
        }
        Functional::Vectors(v) => {
            let lam = HalfLineOperator::lambda();
            let mut all = v
                .iter()
                .map(|(w, ket, bra)| Ok((*w, ket, bra, b.terms.iter().map(|t| (pi_apply(&t.k, &t.a0), ShiftCache::default())).collect::<Vec<_>>())))
                .collect::<Result<Vec<_>>>()?;
            for n in 0..count {
                for (w, ket, bra, parts) in all.iter_mut() {
                    let carrier = VectorPair { ket, bra };
                    for (y, cache) in parts.iter_mut() {
                        s += *w * carrier.shifted_values(n, y, &lam, &mut memo, cache)?[(0, 0)];
                    }
                }
                out.push(s);
            }
        }
    }
    Ok(out)
}

/// A normal functional on `H` given by vectors: `ν(A) = Σ w (bra, A ket)`.
#[derive(Debug, Clone)]
pub struct HFunctional {
    pub terms: Vec<(C, HVector, HVector)>,
}

impl HFunctional {
    pub fn vector_state(v: &HVector) -> Self {
        Self {
            terms: vec![(ONE, v.clone(), v.clone())],
        }
    }

    pub fn eval(&self, b: &BoundaryOperator, memo: &mut TailMemo) -> Result<C> {
        let mut s = ZERO;
        for (w, ket, bra) in &self.terms {
            for t in &b.terms {
                s += w * pair(&bra.k, &t.k, &ket.k, memo)? * t.a0.element(&bra.h, &ket.h)?;
            }
        }
        Ok(s)
    }

    pub fn total(&self) -> Result<C> {
        self.eval(
            &BoundaryOperator::elementary(KOperator::identity(), HalfLineOperator::Identity),
            &mut TailMemo::new(),
        )
    }

    pub fn is_positive(&self, tol: f64) -> bool {
        let n = self.terms.len();
        if n == 0 {
            return true;
        }
        let gk = DMatrix::from_fn(n, n, |i, j| self.terms[i].1.inner(&self.terms[j].1));
        let gb = DMatrix::from_fn(n, n, |i, j| self.terms[i].2.inner(&self.terms[j].2));
        let w = DMatrix::from_fn(n, n, |i, j| if i == j { self.terms[i].0 } else { ZERO });
        let m = psd_sqrt(&gk) * w * psd_sqrt(&gb).adjoint();
        let herm = (&m - m.adjoint()).norm() <= tol.max(1e-12) * (1.0 + m.norm());
        herm && hermitian_eigenvalues(&m).first().is_none_or(|e| *e >= -tol)
    }
}

/// A boundary weight of the form `ξ = c · R(π̂Λ̂)ν`, or zero.
#[derive(Debug, Clone)]
pub struct BoundaryWeight {
    nu: HFunctional,
    scale: C,
}

impl BoundaryWeight {
    pub fn zero() -> Self {
        Self {
            nu: HFunctional { terms: Vec::new() },
            scale: ZERO,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.nu.terms.is_empty() || self.scale == ZERO
    }

    pub fn scaled(&self, s: C) -> Self {
        Self {
            nu: self.nu.clone(),
            scale: self.scale * s,
        }
    }

    /// `ξ(B) = c[ν(B) + Σₙ≥₁ ν((Λπ)ⁿ B)]`.
    ///
    /// For `ν = w|F⊗φ⟩⟨G⊗ψ|` the `n ≥ 1` terms collapse to
    /// `w (ψ, e^{−x}φ) · ω¹(|F⟩⟨G|)(B)`.
    pub fn eval(&self, b: &BoundaryOperator, cfg: &WeightSeriesConfig, memo: &mut TailMemo) -> Result<SeriesValue<C>> {
        if self.is_zero() {
            return Ok(SeriesValue {
                value: ZERO,
                terms: 0,
                error_estimate: 0.0,
            });
        }
        let mut value = self.nu.eval(b, memo)?;
        let mut terms = 1;
        let mut err = 0.0;
        for (w, ket, bra) in &self.nu.terms {
            let e = inner_product(&bra.h, &crate::halfline::apply_lambda_factor(&ket.h));
            let s = omega_z_matrix(
                &VectorPair {
                    ket: &ket.k,
                    bra: &bra.k,
                },
                ONE,
                b,
                cfg,
                memo,
            )?;
            value += w * e * s.value[(0, 0)];
            terms = terms.max(s.terms + 1);
            err += (w * e).norm() * s.error_estimate;
        }
        Ok(SeriesValue {
            value: value * self.scale,
            terms,
            error_estimate: err * self.scale.norm(),
        })
    }
}

/// `ξ = (1 − ν(Λ(Δ)))⁻¹ R(π̂Λ̂)ν`.
pub fn xi_from_nu(nu: &HFunctional) -> Result<BoundaryWeight> {
    if nu.terms.is_empty() {
        return Ok(BoundaryWeight::zero());
    }
    if !nu.is_positive(1e-10) {
        return Err(Error::InvalidParameter("ν must be positive".into()));
    }
    let total = nu.total()?.re;
    if total > 1.0 + 1e-10 {
        return Err(Error::InvalidParameter(format!("ν(I) = {total} exceeds 1")));
    }
    let nld = nu.eval(&BoundaryOperator::lambda_of(&KOperator::delta()), &mut TailMemo::new())?;
    if nld.re >= 1.0 - 1e-9 {
        return Err(Error::NearSingular(nld.re));
    }
    Ok(BoundaryWeight {
        nu: nu.clone(),
        scale: (ONE - nld).inv(),
    })
}

/// The boundary weight map to evaluate.
#[derive(Debug, Clone)]
pub enum OmegaSpec {
    /// The minimal map `ω¹`.
    Minimal,
    /// `ω^z`.
    Z(C),
    /// `ω = ω¹ + ρ(Δ)ξ`.
    Full(BoundaryWeight),
    /// `ω¹ + ρ(Δ)ξ` evaluated with `ω^z` in place of `ω¹` (used for corner
    /// perturbations).
    ZPlus(C, BoundaryWeight),
}

impl OmegaSpec {
    /// Matrix `[b, a] = ω(|e_a⟩⟨e_b|)(B)` over a basis.
    pub fn basis_matrix(
        &self,
        basis: &KBasis,
        b: &BoundaryOperator,
        cfg: &WeightSeriesConfig,
        memo: &mut TailMemo,
    ) -> Result<CMat> {
        let (z, xi) = match self {
            Self::Minimal => (ONE, None),
            Self::Z(z) => (*z, None),
            Self::Full(xi) => (ONE, Some(xi)),
            Self::ZPlus(z, xi) => (*z, Some(xi)),
        };
        let mut w = omega_z_matrix(basis, z, b, cfg, memo)?.value;
        if let Some(xi) = xi {
            if !xi.is_zero() {
                let d = basis.matrix_of(&KOperator::delta(), memo)?;
                w += d * xi.eval(b, cfg, memo)?.value;
            }
        }
        Ok(w)
    }
}

/// `ω(ρ)(B) = ω¹(ρ)(B) + ρ(Δ)ξ(B)`.
pub fn omega_full(
    rho: &Functional,
    b: &BoundaryOperator,
    xi: &BoundaryWeight,
    cfg: &WeightSeriesConfig,
) -> Result<SeriesValue<C>> {
    let w1 = omega1(rho, b, cfg)?;
    let mut memo = TailMemo::new();
    let x = xi.eval(b, cfg, &mut memo)?;
    let d = rho.delta_value()?;
    Ok(SeriesValue {
        value: w1.value + d * x.value,
        terms: w1.terms.max(x.terms),
        error_estimate: w1.error_estimate + d.norm() * x.error_estimate,
    })
}

/// `ω|_t(ρ)(B) = ω(ρ)(E(t,∞) B E(t,∞))`.
pub fn truncate_weight(
    spec: &OmegaSpec,
    rho: &Functional,
    b: &BoundaryOperator,
    t: f64,
    cfg: &WeightSeriesConfig,
) -> Result<C> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("truncation time {t} must be positive")));
    }
    let bt = b.restrict(t);
    match spec {
        OmegaSpec::Minimal => Ok(omega1(rho, &bt, cfg)?.value),
        OmegaSpec::Z(z) => Ok(omega_z(*z, rho, &bt, cfg)?.value),
        OmegaSpec::Full(xi) => Ok(omega_full(rho, &bt, xi, cfg)?.value),
        OmegaSpec::ZPlus(z, xi) => {
            let mut memo = TailMemo::new();
            Ok(omega_z(*z, rho, &bt, cfg)?.value + rho.delta_value()? * xi.eval(&bt, cfg, &mut memo)?.value)
        }
    }
}

/// Density-vector index of `(a, b)`.
fn vidx(d: usize, a: usize, b: usize) -> usize {
    a * d + b
}

/// The map `ρ ↦ π̂_t^#(ρ)` from densities on the truncated `K` to densities on
/// the truncated `K ⊗ V`, as a matrix on row-major vectorised densities.
#[derive(Debug, Clone)]
pub struct BoundaryRepMap {
    pub d_in: usize,
    pub d_out: usize,
    pub matrix: CMat,
    /// Accumulated series error over all entries.
    pub error_estimate: f64,
}

impl BoundaryRepMap {
    pub fn apply(&self, density: &CMat) -> Result<CMat> {
        if density.shape() != (self.d_in, self.d_in) {
            return Err(Error::Shape("density does not match map input".into()));
        }
        let v = DVector::from_iterator(self.d_in * self.d_in, density.transpose().iter().copied());
        let out = &self.matrix * v;
        Ok(DMatrix::from_fn(self.d_out, self.d_out, |i, j| out[vidx(self.d_out, i, j)]))
    }
}

/// `π̂_t^#` from the linear system compressed onto the basis densities.
#[derive(Debug, Clone)]
pub struct CompressedRep {
    pub map: BoundaryRepMap,
    /// 2-norm condition number of `I + Λ̂ω|_t` on the truncated space.
    pub condition: f64,
    /// Largest column residual of the inverse.
    pub residual: f64,
}

fn spec_parts(spec: &OmegaSpec) -> (C, Option<&BoundaryWeight>) {
    match spec {
        OmegaSpec::Minimal => (ONE, None),
        OmegaSpec::Z(z) => (*z, None),
        OmegaSpec::Full(xi) => (ONE, Some(xi)),
        OmegaSpec::ZPlus(z, xi) => (*z, Some(xi)),
    }
}

fn check_rep_inputs(t: f64, v: &[ExpKernelVector]) -> Result<()> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("truncation time {t} must be positive")));
    }
    if v.is_empty() {
        return Err(Error::InvalidParameter("no half-line output vectors".into()));
    }
    Ok(())
}

/// Output operators `|e_d ⊗ v_γ⟩⟨e_c ⊗ v_β|` with their row index.
fn output_operators(basis: &KBasis, v: &[ExpKernelVector]) -> Result<Vec<(usize, KOperator, HalfLineOperator)>> {
    let d = basis.dim();
    let p = v.len();
    let dout = d * p;
    let vectors: Vec<ProductVector> = (0..d).map(|a| basis.vector(a)).collect();
    let mut out = Vec::with_capacity(dout * dout);
    for c in 0..d {
        for dd in 0..d {
            let k = KOperator::rank_one(&vectors[dd], &vectors[c])?;
            for beta in 0..p {
                for gamma in 0..p {
                    let a0 = HalfLineOperator::rank_one(v[gamma].clone(), v[beta].clone());
                    out.push((vidx(dout, c * p + beta, dd * p + gamma), k.clone(), a0));
                }
            }
        }
    }
    Ok(out)
}

/// `π̂_t^# = ω|_t (I + Λ̂ω|_t)⁻¹` on the truncated model.
///
/// With `m = e^{−x}χ_(0,t)` the minimal part is
/// `Σₖ z^{k+1} ρ(m^{⊗k} ⊗ π(E_t X E_t))`, and `ρ(Δ)ξ` contributes the
/// rank-one correction `δ(ρ) (x − π^#_z(u)) / (1 + δ(u))` where `x = ξ|_t`,
/// `u = Λ̂x` and `δ(ρ) = ρ(Δ) − Σₖ z^{k+1} ρ(m^{⊗k} ⊗ m' ⊗ Δ)` with
/// `m' = e^{−x}χ_(t,∞)`. Output functionals on `H` are compressed onto
/// `span{e_a} ⊗ V` for the orthonormal half-line vectors `V`.
pub fn generalized_boundary_rep(
    basis: &KBasis,
    spec: &OmegaSpec,
    t: f64,
    v: &[ExpKernelVector],
    cfg: &WeightSeriesConfig,
) -> Result<BoundaryRepMap> {
    check_rep_inputs(t, v)?;
    let (z, xi) = spec_parts(spec);
    let xi = xi.filter(|x| !x.is_zero());
    let d = basis.dim();
    let dout = d * v.len();
    let mut memo = TailMemo::new();
    let lam = HalfLineOperator::lambda();
    let m_in = lam.window(t);
    let m_out = lam.restrict(t);
    let mut err = 0.0;

    let step_sum = |y: KOperator, memo: &mut TailMemo| -> Result<SeriesValue<CMat>> {
        let mut terms = SeriesTerms::with_step(basis, m_in.clone(), vec![y]);
        sum_series(z, cfg, |k| terms.term(k, memo))
    };

    // rank-one data of the ξ correction: δ as a basis matrix and 1 + δ(u)
    let correction = match xi {
        None => None,
        Some(xi) => {
            let y_delta = pi_apply(&KOperator::delta(), &m_out);
            let tail = step_sum(y_delta.clone(), &mut memo)?;
            err += tail.error_estimate;
            let delta = basis.matrix_of(&KOperator::delta(), &mut memo)? - tail.value;
            let xi_sum = |y: &KOperator, memo: &mut TailMemo| -> Result<SeriesValue<CMat>> {
                sum_series(z, cfg, |k| {
                    let b = BoundaryOperator::elementary(pi_step_power(y, k, &m_in), m_out.clone());
                    Ok(DMatrix::from_element(1, 1, xi.eval(&b, cfg, memo)?.value))
                })
            };
            let head = xi.eval(&BoundaryOperator::elementary(KOperator::delta(), m_out.clone()), cfg, &mut memo)?;
            let rest = xi_sum(&y_delta, &mut memo)?;
            err += head.error_estimate + rest.error_estimate;
            let denom = ONE + head.value - rest.value[(0, 0)];
            if denom.norm() < 1e-12 {
                return Err(Error::NearSingular(denom.norm()));
            }
            Some((xi, delta / denom))
        }
    };

    let mut matrix = CMat::zeros(dout * dout, d * d);
    for (row, k, a0) in output_operators(basis, v)? {
        let a0 = a0.restrict(t);
        let y = pi_apply(&k, &a0);
        let main = step_sum(y.clone(), &mut memo)?;
        err += main.error_estimate;
        let mut w = main.value;
        if let Some((xi, delta)) = &correction {
            let x = xi.eval(&BoundaryOperator::elementary(k.clone(), a0.clone()), cfg, &mut memo)?;
            let pu = sum_series(z, cfg, |j| {
                let b = BoundaryOperator::elementary(pi_step_power(&y, j, &m_in), m_out.clone());
                Ok(DMatrix::from_element(1, 1, xi.eval(&b, cfg, &mut memo)?.value))
            })?;
            err += x.error_estimate + pu.error_estimate;
            w += delta * (x.value - pu.value[(0, 0)]);
        }
        for a in 0..d {
            for b in 0..d {
                matrix[(row, vidx(d, a, b))] = w[(b, a)];
            }
        }
    }
    Ok(BoundaryRepMap {
        d_in: d,
        d_out: dout,
        matrix,
        error_estimate: err,
    })
}

/// `π̂_t^#` by solving `(I + Λ̂ω|_t)σ = ρ` with the image of `Λ̂ω|_t`
/// compressed onto the span of the basis densities.
///
/// The compression does not commute with the alternating Neumann series of
/// the inverse, so the result need not be completely positive; it converges
/// to [`generalized_boundary_rep`] as the truncation grows.
pub fn compressed_boundary_rep(
    basis: &KBasis,
    spec: &OmegaSpec,
    t: f64,
    v: &[ExpKernelVector],
    cfg: &WeightSeriesConfig,
) -> Result<CompressedRep> {
    check_rep_inputs(t, v)?;
    let d = basis.dim();
    let p = v.len();
    let dout = d * p;
    let mut memo = TailMemo::new();
    let vectors: Vec<ProductVector> = (0..d).map(|a| basis.vector(a)).collect();
    let lam_t = HalfLineOperator::lambda().restrict(t);

    // T[(c,d'), (a,b)] = ω(|e_a⟩⟨e_b|)(|e_d'⟩⟨e_c| ⊗ E e^{−x} E)
    let mut tmat = CMat::zeros(d * d, d * d);
    for c in 0..d {
        for dd in 0..d {
            let b_op = BoundaryOperator::elementary(KOperator::rank_one(&vectors[dd], &vectors[c])?, lam_t.clone());
            let w = spec.basis_matrix(basis, &b_op, cfg, &mut memo)?;
            for a in 0..d {
                for b in 0..d {
                    tmat[(vidx(d, c, dd), vidx(d, a, b))] = w[(b, a)];
                }
            }
        }
    }
    let system = CMat::identity(d * d, d * d) + &tmat;
    let sv = system.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition < 1e12) {
        return Err(Error::NotInvertible(condition));
    }
    let inv = system
        .clone()
        .try_inverse()
        .ok_or(Error::NotInvertible(condition))?;
    let residual = (&system * &inv - CMat::identity(d * d, d * d))
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max);

    // O[((c,β),(d',γ)), (a,b)] = ω(|e_a⟩⟨e_b|)(|e_d'⊗v_γ⟩⟨e_c⊗v_β| restricted)
    let mut omat = CMat::zeros(dout * dout, d * d);
    for c in 0..d {
        for dd in 0..d {
            let k = KOperator::rank_one(&vectors[dd], &vectors[c])?;
            for beta in 0..p {
                for gamma in 0..p {
                    let a0 = HalfLineOperator::rank_one(v[gamma].clone(), v[beta].clone()).restrict(t);
                    let b_op = BoundaryOperator::elementary(k.clone(), a0);
                    let w = spec.basis_matrix(basis, &b_op, cfg, &mut memo)?;
                    let row = vidx(dout, c * p + beta, dd * p + gamma);
                    for a in 0..d {
                        for b in 0..d {
                            omat[(row, vidx(d, a, b))] = w[(b, a)];
                        }
                    }
                }
            }
        }
    }
    Ok(CompressedRep {
        map: BoundaryRepMap {
            d_in: d,
            d_out: dout,
            matrix: omat * inv,
            error_estimate: 0.0,
        },
        condition,
        residual,
    })
}

/// `‖(Λ̂π̂)ⁿρ‖` for `n = 0..=n_max`, after checking `ρ(Δ) = 0`.
pub fn lemma_decay_curve(rho: &Functional, n_max: usize, tol: f64) -> Result<Vec<f64>> {
    let d = rho.delta_value()?.norm();
    if d > tol * rho.norm().max(1.0) {
        return Err(Error::Precondition {
            what: "ρ(Δ) must vanish".into(),
            measured: d,
        });
    }
    let mut cur = Functional::Vectors(rho.to_vectors());
    let mut out = Vec::with_capacity(n_max + 1);
    for _ in 0..=n_max {
        out.push(cur.norm());
        cur = cur.lambda_pi_hat();
    }
    Ok(out)
}

/// `ρ = |F⟩⟨F| − ((F,ΔF)/(F₀,ΔF₀)) |F₀⟩⟨F₀|`, which annihilates Δ.
pub fn delta_free_functional(f: &ProductVector) -> Result<Functional> {
    let f0 = ProductVector::reference(f.sequence().clone());
    let mut memo = TailMemo::new();
    let num = pair(f, &KOperator::delta(), f, &mut memo)?;
    let den = pair(&f0, &KOperator::delta(), &f0, &mut memo)?;
    if den.norm() == 0.0 {
        return Err(Error::Precondition {
            what: "(F₀, ΔF₀) must be nonzero".into(),
            measured: 0.0,
        });
    }
    Ok(Functional::Vectors(vec![(ONE, f.clone(), f.clone()), (-num / den, f0.clone(), f0)]))
}

/// One row of the non-normal weight demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct NonNormalRow {
    pub n: usize,
    /// `ω((I−Λ)^{1/2}|g⟩⟨g|(I−Λ)^{1/2}) = |(h, g)|²` for a unit `g ∈ 𝔐ₙ`.
    pub weight_value: f64,
    /// `∫_{1/n}^L x^{−s} dx` on the grid, the mass `(h, (I−Λ)^{−1}h)` seen from `[1/n, L]`.
    pub partial_mass: f64,
    /// Closed form of the same integral.
    pub mass_oracle: f64,
}

/// Demonstration that the weight `ω((I−Λ)^{1/2}A(I−Λ)^{1/2}) = (h,Ah)` with
/// `h(x) = x^{−s/2}(1−e^{−x})^{1/2}` vanishes on functions orthogonal to `h`
/// supported in `[1/n, ∞)`, while its mass near zero is unbounded.
pub fn nonnormal_weight_demo(s: f64, n_max: usize, length: f64, cells_per_unit: usize) -> Result<Vec<NonNormalRow>> {
    if !(s > 1.0 && s < 2.0) {
        return Err(Error::Domain(format!("s = {s} must lie in (1, 2)")));
    }
    let h_fn = |x: f64| x.powf(-0.5 * s) * (1.0 - (-x).exp()).sqrt();
    let mut rows = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let lo = 1.0 / n as f64;
        let cells = ((length - lo) * cells_per_unit as f64).ceil() as usize;
        let dx = (length - lo) / cells as f64;
        let xs: Vec<f64> = (0..cells).map(|j| lo + (j as f64 + 0.5) * dx).collect();
        let h: Vec<f64> = xs.iter().map(|&x| h_fn(x)).collect();
        let g0: Vec<f64> = xs.iter().map(|&x| (-(x - lo - 0.5).powi(2) * 4.0).exp()).collect();
        let ip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>() * dx;
        let c = ip(&h, &g0) / ip(&h, &h);
        let g: Vec<f64> = g0.iter().zip(&h).map(|(u, v)| u - c * v).collect();
        let gn = ip(&g, &g).sqrt();
        let g: Vec<f64> = g.iter().map(|u| u / gn).collect();
        let weight_value = ip(&h, &g).powi(2);
        let partial_mass = xs.iter().map(|&x| x.powf(-s)).sum::<f64>() * dx;
        let mass_oracle = (lo.powf(1.0 - s) - length.powf(1.0 - s)) / (s - 1.0);
        rows.push(NonNormalRow {
            n,
            weight_value,
            partial_mass,
            mass_oracle,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorspace::LambdaSequence;
    use approx::assert_relative_eq;

    fn lin() -> Arc<LambdaSequence> {
        Arc::new(LambdaSequence::linear())
    }

    fn e(rate: f64) -> ExpKernelVector {
        ExpKernelVector::exp(ONE, C::new(rate, 0.0)).unwrap()
    }

    fn cfg() -> WeightSeriesConfig {
        WeightSeriesConfig::default()
    }

    #[test]
    fn omega1_normalization_on_reference_state() {
        let f0 = ProductVector::reference(lin());
        let rho = Functional::vector_state(&f0);
        let v = omega1(&rho, &BoundaryOperator::one_minus_lambda(), &cfg()).unwrap();
        let expected = 1.0 - crate::tensorspace::linear_delta_limit();
        assert_relative_eq!(v.value.re, expected, epsilon = 1e-9);
    }

    #[test]
    fn omega1_of_zero_is_zero() {
        let v = omega1(&Functional::zero(), &BoundaryOperator::one_minus_lambda(), &cfg());
        // an empty vector sum has no carrier and sums to zero
        assert_eq!(v.unwrap().value, ZERO);
    }

    #[test]
    fn omega_z_at_zero_and_domain() {
        let f0 = ProductVector::reference(lin());
        let rho = Functional::vector_state(&f0);
        let b = BoundaryOperator::one_minus_lambda();
        assert_eq!(omega_z(ZERO, &rho, &b, &cfg()).unwrap().value, ZERO);
        assert!(matches!(omega_z(C::new(1.5, 0.0), &rho, &b, &cfg()), Err(Error::Domain(_))));
        let one = omega_z(ONE, &rho, &b, &cfg()).unwrap().value;
        let w1 = omega1(&rho, &b, &cfg()).unwrap().value;
        assert_eq!(one, w1);
    }

    #[test]
    fn omega1_single_term_when_first_factor_is_lambda_orthogonal() {
        // (g₁, e^{−x} f₁) = 0 kills every term with n ≥ 1
        let seq = lin();
        let f1 = e(1.0);
        let g1 = {
            let a = e(2.0);
            let c = inner_product(&a, &e(2.0)) / inner_product(&e(3.0), &e(2.0));
            // (e(3)·c − a, e^{−x} e(1)) = c/(4) − 1/3 with c = 4/3 ⇒ 0
            e(3.0).scale(c).add(&a.scale(C::new(-1.0, 0.0)))
        };
        assert!(inner_product(&g1, &f1.damp(ONE)).norm() < 1e-14);
        let f = ProductVector::new(vec![f1], seq.clone());
        let g = ProductVector::new(vec![g1], seq.clone());
        let rho = Functional::Vectors(vec![(ONE, f.clone(), g.clone())]);
        let b = BoundaryOperator::elementary(
            KOperator::elementary(vec![HalfLineOperator::rank_one(e(0.5), e(1.5))]),
            HalfLineOperator::rank_one(e(1.0), e(0.7)),
        );
        let v = omega1(&rho, &b, &cfg()).unwrap().value;
        let direct = rho
            .eval(&pi_apply(&b.terms[0].k, &b.terms[0].a0), &mut TailMemo::new())
            .unwrap();
        assert!((v - direct).norm() < 1e-12);
    }

    #[test]
    fn xi_unital_and_zero() {
        let seq = lin();
        let phi = e(1.0).scale(C::new(2f64.sqrt(), 0.0));
        let nu = HFunctional::vector_state(&HVector {
            k: ProductVector::reference(seq),
            h: phi,
        });
        let xi = xi_from_nu(&nu).unwrap();
        let v = xi
            .eval(&BoundaryOperator::one_minus_lambda(), &cfg(), &mut TailMemo::new())
            .unwrap();
        assert_relative_eq!(v.value.re, 1.0, epsilon = 1e-9);
        let z = xi_from_nu(&HFunctional { terms: vec![] }).unwrap();
        assert!(z.is_zero());
    }

    #[test]
    fn xi_telescoping_for_subnormalised_nu() {
        let seq = lin();
        let phi = e(1.0);
        let nu = HFunctional::vector_state(&HVector {
            k: ProductVector::reference(seq.clone()),
            h: phi.clone(),
        });
        let total = nu.total().unwrap().re;
        assert_relative_eq!(total, 0.5, epsilon = 1e-15);
        let xi = xi_from_nu(&nu).unwrap();
        let v = xi
            .eval(&BoundaryOperator::one_minus_lambda(), &cfg(), &mut TailMemo::new())
            .unwrap()
            .value
            .re;
        let nld = crate::tensorspace::linear_delta_limit() * inner_product(&phi, &phi.damp(ONE)).re;
        assert_relative_eq!(v, (total - nld) / (1.0 - nld), epsilon = 1e-9);
    }

    #[test]
    fn omega_full_equals_omega1_when_delta_vanishes() {
        let seq = lin();
        let f = ProductVector::new(vec![e(0.8), e(1.3), e(2.2)], seq.clone());
        let rho = delta_free_functional(&f).unwrap();
        assert!(rho.delta_value().unwrap().norm() < 1e-14);
        let nu = HFunctional::vector_state(&HVector {
            k: ProductVector::reference(seq),
            h: e(1.0).scale(C::new(2f64.sqrt(), 0.0)),
        });
        let xi = xi_from_nu(&nu).unwrap();
        let b = BoundaryOperator::one_minus_lambda();
        let w = omega_full(&rho, &b, &xi, &cfg()).unwrap().value;
        let w1 = omega1(&rho, &b, &cfg()).unwrap().value;
        assert!((w - w1).norm() < 1e-12);
    }

    #[test]
    fn decay_curve_vanishes_past_support() {
        let seq = lin();
        let f = ProductVector::new(vec![e(0.8), e(1.3).add(&e(0.4)), e(2.2)], seq);
        let rho = delta_free_functional(&f).unwrap();
        let curve = lemma_decay_curve(&rho, 6, 1e-10).unwrap();
        assert!(curve[0] > 1e-3);
        for v in &curve[3..] {
            assert!(*v <= 1e-12, "curve {curve:?}");
        }
    }

    #[test]
    fn decay_curve_guards() {
        let f0 = ProductVector::reference(lin());
        assert!(matches!(
            lemma_decay_curve(&Functional::vector_state(&f0), 4, 1e-10),
            Err(Error::Precondition { .. })
        ));
        assert!(lemma_decay_curve(&Functional::zero(), 3, 1e-10)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn truncated_weight_kills_early_support() {
        let seq = lin();
        let rho = Functional::vector_state(&ProductVector::reference(seq));
        let b = BoundaryOperator::elementary(KOperator::identity(), HalfLineOperator::Identity);
        assert!(truncate_weight(&OmegaSpec::Minimal, &rho, &b, 0.0, &cfg()).is_err());
        let v1 = truncate_weight(&OmegaSpec::Minimal, &rho, &b, 0.5, &cfg()).unwrap().re;
        let v2 = truncate_weight(&OmegaSpec::Minimal, &rho, &b, 0.25, &cfg()).unwrap().re;
        assert!(v1.is_finite() && v2 > v1 && v1 > 0.0);
    }

    #[test]
    fn partial_sums_nondecreasing_for_positive_pairs() {
        let seq = lin();
        let f = ProductVector::new(vec![e(0.6), e(1.7)], seq);
        let rho = Functional::vector_state(&f);
        let s = omega1_partial_sums(&rho, &BoundaryOperator::one_minus_lambda(), 20).unwrap();
        assert!(s[0].re >= 0.0);
        assert!(s.windows(2).all(|w| w[1].re >= w[0].re - 1e-15));
    }

    #[test]
    fn density_and_vector_paths_agree() {
        let basis = Arc::new(KBasis::new(lin(), 2, 2).unwrap());
        let dens = CMat::from_fn(4, 4, |i, j| C::new(1.0 / (1.0 + i as f64 + j as f64), 0.1 * (i as f64 - j as f64)));
        let dens = &dens * dens.adjoint();
        let rho_d = Functional::density(basis.clone(), dens).unwrap();
        let rho_v = Functional::Vectors(rho_d.to_vectors());
        let b = BoundaryOperator::one_minus_lambda();
        let a = omega1(&rho_d, &b, &cfg()).unwrap().value;
        let c = omega1(&rho_v, &b, &cfg()).unwrap().value;
        assert!((a - c).norm() < 1e-9);
        assert!((rho_d.norm() - rho_v.norm()).abs() < 1e-9);
    }

    #[test]
    fn nonnormal_demo_vanishes_and_diverges() {
        let rows = nonnormal_weight_demo(1.5, 8, 20.0, 4000).unwrap();
        for r in &rows {
            assert!(r.weight_value < 1e-10);
            assert!((r.partial_mass - r.mass_oracle).abs() / r.mass_oracle < 1e-2);
        }
        let ratio = rows[7].partial_mass / rows[3].partial_mass;
        // mass grows like n^{s−1}
        assert!(ratio > 1.3);
        assert!(nonnormal_weight_demo(2.5, 2, 10.0, 100).is_err());
    }

    fn rep_setup(n: usize) -> (KBasis, Vec<ExpKernelVector>, BoundaryWeight) {
        let seq = lin();
        let basis = KBasis::new(seq.clone(), n, 2).unwrap();
        let v = crate::halfline::orthonormalize(&[e(1.0), e(2.0)]).unwrap();
        let h = ExpKernelVector::exp(C::new(2f64.sqrt(), 0.0), ONE).unwrap();
        let nu = HFunctional::vector_state(&HVector {
            k: ProductVector::reference(seq),
            h,
        });
        (basis, v, xi_from_nu(&nu).unwrap())
    }

    #[test]
    fn boundary_rep_is_cp_and_dominates() {
        let (basis, v, xi) = rep_setup(1);
        let a = generalized_boundary_rep(&basis, &OmegaSpec::Minimal, 0.5, &v, &cfg()).unwrap();
        let b = generalized_boundary_rep(&basis, &OmegaSpec::Full(xi), 0.5, &v, &cfg()).unwrap();
        let min = |m: &CMat| crate::cornercheck::choi_min_eig(m, a.d_in, a.d_out, 1e-8).unwrap();
        assert!(min(&a.matrix).is_cp);
        assert!(min(&b.matrix).is_cp);
        assert!(min(&(&b.matrix - &a.matrix)).is_cp);
        assert!((&b.matrix - &a.matrix).norm() > 1e-3);
    }

    #[test]
    fn zero_xi_is_minimal() {
        let (basis, v, _) = rep_setup(1);
        let a = generalized_boundary_rep(&basis, &OmegaSpec::Minimal, 0.25, &v, &cfg()).unwrap();
        let b = generalized_boundary_rep(&basis, &OmegaSpec::Full(BoundaryWeight::zero()), 0.25, &v, &cfg()).unwrap();
        assert!((&a.matrix - &b.matrix).norm() < 1e-15);
        assert!(matches!(
            generalized_boundary_rep(&basis, &OmegaSpec::Minimal, 0.0, &v, &cfg()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn compressed_solve_approaches_exact() {
        let mut gaps = Vec::new();
        for n in 1..=3 {
            let (basis, v, _) = rep_setup(n);
            let a = generalized_boundary_rep(&basis, &OmegaSpec::Minimal, 0.5, &v, &cfg()).unwrap();
            let c = compressed_boundary_rep(&basis, &OmegaSpec::Minimal, 0.5, &v, &cfg()).unwrap();
            assert!(c.residual < 1e-12);
            gaps.push((a.matrix[(0, 0)] - c.map.matrix[(0, 0)]).norm());
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    mod props {
        use super::super::*;
        use crate::tensorspace::LambdaSequence;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gram_densities_are_positive_with_trace_norm(entries in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16)) {
                let basis = Arc::new(KBasis::new(Arc::new(LambdaSequence::linear()), 2, 2).unwrap());
                let a = DMatrix::from_iterator(4, 4, entries.iter().map(|(x, y)| C::new(*x, *y)));
                let dm = &a * a.adjoint();
                let tr = dm.trace().re;
                let rho = Functional::density(basis, dm).unwrap();
                prop_assert!(rho.is_positive(1e-10));
                prop_assert!((rho.norm() - tr).abs() <= 1e-10 * (1.0 + tr));
            }
        }
    }
}
