//! The half-line space `L²(0,∞)`.
//!
//! Two backends live here. The analytic backend works with finite sums of
//! decaying exponentials, whose inner products are exact rational
//! expressions in the rates. The grid backend samples functions at cell
//! midpoints and is used for transport.
//!
//! The kernel of `Q₀` is fixed to `q(x) = e^{-x/2}`. This is the exponential
//! for which `Φ(ρ)(I) = ρ(I)`, `Φ(ρ)(Λ(C)) = ½ρ(C)` and
//! `Φ(ρ)(U(t)AU(t)*) = e^{-t}Φ(ρ)(A)` all hold.

use nalgebra::DMatrix;
use num_complex::Complex64 as C;

use crate::{Error, Result};

const ZERO: C = C::new(0.0, 0.0);

fn cut_integral(rate: C, cut: f64) -> C {
    if cut == 0.0 {
        rate.inv()
    } else {
        (-rate * cut).exp() / rate
    }
}

/// `x ↦ Σ cⱼ e^{−μⱼx}` with `Re μⱼ > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpKernelVector {
    terms: Vec<(C, C)>,
}

impl ExpKernelVector {
    /// Builds a vector from `(coefficient, rate)` pairs.
    pub fn new(terms: Vec<(C, C)>) -> Result<Self> {
        for (_, mu) in &terms {
            if !(mu.re > 0.0) || !mu.im.is_finite() {
                return Err(Error::InvalidVector(format!("rate {mu} has non-positive real part")));
            }
        }
        Ok(Self { terms })
    }

    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    /// `c·e^{−μx}`.
    pub fn exp(coef: C, rate: C) -> Result<Self> {
        Self::new(vec![(coef, rate)])
    }

    /// The unit reference vector `λ e^{−½λ²x}`.
    pub fn reference(lambda: f64) -> Self {
        assert!(lambda > 0.0, "reference vectors need λ > 0");
        Self {
            terms: vec![(C::new(lambda, 0.0), C::new(0.5 * lambda * lambda, 0.0))],
        }
    }

    pub fn terms(&self) -> &[(C, C)] {
        &self.terms
    }

    pub fn eval(&self, x: f64) -> C {
        self.terms.iter().map(|(c, mu)| c * (-mu * x).exp()).sum()
    }

    pub fn scale(&self, s: C) -> Self {
        Self {
            terms: self.terms.iter().map(|(c, mu)| (c * s, *mu)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Self { terms }
    }

    /// Multiplication by `e^{−sx}` with `Re s ≥ 0`.
    pub fn damp(&self, s: C) -> Self {
        Self {
            terms: self.terms.iter().map(|(c, mu)| (*c, mu + s)).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        inner_product(self, self).re.max(0.0).sqrt()
    }
}

/// `(f, g) = ∫₀^∞ conj(f) g dx`, conjugate-linear in `f`.
pub fn inner_product(f: &ExpKernelVector, g: &ExpKernelVector) -> C {
    inner_product_from(f, g, 0.0)
}

/// `∫_cut^∞ conj(f) g dx`.
pub fn inner_product_from(f: &ExpKernelVector, g: &ExpKernelVector, cut: f64) -> C {
    let mut s = ZERO;
    for (c, mu) in &f.terms {
        for (d, nu) in &g.terms {
            s += c.conj() * d * cut_integral(mu.conj() + nu, cut);
        }
    }
    s
}

/// Single-factor Λ: every rate grows by one.
pub fn apply_lambda_factor(f: &ExpKernelVector) -> ExpKernelVector {
    f.damp(C::new(1.0, 0.0))
}

/// Gram–Schmidt on exponential vectors using exact inner products.
pub fn orthonormalize(raw: &[ExpKernelVector]) -> Result<Vec<ExpKernelVector>> {
    let mut out: Vec<ExpKernelVector> = Vec::with_capacity(raw.len());
    for v in raw {
        let mut w = v.clone();
        for e in &out {
            w = w.add(&e.scale(-inner_product(e, v)));
        }
        let n = w.norm();
        if n < 1e-10 {
            return Err(Error::InvalidVector("linearly dependent basis".into()));
        }
        out.push(w.scale(C::new(1.0 / n, 0.0)));
    }
    Ok(out)
}

/// A bounded multiplier `x ↦ Σ cⱼ e^{−sⱼx}` with `Re sⱼ ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpMultiplier {
    terms: Vec<(C, C)>,
}

impl ExpMultiplier {
    pub fn new(terms: Vec<(C, C)>) -> Result<Self> {
        for (_, s) in &terms {
            if s.re < 0.0 {
                return Err(Error::InvalidVector(format!("multiplier rate {s} grows")));
            }
        }
        Ok(Self { terms })
    }

    /// Multiplication by `e^{−sx}`.
    pub fn exp(s: f64) -> Self {
        Self {
            terms: vec![(C::new(1.0, 0.0), C::new(s, 0.0))],
        }
    }

    /// `1 − e^{−x}`.
    pub fn one_minus_lambda() -> Self {
        Self {
            terms: vec![(C::new(1.0, 0.0), ZERO), (C::new(-1.0, 0.0), C::new(1.0, 0.0))],
        }
    }

    pub fn terms(&self) -> &[(C, C)] {
        &self.terms
    }

    pub fn eval(&self, x: f64) -> C {
        self.terms.iter().map(|(c, s)| c * (-s * x).exp()).sum()
    }

    pub fn apply(&self, f: &ExpKernelVector) -> ExpKernelVector {
        let mut terms = Vec::with_capacity(self.terms.len() * f.terms.len());
        for (c, s) in &self.terms {
            for (d, mu) in &f.terms {
                terms.push((c * d, mu + s));
            }
        }
        ExpKernelVector { terms }
    }

    fn adjoint(&self) -> Self {
        Self {
            terms: self.terms.iter().map(|(c, s)| (c.conj(), s.conj())).collect(),
        }
    }

    fn product(&self, other: &Self) -> Self {
        let mut terms = Vec::new();
        for (c, s) in &self.terms {
            for (d, r) in &other.terms {
                terms.push((c * d, s + r));
            }
        }
        Self { terms }
    }
}

/// Bounded operators on `L²(0,∞)`.
#[derive(Debug, Clone, PartialEq)]
pub enum HalfLineOperator {
    Identity,
    Multiplier(ExpMultiplier),
    /// `Σ w |ket⟩⟨bra|`.
    RankOneSum(Vec<(ExpKernelVector, ExpKernelVector, C)>),
    /// `Γ(A) = ∫ e^{−t} U(t) A U(t)* dt`, evaluated lazily.
    Gamma(Box<HalfLineOperator>),
    /// `U(t) A U(t)*`.
    Translated(f64, Box<HalfLineOperator>),
    /// `E(t,∞) A E(t,∞)`.
    Restricted(f64, Box<HalfLineOperator>),
    /// `E(0,t) A E(0,t)` for multipliers.
    Window(f64, Box<HalfLineOperator>),
    /// Dense matrix on a midpoint grid of the given length.
    GridMatrix { length: f64, matrix: DMatrix<C> },
}

impl HalfLineOperator {
    /// `|ket⟩⟨bra|`.
    pub fn rank_one(ket: ExpKernelVector, bra: ExpKernelVector) -> Self {
        Self::RankOneSum(vec![(bra, ket, C::new(1.0, 0.0))])
    }

    pub fn lambda() -> Self {
        Self::Multiplier(ExpMultiplier::exp(1.0))
    }

    pub fn zero() -> Self {
        Self::RankOneSum(Vec::new())
    }

    /// `E(t,∞) A E(t,∞)`; `t = 0` leaves the operator unchanged.
    pub fn restrict(&self, t: f64) -> Self {
        if t == 0.0 {
            return self.clone();
        }
        Self::Restricted(t, Box::new(self.clone()))
    }

    /// `E(0,t) A E(0,t)`; only multipliers have exact elements.
    pub fn window(&self, t: f64) -> Self {
        Self::Window(t, Box::new(self.clone()))
    }

    /// `(g, A f)`.
    pub fn element(&self, g: &ExpKernelVector, f: &ExpKernelVector) -> Result<C> {
        self.element_from(g, f, 0.0)
    }

    /// `(χg, A χf)` with `χ` the indicator of `[cut, ∞)`.
    pub fn element_from(&self, g: &ExpKernelVector, f: &ExpKernelVector, cut: f64) -> Result<C> {
        match self {
            Self::Identity => Ok(inner_product_from(g, f, cut)),
            Self::Multiplier(m) => Ok(inner_product_from(g, &m.apply(f), cut)),
            Self::RankOneSum(list) => Ok(list
                .iter()
                .map(|(bra, ket, w)| w * inner_product_from(g, ket, cut) * inner_product_from(bra, f, cut))
                .sum()),
            Self::Gamma(inner) => {
                Self::require_uncut(cut)?;
                Self::pure_expand(g, f, |a, b| {
                    let e = inner.element(&pure(a), &pure(b))?;
                    Ok(e / (C::new(1.0, 0.0) + a.conj() + b))
                })
            }
            Self::Translated(t, inner) => {
                Self::require_uncut(cut)?;
                let t = *t;
                Self::pure_expand(g, f, |a, b| {
                    let e = inner.element(&pure(a), &pure(b))?;
                    Ok(e * (-(a.conj() + b) * t).exp())
                })
            }
            Self::Restricted(t, inner) => inner.element_from(g, f, cut.max(*t)),
            Self::Window(t, inner) => match inner.as_ref() {
                Self::Identity | Self::Multiplier(_) => {
                    if cut >= *t {
                        return Ok(ZERO);
                    }
                    Ok(inner.element_from(g, f, cut)? - inner.element_from(g, f, *t)?)
                }
                _ => Err(Error::UnsupportedRepresentation("windows of non-multipliers".into())),
            },
            Self::GridMatrix { .. } => Err(Error::UnsupportedRepresentation(
                "grid matrices have no exact exponential matrix elements".into(),
            )),
        }
    }

    fn require_uncut(cut: f64) -> Result<()> {
        if cut != 0.0 {
            return Err(Error::UnsupportedRepresentation("cut elements of lazy operators".into()));
        }
        Ok(())
    }

    fn pure_expand(
        g: &ExpKernelVector,
        f: &ExpKernelVector,
        mut kernel: impl FnMut(C, C) -> Result<C>,
    ) -> Result<C> {
        let mut s = ZERO;
        for (c, a) in &g.terms {
            for (d, b) in &f.terms {
                s += c.conj() * d * kernel(*a, *b)?;
            }
        }
        Ok(s)
    }

    pub fn adjoint(&self) -> Self {
        match self {
            Self::Identity => Self::Identity,
            Self::Multiplier(m) => Self::Multiplier(m.adjoint()),
            Self::RankOneSum(list) => Self::RankOneSum(
                list.iter().map(|(bra, ket, w)| (ket.clone(), bra.clone(), w.conj())).collect(),
            ),
            Self::Gamma(a) => Self::Gamma(Box::new(a.adjoint())),
            Self::Translated(t, a) => Self::Translated(*t, Box::new(a.adjoint())),
            Self::Restricted(t, a) => Self::Restricted(*t, Box::new(a.adjoint())),
            Self::Window(t, a) => Self::Window(*t, Box::new(a.adjoint())),
            Self::GridMatrix { length, matrix } => Self::GridMatrix {
                length: *length,
                matrix: matrix.adjoint(),
            },
        }
    }

    /// Operator product `self · other`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        use HalfLineOperator as H;
        Ok(match (self, other) {
            (H::Identity, b) => b.clone(),
            (a, H::Identity) => a.clone(),
            (H::Multiplier(m), H::Multiplier(n)) => H::Multiplier(m.product(n)),
            (H::Multiplier(m), H::RankOneSum(list)) => H::RankOneSum(
                list.iter().map(|(bra, ket, w)| (bra.clone(), m.apply(ket), *w)).collect(),
            ),
            (H::RankOneSum(list), H::Multiplier(m)) => {
                let ma = m.adjoint();
                H::RankOneSum(list.iter().map(|(bra, ket, w)| (ma.apply(bra), ket.clone(), *w)).collect())
            }
            (H::RankOneSum(l1), H::RankOneSum(l2)) => {
                let mut out = Vec::with_capacity(l1.len() * l2.len());
                for (bra1, ket1, w1) in l1 {
                    for (bra2, ket2, w2) in l2 {
                        out.push((bra2.clone(), ket1.clone(), w1 * w2 * inner_product(bra1, ket2)));
                    }
                }
                H::RankOneSum(out)
            }
            (H::GridMatrix { length, matrix }, H::GridMatrix { matrix: m2, .. }) => H::GridMatrix {
                length: *length,
                matrix: matrix * m2,
            },
            _ => {
                return Err(Error::UnsupportedRepresentation(
                    "product of lazy or mixed-backend operators".into(),
                ))
            }
        })
    }

    /// Gram-matrix positivity test for rank-one sums.
    pub fn is_positive(&self, tol: f64) -> Result<bool> {
        match self {
            Self::Identity => Ok(true),
            Self::RankOneSum(list) => {
                let mut vecs: Vec<ExpKernelVector> = Vec::new();
                for (bra, ket, _) in list {
                    vecs.push(bra.clone());
                    vecs.push(ket.clone());
                }
                let basis = orthonormal_span(&vecs);
                let n = basis.len();
                let m = DMatrix::from_fn(n, n, |i, j| self.element(&basis[i], &basis[j]).unwrap_or(ZERO));
                let ev = crate::linalg::hermitian_eigenvalues(&m);
                let herm = (&m - m.adjoint()).norm() <= tol.max(1e-12) * (1.0 + m.norm());
                Ok(herm && ev.first().is_none_or(|e| *e >= -tol))
            }
            _ => Err(Error::UnsupportedRepresentation("positivity needs a rank-one sum".into())),
        }
    }
}

fn pure(rate: C) -> ExpKernelVector {
    ExpKernelVector {
        terms: vec![(C::new(1.0, 0.0), rate)],
    }
}

fn orthonormal_span(vecs: &[ExpKernelVector]) -> Vec<ExpKernelVector> {
    let mut out: Vec<ExpKernelVector> = Vec::new();
    for v in vecs {
        let mut w = v.clone();
        for e in &out {
            w = w.add(&e.scale(-inner_product(e, &w)));
        }
        let n = w.norm();
        if n > 1e-8 * v.norm().max(1e-300) {
            out.push(w.scale(C::new(1.0 / n, 0.0)));
        }
    }
    out
}

/// `Γ(A)`; grid matrices must use [`apply_gamma_grid`] instead.
pub fn apply_gamma(a: &HalfLineOperator) -> Result<HalfLineOperator> {
    if let HalfLineOperator::GridMatrix { .. } = a {
        return Err(Error::UnsupportedRepresentation(
            "Γ on grid matrices is only available as approximate quadrature".into(),
        ));
    }
    Ok(HalfLineOperator::Gamma(Box::new(a.clone())))
}

/// `U(t) A U(t)*`.
pub fn translate_operator(a: &HalfLineOperator, t: f64) -> HalfLineOperator {
    HalfLineOperator::Translated(t, Box::new(a.clone()))
}

/// The `Q₀` kernel `q(x) = e^{−x/2}`.
pub fn q0_kernel() -> ExpKernelVector {
    pure(C::new(0.5, 0.0))
}

/// `Φ(ρ)(A_K ⊗ A₀) = ρ(A_K)·(q, A₀ q)`, given the value `ρ(A_K)`.
pub fn phi_functional(rho_of_k_part: C, a0: &HalfLineOperator) -> Result<C> {
    let q = q0_kernel();
    Ok(rho_of_k_part * a0.element(&q, &q)?)
}

/// Samples on the midpoints of `n` equal cells of `[0, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridVector {
    length: f64,
    values: Vec<C>,
}

impl GridVector {
    pub fn new(length: f64, values: Vec<C>) -> Result<Self> {
        if !(length > 0.0) || values.is_empty() {
            return Err(Error::InvalidVector("grid needs positive length and points".into()));
        }
        Ok(Self { length, values })
    }

    pub fn from_fn(length: f64, points: usize, f: impl Fn(f64) -> C) -> Result<Self> {
        let h = length / points as f64;
        Self::new(length, (0..points).map(|j| f((j as f64 + 0.5) * h)).collect())
    }

    pub fn sample(f: &ExpKernelVector, length: f64, points: usize) -> Result<Self> {
        Self::from_fn(length, points, |x| f.eval(x))
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn points(&self) -> usize {
        self.values.len()
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.values.len() as f64
    }

    pub fn values(&self) -> &[C] {
        &self.values
    }

    pub fn inner(&self, other: &Self) -> Result<C> {
        if self.points() != other.points() || self.length != other.length {
            return Err(Error::Shape("grid vectors on different grids".into()));
        }
        let s: C = self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum();
        Ok(s * self.spacing())
    }

    pub fn norm(&self) -> f64 {
        (self.spacing() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Right translation by `t`, snapped to the nearest whole number of cells.
    /// Returns the translated vector and the snap distance.
    pub fn translate(&self, t: f64) -> Result<(Self, f64)> {
        if t < 0.0 {
            return Err(Error::Domain("translation time must be nonnegative".into()));
        }
        let h = self.spacing();
        let k = (t / h).round() as usize;
        let snap = (t - k as f64 * h).abs();
        let n = self.points();
        let mut values = vec![ZERO; n];
        if k < n {
            values[k..].copy_from_slice(&self.values[..n - k]);
        }
        Ok((Self { length: self.length, values }, snap))
    }

    pub fn to_column(&self) -> nalgebra::DVector<C> {
        nalgebra::DVector::from_column_slice(&self.values)
    }
}

/// Matrix of `U(kh)` on an `n`-cell grid.
pub fn translation_matrix(n: usize, k: usize) -> DMatrix<C> {
    DMatrix::from_fn(n, n, |i, j| if i >= k && i - k == j { C::new(1.0, 0.0) } else { ZERO })
}

/// `E(t) = I − U(t)U(t)*` on an `n`-cell grid of the given length.
pub fn interval_projection(length: f64, n: usize, t: f64) -> DMatrix<C> {
    let k = ((t * n as f64 / length).round() as usize).min(n);
    let u = translation_matrix(n, k);
    DMatrix::identity(n, n) - &u * u.adjoint()
}

/// Quadrature approximation of `Γ(A)` for a grid matrix, using the
/// left-endpoint rule in `t` over whole cells up to `t_max`.
pub fn apply_gamma_grid(a: &HalfLineOperator, t_max: f64) -> Result<HalfLineOperator> {
    let HalfLineOperator::GridMatrix { length, matrix } = a else {
        return Err(Error::UnsupportedRepresentation("expected a grid matrix".into()));
    };
    let n = matrix.nrows();
    let h = length / n as f64;
    let steps = ((t_max / h).round() as usize).min(n);
    let mut out = DMatrix::zeros(n, n);
    // (U A U*)[i, j] = A[i − k, j − k]
    for k in 0..steps {
        let w = h * (-(k as f64 + 0.5) * h).exp();
        for j in k..n {
            for i in k..n {
                out[(i, j)] += matrix[(i - k, j - k)] * w;
            }
        }
    }
    Ok(HalfLineOperator::GridMatrix { length: *length, matrix: out })
}
