//! The infinite tensor product `K = ⊗ L²(0,∞)` along the reference vectors
//! `kᵢ(x) = λᵢ e^{−½λᵢ²x}`.
//!
//! Vectors carry finitely many explicit head factors followed by an implicit
//! reference tail. Operators are elementary tensors with a finite head and a
//! uniform tail rule. Every pairing is a finite product times an infinite
//! tail product computed from the λ-sequence. Δ is never built as a matrix.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C;

use crate::halfline::{inner_product, orthonormalize, ExpKernelVector, ExpMultiplier, HalfLineOperator};
use crate::linalg::{kron, CMat};
use crate::{Error, Result};

const ONE: C = C::new(1.0, 0.0);

/// `∏_{n≥1} n²/(1+n²) = π / sinh π`.
pub fn linear_delta_limit() -> f64 {
    PI / PI.sinh()
}

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaKind {
    /// `λₙ = n`.
    Linear,
    /// `λₙ = 2ⁿ`.
    Geometric,
    /// `λₙ = c` for every `n`.
    Constant(f64),
    /// Explicit `λ₁..λ_L`, continued by `λₙ = n` beyond the list.
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSequence {
    kind: LambdaKind,
}

/// Partial sums of the two admissibility series and their verdicts.
#[derive(Debug, Clone, PartialEq)]
pub struct Admissibility {
    pub horizon: usize,
    /// `Σ λₙ⁻²` up to `horizon/2` and `horizon`.
    pub first_sums: (f64, f64),
    /// `Σ |λₙ−λₙ₊₁|²/(λₙ²+λₙ₊₁²)` up to `horizon/2` and `horizon`.
    pub second_sums: (f64, f64),
    pub first_converges: bool,
    pub second_converges: bool,
}

impl LambdaSequence {
    pub fn new(kind: LambdaKind) -> Result<Self> {
        match &kind {
            LambdaKind::Constant(c) if !(*c > 0.0 && c.is_finite()) => {
                return Err(Error::InvalidSequence(format!("constant λ = {c} is not positive")))
            }
            LambdaKind::Custom(v) if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) => {
                return Err(Error::InvalidSequence("custom λ values must be positive".into()))
            }
            _ => {}
        }
        Ok(Self { kind })
    }

    pub fn linear() -> Self {
        Self { kind: LambdaKind::Linear }
    }

    pub fn kind(&self) -> &LambdaKind {
        &self.kind
    }

    /// `λᵢ` for `i ≥ 1`.
    pub fn lambda(&self, i: usize) -> f64 {
        assert!(i >= 1, "λ is indexed from 1");
        match &self.kind {
            LambdaKind::Linear => i as f64,
            LambdaKind::Geometric => 2f64.powi(i.min(1000) as i32),
            LambdaKind::Constant(c) => *c,
            LambdaKind::Custom(v) => v.get(i - 1).copied().unwrap_or(i as f64),
        }
    }

    /// `λᵢ₊₁/λᵢ`, exact for the geometric kind.
    fn ratio(&self, i: usize) -> f64 {
        match &self.kind {
            LambdaKind::Geometric => 2.0,
            _ => self.lambda(i + 1) / self.lambda(i),
        }
    }

    pub fn reference(&self, i: usize) -> ExpKernelVector {
        ExpKernelVector::reference(self.lambda(i))
    }

    /// `(kᵢ, e^{−x}kᵢ) = λᵢ²/(1+λᵢ²)`.
    pub fn q(&self, i: usize) -> f64 {
        let l = self.lambda(i);
        if l.is_infinite() {
            return 1.0;
        }
        l * l / (1.0 + l * l)
    }

    /// `(kᵢ, kⱼ) = 2λᵢλⱼ/(λᵢ²+λⱼ²)`.
    pub fn overlap(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        let (a, b) = (self.lambda(i.min(j)), self.lambda(i.max(j)));
        let r = a / b;
        2.0 * r / (1.0 + r * r)
    }

    /// `∏_{i=from}^{to} qᵢ`.
    pub fn q_product(&self, from: usize, to: usize) -> f64 {
        (from.max(1)..=to).map(|i| self.q(i)).product()
    }

    /// `∏_{i≥from} qᵢ`, the reference pairing of Δ restricted to the tail.
    pub fn delta_tail(&self, from: usize) -> f64 {
        let from = from.max(1);
        match &self.kind {
            LambdaKind::Linear => linear_delta_limit() / self.q_product(1, from - 1),
            LambdaKind::Custom(v) => {
                let l = v.len();
                if from > l {
                    linear_delta_limit() / Self::linear().q_product(1, from - 1)
                } else {
                    self.q_product(from, l) * linear_delta_limit() / Self::linear().q_product(1, l)
                }
            }
            LambdaKind::Constant(_) => 0.0,
            LambdaKind::Geometric => {
                let mut p = 1.0;
                let mut i = from;
                loop {
                    let q = self.q(i);
                    if 1.0 - q < 1e-18 {
                        break p;
                    }
                    p *= q;
                    i += 1;
                }
            }
        }
    }

    /// `∏_{i≥from} (k_{i+oa}, k_{i+ob})`.
    pub fn overlap_tail(&self, from: usize, oa: i64, ob: i64) -> f64 {
        if oa == ob {
            return 1.0;
        }
        let idx = |i: usize, o: i64| -> usize {
            let k = i as i64 + o;
            assert!(k >= 1, "reference index below 1");
            k as usize
        };
        let shift = (oa - ob).unsigned_abs() as usize;
        let horizon = from + 20_000.max(200 * shift);
        let mut log = 0.0;
        let mut last = 0.0;
        for i in from..horizon {
            let g = self.overlap(idx(i, oa), idx(i, ob));
            if g <= 0.0 {
                return 0.0;
            }
            last = g.ln();
            log += last;
            if log < -700.0 {
                return 0.0;
            }
            if last.abs() < 1e-18 {
                return log.exp();
            }
        }
        // remainder of a 1/i² tail: Σ_{i>H} c/i² ≈ H·(c/H²)
        (log + horizon as f64 * last).exp()
    }

    /// Partial sums of both admissibility series and a Cauchy verdict.
    pub fn check(&self, horizon: usize) -> Result<Admissibility> {
        check_lambda_sequence(self, horizon)
    }
}

/// Admissibility of a λ-sequence: both series must look convergent. A
/// series is judged convergent when its increment over the second half of
/// the horizon stays below `1e-2`.
pub fn check_lambda_sequence(seq: &LambdaSequence, horizon: usize) -> Result<Admissibility> {
    if horizon < 2 {
        return Err(Error::InvalidSequence("horizon must be at least 2".into()));
    }
    let half = horizon / 2;
    let mut s1 = (0.0, 0.0);
    let mut s2 = (0.0, 0.0);
    let mut a = 0.0;
    let mut b = 0.0;
    for n in 1..=horizon {
        let l = seq.lambda(n);
        a += if l.is_infinite() { 0.0 } else { 1.0 / (l * l) };
        let r = seq.ratio(n);
        b += (1.0 - r).powi(2) / (1.0 + r * r);
        if n == half {
            s1.0 = a;
            s2.0 = b;
        }
    }
    s1.1 = a;
    s2.1 = b;
    let tol = 1e-2;
    Ok(Admissibility {
        horizon,
        first_sums: s1,
        second_sums: s2,
        first_converges: s1.1 - s1.0 < tol,
        second_converges: s2.1 - s2.0 < tol,
    })
}

/// A product vector: explicit head factors, then `k_{i+offset}` at every
/// tail position `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductVector {
    head: Vec<ExpKernelVector>,
    offset: i64,
    seq: Arc<LambdaSequence>,
}

impl ProductVector {
    pub fn new(head: Vec<ExpKernelVector>, seq: Arc<LambdaSequence>) -> Self {
        Self { head, offset: 0, seq }
    }

    pub fn with_offset(head: Vec<ExpKernelVector>, offset: i64, seq: Arc<LambdaSequence>) -> Result<Self> {
        if head.len() as i64 + 1 + offset < 1 {
            return Err(Error::InvalidVector("tail would start below k₁".into()));
        }
        Ok(Self { head, offset, seq })
    }

    /// `F₀ = k₁ ⊗ k₂ ⊗ ⋯`.
    pub fn reference(seq: Arc<LambdaSequence>) -> Self {
        Self::new(Vec::new(), seq)
    }

    pub fn head(&self) -> &[ExpKernelVector] {
        &self.head
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn sequence(&self) -> &Arc<LambdaSequence> {
        &self.seq
    }

    /// Factor at position `i ≥ 1`.
    pub fn factor(&self, i: usize) -> ExpKernelVector {
        if i <= self.head.len() {
            self.head[i - 1].clone()
        } else {
            self.seq.reference((i as i64 + self.offset) as usize)
        }
    }

    pub fn scale_first(&self, s: C) -> Self {
        let mut v = self.clone();
        if v.head.is_empty() {
            v.head.push(v.seq.reference((1 + v.offset) as usize));
        }
        v.head[0] = v.head[0].scale(s);
        v
    }
}

/// `(F, G) = ∏ᵢ (fᵢ, gᵢ)`.
pub fn product_inner(f: &ProductVector, g: &ProductVector) -> C {
    let p = f.head.len().max(g.head.len());
    let mut s = ONE;
    for i in 1..=p {
        s *= inner_product(&f.factor(i), &g.factor(i));
    }
    s * f.seq.overlap_tail(p + 1, f.offset, g.offset)
}

/// A vector `F ⊗ h` of `H = K ⊗ L²(0,∞)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HVector {
    pub k: ProductVector,
    pub h: ExpKernelVector,
}

impl HVector {
    pub fn inner(&self, other: &Self) -> C {
        product_inner(&self.k, &other.k) * inner_product(&self.h, &other.h)
    }
}

/// `S₀(F ⊗ h) = h ⊗ F` without truncation; the tail moves one slot right.
pub fn s0_apply_exact(v: &HVector) -> ProductVector {
    let mut head = Vec::with_capacity(v.k.head.len() + 1);
    head.push(v.h.clone());
    head.extend(v.k.head.iter().cloned());
    ProductVector {
        head,
        offset: v.k.offset - 1,
        seq: v.k.seq.clone(),
    }
}

/// `S₀*(f₁ ⊗ f₂ ⊗ ⋯) = (f₂ ⊗ f₃ ⊗ ⋯) ⊗ f₁`.
pub fn s0_adjoint_exact(f: &ProductVector) -> HVector {
    let first = f.factor(1);
    let head = if f.head.is_empty() { Vec::new() } else { f.head[1..].to_vec() };
    HVector {
        k: ProductVector {
            head,
            offset: f.offset + 1,
            seq: f.seq.clone(),
        },
        h: first,
    }
}

/// `S₀` at truncation level `n`: `h` becomes factor 1, factor `i` becomes
/// `i+1`, the old factor `n` is dropped and the reference tail resumes.
/// Returns the image and the fidelity `|(f_n, k_n)|`.
pub fn s0_apply(v: &HVector, n: usize) -> Result<(ProductVector, f64)> {
    if v.k.offset != 0 {
        return Err(Error::UnsupportedRepresentation("truncated shift needs an unshifted tail".into()));
    }
    if v.k.head.len() > n || n == 0 {
        return Err(Error::TruncationExceeded {
            needed: v.k.head.len(),
            available: n,
        });
    }
    let f_n = v.k.factor(n);
    let fidelity = inner_product(&f_n, &v.k.seq.reference(n)).norm();
    let mut head = Vec::with_capacity(n);
    head.push(v.h.clone());
    for i in 1..n {
        head.push(v.k.factor(i));
    }
    Ok((ProductVector::new(head, v.k.seq.clone()), fidelity))
}

/// Operator applied at every tail position.
#[derive(Debug, Clone, PartialEq)]
pub enum KTail {
    Identity,
    /// Multiplication by `e^{−x}` in every remaining factor (Δ-like).
    Lambda,
    /// `|k_{i+offset}⟩⟨k_{i+offset}|` at position `i`.
    Projector(i64),
}

/// An elementary tensor `coef · A₁ ⊗ ⋯ ⊗ A_w ⊗ (tail)` on `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct KOperator {
    pub coef: C,
    pub head: Vec<HalfLineOperator>,
    pub tail: KTail,
}

impl KOperator {
    pub fn identity() -> Self {
        Self {
            coef: ONE,
            head: Vec::new(),
            tail: KTail::Identity,
        }
    }

    /// `Δ = e^{−x} ⊗ e^{−x} ⊗ ⋯`.
    pub fn delta() -> Self {
        Self {
            coef: ONE,
            head: Vec::new(),
            tail: KTail::Lambda,
        }
    }

    pub fn elementary(head: Vec<HalfLineOperator>) -> Self {
        Self {
            coef: ONE,
            head,
            tail: KTail::Identity,
        }
    }

    /// `|F⟩⟨G|` for product vectors with unshifted tails.
    pub fn rank_one(f: &ProductVector, g: &ProductVector) -> Result<Self> {
        if f.offset != g.offset {
            return Err(Error::UnsupportedRepresentation("rank-one with mismatched tails".into()));
        }
        let w = f.head.len().max(g.head.len());
        Ok(Self {
            coef: ONE,
            head: (1..=w)
                .map(|i| HalfLineOperator::rank_one(f.factor(i), g.factor(i)))
                .collect(),
            tail: KTail::Projector(f.offset),
        })
    }

    /// Operator at position `i ≥ 1`.
    pub fn factor(&self, i: usize) -> HalfLineOperator {
        if i <= self.head.len() {
            return self.head[i - 1].clone();
        }
        match &self.tail {
            KTail::Identity => HalfLineOperator::Identity,
            KTail::Lambda => HalfLineOperator::lambda(),
            KTail::Projector(o) => {
                // the sequence is unknown here; callers use pairing routines
                panic!("projector tail factor {i} with offset {o} needs a λ-sequence")
            }
        }
    }

    pub(crate) fn factor_with(&self, i: usize, seq: &LambdaSequence) -> HalfLineOperator {
        match (&self.tail, i > self.head.len()) {
            (KTail::Projector(o), true) => {
                let k = seq.reference((i as i64 + o) as usize);
                HalfLineOperator::rank_one(k.clone(), k)
            }
            _ => self.factor(i),
        }
    }

    pub fn adjoint(&self) -> Self {
        Self {
            coef: self.coef.conj(),
            head: self.head.iter().map(|a| a.adjoint()).collect(),
            tail: self.tail.clone(),
        }
    }

    pub fn scale(&self, s: C) -> Self {
        Self {
            coef: self.coef * s,
            ..self.clone()
        }
    }

    /// Factorwise product; tails must be compatible.
    pub fn compose(&self, other: &Self, seq: &LambdaSequence) -> Result<Self> {
        let tail = match (&self.tail, &other.tail) {
            (KTail::Identity, t) | (t, KTail::Identity) => t.clone(),
            (KTail::Projector(a), KTail::Projector(b)) if a == b => KTail::Projector(*a),
            _ => return Err(Error::UnsupportedRepresentation("incompatible tails".into())),
        };
        let w = self.head.len().max(other.head.len());
        let mut head = Vec::with_capacity(w);
        for i in 1..=w {
            head.push(self.factor_with(i, seq).compose(&other.factor_with(i, seq))?);
        }
        Ok(Self {
            coef: self.coef * other.coef,
            head,
            tail,
        })
    }
}

/// Memo of infinite tail products keyed by their parameters.
#[derive(Debug, Default)]
pub struct TailMemo {
    map: HashMap<(u8, usize, i64, i64), f64>,
}

impl TailMemo {
    pub fn new() -> Self {
        Self::default()
    }

    fn overlap(&mut self, seq: &LambdaSequence, from: usize, oa: i64, ob: i64) -> f64 {
        if let Some(v) = self.map.get(&(0, from, oa, ob)) {
            return *v;
        }
        // peel one factor off a neighbouring product when it is well conditioned
        let v = match self.map.get(&(0, from - 1, oa, ob)) {
            Some(prev) if from > 1 && (from as i64 - 1 + oa.min(ob)) >= 1 => {
                let g = seq.overlap((from as i64 - 1 + oa) as usize, (from as i64 - 1 + ob) as usize);
                if g > 1e-3 && *prev > 1e-250 {
                    prev / g
                } else {
                    seq.overlap_tail(from, oa, ob)
                }
            }
            _ => seq.overlap_tail(from, oa, ob),
        };
        self.map.insert((0, from, oa, ob), v);
        v
    }

    fn lambda(&mut self, seq: &LambdaSequence, from: usize, oa: i64, ob: i64) -> f64 {
        if oa == ob {
            return *self
                .map
                .entry((1, from, oa, ob))
                .or_insert_with(|| seq.delta_tail((from as i64 + oa) as usize));
        }
        *self.map.entry((1, from, oa, ob)).or_insert_with(|| {
            let mut log = 0.0;
            for i in from..from + 200_000 {
                let (a, b) = (seq.lambda((i as i64 + oa) as usize), seq.lambda((i as i64 + ob) as usize));
                let v = 2.0 * a * b / (a * a + b * b + 2.0);
                log += v.ln();
                if log < -700.0 {
                    return 0.0;
                }
            }
            log.exp()
        })
    }

    /// `∏_{i≥from} (k_{i+og}, T k_{i+of})` for the tail rule `T`.
    pub fn tail(&mut self, seq: &LambdaSequence, tail: &KTail, from: usize, og: i64, of: i64) -> f64 {
        match tail {
            KTail::Identity => self.overlap(seq, from, og, of),
            KTail::Lambda => self.lambda(seq, from, og, of),
            KTail::Projector(o) => self.overlap(seq, from, og, *o) * self.overlap(seq, from, *o, of),
        }
    }
}

/// `(G, X F)`.
pub fn pair(g: &ProductVector, x: &KOperator, f: &ProductVector, memo: &mut TailMemo) -> Result<C> {
    let seq = &f.seq;
    let p = f.head.len().max(g.head.len()).max(x.head.len());
    let mut s = x.coef;
    for i in 1..=p {
        s *= x.factor_with(i, seq).element(&g.factor(i), &f.factor(i))?;
    }
    Ok(s * memo.tail(seq, &x.tail, p + 1, g.offset, f.offset))
}

/// `π(A_K ⊗ A₀) = A₀ ⊗ A_K`, the conjugation by `S₀`.
pub fn pi_apply(a_k: &KOperator, a0: &HalfLineOperator) -> KOperator {
    let mut head = Vec::with_capacity(a_k.head.len() + 1);
    head.push(a0.clone());
    head.extend(a_k.head.iter().cloned());
    let tail = match &a_k.tail {
        KTail::Projector(o) => KTail::Projector(o - 1),
        t => t.clone(),
    };
    KOperator {
        coef: a_k.coef,
        head,
        tail,
    }
}

/// `(πΛ)(A) = e^{−x} ⊗ A`.
pub fn pi_lambda(a: &KOperator) -> KOperator {
    pi_apply(a, &HalfLineOperator::lambda())
}

/// `(πΛ)ⁿ(A)`, refusing to push the support of `A` past `truncation` factors.
pub fn pi_lambda_power(a: &KOperator, n: usize, truncation: usize) -> Result<KOperator> {
    let needed = n + a.head.len();
    if needed > truncation {
        return Err(Error::TruncationExceeded {
            needed,
            available: truncation,
        });
    }
    Ok(pi_lambda_power_unchecked(a, n))
}

pub(crate) fn pi_lambda_power_unchecked(a: &KOperator, n: usize) -> KOperator {
    pi_step_power(a, n, &HalfLineOperator::lambda())
}

/// `(πM)ⁿ(A) = M^{⊗n} ⊗ A` for a half-line operator `M`.
pub(crate) fn pi_step_power(a: &KOperator, n: usize, step: &HalfLineOperator) -> KOperator {
    let mut head = Vec::with_capacity(n + a.head.len());
    head.extend(std::iter::repeat_n(step.clone(), n));
    head.extend(a.head.iter().cloned());
    KOperator {
        coef: a.coef,
        head,
        tail: shifted_tail(&a.tail, n),
    }
}

/// Tail rule of `(πΛ)ⁿ(A)` given the tail rule of `A`.
pub(crate) fn shifted_tail(tail: &KTail, n: usize) -> KTail {
    match tail {
        KTail::Projector(o) => KTail::Projector(o - n as i64),
        t => t.clone(),
    }
}

/// The curve `n ↦ (F, (πΛ)ⁿ(I) G)` and the limit `(F, ΔG)`.
#[derive(Debug, Clone)]
pub struct DeltaPairing {
    pub curve: Vec<C>,
    pub limit: C,
    /// `∏_{i>n_max} qᵢ`, the factor separating the last curve point from the
    /// limit when `F` and `G` are reference beyond `n_max`.
    pub tail_estimate: f64,
}

pub fn delta_pairing(f: &ProductVector, g: &ProductVector, n_max: usize) -> Result<DeltaPairing> {
    let mut memo = TailMemo::new();
    let mut curve = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let x = pi_lambda_power_unchecked(&KOperator::identity(), n);
        curve.push(pair(f, &x, g, &mut memo)?);
    }
    let limit = pair(f, &KOperator::delta(), g, &mut memo)?;
    Ok(DeltaPairing {
        curve,
        limit,
        tail_estimate: f.seq.delta_tail(n_max + 1),
    })
}

/// Orthonormal product basis of the truncated space: `m` exponential
/// functions per factor on the first `N` factors, reference tail beyond.
/// The first basis function of factor `i` is `kᵢ`.
#[derive(Debug, Clone)]
pub struct KBasis {
    seq: Arc<LambdaSequence>,
    factors: Vec<Vec<ExpKernelVector>>,
    m: usize,
}

impl KBasis {
    pub fn new(seq: Arc<LambdaSequence>, n_factors: usize, m: usize) -> Result<Self> {
        if n_factors == 0 || m == 0 {
            return Err(Error::InvalidParameter("basis needs N ≥ 1 and m ≥ 1".into()));
        }
        let mut factors = Vec::with_capacity(n_factors);
        for i in 1..=n_factors {
            let l = seq.lambda(i);
            let raw: Vec<ExpKernelVector> = (0..m)
                .map(|j| {
                    ExpKernelVector::exp(C::new(1.0, 0.0), C::new(0.5 * l * l + j as f64, 0.0))
                        .expect("positive rate")
                })
                .collect();
            let mut ortho = orthonormalize(&raw)?;
            // fix the phase so that the first function is exactly kᵢ
            ortho[0] = seq.reference(i);
            factors.push(ortho);
        }
        Ok(Self { seq, factors, m })
    }

    pub fn sequence(&self) -> &Arc<LambdaSequence> {
        &self.seq
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn factor_dim(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.m.pow(self.factors.len() as u32)
    }

    pub fn factor_basis(&self, i: usize) -> &[ExpKernelVector] {
        &self.factors[i - 1]
    }

    /// Multi-index of basis element `a`, factor 1 most significant.
    pub fn digits(&self, a: usize) -> Vec<usize> {
        let n = self.n_factors();
        let mut d = vec![0; n];
        let mut r = a;
        for i in (0..n).rev() {
            d[i] = r % self.m;
            r /= self.m;
        }
        d
    }

    pub fn vector(&self, a: usize) -> ProductVector {
        let head = self
            .digits(a)
            .iter()
            .enumerate()
            .map(|(i, &d)| self.factors[i][d].clone())
            .collect();
        ProductVector::new(head, self.seq.clone())
    }

    /// Index of `F₀`.
    pub fn reference_index(&self) -> usize {
        0
    }

    /// `[X]_{ba} = (e_b, X e_a)` on the truncated basis.
    pub fn matrix_of(&self, x: &KOperator, memo: &mut TailMemo) -> Result<CMat> {
        let n = self.n_factors();
        let mut acc = DMatrix::from_element(1, 1, x.coef);
        for i in 1..=n {
            let op = x.factor_with(i, &self.seq);
            let b = &self.factors[i - 1];
            let mut mi = CMat::zeros(self.m, self.m);
            for beta in 0..self.m {
                for alpha in 0..self.m {
                    mi[(beta, alpha)] = op.element(&b[beta], &b[alpha])?;
                }
            }
            acc = kron(&acc, &mi);
        }
        let mut scalar = ONE;
        let w = x.head.len();
        for i in n + 1..=w {
            let k = self.seq.reference(i);
            scalar *= x.factor_with(i, &self.seq).element(&k, &k)?;
        }
        scalar *= memo.tail(&self.seq, &x.tail, n.max(w) + 1, 0, 0);
        Ok(acc * scalar)
    }

    /// Coordinates of a product vector that lies in the truncated space.
    pub fn coordinates(&self, f: &ProductVector) -> Result<nalgebra::DVector<C>> {
        if f.offset != 0 || f.head.len() > self.n_factors() {
            return Err(Error::UnsupportedRepresentation("vector outside truncated space".into()));
        }
        let mut acc = nalgebra::DVector::from_element(1, ONE);
        for i in 1..=self.n_factors() {
            let fi = f.factor(i);
            let c = nalgebra::DVector::from_iterator(
                self.m,
                self.factors[i - 1].iter().map(|e| inner_product(e, &fi)),
            );
            acc = nalgebra::DVector::from_iterator(
                acc.len() * self.m,
                acc.iter().flat_map(|a| c.iter().map(move |b| a * b)),
            );
        }
        Ok(acc)
    }
}

/// Operator `e^{−sx}` as a factor.
pub fn exp_factor(s: f64) -> HalfLineOperator {
    HalfLineOperator::Multiplier(ExpMultiplier::exp(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lin() -> Arc<LambdaSequence> {
        Arc::new(LambdaSequence::linear())
    }

    fn e(rate: f64) -> ExpKernelVector {
        ExpKernelVector::exp(ONE, C::new(rate, 0.0)).unwrap()
    }

    #[test]
    fn admissibility_examples() {
        let a = check_lambda_sequence(&LambdaSequence::linear(), 1000).unwrap();
        assert!(a.first_converges && a.second_converges);
        let g = LambdaSequence::new(LambdaKind::Geometric).unwrap();
        let a = check_lambda_sequence(&g, 1000).unwrap();
        assert!(a.first_converges && !a.second_converges);
        let c = LambdaSequence::new(LambdaKind::Constant(1.0)).unwrap();
        let a = check_lambda_sequence(&c, 1000).unwrap();
        assert!(!a.first_converges);
        assert!(LambdaSequence::new(LambdaKind::Custom(vec![1.0, -2.0])).is_err());
        assert!(check_lambda_sequence(&LambdaSequence::linear(), 1).is_err());
    }

    #[test]
    fn delta_curve_for_linear_lambda() {
        let f0 = ProductVector::reference(lin());
        let d = delta_pairing(&f0, &f0, 8).unwrap();
        let oracle: f64 = (1..=8).map(|i| (i * i) as f64 / (1.0 + (i * i) as f64)).product();
        assert_relative_eq!(d.curve[8].re, oracle, epsilon = 1e-12);
        assert_relative_eq!(d.curve[8].re, 0.305_868, epsilon = 1e-6);
        assert!(d.curve.windows(2).all(|w| w[1].re <= w[0].re + 1e-15));
        assert_relative_eq!(d.limit.re, 0.272_029, epsilon = 1e-6);
        assert_relative_eq!(d.curve[8].re * d.tail_estimate, d.limit.re, epsilon = 1e-12);
    }

    #[test]
    fn delta_pairing_orthogonal_first_factor() {
        let seq = lin();
        let k1 = seq.reference(1);
        let orth = e(0.5).add(&k1.scale(-inner_product(&k1, &e(0.5))));
        let f = ProductVector::new(vec![orth], seq.clone());
        let g = ProductVector::reference(seq);
        let d = delta_pairing(&f, &g, 4).unwrap();
        assert!(d.limit.norm() < 1e-15);
    }

    #[test]
    fn s0_on_reference_head() {
        let seq = lin();
        let v = HVector {
            k: ProductVector::new(vec![seq.reference(1), seq.reference(2)], seq.clone()),
            h: e(1.0),
        };
        let (w, fid) = s0_apply(&v, 8).unwrap();
        assert_relative_eq!(fid, 1.0, epsilon = 1e-14);
        assert_eq!(w.factor(1), e(1.0));
        assert_eq!(w.factor(2), seq.reference(1));
    }

    #[test]
    fn s0_fidelity_oracle() {
        let seq = lin();
        let mut head: Vec<_> = (1..8).map(|i| seq.reference(i)).collect();
        head.push(e(1.0));
        let v = HVector {
            k: ProductVector::new(head, seq),
            h: e(2.0),
        };
        let (_, fid) = s0_apply(&v, 8).unwrap();
        // (e^{-x}, 8 e^{-32x}) = 8/33
        assert_relative_eq!(fid, 8.0 / 33.0, epsilon = 1e-14);
    }

    #[test]
    fn s0_exact_is_isometric() {
        let seq = lin();
        let a = HVector {
            k: ProductVector::new(vec![e(0.7), e(2.5).add(&e(1.0))], seq.clone()),
            h: e(1.5),
        };
        let b = HVector {
            k: ProductVector::new(vec![e(1.1)], seq.clone()),
            h: e(0.4).scale(C::new(0.0, 2.0)),
        };
        let lhs = product_inner(&s0_apply_exact(&a), &s0_apply_exact(&b));
        assert!((lhs - a.inner(&b)).norm() < 1e-12 * a.inner(&b).norm().max(1.0));
        let back = s0_adjoint_exact(&s0_apply_exact(&a));
        assert!((back.inner(&back) - a.inner(&a)).norm() < 1e-12);
    }

    #[test]
    fn pi_of_lambda() {
        let a = KOperator::elementary(vec![HalfLineOperator::rank_one(e(1.0), e(2.0))]);
        let p = pi_lambda(&a);
        assert_eq!(p.head[0], HalfLineOperator::lambda());
        assert_eq!(p.head[1], a.head[0]);
        let id = pi_apply(&KOperator::identity(), &HalfLineOperator::Identity);
        let seq = lin();
        let f = ProductVector::new(vec![e(0.3), e(1.0)], seq.clone());
        let mut memo = TailMemo::new();
        let v = pair(&f, &id, &f, &mut memo).unwrap();
        assert!((v - product_inner(&f, &f)).norm() < 1e-14);
    }

    #[test]
    fn pi_lambda_power_guards_truncation() {
        let a = KOperator::elementary(vec![HalfLineOperator::Identity; 3]);
        assert!(pi_lambda_power(&a, 5, 8).is_ok());
        assert!(matches!(
            pi_lambda_power(&a, 6, 8),
            Err(Error::TruncationExceeded { needed: 9, available: 8 })
        ));
        assert_eq!(pi_lambda_power(&a, 0, 8).unwrap(), a);
    }

    #[test]
    fn basis_is_orthonormal_and_matches_pairing() {
        let basis = KBasis::new(lin(), 2, 3).unwrap();
        let mut memo = TailMemo::new();
        let id = basis.matrix_of(&KOperator::identity(), &mut memo).unwrap();
        assert!((id - CMat::identity(9, 9)).norm() < 1e-12);
        let x = pi_lambda(&KOperator::elementary(vec![HalfLineOperator::rank_one(e(1.0), e(2.0))]));
        let m = basis.matrix_of(&x, &mut memo).unwrap();
        for a in 0..9 {
            for b in 0..9 {
                let v = pair(&basis.vector(b), &x, &basis.vector(a), &mut memo).unwrap();
                assert!((m[(b, a)] - v).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rank_one_pairing_uses_overlap_tails() {
        let seq = lin();
        let mut memo = TailMemo::new();
        let f0 = ProductVector::reference(seq.clone());
        let shifted = s0_apply_exact(&HVector {
            k: f0.clone(),
            h: seq.reference(1),
        });
        let p = KOperator::rank_one(&f0, &f0).unwrap();
        let v = pair(&shifted, &p, &shifted, &mut memo).unwrap();
        let direct = product_inner(&shifted, &f0).norm_sqr();
        assert!((v.re - direct).abs() < 1e-10);
        assert!(direct > 0.0 && direct < 1.0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn kernel() -> impl Strategy<Value = ExpKernelVector> {
            prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.2f64..3.0), 1..3).prop_map(|t| {
                ExpKernelVector::new(t.into_iter().map(|(a, b, r)| (C::new(a, b), C::new(r, 0.0))).collect()).unwrap()
            })
        }

        proptest! {
            #[test]
            fn equal_length_products_factorise(pairs in prop::collection::vec((kernel(), kernel()), 0..4)) {
                let seq = Arc::new(LambdaSequence::linear());
                let (fs, gs): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
                let expected = fs.iter().zip(&gs).fold(C::new(1.0, 0.0), |acc, (f, g)| acc * inner_product(f, g));
                let f = ProductVector::new(fs, seq.clone());
                let g = ProductVector::new(gs, seq);
                let got = product_inner(&f, &g);
                prop_assert!((got - expected).norm() <= 1e-10 * (1.0 + expected.norm()));
            }

            #[test]
            fn custom_sequences_stay_positive(v in prop::collection::vec(0.01f64..50.0, 1..8), i in 1usize..30) {
                let seq = LambdaSequence::new(LambdaKind::Custom(v)).unwrap();
                prop_assert!(seq.lambda(i) > 0.0);
                let r = ProductVector::reference(Arc::new(seq));
                prop_assert!((product_inner(&r, &r) - C::new(1.0, 0.0)).norm() < 1e-12);
            }
        }
    }
}
