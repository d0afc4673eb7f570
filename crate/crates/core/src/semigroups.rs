//! The semigroups `U_z` on `K ⊗ L²(0,∞)` by exact-CFL transport stepping.
//!
//! A [`FlowState`] is the initial cell data on `[0, L]` together with the
//! history of boundary labels applied to it. Each step shifts the cells right
//! by one, feeds the boundary cell with `z·S₀(previous state)` and damps the
//! whole state by `e^{−½|z|²h}`.
//!
//! Fed cells are never materialised: `S₀` is an isometry, so
//! `(S₀X, S₀Y) = (X, Y)` and inner products of evolved states reduce to a
//! recurrence over earlier states with the same step count.

use nalgebra::DVector;
use num_complex::Complex64 as C;

use crate::linalg::{hermitian_eigenvalues, CMat};
use crate::{Error, Result};

const ZERO: C = C::new(0.0, 0.0);

/// `c(w, z) = ½(2w̄z − |w|² − |z|²)`.
pub fn covariance(w: C, z: C) -> C {
    0.5 * (2.0 * w.conj() * z - w.norm_sqr() - z.norm_sqr())
}

/// `[e^{c(zᵢ, zⱼ)t}]`.
pub fn covariance_gram(zs: &[C], t: f64) -> CMat {
    CMat::from_fn(zs.len(), zs.len(), |i, j| (covariance(zs[i], zs[j]) * t).exp())
}

/// Smallest eigenvalue of the Hermitian part of `m`.
pub fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// A state of `K ⊗ L²(0, L)` under transport with boundary feed.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    length: f64,
    cells: Vec<DVector<C>>,
    history: Vec<C>,
}

impl FlowState {
    pub fn new(length: f64, cells: Vec<DVector<C>>) -> Result<Self> {
        if !(length > 0.0) || cells.is_empty() {
            return Err(Error::InvalidParameter("flow state needs positive length and cells".into()));
        }
        let dim = cells[0].len();
        if dim == 0 || cells.iter().any(|c| c.len() != dim) {
            return Err(Error::Shape("cells must share a nonzero dimension".into()));
        }
        Ok(Self {
            length,
            cells,
            history: Vec::new(),
        })
    }

    /// Midpoint samples of `f` on `n` cells.
    pub fn from_fn(length: f64, n: usize, f: impl Fn(f64) -> DVector<C>) -> Result<Self> {
        let h = length / n as f64;
        Self::new(length, (0..n).map(|j| f((j as f64 + 0.5) * h)).collect())
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn cells(&self) -> usize {
        self.cells.len()
    }

    pub fn dim(&self) -> usize {
        self.cells[0].len()
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.cells.len() as f64
    }

    pub fn steps(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[C] {
        &self.history
    }

    /// `U_z(t)` applied to the state. Returns the state and `|t − k·h|` for the
    /// step count `k` actually taken.
    pub fn evolve(&self, z: C, t: f64) -> Result<(Self, f64)> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("time {t} must be nonnegative")));
        }
        let h = self.spacing();
        let k = (t / h).round() as usize;
        let snap = (t - k as f64 * h).abs();
        let mut out = self.clone();
        out.history.extend(std::iter::repeat_n(z, k));
        Ok((out, snap))
    }

    fn damp(&self, s: usize) -> f64 {
        (-0.5 * self.history[s - 1].norm_sqr() * self.spacing()).exp()
    }

    /// Coefficients of the prefix state after `j` steps: the common factor on
    /// original cells and, for positions `i < min(j, n)`, the factor on the fed
    /// cell `S₀(X_{j−i−1})`.
    fn coefficients(&self, j: usize) -> (f64, Vec<C>) {
        let n = self.cells.len();
        // suffix[s] = Π_{r=s}^{j} damp_r
        let mut suffix = vec![1.0; j + 2];
        for s in (1..=j).rev() {
            suffix[s] = suffix[s + 1] * self.damp(s);
        }
        let fed = (0..j.min(n))
            .map(|i| {
                let s = j - i;
                self.history[s - 1] * suffix[s]
            })
            .collect();
        (suffix[1], fed)
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.cells.len() != other.cells.len() || self.length != other.length || self.dim() != other.dim() {
            return Err(Error::Shape("flow states live on different grids".into()));
        }
        if self.steps() != other.steps() {
            return Err(Error::InvalidParameter(format!(
                "states evolved for {} and {} steps cannot be paired",
                self.steps(),
                other.steps()
            )));
        }
        Ok(())
    }

    /// Gram recurrence `G[j] = (X_j, Y_j)` over prefix states.
    fn gram_sequence(&self, other: &Self) -> Vec<C> {
        let n = self.cells.len();
        let h = self.spacing();
        let k = self.steps();
        let mut g = Vec::with_capacity(k + 1);
        for j in 0..=k {
            let (cx, fx) = self.coefficients(j);
            let (cy, fy) = other.coefficients(j);
            let mut s = ZERO;
            for i in j..n {
                s += self.cells[i - j].dotc(&other.cells[i - j]) * (cx * cy);
            }
            for i in 0..j.min(n) {
                s += fx[i].conj() * fy[i] * g[j - i - 1];
            }
            g.push(s * h);
        }
        g
    }

    /// `(self, other)` in `K ⊗ L²`.
    pub fn inner(&self, other: &Self) -> Result<C> {
        self.check_compatible(other)?;
        Ok(*self.gram_sequence(other).last().expect("nonempty"))
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).map(|v| v.re.max(0.0).sqrt()).unwrap_or(0.0)
    }

    /// `‖self − other‖`, exact zero when the two states share their history.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let n = self.cells.len();
        let h = self.spacing();
        let k = self.steps();
        let gab = self.gram_sequence(other);
        let gaa = self.gram_sequence(self);
        let gbb = other.gram_sequence(other);
        let mut d = Vec::with_capacity(k + 1);
        for j in 0..=k {
            let (ca, fa) = self.coefficients(j);
            let (cb, fb) = other.coefficients(j);
            let mut s = 0.0;
            for i in j..n {
                let u = &self.cells[i - j];
                let v = &other.cells[i - j];
                s += (u.map(|x| x * ca) - v.map(|x| x * cb)).norm_squared();
            }
            for i in 0..j.min(n) {
                let p = j - i - 1;
                s += if fa[i] == fb[i] {
                    fa[i].norm_sqr() * d[p]
                } else {
                    (fa[i].norm_sqr() * gaa[p].re + fb[i].norm_sqr() * gbb[p].re
                        - 2.0 * (fa[i].conj() * fb[i] * gab[p]).re)
                        .max(0.0)
                };
            }
            d.push(s * h);
        }
        Ok(d[k].sqrt())
    }

    /// Squared norm carried past `x = L` by the steps taken so far.
    pub fn outflow_mass(&self) -> f64 {
        let n = self.cells.len();
        let h = self.spacing();
        let k = self.steps();
        let gaa = self.gram_sequence(self);
        let mut lost = 0.0;
        // cells leave from position n − 1 at each step; record each exit
        for j in 1..=k {
            let (c, fed) = self.coefficients(j - 1);
            let last = n - 1;
            let mass = if last >= j - 1 {
                self.cells[last - (j - 1)].norm_squared() * c * c
            } else {
                fed[last].norm_sqr() * gaa[j - 1 - last - 1].re
            };
            lost += mass * h;
        }
        lost
    }

    /// `⟨X_{j−1}, X_j⟩` for `j = 1..=k`, requiring the first original cell to
    /// vanish so that no original cell meets a fed cell.
    fn lag_one(&self) -> Result<Vec<C>> {
        let scale = self.cells.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if self.cells[0].norm() > 1e-12 * scale {
            return Err(Error::Precondition {
                what: "first cell must vanish for the boundary check".into(),
                measured: self.cells[0].norm(),
            });
        }
        let n = self.cells.len();
        let h = self.spacing();
        let k = self.steps();
        // lag[j] = ⟨X_{j−1}, X_j⟩, index 0 unused
        let mut lag = vec![ZERO; k + 1];
        for j in 1..=k {
            let dj = self.damp(j);
            let zj = self.history[j - 1];
            let (c, fed) = self.coefficients(j - 1);
            let mut s = ZERO;
            if j >= 2 {
                s += fed[0].conj() * dj * zj * lag[j - 1];
            }
            // neighbour pairs (i, i−1) of X_{j−1}
            let mut nb = ZERO;
            for i in 1..n {
                if i > j - 1 {
                    let a = i - (j - 1);
                    nb += self.cells[a].dotc(&self.cells[a - 1]) * (c * c);
                } else if i < j - 1 {
                    nb += fed[i].conj() * fed[i - 1] * lag[j - 1 - i];
                }
            }
            s += nb * dj;
            lag[j] = s * h;
        }
        Ok(lag)
    }

    /// `‖X(0) − z S₀X‖ / (|z| ‖X‖)` for the last step: the sampled boundary
    /// cell against the domain condition `f(0) = zS₀f`.
    pub fn boundary_residual(&self) -> Result<f64> {
        let k = self.steps();
        if k == 0 {
            return Err(Error::Precondition {
                what: "boundary check needs at least one step".into(),
                measured: 0.0,
            });
        }
        let z = self.history[k - 1];
        if z == ZERO {
            return Ok(0.0);
        }
        let lag = self.lag_one()?;
        let g = self.gram_sequence(self);
        let d = self.damp(k);
        // cell₀ − zS₀X_k = zS₀(d X_{k−1} − X_k)
        let sq = d * d * g[k - 1].re + g[k].re - 2.0 * d * lag[k].re;
        Ok(sq.max(0.0).sqrt() / g[k].re.sqrt())
    }
}

/// `|(U_w(t)f, U_z(t)g) − e^{c(w,z)t}(f, g)|`.
pub fn covariance_residual(w: C, z: C, t: f64, f: &FlowState, g: &FlowState, max_outflow: f64) -> Result<f64> {
    let (uf, _) = f.evolve(w, t)?;
    let (ug, _) = g.evolve(z, t)?;
    for s in [&uf, &ug] {
        let m = s.outflow_mass();
        if m > max_outflow {
            return Err(Error::InvalidExperiment(format!("outflow mass {m:e} exceeds {max_outflow:e}")));
        }
    }
    let lhs = uf.inner(&ug)?;
    let rhs = (covariance(w, z) * t).exp() * f.inner(g)?;
    Ok((lhs - rhs).norm())
}

/// `‖U_z(t+s)f − U_z(t)U_z(s)f‖`.
pub fn semigroup_residual(z: C, t: f64, s: f64, f: &FlowState) -> Result<f64> {
    let (a, _) = f.evolve(z, t + s)?;
    let (b, _) = f.evolve(z, s)?.0.evolve(z, t)?;
    a.distance(&b)
}

/// Numerical Gram matrix `[(U_{zᵢ}(t)f, U_{zⱼ}(t)f)] / ‖f‖²`.
pub fn evolved_gram(zs: &[C], t: f64, f: &FlowState) -> Result<CMat> {
    let states = zs
        .iter()
        .map(|z| f.evolve(*z, t).map(|s| s.0))
        .collect::<Result<Vec<_>>>()?;
    let n2 = f.inner(f)?.re;
    let mut m = CMat::zeros(zs.len(), zs.len());
    for i in 0..zs.len() {
        for j in 0..zs.len() {
            m[(i, j)] = states[i].inner(&states[j])? / n2;
        }
    }
    Ok(m)
}

/// Observed convergence orders `log₂(r_k / r_{k+1})` for successive halvings.
pub fn observed_orders(residuals: &[f64]) -> Vec<f64> {
    residuals.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}
