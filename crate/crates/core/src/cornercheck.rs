//! Choi-matrix tests of complete positivity, 2×2 corners of boundary weight
//! maps, subordination and the hypermaximality witness.
//!
//! Linear maps act on row-major vectorised matrices: the matrix unit
//! `|a⟩⟨b|` of an `n × n` space has index `a·n + b`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C;

use crate::halfline::ExpKernelVector;
use crate::linalg::{hermitian_eigenvalues, trace, CMat};
use crate::tensorspace::{pair, pi_apply, KBasis, TailMemo};
use crate::weights::{
    generalized_boundary_rep, omega_z, BoundaryOperator, BoundaryWeight, Functional, OmegaSpec, WeightSeriesConfig,
};
use crate::{Error, Result};

/// Default tolerance on Choi eigenvalues, relative to the Choi trace.
pub const CP_TOLERANCE: f64 = 1e-8;

/// Choi matrix `Σ |a⟩⟨b| ⊗ φ(|a⟩⟨b|)` of a map given on vectorised matrices.
pub fn choi_matrix(map: &CMat, d_in: usize, d_out: usize) -> Result<CMat> {
    if map.shape() != (d_out * d_out, d_in * d_in) {
        return Err(Error::Shape(format!(
            "map is {:?}, expected {}×{}",
            map.shape(),
            d_out * d_out,
            d_in * d_in
        )));
    }
    let n = d_in * d_out;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let (a, r) = (i / d_out, i % d_out);
        let (b, s) = (j / d_out, j % d_out);
        map[(r * d_out + s, a * d_in + b)]
    }))
}

/// Outcome of a Choi positivity test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpVerdict {
    pub min_eig: f64,
    /// `|tr C|`, the scale the tolerance is measured against.
    pub scale: f64,
    pub tolerance: f64,
    pub is_cp: bool,
}

impl CpVerdict {
    fn from_choi(choi: &CMat, tol: f64) -> Self {
        let min_eig = hermitian_eigenvalues(choi).first().copied().unwrap_or(0.0);
        let scale = trace(choi).norm().max(1.0);
        Self {
            min_eig,
            scale,
            tolerance: tol,
            is_cp: min_eig >= -tol * scale,
        }
    }
}

/// Minimum Choi eigenvalue of `map` and the CP verdict at relative tolerance `tol`.
pub fn choi_min_eig(map: &CMat, d_in: usize, d_out: usize, tol: f64) -> Result<CpVerdict> {
    Ok(CpVerdict::from_choi(&choi_matrix(map, d_in, d_out)?, tol))
}

/// The same map written in relabelled bases: `perm_in[a]` is the new index of
/// input basis vector `a`, likewise for outputs.
pub fn permute_basis(map: &CMat, d_in: usize, d_out: usize, perm_in: &[usize], perm_out: &[usize]) -> Result<CMat> {
    if perm_in.len() != d_in || perm_out.len() != d_out {
        return Err(Error::Shape("permutation length mismatch".into()));
    }
    let mut out = CMat::zeros(d_out * d_out, d_in * d_in);
    for r in 0..d_out {
        for s in 0..d_out {
            for a in 0..d_in {
                for b in 0..d_in {
                    out[(perm_out[r] * d_out + perm_out[s], perm_in[a] * d_in + perm_in[b])] =
                        map[(r * d_out + s, a * d_in + b)];
                }
            }
        }
    }
    Ok(out)
}

/// A 2×2 matrix of maps `[[φ₁₁, φ₁₂], [φ₂₁, φ₂₂]]` acting entrywise on
/// `M₂ ⊗ M_{d_in}`.
#[derive(Debug, Clone)]
pub struct CpMapMatrix {
    pub d_in: usize,
    pub d_out: usize,
    pub blocks: [[CMat; 2]; 2],
}

impl CpMapMatrix {
    /// Choi matrix of the induced map, restricted to its support
    /// (`[[C₁₁, C₁₂], [C₂₁, C₂₂]]`; the remaining entries vanish).
    pub fn choi(&self) -> Result<CMat> {
        let n = self.d_in * self.d_out;
        let mut out = CMat::zeros(2 * n, 2 * n);
        for i in 0..2 {
            for j in 0..2 {
                let c = choi_matrix(&self.blocks[i][j], self.d_in, self.d_out)?;
                out.view_mut((i * n, j * n), (n, n)).copy_from(&c);
            }
        }
        Ok(out)
    }

    pub fn verdict(&self, tol: f64) -> Result<CpVerdict> {
        Ok(CpVerdict::from_choi(&self.choi()?, tol))
    }
}

/// A 2×2 matrix of boundary weight maps.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    pub entries: [[OmegaSpec; 2]; 2],
}

impl WeightMatrix {
    /// `[[diag, ω^z], [ω^{z̄}, diag]]`.
    pub fn corner(diag: OmegaSpec, z: C) -> Self {
        Self {
            entries: [[diag.clone(), OmegaSpec::Z(z)], [OmegaSpec::Z(z.conj()), diag]],
        }
    }

    /// Generalized boundary representations of every entry at `t`.
    pub fn at(&self, basis: &KBasis, t: f64, v: &[ExpKernelVector], cfg: &WeightSeriesConfig) -> Result<CpMapMatrix> {
        let mut maps: Vec<CMat> = Vec::with_capacity(4);
        let mut d_out = 0;
        for i in 0..2 {
            for j in 0..2 {
                let rep = generalized_boundary_rep(basis, &self.entries[i][j], t, v, cfg)?;
                d_out = rep.d_out;
                maps.push(rep.matrix);
            }
        }
        let mut it = maps.into_iter();
        let mut next = || it.next().expect("four blocks");
        Ok(CpMapMatrix {
            d_in: basis.dim(),
            d_out,
            blocks: [[next(), next()], [next(), next()]],
        })
    }
}

/// Something whose generalized boundary representation has a Choi matrix.
#[derive(Debug, Clone)]
pub enum WeightSource {
    Single(OmegaSpec),
    Matrix(WeightMatrix),
}

impl WeightSource {
    pub fn choi_at(&self, basis: &KBasis, t: f64, v: &[ExpKernelVector], cfg: &WeightSeriesConfig) -> Result<CMat> {
        match self {
            Self::Single(spec) => {
                let rep = generalized_boundary_rep(basis, spec, t, v, cfg)?;
                choi_matrix(&rep.matrix, rep.d_in, rep.d_out)
            }
            Self::Matrix(m) => m.at(basis, t, v, cfg)?.choi(),
        }
    }
}

/// Per-`t` record of a subordination test.
#[derive(Debug, Clone, PartialEq)]
pub struct SubordinationStep {
    pub t: f64,
    pub upper: CpVerdict,
    pub lower: CpVerdict,
    pub difference: CpVerdict,
    /// Frobenius norm of the Choi difference.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubordinationReport {
    pub steps: Vec<SubordinationStep>,
    pub subordinate: bool,
}

/// Tests `π_t^#(upper) ≥ π_t^#(lower)` on a decreasing sequence of `t`.
pub fn subordination_check(
    upper: &WeightSource,
    lower: &WeightSource,
    basis: &KBasis,
    ts: &[f64],
    v: &[ExpKernelVector],
    cfg: &WeightSeriesConfig,
    tol: f64,
) -> Result<SubordinationReport> {
    let mut steps = Vec::with_capacity(ts.len());
    for &t in ts {
        let cu = upper.choi_at(basis, t, v, cfg)?;
        let cl = lower.choi_at(basis, t, v, cfg)?;
        let vu = CpVerdict::from_choi(&cu, tol);
        let vl = CpVerdict::from_choi(&cl, tol);
        for v in [vu, vl] {
            if !v.is_cp {
                return Err(Error::InvalidInput {
                    what: format!("input to subordination check is not CP at t = {t}"),
                    eigenvalue: v.min_eig,
                });
            }
        }
        let diff = &cu - &cl;
        let mut vd = CpVerdict::from_choi(&diff, tol);
        // the difference is judged against the scale of the inputs
        vd.scale = vu.scale.max(vl.scale);
        vd.is_cp = vd.min_eig >= -tol * vd.scale;
        steps.push(SubordinationStep {
            t,
            upper: vu,
            lower: vl,
            difference: vd,
            gap: diff.norm(),
        });
    }
    let subordinate = steps.iter().all(|s| s.difference.is_cp);
    Ok(SubordinationReport { steps, subordinate })
}

/// Outcome of the hypermaximality-failure witness.
#[derive(Debug, Clone, PartialEq)]
pub struct HypermaxReport {
    pub z: C,
    /// (i) the corner with diagonal `ω¹` is CP at every sampled `t`.
    pub minimal_corner: Vec<CpVerdict>,
    /// (ii) the corner with diagonal `ω` dominates it.
    pub subordination: SubordinationReport,
    /// (iii) size of the diagonal gap `ρ(Δ)ξ` at each `t`.
    pub diagonal_gap: Vec<f64>,
    pub q_positive: bool,
    pub dominates: bool,
    pub gap_nonzero: bool,
}

impl HypermaxReport {
    pub fn passes(&self) -> bool {
        self.q_positive && self.dominates && self.gap_nonzero
    }
}

fn check_unit_circle(z: C) -> Result<()> {
    if ((z.norm() - 1.0).abs()) > 1e-12 {
        return Err(Error::Domain(format!("|z| = {} must be 1", z.norm())));
    }
    if (z - C::new(1.0, 0.0)).norm() < 1e-12 {
        return Err(Error::Degenerate(
            "z = 1 leaves room for an extra boundary weight on the off-diagonal".into(),
        ));
    }
    Ok(())
}

/// Witness that the corner `[[ω, ω^z], [ω^{z̄}, ω]]` is not hypermaximal.
#[allow(clippy::too_many_arguments)]
pub fn hypermax_witness(
    z: C,
    xi: &BoundaryWeight,
    basis: &KBasis,
    ts: &[f64],
    v: &[ExpKernelVector],
    cfg: &WeightSeriesConfig,
    tol: f64,
    gap_floor: f64,
) -> Result<HypermaxReport> {
    check_unit_circle(z)?;
    let minimal = WeightMatrix::corner(OmegaSpec::Minimal, z);
    let full = WeightMatrix::corner(OmegaSpec::Full(xi.clone()), z);
    let mut minimal_corner = Vec::with_capacity(ts.len());
    for &t in ts {
        minimal_corner.push(CpVerdict::from_choi(&minimal.at(basis, t, v, cfg)?.choi()?, tol));
    }
    let q_positive = minimal_corner.iter().all(|v| v.is_cp);
    let subordination = if q_positive {
        subordination_check(
            &WeightSource::Matrix(full),
            &WeightSource::Matrix(minimal),
            basis,
            ts,
            v,
            cfg,
            tol,
        )?
    } else {
        SubordinationReport {
            steps: Vec::new(),
            subordinate: false,
        }
    };
    let mut diagonal_gap = Vec::with_capacity(ts.len());
    for &t in ts {
        let a = generalized_boundary_rep(basis, &OmegaSpec::Full(xi.clone()), t, v, cfg)?;
        let b = generalized_boundary_rep(basis, &OmegaSpec::Minimal, t, v, cfg)?;
        diagonal_gap.push((a.matrix - b.matrix).norm());
    }
    let gap_nonzero = diagonal_gap.iter().all(|g| *g > gap_floor);
    Ok(HypermaxReport {
        z,
        q_positive,
        dominates: subordination.subordinate,
        gap_nonzero,
        minimal_corner,
        subordination,
        diagonal_gap,
    })
}

/// Choi verdicts of `[[ω, ω^z + s·ρ(Δ)ξ], [ω^{z̄} + s·ρ(Δ)ξ, ω]]` for each `s`.
///
/// For `z ≠ 1` no nonzero `s` should keep the corner CP.
pub fn off_diagonal_perturbation(
    z: C,
    xi: &BoundaryWeight,
    scales: &[f64],
    basis: &KBasis,
    t: f64,
    v: &[ExpKernelVector],
    cfg: &WeightSeriesConfig,
    tol: f64,
) -> Result<Vec<(f64, CpVerdict)>> {
    let mut out = Vec::with_capacity(scales.len());
    for &s in scales {
        let xs = xi.scaled(C::new(s, 0.0));
        let diag = OmegaSpec::Full(xi.clone());
        let m = WeightMatrix {
            entries: [
                [diag.clone(), OmegaSpec::ZPlus(z, xs.clone())],
                [OmegaSpec::ZPlus(z.conj(), xs), diag],
            ],
        };
        out.push((s, m.at(basis, t, v, cfg)?.verdict(tol)?));
    }
    Ok(out)
}

/// `|σ(ρ)(B) − zσ(Λ̂π̂ρ)(B) − zρ(π(B))|` for `σ = ω^z`.
pub fn derivation_residual(z: C, rho: &Functional, b: &BoundaryOperator, cfg: &WeightSeriesConfig) -> Result<f64> {
    let s1 = omega_z(z, rho, b, cfg)?.value;
    let s2 = omega_z(z, &rho.lambda_pi_hat(), b, cfg)?.value;
    let mut memo = TailMemo::new();
    let mut direct = C::new(0.0, 0.0);
    for t in &b.terms {
        let x = pi_apply(&t.k, &t.a0);
        for (w, ket, bra) in rho.to_vectors() {
            direct += w * pair(&bra, &x, &ket, &mut memo)?;
        }
    }
    Ok((s1 - z * s2 - z * direct).norm())
}
