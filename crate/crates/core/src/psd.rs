//! Dense Hermitian and positive semidefinite matrix calculus.
//!
//! All operators are `d x d` complex matrices. Square roots go through a
//! Hermitian eigendecomposition with negative eigenvalues clamped to zero, so
//! iterated residuals stay inside the PSD cone under roundoff.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WrError};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Relative asymmetry accepted (and symmetrized away) by [`HermitianMatrix::new`].
const HERMITIAN_SLACK: f64 = 1e-12;

/// Numerical tolerances shared by the whole crate.
///
/// `psd` and `recon` are relative: the absolute threshold is the stored value
/// times `max(1, trace)` of the matrix in question.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub psd_rel: f64,
    pub recon_rel: f64,
    pub op: f64,
    pub pinv: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            psd_rel: 1e-10,
            recon_rel: 1e-9,
            op: 1e-10,
            pinv: 1e-12,
        }
    }
}

impl Tolerances {
    pub fn psd(&self, trace: f64) -> f64 {
        self.psd_rel * trace.abs().max(1.0)
    }

    pub fn recon(&self, trace: f64) -> f64 {
        self.recon_rel * trace.abs().max(1.0)
    }
}

/// Eigenvalues and eigenvectors of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: DVector<f64>,
    pub vectors: CMatrix,
}

impl Spectrum {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Eigenvalues at or below this size are indistinguishable from zero.
    pub fn noise_floor(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        8.0 * f64::EPSILON * self.values.len() as f64 * scale
    }

    /// `V diag(f(lambda)) V*`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let d = self.values.len();
        let mut scaled = self.vectors.clone();
        for k in 0..d {
            let s = f(self.values[k]);
            scaled.column_mut(k).scale_mut(s);
        }
        scaled * self.vectors.adjoint()
    }
}

/// A `d x d` complex matrix equal to its conjugate transpose.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    entries: CMatrix,
}

impl HermitianMatrix {
    /// Symmetrizes `(M + M*)/2`. Inputs whose asymmetry exceeds a roundoff
    /// level relative to their largest entry are rejected.
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(WrError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let adj = m.adjoint();
        let asymmetry = max_abs(&(&m - &adj));
        let scale = max_abs(&m).max(1.0);
        if asymmetry > HERMITIAN_SLACK * scale {
            return Err(WrError::NotHermitian { asymmetry });
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes without checking; used for products that are Hermitian up to roundoff.
    pub(crate) fn symmetrized(m: CMatrix) -> Self {
        let adj = m.adjoint();
        Self {
            entries: (m + adj).scale(0.5),
        }
    }

    pub fn from_real(d: usize, values: &[f64]) -> Result<Self> {
        if values.len() != d * d {
            return Err(WrError::DimensionMismatch {
                expected: d * d,
                found: values.len(),
            });
        }
        Self::new(CMatrix::from_fn(d, d, |i, j| C64::new(values[i * d + j], 0.0)))
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            entries: CMatrix::zeros(d, d),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            entries: CMatrix::identity(d, d),
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let d = values.len();
        Self {
            entries: CMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    C64::new(values[i], 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.entries[(i, i)].re).sum()
    }

    pub fn spectrum(&self) -> Spectrum {
        let eig = self.entries.clone().symmetric_eigen();
        Spectrum {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.spectrum().min()
    }

    /// `<x, M x>`, real part.
    pub fn quadratic_form(&self, x: &CVector) -> f64 {
        x.dotc(&(&self.entries * x)).re
    }

    pub fn max_abs_entry(&self) -> f64 {
        max_abs(&self.entries)
    }

    /// Sum of absolute eigenvalues.
    pub fn trace_norm(&self) -> f64 {
        self.spectrum().values.iter().map(|v| v.abs()).sum()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self {
            entries: &self.entries + &other.entries,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self {
            entries: &self.entries - &other.entries,
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            entries: self.entries.map(|z| z * s),
        }
    }

    /// `S M S` for Hermitian `S`.
    pub(crate) fn congruence(s: &CMatrix, m: &CMatrix) -> Self {
        Self::symmetrized(s * m * s)
    }
}

/// Hermitian matrix whose spectrum is nonnegative up to `psd_tol`.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdMatrix {
    base: HermitianMatrix,
    eig_floor: f64,
}

impl PsdMatrix {
    pub fn new(base: HermitianMatrix, tol: &Tolerances) -> Result<Self> {
        let spectrum = base.spectrum();
        Self::validated(base, &spectrum, tol)
    }

    pub fn from_matrix(m: CMatrix, tol: &Tolerances) -> Result<Self> {
        Self::new(HermitianMatrix::new(m)?, tol)
    }

    fn validated(base: HermitianMatrix, spectrum: &Spectrum, tol: &Tolerances) -> Result<Self> {
        let floor = spectrum.min();
        let limit = tol.psd(base.trace());
        if !(floor >= -limit) {
            return Err(WrError::NotPsd {
                min_eigenvalue: floor,
                tolerance: limit,
            });
        }
        Ok(Self {
            base,
            eig_floor: floor.min(0.0),
        })
    }

    /// Validates `base` and returns it together with its square root, sharing
    /// one eigendecomposition.
    pub fn with_sqrt(base: HermitianMatrix, tol: &Tolerances) -> Result<(Self, PsdMatrix)> {
        let spectrum = base.spectrum();
        let psd = Self::validated(base, &spectrum, tol)?;
        let root = sqrt_from_spectrum(&spectrum);
        Ok((psd, root))
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            base: HermitianMatrix::zeros(d),
            eig_floor: 0.0,
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            base: HermitianMatrix::identity(d),
            eig_floor: 0.0,
        }
    }

    /// Diagonal matrix; panics on negative entries.
    pub fn diagonal(values: &[f64]) -> Self {
        assert!(values.iter().all(|v| *v >= 0.0), "negative diagonal entry");
        Self {
            base: HermitianMatrix::diagonal(values),
            eig_floor: 0.0,
        }
    }

    /// Rank-one projector-like matrix `v v*` (not normalized).
    pub fn outer(v: &CVector) -> Self {
        Self {
            base: HermitianMatrix::symmetrized(v * v.adjoint()),
            eig_floor: 0.0,
        }
    }

    pub(crate) fn from_parts_unchecked(base: HermitianMatrix) -> Self {
        Self {
            base,
            eig_floor: 0.0,
        }
    }

    pub fn hermitian(&self) -> &HermitianMatrix {
        &self.base
    }

    pub fn entries(&self) -> &CMatrix {
        self.base.entries()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn eig_floor(&self) -> f64 {
        self.eig_floor
    }

    pub fn trace(&self) -> f64 {
        trace_of(self)
    }

    pub fn quadratic_form(&self, x: &CVector) -> f64 {
        self.base.quadratic_form(x)
    }

    pub fn sqrt(&self) -> PsdMatrix {
        psd_sqrt(self)
    }

    pub fn is_zero(&self) -> bool {
        self.base.max_abs_entry() == 0.0
    }

    /// Trace-norm distance `||self - other||_1`.
    pub fn trace_distance(&self, other: &PsdMatrix) -> Result<f64> {
        Ok(self.base.sub(&other.base)?.trace_norm())
    }

    /// Max-entry distance.
    pub fn max_entry_distance(&self, other: &PsdMatrix) -> Result<f64> {
        Ok(self.base.sub(&other.base)?.max_abs_entry())
    }

    pub fn add(&self, other: &PsdMatrix) -> Result<PsdMatrix> {
        Ok(Self::from_parts_unchecked(self.base.add(&other.base)?))
    }

    pub fn scale(&self, s: f64) -> PsdMatrix {
        assert!(s >= 0.0);
        Self::from_parts_unchecked(self.base.scale(s))
    }
}

/// Principal square root via eigendecomposition, with `max(lambda, 0)` clamping.
pub fn psd_sqrt(p: &PsdMatrix) -> PsdMatrix {
    sqrt_from_spectrum(&p.base.spectrum())
}

fn sqrt_from_spectrum(spectrum: &Spectrum) -> PsdMatrix {
    let noise = spectrum.noise_floor();
    PsdMatrix::from_parts_unchecked(HermitianMatrix::symmetrized(
        spectrum.apply(|l| if l > noise { l.sqrt() } else { 0.0 }),
    ))
}

/// `A <= B` in Loewner order, i.e. `min eig(B - A) >= -tol`.
pub fn loewner_leq(a: &HermitianMatrix, b: &HermitianMatrix, tol: f64) -> Result<bool> {
    Ok(b.sub(a)?.min_eigenvalue() >= -tol)
}

/// Sum of the real parts of the diagonal.
pub fn trace_of(p: &PsdMatrix) -> f64 {
    p.base.trace()
}

/// A matrix with operator norm at most `1 + op_tol`, with its effect `C*C`
/// and the complementary effect `I - C*C` cached.
#[derive(Clone, Debug)]
pub struct ContractionMatrix {
    base: CMatrix,
    effect: PsdMatrix,
    complement: PsdMatrix,
}

impl ContractionMatrix {
    pub fn new(base: CMatrix, tol: &Tolerances) -> Result<Self> {
        if base.nrows() != base.ncols() {
            return Err(WrError::NotSquare {
                rows: base.nrows(),
                cols: base.ncols(),
            });
        }
        let norm = operator_norm(&base);
        if norm > 1.0 + tol.op {
            return Err(WrError::NotContraction {
                norm,
                tolerance: tol.op,
            });
        }
        let d = base.nrows();
        let effect_h = HermitianMatrix::symmetrized(base.adjoint() * &base);
        let effect = PsdMatrix::new(effect_h.clone(), tol)?;
        let complement = PsdMatrix::new(HermitianMatrix::identity(d).sub(&effect_h)?, tol)?;
        Ok(Self {
            base,
            effect,
            complement,
        })
    }

    /// Diagonal contraction with real entries.
    pub fn diagonal(values: &[f64], tol: &Tolerances) -> Result<Self> {
        let d = values.len();
        Self::new(
            CMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    C64::new(values[i], 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }),
            tol,
        )
    }

    pub fn scaled_identity(d: usize, gamma: f64, tol: &Tolerances) -> Result<Self> {
        Self::new(CMatrix::identity(d, d).scale(gamma), tol)
    }

    /// Orthogonal projection onto the span of `vectors`, orthonormalized by
    /// modified Gram-Schmidt. Vectors whose residual norm falls below
    /// `gs_tol` times their original norm are dropped as dependent.
    pub fn projection(
        d: usize,
        vectors: &[CVector],
        gs_tol: f64,
        tol: &Tolerances,
    ) -> Result<Self> {
        let mut basis: Vec<CVector> = Vec::new();
        for v in vectors {
            check_dims(d, v.len())?;
            let original = v.norm();
            if original == 0.0 {
                continue;
            }
            let mut w = v.clone();
            for q in &basis {
                let c = q.dotc(&w);
                w -= q * c;
            }
            let n = w.norm();
            if n > gs_tol * original {
                basis.push(w.unscale(n));
            }
        }
        let mut p = CMatrix::zeros(d, d);
        for q in &basis {
            p += q * q.adjoint();
        }
        Self::new(p, tol)
    }

    pub fn base(&self) -> &CMatrix {
        &self.base
    }

    /// The effect `A = C*C`.
    pub fn effect(&self) -> &PsdMatrix {
        &self.effect
    }

    /// `I - C*C`.
    pub fn complement(&self) -> &PsdMatrix {
        &self.complement
    }

    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    pub fn operator_norm(&self) -> f64 {
        operator_norm(&self.base)
    }
}

/// Largest singular value.
pub fn operator_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// One weighted-residual step: `R = D + R1` with `D = R^{1/2} A R^{1/2}`.
#[derive(Clone, Debug)]
pub struct SplitPair {
    pub dissipated: PsdMatrix,
    pub remainder: PsdMatrix,
}

pub fn split(r: &PsdMatrix, c: &ContractionMatrix, tol: &Tolerances) -> Result<SplitPair> {
    check_dims(r.dim(), c.dim())?;
    let root = psd_sqrt(r);
    let pair = split_with_root(r, root.entries(), c)?;
    let scale = Tolerances {
        psd_rel: tol.psd(r.trace()),
        ..*tol
    };
    Ok(SplitPair {
        dissipated: PsdMatrix::new(pair.dissipated.base, &scale)?,
        remainder: PsdMatrix::new(pair.remainder.base, &scale)?,
    })
}

/// Splitting with a precomputed square root; the outputs are congruences of
/// PSD matrices and are not re-validated.
pub(crate) fn split_with_root(
    r: &PsdMatrix,
    root: &CMatrix,
    c: &ContractionMatrix,
) -> Result<SplitPair> {
    check_dims(r.dim(), c.dim())?;
    Ok(SplitPair {
        dissipated: PsdMatrix::from_parts_unchecked(HermitianMatrix::congruence(
            root,
            c.effect().entries(),
        )),
        remainder: PsdMatrix::from_parts_unchecked(HermitianMatrix::congruence(
            root,
            c.complement().entries(),
        )),
    })
}

/// Canonical Douglas representative `C = A^{1/2} pinv(R^{1/2})`, which
/// vanishes on the orthogonal complement of `ran R^{1/2}`.
pub fn douglas_recover(r: &PsdMatrix, a: &PsdMatrix, tol: &Tolerances) -> Result<ContractionMatrix> {
    check_dims(r.dim(), a.dim())?;
    let gap = r.hermitian().sub(a.hermitian())?.min_eigenvalue();
    let limit = tol.psd(r.trace());
    if gap < -limit {
        return Err(WrError::NotDominated {
            min_eigenvalue: gap,
            tolerance: limit,
        });
    }
    let spectrum = r.hermitian().spectrum();
    let root_max = spectrum.max().max(0.0).sqrt();
    let cutoff = (tol.pinv * root_max).max(spectrum.noise_floor().sqrt());
    let pinv_root = spectrum.apply(|l| {
        let s = l.max(0.0).sqrt();
        if s > cutoff && s > 0.0 {
            1.0 / s
        } else {
            0.0
        }
    });
    let a_root = psd_sqrt(a);
    ContractionMatrix::new(a_root.entries() * pinv_root, tol)
}

/// Residuals and dissipations of a deterministic chain of splittings.
#[derive(Clone, Debug)]
pub struct SplittingChain {
    pub residuals: Vec<PsdMatrix>,
    pub dissipations: Vec<PsdMatrix>,
}

pub fn iterate_splitting(
    r0: &PsdMatrix,
    chain: &[ContractionMatrix],
    tol: &Tolerances,
) -> Result<SplittingChain> {
    let mut residuals = vec![r0.clone()];
    let mut dissipations = Vec::with_capacity(chain.len());
    for c in chain {
        let current = residuals.last().expect("nonempty");
        let pair = split(current, c, tol)?;
        dissipations.push(pair.dissipated);
        residuals.push(pair.remainder);
    }
    Ok(SplittingChain {
        residuals,
        dissipations,
    })
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(WrError::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Real vector as a complex column.
pub fn real_vector(values: &[f64]) -> CVector {
    CVector::from_iterator(values.len(), values.iter().map(|v| C64::new(*v, 0.0)))
}
