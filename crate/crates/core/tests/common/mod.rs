#![allow(dead_code)]

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use wrtree::psd::{operator_norm, HermitianMatrix};
use wrtree::{CMatrix, CVector, ContractionMatrix, EnergyTree, PsdMatrix, Tolerances, TreeSpec, C64};

/// Deterministic source of random test matrices.
pub struct Gen(ChaCha20Rng);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn signed(&mut self) -> f64 {
        2.0 * self.uniform() - 1.0
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.uniform() * n as f64) as usize % n
    }

    pub fn matrix(&mut self, d: usize) -> CMatrix {
        CMatrix::from_fn(d, d, |_, _| C64::new(self.signed(), self.signed()))
    }

    pub fn vector(&mut self, d: usize) -> CVector {
        CVector::from_fn(d, |_, _| C64::new(self.signed(), self.signed()))
    }

    /// `G G* / d`, optionally rank-deficient.
    pub fn psd(&mut self, d: usize) -> PsdMatrix {
        let rank = if self.uniform() < 0.25 { 1 + self.below(d) } else { d };
        let g = CMatrix::from_fn(d, rank, |_, _| C64::new(self.signed(), self.signed()));
        let m = (&g * g.adjoint()).scale(1.0 / d as f64);
        PsdMatrix::from_matrix(m, &Tolerances::default()).expect("random psd")
    }

    /// Random matrix scaled to operator norm in `[0.3, 1]`.
    pub fn contraction(&mut self, d: usize) -> ContractionMatrix {
        let m = self.matrix(d);
        let target = 0.3 + 0.7 * self.uniform();
        let c = m.scale(target / operator_norm(&m));
        ContractionMatrix::new(c, &Tolerances::default()).expect("random contraction")
    }

    pub fn tree(&mut self, d: usize, m: usize) -> EnergyTree {
        let r0 = self.psd(d);
        let cs = (0..m).map(|_| self.contraction(d)).collect();
        EnergyTree::new(TreeSpec::with_defaults(r0, cs).expect("spec")).expect("tree")
    }

    /// 0-free word of length `n` over `1..=m`.
    pub fn word(&mut self, n: usize, m: usize) -> Vec<u16> {
        (0..n).map(|_| 1 + self.below(m) as u16).collect()
    }
}

pub fn min_eig(h: &HermitianMatrix) -> f64 {
    h.min_eigenvalue()
}

/// Plain matrix product `S S*`-free reconstruction helper: `A^{1/2} B A^{1/2}`.
pub fn sandwich(a_root: &CMatrix, b: &CMatrix) -> CMatrix {
    a_root * b * a_root
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Square root by a direct eigendecomposition of the Hermitian part.
pub fn oracle_sqrt(m: &CMatrix) -> CMatrix {
    let h = (m + m.adjoint()).scale(0.5);
    let eig = h.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| C64::new(v.max(0.0).sqrt(), 0.0));
    &eig.eigenvectors * CMatrix::from_diagonal(&roots) * eig.eigenvectors.adjoint()
}

/// Smallest eigenvalue of the Hermitian part.
pub fn oracle_min_eig(m: &CMatrix) -> f64 {
    let h = (m + m.adjoint()).scale(0.5);
    h.symmetric_eigen().eigenvalues.min()
}
