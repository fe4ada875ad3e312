//! Small reference trees used by tests, examples and the CLI.
//!
//! * `e1`: `d = 2`, `R0 = I`, `C1 = diag(1, 0)`, `C2 = diag(0, 1)`. Dies out by depth 2.
//! * `e2`: `d = 1`, `R0 = [1]`, single `C = [1/2]`. Never absorbs; `tr R_n = (3/4)^n`.
//! * `e4`: `d = 3`, `R0 = I`, `C1 = e1 e1*`, `C2` the projection onto `(e2 + e3)/sqrt 2`.
//!   Both projections annihilate `k = (e2 - e3)/sqrt 2`, so every path freezes at `k k*`.
//! * `e5`: `d = 2`, `R0 = I`, effects `diag(1/2, 1/4)` and `diag(1/2, 3/4)` summing to `I`.
//! * `two_atom`: `d = 3`, `R0 = I`, `C1 = diag(1, 0, 1/sqrt 2)`, `C2 = diag(0, 1, 0)`,
//!   `C3 = diag(1, 0, 0)`. Under the bias `x = (1, 1, 0)/sqrt 2` every path
//!   freezes after two steps at `diag(0, 0, 1/2)` or `diag(0, 0, 1)`, each
//!   with probability `1/2`.

use crate::psd::{real_vector, CVector, ContractionMatrix, PsdMatrix, Tolerances};
use crate::tree::{EnergyTree, TreeSpec};

fn build(r0: PsdMatrix, cs: Vec<ContractionMatrix>) -> EnergyTree {
    EnergyTree::new(TreeSpec::with_defaults(r0, cs).expect("fixture spec")).expect("fixture tree")
}

fn diag(v: &[f64]) -> ContractionMatrix {
    ContractionMatrix::diagonal(v, &Tolerances::default()).expect("fixture contraction")
}

pub fn e1() -> EnergyTree {
    build(
        PsdMatrix::identity(2),
        vec![diag(&[1.0, 0.0]), diag(&[0.0, 1.0])],
    )
}

pub fn e2() -> EnergyTree {
    build(PsdMatrix::identity(1), vec![diag(&[0.5])])
}

pub fn e4() -> EnergyTree {
    let tol = Tolerances::default();
    let p1 = ContractionMatrix::projection(3, &[real_vector(&[1.0, 0.0, 0.0])], 1e-12, &tol)
        .expect("fixture projection");
    let p2 = ContractionMatrix::projection(3, &[real_vector(&[0.0, 1.0, 1.0])], 1e-12, &tol)
        .expect("fixture projection");
    build(PsdMatrix::identity(3), vec![p1, p2])
}

pub fn e5() -> EnergyTree {
    build(
        PsdMatrix::identity(2),
        vec![
            diag(&[0.5f64.sqrt(), 0.5]),
            diag(&[0.5f64.sqrt(), 0.75f64.sqrt()]),
        ],
    )
}

pub fn two_atom() -> EnergyTree {
    build(
        PsdMatrix::identity(3),
        vec![
            diag(&[1.0, 0.0, 0.5f64.sqrt()]),
            diag(&[0.0, 1.0, 0.0]),
            diag(&[1.0, 0.0, 0.0]),
        ],
    )
}

pub fn two_atom_vector() -> CVector {
    let s = 0.5f64.sqrt();
    real_vector(&[s, s, 0.0])
}
