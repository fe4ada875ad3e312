//! Change of measure between the vector- and trace-biased path laws, and the
//! operator-valued measure of pathwise total dissipation.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Result, WrError};
use crate::paths::{cylinder_measure, pathwise_processes, weighted_sum, Frontier, FrontierRow};
use crate::psd::{CVector, HermitianMatrix, PsdMatrix};
use crate::tree::{Bias, EnergyTree, ExtendedWord, Symbol};

/// Per-step factors `p^x / p^tr` along a word and their running products.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LikelihoodTrajectory {
    pub prefix: ExtendedWord,
    pub factors: Vec<f64>,
    /// `rho[n]` is the product of the first `n` factors; `rho[0] = 1`.
    pub rho: Vec<f64>,
    /// True when no x-dead, trace-alive node is reachable within `|prefix|` steps.
    pub certified: bool,
    /// 1-based steps where `p^x > 0` but `p^tr = 0`.
    pub escapes: Vec<usize>,
}

impl LikelihoodTrajectory {
    pub fn last(&self) -> f64 {
        *self.rho.last().expect("nonempty")
    }
}

/// Factors with the convention `p / 0 = 0`, plus the steps where a positive
/// numerator met a zero denominator.
pub(crate) fn likelihood_factors(
    tree: &EnergyTree,
    bias_x: &Bias,
    u: &[Symbol],
) -> Result<(Vec<f64>, Vec<usize>)> {
    tree.spec().check_word(u)?;
    let mut node = tree.root();
    let mut factors = Vec::with_capacity(u.len());
    let mut escapes = Vec::new();
    for (k, &a) in u.iter().enumerate() {
        let absorbed = u[..k].contains(&0);
        let px = tree.row_at(&node, absorbed, bias_x).probs[a as usize];
        let pt = tree.row_at(&node, absorbed, &Bias::Trace).probs[a as usize];
        if pt > 0.0 {
            factors.push(px / pt);
        } else {
            if px > 0.0 {
                escapes.push(k + 1);
            }
            factors.push(0.0);
        }
        if a != 0 && !absorbed {
            node = tree.child(&node, &u[..=k])?;
        }
    }
    Ok((factors, escapes))
}

fn running_products(factors: &[f64]) -> Vec<f64> {
    let mut rho = Vec::with_capacity(factors.len() + 1);
    rho.push(1.0);
    for f in factors {
        rho.push(rho.last().expect("nonempty") * f);
    }
    rho
}

/// `rho_{x,n}` along `u`, certified by a compatibility scan to depth `|u|`.
pub fn likelihood_ratio(tree: &EnergyTree, x: &CVector, u: &[Symbol]) -> Result<LikelihoodTrajectory> {
    let bias_x = Bias::vector(x.clone())?;
    tree.spec().check_vector(x)?;
    let (factors, escapes) = likelihood_factors(tree, &bias_x, u)?;
    let certified = tree.compatibility_scan(x, u.len())?.is_empty();
    Ok(LikelihoodTrajectory {
        prefix: ExtendedWord::from(u),
        rho: running_products(&factors),
        factors,
        certified,
        escapes,
    })
}

/// Martingale diagnostics at level `n` under the trace-biased law.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub depth: usize,
    /// `max_u |sum_a p^tr_{u,a} rho(ua) - rho(u)|` over positive depth-`n` rows.
    pub defect: f64,
    /// `E_tr[rho_n]`.
    pub expectation: f64,
    pub expectation_defect: f64,
    pub certified: bool,
    /// x-dead, trace-alive words found by the scan to depth `n + 1`.
    pub offending: Vec<ExtendedWord>,
}

/// Trace-biased rows at depth `n` with their likelihood ratios.
fn rows_with_rho(
    tree: &EnergyTree,
    bias_x: &Bias,
    n: usize,
    cap: usize,
) -> Result<Vec<(FrontierRow, f64)>> {
    let mut level = vec![(Frontier::root(tree).rows.remove(0), 1.0)];
    for depth in 0..n {
        let mut next = Vec::with_capacity(level.len());
        for (row, rho) in &level {
            let absorbed = row.absorbed();
            let pt = tree.row_at(&row.node, absorbed, &Bias::Trace);
            let px = tree.row_at(&row.node, absorbed, bias_x);
            for a in 0..pt.probs.len() {
                if pt.probs[a] <= 0.0 {
                    continue;
                }
                let child = row.extend(tree, a as Symbol, pt.probs[a])?;
                next.push((child, rho * px.probs[a] / pt.probs[a]));
                if next.len() > cap {
                    return Err(WrError::EnumerationTooLarge {
                        rows: next.len(),
                        cap,
                        depth: depth + 1,
                    });
                }
            }
        }
        level = next;
    }
    Ok(level)
}

pub fn martingale_defect(
    tree: &EnergyTree,
    x: &CVector,
    n: usize,
    cap: usize,
) -> Result<MartingaleReport> {
    tree.spec().check_vector(x)?;
    let bias_x = Bias::Vector(x.clone());
    let offending = tree.compatibility_scan(x, n + 1)?;
    let rows = rows_with_rho(tree, &bias_x, n, cap)?;
    let mut defect: f64 = 0.0;
    let mut expectation = 0.0;
    for (row, rho) in &rows {
        expectation += row.prob * rho;
        let absorbed = row.absorbed();
        let pt = tree.row_at(&row.node, absorbed, &Bias::Trace);
        let px = tree.row_at(&row.node, absorbed, &bias_x);
        let mut next = 0.0;
        for a in 0..pt.probs.len() {
            if pt.probs[a] > 0.0 {
                next += pt.probs[a] * (rho * px.probs[a] / pt.probs[a]);
            }
        }
        defect = defect.max((next - rho).abs());
    }
    Ok(MartingaleReport {
        depth: n,
        defect,
        expectation,
        expectation_defect: (expectation - 1.0).abs(),
        certified: offending.is_empty(),
        offending,
    })
}

/// `|nu_x([u]) - rho_n(u) nu_tr([u])|` with `n = |u|`.
pub fn change_of_measure_check(tree: &EnergyTree, x: &CVector, u: &[Symbol]) -> Result<f64> {
    tree.spec().check_vector(x)?;
    let bias_x = Bias::Vector(x.clone());
    let nu_x = cylinder_measure(tree, u, &bias_x)?;
    let nu_tr = cylinder_measure(tree, u, &Bias::Trace)?;
    let (factors, _) = likelihood_factors(tree, &bias_x, u)?;
    let rho = running_products(&factors);
    Ok((nu_x - rho.last().expect("nonempty") * nu_tr).abs())
}

/// `D_1 + .. + D_k` along `prefix`, `k = min(depth, |prefix|)`.
pub fn total_dissipation(tree: &EnergyTree, prefix: &[Symbol], depth: usize) -> Result<PsdMatrix> {
    let k = depth.min(prefix.len());
    let (_, dissipations) = pathwise_processes(tree, &prefix[..k])?;
    let sum = weighted_sum(tree.spec().dim(), dissipations.iter().map(|d| (1.0, d)))?;
    Ok(PsdMatrix::from_parts_unchecked(sum))
}

/// Estimate of `M(E)` for a finite union of equal-length cylinders.
#[derive(Clone, Debug)]
pub struct OperatorMeasureCell {
    pub event: Vec<ExtendedWord>,
    pub value: PsdMatrix,
    pub depth: usize,
    pub truncation_depth: usize,
    /// `E_tr[tr R_N ; E]`, which bounds the trace-norm truncation error.
    pub truncation_bound: f64,
    /// `nu_tr(E)`.
    pub mass: f64,
}

/// `M(E) ~ sum_{v in E, |v| = N} nu_tr([v]) (R0 - R_v)`.
pub fn operator_measure(
    tree: &EnergyTree,
    event: &[ExtendedWord],
    truncation_depth: usize,
    cap: usize,
) -> Result<OperatorMeasureCell> {
    let words: BTreeSet<ExtendedWord> = event.iter().cloned().collect();
    let depth = words.iter().next().map(|w| w.len()).unwrap_or(0);
    if words.iter().any(|w| w.len() != depth) {
        return Err(WrError::InvalidParameter(
            "event words must share one length".into(),
        ));
    }
    if truncation_depth < depth {
        return Err(WrError::InvalidParameter(format!(
            "truncation depth {truncation_depth} below event depth {depth}"
        )));
    }
    let d = tree.spec().dim();
    let mut residual = HermitianMatrix::zeros(d);
    let mut mass = 0.0;
    let mut truncation_bound = 0.0;
    for w in &words {
        let mut frontier = Frontier::at(tree, w, &Bias::Trace)?;
        for _ in depth..truncation_depth {
            frontier = frontier.advance(tree, &Bias::Trace, cap)?;
        }
        residual = residual.add(&weighted_sum(
            d,
            frontier.rows.iter().map(|r| (r.prob, r.node.residual())),
        )?)?;
        for r in &frontier.rows {
            mass += r.prob;
            truncation_bound += r.prob * r.node.residual().trace();
        }
    }
    let value = tree.spec().r0().hermitian().scale(mass).sub(&residual)?;
    let value = PsdMatrix::new(value, tree.spec().tolerances())?;
    Ok(OperatorMeasureCell {
        event: words.into_iter().collect(),
        value,
        depth,
        truncation_depth,
        truncation_bound,
        mass,
    })
}

/// Trace-norm gap `||M(A u B) - M(A) - M(B)||_1` for disjoint `A`, `B`.
pub fn additivity_defect(
    tree: &EnergyTree,
    a: &[ExtendedWord],
    b: &[ExtendedWord],
    truncation_depth: usize,
    cap: usize,
) -> Result<f64> {
    let sa: BTreeSet<_> = a.iter().collect();
    if b.iter().any(|w| sa.contains(w)) {
        return Err(WrError::InvalidParameter("events are not disjoint".into()));
    }
    let union: Vec<ExtendedWord> = a.iter().chain(b).cloned().collect();
    let ma = operator_measure(tree, a, truncation_depth, cap)?;
    let mb = operator_measure(tree, b, truncation_depth, cap)?;
    let mu = operator_measure(tree, &union, truncation_depth, cap)?;
    Ok(mu
        .value
        .hermitian()
        .sub(ma.value.hermitian())?
        .sub(mb.value.hermitian())?
        .trace_norm())
}

/// All positive trace-biased words of length `n`: the event `Omega` at level `n`.
pub fn full_event(tree: &EnergyTree, n: usize, cap: usize) -> Result<Vec<ExtendedWord>> {
    let mut frontier = Frontier::root(tree);
    for _ in 0..n {
        frontier = frontier.advance(tree, &Bias::Trace, cap)?;
    }
    Ok(frontier.rows.into_iter().map(|r| r.word).collect())
}
