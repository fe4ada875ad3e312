//! Empirical boundary calculus: the law of the terminal residual `R_inf`,
//! its fibers, conditional path kernels and the boundary density `h_x`.
//!
//! Fibers are identified by greedy trace-norm clustering of truncated
//! estimates of `R_inf`, taking the first sample that opens a cluster as its
//! center. A law with a single atom has the unconditioned measure as its only
//! kernel, which is then evaluated exactly rather than from samples.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Result, WrError};
use crate::measure::{likelihood_factors, operator_measure};
use crate::paths::{cylinder_measure, enumerate_depth, par_map, sample_path, CylinderTable, RngStreamSpec};
use crate::psd::{CVector, HermitianMatrix, PsdMatrix};
use crate::tree::{Bias, EnergyTree, ExtendedWord, Symbol};

/// Agreement band for Monte Carlo comparisons, in standard errors.
pub const MC_SIGMAS: f64 = 4.0;

/// Sampling parameters shared by the boundary estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundaryConfig {
    pub samples: usize,
    pub truncation_depth: usize,
    pub cluster_tol: f64,
    pub seed: u64,
    pub workers: usize,
}

impl BoundaryConfig {
    /// `cluster_tol = 1e-4 * tr(R0)`.
    pub fn new(tree: &EnergyTree, samples: usize, truncation_depth: usize, seed: u64) -> Self {
        Self {
            samples,
            truncation_depth,
            cluster_tol: 1e-4 * tree.spec().r0().trace().max(f64::MIN_POSITIVE),
            seed,
            workers: 1,
        }
    }
}

/// One sampled path reduced to what the boundary estimators need.
#[derive(Clone, Debug)]
pub struct BoundarySample {
    pub symbols: ExtendedWord,
    pub r_hat: PsdMatrix,
    pub err_bound: f64,
    pub atom: usize,
}

#[derive(Clone, Debug)]
pub struct BoundaryAtom {
    pub representative: PsdMatrix,
    pub weight: f64,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct BoundaryLaw {
    pub bias: Bias,
    pub config: BoundaryConfig,
    pub atoms: Vec<BoundaryAtom>,
    pub samples: Vec<BoundarySample>,
    pub err_median: f64,
    pub err_max: f64,
}

impl BoundaryLaw {
    /// Atom with the largest weight (first one on ties).
    pub fn largest_atom(&self) -> usize {
        let mut best = 0;
        for (i, a) in self.atoms.iter().enumerate() {
            if a.weight > self.atoms[best].weight {
                best = i;
            }
        }
        best
    }
}

/// Trace-norm distance with Frobenius shortcuts: `||X||_F <= ||X||_1 <= sqrt(d) ||X||_F`.
fn within(a: &PsdMatrix, b: &PsdMatrix, tol: f64) -> Result<bool> {
    let diff = a.hermitian().sub(b.hermitian())?;
    let frob = diff.entries().norm();
    if frob > tol {
        return Ok(false);
    }
    if frob * (diff.dim() as f64).sqrt() <= tol {
        return Ok(true);
    }
    Ok(diff.trace_norm() <= tol)
}

/// First center within `tol` of `p`.
fn nearest_center(centers: &[&PsdMatrix], p: &PsdMatrix, tol: f64) -> Result<Option<usize>> {
    for (i, c) in centers.iter().enumerate() {
        if within(c, p, tol)? {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

/// Greedy clustering in input order: each point joins the first center within
/// `tol`, or opens a new cluster centered on itself. Returns the cluster index
/// of every point and the index of each cluster's center.
pub fn greedy_cluster(points: &[PsdMatrix], tol: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut centers: Vec<usize> = Vec::new();
    let mut labels = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let refs: Vec<&PsdMatrix> = centers.iter().map(|c| &points[*c]).collect();
        match nearest_center(&refs, p, tol)? {
            Some(k) => labels.push(k),
            None => {
                labels.push(centers.len());
                centers.push(i);
            }
        }
    }
    Ok((labels, centers))
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Truncated `R_inf` estimates for streams `first_stream ..`.
fn sample_estimates(
    tree: &EnergyTree,
    bias: &Bias,
    config: &BoundaryConfig,
    first_stream: u64,
    count: usize,
) -> Result<Vec<(ExtendedWord, PsdMatrix, f64)>> {
    par_map(config.workers, count, |i| {
        let path = sample_path(
            tree,
            bias,
            RngStreamSpec::new(config.seed, first_stream + i as u64),
            config.truncation_depth,
        )?;
        let est = path.limit_estimate();
        Ok((path.symbols, est.r_hat, est.err_bound))
    })
}

/// Empirical law of `R_inf` under the `bias`-biased path measure.
pub fn boundary_law(tree: &EnergyTree, bias: &Bias, config: BoundaryConfig) -> Result<BoundaryLaw> {
    tree.spec().check_bias(bias)?;
    if config.samples == 0 {
        return Err(WrError::InvalidParameter("samples must be positive".into()));
    }
    if !(config.cluster_tol > 0.0) {
        return Err(WrError::InvalidParameter("cluster_tol must be positive".into()));
    }
    let raw = sample_estimates(tree, bias, &config, 0, config.samples)?;
    let errs: Vec<f64> = raw.iter().map(|r| r.2).collect();
    let err_median = median(&errs);
    let err_max = errs.iter().copied().fold(0.0, f64::max);
    if !(err_median < config.cluster_tol / 4.0) {
        return Err(WrError::TruncationInsufficient {
            depth: config.truncation_depth,
            median: err_median,
            max: err_max,
            required: config.cluster_tol / 4.0,
        });
    }
    let estimates: Vec<PsdMatrix> = raw.iter().map(|r| r.1.clone()).collect();
    let (labels, centers) = greedy_cluster(&estimates, config.cluster_tol)?;
    let n = config.samples as f64;
    let mut atoms: Vec<BoundaryAtom> = centers
        .iter()
        .map(|c| BoundaryAtom {
            representative: estimates[*c].clone(),
            weight: 0.0,
            members: Vec::new(),
        })
        .collect();
    for (i, l) in labels.iter().enumerate() {
        atoms[*l].members.push(i);
    }
    for a in &mut atoms {
        a.weight = a.members.len() as f64 / n;
    }
    let samples = raw
        .into_iter()
        .zip(labels)
        .map(|((symbols, r_hat, err_bound), atom)| BoundarySample {
            symbols,
            r_hat,
            err_bound,
            atom,
        })
        .collect();
    Ok(BoundaryLaw {
        bias: bias.clone(),
        config,
        atoms,
        samples,
        err_median,
        err_max,
    })
}

/// `R_inf` a.s. constant at cluster resolution: one atom carries at least `1 - tol`.
pub fn triviality_test(law: &BoundaryLaw, tol: f64) -> bool {
    law.atoms.iter().any(|a| a.weight >= 1.0 - tol)
}

/// Conditional path kernels `nu^T([u])` for `|u| = depth`, one table per atom.
pub fn disintegrate(
    tree: &EnergyTree,
    law: &BoundaryLaw,
    depth: usize,
    cap: usize,
) -> Result<Vec<CylinderTable>> {
    check_depth(law, depth)?;
    if law.atoms.len() == 1 {
        return Ok(vec![enumerate_depth(tree, depth, &law.bias, cap)?]);
    }
    Ok(law
        .atoms
        .iter()
        .map(|atom| {
            let mut rows: BTreeMap<ExtendedWord, f64> = BTreeMap::new();
            let share = 1.0 / atom.members.len() as f64;
            for i in &atom.members {
                *rows
                    .entry(law.samples[*i].symbols.prefix(depth))
                    .or_insert(0.0) += share;
            }
            CylinderTable {
                depth,
                bias: law.bias.tag().to_string(),
                rows,
            }
        })
        .collect())
}

fn check_depth(law: &BoundaryLaw, depth: usize) -> Result<()> {
    if depth > law.config.truncation_depth {
        return Err(WrError::InvalidParameter(format!(
            "depth {depth} exceeds truncation depth {}",
            law.config.truncation_depth
        )));
    }
    Ok(())
}

/// Worst per-cylinder gap between `sum_T w(T) nu^T(E)` and the exact `nu(E)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DisintegrationCheck {
    pub max_defect: f64,
    /// Largest defect in standard errors `sqrt(p(1 - p)/N)`.
    pub max_z: f64,
    pub cylinders: usize,
}

impl DisintegrationCheck {
    pub fn passes(&self) -> bool {
        self.max_z <= MC_SIGMAS
    }
}

/// Mixture identity on every cylinder of length `1..=depth`.
pub fn disintegration_check(
    tree: &EnergyTree,
    law: &BoundaryLaw,
    kernels: &[CylinderTable],
    cap: usize,
) -> Result<DisintegrationCheck> {
    let depth = kernels.first().map(|k| k.depth).unwrap_or(0);
    let n = law.samples.len() as f64;
    let mut check = DisintegrationCheck {
        max_defect: 0.0,
        max_z: 0.0,
        cylinders: 0,
    };
    let mut levels: Vec<CylinderTable> = kernels.to_vec();
    for k in (1..=depth).rev() {
        let mut words: BTreeSet<ExtendedWord> = BTreeSet::new();
        for t in &levels {
            words.extend(t.rows.keys().cloned());
        }
        words.extend(enumerate_depth(tree, k, &law.bias, cap)?.rows.into_keys());
        for w in &words {
            let mixture: f64 = law
                .atoms
                .iter()
                .zip(&levels)
                .map(|(a, t)| a.weight * t.get(w))
                .sum();
            let exact = cylinder_measure(tree, w, &law.bias)?;
            let defect = (mixture - exact).abs();
            let se = (exact * (1.0 - exact) / n).max(0.0).sqrt();
            check.max_defect = check.max_defect.max(defect);
            check.max_z = check.max_z.max(z_score(defect, se));
            check.cylinders += 1;
        }
        levels = levels.iter().map(|t| t.marginal()).collect();
    }
    Ok(check)
}

/// `defect / se`, with roundoff-sized defects counted as agreement when `se = 0`.
fn z_score(defect: f64, se: f64) -> f64 {
    if defect <= 1e-12 {
        0.0
    } else if se > 0.0 {
        defect / se
    } else {
        f64::INFINITY
    }
}

/// Boundary density estimates and the pushforward cross-check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryDensityTable {
    /// `h_x(T)`: fiber mean of `rho_x` divided by its overall mean.
    pub h: Vec<f64>,
    pub rho_mean: f64,
    pub rho_stderr: f64,
    /// `rho_x` at the truncation depth for every sample of the law.
    pub rho: Vec<f64>,
    pub certified: bool,
    pub certified_depth: usize,
    pub offending: Vec<ExtendedWord>,
    /// Independent estimate of `mu_x(T)` from `x`-biased samples.
    pub direct_mu_x: Vec<f64>,
    /// `h_x(T) mu_tr(T)`.
    pub weighted_mu_tr: Vec<f64>,
    pub combined_stderr: Vec<f64>,
    /// Fraction of `x`-biased samples that matched no atom.
    pub unassigned: f64,
    pub direct_atoms: Vec<Option<usize>>,
    pub max_z: f64,
}

impl BoundaryDensityTable {
    pub fn passes(&self) -> bool {
        self.max_z <= MC_SIGMAS && self.unassigned == 0.0
    }
}

/// `rho_x` at the end of every sampled prefix.
fn sample_rhos(tree: &EnergyTree, bias_x: &Bias, law: &BoundaryLaw) -> Result<Vec<f64>> {
    par_map(law.config.workers, law.samples.len(), |i| {
        let (factors, _) = likelihood_factors(tree, bias_x, &law.samples[i].symbols)?;
        Ok(factors.iter().product())
    })
}

/// Self-normalized `sum_i a_i / sum_i b_i` and its delta-method standard error.
fn ratio_estimate(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    if sb == 0.0 {
        return (0.0, 0.0);
    }
    let r = sa / sb;
    let bbar = sb / n;
    let var = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| (ai - r * bi).powi(2))
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    (r, (var / n).sqrt() / bbar)
}

/// Boundary density `h_x` on the atoms of a trace-biased law, with the
/// compatibility scan capped at `scan_depth`.
pub fn boundary_density(
    tree: &EnergyTree,
    x: &CVector,
    law: &BoundaryLaw,
    direct_samples: usize,
    scan_depth: usize,
) -> Result<BoundaryDensityTable> {
    tree.spec().check_vector(x)?;
    if law.bias != Bias::Trace {
        return Err(WrError::InvalidParameter(
            "boundary density needs a trace-biased law".into(),
        ));
    }
    let bias_x = Bias::Vector(x.clone());
    let certified_depth = scan_depth.min(law.config.truncation_depth);
    let offending = tree.compatibility_scan(x, certified_depth)?;
    let rho = sample_rhos(tree, &bias_x, law)?;
    let n = rho.len() as f64;
    let rho_mean = rho.iter().sum::<f64>() / n;
    let rho_var = rho.iter().map(|r| (r - rho_mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let k = law.atoms.len();

    let mut h = Vec::with_capacity(k);
    let mut weighted = Vec::with_capacity(k);
    let mut weighted_se = Vec::with_capacity(k);
    for (t, atom) in law.atoms.iter().enumerate() {
        if k == 1 {
            h.push(1.0);
            weighted.push(1.0);
            weighted_se.push(0.0);
            continue;
        }
        let fiber_mean = atom.members.iter().map(|i| rho[*i]).sum::<f64>() / atom.members.len() as f64;
        h.push(if rho_mean > 0.0 { fiber_mean / rho_mean } else { 0.0 });
        let a: Vec<f64> = law
            .samples
            .iter()
            .zip(&rho)
            .map(|(s, r)| if s.atom == t { *r } else { 0.0 })
            .collect();
        let (w, se) = ratio_estimate(&a, &rho);
        weighted.push(w);
        weighted_se.push(se);
    }

    let direct_config = BoundaryConfig {
        samples: direct_samples,
        ..law.config
    };
    let raw = sample_estimates(tree, &bias_x, &direct_config, law.samples.len() as u64, direct_samples)?;
    let centers: Vec<&PsdMatrix> = law.atoms.iter().map(|a| &a.representative).collect();
    let direct_atoms = raw
        .iter()
        .map(|(_, r_hat, _)| nearest_center(&centers, r_hat, law.config.cluster_tol))
        .collect::<Result<Vec<_>>>()?;
    let nd = direct_samples.max(1) as f64;
    let mut direct_mu_x = vec![0.0; k];
    for a in direct_atoms.iter().flatten() {
        direct_mu_x[*a] += 1.0 / nd;
    }
    let unassigned = direct_atoms.iter().filter(|a| a.is_none()).count() as f64 / nd;
    let mut combined_stderr = Vec::with_capacity(k);
    let mut max_z: f64 = 0.0;
    for t in 0..k {
        let p = direct_mu_x[t];
        let se = ((p * (1.0 - p) / nd) + weighted_se[t].powi(2)).sqrt();
        combined_stderr.push(se);
        max_z = max_z.max(z_score((p - weighted[t]).abs(), se));
    }
    Ok(BoundaryDensityTable {
        h,
        rho_mean,
        rho_stderr: (rho_var / n).sqrt(),
        rho,
        certified: offending.is_empty(),
        certified_depth,
        offending,
        direct_mu_x,
        weighted_mu_tr: weighted,
        combined_stderr,
        unassigned,
        direct_atoms,
        max_z,
    })
}

/// Event for [`mixture_check`].
#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    /// Pullback of a set of atoms: measurable with respect to `R_inf`.
    Fibers(Vec<usize>),
    /// A single cylinder `[u]`.
    Cylinder(ExtendedWord),
}

/// Both sides of the mixture formula for `nu_x(E)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixtureCheck {
    pub boundary_measurable: bool,
    pub nu_x: f64,
    /// `sum_T h_x(T) mu_tr(T) nu^T(E)`.
    pub naive_form: f64,
    /// `sum_T mu_tr(T) E[1_E rho_x | T]`.
    pub corrected: f64,
    pub naive_defect: f64,
    pub corrected_defect: f64,
    pub stderr: f64,
}

impl MixtureCheck {
    /// The asserted identity: the naive form on fiber events, the corrected
    /// form on general cylinders.
    pub fn passes(&self) -> bool {
        let defect = if self.boundary_measurable {
            self.naive_defect
        } else {
            self.corrected_defect
        };
        z_score(defect, self.stderr) <= MC_SIGMAS
    }
}

pub fn mixture_check(
    tree: &EnergyTree,
    x: &CVector,
    law: &BoundaryLaw,
    density: &BoundaryDensityTable,
    event: &Event,
    cap: usize,
) -> Result<MixtureCheck> {
    let k = law.atoms.len();
    match event {
        Event::Fibers(set) => {
            let set: BTreeSet<usize> = set.iter().copied().collect();
            if let Some(bad) = set.iter().find(|a| **a >= k) {
                return Err(WrError::InvalidParameter(format!("no atom {bad}")));
            }
            let nd = density.direct_atoms.len().max(1) as f64;
            let nu_x = density
                .direct_atoms
                .iter()
                .filter(|a| a.map_or(false, |a| set.contains(&a)))
                .count() as f64
                / nd;
            let naive_form: f64 = set.iter().map(|t| density.weighted_mu_tr[*t]).sum();
            let a: Vec<f64> = law
                .samples
                .iter()
                .zip(&density.rho)
                .map(|(s, r)| if set.contains(&s.atom) { *r } else { 0.0 })
                .collect();
            let (_, weighted_se) = if k == 1 {
                (1.0, 0.0)
            } else {
                ratio_estimate(&a, &density.rho)
            };
            let stderr = (nu_x * (1.0 - nu_x) / nd + weighted_se.powi(2)).sqrt();
            Ok(MixtureCheck {
                boundary_measurable: true,
                nu_x,
                naive_form,
                corrected: naive_form,
                naive_defect: (nu_x - naive_form).abs(),
                corrected_defect: (nu_x - naive_form).abs(),
                stderr,
            })
        }
        Event::Cylinder(u) => {
            check_depth(law, u.len())?;
            let bias_x = Bias::Vector(x.clone());
            let nu_x = cylinder_measure(tree, u, &bias_x)?;
            let kernels = disintegrate(tree, law, u.len(), cap)?;
            let naive_form: f64 = (0..k)
                .map(|t| density.h[t] * law.atoms[t].weight * kernels[t].get(u))
                .sum();
            let (corrected, stderr) = if k == 1 {
                let (factors, _) = likelihood_factors(tree, &bias_x, u)?;
                let rho: f64 = factors.iter().product();
                (cylinder_measure(tree, u, &law.bias)? * rho, 0.0)
            } else {
                let a: Vec<f64> = law
                    .samples
                    .iter()
                    .zip(&density.rho)
                    .map(|(s, r)| if s.symbols.starts_with(u) { *r } else { 0.0 })
                    .collect();
                ratio_estimate(&a, &density.rho)
            };
            Ok(MixtureCheck {
                boundary_measurable: false,
                nu_x,
                naive_form,
                corrected,
                naive_defect: (nu_x - naive_form).abs(),
                corrected_defect: (nu_x - corrected).abs(),
                stderr,
            })
        }
    }
}

/// Operator boundary formula on a set of atoms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatorBoundaryCheck {
    /// `||M(R_inf^{-1}(S)) - sum_{T in S} mu(T)(R0 - T)||_1`.
    pub defect: f64,
    pub tolerance: f64,
    pub truncation_bound: f64,
    pub stderr: f64,
    pub exact: bool,
}

impl OperatorBoundaryCheck {
    pub fn passes(&self) -> bool {
        self.defect <= self.tolerance
    }
}

/// Compares the operator-valued measure of the fiber pullback of `subset`
/// with the boundary integral of `R0 - T`. When `subset` holds every atom and
/// `exact_depth` is given, the pullback is the whole path space and its
/// measure is computed by exact enumeration; otherwise it is averaged over
/// the law's samples.
pub fn operator_boundary_check(
    tree: &EnergyTree,
    law: &BoundaryLaw,
    subset: &[usize],
    exact_depth: Option<usize>,
    cap: usize,
) -> Result<OperatorBoundaryCheck> {
    let set: BTreeSet<usize> = subset.iter().copied().collect();
    if let Some(bad) = set.iter().find(|a| **a >= law.atoms.len()) {
        return Err(WrError::InvalidParameter(format!("no atom {bad}")));
    }
    let d = tree.spec().dim();
    let r0 = tree.spec().r0().hermitian();
    let mut formula = HermitianMatrix::zeros(d);
    let mut mass = 0.0;
    for t in &set {
        let atom = &law.atoms[*t];
        mass += atom.weight;
        formula = formula.add(&r0.sub(atom.representative.hermitian())?.scale(atom.weight))?;
    }
    let cluster_slack = mass * law.config.cluster_tol;
    if set.len() == law.atoms.len() {
        if let Some(n) = exact_depth {
            let cell = operator_measure(tree, &[ExtendedWord::empty()], n, cap)?;
            let defect = cell.value.hermitian().sub(&formula)?.trace_norm();
            let member_err: f64 = law.samples.iter().map(|s| s.err_bound).sum::<f64>()
                / law.samples.len() as f64;
            return Ok(OperatorBoundaryCheck {
                defect,
                tolerance: cluster_slack + cell.truncation_bound + member_err,
                truncation_bound: cell.truncation_bound,
                stderr: 0.0,
                exact: true,
            });
        }
    }
    let n = law.samples.len() as f64;
    let mut estimate = HermitianMatrix::zeros(d);
    let mut traces = Vec::with_capacity(law.samples.len());
    let mut truncation_bound = 0.0;
    for s in &law.samples {
        if set.contains(&s.atom) {
            let term = r0.sub(s.r_hat.hermitian())?;
            traces.push(term.trace());
            estimate = estimate.add(&term.scale(1.0 / n))?;
            truncation_bound += s.err_bound / n;
        } else {
            traces.push(0.0);
        }
    }
    let mean = traces.iter().sum::<f64>() / n;
    let var = traces.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let stderr = (var / n).sqrt();
    let defect = estimate.sub(&formula)?.trace_norm();
    Ok(OperatorBoundaryCheck {
        defect,
        tolerance: cluster_slack + truncation_bound + MC_SIGMAS * stderr,
        truncation_bound,
        stderr,
        exact: false,
    })
}

/// Prefix of every sample, for event construction.
pub fn sample_prefixes(law: &BoundaryLaw, depth: usize) -> Vec<Vec<Symbol>> {
    law.samples
        .iter()
        .map(|s| s.symbols.prefix(depth).into_symbols())
        .collect()
}
