//! Extinction diagnostics: conditional dissipation, geometric decay of the
//! expected residual mass and pathwise reconstruction.

use serde::Serialize;

use crate::error::{Result, WrError};
use crate::paths::{sample_paths, Frontier, SampledPath};
use crate::tree::{Bias, EnergyTree, Symbol};

/// Absolute slack in bound checks. Covers roundoff and the mass frozen at
/// nodes declared dead, which sits near `dead_tol * tr(R0)`.
pub const VIOLATION_TOL: f64 = 1e-9;

/// Width of the Monte Carlo comparison band, in standard errors.
pub const MC_BAND: f64 = 3.0;

/// How expectations over paths are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Evaluation {
    Exact {
        cap: usize,
    },
    MonteCarlo {
        samples: usize,
        seed: u64,
        workers: usize,
    },
}

impl Evaluation {
    pub fn tag(&self) -> &'static str {
        match self {
            Evaluation::Exact { .. } => "exact",
            Evaluation::MonteCarlo { .. } => "monte_carlo",
        }
    }
}

/// `sum_j e_j^2 / s` at one node and its Cauchy-Schwarz floor `s / m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConditionalDissipation {
    pub value: f64,
    pub lower_bound: f64,
    pub s: f64,
    pub live: bool,
}

pub fn conditional_dissipation(
    tree: &EnergyTree,
    w: &[Symbol],
    bias: &Bias,
) -> Result<ConditionalDissipation> {
    if w.contains(&0) {
        return Err(WrError::InvalidWord(format!("{w:?} contains the absorbing symbol")));
    }
    tree.spec().check_bias(bias)?;
    let node = tree.node(w)?;
    let energies: Vec<f64> = node.energies(bias).into_iter().map(|e| e.max(0.0)).collect();
    let s: f64 = energies.iter().sum();
    let m = tree.m() as f64;
    if s <= tree.spec().dead_threshold(bias) {
        return Ok(ConditionalDissipation {
            value: 0.0,
            lower_bound: 0.0,
            s,
            live: false,
        });
    }
    let value = energies.iter().map(|e| e * e).sum::<f64>() / s;
    let lower_bound = s / m;
    if value < lower_bound - 1e-12 * s.max(1.0) {
        return Err(WrError::BoundViolated {
            level: w.len(),
            mass: value,
            bound: lower_bound,
        });
    }
    Ok(ConditionalDissipation {
        value,
        lower_bound,
        s,
        live: true,
    })
}

/// `E[mass(R_n)]` for `n = 0..=horizon`, with standard errors in Monte Carlo mode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassSeries {
    pub values: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
}

pub fn expected_mass(
    tree: &EnergyTree,
    horizon: usize,
    bias: &Bias,
    evaluation: Evaluation,
) -> Result<MassSeries> {
    tree.spec().check_bias(bias)?;
    match evaluation {
        Evaluation::Exact { cap } => {
            let mut frontier = Frontier::root(tree);
            let mut values = Vec::with_capacity(horizon + 1);
            for n in 0..=horizon {
                if n > 0 {
                    frontier = frontier.advance(tree, bias, cap)?;
                }
                values.push(
                    frontier
                        .rows
                        .iter()
                        .map(|r| r.prob * r.node.mass(bias))
                        .sum(),
                );
            }
            Ok(MassSeries {
                values,
                stderr: None,
            })
        }
        Evaluation::MonteCarlo {
            samples,
            seed,
            workers,
        } => {
            if samples < 2 {
                return Err(WrError::InvalidParameter(
                    "Monte Carlo mode needs at least 2 samples".into(),
                ));
            }
            let paths = sample_paths(tree, bias, seed, 0, samples, horizon.max(1), workers)?;
            let (values, stderr) = level_statistics(&paths, bias, horizon);
            Ok(MassSeries {
                values,
                stderr: Some(stderr),
            })
        }
    }
}

fn level_statistics(paths: &[SampledPath], bias: &Bias, horizon: usize) -> (Vec<f64>, Vec<f64>) {
    let n = paths.len() as f64;
    let mut means = Vec::with_capacity(horizon + 1);
    let mut errs = Vec::with_capacity(horizon + 1);
    for level in 0..=horizon {
        let mean = paths.iter().map(|p| p.masses(bias)[level]).sum::<f64>() / n;
        let var = paths
            .iter()
            .map(|p| (p.masses(bias)[level] - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        means.push(mean);
        errs.push((var / n).sqrt());
    }
    (means, errs)
}

/// Per-level comparison of `E[mass(R_n)]` against `c^n * mass(R0)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtinctionReport {
    pub bias: String,
    pub mode: String,
    pub alpha: f64,
    /// `"scan"` for the depth-bounded certificate, `"effect_floor"` for the
    /// global trace certificate `lambda_min(sum A_j)`.
    pub alpha_source: String,
    pub scan_depth: usize,
    pub c: f64,
    pub horizon: usize,
    pub initial_mass: f64,
    pub expected_mass: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    pub bound: Vec<f64>,
    pub max_excess: f64,
    pub warnings: Vec<String>,
}

pub fn extinction_report(
    tree: &EnergyTree,
    horizon: usize,
    bias: &Bias,
    evaluation: Evaluation,
    scan_depth: usize,
) -> Result<ExtinctionReport> {
    let m = tree.m() as f64;
    let scanned = tree.leakage_alpha(scan_depth, bias)?;
    let not_certified = |alpha: f64| WrError::LeakageNotCertified {
        alpha,
        scan_depth,
        horizon,
    };
    let (alpha, source) = if scan_depth >= horizon {
        (scanned, "scan")
    } else if matches!(bias, Bias::Trace) && tree.trace_leakage_floor() > 0.0 {
        (tree.trace_leakage_floor().min(scanned), "effect_floor")
    } else {
        return Err(not_certified(scanned));
    };
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(not_certified(alpha));
    }
    let alpha = alpha.min(m);
    let c = 1.0 - alpha / m;
    let series = expected_mass(tree, horizon, bias, evaluation)?;
    let initial_mass = bias.mass(tree.spec().r0());
    let bound: Vec<f64> = (0..=horizon)
        .map(|n| c.powi(n as i32) * initial_mass)
        .collect();
    let mut warnings = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for n in 0..=horizon {
        let excess = series.values[n] - bound[n];
        max_excess = max_excess.max(excess);
        match &series.stderr {
            None => {
                if excess > VIOLATION_TOL {
                    return Err(WrError::BoundViolated {
                        level: n,
                        mass: series.values[n],
                        bound: bound[n],
                    });
                }
            }
            Some(se) => {
                if excess > MC_BAND * se[n] + VIOLATION_TOL {
                    return Err(WrError::BoundViolated {
                        level: n,
                        mass: series.values[n],
                        bound: bound[n],
                    });
                }
                if excess > 0.0 {
                    warnings.push(format!(
                        "level {n}: estimate {:e} exceeds bound {:e} within the Monte Carlo allowance",
                        series.values[n], bound[n]
                    ));
                }
            }
        }
    }
    Ok(ExtinctionReport {
        bias: bias.tag().to_string(),
        mode: evaluation.tag().to_string(),
        alpha,
        alpha_source: source.to_string(),
        scan_depth,
        c,
        horizon,
        initial_mass,
        expected_mass: series.values,
        stderr: series.stderr,
        bound,
        max_excess,
        warnings,
    })
}

/// One-step drift at every live node up to a depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SupermartingaleReport {
    /// Largest `sum_a p_a mass(R_{ua}) - (mass(R_u) - s_u / m)`.
    pub max_excess: f64,
    /// Largest `|mass(R_u) - sum_a p_a mass(R_{ua}) - conditional dissipation|`.
    pub max_identity_defect: f64,
    pub live_nodes: usize,
}

/// Checks the one-step drift at every live 0-free node `u` with `|u| < depth`.
pub fn supermartingale_check(
    tree: &EnergyTree,
    depth: usize,
    bias: &Bias,
) -> Result<SupermartingaleReport> {
    tree.spec().check_bias(bias)?;
    let m = tree.m() as f64;
    let mut report = SupermartingaleReport {
        max_excess: f64::NEG_INFINITY,
        max_identity_defect: 0.0,
        live_nodes: 0,
    };
    if depth == 0 {
        return Ok(report);
    }
    tree.walk(depth - 1, |_, node| {
        let row = tree.row_at(node, false, bias);
        if !row.is_live() {
            return true;
        }
        let energies: Vec<f64> = node.energies(bias).into_iter().map(|e| e.max(0.0)).collect();
        let s: f64 = energies.iter().sum();
        let mass = node.mass(bias);
        let next: f64 = node
            .remainders()
            .iter()
            .zip(&row.probs[1..])
            .map(|(r, p)| p * bias.mass(r))
            .sum();
        let conditional = energies.iter().map(|e| e * e).sum::<f64>() / s;
        report.live_nodes += 1;
        report.max_excess = report.max_excess.max(next - (mass - s / m));
        report.max_identity_defect = report
            .max_identity_defect
            .max((mass - next - conditional).abs());
        true
    })?;
    Ok(report)
}

/// Pathwise reconstruction `mass(R0) = sum_k mass(D_k)` over sampled paths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReconstructionReport {
    /// Largest `|mass(R0) - sum_k mass(D_k)|`; the mass not yet dissipated.
    pub max_shortfall: f64,
    /// Largest `|mass(R0) - sum_k mass(D_k) - mass(R_N)|`.
    pub max_identity_defect: f64,
    pub paths: usize,
}

pub fn reconstruction_check(
    tree: &EnergyTree,
    paths: &[SampledPath],
    bias: &Bias,
) -> ReconstructionReport {
    let initial = bias.mass(tree.spec().r0());
    let mut report = ReconstructionReport {
        max_shortfall: 0.0,
        max_identity_defect: 0.0,
        paths: paths.len(),
    };
    for p in paths {
        let dissipated: f64 = p.dissipated(bias).iter().sum();
        let terminal = *p.masses(bias).last().expect("nonempty");
        report.max_shortfall = report.max_shortfall.max((initial - dissipated).abs());
        report.max_identity_defect = report
            .max_identity_defect
            .max((initial - dissipated - terminal).abs());
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::paths::DEFAULT_ENUMERATION_CAP;

    const EXACT: Evaluation = Evaluation::Exact {
        cap: DEFAULT_ENUMERATION_CAP,
    };

    #[test]
    fn conditional_dissipation_examples() {
        let c = conditional_dissipation(&fixtures::e5(), &[], &Bias::Trace).unwrap();
        assert!((c.value - 17.0 / 16.0).abs() < 1e-14);
        assert!((c.lower_bound - 1.0).abs() < 1e-14);
        let c = conditional_dissipation(&fixtures::e1(), &[], &Bias::Trace).unwrap();
        assert!((c.value - 1.0).abs() < 1e-14);
        assert!((c.value - c.lower_bound).abs() < 1e-14);
        let c = conditional_dissipation(&fixtures::e1(), &[1, 2], &Bias::Trace).unwrap();
        assert_eq!(c.value, 0.0);
        assert!(!c.live);
        assert!(conditional_dissipation(&fixtures::e1(), &[1, 0], &Bias::Trace).is_err());
    }

    #[test]
    fn expected_mass_examples() {
        let v = expected_mass(&fixtures::e5(), 1, &Bias::Trace, EXACT).unwrap();
        assert!((v.values[1] - 15.0 / 16.0).abs() < 1e-14);
        let v = expected_mass(&fixtures::e2(), 5, &Bias::Trace, EXACT).unwrap();
        assert!((v.values[5] - 0.75f64.powi(5)).abs() < 1e-14);
        let v = expected_mass(&fixtures::e1(), 2, &Bias::Trace, EXACT).unwrap();
        assert_eq!(v.values[2], 0.0);
    }

    #[test]
    fn reports() {
        let r = extinction_report(&fixtures::e5(), 6, &Bias::Trace, EXACT, 6).unwrap();
        assert!((r.alpha - 1.0).abs() < 1e-12);
        assert!((r.c - 0.5).abs() < 1e-12);
        assert!(r.max_excess <= 1e-12);

        let r = extinction_report(&fixtures::e2(), 10, &Bias::Trace, EXACT, 10).unwrap();
        assert!((r.c - 0.75).abs() < 1e-12);
        for n in 0..=10 {
            assert!((r.expected_mass[n] - r.bound[n]).abs() < 1e-12);
        }

        let r = extinction_report(&fixtures::e1(), 3, &Bias::Trace, EXACT, 3).unwrap();
        assert_eq!(r.expected_mass, vec![2.0, 1.0, 0.0, 0.0]);
        assert_eq!(r.bound, vec![2.0, 1.0, 0.5, 0.25]);
    }

    #[test]
    fn shallow_scan_needs_global_certificate() {
        let r = extinction_report(&fixtures::e5(), 8, &Bias::Trace, EXACT, 2).unwrap();
        assert_eq!(r.alpha_source, "effect_floor");
        let x = Bias::vector(crate::psd::real_vector(&[1.0, 0.0])).unwrap();
        assert!(matches!(
            extinction_report(&fixtures::e5(), 8, &x, EXACT, 2),
            Err(WrError::LeakageNotCertified { .. })
        ));
    }

    #[test]
    fn dead_with_mass_is_not_certified() {
        use crate::psd::{ContractionMatrix, PsdMatrix, Tolerances};
        use crate::tree::TreeSpec;
        let c = ContractionMatrix::diagonal(&[0.0], &Tolerances::default()).unwrap();
        let spec = TreeSpec::with_defaults(PsdMatrix::identity(1), vec![c]).unwrap();
        let t = EnergyTree::new(spec).unwrap();
        assert!(matches!(
            extinction_report(&t, 3, &Bias::Trace, EXACT, 3),
            Err(WrError::LeakageNotCertified { .. })
        ));
    }

    #[test]
    fn monte_carlo_band() {
        let eval = Evaluation::MonteCarlo {
            samples: 2000,
            seed: 11,
            workers: 2,
        };
        let r = extinction_report(&fixtures::e5(), 6, &Bias::Trace, eval, 6).unwrap();
        assert_eq!(r.mode, "monte_carlo");
        assert!(r.stderr.is_some());
    }

    #[test]
    fn supermartingale_on_fixtures() {
        for t in [fixtures::e1(), fixtures::e2(), fixtures::e5()] {
            let r = supermartingale_check(&t, 6, &Bias::Trace).unwrap();
            assert!(r.max_excess <= 1e-12);
            assert!(r.max_identity_defect <= 1e-12);
        }
    }

    #[test]
    fn reconstruction_examples() {
        let t = fixtures::e1();
        let paths = sample_paths(&t, &Bias::Trace, 3, 0, 10, 6, 1).unwrap();
        let r = reconstruction_check(&t, &paths, &Bias::Trace);
        assert!(r.max_shortfall < 1e-12);
        let t = fixtures::e2();
        let paths = sample_paths(&t, &Bias::Trace, 3, 0, 1, 40, 1).unwrap();
        let r = reconstruction_check(&t, &paths, &Bias::Trace);
        assert!((r.max_shortfall - 0.75f64.powi(40)).abs() < 1e-12);
        assert!(r.max_identity_defect < 1e-12);
    }
}
