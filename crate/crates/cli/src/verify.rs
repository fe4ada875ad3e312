//! Invariant suites run against a configured problem.

use serde::Serialize;
use wrtree::extinction::supermartingale_check;
use wrtree::measure::{change_of_measure_check, martingale_defect};
use wrtree::paths::{enumerate_depth, sample_paths, telescoping_defect};
use wrtree::{douglas_recover, iterate_splitting, loewner_leq, split, Bias, ContractionMatrix};

use crate::config::{Problem, ToleranceReport};
use crate::CliError;

pub const SUITES: [&str; 4] = ["split", "tree", "paths", "martingale"];

#[derive(Serialize)]
pub struct CheckRecord {
    pub suite: &'static str,
    pub check: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct VerifyReport {
    pub config_hash: String,
    pub tolerances: ToleranceReport,
    pub depth: usize,
    pub checks: Vec<CheckRecord>,
    pub notes: Vec<String>,
    pub pass: bool,
}

struct Recorder {
    suite: &'static str,
    checks: Vec<CheckRecord>,
    notes: Vec<String>,
}

impl Recorder {
    /// Passes when `value <= tolerance`.
    fn at_most(&mut self, check: impl Into<String>, value: f64, tolerance: f64) {
        self.checks.push(CheckRecord {
            suite: self.suite,
            check: check.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        });
    }

    fn holds(&mut self, check: impl Into<String>, ok: bool) {
        self.at_most(check, if ok { 0.0 } else { 1.0 }, 0.0);
    }
}

pub fn run(problem: &Problem, suite: &str, depth: usize, workers: usize) -> Result<VerifyReport, CliError> {
    let suites: Vec<&'static str> = match suite {
        "all" => SUITES.to_vec(),
        s => match SUITES.iter().find(|n| **n == s) {
            Some(n) => vec![*n],
            None => {
                return Err(CliError::Config(format!(
                    "suite: expected one of split, tree, paths, martingale, all; got {s}"
                )))
            }
        },
    };
    let mut rec = Recorder {
        suite: "split",
        checks: Vec::new(),
        notes: Vec::new(),
    };
    for s in suites {
        rec.suite = s;
        match s {
            "split" => split_suite(problem, &mut rec)?,
            "tree" => tree_suite(problem, depth, &mut rec)?,
            "paths" => paths_suite(problem, depth, workers, &mut rec)?,
            _ => martingale_suite(problem, depth, &mut rec)?,
        }
    }
    let pass = rec.checks.iter().all(|c| c.pass);
    Ok(VerifyReport {
        config_hash: problem.config_hash.clone(),
        tolerances: problem.tolerances(),
        depth,
        checks: rec.checks,
        notes: rec.notes,
        pass,
    })
}

fn split_suite(problem: &Problem, rec: &mut Recorder) -> Result<(), CliError> {
    let spec = problem.tree.spec();
    let tol = spec.tolerances();
    let r0 = spec.r0();
    let scale = r0.trace();
    for (j, c) in spec.contractions().iter().enumerate() {
        let pair = split(r0, c, tol)?;
        let sum = pair.dissipated.hermitian().add(pair.remainder.hermitian())?;
        rec.at_most(
            format!("C{}: D + R1 = R0 entrywise", j + 1),
            sum.sub(r0.hermitian())?.max_abs_entry(),
            tol.recon(scale),
        );
        rec.holds(
            format!("C{}: R1 <= R0", j + 1),
            loewner_leq(pair.remainder.hermitian(), r0.hermitian(), tol.psd(scale))?,
        );
        let back = douglas_recover(r0, &pair.dissipated, tol)?;
        let root = r0.sqrt();
        let round = root.entries() * back.effect().entries() * root.entries();
        let gap = (round - pair.dissipated.entries())
            .iter()
            .fold(0.0f64, |m, z| m.max(z.norm()));
        rec.at_most(format!("C{}: Douglas roundtrip", j + 1), gap, tol.recon(scale));
    }
    let chain: Vec<ContractionMatrix> = spec.contractions().iter().cycle().take(60).cloned().collect();
    let out = iterate_splitting(r0, &chain, tol)?;
    let rises = out
        .residuals
        .windows(2)
        .map(|w| w[1].trace() - w[0].trace())
        .fold(f64::NEG_INFINITY, f64::max);
    rec.at_most("cyclic chain of 60: trace increase", rises, 1e-12 * scale.max(1.0));
    Ok(())
}

fn tree_suite(problem: &Problem, depth: usize, rec: &mut Recorder) -> Result<(), CliError> {
    let tree = &problem.tree;
    let tol = tree.spec().tolerances();
    let biases = biases(problem);
    let mut identity: f64 = 0.0;
    let mut monotone = true;
    let mut row_sum: f64 = 0.0;
    let mut failure: Option<wrtree::error::WrError> = None;
    tree.walk(depth.saturating_sub(1), |_, node| {
        let r = node.residual();
        for (d, rem) in node.dissipations().iter().zip(node.remainders()) {
            let gap = d
                .hermitian()
                .add(rem.hermitian())
                .and_then(|s| s.sub(r.hermitian()))
                .map(|g| g.max_abs_entry() / tol.recon(r.trace()));
            let below = loewner_leq(rem.hermitian(), r.hermitian(), tol.psd(r.trace()));
            match (gap, below) {
                (Ok(g), Ok(b)) => {
                    identity = identity.max(g);
                    monotone &= b;
                }
                (Err(e), _) | (_, Err(e)) => failure = Some(e),
            }
        }
        for b in &biases {
            let row = tree.row_at(node, false, b);
            row_sum = row_sum.max((row.probs.iter().sum::<f64>() - 1.0).abs());
        }
        true
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    rec.at_most("R_u = D_ua + R_ua (relative to recon_tol)", identity, 1.0);
    rec.holds("R_ua <= R_u at every edge", monotone);
    rec.at_most("transition rows sum to 1", row_sum, 1e-12);
    for b in &biases {
        let s = supermartingale_check(tree, depth, b)?;
        let scale = b.mass(tree.spec().r0()).max(1.0);
        rec.at_most(format!("{} bias: supermartingale drift", b.tag()), s.max_excess.max(0.0), 1e-12 * scale);
        rec.at_most(
            format!("{} bias: one-step identity", b.tag()),
            s.max_identity_defect,
            1e-12 * scale,
        );
    }
    Ok(())
}

fn biases(problem: &Problem) -> Vec<Bias> {
    let mut out = vec![Bias::Trace];
    if let Some(x) = &problem.vector {
        out.push(Bias::Vector(x.clone()));
    }
    out
}

fn paths_suite(problem: &Problem, depth: usize, workers: usize, rec: &mut Recorder) -> Result<(), CliError> {
    let tree = &problem.tree;
    let cap = problem.limits.enumeration_cap;
    for b in biases(problem) {
        let mut prev = enumerate_depth(tree, 0, &b, cap)?;
        let (mut consistency, mut mass, mut absorbed): (f64, f64, usize) = (0.0, 0.0, 0);
        for n in 1..=depth {
            let t = enumerate_depth(tree, n, &b, cap)?;
            consistency = consistency.max(t.consistency_defect(&prev));
            mass = mass.max((t.total_mass() - 1.0).abs());
            absorbed += t.absorption_violations();
            prev = t;
        }
        rec.at_most(format!("{} bias: cylinder consistency", b.tag()), consistency, 1e-12);
        rec.at_most(format!("{} bias: total mass", b.tag()), mass, 1e-10);
        rec.at_most(format!("{} bias: absorption violations", b.tag()), absorbed as f64, 0.0);
    }
    let count = problem.limits.samples.min(1000);
    let max_depth = problem.limits.max_depth;
    let paths = sample_paths(tree, &problem.bias, problem.seed, 0, count, max_depth, workers)?;
    let mut rise = f64::NEG_INFINITY;
    let mut telescoping: f64 = 0.0;
    for p in &paths {
        for w in p.residual_traces.windows(2) {
            rise = rise.max(w[1] - w[0]);
        }
        telescoping = telescoping.max(telescoping_defect(tree, &p.symbols)?);
    }
    let scale = tree.spec().r0().trace().max(1.0);
    rec.at_most(format!("{count} sampled paths: trace increase"), rise.max(0.0), 1e-12 * scale);
    rec.at_most(format!("{count} sampled paths: telescoping"), telescoping, 6e-8 * scale);
    Ok(())
}

fn martingale_suite(problem: &Problem, depth: usize, rec: &mut Recorder) -> Result<(), CliError> {
    let tree = &problem.tree;
    let Some(x) = &problem.vector else {
        rec.notes.push("martingale: no vector bias configured, suite skipped".into());
        return Ok(());
    };
    let offending = tree.compatibility_scan(x, depth)?;
    if !offending.is_empty() {
        let words: Vec<String> = offending.iter().take(10).map(|w| w.to_string()).collect();
        rec.notes.push(format!(
            "martingale: x-dead, trace-alive words found ({}); the likelihood ratio is not a martingale here, checks skipped",
            words.join(", ")
        ));
        return Ok(());
    }
    let cap = problem.limits.enumeration_cap;
    let (mut defect, mut expectation): (f64, f64) = (0.0, 0.0);
    for n in 0..depth {
        let r = martingale_defect(tree, x, n, cap)?;
        defect = defect.max(r.defect);
        expectation = expectation.max(r.expectation_defect);
    }
    rec.at_most("martingale defect", defect, 1e-10);
    rec.at_most("|E[rho_n] - 1|", expectation, 1e-10);
    let mut com: f64 = 0.0;
    for n in 0..=depth.min(4) {
        for w in enumerate_depth(tree, n, &Bias::Trace, cap)?.rows.keys() {
            com = com.max(change_of_measure_check(tree, x, w)?);
        }
    }
    rec.at_most("change of measure on trace cylinders", com, 1e-10);
    Ok(())
}
