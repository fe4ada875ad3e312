use std::io::Write;
use std::path::Path;

use serde::Serialize;
use wrtree::boundary::{
    boundary_density, boundary_law, disintegrate, disintegration_check, operator_boundary_check,
    triviality_test, BoundaryConfig,
};
use wrtree::extinction::{extinction_report, Evaluation, ExtinctionReport};
use wrtree::paths::{enumerate_depth, sample_paths};
use wrtree::{CVector, ExtendedWord, PsdMatrix};

use crate::config::{matrix_json, Problem, ToleranceReport};
use crate::CliError;

/// Writes to `out`, or to stdout when `out` is `None`.
pub fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

pub fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn fmt_matrix(p: &PsdMatrix) -> String {
    let m = p.entries();
    let complex = m.iter().any(|z| z.im != 0.0);
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let cells: Vec<String> = (0..m.ncols())
                .map(|j| {
                    let z = m[(i, j)];
                    if complex {
                        format!("{}{:+}i", z.re, z.im)
                    } else {
                        format!("{}", z.re)
                    }
                })
                .collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

fn fmt_row(probs: &[f64]) -> String {
    probs.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn inspect(problem: &Problem, word: &str) -> Result<String, CliError> {
    let tree = &problem.tree;
    let w = ExtendedWord::parse(word)?;
    tree.spec().check_word(&w)?;
    let node = tree.node(&w)?;
    let mut out = String::new();
    let label = if w.is_empty() { "(root)".to_string() } else { w.to_string() };
    out += &format!("word: {label}\n");
    out += &format!("residual: {}\n", fmt_matrix(node.residual()));
    out += &format!("residual trace: {}\n", node.residual().trace());
    for (j, d) in node.dissipations().iter().enumerate() {
        out += &format!("dissipation {}: {}\n", j + 1, fmt_matrix(d));
    }
    out += &format!("trace energies: {}\n", fmt_row(node.trace_energies()));
    let trace_row = tree.transition_row(&w, &wrtree::Bias::Trace)?;
    out += &format!("transition row (trace): {} [{:?}]\n", fmt_row(&trace_row.probs), trace_row.kind);
    if let Some(x) = &problem.vector {
        out += &format!("vector energies: {}\n", fmt_row(&node.vector_energies(x)));
        let row = tree.transition_row(&w, &wrtree::Bias::Vector(x.clone()))?;
        out += &format!("transition row (vector): {} [{:?}]\n", fmt_row(&row.probs), row.kind);
    }
    Ok(out)
}

pub fn enumerate(problem: &Problem, depth: usize, bias: &str) -> Result<String, CliError> {
    let bias = problem.bias_named(bias)?;
    let table = enumerate_depth(&problem.tree, depth, &bias, problem.limits.enumeration_cap)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["word", "probability"])?;
    for (word, p) in &table.rows {
        w.write_record([word.to_string(), p.to_string()])?;
    }
    csv_text(w)
}

fn csv_text(w: csv::Writer<Vec<u8>>) -> Result<String, CliError> {
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn sample(problem: &Problem, n: usize, max_depth: usize, workers: usize) -> Result<String, CliError> {
    let paths = sample_paths(&problem.tree, &problem.bias, problem.seed, 0, n, max_depth, workers)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["path", "step", "symbol", "trace", "vector_mass"])?;
    for (i, p) in paths.iter().enumerate() {
        for step in 0..=p.max_depth() {
            let symbol = if step == 0 { String::new() } else { p.symbols[step - 1].to_string() };
            let vector_mass = p
                .vector_masses
                .as_ref()
                .map(|v| v[step].to_string())
                .unwrap_or_default();
            w.write_record([
                i.to_string(),
                step.to_string(),
                symbol,
                p.residual_traces[step].to_string(),
                vector_mass,
            ])?;
        }
    }
    csv_text(w)
}

#[derive(Serialize)]
struct ExtinctionOutput<'a> {
    config_hash: &'a str,
    tolerances: ToleranceReport,
    report: ExtinctionReport,
}

pub fn extinction(
    problem: &Problem,
    horizon: usize,
    mode: &str,
    bias: &str,
    samples: Option<usize>,
    scan_depth: Option<usize>,
    workers: usize,
) -> Result<String, CliError> {
    let evaluation = match mode {
        "exact" => Evaluation::Exact {
            cap: problem.limits.enumeration_cap,
        },
        "mc" => Evaluation::MonteCarlo {
            samples: samples.unwrap_or(problem.limits.samples),
            seed: problem.seed,
            workers,
        },
        other => return Err(CliError::Config(format!("mode: expected exact or mc, got {other}"))),
    };
    let bias = problem.bias_named(bias)?;
    let scan_depth = scan_depth.unwrap_or(horizon.min(10));
    let report = extinction_report(&problem.tree, horizon, &bias, evaluation, scan_depth)?;
    json(&ExtinctionOutput {
        config_hash: &problem.config_hash,
        tolerances: problem.tolerances(),
        report,
    })
}

#[derive(Serialize)]
struct AtomOutput {
    matrix: Vec<Vec<[f64; 2]>>,
    trace: f64,
    weight: f64,
    weight_stderr: f64,
    members: usize,
    /// `h_x` for each supplied vector, in order.
    h: Vec<f64>,
}

#[derive(Serialize)]
struct DensityVerdict {
    x: Vec<[f64; 2]>,
    certified: bool,
    offending: Vec<String>,
    max_z: f64,
    unassigned: f64,
    pass: bool,
}

#[derive(Serialize)]
struct Verdicts {
    trivial: bool,
    disintegration_depth: usize,
    disintegration_max_z: f64,
    disintegration_pass: bool,
    operator_defect: f64,
    operator_tolerance: f64,
    operator_pass: bool,
    density: Vec<DensityVerdict>,
}

#[derive(Serialize)]
struct Diagnostics {
    samples: usize,
    truncation_depth: usize,
    scan_depth: usize,
    cluster_tol: f64,
    err_median: f64,
    err_max: f64,
    seed: u64,
}

#[derive(Serialize)]
struct BoundaryOutput<'a> {
    config_hash: &'a str,
    tolerances: ToleranceReport,
    atoms: Vec<AtomOutput>,
    diagnostics: Diagnostics,
    verdicts: Verdicts,
}

pub fn boundary(
    problem: &Problem,
    samples: usize,
    depth: usize,
    scan_depth: usize,
    cluster_tol: f64,
    extra: &[CVector],
    workers: usize,
) -> Result<String, CliError> {
    let tree = &problem.tree;
    let cap = problem.limits.enumeration_cap;
    let config = BoundaryConfig {
        samples,
        truncation_depth: depth,
        cluster_tol,
        seed: problem.seed,
        workers,
    };
    let law = boundary_law(tree, &wrtree::Bias::Trace, config)?;
    let xs: Vec<CVector> = problem.vector.iter().chain(extra).cloned().collect();
    let densities = xs
        .iter()
        .map(|x| boundary_density(tree, x, &law, samples, scan_depth))
        .collect::<Result<Vec<_>, _>>()?;
    let n = law.samples.len() as f64;
    let atoms = law
        .atoms
        .iter()
        .enumerate()
        .map(|(t, a)| AtomOutput {
            matrix: matrix_json(a.representative.entries()),
            trace: a.representative.trace(),
            weight: a.weight,
            weight_stderr: (a.weight * (1.0 - a.weight) / n).max(0.0).sqrt(),
            members: a.members.len(),
            h: densities.iter().map(|d| d.h[t]).collect(),
        })
        .collect();
    let dis_depth = depth.min(3);
    let kernels = disintegrate(tree, &law, dis_depth, cap)?;
    let dis = disintegration_check(tree, &law, &kernels, cap)?;
    let op = operator_boundary_check(tree, &law, &[law.largest_atom()], None, cap)?;
    let density = xs
        .iter()
        .zip(&densities)
        .map(|(x, d)| DensityVerdict {
            x: x.iter().map(|z| [z.re, z.im]).collect(),
            certified: d.certified,
            offending: d.offending.iter().map(|w| w.to_string()).collect(),
            max_z: d.max_z,
            unassigned: d.unassigned,
            pass: d.passes(),
        })
        .collect();
    json(&BoundaryOutput {
        config_hash: &problem.config_hash,
        tolerances: problem.tolerances(),
        atoms,
        diagnostics: Diagnostics {
            samples,
            truncation_depth: depth,
            scan_depth,
            cluster_tol,
            err_median: law.err_median,
            err_max: law.err_max,
            seed: problem.seed,
        },
        verdicts: Verdicts {
            trivial: triviality_test(&law, cluster_tol),
            disintegration_depth: dis_depth,
            disintegration_max_z: dis.max_z,
            disintegration_pass: dis.passes(),
            operator_defect: op.defect,
            operator_tolerance: op.tolerance,
            operator_pass: op.passes(),
            density,
        },
    })
}

/// Comma-separated real entries, e.g. `1,0`.
pub fn parse_vector(text: &str, d: usize) -> Result<CVector, CliError> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("--x {text}: {e}")))?;
    if values.len() != d {
        return Err(CliError::Config(format!(
            "--x {text}: expected {d} entries, got {}",
            values.len()
        )));
    }
    if values.iter().all(|v| *v == 0.0) {
        return Err(CliError::Config(format!("--x {text}: vector is zero")));
    }
    Ok(wrtree::psd::real_vector(&values))
}
