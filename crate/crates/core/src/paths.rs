//! Path space: cylinder probabilities, level-by-level enumeration, seeded
//! sampling and the pathwise residual and dissipation processes.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WrError};
use crate::psd::{HermitianMatrix, PsdMatrix};
use crate::tree::{Bias, EnergyTree, ExtendedWord, Node, Symbol};

pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// Number of trailing steps used for the trace-decrement diagnostic.
pub const LIMIT_WINDOW: usize = 5;

/// `nu([u])`: product of transition probabilities along `u`.
pub fn cylinder_measure(tree: &EnergyTree, u: &[Symbol], bias: &Bias) -> Result<f64> {
    tree.spec().check_word(u)?;
    let mut node = tree.root();
    let mut prob = 1.0;
    for (k, &a) in u.iter().enumerate() {
        let absorbed = u[..k].contains(&0);
        let row = tree.row_at(&node, absorbed, bias);
        prob *= row.probs[a as usize];
        if prob == 0.0 {
            return Ok(0.0);
        }
        if a != 0 && !absorbed {
            node = tree.child(&node, &u[..=k])?;
        }
    }
    Ok(prob)
}

/// One positive-probability cylinder together with its (frozen) node.
#[derive(Clone, Debug)]
pub struct FrontierRow {
    pub word: ExtendedWord,
    pub prob: f64,
    pub node: Arc<Node>,
}

impl FrontierRow {
    pub fn absorbed(&self) -> bool {
        self.word.is_absorbed()
    }

    /// The row `[word a]`, reached with transition probability `p`.
    pub fn extend(&self, tree: &EnergyTree, a: Symbol, p: f64) -> Result<FrontierRow> {
        let word = self.word.child(a);
        let node = if a == 0 || self.absorbed() {
            Arc::clone(&self.node)
        } else {
            tree.child(&self.node, &word)?
        };
        Ok(FrontierRow {
            word,
            prob: self.prob * p,
            node,
        })
    }
}

/// All positive cylinders of one length, in lexicographic order.
#[derive(Clone, Debug)]
pub struct Frontier {
    pub depth: usize,
    pub rows: Vec<FrontierRow>,
}

impl Frontier {
    pub fn root(tree: &EnergyTree) -> Self {
        Self {
            depth: 0,
            rows: vec![FrontierRow {
                word: ExtendedWord::empty(),
                prob: 1.0,
                node: tree.root(),
            }],
        }
    }

    /// The single cylinder `[u]`, dropped if it has zero mass.
    pub fn at(tree: &EnergyTree, u: &[Symbol], bias: &Bias) -> Result<Self> {
        let prob = cylinder_measure(tree, u, bias)?;
        let rows = if prob > 0.0 {
            vec![FrontierRow {
                word: ExtendedWord::from(u),
                prob,
                node: tree.node(u)?,
            }]
        } else {
            Vec::new()
        };
        Ok(Self {
            depth: u.len(),
            rows,
        })
    }

    /// Refines every row by one symbol, pruning zero-probability branches.
    pub fn advance(&self, tree: &EnergyTree, bias: &Bias, cap: usize) -> Result<Frontier> {
        let mut rows = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let t = tree.row_at(&row.node, row.absorbed(), bias);
            for (a, p) in t.probs.iter().enumerate() {
                if *p <= 0.0 {
                    continue;
                }
                rows.push(row.extend(tree, a as Symbol, *p)?);
                if rows.len() > cap {
                    return Err(WrError::EnumerationTooLarge {
                        rows: rows.len(),
                        cap,
                        depth: self.depth + 1,
                    });
                }
            }
        }
        Ok(Frontier {
            depth: self.depth + 1,
            rows,
        })
    }

    pub fn to_table(&self, bias: &Bias) -> CylinderTable {
        CylinderTable {
            depth: self.depth,
            bias: bias.tag().to_string(),
            rows: self
                .rows
                .iter()
                .map(|r| (r.word.clone(), r.prob))
                .collect(),
        }
    }
}

/// Finite-level marginal: probabilities of all positive length-`depth` cylinders.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CylinderTable {
    pub depth: usize,
    pub bias: String,
    pub rows: BTreeMap<ExtendedWord, f64>,
}

impl CylinderTable {
    pub fn get(&self, word: &[Symbol]) -> f64 {
        self.rows
            .get(&ExtendedWord::from(word))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.rows.values().sum()
    }

    /// Sums out the last symbol.
    pub fn marginal(&self) -> CylinderTable {
        let mut rows = BTreeMap::new();
        for (w, p) in &self.rows {
            *rows.entry(w.prefix(self.depth.saturating_sub(1))).or_insert(0.0) += p;
        }
        CylinderTable {
            depth: self.depth.saturating_sub(1),
            bias: self.bias.clone(),
            rows,
        }
    }

    /// Largest per-row gap between the marginal of `self` and `coarser`.
    pub fn consistency_defect(&self, coarser: &CylinderTable) -> f64 {
        let marginal = self.marginal();
        let mut defect: f64 = 0.0;
        for (w, p) in &marginal.rows {
            defect = defect.max((p - coarser.get(w)).abs());
        }
        for (w, p) in &coarser.rows {
            if !marginal.rows.contains_key(w) {
                defect = defect.max(p.abs());
            }
        }
        defect
    }

    /// Number of rows breaking the extended-word invariant: every row with a
    /// `0` continues with zeros only.
    pub fn absorption_violations(&self) -> usize {
        self.rows
            .keys()
            .filter(|w| {
                let k = w.frozen_len();
                w[k..].iter().any(|s| *s != 0)
            })
            .count()
    }
}

/// `nu([u])` for every positive `u` of length `n`.
pub fn enumerate_depth(
    tree: &EnergyTree,
    n: usize,
    bias: &Bias,
    cap: usize,
) -> Result<CylinderTable> {
    let mut frontier = Frontier::root(tree);
    for _ in 0..n {
        frontier = frontier.advance(tree, bias, cap)?;
    }
    Ok(frontier.to_table(bias))
}

/// Identifies one reproducible uniform stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStreamSpec {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl RngStreamSpec {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    pub fn uniforms(&self) -> UniformStream {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        UniformStream { rng }
    }
}

/// Counter-addressed uniforms: draw `n` depends only on the seed, the stream
/// index and `n`.
#[derive(Clone, Debug)]
pub struct UniformStream {
    rng: ChaCha20Rng,
}

impl UniformStream {
    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn draw(&mut self, step: u64) -> f64 {
        self.rng.set_word_pos(2 * step as u128);
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Inverse CDF in fixed symbol order `0, 1, .., m`. Zero-probability symbols
/// are never returned.
pub fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (a, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last = a;
            acc += p;
            if u < acc {
                return a;
            }
        }
    }
    last
}

/// Index of the first `0` (1-based), or beyond the sampled horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingTime {
    At(usize),
    Beyond,
}

impl StoppingTime {
    pub fn of(word: &[Symbol]) -> Self {
        match word.iter().position(|s| *s == 0) {
            Some(k) => StoppingTime::At(k + 1),
            None => StoppingTime::Beyond,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, StoppingTime::At(_))
    }
}

/// One sampled prefix with its scalar processes. Index `n` of the residual
/// series refers to `R_n`; index `n - 1` of the dissipation series to `D_n`.
#[derive(Clone, Debug)]
pub struct SampledPath {
    pub stream: RngStreamSpec,
    pub symbols: ExtendedWord,
    pub tau: StoppingTime,
    pub residual_traces: Vec<f64>,
    pub vector_masses: Option<Vec<f64>>,
    pub dissipation_traces: Vec<f64>,
    pub dissipation_vector_masses: Option<Vec<f64>>,
    pub log_weight: f64,
    pub terminal: PsdMatrix,
}

impl SampledPath {
    pub fn max_depth(&self) -> usize {
        self.symbols.len()
    }

    /// Bias-mass series `M_n` or `T_n`.
    pub fn masses(&self, bias: &Bias) -> &[f64] {
        match (bias, &self.vector_masses) {
            (Bias::Vector(_), Some(v)) => v,
            _ => &self.residual_traces,
        }
    }

    pub fn dissipated(&self, bias: &Bias) -> &[f64] {
        match (bias, &self.dissipation_vector_masses) {
            (Bias::Vector(_), Some(v)) => v,
            _ => &self.dissipation_traces,
        }
    }

    pub fn limit_estimate(&self) -> LimitEstimate {
        LimitEstimate::from_traces(
            self.terminal.clone(),
            &self.residual_traces,
            self.tau.is_finite(),
        )
    }
}

pub fn sample_path(
    tree: &EnergyTree,
    bias: &Bias,
    rng: RngStreamSpec,
    max_depth: usize,
) -> Result<SampledPath> {
    if max_depth == 0 {
        return Err(WrError::InvalidParameter("max_depth must be at least 1".into()));
    }
    let x = match bias {
        Bias::Vector(x) => {
            tree.spec().check_vector(x)?;
            Some(x)
        }
        Bias::Trace => None,
    };
    let mut uniforms = rng.uniforms();
    let mut node = tree.root();
    let mut symbols: Vec<Symbol> = Vec::with_capacity(max_depth);
    let mut residual_traces = vec![node.residual().trace()];
    let mut vector_masses = x.map(|x| vec![node.residual().quadratic_form(x)]);
    let mut dissipation_traces = Vec::with_capacity(max_depth);
    let mut dissipation_vector_masses = x.map(|_| Vec::with_capacity(max_depth));
    let mut log_weight = 0.0;
    let mut absorbed = false;
    for step in 0..max_depth {
        let row = tree.row_at(&node, absorbed, bias);
        let a = inverse_cdf(&row.probs, uniforms.draw(step as u64));
        log_weight += row.probs[a].ln();
        symbols.push(a as Symbol);
        if a == 0 || absorbed {
            absorbed = true;
            dissipation_traces.push(0.0);
            if let Some(v) = dissipation_vector_masses.as_mut() {
                v.push(0.0);
            }
        } else {
            let d = &node.dissipations()[a - 1];
            dissipation_traces.push(d.trace());
            if let (Some(v), Some(x)) = (dissipation_vector_masses.as_mut(), x) {
                v.push(d.quadratic_form(x));
            }
            node = tree.child(&node, &symbols)?;
        }
        residual_traces.push(node.residual().trace());
        if let (Some(v), Some(x)) = (vector_masses.as_mut(), x) {
            v.push(node.residual().quadratic_form(x));
        }
    }
    Ok(SampledPath {
        stream: rng,
        tau: StoppingTime::of(&symbols),
        symbols: ExtendedWord::new(symbols),
        residual_traces,
        vector_masses,
        dissipation_traces,
        dissipation_vector_masses,
        log_weight,
        terminal: node.residual().clone(),
    })
}

/// Maps `f` over `0..count` on a pool of `workers` threads. Results come back
/// in index order, so downstream reductions do not depend on scheduling.
pub fn par_map<T: Send>(
    workers: usize,
    count: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| WrError::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(f).collect())
}

/// Samples streams `first_stream .. first_stream + count`.
pub fn sample_paths(
    tree: &EnergyTree,
    bias: &Bias,
    master_seed: u64,
    first_stream: u64,
    count: usize,
    max_depth: usize,
    workers: usize,
) -> Result<Vec<SampledPath>> {
    par_map(workers, count, |i| {
        sample_path(
            tree,
            bias,
            RngStreamSpec::new(master_seed, first_stream + i as u64),
            max_depth,
        )
    })
}

/// `R_n = R_{prefix|n}` for `n = 0..=|prefix|` and `D_n = D_{prefix|n-1, prefix_n}`.
pub fn pathwise_processes(
    tree: &EnergyTree,
    prefix: &[Symbol],
) -> Result<(Vec<PsdMatrix>, Vec<PsdMatrix>)> {
    tree.spec().check_word(prefix)?;
    let d = tree.spec().dim();
    let mut node = tree.root();
    let mut residuals = vec![node.residual().clone()];
    let mut dissipations = Vec::with_capacity(prefix.len());
    for (k, &a) in prefix.iter().enumerate() {
        if a == 0 || prefix[..k].contains(&0) {
            dissipations.push(PsdMatrix::zeros(d));
        } else {
            dissipations.push(node.dissipations()[a as usize - 1].clone());
            node = tree.child(&node, &prefix[..=k])?;
        }
        residuals.push(node.residual().clone());
    }
    Ok((residuals, dissipations))
}

/// Max-entry size of `R0 - R_n - (D_1 + .. + D_n)`.
pub fn telescoping_defect(tree: &EnergyTree, prefix: &[Symbol]) -> Result<f64> {
    let (residuals, dissipations) = pathwise_processes(tree, prefix)?;
    let mut acc = residuals.last().expect("nonempty").hermitian().clone();
    for d in &dissipations {
        acc = acc.add(d.hermitian())?;
    }
    Ok(tree.spec().r0().hermitian().sub(&acc)?.max_abs_entry())
}

/// Truncated estimate of `R_inf` along one path.
#[derive(Clone, Debug)]
pub struct LimitEstimate {
    pub r_hat: PsdMatrix,
    /// Bound on `||R_depth - R_inf||_1`: zero once the path is absorbed,
    /// otherwise `tr(R_depth)`.
    pub err_bound: f64,
    /// `tr(R_{depth-w}) - tr(R_depth)` over the last few steps.
    pub window_decrement: f64,
    pub absorbed: bool,
}

impl LimitEstimate {
    fn from_traces(r_hat: PsdMatrix, traces: &[f64], absorbed: bool) -> Self {
        let last = traces.len() - 1;
        let first = last.saturating_sub(LIMIT_WINDOW);
        let tr = r_hat.trace();
        Self {
            err_bound: if absorbed || r_hat.is_zero() { 0.0 } else { tr.max(0.0) },
            window_decrement: traces[first] - traces[last],
            absorbed,
            r_hat,
        }
    }
}

pub fn residual_limit_estimate(
    tree: &EnergyTree,
    prefix: &[Symbol],
    depth: usize,
) -> Result<LimitEstimate> {
    if depth > prefix.len() {
        return Err(WrError::InvalidParameter(format!(
            "depth {depth} exceeds prefix length {}",
            prefix.len()
        )));
    }
    let (residuals, _) = pathwise_processes(tree, &prefix[..depth])?;
    let traces: Vec<f64> = residuals.iter().map(|r| r.trace()).collect();
    let r_hat = residuals.last().expect("nonempty").clone();
    Ok(LimitEstimate::from_traces(
        r_hat,
        &traces,
        prefix[..depth].contains(&0),
    ))
}

/// `sum_k c_k * P_k` for nonnegative weights.
pub(crate) fn weighted_sum<'a>(
    d: usize,
    terms: impl IntoIterator<Item = (f64, &'a PsdMatrix)>,
) -> Result<HermitianMatrix> {
    let mut acc = HermitianMatrix::zeros(d);
    for (c, p) in terms {
        acc = acc.add(&p.hermitian().scale(c))?;
    }
    Ok(acc)
}
