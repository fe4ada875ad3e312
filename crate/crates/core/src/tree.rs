//! The memoized energy tree.
//!
//! Nodes are 0-free words over `{1..m}`. A word containing the absorbing
//! symbol `0` is labelled by its longest 0-free prefix, and no dissipation
//! happens after the first `0`.

use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Result, WrError};
use crate::psd::{
    check_dims, split_with_root, CVector, ContractionMatrix, HermitianMatrix, PsdMatrix,
    Tolerances,
};

pub type Symbol = u16;

/// Residuals whose trace falls below this fraction of `tr(R0)` are replaced by zero.
const SNAP_REL: f64 = 1e-14;

/// Default number of levels kept in the node cache.
pub const DEFAULT_CACHE_DEPTH: usize = 8;

/// Upper bound on the number of nodes visited by a single scan.
pub const SCAN_NODE_CAP: usize = 4_000_000;

/// A finite word over `{0, 1, .., m}`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExtendedWord(Vec<Symbol>);

impl ExtendedWord {
    pub fn new(symbols: Vec<Symbol>) -> Self {
        Self(symbols)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Parses `"120"`, `"1 2 0"` or `"1,2,0"`. Whitespace-free input is read
    /// one digit per symbol.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() {
            return Ok(Self::empty());
        }
        let bad = || WrError::InvalidWord(text.to_string());
        let separated = text.contains(|c: char| c.is_whitespace() || c == ',' || c == '.');
        let symbols = if separated {
            text.split(|c: char| c.is_whitespace() || c == ',' || c == '.')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<Symbol>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?
        } else {
            text.chars()
                .map(|c| c.to_digit(10).map(|d| d as Symbol).ok_or_else(bad))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Self(symbols))
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.0
    }

    pub fn into_symbols(self) -> Vec<Symbol> {
        self.0
    }

    /// Length of the longest prefix without `0`.
    pub fn frozen_len(&self) -> usize {
        frozen_len(&self.0)
    }

    pub fn is_absorbed(&self) -> bool {
        self.0.contains(&0)
    }

    pub fn child(&self, a: Symbol) -> Self {
        let mut v = self.0.clone();
        v.push(a);
        Self(v)
    }

    pub fn prefix(&self, n: usize) -> Self {
        Self(self.0[..n.min(self.0.len())].to_vec())
    }
}

impl From<Vec<Symbol>> for ExtendedWord {
    fn from(v: Vec<Symbol>) -> Self {
        Self(v)
    }
}

impl From<&[Symbol]> for ExtendedWord {
    fn from(v: &[Symbol]) -> Self {
        Self(v.to_vec())
    }
}

impl Deref for ExtendedWord {
    type Target = [Symbol];
    fn deref(&self) -> &[Symbol] {
        &self.0
    }
}

impl fmt::Display for ExtendedWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.iter().all(|s| *s < 10) {
            for s in &self.0 {
                write!(f, "{s}")?;
            }
            Ok(())
        } else {
            let parts: Vec<String> = self.0.iter().map(|s| s.to_string()).collect();
            write!(f, "{}", parts.join("."))
        }
    }
}

pub(crate) fn frozen_len(word: &[Symbol]) -> usize {
    word.iter().position(|s| *s == 0).unwrap_or(word.len())
}

/// Functional turning dissipations into transition weights.
#[derive(Clone, Debug, PartialEq)]
pub enum Bias {
    Trace,
    Vector(CVector),
}

impl Bias {
    pub fn vector(x: CVector) -> Result<Self> {
        if x.norm() == 0.0 {
            return Err(WrError::ZeroVector);
        }
        Ok(Bias::Vector(x))
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Bias::Trace => "trace",
            Bias::Vector(_) => "vector",
        }
    }

    /// Trace or quadratic form.
    pub fn mass(&self, p: &PsdMatrix) -> f64 {
        match self {
            Bias::Trace => p.trace(),
            Bias::Vector(x) => p.quadratic_form(x),
        }
    }

    /// `1` for the trace, `||x||^2` for a vector.
    pub fn scale(&self) -> f64 {
        match self {
            Bias::Trace => 1.0,
            Bias::Vector(x) => x.norm_squared(),
        }
    }
}

/// Generating data `(R0, C_1..C_m)` and the dead-node threshold.
#[derive(Clone, Debug)]
pub struct TreeSpec {
    r0: PsdMatrix,
    contractions: Vec<ContractionMatrix>,
    dead_tol: f64,
    tol: Tolerances,
}

impl TreeSpec {
    pub fn new(
        r0: PsdMatrix,
        contractions: Vec<ContractionMatrix>,
        dead_tol: f64,
        tol: Tolerances,
    ) -> Result<Self> {
        if contractions.is_empty() {
            return Err(WrError::EmptyFamily);
        }
        if contractions.len() >= Symbol::MAX as usize {
            return Err(WrError::InvalidParameter(format!(
                "{} contractions exceed the symbol range",
                contractions.len()
            )));
        }
        if !(dead_tol > 0.0) {
            return Err(WrError::InvalidParameter(format!(
                "dead_tol must be positive, got {dead_tol}"
            )));
        }
        for c in &contractions {
            check_dims(r0.dim(), c.dim())?;
        }
        Ok(Self {
            r0,
            contractions,
            dead_tol,
            tol,
        })
    }

    pub fn with_defaults(r0: PsdMatrix, contractions: Vec<ContractionMatrix>) -> Result<Self> {
        Self::new(r0, contractions, 1e-12, Tolerances::default())
    }

    pub fn dim(&self) -> usize {
        self.r0.dim()
    }

    /// Number of contractions.
    pub fn m(&self) -> usize {
        self.contractions.len()
    }

    pub fn r0(&self) -> &PsdMatrix {
        &self.r0
    }

    pub fn contractions(&self) -> &[ContractionMatrix] {
        &self.contractions
    }

    pub fn dead_tol(&self) -> f64 {
        self.dead_tol
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    /// Energies at or below this value count as zero.
    pub fn dead_threshold(&self, bias: &Bias) -> f64 {
        self.dead_tol * self.r0.trace() * bias.scale()
    }

    pub fn check_word(&self, word: &[Symbol]) -> Result<()> {
        let m = self.m();
        match word.iter().find(|s| **s as usize > m) {
            Some(s) => Err(WrError::SymbolOutOfRange {
                symbol: *s as usize,
                max: m,
            }),
            None => Ok(()),
        }
    }

    pub fn check_vector(&self, x: &CVector) -> Result<()> {
        check_dims(self.dim(), x.len())?;
        if x.norm() == 0.0 {
            return Err(WrError::ZeroVector);
        }
        Ok(())
    }

    pub fn check_bias(&self, bias: &Bias) -> Result<()> {
        match bias {
            Bias::Trace => Ok(()),
            Bias::Vector(x) => self.check_vector(x),
        }
    }
}

/// A tree node: the residual `R_w` and the one-step splittings below it.
#[derive(Debug)]
pub struct Node {
    residual: PsdMatrix,
    dissipations: Vec<PsdMatrix>,
    remainders: Vec<PsdMatrix>,
    trace_energies: Vec<f64>,
}

impl Node {
    fn build(residual: HermitianMatrix, spec: &TreeSpec) -> Result<Self> {
        let d = spec.dim();
        let m = spec.m();
        let snap = SNAP_REL * spec.r0.trace();
        if residual.max_abs_entry() == 0.0 || residual.trace() < snap {
            return Ok(Self::zero(d, m));
        }
        let (residual, root) = PsdMatrix::with_sqrt(residual, &spec.tol)?;
        let mut dissipations = Vec::with_capacity(m);
        let mut remainders = Vec::with_capacity(m);
        let mut trace_energies = Vec::with_capacity(m);
        for c in &spec.contractions {
            let pair = split_with_root(&residual, root.entries(), c)?;
            trace_energies.push(pair.dissipated.trace());
            dissipations.push(pair.dissipated);
            remainders.push(pair.remainder);
        }
        Ok(Self {
            residual,
            dissipations,
            remainders,
            trace_energies,
        })
    }

    fn zero(d: usize, m: usize) -> Self {
        Self {
            residual: PsdMatrix::zeros(d),
            dissipations: vec![PsdMatrix::zeros(d); m],
            remainders: vec![PsdMatrix::zeros(d); m],
            trace_energies: vec![0.0; m],
        }
    }

    pub fn residual(&self) -> &PsdMatrix {
        &self.residual
    }

    /// `D_{w,j}` for `j = 1..m` (index `j - 1`).
    pub fn dissipations(&self) -> &[PsdMatrix] {
        &self.dissipations
    }

    /// Unsnapped `R_{wj}` for `j = 1..m` (index `j - 1`).
    pub fn remainders(&self) -> &[PsdMatrix] {
        &self.remainders
    }

    pub fn trace_energies(&self) -> &[f64] {
        &self.trace_energies
    }

    pub fn vector_energies(&self, x: &CVector) -> Vec<f64> {
        self.dissipations.iter().map(|d| d.quadratic_form(x)).collect()
    }

    pub fn energies(&self, bias: &Bias) -> Vec<f64> {
        match bias {
            Bias::Trace => self.trace_energies.clone(),
            Bias::Vector(x) => self.vector_energies(x),
        }
    }

    pub fn mass(&self, bias: &Bias) -> f64 {
        bias.mass(&self.residual)
    }

    pub fn is_zero(&self) -> bool {
        self.residual.is_zero()
    }
}

/// Scalar edge energies at one node, for both biases.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeEnergies {
    pub vector_energies: Vec<f64>,
    pub trace_energies: Vec<f64>,
    pub s_vector: f64,
    pub s_trace: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Live,
    Dead,
    Absorbed,
}

/// Transition probabilities over `{0, 1, .., m}` at one node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionRow {
    pub probs: Vec<f64>,
    pub kind: RowKind,
}

impl TransitionRow {
    fn stop(m: usize, kind: RowKind) -> Self {
        let mut probs = vec![0.0; m + 1];
        probs[0] = 1.0;
        Self { probs, kind }
    }

    pub fn is_live(&self) -> bool {
        self.kind == RowKind::Live
    }
}

/// The energy tree with a shared node cache for the first few levels.
///
/// The cache is keyed by 0-free words. Node values are deterministic
/// functions of the word, so concurrent inserts of the same key are harmless.
#[derive(Debug)]
pub struct EnergyTree {
    spec: TreeSpec,
    root: Arc<Node>,
    cache: RwLock<HashMap<Vec<Symbol>, Arc<Node>>>,
    cache_depth: usize,
}

impl EnergyTree {
    pub fn new(spec: TreeSpec) -> Result<Self> {
        let root = Arc::new(Node::build(spec.r0.hermitian().clone(), &spec)?);
        Ok(Self {
            spec,
            root,
            cache: RwLock::new(HashMap::new()),
            cache_depth: DEFAULT_CACHE_DEPTH,
        })
    }

    pub fn with_cache_depth(mut self, depth: usize) -> Self {
        self.cache_depth = depth;
        self
    }

    pub fn spec(&self) -> &TreeSpec {
        &self.spec
    }

    pub fn m(&self) -> usize {
        self.spec.m()
    }

    pub fn root(&self) -> Arc<Node> {
        Arc::clone(&self.root)
    }

    /// Child `word` of `parent`, where `word` is the parent's word extended by
    /// one symbol in `1..=m`.
    pub fn child(&self, parent: &Node, word: &[Symbol]) -> Result<Arc<Node>> {
        let j = *word.last().ok_or_else(|| WrError::InvalidWord(String::new()))? as usize;
        if j == 0 || j > self.m() {
            return Err(WrError::SymbolOutOfRange {
                symbol: j,
                max: self.m(),
            });
        }
        let cached = word.len() <= self.cache_depth;
        if cached {
            if let Some(n) = self.cache.read().expect("cache lock").get(word) {
                return Ok(Arc::clone(n));
            }
        }
        let node = Arc::new(Node::build(
            parent.remainders[j - 1].hermitian().clone(),
            &self.spec,
        )?);
        if cached {
            let mut cache = self.cache.write().expect("cache lock");
            Ok(Arc::clone(cache.entry(word.to_vec()).or_insert(node)))
        } else {
            Ok(node)
        }
    }

    /// Node labelling `word`: the node of its longest 0-free prefix.
    pub fn node(&self, word: &[Symbol]) -> Result<Arc<Node>> {
        self.spec.check_word(word)?;
        let frozen = &word[..frozen_len(word)];
        if frozen.is_empty() {
            return Ok(self.root());
        }
        if frozen.len() <= self.cache_depth {
            if let Some(n) = self.cache.read().expect("cache lock").get(frozen) {
                return Ok(Arc::clone(n));
            }
        }
        let mut current = self.root();
        for k in 1..=frozen.len() {
            current = self.child(&current, &frozen[..k])?;
        }
        Ok(current)
    }

    pub fn residual_at(&self, u: &[Symbol]) -> Result<PsdMatrix> {
        Ok(self.node(u)?.residual.clone())
    }

    /// `D_{u,a}`; zero when `a = 0` or `u` is absorbed.
    pub fn dissipation_at(&self, u: &[Symbol], a: Symbol) -> Result<PsdMatrix> {
        self.spec.check_word(&[a])?;
        self.spec.check_word(u)?;
        if a == 0 || u.contains(&0) {
            return Ok(PsdMatrix::zeros(self.spec.dim()));
        }
        Ok(self.node(u)?.dissipations[a as usize - 1].clone())
    }

    pub fn edge_energies(&self, u: &[Symbol], x: &CVector) -> Result<EdgeEnergies> {
        self.spec.check_vector(x)?;
        let m = self.m();
        let (vector_energies, trace_energies) = if u.contains(&0) {
            self.spec.check_word(u)?;
            (vec![0.0; m], vec![0.0; m])
        } else {
            let node = self.node(u)?;
            (node.vector_energies(x), node.trace_energies.clone())
        };
        Ok(EdgeEnergies {
            s_vector: vector_energies.iter().sum(),
            s_trace: trace_energies.iter().sum(),
            vector_energies,
            trace_energies,
        })
    }

    pub fn transition_row(&self, u: &[Symbol], bias: &Bias) -> Result<TransitionRow> {
        self.spec.check_bias(bias)?;
        self.spec.check_word(u)?;
        if u.contains(&0) {
            return Ok(TransitionRow::stop(self.m(), RowKind::Absorbed));
        }
        let node = self.node(u)?;
        Ok(self.row_at(&node, false, bias))
    }

    /// Row at an already-resolved node; `absorbed` marks words containing `0`.
    pub fn row_at(&self, node: &Node, absorbed: bool, bias: &Bias) -> TransitionRow {
        let m = self.m();
        if absorbed {
            return TransitionRow::stop(m, RowKind::Absorbed);
        }
        let energies: Vec<f64> = node.energies(bias).into_iter().map(|e| e.max(0.0)).collect();
        let s: f64 = energies.iter().sum();
        if s <= self.spec.dead_threshold(bias) {
            return TransitionRow::stop(m, RowKind::Dead);
        }
        let mut probs = Vec::with_capacity(m + 1);
        probs.push(0.0);
        probs.extend(energies.iter().map(|e| e / s));
        TransitionRow {
            probs,
            kind: RowKind::Live,
        }
    }

    /// Depth-bounded leakage certificate: the minimum of `s_w / mass(R_w)`
    /// over 0-free words with `|w| <= depth` whose mass exceeds the dead
    /// threshold. `+inf` when no such node exists.
    pub fn leakage_alpha(&self, depth: usize, bias: &Bias) -> Result<f64> {
        self.spec.check_bias(bias)?;
        let threshold = self.spec.dead_threshold(bias);
        let mut alpha = f64::INFINITY;
        self.walk(depth, |_, node| {
            let mass = node.mass(bias);
            if mass > threshold {
                let s: f64 = node.energies(bias).iter().sum();
                alpha = alpha.min(s / mass);
            }
            true
        })?;
        Ok(alpha)
    }

    /// `lambda_min(A_1 + .. + A_m)`. For the trace bias this bounds
    /// `s_w / tr(R_w)` from below at every node, not only to a finite depth.
    pub fn trace_leakage_floor(&self) -> f64 {
        let d = self.spec.dim();
        let mut sum = HermitianMatrix::zeros(d);
        for c in &self.spec.contractions {
            sum = sum
                .add(c.effect().hermitian())
                .expect("dimensions checked at construction");
        }
        sum.min_eigenvalue()
    }

    /// 0-free words `u`, `|u| <= depth`, reachable under the `x`-biased
    /// measure, at which `x` sees no energy while the trace does.
    pub fn compatibility_scan(&self, x: &CVector, depth: usize) -> Result<Vec<ExtendedWord>> {
        self.spec.check_vector(x)?;
        let bias_x = Bias::Vector(x.clone());
        let mut found = Vec::new();
        let mut stack: Vec<(Vec<Symbol>, Arc<Node>)> = vec![(Vec::new(), self.root())];
        let mut visited = 0usize;
        while let Some((word, node)) = stack.pop() {
            visited += 1;
            if visited > SCAN_NODE_CAP {
                return Err(WrError::EnumerationTooLarge {
                    rows: visited,
                    cap: SCAN_NODE_CAP,
                    depth: word.len(),
                });
            }
            let row = self.row_at(&node, false, &bias_x);
            if !row.is_live() {
                if self.row_at(&node, false, &Bias::Trace).is_live() {
                    found.push(ExtendedWord(word));
                }
                continue;
            }
            if word.len() >= depth {
                continue;
            }
            for j in (1..=self.m()).rev() {
                if row.probs[j] > 0.0 {
                    let mut w = word.clone();
                    w.push(j as Symbol);
                    let child = self.child(&node, &w)?;
                    stack.push((w, child));
                }
            }
        }
        found.sort();
        Ok(found)
    }

    /// Depth-first visit of every 0-free word with `|w| <= depth`, in
    /// lexicographic order. Subtrees below a zero residual are skipped, as are
    /// subtrees where `visit` returns `false`.
    pub fn walk(&self, depth: usize, mut visit: impl FnMut(&[Symbol], &Node) -> bool) -> Result<()> {
        let mut stack: Vec<(Vec<Symbol>, Arc<Node>)> = vec![(Vec::new(), self.root())];
        let mut visited = 0usize;
        while let Some((word, node)) = stack.pop() {
            visited += 1;
            if visited > SCAN_NODE_CAP {
                return Err(WrError::EnumerationTooLarge {
                    rows: visited,
                    cap: SCAN_NODE_CAP,
                    depth: word.len(),
                });
            }
            let descend = visit(&word, &node);
            if !descend || word.len() >= depth || node.is_zero() {
                continue;
            }
            for j in (1..=self.m()).rev() {
                let mut w = word.clone();
                w.push(j as Symbol);
                let child = self.child(&node, &w)?;
                stack.push((w, child));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::psd::real_vector;

    fn w(s: &str) -> ExtendedWord {
        ExtendedWord::parse(s).unwrap()
    }

    fn close(a: &PsdMatrix, diag: &[f64]) -> bool {
        a.max_entry_distance(&PsdMatrix::diagonal(diag)).unwrap() < 1e-14
    }

    #[test]
    fn parse_and_display() {
        assert_eq!(w("120").symbols(), &[1, 2, 0]);
        assert_eq!(w("1 0 2").symbols(), &[1, 0, 2]);
        assert_eq!(w("10,11").symbols(), &[10, 11]);
        assert_eq!(w("10,11").to_string(), "10.11");
        assert_eq!(w("120").to_string(), "120");
        assert_eq!(w("").len(), 0);
        assert!(ExtendedWord::parse("1a").is_err());
    }

    #[test]
    fn residuals_on_projection_tower() {
        let t = fixtures::e1();
        assert!(close(&t.residual_at(&w("")).unwrap(), &[1.0, 1.0]));
        assert!(close(&t.residual_at(&w("1")).unwrap(), &[0.0, 1.0]));
        assert!(close(&t.residual_at(&w("12")).unwrap(), &[0.0, 0.0]));
        assert!(close(&t.residual_at(&w("102")).unwrap(), &[0.0, 1.0]));
    }

    #[test]
    fn dissipations_and_absorption() {
        let t = fixtures::e1();
        assert!(close(&t.dissipation_at(&w(""), 1).unwrap(), &[1.0, 0.0]));
        assert!(close(&t.dissipation_at(&w(""), 0).unwrap(), &[0.0, 0.0]));
        assert!(close(&t.dissipation_at(&w("10"), 2).unwrap(), &[0.0, 0.0]));
        assert!(matches!(
            t.dissipation_at(&w(""), 3),
            Err(WrError::SymbolOutOfRange { .. })
        ));
    }

    #[test]
    fn edge_energy_examples() {
        let x = real_vector(&[1.0, 0.0]);
        let e = fixtures::e1().edge_energies(&w(""), &x).unwrap();
        assert_eq!(e.vector_energies, vec![1.0, 0.0]);
        assert_eq!(e.trace_energies, vec![1.0, 1.0]);

        let t5 = fixtures::e5();
        let e = t5.edge_energies(&w(""), &x).unwrap();
        assert!((e.vector_energies[0] - 0.5).abs() < 1e-15);
        assert!((e.vector_energies[1] - 0.5).abs() < 1e-15);
        assert!((e.trace_energies[0] - 0.75).abs() < 1e-15);
        assert!((e.trace_energies[1] - 1.25).abs() < 1e-15);
        let e = t5.edge_energies(&w("1"), &x).unwrap();
        assert!((e.trace_energies[0] - 7.0 / 16.0).abs() < 1e-15);
        assert!((e.trace_energies[1] - 13.0 / 16.0).abs() < 1e-15);

        assert_eq!(
            t5.edge_energies(&w(""), &real_vector(&[0.0, 0.0])),
            Err(WrError::ZeroVector)
        );
    }

    #[test]
    fn transition_rows() {
        let t = fixtures::e1();
        let row = t.transition_row(&w(""), &Bias::Trace).unwrap();
        assert_eq!(row.probs, vec![0.0, 0.5, 0.5]);
        let x = Bias::vector(real_vector(&[1.0, 0.0])).unwrap();
        let row = t.transition_row(&w("1"), &x).unwrap();
        assert_eq!(row.probs, vec![1.0, 0.0, 0.0]);
        assert_eq!(row.kind, RowKind::Dead);
        let row = t.transition_row(&w("10"), &Bias::Trace).unwrap();
        assert_eq!(row.kind, RowKind::Absorbed);

        let row = fixtures::e5().transition_row(&w(""), &Bias::Trace).unwrap();
        assert!((row.probs[1] - 0.375).abs() < 1e-15);
        assert!((row.probs[2] - 0.625).abs() < 1e-15);
    }

    #[test]
    fn leakage_examples() {
        for depth in [0, 3, 6] {
            let a = fixtures::e5().leakage_alpha(depth, &Bias::Trace).unwrap();
            assert!((a - 1.0).abs() < 1e-12);
        }
        let a = fixtures::e2().leakage_alpha(8, &Bias::Trace).unwrap();
        assert!((a - 0.25).abs() < 1e-12);
        let a = fixtures::e1().leakage_alpha(2, &Bias::Trace).unwrap();
        assert!((a - 1.0).abs() < 1e-12);
        assert!((fixtures::e5().trace_leakage_floor() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compatibility_examples() {
        let t = fixtures::e1();
        let found = t.compatibility_scan(&real_vector(&[1.0, 0.0]), 2).unwrap();
        assert_eq!(found, vec![w("1")]);
        let s = 0.5f64.sqrt();
        assert!(t.compatibility_scan(&real_vector(&[s, s]), 4).unwrap().is_empty());
        let t5 = fixtures::e5();
        assert!(t5.compatibility_scan(&real_vector(&[1.0, 0.0]), 6).unwrap().is_empty());
    }

    #[test]
    fn deep_nodes_bypass_cache() {
        let t = fixtures::e2().with_cache_depth(2);
        let r = t.residual_at(&[1; 20]).unwrap();
        assert!((r.trace() - 0.75f64.powi(20)).abs() < 1e-15);
    }
}
