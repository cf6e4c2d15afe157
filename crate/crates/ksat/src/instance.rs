//! Random K-SAT instances: generation, evaluation, simplification, DIMACS i/o.
//!
//! Sign convention: a literal stores the spin `j_sign` that *falsifies* it.
//! A positive occurrence of variable `x` is falsified by `sigma = -1`
//! (`j_sign = -1`), a negated occurrence by `sigma = +1` (`j_sign = +1`).
//! A clause is violated exactly when every involved spin is aligned with its
//! `j_sign`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap for exhaustive enumeration (`count_solutions`).
pub const EXHAUSTIVE_LIMIT: usize = 26;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("exhaustive oracle limited to {limit} variables, instance has {n}")]
    OracleScaleExceeded { n: usize, limit: usize },
    #[error("malformed DIMACS: {0}")]
    Dimacs(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A single literal: variable index plus the spin value that falsifies it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub var: usize,
    /// +1 encodes a negated occurrence, -1 a positive occurrence.
    pub j_sign: i8,
}

impl Literal {
    pub fn new(var: usize, j_sign: i8) -> Self {
        debug_assert!(j_sign == 1 || j_sign == -1);
        Literal { var, j_sign }
    }

    /// True iff the spin satisfies this literal.
    #[inline]
    pub fn satisfied_by(&self, spin: i8) -> bool {
        spin != self.j_sign
    }
}

/// A disjunction of literals over distinct variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub literals: Vec<Literal>,
}

impl Clause {
    pub fn new(literals: Vec<Literal>) -> Self {
        Clause { literals }
    }

    pub fn width(&self) -> usize {
        self.literals.len()
    }
}

/// A CNF over spins. Generated instances have uniform clause width `k`;
/// simplification may shrink individual clauses below `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnfInstance {
    pub n_vars: usize,
    pub k: usize,
    pub clauses: Vec<Clause>,
}

impl CnfInstance {
    pub fn new(n_vars: usize, k: usize, clauses: Vec<Clause>) -> Self {
        CnfInstance { n_vars, k, clauses }
    }

    pub fn n_clauses(&self) -> usize {
        self.clauses.len()
    }

    /// Constraint density alpha = M/N.
    pub fn alpha(&self) -> f64 {
        if self.n_vars == 0 {
            0.0
        } else {
            self.clauses.len() as f64 / self.n_vars as f64
        }
    }
}

/// A full spin configuration, one spin in {-1,+1} per variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpinConfig {
    pub spins: Vec<i8>,
}

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Self {
        debug_assert!(spins.iter().all(|&s| s == 1 || s == -1));
        SpinConfig { spins }
    }

    pub fn uniform(n: usize, rng: &mut impl Rng) -> Self {
        SpinConfig {
            spins: (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }
}

/// A partial map var -> spin, remembering the order in which spins were fixed.
#[derive(Debug, Clone, Default)]
pub struct PartialAssignment {
    /// 0 = free, otherwise the fixed spin.
    fixed: Vec<i8>,
    fixed_order: Vec<usize>,
}

impl PartialAssignment {
    pub fn new(n_vars: usize) -> Self {
        PartialAssignment { fixed: vec![0; n_vars], fixed_order: Vec::new() }
    }

    #[inline]
    pub fn get(&self, var: usize) -> Option<i8> {
        match self.fixed[var] {
            0 => None,
            s => Some(s),
        }
    }

    /// Fixes a free variable. Panics if it is already fixed.
    pub fn fix(&mut self, var: usize, spin: i8) {
        assert!(self.fixed[var] == 0, "variable {var} fixed twice");
        debug_assert!(spin == 1 || spin == -1);
        self.fixed[var] = spin;
        self.fixed_order.push(var);
    }

    pub fn n_fixed(&self) -> usize {
        self.fixed_order.len()
    }

    pub fn n_vars(&self) -> usize {
        self.fixed.len()
    }

    pub fn fixed_order(&self) -> &[usize] {
        &self.fixed_order
    }

    pub fn iter_fixed(&self) -> impl Iterator<Item = (usize, i8)> + '_ {
        self.fixed_order.iter().map(move |&v| (v, self.fixed[v]))
    }
}

/// Which ensemble an instance was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Uniform,
    Planted,
}

/// Reproducibility sidecar written next to generated DIMACS files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub seed: u64,
    pub model: Model,
}

fn check_gen_params(n: usize, k: usize) -> Result<(), InstanceError> {
    if k > n {
        return Err(InstanceError::InvalidParameters(format!(
            "clause width k={k} exceeds variable count n={n}"
        )));
    }
    if k == 0 {
        return Err(InstanceError::InvalidParameters("clause width k=0".into()));
    }
    Ok(())
}

fn random_clause(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Clause {
    let vars = rand::seq::index::sample(rng, n, k);
    let literals = vars
        .iter()
        .map(|v| Literal::new(v, if rng.random::<bool>() { 1 } else { -1 }))
        .collect();
    Clause::new(literals)
}

/// Draws an instance from the uniform ensemble: each clause independently,
/// k distinct variables without replacement, signs uniform. Repeated clauses
/// across the instance are allowed.
pub fn gen_uniform(n: usize, m: usize, k: usize, seed: u64) -> Result<CnfInstance, InstanceError> {
    check_gen_params(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clauses = (0..m).map(|_| random_clause(n, k, &mut rng)).collect();
    Ok(CnfInstance::new(n, k, clauses))
}

/// Like [`gen_uniform`] but with a Poisson(alpha*n) number of clauses.
pub fn gen_uniform_poisson_m(
    n: usize,
    alpha: f64,
    k: usize,
    seed: u64,
) -> Result<CnfInstance, InstanceError> {
    check_gen_params(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rand_distr::Poisson::new(alpha * n as f64)
        .map_err(|e| InstanceError::InvalidParameters(e.to_string()))?
        .sample(&mut rng) as usize;
    let clauses = (0..m).map(|_| random_clause(n, k, &mut rng)).collect();
    Ok(CnfInstance::new(n, k, clauses))
}

/// Draws an instance from the planted ensemble: first a uniform assignment
/// sigma, then each clause uniform among the k-clauses satisfied by sigma
/// (rejection sampling: redraw while all literals come out false).
pub fn gen_planted(
    n: usize,
    m: usize,
    k: usize,
    seed: u64,
) -> Result<(CnfInstance, SpinConfig), InstanceError> {
    check_gen_params(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = SpinConfig::uniform(n, &mut rng);
    let mut clauses = Vec::with_capacity(m);
    while clauses.len() < m {
        let cl = random_clause(n, k, &mut rng);
        if clause_violated(&cl, &sigma) == 0 {
            clauses.push(cl);
        }
    }
    Ok((CnfInstance::new(n, k, clauses), sigma))
}

/// Clause violation indicator: 1 iff every literal's spin equals its j_sign.
/// Equals the product formula prod_r (1 + J_r * sigma_r) / 2.
#[inline]
pub fn clause_violated(cl: &Clause, s: &SpinConfig) -> u32 {
    for lit in &cl.literals {
        if s.spins[lit.var] != lit.j_sign {
            return 0;
        }
    }
    1
}

/// Number of violated clauses (the Hamiltonian).
pub fn energy(inst: &CnfInstance, s: &SpinConfig) -> usize {
    assert_eq!(inst.n_vars, s.len(), "spin configuration length mismatch");
    inst.clauses.iter().map(|cl| clause_violated(cl, s) as usize).sum()
}

/// Clause in bitmask form: violated by `a` iff `a & mask == pattern`,
/// where bit i of `a` is 1 when sigma_i = +1.
pub(crate) fn clause_masks(cl: &Clause) -> (u32, u32) {
    let mut mask = 0u32;
    let mut pattern = 0u32;
    for lit in &cl.literals {
        mask |= 1 << lit.var;
        if lit.j_sign == 1 {
            pattern |= 1 << lit.var;
        }
    }
    (mask, pattern)
}

/// Exact number of satisfying assignments by enumeration over all 2^N
/// configurations. This is the brute-force oracle used to test BP and DPLL.
pub fn count_solutions(inst: &CnfInstance) -> Result<u64, InstanceError> {
    count_solutions_with_limit(inst, EXHAUSTIVE_LIMIT)
}

pub fn count_solutions_with_limit(inst: &CnfInstance, limit: usize) -> Result<u64, InstanceError> {
    if inst.n_vars > limit {
        return Err(InstanceError::OracleScaleExceeded { n: inst.n_vars, limit });
    }
    let masks: Vec<(u32, u32)> = inst.clauses.iter().map(clause_masks).collect();
    let mut count = 0u64;
    for a in 0u64..(1u64 << inst.n_vars) {
        let a = a as u32;
        if masks.iter().all(|&(m, p)| a & m != p) {
            count += 1;
        }
    }
    Ok(count)
}

/// Result of applying a partial assignment to an instance.
#[derive(Debug, Clone)]
pub struct Simplified {
    pub instance: CnfInstance,
    /// Set when some clause had all its literals falsified.
    pub contradiction: bool,
}

/// Removes clauses satisfied by `pa` and strips falsified literals from the
/// survivors. Variable indices are preserved. An emptied clause sets the
/// contradiction marker instead of being kept.
pub fn simplify(inst: &CnfInstance, pa: &PartialAssignment) -> Simplified {
    let mut clauses = Vec::with_capacity(inst.clauses.len());
    let mut contradiction = false;
    'clauses: for cl in &inst.clauses {
        let mut kept = Vec::new();
        for lit in &cl.literals {
            match pa.get(lit.var) {
                Some(spin) if lit.satisfied_by(spin) => continue 'clauses,
                Some(_) => {} // falsified literal dropped
                None => kept.push(*lit),
            }
        }
        if kept.is_empty() {
            contradiction = true;
        } else {
            clauses.push(Clause::new(kept));
        }
    }
    Simplified { instance: CnfInstance::new(inst.n_vars, inst.k, clauses), contradiction }
}

/// Parses a DIMACS CNF file. Variables are 1-based on disk, 0-based in
/// memory; a negative DIMACS literal maps to `j_sign = +1`.
pub fn read_dimacs(path: impl AsRef<Path>) -> Result<CnfInstance, InstanceError> {
    parse_dimacs(&fs::read_to_string(path)?)
}

pub fn parse_dimacs(text: &str) -> Result<CnfInstance, InstanceError> {
    let mut header: Option<(usize, usize)> = None;
    let mut clauses = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('c') || line.starts_with('%') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('p') {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() != 3 || fields[0] != "cnf" {
                return Err(InstanceError::Dimacs(format!("bad header line: {line:?}")));
            }
            let n = fields[1].parse().map_err(|_| InstanceError::Dimacs("bad var count".into()))?;
            let m =
                fields[2].parse().map_err(|_| InstanceError::Dimacs("bad clause count".into()))?;
            header = Some((n, m));
            continue;
        }
        let (n_vars, _) = header.ok_or_else(|| InstanceError::Dimacs("missing header".into()))?;
        for tok in line.split_whitespace() {
            let v: i64 =
                tok.parse().map_err(|_| InstanceError::Dimacs(format!("bad literal {tok:?}")))?;
            if v == 0 {
                clauses.push(Clause::new(std::mem::take(&mut current)));
            } else {
                let var = v.unsigned_abs() as usize - 1;
                if var >= n_vars {
                    return Err(InstanceError::Dimacs(format!(
                        "variable {} out of range (n={n_vars})",
                        v.abs()
                    )));
                }
                current.push(Literal::new(var, if v < 0 { 1 } else { -1 }));
            }
        }
    }
    let (n, m) = header.ok_or_else(|| InstanceError::Dimacs("missing header".into()))?;
    if !current.is_empty() {
        return Err(InstanceError::Dimacs("unterminated clause".into()));
    }
    if clauses.len() != m {
        return Err(InstanceError::Dimacs(format!(
            "header announces {m} clauses, found {}",
            clauses.len()
        )));
    }
    for cl in &clauses {
        let mut vars: Vec<usize> = cl.literals.iter().map(|l| l.var).collect();
        vars.sort_unstable();
        vars.dedup();
        if vars.len() != cl.literals.len() {
            return Err(InstanceError::Dimacs("repeated variable within a clause".into()));
        }
    }
    let k = clauses.iter().map(Clause::width).max().unwrap_or(0);
    Ok(CnfInstance::new(n, k, clauses))
}

/// Parses a DIMACS file, requiring every clause to have width exactly `k`.
pub fn read_dimacs_uniform_width(
    path: impl AsRef<Path>,
    k: usize,
) -> Result<CnfInstance, InstanceError> {
    let inst = read_dimacs(path)?;
    for (idx, cl) in inst.clauses.iter().enumerate() {
        if cl.width() != k {
            return Err(InstanceError::Dimacs(format!(
                "clause {} has width {}, expected {k}",
                idx + 1,
                cl.width()
            )));
        }
    }
    Ok(inst)
}

pub fn dimacs_string(inst: &CnfInstance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "p cnf {} {}", inst.n_vars, inst.clauses.len());
    for cl in &inst.clauses {
        for lit in &cl.literals {
            let v = (lit.var + 1) as i64;
            let _ = write!(out, "{} ", if lit.j_sign == 1 { -v } else { v });
        }
        let _ = writeln!(out, "0");
    }
    out
}

pub fn write_dimacs(inst: &CnfInstance, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    fs::write(path, dimacs_string(inst))?;
    Ok(())
}
