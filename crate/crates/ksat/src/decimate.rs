//! Decimation solvers and bookkeeping: unit clause propagation, the pure
//! literal rule, a complete DPLL oracle, BP-guided decimation with its
//! frozen-variable ledger, and a WalkSAT fallback.
//!
//! "Frozen" throughout this module is the decimation bookkeeping sense —
//! a variable is frozen once it has been fixed by a decimation step or
//! directly implied by unit propagation — not the cluster sense used by
//! the cavity modules.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bp::{self, Beta, BpConfig};
use crate::graph::{FactorGraph, Mask};
use crate::instance::{energy, gen_uniform, CnfInstance, PartialAssignment, SpinConfig};

/// Runs unit clause propagation on the mask. Seeds are clauses to inspect
/// first; implications cascade from there. Returns the fixes performed (in
/// order) plus the clauses each fix satisfied, and whether a clause emptied.
struct UcpOutcome {
    implied: Vec<(usize, i8)>,
    satisfied_clauses: Vec<usize>,
    contradiction: bool,
}

fn ucp_on_mask(
    g: &FactorGraph,
    mask: &mut Mask,
    seeds: impl IntoIterator<Item = usize>,
) -> UcpOutcome {
    let mut out =
        UcpOutcome { implied: Vec::new(), satisfied_clauses: Vec::new(), contradiction: false };
    let mut queue: VecDeque<usize> = seeds.into_iter().collect();
    while let Some(a) = queue.pop_front() {
        if !mask.clause_alive[a] || mask.free_width[a] != 1 {
            continue;
        }
        let e = g.clause_adj[a].iter().find(|e| mask.is_free(e.var)).unwrap();
        let spin = -e.j_sign; // satisfy the lone free literal
        let var = e.var;
        let effect = mask.fix(g, var, spin);
        out.implied.push((var, spin));
        out.satisfied_clauses.extend_from_slice(&effect.satisfied);
        if !effect.emptied.is_empty() {
            out.contradiction = true;
            return out;
        }
        for ve in &g.var_adj[var] {
            if mask.clause_alive[ve.clause] && mask.free_width[ve.clause] == 1 {
                queue.push_back(ve.clause);
            }
        }
    }
    out
}

fn mask_from_assignment(g: &FactorGraph, pa: &PartialAssignment) -> (Mask, bool) {
    let mut mask = Mask::all_free(g);
    let mut contradiction = false;
    for (var, spin) in pa.iter_fixed() {
        if !mask.fix(g, var, spin).emptied.is_empty() {
            contradiction = true;
        }
    }
    (mask, contradiction)
}

/// Unit clause propagation to fixpoint on top of a partial assignment.
/// Confluent: the implied set does not depend on processing order.
pub fn ucp(inst: &CnfInstance, pa: &PartialAssignment) -> (BTreeMap<usize, i8>, bool) {
    let g = FactorGraph::build(inst);
    let (mut mask, contradiction) = mask_from_assignment(&g, pa);
    if contradiction {
        return (BTreeMap::new(), true);
    }
    let out = ucp_on_mask(&g, &mut mask, 0..g.n_clauses());
    (out.implied.into_iter().collect(), out.contradiction)
}

/// Unit clauses and pure literals eliminated jointly to fixpoint
/// (DPLL preprocessing). A pure literal is a variable occurring with a
/// single polarity among live clauses; it is set to satisfy.
pub fn pure_literal_pass(
    inst: &CnfInstance,
    pa: &PartialAssignment,
) -> (BTreeMap<usize, i8>, bool) {
    let g = FactorGraph::build(inst);
    let (mut mask, contradiction) = mask_from_assignment(&g, pa);
    if contradiction {
        return (BTreeMap::new(), true);
    }
    match simplify_to_fixpoint(&g, &mut mask) {
        Ok(implied) => (implied.into_iter().collect(), false),
        Err(()) => (BTreeMap::new(), true),
    }
}

/// UCP + pure-literal fixpoint on a mask; Err(()) on contradiction.
fn simplify_to_fixpoint(g: &FactorGraph, mask: &mut Mask) -> Result<Vec<(usize, i8)>, ()> {
    let mut implied = Vec::new();
    loop {
        let out = ucp_on_mask(g, mask, 0..g.n_clauses());
        implied.extend_from_slice(&out.implied);
        if out.contradiction {
            return Err(());
        }
        // Polarity census of the live subgraph.
        let mut seen_plus = vec![false; g.n_vars()];
        let mut seen_minus = vec![false; g.n_vars()];
        for (a, adj) in g.clause_adj.iter().enumerate() {
            if !mask.clause_alive[a] {
                continue;
            }
            for e in adj {
                if mask.is_free(e.var) {
                    if e.j_sign == 1 {
                        seen_plus[e.var] = true;
                    } else {
                        seen_minus[e.var] = true;
                    }
                }
            }
        }
        let mut changed = false;
        for i in 0..g.n_vars() {
            if !mask.is_free(i) || seen_plus[i] == seen_minus[i] {
                continue; // fixed, absent, or mixed polarity
            }
            let spin = if seen_plus[i] { -1 } else { 1 };
            let effect = mask.fix(g, i, spin);
            debug_assert!(effect.emptied.is_empty(), "pure literal emptied a clause");
            implied.push((i, spin));
            changed = true;
        }
        if !changed {
            return Ok(implied);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DpllResult {
    Sat(SpinConfig),
    Unsat,
}

/// Complete DPLL search: UCP + pure-literal preprocessing, then branch on a
/// uniformly random free variable with a random first value. Intended as a
/// small-instance oracle, not a competitive solver.
pub fn dpll(inst: &CnfInstance, seed: u64) -> DpllResult {
    let g = FactorGraph::build(inst);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = Mask::all_free(&g);
    match dpll_rec(&g, mask, &mut rng) {
        Some(fixed) => {
            let spins = fixed.iter().map(|&s| if s == 0 { 1 } else { s }).collect();
            let s = SpinConfig::new(spins);
            debug_assert_eq!(energy(inst, &s), 0);
            DpllResult::Sat(s)
        }
        None => DpllResult::Unsat,
    }
}

fn dpll_rec(g: &FactorGraph, mut mask: Mask, rng: &mut ChaCha8Rng) -> Option<Vec<i8>> {
    if simplify_to_fixpoint(g, &mut mask).is_err() {
        return None;
    }
    if !mask.clause_alive.iter().any(|&a| a) {
        return Some(mask.fixed.clone()); // remaining vars unconstrained
    }
    // Branch on a random free variable occurring in a live clause.
    let live_vars: Vec<usize> = {
        let mut seen = vec![false; g.n_vars()];
        for (a, adj) in g.clause_adj.iter().enumerate() {
            if mask.clause_alive[a] {
                for e in adj {
                    if mask.is_free(e.var) {
                        seen[e.var] = true;
                    }
                }
            }
        }
        seen.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect()
    };
    let var = live_vars[rng.random_range(0..live_vars.len())];
    let first: i8 = if rng.random::<bool>() { 1 } else { -1 };
    for spin in [first, -first] {
        let mut branch = mask.clone();
        if branch.fix(g, var, spin).emptied.is_empty() {
            if let Some(sol) = dpll_rec(g, branch, rng) {
                return Some(sol);
            }
        }
    }
    None
}

/// Frozen-variable accounting for one decimation run.
///
/// `u` holds the variables fixed by decimation choices (one per step);
/// `w` additionally holds everything directly implied by unit propagation,
/// so `u ⊆ w`. `newly_frozen_per_step[t]` is |W_t| − |W_{t−1}|.
#[derive(Debug, Clone, Default)]
pub struct FrozenLedger {
    pub u: Vec<usize>,
    pub w: BTreeSet<usize>,
    pub newly_frozen_per_step: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecimationOutcome {
    Solution(SpinConfig),
    ContradictionAtStep(usize),
    /// Strict-convergence mode only: BP failed to converge at this step.
    AbortedAtStep(usize),
}

#[derive(Debug, Clone)]
pub struct DecimationStep {
    pub t: usize,
    pub theta: f64,
    pub var: usize,
    pub value: i8,
    /// Marginal used for the value draw (0.5 for random value choice).
    pub p_plus: f64,
    pub newly_frozen: usize,
}

#[derive(Debug, Clone)]
pub struct DecimationTrace {
    pub steps: Vec<DecimationStep>,
    pub ledger: FrozenLedger,
    pub outcome: DecimationOutcome,
    /// Sweeps spent in the initial full BP run.
    pub bp_sweeps: usize,
    pub bp_converged: bool,
}

impl DecimationTrace {
    pub fn solved(&self) -> bool {
        matches!(self.outcome, DecimationOutcome::Solution(_))
    }

    /// CSV dump of the per-step trace.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,theta,var,value,p_plus,newly_frozen\n");
        for st in &self.steps {
            s.push_str(&format!(
                "{},{:.6},{},{},{:.6},{}\n",
                st.t, st.theta, st.var, st.value, st.p_plus, st.newly_frozen
            ));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct DecimationConfig {
    pub beta: Beta,
    pub bp: BpConfig,
    /// Run UCP after every fix (directly-implied accounting).
    pub unit_propagation: bool,
    /// Abort on BP non-convergence instead of using the last iterate.
    pub strict_convergence: bool,
    /// false: values drawn uniformly at random, BP never runs.
    pub bp_guided: bool,
    /// Budget for the queue-driven message refresh after each fix.
    pub refresh_max_updates: usize,
    /// Enqueue threshold for the per-step refresh; looser than `bp.tol`
    /// on purpose (full precision per fix is wasted on a marginal that
    /// only feeds one Bernoulli draw).
    pub refresh_tol: f64,
    /// Full warm-started BP re-run every this many fixes (0 = never),
    /// correcting the drift the loose refresh accumulates.
    pub resweep_interval: usize,
    pub seed: u64,
}

impl Default for DecimationConfig {
    fn default() -> Self {
        DecimationConfig {
            beta: Beta::Infinity,
            bp: BpConfig::default(),
            unit_propagation: true,
            strict_convergence: false,
            bp_guided: true,
            refresh_max_updates: 25_000,
            refresh_tol: 1e-4,
            resweep_interval: 100,
            seed: 0,
        }
    }
}

/// Tracks the set of still-free variables with O(1) removal and sampling.
struct FreePool {
    items: Vec<usize>,
    pos: Vec<usize>,
}

impl FreePool {
    fn new(n: usize) -> Self {
        FreePool { items: (0..n).collect(), pos: (0..n).collect() }
    }

    fn remove(&mut self, var: usize) {
        let p = self.pos[var];
        let last = *self.items.last().unwrap();
        self.items.swap_remove(p);
        if p < self.items.len() {
            self.pos[last] = p;
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        self.items[rng.random_range(0..self.items.len())]
    }

    fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// BP-guided decimation: repeatedly pick a uniformly random free variable,
/// draw its value from the current BP marginal, fix, simplify, and unit
/// propagate. The BP messages are relaxed incrementally around each fix
/// rather than re-converged from scratch.
pub fn bp_guided_decimation(inst: &CnfInstance, cfg: &DecimationConfig) -> DecimationTrace {
    let g = FactorGraph::build(inst);
    let mut mask = Mask::all_free(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ledger = FrozenLedger::default();
    let mut steps = Vec::new();
    let mut pool = FreePool::new(inst.n_vars);
    let n = inst.n_vars as f64;

    let mut state = bp::init_state(&g, cfg.beta);
    let (bp_sweeps, bp_converged) = if cfg.bp_guided {
        let run = bp::run(&g, &mask, &mut state, &cfg.bp);
        (run.sweeps, run.converged)
    } else {
        (0, true)
    };

    let finish = |steps: Vec<DecimationStep>,
                  ledger: FrozenLedger,
                  outcome: DecimationOutcome| DecimationTrace {
        steps,
        ledger,
        outcome,
        bp_sweeps,
        bp_converged,
    };

    if cfg.bp_guided && cfg.strict_convergence && !bp_converged {
        return finish(steps, ledger, DecimationOutcome::AbortedAtStep(0));
    }

    let mut t = 0usize;
    while !pool.is_empty() {
        t += 1;
        let var = pool.sample(&mut rng);
        let p_plus = if cfg.bp_guided {
            match bp::marginal(&state, var) {
                Ok((p, _)) => p,
                Err(_) => {
                    return finish(steps, ledger, DecimationOutcome::ContradictionAtStep(t))
                }
            }
        } else {
            0.5
        };
        let value: i8 = if rng.random::<f64>() < p_plus { 1 } else { -1 };

        // Fix the chosen variable, then propagate units; collect the clauses
        // whose neighbourhood changed as refresh seeds.
        let mut refresh_seeds: Vec<usize> = Vec::new();
        let mut frozen_now = 0usize;
        let mut contradiction = false;

        let effect = mask.fix(&g, var, value);
        pool.remove(var);
        ledger.u.push(var);
        ledger.w.insert(var);
        frozen_now += 1;
        for &a in &effect.satisfied {
            if cfg.bp_guided {
                state.retire_clause(&g, a);
            }
        }
        contradiction |= !effect.emptied.is_empty();
        refresh_seeds
            .extend(g.var_adj[var].iter().map(|e| e.clause).filter(|&a| mask.clause_alive[a]));

        if !contradiction && cfg.unit_propagation {
            let units: Vec<usize> = g.var_adj[var]
                .iter()
                .map(|e| e.clause)
                .filter(|&a| mask.clause_alive[a] && mask.free_width[a] == 1)
                .collect();
            let out = ucp_on_mask(&g, &mut mask, units);
            for &(v, _) in &out.implied {
                pool.remove(v);
                ledger.w.insert(v);
                frozen_now += 1;
                refresh_seeds
                    .extend(g.var_adj[v].iter().map(|e| e.clause).filter(|&a| mask.clause_alive[a]));
            }
            if cfg.bp_guided {
                for &a in &out.satisfied_clauses {
                    state.retire_clause(&g, a);
                }
            }
            contradiction |= out.contradiction;
        }

        ledger.newly_frozen_per_step.push(frozen_now);
        steps.push(DecimationStep {
            t,
            theta: t as f64 / n,
            var,
            value,
            p_plus,
            newly_frozen: frozen_now,
        });

        if contradiction {
            return finish(steps, ledger, DecimationOutcome::ContradictionAtStep(t));
        }
        if cfg.bp_guided && !pool.is_empty() {
            bp::refresh(&g, &mask, &mut state, &refresh_seeds, cfg.refresh_tol, cfg.refresh_max_updates);
            if cfg.resweep_interval > 0 && t % cfg.resweep_interval == 0 {
                let warm = BpConfig {
                    warm_start: true,
                    max_sweeps: 30,
                    // Only correcting the drift the loose refresh leaves
                    // behind, so full BP precision is not needed here.
                    tol: 1e-3,
                    seed: cfg.bp.seed ^ t as u64,
                    ..cfg.bp
                };
                bp::run(&g, &mask, &mut state, &warm);
            }
        }
    }

    let spins: Vec<i8> = mask.fixed.iter().map(|&s| if s == 0 { 1 } else { s }).collect();
    let solution = SpinConfig::new(spins);
    if energy(inst, &solution) == 0 {
        finish(steps, ledger, DecimationOutcome::Solution(solution))
    } else {
        // Unreachable when mask bookkeeping is sound; kept as a hard check.
        finish(steps, ledger, DecimationOutcome::ContradictionAtStep(t))
    }
}

/// Ensemble-averaged frozen-variable statistics along the decimation path.
#[derive(Debug, Clone)]
pub struct PhiThetaCurve {
    /// θ = t/N grid (one point per decimation step).
    pub theta: Vec<f64>,
    /// Mean cumulative frozen fraction (1/N)|W_{θN}|.
    pub phi_cum: Vec<f64>,
    /// Standard error of the cumulative fraction across seeds.
    pub phi_stderr: Vec<f64>,
    /// Mean newly-frozen count |Z_{θN}| per step.
    pub z_mean: Vec<f64>,
    /// Number of runs still alive (not yet ended) at each step.
    pub runs_alive: Vec<usize>,
}

impl PhiThetaCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta,phi_cum,phi_stderr,z_mean,runs_alive\n");
        for i in 0..self.theta.len() {
            s.push_str(&format!(
                "{:.6},{:.6},{:.6},{:.6},{}\n",
                self.theta[i], self.phi_cum[i], self.phi_stderr[i], self.z_mean[i],
                self.runs_alive[i]
            ));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct PhiThetaConfig {
    pub n: usize,
    pub alpha: f64,
    pub k: usize,
    pub seeds: Vec<u64>,
    /// true: values drawn from BP marginals; false: uniformly random.
    pub bp_guided: bool,
    pub decimation: DecimationConfig,
}

/// Both frozen-fraction statistics along θ, averaged over fresh instances.
/// Runs ending early (contradiction) stop contributing beyond their end.
pub fn measure_phi_theta(cfg: &PhiThetaConfig) -> PhiThetaCurve {
    let traces: Vec<DecimationTrace> = crate::par::map(&cfg.seeds, |&seed| {
        let m = (cfg.alpha * cfg.n as f64).ceil() as usize;
        let inst = gen_uniform(cfg.n, m, cfg.k, seed).expect("valid ensemble parameters");
        let mut dc = cfg.decimation.clone();
        dc.bp_guided = cfg.bp_guided;
        dc.seed = seed ^ 0x9e37_79b9_7f4a_7c15;
        bp_guided_decimation(&inst, &dc)
    });

    let n_steps = traces.iter().map(|tr| tr.steps.len()).max().unwrap_or(0);
    let mut curve = PhiThetaCurve {
        theta: Vec::with_capacity(n_steps),
        phi_cum: Vec::with_capacity(n_steps),
        phi_stderr: Vec::with_capacity(n_steps),
        z_mean: Vec::with_capacity(n_steps),
        runs_alive: Vec::with_capacity(n_steps),
    };
    // Per-run cumulative |W| prefix sums.
    let cum: Vec<Vec<usize>> = traces
        .iter()
        .map(|tr| {
            tr.ledger
                .newly_frozen_per_step
                .iter()
                .scan(0usize, |acc, &z| {
                    *acc += z;
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    for t in 0..n_steps {
        let mut phis = Vec::new();
        let mut zs = Vec::new();
        for (tr, c) in traces.iter().zip(&cum) {
            if t < tr.steps.len() {
                phis.push(c[t] as f64 / cfg.n as f64);
                zs.push(tr.ledger.newly_frozen_per_step[t] as f64);
            }
        }
        let alive = phis.len();
        let mean = phis.iter().sum::<f64>() / alive as f64;
        let var = if alive > 1 {
            phis.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (alive as f64 - 1.0)
        } else {
            0.0
        };
        curve.theta.push((t + 1) as f64 / cfg.n as f64);
        curve.phi_cum.push(mean);
        curve.phi_stderr.push((var / alive as f64).sqrt());
        curve.z_mean.push(zs.iter().sum::<f64>() / alive as f64);
        curve.runs_alive.push(alive);
    }
    curve
}

#[derive(Debug, Clone)]
pub struct WalksatConfig {
    pub max_flips: usize,
    /// Noise: probability of a random flip instead of the greedy one.
    pub noise: f64,
    pub seed: u64,
    pub initial: Option<SpinConfig>,
}

impl Default for WalksatConfig {
    fn default() -> Self {
        WalksatConfig { max_flips: 1_000_000, noise: 0.5, seed: 0, initial: None }
    }
}

#[derive(Debug, Clone)]
pub struct WalksatOutcome {
    pub solution: Option<SpinConfig>,
    pub flips: usize,
}

/// Plain WalkSAT: pick a random unsatisfied clause; with probability
/// `noise` flip a random variable in it, otherwise flip the variable that
/// breaks the fewest currently-satisfied clauses.
pub fn walksat(inst: &CnfInstance, cfg: &WalksatConfig) -> WalksatOutcome {
    let g = FactorGraph::build(inst);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut s = match &cfg.initial {
        Some(s0) => {
            assert_eq!(s0.len(), inst.n_vars);
            s0.clone()
        }
        None => SpinConfig::uniform(inst.n_vars, &mut rng),
    };

    // sat_count[a] = number of satisfied literals in clause a.
    let mut sat_count: Vec<u32> = inst
        .clauses
        .iter()
        .map(|cl| cl.literals.iter().filter(|l| l.satisfied_by(s.spins[l.var])).count() as u32)
        .collect();
    let mut unsat: Vec<usize> = (0..inst.n_clauses()).filter(|&a| sat_count[a] == 0).collect();
    let mut unsat_pos: Vec<usize> = vec![usize::MAX; inst.n_clauses()];
    for (p, &a) in unsat.iter().enumerate() {
        unsat_pos[a] = p;
    }

    let break_count = |v: usize, s: &SpinConfig, sat_count: &[u32]| -> usize {
        g.var_adj[v]
            .iter()
            .filter(|ve| {
                let e = g.clause_adj[ve.clause].iter().find(|e| e.var == v).unwrap();
                // v currently the sole satisfier of this clause?
                sat_count[ve.clause] == 1 && s.spins[v] == -e.j_sign
            })
            .count()
    };

    for flips in 0..cfg.max_flips {
        if unsat.is_empty() {
            debug_assert_eq!(energy(inst, &s), 0);
            return WalksatOutcome { solution: Some(s), flips };
        }
        let a = unsat[rng.random_range(0..unsat.len())];
        let lits = &inst.clauses[a].literals;
        let v = if rng.random::<f64>() < cfg.noise {
            lits[rng.random_range(0..lits.len())].var
        } else {
            lits.iter()
                .map(|l| (break_count(l.var, &s, &sat_count), rng.random::<u32>(), l.var))
                .min()
                .unwrap()
                .2
        };
        // Flip v and maintain the satisfaction counts.
        s.spins[v] = -s.spins[v];
        for ve in &g.var_adj[v] {
            let e = g.clause_adj[ve.clause].iter().find(|e| e.var == v).unwrap();
            let now_sat = s.spins[v] == -e.j_sign;
            if now_sat {
                sat_count[ve.clause] += 1;
                if sat_count[ve.clause] == 1 {
                    let p = unsat_pos[ve.clause];
                    let last = *unsat.last().unwrap();
                    unsat.swap_remove(p);
                    if p < unsat.len() {
                        unsat_pos[last] = p;
                    }
                    unsat_pos[ve.clause] = usize::MAX;
                }
            } else {
                sat_count[ve.clause] -= 1;
                if sat_count[ve.clause] == 0 {
                    unsat_pos[ve.clause] = unsat.len();
                    unsat.push(ve.clause);
                }
            }
        }
    }
    if unsat.is_empty() {
        WalksatOutcome { solution: Some(s), flips: cfg.max_flips }
    } else {
        WalksatOutcome { solution: None, flips: cfg.max_flips }
    }
}
