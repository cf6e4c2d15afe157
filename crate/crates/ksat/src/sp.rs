//! Zero-temperature Survey Propagation at Parisi parameter m, and
//! Survey-Inspired Decimation (SID).
//!
//! At zero temperature the clause-to-variable messages take values in
//! {0, ±1}, so all message distributions are finite histograms: a clause
//! edge carries a [`USurvey`] (warning probability toward satisfying its
//! literal), a variable edge an integer-supported [`HSurvey`]. Updates
//! reweight each joint outcome by z^m, where z is the corresponding hard
//! free-entropy shift; outcomes with z = 0 (clashing warnings) are dropped
//! at every m, which at m = 0 reproduces classic SP.
//!
//! The shift values used for the reweights and for the instance-level
//! replicated free entropy Φ(m):
//!   variable: 0 on clashing warnings, 2 with no warning, 2^W with W ≥ 1;
//!   clause (cavity, excluding the receiver): 2 when some input pushes to
//!     satisfy, else 2 − 2^{−F} with F inputs free (F = 0 is the warning);
//!   clause (full, all members): 0 when all push to falsify, 1 when some
//!     input pushes to satisfy, else 1 − 2^{−F};
//!   edge: 2 when field and bias are aligned and nonzero, 1 when either
//!     vanishes, 0 when opposed.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bp::Contradiction;
use crate::decimate::{walksat, WalksatConfig, WalksatOutcome};
use crate::graph::{FactorGraph, Mask};
use crate::instance::{energy, CnfInstance, SpinConfig};

const LN_2: f64 = std::f64::consts::LN_2;

/// Clause-to-variable survey: weights on u ∈ {−1, 0, +1}. On an edge the
/// weight opposing the satisfying direction of the literal is always zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct USurvey {
    pub w_minus: f64,
    pub w_zero: f64,
    pub w_plus: f64,
}

impl USurvey {
    pub fn delta_zero() -> Self {
        USurvey { w_minus: 0.0, w_zero: 1.0, w_plus: 0.0 }
    }

    /// Warning with probability q toward direction dir ∈ {−1, +1}.
    pub fn warning(dir: i8, q: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&q));
        match dir {
            1 => USurvey { w_minus: 0.0, w_zero: 1.0 - q, w_plus: q },
            -1 => USurvey { w_minus: q, w_zero: 1.0 - q, w_plus: 0.0 },
            _ => unreachable!("direction must be ±1"),
        }
    }

    /// Weight of the warning toward `dir`.
    pub fn warning_weight(&self, dir: i8) -> f64 {
        if dir == 1 {
            self.w_plus
        } else {
            self.w_minus
        }
    }

    pub fn total(&self) -> f64 {
        self.w_minus + self.w_zero + self.w_plus
    }

    /// Total-variation distance.
    pub fn tv(&self, other: &USurvey) -> f64 {
        0.5 * ((self.w_minus - other.w_minus).abs()
            + (self.w_zero - other.w_zero).abs()
            + (self.w_plus - other.w_plus).abs())
    }
}

/// Cavity-field survey: a normalized histogram over integer h, support
/// bounded by the incoming degree.
#[derive(Debug, Clone, PartialEq)]
pub struct HSurvey {
    min: i32,
    w: Vec<f64>,
}

impl HSurvey {
    pub fn delta(h: i32) -> Self {
        HSurvey { min: h, w: vec![1.0] }
    }

    pub fn from_weights(min: i32, w: Vec<f64>) -> Self {
        assert!(!w.is_empty());
        HSurvey { min, w }
    }

    pub fn support(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.w.iter().enumerate().map(|(i, &p)| (self.min + i as i32, p))
    }

    pub fn mass(&self, h: i32) -> f64 {
        let idx = h - self.min;
        if idx < 0 || idx as usize >= self.w.len() {
            0.0
        } else {
            self.w[idx as usize]
        }
    }

    pub fn mass_pos(&self) -> f64 {
        self.support().filter(|&(h, _)| h > 0).map(|(_, p)| p).sum()
    }

    pub fn mass_neg(&self) -> f64 {
        self.support().filter(|&(h, _)| h < 0).map(|(_, p)| p).sum()
    }

    pub fn mass_zero(&self) -> f64 {
        self.mass(0)
    }

    /// Mass of fields aligned with spin `dir`.
    pub fn mass_toward(&self, dir: i8) -> f64 {
        if dir == 1 {
            self.mass_pos()
        } else {
            self.mass_neg()
        }
    }

    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }

    pub fn normalize(&mut self) {
        let t = self.total();
        if t > 0.0 {
            for p in &mut self.w {
                *p /= t;
            }
        }
    }

    pub fn mean_tanh(&self) -> f64 {
        self.support().map(|(h, p)| p * f64::from(h).tanh()).sum()
    }

    pub fn mean_tanh_sq(&self) -> f64 {
        self.support().map(|(h, p)| p * f64::from(h).tanh().powi(2)).sum()
    }
}

/// SP state: one u-survey per directed clause edge, plus the Parisi
/// parameter m used in all reweights.
#[derive(Debug, Clone)]
pub struct SpState {
    pub q: Vec<USurvey>,
    pub m: f64,
}

impl SpState {
    pub fn new(g: &FactorGraph, m: f64) -> Self {
        assert!((0.0..=1.0).contains(&m), "m must lie in [0,1]");
        SpState { q: vec![USurvey::delta_zero(); g.n_edges], m }
    }
}

/// Integrated biases of a local-field survey.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasTriple {
    pub w_plus: f64,
    pub w_minus: f64,
    pub w_zero: f64,
}

impl BiasTriple {
    pub fn polarization(&self) -> f64 {
        (self.w_plus - self.w_minus).abs()
    }
}

pub fn biases(p: &HSurvey) -> BiasTriple {
    BiasTriple { w_plus: p.mass_pos(), w_minus: p.mass_neg(), w_zero: p.mass_zero() }
}

/// P(w of the events fire) for independent events, exact DP.
fn poisson_binomial(ps: &[f64]) -> Vec<f64> {
    let mut dp = vec![1.0f64];
    for &p in ps {
        dp.push(0.0);
        for w in (1..dp.len()).rev() {
            dp[w] = dp[w] * (1.0 - p) + dp[w - 1] * p;
        }
        dp[0] *= 1.0 - p;
    }
    dp
}

/// Variable-side survey from explicit inputs (q, direction) — the exact
/// reweighted convolution. Contradictory joint warnings carry z = 0 and
/// are excluded; if everything is excluded the edge is contradictory.
pub fn var_survey_from_inputs(inputs: &[(f64, i8)], m: f64) -> Result<HSurvey, Contradiction> {
    let plus: Vec<f64> = inputs.iter().filter(|&&(_, d)| d == 1).map(|&(q, _)| q).collect();
    let minus: Vec<f64> = inputs.iter().filter(|&&(_, d)| d == -1).map(|&(q, _)| q).collect();
    let a_plus = poisson_binomial(&plus);
    let a_minus = poisson_binomial(&minus);
    // Atom h = ±w gets z = 2^w (w ≥ 1); h = 0 gets z = 2.
    let d_minus = a_minus.len() - 1;
    let mut w = vec![0.0; d_minus + a_plus.len()];
    w[d_minus] = a_plus[0] * a_minus[0] * (m * LN_2).exp();
    for (k, &p) in a_plus.iter().enumerate().skip(1) {
        w[d_minus + k] = p * a_minus[0] * (m * k as f64 * LN_2).exp();
    }
    for (k, &p) in a_minus.iter().enumerate().skip(1) {
        w[d_minus - k] = p * a_plus[0] * (m * k as f64 * LN_2).exp();
    }
    let mut out = HSurvey::from_weights(-(d_minus as i32), w);
    if out.total() <= 0.0 {
        return Err(Contradiction);
    }
    out.normalize();
    Ok(out)
}

fn incoming_inputs(
    g: &FactorGraph,
    mask: &Mask,
    state: &SpState,
    i: usize,
    exclude: Option<usize>,
) -> Vec<(f64, i8)> {
    g.var_adj[i]
        .iter()
        .filter(|ve| mask.clause_alive[ve.clause] && Some(ve.clause) != exclude)
        .map(|ve| {
            let e = g.clause_adj[ve.clause].iter().find(|e| e.var == i).unwrap();
            let dir = -e.j_sign; // clauses bias toward satisfying
            (state.q[ve.edge].warning_weight(dir), dir)
        })
        .collect()
}

/// Cavity-field survey on the edge i→a.
pub fn sp_update_var(
    g: &FactorGraph,
    mask: &Mask,
    state: &SpState,
    i: usize,
    a: usize,
) -> Result<HSurvey, Contradiction> {
    var_survey_from_inputs(&incoming_inputs(g, mask, state, i, Some(a)), state.m)
}

/// Local-field survey over the full neighborhood of i.
pub fn local_field_survey(
    g: &FactorGraph,
    mask: &Mask,
    state: &SpState,
    i: usize,
) -> Result<HSurvey, Contradiction> {
    var_survey_from_inputs(&incoming_inputs(g, mask, state, i, None), state.m)
}

/// Per-input classification for a clause update: mass pushing the literal
/// to be falsified, free mass, mass pushing it to be satisfied.
fn clause_input_triple(p: &HSurvey, j_sign: i8) -> (f64, f64, f64) {
    let p_f = p.mass_toward(j_sign);
    let p_0 = p.mass_zero();
    (p_f, p_0, (1.0 - p_f - p_0).max(0.0))
}

/// Clause-side survey from explicit cavity inputs `(survey, j_sign)` of the
/// other members, for the receiving literal's satisfying direction `dir`.
///
/// The warning fires iff every other member is pushed to falsify; the
/// reweight of a non-warning outcome is 2 when some member pushes to
/// satisfy, else 2 − 2^{−F} with F free members.
pub fn clause_survey_from_inputs(inputs: &[(&HSurvey, i8)], dir: i8, m: f64) -> USurvey {
    // c[f] = P(no member pushes to satisfy and exactly f are free).
    let mut c = vec![1.0f64];
    let mut all_constrained = 1.0; // prod (p_f + p_0)
    for &(p, j_sign) in inputs {
        let (p_f, p_0, _) = clause_input_triple(p, j_sign);
        all_constrained *= p_f + p_0;
        c.push(0.0);
        for f in (1..c.len()).rev() {
            c[f] = c[f] * p_f + c[f - 1] * p_0;
        }
        c[0] *= p_f;
    }
    let q_warn = c[0]; // reweight 1
    let mut q_zero = (1.0 - all_constrained) * (m * LN_2).exp();
    for (f, &p) in c.iter().enumerate().skip(1) {
        q_zero += p * (2.0 - (-(f as f64) * LN_2).exp()).powf(m);
    }
    let total = q_warn + q_zero;
    USurvey::warning(dir, if total > 0.0 { q_warn / total } else { 0.0 })
}

/// U-survey on the edge a→i, with the other members' cavity surveys
/// recomputed fresh from the current state.
pub fn sp_update_clause(
    g: &FactorGraph,
    mask: &Mask,
    state: &SpState,
    a: usize,
    i: usize,
) -> Result<USurvey, Contradiction> {
    let mut inputs = Vec::with_capacity(g.clause_adj[a].len() - 1);
    let mut dir = 0i8;
    for e in &g.clause_adj[a] {
        if e.var == i {
            dir = -e.j_sign;
            continue;
        }
        if mask.is_free(e.var) {
            inputs.push((sp_update_var(g, mask, state, e.var, a)?, e.j_sign));
        } else {
            // A fixed spin in a live clause falsifies its literal.
            inputs.push((HSurvey::delta(i32::from(e.j_sign)), e.j_sign));
        }
    }
    debug_assert!(dir != 0);
    let refs: Vec<(&HSurvey, i8)> = inputs.iter().map(|(p, j)| (p, *j)).collect();
    Ok(clause_survey_from_inputs(&refs, dir, state.m))
}

#[derive(Debug, Clone)]
pub struct SpConfig {
    pub max_sweeps: usize,
    /// Convergence: max total-variation change of any u-survey in a sweep.
    pub tol: f64,
    pub seed: u64,
    /// Keep the current surveys instead of re-randomizing.
    pub warm_start: bool,
}

impl Default for SpConfig {
    fn default() -> Self {
        SpConfig { max_sweeps: 300, tol: 1e-4, seed: 0, warm_start: false }
    }
}

#[derive(Debug, Clone)]
pub struct SpRun {
    pub converged: bool,
    pub sweeps: usize,
    pub contradiction: bool,
}

/// Random-sequential SP sweeps until the largest survey change drops below
/// tolerance. Surveys start with uniformly random warning weights unless
/// warm-started.
pub fn sp_run(g: &FactorGraph, mask: &Mask, state: &mut SpState, cfg: &SpConfig) -> SpRun {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut edges: Vec<(usize, usize)> = Vec::new(); // (clause, var)
    for (a, adj) in g.clause_adj.iter().enumerate() {
        if !mask.clause_alive[a] {
            continue;
        }
        for e in adj {
            if mask.is_free(e.var) {
                edges.push((a, e.var));
                if !cfg.warm_start {
                    state.q[e.edge] = USurvey::warning(-e.j_sign, rng.random::<f64>());
                }
            }
        }
    }
    for sweep in 1..=cfg.max_sweeps {
        edges.shuffle(&mut rng);
        let mut max_tv = 0.0f64;
        for &(a, i) in &edges {
            let edge = g.clause_adj[a].iter().find(|e| e.var == i).unwrap().edge;
            match sp_update_clause(g, mask, state, a, i) {
                Ok(new_q) => {
                    max_tv = max_tv.max(new_q.tv(&state.q[edge]));
                    state.q[edge] = new_q;
                }
                Err(Contradiction) => {
                    return SpRun { converged: false, sweeps: sweep, contradiction: true }
                }
            }
        }
        if max_tv < cfg.tol {
            return SpRun { converged: true, sweeps: sweep, contradiction: false };
        }
    }
    SpRun { converged: false, sweeps: cfg.max_sweeps, contradiction: false }
}

/// Queue-driven partial relaxation after a local change (decimation fix).
/// Returns the variables whose incoming surveys changed, for bias refreshes.
/// Err on a contradictory edge.
pub fn sp_refresh(
    g: &FactorGraph,
    mask: &Mask,
    state: &mut SpState,
    seeds: &[usize],
    tol: f64,
    max_updates: usize,
) -> Result<Vec<usize>, Contradiction> {
    let mut queued = vec![false; g.n_clauses()];
    let mut queue = std::collections::VecDeque::new();
    for &a in seeds {
        if mask.clause_alive[a] && !queued[a] {
            queued[a] = true;
            queue.push_back(a);
        }
    }
    let mut touched_flag = vec![false; g.n_vars()];
    let mut touched = Vec::new();
    let mut processed = 0;
    while let Some(a) = queue.pop_front() {
        queued[a] = false;
        if processed >= max_updates {
            break;
        }
        processed += 1;
        for idx in 0..g.clause_adj[a].len() {
            let e = g.clause_adj[a][idx];
            if !mask.is_free(e.var) {
                continue;
            }
            let new_q = sp_update_clause(g, mask, state, a, e.var)?;
            if new_q.tv(&state.q[e.edge]) > tol {
                state.q[e.edge] = new_q;
                if !touched_flag[e.var] {
                    touched_flag[e.var] = true;
                    touched.push(e.var);
                }
                for ve in &g.var_adj[e.var] {
                    if ve.clause != a && mask.clause_alive[ve.clause] && !queued[ve.clause] {
                        queued[ve.clause] = true;
                        queue.push_back(ve.clause);
                    }
                }
            } else {
                state.q[e.edge] = new_q;
            }
        }
    }
    Ok(touched)
}

/// Instance-level replicated free entropy Φ(m) per free variable:
/// (1/N)[Σ_i ln Ẑ_i + Σ_a ln Ẑ_a − Σ_{(ia)} ln Ẑ_ia], each Ẑ the
/// m-th-moment expectation of the hard shift over the survey atoms.
pub fn phi_m(g: &FactorGraph, mask: &Mask, state: &SpState) -> Result<f64, Contradiction> {
    let m = state.m;
    let two_m = (m * LN_2).exp();
    let mut total = 0.0;
    let mut n_live = 0usize;

    for i in 0..g.n_vars() {
        if !mask.is_free(i) {
            continue;
        }
        n_live += 1;
        let inputs = incoming_inputs(g, mask, state, i, None);
        // Ẑ_i = 2^m g₊₀ g₋₀ + T₊ g₋₀ + T₋ g₊₀, with T_s the reweighted mass
        // of ≥1 aligned warnings: Π(1 − q + 2^m q) − Π(1 − q).
        let (mut g_plus, mut g_minus) = (1.0, 1.0);
        let (mut t_plus, mut t_minus) = (1.0, 1.0);
        for &(q, d) in &inputs {
            if d == 1 {
                g_plus *= 1.0 - q;
                t_plus *= 1.0 - q + two_m * q;
            } else {
                g_minus *= 1.0 - q;
                t_minus *= 1.0 - q + two_m * q;
            }
        }
        let z_i = two_m * g_plus * g_minus + (t_plus - g_plus) * g_minus
            + (t_minus - g_minus) * g_plus;
        if z_i <= 0.0 {
            return Err(Contradiction);
        }
        total += z_i.ln();
    }

    for (a, adj) in g.clause_adj.iter().enumerate() {
        if !mask.clause_alive[a] {
            continue;
        }
        // Full-clause shift over all members: 1 − 2^{−F} with F free when no
        // member pushes to satisfy (F = 0 excluded as z = 0), else 1.
        let mut c = vec![1.0f64];
        let mut all_constrained = 1.0;
        for e in adj {
            let (p_f, p_0) = if mask.is_free(e.var) {
                let p = sp_update_var(g, mask, state, e.var, a)?;
                let (p_f, p_0, _) = clause_input_triple(&p, e.j_sign);
                (p_f, p_0)
            } else {
                (1.0, 0.0)
            };
            all_constrained *= p_f + p_0;
            c.push(0.0);
            for f in (1..c.len()).rev() {
                c[f] = c[f] * p_f + c[f - 1] * p_0;
            }
            c[0] *= p_f;
        }
        let mut z_a = 1.0 - all_constrained;
        for (f, &p) in c.iter().enumerate().skip(1) {
            z_a += p * (1.0 - (-(f as f64) * LN_2).exp()).powf(m);
        }
        if z_a <= 0.0 {
            return Err(Contradiction);
        }
        total += z_a.ln();

        // Edge shifts Ẑ_ia between the cavity survey and the u-survey.
        for e in adj {
            if !mask.is_free(e.var) {
                continue;
            }
            let p = sp_update_var(g, mask, state, e.var, a)?;
            let dir = -e.j_sign;
            let q = state.q[e.edge].warning_weight(dir);
            let z_ia = (1.0 - q) + q * (p.mass_toward(dir) * two_m + p.mass_zero());
            if z_ia <= 0.0 {
                return Err(Contradiction);
            }
            total -= z_ia.ln();
        }
    }

    if n_live == 0 {
        Ok(0.0)
    } else {
        Ok(total / n_live as f64)
    }
}

#[derive(Debug, Clone)]
pub struct MScanRow {
    pub m: f64,
    pub phi: Option<f64>,
    pub converged: bool,
    pub warning_mass: f64,
}

#[derive(Debug, Clone)]
pub struct MScan {
    pub rows: Vec<MScanRow>,
    /// m minimizing Φ(m)/m among converged rows with m > 0.
    pub m_star: Option<f64>,
}

impl MScan {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("m,phi,phi_over_m,converged,warning_mass\n");
        for r in &self.rows {
            let (phi, ratio) = match r.phi {
                Some(p) if r.m > 0.0 => (format!("{p:.8}"), format!("{:.8}", p / r.m)),
                Some(p) => (format!("{p:.8}"), String::from("nan")),
                None => (String::from("nan"), String::from("nan")),
            };
            s.push_str(&format!("{:.4},{},{},{},{:.6}\n", r.m, phi, ratio, r.converged,
                r.warning_mass));
        }
        s
    }
}

pub fn mean_warning_mass(g: &FactorGraph, mask: &Mask, state: &SpState) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, adj) in g.clause_adj.iter().enumerate() {
        if !mask.clause_alive[a] {
            continue;
        }
        for e in adj {
            if mask.is_free(e.var) {
                sum += state.q[e.edge].warning_weight(-e.j_sign);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs SP on a descending m grid, warm-starting each point from the
/// previous fixed point, and reports Φ(m) where converged.
pub fn m_scan(g: &FactorGraph, mask: &Mask, m_grid: &[f64], cfg: &SpConfig) -> MScan {
    debug_assert!(m_grid.windows(2).all(|w| w[0] >= w[1]), "m grid must be descending");
    let mut rows = Vec::with_capacity(m_grid.len());
    let mut state: Option<SpState> = None;
    for (idx, &m) in m_grid.iter().enumerate() {
        let mut st = match state.take() {
            Some(mut prev) => {
                prev.m = m;
                prev
            }
            None => SpState::new(g, m),
        };
        let mut run_cfg = cfg.clone();
        run_cfg.warm_start = idx > 0;
        let run = sp_run(g, mask, &mut st, &run_cfg);
        let phi = if run.converged { phi_m(g, mask, &st).ok() } else { None };
        rows.push(MScanRow {
            m,
            phi,
            converged: run.converged,
            warning_mass: mean_warning_mass(g, mask, &st),
        });
        state = Some(st);
    }
    let m_star = rows
        .iter()
        .filter(|r| r.converged && r.m > 0.0 && r.phi.is_some())
        .min_by(|a, b| {
            let ra = a.phi.unwrap() / a.m;
            let rb = b.phi.unwrap() / b.m;
            ra.partial_cmp(&rb).unwrap()
        })
        .map(|r| r.m);
    MScan { rows, m_star }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SidFailure {
    NonConvergence,
    Contradiction,
    WalksatGaveUp,
}

#[derive(Debug, Clone)]
pub struct SidOutcome {
    pub solution: Option<SpinConfig>,
    pub failure: Option<SidFailure>,
    /// Variables fixed by SP decimation (incl. unit propagation).
    pub fixed_by_sp: usize,
    /// Free variables handed to walksat (0 if none / failed earlier).
    pub handoff_free: usize,
}

#[derive(Debug, Clone)]
pub struct SidConfig {
    pub m: f64,
    pub sp: SpConfig,
    pub walksat: WalksatConfig,
    /// A variable counts as paramagnetic when w₀ ≥ 1 − this threshold.
    pub paramagnetic_threshold: f64,
    /// Budget for the queue-driven survey refresh after each fix.
    pub refresh_max_updates: usize,
    /// Full warm-started SP re-run every this many fixes (drift control).
    pub resweep_interval: usize,
    pub seed: u64,
}

impl Default for SidConfig {
    fn default() -> Self {
        SidConfig {
            m: 0.0,
            sp: SpConfig::default(),
            walksat: WalksatConfig::default(),
            paramagnetic_threshold: 1e-3,
            refresh_max_updates: 20_000,
            resweep_interval: 64,
            seed: 0,
        }
    }
}

/// Ordered bias pool: keys are |w₊ − w₋| as raw bits (nonnegative floats
/// order like their bit patterns), values the variable index.
struct BiasPool {
    set: std::collections::BTreeSet<(u64, usize)>,
    key: Vec<Option<u64>>,
    non_para: usize,
    para_mask: Vec<bool>,
}

impl BiasPool {
    fn new(n: usize) -> Self {
        BiasPool {
            set: std::collections::BTreeSet::new(),
            key: vec![None; n],
            non_para: 0,
            para_mask: vec![true; n],
        }
    }

    fn set_bias(&mut self, var: usize, b: &BiasTriple, threshold: f64) {
        let was_para = self.para_mask[var];
        let is_para = b.w_zero >= 1.0 - threshold;
        if let Some(k) = self.key[var].take() {
            self.set.remove(&(k, var));
        }
        let k = b.polarization().to_bits();
        self.set.insert((k, var));
        self.key[var] = Some(k);
        self.para_mask[var] = is_para;
        match (was_para, is_para) {
            (true, false) => self.non_para += 1,
            (false, true) => self.non_para -= 1,
            _ => {}
        }
    }

    fn remove(&mut self, var: usize) {
        if let Some(k) = self.key[var].take() {
            self.set.remove(&(k, var));
        }
        if !self.para_mask[var] {
            self.non_para -= 1;
            self.para_mask[var] = true;
        }
    }

    /// All variables whose key ties the maximum.
    fn argmax_ties(&self) -> Vec<usize> {
        let Some(&(kmax, _)) = self.set.last() else { return Vec::new() };
        self.set.range((kmax, 0)..).map(|&(_, v)| v).collect()
    }
}

/// Survey-Inspired Decimation: converge SP, fix the most polarized
/// variable, unit propagate, relax the surveys locally, repeat; when every
/// remaining variable is paramagnetic, hand the residual formula to
/// WalkSAT.
pub fn sid(inst: &CnfInstance, cfg: &SidConfig) -> SidOutcome {
    let g = FactorGraph::build(inst);
    let mut mask = Mask::all_free(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = SpState::new(&g, cfg.m);
    let fail = |failure: SidFailure, fixed: usize| SidOutcome {
        solution: None,
        failure: Some(failure),
        fixed_by_sp: fixed,
        handoff_free: 0,
    };

    let mut sp_cfg = cfg.sp.clone();
    sp_cfg.seed = cfg.seed;
    let run = sp_run(&g, &mask, &mut state, &sp_cfg);
    if run.contradiction {
        return fail(SidFailure::Contradiction, 0);
    }
    if !run.converged {
        return fail(SidFailure::NonConvergence, 0);
    }
    sp_cfg.warm_start = true;

    let mut pool = BiasPool::new(inst.n_vars);
    for i in 0..inst.n_vars {
        match local_field_survey(&g, &mask, &state, i) {
            Ok(p) => pool.set_bias(i, &biases(&p), cfg.paramagnetic_threshold),
            Err(Contradiction) => return fail(SidFailure::Contradiction, 0),
        }
    }

    let mut fixed = 0usize;
    loop {
        if pool.non_para == 0 {
            // Paramagnetic: hand the residual live formula to walksat.
            return walksat_handoff(inst, &g, &mask, &mut rng, cfg, fixed);
        }
        let ties = pool.argmax_ties();
        let var = ties[rng.random_range(0..ties.len())];
        let p = match local_field_survey(&g, &mask, &state, var) {
            Ok(p) => p,
            Err(Contradiction) => return fail(SidFailure::Contradiction, fixed),
        };
        let b = biases(&p);
        let spin: i8 = if b.w_plus > b.w_minus {
            1
        } else if b.w_minus > b.w_plus {
            -1
        } else if rng.random::<bool>() {
            1
        } else {
            -1
        };

        // Fix + unit propagation, collecting perturbed clauses.
        let mut seeds: Vec<usize> = Vec::new();
        let mut newly_fixed = vec![var];
        let effect = mask.fix(&g, var, spin);
        if !effect.emptied.is_empty() {
            return fail(SidFailure::Contradiction, fixed);
        }
        loop {
            let v = match newly_fixed.pop() {
                Some(v) => v,
                None => break,
            };
            fixed += 1;
            pool.remove(v);
            for ve in &g.var_adj[v] {
                let a = ve.clause;
                if !mask.clause_alive[a] {
                    continue;
                }
                seeds.push(a);
                if mask.free_width[a] == 1 {
                    let e = g.clause_adj[a].iter().find(|e| mask.is_free(e.var)).unwrap();
                    let (uv, us) = (e.var, -e.j_sign);
                    let eff = mask.fix(&g, uv, us);
                    if !eff.emptied.is_empty() {
                        return fail(SidFailure::Contradiction, fixed);
                    }
                    newly_fixed.push(uv);
                }
            }
        }

        if mask.n_free() == 0 {
            let spins: Vec<i8> =
                mask.fixed.iter().map(|&s| if s == 0 { 1 } else { s }).collect();
            let s = SpinConfig::new(spins);
            return if energy(inst, &s) == 0 {
                SidOutcome { solution: Some(s), failure: None, fixed_by_sp: fixed, handoff_free: 0 }
            } else {
                fail(SidFailure::Contradiction, fixed)
            };
        }

        // Relax surveys around the change; full re-run periodically.
        let touched = if cfg.resweep_interval > 0 && fixed % cfg.resweep_interval == 0 {
            let run = sp_run(&g, &mask, &mut state, &sp_cfg);
            if run.contradiction {
                return fail(SidFailure::Contradiction, fixed);
            }
            if !run.converged {
                return fail(SidFailure::NonConvergence, fixed);
            }
            (0..inst.n_vars).filter(|&i| mask.is_free(i)).collect()
        } else {
            match sp_refresh(&g, &mask, &mut state, &seeds, cfg.sp.tol, cfg.refresh_max_updates)
            {
                Ok(mut touched) => {
                    // Vars in perturbed clauses see changed inputs too.
                    for &a in &seeds {
                        if mask.clause_alive[a] {
                            touched.extend(
                                g.clause_adj[a].iter().map(|e| e.var).filter(|&v| mask.is_free(v)),
                            );
                        }
                    }
                    touched.sort_unstable();
                    touched.dedup();
                    touched
                }
                Err(Contradiction) => return fail(SidFailure::Contradiction, fixed),
            }
        };
        for i in touched {
            if !mask.is_free(i) {
                continue;
            }
            match local_field_survey(&g, &mask, &state, i) {
                Ok(p) => pool.set_bias(i, &biases(&p), cfg.paramagnetic_threshold),
                Err(Contradiction) => return fail(SidFailure::Contradiction, fixed),
            }
        }
    }
}

fn walksat_handoff(
    inst: &CnfInstance,
    g: &FactorGraph,
    mask: &Mask,
    rng: &mut ChaCha8Rng,
    cfg: &SidConfig,
    fixed: usize,
) -> SidOutcome {
    use crate::instance::{Clause, Literal};
    let mut clauses = Vec::new();
    for (a, adj) in g.clause_adj.iter().enumerate() {
        if !mask.clause_alive[a] {
            continue;
        }
        let lits: Vec<Literal> = adj
            .iter()
            .filter(|e| mask.is_free(e.var))
            .map(|e| Literal::new(e.var, e.j_sign))
            .collect();
        debug_assert!(!lits.is_empty());
        clauses.push(Clause::new(lits));
    }
    let residual = CnfInstance::new(inst.n_vars, inst.k, clauses);
    let handoff_free = mask.n_free();
    let init = SpinConfig::new(
        mask.fixed
            .iter()
            .map(|&s| if s == 0 { if rng.random::<bool>() { 1 } else { -1 } } else { s })
            .collect(),
    );
    let mut ws_cfg = cfg.walksat.clone();
    ws_cfg.seed = cfg.seed ^ 0x5bd1_e995;
    ws_cfg.initial = Some(init);
    let WalksatOutcome { solution, .. } = walksat(&residual, &ws_cfg);
    match solution {
        Some(s) if energy(inst, &s) == 0 => {
            SidOutcome { solution: Some(s), failure: None, fixed_by_sp: fixed, handoff_free }
        }
        _ => SidOutcome {
            solution: None,
            failure: Some(SidFailure::WalksatGaveUp),
            fixed_by_sp: fixed,
            handoff_free,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{gen_uniform, Clause, CnfInstance, Literal};
    use std::collections::BTreeMap;

    /// Joint-support enumeration oracle for the variable-side update.
    fn var_survey_oracle(inputs: &[(f64, i8)], m: f64) -> Option<BTreeMap<i32, f64>> {
        let n = inputs.len();
        let mut hist: BTreeMap<i32, f64> = BTreeMap::new();
        let mut total = 0.0;
        for bits in 0..(1u32 << n) {
            let mut w = 1.0;
            let (mut n_plus, mut n_minus) = (0i32, 0i32);
            for (idx, &(q, d)) in inputs.iter().enumerate() {
                if bits & (1 << idx) != 0 {
                    w *= q;
                    if d == 1 {
                        n_plus += 1;
                    } else {
                        n_minus += 1;
                    }
                } else {
                    w *= 1.0 - q;
                }
            }
            let z: f64 = if n_plus > 0 && n_minus > 0 {
                0.0
            } else if n_plus + n_minus == 0 {
                2.0
            } else {
                2f64.powi(n_plus + n_minus)
            };
            let rw = w * if z == 0.0 { 0.0 } else { z.powf(m) };
            total += rw;
            *hist.entry(n_plus - n_minus).or_insert(0.0) += rw;
        }
        if total <= 0.0 {
            return None;
        }
        for v in hist.values_mut() {
            *v /= total;
        }
        Some(hist)
    }

    /// Joint-support enumeration oracle for the clause-side update.
    fn clause_survey_oracle(inputs: &[(HSurvey, i8)], m: f64) -> (f64, f64) {
        #[allow(clippy::too_many_arguments)]
        fn rec(
            inputs: &[(HSurvey, i8)],
            m: f64,
            idx: usize,
            w: f64,
            all_falsify: bool,
            any_satisfy: bool,
            free: u32,
            acc: &mut (f64, f64),
        ) {
            if idx == inputs.len() {
                if all_falsify {
                    acc.0 += w; // z = 1
                } else {
                    let z = if any_satisfy {
                        2.0
                    } else {
                        2.0 - 2f64.powi(-(free as i32))
                    };
                    acc.1 += w * z.powf(m);
                }
                return;
            }
            let (p, j) = &inputs[idx];
            for (h, ph) in p.support() {
                if ph == 0.0 {
                    continue;
                }
                let push = h * i32::from(*j);
                rec(
                    inputs,
                    m,
                    idx + 1,
                    w * ph,
                    all_falsify && push > 0,
                    any_satisfy || push < 0,
                    free + u32::from(h == 0),
                    acc,
                );
            }
        }
        let mut acc = (0.0, 0.0);
        rec(inputs, m, 0, 1.0, true, false, 0, &mut acc);
        let t = acc.0 + acc.1;
        (acc.0 / t, acc.1 / t)
    }

    fn random_hsurvey(rng: &mut ChaCha8Rng, d: i32) -> HSurvey {
        let len = (2 * d + 1) as usize;
        let mut w: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        let t: f64 = w.iter().sum();
        for v in &mut w {
            *v /= t;
        }
        HSurvey::from_weights(-d, w)
    }

    #[test]
    fn var_update_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in [0.0, 0.5, 1.0] {
            for _ in 0..300 {
                let n = rng.random_range(0..=7usize);
                let inputs: Vec<(f64, i8)> = (0..n)
                    .map(|_| (rng.random::<f64>(), if rng.random::<bool>() { 1 } else { -1 }))
                    .collect();
                let oracle = var_survey_oracle(&inputs, m);
                match (var_survey_from_inputs(&inputs, m), oracle) {
                    (Ok(p), Some(h)) => {
                        for (hval, pw) in p.support() {
                            let expected = h.get(&hval).copied().unwrap_or(0.0);
                            assert!(
                                (pw - expected).abs() < 1e-12,
                                "m={m} h={hval}: {pw} vs {expected}"
                            );
                        }
                    }
                    (Err(_), None) => {}
                    (a, b) => panic!("disagree on contradiction: {a:?} vs {b:?}"),
                }
            }
        }
    }

    #[test]
    fn var_update_delta_inputs() {
        // All incoming delta(0): output delta(0).
        let p = var_survey_from_inputs(&[(0.0, 1), (0.0, -1)], 0.7).unwrap();
        assert!((p.mass(0) - 1.0).abs() < 1e-15);
        // Two certain warnings up: delta(+2).
        let p = var_survey_from_inputs(&[(1.0, 1), (1.0, 1)], 0.3).unwrap();
        assert!((p.mass(2) - 1.0).abs() < 1e-15);
        // Certain clash: contradiction.
        assert!(var_survey_from_inputs(&[(1.0, 1), (1.0, -1)], 0.0).is_err());
    }

    #[test]
    fn var_update_spec_example_m1() {
        // Two incoming {0: 1/2, +1: 1/2} at m=1: outcomes (0,0) z=2,
        // (1,0)/(0,1) z=2, (1,1) z=4 -> weights 2,2,2,4 over h=0,1,1,2.
        let p = var_survey_from_inputs(&[(0.5, 1), (0.5, 1)], 1.0).unwrap();
        assert!((p.mass(0) - 2.0 / 10.0).abs() < 1e-12);
        assert!((p.mass(1) - 4.0 / 10.0).abs() < 1e-12);
        assert!((p.mass(2) - 4.0 / 10.0).abs() < 1e-12);
    }

    #[test]
    fn clause_update_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for m in [0.0, 0.5, 1.0] {
            for _ in 0..300 {
                let n = rng.random_range(1..=4usize);
                let inputs: Vec<(HSurvey, i8)> = (0..n)
                    .map(|_| {
                        let d = rng.random_range(1..=3);
                        (random_hsurvey(&mut rng, d), if rng.random::<bool>() { 1 } else { -1 })
                    })
                    .collect();
                let refs: Vec<(&HSurvey, i8)> = inputs.iter().map(|(p, j)| (p, *j)).collect();
                let got = clause_survey_from_inputs(&refs, 1, m);
                let (warn, zero) = clause_survey_oracle(&inputs, m);
                assert!((got.w_plus - warn).abs() < 1e-12, "m={m}: {} vs {warn}", got.w_plus);
                assert!((got.w_zero - zero).abs() < 1e-12);
                assert_eq!(got.w_minus, 0.0);
            }
        }
    }

    #[test]
    fn clause_update_trivial_cases() {
        // Any member fully free: no warning possible.
        let inputs = vec![(HSurvey::delta(0), 1i8), (HSurvey::delta(2), 1)];
        let refs: Vec<(&HSurvey, i8)> = inputs.iter().map(|(p, j)| (p, *j)).collect();
        let q = clause_survey_from_inputs(&refs, -1, 0.5);
        assert_eq!(q.warning_weight(-1), 0.0);
        // All members certainly falsifying: certain warning.
        let inputs = vec![(HSurvey::delta(1), 1i8), (HSurvey::delta(-3), -1)];
        let refs: Vec<(&HSurvey, i8)> = inputs.iter().map(|(p, j)| (p, *j)).collect();
        let q = clause_survey_from_inputs(&refs, 1, 0.5);
        assert!((q.warning_weight(1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn m_zero_is_reweight_free() {
        // At m=0 the result must match the reweight-free closed form
        // q = prod p_f (classic SP), for arbitrary inputs.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let n = rng.random_range(1..=4usize);
            let inputs: Vec<(HSurvey, i8)> = (0..n)
                .map(|_| (random_hsurvey(&mut rng, 2), if rng.random::<bool>() { 1 } else { -1 }))
                .collect();
            let refs: Vec<(&HSurvey, i8)> = inputs.iter().map(|(p, j)| (p, *j)).collect();
            let q = clause_survey_from_inputs(&refs, 1, 0.0);
            let classic: f64 =
                inputs.iter().map(|(p, j)| clause_input_triple(p, *j).0).product();
            assert!((q.w_plus - classic).abs() < 1e-12);
        }
    }

    #[test]
    fn all_delta_zero_is_fixed_point() {
        for m in [0.0, 0.5, 1.0] {
            let inst = gen_uniform(40, 100, 3, 5).unwrap();
            let g = FactorGraph::build(&inst);
            let mask = Mask::all_free(&g);
            let state = SpState::new(&g, m);
            for (a, adj) in g.clause_adj.iter().enumerate() {
                for e in adj {
                    let q = sp_update_clause(&g, &mask, &state, a, e.var).unwrap();
                    assert_eq!(q.warning_weight(-e.j_sign), 0.0);
                }
            }
        }
    }

    #[test]
    fn sp_converges_paramagnetic_at_low_alpha() {
        for m in [0.0, 0.5, 1.0] {
            for seed in 0..5 {
                let inst = gen_uniform(200, 200, 3, seed).unwrap();
                let g = FactorGraph::build(&inst);
                let mask = Mask::all_free(&g);
                let mut state = SpState::new(&g, m);
                let run = sp_run(&g, &mask, &mut state, &SpConfig { seed, ..Default::default() });
                assert!(run.converged, "m={m} seed={seed}");
                assert!(mean_warning_mass(&g, &mask, &state) < 1e-3, "m={m} seed={seed}");
            }
        }
    }

    #[test]
    fn warning_propagation_on_forced_chain() {
        // (x0), (not x0 or x1): forced warnings all the way down.
        let inst = CnfInstance::new(
            2,
            2,
            vec![
                Clause::new(vec![Literal::new(0, -1)]),
                Clause::new(vec![Literal::new(0, 1), Literal::new(1, -1)]),
            ],
        );
        let g = FactorGraph::build(&inst);
        let mask = Mask::all_free(&g);
        let mut state = SpState::new(&g, 0.5);
        let run = sp_run(&g, &mask, &mut state, &SpConfig::default());
        assert!(run.converged);
        let p0 = local_field_survey(&g, &mask, &state, 0).unwrap();
        let p1 = local_field_survey(&g, &mask, &state, 1).unwrap();
        assert!((p0.mass_pos() - 1.0).abs() < 1e-9);
        assert!((p1.mass_pos() - 1.0).abs() < 1e-9);
        // phi(m) = 0 for all m: a single frozen cluster.
        for m in [0.0, 0.3, 1.0] {
            state.m = m;
            let run = sp_run(&g, &mask, &mut state, &SpConfig::default());
            assert!(run.converged);
            assert!(phi_m(&g, &mask, &state).unwrap().abs() < 1e-9, "m={m}");
        }
    }

    #[test]
    fn phi_empty_instance_is_m_log2() {
        let inst = CnfInstance::new(6, 3, vec![]);
        let g = FactorGraph::build(&inst);
        let mask = Mask::all_free(&g);
        for m in [0.25, 0.5, 1.0] {
            let state = SpState::new(&g, m);
            let phi = phi_m(&g, &mask, &state).unwrap();
            assert!((phi - m * LN_2).abs() < 1e-12);
        }
        // At m=1 this is log 2, the plain free entropy of free spins.
        let state = SpState::new(&g, 1.0);
        assert!((phi_m(&g, &mask, &state).unwrap() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn phi_paramagnetic_equals_m_times_rs_value() {
        let inst = gen_uniform(50, 120, 3, 21).unwrap();
        let g = FactorGraph::build(&inst);
        let mask = Mask::all_free(&g);
        let omega_rs = LN_2 + (120.0 / 50.0) * (1.0 - 0.125f64).ln();
        for m in [0.2, 0.6, 1.0] {
            let state = SpState::new(&g, m);
            let phi = phi_m(&g, &mask, &state).unwrap();
            assert!((phi - m * omega_rs).abs() < 1e-10, "m={m}: {phi} vs {}", m * omega_rs);
        }
    }

    #[test]
    fn phi_at_m1_counts_solutions_on_single_clause() {
        let inst = CnfInstance::new(
            3,
            3,
            vec![Clause::new(vec![
                Literal::new(0, 1),
                Literal::new(1, -1),
                Literal::new(2, 1),
            ])],
        );
        let g = FactorGraph::build(&inst);
        let mask = Mask::all_free(&g);
        let mut state = SpState::new(&g, 1.0);
        let run = sp_run(&g, &mask, &mut state, &SpConfig::default());
        assert!(run.converged);
        let phi = phi_m(&g, &mask, &state).unwrap();
        assert!((phi - (7.0f64).ln() / 3.0).abs() < 1e-6);
    }

    #[test]
    fn m_scan_trivial_instance() {
        let inst = gen_uniform(60, 60, 3, 2).unwrap();
        let g = FactorGraph::build(&inst);
        let mask = Mask::all_free(&g);
        let scan = m_scan(&g, &mask, &[1.0, 0.5, 0.0], &SpConfig::default());
        assert_eq!(scan.rows.len(), 3);
        assert!(scan.rows.iter().all(|r| r.converged));
        assert!(scan.rows.iter().all(|r| r.warning_mass < 1e-3));
    }

    #[test]
    fn biases_arithmetic() {
        let p = HSurvey::from_weights(-1, vec![0.25, 0.25, 0.5]);
        let b = biases(&p);
        assert_eq!((b.w_plus, b.w_minus, b.w_zero), (0.5, 0.25, 0.25));
        let b = biases(&HSurvey::delta(0));
        assert_eq!((b.w_plus, b.w_minus, b.w_zero), (0.0, 0.0, 1.0));
        let b = biases(&HSurvey::delta(2));
        assert_eq!((b.w_plus, b.w_minus, b.w_zero), (1.0, 0.0, 0.0));
    }

    #[test]
    fn sid_solves_easy_instances() {
        for seed in 0..5 {
            let inst = gen_uniform(100, 200, 3, seed).unwrap();
            let cfg = SidConfig { seed, ..Default::default() };
            let out = sid(&inst, &cfg);
            let s = out.solution.expect("easy instance");
            assert_eq!(energy(&inst, &s), 0);
        }
    }

    #[test]
    fn sid_solves_clustered_3sat() {
        // alpha = 4.2 at small N: should already exercise the decimation path.
        let mut solved = 0;
        for seed in 0..5 {
            let inst = gen_uniform(500, 2100, 3, seed).unwrap();
            let cfg = SidConfig { seed, ..Default::default() };
            if sid(&inst, &cfg).solution.is_some() {
                solved += 1;
            }
        }
        assert!(solved >= 3, "solved {solved}/5");
    }
}
