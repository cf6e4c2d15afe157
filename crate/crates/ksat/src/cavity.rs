//! Ensemble (disorder-averaged) cavity equations by population dynamics:
//! the RS free-entropy density, the zero-temperature 1RSB replicated free
//! entropy Φ(m) with its complexity Σ = Φ − mΦ′, overlaps, and the
//! location of the dynamical / condensation / SAT-UNSAT transitions.
//!
//! Degrees are Poisson(kα) (the residual degree of a Poisson variable is
//! again Poisson). RS fields are real-valued (rescaled β·h at β = ∞);
//! 1RSB populations hold integer-supported h-surveys updated with the
//! sp-module reweighting rules.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::bp::Beta;
use crate::sp::{clause_survey_from_inputs, var_survey_from_inputs, HSurvey};

const LN_2: f64 = std::f64::consts::LN_2;
/// Support cap for population h-surveys; Poisson tails beyond this carry
/// negligible mass and are folded onto the boundary.
const H_CAP: i32 = 40;

#[derive(Debug, Clone)]
pub struct EnsembleParams {
    pub k: usize,
    pub alpha: f64,
    /// Population size.
    pub pool: usize,
    /// Equilibration sweeps (pool-size updates each).
    pub sweeps: usize,
    /// Monte Carlo samples for the free-entropy estimates.
    pub samples: usize,
    pub seed: u64,
    pub beta: Beta,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        EnsembleParams {
            k: 3,
            alpha: 2.0,
            pool: 10_000,
            sweeps: 200,
            samples: 200_000,
            seed: 0,
            beta: Beta::Infinity,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RsOutcome {
    /// Free-entropy density ω (entropy density of solutions at β=∞).
    pub omega: f64,
    /// Intra-state overlap q_RS = E tanh² h.
    pub q_rs: f64,
    /// E tanh h (zero by ± symmetry; a Monte Carlo sanity statistic).
    pub magnetization: f64,
    pub pool: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// RS clause update: the bias sent by a clause fed with k−1 cavity fields.
/// Fields are rescaled (β·h); at β=∞ this is u = J/2 · ln(1 − Π σ(2hJ)).
fn rs_clause_bias(fields: &[f64], j_signs: &[i8], j_out: i8, beta: Beta) -> f64 {
    let mut pi = 1.0;
    for (&h, &j) in fields.iter().zip(j_signs) {
        pi *= sigmoid(2.0 * h * f64::from(j));
    }
    let j = f64::from(j_out);
    match beta {
        Beta::Finite(b) => {
            let c = -(-b).exp_m1();
            j / 2.0 * (-c * pi).ln_1p()
        }
        Beta::Infinity => j / 2.0 * (-pi).ln_1p(),
    }
}

fn draw_rs_bias(pool: &[f64], k: usize, beta: Beta, rng: &mut ChaCha8Rng) -> f64 {
    let fields: Vec<f64> = (0..k - 1).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    let j_signs: Vec<i8> =
        (0..k - 1).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    let j_out: i8 = if rng.random::<bool>() { 1 } else { -1 };
    rs_clause_bias(&fields, &j_signs, j_out, beta)
}

fn ln_cosh(x: f64) -> f64 {
    let ax = x.abs();
    ax + (-2.0 * ax).exp().ln_1p() - LN_2
}

/// RS population dynamics for the cavity-field distribution, followed by
/// Monte Carlo estimation of ω = E ln z_i + α E ln z_a − kα E ln z_ia.
pub fn pd_rs(params: &EnsembleParams) -> RsOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let degree = Poisson::new((params.k as f64 * params.alpha).max(1e-12)).unwrap();
    let mut pool: Vec<f64> = (0..params.pool).map(|_| rng.random_range(-1.0..=1.0)).collect();

    for _ in 0..params.sweeps {
        for _ in 0..params.pool {
            let d = degree.sample(&mut rng) as usize;
            let h: f64 = (0..d).map(|_| draw_rs_bias(&pool, params.k, params.beta, &mut rng)).sum();
            let slot = rng.random_range(0..params.pool);
            pool[slot] = h;
        }
    }

    // Shift expectations. Var: degree-many biases; clause: k fields;
    // edge: independent field and bias.
    let mut s_var = 0.0;
    let mut s_clause = 0.0;
    let mut s_edge = 0.0;
    for _ in 0..params.samples {
        let d = degree.sample(&mut rng) as usize;
        let biases: Vec<f64> =
            (0..d).map(|_| draw_rs_bias(&pool, params.k, params.beta, &mut rng)).collect();
        let s: f64 = biases.iter().sum();
        s_var += s.abs() + (-2.0 * s.abs()).exp().ln_1p()
            - biases.iter().map(|&u| ln_cosh(u)).sum::<f64>();

        let mut pi = 1.0;
        for _ in 0..params.k {
            let h = pool[rng.random_range(0..pool.len())];
            let j: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
            pi *= sigmoid(2.0 * h * j);
        }
        let c = match params.beta {
            Beta::Finite(b) => -(-b).exp_m1(),
            Beta::Infinity => 1.0,
        };
        s_clause += (-c * pi).ln_1p();

        let h = pool[rng.random_range(0..pool.len())];
        let u = draw_rs_bias(&pool, params.k, params.beta, &mut rng);
        s_edge += (1.0 + h.tanh() * u.tanh()).ln();
    }
    let n = params.samples as f64;
    let omega = s_var / n + params.alpha * (s_clause / n)
        - params.k as f64 * params.alpha * (s_edge / n);

    let q_rs = pool.iter().map(|h| h.tanh().powi(2)).sum::<f64>() / params.pool as f64;
    let magnetization = pool.iter().map(|h| h.tanh()).sum::<f64>() / params.pool as f64;
    RsOutcome { omega, q_rs, magnetization, pool }
}

/// How the 1RSB population is seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SurveyInit {
    /// Random hard fields δ(±1): probes the nontrivial solution.
    #[default]
    Hard,
    /// All δ(0): stays on the trivial (RS) fixed point.
    Trivial,
}

#[derive(Debug, Clone)]
pub struct Pd1rsbOutcome {
    pub phi: f64,
    /// Complexity Σ(m) = Φ − m Φ′.
    pub sigma: f64,
    /// Internal free entropy ω(m) = Φ′(m).
    pub omega_internal: f64,
    /// Inter-state overlap q₀ = E (∫ tanh h dP)².
    pub q0: f64,
    /// Intra-state overlap q₁ = E ∫ tanh² h dP.
    pub q1: f64,
    /// Population collapsed to all-δ(0): only the RS solution survives.
    pub trivial: bool,
    /// Curvature-scale error estimate for the finite-difference Φ′.
    pub fd_error: f64,
    /// Mean nonzero-field mass, the order parameter for triviality.
    pub warning_mass: f64,
}

fn clamp_support(p: HSurvey, cap: i32) -> HSurvey {
    let mut lo = 0.0;
    let mut hi = 0.0;
    let mut w = vec![0.0; (2 * cap + 1) as usize];
    for (h, q) in p.support() {
        if h < -cap {
            lo += q;
        } else if h > cap {
            hi += q;
        } else {
            w[(h + cap) as usize] += q;
        }
    }
    w[0] += lo;
    w[(2 * cap) as usize] += hi;
    HSurvey::from_weights(-cap, w)
}

struct SurveyPool {
    pool: Vec<HSurvey>,
    k: usize,
    degree: Poisson<f64>,
}

impl SurveyPool {
    fn init(params: &EnsembleParams, init: SurveyInit, rng: &mut ChaCha8Rng) -> Self {
        let pool = (0..params.pool)
            .map(|_| match init {
                SurveyInit::Hard => HSurvey::delta(if rng.random::<bool>() { 1 } else { -1 }),
                SurveyInit::Trivial => HSurvey::delta(0),
            })
            .collect();
        SurveyPool {
            pool,
            k: params.k,
            degree: Poisson::new((params.k as f64 * params.alpha).max(1e-12)).unwrap(),
        }
    }

    /// One u-survey from k−1 random pool members: (warning weight, direction).
    fn draw_usurvey(&self, m: f64, rng: &mut ChaCha8Rng) -> (f64, i8) {
        let inputs: Vec<(&HSurvey, i8)> = (0..self.k - 1)
            .map(|_| {
                (
                    &self.pool[rng.random_range(0..self.pool.len())],
                    if rng.random::<bool>() { 1i8 } else { -1 },
                )
            })
            .collect();
        let dir: i8 = if rng.random::<bool>() { 1 } else { -1 };
        (clause_survey_from_inputs(&inputs, dir, m).warning_weight(dir), dir)
    }

    /// One population-dynamics step; contradictory draws are re-drawn.
    fn step(&mut self, m: f64, rng: &mut ChaCha8Rng) {
        for _ in 0..16 {
            let d = self.degree.sample(rng) as usize;
            let inputs: Vec<(f64, i8)> = (0..d).map(|_| self.draw_usurvey(m, rng)).collect();
            if let Ok(p) = var_survey_from_inputs(&inputs, m) {
                let slot = rng.random_range(0..self.pool.len());
                self.pool[slot] = clamp_support(p, H_CAP);
                return;
            }
        }
        // Every redraw contradictory: leave the pool unchanged.
    }

    fn sweep(&mut self, m: f64, n: usize, rng: &mut ChaCha8Rng) {
        for _ in 0..n {
            self.step(m, rng);
        }
    }

    fn warning_mass(&self) -> f64 {
        self.pool.iter().map(|p| 1.0 - p.mass_zero()).sum::<f64>() / self.pool.len() as f64
    }

    /// Monte Carlo estimate of Φ(m) from the three shift expectations.
    fn measure_phi(&self, params: &EnsembleParams, m: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let two_m = (m * LN_2).exp();
        let mut s_var = 0.0;
        let mut s_clause = 0.0;
        let mut s_edge = 0.0;
        let mut n_var = 0usize;
        let mut n_clause = 0usize;
        let mut n_edge = 0usize;
        for _ in 0..params.samples {
            // Variable shift: Ẑ_i over degree-many u-surveys.
            let d = self.degree.sample(&mut rng) as usize;
            let (mut g_plus, mut g_minus, mut t_plus, mut t_minus) = (1.0, 1.0, 1.0, 1.0);
            for _ in 0..d {
                let (q, dir) = self.draw_usurvey(m, &mut rng);
                if dir == 1 {
                    g_plus *= 1.0 - q;
                    t_plus *= 1.0 - q + two_m * q;
                } else {
                    g_minus *= 1.0 - q;
                    t_minus *= 1.0 - q + two_m * q;
                }
            }
            let z_i = two_m * g_plus * g_minus + (t_plus - g_plus) * g_minus
                + (t_minus - g_minus) * g_plus;
            if z_i > 0.0 {
                s_var += z_i.ln();
                n_var += 1;
            }

            // Clause shift: Ẑ_a over k random members.
            let mut c = vec![1.0f64];
            let mut all_constrained = 1.0;
            for _ in 0..params.k {
                let p = &self.pool[rng.random_range(0..self.pool.len())];
                let j: i8 = if rng.random::<bool>() { 1 } else { -1 };
                let p_f = p.mass_toward(j);
                let p_0 = p.mass_zero();
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
            if z_a > 0.0 {
                s_clause += z_a.ln();
                n_clause += 1;
            }

            // Edge shift: independent survey and u-survey.
            let p = &self.pool[rng.random_range(0..self.pool.len())];
            let (q, dir) = self.draw_usurvey(m, &mut rng);
            let z_ia = (1.0 - q) + q * (p.mass_toward(dir) * two_m + p.mass_zero());
            if z_ia > 0.0 {
                s_edge += z_ia.ln();
                n_edge += 1;
            }
        }
        s_var / n_var as f64 + params.alpha * (s_clause / n_clause as f64)
            - params.k as f64 * params.alpha * (s_edge / n_edge as f64)
    }
}

/// Zero-temperature 1RSB population dynamics at Parisi parameter m, with
/// Φ′(m) from a symmetric finite difference (common random numbers) over
/// short re-equilibrations of the converged pool.
pub fn pd_1rsb(params: &EnsembleParams, m: f64) -> Pd1rsbOutcome {
    pd_1rsb_seeded(params, m, SurveyInit::Hard, None).0
}

/// Like [`pd_1rsb`], optionally warm-starting from an existing pool; also
/// returns the equilibrated pool for reuse.
pub fn pd_1rsb_seeded(
    params: &EnsembleParams,
    m: f64,
    init: SurveyInit,
    warm: Option<Vec<HSurvey>>,
) -> (Pd1rsbOutcome, Vec<HSurvey>) {
    assert!((0.0..=1.0).contains(&m));
    assert!(matches!(params.beta, Beta::Infinity), "1RSB populations are zero-temperature only");
    let delta_m = 0.02f64;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut pop = SurveyPool::init(params, init, &mut rng);
    let warmed = warm.is_some();
    if let Some(pool) = warm {
        assert_eq!(pool.len(), params.pool);
        pop.pool = pool;
    }
    let sweeps = if warmed { params.sweeps / 2 } else { params.sweeps };
    pop.sweep(m, sweeps * params.pool, &mut rng);

    let warning_mass = pop.warning_mass();
    let trivial = warning_mass < 1e-4;
    let measure_seed = params.seed ^ 0xd1b5_4a32_d192_ed03;
    let phi = pop.measure_phi(params, m, measure_seed);

    // Symmetric finite difference with common random numbers: the same
    // re-equilibration and measurement seeds on both sides.
    let fd_sweeps = (params.sweeps / 4).max(10) * params.pool;
    let side = |dm: f64| -> f64 {
        let mm = (m + dm).clamp(0.0, 1.0);
        let mut p = SurveyPool {
            pool: pop.pool.clone(),
            k: params.k,
            degree: Poisson::new((params.k as f64 * params.alpha).max(1e-12)).unwrap(),
        };
        let mut r = ChaCha8Rng::seed_from_u64(params.seed ^ 0x94d0_49bb_1331_11eb);
        p.sweep(mm, fd_sweeps, &mut r);
        p.measure_phi(params, mm, measure_seed)
    };
    let (lo, hi) = ((m - delta_m).max(0.0), (m + delta_m).min(1.0));
    let (phi_minus, phi_plus) = (side(lo - m), side(hi - m));
    let omega_internal = (phi_plus - phi_minus) / (hi - lo);
    let sigma = phi - m * omega_internal;
    let fd_error = (phi_plus - 2.0 * phi + phi_minus).abs() / (hi - lo);

    let q1 = pop.pool.iter().map(|p| p.mean_tanh_sq()).sum::<f64>() / params.pool as f64;
    let q0 = pop.pool.iter().map(|p| p.mean_tanh().powi(2)).sum::<f64>() / params.pool as f64;
    let outcome =
        Pd1rsbOutcome { phi, sigma, omega_internal, q0, q1, trivial, fd_error, warning_mass };
    (outcome, pop.pool)
}

#[derive(Debug, Clone)]
pub struct ComplexityRow {
    pub m: f64,
    pub phi: f64,
    pub omega: f64,
    pub sigma: f64,
    pub fd_error: f64,
    pub trivial: bool,
}

/// Parametric (ω(m), Σ(m)) curve over a descending m grid, warm-starting
/// each point from the previous pool.
pub fn complexity_curve(params: &EnsembleParams, m_grid: &[f64]) -> Vec<ComplexityRow> {
    debug_assert!(m_grid.windows(2).all(|w| w[0] >= w[1]), "m grid must be descending");
    let mut rows = Vec::with_capacity(m_grid.len());
    let mut pool: Option<Vec<HSurvey>> = None;
    for &m in m_grid {
        let (out, p) = pd_1rsb_seeded(params, m, SurveyInit::Hard, pool.take());
        rows.push(ComplexityRow {
            m,
            phi: out.phi,
            omega: out.omega_internal,
            sigma: out.sigma,
            fd_error: out.fd_error,
            trivial: out.trivial,
        });
        pool = Some(p);
    }
    rows
}

pub fn complexity_csv(rows: &[ComplexityRow]) -> String {
    let mut s = String::from("m,phi,omega,sigma,fd_error,trivial\n");
    for r in rows {
        s.push_str(&format!(
            "{:.4},{:.8},{:.8},{:.8},{:.3e},{}\n",
            r.m, r.phi, r.omega, r.sigma, r.fd_error, r.trivial
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TransitionConfig {
    /// Ascending grid used to bracket each criterion before bisection.
    pub alpha_grid: Vec<f64>,
    pub params: EnsembleParams,
    pub bisection_steps: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TransitionEstimate {
    pub alpha: f64,
    /// Half the final bracket width.
    pub uncertainty: f64,
}

#[derive(Debug, Clone)]
pub struct Transitions {
    /// Onset of a nontrivial m=1 solution with Σ(1) > 0.
    pub alpha_d: Option<TransitionEstimate>,
    /// Σ(m=1) = 0 crossing.
    pub alpha_c: Option<TransitionEstimate>,
    /// Σ(m=0) = Φ(0) = 0 crossing.
    pub alpha_s: Option<TransitionEstimate>,
}

fn bisect(
    mut lo: f64,
    mut hi: f64,
    steps: usize,
    mut above: impl FnMut(f64) -> bool,
) -> TransitionEstimate {
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        if above(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    TransitionEstimate { alpha: 0.5 * (lo + hi), uncertainty: 0.5 * (hi - lo) }
}

/// Locates α_d, α_c, α_s by bracketing each indicator on the grid and
/// bisecting. Criteria not bracketed by the grid are reported as None.
pub fn locate_transitions(cfg: &TransitionConfig) -> Transitions {
    let eval = |alpha: f64, m: f64| -> Pd1rsbOutcome {
        let mut p = cfg.params.clone();
        p.alpha = alpha;
        pd_1rsb(&p, m)
    };
    // Grid pass at m=1 (α_d, α_c) and m=0 (α_s).
    let at_m1: Vec<Pd1rsbOutcome> = cfg.alpha_grid.iter().map(|&a| eval(a, 1.0)).collect();
    let at_m0: Vec<Pd1rsbOutcome> = cfg.alpha_grid.iter().map(|&a| eval(a, 0.0)).collect();

    let d_ind = |o: &Pd1rsbOutcome| !o.trivial && o.sigma > 0.0;
    let c_ind = |o: &Pd1rsbOutcome| !o.trivial && o.sigma < 0.0;
    let s_ind = |o: &Pd1rsbOutcome| !o.trivial && o.phi < 0.0;

    let bracket = |vals: &[Pd1rsbOutcome], ind: &dyn Fn(&Pd1rsbOutcome) -> bool| {
        (1..vals.len())
            .find(|&i| !ind(&vals[i - 1]) && ind(&vals[i]))
            .map(|i| (cfg.alpha_grid[i - 1], cfg.alpha_grid[i]))
    };

    let alpha_d = bracket(&at_m1, &d_ind)
        .map(|(lo, hi)| bisect(lo, hi, cfg.bisection_steps, |a| d_ind(&eval(a, 1.0))));
    let alpha_c = bracket(&at_m1, &c_ind)
        .map(|(lo, hi)| bisect(lo, hi, cfg.bisection_steps, |a| c_ind(&eval(a, 1.0))));
    let alpha_s = bracket(&at_m0, &s_ind)
        .map(|(lo, hi)| bisect(lo, hi, cfg.bisection_steps, |a| s_ind(&eval(a, 0.0))));
    Transitions { alpha_d, alpha_c, alpha_s }
}
