//! Sherrington–Kirkpatrick sandbox: Gaussian couplings, Metropolis
//! annealing, pure-state sampling, overlap matrices, average-linkage
//! clustering, and an ultrametricity score.
//!
//! Hamiltonian H(σ) = −(1/√N) Σ_{i≠j} g_ij σ_i σ_j over ordered pairs
//! (off-diagonal terms double-counted). T_c = 1 in these units; that is a
//! convention of the normalization, not a measured quantity.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::instance::SpinConfig;
use crate::par;

#[derive(Debug, Clone)]
pub struct SkSystem {
    pub n: usize,
    /// Row-major symmetric n×n couplings, zero diagonal.
    couplings: Vec<f64>,
    pub seed: u64,
}

impl SkSystem {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let x: f64 = rng.sample(StandardNormal);
                g[i * n + j] = x;
                g[j * n + i] = x;
            }
        }
        SkSystem { n, couplings: g, seed }
    }

    #[inline]
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.couplings[i * self.n + j]
    }
}

pub fn sk_energy(sys: &SkSystem, s: &SpinConfig) -> f64 {
    assert_eq!(s.spins.len(), sys.n);
    let mut e = 0.0;
    for i in 0..sys.n {
        let si = f64::from(s.spins[i]);
        for j in 0..sys.n {
            e += sys.coupling(i, j) * si * f64::from(s.spins[j]);
        }
    }
    -e / (sys.n as f64).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct AnnealSchedule {
    pub t_start: f64,
    pub t_end: f64,
    /// Full sweeps (n single-spin-flip attempts each).
    pub sweeps: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule { t_start: 1.2, t_end: 0.1, sweeps: 400 }
    }
}

/// Local fields b_i = (2/√N) Σ_j g_ij σ_j, so ΔH of flipping i is 2σ_i b_i.
/// Cached and updated incrementally per accepted flip.
struct LocalFields {
    b: Vec<f64>,
    scale: f64,
}

impl LocalFields {
    fn new(sys: &SkSystem, s: &SpinConfig) -> Self {
        let scale = 2.0 / (sys.n as f64).sqrt();
        let b = (0..sys.n)
            .map(|i| {
                scale
                    * (0..sys.n)
                        .map(|j| sys.coupling(i, j) * f64::from(s.spins[j]))
                        .sum::<f64>()
            })
            .collect();
        LocalFields { b, scale }
    }

    fn flip(&mut self, sys: &SkSystem, s: &mut SpinConfig, i: usize) {
        s.spins[i] = -s.spins[i];
        let d = self.scale * 2.0 * f64::from(s.spins[i]);
        for j in 0..sys.n {
            self.b[j] += d * sys.coupling(i, j);
        }
    }
}

fn metropolis(
    sys: &SkSystem,
    s: &mut SpinConfig,
    fields: &mut LocalFields,
    temp: f64,
    rng: &mut ChaCha8Rng,
) {
    for _ in 0..sys.n {
        let i = rng.random_range(0..sys.n);
        let de = 2.0 * f64::from(s.spins[i]) * fields.b[i];
        if de <= 0.0 || rng.random::<f64>() < (-de / temp).exp() {
            fields.flip(sys, s, i);
        }
    }
}

/// Geometric cooling from t_start to t_end; returns the final configuration.
pub fn anneal(sys: &SkSystem, schedule: AnnealSchedule, seed: u64) -> SpinConfig {
    assert!(schedule.t_start > schedule.t_end && schedule.t_end > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = SpinConfig::uniform(sys.n, &mut rng);
    anneal_from(sys, schedule, &mut s, &mut rng);
    s
}

fn anneal_from(sys: &SkSystem, schedule: AnnealSchedule, s: &mut SpinConfig, rng: &mut ChaCha8Rng) {
    let mut fields = LocalFields::new(sys, s);
    let ratio = (schedule.t_end / schedule.t_start).powf(1.0 / schedule.sweeps.max(1) as f64);
    let mut t = schedule.t_start;
    for _ in 0..schedule.sweeps {
        metropolis(sys, s, &mut fields, t, rng);
        t *= ratio;
    }
}

#[derive(Debug, Clone)]
pub struct SampleConfig {
    pub schedule: AnnealSchedule,
    pub s_count: usize,
    pub repeats: usize,
    /// Sweeps per in-basin resample (short re-anneal from the stored
    /// low-temperature configuration).
    pub resample_sweeps: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            schedule: AnnealSchedule::default(),
            s_count: 100,
            repeats: 100,
            resample_sweeps: 20,
            seed: 0,
        }
    }
}

/// Per-state mean-spin vectors (⟨σ_i⟩_ψ)_i: one deep anneal per state, then
/// `repeats` short re-anneals from the stored low-T configuration, averaged.
pub fn sample_pure_states(sys: &SkSystem, cfg: &SampleConfig) -> Vec<Vec<f64>> {
    let ids: Vec<usize> = (0..cfg.s_count).collect();
    par::map(&ids, |&state| {
        let coarse = cfg.seed.wrapping_add(state as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let anchor = anneal(sys, cfg.schedule, coarse);
        let mut mean = vec![0.0f64; sys.n];
        let short = AnnealSchedule {
            t_start: cfg.schedule.t_end * 2.0,
            t_end: cfg.schedule.t_end,
            sweeps: cfg.resample_sweeps,
        };
        for r in 0..cfg.repeats.max(1) {
            let mut s = anchor.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(coarse ^ (r as u64) << 17 ^ 0x5bd1_e995);
            anneal_from(sys, short, &mut s, &mut rng);
            for (m, &sp) in mean.iter_mut().zip(&s.spins) {
                *m += f64::from(sp);
            }
        }
        for m in &mut mean {
            *m /= cfg.repeats.max(1) as f64;
        }
        mean
    })
}

#[derive(Debug, Clone)]
pub struct OverlapMatrix {
    pub s: usize,
    /// Row-major s×s; diagonal is q_ψψ.
    pub q: Vec<f64>,
}

impl OverlapMatrix {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.q[a * self.s + b]
    }

    /// q_EA estimated as the mean self-overlap.
    pub fn q_ea(&self) -> f64 {
        (0..self.s).map(|a| self.get(a, a)).sum::<f64>() / self.s as f64
    }

    /// d(φ,ψ) = 2(q_EA − q_φψ), clamped at 0.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        (2.0 * (self.q_ea() - self.get(a, b))).max(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for a in 0..self.s {
            let row: Vec<String> = (0..self.s).map(|b| format!("{:.6}", self.get(a, b))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn overlap_matrix(states: &[Vec<f64>]) -> OverlapMatrix {
    let s = states.len();
    assert!(s > 0);
    let n = states[0].len();
    assert!(states.iter().all(|v| v.len() == n));
    let mut q = vec![0.0; s * s];
    for a in 0..s {
        for b in a..s {
            let v = states[a].iter().zip(&states[b]).map(|(x, y)| x * y).sum::<f64>() / n as f64;
            q[a * s + b] = v;
            q[b * s + a] = v;
        }
    }
    OverlapMatrix { s, q }
}

/// One agglomerative merge: clusters `left` and `right` joined at `height`.
#[derive(Debug, Clone, Copy)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone)]
pub struct Dendrogram {
    /// Merges in order; cluster ids: 0..s are leaves, s+t is the t-th merge.
    pub merges: Vec<Merge>,
    pub n_leaves: usize,
}

impl Dendrogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("left,right,height,size\n");
        for m in &self.merges {
            out.push_str(&format!("{},{},{:.6},{}\n", m.left, m.right, m.height, m.size));
        }
        out
    }
}

/// Average-linkage agglomerative clustering on a distance matrix.
fn average_linkage(dist: &[Vec<f64>]) -> Dendrogram {
    let s = dist.len();
    // Active clusters: (id, member-count); d[x][y] holds current linkage.
    let mut active: Vec<(usize, usize)> = (0..s).map(|i| (i, 1)).collect();
    let mut d: Vec<Vec<f64>> = dist.to_vec();
    let mut idx: Vec<usize> = (0..s).collect(); // active position -> row of d
    let mut merges = Vec::with_capacity(s.saturating_sub(1));
    let mut next_row = s;
    // Grow d lazily: rows for merged clusters appended at the end.
    while active.len() > 1 {
        let (mut ba, mut bb, mut best) = (0, 1, f64::INFINITY);
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let v = d[idx[a]][idx[b]];
                if v < best {
                    best = v;
                    ba = a;
                    bb = b;
                }
            }
        }
        let (id_a, na) = active[ba];
        let (id_b, nb) = active[bb];
        let (ra, rb) = (idx[ba], idx[bb]);
        // New row: size-weighted average of the two merged rows.
        let mut row = vec![0.0; next_row + 1];
        for (pos, &(_, _)) in active.iter().enumerate() {
            let r = idx[pos];
            row[r] = (na as f64 * d[ra][r] + nb as f64 * d[rb][r]) / (na + nb) as f64;
        }
        for (r, &v) in row.iter().enumerate().take(next_row) {
            d[r].push(v);
        }
        d.push(row);
        merges.push(Merge { left: id_a, right: id_b, height: best, size: na + nb });
        // Replace a, remove b (order: remove the later index first).
        active[ba] = (s + merges.len() - 1, na + nb);
        idx[ba] = next_row;
        active.remove(bb);
        idx.remove(bb);
        next_row += 1;
    }
    Dendrogram { merges, n_leaves: s }
}

/// Fraction of triples whose two largest pairwise distances agree to
/// within eps_rel (relatively). 1.0 is perfectly ultrametric.
pub fn ultrametricity_score(dist: &[Vec<f64>], eps_rel: f64) -> f64 {
    let s = dist.len();
    if s < 3 {
        return 1.0;
    }
    let mut ok = 0usize;
    let mut total = 0usize;
    for a in 0..s {
        for b in a + 1..s {
            for c in b + 1..s {
                let mut t = [dist[a][b], dist[a][c], dist[b][c]];
                t.sort_by(|x, y| x.partial_cmp(y).unwrap());
                total += 1;
                if t[2] <= 0.0 || (t[2] - t[1]) / t[2] <= eps_rel {
                    ok += 1;
                }
            }
        }
    }
    ok as f64 / total as f64
}

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub dendrogram: Dendrogram,
    pub ultrametricity_score: f64,
}

pub fn cluster_and_score(mat: &OverlapMatrix) -> ClusterOutcome {
    cluster_and_score_eps(mat, 0.1)
}

pub fn cluster_and_score_eps(mat: &OverlapMatrix, eps_rel: f64) -> ClusterOutcome {
    let dist: Vec<Vec<f64>> =
        (0..mat.s).map(|a| (0..mat.s).map(|b| mat.distance(a, b)).collect()).collect();
    ClusterOutcome {
        dendrogram: average_linkage(&dist),
        ultrametricity_score: ultrametricity_score(&dist, eps_rel),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_two_spins() {
        let mut sys = SkSystem::new(2, 0);
        sys.couplings = vec![0.0, 1.0, 1.0, 0.0];
        let s = SpinConfig { spins: vec![1, 1] };
        let e = sk_energy(&sys, &s);
        assert!((e + 2.0 / 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn energy_global_flip_symmetry() {
        let sys = SkSystem::new(30, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s = SpinConfig::uniform(sys.n, &mut rng);
            let flipped = SpinConfig { spins: s.spins.iter().map(|&x| -x).collect() };
            assert!((sk_energy(&sys, &s) - sk_energy(&sys, &flipped)).abs() < 1e-9);
        }
    }

    #[test]
    fn local_fields_track_energy() {
        let sys = SkSystem::new(25, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = SpinConfig::uniform(sys.n, &mut rng);
        let mut fields = LocalFields::new(&sys, &s);
        for _ in 0..50 {
            let i = rng.random_range(0..sys.n);
            let e0 = sk_energy(&sys, &s);
            let de = 2.0 * f64::from(s.spins[i]) * fields.b[i];
            fields.flip(&sys, &mut s, i);
            assert!((sk_energy(&sys, &s) - e0 - de).abs() < 1e-9);
        }
    }

    #[test]
    fn high_temperature_is_paramagnetic() {
        let sys = SkSystem::new(300, 11);
        let sched = AnnealSchedule { t_start: 60.0, t_end: 50.0, sweeps: 30 };
        let s = anneal(&sys, sched, 5);
        let m = s.spins.iter().map(|&x| f64::from(x)).sum::<f64>() / sys.n as f64;
        assert!(m.abs() < 0.2, "m = {m}");
    }

    #[test]
    fn low_temperature_is_locally_stable() {
        // After a long anneal to T ~ 0, no single flip should lower energy
        // in most runs.
        let mut stable = 0;
        for seed in 0..10u64 {
            let sys = SkSystem::new(200, 100 + seed);
            let sched = AnnealSchedule { t_start: 1.2, t_end: 0.01, sweeps: 800 };
            let s = anneal(&sys, sched, seed);
            let fields = LocalFields::new(&sys, &s);
            let ok = (0..sys.n).all(|i| f64::from(s.spins[i]) * fields.b[i] > -1e-12);
            stable += usize::from(ok);
        }
        assert!(stable >= 9, "stable in {stable}/10 runs");
    }

    #[test]
    fn anneal_is_deterministic() {
        let sys = SkSystem::new(50, 4);
        let a = anneal(&sys, AnnealSchedule::default(), 9);
        let b = anneal(&sys, AnnealSchedule::default(), 9);
        assert_eq!(a.spins, b.spins);
    }

    #[test]
    fn overlap_extremes() {
        let plus = vec![1.0; 10];
        let minus = vec![-1.0; 10];
        let m = overlap_matrix(&[plus, minus]);
        assert!((m.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((m.get(0, 1) + 1.0).abs() < 1e-12);
        assert!((m.get(0, 1) - m.get(1, 0)).abs() < 1e-12);
    }

    #[test]
    fn random_states_have_small_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let states: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..800).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
            .collect();
        let m = overlap_matrix(&states);
        for a in 0..20 {
            for b in a + 1..20 {
                assert!(m.get(a, b).abs() <= 0.15, "q = {}", m.get(a, b));
            }
        }
    }

    #[test]
    fn repeats_reduce_self_overlap_variance() {
        // Same basin anchor, independent fine seeds: the q_psi_psi estimate
        // concentrates as repeats grow.
        let sys = SkSystem::new(60, 21);
        let anchor = anneal(&sys, AnnealSchedule { t_start: 1.2, t_end: 0.3, sweeps: 120 }, 9);
        let short = AnnealSchedule { t_start: 0.6, t_end: 0.3, sweeps: 15 };
        let q_est = |repeats: usize, run: u64| -> f64 {
            let mut mean = vec![0.0f64; sys.n];
            for r in 0..repeats {
                let mut s = anchor.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(run * 1000 + r as u64);
                anneal_from(&sys, short, &mut s, &mut rng);
                for (m, &sp) in mean.iter_mut().zip(&s.spins) {
                    *m += f64::from(sp);
                }
            }
            mean.iter().map(|m| (m / repeats as f64).powi(2)).sum::<f64>() / sys.n as f64
        };
        let var_of = |repeats: usize| -> f64 {
            let qs: Vec<f64> = (0..8).map(|run| q_est(repeats, run)).collect();
            let mu = qs.iter().sum::<f64>() / qs.len() as f64;
            qs.iter().map(|q| (q - mu).powi(2)).sum::<f64>() / qs.len() as f64
        };
        assert!(var_of(40) < var_of(2) + 1e-12);
    }

    #[test]
    fn equilateral_triples_score_one() {
        let d = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
        assert!((ultrametricity_score(&d, 0.1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_isosceles_triple_fails() {
        // Two largest distances 1.5 and 1.0 differ by more than 10%.
        let d = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.5], vec![1.0, 1.5, 0.0]];
        assert!(ultrametricity_score(&d, 0.1) < 1e-12);
    }

    #[test]
    fn tree_metric_scores_one() {
        // Distances from an explicit binary tree: leaves {0,1} join at
        // height 1, {2,3} at height 2, all at height 5. The cophenetic
        // distances form an ultrametric.
        let h = |a: usize, b: usize| -> f64 {
            if a == b {
                0.0
            } else if (a < 2) == (b < 2) {
                if a < 2 {
                    1.0
                } else {
                    2.0
                }
            } else {
                5.0
            }
        };
        let d: Vec<Vec<f64>> = (0..4).map(|a| (0..4).map(|b| h(a, b)).collect()).collect();
        assert!((ultrametricity_score(&d, 0.1) - 1.0).abs() < 1e-12);
        let dend = average_linkage(&d);
        assert_eq!(dend.merges.len(), 3);
        assert!((dend.merges[0].height - 1.0).abs() < 1e-12);
        assert!((dend.merges[1].height - 2.0).abs() < 1e-12);
        assert!((dend.merges[2].height - 5.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_dominates_sampled_overlaps() {
        let sys = SkSystem::new(80, 33);
        let cfg = SampleConfig {
            schedule: AnnealSchedule { t_start: 1.2, t_end: 0.12, sweeps: 200 },
            s_count: 10,
            repeats: 20,
            resample_sweeps: 15,
            seed: 1,
        };
        let m = overlap_matrix(&sample_pure_states(&sys, &cfg));
        let mut off = 0.0;
        let mut cnt = 0;
        for a in 0..m.s {
            for b in 0..m.s {
                if a != b {
                    off += m.get(a, b).abs();
                    cnt += 1;
                }
            }
        }
        assert!(m.q_ea() >= off / cnt as f64, "q_EA {} vs mean |q| {}", m.q_ea(), off / cnt as f64);
    }
}
