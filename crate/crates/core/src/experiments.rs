//! Desk-scale experiments: Monte Carlo singularity, s_n tails, compressible
//! nets, the structure dichotomy and anticoncentration sweeps.

use std::fmt::Write as _;

use num_traits::ToPrimitive;
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::bareiss::det_i64;
use crate::distribution::DiscreteDist;
use crate::error::{Error, Result};
use crate::exact::{bonferroni_dominant_axes, dominant_hit, Axes, BonferroniBounds};
use crate::levy::{levy, levy_mc, sum_dist, Coeffs};
use crate::modp::{random_prime_31, random_prime_62, Montgomery, Montgomery32};
use crate::par::map_indexed;
use crate::rational::{lcm_of_denominators, to_f64, Rational};
use crate::sampler::{bounded, sample_rect, AtomSampler, RngSeed};
use crate::smoothing::{AdmissibleParams, InversionConfig, Mode, DEFAULT_WIDTH};
use crate::spectral::{kernel_vector, norm, smallest_singular, Matrix};
use crate::sphere::{cons_membership, elem_classify, ConsParams};

/// Flat parameter set shared by every experiment; unknown fields are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dist: String,
    pub n: usize,
    pub samples: u64,
    pub t_grid: Vec<f64>,
    pub epsilon: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub delta: f64,
    pub rho: f64,
    pub delta_prime: f64,
    pub theta: f64,
    pub trials: usize,
    pub r0: f64,
    pub tau0: f64,
    pub levy_samples: u64,
    pub net: NetKind,
    pub net_size: usize,
    pub t: f64,
    pub sweep_mode: SweepMode,
    pub union_check: bool,
    pub inject_identity: bool,
    /// Window radius for `levy`.
    pub r: f64,
    /// Smoothing: block scale N, constants K1 < K2 < K3, block mode, L grid.
    pub big_n: u64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub mode: Mode,
    pub l_grid: Vec<f64>,
    pub width: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dist: "ber:1/2".into(),
            n: 10,
            samples: 100_000,
            t_grid: vec![0.25, 0.5, 1.0],
            epsilon: 0.1,
            l: 4.0,
            delta: 0.1,
            rho: 1.0,
            delta_prime: 0.1,
            theta: 1e-3,
            trials: 100,
            r0: 1e-2,
            tau0: 5e-2,
            levy_samples: 1_000_000,
            net: NetKind::Elementary,
            net_size: 64,
            t: 0.0,
            sweep_mode: SweepMode::NonElementary,
            union_check: false,
            inject_identity: true,
            r: 0.0,
            big_n: 16,
            k1: 2.0,
            k2: 4.0,
            k3: 8.0,
            mode: Mode::Q,
            l_grid: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0],
            width: DEFAULT_WIDTH,
            seed: 0,
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn distribution(&self) -> Result<DiscreteDist> {
        DiscreteDist::parse(&self.dist)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.n == 0 {
            return bad("n must be positive");
        }
        if self.samples == 0 || self.trials == 0 || self.levy_samples == 0 {
            return bad("samples, trials and levy_samples must be positive");
        }
        if self.t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0))
            || self.t_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("t-grid must be nonnegative and strictly increasing");
        }
        let positive = [
            self.epsilon,
            self.l,
            self.delta,
            self.rho,
            self.delta_prime,
            self.theta,
            self.r0,
            self.tau0,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("epsilon, L, delta, rho, delta_prime, theta, r0 and tau0 must be positive");
        }
        if self.delta >= 1.0 || !(self.t >= 0.0) || !(self.r >= 0.0) {
            return bad("delta must be below 1; t and r nonnegative");
        }
        if self.l_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("L grid must be strictly increasing");
        }
        Ok(())
    }

    pub fn cons(&self) -> ConsParams {
        ConsParams {
            delta: self.delta,
            rho: self.rho,
        }
    }

    /// Inversion-experiment settings: m is p⃗n rounded to integers summing to n
    /// (largest remainders first), atoms and lattice denominator from `dist`.
    pub fn inversion(&self) -> Result<InversionConfig> {
        let d = self.distribution()?;
        let n = self.n;
        let probs = d.probs_f64();
        let mut m: Vec<usize> = probs
            .iter()
            .map(|p| (p * n as f64).floor() as usize)
            .collect();
        let mut order: Vec<usize> = (0..m.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = probs[a] * n as f64 - m[a] as f64;
            let fb = probs[b] * n as f64 - m[b] as f64;
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let short = n - m.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            m[i] += 1;
        }
        let den = lcm_of_denominators(d.atoms())
            .to_u64()
            .ok_or_else(|| Error::Overflow("atom denominators exceed 64 bits".into()))?;
        Ok(InversionConfig {
            params: AdmissibleParams {
                big_n: self.big_n,
                n,
                k1: self.k1,
                k2: self.k2,
                k3: self.k3,
                delta: self.delta,
                mode: self.mode,
            },
            atoms: d.atoms_f64(),
            atom_denominator: den,
            m,
            trials: self.trials,
            l_grid: self.l_grid.clone(),
            seed: self.seed,
            workers: self.workers,
            width: self.width,
        })
    }
}

/// Exact singularity test. A zero row or column settles singularity and a
/// nonzero determinant modulo a 31-bit prime settles nonsingularity; otherwise the determinant must vanish modulo two
/// 62-bit primes and is then confirmed exactly.
struct SingularityTester {
    n: usize,
    atoms: Vec<i64>,
    zero: Option<u8>,
    screen: Montgomery32,
    screen_table: Vec<u32>,
    screen_buf: Vec<u32>,
    primes: [Montgomery; 2],
    tables: [Vec<u64>; 2],
    buf: Vec<u64>,
}

impl SingularityTester {
    fn new(atoms: &[i64], n: usize, seed: RngSeed) -> Self {
        let mut rng = seed.rng();
        let p1 = random_prime_62(&mut rng);
        let p2 = loop {
            let p = random_prime_62(&mut rng);
            if p != p1 {
                break p;
            }
        };
        let primes = [Montgomery::new(p1), Montgomery::new(p2)];
        let tables = [0, 1].map(|i| atoms.iter().map(|&a| primes[i].to_mont(a)).collect());
        let screen = Montgomery32::new(random_prime_31(&mut rng));
        SingularityTester {
            n,
            atoms: atoms.to_vec(),
            zero: atoms.iter().position(|&a| a == 0).map(|i| i as u8),
            screen,
            screen_table: atoms.iter().map(|&a| screen.to_mont(a)).collect(),
            screen_buf: vec![0; n * n],
            primes,
            tables,
            buf: vec![0; n * n],
        }
    }

    /// Exact singularity of the matrix of atom indices `m`.
    fn is_singular(&mut self, m: &[u8]) -> bool {
        if self.has_zero_line(m) {
            return true;
        }
        for (b, &e) in self.screen_buf.iter_mut().zip(m) {
            *b = self.screen_table[e as usize];
        }
        if !self.screen.det_is_zero(&mut self.screen_buf, self.n) {
            return false;
        }
        for i in 0..2 {
            for (b, &e) in self.buf.iter_mut().zip(m) {
                *b = self.tables[i][e as usize];
            }
            if !self.primes[i].det_is_zero(&mut self.buf, self.n) {
                return false;
            }
        }
        // det vanishes modulo p1 p2 > 2^122; it is zero when |det| is below that.
        if self.hadamard_log2(m) < 121.0 {
            return true;
        }
        let rows: Vec<Vec<i64>> = m
            .chunks(self.n)
            .map(|r| r.iter().map(|&e| self.atoms[e as usize]).collect())
            .collect();
        det_i64(&rows) == 0.into()
    }

    /// A zero row or column, which makes the determinant 0 outright.
    fn has_zero_line(&self, m: &[u8]) -> bool {
        let Some(z) = self.zero else { return false };
        let n = self.n;
        if m.chunks_exact(n).any(|r| r.iter().all(|&e| e == z)) {
            return true;
        }
        (0..n).any(|j| (0..n).all(|i| m[i * n + j] == z))
    }

    /// log2 of the smaller of the row and column Hadamard bounds.
    fn hadamard_log2(&self, m: &[u8]) -> f64 {
        let n = self.n;
        let sq = |e: u8| (self.atoms[e as usize] as f64).powi(2);
        let side = |at: &dyn Fn(usize, usize) -> u8| -> f64 {
            (0..n)
                .map(|i| {
                    let s: f64 = (0..n).map(|j| sq(at(i, j))).sum();
                    if s > 0.0 {
                        0.5 * s.log2()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .sum()
        };
        side(&|i, j| m[i * n + j]).min(side(&|i, j| m[j * n + i]))
    }
}

const CHUNK: u64 = 1 << 16;

fn chunked<T: Send, F>(samples: u64, workers: usize, f: F) -> Vec<T>
where
    F: Fn(usize, u64) -> T + Sync + Send,
{
    let chunks = samples.div_ceil(CHUNK) as usize;
    map_indexed(chunks, workers, |c| {
        f(c, CHUNK.min(samples - c as u64 * CHUNK))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McSingularity {
    pub dist: String,
    pub n: usize,
    pub samples: u64,
    pub singular: u64,
    pub estimate: f64,
    pub stderr: f64,
    pub conjecture: f64,
    pub ratio_to_conjecture: f64,
    /// Classification is exact, so no sample can be a false negative.
    pub false_negative_bound: f64,
    pub union_hits: Option<u64>,
    /// Union hits that were not singular; always 0 for a correct engine.
    pub union_violations: Option<u64>,
}

/// Fraction of singular matrices among `samples` draws.
pub fn mc_singularity(cfg: &ExperimentConfig) -> Result<McSingularity> {
    cfg.validate()?;
    let d = cfg.distribution()?;
    let (_, atoms) = d.integer_atoms_i64()?;
    let n = cfg.n;
    let sampler = AtomSampler::new(&d);
    let zero = d.index_of(&Rational::from_integer(0.into()));
    let neg: Vec<Option<u8>> = d
        .atoms()
        .iter()
        .map(|a| d.index_of(&-a).map(|i| i as u8))
        .collect();
    let root = RngSeed::new(cfg.seed);
    let parts = chunked(cfg.samples, cfg.workers, |c, len| {
        let seed = root.child(c as u64);
        let mut tester = SingularityTester::new(&atoms, n, seed.child(u64::MAX));
        let mut rng = seed.rng();
        let (mut sing, mut hits, mut viol) = (0u64, 0u64, 0u64);
        let mut m = vec![0u8; n * n];
        for _ in 0..len {
            sampler.fill(&mut rng, &mut m);
            let s = tester.is_singular(&m);
            sing += s as u64;
            if cfg.union_check && dominant_hit(&m, n, zero, &neg) {
                hits += 1;
                viol += !s as u64;
            }
        }
        (sing, hits, viol)
    });
    let singular: u64 = parts.iter().map(|p| p.0).sum();
    let t = cfg.samples as f64;
    let estimate = singular as f64 / t;
    let conjecture = to_f64(&d.predicted(n as u32).conjecture);
    Ok(McSingularity {
        dist: d.to_string(),
        n,
        samples: cfg.samples,
        singular,
        estimate,
        stderr: (estimate * (1.0 - estimate) / t).sqrt(),
        conjecture,
        ratio_to_conjecture: estimate / conjecture,
        false_negative_bound: 0.0,
        union_hits: cfg.union_check.then(|| parts.iter().map(|p| p.1).sum()),
        union_violations: cfg.union_check.then(|| parts.iter().map(|p| p.2).sum()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailRow {
    pub t: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailCurve {
    pub n: usize,
    pub samples: u64,
    pub rows: Vec<TailRow>,
    /// Least-squares slope C in p_hat(t) ≈ C t + conjecture.
    pub c_fit: f64,
    pub conjecture: f64,
}

impl TailCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,p_hat,stderr,predicted\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.t, r.p_hat, r.stderr, r.predicted);
        }
        s
    }
}

/// Empirical P[s_n <= t/√n] on one shared sample set, with a t = 0 row
/// (exact singularity) prepended when the grid lacks it.
pub fn tail_curve(cfg: &ExperimentConfig) -> Result<TailCurve> {
    cfg.validate()?;
    let d = cfg.distribution()?;
    let (_, atoms) = d.integer_atoms_i64()?;
    let atoms_f = d.atoms_f64();
    let n = cfg.n;
    let mut grid = cfg.t_grid.clone();
    if grid.first() != Some(&0.0) {
        grid.insert(0, 0.0);
    }
    let sampler = AtomSampler::new(&d);
    let root = RngSeed::new(cfg.seed);
    let sq = (n as f64).sqrt();
    let parts = chunked(cfg.samples, cfg.workers, |c, len| {
        let seed = root.child(c as u64);
        let mut tester = SingularityTester::new(&atoms, n, seed.child(u64::MAX));
        let mut rng = seed.rng();
        let mut counts = vec![0u64; grid.len()];
        for _ in 0..len {
            let m = sample_rect(&sampler, n, n, &mut rng);
            let s = if tester.is_singular(&m.entries) {
                0.0
            } else {
                smallest_singular(&m.real_matrix(&atoms_f)).expect("square") * sq
            };
            counts[0] += (s == 0.0) as u64;
            for (k, &t) in grid.iter().enumerate().skip(1) {
                counts[k] += (s <= t) as u64;
            }
        }
        counts
    });
    let total = cfg.samples as f64;
    let conjecture = to_f64(&d.predicted(n as u32).conjecture);
    let p: Vec<f64> = (0..grid.len())
        .map(|k| parts.iter().map(|c| c[k]).sum::<u64>() as f64 / total)
        .collect();
    let (num, den) = grid
        .iter()
        .zip(&p)
        .filter(|(t, _)| **t > 0.0)
        .fold((0.0, 0.0), |(a, b), (t, v)| {
            (a + t * (v - conjecture), b + t * t)
        });
    let c_fit = if den > 0.0 { num / den } else { 0.0 };
    let rows = grid
        .iter()
        .zip(&p)
        .map(|(&t, &v)| TailRow {
            t,
            p_hat: v,
            stderr: (v * (1.0 - v) / total).sqrt(),
            predicted: c_fit * t + conjecture,
        })
        .collect();
    Ok(TailCurve {
        n,
        samples: cfg.samples,
        rows,
        c_fit,
        conjecture,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    /// Only e_1.
    E1Only,
    /// ±e_i and (e_i ± e_j)/√2.
    Elementary,
    /// Elementary centres plus random almost-constant profiles.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompressibleRecord {
    pub n: usize,
    pub t: f64,
    pub net: NetKind,
    pub net_size: usize,
    pub samples: u64,
    pub frequency: f64,
    pub stderr: f64,
    pub p_e1_minus: f64,
    /// η with frequency = (t + P[E_{e1-e2}]) e^(-η n), when the frequency is positive.
    pub eta_fit: Option<f64>,
    /// Column-event Bonferroni band, reported at t = 0.
    pub bonferroni: Option<(f64, f64)>,
}

/// Almost-constant unit vectors: all ones except floor(δn) coordinates drawn
/// from a quantized window, kept only when inside Cons(δ, ρ).
fn almost_constant_profiles(n: usize, count: usize, p: ConsParams, seed: RngSeed) -> Vec<Vec<f64>> {
    let mut rng = seed.rng();
    let free = ((p.delta * n as f64).floor() as usize).max(1).min(n);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 100 * count.max(1) {
        attempts += 1;
        let mut v = vec![1.0; n];
        for _ in 0..free {
            let i = bounded(&mut rng, n as u64) as usize;
            v[i] = bounded(&mut rng, 9) as f64 * 0.5 - 2.0;
        }
        let nv = norm(&v);
        if nv == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        if matches!(cons_membership(&v, p), Ok(Some(_))) {
            out.push(v);
        }
    }
    out
}

/// Frequency of inf over the net of ‖Mx‖_2 <= t.
pub fn compressible_trial(cfg: &ExperimentConfig) -> Result<CompressibleRecord> {
    cfg.validate()?;
    let d = cfg.distribution()?;
    let atoms = d.atoms_f64();
    let n = cfg.n;
    let root = RngSeed::new(cfg.seed);
    let profiles = match cfg.net {
        NetKind::Full => {
            almost_constant_profiles(n, cfg.net_size, cfg.cons(), root.child(u64::MAX))
        }
        _ => Vec::new(),
    };
    let pairs = match cfg.net {
        NetKind::E1Only => 0,
        _ => n * (n - 1),
    };
    let net_size = match cfg.net {
        NetKind::E1Only => 1,
        _ => n + pairs + profiles.len(),
    };
    if net_size > 1 << 20 {
        return Err(Error::BudgetExceeded {
            needed: net_size as u128,
            budget: 1 << 20,
        });
    }
    let sampler = AtomSampler::new(&d);
    let t = cfg.t;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let parts = chunked(cfg.samples, cfg.workers, |c, len| {
        let mut rng = root.child(c as u64).rng();
        let mut hits = 0u64;
        let mut col = vec![0.0; n * n];
        for _ in 0..len {
            let m = sample_rect(&sampler, n, n, &mut rng);
            // column-major copy
            for i in 0..n {
                for j in 0..n {
                    col[j * n + i] = atoms[m.get(i, j) as usize];
                }
            }
            let colv = |j: usize| &col[j * n..(j + 1) * n];
            let mut hit = norm(colv(0)) <= t;
            if cfg.net != NetKind::E1Only {
                hit = hit || (1..n).any(|j| norm(colv(j)) <= t);
                'pairs: for i in 0..n {
                    for j in i + 1..n {
                        let (a, b) = (colv(i), colv(j));
                        let minus: f64 = a
                            .iter()
                            .zip(b)
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
                            .sqrt()
                            * h;
                        let plus: f64 = a
                            .iter()
                            .zip(b)
                            .map(|(x, y)| (x + y) * (x + y))
                            .sum::<f64>()
                            .sqrt()
                            * h;
                        if hit || minus <= t || plus <= t {
                            hit = true;
                            break 'pairs;
                        }
                    }
                }
                if !hit {
                    let mm = m.real_matrix(&atoms);
                    hit = profiles.iter().any(|v| norm(&mm.mul_vec(v)) <= t);
                }
            }
            hits += hit as u64;
        }
        hits
    });
    let total = cfg.samples as f64;
    let freq = parts.iter().sum::<u64>() as f64 / total;
    let p_e1_minus = to_f64(&d.predicted(n as u32).p_e1_minus);
    let eta_fit = (freq > 0.0).then(|| -(freq / (t + p_e1_minus)).ln() / n as f64);
    let bonferroni = if t == 0.0 && cfg.net != NetKind::E1Only {
        bonferroni_dominant_axes(&d, n, 2, Axes::Columns)
            .ok()
            .map(|b: BonferroniBounds| (b.lower, b.upper))
    } else {
        None
    };
    Ok(CompressibleRecord {
        n,
        t,
        net: cfg.net,
        net_size,
        samples: cfg.samples,
        frequency: freq,
        stderr: (freq * (1.0 - freq) / total).sqrt(),
        p_e1_minus,
        eta_fit,
        bonferroni,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureClass {
    Cons,
    SmallThreshold,
    Neither,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DichotomyRow {
    pub trial: usize,
    pub injected: bool,
    pub cons: bool,
    pub levy_estimate: Option<f64>,
    pub class: StructureClass,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DichotomyRecord {
    pub n: usize,
    pub trials: usize,
    pub r0: f64,
    pub tau0: f64,
    pub frac_cons: f64,
    pub frac_small_threshold: f64,
    pub frac_neither: f64,
    pub rows: Vec<DichotomyRow>,
}

impl DichotomyRecord {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("trial,injected,cons,levy_estimate,class\n");
        for r in &self.rows {
            let est = r.levy_estimate.map(|v| v.to_string()).unwrap_or_default();
            let class = match r.class {
                StructureClass::Cons => "cons",
                StructureClass::SmallThreshold => "small_threshold",
                StructureClass::Neither => "neither",
            };
            let _ = writeln!(s, "{},{},{},{},{}", r.trial, r.injected, r.cons, est, class);
        }
        s
    }
}

fn classify(
    v: &[f64],
    cfg: &ExperimentConfig,
    d: &DiscreteDist,
    seed: RngSeed,
) -> Result<(bool, Option<f64>, StructureClass)> {
    if cons_membership(v, cfg.cons())?.is_some() {
        return Ok((true, None, StructureClass::Cons));
    }
    let est = levy_mc(d, v, cfg.r0, cfg.levy_samples, seed, 1).estimate;
    let class = if est <= cfg.tau0 {
        StructureClass::SmallThreshold
    } else {
        StructureClass::Neither
    };
    Ok((false, Some(est), class))
}

/// Kernel direction of a random (n-1)×n matrix, classified as almost constant,
/// small concentration at radius r0, or neither. The fractions are over the
/// random trials; the injected [I | 0] row, when enabled, is reported separately.
pub fn structure_dichotomy(cfg: &ExperimentConfig) -> Result<DichotomyRecord> {
    cfg.validate()?;
    if cfg.n < 2 {
        return Err(Error::InvalidInput("n must be at least 2".into()));
    }
    let d = cfg.distribution()?;
    let atoms = d.atoms_f64();
    let n = cfg.n;
    let root = RngSeed::new(cfg.seed);
    let sampler = AtomSampler::new(&d);
    let results = map_indexed(cfg.trials, cfg.workers, |trial| -> Result<DichotomyRow> {
        let seed = root.child(trial as u64);
        let m = sample_rect(&sampler, n - 1, n, &mut seed.rng());
        let v = kernel_vector(&m.real_matrix(&atoms))?;
        let (cons, est, class) = classify(&v, cfg, &d, seed.child(1))?;
        Ok(DichotomyRow {
            trial,
            injected: false,
            cons,
            levy_estimate: est,
            class,
        })
    });
    let mut rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let t = cfg.trials as f64;
    let frac = |c: StructureClass| rows.iter().filter(|r| r.class == c).count() as f64 / t;
    let (fc, fs, fnn) = (
        frac(StructureClass::Cons),
        frac(StructureClass::SmallThreshold),
        frac(StructureClass::Neither),
    );
    if cfg.inject_identity {
        let a = Matrix::from_fn(n - 1, n, |i, j| if i == j { 1.0 } else { 0.0 });
        let v = kernel_vector(&a)?;
        let (cons, est, class) = classify(&v, cfg, &d, root.child(u64::MAX))?;
        rows.push(DichotomyRow {
            trial: cfg.trials,
            injected: true,
            cons,
            levy_estimate: est,
            class,
        });
    }
    Ok(DichotomyRecord {
        n,
        trials: cfg.trials,
        r0: cfg.r0,
        tau0: cfg.tau0,
        frac_cons: fc,
        frac_small_threshold: fs,
        frac_neither: fnn,
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// Non-elementary directions against ‖p‖_2^2.
    NonElementary,
    /// Arbitrary directions against ‖p‖_∞.
    MaxAtom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Gaussian,
    Perturbed,
    Injected,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub kind: SampleKind,
    pub levy: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRecord {
    pub mode: SweepMode,
    pub n: usize,
    pub theta: f64,
    pub accepted: usize,
    pub rejected: u64,
    /// Minimum over sampled (non-injected) vectors.
    pub min_margin: f64,
    pub argmin: Vec<f64>,
    /// Sampled vectors with margin <= 0.
    pub nonpositive: usize,
    pub injected_margins: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepRecord {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,kind,levy,margin\n");
        for r in &self.rows {
            let kind = match r.kind {
                SampleKind::Gaussian => "gaussian",
                SampleKind::Perturbed => "perturbed",
                SampleKind::Injected => "injected",
            };
            let _ = writeln!(s, "{},{},{},{}", r.index, kind, r.levy, r.margin);
        }
        s
    }
}

fn gaussian<R: RngCore>(rng: &mut R) -> f64 {
    // Box-Muller on two open-interval uniforms.
    let u = |rng: &mut R| ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let (a, b) = (u(rng), u(rng));
    (-2.0 * a.ln()).sqrt() * (std::f64::consts::TAU * b).cos()
}

fn unit(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let nv = norm(&v);
    (nv > 0.0).then(|| {
        v.iter_mut().for_each(|x| *x /= nv);
        v
    })
}

/// Exact L(Σ b_i x_i, θ) and the margin against `reference`, computed in rationals.
fn exact_margin(
    d: &DiscreteDist,
    x: &[f64],
    theta: f64,
    reference: &Rational,
) -> Result<(f64, f64)> {
    let s = sum_dist(d, &Coeffs::Float(x.to_vec()), 1 << 24)?;
    let l = levy(&s, theta);
    Ok((to_f64(&l), to_f64(&(reference - &l))))
}

/// Samples unit vectors, computes the exact concentration at radius θ and the
/// margin against ‖p‖_2^2 (NonElementary, elementary directions rejected) or
/// ‖p‖_∞ (MaxAtom). Injected vectors: (e1-e2)/√2 resp. e_1 and e_n.
pub fn anticoncentration_sweep(cfg: &ExperimentConfig) -> Result<SweepRecord> {
    cfg.validate()?;
    let d = cfg.distribution()?;
    let n = cfg.n;
    if n < 2 {
        return Err(Error::InvalidInput("n must be at least 2".into()));
    }
    let stats = d.stats();
    let reference = match cfg.sweep_mode {
        SweepMode::NonElementary => stats.p2_sq.clone(),
        SweepMode::MaxAtom => stats.p_inf.clone(),
    };
    let mut rng = RngSeed::new(cfg.seed).rng();
    let mut vectors: Vec<(SampleKind, Vec<f64>)> = Vec::with_capacity(cfg.samples as usize);
    let mut rejected = 0u64;
    let max_attempts = 1000 * cfg.samples.max(1);
    let mut attempts = 0u64;
    while (vectors.len() as u64) < cfg.samples {
        attempts += 1;
        if attempts > max_attempts {
            let acc = vectors.len() as f64 / attempts as f64;
            return Err(Error::RejectionExhausted {
                attempts,
                acceptance: acc,
            });
        }
        let perturbed = cfg.sweep_mode == SweepMode::NonElementary && rng.next_u64() >> 63 == 1;
        let v: Vec<f64> = if perturbed {
            // Elementary centre plus noise of norm up to 3δ'.
            let i = bounded(&mut rng, n as u64) as usize;
            let j = (i + 1 + bounded(&mut rng, n as u64 - 1) as usize) % n;
            let h = std::f64::consts::FRAC_1_SQRT_2;
            let mut c = vec![0.0; n];
            match bounded(&mut rng, 3) {
                0 => c[i] = 1.0,
                1 => (c[i], c[j]) = (h, -h),
                _ => (c[i], c[j]) = (h, h),
            }
            let noise: Vec<f64> = (0..n).map(|_| gaussian(&mut rng)).collect();
            let scale = 3.0 * cfg.delta_prime * (rng.next_u64() >> 11) as f64
                / (1u64 << 53) as f64
                / norm(&noise);
            c.iter().zip(&noise).map(|(a, b)| a + scale * b).collect()
        } else {
            (0..n).map(|_| gaussian(&mut rng)).collect()
        };
        let Some(v) = unit(v) else { continue };
        if cfg.sweep_mode == SweepMode::NonElementary
            && elem_classify(&v, cfg.delta_prime)?.is_some()
        {
            rejected += 1;
            continue;
        }
        vectors.push((
            if perturbed {
                SampleKind::Perturbed
            } else {
                SampleKind::Gaussian
            },
            v,
        ));
    }
    let margins = map_indexed(vectors.len(), cfg.workers, |i| {
        exact_margin(&d, &vectors[i].1, cfg.theta, &reference)
    });
    let mut rows = Vec::with_capacity(vectors.len() + 2);
    let (mut min_margin, mut arg) = (f64::INFINITY, 0usize);
    let mut nonpositive = 0;
    for (i, m) in margins.into_iter().enumerate() {
        let (l, margin) = m?;
        if margin < min_margin {
            min_margin = margin;
            arg = i;
        }
        nonpositive += (margin <= 0.0) as usize;
        rows.push(SweepRow {
            index: i,
            kind: vectors[i].0,
            levy: l,
            margin,
        });
    }
    let mut injected = Vec::new();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let inj: Vec<Vec<f64>> = match cfg.sweep_mode {
        SweepMode::NonElementary => {
            let mut v = vec![0.0; n];
            (v[0], v[1]) = (h, -h);
            vec![v]
        }
        SweepMode::MaxAtom => {
            let mut a = vec![0.0; n];
            a[0] = 1.0;
            let mut b = vec![0.0; n];
            b[n - 1] = 1.0;
            vec![a, b]
        }
    };
    for v in inj {
        let (l, margin) = exact_margin(&d, &v, cfg.theta, &reference)?;
        rows.push(SweepRow {
            index: rows.len(),
            kind: SampleKind::Injected,
            levy: l,
            margin,
        });
        injected.push(margin);
    }
    Ok(SweepRecord {
        mode: cfg.sweep_mode,
        n,
        theta: cfg.theta,
        accepted: vectors.len(),
        rejected,
        min_margin,
        argmin: vectors.get(arg).map(|v| v.1.clone()).unwrap_or_default(),
        nonpositive,
        injected_margins: injected,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dist: &str, n: usize, samples: u64) -> ExperimentConfig {
        ExperimentConfig {
            dist: dist.into(),
            n,
            samples,
            ..Default::default()
        }
    }

    #[test]
    fn singularity_small_cases() {
        let r = mc_singularity(&cfg("ber:1/2", 2, 200_000)).unwrap();
        assert!(
            (r.estimate - 10.0 / 16.0).abs() < 3.0 * r.stderr + 1e-12,
            "{r:?}"
        );
        let r = mc_singularity(&cfg("rademacher", 1, 10_000)).unwrap();
        assert_eq!(r.singular, 0);
    }

    #[test]
    fn singularity_matches_exact_oracle_per_sample() {
        let d = DiscreteDist::parse("uniform:-2,0,3").unwrap();
        let (_, atoms) = d.integer_atoms_i64().unwrap();
        let sampler = AtomSampler::new(&d);
        let mut t = SingularityTester::new(&atoms, 4, RngSeed::new(9));
        let mut rng = RngSeed::new(2).rng();
        let mut seen = 0;
        for _ in 0..3000 {
            let m = sample_rect(&sampler, 4, 4, &mut rng);
            let rows = m.integer_rows(&atoms);
            let s = det_i64(&rows) == 0.into();
            seen += s as u32;
            assert_eq!(t.is_singular(&m.entries), s);
        }
        assert!(seen > 10);
    }

    #[test]
    fn union_is_inside_singular() {
        let mut c = cfg("ber:1/2", 6, 50_000);
        c.union_check = true;
        let r = mc_singularity(&c).unwrap();
        assert_eq!(r.union_violations, Some(0));
        assert!(r.union_hits.unwrap() > 0);
    }

    #[test]
    fn tail_rows_are_monotone() {
        let mut c = cfg("ber:1/2", 6, 20_000);
        c.t_grid = vec![0.1, 0.5, 1.0, 2.0];
        let tc = tail_curve(&c).unwrap();
        assert_eq!(tc.rows[0].t, 0.0);
        assert!(tc.rows.windows(2).all(|w| w[0].p_hat <= w[1].p_hat));
        let mc = mc_singularity(&c).unwrap();
        assert!((tc.rows[0].p_hat - mc.estimate).abs() <= 3.0 * (mc.stderr + tc.rows[0].stderr));
        assert!(tc.to_csv().starts_with("t,p_hat,stderr,predicted\n"));
    }

    #[test]
    fn compressible_examples() {
        let mut c = cfg("ber:1/2", 10, 100_000);
        c.net = NetKind::E1Only;
        let r = compressible_trial(&c).unwrap();
        let p = 1.0 / 1024.0;
        assert!((r.frequency - p).abs() <= 3.0 * (p * (1.0 - p) / 1e5f64).sqrt());
        c.net = NetKind::Full;
        c.t = 100.0;
        c.samples = 1000;
        assert_eq!(compressible_trial(&c).unwrap().frequency, 1.0);
    }

    #[test]
    fn dichotomy_fractions_and_injection() {
        let mut c = cfg("ber:1/2", 20, 1);
        c.trials = 10;
        c.levy_samples = 20_000;
        let r = structure_dichotomy(&c).unwrap();
        assert!((r.frac_cons + r.frac_small_threshold + r.frac_neither - 1.0).abs() < 1e-12);
        let inj = r.rows.last().unwrap();
        assert!(inj.injected && inj.class == StructureClass::Cons);
    }

    #[test]
    fn sweep_boundaries() {
        let mut c = cfg("ber:3/10", 8, 50);
        let r = anticoncentration_sweep(&c).unwrap();
        assert_eq!(r.injected_margins, vec![0.0]);
        assert_eq!(r.nonpositive, 0);
        assert!(r.min_margin > 0.0);
        c.sweep_mode = SweepMode::MaxAtom;
        let r = anticoncentration_sweep(&c).unwrap();
        assert_eq!(r.injected_margins, vec![0.0, 0.0]);
        assert!(r.min_margin > 0.0);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let c = ExperimentConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&s).unwrap(), c);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"n": 7, "L": 2.5}"#).unwrap();
        assert_eq!((partial.n, partial.l), (7, 2.5));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
        let mut bad = c.clone();
        bad.t_grid = vec![1.0, 0.5];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn inversion_counts_round_to_n() {
        let c = ExperimentConfig {
            dist: "ber:3/10".into(),
            n: 16,
            ..Default::default()
        };
        let inv = c.inversion().unwrap();
        assert_eq!(inv.m, vec![11, 5]);
        assert_eq!(inv.atom_denominator, 1);
        let c = ExperimentConfig {
            dist: "uniform:-1/2,1/3".into(),
            n: 5,
            ..Default::default()
        };
        let inv = c.inversion().unwrap();
        assert_eq!(inv.m.iter().sum::<usize>(), 5);
        assert_eq!(inv.atom_denominator, 6);
    }
}
