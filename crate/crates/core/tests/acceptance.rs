//! The twelve acceptance criteria. Each prints one PASS/FAIL line; the test
//! fails if any criterion does. Set ACCEPTANCE_ONLY=3,11 to run a subset.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use rand_core::RngCore;
use singlab::exact::{enumerate_singularity_with, EnumOptions, DEFAULT_BUDGET};
use singlab::experiments::{
    anticoncentration_sweep, mc_singularity, structure_dichotomy, tail_curve, ExperimentConfig,
    SampleKind, SweepMode,
};
use singlab::levy::{
    levy, levy_conditional, sum_dist, Coeffs, LevyValue, McFallback, SliceConstraint,
};
use singlab::rational::to_f64;
use singlab::sampler::{bounded, RngSeed};
use singlab::smoothing::{
    base_grid_for, build_recursion, extract_step_record, generate_admissible, inversion_experiment,
    steps_per_unit, AdmissibleParams, Mode, RecursionOptions, DEFAULT_WIDTH,
};
use singlab::spectral::{kernel_vector, norm, smallest_singular, smallest_singular_int, Matrix};
use singlab::{DiscreteDist, Rational};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn dist(s: &str) -> DiscreteDist {
    DiscreteDist::parse(s).unwrap()
}

fn c1_exact_oracle() -> Outcome {
    let d = dist("ber:1/2");
    let expected = [q(1, 2), q(10, 16), q(338, 512), q(42976, 65536)];
    let mut secs = 0.0;
    for n in 1..=4 {
        let start = Instant::now();
        let got = enumerate_singularity_with(
            &d,
            n,
            EnumOptions {
                budget: DEFAULT_BUDGET,
                workers: 1,
            },
        )
        .map_err(|e| e.to_string())?
        .probability();
        secs = start.elapsed().as_secs_f64();
        let oracle = brute_force_singularity(&d, n);
        ensure!(got == oracle, "n={n}: engine {got} vs oracle {oracle}");
        ensure!(
            oracle == expected[n - 1],
            "n={n}: oracle {oracle} vs frozen {}",
            expected[n - 1]
        );
    }
    ensure!(secs < 60.0, "n=4 took {secs:.1}s");
    Ok(format!("n=1..4 match, n=4 in {secs:.2}s"))
}

fn c2_closed_forms() -> Outcome {
    for spec in ["ber:1/2", "ber:1/3", "rademacher"] {
        let d = dist(spec);
        for n in 1..=3usize {
            let p = d.predicted(n as u32);
            let (z, eq, neg) = restricted_events(&d, n);
            ensure!(p.p_e1 == z, "{spec} n={n}: zero column {} vs {z}", p.p_e1);
            if n >= 2 {
                ensure!(
                    p.p_e1_minus == eq,
                    "{spec} n={n}: equal columns {} vs {eq}",
                    p.p_e1_minus
                );
                ensure!(
                    p.p_e1_plus == neg,
                    "{spec} n={n}: opposite columns {} vs {neg}",
                    p.p_e1_plus
                );
            }
        }
    }
    Ok("3 laws, n<=3".into())
}

fn c3_two_term() -> Outcome {
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for n in [20, 25, 30] {
        let cfg = ExperimentConfig {
            dist: "ber:1/5".into(),
            n,
            samples: 10_000_000,
            seed: 2024 + n as u64,
            workers: workers(),
            ..Default::default()
        };
        let r = mc_singularity(&cfg).map_err(|e| e.to_string())?;
        parts.push(format!(
            "n={n} ratio {:.3} rel.se {:.3}",
            r.ratio_to_conjecture,
            r.stderr / r.estimate
        ));
        if !(r.stderr < 0.05 * r.estimate && (0.75..=1.3).contains(&r.ratio_to_conjecture)) {
            failures.push(n);
        }
    }
    ensure!(
        failures.is_empty(),
        "out of tolerance at n={failures:?}: {}",
        parts.join("; ")
    );
    Ok(parts.join("; "))
}

fn c4_union_inside() -> Outcome {
    let cfg = ExperimentConfig {
        dist: "ber:1/2".into(),
        n: 10,
        samples: 1_000_000,
        union_check: true,
        seed: 4,
        workers: workers(),
        ..Default::default()
    };
    let r = mc_singularity(&cfg).map_err(|e| e.to_string())?;
    let (hits, bad) = (
        r.union_hits.unwrap_or(0),
        r.union_violations.unwrap_or(u64::MAX),
    );
    ensure!(bad == 0, "{bad} union hits were not singular");
    ensure!(
        hits > 0 && hits <= r.singular,
        "hits {hits}, singular {}",
        r.singular
    );
    Ok(format!(
        "{hits} union hits, {} singular, 0 violations",
        r.singular
    ))
}

const K2: [&str; 3] = ["ber:1/2", "ber:1/3", "rademacher"];
const K3: [&str; 2] = [
    "uniform:-1,0,2",
    r#"{"atoms":["-1","0","1"],"probs":["1/4","1/2","1/4"]}"#,
];

fn random_law<R: RngCore>(rng: &mut R) -> (DiscreteDist, usize) {
    if rng.next_u32() & 1 == 0 {
        (dist(K2[bounded(rng, 3) as usize]), 2)
    } else {
        (dist(K3[bounded(rng, 2) as usize]), 3)
    }
}

fn random_x<R: RngCore>(rng: &mut R, n: usize, amp: i64) -> Vec<i64> {
    (0..n)
        .map(|_| bounded(rng, (2 * amp + 1) as u64) as i64 - amp)
        .collect()
}

fn random_r<R: RngCore>(rng: &mut R) -> f64 {
    bounded(rng, 41) as f64 / 2.0
}

fn c5_levy_engines() -> Outcome {
    let mut rng = RngSeed::new(5).rng();
    for i in 0..100 {
        let (d, k) = random_law(&mut rng);
        let n = 1 + bounded(&mut rng, if k == 2 { 12 } else { 11 }) as usize;
        let x = random_x(&mut rng, n, 25);
        let r = random_r(&mut rng);
        let got = levy(
            &sum_dist(&d, &Coeffs::integers(&x), 1 << 22).map_err(|e| e.to_string())?,
            r,
        );
        let want = naive_levy(&d, &x, r);
        ensure!(
            got == want,
            "instance {i}: {d} x={x:?} r={r}: {got} vs {want}"
        );
    }
    let mut done = 0;
    while done < 50 {
        let (d, k) = random_law(&mut rng);
        let n = 1 + bounded(&mut rng, if k == 2 { 12 } else { 10 }) as usize;
        let lo: Vec<usize> = (0..k)
            .map(|_| bounded(&mut rng, n as u64 / 2 + 1) as usize)
            .collect();
        let hi: Vec<usize> = lo
            .iter()
            .map(|&l| l + bounded(&mut rng, (n - l) as u64 + 1) as usize)
            .collect();
        if lo.iter().sum::<usize>() > n || hi.iter().sum::<usize>() < n {
            continue;
        }
        let x = random_x(&mut rng, n, 25);
        let r = random_r(&mut rng);
        let c = SliceConstraint {
            n,
            lo: lo.clone(),
            hi: hi.clone(),
        };
        let fb = McFallback {
            samples: 1,
            seed: RngSeed::new(0),
        };
        let got = levy_conditional(&d, &Coeffs::integers(&x), &c, r, 1 << 22, fb)
            .map_err(|e| e.to_string())?;
        let want = naive_levy_conditional(&d, &x, &lo, &hi, r);
        ensure!(
            got == LevyValue::Exact(want.clone()),
            "conditional {done}: {d} x={x:?} bands {lo:?}..{hi:?}: {got:?} vs {want}"
        );
        done += 1;
    }
    Ok("100 unconditional + 50 conditional instances equal".into())
}

fn c6_levy_invariants() -> Outcome {
    let mut rng = RngSeed::new(6).rng();
    let one = Rational::from_integer(1.into());
    for i in 0..1000 {
        let (d, _) = random_law(&mut rng);
        let n = 1 + bounded(&mut rng, 10) as usize;
        let x = random_x(&mut rng, n, 30);
        let s = sum_dist(&d, &Coeffs::integers(&x), 1 << 22).map_err(|e| e.to_string())?;
        let (r1, r2) = (random_r(&mut rng), random_r(&mut rng));
        let (a, b) = (levy(&s, r1.min(r2)), levy(&s, r1.max(r2)));
        ensure!(a <= b && b <= one, "monotonicity {i}: x={x:?} r={r1},{r2}");
    }
    for i in 0..1000 {
        let (d, _) = random_law(&mut rng);
        let (nx, ny) = (
            1 + bounded(&mut rng, 6) as usize,
            1 + bounded(&mut rng, 6) as usize,
        );
        let x = random_x(&mut rng, nx, 30);
        let y = random_x(&mut rng, ny, 30);
        let sx = sum_dist(&d, &Coeffs::integers(&x), 1 << 22).map_err(|e| e.to_string())?;
        let sy = sum_dist(&d, &Coeffs::integers(&y), 1 << 22).map_err(|e| e.to_string())?;
        let r = random_r(&mut rng);
        let l = levy(&sx.convolve(&sy).map_err(|e| e.to_string())?, r);
        ensure!(
            l <= levy(&sx, r) && l <= levy(&sy, r),
            "domination {i}: x={x:?} y={y:?} r={r}"
        );
    }
    for i in 0..1000 {
        let (d, _) = random_law(&mut rng);
        let n = 1 + bounded(&mut rng, 10) as usize;
        let x = random_x(&mut rng, n, 30);
        let mut perm: Vec<usize> = (0..n).collect();
        for j in (1..n).rev() {
            perm.swap(j, bounded(&mut rng, j as u64 + 1) as usize);
        }
        let c = Coeffs::integers(&x);
        let r = random_r(&mut rng);
        let a = levy(&sum_dist(&d, &c, 1 << 22).map_err(|e| e.to_string())?, r);
        let b = levy(
            &sum_dist(&d, &c.permuted(&perm), 1 << 22).map_err(|e| e.to_string())?,
            r,
        );
        ensure!(a == b, "permutation {i}: x={x:?} perm={perm:?}");
    }
    Ok("3 x 1000 instances, 0 violations".into())
}

fn c7_sweeps() -> Outcome {
    let base = ExperimentConfig {
        dist: "ber:3/10".into(),
        n: 10,
        samples: 1000,
        delta_prime: 0.1,
        theta: 1e-3,
        seed: 7,
        workers: workers(),
        ..Default::default()
    };
    let ne = anticoncentration_sweep(&ExperimentConfig {
        sweep_mode: SweepMode::NonElementary,
        ..base.clone()
    })
    .map_err(|e| e.to_string())?;
    ensure!(ne.accepted == 1000, "only {} accepted", ne.accepted);
    ensure!(
        ne.min_margin >= 1e-3,
        "min margin {} below 1e-3 at {:?}",
        ne.min_margin,
        ne.argmin
    );
    ensure!(
        ne.nonpositive == 0,
        "{} nonpositive margins",
        ne.nonpositive
    );
    ensure!(
        ne.injected_margins == vec![0.0],
        "boundary margins {:?}",
        ne.injected_margins
    );
    let ma = anticoncentration_sweep(&ExperimentConfig {
        sweep_mode: SweepMode::MaxAtom,
        ..base
    })
    .map_err(|e| e.to_string())?;
    ensure!(
        ma.injected_margins.iter().all(|&m| m == 0.0),
        "e_i margins {:?}",
        ma.injected_margins
    );
    for row in &ma.rows {
        let zero_ok = (row.margin == 0.0) == (row.kind == SampleKind::Injected);
        ensure!(
            row.margin >= 0.0 && zero_ok,
            "max-atom row {} ({:?}) margin {}",
            row.index,
            row.kind,
            row.margin
        );
    }
    Ok(format!(
        "non-elementary min margin {:.4}; max-atom min sampled margin {:.4}",
        ne.min_margin, ma.min_margin
    ))
}

fn c8_dichotomy() -> Outcome {
    let cfg = ExperimentConfig {
        dist: "ber:1/2".into(),
        n: 40,
        trials: 100,
        delta: 0.1,
        rho: 1.0,
        r0: 1e-2,
        levy_samples: 1_000_000,
        seed: 8,
        workers: workers(),
        ..Default::default()
    };
    let start = Instant::now();
    let r = structure_dichotomy(&cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let small = r
        .rows
        .iter()
        .filter(|row| !row.injected && row.levy_estimate.is_some_and(|e| e <= 5e-2))
        .count();
    let sum = r.frac_cons + r.frac_small_threshold + r.frac_neither;
    ensure!(r.frac_cons == 0.0, "frac_cons = {}", r.frac_cons);
    ensure!(small >= 95, "only {small} trials with L <= 0.05");
    ensure!((sum - 1.0).abs() < 1e-12, "fractions sum to {sum}");
    ensure!(secs < 600.0, "took {secs:.0}s");
    Ok(format!("frac_cons 0, {small}/100 small, {secs:.0}s"))
}

fn c9_spectral() -> Outcome {
    for n in 1..=12 {
        let s = smallest_singular(&Matrix::identity(n)).map_err(|e| e.to_string())?;
        ensure!(s == 1.0, "s(I_{n}) = {s}");
    }
    let mut rng = RngSeed::new(9).rng();
    for i in 0..200 {
        let n = 2 + bounded(&mut rng, 9) as usize;
        let mut rows: Vec<Vec<i64>> = (0..n).map(|_| random_x(&mut rng, n, 3)).collect();
        let (a, b) = (
            bounded(&mut rng, n as u64) as usize,
            bounded(&mut rng, n as u64) as usize,
        );
        let b = if a == b { (b + 1) % n } else { b };
        for r in rows.iter_mut() {
            r[b] = r[a];
        }
        let s = smallest_singular_int(&rows).map_err(|e| e.to_string())?;
        ensure!(s == 0.0, "duplicate-column instance {i} gave {s}");
    }
    for i in 0..1000 {
        let (a, b, c, d) = (
            unif(&mut rng),
            unif(&mut rng),
            unif(&mut rng),
            unif(&mut rng),
        );
        let fro = a * a + b * b + c * c + d * d;
        let det = (a * d - b * c).abs();
        let smax = ((fro + (fro * fro - 4.0 * det * det).max(0.0).sqrt()) / 2.0).sqrt();
        let closed = if smax == 0.0 { 0.0 } else { det / smax };
        let got = smallest_singular(&Matrix::from_rows(&[vec![a, b], vec![c, d]]))
            .map_err(|e| e.to_string())?;
        ensure!(
            (got - closed).abs() <= 1e-10,
            "2x2 instance {i}: {got} vs {closed}"
        );
    }
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let n = 2 + bounded(&mut rng, 30) as usize;
        let rows: Vec<Vec<f64>> = (0..n - 1)
            .map(|_| (0..n).map(|_| unif(&mut rng)).collect())
            .collect();
        let m = Matrix::from_rows(&rows);
        let v = kernel_vector(&m).map_err(|e| e.to_string())?;
        let op = *jacobi_singular_values(&rows).last().unwrap();
        let res = norm(&m.mul_vec(&v));
        worst = worst.max(res / op);
        ensure!(
            (norm(&v) - 1.0).abs() < 1e-12,
            "instance {i}: |v| = {}",
            norm(&v)
        );
        ensure!(
            res <= 1e-10 * op,
            "instance {i} (n={n}): residual {res:e}, |A| {op}"
        );
    }
    Ok(format!(
        "identity, duplicates, 2x2, kernel residual <= {worst:.1e} |A|"
    ))
}

fn unif<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn random_counts<R: RngCore>(rng: &mut R, k: usize, ell: usize) -> Vec<usize> {
    let mut s = vec![0usize; k];
    for _ in 0..ell {
        s[bounded(rng, k as u64) as usize] += 1;
    }
    s
}

fn c10_smoothing() -> Outcome {
    let mut rng = RngSeed::new(10).rng();
    let (mut worst_mass, mut worst_slope) = (0.0f64, f64::NEG_INFINITY);
    for i in 0..100 {
        let k3 = i % 4 == 3;
        let n = if k3 {
            8 + bounded(&mut rng, 9) as usize
        } else {
            8 + bounded(&mut rng, 25) as usize
        };
        let atoms: Vec<f64> = if k3 {
            vec![-1.0, 0.0, 1.0]
        } else {
            vec![0.0, 1.0]
        };
        let mode = if rng.next_u32() & 1 == 0 {
            Mode::P
        } else {
            Mode::Q
        };
        let p = AdmissibleParams {
            big_n: 8,
            n,
            k1: 2.0,
            k2: 4.0,
            k3: 8.0,
            delta: 0.1,
            mode,
        };
        let spec = generate_admissible(p, &mut rng).map_err(|e| e.to_string())?;
        let x: Vec<i64> = spec.sets.iter().map(|s| s.sample(&mut rng)).collect();
        let ell = 1 + bounded(&mut rng, n as u64) as usize;
        let s = random_counts(&mut rng, atoms.len(), ell);
        let f = base_grid_for(
            n,
            &atoms,
            &x,
            ell,
            steps_per_unit(n, 1),
            DEFAULT_WIDTH,
            false,
        );
        let g = build_recursion(
            &f,
            &spec,
            &atoms,
            &x,
            &s,
            ell,
            RecursionOptions {
                workers: workers(),
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?
        .result();
        let dm = (g.mass() - f.mass()).abs() / f.mass();
        worst_mass = worst_mass.max(dm);
        worst_slope = worst_slope.max(g.max_log_slope() - f.lipschitz);
        ensure!(dm <= 1e-6, "instance {i}: mass drift {dm:e}");
        ensure!(
            g.max_log_slope() <= f.lipschitz + 1e-3,
            "instance {i}: slope {} > {}",
            g.max_log_slope(),
            f.lipschitz
        );
    }

    // Traces on retained recursions; coarse step keeps the levels small.
    let mut traces = 0;
    for i in 0..30 {
        let n = 6 + bounded(&mut rng, 7) as usize;
        let atoms = [0.0, 1.0];
        let p = AdmissibleParams {
            big_n: 8,
            n,
            k1: 2.0,
            k2: 4.0,
            k3: 8.0,
            delta: 0.1,
            mode: Mode::Q,
        };
        let spec = generate_admissible(p, &mut rng).map_err(|e| e.to_string())?;
        let x: Vec<i64> = spec.sets.iter().map(|s| s.sample(&mut rng)).collect();
        let s = random_counts(&mut rng, 2, n);
        let f = base_grid_for(n, &atoms, &x, n, 4, 12.0, true);
        let opts = RecursionOptions {
            retain_levels: true,
            ..Default::default()
        };
        let rec = build_recursion(&f, &spec, &atoms, &x, &s, n, opts).map_err(|e| e.to_string())?;
        let top = rec.result();
        let peak = (0..top.len())
            .max_by(|&a, &b| top.log2[a].total_cmp(&top.log2[b]))
            .unwrap();
        let len = top.len() as u64;
        let picks = [
            peak,
            (len / 2) as usize,
            bounded(&mut rng, len / 2) as usize + (len / 4) as usize,
        ];
        for &node in &picks {
            let t0 = top.node(node);
            let tr =
                extract_step_record(&rec, t0, 0.1, 1.0).map_err(|e| format!("trace {i}: {e}"))?;
            traces += 1;
            ensure!(
                tr.is_monotone(),
                "trace {i} at t={t0}: h not monotone {:?}",
                tr.h_log2
            );
            for lvl in 1..=n {
                let w = tr.w[lvl - 1] - 1;
                ensure!(
                    tr.t[lvl - 1] == tr.t[lvl] + atoms[w] * x[lvl - 1] as f64,
                    "trace {i}: t step {lvl}"
                );
                // f_{W,ℓ}(t) = Σ_j W(j)/ℓ f_{W-e_j,ℓ-1}(t + a_j X_ℓ)
                let c = &tr.counts[lvl];
                let mut acc = 0.0;
                for j in 0..atoms.len() {
                    if c[j] == 0 {
                        continue;
                    }
                    let mut child = c.clone();
                    child[j] -= 1;
                    let g = rec.function(lvl - 1, &child).map_err(|e| e.to_string())?;
                    let v = g
                        .log2_at(tr.t[lvl] + atoms[j] * x[lvl - 1] as f64)
                        .ok_or("child off grid")?;
                    acc += c[j] as f64 / lvl as f64 * v.exp2();
                }
                let h = tr.h_log2[lvl].exp2();
                ensure!(
                    (acc - h).abs() <= 1e-9 * h,
                    "trace {i} level {lvl}: recomputed {acc} vs stored {h}"
                );
            }
        }
    }

    // Window mass against the exact conditional concentration.
    let mut tightest = f64::INFINITY;
    for i in 0..20 {
        let n = 6 + bounded(&mut rng, 7) as usize;
        let atoms = [0.0, 1.0];
        let big_n = 4u64;
        let p = AdmissibleParams {
            big_n,
            n,
            k1: 2.0,
            k2: 4.0,
            k3: 8.0,
            delta: 0.1,
            mode: Mode::Q,
        };
        let spec = generate_admissible(p, &mut rng).map_err(|e| e.to_string())?;
        let x: Vec<i64> = spec.sets.iter().map(|s| s.sample(&mut rng)).collect();
        let s = random_counts(&mut rng, 2, n);
        let m = steps_per_unit(n, 1);
        let f = base_grid_for(n, &atoms, &x, n, m, DEFAULT_WIDTH, false);
        let g = build_recursion(&f, &spec, &atoms, &x, &s, n, RecursionOptions::default())
            .map_err(|e| e.to_string())?
            .result();
        let width = (big_n * m) as usize;
        let vals: Vec<f64> = g.log2.iter().map(|v| v.exp2()).collect();
        let mut prefix = vec![0.0f64; vals.len() + 1];
        for (j, v) in vals.iter().enumerate() {
            prefix[j + 1] = prefix[j] + v;
        }
        let mut best = 0.0f64;
        for a in 0..vals.len().saturating_sub(width) {
            let b = a + width;
            let trap = (prefix[b + 1] - prefix[a] - 0.5 * (vals[a] + vals[b])) * g.step;
            best = best.max(trap);
        }
        let ber = dist("ber:1/2");
        let c = SliceConstraint::exact(&s);
        let fb = McFallback {
            samples: 1,
            seed: RngSeed::new(0),
        };
        let l = levy_conditional(
            &ber,
            &Coeffs::integers(&x),
            &c,
            big_n as f64 / 2.0,
            1 << 22,
            fb,
        )
        .map_err(|e| e.to_string())?;
        let LevyValue::Exact(l) = l else {
            return Err(format!("instance {i}: conditional value not exact"));
        };
        let l = to_f64(&l);
        tightest = tightest.min(l - best);
        ensure!(
            best <= l + 1e-6,
            "window instance {i}: grid mass {best} > L {l}"
        );
    }
    Ok(format!(
        "mass drift <= {worst_mass:.1e}, slope excess {worst_slope:.1e}, {traces} traces consistent, window slack >= {tightest:.2e}"
    ))
}

fn c11_inversion() -> Outcome {
    let l0 = 0.5;
    let mut ex = Vec::new();
    for n in [16, 32] {
        let cfg = ExperimentConfig {
            dist: "ber:1/2".into(),
            n,
            big_n: 64,
            trials: 200,
            l_grid: vec![0.0, l0],
            seed: 11,
            workers: workers(),
            ..Default::default()
        };
        let r = inversion_experiment(&cfg.inversion().map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ex.push(r.curve[1].exceedance);
    }
    ensure!(
        ex[1] <= ex[0] + 0.05,
        "exceedance at L={l0}: n=16 {:.3}, n=32 {:.3}",
        ex[0],
        ex[1]
    );
    Ok(format!(
        "exceedance at L={l0}: n=16 {:.3}, n=32 {:.3}",
        ex[0], ex[1]
    ))
}

fn c12_tail() -> Outcome {
    let cfg = ExperimentConfig {
        dist: "ber:1/5".into(),
        n: 30,
        samples: 1_000_000,
        t_grid: vec![0.25, 0.5, 1.0],
        seed: 12,
        workers: workers(),
        ..Default::default()
    };
    let c = tail_curve(&cfg).map_err(|e| e.to_string())?;
    for w in c.rows.windows(2) {
        ensure!(w[0].p_hat <= w[1].p_hat, "not monotone at t={}", w[1].t);
    }
    let p0 = c.rows[0].p_hat;
    let slopes: Vec<f64> = c.rows[1..].iter().map(|r| (r.p_hat - p0) / r.t).collect();
    let (lo, hi) = slopes
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
    ensure!(lo > 0.0 && hi / lo <= 3.0, "slopes {slopes:?}");
    Ok(format!(
        "slopes {:?}, spread {:.2}",
        slopes.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>(),
        hi / lo
    ))
}

/// Straight to the stderr handle so the lines show up without --nocapture.
fn report(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

#[test]
fn acceptance() {
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "exact enumeration vs brute force", c1_exact_oracle),
        (2, "dominant-event closed forms", c2_closed_forms),
        (3, "two-term asymptotic, Ber(1/5)", c3_two_term),
        (4, "singularity contains dominant union", c4_union_inside),
        (5, "Levy DP vs naive enumeration", c5_levy_engines),
        (6, "Levy invariants", c6_levy_invariants),
        (7, "anticoncentration sweeps", c7_sweeps),
        (8, "structure dichotomy", c8_dichotomy),
        (9, "spectral kernel", c9_spectral),
        (10, "smoothing invariants", c10_smoothing),
        (11, "inversion trend", c11_inversion),
        (12, "tail linearity", c12_tail),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (k, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&k)) {
            continue;
        }
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(detail) => report(&format!("PASS #{k} {name}: {detail} [{secs:.1}s]")),
            Err(why) => {
                report(&format!("FAIL #{k} {name}: {why} [{secs:.1}s]"));
                failed.push(k);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
