//! Acceptance criteria, run in sequence inside one test so the latency
//! measurement does not share the machine with other tests.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use barrier_steer::barrier::{train, Barrier, BarrierBank, BarrierNet, TrainConfig};
use barrier_steer::cli::{compose_report, run_bench, suite_verdict, BenchSection, RunConfig};
use barrier_steer::dataio::{
    decode_dump, encode_dump, generate_synthetic, multi_constraint_fixture, split, DumpError, MultiConstraintSpec,
    SafetyDataset, SyntheticKind, SyntheticSpec,
};
use barrier_steer::dynamics::{run_suite, ScenarioKind, SuiteConfig};
use barrier_steer::steering::{compose_lse, steer_qp, steer_top2};
use barrier_steer::{Error, LabeledState, LatentState, SafetyLabel, SteeringConfig, SteeringMode};
use common::{feasible_instance, max_abs_diff, qp_oracle};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn steering(alpha: f64) -> SteeringConfig {
    SteeringConfig {
        alpha,
        ..SteeringConfig::default()
    }
}

fn top2_matches_oracle() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for (di, d) in [2usize, 8, 64].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + di as u64);
        for _ in 0..1000 {
            let alpha = rng.gen_range(0.05..2.0);
            let (rows, u_nom) = feasible_instance(&mut rng, 2, d, alpha, 0.0);
            let expect = qp_oracle(&rows, &u_nom, alpha).ok_or("oracle found no feasible point")?;
            let err = max_abs_diff(&steer_top2(&rows, &u_nom, &steering(alpha)).u, &expect);
            worst = worst.max(err);
            mismatches += usize::from(err >= 1e-6);
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches == 0 && elapsed < Duration::from_secs(30),
        format!(
            "3000 instances, {mismatches} mismatches, max error {worst:.2e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn qp_matches_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for _ in 0..500 {
        let k = rng.gen_range(1..=4);
        let d = rng.gen_range(2..=16);
        let alpha = rng.gen_range(0.05..2.0);
        let delta = rng.gen_range(-0.5..0.5);
        let (rows, u_nom) = feasible_instance(&mut rng, k, d, alpha, delta);
        let expect = qp_oracle(&rows, &u_nom, alpha).ok_or("oracle found no feasible point")?;
        let cfg = SteeringConfig {
            delta,
            ..steering(alpha)
        };
        let err = max_abs_diff(&steer_qp(&rows, &u_nom, &cfg).u, &expect);
        worst = worst.max(err);
        mismatches += usize::from(err >= 1e-6);
    }
    check(
        mismatches == 0,
        format!("500 instances, {mismatches} mismatches, max error {worst:.2e}"),
    )
}

fn random_closed_form_bank(rng: &mut ChaCha8Rng, k: usize, d: usize) -> BarrierBank {
    let barriers = (0..k)
        .map(|_| {
            let v = common::gaussian(rng, d);
            if rng.gen_bool(0.5) {
                Barrier::half_space(v, rng.gen_range(-2.0..2.0))
            } else {
                Barrier::sphere(v, rng.gen_range(0.1..3.0))
            }
        })
        .collect();
    BarrierBank::new(barriers).unwrap()
}

fn lse_soundness() -> Verdict {
    let (counterexamples, bound_failures, worst_gap) = (0..100_000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(300_000 + i);
            let k = rng.gen_range(1..=14);
            let d = rng.gen_range(2..=16);
            let kappa = if i % 2 == 0 { 10.0 } else { 50.0 };
            let delta = rng.gen_range(-0.5..0.5);
            let bank = random_closed_form_bank(&mut rng, k, d);
            let h: Vec<f64> = common::gaussian(&mut rng, d).into_iter().map(|x| 1.5 * x).collect();
            let values = bank.values_raw(&h);
            let b = compose_lse(&values, delta, kappa);
            let m = values.iter().map(|v| v - delta).fold(f64::INFINITY, f64::min);
            let gap = m - b;
            // rounding of the sum and logarithm
            let slack = 16.0 * f64::EPSILON * (1.0 + m.abs() + b.abs());
            let counter = usize::from(b >= 0.0 && m < 0.0);
            let bound = usize::from(gap < -slack || gap > (k as f64).ln() / kappa + slack);
            (counter, bound, gap * kappa / (k as f64).ln().max(f64::MIN_POSITIVE))
        })
        .reduce(|| (0, 0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2.max(b.2)));
    check(
        counterexamples == 0 && bound_failures == 0,
        format!("1e5 states, {counterexamples} counterexamples, {bound_failures} bound failures, max gap {worst_gap:.3} of ln K / kappa"),
    )
}

fn suite(kind: ScenarioKind, scenarios: usize, alpha: f64, modes: Vec<SteeringMode>) -> SuiteConfig {
    let mut s = SuiteConfig {
        kind,
        scenarios,
        steps: 500,
        dims: vec![2, 8],
        modes,
        seed: 4,
        ..SuiteConfig::default()
    };
    s.steering.alpha = alpha;
    s
}

fn invariance() -> Verdict {
    let start = Instant::now();
    let cfg = suite(
        ScenarioKind::Invariance,
        10_000,
        1.0,
        vec![SteeringMode::Lse, SteeringMode::Qp],
    );
    let r = run_suite(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(
        r.invariance_violations == 0 && elapsed < Duration::from_secs(300),
        format!(
            "1e4 rollouts x 500 steps x {{lse, qp}}, {} violations beyond {:.0e}, worst margin {:.2e}, {:.1} s",
            r.invariance_violations,
            r.tolerance_used,
            r.worst_margin,
            elapsed.as_secs_f64()
        ),
    )
}

fn stabilization() -> Verdict {
    let cfg = suite(ScenarioKind::Stabilization, 2_000, 1.0, vec![SteeringMode::Lse]);
    let r = run_suite(&cfg).map_err(|e| e.to_string())?;
    let detail = format!(
        "2000 unsafe starts (lse), bound holds with 1.05 factor + {:.0e} absolute slack; worst raw ratio {:.3}",
        barrier_steer::dynamics::stabilization_abs_tolerance(cfg.steering.dt),
        r.worst_ratio
    );
    match suite_verdict(&r) {
        Ok(()) => Ok(detail),
        Err(why) => Err(format!("{detail}: {why}")),
    }
}

fn gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for i in 0..1000 {
        let d = rng.gen_range(2..=12);
        let barrier = match i % 3 {
            0 => {
                let hidden: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(2..=16)).collect();
                Barrier::Neural(BarrierNet::init(d, &hidden, &mut rng))
            }
            1 => Barrier::half_space(common::gaussian(&mut rng, d), rng.gen_range(-1.0..1.0)),
            _ => Barrier::sphere(common::gaussian(&mut rng, d), rng.gen_range(0.5..2.0)),
        };
        let h = common::gaussian(&mut rng, d);
        let g = barrier.input_gradient(&LatentState::new(h.clone()).unwrap()).unwrap();
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        for j in 0..d {
            // Richardson-extrapolated central difference, truncation O(eps^4)
            let cd = |eps: f64| {
                let mut p = h.clone();
                let mut m = h.clone();
                p[j] += eps;
                m[j] -= eps;
                (barrier.value_raw(&p) - barrier.value_raw(&m)) / (2.0 * eps)
            };
            let fd = (4.0 * cd(5e-4) - cd(1e-3)) / 3.0;
            let rel = (g[j] - fd).abs() / gnorm.max(1e-3);
            worst = worst.max(rel);
            failures += usize::from(rel >= 1e-7);
        }
    }
    check(
        failures == 0,
        format!("1000 pairs, {failures} failures, max relative error {worst:.2e}"),
    )
}

/// Best accuracy of a threshold on `w . h` over all offsets and both signs.
fn best_threshold_accuracy(records: &[LabeledState], w: &[f64]) -> f64 {
    let mut proj: Vec<(f64, bool)> = records
        .iter()
        .map(|r| {
            let p = r.state.as_slice().iter().zip(w).map(|(a, b)| a * b).sum();
            (p, r.label == SafetyLabel::Safe)
        })
        .collect();
    proj.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = proj.len();
    let total_safe = proj.iter().filter(|p| p.1).count();
    // safe above the cut: correct = unsafe below + safe above
    let mut safe_below = 0;
    let mut best = 0usize;
    for (i, cut) in proj.iter().map(Some).chain([None]).enumerate() {
        let unsafe_below = i - safe_below;
        let above_safe = unsafe_below + (total_safe - safe_below);
        best = best.max(above_safe).max(n - above_safe);
        if cut.is_some_and(|p| p.1) {
            safe_below += 1;
        }
    }
    best as f64 / n as f64
}

fn learning() -> Verdict {
    let ds = generate_synthetic(&SyntheticSpec {
        kind: SyntheticKind::TwoMoons2D,
        n_per_class: 1000,
        noise: 0.1,
        d_h: 2,
        seed: 7,
    })
    .map_err(|e| e.to_string())?;
    let (tr, ho) = split(&ds, 0.8, 7).map_err(|e| e.to_string())?;
    let cfg = RunConfig::default();
    let tc = TrainConfig {
        epochs: 300,
        ..cfg.train.train_config()
    };
    let bank = BarrierBank::neural(4, 2, &cfg.train.hidden_dims, 7).map_err(|e| e.to_string())?;
    let (bank, _) = train(bank, &tr, &tc).map_err(|e| e.to_string())?;
    let train_acc = bank.accuracy(tr.records()).map_err(|e| e.to_string())?;
    let holdout_acc = bank.accuracy(ho.records()).map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let linear = (0..1000)
        .map(|_| {
            let t = rng.gen_range(0.0..std::f64::consts::PI);
            best_threshold_accuracy(ds.records(), &[t.cos(), t.sin()])
        })
        .fold(0.0, f64::max);
    check(
        train_acc >= 0.95 && holdout_acc >= 0.90 && linear < 0.90,
        format!("train {train_acc:.3}, held-out {holdout_acc:.3}, best linear {linear:.3}"),
    )
}

fn composition() -> Verdict {
    let (banks, ds) = multi_constraint_fixture(&MultiConstraintSpec {
        categories: 4,
        d_h: 6,
        sequences: 200,
        steps: 24,
        seed: 0,
    })
    .map_err(|e| e.to_string())?;
    let seqs: Vec<Vec<LatentState>> = ds
        .sequences()
        .into_iter()
        .map(|run| run.iter().map(|r| r.state.clone()).collect())
        .collect();
    let named = banks
        .into_iter()
        .enumerate()
        .map(|(k, b)| (format!("category{k}"), b))
        .collect();
    let cfg = RunConfig::default().steer;
    let (_, r) = compose_report(named, &seqs, &SteeringMode::ALL, &cfg, 1e-6).map_err(|e| e.to_string())?;
    let count = |name: &str| r.modes.iter().find(|m| m.name == name).map(|m| m.violating_sequences);
    let (qp, lse, top2) = (count("qp").unwrap(), count("lse").unwrap(), count("top2").unwrap());
    let original = r.original.violating_sequences;
    check(
        qp == lse && lse < top2 && top2 < original,
        format!(
            "violating sequences of {}: original {original}, top2 {top2}, qp {qp}, lse {lse}",
            r.sequences
        ),
    )
}

fn latency() -> Verdict {
    let bench = BenchSection::default();
    let bank =
        BarrierBank::neural(bench.heads, bench.d_h, &bench.hidden_dims, bench.seed).map_err(|e| e.to_string())?;
    let r = run_bench(&bank, &bench, &RunConfig::default().steer).map_err(|e| e.to_string())?;
    let mean = |m| r.mode(m).unwrap().mean_ms;
    let (lse, top2, qp) = (
        mean(SteeringMode::Lse),
        mean(SteeringMode::Top2),
        mean(SteeringMode::Qp),
    );
    let speedup = r.mode(SteeringMode::Lse).unwrap().speedup_vs_reference;
    check(
        speedup >= 5.0 && lse <= top2 && top2 <= qp,
        format!(
            "K={} d_h={} {} trials: lse {lse:.3} ms, top2 {top2:.3} ms, qp {qp:.3} ms, reference {:.2} ms, lse speedup {speedup:.1}x",
            r.k, r.d_h, r.trials, r.reference.mean_ms
        ),
    )
}

fn alpha_monotonicity() -> Verdict {
    let mut masses = Vec::new();
    for alpha in [0.01, 0.1, 0.3, 1.0] {
        let modes = vec![SteeringMode::Lse, SteeringMode::Qp];
        let inv = run_suite(&suite(ScenarioKind::Invariance, 500, alpha, modes.clone())).map_err(|e| e.to_string())?;
        let stab = run_suite(&suite(ScenarioKind::Stabilization, 500, alpha, modes)).map_err(|e| e.to_string())?;
        masses.push((alpha, inv.violation_mass + stab.violation_mass));
    }
    let ok = masses.windows(2).all(|w| w[1].1 <= w[0].1);
    let detail = masses
        .iter()
        .map(|(a, m)| format!("alpha {a}: {m:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(ok, format!("violation mass {detail}"))
}

fn random_dataset(rng: &mut ChaCha8Rng) -> SafetyDataset {
    let d = rng.gen_range(1..=48);
    let n = rng.gen_range(0..=40);
    let records = (0..n)
        .map(|i| {
            let values: Vec<f64> = (0..d)
                .map(|_| match rng.gen_range(0..10) {
                    0 => f64::from(f32::MAX) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
                    1 => f64::from(f32::from_bits(rng.gen_range(1..0x0080_0000))),
                    2 => 0.0,
                    _ => f64::from(rng.gen_range(-1e6f32..1e6)),
                })
                .collect();
            let id_len = rng.gen_range(0..12);
            let id: String = (0..id_len)
                .map(|_| match rng.gen_range(0..4) {
                    0 => char::from_u32(rng.gen_range(0x80..0xD7FF)).unwrap(),
                    _ => rng.gen_range('a'..='z'),
                })
                .chain(i.to_string().chars())
                .collect();
            let label = if rng.gen_bool(0.5) {
                SafetyLabel::Safe
            } else {
                SafetyLabel::Unsafe
            };
            LabeledState {
                state: LatentState::new(values).unwrap(),
                label,
                source_id: id,
            }
        })
        .collect();
    SafetyDataset::new(d, rng.gen(), records).unwrap()
}

fn is_format_or_corrupt(r: &barrier_steer::Result<(SafetyDataset, barrier_steer::dataio::ReadReport)>) -> bool {
    matches!(r, Err(Error::Dump(DumpError::Format(_) | DumpError::Corrupt { .. })))
}

fn data_contract() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1100);
    let mut lossy = 0;
    let mut misclassified = 0;
    let mut structural = 0;
    let mut flips = 0;
    let mut panics = 0;
    for _ in 0..1000 {
        let ds = random_dataset(&mut rng);
        let bytes = encode_dump(&ds);
        match decode_dump(&bytes) {
            Ok((back, rep)) if back == ds && rep.rejected_non_finite == 0 => {}
            _ => lossy += 1,
        }

        // structural damage must surface as a format or corruption error
        let mut damaged: Vec<Vec<u8>> = vec![
            bytes[..rng.gen_range(0..bytes.len())].to_vec(),
            [&bytes[..], &[rng.gen()]].concat(),
        ];
        let mut b = bytes.clone();
        b[rng.gen_range(0..4)] ^= 1 << rng.gen_range(0..8);
        damaged.push(b);
        let mut b = bytes.clone();
        b[4] = b[4].wrapping_add(rng.gen_range(1..=255));
        damaged.push(b);
        let mut b = bytes.clone();
        let count = u64::from_le_bytes(b[10..18].try_into().unwrap());
        b[10..18].copy_from_slice(&(count + rng.gen_range(1..5)).to_le_bytes());
        damaged.push(b);
        if count > 0 {
            let mut b = bytes.clone();
            b[10..18].copy_from_slice(&(count - 1).to_le_bytes());
            damaged.push(b);
            // first record: label byte, then an id byte that is never UTF-8
            let mut b = bytes.clone();
            b[22] = *[0u8, 2, 0x7f, 0x80].get(rng.gen_range(0..4)).unwrap();
            damaged.push(b);
            let id_len = u16::from_le_bytes([bytes[23], bytes[24]]) as usize;
            if id_len > 0 {
                let mut b = bytes.clone();
                b[25] = 0xFF;
                damaged.push(b);
            }
        }
        for d in &damaged {
            structural += 1;
            match catch_unwind(|| decode_dump(d)) {
                Ok(r) => misclassified += usize::from(!is_format_or_corrupt(&r)),
                Err(_) => panics += 1,
            }
        }

        // arbitrary flips may land in payload; they must never panic
        for _ in 0..4 {
            let mut b = bytes.clone();
            for _ in 0..rng.gen_range(1..4) {
                let i = rng.gen_range(0..b.len());
                b[i] = rng.gen();
            }
            flips += 1;
            match catch_unwind(AssertUnwindSafe(|| decode_dump(&b))) {
                Ok(Ok(_)) | Ok(Err(Error::Dump(_))) => {}
                Ok(Err(_)) => misclassified += 1,
                Err(_) => panics += 1,
            }
        }
    }
    check(
        lossy == 0 && misclassified == 0 && panics == 0,
        format!(
            "1000 round trips ({lossy} lossy), {structural} structural + {flips} random corruptions: {misclassified} wrong error class, {panics} panics"
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 11] = [
        ("1 top2 matches QP oracle (K=2)", top2_matches_oracle),
        ("2 qp matches enumeration oracle", qp_matches_oracle),
        ("3 lse soundness and gap bound", lse_soundness),
        ("4 forward invariance", invariance),
        ("5 exponential stabilization", stabilization),
        ("6 input gradients vs finite differences", gradients),
        ("7 non-linear boundary learning", learning),
        ("8 composition ordering", composition),
        ("9 latency ordering", latency),
        ("10 monotonicity in alpha", alpha_monotonicity),
        ("11 dump data contract", data_contract),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let start = Instant::now();
        let verdict = catch_unwind(f).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(d) => println!("PASS [{name}] {d} ({secs:.1} s)"),
            Err(d) => {
                println!("FAIL [{name}] {d} ({secs:.1} s)");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
