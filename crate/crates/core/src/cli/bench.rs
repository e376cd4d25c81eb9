//! Latency of a single steering call per mode, against the iterative
//! projection reference on the same bank.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::config::BenchSection;
use crate::barrier::BarrierBank;
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::steering::{build_constraints_raw, iterative_projection, SteeringSession};
use crate::types::{ControlInput, LatentState, SteeringConfig, SteeringMode};

/// Below this many trials the report carries a warning.
pub const MIN_TRIALS: usize = 100;

/// Distinct inputs cycled over trials.
const INPUT_POOL: usize = 32;

pub const REFERENCE_NAME: &str = "iterative_projection";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyStats {
    pub name: String,
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub median_ms: f64,
    pub min_ms: f64,
    /// Reference mean over this mean.
    pub speedup_vs_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardwareNote {
    pub arch: &'static str,
    pub os: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cpu_model: Option<String>,
    pub available_parallelism: usize,
    pub worker_threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub k: usize,
    pub d_h: usize,
    pub trials: usize,
    pub warmup: usize,
    pub modes: Vec<LatencyStats>,
    pub reference: LatencyStats,
    pub reference_iterations: usize,
    /// Mean number of constraint rows the nominal control violates.
    pub violated_rows_mean: f64,
    pub hardware: HardwareNote,
    pub warnings: Vec<String>,
}

impl BenchReport {
    pub fn mode(&self, mode: SteeringMode) -> Option<&LatencyStats> {
        self.modes.iter().find(|m| m.name == mode.name())
    }
}

pub fn hardware_note() -> HardwareNote {
    let cpu_model = std::fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| {
        s.lines()
            .find(|l| l.starts_with("model name"))
            .and_then(|l| l.split_once(':'))
            .map(|(_, v)| v.trim().to_string())
    });
    HardwareNote {
        arch: std::env::consts::ARCH,
        os: std::env::consts::OS,
        cpu_model,
        available_parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
        worker_threads: 1,
    }
}

fn stats(name: &str, samples: &[f64], reference_mean: f64) -> LatencyStats {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    LatencyStats {
        name: name.to_string(),
        mean_ms: mean,
        stddev_ms: var.sqrt(),
        median_ms: sorted[sorted.len() / 2],
        min_ms: sorted[0],
        speedup_vs_reference: reference_mean / mean,
    }
}

/// A random state with a nominal control pushing against every head, so
/// that each call has to correct several constraints. Returns the number of
/// violated rows as well.
fn adversarial_input(
    bank: &BarrierBank,
    steer: &SteeringConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(LatentState, ControlInput, usize)> {
    let d = bank.input_dim();
    let h: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let rows = build_constraints_raw(bank, &h, steer.delta);
    let mut u = vec![0.0; d];
    for r in &rows {
        let n = norm(&r.gradient).max(steer.grad_floor);
        for (ui, g) in u.iter_mut().zip(&r.gradient) {
            *ui -= g / n;
        }
    }
    // scale until the push dominates every head's slack
    let scale = rows
        .iter()
        .map(|r| 2.0 * (steer.alpha * r.margin()).abs() / norm(&r.gradient).max(steer.grad_floor) + 1.0)
        .fold(1.0, f64::max);
    for ui in &mut u {
        *ui *= scale;
    }
    let violated = rows.iter().filter(|r| r.lhs(&u, steer.alpha) < 0.0).count();
    Ok((LatentState::new(h)?, ControlInput::new(u)?, violated))
}

/// Time `trials` calls of each filter mode and of the reference on one
/// worker thread. Modes are interleaved per trial with a rotating order so
/// drift in machine load spreads evenly.
pub fn run_bench(bank: &BarrierBank, bench: &BenchSection, steer: &SteeringConfig) -> Result<BenchReport> {
    if bench.trials == 0 {
        return Err(Error::InvalidConfig("bench needs at least one trial".into()));
    }
    let mut warnings = Vec::new();
    if bench.trials < MIN_TRIALS {
        let msg = format!(
            "{} trials is below the recommended {MIN_TRIALS}; timings are noisy",
            bench.trials
        );
        eprintln!("warning: {msg}");
        warnings.push(msg);
    }
    let d = bank.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(bench.seed);
    let inputs = (0..INPUT_POOL)
        .map(|_| adversarial_input(bank, steer, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let violated_rows_mean = inputs.iter().map(|(_, _, v)| *v as f64).sum::<f64>() / inputs.len() as f64;

    let modes = SteeringMode::ALL;
    let sessions: Vec<SteeringSession> = modes
        .iter()
        .map(|&m| SteeringSession::new(bank.clone(), steer.clone().with_mode(m)))
        .collect::<Result<_>>()?;
    let projection = bench.projection();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("bench worker: {e}")))?;
    let n_slots = modes.len() + 1;
    let samples = pool.install(|| -> Result<Vec<Vec<f64>>> {
        let mut samples = vec![Vec::with_capacity(bench.trials); n_slots];
        for trial in 0..bench.warmup + bench.trials {
            let (h, u, _) = &inputs[trial % INPUT_POOL];
            for j in 0..n_slots {
                let slot = (trial + j) % n_slots;
                let start = Instant::now();
                if slot < modes.len() {
                    black_box(sessions[slot].steer_control(black_box(h), black_box(u))?);
                } else {
                    black_box(iterative_projection(
                        bank,
                        black_box(h),
                        black_box(u),
                        steer,
                        &projection,
                    )?);
                }
                let ms = start.elapsed().as_secs_f64() * 1e3;
                if trial >= bench.warmup {
                    samples[slot].push(ms);
                }
            }
        }
        Ok(samples)
    })?;

    let ref_mean = samples[modes.len()].iter().sum::<f64>() / bench.trials as f64;
    Ok(BenchReport {
        k: bank.len(),
        d_h: d,
        trials: bench.trials,
        warmup: bench.warmup,
        modes: modes
            .iter()
            .zip(&samples)
            .map(|(m, s)| stats(m.name(), s, ref_mean))
            .collect(),
        reference: stats(REFERENCE_NAME, &samples[modes.len()], ref_mean),
        reference_iterations: projection.iterations,
        violated_rows_mean,
        hardware: hardware_note(),
        warnings,
    })
}
