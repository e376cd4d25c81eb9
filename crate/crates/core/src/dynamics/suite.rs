//! Randomized scenario suites over closed-form barrier banks.
//!
//! Every scenario draws its bank, start state and nominal dynamics from its
//! own seeded stream, so results do not depend on thread scheduling.
//! Scenarios run in parallel and are merged in index order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    rollout_unsteered, rollout_with, verify_invariance, verify_stabilization, LatentTrajectory, NominalDynamics,
};
use crate::barrier::{Barrier, BarrierBank};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::steering::{compose_lse, SteeringSession};
use crate::types::{LatentState, SteeringConfig, SteeringMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Safe starts with nominal dynamics that push toward or along the boundary.
    Invariance,
    /// Starts outside the composed safe set.
    Stabilization,
    /// Unfiltered rollouts driven across a boundary; must report violations.
    NegativeControl,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "invariance" => Ok(ScenarioKind::Invariance),
            "stabilization" => Ok(ScenarioKind::Stabilization),
            "negative_control" => Ok(ScenarioKind::NegativeControl),
            other => Err(Error::InvalidConfig(format!("unknown suite '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub kind: ScenarioKind,
    pub scenarios: usize,
    pub steps: usize,
    /// Latent dimensions, cycled over scenarios.
    pub dims: Vec<usize>,
    /// Every scenario is rolled out once per mode.
    pub modes: Vec<SteeringMode>,
    pub steering: SteeringConfig,
    /// Upper bound on the nominal speed at the start state.
    pub max_speed: f64,
    pub seed: u64,
    /// Invariance: margin tolerance (default `10 dt^2`).
    /// Stabilization: multiplicative slack (default 0.05).
    pub tolerance: Option<f64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Invariance,
            scenarios: 1000,
            steps: 500,
            dims: vec![2, 8],
            modes: vec![SteeringMode::Lse, SteeringMode::Qp],
            steering: SteeringConfig {
                alpha: 1.0,
                dt: 0.01,
                ..SteeringConfig::default()
            },
            max_speed: 0.25,
            seed: 0,
            tolerance: None,
        }
    }
}

impl SuiteConfig {
    pub fn tolerance(&self) -> f64 {
        self.tolerance.unwrap_or(match self.kind {
            ScenarioKind::Stabilization => 0.05,
            _ => 10.0 * self.steering.dt * self.steering.dt,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.steering.validate()?;
        if self.scenarios == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig(
                "suite needs at least one scenario and one step".into(),
            ));
        }
        if self.dims.is_empty() || self.dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidConfig("suite dimensions must be >= 2".into()));
        }
        if self.modes.is_empty() && self.kind != ScenarioKind::NegativeControl {
            return Err(Error::InvalidConfig("suite needs at least one steering mode".into()));
        }
        if !(self.max_speed.is_finite() && self.max_speed > 0.0) {
            return Err(Error::InvalidConfig("max_speed must be positive".into()));
        }
        if !self.tolerance().is_finite() || self.tolerance() < 0.0 {
            return Err(Error::InvalidConfig("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Aggregate over one mode (or over unfiltered rollouts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    /// `None` for unfiltered rollouts.
    pub mode: Option<SteeringMode>,
    pub rollouts: usize,
    /// States beyond the tolerance, summed over rollouts.
    pub invariance_violations: usize,
    pub violating_rollouts: usize,
    pub worst_margin: f64,
    /// `sum_t dt [-min_k (b_k - delta)]+` summed over rollouts.
    pub violation_mass: f64,
    pub stabilization_bound_holds: bool,
    pub worst_ratio: f64,
    pub fallback_steps: usize,
}

impl ModeSummary {
    fn empty(mode: Option<SteeringMode>) -> Self {
        Self {
            mode,
            rollouts: 0,
            invariance_violations: 0,
            violating_rollouts: 0,
            worst_margin: f64::INFINITY,
            violation_mass: 0.0,
            stabilization_bound_holds: true,
            worst_ratio: 0.0,
            fallback_steps: 0,
        }
    }

    fn absorb(&mut self, r: &RolloutResult) {
        self.rollouts += 1;
        self.invariance_violations += r.violations;
        self.violating_rollouts += usize::from(r.violations > 0);
        self.worst_margin = self.worst_margin.min(r.worst_margin);
        self.violation_mass += r.violation_mass;
        self.stabilization_bound_holds &= r.bound_holds;
        self.worst_ratio = self.worst_ratio.max(r.worst_ratio);
        self.fallback_steps += r.fallback_steps;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub kind: ScenarioKind,
    pub scenarios: usize,
    pub steps_per_rollout: usize,
    pub tolerance_used: f64,
    pub invariance_violations: usize,
    pub worst_margin: f64,
    pub violation_mass: f64,
    pub stabilization_bound_holds: bool,
    pub worst_ratio: f64,
    pub per_mode: Vec<ModeSummary>,
}

struct RolloutResult {
    violations: usize,
    worst_margin: f64,
    violation_mass: f64,
    bound_holds: bool,
    worst_ratio: f64,
    fallback_steps: usize,
}

/// One randomly drawn scenario.
pub struct Scenario {
    pub bank: BarrierBank,
    pub start: LatentState,
    pub nominal: NominalDynamics,
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// 1 to 4 half-spaces and balls, each containing `anchor` with a margin.
fn random_bank(rng: &mut ChaCha8Rng, anchor: &[f64]) -> BarrierBank {
    let d = anchor.len();
    let k = rng.gen_range(1..=4);
    let barriers = (0..k)
        .map(|_| {
            if rng.gen_bool(0.5) {
                let n = unit_vector(rng, d);
                let margin = rng.gen_range(0.01..0.5);
                let offset = margin - crate::linalg::dot(&n, anchor);
                Barrier::half_space(n, offset)
            } else {
                let dir = unit_vector(rng, d);
                let rho = rng.gen_range(0.0..1.0);
                let center: Vec<f64> = anchor.iter().zip(&dir).map(|(a, u)| a + rho * u).collect();
                let radius = rho + rng.gen_range(0.05..1.0);
                Barrier::sphere(center, radius)
            }
        })
        .collect();
    BarrierBank::new(barriers).expect("bank of equal-dimension barriers")
}

/// Drift toward a far point, or a rotation about the origin, with start speed
/// at most `max_speed`.
/// Redraw [`random_bank`] until the composed barrier at `anchor` is at least
/// `min_composed`, so the composed safe set has interior around `anchor`.
fn random_bank_around(
    rng: &mut ChaCha8Rng,
    anchor: &[f64],
    steering: &SteeringConfig,
    min_composed: f64,
) -> BarrierBank {
    loop {
        let bank = random_bank(rng, anchor);
        if compose_lse(&bank.values_raw(anchor), steering.delta, steering.kappa) >= min_composed {
            return bank;
        }
    }
}

fn random_nominal(rng: &mut ChaCha8Rng, start: &[f64], max_speed: f64) -> NominalDynamics {
    let d = start.len();
    let speed = max_speed * rng.gen_range(0.1..1.0);
    if rng.gen_bool(0.5) {
        let dir = unit_vector(rng, d);
        let dist = rng.gen_range(2.0..5.0);
        let target = start.iter().zip(&dir).map(|(s, u)| s + dist * u).collect();
        NominalDynamics::DriftToTarget {
            target,
            gain: speed / dist,
        }
    } else {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in (i + 1)..d {
                let v: f64 = rng.sample(StandardNormal);
                m[i * d + j] = v;
                m[j * d + i] = -v;
            }
        }
        // Frobenius norm bounds the operator norm
        let scale = speed / (norm(&m) * norm(start).max(1.0));
        m.iter_mut().for_each(|v| *v *= scale);
        NominalDynamics::Linear { matrix: m }
    }
}

fn scenario_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draw scenario `index` of `config`.
pub fn draw_scenario(config: &SuiteConfig, index: usize) -> Scenario {
    let mut rng = scenario_rng(config.seed, index);
    let d = config.dims[index % config.dims.len()];
    let anchor: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    match config.kind {
        ScenarioKind::Invariance => {
            let bank = random_bank_around(&mut rng, &anchor, &config.steering, 0.0);
            let nominal = random_nominal(&mut rng, &anchor, config.max_speed);
            Scenario {
                bank,
                start: LatentState::new(anchor).expect("finite"),
                nominal,
            }
        }
        ScenarioKind::Stabilization => {
            let s = &config.steering;
            let bank = random_bank_around(&mut rng, &anchor, s, 0.05);
            let start = loop {
                let dir = unit_vector(&mut rng, d);
                let dist = rng.gen_range(0.5..2.0);
                let h: Vec<f64> = anchor.iter().zip(&dir).map(|(a, u)| a + dist * u).collect();
                if compose_lse(&bank.values_raw(&h), s.delta, s.kappa) < 0.0 {
                    break h;
                }
            };
            let nominal = random_nominal(&mut rng, &start, config.max_speed);
            Scenario {
                bank,
                start: LatentState::new(start).expect("finite"),
                nominal,
            }
        }
        ScenarioKind::NegativeControl => {
            // a half-space just ahead of the start, then drift well past it
            let n = unit_vector(&mut rng, d);
            let margin = rng.gen_range(0.05..0.5);
            let offset = margin - crate::linalg::dot(&n, &anchor);
            let mut barriers = vec![Barrier::half_space(n.clone(), offset)];
            if rng.gen_bool(0.5) {
                let radius = rng.gen_range(3.0..6.0);
                barriers.push(Barrier::sphere(anchor.clone(), radius));
            }
            let beyond = margin + rng.gen_range(1.0..3.0);
            let target = anchor.iter().zip(&n).map(|(a, u)| a - beyond * u).collect();
            Scenario {
                bank: BarrierBank::new(barriers).expect("bank of equal-dimension barriers"),
                start: LatentState::new(anchor).expect("finite"),
                nominal: NominalDynamics::DriftToTarget { target, gain: 2.0 },
            }
        }
    }
}

fn violation_mass(traj: &LatentTrajectory, delta: f64) -> f64 {
    traj.min_margins(delta).iter().map(|m| (-m).max(0.0) * traj.dt).sum()
}

fn evaluate(config: &SuiteConfig, sc: &Scenario, mode: Option<SteeringMode>) -> Result<RolloutResult> {
    let steering = match mode {
        Some(m) => config.steering.clone().with_mode(m),
        None => config.steering.clone(),
    };
    let traj = match mode {
        Some(_) => {
            let session = SteeringSession::new(sc.bank.clone(), steering.clone())?;
            rollout_with(&sc.start, &sc.nominal, &session, config.steps)?
        }
        None => rollout_unsteered(&sc.start, &sc.nominal, &sc.bank, &steering, config.steps)?,
    };
    let tol = config.tolerance();
    let mass = violation_mass(&traj, steering.delta);
    let (violations, worst_margin, bound_holds, worst_ratio) = match config.kind {
        ScenarioKind::Stabilization => {
            let r = verify_stabilization(&traj, &sc.bank, &steering, tol)?;
            let worst = traj
                .min_margins(steering.delta)
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            (0, worst, r.stabilization_bound_holds, r.worst_ratio)
        }
        _ => {
            let r = verify_invariance(&traj, &sc.bank, steering.delta, tol)?;
            (r.invariance_violations, r.worst_margin, true, 0.0)
        }
    };
    Ok(RolloutResult {
        violations,
        worst_margin,
        violation_mass: mass,
        bound_holds,
        worst_ratio,
        fallback_steps: traj.fallback_steps,
    })
}

/// Run every scenario of `config` over random closed-form banks and merge
/// the results.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    config.validate()?;
    run_scenarios(config, |i| Ok(draw_scenario(config, i)))
}

/// Run the scenarios of `config` against one fixed bank, with start states
/// drawn uniformly from `[-start_radius, start_radius]^d`. `config.dims` is
/// ignored.
pub fn run_suite_on_bank(config: &SuiteConfig, bank: &BarrierBank, start_radius: f64) -> Result<SuiteReport> {
    config.validate()?;
    if !(start_radius.is_finite() && start_radius > 0.0) {
        return Err(Error::InvalidConfig("start_radius must be positive".into()));
    }
    run_scenarios(config, |i| draw_scenario_on_bank(config, bank, start_radius, i))
}

const MAX_DRAWS: usize = 100_000;

/// Scenario `index` for a fixed bank.
pub fn draw_scenario_on_bank(
    config: &SuiteConfig,
    bank: &BarrierBank,
    start_radius: f64,
    index: usize,
) -> Result<Scenario> {
    let mut rng = scenario_rng(config.seed, index);
    let d = bank.input_dim();
    let s = &config.steering;
    let composed = |h: &[f64]| compose_lse(&bank.values_raw(h), s.delta, s.kappa);
    let draw = |rng: &mut ChaCha8Rng, accept: &dyn Fn(&[f64]) -> bool, what: &str| {
        for _ in 0..MAX_DRAWS {
            let h: Vec<f64> = (0..d).map(|_| rng.gen_range(-start_radius..start_radius)).collect();
            if accept(&h) {
                return Ok(h);
            }
        }
        Err(Error::InvalidConfig(format!(
            "no {what} state found in [-{start_radius}, {start_radius}]^{d}"
        )))
    };
    let start = match config.kind {
        ScenarioKind::Stabilization => draw(&mut rng, &|h| composed(h) < 0.0, "unsafe")?,
        _ => draw(&mut rng, &|h| composed(h) >= 0.0, "safe")?,
    };
    let nominal = match config.kind {
        ScenarioKind::NegativeControl => {
            let delta = s.delta;
            let target = draw(&mut rng, &|h| bank.values_raw(h).iter().any(|&b| b < delta), "unsafe")?;
            NominalDynamics::DriftToTarget { target, gain: 2.0 }
        }
        _ => random_nominal(&mut rng, &start, config.max_speed),
    };
    Ok(Scenario {
        bank: bank.clone(),
        start: LatentState::new(start)?,
        nominal,
    })
}

fn run_scenarios<F>(config: &SuiteConfig, draw: F) -> Result<SuiteReport>
where
    F: Fn(usize) -> Result<Scenario> + Sync,
{
    let modes: Vec<Option<SteeringMode>> = match config.kind {
        ScenarioKind::NegativeControl => vec![None],
        _ => config.modes.iter().copied().map(Some).collect(),
    };
    let results: Vec<Vec<RolloutResult>> = (0..config.scenarios)
        .into_par_iter()
        .map(|i| {
            let sc = draw(i)?;
            modes
                .iter()
                .map(|&m| evaluate(config, &sc, m))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut per_mode: Vec<ModeSummary> = modes.iter().map(|&m| ModeSummary::empty(m)).collect();
    for scenario in &results {
        for (summary, r) in per_mode.iter_mut().zip(scenario) {
            summary.absorb(r);
        }
    }
    let mut total = ModeSummary::empty(None);
    for s in &per_mode {
        total.invariance_violations += s.invariance_violations;
        total.worst_margin = total.worst_margin.min(s.worst_margin);
        total.violation_mass += s.violation_mass;
        total.stabilization_bound_holds &= s.stabilization_bound_holds;
        total.worst_ratio = total.worst_ratio.max(s.worst_ratio);
    }
    Ok(SuiteReport {
        kind: config.kind,
        scenarios: config.scenarios,
        steps_per_rollout: config.steps,
        tolerance_used: config.tolerance(),
        invariance_violations: total.invariance_violations,
        worst_margin: total.worst_margin,
        violation_mass: total.violation_mass,
        stabilization_bound_holds: total.stabilization_bound_holds,
        worst_ratio: total.worst_ratio,
        per_mode,
    })
}
