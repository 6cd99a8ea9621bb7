use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Point, VascEnv};
use crate::error::{Error, Result};
use crate::grid::OccupancyGrid;
use crate::io::write_atomic;
use crate::metrics::{session_log_row, TrajSample, Trajectory, SESSION_LOG_HEADER};
use crate::par;
use crate::policy::{AdamConfig, AdamState, Arch, Policy, PolicyParams};
use crate::semi_auto::{tick_ms, ControlMode};
use crate::trainers::a2c::a2c_update;
use crate::trainers::config::{A2cConfig, EvalConfig, PpoConfig};
use crate::trainers::ppo::{ppo_update, LossStats};
use crate::trainers::rollout::{collect_rollout, EnvSlot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Ppo,
    A2c,
}

impl std::str::FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ppo" => Ok(Algo::Ppo),
            "a2c" => Ok(Algo::A2c),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AlgoConfig {
    Ppo(PpoConfig),
    A2c(A2cConfig),
}

impl AlgoConfig {
    pub fn algo(&self) -> Algo {
        match self {
            AlgoConfig::Ppo(_) => Algo::Ppo,
            AlgoConfig::A2c(_) => Algo::A2c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AlgoConfig::Ppo(c) => c.validate(),
            AlgoConfig::A2c(c) => c.validate(),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            AlgoConfig::Ppo(c) => c.seed,
            AlgoConfig::A2c(c) => c.seed,
        }
    }

    pub fn total_steps(&self) -> u64 {
        match self {
            AlgoConfig::Ppo(c) => c.total_steps,
            AlgoConfig::A2c(c) => c.total_steps,
        }
    }

    fn n_envs(&self) -> usize {
        match self {
            AlgoConfig::Ppo(c) => c.n_envs,
            AlgoConfig::A2c(c) => c.n_envs,
        }
    }

    fn lr(&self) -> f64 {
        match self {
            AlgoConfig::Ppo(c) => c.lr,
            AlgoConfig::A2c(c) => c.lr,
        }
    }

    /// Steps per env per update.
    fn segment_length(&self) -> usize {
        match self {
            AlgoConfig::Ppo(c) => c.rollout_length / c.n_envs,
            AlgoConfig::A2c(c) => c.n_steps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub env_steps: u64,
    pub mean_return: f64,
    pub success_rate: f64,
    pub wall_clock_s: f64,
}

/// Seconds spent in each phase of training.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimes {
    pub collect_s: f64,
    pub update_s: f64,
    pub eval_s: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub algo: Algo,
    pub curve: Vec<CurvePoint>,
    pub env_steps: u64,
    pub updates: u64,
    pub phase_times: PhaseTimes,
    pub last_loss: Option<LossStats>,
    pub params: PolicyParams,
}

impl TrainReport {
    /// Env steps of the first evaluation whose success rate reached
    /// `threshold`.
    pub fn first_step_reaching(&self, threshold: f64) -> Option<u64> {
        self.curve
            .iter()
            .find(|p| p.success_rate >= threshold)
            .map(|p| p.env_steps)
    }

    pub fn best_success(&self) -> f64 {
        self.curve.iter().map(|p| p.success_rate).fold(0.0, f64::max)
    }

    pub fn curve_csv(&self) -> String {
        curve_csv(&self.curve)
    }

    pub fn write_curve(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.curve_csv().as_bytes())
    }
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("env_steps,mean_return,success_rate,wall_clock_s\n");
    for p in curve {
        let _ = writeln!(
            out,
            "{},{},{},{:.3}",
            p.env_steps, p.mean_return, p.success_rate, p.wall_clock_s
        );
    }
    out
}

/// Outcome of one evaluation episode.
#[derive(Clone, Debug)]
pub struct EpisodeTrace {
    pub start: Point,
    pub target: Point,
    pub arrived: bool,
    pub episode_return: f64,
    pub steps: u32,
    pub wall_hits: u32,
    pub trajectory: Trajectory,
}

impl EpisodeTrace {
    /// The episode as a session log, one row per step on the tick clock.
    pub fn session_log(&self) -> String {
        let mut out = format!("{SESSION_LOG_HEADER}\n");
        let last = self.trajectory.samples.len().saturating_sub(1);
        let scale = self.trajectory.scale;
        for (k, s) in self.trajectory.samples.iter().enumerate() {
            let event = match (s.collision, self.arrived && k == last && k > 0) {
                (true, _) => "collision",
                (false, true) => "arrived",
                _ => "",
            };
            session_log_row(&mut out, k as u64, tick_ms(k as u64), s.mode, s.x / scale, s.y / scale, event);
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub traces: Vec<EpisodeTrace>,
}

impl EvalReport {
    pub fn trajectories(&self) -> Vec<Trajectory> {
        self.traces.iter().map(|t| t.trajectory.clone()).collect()
    }
}

/// Runs `n_episodes` on start/target pairs drawn from `rng`. Deterministic
/// mode takes argmax actions; trajectories hold one sample per step on the
/// session tick clock, in pixels (`scale` 1 µm/px).
pub fn evaluate<P, R>(
    policy: &P,
    grid: &Arc<OccupancyGrid>,
    config: &EnvConfig,
    n_episodes: usize,
    deterministic: bool,
    rng: &mut R,
) -> Result<EvalReport>
where
    P: Policy + ?Sized,
    R: Rng + ?Sized,
{
    let mut jobs = Vec::with_capacity(n_episodes);
    let mut env = VascEnv::new(grid.clone(), config.clone(), rng)?;
    for _ in 0..n_episodes {
        let s = *env.reset(rng)?;
        jobs.push((s.start, s.target, rng.random::<u64>()));
    }
    let traces = par::map(&jobs, |&(start, target, seed)| {
        run_episode(policy, grid, config, start, target, deterministic, seed)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    if traces.is_empty() {
        return Ok(EvalReport::default());
    }
    let n = traces.len() as f64;
    Ok(EvalReport {
        episodes: traces.len(),
        success_rate: traces.iter().filter(|t| t.arrived).count() as f64 / n,
        mean_return: traces.iter().map(|t| t.episode_return).sum::<f64>() / n,
        traces,
    })
}

fn run_episode<P: Policy + ?Sized>(
    policy: &P,
    grid: &Arc<OccupancyGrid>,
    config: &EnvConfig,
    start: Point,
    target: Point,
    deterministic: bool,
    seed: u64,
) -> Result<EpisodeTrace> {
    let mut env = VascEnv::with_endpoints(grid.clone(), config.clone(), start, target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // A greedy action depends only on the position once the target is fixed.
    let mut memo: HashMap<(u64, u64), usize> = HashMap::new();
    let mut samples = vec![TrajSample {
        t: 0.0,
        x: start.x,
        y: start.y,
        collision: false,
        mode: ControlMode::Auto,
    }];
    let (mut ret, mut arrived, mut hits) = (0.0, false, 0);
    while !env.state().done {
        let obs = env.observe();
        let action = if deterministic {
            let p = env.state().position;
            *memo
                .entry((p.x.to_bits(), p.y.to_bits()))
                .or_insert_with(|| policy.act(&obs))
        } else {
            policy.sample(&obs, &mut rng)
        };
        let r = env.step(action)?;
        ret += r.reward;
        arrived = r.arrived;
        hits += r.hit_wall as u32;
        let p = r.next_state.position;
        samples.push(TrajSample {
            t: tick_ms(r.next_state.step_count as u64) as f64 / 1000.0,
            x: p.x,
            y: p.y,
            collision: r.hit_wall,
            mode: ControlMode::Auto,
        });
    }
    Ok(EpisodeTrace {
        start,
        target,
        arrived,
        episode_return: ret,
        steps: env.state().step_count,
        wall_hits: hits,
        trajectory: Trajectory::new(samples, 1.0)?,
    })
}

/// Trains from freshly initialized parameters. See [`train_from`].
pub fn train(
    config: &AlgoConfig,
    grid: Arc<OccupancyGrid>,
    env_config: &EnvConfig,
    eval: &EvalConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed());
    let params = PolicyParams::init_orthogonal(Arch::default(), &mut rng);
    train_from(config, params, grid, env_config, eval, &mut rng)
}

/// Alternates rollout collection and updates until `total_steps` env steps
/// have been taken, evaluating greedily every `eval.interval_steps` on the
/// same held-out pairs and once more at the end.
pub fn train_from(
    config: &AlgoConfig,
    mut params: PolicyParams,
    grid: Arc<OccupancyGrid>,
    env_config: &EnvConfig,
    eval: &EvalConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainReport> {
    config.validate()?;
    env_config.validate()?;
    let started = Instant::now();
    let mut times = PhaseTimes::default();
    let mut adam = AdamState::for_params(
        AdamConfig {
            lr: config.lr(),
            ..AdamConfig::default()
        },
        &params,
    );
    let mut slots = EnvSlot::many(&grid, env_config, config.n_envs(), rng)?;
    let seg = config.segment_length();
    let batch = (seg * config.n_envs()) as u64;
    let iterations = config.total_steps() / batch;
    let interval = eval.interval_steps.max(1);

    let mut curve: Vec<CurvePoint> = Vec::new();
    let mut env_steps = 0u64;
    let mut next_eval = interval;
    let mut last_loss = None;
    let mut updates = 0u64;

    let evaluate_now = |params: &PolicyParams, env_steps: u64, curve: &mut Vec<CurvePoint>, times: &mut PhaseTimes| -> Result<bool> {
        let t0 = Instant::now();
        let mut eval_rng = ChaCha8Rng::seed_from_u64(eval.seed);
        let report = evaluate(params, &grid, env_config, eval.episodes, true, &mut eval_rng)?;
        times.eval_s += t0.elapsed().as_secs_f64();
        let point = CurvePoint {
            env_steps,
            mean_return: report.mean_return,
            success_rate: report.success_rate,
            wall_clock_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "{:?} steps {} success {:.2} return {:.1}",
            config.algo(),
            env_steps,
            point.success_rate,
            point.mean_return
        );
        curve.push(point);
        Ok(eval.stop_at_success.is_some_and(|s| point.success_rate >= s))
    };

    for _ in 0..iterations {
        let t0 = Instant::now();
        let mut buffer = collect_rollout(&params, &mut slots, seg)?;
        env_steps += batch;
        let t1 = Instant::now();
        times.collect_s += (t1 - t0).as_secs_f64();
        let stats = match config {
            AlgoConfig::Ppo(c) => {
                buffer.compute_gae_scaled(c.gamma, c.gae_lambda, c.reward_scale);
                ppo_update(&mut params, &mut adam, &buffer, c, rng)
            }
            AlgoConfig::A2c(c) => {
                buffer.compute_gae_scaled(c.gamma, 1.0, c.reward_scale);
                a2c_update(&mut params, &mut adam, &buffer, c)
            }
        }
        .map_err(|e| match e {
            Error::NonFinite(what) => {
                Error::NonFinite(format!("{what} at update {updates}, env step {env_steps}"))
            }
            other => other,
        })?;
        times.update_s += t1.elapsed().as_secs_f64();
        last_loss = Some(stats);
        updates += 1;

        if env_steps >= next_eval {
            while next_eval <= env_steps {
                next_eval += interval;
            }
            if evaluate_now(&params, env_steps, &mut curve, &mut times)? {
                break;
            }
        }
    }
    if env_steps > 0 && curve.last().is_none_or(|p| p.env_steps < env_steps) {
        evaluate_now(&params, env_steps, &mut curve, &mut times)?;
    }

    Ok(TrainReport {
        algo: config.algo(),
        curve,
        env_steps,
        updates,
        phase_times: times,
        last_loss,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::corridor_benchmark;
    use crate::policy::StraightLinePolicy;
    use image::GrayImage;

    fn open_grid() -> Arc<OccupancyGrid> {
        let img = GrayImage::from_pixel(200, 200, image::Luma([255]));
        Arc::new(crate::grid::ingest_map(&img, 128, 6.0).unwrap())
    }

    #[test]
    fn oracle_policy_always_arrives_on_open_map() {
        let grid = open_grid();
        let cfg = EnvConfig::desk();
        let oracle = StraightLinePolicy { width: 200.0, height: 200.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let report = evaluate(&oracle, &grid, &cfg, 50, true, &mut rng).unwrap();
        assert_eq!(report.success_rate, 1.0);
        assert_eq!(report.traces.len(), 50);
        for t in &report.traces {
            assert_eq!(t.trajectory.samples.len() as u32, t.steps + 1);
            assert_eq!(t.wall_hits, 0);
        }
    }

    #[test]
    fn trace_session_log_round_trips() {
        let grid = open_grid();
        let oracle = StraightLinePolicy { width: 200.0, height: 200.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let report = evaluate(&oracle, &grid, &EnvConfig::desk(), 3, true, &mut rng).unwrap();
        for t in &report.traces {
            let log = t.session_log();
            assert!(log.lines().last().unwrap().ends_with(",arrived"));
            let back = Trajectory::from_session_log(&log, 1.0).unwrap();
            assert_eq!(back, t.trajectory);
        }
    }

    #[test]
    fn zero_episodes_give_empty_report() {
        let grid = open_grid();
        let oracle = StraightLinePolicy { width: 200.0, height: 200.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = evaluate(&oracle, &grid, &EnvConfig::desk(), 0, true, &mut rng).unwrap();
        assert_eq!(report.episodes, 0);
        assert!(report.traces.is_empty());
    }

    /// The memo shortcut must not change greedy outcomes.
    #[test]
    fn memoized_greedy_matches_plain_rollout() {
        let grid = Arc::new(corridor_benchmark());
        let cfg = EnvConfig { max_steps: 300, ..EnvConfig::desk() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PolicyParams::init_orthogonal(Arch::default(), &mut rng);
        let report = evaluate(&p, &grid, &cfg, 6, true, &mut rng).unwrap();
        for t in &report.traces {
            let mut env = VascEnv::with_endpoints(grid.clone(), cfg.clone(), t.start, t.target).unwrap();
            let mut ret = 0.0;
            while !env.state().done {
                ret += env.step(p.act(&env.observe())).unwrap().reward;
            }
            assert_eq!(ret, t.episode_return);
            assert_eq!(env.state().step_count, t.steps);
        }
    }

    #[test]
    fn zero_budget_returns_initial_params() {
        let grid = Arc::new(corridor_benchmark());
        let cfg = AlgoConfig::Ppo(PpoConfig { total_steps: 0, ..PpoConfig::default() });
        let report = train(&cfg, grid, &EnvConfig::desk(), &EvalConfig::default()).unwrap();
        assert!(report.curve.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let init = PolicyParams::init_orthogonal(Arch::default(), &mut rng);
        assert_eq!(report.params, init);
    }

    #[test]
    fn same_seed_gives_identical_curves() {
        let grid = Arc::new(corridor_benchmark());
        let eval = EvalConfig { interval_steps: 512, episodes: 8, ..EvalConfig::default() };
        for cfg in [
            AlgoConfig::Ppo(PpoConfig { total_steps: 1024, rollout_length: 256, seed: 9, ..PpoConfig::default() }),
            AlgoConfig::A2c(A2cConfig { total_steps: 800, seed: 9, ..A2cConfig::default() }),
        ] {
            let a = train(&cfg, grid.clone(), &EnvConfig::desk(), &eval).unwrap();
            let b = train(&cfg, grid.clone(), &EnvConfig::desk(), &eval).unwrap();
            let strip = |r: &TrainReport| -> Vec<(u64, f64, f64)> {
                r.curve.iter().map(|p| (p.env_steps, p.mean_return, p.success_rate)).collect()
            };
            assert_eq!(strip(&a), strip(&b));
            assert_eq!(a.params, b.params);
            assert!(a.curve.windows(2).all(|w| w[0].env_steps < w[1].env_steps));
            assert_eq!(a.curve.last().unwrap().env_steps, a.env_steps);
        }
    }

    #[test]
    fn curve_csv_header() {
        let csv = curve_csv(&[CurvePoint { env_steps: 10, mean_return: -1.5, success_rate: 0.25, wall_clock_s: 0.5 }]);
        assert_eq!(csv, "env_steps,mean_return,success_rate,wall_clock_s\n10,-1.5,0.25,0.500\n");
    }

    #[test]
    fn algo_parses() {
        assert_eq!("PPO".parse::<Algo>().unwrap(), Algo::Ppo);
        assert!("sac".parse::<Algo>().is_err());
    }
}
