//! The four verbs. Each returns the list of files it wrote.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dadg_core::nalgebra::DMatrix;
use dadg_core::riccati::CaseStudyRiccati;
use dadg_core::schedule::{periodic_schedule, read_schedules_csv, write_schedules_csv};
use dadg_core::simulator::MonteCarloSummary;
use dadg_core::{
    AnalyticCost, GameParameters, GameSolution, ObservationSchedule, Player, ScheduleCost, SimulationConfig,
    SimulationModel,
};
use serde::Serialize;

use crate::config::{CountSpec, Format, RunConfig, ScheduleChoice};
use crate::CliError;

const PLAYERS: [Player; 2] = [Player::Attacker, Player::Defender];

/// Tolerances reported in `compare_report.json`.
const MC_SIGMAS: f64 = 3.0;
const RESIDUAL_TOL: f64 = 1e-4;
const REDUCTION_TARGET: f64 = 25.0;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create(path)?))
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let io = |e: csv::Error| CliError::Core(e.into());
    let mut wtr = csv_writer(path)?;
    wtr.write_record(header).map_err(io)?;
    for row in rows {
        wtr.write_record(row).map_err(io)?;
    }
    wtr.flush().map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn solve(cfg: &RunConfig) -> Result<GameSolution, CliError> {
    let params = cfg.game_parameters()?;
    solve_with(cfg, &params)
}

fn solve_with(cfg: &RunConfig, params: &GameParameters) -> Result<GameSolution, CliError> {
    Ok(GameSolution::solve(params, &cfg.asset_trajectory()?, cfg.grid.intervals)?)
}

/// `(b_a, b_d)` when the game is the simple-motion one with a closed form:
/// `A = 0`, `B̃ = b·I`, terminal weights only.
fn simple_motion_gains(p: &GameParameters) -> Option<(f64, f64)> {
    let is_zero = |m: &DMatrix<f64>| m.iter().all(|v| *v == 0.0);
    let scalar = |m: &DMatrix<f64>| {
        let b = m[(0, 0)];
        (m.is_square() && *m == DMatrix::identity(p.n, p.n) * b).then_some(b)
    };
    if !(is_zero(&p.a_a) && is_zero(&p.a_d) && p.omega_a_i == 0.0 && p.omega_d_i == 0.0) {
        return None;
    }
    if !(p.omega_a > 0.0 && p.omega_d > 0.0) {
        return None;
    }
    Some((scalar(&p.b_a)?, scalar(&p.b_d)?))
}

pub fn riccati(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sol = solve(cfg)?;
    let mut written = Vec::new();
    if !cfg.output.wants(Format::Csv) {
        return Ok(written);
    }
    let p = &sol.params;
    let closed = match simple_motion_gains(p) {
        Some((b_a, b_d)) => Some(CaseStudyRiccati::new(p.omega_a, p.omega_d, b_a, b_d, p.t_f)?),
        None => None,
    };
    let nodes: Vec<f64> = sol.path.grid.nodes().collect();
    let mut extra = Vec::new();
    if let Some(cs) = &closed {
        extra.push(("k2".to_string(), nodes.iter().map(|&t| cs.k(t).powi(2)).collect()));
    }
    let path = out.join("riccati_path.csv");
    let mut w = create(&path)?;
    sol.path.write_csv(&mut w, &extra)?;
    finish(w, &path)?;
    written.push(path);

    if let Some(cs) = closed {
        let path = out.join("closed_form_check.csv");
        let rows = nodes.iter().zip(&sol.path.k11).map(|(&t, k)| {
            let exact = cs.k11(t, p.n);
            let abs = (k - &exact).amax();
            let rel = abs / exact.amax();
            let k_val = cs.k(t);
            [t, k_val, k_val * k_val, cs.kappa1(t), cs.kappa2(t), abs, rel].map(|v| v.to_string())
        });
        write_rows(&path, &["t", "k", "k2", "kappa1", "kappa2", "abs_error", "rel_error"], rows)?;
        written.push(path);
    }
    Ok(written)
}

/// One player's optimized schedule for the configured count.
struct Plan {
    schedule: ObservationSchedule,
    cost: ScheduleCost,
}

fn plan(sol: &GameSolution, cfg: &RunConfig, player: Player) -> Result<Plan, CliError> {
    let problem = sol.problem(player);
    let eps = cfg.optimizer.eps;
    let (schedule, cost) = match cfg.optimizer.count {
        CountSpec::Fixed(count) => problem.optimal_for_count(count, eps)?,
        CountSpec::Auto(_) => {
            let (_, schedule, cost) =
                problem.optimal_observation_count(sol.params.obs_cost, cfg.optimizer.n_cap, eps)?;
            (schedule, cost)
        }
    };
    Ok(Plan { schedule, cost })
}

fn periodic_like(sol: &GameSolution, plan: &Plan) -> ObservationSchedule {
    periodic_schedule(plan.schedule.player, plan.schedule.len(), sol.params.t_f)
}

pub fn optimize(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sol = solve(cfg)?;
    let t_f = sol.params.t_f;
    let obs_cost = sol.params.obs_cost;
    let eps = cfg.optimizer.eps;
    let plans = [plan(&sol, cfg, Player::Attacker)?, plan(&sol, cfg, Player::Defender)?];
    let periodic = plans.each_ref().map(|p| periodic_like(&sol, p));

    let [lo, hi] = cfg.optimizer.count_range;
    let mut cost_rows = Vec::new();
    for player in PLAYERS {
        let problem = sol.problem(player);
        for count in lo..=hi {
            let (_, opt) = problem.optimal_for_count(count, eps)?;
            let per = problem.tilde_cost(&periodic_schedule(player, count, t_f), 0.0)?;
            let charge = obs_cost * count as f64;
            cost_rows.push(vec![
                player.to_string(),
                count.to_string(),
                opt.f.to_string(),
                per.f.to_string(),
                (opt.f + charge).to_string(),
                (per.f + charge).to_string(),
            ]);
        }
    }

    let mut sweep_rows = Vec::new();
    for player in PLAYERS {
        let problem = sol.problem(player);
        let f_empty = problem.tilde_cost(&ObservationSchedule::empty(player), 0.0)?.f;
        for &o in &cfg.optimizer.obs_cost_sweep {
            let (n_star, _, cost) = problem.optimal_observation_count(o, cfg.optimizer.n_cap, eps)?;
            sweep_rows.push(vec![
                player.to_string(),
                o.to_string(),
                n_star.to_string(),
                cost.f.to_string(),
                cost.total.to_string(),
                (f_empty / o).to_string(),
            ]);
        }
    }

    let mut omega_rows = Vec::new();
    for &omega_a in &cfg.optimizer.omega_a_sweep {
        let mut params = sol.params.clone();
        params.omega_a = omega_a;
        let swept = solve_with(cfg, &params)?;
        for player in PLAYERS {
            let p = plan(&swept, cfg, player)?;
            for (i, t) in p.schedule.instants.iter().enumerate() {
                omega_rows.push(vec![omega_a.to_string(), player.to_string(), (i + 1).to_string(), t.to_string()]);
            }
        }
    }

    let mut written = Vec::new();
    if !cfg.output.wants(Format::Csv) {
        return Ok(written);
    }
    for (name, schedules) in [
        ("schedule_optimal.csv", [&plans[0].schedule, &plans[1].schedule]),
        ("schedule_periodic.csv", [&periodic[0], &periodic[1]]),
    ] {
        let path = out.join(name);
        let mut w = create(&path)?;
        write_schedules_csv(&mut w, &schedules)?;
        finish(w, &path)?;
        written.push(path);
    }

    let mut residual_rows = Vec::new();
    for p in &plans {
        let residuals = sol.problem(p.schedule.player).residuals(&p.schedule)?;
        for (i, (t, r)) in p.schedule.instants.iter().zip(residuals).enumerate() {
            residual_rows.push(vec![p.schedule.player.to_string(), (i + 1).to_string(), t.to_string(), r.to_string()]);
        }
    }
    let path = out.join("residuals.csv");
    write_rows(&path, &["player", "index", "instant", "residual"], residual_rows)?;
    written.push(path);

    let path = out.join("cost_vs_N.csv");
    write_rows(&path, &["player", "N", "f_optimal", "f_periodic", "total_optimal", "total_periodic"], cost_rows)?;
    written.push(path);

    if !cfg.optimizer.obs_cost_sweep.is_empty() {
        let path = out.join("nstar_vs_O.csv");
        write_rows(&path, &["player", "obs_cost", "n_star", "f_optimal", "total", "n_bound"], sweep_rows)?;
        written.push(path);
    }
    if !cfg.optimizer.omega_a_sweep.is_empty() {
        let path = out.join("schedules_vs_omega.csv");
        write_rows(&path, &["omega_a", "player", "index", "instant"], omega_rows)?;
        written.push(path);
    }
    Ok(written)
}

fn schedules_for(
    cfg: &RunConfig,
    sol: &GameSolution,
    choice: ScheduleChoice,
) -> Result<[ObservationSchedule; 2], CliError> {
    Ok(match choice {
        ScheduleChoice::Empty => PLAYERS.map(ObservationSchedule::empty),
        ScheduleChoice::Optimal => {
            [plan(sol, cfg, Player::Attacker)?.schedule, plan(sol, cfg, Player::Defender)?.schedule]
        }
        ScheduleChoice::Periodic => {
            let a = plan(sol, cfg, Player::Attacker)?;
            let d = plan(sol, cfg, Player::Defender)?;
            [periodic_like(sol, &a), periodic_like(sol, &d)]
        }
        ScheduleChoice::File => {
            let path =
                cfg.schedule_path().ok_or_else(|| CliError::Config("at `simulation.schedule_file`: missing".into()))?;
            let file = File::open(&path).map_err(|e| {
                CliError::Config(format!("at `simulation.schedule_file`: cannot read {}: {e}", path.display()))
            })?;
            let (a, d) = read_schedules_csv(file, sol.params.t_f)?;
            [a, d]
        }
    })
}

fn run_monte_carlo(
    cfg: &RunConfig,
    sol: &GameSolution,
    schedules: &[ObservationSchedule; 2],
) -> Result<(SimulationModel, MonteCarloSummary), CliError> {
    let config = SimulationConfig {
        master_seed: cfg.simulation.seed,
        trials: cfg.simulation.trials,
        dt: cfg.dt(),
        schedule_a: schedules[0].clone(),
        schedule_d: schedules[1].clone(),
        probe_times: cfg.simulation.probe_times.clone(),
    };
    let model = SimulationModel::new(sol, &config)?;
    let summary = model.monte_carlo()?;
    Ok((model, summary))
}

#[derive(Debug, Serialize)]
struct AnalyticReport {
    f_a: f64,
    f_d: f64,
    noise_integral: f64,
    initial_value: Option<f64>,
    observation: f64,
    total: Option<f64>,
}

impl From<AnalyticCost> for AnalyticReport {
    fn from(c: AnalyticCost) -> Self {
        AnalyticReport {
            f_a: c.f_a,
            f_d: c.f_d,
            noise_integral: c.noise_integral,
            initial_value: c.initial_value,
            observation: c.observation,
            total: c.total,
        }
    }
}

#[derive(Debug, Serialize)]
struct SchedulePair<'a> {
    attacker: &'a [f64],
    defender: &'a [f64],
}

#[derive(Debug, Serialize)]
struct SimulateReport<'a> {
    config: &'a RunConfig,
    seed: u64,
    schedules: SchedulePair<'a>,
    analytic: AnalyticReport,
    monte_carlo: MonteCarloSummary,
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sol = solve(cfg)?;
    let schedules = schedules_for(cfg, &sol, cfg.simulation.schedule)?;
    let (model, summary) = run_monte_carlo(cfg, &sol, &schedules)?;
    let analytic = sol.analytic_total_cost(&schedules[0], &schedules[1])?.into();
    let mut written = Vec::new();
    if cfg.output.wants(Format::Json) {
        let report = SimulateReport {
            config: cfg,
            seed: cfg.simulation.seed,
            schedules: SchedulePair { attacker: &schedules[0].instants, defender: &schedules[1].instants },
            analytic,
            monte_carlo: summary,
        };
        let path = out.join("mc_summary.json");
        write_json(&path, &report)?;
        written.push(path);
    }
    let traces = cfg.simulation.traces.min(cfg.simulation.trials);
    if traces > 0 && cfg.output.wants(Format::Csv) {
        let dir = out.join("traces");
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
        for trial in 0..traces {
            let path = dir.join(format!("trial_{trial}.csv"));
            let mut w = create(&path)?;
            model.trace_trial(trial as u64)?.write_csv(&mut w)?;
            finish(w, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
struct PlayerComparison {
    player: String,
    count: usize,
    f_optimal: f64,
    f_periodic: f64,
    reduction_percent: f64,
    max_abs_residual: f64,
    pass_reduction: bool,
    pass_residuals: bool,
}

#[derive(Debug, Serialize)]
struct ArmComparison {
    arm: &'static str,
    analytic_total: Option<f64>,
    mc_mean: f64,
    mc_stderr: f64,
    z_score: Option<f64>,
    pass: Option<bool>,
}

#[derive(Debug, Serialize)]
struct CompareReport {
    seed: u64,
    trials: usize,
    dt: f64,
    tolerances: Tolerances,
    players: Vec<PlayerComparison>,
    arms: Vec<ArmComparison>,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct Tolerances {
    mc_sigmas: f64,
    residual: f64,
    reduction_percent: f64,
}

/// `100 (f_periodic − f_optimal) / f_periodic`, zero when both vanish.
pub fn reduction_percent(f_optimal: f64, f_periodic: f64) -> f64 {
    if f_periodic == 0.0 {
        0.0
    } else {
        100.0 * (f_periodic - f_optimal) / f_periodic
    }
}

pub fn compare(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sol = solve(cfg)?;
    let plans = [plan(&sol, cfg, Player::Attacker)?, plan(&sol, cfg, Player::Defender)?];
    let periodic = plans.each_ref().map(|p| periodic_like(&sol, p));

    let mut players = Vec::new();
    for (p, per) in plans.iter().zip(&periodic) {
        let problem = sol.problem(p.schedule.player);
        let f_periodic = problem.tilde_cost(per, 0.0)?.f;
        let reduction = reduction_percent(p.cost.f, f_periodic);
        let max_res = problem.residuals(&p.schedule)?.into_iter().fold(0.0, |m: f64, r| m.max(r.abs()));
        players.push(PlayerComparison {
            player: p.schedule.player.to_string(),
            count: p.schedule.len(),
            f_optimal: p.cost.f,
            f_periodic,
            reduction_percent: reduction,
            max_abs_residual: max_res,
            pass_reduction: p.schedule.is_empty() || reduction >= REDUCTION_TARGET,
            pass_residuals: max_res <= RESIDUAL_TOL,
        });
    }

    let arms_input = [
        ("empty", PLAYERS.map(ObservationSchedule::empty)),
        ("optimal", [plans[0].schedule.clone(), plans[1].schedule.clone()]),
        ("periodic", periodic.clone()),
    ];
    let mut arms = Vec::new();
    for (arm, schedules) in arms_input {
        let (_, mc) = run_monte_carlo(cfg, &sol, &schedules)?;
        let analytic = sol.analytic_total_cost(&schedules[0], &schedules[1])?.total;
        let z = analytic.map(|a| if mc.stderr > 0.0 { (mc.mean - a) / mc.stderr } else { 0.0 });
        let pass = analytic.map(|a| (mc.mean - a).abs() <= MC_SIGMAS * mc.stderr);
        arms.push(ArmComparison {
            arm,
            analytic_total: analytic,
            mc_mean: mc.mean,
            mc_stderr: mc.stderr,
            z_score: z,
            pass,
        });
    }

    let pass =
        players.iter().all(|p| p.pass_reduction && p.pass_residuals) && arms.iter().all(|a| a.pass != Some(false));
    let report = CompareReport {
        seed: cfg.simulation.seed,
        trials: cfg.simulation.trials,
        dt: cfg.dt(),
        tolerances: Tolerances { mc_sigmas: MC_SIGMAS, residual: RESIDUAL_TOL, reduction_percent: REDUCTION_TARGET },
        players,
        arms,
        pass,
    };
    let mut written = Vec::new();
    if cfg.output.wants(Format::Json) {
        let path = out.join("compare_report.json");
        write_json(&path, &report)?;
        written.push(path);
    }
    Ok(written)
}
