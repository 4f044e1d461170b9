//! A solved game: everything downstream code needs, computed once.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::game::{
    build_aggregate, truncated_blocks, AggregateSystem, AssetTrajectory, GameParameters, TruncatedBlocks,
};
use crate::riccati::{noise_integral, solve_full_k, solve_k11, solve_s, RiccatiPath, TimeGrid};
use crate::schedule::{ObservationSchedule, Player, ScheduleProblem};

#[derive(Debug, Clone)]
pub struct GameSolution {
    pub params: GameParameters,
    pub asset: AssetTrajectory,
    pub blocks: TruncatedBlocks,
    pub aggregate: AggregateSystem,
    /// `K₁₁`, `s`, `φ_a`, `φ_d`, and `K` when the asset is linear.
    pub path: RiccatiPath,
    pub attacker: ScheduleProblem,
    pub defender: ScheduleProblem,
}

impl GameSolution {
    pub fn solve(params: &GameParameters, asset: &AssetTrajectory, intervals: usize) -> Result<Self> {
        let blocks = truncated_blocks(params)?;
        let aggregate = build_aggregate(params, asset)?;
        let grid = TimeGrid::new(params.t_f, intervals)?;
        let path = solve_k11(&blocks, &aggregate.q11(), &aggregate.qf11(), grid)?;
        let mut path = solve_s(path, &blocks, &aggregate.q12(), &aggregate.qf12(), asset)?;
        if aggregate.has_asset_generator {
            path.k_full = Some(solve_full_k(&aggregate, grid)?);
        }
        let attacker = ScheduleProblem::attacker(params, &path)?;
        let defender = ScheduleProblem::defender(params, &path)?;
        Ok(GameSolution { params: params.clone(), asset: asset.clone(), blocks, aggregate, path, attacker, defender })
    }

    pub fn problem(&self, player: Player) -> &ScheduleProblem {
        match player {
            Player::Attacker => &self.attacker,
            Player::Defender => &self.defender,
        }
    }

    /// `[x_a(0); x_d(0); x_s(0)]`
    pub fn initial_state(&self) -> DVector<f64> {
        let n = self.params.n;
        let xs0 = self.asset.state_at(0.0);
        DVector::from_fn(3 * n, |i, _| match i / n {
            0 => self.params.x_a0[i],
            1 => self.params.x_d0[i - n],
            _ => xs0[i - 2 * n],
        })
    }

    /// The cost under Nash play split into its six terms. The two constant
    /// terms need the full `K` and are `None` for a sampled asset.
    pub fn analytic_total_cost(
        &self,
        schedule_a: &ObservationSchedule,
        schedule_d: &ObservationSchedule,
    ) -> Result<AnalyticCost> {
        let f_a = self.attacker.tilde_cost(schedule_a, 0.0)?.f;
        let f_d = self.defender.tilde_cost(schedule_d, 0.0)?.f;
        let noise = noise_integral(&self.path, &self.params.c_a, &self.params.c_d);
        let initial = self.path.k_full.as_ref().map(|k| {
            let x0 = self.initial_state();
            quadratic_form(&k[0], &x0)
        });
        let observation = self.params.obs_cost * (schedule_a.len() as f64 - schedule_d.len() as f64);
        let total = initial.map(|v| f_a - f_d + noise + v + observation);
        Ok(AnalyticCost { f_a, f_d, noise_integral: noise, initial_value: initial, observation, total })
    }
}

fn quadratic_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * m * x)[(0, 0)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticCost {
    /// Attacker's schedule-dependent term.
    pub f_a: f64,
    /// Defender's schedule-dependent term (enters the total with a minus sign).
    pub f_d: f64,
    /// `∫₀^{t_f} Tr(K C Cᵀ) dt`
    pub noise_integral: f64,
    /// `x₀ᵀ K(0) x₀`
    pub initial_value: Option<f64>,
    /// `O (N_a − N_d)`
    pub observation: f64,
    pub total: Option<f64>,
}
