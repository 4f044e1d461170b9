//! wasm-bindgen front end for the planar simple-motion game.
//!
//! One [`Demo`] is one solved game. The page asks it for the `k²` curve,
//! a player's optimal schedule for a given `N`, and the optimal-vs-periodic
//! cost table. Failures come back as strings so the same methods run in
//! native tests.

use dadg_core::nalgebra::DVector;
use dadg_core::schedule::periodic_schedule;
use dadg_core::{AssetTrajectory, GameParameters, GameSolution, Player};
use wasm_bindgen::prelude::*;

const INTERVALS: usize = 1000;
const EPS: f64 = 1e-6;

#[wasm_bindgen]
pub struct Demo {
    solution: GameSolution,
}

fn player(name: &str) -> Result<Player, String> {
    name.parse().map_err(|e: dadg_core::Error| e.to_string())
}

impl Demo {
    pub fn build(omega_a: f64, omega_d: f64, b: f64, noise: f64, t_f: f64) -> Result<Demo, String> {
        let params = GameParameters::simple_motion(omega_a, omega_d, b, b, noise, t_f);
        let asset = AssetTrajectory::stationary(DVector::from_vec(vec![5.0, 0.0]));
        let solution = GameSolution::solve(&params, &asset, INTERVALS).map_err(|e| e.to_string())?;
        Ok(Demo { solution })
    }

    /// `k(t)` read off `K₁₁ = [kκ₁ −k; −k kκ₂] ⊗ I`.
    pub fn k_squared_values(&self) -> Vec<f64> {
        let n = self.solution.params.n;
        self.solution.path.k11.iter().map(|k| k[(0, n)].powi(2)).collect()
    }

    pub fn schedule_for(&self, who: &str, count: usize) -> Result<Vec<f64>, String> {
        let problem = self.solution.problem(player(who)?);
        let (schedule, _) = problem.optimal_for_count(count, EPS).map_err(|e| e.to_string())?;
        Ok(schedule.instants)
    }

    /// Rows `[N, f_optimal, f_periodic]` for `N = 1..=max_count`, flattened.
    pub fn cost_table(&self, who: &str, max_count: usize) -> Result<Vec<f64>, String> {
        let who = player(who)?;
        let problem = self.solution.problem(who);
        let mut out = Vec::with_capacity(3 * max_count);
        for count in 1..=max_count {
            let (_, opt) = problem.optimal_for_count(count, EPS).map_err(|e| e.to_string())?;
            let per =
                problem.tilde_cost(&periodic_schedule(who, count, problem.t_f()), 0.0).map_err(|e| e.to_string())?;
            out.extend([count as f64, opt.f, per.f]);
        }
        Ok(out)
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(omega_a: f64, omega_d: f64, b: f64, noise: f64, t_f: f64) -> Result<Demo, JsValue> {
        Demo::build(omega_a, omega_d, b, noise, t_f).map_err(|e| JsValue::from_str(&e))
    }

    pub fn times(&self) -> Vec<f64> {
        self.solution.path.grid.nodes().collect()
    }

    pub fn k_squared(&self) -> Vec<f64> {
        self.k_squared_values()
    }

    pub fn schedule(&self, who: &str, count: usize) -> Result<Vec<f64>, JsValue> {
        self.schedule_for(who, count).map_err(|e| JsValue::from_str(&e))
    }

    pub fn costs(&self, who: &str, max_count: usize) -> Result<Vec<f64>, JsValue> {
        self.cost_table(who, max_count).map_err(|e| JsValue::from_str(&e))
    }
}
