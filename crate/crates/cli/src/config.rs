//! Run configuration (JSON). Unknown keys are rejected everywhere, and parse
//! errors carry the JSON path of the offending field.

use std::path::{Path, PathBuf};

use dadg_core::linalg::from_rows;
use dadg_core::nalgebra::DVector;
use dadg_core::{AssetTrajectory, GameParameters};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub game: GameConfig,
    pub asset: AssetConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    pub n: usize,
    pub a_a: Vec<Vec<f64>>,
    pub a_d: Vec<Vec<f64>>,
    pub b_a: Vec<Vec<f64>>,
    pub b_d: Vec<Vec<f64>>,
    pub c_a: Vec<Vec<f64>>,
    pub c_d: Vec<Vec<f64>>,
    #[serde(default)]
    pub omega_a_i: f64,
    #[serde(default)]
    pub omega_d_i: f64,
    pub omega_a: f64,
    pub omega_d: f64,
    pub obs_cost: f64,
    pub t_f: f64,
    pub x_a0: Vec<f64>,
    pub x_d0: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AssetConfig {
    Linear { generator: Vec<Vec<f64>>, initial: Vec<f64> },
    Sampled { times: Vec<f64>, states: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub intervals: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { intervals: dadg_core::riccati::DEFAULT_INTERVALS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

/// A fixed observation count or `"auto"` (minimize `f*(N) + O·N`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum CountSpec {
    Fixed(usize),
    Auto(Auto),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_count")]
    pub count: CountSpec,
    /// Inclusive `[min, max]` for `cost_vs_N.csv`.
    #[serde(default = "default_count_range")]
    pub count_range: [usize; 2],
    #[serde(default)]
    pub obs_cost_sweep: Vec<f64>,
    #[serde(default)]
    pub omega_a_sweep: Vec<f64>,
    /// Upper limit on `N` for the automatic count.
    #[serde(default)]
    pub n_cap: Option<usize>,
}

fn default_eps() -> f64 {
    1e-6
}

fn default_count() -> CountSpec {
    CountSpec::Fixed(5)
}

fn default_count_range() -> [usize; 2] {
    [1, 10]
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            eps: default_eps(),
            count: default_count(),
            count_range: default_count_range(),
            obs_cost_sweep: Vec::new(),
            omega_a_sweep: Vec::new(),
            n_cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleChoice {
    Empty,
    Optimal,
    Periodic,
    File,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Defaults to `t_f / 1000`.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleChoice,
    /// `player,index,instant` CSV, used with `"schedule": "file"`.
    #[serde(default)]
    pub schedule_file: Option<PathBuf>,
    /// Number of trials to write out as per-step traces.
    #[serde(default)]
    pub traces: usize,
    #[serde(default)]
    pub probe_times: Vec<f64>,
}

fn default_trials() -> usize {
    1000
}

fn default_schedule() -> ScheduleChoice {
    ScheduleChoice::Optimal
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            seed: 0,
            trials: default_trials(),
            dt: None,
            schedule: default_schedule(),
            schedule_file: None,
            traces: 0,
            probe_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    /// Which artifact kinds to write; both by default.
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: default_directory(), formats: default_formats() }
    }
}

impl OutputConfig {
    pub fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.inner()))
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// The schedule file, resolved against the config file's directory.
    pub fn schedule_path(&self) -> Option<PathBuf> {
        self.simulation.schedule_file.as_ref().map(|f| self.base_dir.join(f))
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.optimizer.eps.is_nan() || self.optimizer.eps <= 0.0 {
            return bad(format!("at `optimizer.eps`: must be positive, got {}", self.optimizer.eps));
        }
        let [lo, hi] = self.optimizer.count_range;
        if lo > hi {
            return bad(format!("at `optimizer.count_range`: [{lo}, {hi}] is empty"));
        }
        if let Some(o) = self.optimizer.obs_cost_sweep.iter().find(|o| !(o.is_finite() && **o > 0.0)) {
            return bad(format!("at `optimizer.obs_cost_sweep`: costs must be positive, got {o}"));
        }
        if self.simulation.trials == 0 {
            return bad("at `simulation.trials`: must be at least 1".into());
        }
        if self.simulation.schedule == ScheduleChoice::File && self.simulation.schedule_file.is_none() {
            return bad("at `simulation.schedule_file`: required when schedule is \"file\"".into());
        }
        self.game_parameters()?;
        self.asset_trajectory()?;
        Ok(())
    }

    pub fn game_parameters(&self) -> Result<GameParameters, CliError> {
        let g = &self.game;
        let n = g.n;
        let mat = |rows: &Vec<Vec<f64>>, cols: usize, name: &str| {
            from_rows(rows, n, cols, &format!("game.{name}")).map_err(CliError::from)
        };
        let cols = |rows: &Vec<Vec<f64>>| rows.first().map_or(0, |r| r.len());
        let params = GameParameters {
            n,
            a_a: mat(&g.a_a, n, "a_a")?,
            a_d: mat(&g.a_d, n, "a_d")?,
            b_a: mat(&g.b_a, cols(&g.b_a), "b_a")?,
            b_d: mat(&g.b_d, cols(&g.b_d), "b_d")?,
            c_a: mat(&g.c_a, n, "c_a")?,
            c_d: mat(&g.c_d, n, "c_d")?,
            omega_a_i: g.omega_a_i,
            omega_d_i: g.omega_d_i,
            omega_a: g.omega_a,
            omega_d: g.omega_d,
            obs_cost: g.obs_cost,
            t_f: g.t_f,
            x_a0: DVector::from_vec(g.x_a0.clone()),
            x_d0: DVector::from_vec(g.x_d0.clone()),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn asset_trajectory(&self) -> Result<AssetTrajectory, CliError> {
        let n = self.game.n;
        let asset = match &self.asset {
            AssetConfig::Linear { generator, initial } => AssetTrajectory::Linear {
                generator: from_rows(generator, n, n, "asset.generator")?,
                initial: DVector::from_vec(initial.clone()),
            },
            AssetConfig::Sampled { times, states } => AssetTrajectory::Sampled {
                times: times.clone(),
                states: states.iter().map(|s| DVector::from_vec(s.clone())).collect(),
            },
        };
        asset.validate(n, self.game.t_f)?;
        Ok(asset)
    }

    pub fn dt(&self) -> f64 {
        self.simulation.dt.unwrap_or(self.game.t_f / 1000.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "game": {
            "n": 1, "a_a": [[0.0]], "a_d": [[0.0]], "b_a": [[1.0]], "b_d": [[0.5]],
            "c_a": [[1.0]], "c_d": [[1.0]], "omega_a": 1.0, "omega_d": 2.0,
            "obs_cost": 0.5, "t_f": 4.0, "x_a0": [1.0], "x_d0": [0.0]
        },
        "asset": { "kind": "sampled", "times": [0.0, 4.0], "states": [[2.0], [3.0]] }
    }"#;

    #[test]
    fn defaults_fill_optional_sections() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.grid.intervals, 2000);
        assert_eq!(cfg.optimizer.count, CountSpec::Fixed(5));
        assert_eq!(cfg.optimizer.count_range, [1, 10]);
        assert_eq!(cfg.simulation.schedule, ScheduleChoice::Optimal);
        assert!(cfg.output.wants(Format::Csv) && cfg.output.wants(Format::Json));
        assert_eq!(cfg.dt(), 4e-3);
    }

    #[test]
    fn auto_count_parses() {
        let text = MINIMAL.replacen("\"asset\"", "\"optimizer\": {\"count\": \"auto\", \"n_cap\": 4},\n\"asset\"", 1);
        let cfg = RunConfig::from_json(&text).unwrap();
        assert_eq!(cfg.optimizer.count, CountSpec::Auto(Auto::Auto));
        assert_eq!(cfg.optimizer.n_cap, Some(4));
    }

    #[test]
    fn errors_name_the_field() {
        let text = MINIMAL.replace("\"kind\": \"sampled\"", "\"kind\": \"orbit\"");
        let err = RunConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("asset"), "{err}");
        let text = MINIMAL.replace("\"t_f\": 4.0", "\"t_f\": 4.0, \"t_0\": 0.0");
        let err = RunConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("game") && err.contains("t_0"), "{err}");
        let text = MINIMAL.replace("\"x_d0\": [0.0]", "\"x_d0\": [0.0, 1.0]");
        let err = RunConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("x_d0"), "{err}");
    }

    #[test]
    fn schedule_file_resolves_next_to_config() {
        let mut cfg = RunConfig::from_json(MINIMAL).unwrap();
        cfg.simulation.schedule_file = Some(PathBuf::from("s.csv"));
        cfg.base_dir = PathBuf::from("/data/runs");
        assert_eq!(cfg.schedule_path().unwrap(), PathBuf::from("/data/runs/s.csv"));
    }
}
