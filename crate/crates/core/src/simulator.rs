//! Monte Carlo rollouts of the game under the Nash feedback with scheduled
//! observations.
//!
//! Euler–Maruyama on a fixed step. At step `k` observations are applied
//! first, then controls are formed from `K₁₁(t_k)` and `s(t_k)`, the running
//! cost is accumulated at the left endpoint, and states and estimates move
//! one step. Each player propagates its estimate with its model of the
//! opponent's control, i.e. the opponent's feedback evaluated at
//! `[own state; estimate]`.
//!
//! Trial `i` draws its noise from ChaCha8 seeded with the master seed on
//! stream `i`, so results do not depend on how trials are scheduled across
//! threads; the reduction runs in trial order.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::schedule::ObservationSchedule;
use crate::solution::GameSolution;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub master_seed: u64,
    pub trials: usize,
    pub dt: f64,
    pub schedule_a: ObservationSchedule,
    pub schedule_d: ObservationSchedule,
    /// Times at which the estimation errors are sampled for statistics.
    pub probe_times: Vec<f64>,
}

/// Row-major dense block, `rows × cols`.
#[derive(Debug, Clone)]
struct Flat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Flat {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter().copied());
        }
        Flat { rows: m.nrows(), cols: m.ncols(), data }
    }

    /// `out = self · x`
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `out += scale · self · x`
    fn apply_add(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o += scale * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Per-step data shared by every trial.
#[derive(Debug, Clone)]
pub struct SimulationModel {
    n: usize,
    m_a: usize,
    m_d: usize,
    steps: usize,
    dt: f64,
    t_f: f64,
    a_a: Flat,
    a_d: Flat,
    b_a: Flat,
    b_d: Flat,
    c_a: Flat,
    c_d: Flat,
    /// `u_a = G_a [x_a; x̂₁,d] + g_a` with `G_a = −B̃_aᵀ K₁₁^{top}`.
    gain_a: Vec<Flat>,
    offset_a: Vec<Vec<f64>>,
    /// `u_d = G_d [x̂₂,a; x_d] + g_d` with `G_d = B̃_dᵀ K₁₁^{bottom}`.
    gain_d: Vec<Flat>,
    offset_d: Vec<Vec<f64>>,
    asset: Vec<Vec<f64>>,
    obs_a: Vec<bool>,
    obs_d: Vec<bool>,
    probe_steps: Vec<usize>,
    weights: [f64; 4],
    observation_term: f64,
    x_a0: Vec<f64>,
    x_d0: Vec<f64>,
    seed: u64,
    trials: usize,
    /// Largest distance between a requested instant and its step.
    pub snap_distance: f64,
}

fn snap(times: &[f64], dt: f64, steps: usize) -> (Vec<usize>, f64) {
    let mut worst = 0.0_f64;
    let idx = times
        .iter()
        .map(|&t| {
            let k = ((t / dt).round() as usize).min(steps);
            worst = worst.max((k as f64 * dt - t).abs());
            k
        })
        .collect();
    (idx, worst)
}

impl SimulationModel {
    pub fn new(solution: &GameSolution, config: &SimulationConfig) -> Result<Self> {
        let params = &solution.params;
        let t_f = params.t_f;
        if !(config.dt.is_finite() && config.dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive, got {}", config.dt)));
        }
        let steps = (t_f / config.dt).round() as usize;
        if steps == 0 || (steps as f64 * config.dt - t_f).abs() > 1e-12 * t_f.max(1.0) {
            return Err(Error::invalid(format!("dt = {} does not divide t_f = {t_f}", config.dt)));
        }
        if config.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        config.schedule_a.validate(t_f)?;
        config.schedule_d.validate(t_f)?;
        if let Some(bad) = config.probe_times.iter().find(|t| !(0.0..=t_f).contains(*t)) {
            return Err(Error::invalid(format!("probe time {bad} outside [0, {t_f}]")));
        }
        let n = params.n;
        let dt = t_f / steps as f64;
        let path = &solution.path;

        let mut gain_a = Vec::with_capacity(steps + 1);
        let mut gain_d = Vec::with_capacity(steps + 1);
        let mut offset_a = Vec::with_capacity(steps + 1);
        let mut offset_d = Vec::with_capacity(steps + 1);
        let mut asset = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let t = if k == steps { t_f } else { k as f64 * dt };
            let k11 = path.k11_at(t);
            let s = path.s_at(t);
            let top = k11.rows(0, n);
            let bottom = k11.rows(n, n);
            gain_a.push(Flat::from(&(-(params.b_a.transpose() * top))));
            gain_d.push(Flat::from(&(params.b_d.transpose() * bottom)));
            offset_a.push((-(params.b_a.transpose() * s.rows(0, n))).iter().copied().collect());
            offset_d.push((params.b_d.transpose() * s.rows(n, n)).iter().copied().collect());
            asset.push(solution.asset.state_at(t).iter().copied().collect());
        }

        let (ka, snap_a) = snap(&config.schedule_a.instants, dt, steps);
        let (kd, snap_d) = snap(&config.schedule_d.instants, dt, steps);
        let mut obs_a = vec![false; steps + 1];
        let mut obs_d = vec![false; steps + 1];
        ka.into_iter().for_each(|k| obs_a[k] = true);
        kd.into_iter().for_each(|k| obs_d[k] = true);
        let (probe_steps, _) = snap(&config.probe_times, dt, steps);

        Ok(SimulationModel {
            n,
            m_a: params.m_a(),
            m_d: params.m_d(),
            steps,
            dt,
            t_f,
            a_a: Flat::from(&params.a_a),
            a_d: Flat::from(&params.a_d),
            b_a: Flat::from(&params.b_a),
            b_d: Flat::from(&params.b_d),
            c_a: Flat::from(&params.c_a),
            c_d: Flat::from(&params.c_d),
            gain_a,
            offset_a,
            gain_d,
            offset_d,
            asset,
            obs_a,
            obs_d,
            probe_steps,
            weights: [params.omega_a_i, params.omega_d_i, params.omega_a, params.omega_d],
            observation_term: params.obs_cost * (config.schedule_a.len() as f64 - config.schedule_d.len() as f64),
            x_a0: params.x_a0.iter().copied().collect(),
            x_d0: params.x_d0.iter().copied().collect(),
            seed: config.master_seed,
            trials: config.trials,
            snap_distance: snap_a.max(snap_d),
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn probe_times(&self) -> Vec<f64> {
        self.probe_steps.iter().map(|&k| self.time(k)).collect()
    }

    fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t_f
        } else {
            k as f64 * self.dt
        }
    }

    /// One rollout; `trace` collects per-step rows when given.
    fn run(&self, trial: u64, mut trace: Option<&mut SimulationTrace>) -> Result<TrialOutcome> {
        let n = self.n;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial);
        let sqrt_dt = self.dt.sqrt();

        let mut x_a = self.x_a0.clone();
        let mut x_d = self.x_d0.clone();
        let mut xh_d = self.x_d0.clone();
        let mut xh_a = self.x_a0.clone();
        let mut z = vec![0.0; 2 * n];
        let mut u_a = vec![0.0; self.m_a];
        let mut u_d = vec![0.0; self.m_d];
        let mut u_a_model = vec![0.0; self.m_a];
        let mut u_d_model = vec![0.0; self.m_d];
        let mut u_full = vec![0.0; self.m_a.max(self.m_d)];
        let mut xi = vec![0.0; n];
        let mut next = vec![0.0; n];

        let [wa_i, wd_i, wa, wd] = self.weights;
        let mut control = 0.0;
        let mut state = 0.0;
        let mut mismatch_a = 0.0;
        let mut mismatch_d = 0.0;
        let mut probes_d = Vec::with_capacity(self.probe_steps.len());
        let mut probes_a = Vec::with_capacity(self.probe_steps.len());

        let stack = |z: &mut [f64], top: &[f64], bottom: &[f64]| {
            z[..n].copy_from_slice(top);
            z[n..].copy_from_slice(bottom);
        };
        let dist2 = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let norm2 = |p: &[f64]| p.iter().map(|a| a * a).sum::<f64>();

        for k in 0..=self.steps {
            if self.obs_a[k] {
                xh_d.copy_from_slice(&x_d);
            }
            if self.obs_d[k] {
                xh_a.copy_from_slice(&x_a);
            }
            let (ga, gd) = (&self.gain_a[k], &self.gain_d[k]);
            let (oa, od) = (&self.offset_a[k], &self.offset_d[k]);

            stack(&mut z, &x_a, &xh_d);
            ga.apply(&z, &mut u_a);
            gd.apply(&z, &mut u_d_model);
            u_a.iter_mut().zip(oa).for_each(|(u, o)| *u += o);
            u_d_model.iter_mut().zip(od).for_each(|(u, o)| *u += o);

            stack(&mut z, &xh_a, &x_d);
            gd.apply(&z, &mut u_d);
            ga.apply(&z, &mut u_a_model);
            u_d.iter_mut().zip(od).for_each(|(u, o)| *u += o);
            u_a_model.iter_mut().zip(oa).for_each(|(u, o)| *u += o);

            for _ in self.probe_steps.iter().filter(|&&p| p == k) {
                probes_d.push(x_d.iter().zip(&xh_d).map(|(a, b)| a - b).collect::<Vec<_>>());
                probes_a.push(x_a.iter().zip(&xh_a).map(|(a, b)| a - b).collect::<Vec<_>>());
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(
                    self.time(k),
                    &x_a,
                    &x_d,
                    &self.asset[k],
                    &xh_d,
                    &xh_a,
                    &u_a,
                    &u_d,
                    self.obs_a[k],
                    self.obs_d[k],
                );
            }
            if k == self.steps {
                break;
            }

            // Mismatch against the full-information feedback at [x_a; x_d].
            stack(&mut z, &x_a, &x_d);
            ga.apply(&z, &mut u_full[..self.m_a]);
            mismatch_a += u_a.iter().zip(&u_full).zip(oa).map(|((u, f), o)| (u - f - o).powi(2)).sum::<f64>() * self.dt;
            gd.apply(&z, &mut u_full[..self.m_d]);
            mismatch_d += u_d.iter().zip(&u_full).zip(od).map(|((u, f), o)| (u - f - o).powi(2)).sum::<f64>() * self.dt;

            let xs = &self.asset[k];
            control += (norm2(&u_a) - norm2(&u_d)) * self.dt;
            state += (wa_i * dist2(&x_a, xs) - wd_i * dist2(&x_d, &x_a)) * self.dt;

            // Attacker.
            xi.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            next.copy_from_slice(&x_a);
            self.a_a.apply_add(&x_a, self.dt, &mut next);
            self.b_a.apply_add(&u_a, self.dt, &mut next);
            self.c_a.apply_add(&xi, sqrt_dt, &mut next);
            x_a.copy_from_slice(&next);
            // Defender.
            xi.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            next.copy_from_slice(&x_d);
            self.a_d.apply_add(&x_d, self.dt, &mut next);
            self.b_d.apply_add(&u_d, self.dt, &mut next);
            self.c_d.apply_add(&xi, sqrt_dt, &mut next);
            x_d.copy_from_slice(&next);
            // Estimates, noise-free, driven by the modelled opponent control.
            next.copy_from_slice(&xh_d);
            self.a_d.apply_add(&xh_d, self.dt, &mut next);
            self.b_d.apply_add(&u_d_model, self.dt, &mut next);
            xh_d.copy_from_slice(&next);
            next.copy_from_slice(&xh_a);
            self.a_a.apply_add(&xh_a, self.dt, &mut next);
            self.b_a.apply_add(&u_a_model, self.dt, &mut next);
            xh_a.copy_from_slice(&next);

            if !x_a.iter().chain(&x_d).chain(&xh_a).chain(&xh_d).all(|v| v.is_finite()) {
                return Err(Error::NonFiniteState { trial, time: self.time(k + 1) });
            }
        }

        let xs = &self.asset[self.steps];
        let terminal = wa * dist2(&x_a, xs) - wd * dist2(&x_d, &x_a);
        let cost = control + state + terminal + self.observation_term;
        if let Some(tr) = trace {
            tr.cost = cost;
        }
        Ok(TrialOutcome { cost, control, state, terminal, mismatch_a, mismatch_d, probes_d, probes_a })
    }

    pub fn simulate_trial(&self, trial: u64) -> Result<TrialOutcome> {
        self.run(trial, None)
    }

    /// Same rollout as [`simulate_trial`](Self::simulate_trial) with every
    /// step recorded.
    pub fn trace_trial(&self, trial: u64) -> Result<SimulationTrace> {
        let mut trace = SimulationTrace::default();
        self.run(trial, Some(&mut trace))?;
        Ok(trace)
    }

    pub fn monte_carlo(&self) -> Result<MonteCarloSummary> {
        let outcomes: Vec<Result<TrialOutcome>> =
            (0..self.trials as u64).into_par_iter().map(|i| self.simulate_trial(i)).collect();
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
        let stat = |f: &dyn Fn(&TrialOutcome) -> f64| Statistic::of(outcomes.iter().map(f));
        let breakdown = CostBreakdown {
            control: stat(&|o| o.control),
            state: stat(&|o| o.state),
            terminal: stat(&|o| o.terminal),
            mismatch_a: stat(&|o| o.mismatch_a),
            mismatch_d: stat(&|o| o.mismatch_d),
            remainder: stat(&|o| o.cost - o.mismatch_a + o.mismatch_d - self.observation_term),
            observation: self.observation_term,
        };
        let probe_times = self.probe_times();
        let probes_d = probe_times
            .iter()
            .enumerate()
            .map(|(j, &t)| ProbeStatistics::of(t, outcomes.iter().map(|o| &o.probes_d[j][..])))
            .collect();
        let probes_a = probe_times
            .iter()
            .enumerate()
            .map(|(j, &t)| ProbeStatistics::of(t, outcomes.iter().map(|o| &o.probes_a[j][..])))
            .collect();
        let cost = stat(&|o| o.cost);
        Ok(MonteCarloSummary {
            trials: self.trials,
            seed: self.seed,
            dt: self.dt,
            steps: self.steps,
            snap_distance: self.snap_distance,
            mean: cost.mean,
            stderr: cost.stderr,
            breakdown,
            attacker_error: probes_d,
            defender_error: probes_a,
        })
    }
}

/// Realized quantities of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub cost: f64,
    /// `∫ (u_aᵀu_a − u_dᵀu_d) dt`
    pub control: f64,
    /// `∫ (ω_a^I‖x_a − x_s‖² − ω_d^I‖x_d − x_a‖²) dt`
    pub state: f64,
    pub terminal: f64,
    /// `∫ ‖u_a + B_aᵀ K x‖² dt`
    pub mismatch_a: f64,
    /// `∫ ‖u_d − B_dᵀ K x‖² dt`
    pub mismatch_d: f64,
    /// `x_d − x̂₁,d` at each probe time.
    pub probes_d: Vec<Vec<f64>>,
    /// `x_a − x̂₂,a` at each probe time.
    pub probes_a: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Statistic {
    pub mean: f64,
    pub stderr: f64,
}

impl Statistic {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.collect();
        if values.iter().all(|v| *v == values[0]) {
            return Statistic { mean: values.first().copied().unwrap_or(f64::NAN), stderr: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Statistic { mean, stderr: (var / n).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub control: Statistic,
    pub state: Statistic,
    pub terminal: Statistic,
    pub mismatch_a: Statistic,
    pub mismatch_d: Statistic,
    /// Cost with the mismatch and observation terms removed; estimates
    /// `x₀ᵀK(0)x₀ + ∫Tr(K C Cᵀ) dt`.
    pub remainder: Statistic,
    pub observation: f64,
}

/// Sample mean and covariance of an estimation error at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeStatistics {
    pub t: f64,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Row-major sample covariance.
    pub covariance: Vec<Vec<f64>>,
}

impl ProbeStatistics {
    fn of<'a>(t: f64, samples: impl Iterator<Item = &'a [f64]> + Clone) -> Self {
        let count = samples.clone().count() as f64;
        let dim = samples.clone().next().map_or(0, |s| s.len());
        let mut mean = vec![0.0; dim];
        for s in samples.clone() {
            mean.iter_mut().zip(s).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut cov = vec![vec![0.0; dim]; dim];
        for s in samples {
            for i in 0..dim {
                for j in 0..dim {
                    cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]);
                }
            }
        }
        let denom = (count - 1.0).max(1.0);
        cov.iter_mut().flatten().for_each(|c| *c /= denom);
        let stderr = (0..dim).map(|i| (cov[i][i] / count).sqrt()).collect();
        ProbeStatistics { t, mean, stderr, covariance: cov }
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let d = self.mean.len();
        DMatrix::from_fn(d, d, |i, j| self.covariance[i][j])
    }

    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub seed: u64,
    pub dt: f64,
    pub steps: usize,
    pub snap_distance: f64,
    pub mean: f64,
    pub stderr: f64,
    pub breakdown: CostBreakdown,
    /// Statistics of `x_d − x̂₁,d`.
    pub attacker_error: Vec<ProbeStatistics>,
    /// Statistics of `x_a − x̂₂,a`.
    pub defender_error: Vec<ProbeStatistics>,
}

/// Per-step record of one rollout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationTrace {
    pub t: Vec<f64>,
    pub x_a: Vec<Vec<f64>>,
    pub x_d: Vec<Vec<f64>>,
    pub x_s: Vec<Vec<f64>>,
    pub x_hat_1d: Vec<Vec<f64>>,
    pub x_hat_2a: Vec<Vec<f64>>,
    pub u_a: Vec<Vec<f64>>,
    pub u_d: Vec<Vec<f64>>,
    pub observed_a: Vec<bool>,
    pub observed_d: Vec<bool>,
    pub cost: f64,
}

impl SimulationTrace {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        t: f64,
        x_a: &[f64],
        x_d: &[f64],
        x_s: &[f64],
        xh_d: &[f64],
        xh_a: &[f64],
        u_a: &[f64],
        u_d: &[f64],
        oa: bool,
        od: bool,
    ) {
        self.t.push(t);
        self.x_a.push(x_a.to_vec());
        self.x_d.push(x_d.to_vec());
        self.x_s.push(x_s.to_vec());
        self.x_hat_1d.push(xh_d.to_vec());
        self.x_hat_2a.push(xh_a.to_vec());
        self.u_a.push(u_a.to_vec());
        self.u_d.push(u_d.to_vec());
        self.observed_a.push(oa);
        self.observed_d.push(od);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        if self.is_empty() {
            return Err(Error::invalid("empty trace"));
        }
        let mut header = vec!["t".to_string()];
        let groups: [(&str, &Vec<Vec<f64>>); 7] = [
            ("x_a", &self.x_a),
            ("x_d", &self.x_d),
            ("x_s", &self.x_s),
            ("x_hat_1d", &self.x_hat_1d),
            ("x_hat_2a", &self.x_hat_2a),
            ("u_a", &self.u_a),
            ("u_d", &self.u_d),
        ];
        for (name, rows) in &groups {
            header.extend((0..rows[0].len()).map(|i| format!("{name}_{i}")));
        }
        header.push("observed_a".into());
        header.push("observed_d".into());
        wtr.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.t[k].to_string()];
            for (_, rows) in &groups {
                row.extend(rows[k].iter().map(|v| v.to_string()));
            }
            row.push(u8::from(self.observed_a[k]).to_string());
            row.push(u8::from(self.observed_d[k]).to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Nash controls from each player's information:
/// `u_a = −B̂_aᵀ(K₁₁[x_a; x̂₁,d] + s)`, `u_d = B̂_dᵀ(K₁₁[x̂₂,a; x_d] + s)`.
pub fn nash_controls(
    x_a: &DVector<f64>,
    x_d: &DVector<f64>,
    estimates: &crate::estimation::EstimatorState,
    solution: &GameSolution,
    t: f64,
) -> (DVector<f64>, DVector<f64>) {
    let n = solution.params.n;
    let k11 = solution.path.k11_at(t);
    let s = solution.path.s_at(t);
    let stack =
        |a: &DVector<f64>, b: &DVector<f64>| DVector::from_fn(2 * n, |i, _| if i < n { a[i] } else { b[i - n] });
    let g_a = &k11 * stack(x_a, &estimates.x_hat_1d) + &s;
    let g_d = &k11 * stack(&estimates.x_hat_2a, x_d) + &s;
    let blocks = &solution.blocks;
    (-(blocks.b_hat_a.transpose() * g_a), blocks.b_hat_d.transpose() * g_d)
}
