//! Estimation-error covariances and the players' opponent estimators.
//!
//! Between observations, a player's error about its opponent grows like
//! `Σ(τ) = ∫₀^τ e^{Aξ} C Cᵀ e^{Aᵀξ} dξ`, with `τ` the time since the last
//! observation; an observation resets the error to zero.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::TruncatedBlocks;
use crate::linalg::{expm, symmetrize, van_loan};
use crate::riccati::{RiccatiPath, TimeGrid};

/// `Σ(τ)` tabulated on half steps of the Riccati grid, with exact evaluation
/// in between.
///
/// Tables are built from the semigroup identity
/// `Σ(a + b) = Σ(a) + e^{Aa} Σ(b) e^{Aᵀa}`, so every entry is exact up to
/// rounding.
#[derive(Debug, Clone)]
pub struct CovariancePath {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    half_step: f64,
    horizon: f64,
    exp_table: Vec<DMatrix<f64>>,
    sigma_table: Vec<DMatrix<f64>>,
}

impl CovariancePath {
    /// Covariance of `A`, `C` over elapsed times `[0, t_f]` of `grid`.
    pub fn new(a: &DMatrix<f64>, c: &DMatrix<f64>, grid: TimeGrid) -> Result<Self> {
        let n = a.nrows();
        if a.shape() != (n, n) || c.nrows() != n {
            return Err(Error::invalid("covariance needs square A and C with matching rows"));
        }
        let q = c * c.transpose();
        let half_step = 0.5 * grid.step();
        let entries = 2 * grid.intervals + 1;
        let (sigma_1, e_1) = van_loan(a, &q, half_step);
        let mut exp_table = Vec::with_capacity(entries);
        let mut sigma_table = Vec::with_capacity(entries);
        let mut e = DMatrix::identity(n, n);
        let mut sigma = DMatrix::zeros(n, n);
        for _ in 0..entries {
            exp_table.push(e.clone());
            sigma_table.push(sigma.clone());
            sigma += &e * &sigma_1 * e.transpose();
            symmetrize(&mut sigma);
            e = &e * &e_1;
        }
        Ok(CovariancePath { a: a.clone(), q, half_step, horizon: grid.t_f, exp_table, sigma_table })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub(crate) fn half_step(&self) -> f64 {
        self.half_step
    }

    /// `A`
    pub fn generator(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `C Cᵀ`
    pub fn noise_intensity(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `Σ` at grid node `k`, i.e. elapsed time `k·h`.
    pub fn node(&self, k: usize) -> &DMatrix<f64> {
        &self.sigma_table[2 * k]
    }

    fn split(&self, tau: f64) -> (usize, f64) {
        let tau = tau.max(0.0);
        let last = self.sigma_table.len() - 1;
        let j = ((tau / self.half_step).floor() as usize).min(last);
        (j, (tau - j as f64 * self.half_step).max(0.0))
    }

    /// `Σ(τ)` for any `τ ≥ 0`.
    pub fn sigma(&self, tau: f64) -> DMatrix<f64> {
        let (j, delta) = self.split(tau);
        if delta == 0.0 {
            return self.sigma_table[j].clone();
        }
        let (sd, _) = van_loan(&self.a, &self.q, delta);
        let e = &self.exp_table[j];
        let mut out = &self.sigma_table[j] + e * sd * e.transpose();
        symmetrize(&mut out);
        out
    }

    /// `dΣ/dτ = e^{Aτ} C Cᵀ e^{Aᵀτ}`.
    pub fn growth(&self, tau: f64) -> DMatrix<f64> {
        let (j, delta) = self.split(tau);
        let e = if delta == 0.0 { self.exp_table[j].clone() } else { &self.exp_table[j] * expm(&(&self.a * delta)) };
        &e * &self.q * e.transpose()
    }

    /// Evaluator for elapsed times `j·h/2 + δ`, sharing one small exponential
    /// across a whole sweep.
    pub(crate) fn shifted(&self, delta: f64) -> ShiftedCovariance<'_> {
        let (sigma_delta, e_delta) = van_loan(&self.a, &self.q, delta);
        let growth_delta = &e_delta * &self.q * e_delta.transpose();
        ShiftedCovariance { path: self, sigma_delta, growth_delta }
    }
}

pub(crate) struct ShiftedCovariance<'a> {
    path: &'a CovariancePath,
    sigma_delta: DMatrix<f64>,
    growth_delta: DMatrix<f64>,
}

impl ShiftedCovariance<'_> {
    pub(crate) fn sigma(&self, j: usize) -> DMatrix<f64> {
        let e = &self.path.exp_table[j];
        &self.path.sigma_table[j] + e * &self.sigma_delta * e.transpose()
    }

    pub(crate) fn growth(&self, j: usize) -> DMatrix<f64> {
        let e = &self.path.exp_table[j];
        e * &self.growth_delta * e.transpose()
    }

    pub(crate) fn table_len(&self) -> usize {
        self.path.exp_table.len()
    }
}

/// `∫₀^τ e^{Aξ} C Cᵀ e^{Aᵀξ} dξ` by composite Simpson quadrature, with the
/// panel width no larger than the grid step `t_f / intervals`.
pub fn error_covariance(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    tau: f64,
    t_f: f64,
    intervals: usize,
) -> Result<DMatrix<f64>> {
    if tau.is_nan() || tau < 0.0 || tau > t_f {
        return Err(Error::invalid(format!("elapsed time {tau} outside [0, {t_f}]")));
    }
    let n = a.nrows();
    if tau == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let q = c * c.transpose();
    let h_max = t_f / intervals.max(1) as f64;
    let mut panels = (tau / h_max).ceil() as usize;
    panels += panels % 2;
    panels = panels.max(2);
    let h = tau / panels as f64;
    let mut acc = DMatrix::zeros(n, n);
    for i in 0..=panels {
        let e = expm(&(a * (i as f64 * h)));
        let w = if i == 0 || i == panels {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += &e * &q * e.transpose() * w;
    }
    acc *= h / 3.0;
    symmetrize(&mut acc);
    Ok(acc)
}

/// Same quantity by RK4 on the Lyapunov equation `Σ̇ = AΣ + ΣAᵀ + C Cᵀ`,
/// `Σ(0) = 0`.
pub fn error_covariance_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>, tau: f64, steps: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let q = c * c.transpose();
    let steps = steps.max(1);
    let h = tau / steps as f64;
    let rhs = |s: &DMatrix<f64>| a * s + s * a.transpose() + &q;
    let mut s = DMatrix::zeros(n, n);
    for _ in 0..steps {
        let k1 = rhs(&s);
        let k2 = rhs(&(&s + &k1 * (0.5 * h)));
        let k3 = rhs(&(&s + &k2 * (0.5 * h)));
        let k4 = rhs(&(&s + &k3 * h));
        s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    symmetrize(&mut s);
    s
}

/// Each player's running estimate of its opponent.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    /// Attacker's estimate of the defender.
    pub x_hat_1d: DVector<f64>,
    /// Defender's estimate of the attacker.
    pub x_hat_2a: DVector<f64>,
    pub last_obs_a: Option<f64>,
    pub last_obs_d: Option<f64>,
}

impl EstimatorState {
    /// Both players start from the commonly known initial states.
    pub fn new(x_a0: &DVector<f64>, x_d0: &DVector<f64>) -> Self {
        EstimatorState { x_hat_1d: x_d0.clone(), x_hat_2a: x_a0.clone(), last_obs_a: None, last_obs_d: None }
    }

    /// The attacker observes the defender.
    pub fn attacker_observes(&mut self, t: f64, x_d: &DVector<f64>) {
        self.x_hat_1d.copy_from(x_d);
        self.last_obs_a = Some(t);
    }

    /// The defender observes the attacker.
    pub fn defender_observes(&mut self, t: f64, x_a: &DVector<f64>) {
        self.x_hat_2a.copy_from(x_a);
        self.last_obs_d = Some(t);
    }
}

fn stack(top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
    let n = top.len();
    DVector::from_fn(2 * n, |i, _| if i < n { top[i] } else { bottom[i - n] })
}

/// `A_d x̂₁,d + B̃_d B̂_dᵀ (K₁₁ [x_a; x̂₁,d] + s)`
pub fn attacker_estimate_drift(
    x_hat_1d: &DVector<f64>,
    x_a: &DVector<f64>,
    k11: &DMatrix<f64>,
    s: &DVector<f64>,
    blocks: &TruncatedBlocks,
) -> DVector<f64> {
    let n = blocks.n;
    let a_d = blocks.a_hat.view((n, n), (n, n));
    let g = k11 * stack(x_a, x_hat_1d) + s;
    a_d * x_hat_1d + &blocks.b_d * (blocks.b_hat_d.transpose() * g)
}

/// `A_a x̂₂,a − B̃_a B̂_aᵀ (K₁₁ [x̂₂,a; x_d] + s)`
pub fn defender_estimate_drift(
    x_hat_2a: &DVector<f64>,
    x_d: &DVector<f64>,
    k11: &DMatrix<f64>,
    s: &DVector<f64>,
    blocks: &TruncatedBlocks,
) -> DVector<f64> {
    let n = blocks.n;
    let a_a = blocks.a_hat.view((0, 0), (n, n));
    let g = k11 * stack(x_hat_2a, x_d) + s;
    a_a * x_hat_2a - &blocks.b_a * (blocks.b_hat_a.transpose() * g)
}

fn check_step(riccati: &RiccatiPath, t: f64, dt: f64) -> Result<()> {
    let t_f = riccati.grid.t_f;
    if dt.is_nan() || dt <= 0.0 || t < 0.0 || t + dt > t_f * (1.0 + 1e-12) {
        return Err(Error::invalid(format!("estimate step [{t}, {}] leaves [0, {t_f}]", t + dt)));
    }
    Ok(())
}

/// One RK4 step of the attacker's estimate of the defender; `x_a` is held at
/// its value at `t`.
pub fn propagate_attacker_estimate(
    state: &EstimatorState,
    x_a: &DVector<f64>,
    riccati: &RiccatiPath,
    blocks: &TruncatedBlocks,
    t: f64,
    dt: f64,
) -> Result<DVector<f64>> {
    check_step(riccati, t, dt)?;
    let f = |tt: f64, x: &DVector<f64>| attacker_estimate_drift(x, x_a, &riccati.k11_at(tt), &riccati.s_at(tt), blocks);
    Ok(rk4_step(&state.x_hat_1d, t, dt, f))
}

/// One RK4 step of the defender's estimate of the attacker.
pub fn propagate_defender_estimate(
    state: &EstimatorState,
    x_d: &DVector<f64>,
    riccati: &RiccatiPath,
    blocks: &TruncatedBlocks,
    t: f64,
    dt: f64,
) -> Result<DVector<f64>> {
    check_step(riccati, t, dt)?;
    let f = |tt: f64, x: &DVector<f64>| defender_estimate_drift(x, x_d, &riccati.k11_at(tt), &riccati.s_at(tt), blocks);
    Ok(rk4_step(&state.x_hat_2a, t, dt, f))
}

fn rk4_step<F>(x: &DVector<f64>, t: f64, dt: f64, f: F) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * dt, &(x + &k1 * (0.5 * dt)));
    let k3 = f(t + 0.5 * dt, &(x + &k2 * (0.5 * dt)));
    let k4 = f(t + dt, &(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}
