//! Observation scheduling.
//!
//! For one player the schedule enters the cost only through
//! `f(T) = Σᵢ ∫_{tᵢ}^{tᵢ₊₁} Tr[Σ(t − tᵢ) φ(t)] dt` with `t₀ = 0`,
//! `t_{N+1} = t_f`. At an interior optimum each instant balances the error
//! mass just before it against the mass it saves afterwards:
//! `l(tᵢ₋₁, tᵢ) = r(tᵢ, tᵢ₊₁)`. Fixing `t₁` determines the whole chain, so a
//! bisection on `t₁` is enough.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimation::CovariancePath;
use crate::game::GameParameters;
use crate::linalg::{lerp_matrix, trace_of_product};
use crate::riccati::{RiccatiPath, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Player {
    Attacker,
    Defender,
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Player::Attacker => "attacker",
            Player::Defender => "defender",
        })
    }
}

impl FromStr for Player {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attacker" => Ok(Player::Attacker),
            "defender" => Ok(Player::Defender),
            other => Err(Error::invalid(format!("unknown player {other:?}"))),
        }
    }
}

/// Observation instants of one player, strictly increasing inside `(0, t_f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSchedule {
    pub player: Player,
    pub instants: Vec<f64>,
}

impl ObservationSchedule {
    pub fn new(player: Player, instants: Vec<f64>, t_f: f64) -> Result<Self> {
        let s = ObservationSchedule { player, instants };
        s.validate(t_f)?;
        Ok(s)
    }

    pub fn empty(player: Player) -> Self {
        ObservationSchedule { player, instants: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.instants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instants.is_empty()
    }

    pub fn validate(&self, t_f: f64) -> Result<()> {
        if let Some(bad) = self.instants.iter().find(|t| !(t.is_finite() && **t > 0.0 && **t < t_f)) {
            return Err(Error::invalid(format!("{} instant {bad} outside (0, {t_f})", self.player)));
        }
        if self.instants.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!("{} instants must be strictly increasing", self.player)));
        }
        Ok(())
    }

    /// `[0, t₁, …, t_N, t_f]`
    pub fn with_sentinels(&self, t_f: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() + 2);
        out.push(0.0);
        out.extend_from_slice(&self.instants);
        out.push(t_f);
        out
    }
}

/// `tᵢ = i·t_f/(N+1)`, `i = 1..N`.
pub fn periodic_schedule(player: Player, count: usize, t_f: f64) -> ObservationSchedule {
    let instants = (1..=count).map(|i| i as f64 * t_f / (count + 1) as f64).collect();
    ObservationSchedule { player, instants }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleCost {
    /// Schedule-dependent estimation mismatch.
    pub f: f64,
    /// `f + O·N`
    pub total: f64,
    /// The `N + 1` interval contributions to `f`.
    pub per_interval: Vec<f64>,
}

/// Result of the bisection on the first instant.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySearchOutcome {
    pub schedule: ObservationSchedule,
    pub t1_star: f64,
    pub iterations: usize,
}

/// One player's scheduling problem: the error kernel of the observed
/// opponent and the weight `φ` on the shared grid.
#[derive(Debug, Clone)]
pub struct ScheduleProblem {
    pub player: Player,
    kernel: CovariancePath,
    phi: Vec<DMatrix<f64>>,
    grid: TimeGrid,
}

impl ScheduleProblem {
    pub fn new(
        player: Player,
        a: &DMatrix<f64>,
        c: &DMatrix<f64>,
        phi: Vec<DMatrix<f64>>,
        grid: TimeGrid,
    ) -> Result<Self> {
        if phi.len() != grid.len() {
            return Err(Error::invalid(format!("phi has {} samples for a {}-node grid", phi.len(), grid.len())));
        }
        if phi.iter().any(|p| p.shape() != a.shape()) {
            return Err(Error::invalid("phi must match the opponent's state dimension"));
        }
        let kernel = CovariancePath::new(a, c, grid)?;
        Ok(ScheduleProblem { player, kernel, phi, grid })
    }

    /// The attacker observes the defender: `(A_d, C_d, φ_a)`.
    pub fn attacker(params: &GameParameters, path: &RiccatiPath) -> Result<Self> {
        Self::new(Player::Attacker, &params.a_d, &params.c_d, path.phi_a.clone(), path.grid)
    }

    /// The defender observes the attacker: `(A_a, C_a, φ_d)`.
    pub fn defender(params: &GameParameters, path: &RiccatiPath) -> Result<Self> {
        Self::new(Player::Defender, &params.a_a, &params.c_a, path.phi_d.clone(), path.grid)
    }

    pub fn for_player(player: Player, params: &GameParameters, path: &RiccatiPath) -> Result<Self> {
        match player {
            Player::Attacker => Self::attacker(params, path),
            Player::Defender => Self::defender(params, path),
        }
    }

    pub fn t_f(&self) -> f64 {
        self.grid.t_f
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn kernel(&self) -> &CovariancePath {
        &self.kernel
    }

    pub fn phi_at(&self, t: f64) -> DMatrix<f64> {
        let (k, w) = self.grid.bracket(t);
        lerp_matrix(&self.phi[k], &self.phi[k + 1], w)
    }

    /// `φ` at half-step index `m`, i.e. time `m·h/2`.
    fn phi_half(&self, m: usize) -> DMatrix<f64> {
        if m.is_multiple_of(2) {
            self.phi[m / 2].clone()
        } else {
            (&self.phi[m / 2] + &self.phi[m / 2 + 1]) * 0.5
        }
    }

    /// `Tr[Σ(t − origin) φ(t)]`, or with `Σ̇` in place of `Σ`.
    fn integrand(&self, kind: Kernel, origin: f64, t: f64) -> f64 {
        let m = match kind {
            Kernel::Sigma => self.kernel.sigma(t - origin),
            Kernel::Growth => self.kernel.growth(t - origin),
        };
        trace_of_product(&m, &self.phi_at(t))
    }

    fn simpson_piece(&self, kind: Kernel, origin: f64, u: f64, v: f64) -> f64 {
        if v <= u {
            return 0.0;
        }
        let mid = 0.5 * (u + v);
        let g = |t| self.integrand(kind, origin, t);
        (v - u) / 6.0 * (g(u) + 4.0 * g(mid) + g(v))
    }

    /// Walks `[origin, end]` in pieces: a partial piece up to the first grid
    /// node, whole grid cells, then a partial piece to `end`. Whole cells use
    /// the shifted covariance tables. Calls `visit(u, v, mass)` per piece and
    /// stops early when it returns `false`.
    fn walk<F>(&self, kind: Kernel, origin: f64, end: f64, mut visit: F)
    where
        F: FnMut(f64, f64, f64) -> bool,
    {
        if end <= origin {
            return;
        }
        let h = self.grid.step();
        let hh = self.kernel.half_step();
        let first = ((origin / h).floor() as usize + 1).min(self.grid.intervals);
        let t_first = self.grid.node(first);
        if t_first >= end {
            visit(origin, end, self.simpson_piece(kind, origin, origin, end));
            return;
        }
        if !visit(origin, t_first, self.simpson_piece(kind, origin, origin, t_first)) {
            return;
        }
        let p = (origin / hh).floor() as usize;
        let shifted = self.kernel.shifted(hh - (origin - p as f64 * hh));
        let last_index = shifted.table_len() - 1;
        let g = |m: usize| -> f64 {
            let j = m - p - 1;
            if j > last_index {
                return self.integrand(kind, origin, m as f64 * hh);
            }
            let k = match kind {
                Kernel::Sigma => shifted.sigma(j),
                Kernel::Growth => shifted.growth(j),
            };
            trace_of_product(&k, &self.phi_half(m))
        };
        let mut k = first;
        let mut g_left = g(2 * k);
        while k < self.grid.intervals && self.grid.node(k + 1) <= end {
            let g_mid = g(2 * k + 1);
            let g_right = g(2 * k + 2);
            let mass = h / 6.0 * (g_left + 4.0 * g_mid + g_right);
            if !visit(self.grid.node(k), self.grid.node(k + 1), mass) {
                return;
            }
            g_left = g_right;
            k += 1;
        }
        let t_k = self.grid.node(k);
        if end > t_k {
            visit(t_k, end, self.simpson_piece(kind, origin, t_k, end));
        }
    }

    fn mass(&self, kind: Kernel, origin: f64, end: f64) -> f64 {
        let mut acc = 0.0;
        self.walk(kind, origin, end, |_, _, m| {
            acc += m;
            true
        });
        acc
    }

    /// `∫_{t_i}^{t_end} Tr[Σ(t − t_i) φ(t)] dt`, one interval of `f`.
    pub fn interval_cost(&self, t_i: f64, t_end: f64) -> Result<f64> {
        self.check_pair(t_i, t_end)?;
        Ok(self.mass(Kernel::Sigma, t_i, t_end))
    }

    /// `r(t_i, t_end) = ∫_{t_i}^{t_end} Tr[e^{A(t−t_i)} C Cᵀ e^{Aᵀ(t−t_i)} φ(t)] dt`,
    /// the error mass an observation at `t_i` saves up to `t_end`.
    pub fn rhs(&self, t_i: f64, t_end: f64) -> Result<f64> {
        self.check_pair(t_i, t_end)?;
        Ok(self.mass(Kernel::Growth, t_i, t_end))
    }

    /// `l(t_prev, t_i) = Tr[Σ(t_i − t_prev) φ(t_i)]`, the integral of the
    /// kernel against the frozen weight `φ(t_i)`, evaluated exactly.
    pub fn lhs(&self, t_prev: f64, t_i: f64) -> Result<f64> {
        self.check_pair(t_prev, t_i)?;
        Ok(trace_of_product(&self.kernel.sigma(t_i - t_prev), &self.phi_at(t_i)))
    }

    fn check_pair(&self, a: f64, b: f64) -> Result<()> {
        let slack = 1e-12 * self.t_f();
        if !(a >= -slack && a <= b && b <= self.t_f() + slack) {
            return Err(Error::invalid(format!("need 0 <= {a} <= {b} <= {}", self.t_f())));
        }
        Ok(())
    }

    pub fn tilde_cost(&self, schedule: &ObservationSchedule, obs_cost: f64) -> Result<ScheduleCost> {
        schedule.validate(self.t_f())?;
        let times = schedule.with_sentinels(self.t_f());
        let per_interval = times.windows(2).map(|w| self.interval_cost(w[0], w[1])).collect::<Result<Vec<_>>>()?;
        let f: f64 = per_interval.iter().sum();
        Ok(ScheduleCost { f, total: f + obs_cost * schedule.len() as f64, per_interval })
    }

    /// Smallest `τ ∈ [t_i, t_f]` with `r(t_i, τ) = l(t_prev, t_i)`, or `None`
    /// when even `r(t_i, t_f)` falls short.
    pub fn next_instance(&self, t_prev: f64, t_i: f64, tol: f64) -> Result<Option<f64>> {
        let target = self.lhs(t_prev, t_i)?;
        Ok(self.solve_forward(t_i, target, tol))
    }

    fn solve_forward(&self, t_i: f64, target: f64, tol: f64) -> Option<f64> {
        if target <= 0.0 {
            return Some(t_i);
        }
        let mut cum = 0.0;
        let mut crossing = None;
        self.walk(Kernel::Growth, t_i, self.t_f(), |u, v, m| {
            if cum + m >= target {
                crossing = Some((u, v, cum));
                false
            } else {
                cum += m;
                true
            }
        });
        let (mut lo, mut hi, base) = crossing?;
        let u = lo;
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if base + self.simpson_piece(Kernel::Growth, t_i, u, mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }

    /// Chains `t₂, …, t_{N+1}` from `t₁`. `Err(i)` reports the first index
    /// whose remaining mass cannot balance `l(tᵢ₋₁, tᵢ)`.
    fn chain(&self, t1: f64, count: usize, tol: f64) -> std::result::Result<Vec<f64>, usize> {
        let mut times = vec![0.0, t1];
        for i in 1..=count {
            let (t_prev, t_i) = (times[i - 1], times[i]);
            let target = trace_of_product(&self.kernel.sigma(t_i - t_prev), &self.phi_at(t_i));
            match self.solve_forward(t_i, target, tol) {
                Some(next) => times.push(next),
                None => return Err(i),
            }
        }
        Ok(times)
    }

    /// Algorithm 1: bisection on `t₁` over `[0, t_f]` until the bracket is
    /// no wider than `eps`.
    pub fn binary_search_schedule(&self, count: usize, eps: f64) -> Result<BinarySearchOutcome> {
        if count == 0 {
            return Err(Error::invalid("binary search needs at least one observation"));
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::invalid(format!("eps must be positive, got {eps}")));
        }
        let t_f = self.t_f();
        let tol = 1e-9 * t_f;
        let (mut t_low, mut t_up) = (0.0, t_f);
        let mut t1 = 0.5 * (t_low + t_up);
        let mut iterations = 0;
        while (t_up - t_low).abs() > eps {
            iterations += 1;
            match self.chain(t1, count, tol) {
                Err(_) => {
                    t_up = t1;
                    t1 = 0.5 * (t_low + t1);
                }
                Ok(times) if times[count + 1] < t_f => {
                    t_low = t1;
                    t1 = 0.5 * (t_up + t1);
                }
                Ok(_) => {
                    t_low = t1;
                    t_up = t1;
                }
            }
        }
        let t1_star = 0.5 * (t_low + t_up);
        let times = match self.chain(t1_star, count, tol) {
            Ok(times) => times,
            Err(_) => self.chain(t_low, count, tol).map_err(|i| Error::NoInteriorOptimum {
                count,
                reason: format!("chain from t1 = {t_low} runs out of mass at instant {i}"),
            })?,
        };
        let schedule = ObservationSchedule { player: self.player, instants: times[1..=count].to_vec() };
        schedule.validate(t_f).map_err(|_| Error::NoInteriorOptimum {
            count,
            reason: format!("bisection converged to a degenerate chain {:?}", schedule.instants),
        })?;
        Ok(BinarySearchOutcome { schedule, t1_star, iterations })
    }

    /// `lᵢ(tᵢ₋₁, tᵢ) − r(tᵢ, tᵢ₊₁)` for every instant; this is `∂f/∂tᵢ`.
    pub fn residuals(&self, schedule: &ObservationSchedule) -> Result<Vec<f64>> {
        schedule.validate(self.t_f())?;
        let times = schedule.with_sentinels(self.t_f());
        (1..times.len() - 1)
            .map(|i| Ok(self.lhs(times[i - 1], times[i])? - self.rhs(times[i], times[i + 1])?))
            .collect()
    }

    /// `f*(N)`, with `N = 0` the empty schedule.
    pub fn optimal_for_count(&self, count: usize, eps: f64) -> Result<(ObservationSchedule, ScheduleCost)> {
        let schedule = if count == 0 {
            ObservationSchedule::empty(self.player)
        } else {
            self.binary_search_schedule(count, eps)?.schedule
        };
        let cost = self.tilde_cost(&schedule, 0.0)?;
        Ok((schedule, cost))
    }

    /// Minimizes `f*(N) + O·N` over `N`, scanning upward while `N` can still
    /// beat the best total seen (`O·N ≤ f*(M) + O·M` for every computed
    /// `M`) and `N ≤ n_cap`. Ties go to the smaller `N`.
    pub fn optimal_observation_count(
        &self,
        obs_cost: f64,
        n_cap: Option<usize>,
        eps: f64,
    ) -> Result<(usize, ObservationSchedule, ScheduleCost)> {
        if !(obs_cost.is_finite() && obs_cost >= 0.0) {
            return Err(Error::invalid(format!("observation cost must be nonnegative, got {obs_cost}")));
        }
        if obs_cost == 0.0 && n_cap.is_none() {
            return Err(Error::invalid("free observations need an explicit cap on N"));
        }
        let (schedule, cost) = self.optimal_for_count(0, eps)?;
        let mut best = (0, schedule, ScheduleCost { total: cost.f, ..cost });
        let mut bound = if obs_cost > 0.0 { best.2.total / obs_cost } else { f64::INFINITY };
        let cap = n_cap.unwrap_or(usize::MAX);
        let mut count = 1;
        while count <= cap && (count as f64) <= bound {
            let (schedule, cost) = match self.optimal_for_count(count, eps) {
                Ok(r) => r,
                Err(Error::NoInteriorOptimum { .. }) => break,
                Err(e) => return Err(e),
            };
            let total = cost.f + obs_cost * count as f64;
            if obs_cost > 0.0 {
                bound = bound.min(total / obs_cost);
            }
            if total < best.2.total {
                best = (count, schedule, ScheduleCost { total, ..cost });
            }
            count += 1;
        }
        Ok(best)
    }

    /// Exhaustive minimization of `f` over instants on the grid
    /// `{h, 2h, …}` for `N ∈ {1, 2}`.
    ///
    /// Deliberately shares nothing with the bisection path: the kernel comes
    /// from RK4 on the Lyapunov equation and interval masses from a fixed
    /// Simpson rule at `h/2`.
    pub fn brute_force_schedule(&self, count: usize, h: f64) -> Result<ObservationSchedule> {
        if !(1..=2).contains(&count) {
            return Err(Error::Unsupported(format!("brute force handles N in {{1, 2}}, got {count}")));
        }
        let t_f = self.t_f();
        let cells = (t_f / h).round() as usize;
        if cells < count + 1 || ((cells as f64) * h - t_f).abs() > 1e-9 * t_f {
            return Err(Error::invalid(format!("step {h} must divide t_f = {t_f}")));
        }
        let hq = 0.5 * t_f / cells as f64;
        let half = 2 * cells;
        let a = self.kernel_generator();
        let q = self.kernel.noise_intensity();
        let mut sigma = Vec::with_capacity(half + 1);
        let mut s = DMatrix::zeros(q.nrows(), q.ncols());
        let sub = 4;
        let dh = hq / sub as f64;
        let rhs = |m: &DMatrix<f64>| &a * m + m * a.transpose() + q;
        for _ in 0..=half {
            sigma.push(s.clone());
            for _ in 0..sub {
                let k1 = rhs(&s);
                let k2 = rhs(&(&s + &k1 * (0.5 * dh)));
                let k3 = rhs(&(&s + &k2 * (0.5 * dh)));
                let k4 = rhs(&(&s + &k3 * dh));
                s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dh / 6.0);
            }
        }
        let phi: Vec<DMatrix<f64>> = (0..=half).map(|m| self.phi_at(m as f64 * hq)).collect();
        let tr = |d: usize, m: usize| trace_of_product(&sigma[d], &phi[m]);
        // Mass of cell c when the interval started `d` cells earlier.
        let cell = |c: usize, d: usize| {
            hq / 3.0 * (tr(2 * d, 2 * c) + 4.0 * tr(2 * d + 1, 2 * c + 1) + tr(2 * d + 2, 2 * c + 2))
        };
        // f_from[i][j - i] = F(i, j): mass of the interval [i·h, j·h].
        let mut f_from: Vec<Vec<f64>> = Vec::with_capacity(cells + 1);
        for i in 0..=cells {
            let mut row = Vec::with_capacity(cells + 1 - i);
            row.push(0.0);
            let mut acc = 0.0;
            for c in i..cells {
                acc += cell(c, c - i);
                row.push(acc);
            }
            f_from.push(row);
        }
        let big_f = |i: usize, j: usize| f_from[i][j - i];
        let instants = if count == 1 {
            let best = (1..cells)
                .map(|i| (big_f(0, i) + big_f(i, cells), i))
                .min_by(|x, y| x.0.total_cmp(&y.0))
                .expect("at least one candidate");
            vec![best.1]
        } else {
            let mut best = (f64::INFINITY, 0, 0);
            for i in 1..cells - 1 {
                let head = big_f(0, i);
                for j in i + 1..cells {
                    let v = head + big_f(i, j) + big_f(j, cells);
                    if v < best.0 {
                        best = (v, i, j);
                    }
                }
            }
            vec![best.1, best.2]
        };
        let instants = instants.into_iter().map(|i| i as f64 * 2.0 * hq).collect();
        ObservationSchedule::new(self.player, instants, t_f)
    }

    fn kernel_generator(&self) -> DMatrix<f64> {
        self.kernel.generator().clone()
    }
}

#[derive(Debug, Clone, Copy)]
enum Kernel {
    Sigma,
    Growth,
}

/// Writes `player,index,instant` rows, indices starting at 1.
pub fn write_schedules_csv<W: Write>(out: W, schedules: &[&ObservationSchedule]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    wtr.write_record(["player", "index", "instant"])?;
    for s in schedules {
        for (i, t) in s.instants.iter().enumerate() {
            wtr.write_record([s.player.to_string(), (i + 1).to_string(), t.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads schedules written by [`write_schedules_csv`]; players with no rows
/// come back empty.
pub fn read_schedules_csv<R: Read>(input: R, t_f: f64) -> Result<(ObservationSchedule, ObservationSchedule)> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut attacker = Vec::new();
    let mut defender = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 3 {
            return Err(Error::invalid(format!("schedule row {} needs player,index,instant", line + 2)));
        }
        let player: Player = record[0].trim().parse()?;
        let instant: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("schedule row {}: bad instant {:?}", line + 2, &record[2])))?;
        match player {
            Player::Attacker => attacker.push(instant),
            Player::Defender => defender.push(instant),
        }
    }
    Ok((
        ObservationSchedule::new(Player::Attacker, attacker, t_f)?,
        ObservationSchedule::new(Player::Defender, defender, t_f)?,
    ))
}
