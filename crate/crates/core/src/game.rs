//! Game data: per-player dynamics, weights, the asset trajectory and the
//! assembled aggregate system.
//!
//! States are stacked as `x = [x_a; x_d; x_s]`, each block of dimension `n`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{expm, lerp_vector};

/// All data describing one game instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GameParameters {
    pub n: usize,
    pub a_a: DMatrix<f64>,
    pub a_d: DMatrix<f64>,
    /// `n × m_a`
    pub b_a: DMatrix<f64>,
    /// `n × m_d`
    pub b_d: DMatrix<f64>,
    pub c_a: DMatrix<f64>,
    pub c_d: DMatrix<f64>,
    /// Running weight on the attacker-to-asset distance.
    pub omega_a_i: f64,
    /// Running weight on the defender-to-attacker distance.
    pub omega_d_i: f64,
    /// Terminal weight on the attacker-to-asset distance.
    pub omega_a: f64,
    /// Terminal weight on the defender-to-attacker distance.
    pub omega_d: f64,
    /// Price of one observation, paid by whichever player observes.
    pub obs_cost: f64,
    pub t_f: f64,
    pub x_a0: DVector<f64>,
    pub x_d0: DVector<f64>,
}

impl GameParameters {
    /// Planar simple-motion game: `A = 0`, `B̃ = b·I₂`, `C = c·I₂`, terminal
    /// weights only.
    pub fn simple_motion(omega_a: f64, omega_d: f64, b_a: f64, b_d: f64, noise: f64, t_f: f64) -> Self {
        let n = 2;
        let eye = DMatrix::identity(n, n);
        GameParameters {
            n,
            a_a: DMatrix::zeros(n, n),
            a_d: DMatrix::zeros(n, n),
            b_a: &eye * b_a,
            b_d: &eye * b_d,
            c_a: &eye * noise,
            c_d: &eye * noise,
            omega_a_i: 0.0,
            omega_d_i: 0.0,
            omega_a,
            omega_d,
            obs_cost: 1.0,
            t_f,
            x_a0: DVector::from_vec(vec![-5.0, 0.0]),
            x_d0: DVector::from_vec(vec![3.0, 2.0]),
        }
    }

    /// The default case study: `ω_a = 2`, `ω_d = 3`, `b_a = b_d = 0.5`,
    /// `C = 2·I₂`, `t_f = 10`.
    pub fn case_study() -> Self {
        Self::simple_motion(2.0, 3.0, 0.5, 0.5, 2.0, 10.0)
    }

    pub fn m_a(&self) -> usize {
        self.b_a.ncols()
    }

    pub fn m_d(&self) -> usize {
        self.b_d.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::invalid("state dimension n must be at least 1"));
        }
        if !(self.t_f.is_finite() && self.t_f > 0.0) {
            return Err(Error::invalid(format!("horizon t_f must be positive, got {}", self.t_f)));
        }
        if !(self.obs_cost.is_finite() && self.obs_cost >= 0.0) {
            return Err(Error::invalid(format!("observation cost must be nonnegative, got {}", self.obs_cost)));
        }
        for (name, w) in [
            ("omega_a_i", self.omega_a_i),
            ("omega_d_i", self.omega_d_i),
            ("omega_a", self.omega_a),
            ("omega_d", self.omega_d),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!("weight {name} must be nonnegative, got {w}")));
            }
        }
        for (name, m) in [("a_a", &self.a_a), ("a_d", &self.a_d), ("c_a", &self.c_a), ("c_d", &self.c_d)] {
            if m.shape() != (n, n) {
                return Err(Error::invalid(format!("{name} must be {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
            }
        }
        for (name, m) in [("b_a", &self.b_a), ("b_d", &self.b_d)] {
            if m.nrows() != n || m.ncols() == 0 {
                return Err(Error::invalid(format!("{name} must have {n} rows and at least one column")));
            }
        }
        for (name, v) in [("x_a0", &self.x_a0), ("x_d0", &self.x_d0)] {
            if v.len() != n {
                return Err(Error::invalid(format!("{name} must have length {n}, got {}", v.len())));
            }
        }
        let all_finite = [&self.a_a, &self.a_d, &self.b_a, &self.b_d, &self.c_a, &self.c_d]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && self.x_a0.iter().chain(self.x_d0.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("game matrices and initial states must be finite"));
        }
        Ok(())
    }
}

/// The asset's path, known to both players.
#[derive(Debug, Clone, PartialEq)]
pub enum AssetTrajectory {
    /// `ẋ_s = A_s x_s`, `x_s(0) = x_s0`.
    Linear { generator: DMatrix<f64>, initial: DVector<f64> },
    /// Samples on strictly increasing times from `0` to `t_f`, linearly
    /// interpolated in between.
    Sampled { times: Vec<f64>, states: Vec<DVector<f64>> },
}

impl AssetTrajectory {
    pub fn stationary(position: DVector<f64>) -> Self {
        let n = position.len();
        AssetTrajectory::Linear { generator: DMatrix::zeros(n, n), initial: position }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, AssetTrajectory::Linear { .. })
    }

    pub fn validate(&self, n: usize, t_f: f64) -> Result<()> {
        match self {
            AssetTrajectory::Linear { generator, initial } => {
                if generator.shape() != (n, n) || initial.len() != n {
                    return Err(Error::invalid(format!(
                        "linear asset needs an {n}x{n} generator and length-{n} state"
                    )));
                }
            }
            AssetTrajectory::Sampled { times, states } => {
                if times.len() < 2 || times.len() != states.len() {
                    return Err(Error::invalid("sampled asset needs at least two samples, one state per time"));
                }
                if states.iter().any(|s| s.len() != n) {
                    return Err(Error::invalid(format!("sampled asset states must have length {n}")));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid("sampled asset times must be strictly increasing"));
                }
                let tol = 1e-12 * t_f.max(1.0);
                if times[0].abs() > tol || (times[times.len() - 1] - t_f).abs() > tol {
                    return Err(Error::invalid(format!(
                        "sampled asset must cover [0, {t_f}], got [{}, {}]",
                        times[0],
                        times[times.len() - 1]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Asset state at time `t`.
    pub fn state_at(&self, t: f64) -> DVector<f64> {
        match self {
            AssetTrajectory::Linear { generator, initial } => {
                if generator.iter().all(|v| *v == 0.0) {
                    initial.clone()
                } else {
                    expm(&(generator * t)) * initial
                }
            }
            AssetTrajectory::Sampled { times, states } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    return states[0].clone();
                }
                if t >= times[last] {
                    return states[last].clone();
                }
                let k = times.partition_point(|&x| x <= t) - 1;
                let w = (t - times[k]) / (times[k + 1] - times[k]);
                lerp_vector(&states[k], &states[k + 1], w)
            }
        }
    }
}

/// The stacked `3n` system.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSystem {
    pub n: usize,
    /// `blockdiag(A_a, A_d, A_s)`; the asset block is zero when the asset is
    /// only known through samples.
    pub a: DMatrix<f64>,
    pub b_a: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_f: DMatrix<f64>,
    /// Whether `a` carries a real asset generator.
    pub has_asset_generator: bool,
}

impl AggregateSystem {
    pub fn q11(&self) -> DMatrix<f64> {
        self.q.view((0, 0), (2 * self.n, 2 * self.n)).into_owned()
    }

    pub fn q12(&self) -> DMatrix<f64> {
        self.q.view((0, 2 * self.n), (2 * self.n, self.n)).into_owned()
    }

    pub fn q22(&self) -> DMatrix<f64> {
        self.q.view((2 * self.n, 2 * self.n), (self.n, self.n)).into_owned()
    }

    pub fn qf11(&self) -> DMatrix<f64> {
        self.q_f.view((0, 0), (2 * self.n, 2 * self.n)).into_owned()
    }

    pub fn qf12(&self) -> DMatrix<f64> {
        self.q_f.view((0, 2 * self.n), (2 * self.n, self.n)).into_owned()
    }
}

/// The `2n` blocks the feedback gains are built from.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedBlocks {
    pub n: usize,
    pub a_hat: DMatrix<f64>,
    pub b_hat_a: DMatrix<f64>,
    pub b_hat_d: DMatrix<f64>,
    /// `B̃_a`, kept for the per-player formulas.
    pub b_a: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
}

impl TruncatedBlocks {
    /// `B̂_d B̂_dᵀ − B̂_a B̂_aᵀ`, the indefinite quadratic coefficient of the
    /// Riccati equation.
    pub fn coupling(&self) -> DMatrix<f64> {
        &self.b_hat_d * self.b_hat_d.transpose() - &self.b_hat_a * self.b_hat_a.transpose()
    }
}

/// `Q̃(w1, w2)` such that `xᵀQ̃x = w1‖x_a − x_s‖² − w2‖x_d − x_a‖²`.
pub fn weight_matrix(w1: f64, w2: f64, n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if !(w1.is_finite() && w1 >= 0.0 && w2.is_finite() && w2 >= 0.0) {
        return Err(Error::invalid(format!("weights must be nonnegative, got ({w1}, {w2})")));
    }
    let blocks = [[w1 - w2, w2, -w1], [w2, -w2, 0.0], [-w1, 0.0, w1]];
    Ok(DMatrix::from_fn(3 * n, 3 * n, |i, j| if i % n == j % n { blocks[i / n][j / n] } else { 0.0 }))
}

pub fn build_aggregate(params: &GameParameters, asset: &AssetTrajectory) -> Result<AggregateSystem> {
    params.validate()?;
    let n = params.n;
    asset.validate(n, params.t_f)?;
    let (m_a, m_d) = (params.m_a(), params.m_d());

    let mut a = DMatrix::zeros(3 * n, 3 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&params.a_a);
    a.view_mut((n, n), (n, n)).copy_from(&params.a_d);
    if let AssetTrajectory::Linear { generator, .. } = asset {
        a.view_mut((2 * n, 2 * n), (n, n)).copy_from(generator);
    }

    let mut b_a = DMatrix::zeros(3 * n, m_a);
    b_a.view_mut((0, 0), (n, m_a)).copy_from(&params.b_a);
    let mut b_d = DMatrix::zeros(3 * n, m_d);
    b_d.view_mut((n, 0), (n, m_d)).copy_from(&params.b_d);

    let mut c = DMatrix::zeros(3 * n, 3 * n);
    c.view_mut((0, 0), (n, n)).copy_from(&params.c_a);
    c.view_mut((n, n), (n, n)).copy_from(&params.c_d);

    Ok(AggregateSystem {
        n,
        a,
        b_a,
        b_d,
        c,
        q: weight_matrix(params.omega_a_i, params.omega_d_i, n)?,
        q_f: weight_matrix(params.omega_a, params.omega_d, n)?,
        has_asset_generator: asset.is_linear(),
    })
}

pub fn truncated_blocks(params: &GameParameters) -> Result<TruncatedBlocks> {
    params.validate()?;
    let n = params.n;
    let (m_a, m_d) = (params.m_a(), params.m_d());
    let mut a_hat = DMatrix::zeros(2 * n, 2 * n);
    a_hat.view_mut((0, 0), (n, n)).copy_from(&params.a_a);
    a_hat.view_mut((n, n), (n, n)).copy_from(&params.a_d);
    let mut b_hat_a = DMatrix::zeros(2 * n, m_a);
    b_hat_a.view_mut((0, 0), (n, m_a)).copy_from(&params.b_a);
    let mut b_hat_d = DMatrix::zeros(2 * n, m_d);
    b_hat_d.view_mut((n, 0), (n, m_d)).copy_from(&params.b_d);
    Ok(TruncatedBlocks { n, a_hat, b_hat_a, b_hat_d, b_a: params.b_a.clone(), b_d: params.b_d.clone() })
}
