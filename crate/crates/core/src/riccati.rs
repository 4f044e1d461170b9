//! Backward Riccati integration on a uniform time grid.
//!
//! `K₁₁` (the `2n × 2n` player block) is all the feedback gains and the
//! observation weights need; the asset enters only through the co-state
//! `s(t) = K₁₂(t) x_s(t)`. The full `3n` solve is kept for the constant terms
//! of the cost and as a cross-check of the block decomposition.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::{AggregateSystem, AssetTrajectory, TruncatedBlocks};
use crate::linalg::{grid_bracket, kron_identity, lerp_matrix, lerp_vector, max_abs, symmetrize, trace_of_product};

/// Entry magnitude beyond which the backward solve is declared escaped.
pub const ESCAPE_THRESHOLD: f64 = 1e12;

pub const DEFAULT_INTERVALS: usize = 2000;

/// Uniform grid `t_k = k·t_f/M`, `k = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_f: f64,
    pub intervals: usize,
}

impl TimeGrid {
    pub fn new(t_f: f64, intervals: usize) -> Result<Self> {
        if !(t_f.is_finite() && t_f > 0.0) {
            return Err(Error::invalid(format!("grid horizon must be positive, got {t_f}")));
        }
        if intervals == 0 {
            return Err(Error::invalid("grid needs at least one interval"));
        }
        Ok(TimeGrid { t_f, intervals })
    }

    pub fn step(&self) -> f64 {
        self.t_f / self.intervals as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.intervals {
            self.t_f
        } else {
            k as f64 * self.step()
        }
    }

    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.intervals).map(|k| self.node(k))
    }

    pub(crate) fn bracket(&self, t: f64) -> (usize, f64) {
        grid_bracket(t, self.step(), self.intervals)
    }
}

/// Time-gridded Riccati solution and everything derived from it.
#[derive(Debug, Clone)]
pub struct RiccatiPath {
    pub grid: TimeGrid,
    pub k11: Vec<DMatrix<f64>>,
    /// Right-hand side of the `K₁₁` equation at each node.
    pub k11_dot: Vec<DMatrix<f64>>,
    pub s: Option<Vec<DVector<f64>>>,
    pub k_full: Option<Vec<DMatrix<f64>>>,
    pub phi_a: Vec<DMatrix<f64>>,
    pub phi_d: Vec<DMatrix<f64>>,
}

impl RiccatiPath {
    pub fn n(&self) -> usize {
        self.k11[0].nrows() / 2
    }

    pub fn k11_at(&self, t: f64) -> DMatrix<f64> {
        let (k, w) = self.grid.bracket(t);
        lerp_matrix(&self.k11[k], &self.k11[k + 1], w)
    }

    /// Co-state at `t`; zero when no asset was supplied.
    pub fn s_at(&self, t: f64) -> DVector<f64> {
        match &self.s {
            Some(s) => {
                let (k, w) = self.grid.bracket(t);
                lerp_vector(&s[k], &s[k + 1], w)
            }
            None => DVector::zeros(2 * self.n()),
        }
    }

    pub fn phi_a_at(&self, t: f64) -> DMatrix<f64> {
        let (k, w) = self.grid.bracket(t);
        lerp_matrix(&self.phi_a[k], &self.phi_a[k + 1], w)
    }

    pub fn phi_d_at(&self, t: f64) -> DMatrix<f64> {
        let (k, w) = self.grid.bracket(t);
        lerp_matrix(&self.phi_d[k], &self.phi_d[k + 1], w)
    }

    /// Upper-right `n × n` block of `K₁₁` at node `k`.
    pub fn k11_ur(&self, k: usize) -> DMatrix<f64> {
        let n = self.n();
        self.k11[k].view((0, n), (n, n)).into_owned()
    }

    /// Writes one row per node: `t`, `K₁₁` row-major, `s`, `tr φ_a`, `tr φ_d`,
    /// then any extra columns.
    pub fn write_csv<W: Write>(&self, out: W, extra: &[(String, Vec<f64>)]) -> Result<()> {
        let n2 = 2 * self.n();
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let mut header = vec!["t".to_string()];
        for i in 0..n2 {
            for j in 0..n2 {
                header.push(format!("k11_{i}_{j}"));
            }
        }
        if self.s.is_some() {
            header.extend((0..n2).map(|i| format!("s_{i}")));
        }
        header.push("tr_phi_a".into());
        header.push("tr_phi_d".into());
        for (name, col) in extra {
            if col.len() != self.grid.len() {
                return Err(Error::invalid(format!("extra column {name} has the wrong length")));
            }
            header.push(name.clone());
        }
        wtr.write_record(&header)?;
        for k in 0..self.grid.len() {
            let mut row = vec![self.grid.node(k).to_string()];
            for i in 0..n2 {
                for j in 0..n2 {
                    row.push(self.k11[k][(i, j)].to_string());
                }
            }
            if let Some(s) = &self.s {
                row.extend(s[k].iter().map(|v| v.to_string()));
            }
            row.push(self.phi_a[k].trace().to_string());
            row.push(self.phi_d[k].trace().to_string());
            for (_, col) in extra {
                row.push(col[k].to_string());
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_escape(m: &DMatrix<f64>, t: f64) -> Result<()> {
    let mag = max_abs(m);
    if !mag.is_finite() || mag > ESCAPE_THRESHOLD {
        return Err(Error::FiniteEscape { time: t, magnitude: mag });
    }
    Ok(())
}

/// Classical RK4 backward from `terminal` at `t_f` for an autonomous
/// symmetric matrix ODE, symmetrizing every accepted step.
fn integrate_symmetric_backward<F>(grid: &TimeGrid, terminal: DMatrix<f64>, rhs: F) -> Result<Vec<DMatrix<f64>>>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let h = grid.step();
    let mut out = vec![DMatrix::zeros(0, 0); grid.len()];
    let mut y = terminal;
    check_escape(&y, grid.t_f)?;
    out[grid.intervals] = y.clone();
    for k in (0..grid.intervals).rev() {
        let k1 = rhs(&y);
        let k2 = rhs(&(&y - &k1 * (0.5 * h)));
        let k3 = rhs(&(&y - &k2 * (0.5 * h)));
        let k4 = rhs(&(&y - &k3 * h));
        y -= (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        symmetrize(&mut y);
        check_escape(&y, grid.node(k))?;
        out[k] = y.clone();
    }
    Ok(out)
}

/// `K̇ = −KA − AᵀK − Q − K M K`.
fn riccati_rhs(k: &DMatrix<f64>, a: &DMatrix<f64>, q: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    -(k * a) - a.transpose() * k - q - k * m * k
}

/// Solves the `2n` player-block Riccati equation backward from
/// `K₁₁(t_f) = Q_f,₁₁` and fills the observation weights.
pub fn solve_k11(
    blocks: &TruncatedBlocks,
    q11: &DMatrix<f64>,
    qf11: &DMatrix<f64>,
    grid: TimeGrid,
) -> Result<RiccatiPath> {
    let n2 = 2 * blocks.n;
    if q11.shape() != (n2, n2) || qf11.shape() != (n2, n2) {
        return Err(Error::invalid(format!("Q11 and Qf11 must be {n2}x{n2}")));
    }
    let m = blocks.coupling();
    let a = &blocks.a_hat;
    let k11 = integrate_symmetric_backward(&grid, qf11.clone(), |k| riccati_rhs(k, a, q11, &m))?;
    let k11_dot = k11.iter().map(|k| riccati_rhs(k, a, q11, &m)).collect();
    let mut path = RiccatiPath { grid, k11, k11_dot, s: None, k_full: None, phi_a: Vec::new(), phi_d: Vec::new() };
    let (phi_a, phi_d) = weighting_paths(&path, blocks);
    path.phi_a = phi_a;
    path.phi_d = phi_d;
    Ok(path)
}

/// Solves `ṡ = [−Âᵀ − K₁₁ M] s − Q₁₂ x_s` backward from `s(t_f) = Q_f,₁₂ x_s(t_f)`.
///
/// `K₁₁` at the RK4 half steps comes from cubic Hermite interpolation of the
/// stored samples and rates, which keeps the scheme fourth order.
pub fn solve_s(
    mut path: RiccatiPath,
    blocks: &TruncatedBlocks,
    q12: &DMatrix<f64>,
    qf12: &DMatrix<f64>,
    asset: &AssetTrajectory,
) -> Result<RiccatiPath> {
    let n = blocks.n;
    if q12.shape() != (2 * n, n) || qf12.shape() != (2 * n, n) {
        return Err(Error::invalid(format!("Q12 and Qf12 must be {}x{n}", 2 * n)));
    }
    asset.validate(n, path.grid.t_f)?;
    let grid = path.grid;
    let h = grid.step();
    let m = blocks.coupling();
    let a_t = blocks.a_hat.transpose();
    let rhs = |k11: &DMatrix<f64>, s: &DVector<f64>, xs: &DVector<f64>| -> DVector<f64> {
        -(&a_t * s) - k11 * (&m * s) - q12 * xs
    };

    let mut out = vec![DVector::zeros(0); grid.len()];
    let mut s = qf12 * asset.state_at(grid.t_f);
    out[grid.intervals] = s.clone();
    for k in (0..grid.intervals).rev() {
        let (t_hi, t_lo) = (grid.node(k + 1), grid.node(k));
        let k_mid = (&path.k11[k] + &path.k11[k + 1]) * 0.5 + (&path.k11_dot[k] - &path.k11_dot[k + 1]) * (h / 8.0);
        let xs_hi = asset.state_at(t_hi);
        let xs_mid = asset.state_at(0.5 * (t_hi + t_lo));
        let xs_lo = asset.state_at(t_lo);
        let k1 = rhs(&path.k11[k + 1], &s, &xs_hi);
        let k2 = rhs(&k_mid, &(&s - &k1 * (0.5 * h)), &xs_mid);
        let k3 = rhs(&k_mid, &(&s - &k2 * (0.5 * h)), &xs_mid);
        let k4 = rhs(&path.k11[k], &(&s - &k3 * h), &xs_lo);
        s -= (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let mag = s.amax();
        if !mag.is_finite() || mag > ESCAPE_THRESHOLD {
            return Err(Error::FiniteEscape { time: t_lo, magnitude: mag });
        }
        out[k] = s.clone();
    }
    path.s = Some(out);
    Ok(path)
}

/// Full `3n` Riccati solve; needs the asset generator inside `A`.
pub fn solve_full_k(agg: &AggregateSystem, grid: TimeGrid) -> Result<Vec<DMatrix<f64>>> {
    if !agg.has_asset_generator {
        return Err(Error::invalid("full Riccati solve needs a linear asset trajectory"));
    }
    let m = &agg.b_d * agg.b_d.transpose() - &agg.b_a * agg.b_a.transpose();
    integrate_symmetric_backward(&grid, agg.q_f.clone(), |k| riccati_rhs(k, &agg.a, &agg.q, &m))
}

/// `φ_a = K₁₁^{ur}ᵀ B̃_a B̃_aᵀ K₁₁^{ur}` and `φ_d = K₁₁^{ur} B̃_d B̃_dᵀ K₁₁^{ur}ᵀ` at every node.
pub fn weighting_paths(path: &RiccatiPath, blocks: &TruncatedBlocks) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let n = blocks.n;
    let ga = &blocks.b_a * blocks.b_a.transpose();
    let gd = &blocks.b_d * blocks.b_d.transpose();
    path.k11
        .iter()
        .map(|k| {
            let ur = k.view((0, n), (n, n));
            let mut pa = ur.transpose() * &ga * ur;
            let mut pd = ur * &gd * ur.transpose();
            symmetrize(&mut pa);
            symmetrize(&mut pd);
            (pa, pd)
        })
        .unzip()
}

/// `∫₀^{t_f} Tr(K₁₁ · blockdiag(C_a C_aᵀ, C_d C_dᵀ)) dt` by Simpson's rule on
/// the grid (trapezoid on a trailing odd interval). Equals the full
/// `∫Tr(K C Cᵀ)` because the asset block of `C` is zero.
pub fn noise_integral(path: &RiccatiPath, c_a: &DMatrix<f64>, c_d: &DMatrix<f64>) -> f64 {
    let n = path.n();
    let mut w = DMatrix::zeros(2 * n, 2 * n);
    w.view_mut((0, 0), (n, n)).copy_from(&(c_a * c_a.transpose()));
    w.view_mut((n, n), (n, n)).copy_from(&(c_d * c_d.transpose()));
    let vals: Vec<f64> = path.k11.iter().map(|k| trace_of_product(k, &w)).collect();
    simpson_uniform(&vals, path.grid.step())
}

/// Composite Simpson on uniform samples.
pub(crate) fn simpson_uniform(vals: &[f64], h: f64) -> f64 {
    let m = vals.len() - 1;
    if m == 0 {
        return 0.0;
    }
    let even = m - m % 2;
    let mut acc = 0.0;
    let mut i = 0;
    while i < even {
        acc += vals[i] + 4.0 * vals[i + 1] + vals[i + 2];
        i += 2;
    }
    acc *= h / 3.0;
    if even < m {
        acc += 0.5 * h * (vals[m - 1] + vals[m]);
    }
    acc
}

/// Closed-form `K₁₁` for the simple-motion game (`A = 0`, `B̃ = b·I`, no
/// running weights):
///
/// `K₁₁(t) = k(t) [[κ₁, −1], [−1, κ₂]] ⊗ I_n` with `σ = t_f − t` and
///
/// - `κ₁ = −ω_a b_d² σ + 1 − ω_a/ω_d`
/// - `κ₂ = ω_a b_a² σ + 1`
/// - `k = ω_a ω_d / ((ω_a b_a² σ + 1)(−ω_a ω_d b_d² σ + ω_d − ω_a) − ω_d)`
///
/// It comes from `Γ = K₁₁⁻¹` obeying `Γ̇ = B̂_d B̂_dᵀ − B̂_a B̂_aᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseStudyRiccati {
    pub omega_a: f64,
    pub omega_d: f64,
    pub b_a: f64,
    pub b_d: f64,
    pub t_f: f64,
}

impl CaseStudyRiccati {
    pub fn new(omega_a: f64, omega_d: f64, b_a: f64, b_d: f64, t_f: f64) -> Result<Self> {
        if !(omega_a > 0.0 && omega_d > 0.0) {
            return Err(Error::invalid("closed form needs positive terminal weights"));
        }
        if !(t_f > 0.0 && b_a.is_finite() && b_d.is_finite()) {
            return Err(Error::invalid("closed form needs a positive horizon and finite gains"));
        }
        let cs = CaseStudyRiccati { omega_a, omega_d, b_a, b_d, t_f };
        cs.check_bounded()?;
        Ok(cs)
    }

    fn to_go(self, t: f64) -> f64 {
        self.t_f - t
    }

    pub fn denominator(&self, t: f64) -> f64 {
        let (wa, wd) = (self.omega_a, self.omega_d);
        let sigma = self.to_go(t);
        (wa * self.b_a * self.b_a * sigma + 1.0) * (-wa * wd * self.b_d * self.b_d * sigma + wd - wa) - wd
    }

    pub fn k(&self, t: f64) -> f64 {
        self.omega_a * self.omega_d / self.denominator(t)
    }

    pub fn kappa1(&self, t: f64) -> f64 {
        -self.b_d * self.b_d * self.to_go(t) * self.omega_a + 1.0 - self.omega_a / self.omega_d
    }

    pub fn kappa2(&self, t: f64) -> f64 {
        self.b_a * self.b_a * self.to_go(t) * self.omega_a + 1.0
    }

    /// `K₁₁(t)` for players of dimension `n`.
    pub fn k11(&self, t: f64, n: usize) -> DMatrix<f64> {
        let k = self.k(t);
        let core = DMatrix::from_row_slice(2, 2, &[k * self.kappa1(t), -k, -k, k * self.kappa2(t)]);
        kron_identity(&core, n)
    }

    /// The denominator is a quadratic in `σ = t_f − t`, negative at `σ = 0`;
    /// a root in `[0, t_f]` means the solution blows up there.
    pub fn check_bounded(&self) -> Result<()> {
        let (wa, wd) = (self.omega_a, self.omega_d);
        let (ba2, bd2) = (self.b_a * self.b_a, self.b_d * self.b_d);
        let qa = -wa * wa * wd * ba2 * bd2;
        let qb = wa * (ba2 * (wd - wa) - wd * bd2);
        let qc = -wa;
        let roots: Vec<f64> = if qa == 0.0 {
            if qb == 0.0 {
                vec![]
            } else {
                vec![-qc / qb]
            }
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                vec![]
            } else {
                let r = disc.sqrt();
                vec![(-qb + r) / (2.0 * qa), (-qb - r) / (2.0 * qa)]
            }
        };
        if let Some(sigma) = roots.into_iter().filter(|s| (0.0..=self.t_f).contains(s)).reduce(f64::min) {
            return Err(Error::FiniteEscape { time: self.t_f - sigma, magnitude: f64::INFINITY });
        }
        Ok(())
    }
}

/// `K₁₁(t)` (planar, `4 × 4`) for the simple-motion game.
pub fn closed_form_k11(omega_a: f64, omega_d: f64, b_a: f64, b_d: f64, t_f: f64, t: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=t_f).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, {t_f}]")));
    }
    Ok(CaseStudyRiccati::new(omega_a, omega_d, b_a, b_d, t_f)?.k11(t, 2))
}

/// Max-over-nodes relative error (entrywise max norm) between a solved path
/// and the closed form.
pub fn closed_form_error(path: &RiccatiPath, cs: &CaseStudyRiccati) -> f64 {
    let n = path.n();
    path.grid
        .nodes()
        .zip(&path.k11)
        .map(|(t, k)| {
            let exact = cs.k11(t, n);
            max_abs(&(k - &exact)) / max_abs(&exact)
        })
        .fold(0.0, f64::max)
}
