//! Radial three-dimensional solver for the integral equations
//!
//! ```text
//! u = ε U₀ + L|v|^q,    v = ε V₀ + L|∂ₜu|^p
//! ```
//!
//! on a characteristic-aligned grid (`Δt = Δr = h`), so that every argument
//! `r ± (t - s)` of the kernels is a grid node and no interpolation is needed.
//!
//! Two evaluation paths exist for the Duhamel operators:
//!
//! * [`Kernels`] evaluates `L` and `K±` directly as nested trapezoid sums, one
//!   node at a time. It is the reference path.
//! * [`DuhamelSweep`] advances the same sums level by level in `O(n_r)` work per
//!   level: `2rL` obeys a four-point diamond recursion, and `K±` are sums along
//!   the two characteristic families kept in running accumulators. Both paths
//!   produce the same numbers up to rounding.
//!
//! Sources are even in `r`; negative radii are read by reflection.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{self, AnalyticsError};
use crate::quadrature::trapezoid_uniform;

pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e6;
pub const EPS_FLOOR: f64 = 1e-8;
/// Largest space-time box `picard_run` will hold (six fields of this many nodes).
pub const PICARD_MAX_NODES: usize = 20_000_000;
/// Picard differences below this fraction of the iterate norm count as converged.
pub const PICARD_ROUNDOFF: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid profile: {0}")]
    Profile(&'static str),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("node (level {level}, node {node}) is outside the computed range")]
    Sequencing { level: usize, node: usize },
    #[error("invalid parameter {name} = {value}")]
    Parameter { name: &'static str, value: f64 },
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("picard iteration needs at least 2 iterations")]
    TooFewIterations,
    #[error("picard box of {nodes} nodes exceeds the limit of {limit}")]
    BoxTooLarge { nodes: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileKind {
    Bump,
    Zero,
}

/// Even, compactly supported radial profile.
///
/// `Bump` is `amplitude · (1 - (r/R)²)⁴` on `|r| < R` and zero outside; it
/// has continuous derivatives through third order at `|r| = R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub kind: ProfileKind,
    pub amplitude: f64,
    pub support_radius: f64,
}

impl RadialProfile {
    pub fn bump(amplitude: f64, support_radius: f64) -> Result<Self, SolverError> {
        if !(support_radius > 0.0 && support_radius.is_finite()) {
            return Err(SolverError::Profile("support radius must be positive"));
        }
        if !amplitude.is_finite() {
            return Err(SolverError::Profile("amplitude must be finite"));
        }
        Ok(Self {
            kind: ProfileKind::Bump,
            amplitude,
            support_radius,
        })
    }

    pub fn zero() -> Self {
        Self {
            kind: ProfileKind::Zero,
            amplitude: 0.0,
            support_radius: 1.0,
        }
    }

    /// Radius outside of which the profile vanishes.
    pub fn support(&self) -> f64 {
        match self.kind {
            ProfileKind::Zero => 0.0,
            ProfileKind::Bump => self.support_radius,
        }
    }

    fn unit(&self, r: f64) -> Option<f64> {
        match self.kind {
            ProfileKind::Zero => None,
            ProfileKind::Bump => {
                let s = (r / self.support_radius).powi(2);
                (s < 1.0).then_some(s)
            }
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.unit(r)
            .map_or(0.0, |s| self.amplitude * (1.0 - s).powi(4))
    }

    pub fn derivative(&self, r: f64) -> f64 {
        let r2 = self.support_radius * self.support_radius;
        self.unit(r)
            .map_or(0.0, |s| -8.0 * self.amplitude * r * (1.0 - s).powi(3) / r2)
    }

    pub fn second_derivative(&self, r: f64) -> f64 {
        let r2 = self.support_radius * self.support_radius;
        self.unit(r).map_or(0.0, |s| {
            -8.0 * self.amplitude / r2 * (1.0 - s).powi(2) * (1.0 - 7.0 * s)
        })
    }

    /// Even antiderivative of `ρ ↦ ρ f(ρ)`, zero outside the support.
    pub fn moment_antiderivative(&self, r: f64) -> f64 {
        let r2 = self.support_radius * self.support_radius;
        self.unit(r)
            .map_or(0.0, |s| -self.amplitude * r2 / 10.0 * (1.0 - s).powi(5))
    }
}

/// Free radial wave with data `(f, g)`:
/// `U₀(t,r) = ((r+t)f(r+t) + (r-t)f(r-t))/(2r) + (1/2r)∫_{r-t}^{r+t} ρ g(ρ) dρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeWave {
    pub f: RadialProfile,
    pub g: RadialProfile,
}

impl FreeWave {
    pub fn new(f: RadialProfile, g: RadialProfile) -> Self {
        Self { f, g }
    }

    // φ(x) = x f(x), ψ(x) = x g(x); both odd.
    fn dphi(&self, x: f64) -> f64 {
        self.f.value(x) + x * self.f.derivative(x)
    }

    fn psi(&self, x: f64) -> f64 {
        x * self.g.value(x)
    }

    pub fn value(&self, t: f64, r: f64) -> f64 {
        let r = r.abs();
        if r == 0.0 {
            return self.dphi(t) + t * self.g.value(t);
        }
        let (a, b) = (r + t, r - t);
        (a * self.f.value(a) + b * self.f.value(b) + self.g.moment_antiderivative(a)
            - self.g.moment_antiderivative(b))
            / (2.0 * r)
    }

    pub fn time_derivative(&self, t: f64, r: f64) -> f64 {
        let r = r.abs();
        if r == 0.0 {
            let d2phi = 2.0 * self.f.derivative(t) + t * self.f.second_derivative(t);
            let dpsi = self.g.value(t) + t * self.g.derivative(t);
            return d2phi + dpsi;
        }
        let (a, b) = (t + r, t - r);
        (self.dphi(a) - self.dphi(b) + self.psi(a) - self.psi(b)) / (2.0 * r)
    }

    /// `∂ᵣ(r U₀)`.
    pub fn radial_flux(&self, t: f64, r: f64) -> f64 {
        let (a, b) = (t + r, t - r);
        0.5 * (self.dphi(a) + self.dphi(b) + self.psi(a) + self.psi(b))
    }

    /// `r ∂ᵣ U₀`.
    pub fn r_dr(&self, t: f64, r: f64) -> f64 {
        if r == 0.0 {
            0.0
        } else {
            self.radial_flux(t, r) - self.value(t, r)
        }
    }
}

/// `U₀` and `∂ₜU₀` at `(t, r)` for data `(f, g)`.
pub fn free_field(f: &RadialProfile, g: &RadialProfile, t: f64, r: f64) -> (f64, f64) {
    let wave = FreeWave::new(*f, *g);
    (wave.value(t, r), wave.time_derivative(t, r))
}

/// The four data profiles: `(f, g)` for `u`, `(f̃, g̃)` for `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub f: RadialProfile,
    pub g: RadialProfile,
    pub f_tilde: RadialProfile,
    pub g_tilde: RadialProfile,
}

impl Default for InitialData {
    fn default() -> Self {
        let b = RadialProfile {
            kind: ProfileKind::Bump,
            amplitude: 1.0,
            support_radius: 1.0,
        };
        Self {
            f: b,
            g: b,
            f_tilde: b,
            g_tilde: b,
        }
    }
}

impl InitialData {
    pub fn support(&self) -> f64 {
        [self.f, self.g, self.f_tilde, self.g_tilde]
            .iter()
            .map(RadialProfile::support)
            .fold(0.0, f64::max)
    }

    pub fn u_wave(&self) -> FreeWave {
        FreeWave::new(self.f, self.g)
    }

    pub fn v_wave(&self) -> FreeWave {
        FreeWave::new(self.f_tilde, self.g_tilde)
    }
}

/// Square lattice `t_k = k h`, `r_j = j h`, `k ≤ n_t`, `j ≤ n_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicGrid {
    pub h: f64,
    pub n_t: usize,
    pub n_r: usize,
}

impl CharacteristicGrid {
    pub fn new(h: f64, n_t: usize, n_r: usize) -> Result<Self, SolverError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(SolverError::Grid(format!("spacing h = {h} must be positive")));
        }
        if n_r < 2 {
            return Err(SolverError::Grid("need at least 3 radial nodes".into()));
        }
        Ok(Self { h, n_t, n_r })
    }

    /// Smallest grid reaching `t_max` whose radial extent contains the cone.
    pub fn covering(h: f64, t_max: f64, support: f64) -> Result<Self, SolverError> {
        if !(t_max >= 0.0) {
            return Err(SolverError::Grid(format!("t_max = {t_max} must be >= 0")));
        }
        let n_t = (t_max / h - 1e-9).ceil().max(0.0) as usize;
        let n_r = n_t + (support / h - 1e-9).ceil().max(0.0) as usize + 2;
        Self::new(h, n_t, n_r)
    }

    pub fn t_max(&self) -> f64 {
        self.n_t as f64 * self.h
    }

    pub fn r_max(&self) -> f64 {
        self.n_r as f64 * self.h
    }

    pub fn r(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    /// Checks `n_r h >= t_max + support`, so fields vanish near the outer edge.
    pub fn check_cone(&self, support: f64) -> Result<(), SolverError> {
        if self.r_max() + 1e-9 * self.h < self.t_max() + support {
            return Err(SolverError::Grid(format!(
                "radial extent {} does not contain the cone t_max + support = {}",
                self.r_max(),
                self.t_max() + support
            )));
        }
        Ok(())
    }

    pub fn halved(&self) -> Self {
        Self {
            h: self.h / 2.0,
            n_t: 2 * self.n_t,
            n_r: 2 * self.n_r,
        }
    }
}

/// Values `F(s_m, ρ_i)` of a source for the Duhamel operators.
pub trait GridSource {
    /// Value at level `m` and node `i >= 0`.
    fn value(&self, m: usize, i: usize) -> f64;
}

/// A source stored on grid nodes, zero beyond the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub grid: CharacteristicGrid,
    data: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: CharacteristicGrid) -> Self {
        Self {
            grid,
            data: vec![0.0; (grid.n_t + 1) * (grid.n_r + 1)],
        }
    }

    pub fn from_fn(grid: CharacteristicGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for k in 0..=grid.n_t {
            for j in 0..=grid.n_r {
                out.data[k * (grid.n_r + 1) + j] = f(grid.r(k), grid.r(j));
            }
        }
        out
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let w = self.grid.n_r + 1;
        &self.data[k * w..(k + 1) * w]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let w = self.grid.n_r + 1;
        &mut self.data[k * w..(k + 1) * w]
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.data[k * (self.grid.n_r + 1) + j]
    }
}

impl GridSource for SpaceTimeField {
    fn value(&self, m: usize, i: usize) -> f64 {
        if i > self.grid.n_r || m > self.grid.n_t {
            0.0
        } else {
            self.get(m, i)
        }
    }
}

/// A source given by a closure `F(s, ρ)`, defined at every node.
pub struct FnSource<F> {
    pub h: f64,
    pub f: F,
}

impl<F: Fn(f64, f64) -> f64> GridSource for FnSource<F> {
    fn value(&self, m: usize, i: usize) -> f64 {
        (self.f)(m as f64 * self.h, i as f64 * self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KSign {
    Plus,
    Minus,
}

/// Reference evaluation of `L` and `K±` by nested trapezoid sums.
///
/// Holds, per level, the cumulative trapezoid `C_m(i) = ∫₀^{ρ_i} ρ F(s_m, ρ) dρ`
/// and the samples `ρ_i F(s_m, ρ_i)` up to `n_r + n_t`, which covers every
/// argument `r + (t - s)` reachable from the grid.
pub struct Kernels {
    grid: CharacteristicGrid,
    width: usize,
    cum: Vec<f64>,
    moment: Vec<f64>,
}

impl Kernels {
    pub fn new<S: GridSource + ?Sized>(source: &S, grid: CharacteristicGrid) -> Self {
        let width = grid.n_r + grid.n_t + 1;
        let h = grid.h;
        let mut cum = vec![0.0; (grid.n_t + 1) * width];
        let mut moment = vec![0.0; (grid.n_t + 1) * width];
        for m in 0..=grid.n_t {
            let row = m * width;
            for i in 0..width {
                moment[row + i] = i as f64 * h * source.value(m, i);
            }
            for i in 1..width {
                cum[row + i] = cum[row + i - 1] + 0.5 * h * (moment[row + i - 1] + moment[row + i]);
            }
        }
        Self {
            grid,
            width,
            cum,
            moment,
        }
    }

    fn check(&self, k: usize, j: usize) -> Result<(), SolverError> {
        if k > self.grid.n_t || j > self.grid.n_r {
            Err(SolverError::Sequencing { level: k, node: j })
        } else {
            Ok(())
        }
    }

    fn c(&self, m: usize, i: i64) -> f64 {
        self.cum[m * self.width + i.unsigned_abs() as usize]
    }

    /// `ρ F(s_m, ρ)` at signed node `i`, odd in `i`.
    fn g(&self, m: usize, i: i64) -> f64 {
        let v = self.moment[m * self.width + i.unsigned_abs() as usize];
        if i < 0 {
            -v
        } else {
            v
        }
    }

    /// `LF(t_k, r_j) = (1/2r) ∫₀ᵗ ∫_{r-(t-s)}^{r+(t-s)} ρ F dρ ds`;
    /// at `r = 0` the limit `∫₀ᵗ (t-s) F(s, t-s) ds`.
    pub fn apply_l(&self, k: usize, j: usize) -> Result<f64, SolverError> {
        self.check(k, j)?;
        if k == 0 {
            return Ok(0.0);
        }
        let h = self.grid.h;
        if j == 0 {
            let mut s = 0.5 * self.g(0, k as i64);
            for m in 1..k {
                s += self.g(m, (k - m) as i64);
            }
            return Ok(h * s);
        }
        let (j, ki) = (j as i64, k as i64);
        let inner = |m: usize| {
            let tau = ki - m as i64;
            self.c(m, j + tau) - self.c(m, j - tau)
        };
        let mut s = 0.5 * inner(0);
        for m in 1..k {
            s += inner(m);
        }
        Ok(h * s / (2.0 * self.grid.r(j as usize)))
    }

    /// `K±F(t, r) = ½ ∫₀ᵗ {(r+t-s) F(s, r+t-s) ± (r-t+s) F(s, r-t+s)} ds`.
    pub fn apply_k(&self, sign: KSign, k: usize, j: usize) -> Result<f64, SolverError> {
        self.check(k, j)?;
        let sgn = match sign {
            KSign::Plus => 1.0,
            KSign::Minus => -1.0,
        };
        let (ji, ki) = (j as i64, k as i64);
        let term = |m: usize| {
            let tau = ki - m as i64;
            self.g(m, ji + tau) + sgn * self.g(m, ji - tau)
        };
        if k == 0 {
            return Ok(0.0);
        }
        let mut s = 0.5 * (term(0) + term(k));
        for m in 1..k {
            s += term(m);
        }
        Ok(0.5 * self.grid.h * s)
    }
}

/// Level-by-level evaluation of `L`, `K+`, `K-` for one source.
///
/// After levels `0..k` have been pushed, [`l_level`](Self::l_level) gives `LF` at
/// level `k`; [`k_plus`](Self::k_plus) and [`k_minus`](Self::k_minus) give `K±F`
/// at level `k` (`K+` also needs the level-`k` source value at the node).
#[derive(Debug, Clone)]
pub struct DuhamelSweep {
    grid: CharacteristicGrid,
    pushed: usize,
    // 2 r L at levels pushed - 1 and pushed.
    phi_prev: Vec<f64>,
    phi_cur: Vec<f64>,
    scratch: Vec<f64>,
    cum: Vec<f64>,
    moment: Vec<f64>,
    // Trapezoid-weighted sums of ρF along m + i = c and m - i = d.
    incoming: Vec<f64>,
    outgoing: Vec<f64>,
}

impl DuhamelSweep {
    pub fn new(grid: CharacteristicGrid) -> Self {
        let n = grid.n_r + 2;
        Self {
            grid,
            pushed: 0,
            phi_prev: vec![0.0; n],
            phi_cur: vec![0.0; n],
            scratch: vec![0.0; n],
            cum: vec![0.0; n],
            moment: vec![0.0; n],
            incoming: vec![0.0; grid.n_t + grid.n_r + 2],
            outgoing: vec![0.0; grid.n_t + grid.n_r + 2],
        }
    }

    /// Number of levels already pushed; the next level to evaluate.
    pub fn level(&self) -> usize {
        self.pushed
    }

    fn out_index(&self, d: i64) -> usize {
        (d + self.grid.n_r as i64) as usize
    }

    /// Adds the source values of the next level. Nodes past the end of
    /// `source` are taken as zero, and work beyond them is skipped.
    pub fn push(&mut self, source: &[f64]) {
        let n_r = self.grid.n_r;
        debug_assert!(!source.is_empty() && source.len() <= n_r + 1);
        let h = self.grid.h;
        let m = self.pushed;
        let weight = if m == 0 { 0.5 } else { 1.0 };
        let active = source.len() - 1;
        let lim = (active + 2).min(n_r);
        for i in 0..=lim {
            self.moment[i] = if i <= active { i as f64 * h * source[i] } else { 0.0 };
        }
        self.moment[lim + 1] = 0.0;
        self.cum[0] = 0.0;
        for i in 1..=lim + 1 {
            self.cum[i] = self.cum[i - 1] + 0.5 * h * (self.moment[i - 1] + self.moment[i]);
        }
        for i in 1..=active {
            self.incoming[m + i] += weight * self.moment[i];
            let d = self.out_index(m as i64 - i as i64);
            self.outgoing[d] += weight * self.moment[i];
        }
        // Advance 2rL from level m to m + 1.
        let mut next = std::mem::take(&mut self.scratch);
        next[..=lim + 1].iter_mut().for_each(|x| *x = 0.0);
        if m == 0 {
            for j in 1..=lim {
                next[j] = 0.5 * h * (self.cum[j + 1] - self.cum[j - 1]);
            }
        } else {
            for j in 1..=lim {
                let left = if j == 1 { 0.0 } else { self.phi_cur[j - 1] };
                next[j] = self.phi_cur[j + 1] + left - self.phi_prev[j]
                    + h * (self.cum[j + 1] - self.cum[j - 1]);
            }
        }
        let older = std::mem::replace(&mut self.phi_cur, next);
        self.scratch = std::mem::replace(&mut self.phi_prev, older);
        self.pushed += 1;
    }

    /// `LF` at the current level for every node.
    pub fn l_level(&self) -> Vec<f64> {
        self.l_level_upto(self.grid.n_r)
    }

    /// `LF` at the current level on nodes `0..=active`.
    pub fn l_level_upto(&self, active: usize) -> Vec<f64> {
        let h = self.grid.h;
        let k = self.pushed;
        let mut out = vec![0.0; active.min(self.grid.n_r) + 1];
        if k == 0 {
            return out;
        }
        out[0] = h * self.incoming[k];
        for (j, o) in out.iter_mut().enumerate().skip(1) {
            *o = self.phi_cur[j] / (2.0 * j as f64 * h);
        }
        out
    }

    /// `K+F` at the current level and node `j`, given `F` there.
    pub fn k_plus(&self, j: usize, current: f64) -> f64 {
        if j == 0 || self.pushed == 0 {
            return 0.0;
        }
        let k = self.pushed as i64;
        let ji = j as i64;
        let h = self.grid.h;
        let ahead = self.incoming[(k + ji) as usize];
        let behind = if k - ji >= 0 {
            self.outgoing[self.out_index(k - ji)] - self.incoming[(k - ji) as usize]
        } else {
            self.outgoing[self.out_index(k - ji)]
        };
        0.5 * h * (ahead + behind + j as f64 * h * current)
    }

    /// `K-F` at the current level and node `j`.
    pub fn k_minus(&self, j: usize) -> f64 {
        let k = self.pushed as i64;
        let ji = j as i64;
        let h = self.grid.h;
        if j == 0 {
            return h * self.incoming[k as usize];
        }
        let ahead = self.incoming[(k + ji) as usize];
        let behind = if k - ji >= 0 {
            self.outgoing[self.out_index(k - ji)] - self.incoming[(k - ji) as usize]
        } else {
            self.outgoing[self.out_index(k - ji)]
        };
        0.5 * h * (ahead - behind)
    }
}

/// Japanese bracket convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bracket {
    /// `⟨ξ⟩ = sqrt(1 + ξ²)`
    Sqrt,
    /// `⟨ξ⟩ = 1 + |ξ|`
    OnePlusAbs,
}

impl Default for Bracket {
    fn default() -> Self {
        if cfg!(feature = "bracket-one-plus-abs") {
            Bracket::OnePlusAbs
        } else {
            Bracket::Sqrt
        }
    }
}

impl Bracket {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Bracket::Sqrt => x.hypot(1.0),
            Bracket::OnePlusAbs => 1.0 + x.abs(),
        }
    }
}

/// Space-time weights of the global-existence norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub mu: f64,
    pub p: f64,
    pub bracket: Bracket,
}

impl WeightSet {
    pub fn new(mu: f64, p: f64) -> Result<Self, SolverError> {
        if !(p > 1.0) {
            return Err(SolverError::Parameter { name: "p", value: p });
        }
        if !mu.is_finite() {
            return Err(SolverError::Parameter { name: "mu", value: mu });
        }
        Ok(Self {
            mu,
            p,
            bracket: Bracket::default(),
        })
    }

    /// Weights with μ at the midpoint of the admissible window for `(p, q)`.
    pub fn for_exponents(p: f64, q: f64) -> Result<Self, SolverError> {
        let win = analytics::mu_window(p, q)?;
        Self::new(win.chosen_mu, p)
    }

    fn br(&self, x: f64) -> f64 {
        self.bracket.eval(x)
    }

    /// `⟨r⟩⟨t-r⟩^{μ/p}`
    pub fn w1(&self, t: f64, r: f64) -> f64 {
        self.br(r) * self.br(t - r).powf(self.mu / self.p)
    }

    /// `⟨r⟩^{p-2}⟨t+r⟩^μ` for `r < t/2`, `⟨t-r⟩^{p-3+μ}⟨t+r⟩` otherwise.
    pub fn w2(&self, t: f64, r: f64) -> f64 {
        if r < t / 2.0 {
            self.br(r).powf(self.p - 2.0) * self.br(t + r).powf(self.mu)
        } else {
            self.br(t - r).powf(self.p - 3.0 + self.mu) * self.br(t + r)
        }
    }

    /// `⟨t-r⟩^μ`
    pub fn w3(&self, t: f64, r: f64) -> f64 {
        self.br(t - r).powf(self.mu)
    }
}

/// Grid values at one time level: `u`, `v`, `w = ∂ₜu`, `dv = r∂ᵣv`.
///
/// Arrays may stop short of the grid edge; the fields vanish on the nodes past them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub level: usize,
    pub t: f64,
    pub h: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub dv: Vec<f64>,
}

impl FieldState {
    pub fn zeros(level: usize, h: f64, nodes: usize) -> Self {
        Self {
            level,
            t: level as f64 * h,
            h,
            u: vec![0.0; nodes],
            v: vec![0.0; nodes],
            w: vec![0.0; nodes],
            dv: vec![0.0; nodes],
        }
    }

    pub fn r(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    /// Writes `t,r,u,v,w,dv` rows, one per node, with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: &mut W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(out, "t,r,u,v,w,dv")?;
        }
        for j in 0..self.u.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.t,
                self.r(j),
                self.u[j],
                self.v[j],
                self.w[j],
                self.dv[j]
            )?;
        }
        Ok(())
    }
}

/// Suprema over the nodes of `w₁|w|`, `w₂|v|`, `w₃|r∂ᵣv|`.
pub fn weighted_norms(state: &FieldState, weights: &WeightSet) -> (f64, f64, f64) {
    let t = state.t;
    let mut n = (0.0_f64, 0.0_f64, 0.0_f64);
    for j in 0..state.u.len() {
        let r = state.r(j);
        n.0 = n.0.max(weights.w1(t, r) * state.w[j].abs());
        n.1 = n.1.max(weights.w2(t, r) * state.v[j].abs());
        n.2 = n.2.max(weights.w3(t, r) * state.dv[j].abs());
    }
    n
}

/// `∫_{R³} f dx = 4π ∫₀^∞ f r² dr` by the trapezoid rule on the nodes.
pub fn radial_integral(values: &[f64], h: f64, map: impl Fn(f64) -> f64) -> f64 {
    let weighted: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let r = j as f64 * h;
            map(x) * r * r
        })
        .collect();
    4.0 * PI * trapezoid_uniform(&weighted, h)
}

/// `(F, G, ‖v‖_q^q, ‖∂ₜu‖_p^p)` with `F = ∫u`, `G = ∫v`.
pub fn functionals_fg(state: &FieldState, p: f64, q: f64) -> (f64, f64, f64, f64) {
    let h = state.h;
    (
        radial_integral(&state.u, h, |x| x),
        radial_integral(&state.v, h, |x| x),
        radial_integral(&state.v, h, |x| abs_pow(x, q)),
        radial_integral(&state.w, h, |x| abs_pow(x, p)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SolveOutcome {
    CompletedHorizon,
    BlowupDetected { t_low: f64, t_high: f64 },
    NumericalDivergence { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub t: f64,
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
}

impl NormRecord {
    pub fn total(&self) -> f64 {
        self.n1 + self.n2 + self.n3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FgRecord {
    pub t: f64,
    pub f: f64,
    pub g: f64,
    pub v_q: f64,
    pub w_p: f64,
}

/// Result of the grid-halving confirmation of a detected blow-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confirmation {
    pub coarse: (f64, f64),
    pub fine: Option<(f64, f64)>,
    /// The fine midpoint lies within one coarse bracket width of the coarse midpoint.
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub outcome: SolveOutcome,
    pub grid: CharacteristicGrid,
    pub levels_completed: usize,
    pub norm_history: Vec<NormRecord>,
    pub fg_history: Vec<FgRecord>,
    pub max_abs: Vec<(f64, f64, f64)>,
    pub confirmation: Option<Confirmation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchOptions {
    pub blowup_threshold: f64,
    pub eps_floor: f64,
    /// When false, the nonlinear terms are dropped and the run is the free evolution.
    pub nonlinear: bool,
    /// Weights for the per-level norm history; none recorded when absent.
    pub weights: Option<WeightSet>,
    /// Re-run at `h/2` after a detection and report the refined bracket.
    pub confirm: bool,
}

impl Default for MarchOptions {
    fn default() -> Self {
        Self {
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
            eps_floor: EPS_FLOOR,
            nonlinear: true,
            weights: None,
            confirm: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Problem {
    pub eps: f64,
    pub data: InitialData,
    pub p: f64,
    pub q: f64,
}

impl Problem {
    pub fn new(eps: f64, data: InitialData, p: f64, q: f64) -> Result<Self, SolverError> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(SolverError::Parameter { name: "eps", value: eps });
        }
        if !(p > 1.0) {
            return Err(SolverError::Parameter { name: "p", value: p });
        }
        if !(q > 1.0) {
            return Err(SolverError::Parameter { name: "q", value: q });
        }
        Ok(Self { eps, data, p, q })
    }
}

/// Per-node free-field samples needed at every level.
struct FreeLevel {
    u0: Vec<f64>,
    dtu0: Vec<f64>,
    v0: Vec<f64>,
    rdrv0: Vec<f64>,
}

fn free_level(problem: &Problem, grid: &CharacteristicGrid, k: usize, n: usize) -> FreeLevel {
    let t = grid.r(k);
    let (uw, vw) = (problem.data.u_wave(), problem.data.v_wave());
    let e = problem.eps;
    let mut fl = FreeLevel {
        u0: Vec::with_capacity(n),
        dtu0: Vec::with_capacity(n),
        v0: Vec::with_capacity(n),
        rdrv0: Vec::with_capacity(n),
    };
    // Strong Huygens: the free waves vanish off the band |r - t| < support.
    let support = problem.data.support();
    let lo = ((t - support) / grid.h).floor().max(0.0) as usize;
    let hi = (((t + support) / grid.h).ceil() as usize + 1).min(n);
    fl.u0.resize(lo.min(hi), 0.0);
    fl.dtu0.resize(lo.min(hi), 0.0);
    fl.v0.resize(lo.min(hi), 0.0);
    fl.rdrv0.resize(lo.min(hi), 0.0);
    for j in lo.min(hi)..hi {
        let r = grid.r(j);
        fl.u0.push(e * uw.value(t, r));
        fl.dtu0.push(e * uw.time_derivative(t, r));
        fl.v0.push(e * vw.value(t, r));
        fl.rdrv0.push(e * vw.r_dr(t, r));
    }
    for a in [&mut fl.u0, &mut fl.dtu0, &mut fl.v0, &mut fl.rdrv0] {
        a.resize(n, 0.0);
    }
    fl
}

fn abs_pow(x: f64, e: f64) -> f64 {
    if e == 2.0 {
        x * x
    } else {
        x.abs().powf(e)
    }
}

/// `r⁻¹ K+ F` at every node; the axis value extrapolates the even quotient
/// from `r = h, 2h`.
fn k_plus_over_r(sweep: &DuhamelSweep, current: &[f64], h: f64) -> Vec<f64> {
    let n = current.len();
    let mut out = vec![0.0; n];
    for j in 1..n {
        out[j] = sweep.k_plus(j, current[j]) / (j as f64 * h);
    }
    out[0] = (4.0 * out[1] - out[2]) / 3.0;
    out
}

/// Explicit time-marching of the integral equations.
///
/// Level `k` of `u, v` depends on sources at levels `< k` only (the inner
/// `ρ`-interval of `L` degenerates at `s = t`); `w` then uses `|v|^q` at level
/// `k` through the endpoint of the `K+` trapezoid. `observe` sees every level.
pub fn march_observed(
    problem: &Problem,
    grid: CharacteristicGrid,
    opts: &MarchOptions,
    mut observe: impl FnMut(&FieldState),
) -> Result<SolveReport, SolverError> {
    march_dyn(problem, grid, opts, &mut observe)
}

fn march_dyn(
    problem: &Problem,
    grid: CharacteristicGrid,
    opts: &MarchOptions,
    observe: &mut dyn FnMut(&FieldState),
) -> Result<SolveReport, SolverError> {
    grid.check_cone(problem.data.support())?;
    let (p, q) = (problem.p, problem.q);
    let h = grid.h;
    let n = grid.n_r + 1;
    let limit = opts.blowup_threshold * problem.eps.max(opts.eps_floor);
    let mut sweep_v = DuhamelSweep::new(grid);
    let mut sweep_w = DuhamelSweep::new(grid);
    let mut report = SolveReport {
        outcome: SolveOutcome::CompletedHorizon,
        grid,
        levels_completed: 0,
        norm_history: Vec::new(),
        fg_history: Vec::new(),
        max_abs: Vec::new(),
        confirmation: None,
    };

    // Every field vanishes beyond the cone r <= t + support; level arrays
    // stop there.
    let margin = (problem.data.support() / h).ceil() as usize + 2;
    for k in 0..=grid.n_t {
        let len = (k + margin).min(n - 1) + 1;
        let free = free_level(problem, &grid, k, len);
        let lv = sweep_v.l_level_upto(len - 1);
        let lw = sweep_w.l_level_upto(len - 1);
        let mut state = FieldState::zeros(k, h, len);
        for j in 0..len {
            state.u[j] = free.u0[j] + lv[j];
            state.v[j] = free.v0[j] + lw[j];
        }
        let mut src_v = vec![0.0; len];
        let mut src_w = vec![0.0; len];
        if opts.nonlinear {
            for j in 0..len {
                src_v[j] = abs_pow(state.v[j], q);
            }
        }
        let kp = k_plus_over_r(&sweep_v, &src_v, h);
        for j in 0..len {
            state.w[j] = free.dtu0[j] + kp[j];
        }
        if opts.nonlinear {
            for j in 0..len {
                src_w[j] = abs_pow(state.w[j], p);
            }
        }
        for j in 1..len {
            state.dv[j] = free.rdrv0[j] + sweep_w.k_minus(j) - lw[j];
        }

        let max_w = state.w.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let max_v = state.v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let max_u = state.u.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let finite = [&state.u, &state.v, &state.w, &state.dv]
            .iter()
            .all(|a| a.iter().all(|x| x.is_finite()));
        if !finite {
            report.outcome = SolveOutcome::NumericalDivergence { t: state.t };
            return Ok(report);
        }
        report.max_abs.push((max_u, max_v, max_w));
        if let Some(ws) = &opts.weights {
            let (n1, n2, n3) = weighted_norms(&state, ws);
            report.norm_history.push(NormRecord {
                t: state.t,
                n1,
                n2,
                n3,
            });
        }
        let (f, g, v_q, w_p) = if opts.nonlinear {
            (
                radial_integral(&state.u, h, |x| x),
                radial_integral(&state.v, h, |x| x),
                radial_integral(&src_v, h, |x| x),
                radial_integral(&src_w, h, |x| x),
            )
        } else {
            functionals_fg(&state, p, q)
        };
        report.fg_history.push(FgRecord {
            t: state.t,
            f,
            g,
            v_q,
            w_p,
        });
        observe(&state);
        report.levels_completed = k;

        if max_w > limit || max_v > limit {
            let t_high = state.t;
            let t_low = (t_high - h).max(0.0);
            report.outcome = SolveOutcome::BlowupDetected { t_low, t_high };
            break;
        }
        sweep_v.push(&src_v);
        sweep_w.push(&src_w);
    }

    if opts.confirm {
        if let SolveOutcome::BlowupDetected { t_low, t_high } = report.outcome {
            let fine_opts = MarchOptions {
                confirm: false,
                weights: None,
                ..*opts
            };
            let fine = march_dyn(problem, grid.halved(), &fine_opts, &mut |_| {})?;
            let fine_bracket = match fine.outcome {
                SolveOutcome::BlowupDetected { t_low, t_high } => Some((t_low, t_high)),
                _ => None,
            };
            let stable = fine_bracket.is_some_and(|(lo, hi)| {
                (0.5 * (lo + hi) - 0.5 * (t_low + t_high)).abs() <= t_high - t_low
            });
            if let Some((lo, hi)) = fine_bracket {
                report.outcome = SolveOutcome::BlowupDetected {
                    t_low: lo,
                    t_high: hi,
                };
            }
            report.confirmation = Some(Confirmation {
                coarse: (t_low, t_high),
                fine: fine_bracket,
                stable,
            });
        }
    }
    Ok(report)
}

pub fn march(
    problem: &Problem,
    grid: CharacteristicGrid,
    opts: &MarchOptions,
) -> Result<SolveReport, SolverError> {
    march_observed(problem, grid, opts, |_| {})
}

/// Outcome of [`picard_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    /// Norm of the difference between consecutive iterates.
    pub differences: Vec<f64>,
    pub diverged: bool,
    /// The last difference fell to rounding level relative to the iterate.
    pub converged: bool,
    pub w: SpaceTimeField,
    pub v: SpaceTimeField,
    pub dv: SpaceTimeField,
}

impl PicardReport {
    /// Ratios of consecutive differences; skips pairs with a zero denominator.
    pub fn ratios(&self) -> Vec<f64> {
        self.differences
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

fn weighted_difference(
    grid: &CharacteristicGrid,
    weights: Option<&WeightSet>,
    a: (&SpaceTimeField, &SpaceTimeField, &SpaceTimeField),
    b: (&SpaceTimeField, &SpaceTimeField, &SpaceTimeField),
) -> f64 {
    let mut n = (0.0_f64, 0.0_f64, 0.0_f64);
    for k in 0..=grid.n_t {
        let t = grid.r(k);
        for j in 0..=grid.n_r {
            let r = grid.r(j);
            let (c1, c2, c3) = match weights {
                Some(ws) => (ws.w1(t, r), ws.w2(t, r), ws.w3(t, r)),
                None => (1.0, 1.0, 1.0),
            };
            n.0 = n.0.max(c1 * (a.0.get(k, j) - b.0.get(k, j)).abs());
            n.1 = n.1.max(c2 * (a.1.get(k, j) - b.1.get(k, j)).abs());
            n.2 = n.2.max(c3 * (a.2.get(k, j) - b.2.get(k, j)).abs());
        }
    }
    let total = n.0 + n.1 + n.2;
    if total.is_finite() {
        total
    } else {
        f64::INFINITY
    }
}

/// Iterates `(w, v) ↦ (ε∂ₜu₀ + r⁻¹K+|v|^q, εv₀ + L|w|^p)` on the whole box,
/// starting from `(ε∂ₜu₀, εv₀)`.
///
/// Differences are measured in the weighted norm when `weights` is given and
/// in the plain sup norm otherwise. Iteration stops early once the difference
/// is at rounding level ([`PICARD_ROUNDOFF`] times the iterate norm) or has
/// grown on three consecutive iterates.
pub fn picard_run(
    problem: &Problem,
    grid: CharacteristicGrid,
    n_iters: usize,
    weights: Option<&WeightSet>,
) -> Result<PicardReport, SolverError> {
    if n_iters < 2 {
        return Err(SolverError::TooFewIterations);
    }
    grid.check_cone(problem.data.support())?;
    let nodes = (grid.n_t + 1) * (grid.n_r + 1);
    if nodes > PICARD_MAX_NODES {
        return Err(SolverError::BoxTooLarge {
            nodes,
            limit: PICARD_MAX_NODES,
        });
    }
    let (p, q) = (problem.p, problem.q);
    let h = grid.h;
    let zero = SpaceTimeField::zeros(grid);
    let mut w = SpaceTimeField::zeros(grid);
    let mut v = SpaceTimeField::zeros(grid);
    let mut dv = SpaceTimeField::zeros(grid);
    let mut free = Vec::with_capacity(grid.n_t + 1);
    for k in 0..=grid.n_t {
        let fl = free_level(problem, &grid, k, grid.n_r + 1);
        w.level_mut(k).copy_from_slice(&fl.dtu0);
        v.level_mut(k).copy_from_slice(&fl.v0);
        dv.level_mut(k).copy_from_slice(&fl.rdrv0);
        free.push(fl);
    }

    let mut differences = Vec::new();
    let mut growth = 0;
    let mut diverged = false;
    let mut converged = false;
    for _ in 0..n_iters {
        let mut sweep_v = DuhamelSweep::new(grid);
        let mut sweep_w = DuhamelSweep::new(grid);
        let mut w_new = SpaceTimeField::zeros(grid);
        let mut v_new = SpaceTimeField::zeros(grid);
        let mut dv_new = SpaceTimeField::zeros(grid);
        for k in 0..=grid.n_t {
            let fl = &free[k];
            let src_v: Vec<f64> = v.level(k).iter().map(|&x| abs_pow(x, q)).collect();
            let src_w: Vec<f64> = w.level(k).iter().map(|&x| abs_pow(x, p)).collect();
            let lw = sweep_w.l_level();
            let kp = k_plus_over_r(&sweep_v, &src_v, h);
            {
                let out = v_new.level_mut(k);
                for j in 0..out.len() {
                    out[j] = fl.v0[j] + lw[j];
                }
            }
            {
                let out = w_new.level_mut(k);
                for j in 0..out.len() {
                    out[j] = fl.dtu0[j] + kp[j];
                }
            }
            {
                let out = dv_new.level_mut(k);
                for j in 1..out.len() {
                    out[j] = fl.rdrv0[j] + sweep_w.k_minus(j) - lw[j];
                }
            }
            sweep_v.push(&src_v);
            sweep_w.push(&src_w);
        }
        let d = weighted_difference(&grid, weights, (&w_new, &v_new, &dv_new), (&w, &v, &dv));
        if let Some(&last) = differences.last() {
            if d > last {
                growth += 1;
            } else {
                growth = 0;
            }
        }
        differences.push(d);
        w = w_new;
        v = v_new;
        dv = dv_new;
        if !d.is_finite() || growth >= 3 {
            diverged = true;
            break;
        }
        let scale = weighted_difference(&grid, weights, (&w, &v, &dv), (&zero, &zero, &zero));
        if d <= PICARD_ROUNDOFF * scale {
            converged = true;
            break;
        }
    }
    Ok(PicardReport {
        differences,
        diverged,
        converged,
        w,
        v,
        dv,
    })
}
