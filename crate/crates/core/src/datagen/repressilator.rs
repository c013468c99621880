//! Stochastic repressilator simulated by τ-leaping, and its mean-field ODE.
//!
//! Species order: proteins LacI, TetR, cI, then their mRNAs.

use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};
use crate::solvers::{solve, FnField, SolverConfig, SolverKind, Trajectory};

pub const N_SPECIES: usize = 6;
pub const INITIAL_STATE: [f64; N_SPECIES] = [0.0, 0.0, 0.0, 0.0, 20.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepressilatorRates {
    /// Leaky transcription.
    pub alpha0: f64,
    /// Maximal repressible transcription.
    pub alpha: f64,
    pub k: f64,
    pub hill: f64,
    pub translation: f64,
    pub mrna_decay: f64,
    pub protein_decay: f64,
    /// System size: multiplies the transcription rates and the repression
    /// threshold, so counts scale with it and relative noise shrinks.
    pub volume: f64,
}

impl Default for RepressilatorRates {
    fn default() -> Self {
        Self {
            alpha0: 0.03,
            alpha: 30.0,
            k: 40.0,
            hill: 2.0,
            translation: 1.0,
            mrna_decay: 0.35,
            protein_decay: 0.035,
            volume: 1.0,
        }
    }
}

pub type Propensity = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub struct Reaction {
    pub name: String,
    pub stoichiometry: Vec<i64>,
    pub propensity: Propensity,
}

/// Species counts plus a list of reactions.
pub struct ReactionNetwork {
    pub species: Vec<String>,
    pub initial: Vec<f64>,
    pub reactions: Vec<Reaction>,
}

impl std::fmt::Debug for ReactionNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReactionNetwork")
            .field("species", &self.species)
            .field("initial", &self.initial)
            .field("reactions", &self.reactions.iter().map(|r| &r.name).collect::<Vec<_>>())
            .finish()
    }
}

fn unit(i: usize, sign: i64) -> Vec<i64> {
    let mut s = vec![0; N_SPECIES];
    s[i] = sign;
    s
}

impl ReactionNetwork {
    /// Twelve reactions: per gene one transcription, one translation and two
    /// degradations. Gene `i` is repressed by protein `i − 1` (cyclic).
    pub fn repressilator(rates: RepressilatorRates) -> Self {
        let names = ["LacI", "TetR", "cI"];
        let mut reactions = Vec::new();
        for (i, name) in names.iter().enumerate() {
            let rep = (i + 2) % 3;
            let r = rates;
            reactions.push(Reaction {
                name: format!("transcribe_{}", name),
                stoichiometry: unit(3 + i, 1),
                propensity: Box::new(move |s: &[f64]| {
                    r.volume * (r.alpha0 + r.alpha / (1.0 + (s[rep] / (r.k * r.volume)).powf(r.hill)))
                }),
            });
        }
        for i in 0..3 {
            let kt = rates.translation;
            reactions.push(Reaction {
                name: format!("translate_{}", names[i]),
                stoichiometry: unit(i, 1),
                propensity: Box::new(move |s: &[f64]| kt * s[3 + i]),
            });
        }
        for i in 0..3 {
            let d = rates.mrna_decay;
            reactions.push(Reaction {
                name: format!("decay_m{}", names[i]),
                stoichiometry: unit(3 + i, -1),
                propensity: Box::new(move |s: &[f64]| d * s[3 + i]),
            });
        }
        for i in 0..3 {
            let d = rates.protein_decay;
            reactions.push(Reaction {
                name: format!("decay_{}", names[i]),
                stoichiometry: unit(i, -1),
                propensity: Box::new(move |s: &[f64]| d * s[i]),
            });
        }
        let mut species: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        species.extend(names.iter().map(|s| format!("m{s}")));
        Self {
            species,
            initial: INITIAL_STATE.to_vec(),
            reactions,
        }
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    /// Deterministic rate equations `ṡ = Σ_r ν_r a_r(s)`.
    pub fn mean_field_rate(&self, s: &[f64]) -> Vec<f64> {
        let mut ds = vec![0.0; s.len()];
        for r in &self.reactions {
            let a = (r.propensity)(s);
            for (d, &nu) in ds.iter_mut().zip(&r.stoichiometry) {
                *d += nu as f64 * a;
            }
        }
        ds
    }
}

/// Leap length and sampling interval for [`tau_leap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauLeapConfig {
    pub horizon: f64,
    /// Sampling interval of the stored trajectory.
    pub sample_dt: f64,
    /// Leaps per sampling interval.
    pub substeps: usize,
}

impl Default for TauLeapConfig {
    fn default() -> Self {
        Self {
            horizon: 300.0,
            sample_dt: 0.5,
            substeps: 10,
        }
    }
}

impl TauLeapConfig {
    pub fn leap(&self) -> f64 {
        self.sample_dt / self.substeps as f64
    }

    pub fn n_points(&self) -> usize {
        ((self.horizon / self.sample_dt) + 1e-9).floor() as usize
    }
}

/// τ-leaping from the network's initial counts; returns `⌊T/Δ⌋` states at
/// `t = 0, Δ, 2Δ, …` as 1×S rows, with Δ = `sample_dt`. Each reaction fires
/// Poisson(propensity·τ) times per leap; negative counts are clamped to zero
/// after each leap.
pub fn tau_leap(net: &ReactionNetwork, cfg: &TauLeapConfig, rng: &mut RngStream) -> Result<Trajectory> {
    if !(cfg.sample_dt > 0.0) || cfg.substeps == 0 {
        return Err(Error::invalid(format!("invalid leap configuration {cfg:?}")));
    }
    if net.initial.iter().any(|&c| c < 0.0 || c.fract() != 0.0) {
        return Err(Error::invalid("initial counts must be nonnegative integers"));
    }
    let tau = cfg.leap();
    let mut s = net.initial.clone();
    let mut traj = Trajectory::start(0.0, Matrix::from_vec(1, s.len(), s.clone())?);
    let mut rates = vec![0.0; net.reactions.len()];
    for k in 1..cfg.n_points() {
        for _ in 0..cfg.substeps {
            for (a, r) in rates.iter_mut().zip(&net.reactions) {
                *a = (r.propensity)(&s);
            }
            for (r, &a) in net.reactions.iter().zip(&rates) {
                let lambda = a * tau;
                if lambda <= 0.0 {
                    continue;
                }
                let fires = Poisson::new(lambda)
                    .map_err(|e| Error::invalid(format!("propensity {a}: {e}")))?
                    .sample(rng);
                for (c, &nu) in s.iter_mut().zip(&r.stoichiometry) {
                    *c += nu as f64 * fires;
                }
            }
            for c in &mut s {
                *c = c.max(0.0);
            }
        }
        traj.push(cfg.sample_dt * k as f64, Matrix::from_vec(1, s.len(), s.clone())?);
    }
    Ok(traj)
}

/// The repressilator with default rates.
pub fn tau_leap_repressilator(cfg: &TauLeapConfig, rng: &mut RngStream) -> Result<Trajectory> {
    tau_leap(&ReactionNetwork::repressilator(RepressilatorRates::default()), cfg, rng)
}

/// RK4 solution (step `h`) of the mean-field ODE sampled on the same grid as
/// [`tau_leap`].
pub fn mean_field_trajectory(net: &ReactionNetwork, cfg: &TauLeapConfig, h: f64) -> Result<Trajectory> {
    let field = FnField(|_t: f64, z: &Matrix| {
        let ds = net.mean_field_rate(z.as_slice());
        Matrix::from_vec(1, ds.len(), ds).expect("rate vector matches state")
    });
    let dt = cfg.sample_dt;
    let solver = SolverConfig::fixed(SolverKind::Rk4, h);
    let mut z = Matrix::from_vec(1, net.initial.len(), net.initial.clone())?;
    let mut traj = Trajectory::start(0.0, z.clone());
    for k in 1..cfg.n_points() {
        let seg = solve(&field, &z, (dt * (k - 1) as f64, dt * k as f64), &solver)?;
        z = seg.last_state().clone();
        traj.push(dt * k as f64, z.clone());
    }
    Ok(traj)
}

/// Index of the first sample of column `species` that is the maximum of
/// the `±window` samples around it (the last `window` samples are not
/// eligible).
fn first_peak_index(v: &[f64], window: usize) -> Option<usize> {
    (1..v.len().saturating_sub(window)).find(|&k| {
        let lo = k.saturating_sub(window);
        v[lo..=k + window].iter().all(|&x| x <= v[k]) && v[k] > v[lo]
    })
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Time of the first peak of column `species`: the first sample that
/// dominates its `±window` neighborhood, refined to the vertex of a
/// least-squares parabola over that neighborhood. The refinement keeps the
/// estimate stable on flat, noisy maxima such as ensemble means.
pub fn first_peak_time(traj: &Trajectory, species: usize, window: usize) -> Option<f64> {
    let v: Vec<f64> = traj.states.iter().map(|s| s[(0, species)]).collect();
    let k = first_peak_index(&v, window)?;
    let tk = traj.times[k];
    let (lo, hi) = (k.saturating_sub(window), (k + window).min(v.len() - 1));
    let mut s = [0.0f64; 5];
    let mut r = [0.0f64; 3];
    for (t, vj) in traj.times[lo..=hi].iter().zip(&v[lo..=hi]) {
        let x = t - tk;
        let mut p = 1.0;
        for (i, acc) in s.iter_mut().enumerate() {
            *acc += p;
            if i < 3 {
                r[2 - i] += p * vj;
            }
            p *= x;
        }
    }
    // normal equations for a·x² + b·x + c
    let m = [[s[4], s[3], s[2]], [s[3], s[2], s[1]], [s[2], s[1], s[0]]];
    let d = det3(m);
    let col = |c: usize| {
        let mut mc = m;
        for (row, &ri) in mc.iter_mut().zip(&r) {
            row[c] = ri;
        }
        det3(mc) / d
    };
    let (a, b) = (col(0), col(1));
    if !(a < 0.0) || !d.is_finite() || d == 0.0 {
        return Some(tk);
    }
    let vertex = tk - b / (2.0 * a);
    Some(vertex.clamp(traj.times[lo], traj.times[hi]))
}

/// Pointwise mean of equally sampled trajectories.
pub fn ensemble_mean(trajs: &[Trajectory]) -> Result<Trajectory> {
    let first = trajs.first().ok_or_else(|| Error::invalid("empty ensemble"))?;
    let mut mean = first.clone();
    for t in &trajs[1..] {
        if t.times.len() != first.times.len() {
            return Err(Error::invalid("ensemble trajectories differ in length"));
        }
        for (m, s) in mean.states.iter_mut().zip(&t.states) {
            m.add_assign(s);
        }
    }
    let k = 1.0 / trajs.len() as f64;
    for m in &mut mean.states {
        *m = m.scale(k);
    }
    Ok(mean)
}
