//! Closed-form bounds for the scalar recurrences that drive the convergence
//! analysis, and a checker that replays them on measured trajectories.

use serde::{Deserialize, Serialize};

use super::{IterRecord, BETA};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceParams {
    pub a0: f64,
    pub b0: f64,
    pub eta: f64,
    pub r: f64,
    pub big_r: f64,
    pub s: f64,
    pub h: f64,
    pub h1: f64,
    pub h2: f64,
}

/// `(1 − η)^t a₀ + h` for `t = 0..=T`.
pub fn solve_simple_recursion(a0: f64, eta: f64, h: f64, t_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(t_max + 1);
    let mut decay = 1.0;
    for _ in 0..=t_max {
        out.push(decay * a0 + h);
        decay *= 1.0 - eta;
    }
    out
}

/// Uniform bounds `(u_a, u_b)` for `a_{t+1} ≤ (1−η)a_t + ηh₁` and
/// `b_{t+1} ≤ (1−η)b_t + ηs·a_t + ηh₂`.
pub fn solve_simple_coupling(a0: f64, b0: f64, _eta: f64, s: f64, h1: f64, h2: f64) -> (f64, f64) {
    let ua = a0.max(h1);
    (ua, b0.max(h2 + s * ua))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSolution {
    /// `a₀ + b₀ + (Rr + 2R + 1)/(R − r)·h`. It bounds `a_t + b_t` when
    /// `r ≤ 1`; for `r > 1` the coupling can move mass from `b` into `a`
    /// faster than it decays and the sum may exceed it.
    pub sum_bound: f64,
    /// Asymptotic level of `a_t`.
    pub a_level: f64,
    /// Asymptotic level of `b_t`.
    pub b_level: f64,
    /// Shifted trajectories `c_t = a_t − a_level`, `d_t = b_t − b_level` of
    /// the equality system, `t = 0..=T`.
    pub c_seq: Vec<f64>,
    pub d_seq: Vec<f64>,
}

impl CouplingSolution {
    /// Iterations after which both sequences are within `eps` of their
    /// levels.
    ///
    /// Both decoupled modes contract by at most `λ₊ = 1 − η(1 − √(r/R))` per
    /// step, so `|c_t| ≤ (|c₀| + √(rR)|d₀|)λ₊^t` and
    /// `|d_t| ≤ (|c₀|/√(rR) + |d₀|)λ₊^t`. The shorter `ln((a₀ + b₀)/(8ηε))`
    /// is not enough when η is small.
    pub fn tail_time(&self, params: &RecurrenceParams, eps: f64) -> f64 {
        let (c0, d0) = (self.c_seq[0].abs(), self.d_seq[0].abs());
        let k = (params.r * params.big_r).sqrt();
        let amp = (c0 + k * d0).max(c0 / k + d0);
        let rate = 1.0 - params.eta * (1.0 - (params.r / params.big_r).sqrt());
        if amp <= eps {
            return 0.0;
        }
        if rate <= 0.0 {
            return 1.0;
        }
        ((amp / eps).ln() / -rate.ln()).max(0.0)
    }

    pub fn tail_bounds(&self, eps: f64) -> (f64, f64) {
        (self.a_level + eps, self.b_level + eps)
    }

    /// Equality-system trajectories `a_t = c_t + a_level`, `b_t = d_t + b_level`.
    pub fn a_seq(&self) -> Vec<f64> {
        self.c_seq.iter().map(|c| c + self.a_level).collect()
    }

    pub fn b_seq(&self) -> Vec<f64> {
        self.d_seq.iter().map(|d| d + self.b_level).collect()
    }
}

/// Solves `a_{t+1} ≤ (1−η)a_t + ηr·b_t + ηh`, `b_{t+1} ≤ (1−η)b_t + (η/R)a_t + ηh`
/// for `R > 4r > 0`.
///
/// The shifted equality system decouples along `c ± √(rR)·d`, whose
/// multipliers are `λ± = 1 − η ± η√(r/R)`.
pub fn solve_coupling(p: &RecurrenceParams, t_max: usize) -> Result<CouplingSolution> {
    let (r, big_r, eta, h) = (p.r, p.big_r, p.eta, p.h);
    if !(r > 0.0 && big_r > 4.0 * r) {
        return Err(Error::BadParams(format!("need R > 4r > 0, got r={r}, R={big_r}")));
    }
    if !(0.0..=1.0).contains(&eta) || h < 0.0 {
        return Err(Error::BadParams(format!("need eta in [0,1] and h >= 0, got eta={eta}, h={h}")));
    }
    let a_level = big_r * (r + 1.0) / (big_r - r) * h;
    let b_level = (big_r + 1.0) / (big_r - r) * h;
    let sum_bound = p.a0 + p.b0 + (big_r * r + 2.0 * big_r + 1.0) / (big_r - r) * h;
    let c0 = p.a0 - a_level;
    let d0 = p.b0 - b_level;
    let q = (r / big_r).sqrt();
    let k = (r * big_r).sqrt();
    let lp = 1.0 - eta + eta * q;
    let lm = 1.0 - eta - eta * q;
    let mut c_seq = Vec::with_capacity(t_max + 1);
    let mut d_seq = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        let (pp, pm) = (lp.powi(t as i32), lm.powi(t as i32));
        c_seq.push(0.5 * (pp + pm) * c0 + 0.5 * k * (pp - pm) * d0);
        d_seq.push(0.5 / k * (pp - pm) * c0 + 0.5 * (pp + pm) * d0);
    }
    Ok(CouplingSolution {
        sum_bound,
        a_level,
        b_level,
        c_seq,
        d_seq,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCheck {
    pub holds: bool,
    /// Smallest `rhs − lhs` over both per-step inequalities.
    pub worst_slack: f64,
    /// Iterations `t` where a step `t → t+1` failed.
    pub failures: Vec<usize>,
    /// Derived check on the coupled potential.
    pub potential_holds: bool,
    pub potential_worst_slack: f64,
}

/// Default per-step sampling allowance `3/√N` for batches of size `N`.
/// A heuristic, not a confidence bound.
pub fn default_sampling_slack(batch_size: usize) -> f64 {
    3.0 / (batch_size as f64).sqrt()
}

/// Replays the per-step inequalities
/// `a_{t+1} ≤ (1 − 3η/25)a_t + 7η·b_t + ηh + slack` and
/// `b_{t+1} ≤ (1 − 24η/25)b_t + (η/100)a_t + ηh + slack`
/// with `a = ‖E₊‖ₛ`, `b = ‖E₋‖ₛ`, and the derived potential step
/// `P_{t+1} ≤ (1 − η/25)P_t + 9ηh + (1 + β)·slack`.
pub fn verify_trajectory_recurrence(
    records: &[IterRecord],
    eta: f64,
    h: f64,
    slack: f64,
) -> TrajectoryCheck {
    let mut worst = f64::INFINITY;
    let mut pot_worst = f64::INFINITY;
    let mut failures = Vec::new();
    for w in records.windows(2) {
        let (cur, next) = (&w[0], &w[1]);
        let (a, b) = (cur.e_pos_sym, cur.e_neg_sym);
        let ra = (1.0 - 3.0 / 25.0 * eta) * a + 7.0 * eta * b + eta * h + slack - next.e_pos_sym;
        let rb = (1.0 - 24.0 / 25.0 * eta) * b + eta / 100.0 * a + eta * h + slack - next.e_neg_sym;
        let step = ra.min(rb);
        if step < 0.0 {
            failures.push(cur.t);
        }
        worst = worst.min(step);
        let p_rhs = (1.0 - eta / 25.0) * cur.potential + 9.0 * eta * h + (1.0 + BETA) * slack;
        pot_worst = pot_worst.min(p_rhs - next.potential);
    }
    if records.len() < 2 {
        worst = 0.0;
        pot_worst = 0.0;
    }
    TrajectoryCheck {
        holds: failures.is_empty(),
        worst_slack: worst,
        failures,
        potential_holds: pot_worst >= 0.0,
        potential_worst_slack: pot_worst,
    }
}
