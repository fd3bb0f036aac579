//! Noise schedule and the three-phase edit window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance schedule `β_t` with cumulative products `ᾱ_t = ∏(1 − β_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_cumprod: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidConfig("noise schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidConfig(format!("beta {b} outside (0, 1)")));
        }
        let alphas_cumprod = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alphas_cumprod })
    }

    /// The DDPM linear schedule (`β` from `beta_start` to `beta_end`).
    pub fn linear(total_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        let betas = (0..total_steps)
            .map(|i| {
                if total_steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (total_steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn total_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas_cumprod(&self) -> &[f64] {
        &self.alphas_cumprod
    }

    /// `ᾱ` at timestep `t`; `None` denotes the clean endpoint where `ᾱ = 1`.
    pub fn alpha_bar(&self, t: Option<usize>) -> f64 {
        t.map_or(1.0, |t| self.alphas_cumprod[t])
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

/// Which regime a reverse step from timestep `t` belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    /// `t0 ≥ t > t_edit`: edited bottleneck injected, `η = 0`.
    Guided,
    /// `t_edit ≥ t > t_boost`: plain prediction, `η = 0`.
    Unconditional,
    /// `t_boost ≥ t ≥ 0`: plain prediction with stochastic noise.
    Boost,
}

/// Inversion depth, phase boundaries and the number of visited timesteps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditWindow {
    pub t0: usize,
    pub t_edit: usize,
    pub t_boost: usize,
    pub n_denoise: usize,
    /// `η` used in the boost phase. 1 gives the usual stochastic quality boost;
    /// 0 makes the whole reverse process deterministic.
    pub boost_eta: f64,
}

impl Default for EditWindow {
    fn default() -> Self {
        Self {
            t0: 600,
            t_edit: 400,
            t_boost: 200,
            n_denoise: 16,
            boost_eta: 1.0,
        }
    }
}

impl EditWindow {
    pub fn with_steps(n_denoise: usize) -> Self {
        Self {
            n_denoise,
            ..Self::default()
        }
    }

    /// Visited timesteps in increasing order, uniformly spaced over `[0, t0]`.
    pub fn timesteps(&self) -> Vec<usize> {
        let n = self.n_denoise;
        if n < 2 {
            return vec![self.t0; n];
        }
        (0..n)
            .map(|i| ((i * self.t0) as f64 / (n - 1) as f64).round() as usize)
            .collect()
    }

    pub fn phase(&self, t: usize) -> Phase {
        if t > self.t_edit {
            Phase::Guided
        } else if t > self.t_boost {
            Phase::Unconditional
        } else {
            Phase::Boost
        }
    }

    /// Eta applied to a reverse step in `phase`.
    pub fn eta(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Boost => self.boost_eta,
            _ => 0.0,
        }
    }

    /// Reverse-process steps `(t, t_prev)` from `t0` down to the clean image.
    pub fn reverse_steps(&self) -> Vec<(usize, Option<usize>)> {
        let ts = self.timesteps();
        (0..ts.len())
            .rev()
            .map(|i| (ts[i], i.checked_sub(1).map(|j| ts[j])))
            .collect()
    }

    /// Number of reverse steps in each phase, in order guided/unconditional/boost.
    pub fn phase_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for (t, _) in self.reverse_steps() {
            let idx = match self.phase(t) {
                Phase::Guided => 0,
                Phase::Unconditional => 1,
                Phase::Boost => 2,
            };
            counts[idx] += 1;
        }
        counts
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if !(self.t0 > self.t_edit && self.t_edit > self.t_boost && self.t_boost > 0) {
            return Err(Error::InvalidConfig(format!(
                "edit window needs t0 > t_edit > t_boost > 0, got {}/{}/{}",
                self.t0, self.t_edit, self.t_boost
            )));
        }
        if self.t0 >= schedule.total_steps() {
            return Err(Error::InvalidConfig(format!(
                "t0 = {} exceeds the schedule's {} steps",
                self.t0,
                schedule.total_steps()
            )));
        }
        if self.n_denoise < 3 {
            return Err(Error::InvalidConfig(format!(
                "need at least 3 denoising steps, got {}",
                self.n_denoise
            )));
        }
        if self.n_denoise > self.t0 + 1 {
            return Err(Error::InvalidConfig(format!(
                "{} denoising steps do not fit in [0, {}]",
                self.n_denoise, self.t0
            )));
        }
        if !(0.0..=1.0).contains(&self.boost_eta) {
            return Err(Error::InvalidConfig(format!(
                "boost eta {} outside [0, 1]",
                self.boost_eta
            )));
        }
        let counts = self.phase_counts();
        if counts.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "{} steps over {}/{}/{} leave an empty phase (guided/unconditional/boost = {:?})",
                self.n_denoise, self.t0, self.t_edit, self.t_boost, counts
            )));
        }
        Ok(())
    }
}
