//! Run configuration. Every section is optional and falls back to the shipped
//! defaults; unknown keys are rejected by serde.

use mfg_core::mfg::{FixpointConfig, FixpointMode};
use mfg_core::problems::{MonotoneParams, HJB_CASES, MFG_CASES};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const TERMINAL_PROFILES: &[&str] = &["smooth-profile", "capped-square", "kinked", "bump"];
pub const FP_DRIFTS: &[&str] = &["sin", "zero", "constant", "contracting", "expanding"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<String>,
    /// Number of time levels exported per field (first and last included).
    pub snapshots: usize,
    pub problem: ProblemSection,
    pub grid: GridSection,
    pub time: TimeSection,
    pub tree: TreeSection,
    pub hjb: HjbSection,
    pub fp: FpSection,
    pub coupling: CouplingSection,
    pub fixpoint: FixpointSection,
    pub verify: VerifySection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub hjb: String,
    /// Profile `g` in the leaf data `g(x + sqrt(2 beta) W_T)` for `solve-bshjb`.
    pub terminal: String,
    pub drift: String,
    pub mfg: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub half_width: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub horizon: f64,
    /// Fixed step count. Left out, the HJB and FP drivers pick the coarsest
    /// stable grid and `solve-mfg` uses 50 steps per tree level.
    pub n_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSection {
    pub n_levels: usize,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HjbSection {
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpSection {
    pub nu: f64,
    pub epsilon: f64,
    pub m0_mean: f64,
    pub m0_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSection {
    pub kernel_width: f64,
    pub kappa: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixpointSection {
    pub max_iters: usize,
    pub damping: f64,
    pub tol_d2: f64,
    pub mode: FixpointMode,
    /// Mollification radius `delta` for the drifts; default `2 dx`.
    pub delta: Option<f64>,
    pub fp_epsilon: Option<f64>,
    pub epsilon_refinement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub mc_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub deltas: Vec<f64>,
    pub levels: Vec<usize>,
    pub spacings: Vec<f64>,
    pub projection_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            output_dir: None,
            snapshots: 5,
            problem: ProblemSection::default(),
            grid: GridSection::default(),
            time: TimeSection::default(),
            tree: TreeSection::default(),
            hjb: HjbSection::default(),
            fp: FpSection::default(),
            coupling: CouplingSection::default(),
            fixpoint: FixpointSection::default(),
            verify: VerifySection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection {
            hjb: "kinked".into(),
            terminal: "smooth-profile".into(),
            drift: "sin".into(),
            mfg: "monotone".into(),
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { half_width: 4.0, n_points: 256 }
    }
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection { horizon: 0.5, n_steps: None }
    }
}

impl Default for TreeSection {
    fn default() -> Self {
        TreeSection { n_levels: 4, beta: 0.2 }
    }
}

impl Default for HjbSection {
    fn default() -> Self {
        HjbSection { epsilon: 0.0 }
    }
}

impl Default for FpSection {
    fn default() -> Self {
        FpSection { nu: 0.1, epsilon: 0.0, m0_mean: 0.0, m0_sd: 0.4 }
    }
}

impl Default for CouplingSection {
    fn default() -> Self {
        CouplingSection { kernel_width: 0.5, kappa: 1.0, sigma: 0.3 }
    }
}

impl Default for FixpointSection {
    fn default() -> Self {
        let d = FixpointConfig::default();
        FixpointSection {
            max_iters: d.max_iters,
            damping: d.damping,
            tol_d2: d.tol_d2,
            mode: d.mode,
            delta: d.mollify_delta,
            fp_epsilon: d.fp_epsilon,
            epsilon_refinement: d.epsilon_refinement,
        }
    }
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection { mc_paths: 10_000 }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            deltas: vec![0.1, 0.05, 0.025],
            levels: vec![2, 4, 8],
            spacings: vec![1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0],
            projection_samples: 200,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), String> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} must be positive and finite, got {v}"))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<(), String> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} must be >= 0 and finite, got {v}"))
    }
}

fn known(name: &str, v: &str, list: &[&str]) -> Result<(), String> {
    if list.contains(&v) {
        Ok(())
    } else {
        Err(format!("{name} = '{v}' is not one of {}", list.join(", ")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string().trim_end().to_string())
    }

    pub fn validate(&self) -> Result<(), String> {
        known("problem.hjb", &self.problem.hjb, HJB_CASES)?;
        known("problem.terminal", &self.problem.terminal, TERMINAL_PROFILES)?;
        known("problem.drift", &self.problem.drift, FP_DRIFTS)?;
        known("problem.mfg", &self.problem.mfg, MFG_CASES)?;
        if self.snapshots < 2 {
            return Err(format!("snapshots must be >= 2, got {}", self.snapshots));
        }
        positive("grid.half_width", self.grid.half_width)?;
        if !(8..=4096).contains(&self.grid.n_points) {
            return Err(format!("grid.n_points must lie in [8, 4096], got {}", self.grid.n_points));
        }
        positive("time.horizon", self.time.horizon)?;
        if self.time.n_steps == Some(0) {
            return Err("time.n_steps must be positive".into());
        }
        if !(1..=8).contains(&self.tree.n_levels) {
            return Err(format!("tree.n_levels must lie in [1, 8], got {}", self.tree.n_levels));
        }
        nonnegative("tree.beta", self.tree.beta)?;
        nonnegative("hjb.epsilon", self.hjb.epsilon)?;
        nonnegative("fp.nu", self.fp.nu)?;
        nonnegative("fp.epsilon", self.fp.epsilon)?;
        positive("fp.m0_sd", self.fp.m0_sd)?;
        if !self.fp.m0_mean.is_finite() || self.fp.m0_mean.abs() >= self.grid.half_width {
            return Err(format!("fp.m0_mean must lie inside the grid, got {}", self.fp.m0_mean));
        }
        positive("coupling.kernel_width", self.coupling.kernel_width)?;
        nonnegative("coupling.kappa", self.coupling.kappa)?;
        if !self.coupling.sigma.is_finite() {
            return Err("coupling.sigma must be finite".into());
        }
        let f = &self.fixpoint;
        if f.max_iters == 0 {
            return Err("fixpoint.max_iters must be >= 1".into());
        }
        if !(f.damping > 0.0 && f.damping <= 1.0) {
            return Err(format!("fixpoint.damping must lie in (0, 1], got {}", f.damping));
        }
        positive("fixpoint.tol_d2", f.tol_d2)?;
        if let Some(d) = f.delta {
            positive("fixpoint.delta", d)?;
        }
        if let Some(e) = f.fp_epsilon {
            nonnegative("fixpoint.fp_epsilon", e)?;
        }
        if self.verify.mc_paths < 2 {
            return Err("verify.mc_paths must be >= 2".into());
        }
        let s = &self.sweep;
        if s.deltas.len() < 2 || s.deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err("sweep.deltas needs at least two positive values".into());
        }
        if s.levels.len() < 3 || s.levels.iter().any(|n| !(1..=8).contains(n)) {
            return Err("sweep.levels needs at least three depths in [1, 8]".into());
        }
        if s.spacings.len() < 2 || s.spacings.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return Err("sweep.spacings needs at least two values in (0, 1)".into());
        }
        if s.projection_samples < 100 {
            return Err("sweep.projection_samples must be >= 100".into());
        }
        Ok(())
    }

    pub fn fixpoint_config(&self) -> FixpointConfig {
        let f = &self.fixpoint;
        FixpointConfig {
            max_iters: f.max_iters,
            damping: f.damping,
            tol_d2: f.tol_d2,
            mode: f.mode,
            mollify_delta: f.delta,
            fp_epsilon: f.fp_epsilon,
            epsilon_refinement: f.epsilon_refinement,
        }
    }

    pub fn monotone_params(&self) -> MonotoneParams {
        MonotoneParams {
            horizon: self.time.horizon,
            beta: self.tree.beta,
            n_levels: self.tree.n_levels,
            n_points: self.grid.n_points,
            half_width: self.grid.half_width,
            n_steps: self.time.n_steps.unwrap_or(50 * self.tree.n_levels),
            kernel_width: self.coupling.kernel_width,
            kappa: self.coupling.kappa,
            sigma: self.coupling.sigma,
        }
    }
}
