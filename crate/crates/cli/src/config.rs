//! Experiment configuration: JSON schema, validation, and the mapping onto
//! solver options.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ietidp::ieti::{SolveOptions, Variant};
use serde::{Deserialize, Serialize};

/// Right-hand side of the model problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rhs {
    /// Load whose exact solution is known in closed form; required for
    /// convergence studies.
    Manufactured,
    /// Constant load f = 1.
    Constant,
}

/// One experiment sweep: a patch grid, a list of refinement levels, and the
/// variants to run on each level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Patch grid [n_theta, n_r] on the quarter annulus.
    pub patches: [usize; 2],
    /// Spline degree of the solution space.
    pub degree: usize,
    /// Refinement levels; each level l uses 2^l spans per direction per patch.
    pub levels: Vec<u32>,
    /// Variant names: dd, mgd, mgmg, mgmgs.
    pub variants: Vec<String>,
    #[serde(default = "default_rhs")]
    pub rhs: Rhs,
    /// CSV output path for the run records.
    pub out_csv: PathBuf,
    /// Optional JSON mirror of the same records.
    #[serde(default)]
    pub out_json: Option<PathBuf>,
    #[serde(default)]
    pub outer_tol: Option<f64>,
    #[serde(default)]
    pub max_outer: Option<usize>,
    #[serde(default)]
    pub basis_tol: Option<f64>,
    #[serde(default)]
    pub dual_tol: Option<f64>,
    #[serde(default)]
    pub interior_tol: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_rhs() -> Rhs {
    Rhs::Manufactured
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patches[0] == 0 || self.patches[1] == 0 {
            bail!("patch grid must be at least 1x1");
        }
        if self.degree == 0 {
            bail!("degree must be at least 1");
        }
        if self.levels.is_empty() {
            bail!("levels must be non-empty");
        }
        if !self.levels.windows(2).all(|w| w[0] < w[1]) {
            bail!("levels must be strictly increasing");
        }
        if self.variants.is_empty() {
            bail!("variants must be non-empty");
        }
        for v in &self.variants {
            if Variant::parse(v).is_none() {
                bail!("unknown variant {v:?}; expected dd, mgd, mgmg, or mgmgs");
            }
        }
        Ok(())
    }

    pub fn parsed_variants(&self) -> Vec<Variant> {
        self.variants.iter().map(|v| Variant::parse(v).expect("validated")).collect()
    }

    pub fn solve_options(&self) -> SolveOptions {
        let mut opts = SolveOptions::default();
        if let Some(t) = self.outer_tol {
            opts.outer_tol = t;
        }
        if let Some(m) = self.max_outer {
            opts.max_outer = m;
        }
        if let Some(t) = self.basis_tol {
            opts.basis_tol = t;
        }
        if let Some(t) = self.dual_tol {
            opts.dual_tol = t;
        }
        if let Some(t) = self.interior_tol {
            opts.interior_tol = t;
        }
        if let Some(s) = self.seed {
            opts.seed = s;
        }
        opts
    }
}

/// Parses the inline `--levels` argument: either an inclusive range "2..5"
/// or a comma list "2,3,4".
pub fn parse_levels(s: &str) -> Result<Vec<u32>> {
    let levels: Vec<u32> = if let Some((a, b)) = s.split_once("..") {
        let lo: u32 = a.trim().parse().context("range start")?;
        let hi: u32 = b.trim().parse().context("range end")?;
        if lo > hi {
            bail!("empty level range {s:?}");
        }
        (lo..=hi).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse::<u32>().with_context(|| format!("level {t:?}")))
            .collect::<Result<_>>()?
    };
    Ok(levels)
}
