//! Experiment configuration: a TOML file plus flat overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adagb2::RadiusNorm;
use crate::driver::StopRule;
use crate::error::{Error, Result};
use crate::hybrid::HybridSchedule;
use crate::level::AlgorithmParams;
use crate::multilevel::{CoarseModel, VCycleSchedule};
use crate::noise::NoiseSchedule;
use crate::problems::ProblemKind;
use crate::schwarz::SchwarzVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Adagb2,
    Ml,
    Dd,
    MlDd,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Adagb2 => "adagb2",
            SolverKind::Ml => "ml",
            SolverKind::Dd => "dd",
            SolverKind::MlDd => "ml-dd",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adagb2" => Ok(SolverKind::Adagb2),
            "ml" => Ok(SolverKind::Ml),
            "dd" => Ok(SolverKind::Dd),
            "ml-dd" => Ok(SolverKind::MlDd),
            other => Err(Error::Config(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: ProblemKind,
    /// Cells per side of the finest mesh.
    #[serde(default = "default_cells")]
    pub cells: usize,
}

fn default_cells() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub levels: usize,
    pub vcycle: VCycleSchedule,
    pub coarse_model: CoarseModel,
    pub truncation: bool,
    pub subdomains: usize,
    pub overlap: usize,
    pub variant: SchwarzVariant,
    pub subdomain_iters: usize,
    pub divide_kappa_1st: bool,
    pub hybrid: HybridSchedule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: SolverKind::Ml,
            levels: 3,
            vcycle: VCycleSchedule::default(),
            coarse_model: CoarseModel::TauCorrected,
            truncation: false,
            subdomains: 4,
            overlap: 2,
            variant: SchwarzVariant::Wras,
            subdomain_iters: 10,
            divide_kappa_1st: true,
            hybrid: HybridSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub schedule: NoiseSchedule,
    /// Perturb the finest-level gradients only.
    pub fine_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub params: AlgorithmParams,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub stop: StopRule,
    #[serde(default)]
    pub seed: u64,
    /// Trace path (without extension), relative to the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Flag overrides; `None` keeps the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub problem: Option<ProblemKind>,
    pub cells: Option<usize>,
    pub solver: Option<SolverKind>,
    pub levels: Option<usize>,
    pub subdomains: Option<usize>,
    pub overlap: Option<usize>,
    pub variant: Option<SchwarzVariant>,
    pub coarse_model: Option<CoarseModel>,
    pub truncation: Option<bool>,
    pub max_cycles: Option<usize>,
    pub seed: Option<u64>,
    pub noise: Option<NoiseSchedule>,
    pub radius_norm: Option<RadiusNorm>,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemKind, cells: usize, solver: SolverKind) -> Self {
        Self {
            problem: ProblemConfig { name: problem, cells },
            solver: SolverConfig {
                kind: solver,
                ..Default::default()
            },
            params: AlgorithmParams::default(),
            noise: NoiseConfig::default(),
            stop: StopRule::default(),
            seed: 0,
            output: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(o.problem, self.problem.name);
        set!(o.cells, self.problem.cells);
        set!(o.solver, self.solver.kind);
        set!(o.levels, self.solver.levels);
        set!(o.subdomains, self.solver.subdomains);
        set!(o.overlap, self.solver.overlap);
        set!(o.variant, self.solver.variant);
        set!(o.coarse_model, self.solver.coarse_model);
        set!(o.truncation, self.solver.truncation);
        set!(o.max_cycles, self.stop.max_cycles);
        set!(o.seed, self.seed);
        set!(o.noise, self.noise.schedule);
        set!(o.radius_norm, self.params.radius_norm);
        if o.output.is_some() {
            self.output = o.output.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.stop.validate()?;
        self.noise.schedule.validate()?;
        let s = &self.solver;
        let need = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.into())) };
        need(self.problem.cells >= 4, "problem.cells must be at least 4")?;
        match s.kind {
            SolverKind::Adagb2 => {}
            SolverKind::Ml => {
                need(s.levels >= 1, "solver.levels must be at least 1")?;
                need(s.vcycle.coarsest >= 1, "solver.vcycle.coarsest must be at least 1")?;
            }
            SolverKind::Dd | SolverKind::MlDd => {
                need(s.subdomains >= 1, "solver.subdomains must be at least 1")?;
                need(s.subdomain_iters >= 1, "solver.subdomain_iters must be at least 1")?;
            }
        }
        if s.kind == SolverKind::MlDd {
            need(s.hybrid.coarse_iters + s.hybrid.dd_iters > 0, "the hybrid schedule is empty")?;
            need(s.hybrid.coarsening_log2 >= 1, "solver.hybrid.coarsening_log2 must be at least 1")?;
        }
        let halvings = match s.kind {
            SolverKind::Ml => s.levels.saturating_sub(1),
            SolverKind::MlDd => s.hybrid.coarsening_log2 as usize,
            _ => 0,
        };
        let cells = self.problem.cells;
        if halvings > 0 && (halvings >= usize::BITS as usize || !cells.is_multiple_of(1 << halvings) || cells >> halvings < 4) {
            return Err(Error::Config(format!(
                "{cells} cells cannot be coarsened {halvings} times down to at least 4 cells"
            )));
        }
        Ok(())
    }

    /// Canonical serialization: JSON with fields in declaration order.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
