//! Run configuration: TOML parsing, benchmark-aware validation, and
//! defaulting of everything the configuration leaves unstated.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Raw configuration exactly as written in the TOML file.  Unknown keys are
/// rejected so typos fail loudly instead of silently falling back to
/// defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// One of `diffusion-reaction`, `mass-spring`, `advection-diffusion`.
    pub benchmark: String,
    /// Master seed; every random stage derives an independent stream from it.
    pub master_seed: u64,
    /// Mesh elements (1D), time steps, or grid cells per side (2D).
    pub resolution: Option<usize>,
    /// Diffusivity for the PDE benchmarks.  The mass-spring pair has none.
    pub kappa: Option<f64>,
    /// Where artifacts go; overridable with `--out`.
    pub output_dir: Option<String>,
    pub hyper: HyperConfig,
    #[serde(default)]
    pub update: UpdateConfig,
}

/// Prior and noise hyper-parameters.  `alpha_*` set variances, `beta_*` set
/// correlation lengths; `alpha_d` is the calibration noise variance.
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub alpha_u: f64,
    pub beta_u: f64,
    pub alpha_z: f64,
    /// Required for the mesh/time benchmarks; forbidden for
    /// `advection-diffusion`, whose source basis fixes the correlation
    /// structure of the controller.
    pub beta_z: Option<f64>,
    pub alpha_d: f64,
}

/// Knobs of the calibration and sampling stages.  Everything here has a
/// benchmark-dependent default recorded in the manifest.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateConfig {
    /// Number of high-fidelity training evaluations (the first is always at
    /// the low-fidelity optimum).
    pub n_data: Option<usize>,
    /// Posterior solution samples per rank; 0 emits the mean only.
    pub samples: Option<usize>,
    /// Retained rank of the state-prior factorization; defaults to an
    /// automatic spectrum-decay rule.  Not accepted for `mass-spring`,
    /// whose state prior is factored exactly.
    pub state_rank: Option<usize>,
    /// Curvature-subspace ranks to emit (run) or sweep (rank-sweep).
    pub ranks: Option<Vec<usize>>,
    /// Size of the secondary training perturbations relative to the norm of
    /// the low-fidelity optimum.
    pub secondary_magnitude: Option<f64>,
    /// Evaluate the high-fidelity objective at every posterior sample
    /// (histogram raw data; one expensive solve per sample).
    pub evaluate_samples: Option<bool>,
    /// Also optimize the high-fidelity model (validation reference).
    pub hifi_optimum: Option<bool>,
}

/// The three built-in model pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    DiffusionReaction,
    MassSpring,
    AdvectionDiffusion,
}

impl Benchmark {
    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "diffusion-reaction" => Ok(Self::DiffusionReaction),
            "mass-spring" => Ok(Self::MassSpring),
            "advection-diffusion" => Ok(Self::AdvectionDiffusion),
            other => Err(CliError::Config(format!(
                "unknown benchmark `{other}`; expected one of diffusion-reaction, \
                 mass-spring, advection-diffusion"
            ))),
        }
    }

    pub fn default_resolution(self) -> usize {
        match self {
            Self::DiffusionReaction => 100,
            Self::MassSpring => 400,
            Self::AdvectionDiffusion => 40,
        }
    }

    pub fn default_kappa(self) -> Option<f64> {
        match self {
            Self::DiffusionReaction => {
                Some(hdsa_core::models::diffusion_reaction::DEFAULT_KAPPA)
            }
            Self::MassSpring => None,
            Self::AdvectionDiffusion => {
                Some(hdsa_core::models::advection_diffusion::DEFAULT_KAPPA)
            }
        }
    }

    pub fn default_n_data(self) -> usize {
        match self {
            Self::DiffusionReaction | Self::MassSpring => 2,
            Self::AdvectionDiffusion => 1,
        }
    }

    /// Ranks emitted by `run` when the configuration does not choose.
    pub fn default_run_ranks(self) -> Vec<usize> {
        match self {
            Self::DiffusionReaction => vec![4, 11],
            Self::MassSpring => vec![17],
            Self::AdvectionDiffusion => vec![1, 2],
        }
    }

    /// Optimization-space dimension implied by a resolution.
    pub fn opt_dim(self, resolution: usize) -> usize {
        match self {
            Self::DiffusionReaction | Self::MassSpring => resolution + 1,
            Self::AdvectionDiffusion => hdsa_core::models::advection_diffusion::N_SOURCES,
        }
    }

    /// State-space dimension implied by a resolution.
    pub fn state_dim(self, resolution: usize) -> usize {
        match self {
            Self::DiffusionReaction => resolution + 1,
            Self::MassSpring => 2 * (resolution + 1),
            Self::AdvectionDiffusion => (resolution + 1) * (resolution + 1),
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::DiffusionReaction => "diffusion-reaction",
            Self::MassSpring => "mass-spring",
            Self::AdvectionDiffusion => "advection-diffusion",
        };
        f.write_str(name)
    }
}

/// Fully validated configuration with every default filled in.  Serialized
/// verbatim into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub benchmark: Benchmark,
    pub master_seed: u64,
    pub resolution: usize,
    pub kappa: Option<f64>,
    pub hyper: HyperConfig,
    pub n_data: usize,
    pub samples: usize,
    pub state_rank: Option<usize>,
    /// Sorted and deduplicated; `None` means the command's own default.
    pub ranks: Option<Vec<usize>>,
    pub secondary_magnitude: f64,
    /// `None` means the command's own default (`run` skips the expensive
    /// per-sample evaluations; `rank-sweep` computes the reference optimum).
    pub evaluate_samples: Option<bool>,
    pub hifi_optimum: Option<bool>,
    pub output_dir: PathBuf,
    /// Names of the fields that fell back to defaults.
    pub defaulted: Vec<String>,
}

/// Read and hash a configuration file.
pub fn load(path: &Path) -> Result<(RunConfig, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| {
        CliError::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    let sha = {
        let mut h = Sha256::new();
        h.update(&bytes);
        format!("{:x}", h.finalize())
    };
    let text = String::from_utf8(bytes)
        .map_err(|e| CliError::Config(format!("config is not UTF-8: {e}")))?;
    let cfg: RunConfig = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((cfg, sha))
}

fn require_positive(name: &str, value: f64) -> Result<(), CliError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}

/// Validate a raw configuration against its benchmark and fill defaults.
pub fn resolve(cfg: RunConfig, out_override: Option<PathBuf>) -> Result<Resolved, CliError> {
    let benchmark = Benchmark::parse(&cfg.benchmark)?;
    let mut defaulted = Vec::new();
    let mut defaulting = |name: &str| defaulted.push(name.to_string());

    require_positive("hyper.alpha_u", cfg.hyper.alpha_u)?;
    require_positive("hyper.beta_u", cfg.hyper.beta_u)?;
    require_positive("hyper.alpha_z", cfg.hyper.alpha_z)?;
    require_positive("hyper.alpha_d", cfg.hyper.alpha_d)?;
    match (benchmark, cfg.hyper.beta_z) {
        (Benchmark::AdvectionDiffusion, Some(_)) => {
            return Err(CliError::Config(
                "benchmark advection-diffusion takes no hyper.beta_z: the source \
                 basis fixes the controller correlation structure"
                    .into(),
            ));
        }
        (Benchmark::AdvectionDiffusion, None) => {}
        (_, Some(b)) => require_positive("hyper.beta_z", b)?,
        (_, None) => {
            return Err(CliError::Config(format!(
                "missing config key hyper.beta_z (required for benchmark {benchmark})"
            )));
        }
    }

    let resolution = match cfg.resolution {
        Some(r) => r,
        None => {
            defaulting("resolution");
            benchmark.default_resolution()
        }
    };
    let kappa = match (benchmark, cfg.kappa) {
        (Benchmark::MassSpring, Some(_)) => {
            return Err(CliError::Config(
                "benchmark mass-spring takes no kappa".into(),
            ));
        }
        (Benchmark::MassSpring, None) => None,
        (_, Some(k)) => {
            require_positive("kappa", k)?;
            Some(k)
        }
        (_, None) => {
            defaulting("kappa");
            benchmark.default_kappa()
        }
    };

    let opt_dim = benchmark.opt_dim(resolution);
    let n_data = match cfg.update.n_data {
        Some(n) => n,
        None => {
            defaulting("update.n_data");
            benchmark.default_n_data()
        }
    };
    if n_data == 0 {
        return Err(CliError::Config("update.n_data must be at least 1".into()));
    }
    if n_data > opt_dim {
        return Err(CliError::Config(format!(
            "update.n_data = {n_data} exceeds the optimization dimension {opt_dim}"
        )));
    }

    let samples = match cfg.update.samples {
        Some(s) => s,
        None => {
            defaulting("update.samples");
            100
        }
    };
    let state_rank = match (benchmark, cfg.update.state_rank) {
        (Benchmark::MassSpring, Some(_)) => {
            return Err(CliError::Config(
                "benchmark mass-spring takes no update.state_rank: its state \
                 prior is factored exactly"
                    .into(),
            ));
        }
        (_, Some(q)) => {
            let m = benchmark.state_dim(resolution);
            if q == 0 || q > m {
                return Err(CliError::Config(format!(
                    "update.state_rank = {q} must lie in 1..={m} (state dimension)"
                )));
            }
            Some(q)
        }
        (_, None) => {
            if benchmark != Benchmark::MassSpring {
                defaulting("update.state_rank");
            }
            None
        }
    };
    let ranks = match cfg.update.ranks {
        Some(list) => {
            if list.is_empty() {
                return Err(CliError::Config("update.ranks must not be empty".into()));
            }
            let mut sorted = list;
            sorted.sort_unstable();
            sorted.dedup();
            if let Some(&too_big) = sorted.iter().find(|&&r| r > opt_dim) {
                return Err(CliError::Config(format!(
                    "update.ranks entry {too_big} exceeds the optimization \
                     dimension {opt_dim}"
                )));
            }
            Some(sorted)
        }
        None => {
            defaulting("update.ranks");
            None
        }
    };
    let secondary_magnitude = match cfg.update.secondary_magnitude {
        Some(v) => {
            require_positive("update.secondary_magnitude", v)?;
            v
        }
        None => {
            defaulting("update.secondary_magnitude");
            0.2
        }
    };
    let evaluate_samples = cfg.update.evaluate_samples;
    if evaluate_samples.is_none() {
        defaulted.push("update.evaluate_samples".into());
    }
    let hifi_optimum = cfg.update.hifi_optimum;
    if hifi_optimum.is_none() {
        defaulted.push("update.hifi_optimum".into());
    }

    let output_dir = match out_override {
        Some(p) => p,
        None => match cfg.output_dir {
            Some(s) => PathBuf::from(s),
            None => {
                defaulted.push("output_dir".into());
                PathBuf::from("out")
            }
        },
    };

    Ok(Resolved {
        benchmark,
        master_seed: cfg.master_seed,
        resolution,
        kappa,
        hyper: cfg.hyper,
        n_data,
        samples,
        state_rank,
        ranks,
        secondary_magnitude,
        evaluate_samples,
        hifi_optimum,
        output_dir,
        defaulted,
    })
}
