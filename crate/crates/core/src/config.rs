//! Experiment configuration files and their validation.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::models::{self, ObjectiveModel};

/// The closed set of runnable experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Fig2,
    RrBiasScaling,
    StationaryTable,
    Coupling,
    KScaling,
    WeakError,
    MomentGrowth,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Fig2,
        Experiment::RrBiasScaling,
        Experiment::StationaryTable,
        Experiment::Coupling,
        Experiment::KScaling,
        Experiment::WeakError,
        Experiment::MomentGrowth,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Fig2 => "fig2",
            Experiment::RrBiasScaling => "rr-bias-scaling",
            Experiment::StationaryTable => "stationary-table",
            Experiment::Coupling => "coupling",
            Experiment::KScaling => "k-scaling",
            Experiment::WeakError => "weak-error",
            Experiment::MomentGrowth => "moment-growth",
        }
    }

    pub fn parse(name: &str) -> Result<Experiment> {
        Experiment::ALL
            .iter()
            .copied()
            .find(|e| e.name() == name)
            .ok_or_else(|| {
                let all: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
                Error::InvalidConfig(format!(
                    "unknown experiment {name:?}; expected one of {}",
                    all.join(", ")
                ))
            })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model: PathBuf,
    experiment: String,
    gammas: Vec<f64>,
    horizon: u64,
    replicas: u64,
    seed: u64,
    #[serde(default)]
    out_dir: Option<PathBuf>,
    #[serde(default)]
    plots: Option<bool>,
}

/// A validated experiment description with the model already loaded.
#[derive(Debug)]
pub struct RunConfig {
    pub model_path: PathBuf,
    pub model: ObjectiveModel,
    pub experiment: Experiment,
    pub gammas: Vec<f64>,
    pub horizon: u64,
    pub replicas: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub plots: bool,
}

pub const MIN_HORIZON: u64 = 1_000;

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() {
            return Err(Error::InvalidConfig("at least one step size is required".into()));
        }
        let limit = self.model.gamma_limit();
        for &g in &self.gammas {
            if !(g > 0.0 && g < limit) {
                return Err(Error::InvalidConfig(format!(
                    "step size {g} outside the stable range (0, {limit:.6})"
                )));
            }
        }
        if self.horizon < MIN_HORIZON {
            return Err(Error::InvalidConfig(format!(
                "horizon {} below the minimum {MIN_HORIZON}",
                self.horizon
            )));
        }
        if self.replicas < 1 {
            return Err(Error::InvalidConfig("at least one replica is required".into()));
        }
        Ok(())
    }
}

/// Loads and validates a run configuration.
///
/// ```toml
/// model = "models/logistic1.toml"   # relative to this file
/// experiment = "fig2"
/// gammas = [2.857, 1.4285]
/// horizon = 1000000
/// replicas = 4
/// seed = 42
/// out_dir = "out/fig2"              # default out/<experiment>
/// plots = true
/// ```
///
/// Relative paths (the model, the output directory) resolve against the
/// config file's own directory.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::file(path.display().to_string(), e))?;
    let raw: ConfigFile = toml::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let experiment = Experiment::parse(&raw.experiment)?;
    let model_path = resolve(&raw.model);
    let model = models::load_model(&model_path)?;
    let out_dir = raw
        .out_dir
        .map(|p| resolve(&p))
        .unwrap_or_else(|| base.join("out").join(experiment.name()));
    let cfg = RunConfig {
        model_path,
        model,
        experiment,
        gammas: raw.gammas,
        horizon: raw.horizon,
        replicas: raw.replicas,
        seed: raw.seed,
        out_dir,
        plots: raw.plots.unwrap_or(true),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const MODEL: &str = "kind = \"least-squares\"\n\n\
        [[atoms]]\nx = [1.0]\ny = 1.0\nw = 0.5\n\n\
        [[atoms]]\nx = [1.0]\ny = -1.0\nw = 0.5\n";

    fn write_files(config_body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let model_path = dir.path().join("model.toml");
        std::fs::File::create(&model_path).unwrap().write_all(MODEL.as_bytes()).unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::File::create(&cfg_path).unwrap().write_all(config_body.as_bytes()).unwrap();
        (dir, cfg_path)
    }

    #[test]
    fn loads_a_valid_config_with_defaults() {
        let (dir, path) = write_files(
            "model = \"model.toml\"\nexperiment = \"coupling\"\ngammas = [0.1]\n\
             horizon = 2000\nreplicas = 8\nseed = 7\n",
        );
        let cfg = load_run_config(&path).unwrap();
        assert_eq!(cfg.experiment, Experiment::Coupling);
        assert_eq!(cfg.out_dir, dir.path().join("out").join("coupling"));
        assert!(cfg.plots);
        assert_eq!(cfg.model.dim(), 1);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            // Step size at the stability limit 2 / L = 2.
            "model = \"model.toml\"\nexperiment = \"coupling\"\ngammas = [2.0]\nhorizon = 2000\nreplicas = 1\nseed = 1\n",
            // Horizon below the minimum.
            "model = \"model.toml\"\nexperiment = \"coupling\"\ngammas = [0.1]\nhorizon = 10\nreplicas = 1\nseed = 1\n",
            // No replicas.
            "model = \"model.toml\"\nexperiment = \"coupling\"\ngammas = [0.1]\nhorizon = 2000\nreplicas = 0\nseed = 1\n",
            // Unknown experiment.
            "model = \"model.toml\"\nexperiment = \"mystery\"\ngammas = [0.1]\nhorizon = 2000\nreplicas = 1\nseed = 1\n",
            // Unknown field.
            "model = \"model.toml\"\nexperiment = \"coupling\"\ngammas = [0.1]\nhorizon = 2000\nreplicas = 1\nseed = 1\nworker = 4\n",
            // Empty grid.
            "model = \"model.toml\"\nexperiment = \"coupling\"\ngammas = []\nhorizon = 2000\nreplicas = 1\nseed = 1\n",
        ];
        for body in cases {
            let (_dir, path) = write_files(body);
            assert!(load_run_config(&path).is_err(), "config accepted: {body}");
        }
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(Experiment::parse(e.name()).unwrap(), e);
        }
        assert!(Experiment::parse("fig3").is_err());
    }
}
