use std::path::{Path, PathBuf};

use exo2ego_core::dataset::InputSpec;
use exo2ego_core::metrics::MetricConfig;
use exo2ego_core::probes::ProbeOptions;
use exo2ego_core::retrieval::RetrievalConfig;
use exo2ego_core::synthesis::SynthesisConfig;
use exo2ego_core::toygen::ToygenConfig;
use exo2ego_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a run needs, loaded from `--config` and overridden by flags.
/// The resolved copy is echoed to `<out>/config.toml`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub toygen: ToygenConfig,
    pub inputs: InputSpec,
    pub retrieval: RetrievalConfig,
    pub synthesis: SynthesisConfig,
    pub metrics: MetricConfig,
    pub probe: ProbeOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_path_buf())
            } else {
                Error::Config(format!("{}: {e}", path.display()))
            }
        })?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Push the run seed into every module that draws random numbers.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.toygen.seed = seed;
        self.retrieval.seed = seed;
        self.retrieval.model.seed = seed;
        self.synthesis.seed = seed;
        self.synthesis.generator.seed = seed;
        self.synthesis.discriminator.seed = seed.wrapping_add(1);
        self.probe.svm.seed = seed;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn write_echo(&self) -> Result<()> {
        let path = self.out.join("config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig {
            experiment: "toy".into(),
            out: "runs/toy".into(),
            ..RunConfig::default()
        };
        c.apply_seed(7);
        c.retrieval.epochs = 3;
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        let c: RunConfig = toml::from_str("[retrieval]\nepochs = 2\n").unwrap();
        assert_eq!(c.retrieval.epochs, 2);
    }
}
