use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::SgdConfig;
use crate::error::{Error, Result};
use crate::proxy::{BlobConfig, FullTrainConfig};
use crate::search::EaConfig;
use crate::supernet::{DagSpec, SupernetTrainConfig, K};

/// Every hyper-parameter of an experiment, with the ablation switches.
///
/// Text form: one `key = value` per line, `#` starts a comment, lists are
/// comma-separated. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_intermediate: usize,
    pub channels: usize,
    pub subnets_per_step: usize,
    pub population: usize,
    pub generations: usize,
    pub top_k: usize,
    pub p_mutation: f64,
    pub mutation_children: usize,
    pub mu: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub gamma_init: f64,
    pub epochs: usize,
    pub full_train_epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub n_samples: usize,
    /// Genotypes drawn for ranking correlation and the random baseline.
    pub n_random: usize,
    /// Random sub-nets scored per epoch in the edge importance ablation.
    pub ablation_subnets: usize,
    pub densely_connected: bool,
    pub fair_sampling: bool,
    pub edge_importance: bool,
    /// Apply the edge importance weights when scoring sub-nets on the
    /// trained super-net.
    pub search_with_gamma: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_intermediate: 3,
            channels: 6,
            subnets_per_step: K,
            population: 50,
            generations: 12,
            top_k: 10,
            p_mutation: 0.1,
            mutation_children: 25,
            mu: 1e-4,
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-4,
            gamma_init: 1.0,
            epochs: 12,
            full_train_epochs: 12,
            batch_size: 8,
            seeds: vec![0, 1, 2, 3, 4],
            n_samples: 200,
            n_random: 15,
            ablation_subnets: 50,
            densely_connected: true,
            fair_sampling: true,
            edge_importance: true,
            search_with_gamma: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean {value:?} for {key}"
        ))),
    }
}

impl ExperimentConfig {
    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "n_intermediate" => self.n_intermediate = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "subnets_per_step" => self.subnets_per_step = parse(key, v)?,
            "population" => self.population = parse(key, v)?,
            "generations" => self.generations = parse(key, v)?,
            "top_k" => self.top_k = parse(key, v)?,
            "p_mutation" => self.p_mutation = parse(key, v)?,
            "mutation_children" => self.mutation_children = parse(key, v)?,
            "mu" => self.mu = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "gamma_init" => self.gamma_init = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "full_train_epochs" => self.full_train_epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seeds" => {
                self.seeds = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "n_samples" => self.n_samples = parse(key, v)?,
            "n_random" => self.n_random = parse(key, v)?,
            "ablation_subnets" => self.ablation_subnets = parse(key, v)?,
            "densely_connected" => self.densely_connected = parse_bool(key, v)?,
            "fair_sampling" => self.fair_sampling = parse_bool(key, v)?,
            "edge_importance" => self.edge_importance = parse_bool(key, v)?,
            "search_with_gamma" => self.search_with_gamma = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_intermediate == 0 {
            return fail("n_intermediate must be at least 1".into());
        }
        if self.channels == 0 {
            return fail("channels must be positive".into());
        }
        if self.subnets_per_step != K {
            return fail(format!(
                "subnets_per_step must be {K}, one per parameterized path"
            ));
        }
        if self.population == 0 || self.top_k == 0 {
            return fail("population and top_k must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.p_mutation) {
            return fail(format!("p_mutation {} outside [0, 1]", self.p_mutation));
        }
        if self.mutation_children > self.population {
            return fail("mutation_children exceeds population".into());
        }
        for (name, v) in [
            ("mu", self.mu),
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return fail(format!("{name} must be finite and non-negative"));
            }
        }
        if !self.gamma_init.is_finite() {
            return fail("gamma_init must be finite".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.n_samples < 2 {
            return fail("n_samples must be at least 2".into());
        }
        if self.n_random < 2 {
            return fail("n_random must be at least 2".into());
        }
        if self.ablation_subnets == 0 {
            return fail("ablation_subnets must be positive".into());
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut s = String::new();
        let fields: [(&str, String); 24] = [
            ("n_intermediate", self.n_intermediate.to_string()),
            ("channels", self.channels.to_string()),
            ("subnets_per_step", self.subnets_per_step.to_string()),
            ("population", self.population.to_string()),
            ("generations", self.generations.to_string()),
            ("top_k", self.top_k.to_string()),
            ("p_mutation", self.p_mutation.to_string()),
            ("mutation_children", self.mutation_children.to_string()),
            ("mu", self.mu.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("gamma_init", self.gamma_init.to_string()),
            ("epochs", self.epochs.to_string()),
            ("full_train_epochs", self.full_train_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seeds", seeds.join(",")),
            ("n_samples", self.n_samples.to_string()),
            ("n_random", self.n_random.to_string()),
            ("ablation_subnets", self.ablation_subnets.to_string()),
            ("densely_connected", self.densely_connected.to_string()),
            ("fair_sampling", self.fair_sampling.to_string()),
            ("edge_importance", self.edge_importance.to_string()),
            ("search_with_gamma", self.search_with_gamma.to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn spec(&self) -> DagSpec {
        if self.densely_connected {
            DagSpec::dense(self.n_intermediate)
        } else {
            DagSpec::chain(self.n_intermediate)
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn supernet_train(&self) -> SupernetTrainConfig {
        SupernetTrainConfig {
            sgd: self.sgd(),
            mu: self.mu,
            epochs: self.epochs,
            batch_size: self.batch_size,
            fair_sampling: self.fair_sampling,
            edge_importance: self.edge_importance,
        }
    }

    pub fn full_train(&self) -> FullTrainConfig {
        FullTrainConfig {
            sgd: self.sgd(),
            epochs: self.full_train_epochs,
            batch_size: self.batch_size,
            channels: self.channels,
        }
    }

    pub fn ea(&self) -> EaConfig {
        EaConfig {
            population: self.population,
            generations: self.generations,
            top_k: self.top_k,
            p_mutation: self.p_mutation,
            mutation_children: self.mutation_children,
        }
    }

    pub fn blobs(&self) -> BlobConfig {
        BlobConfig::default()
    }

    /// Evaluations made by one evolutionary search, counting memo hits.
    pub fn search_budget(&self) -> usize {
        self.population * (self.generations + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = ExperimentConfig::default();
        assert_eq!(
            (c.lr, c.momentum, c.weight_decay, c.mu),
            (0.02, 0.9, 1e-4, 1e-4)
        );
        assert_eq!((c.gamma_init, c.epochs, c.batch_size), (1.0, 12, 8));
        assert_eq!(
            (c.population, c.generations, c.top_k, c.p_mutation),
            (50, 12, 10, 0.1)
        );
        assert!(c.validate().is_ok());
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.seeds = vec![3, 9];
        c.fair_sampling = false;
        c.lr = 0.015;
        assert_eq!(ExperimentConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parse_comments_and_errors() {
        let c = ExperimentConfig::from_text(
            "# desk\nchannels = 4  # small\n\nseeds = 1, 2\nedge_importance = off\n",
        )
        .unwrap();
        assert_eq!(c.channels, 4);
        assert_eq!(c.seeds, vec![1, 2]);
        assert!(!c.edge_importance);
        assert!(ExperimentConfig::from_text("bogus = 1")
            .unwrap_err()
            .is_config());
        assert!(ExperimentConfig::from_text("channels").is_err());
        assert!(ExperimentConfig::from_text("lr = fast").is_err());
        assert!(ExperimentConfig::from_text("p_mutation = 2").is_err());
        assert!(ExperimentConfig::from_text("subnets_per_step = 3").is_err());
    }
}
