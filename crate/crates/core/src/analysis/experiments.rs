use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::kendall::{median, RankingPair};
use crate::error::Result;
use crate::proxy::{full_train, generate_dataset, Dataset};
use crate::search::{evaluate, random_genotype};
use crate::supernet::{train_supernet, DagSpec, Genotype, SuperNet, TrainLog};

/// Independent RNG streams derived from one experiment seed.
pub(crate) mod stream {
    pub const SUPERNET_INIT: u64 = 0x1000;
    pub const SUPERNET_TRAIN: u64 = 0x2000;
    pub const SEARCH: u64 = 0x3000;
    pub const RANDOM_SEARCH: u64 = 0x4000;
    pub const SAMPLE: u64 = 0x5000;
    pub const FULL_TRAIN: u64 = 0x6000;

    pub fn derive(seed: u64, stream: u64) -> u64 {
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream
    }
}

/// The four super-net training regimes compared in the ranking ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupernetVariant {
    /// Chain space, uniform sampling, no edge weights.
    SinglePath,
    /// Dense space, uniform sampling, no edge weights.
    Dense,
    /// Dense space, strict fair sampling, no edge weights.
    DenseFair,
    /// Dense space, strict fair sampling, edge importance weights.
    DenseFairGamma,
}

impl SupernetVariant {
    pub const ALL: [SupernetVariant; 4] = [
        SupernetVariant::SinglePath,
        SupernetVariant::Dense,
        SupernetVariant::DenseFair,
        SupernetVariant::DenseFairGamma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SupernetVariant::SinglePath => "single_path",
            SupernetVariant::Dense => "dense",
            SupernetVariant::DenseFair => "dense_fair",
            SupernetVariant::DenseFairGamma => "dense_fair_gamma",
        }
    }

    /// `(densely_connected, fair_sampling, edge_importance)`.
    pub fn switches(self) -> (bool, bool, bool) {
        match self {
            SupernetVariant::SinglePath => (false, false, false),
            SupernetVariant::Dense => (true, false, false),
            SupernetVariant::DenseFair => (true, true, false),
            SupernetVariant::DenseFairGamma => (true, true, true),
        }
    }

    pub fn configure(self, base: &ExperimentConfig) -> ExperimentConfig {
        let (dense, fair, gamma) = self.switches();
        ExperimentConfig {
            densely_connected: dense,
            fair_sampling: fair,
            edge_importance: gamma,
            ..base.clone()
        }
    }
}

impl std::str::FromStr for SupernetVariant {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        SupernetVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| crate::error::Error::Config(format!("unknown super-net variant {s:?}")))
    }
}

pub fn dataset_for(config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    generate_dataset(seed, config.n_samples, &config.blobs())
}

/// Builds and trains the super-net described by `config`.
pub fn train_configured_supernet(
    config: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
    on_epoch: impl FnMut(usize, &SuperNet) -> Result<()>,
) -> Result<(SuperNet, TrainLog)> {
    let c_in = data.train.first().map_or(1, |s| s.image.shape()[0]);
    let mut net = SuperNet::new(
        config.spec(),
        config.channels,
        c_in,
        stream::derive(seed, stream::SUPERNET_INIT),
    );
    for e in 0..net.spec().edge_count() {
        net.set_gamma(e, config.gamma_init);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream::derive(seed, stream::SUPERNET_TRAIN));
    let log = train_supernet(
        &mut net,
        &data.train,
        config.supernet_train(),
        &mut rng,
        on_epoch,
    )?;
    Ok((net, log))
}

/// `count` distinct filtered random genotypes.
pub fn sample_distinct(spec: &DagSpec, count: usize, seed: u64) -> Result<Vec<Genotype>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut draws = 0;
    while out.len() < count && draws < 100 * count.max(1) {
        let g = random_genotype(&mut rng, spec)?;
        draws += 1;
        if seen.insert(g.clone()) {
            out.push(g);
        }
    }
    Ok(out)
}

/// Stand-alone fitness (negative final validation loss) of each genotype.
pub fn standalone_scores(
    config: &ExperimentConfig,
    data: &Dataset,
    genotypes: &[Genotype],
    seed: u64,
) -> Result<Vec<f64>> {
    let ft = config.full_train();
    let train_seed = stream::derive(seed, stream::FULL_TRAIN);
    genotypes
        .iter()
        .map(|g| full_train(g, data, &ft, train_seed).map(|r| -r.val_loss))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: SupernetVariant,
    pub ranking: RankingPair,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSeed {
    pub seed: u64,
    pub variants: Vec<VariantResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub variant: SupernetVariant,
    pub taus: Vec<f64>,
    pub median_tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub per_seed: Vec<CorrelationSeed>,
    pub rows: Vec<CorrelationRow>,
}

impl CorrelationReport {
    pub fn row(&self, variant: SupernetVariant) -> Option<&CorrelationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// CSV: `variant, seed_<s>..., median_tau`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant");
        for seed in &self.per_seed {
            s += &format!(",seed_{}", seed.seed);
        }
        s += ",median_tau\n";
        for row in &self.rows {
            s += row.variant.as_str();
            for t in &row.taus {
                s += &format!(",{t:.6}");
            }
            s += &format!(",{:.6}\n", row.median_tau);
        }
        s
    }
}

/// For every seed and variant: train the variant's super-net, score
/// `n_random` sampled genotypes on it and by stand-alone training, and
/// compare the two rankings. Variants on the same space share genotypes and
/// stand-alone scores.
pub fn correlation_experiment(
    config: &ExperimentConfig,
    variants: &[SupernetVariant],
) -> Result<CorrelationReport> {
    config.validate()?;
    let mut per_seed = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let data = dataset_for(config, seed)?;
        let mut spaces: Vec<(bool, Vec<Genotype>, Vec<f64>)> = Vec::new();
        let mut results = Vec::with_capacity(variants.len());
        for &variant in variants {
            let vc = variant.configure(config);
            let dense = vc.densely_connected;
            if !spaces.iter().any(|s| s.0 == dense) {
                let genotypes = sample_distinct(
                    &vc.spec(),
                    vc.n_random,
                    stream::derive(seed, stream::SAMPLE),
                )?;
                let scores = standalone_scores(&vc, &data, &genotypes, seed)?;
                spaces.push((dense, genotypes, scores));
            }
            let (_, genotypes, stand) = spaces
                .iter()
                .find(|s| s.0 == dense)
                .expect("space computed");
            let (net, _) = train_configured_supernet(&vc, &data, seed, |_, _| Ok(()))?;
            let apply_gamma = vc.edge_importance && vc.search_with_gamma;
            let sup = genotypes
                .iter()
                .map(|g| evaluate(&net, g, &data.val, apply_gamma))
                .collect::<Result<Vec<_>>>()?;
            let ranking = RankingPair::new(genotypes.clone(), sup, stand.clone())?;
            let tau = ranking.tau()?;
            results.push(VariantResult {
                variant,
                ranking,
                tau,
            });
        }
        per_seed.push(CorrelationSeed {
            seed,
            variants: results,
        });
    }
    let rows = variants
        .iter()
        .map(|&variant| {
            let taus: Vec<f64> = per_seed
                .iter()
                .map(|s| {
                    s.variants
                        .iter()
                        .find(|v| v.variant == variant)
                        .expect("variant")
                        .tau
                })
                .collect();
            CorrelationRow {
                variant,
                median_tau: median(&taus),
                taus,
            }
        })
        .collect();
    Ok(CorrelationReport { per_seed, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTrace {
    pub seed: u64,
    /// Mean super-net fitness of the probe sub-nets after each epoch.
    pub gamma_on: Vec<f64>,
    pub gamma_off: Vec<f64>,
    pub final_gammas_on: Vec<f64>,
    pub final_gammas_off: Vec<f64>,
}

impl AblationTrace {
    pub fn final_on(&self) -> Option<f64> {
        self.gamma_on.last().copied()
    }

    pub fn final_off(&self) -> Option<f64> {
        self.gamma_off.last().copied()
    }
}

/// Gnuplot-friendly columns: `epoch on_<seed> off_<seed> ...`.
pub fn ablation_dat(traces: &[AblationTrace]) -> String {
    let mut s = String::from("# epoch");
    for t in traces {
        s += &format!(" gamma_on_{0} gamma_off_{0}", t.seed);
    }
    s.push('\n');
    let epochs = traces.iter().map(|t| t.gamma_on.len()).max().unwrap_or(0);
    for e in 0..epochs {
        s += &(e + 1).to_string();
        for t in traces {
            for v in [t.gamma_on.get(e), t.gamma_off.get(e)] {
                s += &v.map_or(" nan".to_string(), |v| format!(" {v:.8e}"));
            }
        }
        s.push('\n');
    }
    s
}

/// Trains fair-sampled dense super-nets with and without edge importance
/// weights from identical initial weights, recording after each epoch the
/// mean fitness of a fixed set of random sub-nets.
pub fn ablation_edge_importance(config: &ExperimentConfig) -> Result<Vec<AblationTrace>> {
    config.validate()?;
    let mut traces = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let data = dataset_for(config, seed)?;
        let spec = DagSpec::dense(config.n_intermediate);
        let mut rng = ChaCha8Rng::seed_from_u64(stream::derive(seed, stream::SAMPLE));
        let probes = (0..config.ablation_subnets)
            .map(|_| random_genotype(&mut rng, &spec))
            .collect::<Result<Vec<_>>>()?;
        let run = |gamma: bool| -> Result<(Vec<f64>, Vec<f64>)> {
            let vc = ExperimentConfig {
                densely_connected: true,
                fair_sampling: true,
                edge_importance: gamma,
                ..config.clone()
            };
            let apply = gamma && vc.search_with_gamma;
            let mut trace = Vec::with_capacity(vc.epochs);
            let (net, _) = train_configured_supernet(&vc, &data, seed, |_, net| {
                let mut total = 0.0;
                for g in &probes {
                    total += evaluate(net, g, &data.val, apply)?;
                }
                trace.push(total / probes.len() as f64);
                Ok(())
            })?;
            Ok((trace, net.gammas()))
        };
        let (gamma_on, final_gammas_on) = run(true)?;
        let (gamma_off, final_gammas_off) = run(false)?;
        traces.push(AblationTrace {
            seed,
            gamma_on,
            gamma_off,
            final_gammas_on,
            final_gammas_off,
        });
    }
    Ok(traces)
}
