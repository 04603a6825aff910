use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiments::{
    dataset_for, sample_distinct, standalone_scores, stream, train_configured_supernet,
};
use super::kendall::{kendall_tau, median};
use crate::error::{Error, Result};
use crate::proxy::full_train;
use crate::search::{ea_search, random_search, write_search_log, Fitness, SupernetFitness};
use crate::supernet::{EpochSummary, Genotype, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinnerReport {
    pub genotype: Genotype,
    pub supernet_fitness: f64,
    pub val_loss: f64,
    pub train_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub evaluations: usize,
    pub unique_evaluations: usize,
    pub best_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSearchSummary {
    pub budget: usize,
    pub best_genotype: Genotype,
    pub best_fitness: f64,
    pub average_fitness: f64,
    pub best_val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledGenotype {
    pub genotype: Genotype,
    pub supernet_fitness: f64,
    pub val_loss: f64,
}

/// Everything the pipeline measured. Contains no timestamps or timings, so
/// identical inputs give an identical serialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub winner: WinnerReport,
    pub search: SearchSummary,
    pub random_search: RandomSearchSummary,
    /// Random genotypes trained stand-alone as the reference distribution.
    pub random_sample: Vec<SampledGenotype>,
    pub median_random_val_loss: f64,
    pub mean_random_val_loss: f64,
    pub winner_beats_random_median: bool,
    /// Rank agreement between super-net fitness and stand-alone fitness over
    /// the random sample.
    pub kendall_tau: f64,
    pub supernet_epochs: Vec<EpochSummary>,
    pub final_gammas: Vec<f64>,
}

impl PipelineReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let w = &self.winner;
        let r = &self.random_search;
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "winner            {}", w.genotype);
        let _ = writeln!(s, "  super-net fitness {:.6}", w.supernet_fitness);
        let _ = writeln!(s, "  stand-alone val loss {:.6}", w.val_loss);
        let _ = writeln!(
            s,
            "search            {} evaluations ({} unique)",
            self.search.evaluations, self.search.unique_evaluations
        );
        let _ = writeln!(s, "random search     budget {}", r.budget);
        let _ = writeln!(s, "  best {}", r.best_genotype);
        let _ = writeln!(
            s,
            "  best fitness {:.6}, average fitness {:.6}, best val loss {:.6}",
            r.best_fitness, r.average_fitness, r.best_val_loss
        );
        let _ = writeln!(
            s,
            "random sample     {} genotypes, median val loss {:.6}, mean {:.6}",
            self.random_sample.len(),
            self.median_random_val_loss,
            self.mean_random_val_loss
        );
        let _ = writeln!(
            s,
            "winner <= median  {}",
            if self.winner_beats_random_median {
                "yes"
            } else {
                "no"
            }
        );
        let _ = writeln!(s, "kendall tau       {:.4}", self.kendall_tau);
        s
    }

    /// Gnuplot data: best fitness per generation.
    pub fn search_trace_dat(&self) -> String {
        let mut s = String::from("# generation best_fitness\n");
        for (i, v) in self.search.best_trace.iter().enumerate() {
            let _ = writeln!(s, "{i} {v:.10e}");
        }
        s
    }

    /// Gnuplot data: mean loss and mean |gamma| per super-net epoch.
    pub fn supernet_dat(&self) -> String {
        let mut s = String::from("# epoch mean_loss mean_abs_gamma\n");
        for e in &self.supernet_epochs {
            let _ = writeln!(
                s,
                "{} {:.10e} {:.10e}",
                e.epoch + 1,
                e.mean_loss,
                e.mean_abs_gamma
            );
        }
        s
    }

    /// Gnuplot data: super-net fitness against stand-alone val loss.
    pub fn ranking_dat(&self) -> String {
        let mut s = String::from("# supernet_fitness standalone_val_loss\n");
        for r in &self.random_sample {
            let _ = writeln!(s, "{:.10e} {:.10e}", r.supernet_fitness, r.val_loss);
        }
        s
    }

    /// Writes the gnuplot data files into `dir`.
    pub fn write_plot_data(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("search_trace.dat"), self.search_trace_dat())?;
        fs::write(dir.join("supernet_epochs.dat"), self.supernet_dat())?;
        fs::write(dir.join("ranking.dat"), self.ranking_dat())?;
        Ok(())
    }
}

fn write(out: Option<&Path>, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = out {
        fs::write(dir.join(name), contents)?;
    }
    Ok(())
}

fn train_log_csv(log: &TrainLog) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    Ok(buf)
}

/// Super-net training, evolutionary search, stand-alone training of the
/// winner and a matched-budget random-search baseline.
///
/// With `out`, every phase persists its artifacts as soon as it finishes, so
/// a failure leaves the completed phases on disk. Errors carry the name of
/// the failing phase.
pub fn run_pipeline(
    config: &ExperimentConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<PipelineReport> {
    config.validate().map_err(|e| e.in_phase("config"))?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write(out, "config.txt", config.to_text())?;
    }
    let data = dataset_for(config, seed).map_err(|e| e.in_phase("data"))?;

    let (net, log) = train_configured_supernet(config, &data, seed, |_, _| Ok(()))
        .map_err(|e| e.in_phase("train_supernet"))?;
    (|| -> Result<()> {
        write(out, "supernet_log.csv", train_log_csv(&log)?)?;
        if let Some(dir) = out {
            net.to_checkpoint()
                .save_bundle(&dir.join("supernet.ckpt"))?;
        }
        Ok(())
    })()
    .map_err(|e| e.in_phase("train_supernet"))?;

    let fitness = SupernetFitness {
        net: &net,
        valset: &data.val,
        apply_gamma: config.edge_importance && config.search_with_gamma,
    };
    let checksum = net.store().checksum();
    let (best, state) = (|| -> Result<_> {
        let r = ea_search(
            *net.spec(),
            &fitness,
            config.ea(),
            stream::derive(seed, stream::SEARCH),
        )?;
        let mut csv = Vec::new();
        write_search_log(&r.1.history, &mut csv)?;
        write(out, "search_log.csv", csv)?;
        write(out, "search_state.json", r.1.to_json()?)?;
        Ok(r)
    })()
    .map_err(|e| e.in_phase("search"))?;

    let budget = config.search_budget();
    let rs = (|| -> Result<_> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream::derive(seed, stream::RANDOM_SEARCH));
        random_search(*net.spec(), &fitness, budget, &mut rng)
    })()
    .map_err(|e| e.in_phase("random_search"))?;
    if net.store().checksum() != checksum {
        return Err(
            Error::Search("super-net weights changed during search".into()).in_phase("search"),
        );
    }

    let ft = config.full_train();
    let train_seed = stream::derive(seed, stream::FULL_TRAIN);
    let winner_run =
        full_train(&best.genotype, &data, &ft, train_seed).map_err(|e| e.in_phase("full_train"))?;
    write(out, "winner.json", best.genotype.to_json() + "\n")?;
    let random_best_loss = full_train(&rs.best.genotype, &data, &ft, train_seed)
        .map_err(|e| e.in_phase("random_baseline"))?
        .val_loss;

    let (sample, stand) = (|| -> Result<_> {
        let sample = sample_distinct(
            net.spec(),
            config.n_random,
            stream::derive(seed, stream::SAMPLE),
        )?;
        let stand = standalone_scores(config, &data, &sample, seed)?;
        Ok((sample, stand))
    })()
    .map_err(|e| e.in_phase("random_baseline"))?;
    let sup: Vec<f64> = sample
        .iter()
        .map(|g| fitness.fitness(g))
        .collect::<Result<_>>()
        .map_err(|e| e.in_phase("random_baseline"))?;
    let tau = kendall_tau(&sup, &stand).map_err(|e| e.in_phase("random_baseline"))?;
    let losses: Vec<f64> = stand.iter().map(|s| -s).collect();
    let median_loss = median(&losses);

    let report = PipelineReport {
        seed,
        config: config.clone(),
        winner: WinnerReport {
            genotype: best.genotype.clone(),
            supernet_fitness: best.fitness,
            val_loss: winner_run.val_loss,
            train_loss: winner_run.train_loss,
        },
        search: SearchSummary {
            evaluations: state.history.len(),
            unique_evaluations: state.unique_evaluations(),
            best_trace: state.best_trace.clone(),
        },
        random_search: RandomSearchSummary {
            budget,
            best_genotype: rs.best.genotype.clone(),
            best_fitness: rs.best.fitness,
            average_fitness: rs.average_fitness(),
            best_val_loss: random_best_loss,
        },
        random_sample: sample
            .iter()
            .zip(&sup)
            .zip(&losses)
            .map(|((g, &f), &l)| SampledGenotype {
                genotype: g.clone(),
                supernet_fitness: f,
                val_loss: l,
            })
            .collect(),
        median_random_val_loss: median_loss,
        mean_random_val_loss: losses.iter().sum::<f64>() / losses.len() as f64,
        winner_beats_random_median: winner_run.val_loss <= median_loss,
        kendall_tau: tau,
        supernet_epochs: log.epochs.clone(),
        final_gammas: net.gammas(),
    };

    if let Some(dir) = out {
        (|| -> Result<()> {
            write(out, "report.json", report.to_json()?)?;
            write(out, "summary.txt", report.summary())?;
            let mut csv = String::from("genotype,supernet_fitness,val_loss\n");
            for r in &report.random_sample {
                let _ = writeln!(
                    csv,
                    "\"{}\",{:.10e},{:.10e}",
                    r.genotype, r.supernet_fitness, r.val_loss
                );
            }
            write(out, "random_sample.csv", csv)?;
            let mut csv = String::from("draw,genotype,fitness\n");
            for (i, s) in rs.scores.iter().enumerate() {
                let _ = writeln!(csv, "{i},\"{}\",{:.10e}", s.genotype, s.fitness);
            }
            write(out, "random_search.csv", csv)?;
            report.write_plot_data(dir)
        })()
        .map_err(|e| e.in_phase("report"))?;
    }
    Ok(report)
}
