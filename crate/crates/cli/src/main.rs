use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pathnas::analysis::{
    ablation_dat, ablation_edge_importance, correlation_experiment, dataset_for, run_pipeline,
    train_configured_supernet, ExperimentConfig, PipelineReport, SupernetVariant,
};
use pathnas::checkpoint::Checkpoint;
use pathnas::proxy::{full_train, Dataset};
use pathnas::search::{ea_search, random_search, write_search_log, SearchState, SupernetFitness};
use pathnas::supernet::{Genotype, SuperNet};
use pathnas::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "pathnas",
    version,
    about = "One-shot path-aggregation search for feature pyramids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key = value experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seeds with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DataArg {
    /// Dataset file written by `gen-data`; regenerated from the seed if absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a super-net.
    TrainSupernet {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Evolutionary search over a trained super-net.
    Search {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        supernet: PathBuf,
        /// Continue from a saved search state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train one genotype from fresh weights.
    FullTrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Genotype JSON file.
        #[arg(long)]
        genotype: PathBuf,
    },
    /// Random search over a trained super-net.
    RandomBaseline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        supernet: PathBuf,
        /// Number of draws; defaults to the evolutionary search budget.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Ranking correlation between super-net and stand-alone scores.
    Correlate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of single_path, dense, dense_fair, dense_fair_gamma.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
    /// Super-net convergence with and without edge importance weights.
    AblateGamma {
        #[command(flatten)]
        common: Common,
    },
    /// Train, search, fully train the winner and run the random baseline.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
    /// Regenerate gnuplot data files from a pipeline report.
    PlotData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        report: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    config.validate()?;
    Ok(config)
}

fn seed_of(config: &ExperimentConfig) -> u64 {
    config.seeds[0]
}

fn prepare_out(common: &Common) -> Result<&Path> {
    fs::create_dir_all(&common.out)?;
    Ok(&common.out)
}

fn load_data(config: &ExperimentConfig, arg: &DataArg) -> Result<Dataset> {
    match &arg.data {
        Some(p) => Dataset::from_checkpoint(&Checkpoint::load_bundle(p)?),
        None => dataset_for(config, seed_of(config)),
    }
}

fn load_supernet(path: &Path) -> Result<SuperNet> {
    SuperNet::from_checkpoint(&Checkpoint::load_bundle(path)?)
}

fn read_genotype(path: &Path) -> Result<Genotype> {
    Genotype::from_json(&fs::read_to_string(path)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let config = load_config(&common)?;
            let out = prepare_out(&common)?;
            let seed = seed_of(&config);
            let data = dataset_for(&config, seed)?;
            data.to_checkpoint(&config.blobs(), seed)?
                .save_bundle(&out.join("dataset.ckpt"))?;
            println!(
                "{} train / {} val samples -> {}",
                data.train.len(),
                data.val.len(),
                out.join("dataset.ckpt").display()
            );
        }
        Command::TrainSupernet { common, data } => {
            let config = load_config(&common)?;
            let out = prepare_out(&common)?;
            let dataset = load_data(&config, &data)?;
            let (net, log) =
                train_configured_supernet(&config, &dataset, seed_of(&config), |epoch, net| {
                    let g = net.gammas();
                    let mean = g.iter().map(|v| v.abs()).sum::<f64>() / g.len() as f64;
                    eprintln!("epoch {} mean |gamma| {mean:.6}", epoch + 1);
                    Ok(())
                })?;
            net.to_checkpoint()
                .save_bundle(&out.join("supernet.ckpt"))?;
            log.write_csv(fs::File::create(out.join("supernet_log.csv"))?)?;
            if let Some(last) = log.epochs.last() {
                println!("final epoch mean loss {:.6}", last.mean_loss);
            }
        }
        Command::Search {
            common,
            data,
            supernet,
            resume,
        } => {
            let config = load_config(&common)?;
            let out = prepare_out(&common)?;
            let dataset = load_data(&config, &data)?;
            let net = load_supernet(&supernet)?;
            let fitness = SupernetFitness {
                net: &net,
                valset: &dataset.val,
                apply_gamma: config.edge_importance && config.search_with_gamma,
            };
            let state = match resume {
                Some(p) => {
                    let mut state = SearchState::from_json(&fs::read_to_string(p)?)?;
                    state.run(&fitness)?;
                    state
                }
                None => ea_search(*net.spec(), &fitness, config.ea(), seed_of(&config))?.1,
            };
            let best = state
                .best()
                .cloned()
                .ok_or_else(|| Error::Search("empty pool".into()))?;
            write_search_log(
                &state.history,
                fs::File::create(out.join("search_log.csv"))?,
            )?;
            fs::write(out.join("search_state.json"), state.to_json()?)?;
            fs::write(out.join("winner.json"), best.genotype.to_json() + "\n")?;
            println!("winner {} fitness {:.6}", best.genotype, best.fitness);
        }
        Command::FullTrain {
            common,
            data,
            genotype,
        } => {
            let config = load_config(&common)?;
            let out = prepare_out(&common)?;
            let dataset = load_data(&config, &data)?;
            let g = read_genotype(&genotype)?;
            let r = full_train(&g, &dataset, &config.full_train(), seed_of(&config))?;
            let mut csv = String::from("epoch,train_loss\n");
            for (i, l) in r.epoch_losses.iter().enumerate() {
                csv += &format!("{},{l:.10e}\n", i + 1);
            }
            fs::write(out.join("full_train.csv"), csv)?;
            let summary = serde_json::json!({
                "genotype": g,
                "val_loss": r.val_loss,
                "train_loss": r.train_loss,
            });
            fs::write(
                out.join("full_train.json"),
                serde_json::to_string_pretty(&summary)? + "\n",
            )?;
            println!("val loss {:.6}", r.val_loss);
        }
        Command::RandomBaseline {
            common,
            data,
            supernet,
            budget,
        } => {
            let config = load_config(&common)?;
            let out = prepare_out(&common)?;
            let dataset = load_data(&config, &data)?;
            let net = load_supernet(&supernet)?;
            let fitness = SupernetFitness {
                net: &net,
                valset: &dataset.val,
                apply_gamma: config.edge_importance && config.search_with_gamma,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&config));
            let budget = budget.unwrap_or_else(|| config.search_budget());
            let r = random_search(*net.spec(), &fitness, budget, &mut rng)?;
            let mut csv = String::from("draw,genotype,fitness\n");
            for (i, s) in r.scores.iter().enumerate() {
                csv += &format!("{i},\"{}\",{:.10e}\n", s.genotype, s.fitness);
            }
            fs::write(out.join("random_search.csv"), csv)?;
            fs::write(
                out.join("random_best.json"),
                r.best.genotype.to_json() + "\n",
            )?;
            println!(
                "best {} fitness {:.6}, average {:.6}",
                r.best.genotype,
                r.best.fitness,
                r.average_fitness()
            );
        }
        Command::Correlate { common, variants } => {
            let config = load_config(&common)?;
            let out = prepare_out(&common)?;
            let variants: Vec<SupernetVariant> = match variants {
                Some(v) => v.iter().map(|s| s.parse()).collect::<Result<_>>()?,
                None => SupernetVariant::ALL.to_vec(),
            };
            let report = correlation_experiment(&config, &variants)?;
            fs::write(out.join("correlation.csv"), report.to_csv())?;
            fs::write(
                out.join("correlation.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            print!("{}", report.to_csv());
        }
        Command::AblateGamma { common } => {
            let config = load_config(&common)?;
            let out = prepare_out(&common)?;
            let traces = ablation_edge_importance(&config)?;
            fs::write(out.join("ablation.dat"), ablation_dat(&traces))?;
            fs::write(
                out.join("ablation.json"),
                serde_json::to_string_pretty(&traces)? + "\n",
            )?;
            for t in &traces {
                println!(
                    "seed {}: final mean fitness gamma on {:.6}, off {:.6}",
                    t.seed,
                    t.final_on().unwrap_or(f64::NAN),
                    t.final_off().unwrap_or(f64::NAN)
                );
            }
        }
        Command::Pipeline { common } => {
            let config = load_config(&common)?;
            let out = prepare_out(&common)?;
            let report = run_pipeline(&config, seed_of(&config), Some(out))?;
            print!("{}", report.summary());
        }
        Command::PlotData { common, report } => {
            let out = prepare_out(&common)?;
            let r = PipelineReport::from_json(&fs::read_to_string(report)?)?;
            r.write_plot_data(out)?;
            println!("wrote plot data to {}", out.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if let Error::Phase { source, .. } = e {
        return exit_code(source);
    }
    if e.is_config() || matches!(e, Error::Genotype(_)) {
        2
    } else if e.is_numerical() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
