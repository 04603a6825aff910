//! Evolutionary search over genotypes with a top-k elitist parent pool, and
//! the random-search baseline.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{coarse_filter, crossover, mutate, random_genotype};
use crate::error::{Error, Result};
use crate::proxy::data::Sample;
use crate::proxy::model::Predictor;
use crate::supernet::{DagSpec, Genotype, SuperNet};

/// Scores a genotype; higher is better.
pub trait Fitness {
    fn fitness(&self, g: &Genotype) -> Result<f64>;
}

impl<F: Fn(&Genotype) -> Result<f64>> Fitness for F {
    fn fitness(&self, g: &Genotype) -> Result<f64> {
        self(g)
    }
}

/// Negative mean validation loss of a sub-net with inherited super-net
/// weights. Non-finite losses score `-inf`.
pub fn evaluate(net: &SuperNet, g: &Genotype, valset: &[Sample], apply_gamma: bool) -> Result<f64> {
    let loss = net.subnet(g, apply_gamma)?.eval_loss(valset)?;
    Ok(if loss.is_finite() {
        -loss
    } else {
        f64::NEG_INFINITY
    })
}

/// [`evaluate`] bound to a frozen super-net and validation set.
#[derive(Clone, Copy, Debug)]
pub struct SupernetFitness<'a> {
    pub net: &'a SuperNet,
    pub valset: &'a [Sample],
    pub apply_gamma: bool,
}

impl Fitness for SupernetFitness<'_> {
    fn fitness(&self, g: &Genotype) -> Result<f64> {
        evaluate(self.net, g, self.valset, self.apply_gamma)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoredGenotype {
    pub genotype: Genotype,
    #[serde(with = "fitness_json")]
    pub fitness: f64,
    /// Wall time of the evaluation; zero for memo hits. Not serialized.
    #[serde(skip)]
    pub eval_cost: Duration,
}

/// Equality ignores `eval_cost`.
impl PartialEq for ScoredGenotype {
    fn eq(&self, other: &Self) -> bool {
        self.genotype == other.genotype && self.fitness.to_bits() == other.fitness.to_bits()
    }
}

/// JSON has no infinities; a failed evaluation (`-inf`) is stored as null.
mod fitness_json {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(f: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if f.is_finite() {
            s.serialize_f64(*f)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }

    pub mod seq {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for f in v {
                seq.serialize_element(&f.is_finite().then_some(*f))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> std::result::Result<Vec<f64>, D::Error> {
            let v = Vec::<Option<f64>>::deserialize(d)?;
            Ok(v.into_iter()
                .map(|f| f.unwrap_or(f64::NEG_INFINITY))
                .collect())
        }
    }
}

/// Descending fitness, ties by ascending genotype.
pub fn rank_order(a: &ScoredGenotype, b: &ScoredGenotype) -> Ordering {
    b.fitness
        .total_cmp(&a.fitness)
        .then_with(|| a.genotype.cmp(&b.genotype))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Init,
    Mutation,
    Crossover,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Init => "init",
            Origin::Mutation => "mutation",
            Origin::Crossover => "crossover",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchLogRow {
    pub generation: usize,
    pub child_id: usize,
    pub origin: Origin,
    #[serde(with = "fitness_json")]
    pub fitness: f64,
    #[serde(with = "fitness_json")]
    pub best_so_far: f64,
}

pub fn write_search_log(rows: &[SearchLogRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "generation,child_id,origin,fitness,best_so_far")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.10e},{:.10e}",
            r.generation,
            r.child_id,
            r.origin.as_str(),
            r.fitness,
            r.best_so_far
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EaConfig {
    pub population: usize,
    pub generations: usize,
    pub top_k: usize,
    pub p_mutation: f64,
    /// Children per generation produced by mutation; the rest by crossover.
    pub mutation_children: usize,
}

impl Default for EaConfig {
    fn default() -> Self {
        EaConfig {
            population: 50,
            generations: 12,
            top_k: 10,
            p_mutation: 0.1,
            mutation_children: 25,
        }
    }
}

/// Full evolutionary search state; serializable so a search can resume.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchState {
    pub config: EaConfig,
    pub spec: DagSpec,
    pub generation: usize,
    /// Members of the latest generation.
    pub population: Vec<ScoredGenotype>,
    /// Best `top_k` distinct genotypes ever scored, in [`rank_order`].
    pub pool: Vec<ScoredGenotype>,
    /// Best fitness in the pool after each generation (index 0 = init).
    #[serde(with = "fitness_json::seq")]
    pub best_trace: Vec<f64>,
    pub history: Vec<SearchLogRow>,
    memo: Vec<ScoredGenotype>,
    rng: ChaCha8Rng,
    #[serde(skip)]
    memo_index: HashMap<Genotype, usize>,
}

impl SearchState {
    fn empty(spec: DagSpec, config: EaConfig, seed: u64) -> Self {
        SearchState {
            config,
            spec,
            generation: 0,
            population: Vec::new(),
            pool: Vec::new(),
            best_trace: Vec::new(),
            history: Vec::new(),
            memo: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            memo_index: HashMap::new(),
        }
    }

    /// Samples and scores the initial population.
    pub fn init(
        spec: DagSpec,
        config: EaConfig,
        seed: u64,
        fitness: &impl Fitness,
    ) -> Result<Self> {
        if config.population == 0 || config.top_k == 0 {
            return Err(Error::Config(
                "population and top_k must be positive".into(),
            ));
        }
        let mut state = Self::empty(spec, config, seed);
        let genotypes = (0..config.population)
            .map(|_| random_genotype(&mut state.rng, &spec))
            .collect::<Result<Vec<_>>>()?;
        let children = genotypes.into_iter().map(|g| (g, Origin::Init)).collect();
        state.absorb(children, fitness)?;
        Ok(state)
    }

    pub fn best(&self) -> Option<&ScoredGenotype> {
        self.pool.first()
    }

    /// Number of distinct genotypes evaluated so far.
    pub fn unique_evaluations(&self) -> usize {
        self.memo.len()
    }

    pub fn is_done(&self) -> bool {
        self.generation >= self.config.generations
    }

    fn score(&mut self, g: &Genotype, fitness: &impl Fitness) -> Result<ScoredGenotype> {
        if self.memo_index.len() != self.memo.len() {
            self.memo_index = self
                .memo
                .iter()
                .enumerate()
                .map(|(i, m)| (m.genotype.clone(), i))
                .collect();
        }
        if let Some(&i) = self.memo_index.get(g) {
            return Ok(ScoredGenotype {
                genotype: g.clone(),
                fitness: self.memo[i].fitness,
                eval_cost: Duration::ZERO,
            });
        }
        debug_assert!(coarse_filter(g));
        let start = Instant::now();
        let mut f = fitness.fitness(g)?;
        if !f.is_finite() {
            f = f64::NEG_INFINITY;
        }
        self.memo_index.insert(g.clone(), self.memo.len());
        let scored = ScoredGenotype {
            genotype: g.clone(),
            fitness: f,
            eval_cost: start.elapsed(),
        };
        self.memo.push(scored.clone());
        Ok(scored)
    }

    fn absorb(&mut self, children: Vec<(Genotype, Origin)>, fitness: &impl Fitness) -> Result<()> {
        let mut best = self.pool.first().map_or(f64::NEG_INFINITY, |s| s.fitness);
        let mut scored = Vec::with_capacity(children.len());
        for (child_id, (g, origin)) in children.into_iter().enumerate() {
            let s = self.score(&g, fitness)?;
            best = best.max(s.fitness);
            self.history.push(SearchLogRow {
                generation: self.generation,
                child_id,
                origin,
                fitness: s.fitness,
                best_so_far: best,
            });
            scored.push(s);
        }
        for s in &scored {
            if !self.pool.iter().any(|p| p.genotype == s.genotype) {
                self.pool.push(s.clone());
            }
        }
        self.pool.sort_by(rank_order);
        self.pool.truncate(self.config.top_k);
        self.population = scored;
        self.best_trace.push(self.pool[0].fitness);
        Ok(())
    }

    /// Breeds and scores one generation from the current pool.
    pub fn step(&mut self, fitness: &impl Fitness) -> Result<()> {
        let n_mut = self.config.mutation_children.min(self.config.population);
        let mut children = Vec::with_capacity(self.config.population);
        for i in 0..self.config.population {
            let child = if i < n_mut || self.pool.len() < 2 {
                let parent = self.pool.choose(&mut self.rng).expect("pool non-empty");
                (
                    mutate(
                        &parent.genotype,
                        &mut self.rng,
                        self.config.p_mutation,
                        &self.spec,
                    ),
                    Origin::Mutation,
                )
            } else {
                let picks: Vec<&ScoredGenotype> =
                    self.pool.choose_multiple(&mut self.rng, 2).collect();
                (
                    crossover(&picks[0].genotype, &picks[1].genotype, &mut self.rng)?,
                    Origin::Crossover,
                )
            };
            children.push(child);
        }
        self.generation += 1;
        self.absorb(children, fitness)
    }

    pub fn run(&mut self, fitness: &impl Fitness) -> Result<()> {
        while !self.is_done() {
            self.step(fitness)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Runs the full evolutionary search and returns the best genotype found.
pub fn ea_search(
    spec: DagSpec,
    fitness: &impl Fitness,
    config: EaConfig,
    seed: u64,
) -> Result<(ScoredGenotype, SearchState)> {
    let mut state = SearchState::init(spec, config, seed, fitness)?;
    state.run(fitness)?;
    let best = state.best().cloned().expect("non-empty pool");
    Ok((best, state))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSearchResult {
    pub best: ScoredGenotype,
    /// Every scored draw, in draw order.
    pub scores: Vec<ScoredGenotype>,
}

impl RandomSearchResult {
    pub fn average_fitness(&self) -> f64 {
        self.scores.iter().map(|s| s.fitness).sum::<f64>() / self.scores.len() as f64
    }
}

/// Scores `budget` filtered random genotypes and keeps the best.
pub fn random_search(
    spec: DagSpec,
    fitness: &impl Fitness,
    budget: usize,
    rng: &mut impl Rng,
) -> Result<RandomSearchResult> {
    if budget == 0 {
        return Err(Error::Config(
            "random search budget must be at least 1".into(),
        ));
    }
    let mut memo: HashMap<Genotype, f64> = HashMap::new();
    let mut scores = Vec::with_capacity(budget);
    for _ in 0..budget {
        let g = random_genotype(rng, &spec)?;
        let start = Instant::now();
        let f = match memo.get(&g) {
            Some(&f) => f,
            None => {
                let f = fitness.fitness(&g)?;
                let f = if f.is_finite() { f } else { f64::NEG_INFINITY };
                memo.insert(g.clone(), f);
                f
            }
        };
        scores.push(ScoredGenotype {
            genotype: g,
            fitness: f,
            eval_cost: start.elapsed(),
        });
    }
    let best = scores
        .iter()
        .min_by(|a, b| rank_order(a, b))
        .cloned()
        .expect("budget >= 1");
    Ok(RandomSearchResult { best, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::PathKind;

    /// Deterministic synthetic landscape: rewards fusing_splitting on early
    /// edges and top_down elsewhere.
    fn landscape(g: &Genotype) -> Result<f64> {
        Ok(g.kinds()
            .iter()
            .enumerate()
            .map(|(i, k)| match (i % 3, k) {
                (0, PathKind::FusingSplitting) => 3.0,
                (_, PathKind::TopDown) => 1.0,
                (_, PathKind::SkipConnect) => 0.5,
                _ => 0.0,
            })
            .sum())
    }

    #[test]
    fn zero_generations_returns_best_initial() {
        let cfg = EaConfig {
            generations: 0,
            ..EaConfig::default()
        };
        let (best, state) = ea_search(DagSpec::dense(3), &landscape, cfg, 1).unwrap();
        let init_best = state
            .population
            .iter()
            .min_by(|a, b| rank_order(a, b))
            .unwrap();
        assert_eq!(&best, init_best);
        assert_eq!(state.best_trace.len(), 1);
    }

    #[test]
    fn elitism_and_filtering() {
        let (_, state) = ea_search(DagSpec::dense(5), &landscape, EaConfig::default(), 2).unwrap();
        assert_eq!(state.best_trace.len(), 13);
        assert!(state.best_trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(state.pool.len() <= 10);
        assert!(state
            .pool
            .windows(2)
            .all(|w| rank_order(&w[0], &w[1]) != Ordering::Greater));
        assert!(state.memo.iter().all(|m| coarse_filter(&m.genotype)));
        assert_eq!(state.history.len(), 50 * 13);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let spec = DagSpec::dense(3);
        let (_, full) = ea_search(spec, &landscape, EaConfig::default(), 3).unwrap();

        let mut partial = SearchState::init(spec, EaConfig::default(), 3, &landscape).unwrap();
        for _ in 0..5 {
            partial.step(&landscape).unwrap();
        }
        let mut resumed = SearchState::from_json(&partial.to_json().unwrap()).unwrap();
        resumed.run(&landscape).unwrap();
        assert_eq!(resumed.pool, full.pool);
        assert_eq!(resumed.history, full.history);
    }

    #[test]
    fn failed_evaluations_survive_a_json_round_trip() {
        let spec = DagSpec::dense(2);
        let config = EaConfig {
            population: 8,
            generations: 3,
            top_k: 10,
            p_mutation: 0.2,
            mutation_children: 4,
        };
        let flaky = |g: &Genotype| -> Result<f64> {
            let f = landscape(g)?;
            Ok(if g.kinds()[0] == PathKind::TopDown {
                f64::NAN
            } else {
                f
            })
        };
        let mut state = SearchState::init(spec, config, 1, &flaky).unwrap();
        assert!(state.memo.iter().any(|m| m.fitness == f64::NEG_INFINITY));
        let json = state.to_json().unwrap();
        let mut resumed = SearchState::from_json(&json).unwrap();
        assert_eq!(resumed.to_json().unwrap(), json);
        assert_eq!(resumed.pool, state.pool);
        state.run(&flaky).unwrap();
        resumed.run(&flaky).unwrap();
        assert_eq!(resumed.history, state.history);
    }

    #[test]
    fn random_search_budget_one_and_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_search(DagSpec::dense(3), &landscape, 1, &mut rng).unwrap();
        assert_eq!(r.scores.len(), 1);
        assert_eq!(r.best, r.scores[0]);

        let r = random_search(DagSpec::dense(3), &landscape, 40, &mut rng).unwrap();
        assert!(r.best.fitness >= r.average_fitness());
        assert!(random_search(DagSpec::dense(3), &landscape, 0, &mut rng).is_err());
    }

    #[test]
    fn ties_break_lexicographically() {
        let flat = |_: &Genotype| Ok(1.0);
        let (best, state) = ea_search(DagSpec::dense(2), &flat, EaConfig::default(), 9).unwrap();
        let min = state.memo.iter().map(|m| &m.genotype).min().unwrap();
        assert_eq!(&best.genotype, min);
    }

    #[test]
    fn search_log_csv_header() {
        let (_, state) = ea_search(
            DagSpec::dense(2),
            &landscape,
            EaConfig {
                generations: 1,
                ..EaConfig::default()
            },
            0,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_search_log(&state.history, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("generation,child_id,origin,fitness,best_so_far")
        );
        assert!(lines.next().unwrap().starts_with("0,0,init,"));
        assert_eq!(text.lines().count(), 101);
    }
}
