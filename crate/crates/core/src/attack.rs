//! Gradient-free genetic attack toward a chosen target label, and corpus
//! generation over every ordered source/target pair.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{write_wav, AudioClip, AudioError, LabeledClip};
use crate::classifier::{Classifier, ClassifierError};
use crate::rng::{self, domain};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("target {0:?} is not a model class")]
    UnknownTarget(String),
    #[error("dataset label {0:?} is not a model class")]
    UnknownLabel(String),
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("attack source must be mono")]
    NotMono,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("manifest error: {0}")]
    Manifest(#[from] csv::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub population_size: usize,
    pub max_iterations: usize,
    /// Per-sample perturbation bound, as a fraction of full scale.
    pub epsilon: f64,
    pub mutation_prob: f64,
    /// `None` means `epsilon / 2`.
    pub mutation_std: Option<f64>,
    pub elite_count: usize,
    pub seed: u64,
    /// Evaluate and breed each generation on the rayon pool.
    pub parallel: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            population_size: 20,
            max_iterations: 500,
            epsilon: 0.05,
            mutation_prob: 0.005,
            mutation_std: None,
            elite_count: 2,
            seed: 0,
            parallel: true,
        }
    }
}

impl AttackConfig {
    /// `elite_count == population_size` is accepted: the population then
    /// never changes after initialization.
    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: &str| Err(AttackError::InvalidConfig(m.into()));
        if self.population_size < 2 {
            return bad("population_size must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return bad("mutation_prob must be in [0, 1]");
        }
        if self.mutation_std.is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
            return bad("mutation_std must be finite and non-negative");
        }
        if self.elite_count > self.population_size {
            return bad("elite_count must not exceed population_size");
        }
        Ok(())
    }

    pub fn effective_mutation_std(&self) -> f64 {
        self.mutation_std.unwrap_or(self.epsilon / 2.0)
    }
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial_clip: AudioClip,
    pub success: bool,
    /// Generations bred after the initial population.
    pub iterations_used: usize,
    pub final_target_prob: f64,
    /// Label the model assigns to the unmodified source.
    pub source_label: String,
    pub target_label: String,
    /// Best fitness of each evaluated generation.
    pub fitness_history: Vec<f64>,
}

struct Scored {
    fitness: f64,
    hit: bool,
}

fn evaluate<C: Classifier + ?Sized>(
    model: &C,
    population: &[Vec<f64>],
    known: &[Option<Scored>],
    rate: u32,
    target: usize,
    parallel: bool,
) -> Result<Vec<Scored>, ClassifierError> {
    let one = |(cand, k): (&Vec<f64>, &Option<Scored>)| -> Result<Scored, ClassifierError> {
        if let Some(s) = k {
            return Ok(Scored { fitness: s.fitness, hit: s.hit });
        }
        let p = model.predict(&AudioClip::mono(cand.clone(), rate))?;
        Ok(Scored { fitness: p.probs()[target], hit: p.argmax() == target })
    };
    if parallel {
        population.par_iter().zip(known).map(one).collect()
    } else {
        population.iter().zip(known).map(one).collect()
    }
}

/// Index drawn with probability proportional to fitness; uniform when all
/// fitness values are zero.
fn roulette(fitness: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = fitness.iter().sum();
    if !(total > 0.0) {
        return rng.random_range(0..fitness.len());
    }
    let mut x = rng.random::<f64>() * total;
    for (i, f) in fitness.iter().enumerate() {
        if x < *f {
            return i;
        }
        x -= f;
    }
    fitness.iter().rposition(|&f| f > 0.0).unwrap_or(fitness.len() - 1)
}

fn clamp_ball(v: f64, src: f64, eps: f64) -> f64 {
    v.clamp(src - eps, src + eps).clamp(-1.0, 1.0)
}

/// Genetic search within the ε-ball around `source` for a clip the model
/// labels `target`. Stops at the first generation containing a hit.
pub fn genetic_attack<C: Classifier + ?Sized>(
    source: &AudioClip,
    target: &str,
    model: &C,
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    attack_keyed(source, target, model, config, 0)
}

/// As [`genetic_attack`], drawing randomness from stream key `key` so that
/// independent attacks under one seed do not share noise.
pub fn attack_keyed<C: Classifier + ?Sized>(
    source: &AudioClip,
    target: &str,
    model: &C,
    config: &AttackConfig,
    key: u64,
) -> Result<AttackResult, AttackError> {
    config.validate()?;
    if !source.is_mono() {
        return Err(AttackError::NotMono);
    }
    let t = model.class_index(target).ok_or_else(|| AttackError::UnknownTarget(target.into()))?;
    let source_label = model.predict(source)?.label().to_string();
    let src = source.samples();
    let rate = source.sample_rate();
    let eps = config.epsilon;
    let pop_n = config.population_size;
    let seed = config.seed;
    let gen_rng = |generation: usize, i: usize| rng::stream(seed, domain::ATTACK, key, ((generation as u64) << 32) | i as u64);

    let init = |i: usize| -> Vec<f64> {
        let mut r = gen_rng(0, i);
        src.iter().map(|&s| if eps > 0.0 { clamp_ball(s + r.random_range(-eps..=eps), s, eps) } else { s }).collect()
    };
    let mut population: Vec<Vec<f64>> =
        if config.parallel { (0..pop_n).into_par_iter().map(init).collect() } else { (0..pop_n).map(init).collect() };
    let mut known: Vec<Option<Scored>> = (0..pop_n).map(|_| None).collect();
    let normal = Normal::new(0.0, config.effective_mutation_std()).expect("validated std");
    let mut history = Vec::new();

    for generation in 0..=config.max_iterations {
        let scores = evaluate(model, &population, &known, rate, t, config.parallel)?;
        // Stable sort: equal fitness keeps the lower index first.
        let mut order: Vec<usize> = (0..pop_n).collect();
        order.sort_by(|&a, &b| scores[b].fitness.total_cmp(&scores[a].fitness));
        history.push(scores[order[0]].fitness);

        let hit = order.iter().copied().find(|&i| scores[i].hit);
        if hit.is_some() || generation == config.max_iterations {
            let best = hit.unwrap_or(order[0]);
            return Ok(AttackResult {
                adversarial_clip: AudioClip::mono(population.swap_remove(best), rate),
                success: hit.is_some(),
                iterations_used: generation,
                final_target_prob: scores[best].fitness,
                source_label,
                target_label: target.to_string(),
                fitness_history: history,
            });
        }

        let fitness: Vec<f64> = scores.iter().map(|s| s.fitness).collect();
        let next_gen = generation + 1;
        let breed = |child: usize| -> Vec<f64> {
            let mut r = gen_rng(next_gen, child);
            let a = &population[roulette(&fitness, &mut r)];
            let b = &population[roulette(&fitness, &mut r)];
            (0..src.len())
                .map(|n| {
                    let mut v = if r.random::<bool>() { a[n] } else { b[n] };
                    if r.random::<f64>() < config.mutation_prob {
                        v += normal.sample(&mut r);
                    }
                    clamp_ball(v, src[n], eps)
                })
                .collect()
        };
        let children: Vec<Vec<f64>> = if config.parallel {
            (config.elite_count..pop_n).into_par_iter().map(breed).collect()
        } else {
            (config.elite_count..pop_n).map(breed).collect()
        };
        let mut next = Vec::with_capacity(pop_n);
        let mut next_known = Vec::with_capacity(pop_n);
        for &e in &order[..config.elite_count] {
            next.push(population[e].clone());
            next_known.push(Some(Scored { fitness: scores[e].fitness, hit: scores[e].hit }));
        }
        next.extend(children);
        next_known.extend((config.elite_count..pop_n).map(|_| None));
        population = next;
        known = next_known;
    }
    unreachable!("loop returns on its final generation")
}

/// One row of the corpus manifest CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub source_path: String,
    pub source_label: String,
    pub target_label: String,
    pub adversarial_path: String,
    pub success: bool,
    pub iterations: usize,
    pub final_target_prob: f64,
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub row: ManifestRow,
    /// Index of the source clip in the input dataset.
    pub source_index: usize,
    pub adversarial: AudioClip,
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const ADVERSARIAL_DIR: &str = "adversarial";

/// Attacks `per_pair` correctly classified clips of every source label
/// toward every other label. Sources the model already misclassifies are
/// skipped; a pair with too few usable sources is capped and logged.
///
/// With `out_dir`, writes `adversarial/*.wav` and `manifest.csv` there;
/// manifest paths are relative to `out_dir`.
pub fn generate_corpus<C: Classifier + ?Sized>(
    dataset: &[LabeledClip],
    model: &C,
    config: &AttackConfig,
    per_pair: usize,
    out_dir: Option<&Path>,
) -> Result<Vec<CorpusEntry>, AttackError> {
    config.validate()?;
    let classes = model.class_names().to_vec();
    for c in dataset {
        if !classes.contains(&c.label) {
            return Err(AttackError::UnknownLabel(c.label.clone()));
        }
    }
    let mut jobs: Vec<(usize, String, usize)> = Vec::new();
    if per_pair > 0 {
        let correct: Vec<bool> = dataset
            .par_iter()
            .map(|c| model.predict(&c.clip).map(|p| p.label() == c.label))
            .collect::<Result<_, _>>()?;
        let mut pair_id = 0u64;
        for source in &classes {
            let usable: Vec<usize> =
                (0..dataset.len()).filter(|&i| dataset[i].label == *source && correct[i]).collect();
            for target in classes.iter().filter(|t| *t != source) {
                let take = per_pair.min(usable.len());
                if take < per_pair {
                    log::warn!("{source}->{target}: only {take} correctly classified sources for {per_pair} requested");
                }
                let mut r = rng::stream(config.seed, domain::CORPUS, pair_id, 0);
                let mut picks: Vec<usize> = sample(&mut r, usable.len(), take).into_iter().map(|k| usable[k]).collect();
                picks.sort_unstable();
                jobs.extend(picks.into_iter().map(|i| (i, target.clone(), 0)));
                pair_id += 1;
            }
        }
    }
    // Number repeated (source, target) attempts so names stay unique.
    let mut seen = std::collections::HashMap::new();
    for job in &mut jobs {
        let n = seen.entry((dataset[job.0].label.clone(), job.1.clone())).or_insert(0usize);
        job.2 = *n;
        *n += 1;
    }

    let inner = AttackConfig { parallel: false, ..config.clone() };
    let results: Vec<AttackResult> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, (i, target, _))| attack_keyed(&dataset[*i].clip, target, model, &inner, k as u64 + 1))
        .collect::<Result<_, _>>()?;

    let mut entries = Vec::with_capacity(jobs.len());
    for ((i, target, n), result) in jobs.into_iter().zip(results) {
        let source = &dataset[i];
        let rel = PathBuf::from(ADVERSARIAL_DIR).join(format!("{}_to_{}_{:03}.wav", source.label, target, n));
        let row = ManifestRow {
            source_path: source.path.to_string_lossy().into_owned(),
            source_label: source.label.clone(),
            target_label: target,
            adversarial_path: rel.to_string_lossy().into_owned(),
            success: result.success,
            iterations: result.iterations_used,
            final_target_prob: result.final_target_prob,
        };
        entries.push(CorpusEntry { row, source_index: i, adversarial: result.adversarial_clip });
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join(ADVERSARIAL_DIR))?;
        for e in &entries {
            write_wav(&e.adversarial, dir.join(&e.row.adversarial_path))?;
        }
        write_manifest(&entries.iter().map(|e| e.row.clone()).collect::<Vec<_>>(), dir.join(MANIFEST_FILE))?;
    }
    Ok(entries)
}

pub fn write_manifest(rows: &[ManifestRow], path: impl AsRef<Path>) -> Result<(), AttackError> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record([
            "source_path",
            "source_label",
            "target_label",
            "adversarial_path",
            "success",
            "iterations",
            "final_target_prob",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>, AttackError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ProbVector;
    use std::sync::Arc;

    /// Class "a" iff RMS below 0.1, with a smooth probability around it.
    struct Energy {
        names: Arc<[String]>,
    }

    impl Energy {
        fn new() -> Self {
            Self { names: vec!["a".to_string(), "b".to_string()].into() }
        }
    }

    impl Classifier for Energy {
        fn class_names(&self) -> &[String] {
            &self.names
        }
        fn predict(&self, clip: &AudioClip) -> Result<ProbVector, ClassifierError> {
            let pb = 1.0 / (1.0 + (-(clip.rms() - 0.1) * 200.0).exp());
            ProbVector::new(vec![1.0 - pb, pb], self.names.clone())
        }
    }

    fn quiet(len: usize, amp: f64) -> AudioClip {
        // Square wave: RMS equals the amplitude.
        AudioClip::mono((0..len).map(|n| if (n / 20) % 2 == 0 { amp } else { -amp }).collect(), 16000)
    }

    fn max_dev(a: &AudioClip, b: &AudioClip) -> f64 {
        a.samples().iter().zip(b.samples()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn energy_classifier_is_defeated() {
        let src = quiet(4000, 0.05);
        let cfg = AttackConfig { epsilon: 0.2, seed: 3, ..AttackConfig::default() };
        let r = genetic_attack(&src, "b", &Energy::new(), &cfg).unwrap();
        assert!(r.success && r.iterations_used <= 500);
        assert!(max_dev(&src, &r.adversarial_clip) <= 0.2 + 1e-12);
        assert_eq!(r.source_label, "a");
    }

    #[test]
    fn harder_energy_attack_needs_generations() {
        // Uniform noise of half-width 0.06 adds RMS ~0.035: not enough at start.
        let src = quiet(2000, 0.05);
        let cfg = AttackConfig { epsilon: 0.06, mutation_prob: 0.05, seed: 9, ..AttackConfig::default() };
        let r = genetic_attack(&src, "b", &Energy::new(), &cfg).unwrap();
        assert!(r.fitness_history.windows(2).all(|w| w[1] >= w[0]));
        assert!(max_dev(&src, &r.adversarial_clip) <= 0.06 + 1e-12);
    }

    #[test]
    fn target_already_predicted_succeeds_immediately() {
        let src = quiet(1000, 0.05);
        let r = genetic_attack(&src, "a", &Energy::new(), &AttackConfig::default()).unwrap();
        assert!(r.success);
        assert_eq!(r.iterations_used, 0);
    }

    #[test]
    fn zero_epsilon_keeps_source() {
        let src = quiet(1000, 0.05);
        let cfg = AttackConfig { epsilon: 0.0, max_iterations: 5, ..AttackConfig::default() };
        let r = genetic_attack(&src, "b", &Energy::new(), &cfg).unwrap();
        assert!(!r.success);
        assert_eq!(r.adversarial_clip, src);
    }

    #[test]
    fn serial_and_parallel_agree() {
        let src = quiet(2000, 0.05);
        let base = AttackConfig { epsilon: 0.06, max_iterations: 20, seed: 4, ..AttackConfig::default() };
        let a = genetic_attack(&src, "b", &Energy::new(), &AttackConfig { parallel: false, ..base.clone() }).unwrap();
        let b = genetic_attack(&src, "b", &Energy::new(), &AttackConfig { parallel: true, ..base }).unwrap();
        assert_eq!(a.adversarial_clip, b.adversarial_clip);
        assert_eq!(a.fitness_history, b.fitness_history);
    }

    #[test]
    fn full_elitism_freezes_population() {
        let src = quiet(1000, 0.05);
        let cfg = AttackConfig {
            population_size: 4,
            elite_count: 4,
            epsilon: 0.03,
            max_iterations: 10,
            ..AttackConfig::default()
        };
        let r = genetic_attack(&src, "b", &Energy::new(), &cfg).unwrap();
        assert!(!r.success);
        assert!(r.fitness_history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn unknown_target() {
        let r = genetic_attack(&quiet(100, 0.1), "zebra", &Energy::new(), &AttackConfig::default());
        assert!(matches!(r, Err(AttackError::UnknownTarget(_))));
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            AttackConfig { population_size: 1, ..AttackConfig::default() },
            AttackConfig { epsilon: 1.5, ..AttackConfig::default() },
            AttackConfig { elite_count: 21, ..AttackConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    fn dataset() -> Vec<LabeledClip> {
        let mut out = Vec::new();
        for i in 0..3 {
            out.push(LabeledClip { path: format!("a/{i}.wav").into(), label: "a".into(), clip: quiet(800, 0.03 + 0.01 * i as f64) });
            out.push(LabeledClip { path: format!("b/{i}.wav").into(), label: "b".into(), clip: quiet(800, 0.3) });
        }
        out
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let cfg = AttackConfig { epsilon: 0.3, max_iterations: 20, seed: 1, ..AttackConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        let e1 = generate_corpus(&dataset(), &Energy::new(), &cfg, 2, Some(dir.path())).unwrap();
        assert_eq!(e1.len(), 2 * 1 * 2);
        let rows = read_manifest(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(rows.len(), 4);
        let bytes1 = std::fs::read(dir.path().join(&rows[0].adversarial_path)).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        generate_corpus(&dataset(), &Energy::new(), &cfg, 2, Some(dir2.path())).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap(),
            std::fs::read(dir2.path().join(MANIFEST_FILE)).unwrap()
        );
        assert_eq!(bytes1, std::fs::read(dir2.path().join(&rows[0].adversarial_path)).unwrap());
    }

    #[test]
    fn zero_per_pair_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let e = generate_corpus(&dataset(), &Energy::new(), &AttackConfig::default(), 0, Some(dir.path())).unwrap();
        assert!(e.is_empty());
        assert!(read_manifest(dir.path().join(MANIFEST_FILE)).unwrap().is_empty());
    }
}
