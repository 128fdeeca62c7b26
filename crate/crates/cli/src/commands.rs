use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use audioshield::attack::{generate_corpus, read_manifest, ManifestRow, MANIFEST_FILE};
use audioshield::audio::{load_dataset, read_wav, AudioClip, LabeledClip};
use audioshield::classifier::{load_model, save_model, train, Classifier, KwModel};
use audioshield::detection::{fit_detector, probe_with, EnsembleVerdict, Scheme, VerdictRecord};
use audioshield::eval::{
    conditional_accuracy_from, freq_diff_ttest, heat_map, holdout_by_label, score, split_dataset, ConditionalAccuracy,
    DetectionReport, EvalError, FreqAnalysis,
};
use audioshield::rng::{self, domain};
use audioshield::synth::{write_dataset, SynthConfig};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub const TRAIN_LOG: &str = "train_log.json";
pub const REPORTS_FILE: &str = "reports.json";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const ANALYSIS_FILE: &str = "analysis.json";

pub fn verdict_file(scheme: Scheme) -> String {
    format!("verdicts_{scheme}.jsonl")
}

pub fn detector_file(scheme: Scheme) -> String {
    format!("detector_{scheme}.json")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// The dataset and its classifier holdout split.
struct Corpus {
    clips: Vec<LabeledClip>,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl Corpus {
    fn load(config: &RunConfig) -> Result<Self, CliError> {
        config.require_dataset()?;
        let clips = load_dataset(&config.dataset_root, config.classes.as_deref())?;
        if clips.is_empty() {
            return Err(CliError::User(format!("no WAV files under {}", config.dataset_root.display())));
        }
        let labels: Vec<&str> = clips.iter().map(|c| c.label.as_str()).collect();
        let (train, test) = holdout_by_label(&labels, config.test_fraction, config.seed)?;
        Ok(Self { clips, train, test })
    }

    fn subset(&self, idx: &[usize]) -> Vec<LabeledClip> {
        idx.iter().map(|&i| self.clips[i].clone()).collect()
    }
}

fn open_model(config: &RunConfig) -> Result<KwModel, CliError> {
    let path = config.model_file();
    if !path.is_file() {
        return Err(CliError::User(format!("model not found: {} (run train first)", path.display())));
    }
    Ok(load_model(path)?)
}

fn accuracy_on(model: &KwModel, clips: &[LabeledClip]) -> Result<Option<f64>, CliError> {
    if clips.is_empty() {
        return Ok(None);
    }
    let correct: Vec<bool> =
        clips.par_iter().map(|c| model.predict(&c.clip).map(|p| p.label() == c.label)).collect::<Result<_, _>>()?;
    Ok(Some(correct.iter().filter(|&&c| c).count() as f64 / clips.len() as f64))
}

#[derive(Serialize)]
struct TrainLog {
    seed: u64,
    classes: Vec<String>,
    train_clips: usize,
    test_clips: usize,
    train_accuracy: f64,
    validation_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
}

pub fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    let corpus = Corpus::load(config)?;
    config.write_resolved("train")?;
    let train_set = corpus.subset(&corpus.train);
    let test_set = corpus.subset(&corpus.test);
    log::info!("training on {} clips, {} held out", train_set.len(), test_set.len());
    let outcome = train(&train_set, &config.train, config.seed)?;
    let test_accuracy = accuracy_on(&outcome.model, &test_set)?;
    let path = config.model_file();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    save_model(&outcome.model, &path)?;
    let log = TrainLog {
        seed: config.seed,
        classes: outcome.model.class_names().to_vec(),
        train_clips: train_set.len(),
        test_clips: test_set.len(),
        train_accuracy: outcome.train_accuracy,
        validation_accuracy: outcome.validation_accuracy,
        test_accuracy,
    };
    write_json(&config.output_dir.join(TRAIN_LOG), &log)?;
    println!("train accuracy: {:.4}", log.train_accuracy);
    if let Some(v) = log.validation_accuracy {
        println!("validation accuracy: {v:.4}");
    }
    if let Some(t) = log.test_accuracy {
        println!("test accuracy: {t:.4}");
    }
    println!("model written to {}", path.display());
    Ok(())
}

pub fn cmd_attack(config: &RunConfig) -> Result<(), CliError> {
    let corpus = Corpus::load(config)?;
    let model = open_model(config)?;
    config.write_resolved("attack-gen")?;
    let sources = corpus.subset(&corpus.test);
    let entries = generate_corpus(&sources, &model, &config.attack, config.per_pair, Some(&config.output_dir))?;
    let ok = entries.iter().filter(|e| e.row.success).count();
    println!("{ok} of {} attacks succeeded; manifest at {}", entries.len(), config.output_dir.join(MANIFEST_FILE).display());
    Ok(())
}

fn read_rows(config: &RunConfig) -> Result<Vec<ManifestRow>, CliError> {
    let path = config.output_dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(CliError::User(format!("manifest not found: {} (run attack-gen first)", path.display())));
    }
    Ok(read_manifest(path)?)
}

/// A clip entering detection, with ground truth.
struct Item {
    name: String,
    clip: AudioClip,
    adversarial: bool,
    source_label: String,
    target_label: Option<String>,
}

/// Successful adversarial examples and a matching draw of held-out benign clips.
fn detection_items(config: &RunConfig) -> Result<(Vec<Item>, Vec<Item>), CliError> {
    let corpus = Corpus::load(config)?;
    let rows = read_rows(config)?;
    let adversarial: Vec<Item> = rows
        .iter()
        .filter(|r| r.success)
        .map(|r| {
            Ok(Item {
                name: r.adversarial_path.clone(),
                clip: read_wav(config.output_dir.join(&r.adversarial_path))?,
                adversarial: true,
                source_label: r.source_label.clone(),
                target_label: Some(r.target_label.clone()),
            })
        })
        .collect::<Result<_, CliError>>()?;
    let pool = &corpus.test;
    let n = config.benign_count.unwrap_or(adversarial.len()).min(pool.len());
    let mut picks: Vec<usize> =
        sample(&mut rng::stream(config.seed, domain::BENIGN, 0, 0), pool.len(), n).into_iter().map(|k| pool[k]).collect();
    picks.sort_unstable();
    let benign = picks
        .into_iter()
        .map(|i| {
            let c = &corpus.clips[i];
            Item {
                name: c.path.to_string_lossy().into_owned(),
                clip: c.clip.clone(),
                adversarial: false,
                source_label: c.label.clone(),
                target_label: None,
            }
        })
        .collect();
    Ok((adversarial, benign))
}

fn probe_all(config: &RunConfig, model: &KwModel, items: &[&Item]) -> Result<Vec<EnsembleVerdict>, CliError> {
    Ok(items
        .par_iter()
        .map(|it| probe_with(model, &it.clip, &config.ensemble, &config.detection))
        .collect::<Result<_, _>>()?)
}

/// Probes the detection split and writes one verdict file per scheme.
pub fn cmd_detect(config: &RunConfig, only: Option<Scheme>) -> Result<(), CliError> {
    let schemes: Vec<Scheme> = match only {
        Some(s) => vec![s],
        None => config.schemes.clone(),
    };
    let model = open_model(config)?;
    let (adversarial, benign) = detection_items(config)?;
    if adversarial.is_empty() || benign.is_empty() {
        return Err(CliError::User("detection needs at least one adversarial and one benign clip".into()));
    }
    let split = split_dataset(adversarial.len(), benign.len(), config.split_ratio, config.seed)?;
    let needs_training = schemes.iter().any(|s| s.requires_training());
    if needs_training && (split.train_adversarial.is_empty() || split.train_benign.is_empty()) {
        let s = schemes.iter().find(|s| s.requires_training()).expect("checked above");
        return Err(CliError::User(format!("scheme requires training data: {s} (raise split_ratio)")));
    }
    config.write_resolved("detect")?;

    let pick = |adv: &[usize], ben: &[usize]| -> Vec<&Item> {
        adv.iter().map(|&i| &adversarial[i]).chain(ben.iter().map(|&i| &benign[i])).collect()
    };
    let test_items = pick(&split.test_adversarial, &split.test_benign);
    let test_verdicts = probe_all(config, &model, &test_items)?;
    let training: Vec<(EnsembleVerdict, bool)> = if needs_training {
        let items = pick(&split.train_adversarial, &split.train_benign);
        probe_all(config, &model, &items)?.into_iter().zip(items.iter().map(|it| it.adversarial)).collect()
    } else {
        Vec::new()
    };

    for scheme in schemes {
        let detector = fit_detector(scheme, &training, &config.detection, &config.learners, config.seed)
            .map_err(|e| CliError::User(format!("scheme requires training data: {scheme}: {e}")))?;
        write_json(&config.output_dir.join(detector_file(scheme)), &detector)?;
        let mut out = String::new();
        let mut flagged = 0;
        for (it, v) in test_items.iter().zip(&test_verdicts) {
            let decision = detector.decide(v, &config.detection)?;
            flagged += decision.adversarial as usize;
            let mut rec = VerdictRecord::new(it.name.clone(), v, scheme, decision);
            rec.actual_adversarial = Some(it.adversarial);
            rec.source_label = Some(it.source_label.clone());
            rec.target_label = it.target_label.clone();
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        fs::write(config.output_dir.join(verdict_file(scheme)), out)?;
        println!("{scheme}: {flagged} of {} test clips flagged", test_items.len());
    }
    Ok(())
}

fn read_verdicts(config: &RunConfig, scheme: Scheme) -> Result<Vec<VerdictRecord>, CliError> {
    let path = config.output_dir.join(verdict_file(scheme));
    let file = fs::File::open(&path)
        .map_err(|_| CliError::User(format!("verdict file not found: {} (run detect first)", path.display())))?;
    BufReader::new(file)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

fn labelled(records: &[VerdictRecord], path: &Path) -> Result<Vec<(bool, bool)>, CliError> {
    records
        .iter()
        .map(|r| {
            r.actual_adversarial
                .map(|a| (r.adversarial, a))
                .ok_or_else(|| CliError::User(format!("{}: verdict for {} has no ground truth", path.display(), r.clip)))
        })
        .collect()
}

#[derive(Serialize)]
struct Analysis {
    scheme: Scheme,
    /// Centroid-shift comparison of detected vs undetected adversarial examples.
    frequency: Option<FreqAnalysis>,
    /// Classifier accuracy on benign test clips, split by the detector's flag.
    benign_accuracy: ConditionalAccuracy,
    notes: Vec<String>,
}

fn analysis(config: &RunConfig, model: &KwModel) -> Result<Analysis, CliError> {
    let scheme = config.analysis_scheme;
    let records = read_verdicts(config, scheme)?;
    let rows = read_rows(config)?;
    let sources: HashMap<&str, &str> =
        rows.iter().map(|r| (r.adversarial_path.as_str(), r.source_path.as_str())).collect();
    let mut detected = Vec::new();
    let mut undetected = Vec::new();
    let mut benign = Vec::new();
    for r in &records {
        match r.actual_adversarial {
            Some(true) => {
                let src = sources
                    .get(r.clip.as_str())
                    .ok_or_else(|| CliError::User(format!("{} is not in the manifest", r.clip)))?;
                let pair = (read_wav(config.output_dir.join(&r.clip))?, read_wav(src)?);
                if r.adversarial {
                    detected.push(pair);
                } else {
                    undetected.push(pair);
                }
            }
            Some(false) => benign.push(r),
            None => return Err(CliError::User(format!("verdict for {} has no ground truth", r.clip))),
        }
    }
    let mut notes = Vec::new();
    let frequency = match freq_diff_ttest(&detected, &undetected, config.welch) {
        Ok(f) => Some(f),
        Err(EvalError::TooFewSamples(d, u)) => {
            notes.push(format!("frequency test skipped: {d} detected and {u} undetected examples (need 2 each)"));
            None
        }
        Err(e) => return Err(e.into()),
    };
    let outcomes: Vec<(bool, bool)> = benign
        .par_iter()
        .map(|r| {
            let clip = read_wav(PathBuf::from(&r.clip))?;
            let predicted = model.predict(&clip)?;
            Ok((Some(predicted.label()) == r.source_label.as_deref(), r.adversarial))
        })
        .collect::<Result<_, CliError>>()?;
    Ok(Analysis { scheme, frequency, benign_accuracy: conditional_accuracy_from(&outcomes), notes })
}

pub fn cmd_analyze(config: &RunConfig) -> Result<(), CliError> {
    config.require_dataset()?;
    let model = open_model(config)?;
    let a = analysis(config, &model)?;
    config.write_resolved("analyze")?;
    write_json(&config.output_dir.join(ANALYSIS_FILE), &a)?;
    print_analysis(&a);
    Ok(())
}

fn print_analysis(a: &Analysis) {
    if let Some(f) = &a.frequency {
        println!(
            "centroid shift: detected {:.1} Hz (n={}), undetected {:.1} Hz (n={}), t={:.3}, p={:.4}",
            f.detected.mean, f.detected.n, f.undetected.mean, f.undetected.n, f.test.t, f.test.p_one_tailed
        );
    }
    for n in &a.notes {
        println!("{n}");
    }
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.1}%", 100.0 * x));
    println!(
        "benign accuracy: flagged {} (n={}), unflagged {} (n={})",
        pct(a.benign_accuracy.accuracy_flagged),
        a.benign_accuracy.n_flagged,
        pct(a.benign_accuracy.accuracy_unflagged),
        a.benign_accuracy.n_unflagged
    );
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<(), CliError> {
    config.require_dataset()?;
    let model = open_model(config)?;
    let mut reports: Vec<DetectionReport> = Vec::new();
    for &scheme in &config.schemes {
        let path = config.output_dir.join(verdict_file(scheme));
        let records = read_verdicts(config, scheme)?;
        reports.push(score(&labelled(&records, &path)?, scheme.name(), "test"));
    }
    let records = read_verdicts(config, config.analysis_scheme)?;
    let rows: Vec<(&str, &str, bool)> = records
        .iter()
        .filter(|r| r.actual_adversarial == Some(true))
        .filter_map(|r| Some((r.source_label.as_deref()?, r.target_label.as_deref()?, r.adversarial)))
        .collect();
    let heat = heat_map(rows, model.class_names());
    let a = analysis(config, &model)?;
    config.write_resolved("evaluate")?;
    write_json(&config.output_dir.join(REPORTS_FILE), &reports)?;
    fs::write(config.output_dir.join(HEATMAP_FILE), heat.to_csv())?;
    write_json(&config.output_dir.join(ANALYSIS_FILE), &a)?;

    let mut stdout = std::io::stdout().lock();
    let fmt = |v: Option<f64>| v.map_or("   n/a".to_string(), |x| format!("{x:6.3}"));
    writeln!(stdout, "{:<16} {:>6} {:>6} {:>6}  tp/fp/tn/fn", "scheme", "prec", "recall", "f1")?;
    for r in &reports {
        writeln!(
            stdout,
            "{:<16} {} {} {}  {}/{}/{}/{}",
            r.scheme,
            fmt(r.precision),
            fmt(r.recall),
            fmt(r.f1),
            r.tp,
            r.fp,
            r.tn,
            r.fn_
        )?;
    }
    drop(stdout);
    print_analysis(&a);
    Ok(())
}

pub fn cmd_synth(out: &Path, config: &SynthConfig) -> Result<(), CliError> {
    if config.classes.len() < 2 || config.clips_per_class == 0 {
        return Err(CliError::User("synth needs at least two classes and one clip per class".into()));
    }
    let clips = write_dataset(config, out)?;
    println!("wrote {} clips under {}", clips.len(), out.display());
    Ok(())
}
