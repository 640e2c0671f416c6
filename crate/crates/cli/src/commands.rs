//! The CLI verbs. Each returns its inputs and metrics; [`run`] wraps them
//! into a report next to the artifacts.

use std::time::Instant;

use ecog_core::dataset::fit_channels;
use ecog_core::dataset::Recording;
use ecog_core::dsp::{bootstrap_cohort_stats, psd_welch, table2_csv, BootstrapConfig, CohortStats};
use ecog_core::knn::{evaluate_participants, screening_report, Evaluation, ScreeningReport, VariantResult};
use ecog_core::plot::{line_plot, scatter_plot, Glyph, ScatterGroup, Series};
use ecog_core::rng;
use ecog_core::synth::{generate_cohort, write_cohort, SynthConfig, TRUTH_FILE};
use ecog_nn::io::to_bytes;
use ecog_nn::{fine_tune, hyper_search, load_model, SearchOutcome, TaskSpec, TrainConfig};
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Task};
use crate::error::{CliError, Result};
use crate::pipeline::{self, Enveloped, Participant, CONDITION_DIRS};
use crate::report::{self, Inputs, Outputs, RunReport};

const STREAM_BOOTSTRAP: u64 = 0xB007;
const STREAM_SEARCH: u64 = 0x5EA7;
const STREAM_FINETUNE: u64 = 0xF17E;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Eda,
    UmapKnn,
    Train,
    Finetune,
    Screen,
    Synth,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Eda => "eda",
            Command::UmapKnn => "umap-knn",
            Command::Train => "train",
            Command::Finetune => "finetune",
            Command::Screen => "screen",
            Command::Synth => "synth",
        }
    }
}

/// Validates the config, runs `cmd` and writes its report.
pub fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = Outputs::new(&cfg.out_dir)?;
    let (inputs, metrics) = match cmd {
        Command::Eda => eda(cfg, &mut out)?,
        Command::UmapKnn => umap_knn(cfg, &mut out)?,
        Command::Train => train(cfg, &mut out)?,
        Command::Finetune => finetune(cfg, &mut out)?,
        Command::Screen => screen(cfg, &mut out)?,
        Command::Synth => synth(cfg, &mut out)?,
    };
    let elapsed = start.elapsed().as_secs_f64();
    info!("{} finished in {elapsed:.1} s", cmd.name());
    report::finish(cmd.name(), cfg.to_json(), &inputs, out, metrics, elapsed)
}

fn channel(rec: &Recording, c: usize) -> Vec<f64> {
    rec.voltages().column(c).iter().map(|&v| v as f64).collect()
}

/// Welch PSD averaged over the first `cap` live channels.
fn mean_psd(rec: &Recording, cfg: &ExperimentConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let live: Vec<usize> =
        (0..rec.channel_count().min(cfg.epoching.channel_cap_umap)).filter(|&c| !rec.padded()[c]).collect();
    if live.is_empty() {
        return Err(CliError::Data(format!("{}: no live channels", rec.participant_id())));
    }
    let fs = rec.srate() as f64;
    let mut freqs = Vec::new();
    let mut acc: Vec<f64> = Vec::new();
    for &c in &live {
        let est = psd_welch(&channel(rec, c), fs, cfg.eda.welch_nperseg, 0.5)?;
        if acc.is_empty() {
            acc = vec![0.0; est.values.len()];
            freqs = est.freqs_hz;
        }
        acc.iter_mut().zip(&est.values).for_each(|(a, v)| *a += v);
    }
    acc.iter_mut().for_each(|a| *a /= live.len() as f64);
    Ok((freqs, acc))
}

struct EdaParticipant {
    id: String,
    psd_freqs: Vec<f64>,
    psd_real: Vec<f64>,
    psd_imag: Vec<f64>,
    coherence: CohortStats,
}

fn eda_one(p: &Participant, cfg: &ExperimentConfig) -> Result<EdaParticipant> {
    let (psd_freqs, psd_real) = mean_psd(&p.real, cfg)?;
    let (freqs_i, psd_imag) = mean_psd(&p.imagery, cfg)?;
    if freqs_i != psd_freqs {
        return Err(CliError::Data(format!("{}: real and imagery sessions differ in sampling rate", p.id)));
    }
    let env = pipeline::envelope(p, cfg)?;
    let cap = cfg.epoching.channel_cap_umap;
    let real = fit_channels(&pipeline::condition_epochs(&env.real, cfg)?, cap)?;
    let imag = fit_channels(&pipeline::condition_epochs(&env.imagery, cfg)?, cap)?;
    let bcfg = BootstrapConfig {
        n_boot: cfg.eda.n_boot,
        seed: rng::derive(cfg.seed, &[STREAM_BOOTSTRAP, p.index as u64]),
        nperseg: cfg.eda.coherence_nperseg,
    };
    let mut coherence = bootstrap_cohort_stats(&real, &imag, &bcfg)?;
    coherence.row.participant_id = p.id.clone();
    Ok(EdaParticipant { id: p.id.clone(), psd_freqs, psd_real, psd_imag, coherence })
}

fn curves_csv(freqs: &[f64], real: &[f64], imag: &[f64]) -> String {
    let mut s = String::from("freq_hz,real,imagery\n");
    for ((f, r), i) in freqs.iter().zip(real).zip(imag) {
        s.push_str(&format!("{f:.6},{r:.9e},{i:.9e}\n"));
    }
    s
}

fn write_curves(
    out: &mut Outputs,
    stem: &str,
    title: &str,
    ylabel: &str,
    freqs: &[f64],
    real: &[f64],
    imag: &[f64],
) -> Result<()> {
    out.write(&format!("{stem}.csv"), curves_csv(freqs, real, imag))?;
    let series = [Series { name: "real", x: freqs, y: real }, Series { name: "imagery", x: freqs, y: imag }];
    out.write(&format!("{stem}.svg"), line_plot(title, "frequency (Hz)", ylabel, &series))?;
    Ok(())
}

fn column_mean<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0.0;
    for r in rows {
        if acc.is_empty() {
            acc = vec![0.0; r.len()];
        }
        acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        n += 1.0;
    }
    acc.iter().map(|a| a / n).collect()
}

/// PSD and coherence curves per participant and pooled, plus the bootstrapped
/// coherence table.
fn eda(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(Inputs, Value)> {
    let (ps, inputs) = pipeline::load_participants(cfg)?;
    let cfg = &pipeline::effective_config(cfg, &ps);
    let results: Vec<EdaParticipant> = ps.par_iter().map(|p| eda_one(p, cfg)).collect::<Result<_>>()?;
    let rows: Vec<_> = results.iter().map(|r| r.coherence.row.clone()).collect();
    out.write("table2.csv", table2_csv(&rows))?;
    let mut peaks = serde_json::Map::new();
    for r in &results {
        write_curves(
            out,
            &format!("psd/{}", r.id),
            &format!("PSD {}", r.id),
            "power (V²/Hz)",
            &r.psd_freqs,
            &r.psd_real,
            &r.psd_imag,
        )?;
        let c = &r.coherence;
        write_curves(
            out,
            &format!("coherence/{}", r.id),
            &format!("Coherence {}", r.id),
            "coherence",
            &c.freqs_hz,
            &c.curve_real,
            &c.curve_imag,
        )?;
        let peak = |v: &[f64]| {
            r.psd_freqs.iter().zip(v).filter(|(f, _)| **f > 0.0).max_by(|a, b| a.1.total_cmp(b.1)).map(|(f, _)| *f)
        };
        peaks.insert(r.id.clone(), json!({ "real": peak(&r.psd_real), "imagery": peak(&r.psd_imag) }));
    }
    let same_grid = |f: fn(&EdaParticipant) -> &Vec<f64>| results.iter().all(|r| f(r) == f(&results[0]));
    if same_grid(|r| &r.psd_freqs) {
        let real = column_mean(results.iter().map(|r| r.psd_real.as_slice()));
        let imag = column_mean(results.iter().map(|r| r.psd_imag.as_slice()));
        write_curves(out, "psd/pooled", "PSD pooled", "power (V²/Hz)", &results[0].psd_freqs, &real, &imag)?;
    }
    if same_grid(|r| &r.coherence.freqs_hz) {
        let real = column_mean(results.iter().map(|r| r.coherence.curve_real.as_slice()));
        let imag = column_mean(results.iter().map(|r| r.coherence.curve_imag.as_slice()));
        write_curves(
            out,
            "coherence/pooled",
            "Coherence pooled",
            "coherence",
            &results[0].coherence.freqs_hz,
            &real,
            &imag,
        )?;
    }
    Ok((inputs, json!({ "table2": rows, "psd_peak_hz": peaks })))
}

/// Name, points, glyph and color of one scatter group.
type PointGroup = (String, Vec<(f64, f64)>, Glyph, usize);

fn embedding_artifacts(out: &mut Outputs, id: &str, variant: &str, r: &VariantResult) -> Result<()> {
    let mut csv = r.train.to_csv(id, "train", true);
    csv.push_str(&r.test.to_csv(id, "test", false));
    out.write(&format!("embeddings/{id}-{variant}.csv"), csv)?;
    let n_labels = r.train.labels.iter().chain(&r.test.labels).max().map_or(0, |m| m + 1);
    let mut owned: Vec<PointGroup> = Vec::new();
    for (split, emb, glyph) in [("train", &r.train, Glyph::Circle), ("test", &r.test, Glyph::Cross)] {
        for l in 0..n_labels {
            let pts: Vec<(f64, f64)> = emb
                .labels
                .iter()
                .enumerate()
                .filter(|(_, &x)| x == l)
                .map(|(i, _)| (emb.points[[i, 0]], emb.points[[i, 1.min(emb.points.ncols() - 1)]]))
                .collect();
            owned.push((format!("{split} label {l}"), pts, glyph, l));
        }
    }
    let groups: Vec<ScatterGroup<'_>> = owned
        .iter()
        .map(|(name, pts, glyph, l)| ScatterGroup { name: name.clone(), points: pts, glyph: *glyph, color_index: *l })
        .collect();
    out.write(
        &format!("embeddings/{id}-{variant}.svg"),
        scatter_plot(&format!("UMAP {id} {variant}"), "umap 1", "umap 2", &groups),
    )?;
    Ok(())
}

fn knn_table(
    ps: &[Participant],
    envs: Option<&[Enveloped]>,
    cfg: &ExperimentConfig,
    out: &mut Outputs,
) -> Result<Evaluation> {
    let data = ps
        .par_iter()
        .enumerate()
        .map(|(i, p)| pipeline::knn_data(p, envs.map(|e| &e[i]), cfg))
        .collect::<Result<Vec<_>>>()?;
    let eval = evaluate_participants(&data, &cfg.knn, cfg.seed)?;
    out.write("table1.csv", eval.table.to_csv())?;
    for p in &eval.participants {
        for (variant, r) in [("processed", &p.processed), ("unprocessed", &p.unprocessed)] {
            if let Some(r) = r {
                embedding_artifacts(out, &p.participant_id, variant, r)?;
            }
        }
    }
    Ok(eval)
}

fn table_metrics(eval: &Evaluation) -> Value {
    let avg = eval.table.averages();
    json!({
        "rows": eval.table.rows,
        "averages": {
            "processed_train": avg[0], "processed_test": avg[1],
            "unprocessed_train": avg[2], "unprocessed_test": avg[3],
        },
    })
}

/// Table of KNN scores over UMAP embeddings, per participant and variant.
fn umap_knn(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(Inputs, Value)> {
    let (ps, inputs) = pipeline::load_participants(cfg)?;
    let cfg = &pipeline::effective_config(cfg, &ps);
    let eval = knn_table(&ps, None, cfg, out)?;
    Ok((inputs, table_metrics(&eval)))
}

#[derive(Debug, Clone, Serialize)]
pub struct DlResult {
    pub participant_id: String,
    pub task: Task,
    pub family: ecog_nn::Family,
    pub best_trial: usize,
    pub learning_rate: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub train_accuracy: f64,
    pub epochs_run: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub model: String,
    pub model_sha256: String,
}

/// Random search for one participant's task.
pub fn search_participant(
    p: &Participant,
    env: &Enveloped,
    task: Task,
    cfg: &ExperimentConfig,
) -> Result<(SearchOutcome, usize, usize)> {
    let split = pipeline::dl_split(p, env, task, cfg)?;
    let spec = TaskSpec {
        family: cfg.dl.family,
        input_shape: vec![split.train.n_times(), split.train.n_channels(), 1],
        n_classes: task.n_classes(),
        train: cfg.dl.train,
    };
    let outcome = hyper_search(&cfg.dl.search, &spec, &split, rng::derive(cfg.seed, &[STREAM_SEARCH, p.index as u64]))?;
    info!("{}: best test accuracy {:.4}", p.id, outcome.best.test_accuracy);
    Ok((outcome, split.train.len(), split.test.len()))
}

fn train_all(
    ps: &[Participant],
    envs: &[Enveloped],
    task: Task,
    cfg: &ExperimentConfig,
    out: &mut Outputs,
) -> Result<Vec<DlResult>> {
    let mut results = Vec::with_capacity(ps.len());
    for (p, env) in ps.iter().zip(envs) {
        let (o, n_train, n_test) = search_participant(p, env, task, cfg)?;
        let bytes = to_bytes(&o.model);
        let model = format!("models/{}.ecnn", p.id);
        out.write(&model, &bytes)?;
        out.write(&format!("histories/{}.csv", p.id), o.model.history().to_csv())?;
        out.write(&format!("leaderboards/{}.json", p.id), o.leaderboard.to_json() + "\n")?;
        results.push(DlResult {
            participant_id: p.id.clone(),
            task,
            family: cfg.dl.family,
            best_trial: o.best.config.trial,
            learning_rate: o.best.config.learning_rate,
            test_accuracy: o.best.test_accuracy,
            test_loss: o.best.test_loss,
            train_accuracy: o.best.train_accuracy,
            epochs_run: o.best.epochs_run,
            n_train,
            n_test,
            model,
            model_sha256: report::sha256_hex(&bytes),
        });
    }
    out.write_json("dl_results.json", &results)?;
    Ok(results)
}

fn envelopes(ps: &[Participant], cfg: &ExperimentConfig) -> Result<Vec<Enveloped>> {
    ps.par_iter().map(|p| pipeline::envelope(p, cfg)).collect()
}

/// Best-of-budget classifier per participant, with history and leaderboard.
fn train(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(Inputs, Value)> {
    let (ps, inputs) = pipeline::load_participants(cfg)?;
    let cfg = &pipeline::effective_config(cfg, &ps);
    let envs = envelopes(&ps, cfg)?;
    let results = train_all(&ps, &envs, cfg.dl.task, cfg, out)?;
    Ok((inputs, json!({ "results": results })))
}

#[derive(Debug, Clone, Serialize)]
pub struct FinetuneEntry {
    pub participant_id: String,
    pub before: ecog_nn::Evaluation,
    pub after: ecog_nn::Evaluation,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub model: String,
}

/// Continues training a saved model on each selected participant.
fn finetune(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(Inputs, Value)> {
    let source = cfg
        .finetune
        .source_model
        .as_deref()
        .ok_or_else(|| CliError::Config("finetune.source_model is not set".into()))?;
    if !source.is_file() {
        return Err(CliError::Config(format!("source model {} does not exist", source.display())));
    }
    let (ps, mut inputs) = pipeline::load_participants(cfg)?;
    let cfg = &pipeline::effective_config(cfg, &ps);
    inputs.add("source_model", source)?;
    let model = load_model(source)?;
    let source_sha256 = ecog_nn::content_hash(&model);
    let mut entries = Vec::with_capacity(ps.len());
    for p in &ps {
        let env = pipeline::envelope(p, cfg)?;
        let split = pipeline::dl_split(p, &env, cfg.dl.task, cfg)?;
        let before = model.evaluate(&split.test)?;
        let tcfg =
            TrainConfig { seed: rng::derive(cfg.seed, &[STREAM_FINETUNE, p.index as u64]), ..cfg.finetune.train };
        let tuned = fine_tune(&model, &split, &tcfg)?;
        let after = tuned.evaluate(&split.test)?;
        info!("{}: fine-tuned test accuracy {:.4} (before {:.4})", p.id, after.accuracy, before.accuracy);
        let rel = format!("models/{}-finetuned.ecnn", p.id);
        out.write(&rel, to_bytes(&tuned))?;
        out.write(&format!("histories/{}-finetuned.csv", p.id), tuned.history().to_csv())?;
        entries.push(FinetuneEntry {
            participant_id: p.id.clone(),
            before,
            after,
            epochs_run: tuned.history().records.len(),
            best_epoch: tuned.history().best_epoch,
            model: rel,
        });
    }
    let artifact = json!({ "source_sha256": source_sha256, "task": cfg.dl.task, "entries": entries });
    out.write_json("finetune.json", &artifact)?;
    Ok((inputs, artifact))
}

#[derive(Debug, Clone, Serialize)]
struct ScreeningArtifact<'a> {
    #[serde(flatten)]
    report: &'a ScreeningReport,
    knn_variant: &'static str,
    dl_task: Task,
    config: Value,
}

/// Runs the KNN table and the real-vs-imagery classifier for every
/// participant and correlates the two.
fn screen(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(Inputs, Value)> {
    let (ps, inputs) = pipeline::load_participants(cfg)?;
    let cfg = &pipeline::effective_config(cfg, &ps);
    if ps.len() < 3 {
        return Err(CliError::Data(format!("screening correlation: n ≥ 3 required, got {}", ps.len())));
    }
    let envs = envelopes(&ps, cfg)?;
    let eval = knn_table(&ps, Some(&envs), cfg, out)?;
    let variant = if cfg.variant.processed() { "processed" } else { "unprocessed" };
    let knn: Vec<f64> = eval
        .table
        .rows
        .iter()
        .map(|r| if cfg.variant.processed() { r.processed } else { r.unprocessed }.expect("variant evaluated").test)
        .collect();
    let dl = train_all(&ps, &envs, Task::TwoClass, cfg, out)?;
    let acc: Vec<f64> = dl.iter().map(|r| r.test_accuracy).collect();
    let ids: Vec<String> = ps.iter().map(|p| p.id.clone()).collect();
    let rep = screening_report(&ids, &knn, &acc, cfg.dl.family.as_str(), cfg.screen.threshold)?;
    let artifact =
        ScreeningArtifact { report: &rep, knn_variant: variant, dl_task: Task::TwoClass, config: cfg.to_json() };
    out.write_json("screening.json", &artifact)?;
    let pts: Vec<(f64, f64)> = knn.iter().copied().zip(acc.iter().copied()).collect();
    let groups = [ScatterGroup { name: "participants".into(), points: &pts, glyph: Glyph::Circle, color_index: 0 }];
    let title = format!("Screening (Spearman rho {:.3})", rep.spearman_rho);
    out.write("screening.svg", scatter_plot(&title, "KNN test score", "DL test accuracy", &groups))?;
    Ok((inputs, json!({ "spearman_rho": rep.spearman_rho, "entries": rep.entries, "table1": table_metrics(&eval) })))
}

/// Writes a synthetic cohort in the dataset layout.
fn synth(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(Inputs, Value)> {
    let scfg = SynthConfig { seed: cfg.seed, ..cfg.synth.clone() };
    scfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let cohort = generate_cohort(&scfg)?;
    let truth = write_cohort(&scfg, &cohort, out.root())?;
    for p in &truth.participants {
        for c in CONDITION_DIRS {
            for f in [ecog_core::dataset::container::MANIFEST_FILE, ecog_core::dataset::container::VOLTAGE_FILE] {
                out.adopt(&format!("{}/{c}/{f}", p.participant_id))?;
            }
        }
    }
    out.adopt(TRUTH_FILE)?;
    Ok((Inputs::default(), serde_json::to_value(&truth).expect("truth serializes")))
}
