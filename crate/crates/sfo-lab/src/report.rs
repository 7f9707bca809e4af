//! End-to-end study pipelines behind the `report` command: the
//! mode-narrowing run on the 2-D car mixture and the ablation grid on the
//! synthetic subject world. Both are pure functions of one seed; training
//! metrics stream to JSONL when an output directory is given.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{
    default_subject_rows, preset_eval_default, preset_synth_default, preset_train_default,
    subject_preset_world, ReportOverrides, RowSpec,
};
use crate::error::{Error, Result};
use crate::evalkit::{subject_sweep, AblationTable, EvalSpec, ModeRatio, RowMetrics};
use crate::flow::{euler_sample_batch, CondLayout, CondModel};
use crate::negatives::{pair_cars_with_data_pool, pair_gap_stats, synth_negatives, GapStats, Strategy, SynthConfig};
use crate::adapters::AdapterStack;
use crate::numcore::RngStream;
use crate::trainer::{
    pretrain_base, train_sfo, train_sft, Checkpoint, MetricsRecord, MetricsWriter, Stage,
    TrainConfig, TrainHooks, TrainResult,
};
use crate::world::dataset::{Dataset, Example, TripletSet, WorldRef};
use crate::world::{gen_car_mixture, mode_classifier, CarMixSpec, ConditionPair, Triplet, WorldSpec};

// Stream tags under the pipeline root seed; trainer tags 10..12 live under
// the per-stage seeds, so these only need to avoid each other.
const TAG_SYNTH: u64 = 30;
const TAG_SWEEP: u64 = 31;
const TAG_EVAL: u64 = 32;

/// Per-stage seeds derived from the pipeline seed, recorded in each
/// checkpoint so any stage can be rerun standalone.
fn stage_seed(seed: u64, offset: u64) -> u64 {
    seed.wrapping_add(offset)
}

fn metrics_writer(out: Option<&Path>, name: &str) -> Result<Option<MetricsWriter>> {
    match out {
        Some(dir) => Ok(Some(MetricsWriter::create(&dir.join(name))?)),
        None => Ok(None),
    }
}

fn finish(writer: Option<MetricsWriter>) -> Result<()> {
    match writer {
        Some(w) => w.finish(),
        None => Ok(()),
    }
}

/// File-safe version of a row label.
fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '-' })
        .collect()
}

// ---------------------------------------------------------------------------
// Toy pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPipelineConfig {
    pub seed: u64,
    pub spec: CarMixSpec,
    pub pretrain: TrainConfig,
    pub sft: TrainConfig,
    pub comparative: TrainConfig,
    pub eval: EvalSpec,
}

impl ToyPipelineConfig {
    pub fn preset(seed: u64) -> ToyPipelineConfig {
        ToyPipelineConfig {
            seed,
            spec: CarMixSpec::default(),
            pretrain: preset_train_default(Stage::Pretrain, true, stage_seed(seed, 0)),
            sft: preset_train_default(Stage::Sft, true, stage_seed(seed, 1)),
            comparative: preset_train_default(Stage::Sfo, true, stage_seed(seed, 2)),
            eval: preset_eval_default(true),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub ratio: f64,
}

/// Mode-narrowing study output: final target-mode ratios for the three
/// models, ratio curves for the two fine-tuned runs, and the first
/// evaluated iteration where the comparative run reaches the supervised
/// run's final ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub table: AblationTable,
    pub pretrain_ratio: f64,
    pub pretrain_counts: Vec<u64>,
    pub sft_final_ratio: f64,
    pub comparative_final_ratio: f64,
    pub sft_curve: Vec<CurvePoint>,
    pub comparative_curve: Vec<CurvePoint>,
    pub matched_at: Option<usize>,
}

/// Target-mode ratio of the current weights, used both inside training eval
/// hooks and for final checkpoints.
fn ratio_of(
    stack: &AdapterStack,
    enabled: &BTreeSet<String>,
    layout: CondLayout,
    cond: &ConditionPair,
    centers: &[[f64; 2]],
    eval: &EvalSpec,
    base: RngStream,
) -> Result<ModeRatio> {
    let model = CondModel { stack, layout, enabled };
    let conds = vec![cond.clone(); eval.n_samples];
    let samples = euler_sample_batch(&model, &conds, &eval.sampler, |i| base.split(i as u64))?;
    let mut counts = vec![0u64; centers.len()];
    for s in &samples {
        counts[mode_classifier(s, centers)] += 1;
    }
    Ok(ModeRatio {
        ratio: counts[0] as f64 / samples.len() as f64,
        counts,
    })
}

struct StageRun {
    result: TrainResult,
    curve: Vec<CurvePoint>,
}

/// Runs one toy training stage with a ratio eval hook and optional metrics
/// file. Eval call k draws from `eval_base.split(k)`.
#[allow(clippy::too_many_arguments)]
fn toy_stage(
    out: Option<&Path>,
    metrics_name: &str,
    eval: &EvalSpec,
    cond: &ConditionPair,
    centers: &[[f64; 2]],
    layout: CondLayout,
    eval_base: RngStream,
    run: impl FnOnce(&mut TrainHooks) -> Result<TrainResult>,
) -> Result<StageRun> {
    let mut writer = metrics_writer(out, metrics_name)?;
    let mut curve: Vec<CurvePoint> = Vec::new();
    let mut calls = 0u64;
    let mut ratio_points: Vec<f64> = Vec::new();
    let mut eval_hook = |stack: &AdapterStack, enabled: &BTreeSet<String>| {
        let out = ratio_of(stack, enabled, layout, cond, centers, eval, eval_base.split(calls))?;
        calls += 1;
        ratio_points.push(out.ratio);
        Ok(crate::trainer::EvalBlock {
            target_mode_ratio: Some(out.ratio),
            ..Default::default()
        })
    };
    let mut metrics_hook = |record: &MetricsRecord| -> Result<()> {
        if let Some(w) = writer.as_mut() {
            w.append(record)?;
        }
        if let Some(eval) = &record.eval {
            if let Some(ratio) = eval.target_mode_ratio {
                curve.push(CurvePoint { iteration: record.iteration, ratio });
            }
        }
        Ok(())
    };
    let mut hooks = TrainHooks {
        metrics: Some(&mut metrics_hook),
        eval: Some(&mut eval_hook),
    };
    let result = run(&mut hooks)?;
    drop(hooks);
    finish(writer)?;
    Ok(StageRun { result, curve })
}

/// Runs car generation, broad pretraining, supervised narrowing, and the
/// comparative run on data-pool pairs, evaluating the target-mode ratio on
/// a fixed schedule.
pub fn run_toy_pipeline(config: &ToyPipelineConfig, out: Option<&Path>) -> Result<ToyReport> {
    let mix = gen_car_mixture(config.spec.clone(), config.seed)?;
    let wref = WorldRef::Cars { spec: mix.spec.clone(), seed: mix.seed };
    let layout = CondLayout::new(wref.data_dim(), wref.img_dim(), wref.text_dim());
    let dataset = Dataset::Cars(mix.clone());
    let centers = config.spec.mode_centers();
    let cond = config.spec.condition();
    let eval_base = RngStream::root(config.seed).split(TAG_EVAL);

    let all = dataset.all_examples()?;
    let pre = toy_stage(
        out,
        "pretrain-metrics.jsonl",
        &config.eval,
        &cond,
        &centers,
        layout,
        eval_base.split(0),
        |hooks| pretrain_base(&all, layout, &config.pretrain, hooks),
    )?;

    let positives = dataset.positive_examples()?;
    let sft = toy_stage(
        out,
        "sft-metrics.jsonl",
        &config.eval,
        &cond,
        &centers,
        layout,
        eval_base.split(1),
        |hooks| train_sft(&pre.result.checkpoint, &positives, &config.sft, hooks),
    )?;

    let quads = pair_cars_with_data_pool(&mix)?;
    let comparative = toy_stage(
        out,
        "comparative-metrics.jsonl",
        &config.eval,
        &cond,
        &centers,
        layout,
        eval_base.split(2),
        |hooks| train_sfo(&pre.result.checkpoint, &quads, &config.comparative, hooks),
    )?;

    // Final ratios reuse the same protocol as curve points, on dedicated
    // streams so curve length does not shift them.
    let final_of = |ckpt: &Checkpoint, k: u64| {
        ratio_of(
            &ckpt.stack,
            ckpt.stack.enabled(),
            layout,
            &cond,
            &centers,
            &config.eval,
            eval_base.split(10 + k),
        )
    };
    let pre_ratio = final_of(&pre.result.checkpoint, 0)?;
    let sft_ratio = final_of(&sft.result.checkpoint, 1)?;
    let cmp_ratio = final_of(&comparative.result.checkpoint, 2)?;

    let matched_at = comparative
        .curve
        .iter()
        .find(|p| p.ratio >= sft_ratio.ratio)
        .map(|p| p.iteration);

    let table = AblationTable::run(&["pretrain", "sft", "comparative"], |label| {
        Ok(RowMetrics::from_ratio(match label {
            "pretrain" => pre_ratio.ratio,
            "sft" => sft_ratio.ratio,
            _ => cmp_ratio.ratio,
        }))
    })?;

    Ok(ToyReport {
        table,
        pretrain_ratio: pre_ratio.ratio,
        pretrain_counts: pre_ratio.counts,
        sft_final_ratio: sft_ratio.ratio,
        comparative_final_ratio: cmp_ratio.ratio,
        sft_curve: sft.curve,
        comparative_curve: comparative.curve,
        matched_at,
    })
}

// ---------------------------------------------------------------------------
// Subject pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPipelineConfig {
    pub seed: u64,
    pub spec: WorldSpec,
    pub pretrain: TrainConfig,
    pub sft: TrainConfig,
    /// Base config for comparative rows; row overrides adjust it.
    pub sfo: TrainConfig,
    /// Synthesis settings shared by all strategies; the strategy field is
    /// replaced per row.
    pub synth: SynthConfig,
    pub eval: EvalSpec,
    pub rows: Vec<RowSpec>,
}

impl SubjectPipelineConfig {
    pub fn preset(seed: u64) -> SubjectPipelineConfig {
        SubjectPipelineConfig {
            seed,
            spec: subject_preset_world(),
            pretrain: preset_train_default(Stage::Pretrain, false, stage_seed(seed, 0)),
            sft: preset_train_default(Stage::Sft, false, stage_seed(seed, 1)),
            sfo: preset_train_default(Stage::Sfo, false, stage_seed(seed, 2)),
            synth: preset_synth_default(Strategy::Cdns, false),
            eval: preset_eval_default(false),
            rows: default_subject_rows(),
        }
    }
}

/// Ablation grid output: the table plus pair-gap statistics per synthesis
/// strategy, computed on the training-split pairs each comparative row
/// consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectReport {
    pub table: AblationTable,
    pub gap_stats: BTreeMap<String, GapStats>,
}

/// Supervised control matched to the comparative budget: more supervised
/// steps on a fresh adapter under the comparative row's schedule, meaning
/// its iteration and batch counts, optimizer settings, and adapter rank.
fn additional_sft_config(base: &SubjectPipelineConfig) -> TrainConfig {
    let mut c = base.sft.clone();
    c.seed = stage_seed(base.seed, 3);
    c.adapter_name = "extra".to_string();
    c.adapter_rank = base.sfo.adapter_rank;
    c.iterations = base.sfo.iterations;
    c.batch_size = base.sfo.batch_size;
    c.optimizer = base.sfo.optimizer;
    c
}

pub fn run_subject_pipeline(
    config: &SubjectPipelineConfig,
    out: Option<&Path>,
) -> Result<SubjectReport> {
    let triplets = TripletSet::generate(config.spec.clone(), config.seed)?;
    let world = triplets.world()?;
    let wref = WorldRef::Subject { spec: config.spec.clone(), seed: config.seed };
    let layout = CondLayout::new(wref.data_dim(), wref.img_dim(), wref.text_dim());
    let dataset = Dataset::Triplets(triplets.clone());
    let examples: Vec<Example> = dataset.all_examples()?;

    let mut pre_writer = metrics_writer(out, "pretrain-metrics.jsonl")?;
    let mut pre_sink = |r: &MetricsRecord| -> Result<()> {
        if let Some(w) = pre_writer.as_mut() {
            w.append(r)?;
        }
        Ok(())
    };
    let mut hooks = TrainHooks { metrics: Some(&mut pre_sink), eval: None };
    let pre = pretrain_base(&examples, layout, &config.pretrain, &mut hooks)?;
    drop(hooks);
    finish(pre_writer)?;

    let mut sft_writer = metrics_writer(out, "sft-metrics.jsonl")?;
    let mut sft_sink = |r: &MetricsRecord| -> Result<()> {
        if let Some(w) = sft_writer.as_mut() {
            w.append(r)?;
        }
        Ok(())
    };
    let mut hooks = TrainHooks { metrics: Some(&mut sft_sink), eval: None };
    let sft = train_sft(&pre.checkpoint, &examples, &config.sft, &mut hooks)?;
    drop(hooks);
    finish(sft_writer)?;

    // One pair set per strategy the grid needs, synthesized from the
    // supervised model on the training split.
    let train_records: Vec<Triplet> =
        triplets.train_records()?.into_iter().cloned().collect();
    let mut needed: BTreeSet<Strategy> = BTreeSet::new();
    for row in &config.rows {
        if let RowSpec::Sfo { strategy, .. } = row {
            needed.insert(*strategy);
        }
    }
    let synth_base = RngStream::root(config.seed).split(TAG_SYNTH);
    let mut quads_by: BTreeMap<Strategy, Vec<crate::world::Quadruplet>> = BTreeMap::new();
    let mut gap_stats: BTreeMap<String, GapStats> = BTreeMap::new();
    for (k, strategy) in Strategy::ALL.iter().enumerate() {
        if !needed.contains(strategy) {
            continue;
        }
        let mut synth = config.synth.clone();
        synth.strategy = *strategy;
        let quads = synth_negatives(
            &sft.checkpoint.stack,
            sft.checkpoint.stack.enabled(),
            &world,
            &train_records,
            &synth,
            synth_base.split(k as u64),
        )?;
        gap_stats.insert(strategy.as_str().to_string(), pair_gap_stats(&quads, &world)?);
        quads_by.insert(*strategy, quads);
    }

    let sweep_base = RngStream::root(config.seed).split(TAG_SWEEP);
    let labels: Vec<String> = config.rows.iter().map(|r| r.label().to_string()).collect();
    let mut row_index = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        row_index.insert(l.clone(), i);
    }

    let table = AblationTable::run(&labels, |label| {
        let idx = row_index[label];
        let row = &config.rows[idx];
        // Paired evaluation: every row scores on the same conditions and
        // sampling draws, so row differences reflect the weights alone.
        let sweep_rng = sweep_base.split(0);
        let ckpt: Checkpoint = match row {
            RowSpec::SftBase { .. } => sft.checkpoint.clone(),
            RowSpec::SftAdditional { .. } => {
                let cfg = additional_sft_config(config);
                let mut writer = metrics_writer(out, &format!("row-{}-metrics.jsonl", slug(label)))?;
                let mut sink = |r: &MetricsRecord| -> Result<()> {
                    if let Some(w) = writer.as_mut() {
                        w.append(r)?;
                    }
                    Ok(())
                };
                let mut hooks = TrainHooks { metrics: Some(&mut sink), eval: None };
                let run = train_sft(&sft.checkpoint, &examples, &cfg, &mut hooks)?;
                drop(hooks);
                finish(writer)?;
                run.checkpoint
            }
            RowSpec::Sfo { strategy, timestep, beta, adapter_rank, direct, .. } => {
                let mut cfg = config.sfo.clone();
                // Row seed varies with position so reruns of one label stay
                // reproducible while rows stay independent.
                cfg.seed = stage_seed(config.seed, 10 + idx as u64);
                if let Some(t) = timestep {
                    cfg.timestep = *t;
                }
                if let Some(b) = beta {
                    cfg.beta = *b;
                }
                if let Some(r) = adapter_rank {
                    cfg.adapter_rank = *r;
                }
                cfg.direct = *direct;
                let quads = &quads_by[strategy];
                let mut writer = metrics_writer(out, &format!("row-{}-metrics.jsonl", slug(label)))?;
                let mut sink = |r: &MetricsRecord| -> Result<()> {
                    if let Some(w) = writer.as_mut() {
                        w.append(r)?;
                    }
                    Ok(())
                };
                let mut hooks = TrainHooks { metrics: Some(&mut sink), eval: None };
                let run = train_sfo(&sft.checkpoint, quads, &cfg, &mut hooks)?;
                drop(hooks);
                finish(writer)?;
                run.checkpoint
            }
        };
        let stats = subject_sweep(&ckpt, &world, &config.eval, sweep_rng)?;
        Ok(RowMetrics::from_sweep(&stats))
    })?;

    Ok(SubjectReport { table, gap_stats })
}

// ---------------------------------------------------------------------------
// Config resolution for the report command
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum ReportConfig {
    ToyCars(ToyPipelineConfig),
    SubjectWorld(SubjectPipelineConfig),
}

impl ReportConfig {
    /// Resolves the report overrides file onto the preset defaults.
    pub fn resolve(preset_name: &str, seed: u64, over: &ReportOverrides) -> Result<ReportConfig> {
        if let Some(s) = over.seed {
            if s != seed {
                return Err(Error::invalid(
                    "config.seed",
                    format!("config value {s} conflicts with command line {seed}"),
                ));
            }
        }
        let preset = crate::config::DataPreset::from_name(preset_name)?;
        if let Some(data) = &over.data {
            if data.name() != preset.name() {
                return Err(Error::invalid(
                    "config.data",
                    format!("config preset {} conflicts with command line {}", data.name(), preset.name()),
                ));
            }
        }
        match preset {
            crate::config::DataPreset::ToyCars { spec } => {
                let mut c = ToyPipelineConfig::preset(seed);
                c.spec = match &over.data {
                    Some(crate::config::DataPreset::ToyCars { spec }) => spec.clone(),
                    _ => spec,
                };
                if let Some(p) = &over.pretrain {
                    c.pretrain = p.resolve(Stage::Pretrain, true, c.pretrain.seed)?;
                }
                if let Some(p) = &over.sft {
                    c.sft = p.resolve(Stage::Sft, true, c.sft.seed)?;
                }
                if let Some(p) = &over.sfo {
                    c.comparative = p.resolve(Stage::Sfo, true, c.comparative.seed)?;
                }
                if let Some(e) = &over.eval {
                    c.eval = e.resolve(true)?;
                }
                if over.synth.is_some() {
                    return Err(Error::invalid(
                        "config.synth",
                        "toy-cars pairs come from the data pool; synthesis settings do not apply",
                    ));
                }
                if over.rows.is_some() {
                    return Err(Error::invalid(
                        "config.rows",
                        "toy-cars rows are fixed: pretrain, sft, comparative",
                    ));
                }
                Ok(ReportConfig::ToyCars(c))
            }
            crate::config::DataPreset::SubjectWorld { spec } => {
                let mut c = SubjectPipelineConfig::preset(seed);
                c.spec = match &over.data {
                    Some(crate::config::DataPreset::SubjectWorld { spec }) => spec.clone(),
                    _ => spec,
                };
                if let Some(p) = &over.pretrain {
                    c.pretrain = p.resolve(Stage::Pretrain, false, c.pretrain.seed)?;
                }
                if let Some(p) = &over.sft {
                    c.sft = p.resolve(Stage::Sft, false, c.sft.seed)?;
                }
                if let Some(p) = &over.sfo {
                    c.sfo = p.resolve(Stage::Sfo, false, c.sfo.seed)?;
                }
                if let Some(s) = &over.synth {
                    c.synth = s.resolve(s.strategy.unwrap_or(Strategy::Cdns), false)?;
                }
                if let Some(e) = &over.eval {
                    c.eval = e.resolve(false)?;
                }
                if let Some(rows) = &over.rows {
                    c.rows = rows.clone();
                }
                Ok(ReportConfig::SubjectWorld(c))
            }
        }
    }

    /// Runs the resolved pipeline, writing metrics beside `out` when given,
    /// and returns the table plus the serialized report body.
    pub fn run(&self, out: Option<&Path>) -> Result<(AblationTable, serde_json::Value)> {
        match self {
            ReportConfig::ToyCars(c) => {
                let report = run_toy_pipeline(c, out)?;
                let body = serde_json::to_value(&report)
                    .map_err(|e| Error::json(PathBuf::from("report.json"), e))?;
                Ok((report.table, body))
            }
            ReportConfig::SubjectWorld(c) => {
                let report = run_subject_pipeline(c, out)?;
                let body = serde_json::to_value(&report)
                    .map_err(|e| Error::json(PathBuf::from("report.json"), e))?;
                Ok((report.table, body))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_toy_config(seed: u64) -> ToyPipelineConfig {
        let mut c = ToyPipelineConfig::preset(seed);
        c.spec.n_positive = 40;
        c.spec.n_other = 40;
        c.pretrain.iterations = 40;
        c.pretrain.hidden_widths = vec![16];
        c.sft.iterations = 30;
        c.sft.eval_every = 10;
        c.comparative.iterations = 30;
        c.comparative.eval_every = 10;
        c.eval.n_samples = 20;
        c.eval.sampler.steps = 8;
        c
    }

    #[test]
    fn toy_pipeline_is_deterministic_and_writes_metrics() {
        let config = tiny_toy_config(5);
        let dir = tempfile::tempdir().unwrap();
        let a = run_toy_pipeline(&config, Some(dir.path())).unwrap();
        let b = run_toy_pipeline(&config, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sft_curve.len(), 3);
        assert_eq!(a.comparative_curve.len(), 3);
        assert_eq!(a.table.rows.len(), 3);
        assert_eq!(a.pretrain_counts.iter().sum::<u64>(), 20);
        for name in ["pretrain-metrics.jsonl", "sft-metrics.jsonl", "comparative-metrics.jsonl"] {
            let records = crate::trainer::read_metrics(&dir.path().join(name)).unwrap();
            assert!(!records.is_empty(), "{name} empty");
        }
        // Curve points carry the evaluated iterations.
        assert_eq!(a.sft_curve[0].iteration, 9);
        assert_eq!(a.sft_curve[2].iteration, 29);
    }

    fn tiny_subject_config(seed: u64) -> SubjectPipelineConfig {
        let mut c = SubjectPipelineConfig::preset(seed);
        c.spec.n_subjects = 8;
        c.spec.contexts_per_subject = 3;
        c.pretrain.iterations = 30;
        c.pretrain.hidden_widths = vec![16];
        c.sft.iterations = 20;
        c.sfo.iterations = 10;
        c.synth.sampler.steps = 6;
        c.eval.n_samples = 2;
        c.eval.sampler.steps = 6;
        c.rows = vec![
            RowSpec::SftBase { label: "sft-base".to_string() },
            RowSpec::sfo("cdns-sfo", Strategy::Cdns),
            RowSpec::sfo("selfplay-sfo", Strategy::Selfplay),
        ];
        c
    }

    #[test]
    fn subject_pipeline_covers_rows_and_gap_stats() {
        let config = tiny_subject_config(9);
        let dir = tempfile::tempdir().unwrap();
        let a = run_subject_pipeline(&config, Some(dir.path())).unwrap();
        let b = run_subject_pipeline(&config, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.table.rows.len(), 3);
        for row in &a.table.rows {
            assert!(row.error.is_none(), "row {} failed: {:?}", row.label, row.error);
        }
        assert!(a.gap_stats.contains_key("cdns"));
        assert!(a.gap_stats.contains_key("selfplay"));
        // Six training subjects with three contexts each.
        assert_eq!(a.gap_stats["cdns"].count, 18);
        assert!(dir.path().join("row-cdns-sfo-metrics.jsonl").exists());
        assert!(dir.path().join("pretrain-metrics.jsonl").exists());
    }

    #[test]
    fn report_config_resolves_presets_and_rejects_conflicts() {
        let over = ReportOverrides::default();
        let toy = ReportConfig::resolve("toy-cars", 3, &over).unwrap();
        match &toy {
            ReportConfig::ToyCars(c) => {
                assert_eq!(c.sft.adapter_rank, 16);
                assert_eq!(c.comparative.iterations, 800);
            }
            other => panic!("unexpected {other:?}"),
        }
        let subject = ReportConfig::resolve("subject-world", 3, &over).unwrap();
        match &subject {
            ReportConfig::SubjectWorld(c) => {
                assert_eq!(c.rows.len(), default_subject_rows().len());
                assert!(c.pretrain.drop_img_cond);
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad_seed = ReportOverrides { seed: Some(4), ..ReportOverrides::default() };
        assert!(ReportConfig::resolve("toy-cars", 3, &bad_seed).is_err());
        let bad_rows = ReportOverrides {
            rows: Some(vec![RowSpec::SftBase { label: "x".to_string() }]),
            ..ReportOverrides::default()
        };
        assert!(ReportConfig::resolve("toy-cars", 3, &bad_rows).is_err());
        assert!(ReportConfig::resolve("subject-world", 3, &bad_rows).is_ok());
    }
}
