//! Evaluation harness: target-mode ratio for the 2-D mixture, fidelity and
//! alignment sweeps over held-out subjects, and ablation report tables.
//!
//! All evaluation is deterministic given (checkpoint, seed): conditions and
//! samples draw from per-index child streams, and aggregation is a fixed
//! sequential reduction over the sample order.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{euler_sample_batch, CondModel, SamplerConfig};
use crate::manifest;
use crate::numcore::RngStream;
use crate::trainer::Checkpoint;
use crate::world::{mode_classifier, ConditionPair, World};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// Samples drawn per evaluated condition.
    pub n_samples: usize,
    pub sampler: SamplerConfig,
    /// Subject ids to sweep; empty means every held-out subject.
    pub held_out_subject_ids: Vec<u32>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            n_samples: 16,
            sampler: SamplerConfig::default(),
            held_out_subject_ids: Vec::new(),
        }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("eval.n_samples", "must be >= 1"));
        }
        self.sampler.validate()
    }
}

fn model_of(ckpt: &Checkpoint) -> CondModel<'_> {
    CondModel {
        stack: &ckpt.stack,
        layout: ckpt.layout,
        enabled: ckpt.stack.enabled(),
    }
}

/// Draws `n` samples for one condition; sample i is a pure function of
/// `base.split(i)`.
pub fn sample_conditioned(
    ckpt: &Checkpoint,
    cond: &ConditionPair,
    n: usize,
    sampler: &SamplerConfig,
    base: RngStream,
) -> Result<Vec<Vec<f64>>> {
    let model = model_of(ckpt);
    let conds = vec![cond.clone(); n];
    euler_sample_batch(&model, &conds, sampler, |i| base.split(i as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRatio {
    /// Fraction of samples classified as mode 0.
    pub ratio: f64,
    /// Per-mode sample counts; sums to the sample total exactly.
    pub counts: Vec<u64>,
}

/// Classifies pre-drawn samples against mixture centers.
pub fn mode_counts(samples: &[Vec<f64>], centers: &[[f64; 2]]) -> ModeRatio {
    let mut counts = vec![0u64; centers.len()];
    for s in samples {
        counts[mode_classifier(s, centers)] += 1;
    }
    ModeRatio {
        ratio: counts[0] as f64 / samples.len() as f64,
        counts,
    }
}

/// Samples the model under one condition and reports the fraction landing
/// in the target mode.
pub fn target_mode_ratio(
    ckpt: &Checkpoint,
    cond: &ConditionPair,
    centers: &[[f64; 2]],
    spec: &EvalSpec,
    rng: RngStream,
) -> Result<ModeRatio> {
    spec.validate()?;
    let samples = sample_conditioned(ckpt, cond, spec.n_samples, &spec.sampler, rng)?;
    Ok(mode_counts(&samples, centers))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub fidelity_mean: f64,
    pub fidelity_std: f64,
    pub alignment_mean: f64,
    pub alignment_std: f64,
    /// Pooled sample count across all swept conditions.
    pub n: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Scores generated samples for one (subject, context) condition.
pub fn score_samples(
    world: &World,
    subject_id: u32,
    context_id: u32,
    samples: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>) {
    let fidelities = samples
        .iter()
        .map(|x| world.fidelity_oracle(x, subject_id))
        .collect();
    let alignments = samples
        .iter()
        .map(|x| world.alignment_oracle(x, subject_id, context_id))
        .collect();
    (fidelities, alignments)
}

/// Generates per held-out (subject, context) condition and scores with the
/// analytic oracles. Condition index ci uses stream `rng.split(ci)`: child 0
/// draws the cue noise, child 1 the per-sample noise streams.
pub fn subject_sweep(
    ckpt: &Checkpoint,
    world: &World,
    spec: &EvalSpec,
    rng: RngStream,
) -> Result<SweepStats> {
    spec.validate()?;
    let subjects = if spec.held_out_subject_ids.is_empty() {
        world.holdout_subject_ids()
    } else {
        spec.held_out_subject_ids.clone()
    };
    if subjects.is_empty() {
        return Err(Error::invalid("eval.subjects", "no held-out subjects to sweep"));
    }
    let n_train = world.n_train_subjects() as u32;
    if let Some(bad) = subjects.iter().find(|&&s| s < n_train) {
        return Err(Error::invalid(
            "eval.subjects",
            format!("subject {bad} is in the training split"),
        ));
    }
    let per_subject = world.spec().contexts_per_subject as u32;
    let mut fidelities = Vec::new();
    let mut alignments = Vec::new();
    let mut ci = 0u64;
    for &subject_id in &subjects {
        for context_id in 0..per_subject {
            let cond_stream = rng.split(ci);
            let mut cue_rng = cond_stream.split(0);
            let cond = world.condition(subject_id, context_id, &mut cue_rng);
            let samples = sample_conditioned(
                ckpt,
                &cond,
                spec.n_samples,
                &spec.sampler,
                cond_stream.split(1),
            )?;
            let (f, a) = score_samples(world, subject_id, context_id, &samples);
            fidelities.extend(f);
            alignments.extend(a);
            ci += 1;
        }
    }
    let (fidelity_mean, fidelity_std) = mean_std(&fidelities);
    let (alignment_mean, alignment_std) = mean_std(&alignments);
    Ok(SweepStats {
        fidelity_mean,
        fidelity_std,
        alignment_mean,
        alignment_std,
        n: fidelities.len(),
    })
}

/// Metrics for one ablation row. Oracle columns are absent for rows whose
/// dataset has no oracle (the mode-ratio rows), and the ratio column is
/// absent for held-out sweeps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RowMetrics {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fidelity_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fidelity_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alignment_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alignment_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_mode_ratio: Option<f64>,
}

impl RowMetrics {
    pub fn from_sweep(s: &SweepStats) -> RowMetrics {
        RowMetrics {
            fidelity_mean: Some(s.fidelity_mean),
            fidelity_std: Some(s.fidelity_std),
            alignment_mean: Some(s.alignment_mean),
            alignment_std: Some(s.alignment_std),
            target_mode_ratio: None,
        }
    }

    pub fn from_ratio(ratio: f64) -> RowMetrics {
        RowMetrics {
            target_mode_ratio: Some(ratio),
            ..RowMetrics::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<RowMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub version: u32,
    pub rows: Vec<AblationRow>,
}

const CSV_HEADER: &str =
    "version,label,status,fidelity_mean,fidelity_std,alignment_mean,alignment_std,target_mode_ratio";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl AblationTable {
    /// Runs `driver` once per label, collecting failures instead of
    /// aborting; labels must be unique.
    pub fn run<L: AsRef<str>>(
        labels: &[L],
        mut driver: impl FnMut(&str) -> Result<RowMetrics>,
    ) -> Result<AblationTable> {
        let mut seen = BTreeSet::new();
        for l in labels {
            if !seen.insert(l.as_ref().to_string()) {
                return Err(Error::invalid(
                    "ablation.label",
                    format!("duplicate row label {:?}", l.as_ref()),
                ));
            }
        }
        let rows = labels
            .iter()
            .map(|l| {
                let label = l.as_ref().to_string();
                match driver(&label) {
                    Ok(metrics) => AblationRow {
                        label,
                        metrics: Some(metrics),
                        error: None,
                    },
                    Err(e) => AblationRow {
                        label,
                        metrics: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect();
        Ok(AblationTable {
            version: REPORT_VERSION,
            rows,
        })
    }

    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Metrics for a label, or an error if the row is absent or failed.
    pub fn metrics(&self, label: &str) -> Result<RowMetrics> {
        let row = self
            .row(label)
            .ok_or_else(|| Error::invalid("ablation.label", format!("no row {label:?}")))?;
        row.metrics.ok_or_else(|| {
            Error::invalid(
                "ablation.row",
                format!("row {label:?} failed: {}", row.error.as_deref().unwrap_or("unknown")),
            )
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let (status, m) = match (&r.metrics, &r.error) {
                (Some(m), _) => ("ok", Some(m)),
                (None, _) => ("failed", None),
            };
            let cell = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
            let nums = match m {
                Some(m) => format!(
                    "{},{},{},{},{}",
                    cell(m.fidelity_mean),
                    cell(m.fidelity_std),
                    cell(m.alignment_mean),
                    cell(m.alignment_std),
                    cell(m.target_mode_ratio),
                ),
                None => ",,,,".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                REPORT_VERSION,
                csv_field(&r.label),
                status,
                nums
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        manifest::write_atomic(path, self.to_csv().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::AdapterStack;
    use crate::flow::CondLayout;
    use crate::numcore::{Activation, MlpSpec, ParamSet};
    use crate::trainer::{Stage, TrainConfig};
    use crate::world::{CarMixSpec, WorldSpec};

    fn zero_checkpoint(layout: CondLayout) -> Checkpoint {
        let spec = MlpSpec::new(layout.input_dim(), vec![4], layout.data_dim, Activation::Tanh).unwrap();
        let params = ParamSet::zeros(&spec);
        Checkpoint {
            stage: Stage::Pretrain,
            iteration: 0,
            config: TrainConfig::stage_default(Stage::Pretrain, 0),
            layout,
            stack: AdapterStack::new(spec, params).unwrap(),
            rng: RngStream::root(0),
        }
    }

    #[test]
    fn eval_spec_rejects_zero_samples() {
        let mut spec = EvalSpec::default();
        assert!(spec.validate().is_ok());
        spec.n_samples = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn pinned_samples_give_unit_ratio() {
        let centers = CarMixSpec::default().mode_centers();
        let samples = vec![vec![centers[0][0], centers[0][1]]; 32];
        let out = mode_counts(&samples, &centers);
        assert_eq!(out.ratio, 1.0);
        assert_eq!(out.counts, vec![32, 0, 0, 0]);
    }

    #[test]
    fn zero_model_spreads_mass_evenly_over_modes() {
        // A zero velocity field leaves the standard normal untouched, which
        // is symmetric across the four circle centers.
        let spec = CarMixSpec::default();
        let layout = CondLayout::new(2, 0, 1);
        let ckpt = zero_checkpoint(layout);
        let eval = EvalSpec {
            n_samples: 10_000,
            sampler: SamplerConfig {
                steps: 2,
                guidance_scale: 1.0,
                cond_dropout_p: 0.1,
            },
            held_out_subject_ids: Vec::new(),
        };
        let out = target_mode_ratio(
            &ckpt,
            &spec.condition(),
            &spec.mode_centers(),
            &eval,
            RngStream::root(5).split(0),
        )
        .unwrap();
        assert_eq!(out.counts.iter().sum::<u64>(), 10_000);
        assert!((out.ratio - 0.25).abs() < 0.02, "ratio {}", out.ratio);
    }

    fn tiny_world(seed: u64) -> World {
        World::generate(
            WorldSpec {
                subject_dim: 2,
                context_dim: 2,
                n_subjects: 4,
                contexts_per_subject: 2,
                obs_noise_std: 0.02,
                cue_noise_std: 0.01,
                holdout_fraction: 0.25,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn ground_truth_scenes_score_unit_fidelity() {
        let world = tiny_world(1);
        let sid = world.holdout_subject_ids()[0];
        let scenes: Vec<Vec<f64>> = (0..4).map(|_| world.clean_scene(sid, 1)).collect();
        let (f, a) = score_samples(&world, sid, 1, &scenes);
        for v in f {
            assert!((v - 1.0).abs() < 1e-9);
        }
        for v in a {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn random_noise_scores_near_zero_fidelity() {
        let world = tiny_world(2);
        let sid = world.holdout_subject_ids()[0];
        let mut rng = RngStream::root(3).split(0);
        let n = 4000;
        let noise: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(world.data_dim())).collect();
        let (f, _) = score_samples(&world, sid, 0, &noise);
        let mean = f.iter().sum::<f64>() / n as f64;
        let bound = 3.0 / ((n * world.spec().subject_dim) as f64).sqrt();
        assert!(mean.abs() < bound, "mean {mean} bound {bound}");
    }

    #[test]
    fn sweep_is_deterministic_and_validates_split() {
        let world = tiny_world(4);
        let ckpt = zero_checkpoint(CondLayout::new(world.data_dim(), 2, 2));
        let spec = EvalSpec {
            n_samples: 3,
            sampler: SamplerConfig {
                steps: 3,
                guidance_scale: 1.0,
                cond_dropout_p: 0.1,
            },
            held_out_subject_ids: Vec::new(),
        };
        let a = subject_sweep(&ckpt, &world, &spec, RngStream::root(9).split(0)).unwrap();
        let b = subject_sweep(&ckpt, &world, &spec, RngStream::root(9).split(0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n, 3 * 2); // one held-out subject, two contexts, three samples
        let bad = EvalSpec {
            held_out_subject_ids: vec![0],
            ..spec
        };
        assert!(subject_sweep(&ckpt, &world, &bad, RngStream::root(9).split(0)).is_err());
    }

    #[test]
    fn ablation_runner_records_failures_and_rejects_duplicates() {
        let metrics = RowMetrics {
            fidelity_mean: Some(0.5),
            fidelity_std: Some(0.1),
            alignment_mean: Some(0.25),
            alignment_std: Some(0.05),
            target_mode_ratio: Some(0.75),
        };
        let table = AblationTable::run(&["good", "bad"], |label| {
            if label == "bad" {
                Err(Error::invalid("probe", "boom"))
            } else {
                Ok(metrics)
            }
        })
        .unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.metrics("good").unwrap(), metrics);
        assert!(table.metrics("bad").is_err());
        assert!(table.row("bad").unwrap().error.as_ref().unwrap().contains("boom"));
        assert!(AblationTable::run(&["x", "x"], |_| Ok(metrics)).is_err());
    }

    #[test]
    fn csv_output_is_stable() {
        let metrics = RowMetrics {
            fidelity_mean: Some(0.123456789),
            fidelity_std: Some(0.01),
            alignment_mean: Some(-0.5),
            alignment_std: Some(0.25),
            target_mode_ratio: None,
        };
        let table = AblationTable::run(&["plain", "with,comma"], |label| {
            if label == "plain" {
                Ok(metrics)
            } else {
                Err(Error::invalid("probe", "nope"))
            }
        })
        .unwrap();
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "1,plain,ok,0.123457,0.010000,-0.500000,0.250000,");
        assert_eq!(lines[2], "1,\"with,comma\",failed,,,,,");
        assert_eq!(lines.len(), 3);
    }
}
