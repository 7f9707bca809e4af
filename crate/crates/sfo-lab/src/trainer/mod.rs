//! Training loops for the three pipeline stages: base pretraining on the
//! broad distribution, supervised fine-tuning of a low-rank adapter on
//! positive targets, and pairwise preference fine-tuning of a second adapter
//! against a frozen reference.
//!
//! Every loop is a pure function of (inputs, config): batch selection, noise
//! draws, and condition dropout all come from per-iteration child streams of
//! the run seed, so reruns produce bit-identical checkpoints and metrics.
//! On divergence (non-finite loss or gradient) the loop restores the last
//! parameters that produced a finite loss and reports the iteration.

pub mod checkpoint;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterStack, TrainScope};
use crate::error::{Error, Result};
use crate::flow::CondLayout;
use crate::numcore::{adam_step, Activation, AdamConfig, AdamState, MlpSpec, RngStream};
use crate::objectives::{sft_loss, sfo_loss, QuadBatch};
use crate::schedule::TimestepDist;
use crate::world::dataset::Example;
use crate::world::{ConditionPair, Quadruplet};

pub use checkpoint::Checkpoint;

/// Stream tags under the run seed, one per distinct random role.
const TAG_INIT: u64 = 10;
const TAG_ATTACH: u64 = 11;
const TAG_TRAIN: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Sft,
    Sfo,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Sft => "sft",
            Stage::Sfo => "sfo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub seed: u64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Preference sharpness; used by the sfo stage only.
    pub beta: f64,
    pub timestep: TimestepDist,
    pub optimizer: AdamConfig,
    /// Rank of the adapter attached by sft/sfo; ignored by pretrain.
    pub adapter_rank: usize,
    /// Name of the adapter trained by sft/sfo; ignored by pretrain.
    pub adapter_name: String,
    pub cond_dropout_p: f64,
    /// Run the eval hook every this many iterations; 0 disables it.
    pub eval_every: usize,
    /// Base model architecture; used by pretrain only.
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    /// Zero the image-cue channel in every training condition. Used to
    /// pretrain a text-only backbone on the subject world.
    pub drop_img_cond: bool,
    /// Sfo only: train the loaded adapter set in place against a frozen
    /// snapshot instead of attaching a fresh adapter.
    pub direct: bool,
    /// Sfo only: accept quadruplet files that mix synthesis strategies.
    pub allow_mixed_provenance: bool,
}

impl TrainConfig {
    /// Defaults per stage; callers override specific fields.
    pub fn stage_default(stage: Stage, seed: u64) -> TrainConfig {
        let mut c = TrainConfig {
            stage,
            seed,
            iterations: 800,
            batch_size: 32,
            beta: 1000.0,
            timestep: TimestepDist::LogitNormal { mu: 0.0, sigma: 1.0 },
            optimizer: AdamConfig::default(),
            adapter_rank: 4,
            adapter_name: "ref".to_string(),
            cond_dropout_p: 0.1,
            eval_every: 0,
            hidden_widths: vec![64, 64],
            activation: Activation::Gelu,
            drop_img_cond: false,
            direct: false,
            allow_mixed_provenance: false,
        };
        match stage {
            Stage::Pretrain => {
                c.iterations = 2000;
                c.batch_size = 64;
                c.optimizer.lr = 3e-3;
            }
            Stage::Sft => {
                c.optimizer.lr = 3e-3;
            }
            Stage::Sfo => {
                c.iterations = 300;
                c.batch_size = 4;
                c.adapter_rank = 16;
                c.adapter_name = "sfo".to_string();
                c.optimizer.lr = 1e-4;
            }
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.timestep.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("train.batch_size", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.cond_dropout_p) {
            return Err(Error::invalid("train.cond_dropout_p", "must lie in [0, 1)"));
        }
        match self.stage {
            Stage::Pretrain => {
                if self.hidden_widths.is_empty() {
                    return Err(Error::invalid("train.hidden_widths", "need at least one hidden layer"));
                }
            }
            Stage::Sft | Stage::Sfo => {
                if self.adapter_name.is_empty() {
                    return Err(Error::invalid("train.adapter_name", "must be nonempty"));
                }
                if self.adapter_rank == 0 && !self.direct {
                    return Err(Error::invalid("train.adapter_rank", "must be >= 1"));
                }
            }
        }
        if self.stage == Stage::Sfo && !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::invalid("train.beta", "must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalBlock {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fidelity_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alignment_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_mode_ratio: Option<f64>,
}

/// One JSONL metrics line. Wall time is tracked in memory but never
/// serialized, keeping metrics files byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_delta_policy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_delta_ref: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_inner: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub implicit_accuracy: Option<f64>,
    #[serde(skip, default)]
    pub wall_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval: Option<EvalBlock>,
}

impl MetricsRecord {
    fn new(iteration: usize, loss: f64) -> MetricsRecord {
        MetricsRecord {
            iteration,
            loss,
            mean_delta_policy: None,
            mean_delta_ref: None,
            mean_inner: None,
            implicit_accuracy: None,
            wall_ms: 0,
            eval: None,
        }
    }
}

/// Append-only JSONL writer enforcing strictly increasing iterations.
pub struct MetricsWriter {
    out: std::io::BufWriter<std::fs::File>,
    path: PathBuf,
    last: Option<usize>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<MetricsWriter> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            out: std::io::BufWriter::new(file),
            path: path.to_path_buf(),
            last: None,
        })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        if let Some(last) = self.last {
            if record.iteration <= last {
                return Err(Error::invalid(
                    "metrics.iteration",
                    format!("iteration {} not above previous {last}", record.iteration),
                ));
            }
        }
        self.last = Some(record.iteration);
        let line = serde_json::to_string(record).map_err(|e| Error::json(&self.path, e))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a metrics JSONL file back into records.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

/// Per-iteration callbacks. `metrics` receives every record in order;
/// `eval` runs every `eval_every` iterations on the post-update model.
#[derive(Default)]
pub struct TrainHooks<'a> {
    #[allow(clippy::type_complexity)]
    pub metrics: Option<&'a mut dyn FnMut(&MetricsRecord) -> Result<()>>,
    #[allow(clippy::type_complexity)]
    pub eval: Option<&'a mut dyn FnMut(&AdapterStack, &BTreeSet<String>) -> Result<EvalBlock>>,
}

impl TrainHooks<'_> {
    pub fn none() -> Self {
        TrainHooks::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub checkpoint: Checkpoint,
    /// Iteration at which training hit a non-finite loss or gradient, if any.
    /// The checkpoint then holds the last parameters with a finite loss.
    pub diverged_at: Option<usize>,
}

fn check_examples(examples: &[Example], layout: &CondLayout) -> Result<()> {
    let first = examples
        .first()
        .ok_or_else(|| Error::invalid("train.dataset", "empty example set"))?;
    if first.x_tgt.len() != layout.data_dim
        || first.cond.c_img.len() != layout.img_dim
        || first.cond.c_text.len() != layout.text_dim
    {
        return Err(Error::shape(
            "train.dataset",
            format!("dims {}/{}/{}", layout.data_dim, layout.img_dim, layout.text_dim),
            format!(
                "dims {}/{}/{}",
                first.x_tgt.len(),
                first.cond.c_img.len(),
                first.cond.c_text.len()
            ),
        ));
    }
    Ok(())
}

/// Applies the image-channel drop and condition dropout to one condition.
fn adjust_condition(
    cond: &ConditionPair,
    layout: &CondLayout,
    drop_img: bool,
    dropped: bool,
) -> ConditionPair {
    if dropped {
        return layout.null_condition();
    }
    let mut c = cond.clone();
    if drop_img {
        c.c_img = vec![0.0; c.c_img.len()];
    }
    c
}

struct SupervisedBatch {
    x: Vec<Vec<f64>>,
    conds: Vec<ConditionPair>,
    t: Vec<f64>,
    eps: Vec<Vec<f64>>,
}

/// Slot j of an iteration draws, in order: its example index from the shared
/// selection stream, then (t, eps, dropout coin) from its own noise stream.
fn draw_supervised_batch(
    examples: &[Example],
    layout: &CondLayout,
    config: &TrainConfig,
    it_stream: RngStream,
) -> SupervisedBatch {
    let mut sel = it_stream.split(0);
    let noise = it_stream.split(1);
    let b = config.batch_size;
    let mut x = Vec::with_capacity(b);
    let mut conds = Vec::with_capacity(b);
    let mut t = Vec::with_capacity(b);
    let mut eps = Vec::with_capacity(b);
    for j in 0..b {
        let ex = &examples[sel.index(examples.len())];
        let mut slot = noise.split(j as u64);
        t.push(config.timestep.sample_t(&mut slot));
        eps.push(slot.normal_vec(layout.data_dim));
        let dropped = slot.next_f64() < config.cond_dropout_p;
        conds.push(adjust_condition(&ex.cond, layout, config.drop_img_cond, dropped));
        x.push(ex.x_tgt.clone());
    }
    SupervisedBatch { x, conds, t, eps }
}

/// Shared supervised loop body for pretrain and sft.
#[allow(clippy::too_many_arguments)]
fn supervised_loop(
    stack: &mut AdapterStack,
    enabled: &BTreeSet<String>,
    scope: &TrainScope,
    examples: &[Example],
    layout: &CondLayout,
    config: &TrainConfig,
    hooks: &mut TrainHooks,
) -> Result<Option<usize>> {
    let mut params = stack.read_scope(scope)?;
    let mut adam = AdamState::new(params.len());
    let mut last_good = params.clone();
    let train_base = RngStream::root(config.seed).split(TAG_TRAIN);
    for i in 0..config.iterations {
        let started = std::time::Instant::now();
        let batch = draw_supervised_batch(examples, layout, config, train_base.split(i as u64));
        let xr: Vec<&[f64]> = batch.x.iter().map(|v| v.as_slice()).collect();
        let er: Vec<&[f64]> = batch.eps.iter().map(|v| v.as_slice()).collect();
        let cr: Vec<&ConditionPair> = batch.conds.iter().collect();
        let outcome = sft_loss(stack, enabled, layout, scope, &xr, &cr, &batch.t, &er)
            .map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { iteration: i as u64 },
                other => other,
            });
        let step = outcome.and_then(|(value, grads)| {
            if !value.is_finite() {
                return Err(Error::Diverged { iteration: i as u64 });
            }
            let mut flat = Vec::with_capacity(params.len());
            grads.write_flat(&mut flat);
            last_good.copy_from_slice(&params);
            adam_step(&mut params, &flat, &mut adam, &config.optimizer)
                .map_err(|_| Error::Diverged { iteration: i as u64 })?;
            stack.write_scope(scope, &params)?;
            Ok(value)
        });
        let value = match step {
            Ok(v) => v,
            Err(Error::Diverged { iteration }) => {
                stack.write_scope(scope, &last_good)?;
                return Ok(Some(iteration as usize));
            }
            Err(other) => return Err(other),
        };
        let mut record = MetricsRecord::new(i, value);
        record.wall_ms = started.elapsed().as_millis() as u64;
        if config.eval_every > 0 && (i + 1) % config.eval_every == 0 {
            if let Some(eval) = hooks.eval.as_mut() {
                record.eval = Some(eval(stack, enabled)?);
            }
        }
        if let Some(sink) = hooks.metrics.as_mut() {
            sink(&record)?;
        }
    }
    Ok(None)
}

/// Trains the base model on the broad distribution with Adam and condition
/// dropout. No adapters are attached.
pub fn pretrain_base(
    examples: &[Example],
    layout: CondLayout,
    config: &TrainConfig,
    hooks: &mut TrainHooks,
) -> Result<TrainResult> {
    if config.stage != Stage::Pretrain {
        return Err(Error::invalid("train.stage", "pretrain_base needs stage = pretrain"));
    }
    config.validate()?;
    check_examples(examples, &layout)?;
    let spec = MlpSpec::new(
        layout.input_dim(),
        config.hidden_widths.clone(),
        layout.data_dim,
        config.activation,
    )?;
    let mut init_rng = RngStream::root(config.seed).split(TAG_INIT);
    let mut stack = AdapterStack::init(spec, &mut init_rng)?;
    let enabled = BTreeSet::new();
    let scope = TrainScope::base_only();
    let diverged_at = supervised_loop(&mut stack, &enabled, &scope, examples, &layout, config, hooks)?;
    Ok(TrainResult {
        checkpoint: Checkpoint {
            stage: Stage::Pretrain,
            iteration: diverged_at.unwrap_or(config.iterations),
            config: config.clone(),
            layout,
            stack,
            rng: RngStream::root(config.seed),
        },
        diverged_at,
    })
}

/// Attaches a fresh low-rank adapter to the checkpointed model and trains
/// only it with the supervised loss on positive targets.
pub fn train_sft(
    ckpt: &Checkpoint,
    examples: &[Example],
    config: &TrainConfig,
    hooks: &mut TrainHooks,
) -> Result<TrainResult> {
    if config.stage != Stage::Sft {
        return Err(Error::invalid("train.stage", "train_sft needs stage = sft"));
    }
    config.validate()?;
    ckpt.validate()?;
    let layout = ckpt.layout;
    check_examples(examples, &layout)?;
    let mut stack = ckpt.stack.clone();
    let mut attach_rng = RngStream::root(config.seed).split(TAG_ATTACH);
    stack.attach(&config.adapter_name, config.adapter_rank, &mut attach_rng)?;
    let enabled = stack.enabled().clone();
    let scope = TrainScope::adapter(&config.adapter_name);
    let diverged_at = supervised_loop(&mut stack, &enabled, &scope, examples, &layout, config, hooks)?;
    Ok(TrainResult {
        checkpoint: Checkpoint {
            stage: Stage::Sft,
            iteration: diverged_at.unwrap_or(config.iterations),
            config: config.clone(),
            layout,
            stack,
            rng: RngStream::root(config.seed),
        },
        diverged_at,
    })
}

/// Trains an adapter with the pairwise preference loss against the frozen
/// reference defined by the loaded checkpoint's enabled set.
///
/// Default mode attaches a fresh adapter; the policy is reference plus the
/// new adapter and the reference pass reuses the same frozen weights. Direct
/// mode instead trains the loaded adapter set in place against a frozen
/// snapshot of itself.
pub fn train_sfo(
    ckpt: &Checkpoint,
    quads: &[Quadruplet],
    config: &TrainConfig,
    hooks: &mut TrainHooks,
) -> Result<TrainResult> {
    if config.stage != Stage::Sfo {
        return Err(Error::invalid("train.stage", "train_sfo needs stage = sfo"));
    }
    config.validate()?;
    ckpt.validate()?;
    let layout = ckpt.layout;
    if quads.is_empty() {
        return Err(Error::invalid("train.dataset", "empty quadruplet set"));
    }
    if !config.allow_mixed_provenance {
        let first = quads[0].provenance;
        if let Some(bad) = quads.iter().find(|q| q.provenance != first) {
            return Err(Error::invalid(
                "train.provenance",
                format!("mixed strategies {} and {}", first.as_str(), bad.provenance.as_str()),
            ));
        }
    }
    if quads[0].x_tgt.len() != layout.data_dim {
        return Err(Error::shape(
            "train.dataset",
            format!("data_dim {}", layout.data_dim),
            format!("{}", quads[0].x_tgt.len()),
        ));
    }
    let mut stack = ckpt.stack.clone();
    let ref_enabled = stack.enabled().clone();
    let frozen: Option<AdapterStack>;
    let policy_enabled;
    if config.direct {
        if !ref_enabled.contains(&config.adapter_name) {
            return Err(Error::invalid(
                "train.direct",
                format!("adapter {:?} not enabled in the checkpoint", config.adapter_name),
            ));
        }
        frozen = Some(stack.clone());
        policy_enabled = ref_enabled.clone();
    } else {
        let mut attach_rng = RngStream::root(config.seed).split(TAG_ATTACH);
        stack.attach(&config.adapter_name, config.adapter_rank, &mut attach_rng)?;
        frozen = None;
        policy_enabled = stack.enabled().clone();
    }
    let scope = TrainScope::adapter(&config.adapter_name);
    let mut params = stack.read_scope(&scope)?;
    let mut adam = AdamState::new(params.len());
    let mut last_good = params.clone();
    let mut diverged_at = None;
    let train_base = RngStream::root(config.seed).split(TAG_TRAIN);
    for i in 0..config.iterations {
        let started = std::time::Instant::now();
        let it_stream = train_base.split(i as u64);
        let mut sel = it_stream.split(0);
        let records: Vec<&Quadruplet> = (0..config.batch_size)
            .map(|_| &quads[sel.index(quads.len())])
            .collect();
        let mut batch = QuadBatch::draw(&records, &config.timestep, it_stream.split(1))?;
        for cond in batch.cond.iter_mut() {
            let dropped = sel.next_f64() < config.cond_dropout_p;
            *cond = adjust_condition(cond, &layout, config.drop_img_cond, dropped);
        }
        let ref_stack = frozen.as_ref().unwrap_or(&stack);
        let outcome = sfo_loss(
            &stack,
            &policy_enabled,
            ref_stack,
            &ref_enabled,
            &layout,
            &scope,
            &batch,
            config.beta,
        )
        .map_err(|e| match e {
            Error::NonFinite { .. } => Error::Diverged { iteration: i as u64 },
            other => other,
        });
        let step = outcome.and_then(|(out, grads)| {
            if !out.value.is_finite() {
                return Err(Error::Diverged { iteration: i as u64 });
            }
            let mut flat = Vec::with_capacity(params.len());
            grads.write_flat(&mut flat);
            last_good.copy_from_slice(&params);
            adam_step(&mut params, &flat, &mut adam, &config.optimizer)
                .map_err(|_| Error::Diverged { iteration: i as u64 })?;
            stack.write_scope(&scope, &params)?;
            Ok(out)
        });
        let out = match step {
            Ok(v) => v,
            Err(Error::Diverged { iteration }) => {
                stack.write_scope(&scope, &last_good)?;
                diverged_at = Some(iteration as usize);
                break;
            }
            Err(other) => return Err(other),
        };
        let mut record = MetricsRecord::new(i, out.value);
        record.mean_delta_policy = Some(out.mean_delta_policy());
        record.mean_delta_ref = Some(out.mean_delta_ref());
        record.mean_inner = Some(out.mean_inner());
        record.implicit_accuracy = Some(out.implicit_accuracy());
        record.wall_ms = started.elapsed().as_millis() as u64;
        if config.eval_every > 0 && (i + 1) % config.eval_every == 0 {
            if let Some(eval) = hooks.eval.as_mut() {
                record.eval = Some(eval(&stack, &policy_enabled)?);
            }
        }
        if let Some(sink) = hooks.metrics.as_mut() {
            sink(&record)?;
        }
    }
    Ok(TrainResult {
        checkpoint: Checkpoint {
            stage: Stage::Sfo,
            iteration: diverged_at.unwrap_or(config.iterations),
            config: config.clone(),
            layout,
            stack,
            rng: RngStream::root(config.seed),
        },
        diverged_at,
    })
}
