//! Synthetic subject world with analytic fidelity and alignment oracles,
//! plus the 2-D car-color mixture for the mode-narrowing experiment.
//!
//! A scene is built by a fixed seeded orthogonal map Q applied to the
//! concatenation of a unit-norm subject vector s (first k coordinates) and a
//! unit-norm context vector c (last m coordinates), plus observation noise:
//! `x_tgt = Q concat(s, c) + eta`. Because Q is known, "how much of subject i
//! is in this scene" is an exact computation: un-mix with Q^T and take the
//! cosine of the subject block against s_i. That cosine stands in for a
//! learned image-similarity encoder, and the analogous context-block cosine
//! stands in for a text-alignment score.
//!
//! The car mixture is a 2-D Gaussian mixture with well-separated means on a
//! circle; mode 0 plays the role of the target appearance and a nearest-mean
//! classifier scores generated samples.

pub mod dataset;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, RngStream};
use crate::parallel;

mod tags {
    pub const MIXING: u64 = 0;
    pub const SUBJECTS: u64 = 1;
    pub const CONTEXTS: u64 = 2;
    pub const TRIPLETS: u64 = 3;
    pub const CARS: u64 = 4;
}

/// Conditioning record fed to the model and stored with every example.
///
/// `degraded` and `generic` describe how the embeddings were produced (clean
/// cue vs scene-derived cue, rich context vs generic token); only the raw
/// vectors and `null_flag` are visible to the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionPair {
    pub c_img: Vec<f64>,
    pub degraded: bool,
    pub c_text: Vec<f64>,
    pub generic: bool,
    pub null_flag: bool,
}

impl ConditionPair {
    pub fn new(c_img: Vec<f64>, c_text: Vec<f64>) -> Self {
        ConditionPair {
            c_img,
            degraded: false,
            c_text,
            generic: false,
            null_flag: false,
        }
    }

    /// All-zeros condition used for classifier-free guidance.
    pub fn null(img_dim: usize, text_dim: usize) -> Self {
        ConditionPair {
            c_img: vec![0.0; img_dim],
            degraded: false,
            c_text: vec![0.0; text_dim],
            generic: false,
            null_flag: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.null_flag
            && (self.c_img.iter().any(|&v| v != 0.0) || self.c_text.iter().any(|&v| v != 0.0))
        {
            return Err(Error::invalid(
                "condition.null_flag",
                "null condition must have zeroed embeddings",
            ));
        }
        Ok(())
    }
}

/// How a negative target was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Condition-degraded synthesis: scene-derived cue and generic text.
    Cdns,
    /// Degrade only the image cue.
    CdnsImgOnly,
    /// Degrade only the text embedding.
    CdnsTextOnly,
    /// Same condition as the supervised example.
    Selfplay,
    /// Two generations ranked by the fidelity oracle.
    DpoSim,
    /// Negative drawn from real data of a non-target mode (car mixture).
    DataPool,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Cdns => "cdns",
            Provenance::CdnsImgOnly => "cdns_img_only",
            Provenance::CdnsTextOnly => "cdns_text_only",
            Provenance::Selfplay => "selfplay",
            Provenance::DpoSim => "dpo_sim",
            Provenance::DataPool => "data_pool",
        }
    }
}

/// One supervised example: target scene plus its condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub x_tgt: Vec<f64>,
    pub cond: ConditionPair,
    pub subject_id: u32,
    pub context_id: u32,
}

/// A supervised example extended with a negative target.
///
/// `cond` is the condition used in the pairwise loss (shared by the positive
/// and negative passes); `synth_cond` records the condition the sampler
/// actually saw when producing `x_neg`, which differs from `cond` only for
/// the condition-degradation strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadruplet {
    pub x_tgt: Vec<f64>,
    pub x_neg: Vec<f64>,
    pub cond: ConditionPair,
    pub synth_cond: ConditionPair,
    pub subject_id: u32,
    pub context_id: u32,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub subject_dim: usize,
    pub context_dim: usize,
    pub n_subjects: usize,
    pub contexts_per_subject: usize,
    pub obs_noise_std: f64,
    pub cue_noise_std: f64,
    /// Fraction of subjects reserved for held-out evaluation.
    pub holdout_fraction: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            subject_dim: 8,
            context_dim: 8,
            n_subjects: 64,
            contexts_per_subject: 16,
            obs_noise_std: 0.02,
            cue_noise_std: 0.01,
            holdout_fraction: 0.25,
        }
    }
}

impl WorldSpec {
    pub fn data_dim(&self) -> usize {
        self.subject_dim + self.context_dim
    }

    pub fn n_records(&self) -> usize {
        self.n_subjects * self.contexts_per_subject
    }

    pub fn validate(&self) -> Result<()> {
        if self.subject_dim == 0 || self.context_dim == 0 {
            return Err(Error::invalid("world.dims", "subject and context dims must be >= 1"));
        }
        if self.n_subjects == 0 || self.contexts_per_subject == 0 {
            return Err(Error::invalid("world.counts", "subject and context counts must be >= 1"));
        }
        if !(self.obs_noise_std >= 0.0 && self.obs_noise_std.is_finite()) {
            return Err(Error::invalid("world.obs_noise_std", "must be finite and >= 0"));
        }
        if !(self.cue_noise_std >= 0.0 && self.cue_noise_std.is_finite()) {
            return Err(Error::invalid("world.cue_noise_std", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::invalid("world.holdout_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Fully realized world: mixing map plus subject and context banks.
/// Reconstructible bit-exactly from (spec, seed).
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    spec: WorldSpec,
    seed: u64,
    /// d x d, orthonormal columns.
    mixing: Matrix,
    subjects: Vec<Vec<f64>>,
    /// Indexed `[subject][context]`.
    contexts: Vec<Vec<Vec<f64>>>,
}

/// Pairwise-cosine bound enforced between generated subjects.
const SUBJECT_MAX_COSINE: f64 = 0.9;
const MAX_DRAW_ATTEMPTS: usize = 10_000;

impl World {
    pub fn generate(spec: WorldSpec, seed: u64) -> Result<World> {
        spec.validate()?;
        let root = RngStream::root(seed);
        let mixing = random_orthogonal(spec.data_dim(), &mut root.split(tags::MIXING))?;
        Self::assemble(spec, seed, mixing, root)
    }

    /// Same construction with a caller-supplied mixing map (orthogonality
    /// checked). The identity map makes scenes directly readable.
    pub fn with_mixing(spec: WorldSpec, seed: u64, mixing: Matrix) -> Result<World> {
        spec.validate()?;
        let d = spec.data_dim();
        if mixing.rows() != d || mixing.cols() != d {
            return Err(Error::shape(
                "world mixing",
                format!("{d} x {d}"),
                format!("{} x {}", mixing.rows(), mixing.cols()),
            ));
        }
        check_orthogonal(&mixing)?;
        Self::assemble(spec, seed, mixing, RngStream::root(seed))
    }

    fn assemble(spec: WorldSpec, seed: u64, mixing: Matrix, root: RngStream) -> Result<World> {
        let mut subject_rng = root.split(tags::SUBJECTS);
        let mut subjects: Vec<Vec<f64>> = Vec::with_capacity(spec.n_subjects);
        for _ in 0..spec.n_subjects {
            let mut attempts = 0;
            let s = loop {
                attempts += 1;
                if attempts > MAX_DRAW_ATTEMPTS {
                    return Err(Error::invalid(
                        "world.subjects",
                        "could not draw a subject under the pairwise-cosine bound",
                    ));
                }
                let candidate = match unit_vector(spec.subject_dim, &mut subject_rng) {
                    Some(v) => v,
                    None => continue,
                };
                let collides = subjects
                    .iter()
                    .any(|prev| dot(prev, &candidate).abs() >= SUBJECT_MAX_COSINE);
                if !collides {
                    break candidate;
                }
            };
            subjects.push(s);
        }

        let mut context_rng = root.split(tags::CONTEXTS);
        let mut contexts = Vec::with_capacity(spec.n_subjects);
        for _ in 0..spec.n_subjects {
            let mut per_subject = Vec::with_capacity(spec.contexts_per_subject);
            for _ in 0..spec.contexts_per_subject {
                let c = loop {
                    if let Some(v) = unit_vector(spec.context_dim, &mut context_rng) {
                        break v;
                    }
                };
                per_subject.push(c);
            }
            contexts.push(per_subject);
        }

        Ok(World {
            spec,
            seed,
            mixing,
            subjects,
            contexts,
        })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn data_dim(&self) -> usize {
        self.spec.data_dim()
    }

    pub fn img_dim(&self) -> usize {
        self.spec.subject_dim
    }

    pub fn text_dim(&self) -> usize {
        self.spec.context_dim
    }

    /// Subjects `0..n_train` are trainable; the rest are held out.
    pub fn n_train_subjects(&self) -> usize {
        let holdout = (self.spec.n_subjects as f64 * self.spec.holdout_fraction).round() as usize;
        self.spec.n_subjects - holdout.min(self.spec.n_subjects.saturating_sub(1))
    }

    pub fn holdout_subject_ids(&self) -> Vec<u32> {
        (self.n_train_subjects() as u32..self.spec.n_subjects as u32).collect()
    }

    pub fn subject(&self, id: u32) -> &[f64] {
        &self.subjects[id as usize]
    }

    pub fn context(&self, subject_id: u32, context_id: u32) -> &[f64] {
        &self.contexts[subject_id as usize][context_id as usize]
    }

    /// `Q v` for a full-length (k+m) vector.
    pub fn mix(&self, v: &[f64]) -> Vec<f64> {
        let d = self.data_dim();
        let q = &self.mixing;
        let mut out = vec![0.0; d];
        for r in 0..d {
            let mut acc = 0.0;
            for c in 0..d {
                acc += q.get(r, c) * v[c];
            }
            out[r] = acc;
        }
        out
    }

    /// `Q^T x`: recovers `concat(subject block, context block)`.
    pub fn unmix(&self, x: &[f64]) -> Vec<f64> {
        let d = self.data_dim();
        let q = &self.mixing;
        let mut out = vec![0.0; d];
        for c in 0..d {
            let mut acc = 0.0;
            for r in 0..d {
                acc += q.get(r, c) * x[r];
            }
            out[c] = acc;
        }
        out
    }

    /// Noise-free scene for a (subject, context) pair.
    pub fn clean_scene(&self, subject_id: u32, context_id: u32) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.data_dim());
        v.extend_from_slice(self.subject(subject_id));
        v.extend_from_slice(self.context(subject_id, context_id));
        self.mix(&v)
    }

    /// Clean subject cue: the subject vector plus small observation noise.
    pub fn clean_cue(&self, subject_id: u32, rng: &mut RngStream) -> Vec<f64> {
        self.subject(subject_id)
            .iter()
            .map(|&v| v + rng.normal(0.0, self.spec.cue_noise_std))
            .collect()
    }

    /// Scene-derived subject cue: un-mix the scene and embed its subject
    /// block with `lambda` of the context block leaking in. The leakage term
    /// is truncated or zero-padded to the cue width when k != m.
    pub fn scene_cue(&self, x_scene: &[f64], lambda: f64, rng: &mut RngStream) -> Vec<f64> {
        let unmixed = self.unmix(x_scene);
        let k = self.spec.subject_dim;
        let ctx = &unmixed[k..];
        (0..k)
            .map(|i| {
                let leak = ctx.get(i).copied().unwrap_or(0.0);
                unmixed[i] + lambda * leak + rng.normal(0.0, self.spec.cue_noise_std)
            })
            .collect()
    }

    /// Supervised condition for a (subject, context) pair.
    pub fn condition(&self, subject_id: u32, context_id: u32, rng: &mut RngStream) -> ConditionPair {
        ConditionPair::new(
            self.clean_cue(subject_id, rng),
            self.context(subject_id, context_id).to_vec(),
        )
    }

    /// Cosine between the un-mixed subject block of `x_gen` and subject
    /// `subject_id`, with the degenerate zero-norm block flagged.
    pub fn fidelity_oracle_checked(&self, x_gen: &[f64], subject_id: u32) -> (f64, bool) {
        let unmixed = self.unmix(x_gen);
        cosine_checked(&unmixed[..self.spec.subject_dim], self.subject(subject_id))
    }

    /// Subject-similarity score in [-1, 1]; 0 for a degenerate zero block.
    pub fn fidelity_oracle(&self, x_gen: &[f64], subject_id: u32) -> f64 {
        self.fidelity_oracle_checked(x_gen, subject_id).0
    }

    pub fn alignment_oracle_checked(&self, x_gen: &[f64], subject_id: u32, context_id: u32) -> (f64, bool) {
        let unmixed = self.unmix(x_gen);
        cosine_checked(
            &unmixed[self.spec.subject_dim..],
            self.context(subject_id, context_id),
        )
    }

    /// Context-alignment score in [-1, 1]; 0 for a degenerate zero block.
    pub fn alignment_oracle(&self, x_gen: &[f64], subject_id: u32, context_id: u32) -> f64 {
        self.alignment_oracle_checked(x_gen, subject_id, context_id).0
    }

    /// Cosine between the subject blocks of two scenes.
    pub fn subject_similarity(&self, x_a: &[f64], x_b: &[f64]) -> f64 {
        let a = self.unmix(x_a);
        let b = self.unmix(x_b);
        let k = self.spec.subject_dim;
        cosine_checked(&a[..k], &b[..k]).0
    }

    /// All (subject, context) records in subject-major order, each with its
    /// own rng stream keyed by record index.
    pub fn gen_triplets(&self) -> Vec<Triplet> {
        let n = self.spec.n_records();
        let per_subject = self.spec.contexts_per_subject;
        let base = RngStream::root(self.seed).split(tags::TRIPLETS);
        parallel::map_indexed(n, |i| {
            let subject_id = (i / per_subject) as u32;
            let context_id = (i % per_subject) as u32;
            let mut rng = base.split(i as u64);
            let mut x_tgt = self.clean_scene(subject_id, context_id);
            for v in &mut x_tgt {
                *v += rng.normal(0.0, self.spec.obs_noise_std);
            }
            let cond = self.condition(subject_id, context_id, &mut rng);
            Triplet {
                x_tgt,
                cond,
                subject_id,
                context_id,
            }
        })
    }
}

/// 2-D Gaussian mixture: `n_modes` means on a circle of `radius`, isotropic
/// std `sigma` per mode. Mode 0 is the target appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarMixSpec {
    pub n_modes: usize,
    pub sigma: f64,
    pub radius: f64,
    pub n_positive: usize,
    pub n_other: usize,
}

impl Default for CarMixSpec {
    fn default() -> Self {
        CarMixSpec {
            n_modes: 4,
            sigma: 0.125,
            radius: 1.0,
            n_positive: 500,
            n_other: 500,
        }
    }
}

impl CarMixSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_modes < 2 {
            return Err(Error::invalid("car.n_modes", "need at least 2 modes"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid("car.sigma", "must be finite and > 0"));
        }
        if self.n_positive == 0 || self.n_other == 0 {
            return Err(Error::invalid("car.counts", "need positive sample counts"));
        }
        // Nearest centers sit 2 r sin(pi/K) apart; require clear separation.
        let min_dist = 2.0 * self.radius * (std::f64::consts::PI / self.n_modes as f64).sin();
        if min_dist < 6.0 * self.sigma {
            return Err(Error::invalid(
                "car.radius",
                "centers closer than 6 sigma; widen radius or shrink sigma",
            ));
        }
        Ok(())
    }

    pub fn mode_centers(&self) -> Vec<[f64; 2]> {
        (0..self.n_modes)
            .map(|j| {
                let angle = 2.0 * std::f64::consts::PI * j as f64 / self.n_modes as f64;
                [self.radius * angle.cos(), self.radius * angle.sin()]
            })
            .collect()
    }

    pub fn n_records(&self) -> usize {
        self.n_positive + self.n_other
    }

    /// The single generic-token condition shared by every car example.
    pub fn condition(&self) -> ConditionPair {
        ConditionPair::new(Vec::new(), vec![1.0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarSample {
    pub x: Vec<f64>,
    pub mode: u32,
}

/// Realized mixture dataset with its centers.
#[derive(Debug, Clone, PartialEq)]
pub struct CarMixture {
    pub spec: CarMixSpec,
    pub seed: u64,
    pub centers: Vec<[f64; 2]>,
    pub samples: Vec<CarSample>,
}

/// Draws `n_positive` samples from mode 0 followed by `n_other` spread
/// round-robin over the remaining modes, each from a per-record rng stream.
pub fn gen_car_mixture(spec: CarMixSpec, seed: u64) -> Result<CarMixture> {
    spec.validate()?;
    let centers = spec.mode_centers();
    let base = RngStream::root(seed).split(tags::CARS);
    let n = spec.n_records();
    let n_positive = spec.n_positive;
    let n_modes = spec.n_modes;
    let sigma = spec.sigma;
    let samples = parallel::map_indexed(n, |i| {
        let mode = if i < n_positive {
            0
        } else {
            (1 + (i - n_positive) % (n_modes - 1)) as u32
        };
        let mut rng = base.split(i as u64);
        let center = centers[mode as usize];
        let x = vec![
            center[0] + rng.normal(0.0, sigma),
            center[1] + rng.normal(0.0, sigma),
        ];
        CarSample { x, mode }
    });
    Ok(CarMixture {
        spec,
        seed,
        centers,
        samples,
    })
}

/// Nearest-center classification; ties resolve to the lowest index.
pub fn mode_classifier(x: &[f64], centers: &[[f64; 2]]) -> usize {
    assert!(!centers.is_empty(), "mode_classifier needs centers");
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let dx = x[0] - c[0];
        let dy = x[1] - c[1];
        let d = dx * dx + dy * dy;
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; the bool flags a degenerate (zero-norm) input, which
/// scores 0 by convention.
pub fn cosine_checked(a: &[f64], b: &[f64]) -> (f64, bool) {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return (0.0, true);
    }
    ((dot(a, b) / (na * nb)).clamp(-1.0, 1.0), false)
}

fn unit_vector(dim: usize, rng: &mut RngStream) -> Option<Vec<f64>> {
    let v: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
    let norm = dot(&v, &v).sqrt();
    if norm < 1e-6 {
        return None;
    }
    Some(v.into_iter().map(|x| x / norm).collect())
}

/// Random orthogonal matrix: Gaussian columns put through modified
/// Gram-Schmidt twice (the second pass scrubs accumulated round-off).
fn random_orthogonal(d: usize, rng: &mut RngStream) -> Result<Matrix> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut attempts = 0;
    while cols.len() < d {
        attempts += 1;
        if attempts > MAX_DRAW_ATTEMPTS {
            return Err(Error::invalid(
                "world.mixing",
                "failed to draw a non-degenerate orthogonal basis",
            ));
        }
        let mut v: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        for _ in 0..2 {
            for q in &cols {
                let proj = dot(q, &v);
                for i in 0..d {
                    v[i] -= proj * q[i];
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm < 1e-8 {
            continue;
        }
        for x in &mut v {
            *x /= norm;
        }
        cols.push(v);
    }
    let q = Matrix::from_fn(d, d, |r, c| cols[c][r]);
    check_orthogonal(&q)?;
    Ok(q)
}

/// Verifies `Q^T Q == I` within 1e-10 per entry.
pub fn check_orthogonal(q: &Matrix) -> Result<()> {
    let d = q.cols();
    let qtq = q.matmul_tn(q);
    for r in 0..d {
        for c in 0..d {
            let expect = if r == c { 1.0 } else { 0.0 };
            if (qtq.get(r, c) - expect).abs() > 1e-10 {
                return Err(Error::invalid(
                    "world.mixing",
                    "mixing matrix is not orthogonal within 1e-10",
                ));
            }
        }
    }
    Ok(())
}
