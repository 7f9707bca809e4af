//! Negative-target synthesis for pairwise fine-tuning.
//!
//! Strategies: condition-degraded synthesis (sample a negative under a
//! scene-entangled subject cue and a generic text embedding), naive
//! self-play (sample under the unchanged supervised condition), two
//! single-degradation variants, and oracle-ranked generation pairs. A
//! data-pool pairing covers the 2-D mixture, where negatives are real
//! samples from non-target modes.
//!
//! Synthesis is pure per record: each emitted quadruplet is a function of
//! the model, the source triplet, and its own rng stream, so output files
//! are byte-identical across runs and thread counts.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapters::AdapterStack;
use crate::error::{Error, Result};
use crate::flow::{euler_sample, CondLayout, SamplerConfig};
use crate::numcore::RngStream;
use crate::parallel;
use crate::world::{CarMixture, ConditionPair, Provenance, Quadruplet, Triplet, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Cdns,
    Selfplay,
    DpoSim,
    CdnsImgOnly,
    CdnsTextOnly,
}

impl Strategy {
    pub fn provenance(self) -> Provenance {
        match self {
            Strategy::Cdns => Provenance::Cdns,
            Strategy::Selfplay => Provenance::Selfplay,
            Strategy::DpoSim => Provenance::DpoSim,
            Strategy::CdnsImgOnly => Provenance::CdnsImgOnly,
            Strategy::CdnsTextOnly => Provenance::CdnsTextOnly,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Cdns => "cdns",
            Strategy::Selfplay => "selfplay",
            Strategy::DpoSim => "dpo-sim",
            Strategy::CdnsImgOnly => "cdns-img-only",
            Strategy::CdnsTextOnly => "cdns-text-only",
        }
    }

    pub const ALL: [Strategy; 5] = [
        Strategy::Cdns,
        Strategy::Selfplay,
        Strategy::DpoSim,
        Strategy::CdnsImgOnly,
        Strategy::CdnsTextOnly,
    ];
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid("strategy", format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub strategy: Strategy,
    pub sampler: SamplerConfig,
    /// Quadruplets emitted per source triplet.
    pub n_per_triplet: usize,
    /// Context leakage blended into the scene-derived cue.
    pub lambda: f64,
    /// Drop pairs whose positive-negative subject similarity exceeds this
    /// bound. Off by default: negatives are used without filtering.
    pub max_similarity: Option<f64>,
}

impl SynthConfig {
    pub fn new(strategy: Strategy) -> Self {
        SynthConfig {
            strategy,
            sampler: SamplerConfig::default(),
            n_per_triplet: 1,
            lambda: 0.5,
            max_similarity: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if self.n_per_triplet == 0 {
            return Err(Error::invalid("synth.n_per_triplet", "must be >= 1"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid("synth.lambda", "must be finite and >= 0"));
        }
        if let Some(m) = self.max_similarity {
            if !(-1.0..=1.0).contains(&m) {
                return Err(Error::invalid("synth.max_similarity", "must lie in [-1, 1]"));
            }
        }
        Ok(())
    }
}

/// Builds the degraded condition for a strategy. The scene-derived cue
/// entangles the subject with `lambda` of its context; the generic text is
/// an exact zero vector.
fn degraded_condition(
    world: &World,
    triplet: &Triplet,
    strategy: Strategy,
    lambda: f64,
    cue_rng: &mut RngStream,
) -> ConditionPair {
    let mut cond = triplet.cond.clone();
    if matches!(strategy, Strategy::Cdns | Strategy::CdnsImgOnly) {
        cond.c_img = world.scene_cue(&triplet.x_tgt, lambda, cue_rng);
        cond.degraded = true;
    }
    if matches!(strategy, Strategy::Cdns | Strategy::CdnsTextOnly) {
        cond.c_text = vec![0.0; cond.c_text.len()];
        cond.generic = true;
    }
    cond
}

/// Orders two generations by fidelity; an exact tie keeps the first as the
/// positive.
pub fn rank_by_fidelity(
    first: Vec<f64>,
    first_fidelity: f64,
    second: Vec<f64>,
    second_fidelity: f64,
) -> (Vec<f64>, Vec<f64>) {
    if second_fidelity > first_fidelity {
        (second, first)
    } else {
        (first, second)
    }
}

/// Synthesizes the negatives for one triplet under one rng stream.
///
/// Sub-streams: 0 is sampler noise, 1 is cue noise, 2 is the second
/// generation for oracle-ranked pairs.
pub fn synth_one(
    stack: &AdapterStack,
    enabled: &BTreeSet<String>,
    world: &World,
    triplet: &Triplet,
    config: &SynthConfig,
    rng: RngStream,
) -> Result<Quadruplet> {
    let layout = CondLayout::new(
        world.data_dim(),
        world.spec().subject_dim,
        world.spec().context_dim,
    );
    let model = crate::flow::CondModel {
        stack,
        layout,
        enabled,
    };
    match config.strategy {
        Strategy::Selfplay => {
            let x_neg = euler_sample(&model, &triplet.cond, &config.sampler, rng.split(0))?;
            Ok(Quadruplet {
                x_tgt: triplet.x_tgt.clone(),
                x_neg,
                cond: triplet.cond.clone(),
                synth_cond: triplet.cond.clone(),
                subject_id: triplet.subject_id,
                context_id: triplet.context_id,
                provenance: Provenance::Selfplay,
            })
        }
        Strategy::Cdns | Strategy::CdnsImgOnly | Strategy::CdnsTextOnly => {
            let mut cue_rng = rng.split(1);
            let synth_cond = degraded_condition(world, triplet, config.strategy, config.lambda, &mut cue_rng);
            let x_neg = euler_sample(&model, &synth_cond, &config.sampler, rng.split(0))?;
            Ok(Quadruplet {
                x_tgt: triplet.x_tgt.clone(),
                x_neg,
                cond: triplet.cond.clone(),
                synth_cond,
                subject_id: triplet.subject_id,
                context_id: triplet.context_id,
                provenance: config.strategy.provenance(),
            })
        }
        Strategy::DpoSim => {
            let first = euler_sample(&model, &triplet.cond, &config.sampler, rng.split(0))?;
            let second = euler_sample(&model, &triplet.cond, &config.sampler, rng.split(2))?;
            let f_first = world.fidelity_oracle(&first, triplet.subject_id);
            let f_second = world.fidelity_oracle(&second, triplet.subject_id);
            let (x_tgt, x_neg) = rank_by_fidelity(first, f_first, second, f_second);
            Ok(Quadruplet {
                x_tgt,
                x_neg,
                cond: triplet.cond.clone(),
                synth_cond: triplet.cond.clone(),
                subject_id: triplet.subject_id,
                context_id: triplet.context_id,
                provenance: Provenance::DpoSim,
            })
        }
    }
}

/// Synthesizes `n_per_triplet` negatives for every triplet. Record (i, j)
/// uses stream `base.split(i * n_per_triplet + j)`, so the output is a pure
/// function of the inputs and survives any thread count.
pub fn synth_negatives(
    stack: &AdapterStack,
    enabled: &BTreeSet<String>,
    world: &World,
    triplets: &[Triplet],
    config: &SynthConfig,
    base: RngStream,
) -> Result<Vec<Quadruplet>> {
    config.validate()?;
    let per = config.n_per_triplet;
    let n = triplets.len() * per;
    let results = parallel::map_indexed(n, |i| {
        let triplet = &triplets[i / per];
        synth_one(stack, enabled, world, triplet, config, base.split(i as u64))
    });
    let mut out = Vec::with_capacity(n);
    for r in results {
        out.push(r?);
    }
    if let Some(max_sim) = config.max_similarity {
        out.retain(|q| world.subject_similarity(&q.x_tgt, &q.x_neg) <= max_sim);
    }
    Ok(out)
}

/// Pairs each mode-0 car sample with a non-target-mode sample from the data
/// pool, round-robin so every pool sample is reused evenly.
pub fn pair_cars_with_data_pool(mix: &CarMixture) -> Result<Vec<Quadruplet>> {
    let positives: Vec<&crate::world::CarSample> =
        mix.samples.iter().filter(|s| s.mode == 0).collect();
    let pool: Vec<&crate::world::CarSample> = mix.samples.iter().filter(|s| s.mode != 0).collect();
    if positives.is_empty() || pool.is_empty() {
        return Err(Error::invalid(
            "pair_cars",
            "need at least one positive and one non-target sample",
        ));
    }
    let cond = mix.spec.condition();
    Ok(positives
        .iter()
        .enumerate()
        .map(|(i, pos)| Quadruplet {
            x_tgt: pos.x.clone(),
            x_neg: pool[i % pool.len()].x.clone(),
            cond: cond.clone(),
            synth_cond: cond.clone(),
            subject_id: 0,
            context_id: pool[i % pool.len()].mode,
            provenance: Provenance::DataPool,
        })
        .collect())
}

pub const GAP_BINS: usize = 50;
const GAP_BIN_WIDTH: f64 = 2.0 / GAP_BINS as f64;

/// Distribution of positive-negative subject similarity over a pair set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    /// Bin i counts similarities in [-1 + 0.04 i, -1 + 0.04 (i + 1)); the
    /// final bin also includes 1.0.
    pub histogram: Vec<u64>,
}

/// Bin index for a similarity in [-1, 1].
pub fn gap_bin_index(sim: f64) -> usize {
    let i = ((sim + 1.0) / GAP_BIN_WIDTH).floor() as isize;
    i.clamp(0, GAP_BINS as isize - 1) as usize
}

impl GapStats {
    pub fn from_similarities(sims: &[f64]) -> Result<GapStats> {
        if sims.is_empty() {
            return Err(Error::invalid("gap_stats", "empty pair set"));
        }
        let n = sims.len() as f64;
        let mean = sims.iter().sum::<f64>() / n;
        let var = sims.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        let mut histogram = vec![0u64; GAP_BINS];
        for &s in sims {
            histogram[gap_bin_index(s)] += 1;
        }
        Ok(GapStats {
            count: sims.len(),
            mean,
            std: var.sqrt(),
            histogram,
        })
    }

    /// Fraction of pairs with similarity below `edge`, which must sit on a
    /// bin boundary (a multiple of 0.04 from -1).
    pub fn mass_below(&self, edge: f64) -> f64 {
        let cut = ((edge + 1.0) / GAP_BIN_WIDTH).round() as usize;
        let below: u64 = self.histogram[..cut.min(GAP_BINS)].iter().sum();
        below as f64 / self.count as f64
    }
}

/// Similarity distribution between positive and negative targets, measured
/// on un-mixed subject blocks.
pub fn pair_gap_stats(quads: &[Quadruplet], world: &World) -> Result<GapStats> {
    let sims: Vec<f64> = quads
        .iter()
        .map(|q| world.subject_similarity(&q.x_tgt, &q.x_neg))
        .collect();
    GapStats::from_similarities(&sims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Activation, Matrix, MlpSpec};
    use crate::world::WorldSpec;

    fn small_world(seed: u64) -> World {
        let spec = WorldSpec {
            subject_dim: 2,
            context_dim: 2,
            n_subjects: 4,
            contexts_per_subject: 2,
            obs_noise_std: 0.02,
            cue_noise_std: 0.01,
            holdout_fraction: 0.25,
        };
        World::generate(spec, seed).unwrap()
    }

    fn small_stack(seed: u64, world: &World) -> AdapterStack {
        let layout = CondLayout::new(
            world.data_dim(),
            world.spec().subject_dim,
            world.spec().context_dim,
        );
        let spec = MlpSpec::new(layout.input_dim(), vec![8], layout.data_dim, Activation::Tanh).unwrap();
        let mut rng = RngStream::root(seed).split(0);
        AdapterStack::init(spec, &mut rng).unwrap()
    }

    fn fast_config(strategy: Strategy) -> SynthConfig {
        let mut c = SynthConfig::new(strategy);
        c.sampler.steps = 4;
        c.sampler.guidance_scale = 1.0;
        c
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(Strategy::from_str(s.as_str()).unwrap(), s);
        }
        assert!(Strategy::from_str("bogus").is_err());
        let json = serde_json::to_string(&Strategy::CdnsImgOnly).unwrap();
        assert_eq!(json, "\"cdns-img-only\"");
    }

    #[test]
    fn selfplay_reuses_the_supervised_condition() {
        let world = small_world(1);
        let stack = small_stack(2, &world);
        let triplet = &world.gen_triplets()[0];
        let enabled = BTreeSet::new();
        let config = fast_config(Strategy::Selfplay);
        let rng = RngStream::root(3).split(0);
        let q = synth_one(&stack, &enabled, &world, triplet, &config, rng).unwrap();
        assert_eq!(q.synth_cond, triplet.cond);
        assert_eq!(q.cond, triplet.cond);
        assert_eq!(q.x_tgt, triplet.x_tgt);
        assert_eq!(q.provenance, Provenance::Selfplay);
        // Same stream, same output.
        let again = synth_one(&stack, &enabled, &world, triplet, &config, rng).unwrap();
        assert_eq!(q, again);
    }

    #[test]
    fn cdns_degrades_both_channels() {
        let world = small_world(4);
        let stack = small_stack(5, &world);
        let triplets = world.gen_triplets();
        let triplet = &triplets[1];
        let before = triplet.clone();
        let enabled = BTreeSet::new();
        let config = fast_config(Strategy::Cdns);
        let q = synth_one(&stack, &enabled, &world, triplet, &config, RngStream::root(6).split(0)).unwrap();
        assert!(q.synth_cond.degraded);
        assert!(q.synth_cond.generic);
        assert!(q.synth_cond.c_text.iter().all(|&v| v == 0.0));
        assert_ne!(q.synth_cond.c_img, triplet.cond.c_img);
        // The training condition and the source triplet are untouched.
        assert_eq!(q.cond, triplet.cond);
        assert!(!q.cond.degraded && !q.cond.generic);
        assert_eq!(*triplet, before);
        assert_eq!(q.provenance, Provenance::Cdns);
    }

    #[test]
    fn single_degradation_variants_touch_one_channel() {
        let world = small_world(7);
        let stack = small_stack(8, &world);
        let triplet = &world.gen_triplets()[2];
        let enabled = BTreeSet::new();
        let rng = RngStream::root(9).split(0);
        let img = synth_one(&stack, &enabled, &world, triplet, &fast_config(Strategy::CdnsImgOnly), rng).unwrap();
        assert!(img.synth_cond.degraded && !img.synth_cond.generic);
        assert_eq!(img.synth_cond.c_text, triplet.cond.c_text);
        assert_eq!(img.provenance, Provenance::CdnsImgOnly);
        let text = synth_one(&stack, &enabled, &world, triplet, &fast_config(Strategy::CdnsTextOnly), rng).unwrap();
        assert!(!text.synth_cond.degraded && text.synth_cond.generic);
        assert_eq!(text.synth_cond.c_img, triplet.cond.c_img);
        assert!(text.synth_cond.c_text.iter().all(|&v| v == 0.0));
        assert_eq!(text.provenance, Provenance::CdnsTextOnly);
    }

    #[test]
    fn dpo_sim_orders_by_fidelity_oracle() {
        let world = small_world(10);
        let stack = small_stack(11, &world);
        let triplets = world.gen_triplets();
        let enabled = BTreeSet::new();
        let config = fast_config(Strategy::DpoSim);
        for (i, triplet) in triplets.iter().take(6).enumerate() {
            let q = synth_one(&stack, &enabled, &world, triplet, &config, RngStream::root(12).split(i as u64)).unwrap();
            let f_pos = world.fidelity_oracle(&q.x_tgt, q.subject_id);
            let f_neg = world.fidelity_oracle(&q.x_neg, q.subject_id);
            assert!(f_pos >= f_neg, "pair {i}: {f_pos} < {f_neg}");
            assert_ne!(q.x_tgt, triplet.x_tgt);
            assert_eq!(q.provenance, Provenance::DpoSim);
        }
    }

    #[test]
    fn exact_tie_keeps_first_generation_positive() {
        let a = vec![1.0, 2.0];
        let b = vec![3.0, 4.0];
        let (pos, neg) = rank_by_fidelity(a.clone(), 0.7, b.clone(), 0.7);
        assert_eq!(pos, a);
        assert_eq!(neg, b);
        let (pos, neg) = rank_by_fidelity(a.clone(), 0.2, b.clone(), 0.9);
        assert_eq!(pos, b);
        assert_eq!(neg, a);
    }

    #[test]
    fn batch_synthesis_matches_per_record_calls() {
        let world = small_world(13);
        let stack = small_stack(14, &world);
        let triplets: Vec<Triplet> = world.gen_triplets().into_iter().take(3).collect();
        let enabled = BTreeSet::new();
        let mut config = fast_config(Strategy::Cdns);
        config.n_per_triplet = 2;
        let base = RngStream::root(15).split(0);
        let batch = synth_negatives(&stack, &enabled, &world, &triplets, &config, base).unwrap();
        assert_eq!(batch.len(), 6);
        for (i, q) in batch.iter().enumerate() {
            let single = synth_one(&stack, &enabled, &world, &triplets[i / 2], &config, base.split(i as u64)).unwrap();
            assert_eq!(*q, single);
        }
        // Two negatives for one triplet use different noise.
        assert_ne!(batch[0].x_neg, batch[1].x_neg);
    }

    #[test]
    fn similarity_filter_drops_close_pairs_only_when_set() {
        let world = small_world(16);
        let stack = small_stack(17, &world);
        let triplets: Vec<Triplet> = world.gen_triplets().into_iter().take(4).collect();
        let enabled = BTreeSet::new();
        let mut config = fast_config(Strategy::Selfplay);
        let base = RngStream::root(18).split(0);
        let kept = synth_negatives(&stack, &enabled, &world, &triplets, &config, base).unwrap();
        assert_eq!(kept.len(), 4);
        config.max_similarity = Some(-1.0);
        let filtered = synth_negatives(&stack, &enabled, &world, &triplets, &config, base).unwrap();
        assert!(filtered.len() < kept.len());
    }

    #[test]
    fn car_pairs_draw_negatives_from_other_modes() {
        let mut spec = crate::world::CarMixSpec::default();
        spec.n_positive = 6;
        spec.n_other = 4;
        let mix = crate::world::gen_car_mixture(spec, 19).unwrap();
        let quads = pair_cars_with_data_pool(&mix).unwrap();
        assert_eq!(quads.len(), 6);
        for q in &quads {
            assert_eq!(q.provenance, Provenance::DataPool);
            assert_ne!(q.context_id, 0);
            assert_eq!(q.cond, mix.spec.condition());
        }
        // Round-robin reuse of the 4-sample pool.
        assert_eq!(quads[0].x_neg, quads[4].x_neg);
    }

    #[test]
    fn gap_bins_cover_the_similarity_range() {
        assert_eq!(gap_bin_index(-1.0), 0);
        assert_eq!(gap_bin_index(-0.9601), 0);
        assert_eq!(gap_bin_index(-0.96), 1);
        assert_eq!(gap_bin_index(0.8), 45);
        assert_eq!(gap_bin_index(0.9999), 49);
        assert_eq!(gap_bin_index(1.0), 49);
    }

    #[test]
    fn identical_pairs_give_unit_mean_zero_std() {
        let world = small_world(20);
        let triplets = world.gen_triplets();
        let quads: Vec<Quadruplet> = triplets
            .iter()
            .take(3)
            .map(|t| Quadruplet {
                x_tgt: t.x_tgt.clone(),
                x_neg: t.x_tgt.clone(),
                cond: t.cond.clone(),
                synth_cond: t.cond.clone(),
                subject_id: t.subject_id,
                context_id: t.context_id,
                provenance: Provenance::Selfplay,
            })
            .collect();
        let stats = pair_gap_stats(&quads, &world).unwrap();
        assert!((stats.mean - 1.0).abs() < 1e-12);
        assert!(stats.std < 1e-9);
        assert_eq!(stats.histogram.iter().sum::<u64>(), 3);
        assert_eq!(stats.histogram[49], 3);
    }

    #[test]
    fn hand_built_similarities_give_half_mean() {
        let world = {
            let spec = WorldSpec {
                subject_dim: 2,
                context_dim: 2,
                n_subjects: 4,
                contexts_per_subject: 2,
                obs_noise_std: 0.02,
                cue_noise_std: 0.01,
                holdout_fraction: 0.25,
            };
            let q = Matrix::from_fn(4, 4, |r, c| f64::from(r == c));
            World::with_mixing(spec, 21, q).unwrap()
        };
        // Identity mixing makes un-mixed blocks equal the raw coordinates.
        let cond = ConditionPair::new(vec![0.0; 2], vec![0.0; 2]);
        let make = |x_tgt: Vec<f64>, x_neg: Vec<f64>| Quadruplet {
            x_tgt,
            x_neg,
            cond: cond.clone(),
            synth_cond: cond.clone(),
            subject_id: 0,
            context_id: 0,
            provenance: Provenance::Cdns,
        };
        let quads = vec![
            make(vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]),
            make(vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]),
        ];
        let stats = pair_gap_stats(&quads, &world).unwrap();
        assert!((stats.mean - 0.5).abs() < 1e-12);
        assert!((stats.std - 0.5).abs() < 1e-12);
        assert_eq!(stats.mass_below(0.8), 0.5);
        assert_eq!(stats.count, 2);
    }

    #[test]
    fn synth_config_validation_catches_bad_values() {
        let mut c = SynthConfig::new(Strategy::Cdns);
        c.n_per_triplet = 0;
        assert!(c.validate().is_err());
        let mut c = SynthConfig::new(Strategy::Cdns);
        c.lambda = -0.5;
        assert!(c.validate().is_err());
        let mut c = SynthConfig::new(Strategy::Cdns);
        c.max_similarity = Some(1.5);
        assert!(c.validate().is_err());
        assert!(SynthConfig::new(Strategy::Cdns).validate().is_ok());
    }
}
