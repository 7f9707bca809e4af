//! On-disk dataset containers: supervised triplets, car-mixture samples, and
//! quadruplets with negatives.
//!
//! A dataset is a directory holding `manifest.json` plus one raw f64 array
//! file per column. The manifest records the generating spec and seed (the
//! world is reconstructible from those), per-record metadata, and the shape
//! and sha256 of every array, so loads verify integrity end to end.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{self, ArrayMeta, DATASET_VERSION};
use crate::world::{
    CarMixSpec, CarMixture, CarSample, ConditionPair, Provenance, Quadruplet, Triplet, World,
    WorldSpec,
};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Which generator a dataset came from, with everything needed to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "world_kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorldRef {
    Subject { spec: WorldSpec, seed: u64 },
    Cars { spec: CarMixSpec, seed: u64 },
}

impl WorldRef {
    pub fn data_dim(&self) -> usize {
        match self {
            WorldRef::Subject { spec, .. } => spec.data_dim(),
            WorldRef::Cars { .. } => 2,
        }
    }

    pub fn img_dim(&self) -> usize {
        match self {
            WorldRef::Subject { spec, .. } => spec.subject_dim,
            WorldRef::Cars { .. } => 0,
        }
    }

    pub fn text_dim(&self) -> usize {
        match self {
            WorldRef::Subject { spec, .. } => spec.context_dim,
            WorldRef::Cars { .. } => 1,
        }
    }

    /// Rebuilds the subject world; errors for car datasets.
    pub fn realize_world(&self) -> Result<World> {
        match self {
            WorldRef::Subject { spec, seed } => World::generate(spec.clone(), *seed),
            WorldRef::Cars { .. } => Err(Error::invalid(
                "world_ref",
                "car-mixture dataset has no subject world",
            )),
        }
    }
}

/// One supervised training example, independent of dataset kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x_tgt: Vec<f64>,
    pub cond: ConditionPair,
    /// Oracle identity: subject id, or mode index for cars.
    pub subject_id: u32,
    pub context_id: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CondColumns {
    degraded: Vec<bool>,
    generic: Vec<bool>,
    null_flag: Vec<bool>,
}

impl CondColumns {
    fn from_conds<'a>(conds: impl Iterator<Item = &'a ConditionPair>) -> Self {
        let mut cols = CondColumns {
            degraded: Vec::new(),
            generic: Vec::new(),
            null_flag: Vec::new(),
        };
        for c in conds {
            cols.degraded.push(c.degraded);
            cols.generic.push(c.generic);
            cols.null_flag.push(c.null_flag);
        }
        cols
    }

    fn check_len(&self, n: usize, what: &str) -> Result<()> {
        if self.degraded.len() != n || self.generic.len() != n || self.null_flag.len() != n {
            return Err(Error::invalid(what, "flag column length mismatch"));
        }
        Ok(())
    }
}

fn flatten(rows: usize, cols: usize, take: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    out.extend(take);
    out
}

/// Splits a flat column array back into `rows` vectors (handles cols == 0).
fn rows_of(data: Vec<f64>, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    if cols == 0 {
        return vec![Vec::new(); rows];
    }
    data.chunks(cols).map(|c| c.to_vec()).collect()
}

// ---------------------------------------------------------------------------
// Supervised triplets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TripletSet {
    pub world_spec: WorldSpec,
    pub world_seed: u64,
    pub records: Vec<Triplet>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TripletManifest {
    version: u32,
    kind: String,
    world_spec: WorldSpec,
    world_seed: u64,
    n_records: usize,
    subject_ids: Vec<u32>,
    context_ids: Vec<u32>,
    cond_flags: CondColumns,
    x_tgt: ArrayMeta,
    c_img: ArrayMeta,
    c_text: ArrayMeta,
}

impl TripletSet {
    pub fn generate(spec: WorldSpec, seed: u64) -> Result<TripletSet> {
        let world = World::generate(spec.clone(), seed)?;
        Ok(TripletSet {
            world_spec: spec,
            world_seed: seed,
            records: world.gen_triplets(),
        })
    }

    pub fn world(&self) -> Result<World> {
        World::generate(self.world_spec.clone(), self.world_seed)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let n = self.records.len();
        let d = self.world_spec.data_dim();
        let k = self.world_spec.subject_dim;
        let m = self.world_spec.context_dim;
        let x_tgt = flatten(n, d, self.records.iter().flat_map(|r| r.x_tgt.iter().copied()));
        let c_img = flatten(n, k, self.records.iter().flat_map(|r| r.cond.c_img.iter().copied()));
        let c_text = flatten(n, m, self.records.iter().flat_map(|r| r.cond.c_text.iter().copied()));
        let doc = TripletManifest {
            version: DATASET_VERSION,
            kind: "triplets".to_string(),
            world_spec: self.world_spec.clone(),
            world_seed: self.world_seed,
            n_records: n,
            subject_ids: self.records.iter().map(|r| r.subject_id).collect(),
            context_ids: self.records.iter().map(|r| r.context_id).collect(),
            cond_flags: CondColumns::from_conds(self.records.iter().map(|r| &r.cond)),
            x_tgt: manifest::write_f64_array(&dir.join("x_tgt.bin"), n, d, &x_tgt)?,
            c_img: manifest::write_f64_array(&dir.join("c_img.bin"), n, k, &c_img)?,
            c_text: manifest::write_f64_array(&dir.join("c_text.bin"), n, m, &c_text)?,
        };
        manifest::write_json(&dir.join(MANIFEST_FILE), &doc)
    }

    pub fn load(dir: &Path) -> Result<TripletSet> {
        let doc: TripletManifest = manifest::read_json(&dir.join(MANIFEST_FILE))?;
        manifest::check_version("dataset", doc.version, DATASET_VERSION)?;
        if doc.kind != "triplets" {
            return Err(Error::invalid("dataset.kind", "expected a triplets dataset"));
        }
        let n = doc.n_records;
        doc.cond_flags.check_len(n, "dataset.cond_flags")?;
        if doc.subject_ids.len() != n || doc.context_ids.len() != n {
            return Err(Error::invalid("dataset.ids", "id column length mismatch"));
        }
        let d = doc.world_spec.data_dim();
        let k = doc.world_spec.subject_dim;
        let m = doc.world_spec.context_dim;
        for (meta, cols, name) in [(&doc.x_tgt, d, "x_tgt"), (&doc.c_img, k, "c_img"), (&doc.c_text, m, "c_text")] {
            if meta.rows != n || meta.cols != cols {
                return Err(Error::shape(
                    format!("dataset array {name}"),
                    format!("{n} x {cols}"),
                    format!("{} x {}", meta.rows, meta.cols),
                ));
            }
        }
        let x_tgt = rows_of(manifest::read_f64_array(&dir.join("x_tgt.bin"), &doc.x_tgt)?, n, d);
        let c_img = rows_of(manifest::read_f64_array(&dir.join("c_img.bin"), &doc.c_img)?, n, k);
        let c_text = rows_of(manifest::read_f64_array(&dir.join("c_text.bin"), &doc.c_text)?, n, m);
        let records = (0..n)
            .map(|i| Triplet {
                x_tgt: x_tgt[i].clone(),
                cond: ConditionPair {
                    c_img: c_img[i].clone(),
                    degraded: doc.cond_flags.degraded[i],
                    c_text: c_text[i].clone(),
                    generic: doc.cond_flags.generic[i],
                    null_flag: doc.cond_flags.null_flag[i],
                },
                subject_id: doc.subject_ids[i],
                context_id: doc.context_ids[i],
            })
            .collect();
        Ok(TripletSet {
            world_spec: doc.world_spec,
            world_seed: doc.world_seed,
            records,
        })
    }

    /// Records whose subject is in the training split.
    pub fn train_records(&self) -> Result<Vec<&Triplet>> {
        let world = self.world()?;
        let n_train = world.n_train_subjects() as u32;
        Ok(self.records.iter().filter(|r| r.subject_id < n_train).collect())
    }

    /// Records whose subject is held out.
    pub fn holdout_records(&self) -> Result<Vec<&Triplet>> {
        let world = self.world()?;
        let n_train = world.n_train_subjects() as u32;
        Ok(self.records.iter().filter(|r| r.subject_id >= n_train).collect())
    }
}

// ---------------------------------------------------------------------------
// Car mixture
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CarManifest {
    version: u32,
    kind: String,
    spec: CarMixSpec,
    seed: u64,
    centers: Vec<[f64; 2]>,
    modes: Vec<u32>,
    x: ArrayMeta,
}

pub fn save_car_mixture(mix: &CarMixture, dir: &Path) -> Result<()> {
    let n = mix.samples.len();
    let x = flatten(n, 2, mix.samples.iter().flat_map(|s| s.x.iter().copied()));
    let doc = CarManifest {
        version: DATASET_VERSION,
        kind: "car_mixture".to_string(),
        spec: mix.spec.clone(),
        seed: mix.seed,
        centers: mix.centers.clone(),
        modes: mix.samples.iter().map(|s| s.mode).collect(),
        x: manifest::write_f64_array(&dir.join("x.bin"), n, 2, &x)?,
    };
    manifest::write_json(&dir.join(MANIFEST_FILE), &doc)
}

pub fn load_car_mixture(dir: &Path) -> Result<CarMixture> {
    let doc: CarManifest = manifest::read_json(&dir.join(MANIFEST_FILE))?;
    manifest::check_version("dataset", doc.version, DATASET_VERSION)?;
    if doc.kind != "car_mixture" {
        return Err(Error::invalid("dataset.kind", "expected a car_mixture dataset"));
    }
    let n = doc.modes.len();
    if doc.x.rows != n || doc.x.cols != 2 {
        return Err(Error::shape(
            "dataset array x",
            format!("{n} x 2"),
            format!("{} x {}", doc.x.rows, doc.x.cols),
        ));
    }
    let xs = rows_of(manifest::read_f64_array(&dir.join("x.bin"), &doc.x)?, n, 2);
    let samples = xs
        .into_iter()
        .zip(doc.modes)
        .map(|(x, mode)| CarSample { x, mode })
        .collect();
    Ok(CarMixture {
        spec: doc.spec,
        seed: doc.seed,
        centers: doc.centers,
        samples,
    })
}

// ---------------------------------------------------------------------------
// Quadruplets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct QuadSet {
    pub world: WorldRef,
    pub records: Vec<Quadruplet>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadManifest {
    version: u32,
    kind: String,
    world: WorldRef,
    n_records: usize,
    subject_ids: Vec<u32>,
    context_ids: Vec<u32>,
    provenance: Vec<Provenance>,
    cond_flags: CondColumns,
    synth_flags: CondColumns,
    x_tgt: ArrayMeta,
    x_neg: ArrayMeta,
    c_img: ArrayMeta,
    c_text: ArrayMeta,
    synth_c_img: ArrayMeta,
    synth_c_text: ArrayMeta,
}

impl QuadSet {
    pub fn data_dim(&self) -> usize {
        self.world.data_dim()
    }

    /// The single strategy used by every record, or an error on a mixed or
    /// empty file.
    pub fn uniform_provenance(&self) -> Result<Provenance> {
        let first = self
            .records
            .first()
            .ok_or_else(|| Error::invalid("quads", "empty quadruplet set"))?
            .provenance;
        if self.records.iter().any(|r| r.provenance != first) {
            return Err(Error::invalid("quads", "mixed provenance in one file"));
        }
        Ok(first)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let n = self.records.len();
        let d = self.world.data_dim();
        let k = self.world.img_dim();
        let m = self.world.text_dim();
        let x_tgt = flatten(n, d, self.records.iter().flat_map(|r| r.x_tgt.iter().copied()));
        let x_neg = flatten(n, d, self.records.iter().flat_map(|r| r.x_neg.iter().copied()));
        let c_img = flatten(n, k, self.records.iter().flat_map(|r| r.cond.c_img.iter().copied()));
        let c_text = flatten(n, m, self.records.iter().flat_map(|r| r.cond.c_text.iter().copied()));
        let s_img = flatten(n, k, self.records.iter().flat_map(|r| r.synth_cond.c_img.iter().copied()));
        let s_text = flatten(n, m, self.records.iter().flat_map(|r| r.synth_cond.c_text.iter().copied()));
        let doc = QuadManifest {
            version: DATASET_VERSION,
            kind: "quadruplets".to_string(),
            world: self.world.clone(),
            n_records: n,
            subject_ids: self.records.iter().map(|r| r.subject_id).collect(),
            context_ids: self.records.iter().map(|r| r.context_id).collect(),
            provenance: self.records.iter().map(|r| r.provenance).collect(),
            cond_flags: CondColumns::from_conds(self.records.iter().map(|r| &r.cond)),
            synth_flags: CondColumns::from_conds(self.records.iter().map(|r| &r.synth_cond)),
            x_tgt: manifest::write_f64_array(&dir.join("x_tgt.bin"), n, d, &x_tgt)?,
            x_neg: manifest::write_f64_array(&dir.join("x_neg.bin"), n, d, &x_neg)?,
            c_img: manifest::write_f64_array(&dir.join("c_img.bin"), n, k, &c_img)?,
            c_text: manifest::write_f64_array(&dir.join("c_text.bin"), n, m, &c_text)?,
            synth_c_img: manifest::write_f64_array(&dir.join("synth_c_img.bin"), n, k, &s_img)?,
            synth_c_text: manifest::write_f64_array(&dir.join("synth_c_text.bin"), n, m, &s_text)?,
        };
        manifest::write_json(&dir.join(MANIFEST_FILE), &doc)
    }

    pub fn load(dir: &Path) -> Result<QuadSet> {
        let doc: QuadManifest = manifest::read_json(&dir.join(MANIFEST_FILE))?;
        manifest::check_version("dataset", doc.version, DATASET_VERSION)?;
        if doc.kind != "quadruplets" {
            return Err(Error::invalid("dataset.kind", "expected a quadruplets dataset"));
        }
        let n = doc.n_records;
        doc.cond_flags.check_len(n, "dataset.cond_flags")?;
        doc.synth_flags.check_len(n, "dataset.synth_flags")?;
        if doc.subject_ids.len() != n || doc.context_ids.len() != n || doc.provenance.len() != n {
            return Err(Error::invalid("dataset.ids", "id column length mismatch"));
        }
        let d = doc.world.data_dim();
        let k = doc.world.img_dim();
        let m = doc.world.text_dim();
        for (meta, cols, name) in [
            (&doc.x_tgt, d, "x_tgt"),
            (&doc.x_neg, d, "x_neg"),
            (&doc.c_img, k, "c_img"),
            (&doc.c_text, m, "c_text"),
            (&doc.synth_c_img, k, "synth_c_img"),
            (&doc.synth_c_text, m, "synth_c_text"),
        ] {
            if meta.rows != n || meta.cols != cols {
                return Err(Error::shape(
                    format!("dataset array {name}"),
                    format!("{n} x {cols}"),
                    format!("{} x {}", meta.rows, meta.cols),
                ));
            }
        }
        let x_tgt = rows_of(manifest::read_f64_array(&dir.join("x_tgt.bin"), &doc.x_tgt)?, n, d);
        let x_neg = rows_of(manifest::read_f64_array(&dir.join("x_neg.bin"), &doc.x_neg)?, n, d);
        let c_img = rows_of(manifest::read_f64_array(&dir.join("c_img.bin"), &doc.c_img)?, n, k);
        let c_text = rows_of(manifest::read_f64_array(&dir.join("c_text.bin"), &doc.c_text)?, n, m);
        let s_img = rows_of(manifest::read_f64_array(&dir.join("synth_c_img.bin"), &doc.synth_c_img)?, n, k);
        let s_text = rows_of(manifest::read_f64_array(&dir.join("synth_c_text.bin"), &doc.synth_c_text)?, n, m);
        let records = (0..n)
            .map(|i| Quadruplet {
                x_tgt: x_tgt[i].clone(),
                x_neg: x_neg[i].clone(),
                cond: ConditionPair {
                    c_img: c_img[i].clone(),
                    degraded: doc.cond_flags.degraded[i],
                    c_text: c_text[i].clone(),
                    generic: doc.cond_flags.generic[i],
                    null_flag: doc.cond_flags.null_flag[i],
                },
                synth_cond: ConditionPair {
                    c_img: s_img[i].clone(),
                    degraded: doc.synth_flags.degraded[i],
                    c_text: s_text[i].clone(),
                    generic: doc.synth_flags.generic[i],
                    null_flag: doc.synth_flags.null_flag[i],
                },
                subject_id: doc.subject_ids[i],
                context_id: doc.context_ids[i],
                provenance: doc.provenance[i],
            })
            .collect();
        Ok(QuadSet {
            world: doc.world,
            records,
        })
    }
}

// ---------------------------------------------------------------------------
// Kind-dispatching loader
// ---------------------------------------------------------------------------

/// Supervised dataset of either kind, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Triplets(TripletSet),
    Cars(CarMixture),
}

#[derive(Deserialize)]
struct KindProbe {
    kind: String,
}

impl Dataset {
    /// Loads a supervised dataset, dispatching on the manifest `kind` field.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let probe: KindProbe = manifest::read_json(&dir.join(MANIFEST_FILE))?;
        match probe.kind.as_str() {
            "triplets" => Ok(Dataset::Triplets(TripletSet::load(dir)?)),
            "car_mixture" => Ok(Dataset::Cars(load_car_mixture(dir)?)),
            other => Err(Error::Invalid {
                key: "dataset.kind".to_string(),
                reason: format!("unknown dataset kind {other:?}"),
            }),
        }
    }

    pub fn world_ref(&self) -> WorldRef {
        match self {
            Dataset::Triplets(t) => WorldRef::Subject {
                spec: t.world_spec.clone(),
                seed: t.world_seed,
            },
            Dataset::Cars(c) => WorldRef::Cars {
                spec: c.spec.clone(),
                seed: c.seed,
            },
        }
    }

    pub fn data_dim(&self) -> usize {
        self.world_ref().data_dim()
    }

    pub fn img_dim(&self) -> usize {
        self.world_ref().img_dim()
    }

    pub fn text_dim(&self) -> usize {
        self.world_ref().text_dim()
    }

    /// Broad-distribution training view: every training-split record.
    pub fn all_examples(&self) -> Result<Vec<Example>> {
        match self {
            Dataset::Triplets(t) => Ok(t
                .train_records()?
                .into_iter()
                .map(|r| Example {
                    x_tgt: r.x_tgt.clone(),
                    cond: r.cond.clone(),
                    subject_id: r.subject_id,
                    context_id: r.context_id,
                })
                .collect()),
            Dataset::Cars(c) => Ok(c
                .samples
                .iter()
                .enumerate()
                .map(|(i, s)| Example {
                    x_tgt: s.x.clone(),
                    cond: c.spec.condition(),
                    subject_id: s.mode,
                    context_id: i as u32,
                })
                .collect()),
        }
    }

    /// Positive-only view: the target mode for cars, the full training split
    /// for the subject world (every record there is a positive).
    pub fn positive_examples(&self) -> Result<Vec<Example>> {
        match self {
            Dataset::Triplets(_) => self.all_examples(),
            Dataset::Cars(c) => Ok(c
                .samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.mode == 0)
                .map(|(i, s)| Example {
                    x_tgt: s.x.clone(),
                    cond: c.spec.condition(),
                    subject_id: s.mode,
                    context_id: i as u32,
                })
                .collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::gen_car_mixture;

    fn small_spec() -> WorldSpec {
        WorldSpec {
            n_subjects: 8,
            contexts_per_subject: 4,
            ..WorldSpec::default()
        }
    }

    #[test]
    fn triplet_set_round_trips() {
        let set = TripletSet::generate(small_spec(), 123).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.save(dir.path()).unwrap();
        let back = TripletSet::load(dir.path()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn triplet_save_is_byte_stable() {
        let set = TripletSet::generate(small_spec(), 123).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        set.save(d1.path()).unwrap();
        set.save(d2.path()).unwrap();
        for f in ["manifest.json", "x_tgt.bin", "c_img.bin", "c_text.bin"] {
            let a = std::fs::read(d1.path().join(f)).unwrap();
            let b = std::fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }

    #[test]
    fn car_set_round_trips() {
        let mix = gen_car_mixture(CarMixSpec::default(), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_car_mixture(&mix, dir.path()).unwrap();
        let back = load_car_mixture(dir.path()).unwrap();
        assert_eq!(back, mix);
    }

    #[test]
    fn quad_set_round_trips() {
        let spec = small_spec();
        let world = World::generate(spec.clone(), 9).unwrap();
        let triplets = world.gen_triplets();
        let records: Vec<Quadruplet> = triplets
            .iter()
            .take(6)
            .map(|t| Quadruplet {
                x_tgt: t.x_tgt.clone(),
                x_neg: vec![0.25; world.data_dim()],
                cond: t.cond.clone(),
                synth_cond: ConditionPair::null(world.img_dim(), world.text_dim()),
                subject_id: t.subject_id,
                context_id: t.context_id,
                provenance: Provenance::Cdns,
            })
            .collect();
        let quads = QuadSet {
            world: WorldRef::Subject { spec, seed: 9 },
            records,
        };
        let dir = tempfile::tempdir().unwrap();
        quads.save(dir.path()).unwrap();
        let back = QuadSet::load(dir.path()).unwrap();
        assert_eq!(back, quads);
        assert_eq!(back.uniform_provenance().unwrap(), Provenance::Cdns);
    }

    #[test]
    fn mixed_provenance_is_detected() {
        let spec = small_spec();
        let world = World::generate(spec.clone(), 9).unwrap();
        let t = &world.gen_triplets()[0];
        let mk = |p| Quadruplet {
            x_tgt: t.x_tgt.clone(),
            x_neg: t.x_tgt.clone(),
            cond: t.cond.clone(),
            synth_cond: t.cond.clone(),
            subject_id: t.subject_id,
            context_id: t.context_id,
            provenance: p,
        };
        let quads = QuadSet {
            world: WorldRef::Subject { spec, seed: 9 },
            records: vec![mk(Provenance::Cdns), mk(Provenance::Selfplay)],
        };
        assert!(quads.uniform_provenance().is_err());
    }

    #[test]
    fn dataset_kind_dispatch() {
        let dir = tempfile::tempdir().unwrap();
        let mix = gen_car_mixture(CarMixSpec::default(), 7).unwrap();
        save_car_mixture(&mix, dir.path()).unwrap();
        match Dataset::load(dir.path()).unwrap() {
            Dataset::Cars(c) => assert_eq!(c.samples.len(), 1000),
            other => panic!("wrong kind {other:?}"),
        }
        // Loading a car set as triplets fails on kind.
        assert!(TripletSet::load(dir.path()).is_err());
    }

    #[test]
    fn car_views_filter_modes() {
        let mix = gen_car_mixture(
            CarMixSpec {
                n_positive: 10,
                n_other: 9,
                ..CarMixSpec::default()
            },
            3,
        )
        .unwrap();
        let ds = Dataset::Cars(mix);
        assert_eq!(ds.all_examples().unwrap().len(), 19);
        let pos = ds.positive_examples().unwrap();
        assert_eq!(pos.len(), 10);
        assert!(pos.iter().all(|e| e.subject_id == 0));
        assert_eq!(ds.img_dim(), 0);
        assert_eq!(ds.text_dim(), 1);
    }

    #[test]
    fn triplet_views_use_training_split() {
        let set = TripletSet::generate(small_spec(), 123).unwrap();
        let world = set.world().unwrap();
        let n_train = world.n_train_subjects();
        let train = set.train_records().unwrap();
        let holdout = set.holdout_records().unwrap();
        assert_eq!(train.len() + holdout.len(), set.records.len());
        assert!(train.iter().all(|r| (r.subject_id as usize) < n_train));
        assert!(holdout.iter().all(|r| (r.subject_id as usize) >= n_train));
    }

    #[test]
    fn corrupt_binary_fails_load() {
        let set = TripletSet::generate(small_spec(), 123).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.save(dir.path()).unwrap();
        let path = dir.path().join("x_tgt.bin");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            TripletSet::load(dir.path()).unwrap_err(),
            Error::Integrity { .. }
        ));
    }
}
