//! Labeled dataset generation and on-disk layout.
//!
//! A dataset directory holds a commentable manifest, one binary record per
//! sample under `train/`, `val/` and `test/`, and `mean.bin` with the
//! training-split mean of every stored representation:
//!
//! ```text
//! <dir>/manifest.toml
//! <dir>/mean.bin
//! <dir>/train/rec_000000.bin ...
//! <dir>/val/...
//! <dir>/test/...
//! ```
//!
//! Records are rendered in parallel; every record draws from rng streams
//! derived from `(seed, record index)`, so thread count never changes the
//! bytes produced. Regeneration with the same config is byte-identical.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::marker::{MarkerKind, MarkerModel};
use super::occlude::add_occluders;
use super::render::{render_with_mask, RenderParams};
use super::transform::{pose_to_matrix, sample_pose, Pose, PoseRanges};
use super::Volume;
use crate::blob::{find, read_blob_file, write_blob_file, Blob};
use crate::depth;
use crate::error::{CoreError, Result};
use crate::rng::{rng_for, stream_id};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full acquisition grid, 64 x 64 x 16 network volumes.
    Paper,
    /// Same geometry as `paper`, intended for desk-scale sample counts.
    Desk,
    /// Reduced render grid, 32 x 32 x 8 network volumes.
    Fast,
}

impl Profile {
    pub fn render_params(&self) -> RenderParams {
        match self {
            Profile::Paper | Profile::Desk => RenderParams::full(),
            Profile::Fast => RenderParams::fast(),
        }
    }

    pub fn volume_dims(&self) -> [usize; 3] {
        match self {
            Profile::Paper | Profile::Desk => [64, 64, 16],
            Profile::Fast => [32, 32, 8],
        }
    }

    pub fn downsample_factors(&self) -> [usize; 3] {
        let r = self.render_params().grid.dims;
        let v = self.volume_dims();
        [r[0] / v[0], r[1] / v[1], r[2] / v[2]]
    }
}

impl std::str::FromStr for Profile {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            "fast" => Ok(Profile::Fast),
            other => Err(CoreError::InvalidArg {
                ctx: "profile",
                msg: format!("expected paper|desk|fast, got {:?}", other),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn dir(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn all() -> [Split; 3] {
        [Split::Train, Split::Val, Split::Test]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccluderConfig {
    pub min: usize,
    pub max: usize,
}

impl Default for OccluderConfig {
    fn default() -> Self {
        Self { min: 3, max: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub num_samples: usize,
    pub marker: MarkerKind,
    pub profile: Profile,
    /// train/val/test fractions; must sum to 1.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub occluders: Option<OccluderConfig>,
    /// Also derive and store the five flat depth representations.
    #[serde(default)]
    pub store_variants: bool,
    /// Jitter stored labels by the rig's repeatability (+-20 um, +-0.0115 deg).
    #[serde(default)]
    pub label_noise: bool,
    /// Speckle and floor noise in the renders; off gives clean volumes.
    #[serde(default = "default_true")]
    pub render_noise: bool,
    #[serde(default)]
    pub ranges: PoseRanges,
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

fn default_true() -> bool {
    true
}

impl GenConfig {
    pub fn new(seed: u64, num_samples: usize, marker: MarkerKind, profile: Profile) -> Self {
        GenConfig {
            seed,
            num_samples,
            marker,
            profile,
            split: default_split(),
            occluders: None,
            store_variants: false,
            label_noise: false,
            render_noise: true,
            ranges: PoseRanges::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(CoreError::InvalidArg {
                ctx: "gen config",
                msg: "num_samples must be > 0".into(),
            });
        }
        let total: f64 = self.split.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.split.iter().any(|&f| f < 0.0) {
            return Err(CoreError::InvalidArg {
                ctx: "gen config",
                msg: format!("split fractions {:?} must be nonnegative and sum to 1", self.split),
            });
        }
        Ok(())
    }

    /// Record counts per split: rounded train and val, remainder to test.
    pub fn split_sizes(&self) -> [usize; 3] {
        let n = self.num_samples;
        let n_train = (n as f64 * self.split[0]).round() as usize;
        let n_val = ((n as f64 * self.split[1]).round() as usize).min(n - n_train);
        [n_train, n_val, n - n_train - n_val]
    }

    fn split_of(&self, idx: usize) -> Split {
        let [a, b, _] = self.split_sizes();
        if idx < a {
            Split::Train
        } else if idx < a + b {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// TOML integers are signed; persist u64 rng streams as hex strings.
mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:016x}", v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: usize,
    pub split: Split,
    pub file: String,
    /// Stored training label (after optional label noise).
    pub pose: [f64; 6],
    /// Noise-free pose the record was rendered at.
    pub true_pose: [f64; 6],
    pub occluders: Vec<String>,
    /// Render rng substream, for provenance.
    #[serde(with = "hex_u64")]
    pub stream: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub volume_dims: [usize; 3],
    pub records: Vec<RecordMeta>,
}

impl Manifest {
    pub fn split_ids(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.id)
            .collect()
    }
}

pub const LABEL_NOISE_T_MM: f64 = 0.020;
pub const LABEL_NOISE_DEG: f64 = 0.0115;

struct BuiltRecord {
    meta: RecordMeta,
    blobs: Vec<Blob>,
}

fn build_record(config: &GenConfig, marker: &MarkerModel, params: &RenderParams, idx: usize) -> Result<BuiltRecord> {
    let split = config.split_of(idx);
    let mut pose_rng = rng_for(config.seed, "pose", idx as u64);
    let pose = sample_pose(&mut pose_rng, &config.ranges);
    let matrix = pose_to_matrix(&pose, params.rotation_center_z)?;
    let noise_key = stream_id(config.seed, "render", idx as u64);

    let (mut volume, mask) = render_with_mask(marker, &matrix, params, noise_key)?;
    let mut occluder_ids = Vec::new();
    if let Some(oc) = &config.occluders {
        let mut orng = rng_for(config.seed, "occlude", idx as u64);
        let held_out = split == Split::Test;
        let (v, ids) = add_occluders(&volume, &mask, params, &mut orng, (oc.min, oc.max), held_out);
        volume = v;
        occluder_ids = ids.iter().map(|i| i.label()).collect();
    }

    let net_volume = volume.downsample(config.profile.downsample_factors())?;
    let mut blobs = vec![Blob::new(
        "volume",
        net_volume.dims.to_vec(),
        net_volume.data.clone(),
    )?];

    if config.store_variants {
        let cube = depth::to_cube64(&volume)?;
        for variant in 1..=5u8 {
            let rep = depth::make_variant(&cube, variant)?;
            blobs.push(Blob::new(
                format!("var{variant}"),
                vec![rep.channels, 64, 64],
                rep.data,
            )?);
        }
    }

    let label = if config.label_noise {
        let mut lrng = rng_for(config.seed, "labelnoise", idx as u64);
        let mut a = pose.to_array();
        use rand::Rng;
        for (i, v) in a.iter_mut().enumerate() {
            let amp = if i < 3 { LABEL_NOISE_T_MM } else { LABEL_NOISE_DEG };
            *v += lrng.gen_range(-amp..amp);
        }
        a
    } else {
        pose.to_array()
    };

    Ok(BuiltRecord {
        meta: RecordMeta {
            id: idx,
            split,
            file: format!("{}/rec_{:06}.bin", split.dir(), idx),
            pose: label,
            true_pose: pose.to_array(),
            occluders: occluder_ids,
            stream: noise_key,
        },
        blobs,
    })
}

/// Generate all records, the manifest and the training-split means.
pub fn generate_dataset(config: &GenConfig, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    let marker = MarkerModel::for_kind(config.marker);
    let mut params = config.profile.render_params();
    if !config.render_noise {
        params = params.noiseless();
    }

    std::fs::create_dir_all(out_dir)?;
    for split in Split::all() {
        std::fs::create_dir_all(out_dir.join(split.dir()))?;
    }

    let built: Vec<BuiltRecord> = (0..config.num_samples)
        .into_par_iter()
        .map(|idx| build_record(config, &marker, &params, idx))
        .collect::<Result<_>>()?;

    // training-split means, one accumulator per stored representation
    let mut sums: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    let mut n_train = 0usize;
    for rec in &built {
        if rec.meta.split != Split::Train {
            continue;
        }
        n_train += 1;
        for blob in &rec.blobs {
            let slot = sums.iter_mut().find(|(name, _, _)| *name == blob.name);
            match slot {
                Some((_, _, acc)) => {
                    for (a, &v) in acc.iter_mut().zip(&blob.data) {
                        *a += v as f64;
                    }
                }
                None => sums.push((
                    blob.name.clone(),
                    blob.dims.clone(),
                    blob.data.iter().map(|&v| v as f64).collect(),
                )),
            }
        }
    }
    if n_train == 0 {
        return Err(CoreError::InvalidArg {
            ctx: "generate_dataset",
            msg: "empty training split".into(),
        });
    }
    let means: Vec<Blob> = sums
        .into_iter()
        .map(|(name, dims, acc)| {
            let data: Vec<f32> = acc.iter().map(|&v| (v / n_train as f64) as f32).collect();
            Blob::new(name, dims, data)
        })
        .collect::<Result<_>>()?;
    write_blob_file(&out_dir.join("mean.bin"), &means)?;

    for rec in &built {
        write_blob_file(&out_dir.join(&rec.meta.file), &rec.blobs)?;
    }

    let manifest = Manifest {
        config: config.clone(),
        volume_dims: config.profile.volume_dims(),
        records: built.into_iter().map(|r| r.meta).collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| CoreError::Format {
        path: "manifest.toml".into(),
        msg: e.to_string(),
    })?;
    std::fs::write(out_dir.join("manifest.toml"), text)?;
    Ok(manifest)
}

/// Read access to a generated dataset.
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(dir.join("manifest.toml"))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| CoreError::Format {
            path: dir.join("manifest.toml").display().to_string(),
            msg: e.to_string(),
        })?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn record_blobs(&self, id: usize) -> Result<Vec<Blob>> {
        let meta = self.meta(id)?;
        read_blob_file(&self.dir.join(&meta.file))
    }

    pub fn meta(&self, id: usize) -> Result<&RecordMeta> {
        self.manifest
            .records
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| CoreError::InvalidArg {
                ctx: "dataset record",
                msg: format!("no record {}", id),
            })
    }

    /// Load one representation of one record as raw channel-major data.
    pub fn load_representation(&self, id: usize, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let blobs = self.record_blobs(id)?;
        let b = find(&blobs, name)?;
        Ok((b.dims.clone(), b.data.clone()))
    }

    pub fn mean(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let blobs = read_blob_file(&self.dir.join("mean.bin"))?;
        let b = find(&blobs, name)?;
        Ok((b.dims.clone(), b.data.clone()))
    }

    /// Marker occupancy of one record's rendered scene on the network grid,
    /// recomputed from the manifest pose.
    pub fn record_mask(&self, id: usize) -> Result<Vec<bool>> {
        let meta = self.meta(id)?;
        let config = &self.manifest.config;
        let marker = MarkerModel::for_kind(config.marker);
        let params = config.profile.render_params();
        let pose = Pose::from_array(meta.true_pose);
        let matrix = pose_to_matrix(&pose, params.rotation_center_z)?;
        let full = super::render::render_mask(&marker, &matrix, &params);
        let full_dims = params.grid.dims;
        let f = config.profile.downsample_factors();
        let occupancy = Volume {
            dims: full_dims,
            data: full.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
        .downsample(f)?;
        Ok(occupancy.data.iter().map(|&v| v > 0.02).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_round_as_specified() {
        let mut c = GenConfig::new(0, 1000, MarkerKind::Opaque, Profile::Fast);
        assert_eq!(c.split_sizes(), [800, 100, 100]);
        c.num_samples = 10;
        assert_eq!(c.split_sizes(), [8, 1, 1]);
        c.num_samples = 7;
        let s = c.split_sizes();
        assert_eq!(s.iter().sum::<usize>(), 7);
    }

    #[test]
    fn invalid_split_rejected() {
        let mut c = GenConfig::new(0, 10, MarkerKind::Opaque, Profile::Fast);
        c.split = [0.9, 0.2, 0.1];
        assert!(c.validate().is_err());
    }
}
