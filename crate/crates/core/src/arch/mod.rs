//! Declarative network descriptions and their built, trainable form.
//!
//! Four families share one skeleton: a stem (one unit-stride conv, one
//! stride-2 conv), two modules whose first block halves the spatial dims,
//! global average pooling and a dense regression head. The family decides
//! what a block looks like.

mod build;

pub use build::{build, build_f32, ForwardPass, NetworkGraph, Param};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "resnet_a3d")]
    ResNetA3D,
    #[serde(rename = "resnet_b3d")]
    ResNetB3D,
    #[serde(rename = "inception3d")]
    Inception3D,
    #[serde(rename = "resnext3d")]
    ResNeXt3D,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::ResNetA3D => "resnet_a3d",
            Family::ResNetB3D => "resnet_b3d",
            Family::Inception3D => "inception3d",
            Family::ResNeXt3D => "resnext3d",
        }
    }

    pub fn all() -> [Family; 4] {
        [
            Family::ResNetA3D,
            Family::ResNetB3D,
            Family::Inception3D,
            Family::ResNeXt3D,
        ]
    }
}

impl std::str::FromStr for Family {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet_a3d" => Ok(Family::ResNetA3D),
            "resnet_b3d" => Ok(Family::ResNetB3D),
            "inception3d" => Ok(Family::Inception3D),
            "resnext3d" => Ok(Family::ResNeXt3D),
            other => Err(CoreError::InvalidSpec(format!("unknown family {:?}", other))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// 3x3x3 feature kernels.
    #[default]
    Volumetric,
    /// Kernel z-extent dropped to 1; accepts flat images and volumes alike.
    Planar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LongRange {
    #[default]
    None,
    /// Strided 1x1x1 projection of the module input added onto its output.
    Residual,
    /// Pooled module input concatenated onto its output, then reduced back.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathWidths {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
}

impl PathWidths {
    pub fn total(&self) -> usize {
        self.n1 + self.n2 + self.n3
    }
}

/// Per-block path widths of the multi-path family, one entry per block kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionWidths {
    pub module1_down: PathWidths,
    pub module1: PathWidths,
    pub module2_down: PathWidths,
    pub module2: PathWidths,
}

impl Default for InceptionWidths {
    fn default() -> Self {
        Self {
            module1_down: PathWidths { n1: 64, n2: 64, n3: 30 },
            module1: PathWidths { n1: 42, n2: 42, n3: 20 },
            module2_down: PathWidths { n1: 86, n2: 86, n3: 40 },
            module2: PathWidths { n1: 64, n2: 64, n3: 30 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub family: Family,
    #[serde(default)]
    pub filter_mode: FilterMode,
    #[serde(default)]
    pub long_range: LongRange,
    #[serde(default = "default_width_scale")]
    pub width_scale: f64,
    #[serde(default = "default_output_dim")]
    pub output_dim: usize,
    #[serde(default = "default_cardinality")]
    pub cardinality: usize,
    #[serde(default)]
    pub inception_widths: InceptionWidths,
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
}

fn default_width_scale() -> f64 {
    1.0
}
fn default_output_dim() -> usize {
    3
}
fn default_cardinality() -> usize {
    8
}
fn default_input_channels() -> usize {
    1
}

impl ArchitectureSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            filter_mode: FilterMode::default(),
            long_range: LongRange::default(),
            width_scale: 1.0,
            output_dim: 3,
            cardinality: 8,
            inception_widths: InceptionWidths::default(),
            input_channels: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_scale > 0.0 && self.width_scale.is_finite()) {
            return Err(CoreError::InvalidSpec(format!(
                "width_scale must be positive, got {}",
                self.width_scale
            )));
        }
        if self.output_dim == 0 || self.output_dim > 6 {
            return Err(CoreError::InvalidSpec(format!(
                "output_dim must be in 1..=6, got {}",
                self.output_dim
            )));
        }
        if self.cardinality == 0 {
            return Err(CoreError::InvalidSpec("cardinality must be >= 1".into()));
        }
        if self.long_range != LongRange::None && self.family != Family::Inception3D {
            return Err(CoreError::InvalidSpec(format!(
                "long_range connections only apply to inception3d, not {}",
                self.family.name()
            )));
        }
        if self.input_channels == 0 {
            return Err(CoreError::InvalidSpec("input_channels must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| CoreError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Digest of the canonical serialized form; embedded in checkpoints so a
    /// mismatched load fails loudly.
    pub fn hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_toml().as_bytes());
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut spec = ArchitectureSpec::new(Family::Inception3D);
        spec.long_range = LongRange::Residual;
        spec.width_scale = 0.25;
        spec.output_dim = 6;
        let s = spec.to_toml();
        let back = ArchitectureSpec::from_toml(&s).unwrap();
        assert_eq!(spec, back);
        assert_eq!(spec.hash(), back.hash());
    }

    #[test]
    fn long_range_rejected_outside_inception() {
        let mut spec = ArchitectureSpec::new(Family::ResNetA3D);
        spec.long_range = LongRange::Residual;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn hash_changes_with_spec() {
        let a = ArchitectureSpec::new(Family::ResNetB3D);
        let mut b = a.clone();
        b.width_scale = 0.5;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn default_path_widths_sum() {
        let w = InceptionWidths::default();
        assert_eq!(w.module1_down.total(), 158);
        assert_eq!(w.module2_down.total(), 212);
    }
}
