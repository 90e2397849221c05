//! Synthetic stand-in for the robot-and-scanner rig: marker models, pose
//! sampling, transform algebra, depth-scan rendering and labeled dataset
//! generation.

pub mod dataset;
pub mod marker;
pub mod occlude;
pub mod render;
pub mod transform;

pub use dataset::{generate_dataset, Dataset, GenConfig, Manifest, Profile, RecordMeta, Split};
pub use marker::{MarkerKind, MarkerModel, Material};
pub use occlude::{add_occluders, OccluderFamily, OccluderId};
pub use render::{render_mask, render_volume, render_with_mask, GridSpec, RenderParams};
pub use transform::{
    matrix_to_pose, pose_to_matrix, relative_transform, sample_pose, Pose, PoseRanges,
    TransformMatrix,
};

/// A bare intensity grid `[x, y, z]`, z fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub data: Vec<f32>,
}

impl Volume {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Volume {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Mean-pool by integer factors per axis; dims must divide evenly.
    pub fn downsample(&self, factors: [usize; 3]) -> crate::Result<Volume> {
        let [nx, ny, nz] = self.dims;
        let [fx, fy, fz] = factors;
        if fx == 0 || fy == 0 || fz == 0 || nx % fx != 0 || ny % fy != 0 || nz % fz != 0 {
            return Err(crate::CoreError::InvalidArg {
                ctx: "downsample",
                msg: format!("factors {:?} do not divide dims {:?}", factors, self.dims),
            });
        }
        let (ox, oy, oz) = (nx / fx, ny / fy, nz / fz);
        let inv = 1.0 / (fx * fy * fz) as f32;
        let mut out = Vec::with_capacity(ox * oy * oz);
        for i in 0..ox {
            for j in 0..oy {
                for k in 0..oz {
                    let mut acc = 0.0f32;
                    for di in 0..fx {
                        for dj in 0..fy {
                            for dk in 0..fz {
                                acc += self.at(i * fx + di, j * fy + dj, k * fz + dk);
                            }
                        }
                    }
                    out.push(acc * inv);
                }
            }
        }
        Ok(Volume {
            dims: [ox, oy, oz],
            data: out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_constant_stays_constant() {
        let v = Volume {
            dims: [4, 4, 8],
            data: vec![0.25; 128],
        };
        let d = v.downsample([2, 2, 4]).unwrap();
        assert_eq!(d.dims, [2, 2, 2]);
        for &x in &d.data {
            assert!((x - 0.25).abs() < 1e-7);
        }
    }

    #[test]
    fn downsample_single_unit_voxel() {
        // one bright voxel pooled over (2,2,32) cells lands at 1/128
        let mut v = Volume::zeros([4, 4, 64]);
        let idx = (2 * 4 + 1) * 64 + 40;
        v.data[idx] = 1.0;
        let d = v.downsample([2, 2, 32]).unwrap();
        assert_eq!(d.dims, [2, 2, 2]);
        let got = d.at(1, 0, 1);
        assert!((got - 1.0 / 128.0).abs() < 1e-9);
        assert_eq!(d.data.iter().filter(|&&x| x > 0.0).count(), 1);
    }

    #[test]
    fn downsample_matches_loop_oracle() {
        use crate::reference::downsample_direct;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let dims = [8, 6, 16];
        let data: Vec<f32> = (0..dims.iter().product())
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let v = Volume { dims, data };
        let d = v.downsample([2, 3, 4]).unwrap();
        let want = downsample_direct(&v.data, dims, [2, 3, 4]);
        assert_eq!(d.data.len(), want.len());
        for (a, b) in d.data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn downsample_rejects_nondividing_factors() {
        let v = Volume::zeros([4, 4, 6]);
        assert!(v.downsample([2, 2, 4]).is_err());
    }
}
