//! Depth-scan renderer.
//!
//! Each lateral position is marched top-down along +z like an A-scan: the
//! first surface hit reflects strongest, bulk material backscatters while
//! Beer-Lambert attenuation eats the remaining power, and every
//! material/air interface deeper down returns a secondary peak. Intensity
//! also falls off with depth and lateral distance (beam profile), which is
//! what leaves pose information in plain projections. Multiplicative
//! gamma speckle and an additive noise floor come last.

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::marker::MarkerModel;
use super::transform::TransformMatrix;
use super::Volume;
use crate::error::{CoreError, Result};
use crate::rng::{splitmix64, unit_f64};

/// Acquisition grid: `dims` voxels covering `fov_mm`, x/y centered on the
/// beam axis, z from 0 (top) to fov_mm[2] (deepest).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub fov_mm: [f64; 3],
}

impl GridSpec {
    pub fn spacing_mm(&self) -> [f64; 3] {
        [
            self.fov_mm[0] / self.dims[0] as f64,
            self.fov_mm[1] / self.dims[1] as f64,
            self.fov_mm[2] / self.dims[2] as f64,
        ]
    }

    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    /// World coordinate of a voxel center.
    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let s = self.spacing_mm();
        [
            (i as f64 + 0.5) * s[0] - self.fov_mm[0] / 2.0,
            (j as f64 + 0.5) * s[1] - self.fov_mm[1] / 2.0,
            (k as f64 + 0.5) * s[2],
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    pub grid: GridSpec,
    /// Reflectance at the first surface crossing.
    pub r_surface: f64,
    /// Reflectance at deeper material/air interfaces.
    pub r_interface: f64,
    /// Linear intensity falloff over the full depth range (0 disables).
    pub axial_falloff: f64,
    /// Quadratic lateral falloff towards the volume corners (0 disables).
    pub lateral_vignette: f64,
    /// Gaussian depth smearing of returns, millimetres.
    pub axial_psf_sigma_mm: f64,
    /// Shape of the unit-mean multiplicative gamma speckle; None disables.
    pub speckle_shape: Option<f64>,
    /// Additive uniform noise floor amplitude; 0 disables.
    pub floor_amp: f32,
    /// Rotation-center depth (world z, mm). Defaults to mid-volume, i.e. the
    /// marker's nominal center, so rotations barely translate the marker.
    pub rotation_center_z: f64,
}

impl RenderParams {
    pub fn with_grid(grid: GridSpec) -> Self {
        RenderParams {
            grid,
            r_surface: 1.0,
            r_interface: 0.9,
            axial_falloff: 0.35,
            lateral_vignette: 0.3,
            axial_psf_sigma_mm: 0.03,
            speckle_shape: Some(4.0),
            floor_amp: 0.04,
            rotation_center_z: grid.fov_mm[2] / 2.0,
        }
    }

    /// Acquisition-resolution grid: 128 x 128 x 512 over 10 x 10 x 2.66 mm.
    pub fn full() -> Self {
        Self::with_grid(GridSpec {
            dims: [128, 128, 512],
            fov_mm: [10.0, 10.0, 2.66],
        })
    }

    /// Reduced grid for the fast profile: 64 x 64 x 128, same field of view.
    pub fn fast() -> Self {
        Self::with_grid(GridSpec {
            dims: [64, 64, 128],
            fov_mm: [10.0, 10.0, 2.66],
        })
    }

    pub fn noiseless(mut self) -> Self {
        self.speckle_shape = None;
        self.floor_amp = 0.0;
        self
    }
}

/// Anything the marcher can hit: occupancy plus its optics.
pub(crate) trait Scene {
    fn sample(&self, world: [f64; 3]) -> Option<MaterialSample>;
}

#[derive(Clone, Copy)]
pub(crate) struct MaterialSample {
    pub attenuation_per_mm: f64,
    pub surface_loss: f64,
    pub bulk_reflect: f64,
}

pub(crate) struct MarkerScene<'a> {
    pub marker: &'a MarkerModel,
    /// world -> marker frame
    pub inv: TransformMatrix,
    /// nominal world offset of the marker frame origin
    pub nominal: [f64; 3],
}

impl Scene for MarkerScene<'_> {
    fn sample(&self, world: [f64; 3]) -> Option<MaterialSample> {
        let r = self.inv.apply(world);
        let m = [
            r[0] - self.nominal[0],
            r[1] - self.nominal[1],
            r[2] - self.nominal[2],
        ];
        if self.marker.contains(m) {
            let mat = self.marker.material;
            Some(MaterialSample {
                attenuation_per_mm: mat.attenuation_per_mm,
                surface_loss: mat.surface_loss,
                bulk_reflect: mat.bulk_reflect,
            })
        } else {
            None
        }
    }
}

/// March every column through `scene`, depositing reflections. Returns the
/// clean signal and the occupancy mask.
pub(crate) fn march_scene<S: Scene>(scene: &S, params: &RenderParams) -> (Vec<f32>, Vec<bool>) {
    let [nx, ny, nz] = params.grid.dims;
    let s = params.grid.spacing_mm();
    let dz = s[2];
    let fov = params.grid.fov_mm;
    let mut signal = vec![0.0f32; nx * ny * nz];
    let mut mask = vec![false; nx * ny * nz];

    let r_max2 = (fov[0] / 2.0).powi(2) + (fov[1] / 2.0).powi(2);
    for ix in 0..nx {
        let x = (ix as f64 + 0.5) * s[0] - fov[0] / 2.0;
        for iy in 0..ny {
            let y = (iy as f64 + 0.5) * s[1] - fov[1] / 2.0;
            let lateral = 1.0 - params.lateral_vignette * (x * x + y * y) / r_max2;
            let col = (ix * ny + iy) * nz;

            let mut transmission = 1.0f64;
            let mut inside_prev: Option<MaterialSample> = None;
            for k in 0..nz {
                let z = (k as f64 + 0.5) * dz;
                let here = scene.sample([x, y, z]);
                let axial = (1.0 - params.axial_falloff * z / fov[2]) * lateral;
                let mut deposit = 0.0f64;
                match (&inside_prev, &here) {
                    (None, Some(mat)) => {
                        // entering a surface
                        deposit = params.r_surface * transmission * axial;
                        transmission *= mat.surface_loss;
                        mask[col + k] = true;
                        transmission *= (-mat.attenuation_per_mm * dz).exp();
                    }
                    (Some(_), Some(mat)) => {
                        // bulk backscatter
                        deposit = mat.bulk_reflect * params.r_surface * transmission * axial;
                        mask[col + k] = true;
                        transmission *= (-mat.attenuation_per_mm * dz).exp();
                    }
                    (Some(_), None) => {
                        // exiting into air or a void
                        deposit = params.r_interface * transmission * axial;
                    }
                    (None, None) => {}
                }
                if deposit > 0.0 {
                    signal[col + k] = deposit as f32;
                }
                inside_prev = here;
            }
        }
    }
    (signal, mask)
}

/// Gaussian blur along z, in place. Kernel is renormalized at the borders.
pub(crate) fn blur_axial(signal: &mut [f32], dims: [usize; 3], sigma_vox: f64) {
    if sigma_vox < 0.25 {
        return;
    }
    let nz = dims[2];
    let half = (3.0 * sigma_vox).ceil() as isize;
    let kernel: Vec<f32> = (-half..=half)
        .map(|d| (-(d as f64).powi(2) / (2.0 * sigma_vox * sigma_vox)).exp() as f32)
        .collect();
    let mut line = vec![0.0f32; nz];
    for col in signal.chunks_mut(nz) {
        line.copy_from_slice(col);
        for (k, out) in col.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            let mut norm = 0.0f32;
            for (ki, &kv) in kernel.iter().enumerate() {
                let idx = k as isize + ki as isize - half;
                if idx >= 0 && (idx as usize) < nz {
                    acc += kv * line[idx as usize];
                    norm += kv;
                }
            }
            *out = acc / norm;
        }
    }
}

fn apply_noise(signal: &mut [f32], params: &RenderParams, noise_key: u64) {
    use rand_chacha::rand_core::SeedableRng;
    if let Some(shape) = params.speckle_shape {
        let gamma = Gamma::new(shape, 1.0 / shape).expect("valid gamma");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(noise_key);
        for v in signal.iter_mut() {
            if *v > 1e-5 {
                *v *= gamma.sample(&mut rng) as f32;
            }
        }
    }
    if params.floor_amp > 0.0 {
        let base = splitmix64(noise_key ^ 0xF10A_11CE);
        for (i, v) in signal.iter_mut().enumerate() {
            *v += params.floor_amp * unit_f64(base ^ (i as u64)) as f32;
        }
    }
    for v in signal.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Render the marker at a pose. `noise_key` seeds speckle and the noise
/// floor; rendering is a pure function of its arguments.
pub fn render_volume(
    marker: &MarkerModel,
    pose_matrix: &TransformMatrix,
    params: &RenderParams,
    noise_key: u64,
) -> Result<Volume> {
    render_with_mask(marker, pose_matrix, params, noise_key).map(|(v, _)| v)
}

/// As [`render_volume`] but also returns the marker occupancy mask.
pub fn render_with_mask(
    marker: &MarkerModel,
    pose_matrix: &TransformMatrix,
    params: &RenderParams,
    noise_key: u64,
) -> Result<(Volume, Vec<bool>)> {
    let nominal = nominal_offset(params);
    check_in_view(marker, pose_matrix, params, nominal)?;
    let scene = MarkerScene {
        marker,
        inv: pose_matrix.inverse(),
        nominal,
    };
    let (mut signal, mask) = march_scene(&scene, params);
    let sigma_vox = params.axial_psf_sigma_mm / params.grid.spacing_mm()[2];
    blur_axial(&mut signal, params.grid.dims, sigma_vox);
    apply_noise(&mut signal, params, noise_key);
    Ok((
        Volume {
            dims: params.grid.dims,
            data: signal,
        },
        mask,
    ))
}

/// Binary occupancy of the marker at a pose on an arbitrary grid.
pub fn render_mask(
    marker: &MarkerModel,
    pose_matrix: &TransformMatrix,
    params: &RenderParams,
) -> Vec<bool> {
    let scene = MarkerScene {
        marker,
        inv: pose_matrix.inverse(),
        nominal: nominal_offset(params),
    };
    let [nx, ny, nz] = params.grid.dims;
    let mut mask = vec![false; nx * ny * nz];
    for ix in 0..nx {
        for iy in 0..ny {
            for k in 0..nz {
                let w = params.grid.center(ix, iy, k);
                if scene.sample(w).is_some() {
                    mask[(ix * ny + iy) * nz + k] = true;
                }
            }
        }
    }
    mask
}

pub(crate) fn nominal_offset(params: &RenderParams) -> [f64; 3] {
    [0.0, 0.0, params.grid.fov_mm[2] / 2.0]
}

fn check_in_view(
    marker: &MarkerModel,
    pose_matrix: &TransformMatrix,
    params: &RenderParams,
    nominal: [f64; 3],
) -> Result<()> {
    let center_world = pose_matrix.apply(nominal);
    let r = marker.bounding_radius();
    let fov = params.grid.fov_mm;
    let out = center_world[0].abs() > fov[0] / 2.0 + r
        || center_world[1].abs() > fov[1] / 2.0 + r
        || center_world[2] < -r
        || center_world[2] > fov[2] + r;
    if out {
        return Err(CoreError::MarkerOutOfView);
    }
    Ok(())
}
