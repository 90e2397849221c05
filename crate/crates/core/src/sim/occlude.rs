//! Random clutter objects rendered around the marker: rods, droplets,
//! blades and fiber bundles, each in a handful of deterministic variants.
//! A reserved variant range never appears during training so the test
//! split measures behaviour on genuinely unseen shapes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::{march_scene, MaterialSample, RenderParams, Scene};
use super::Volume;
use crate::rng::{splitmix64, stream_id, unit_f64};

pub const VARIANTS_PER_FAMILY: u8 = 12;
/// Variants at or above this index are reserved for the test split.
pub const HELD_OUT_FROM: u8 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OccluderFamily {
    Rod,
    Droplet,
    Blade,
    FiberBundle,
}

impl OccluderFamily {
    pub fn all() -> [OccluderFamily; 4] {
        [
            OccluderFamily::Rod,
            OccluderFamily::Droplet,
            OccluderFamily::Blade,
            OccluderFamily::FiberBundle,
        ]
    }

    fn tag(&self) -> &'static str {
        match self {
            OccluderFamily::Rod => "rod",
            OccluderFamily::Droplet => "droplet",
            OccluderFamily::Blade => "blade",
            OccluderFamily::FiberBundle => "fiber",
        }
    }
}

/// Stable identifier of one shape in the library, e.g. `rod:07`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OccluderId {
    pub family: OccluderFamily,
    pub variant: u8,
}

impl OccluderId {
    pub fn is_held_out(&self) -> bool {
        self.variant >= HELD_OUT_FROM
    }

    pub fn label(&self) -> String {
        format!("{}:{:02}", self.family.tag(), self.variant)
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (fam, var) = s.split_once(':')?;
        let family = match fam {
            "rod" => OccluderFamily::Rod,
            "droplet" => OccluderFamily::Droplet,
            "blade" => OccluderFamily::Blade,
            "fiber" => OccluderFamily::FiberBundle,
            _ => return None,
        };
        Some(OccluderId {
            family,
            variant: var.parse().ok()?,
        })
    }
}

/// Deterministic geometry of one library shape, in its own local frame.
#[derive(Clone, Debug)]
pub struct OccluderShape {
    pub id: OccluderId,
    kind: ShapeKind,
    material: MaterialParams,
}

#[derive(Clone, Debug)]
enum ShapeKind {
    /// axis direction, radius, half length
    Cylinder { axis: [f64; 3], radius: f64, half_len: f64 },
    /// sphere cluster: (offset, radius) each
    Spheres(Vec<([f64; 3], f64)>),
    /// rotated box: z-rotation (rad), half extents
    Box { rot_z: f64, half: [f64; 3] },
    /// parallel thin cylinders: axis, radius, half length, lateral offsets
    Bundle { axis: [f64; 3], radius: f64, half_len: f64, offsets: Vec<[f64; 2]> },
}

#[derive(Clone, Copy, Debug)]
struct MaterialParams {
    attenuation_per_mm: f64,
    surface_loss: f64,
    bulk_reflect: f64,
}

fn shape_unit(key: u64, salt: u64) -> f64 {
    unit_f64(splitmix64(key ^ salt))
}

fn unit_axis(key: u64) -> [f64; 3] {
    // biased toward lying flat, like real clutter on a stage
    let az = shape_unit(key, 1) * std::f64::consts::TAU;
    let tilt = (shape_unit(key, 2) - 0.5) * 0.8;
    [az.cos() * tilt.cos(), az.sin() * tilt.cos(), tilt.sin()]
}

impl OccluderShape {
    /// Geometry and optics are pure functions of the id.
    pub fn from_id(id: OccluderId) -> Self {
        let key = stream_id(0xC1_0B_BE, id.family.tag(), id.variant as u64);
        let kind = match id.family {
            OccluderFamily::Rod => ShapeKind::Cylinder {
                axis: unit_axis(key),
                radius: 0.10 + 0.20 * shape_unit(key, 3),
                half_len: 1.0 + 2.0 * shape_unit(key, 4),
            },
            OccluderFamily::Droplet => {
                let n = 1 + (shape_unit(key, 3) * 3.0) as usize;
                let spheres = (0..n)
                    .map(|i| {
                        let sk = splitmix64(key ^ (100 + i as u64));
                        let r = 0.20 + 0.40 * unit_f64(sk);
                        let off = [
                            (unit_f64(splitmix64(sk ^ 1)) - 0.5) * 1.2,
                            (unit_f64(splitmix64(sk ^ 2)) - 0.5) * 1.2,
                            (unit_f64(splitmix64(sk ^ 3)) - 0.5) * 0.4,
                        ];
                        (off, r)
                    })
                    .collect();
                ShapeKind::Spheres(spheres)
            }
            OccluderFamily::Blade => ShapeKind::Box {
                rot_z: shape_unit(key, 3) * std::f64::consts::TAU,
                half: [
                    0.03 + 0.05 * shape_unit(key, 4),
                    0.5 + 1.0 * shape_unit(key, 5),
                    0.4 + 0.8 * shape_unit(key, 6),
                ],
            },
            OccluderFamily::FiberBundle => {
                let n = 3 + (shape_unit(key, 3) * 3.0) as usize;
                let offsets = (0..n)
                    .map(|i| {
                        let sk = splitmix64(key ^ (200 + i as u64));
                        [
                            (unit_f64(sk) - 0.5) * 0.5,
                            (unit_f64(splitmix64(sk ^ 5)) - 0.5) * 0.5,
                        ]
                    })
                    .collect();
                ShapeKind::Bundle {
                    axis: unit_axis(splitmix64(key ^ 7)),
                    radius: 0.03 + 0.04 * shape_unit(key, 8),
                    half_len: 1.5 + 1.5 * shape_unit(key, 9),
                    offsets,
                }
            }
        };
        // mix of shiny metal-like and dull translucent clutter
        let metallic = shape_unit(key, 20) > 0.5;
        let material = if metallic {
            MaterialParams {
                attenuation_per_mm: 15.0,
                surface_loss: 0.2,
                bulk_reflect: 0.8,
            }
        } else {
            MaterialParams {
                attenuation_per_mm: 2.0,
                surface_loss: 0.8,
                bulk_reflect: 0.6,
            }
        };
        OccluderShape { id, kind, material }
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        match &self.kind {
            ShapeKind::Cylinder { axis, radius, half_len } => {
                cylinder_contains(p, *axis, *radius, *half_len)
            }
            ShapeKind::Spheres(list) => list.iter().any(|&(c, r)| {
                (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2) < r * r
            }),
            ShapeKind::Box { rot_z, half } => {
                let (s, c) = rot_z.sin_cos();
                let q = [c * p[0] + s * p[1], -s * p[0] + c * p[1], p[2]];
                q[0].abs() < half[0] && q[1].abs() < half[1] && q[2].abs() < half[2]
            }
            ShapeKind::Bundle { axis, radius, half_len, offsets } => {
                // perpendicular frame for the lateral offsets
                let (u, v) = perp_frame(*axis);
                offsets.iter().any(|o| {
                    let shifted = [
                        p[0] - o[0] * u[0] - o[1] * v[0],
                        p[1] - o[0] * u[1] - o[1] * v[1],
                        p[2] - o[0] * u[2] - o[1] * v[2],
                    ];
                    cylinder_contains(shifted, *axis, *radius, *half_len)
                })
            }
        }
    }
}

fn cylinder_contains(p: [f64; 3], axis: [f64; 3], radius: f64, half_len: f64) -> bool {
    let along = p[0] * axis[0] + p[1] * axis[1] + p[2] * axis[2];
    if along.abs() > half_len {
        return false;
    }
    let perp2 = (p[0] - along * axis[0]).powi(2)
        + (p[1] - along * axis[1]).powi(2)
        + (p[2] - along * axis[2]).powi(2);
    perp2 < radius * radius
}

fn perp_frame(axis: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let ref_v = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let mut u = [
        axis[1] * ref_v[2] - axis[2] * ref_v[1],
        axis[2] * ref_v[0] - axis[0] * ref_v[2],
        axis[0] * ref_v[1] - axis[1] * ref_v[0],
    ];
    let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    u = [u[0] / n, u[1] / n, u[2] / n];
    let v = [
        axis[1] * u[2] - axis[2] * u[1],
        axis[2] * u[0] - axis[0] * u[2],
        axis[0] * u[1] - axis[1] * u[0],
    ];
    (u, v)
}

/// One placed instance: a library shape at a world position.
#[derive(Clone, Debug)]
pub struct PlacedOccluder {
    pub shape: OccluderShape,
    pub position: [f64; 3],
}

struct OccluderField<'a> {
    placed: &'a [PlacedOccluder],
}

impl Scene for OccluderField<'_> {
    fn sample(&self, world: [f64; 3]) -> Option<MaterialSample> {
        for p in self.placed {
            let local = [
                world[0] - p.position[0],
                world[1] - p.position[1],
                world[2] - p.position[2],
            ];
            if p.shape.contains(local) {
                let m = p.shape.material;
                return Some(MaterialSample {
                    attenuation_per_mm: m.attenuation_per_mm,
                    surface_loss: m.surface_loss,
                    bulk_reflect: m.bulk_reflect,
                });
            }
        }
        None
    }
}

/// Sample 3..=8 occluders ("held_out" picks only reserved variants) and
/// composite them into the rendered volume. Marker voxels are never
/// overwritten.
pub fn add_occluders<R: Rng>(
    volume: &Volume,
    marker_mask: &[bool],
    params: &RenderParams,
    rng: &mut R,
    count_range: (usize, usize),
    held_out: bool,
) -> (Volume, Vec<OccluderId>) {
    let count = if count_range.0 == count_range.1 {
        count_range.0
    } else {
        rng.gen_range(count_range.0..=count_range.1)
    };
    if count == 0 {
        return (volume.clone(), vec![]);
    }
    let fov = params.grid.fov_mm;
    let placed: Vec<PlacedOccluder> = (0..count)
        .map(|_| {
            let family = OccluderFamily::all()[rng.gen_range(0..4)];
            let variant = if held_out {
                rng.gen_range(HELD_OUT_FROM..VARIANTS_PER_FAMILY)
            } else {
                rng.gen_range(0..HELD_OUT_FROM)
            };
            let shape = OccluderShape::from_id(OccluderId { family, variant });
            let position = [
                (rng.gen::<f64>() - 0.5) * fov[0],
                (rng.gen::<f64>() - 0.5) * fov[1],
                rng.gen::<f64>() * fov[2],
            ];
            PlacedOccluder { shape, position }
        })
        .collect();

    let field = OccluderField { placed: &placed };
    let (mut occl_signal, _) = march_scene(&field, params);
    super::render::blur_axial(
        &mut occl_signal,
        params.grid.dims,
        params.axial_psf_sigma_mm / params.grid.spacing_mm()[2],
    );
    // speckle on the occluder signal, from this rng's stream
    if let Some(shape) = params.speckle_shape {
        use rand_distr::Distribution;
        let gamma = rand_distr::Gamma::new(shape, 1.0 / shape).expect("valid gamma");
        for v in occl_signal.iter_mut() {
            if *v > 1e-5 {
                *v *= gamma.sample(rng) as f32;
            }
        }
    }

    let mut out = volume.clone();
    for ((o, &m), &occ) in out.data.iter_mut().zip(marker_mask).zip(&occl_signal) {
        if !m {
            *o = o.max(occ.clamp(0.0, 1.0));
        }
    }
    let ids = placed.iter().map(|p| p.shape.id).collect();
    (out, ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_labels_round_trip() {
        let id = OccluderId { family: OccluderFamily::Blade, variant: 11 };
        assert_eq!(id.label(), "blade:11");
        assert_eq!(OccluderId::parse("blade:11"), Some(id));
        assert!(id.is_held_out());
        assert!(!OccluderId { family: OccluderFamily::Rod, variant: 9 }.is_held_out());
        assert_eq!(OccluderId::parse("pancake:01"), None);
    }

    #[test]
    fn shapes_are_deterministic_in_id() {
        let a = OccluderShape::from_id(OccluderId { family: OccluderFamily::Rod, variant: 3 });
        let b = OccluderShape::from_id(OccluderId { family: OccluderFamily::Rod, variant: 3 });
        for p in [[0.1, 0.2, 0.3], [0.5, -0.2, 1.0], [-0.4, 0.0, 0.2]] {
            assert_eq!(a.contains(p), b.contains(p));
        }
    }

    #[test]
    fn every_library_shape_is_nonempty() {
        for family in OccluderFamily::all() {
            for variant in 0..VARIANTS_PER_FAMILY {
                let s = OccluderShape::from_id(OccluderId { family, variant });
                let mut hits = 0;
                for i in 0..30 {
                    for j in 0..30 {
                        for k in 0..10 {
                            let p = [
                                (i as f64 / 30.0 - 0.5) * 4.0,
                                (j as f64 / 30.0 - 0.5) * 4.0,
                                (k as f64 / 10.0 - 0.5) * 3.0,
                            ];
                            if s.contains(p) {
                                hits += 1;
                            }
                        }
                    }
                }
                assert!(hits > 0, "{} never occupies space", s.id.label());
            }
        }
    }
}
