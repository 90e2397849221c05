//! Analytic marker geometry, voxelized at render time.
//!
//! Both markers are asymmetric triangular prisms (triangle in the x-z
//! plane, extruded along y, apex towards the light source and off-center
//! so no pose ambiguity exists). The inner-structured variant carves three
//! spherical voids into the bulk; their interfaces only show up in depth.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerKind {
    /// Milled, infrared-opaque: essentially a surface-only signal.
    Opaque,
    /// Printed resin analog with internal voids visible in depth.
    InnerStructured,
}

impl MarkerKind {
    pub fn letter(&self) -> &'static str {
        match self {
            MarkerKind::Opaque => "a",
            MarkerKind::InnerStructured => "b",
        }
    }
}

impl std::str::FromStr for MarkerKind {
    type Err = crate::error::CoreError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a" | "opaque" => Ok(MarkerKind::Opaque),
            "b" | "inner_structured" => Ok(MarkerKind::InnerStructured),
            other => Err(crate::error::CoreError::InvalidArg {
                ctx: "marker kind",
                msg: format!("expected a|b, got {:?}", other),
            }),
        }
    }
}

/// Optical behaviour of the marker bulk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Beer-Lambert attenuation per millimetre of bulk traversed.
    pub attenuation_per_mm: f64,
    /// Transmission left after crossing one surface.
    pub surface_loss: f64,
    /// Bulk backscatter relative to the surface reflectance.
    pub bulk_reflect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerModel {
    pub kind: MarkerKind,
    /// Outer extent (x, y, z) in millimetres.
    pub size: [f64; 3],
    /// Apex x-position as a fraction of the x-extent.
    pub apex_frac: f64,
    /// (center, radius) of interior voids, marker frame, millimetres.
    pub voids: Vec<([f64; 3], f64)>,
    pub material: Material,
}

impl MarkerModel {
    /// Opaque prism, roughly 3.75 x 2.4 x 2.0 mm.
    pub fn marker_a() -> Self {
        MarkerModel {
            kind: MarkerKind::Opaque,
            size: [3.75, 2.4, 2.0],
            apex_frac: 0.15,
            voids: vec![],
            material: Material {
                attenuation_per_mm: 12.0,
                surface_loss: 0.25,
                bulk_reflect: 0.9,
            },
        }
    }

    /// Translucent prism with three interior voids, roughly 3.2 x 2.68 x 1.9 mm.
    pub fn marker_b() -> Self {
        MarkerModel {
            kind: MarkerKind::InnerStructured,
            size: [3.2, 2.68, 1.9],
            apex_frac: 0.15,
            voids: vec![
                ([0.55, 0.45, 0.50], 0.28),
                ([-0.55, -0.45, 0.55], 0.26),
                ([0.05, 0.05, 0.20], 0.24),
            ],
            material: Material {
                attenuation_per_mm: 1.2,
                surface_loss: 0.85,
                bulk_reflect: 0.9,
            },
        }
    }

    pub fn for_kind(kind: MarkerKind) -> Self {
        match kind {
            MarkerKind::Opaque => Self::marker_a(),
            MarkerKind::InnerStructured => Self::marker_b(),
        }
    }

    /// Marker-frame occupancy. The frame is centered on the prism; +z points
    /// away from the light source (deeper), so the apex sits at -z.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        if !self.in_prism(p) {
            return false;
        }
        for &(c, r) in &self.voids {
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
            if d2 < r * r {
                return false;
            }
        }
        true
    }

    /// Occupancy of the outer shape, ignoring voids.
    pub fn in_prism(&self, p: [f64; 3]) -> bool {
        let [lx, ly, h] = self.size;
        if p[1].abs() > ly / 2.0 || p[2].abs() > h / 2.0 {
            return false;
        }
        // triangle with base at z = +h/2 and apex at (apex_frac * lx, -h/2)
        let apex_x = self.apex_frac * lx;
        let t = (p[2] + h / 2.0) / h; // 0 at apex level, 1 at base
        let left = apex_x + (-lx / 2.0 - apex_x) * t;
        let right = apex_x + (lx / 2.0 - apex_x) * t;
        p[0] >= left && p[0] <= right
    }

    pub fn bounding_radius(&self) -> f64 {
        let [lx, ly, h] = self.size;
        0.5 * (lx * lx + ly * ly + h * h).sqrt()
    }
}
