//! Regression quality measures: mean absolute error (position in
//! micrometres, orientation in degrees), MAE relative to the ground-truth
//! spread, and the mean per-component Pearson correlation.

use serde::Serialize;

pub const COMPONENT_NAMES: [&str; 6] = ["tx", "ty", "tz", "rx", "ry", "rz"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComponentMetrics {
    pub mae: f64,
    /// Per-sample standard deviation of the absolute error.
    pub mae_std: f64,
    pub rmae: f64,
    pub acc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PooledMetrics {
    pub mae: f64,
    pub mae_std: f64,
    pub rmae: f64,
    pub acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    /// (pose component index, metrics); translations first.
    pub components: Vec<(usize, ComponentMetrics)>,
    pub position: Option<PooledMetrics>,
    pub orientation: Option<PooledMetrics>,
}

impl Metrics {
    pub fn component(&self, idx: usize) -> Option<&ComponentMetrics> {
        self.components.iter().find(|(i, _)| *i == idx).map(|(_, m)| m)
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return if va == vb { 1.0 } else { 0.0 };
    }
    cov / (va.sqrt() * vb.sqrt())
}

fn std_pop(vals: &[f64]) -> f64 {
    let n = vals.len() as f64;
    let m = vals.iter().sum::<f64>() / n;
    (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
}

fn std_sample(vals: &[f64]) -> f64 {
    if vals.len() < 2 {
        return 0.0;
    }
    let n = vals.len() as f64;
    let m = vals.iter().sum::<f64>() / n;
    (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `preds`/`gts` hold the selected components per sample in the order of
/// `comp_indices` (pose component indices 0..6). Predictions and labels are
/// in physical units: millimetres for 0..3, degrees for 3..6; reported MAE
/// converts translations to micrometres.
pub fn compute_metrics(preds: &[Vec<f64>], gts: &[Vec<f64>], comp_indices: &[usize]) -> Metrics {
    assert_eq!(preds.len(), gts.len());
    assert!(!preds.is_empty(), "no samples to evaluate");

    let mut components = Vec::with_capacity(comp_indices.len());
    for (col, &comp) in comp_indices.iter().enumerate() {
        let unit = if comp < 3 { 1000.0 } else { 1.0 }; // mm -> um
        let p: Vec<f64> = preds.iter().map(|r| r[col] * unit).collect();
        let g: Vec<f64> = gts.iter().map(|r| r[col] * unit).collect();
        let abs_err: Vec<f64> = p.iter().zip(&g).map(|(a, b)| (a - b).abs()).collect();
        let mae = abs_err.iter().sum::<f64>() / abs_err.len() as f64;
        let gt_std = std_pop(&g);
        components.push((
            comp,
            ComponentMetrics {
                mae,
                mae_std: std_sample(&abs_err),
                rmae: if gt_std > 0.0 { mae / gt_std } else { f64::INFINITY },
                acc: pearson(&p, &g),
            },
        ));
    }

    let pool = |range: std::ops::Range<usize>| -> Option<PooledMetrics> {
        let sel: Vec<&ComponentMetrics> = components
            .iter()
            .filter(|(i, _)| range.contains(i))
            .map(|(_, m)| m)
            .collect();
        if sel.is_empty() {
            return None;
        }
        // pooled error spread over all (sample, component) pairs
        let mut all_abs = Vec::new();
        for (col, &comp) in comp_indices.iter().enumerate() {
            if !range.contains(&comp) {
                continue;
            }
            let unit = if comp < 3 { 1000.0 } else { 1.0 };
            for (p, g) in preds.iter().zip(gts) {
                all_abs.push((p[col] - g[col]).abs() * unit);
            }
        }
        let n = sel.len() as f64;
        Some(PooledMetrics {
            mae: sel.iter().map(|m| m.mae).sum::<f64>() / n,
            mae_std: std_sample(&all_abs),
            rmae: sel.iter().map(|m| m.rmae).sum::<f64>() / n,
            acc: sel.iter().map(|m| m.acc).sum::<f64>() / n,
        })
    };

    Metrics {
        position: pool(0..3),
        orientation: pool(3..6),
        components,
    }
}
