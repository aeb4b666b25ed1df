//! Matting error metrics over the unknown region: SAD, MSE, gradient error
//! and connectivity error, following the conventions of the standard
//! alpha-matting benchmark scripts. Inputs are alphas in `[0, 1]`.
//!
//! SAD, Grad and Conn are reported in thousands (sum / 1000).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GRAD_SIGMA: f64 = 1.4;
pub const CONN_STEP: f64 = 0.1;
pub const CONN_PHI_THRESHOLD: f64 = 0.15;

fn check(pred: &Tensor<f32>, gt: &Tensor<f32>, unknown: &[bool]) -> Result<(usize, usize)> {
    let (sp, sg) = (pred.shape(), gt.shape());
    if sp != sg || sp.n() != 1 || sp.c() != 1 || unknown.len() != sp.numel() {
        return Err(Error::dim(format!("metrics need matching 1×1×H×W alphas and mask, got {sp}, {sg}, {}", unknown.len())));
    }
    if !unknown.iter().any(|&u| u) {
        return Err(Error::contract("metrics are undefined without unknown pixels"));
    }
    Ok((sp.h(), sp.w()))
}

pub fn sad(pred: &Tensor<f32>, gt: &Tensor<f32>, unknown: &[bool]) -> Result<f64> {
    check(pred, gt, unknown)?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(unknown)
        .filter(|(_, &u)| u)
        .map(|((&p, &g), _)| (p as f64 - g as f64).abs())
        .sum();
    Ok(s / 1000.0)
}

pub fn mse(pred: &Tensor<f32>, gt: &Tensor<f32>, unknown: &[bool]) -> Result<f64> {
    check(pred, gt, unknown)?;
    let n = unknown.iter().filter(|&&u| u).count() as f64;
    let s: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(unknown)
        .filter(|(_, &u)| u)
        .map(|((&p, &g), _)| (p as f64 - g as f64).powi(2))
        .sum();
    Ok(s / n)
}

/// First-derivative-of-Gaussian kernels `(hx, hy)` as row-major
/// `(2r+1)×(2r+1)` arrays, each scaled to unit L2 norm, and the half size `r`.
/// `hx` differentiates along columns (x).
pub fn gaussian_derivative_kernels(sigma: f64) -> (Vec<f64>, Vec<f64>, usize) {
    let eps = 1e-2;
    let half = (sigma * (-2.0 * ((2.0 * std::f64::consts::PI).sqrt() * sigma * eps).ln()).sqrt()).ceil() as usize;
    let size = 2 * half + 1;
    let gauss = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let dgauss = |x: f64| -x * gauss(x) / (sigma * sigma);
    let mut hx = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            let (u, v) = (i as f64 - half as f64, j as f64 - half as f64);
            hx[i * size + j] = gauss(u) * dgauss(v);
        }
    }
    let norm = hx.iter().map(|v| v * v).sum::<f64>().sqrt();
    hx.iter_mut().for_each(|v| *v /= norm);
    let mut hy = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            hy[i * size + j] = hx[j * size + i];
        }
    }
    (hx, hy, half)
}

/// True 2-D convolution with replicated borders.
fn convolve_replicate(img: &[f64], h: usize, w: usize, k: &[f64], half: usize) -> Vec<f64> {
    let size = 2 * half + 1;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..size {
                let sy = (y as isize + half as isize - i as isize).clamp(0, h as isize - 1) as usize;
                for j in 0..size {
                    let sx = (x as isize + half as isize - j as isize).clamp(0, w as isize - 1) as usize;
                    acc += k[i * size + j] * img[sy * w + sx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Gradient magnitude `sqrt(gx² + gy²)` with σ = 1.4 Gaussian-derivative filters.
pub fn gradient_magnitude(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (hx, hy, half) = gaussian_derivative_kernels(GRAD_SIGMA);
    let gx = convolve_replicate(img, h, w, &hx, half);
    let gy = convolve_replicate(img, h, w, &hy, half);
    gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect()
}

/// The prediction inside the unknown region and the ground truth elsewhere.
/// Known pixels are exactly 0 or 1 in the ground truth, so this is the
/// customary clamping of known-region predictions to the trimap.
fn restrict(pred: &Tensor<f32>, gt: &Tensor<f32>, unknown: &[bool]) -> Vec<f64> {
    pred.data().iter().zip(gt.data()).zip(unknown).map(|((&p, &g), &u)| if u { p as f64 } else { g as f64 }).collect()
}

pub fn gradient_error(pred: &Tensor<f32>, gt: &Tensor<f32>, unknown: &[bool]) -> Result<f64> {
    let (h, w) = check(pred, gt, unknown)?;
    let p = restrict(pred, gt, unknown);
    let g: Vec<f64> = gt.data().iter().map(|&v| v as f64).collect();
    let (mp, mg) = (gradient_magnitude(&p, h, w), gradient_magnitude(&g, h, w));
    let s: f64 = mp.iter().zip(&mg).zip(unknown).filter(|(_, &u)| u).map(|((a, b), _)| (a - b).powi(2)).sum();
    Ok(s / 1000.0)
}

/// The largest 4-connected component of `mask`. Components are ordered by
/// their first pixel in column-major order and ties keep the earliest.
pub fn largest_component(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut label = vec![usize::MAX; h * w];
    let mut best: Option<(usize, usize)> = None;
    let mut next = 0;
    let mut stack = Vec::new();
    for x in 0..w {
        for y in 0..h {
            let start = y * w + x;
            if !mask[start] || label[start] != usize::MAX {
                continue;
            }
            let id = next;
            next += 1;
            let mut size = 0;
            label[start] = id;
            stack.push(start);
            while let Some(p) = stack.pop() {
                size += 1;
                let (py, px) = (p / w, p % w);
                let mut visit = |q: usize| {
                    if mask[q] && label[q] == usize::MAX {
                        label[q] = id;
                        stack.push(q);
                    }
                };
                if py > 0 {
                    visit(p - w);
                }
                if py + 1 < h {
                    visit(p + w);
                }
                if px > 0 {
                    visit(p - 1);
                }
                if px + 1 < w {
                    visit(p + 1);
                }
            }
            if best.map_or(true, |(_, s)| size > s) {
                best = Some((id, size));
            }
        }
    }
    match best {
        Some((id, _)) => label.iter().map(|&l| l == id).collect(),
        None => vec![false; h * w],
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Connectivity {
    pub value: f64,
    /// The ground truth has no fully opaque pixel, so the reference region
    /// comes from a lower threshold.
    pub flagged: bool,
}

/// Connectivity error: per-pixel degree of connection to the largest region
/// that is opaque in both mattes, swept over thresholds in steps of 0.1.
pub fn connectivity_error(pred: &Tensor<f32>, gt: &Tensor<f32>, unknown: &[bool]) -> Result<Connectivity> {
    let (h, w) = check(pred, gt, unknown)?;
    let p = restrict(pred, gt, unknown);
    let g: Vec<f64> = gt.data().iter().map(|&v| v as f64).collect();
    let steps = (1.0 / CONN_STEP).round() as usize;
    let mut l_map = vec![-1.0f64; h * w];
    for k in 1..=steps {
        let theta = k as f64 / steps as f64;
        let both: Vec<bool> = (0..h * w).map(|i| p[i] >= theta && g[i] >= theta).collect();
        let omega = largest_component(&both, h, w);
        let prev = (k - 1) as f64 / steps as f64;
        for i in 0..h * w {
            if l_map[i] == -1.0 && !omega[i] {
                l_map[i] = prev;
            }
        }
    }
    let phi = |a: f64, l: f64| {
        let d = a - l;
        1.0 - if d >= CONN_PHI_THRESHOLD { d } else { 0.0 }
    };
    let mut s = 0.0;
    for i in 0..h * w {
        let l = if l_map[i] == -1.0 { 1.0 } else { l_map[i] };
        if unknown[i] {
            s += (phi(p[i], l) - phi(g[i], l)).abs();
        }
    }
    Ok(Connectivity { value: s / 1000.0, flagged: !g.iter().any(|&v| v >= 1.0) })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub mse: f64,
    pub sad: f64,
    pub grad: f64,
    pub conn: f64,
    pub conn_flagged: bool,
}

pub fn evaluate_pair(name: &str, pred: &Tensor<f32>, gt: &Tensor<f32>, unknown: &[bool]) -> Result<MetricRow> {
    let conn = connectivity_error(pred, gt, unknown)?;
    Ok(MetricRow {
        name: name.to_string(),
        mse: mse(pred, gt, unknown)?,
        sad: sad(pred, gt, unknown)?,
        grad: gradient_error(pred, gt, unknown)?,
        conn: conn.value,
        conn_flagged: conn.flagged,
    })
}

/// Per-image rows and their mean.
#[derive(Clone, Debug, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn mean(&self) -> MetricRow {
        let n = self.rows.len().max(1) as f64;
        let avg = |f: fn(&MetricRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        MetricRow {
            name: "mean".into(),
            mse: avg(|r| r.mse),
            sad: avg(|r| r.sad),
            grad: avg(|r| r.grad),
            conn: avg(|r| r.conn),
            conn_flagged: self.rows.iter().any(|r| r.conn_flagged),
        }
    }

    /// CSV with columns `name,MSE,SAD,Grad,Conn,conn_flagged`, one row per
    /// image followed by the mean row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["name", "MSE", "SAD", "Grad", "Conn", "conn_flagged"]).map_err(io)?;
        for r in self.rows.iter().chain(std::iter::once(&self.mean())) {
            w.write_record([
                r.name.clone(),
                format!("{:.6}", r.mse),
                format!("{:.6}", r.sad),
                format!("{:.6}", r.grad),
                format!("{:.6}", r.conn),
                r.conn_flagged.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}
