//! Synthetic thermal sequences from the 2-D Pennes bioheat equation
//!
//! ```text
//! ρc ∂T/∂t = k ∇²T + ω_b c_b (T_a − T) + q_m + q_lesion
//! ```
//!
//! solved with an explicit 5-point stencil on a uniform grid. Boundaries use
//! ghost cells: a copy of the edge cell (insulated) or a fixed ambient value.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, Header, IoError};
use crate::rng::{derive_seed, derived_rng};
use crate::thermal_data::{write_mask, write_sequence_csv, DataError, Mask, RoiMask, ThermalSequence};
use crate::Matrix;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("time step {dt} s exceeds the stability limit {limit} s")]
    UnstableTimestep { dt: f64, limit: f64 },
    #[error("lesion {index} does not fit inside the grid")]
    LesionOutOfBounds { index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    #[default]
    Insulated,
    FixedAmbient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lesion {
    /// `(row, col)` in pixels.
    pub center: (f64, f64),
    /// Pixels.
    pub radius: f64,
    /// W/m³ added inside the disk.
    pub extra_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomParams {
    pub rows: usize,
    pub cols: usize,
    /// Grid spacing, m.
    pub dx: f64,
    /// Time step, s.
    pub dt: f64,
    pub steps: usize,
    pub frames: usize,
    /// Tissue conductivity, W/(m·K).
    pub k_t: f64,
    /// Volumetric heat capacity, J/(m³·K).
    pub rho_c: f64,
    /// Perfusion coefficient ω_b·c_b, W/(m³·K).
    pub omega_b_cb: f64,
    /// Arterial temperature, °C.
    pub t_a: f64,
    /// Basal metabolic heat, W/m³.
    pub q_m: f64,
    /// Uniform initial temperature, °C.
    pub t_init: f64,
    pub boundary: Boundary,
    /// Ghost-cell value for [`Boundary::FixedAmbient`], °C.
    pub t_ambient: f64,
    pub lesions: Vec<Lesion>,
    /// Sensor noise standard deviation, °C.
    pub noise_std: f64,
    /// Emitted temperatures are rounded to this many decimals.
    pub decimals: Option<u32>,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            dx: 0.002,
            dt: 1.0,
            steps: 600,
            frames: 23,
            k_t: 0.5,
            rho_c: 3.8e6,
            omega_b_cb: 2400.0,
            t_a: 37.0,
            q_m: 450.0,
            t_init: 33.0,
            boundary: Boundary::Insulated,
            t_ambient: 33.0,
            lesions: Vec::new(),
            noise_std: 0.04,
            decimals: Some(4),
            seed: 0,
        }
    }
}

impl PhantomParams {
    /// Largest stable explicit step, `ρc / (4k/dx² + ω_b c_b)`.
    pub fn stability_limit(&self) -> f64 {
        let rate = 4.0 * self.k_t / (self.dx * self.dx) + self.omega_b_cb;
        if rate > 0.0 {
            self.rho_c / rate
        } else {
            f64::INFINITY
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.rows < 3 || self.cols < 3 {
            return Err(PhantomError::InvalidParameter("grid must be at least 3x3"));
        }
        if !(self.dx > 0.0 && self.dt > 0.0 && self.rho_c > 0.0) {
            return Err(PhantomError::InvalidParameter("dx, dt and rho_c must be positive"));
        }
        if !(self.k_t >= 0.0 && self.omega_b_cb >= 0.0 && self.q_m >= 0.0 && self.noise_std >= 0.0) {
            return Err(PhantomError::InvalidParameter("k_t, omega_b_cb, q_m and noise_std must be >= 0"));
        }
        if self.frames < 2 || self.steps < self.frames {
            return Err(PhantomError::InvalidParameter("need 2 <= frames <= steps"));
        }
        let limit = self.stability_limit();
        if self.dt > limit {
            return Err(PhantomError::UnstableTimestep { dt: self.dt, limit });
        }
        for (index, l) in self.lesions.iter().enumerate() {
            let (r, c) = l.center;
            let fits = l.radius > 0.0
                && l.extra_q >= 0.0
                && r - l.radius >= 0.0
                && c - l.radius >= 0.0
                && r + l.radius <= (self.rows - 1) as f64
                && c + l.radius <= (self.cols - 1) as f64;
            if !fits {
                return Err(PhantomError::LesionOutOfBounds { index });
            }
        }
        Ok(())
    }

    /// Source term `q_m + Σ extra_q` per pixel.
    pub fn source_field(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| {
            self.q_m + self.lesions.iter().filter(|l| inside(l, i, j)).map(|l| l.extra_q).sum::<f64>()
        })
    }

    /// Step indices at which frames are emitted.
    pub fn frame_steps(&self) -> Vec<usize> {
        (1..=self.frames).map(|j| (j * self.steps + self.frames / 2) / self.frames).collect()
    }
}

fn inside(l: &Lesion, i: usize, j: usize) -> bool {
    let (dr, dc) = (i as f64 - l.center.0, j as f64 - l.center.1);
    dr * dr + dc * dc <= l.radius * l.radius
}

pub fn lesion_mask(rows: usize, cols: usize, lesions: &[Lesion]) -> Mask {
    Mask::from_fn(rows, cols, |i, j| lesions.iter().any(|l| inside(l, i, j)))
}

/// One explicit step in place; `next` is scratch of the same shape.
pub fn step(t: &Matrix, next: &mut Matrix, source: &Matrix, p: &PhantomParams) {
    let (rows, cols) = t.shape();
    let diff = p.k_t / (p.dx * p.dx);
    let scale = p.dt / p.rho_c;
    let ghost = |i: isize, j: isize, own: f64| -> f64 {
        if i < 0 || j < 0 || i >= rows as isize || j >= cols as isize {
            match p.boundary {
                Boundary::Insulated => own,
                Boundary::FixedAmbient => p.t_ambient,
            }
        } else {
            t[(i as usize, j as usize)]
        }
    };
    for j in 0..cols {
        for i in 0..rows {
            let c = t[(i, j)];
            let (ii, jj) = (i as isize, j as isize);
            let lap = ghost(ii - 1, jj, c) + ghost(ii + 1, jj, c) + ghost(ii, jj - 1, c) + ghost(ii, jj + 1, c) - 4.0 * c;
            next[(i, j)] = c + scale * (diff * lap + p.omega_b_cb * (p.t_a - c) + source[(i, j)]);
        }
    }
}

/// Noise-free temperature fields at each of `at_steps` (ascending).
pub fn run_fields(p: &PhantomParams, at_steps: &[usize]) -> Result<Vec<Matrix>, PhantomError> {
    p.validate()?;
    let source = p.source_field();
    let mut t = Matrix::from_element(p.rows, p.cols, p.t_init);
    let mut next = t.clone();
    let mut out = Vec::with_capacity(at_steps.len());
    let mut done = 0;
    for &target in at_steps {
        while done < target {
            step(&t, &mut next, &source, p);
            std::mem::swap(&mut t, &mut next);
            done += 1;
        }
        out.push(t.clone());
    }
    Ok(out)
}

fn quantize(v: f64, decimals: Option<u32>) -> f64 {
    match decimals {
        Some(d) => {
            let scale = 10f64.powi(d as i32);
            (v * scale).round() / scale
        }
        None => v,
    }
}

/// Simulate and emit `frames` noisy frames sampled uniformly over the run.
pub fn simulate(p: &PhantomParams, case_id: &str, label: Option<bool>) -> Result<ThermalSequence, PhantomError> {
    let fields = run_fields(p, &p.frame_steps())?;
    let mut rng = derived_rng(p.seed, "sensor-noise");
    let frames = if p.noise_std > 0.0 {
        let normal = Normal::new(0.0, p.noise_std).map_err(|_| PhantomError::InvalidParameter("noise_std"))?;
        fields.into_iter().map(|f| f.map(|v| quantize(v + normal.sample(&mut rng), p.decimals))).collect()
    } else {
        fields.into_iter().map(|f| f.map(|v| quantize(v, p.decimals))).collect()
    };
    Ok(ThermalSequence::new(frames, case_id, label)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub sequence: ThermalSequence,
    pub lesions: Vec<Lesion>,
    pub params: PhantomParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub cases: Vec<PhantomCase>,
    pub roi: RoiMask,
}

impl Cohort {
    pub fn labels(&self) -> Vec<bool> {
        self.cases.iter().map(|c| c.sequence.label().unwrap_or(false)).collect()
    }
}

/// ROI disk radius as a fraction of the shorter grid side.
pub const ROI_RADIUS_FRACTION: f64 = 0.35;
pub const REFERENCE_ROWS: usize = 4;

/// Central disk ROI with a reference strip along the top edge.
pub fn cohort_roi(rows: usize, cols: usize) -> Result<RoiMask, PhantomError> {
    let center = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let radius = ROI_RADIUS_FRACTION * rows.min(cols) as f64;
    let roi = Mask::disk(rows, cols, center, radius);
    let reference = Mask::from_fn(rows, cols, |i, _| i < REFERENCE_ROWS.min(rows / 8).max(1));
    Ok(RoiMask::new(roi, Some(reference))?)
}

/// Signal region (lesion disks) and noise region (ROI background at least
/// `margin` pixels from every lesion edge).
pub fn snr_regions(roi: &RoiMask, lesions: &[Lesion], margin: f64) -> (Mask, Mask) {
    let (rows, cols) = roi.shape();
    let signal = lesion_mask(rows, cols, lesions);
    let grown: Vec<Lesion> = lesions.iter().map(|l| Lesion { radius: l.radius + margin, ..*l }).collect();
    let noise = roi.mask().difference(&lesion_mask(rows, cols, &grown));
    (signal, noise)
}

fn jitter(rng: &mut crate::rng::Rng, v: f64, rel: f64) -> f64 {
    v * rng.random_range(1.0 - rel..=1.0 + rel)
}

/// Seeded cohort: `round(n · fraction)` lesion cases with 1–2 lesions inside
/// the ROI, per-case jitter of basal parameters, labels in shuffled order.
pub fn make_cohort(n_cases: usize, lesion_fraction: f64, template: &PhantomParams, seed: u64) -> Result<Cohort, PhantomError> {
    if n_cases < 2 {
        return Err(PhantomError::InvalidParameter("n_cases must be >= 2"));
    }
    if !(0.0..=1.0).contains(&lesion_fraction) {
        return Err(PhantomError::InvalidParameter("lesion_fraction must be in [0, 1]"));
    }
    let n_pos = (n_cases as f64 * lesion_fraction).round() as usize;
    let mut labels: Vec<bool> = (0..n_cases).map(|i| i < n_pos).collect();
    labels.shuffle(&mut derived_rng(seed, "labels"));
    let roi = cohort_roi(template.rows, template.cols)?;
    let roi_center = ((template.rows as f64 - 1.0) / 2.0, (template.cols as f64 - 1.0) / 2.0);
    let roi_radius = ROI_RADIUS_FRACTION * template.rows.min(template.cols) as f64;

    let cases = labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = derived_rng(seed, &format!("case{i}"));
            let mut p = template.clone();
            p.k_t = jitter(&mut rng, template.k_t, 0.1);
            p.omega_b_cb = jitter(&mut rng, template.omega_b_cb, 0.1);
            p.q_m = jitter(&mut rng, template.q_m, 0.1);
            p.t_init = template.t_init + rng.random_range(-0.5..=0.5);
            p.seed = derive_seed(seed, &format!("case{i}-sensor"));
            p.lesions = if label {
                let count = rng.random_range(1..=2);
                (0..count)
                    .map(|_| {
                        let radius = rng.random_range(3.0..=6.0);
                        let reach = (roi_radius - radius - 2.0).max(0.0);
                        let (dist, angle) = (reach * rng.random::<f64>().sqrt(), rng.random_range(0.0..std::f64::consts::TAU));
                        Lesion {
                            center: (roi_center.0 + dist * angle.sin(), roi_center.1 + dist * angle.cos()),
                            radius,
                            extra_q: rng.random_range(5000.0..=15000.0),
                        }
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let sequence = simulate(&p, &format!("case{i:03}"), Some(label))?;
            Ok(PhantomCase { sequence, lesions: p.lesions.clone(), params: p })
        })
        .collect::<Result<Vec<_>, PhantomError>>()?;
    Ok(Cohort { cases, roi })
}

fn render_lesions(lesions: &[Lesion]) -> String {
    lesions
        .iter()
        .map(|l| format!("{}/{}/{}/{}", io::fmt_f64(l.center.0), io::fmt_f64(l.center.1), io::fmt_f64(l.radius), io::fmt_f64(l.extra_q)))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_lesions(text: &str) -> Option<Vec<Lesion>> {
    if text.is_empty() {
        return Some(Vec::new());
    }
    text.split(';')
        .map(|item| {
            let v: Vec<f64> = item.split('/').map(str::parse).collect::<Result<_, _>>().ok()?;
            (v.len() == 4).then(|| Lesion { center: (v[0], v[1]), radius: v[2], extra_q: v[3] })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortEntry {
    pub case_id: String,
    pub label: bool,
    pub lesions: Vec<Lesion>,
}

pub fn cohort_manifest_csv(cohort: &Cohort, header: &Header) -> String {
    let mut text = header.render();
    text.push_str("case_id,label,k_t,omega_b_cb,q_m,t_init,lesions\n");
    for c in &cohort.cases {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{}",
            c.sequence.case_id(),
            c.sequence.label().unwrap_or(false) as u8,
            io::fmt_f64(c.params.k_t),
            io::fmt_f64(c.params.omega_b_cb),
            io::fmt_f64(c.params.q_m),
            io::fmt_f64(c.params.t_init),
            render_lesions(&c.lesions)
        );
    }
    text
}

pub fn read_cohort_manifest(path: &Path) -> Result<Vec<CohortEntry>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| io::read_err(path, e))?;
    let malformed = |reason: String| IoError::Malformed { path: path.to_path_buf(), reason };
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        if rec.len() != 7 {
            return Err(malformed(format!("expected 7 columns, got {}", rec.len())));
        }
        let label = match &rec[1] {
            "1" => true,
            "0" => false,
            other => return Err(malformed(format!("label {other:?}"))),
        };
        let lesions = parse_lesions(&rec[6]).ok_or_else(|| malformed(format!("lesions {:?}", &rec[6])))?;
        out.push(CohortEntry { case_id: rec[0].to_string(), label, lesions });
    }
    Ok(out)
}

/// Write `cohort.csv`, `roi.png`, `reference.png` and one CSV frame
/// directory per case under `dir`.
pub fn write_cohort(dir: &Path, cohort: &Cohort, header: &Header) -> Result<(), PhantomError> {
    io::write_text(&dir.join("cohort.csv"), &cohort_manifest_csv(cohort, header)).map_err(DataError::from)?;
    write_mask(&dir.join("roi.png"), cohort.roi.mask())?;
    if let Some(reference) = cohort.roi.reference() {
        write_mask(&dir.join("reference.png"), reference)?;
    }
    cohort
        .cases
        .par_iter()
        .try_for_each(|c| write_sequence_csv(&dir.join(c.sequence.case_id()), &c.sequence))?;
    Ok(())
}
