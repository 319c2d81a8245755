//! Demonstration protocols and rate-distortion sweeps.

use serde::{Deserialize, Serialize};

use crate::bundle::Bundle;
use crate::error::{Error, Result};
use crate::imaging::{average, coord_grid, prediction_to_image, psnr, reconstruct, ImageTensor, ValueRange};
use crate::siren::{self, param_count, NetworkArch};
use crate::trainer::{train, TrainConfig, TrainHistory};
use crate::weight_space::{bpp, combine, default_combiner, CombinerSpec, ThetaBank};

fn glyph(size: usize, inside: impl Fn(f64, f64, f64) -> bool) -> ImageTensor {
    let half = size as f64 / 2.0;
    let stroke = size as f64 / 16.0;
    let mut values = Vec::with_capacity(size * size * 3);
    for r in 0..size {
        for c in 0..size {
            let y = r as f64 + 0.5 - half;
            let x = c as f64 + 0.5 - half;
            let v = if inside(x, y, stroke) { 0.0 } else { 1.0 };
            values.extend([v; 3]);
        }
    }
    ImageTensor::new(size, size, 3, ValueRange::Unit, values).expect("glyph values are in range")
}

/// Black plus sign on white.
pub fn plus_glyph(size: usize) -> ImageTensor {
    let reach = size as f64 * 0.375;
    glyph(size, |x, y, s| {
        (x.abs() <= s && y.abs() <= reach) || (y.abs() <= s && x.abs() <= reach)
    })
}

/// Black diagonal cross on white.
pub fn cross_glyph(size: usize) -> ImageTensor {
    let reach = size as f64 * 0.375;
    let s2 = std::f64::consts::SQRT_2;
    glyph(size, |x, y, s| {
        x.abs() <= reach && y.abs() <= reach && ((x - y).abs() / s2 <= s || (x + y).abs() / s2 <= s)
    })
}

/// Smooth colored pattern unrelated to the glyphs; stands in when no photo is supplied.
pub fn smooth_scene(size: usize) -> ImageTensor {
    let mut values = Vec::with_capacity(size * size * 3);
    let n = size.max(2) as f64 - 1.0;
    for r in 0..size {
        for c in 0..size {
            let u = c as f64 / n;
            let v = r as f64 / n;
            let blob = (-((u - 0.3).powi(2) + (v - 0.65).powi(2)) / 0.04).exp();
            values.push(0.2 + 0.6 * u * (1.0 - 0.5 * blob));
            values.push(0.3 + 0.4 * (std::f64::consts::PI * v).sin() * (1.0 - u) + 0.2 * blob);
            values.push(0.7 - 0.5 * v + 0.25 * blob);
        }
    }
    ImageTensor::new(size, size, 3, ValueRange::Unit, values).expect("scene values are in range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemoMode {
    /// Two independently trained networks, weights averaged afterwards.
    NaiveAverage,
    /// Joint training with the middle image pinned to the pixel average.
    ConstrainedAverage,
    /// Joint training with an unrelated middle image.
    DifferentThird,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsnrEntry {
    pub reconstruction: String,
    pub reference: String,
    pub psnr: f64,
}

#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub mode: DemoMode,
    /// `(name, original, reconstruction)` for every rendered image.
    pub panels: Vec<(String, ImageTensor, ImageTensor)>,
    pub table: Vec<PsnrEntry>,
    pub histories: Vec<TrainHistory>,
    /// Final weights; panel `i` is rendered from row `i` of `spec`.
    pub bank: ThetaBank,
    pub spec: CombinerSpec,
}

impl DemoOutcome {
    pub fn psnr(&self, reconstruction: &str, reference: &str) -> Option<f64> {
        self.table
            .iter()
            .find(|e| e.reconstruction == reconstruction && e.reference == reference)
            .map(|e| e.psnr)
    }

    /// Whether the run shows the behavior the mode is meant to demonstrate.
    pub fn holds(&self) -> bool {
        let get = |a: &str, b: &str| self.psnr(a, b).unwrap_or(f64::NAN);
        match self.mode {
            DemoMode::NaiveAverage => {
                let avg = get("averaged", "average");
                avg > get("averaged", "first") && avg > get("averaged", "second")
            }
            DemoMode::ConstrainedAverage => {
                let mid = get("middle", "middle");
                (mid - get("first", "first")).abs() <= 3.0 && (mid - get("second", "second")).abs() <= 3.0
            }
            DemoMode::DifferentThird => ["first", "middle", "second"].iter().all(|n| get(n, n) >= 18.0),
        }
    }

    /// Per-panel `(full precision, f16 bundle)` PSNR against the panel original.
    pub fn quantized_psnr(&self) -> Result<Vec<(f64, f64)>> {
        let dims = self.panels[0].1.dims();
        let bundle = Bundle::quantized(&self.bank, &self.spec, dims)?;
        self.panels
            .iter()
            .enumerate()
            .map(|(i, (_, original, rec))| {
                Ok((
                    psnr(rec, original)?,
                    psnr(&reconstruct(&bundle, i + 1, 1.0)?, original)?,
                ))
            })
            .collect()
    }
}

fn render(bank: &ThetaBank, alpha: &[f64], h: usize, w: usize) -> Result<ImageTensor> {
    let combined = combine(bank, ndarray::ArrayView1::from(alpha))?;
    let pred = siren::forward(&combined, &coord_grid(h, w))?;
    prediction_to_image(&pred, h, w)
}

fn entry(reconstruction: &str, reference: &str, a: &ImageTensor, b: &ImageTensor) -> Result<PsnrEntry> {
    Ok(PsnrEntry {
        reconstruction: reconstruction.into(),
        reference: reference.into(),
        psnr: psnr(a, b)?,
    })
}

/// Train single-image networks on `a` and `b` from one shared initialization and average them.
pub fn naive_average(
    a: &ImageTensor,
    b: &ImageTensor,
    arch: &NetworkArch,
    config: &TrainConfig,
) -> Result<DemoOutcome> {
    let (a, b) = (a.to_rgb().to_unit(), b.to_rgb().to_unit());
    let single = CombinerSpec::identity(1)?;
    let (bank_a, hist_a) = train(std::slice::from_ref(&a), arch, &single, config)?;
    let (bank_b, hist_b) = train(std::slice::from_ref(&b), arch, &single, config)?;
    let both = ThetaBank::new(vec![bank_a.get(0).clone(), bank_b.get(0).clone()])?;
    let (h, w) = (a.height(), a.width());
    let rec_a = render(&both, &[1.0, 0.0], h, w)?;
    let rec_b = render(&both, &[0.0, 1.0], h, w)?;
    let mixed = render(&both, &[0.5, 0.5], h, w)?;
    let avg = average(&[&a, &b])?;
    let table = vec![
        entry("first", "first", &rec_a, &a)?,
        entry("second", "second", &rec_b, &b)?,
        entry("averaged", "first", &mixed, &a)?,
        entry("averaged", "second", &mixed, &b)?,
        entry("averaged", "average", &mixed, &avg)?,
    ];
    Ok(DemoOutcome {
        mode: DemoMode::NaiveAverage,
        panels: vec![
            ("first".into(), a, rec_a),
            ("averaged".into(), avg, mixed),
            ("second".into(), b, rec_b),
        ],
        table,
        histories: vec![hist_a, hist_b],
        bank: both,
        spec: default_combiner(2, 3)?,
    })
}

fn joint(mode: DemoMode, images: [ImageTensor; 3], arch: &NetworkArch, config: &TrainConfig) -> Result<DemoOutcome> {
    let spec = default_combiner(2, 3)?;
    let (bank, history) = train(&images, arch, &spec, config)?;
    let (h, w) = (images[0].height(), images[0].width());
    let mut panels = Vec::new();
    let mut table = Vec::new();
    for (i, (name, img)) in ["first", "middle", "second"].iter().zip(images).enumerate() {
        let row: Vec<f64> = spec.alpha_row(i).to_vec();
        let rec = render(&bank, &row, h, w)?;
        table.push(entry(name, name, &rec, &img)?);
        panels.push(((*name).to_string(), img, rec));
    }
    Ok(DemoOutcome {
        mode,
        panels,
        table,
        histories: vec![history],
        bank,
        spec,
    })
}

/// Joint training on `[a, (a + b) / 2, b]` with the default two-endpoint combiner.
pub fn constrained_average(
    a: &ImageTensor,
    b: &ImageTensor,
    arch: &NetworkArch,
    config: &TrainConfig,
) -> Result<DemoOutcome> {
    let (a, b) = (a.to_rgb().to_unit(), b.to_rgb().to_unit());
    let avg = average(&[&a, &b])?;
    joint(DemoMode::ConstrainedAverage, [a, avg, b], arch, config)
}

/// Joint training on `[a, third, b]`; `third` is rendered from the averaged weights.
pub fn different_third(
    a: &ImageTensor,
    b: &ImageTensor,
    third: &ImageTensor,
    arch: &NetworkArch,
    config: &TrainConfig,
) -> Result<DemoOutcome> {
    let imgs = [a, third, b].map(|i| i.to_rgb().to_unit());
    joint(DemoMode::DifferentThird, imgs, arch, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    VaryM,
    VaryArch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub mode: SweepMode,
    /// Images per bundle for each point (vary-M) or the fixed group size (vary-arch).
    pub group_sizes: Vec<usize>,
    /// `(l, n)` for each point (vary-arch) or the fixed architecture (vary-M).
    pub archs: Vec<(usize, usize)>,
    pub n_weights: usize,
    pub train: TrainConfig,
}

impl SweepSpec {
    /// Expanded `(M, l, n)` points in order.
    pub fn points(&self) -> Result<Vec<(usize, usize, usize)>> {
        let pts: Vec<(usize, usize, usize)> = match self.mode {
            SweepMode::VaryM => {
                let &[(l, n)] = self.archs.as_slice() else {
                    return Err(Error::InvalidConfig("vary-M needs exactly one architecture".into()));
                };
                self.group_sizes.iter().map(|&m| (m, l, n)).collect()
            }
            SweepMode::VaryArch => {
                let &[m] = self.group_sizes.as_slice() else {
                    return Err(Error::InvalidConfig("vary-arch needs exactly one group size".into()));
                };
                self.archs.iter().map(|&(l, n)| (m, l, n)).collect()
            }
        };
        if pts.is_empty() {
            return Err(Error::InvalidConfig("empty variation list".into()));
        }
        for &(m, l, n) in &pts {
            NetworkArch::new(l, n)?;
            if m < self.n_weights {
                return Err(Error::InvalidConfig(format!(
                    "M={m} is smaller than N={}",
                    self.n_weights
                )));
            }
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: SweepMode,
    #[serde(rename = "M")]
    pub m: usize,
    pub l: usize,
    pub n: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub bpp: f64,
    pub mean_psnr: f64,
    pub std_psnr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub status: String,
}

/// Contiguous groups of `m` indices; a remainder smaller than `m` is left out.
pub fn contiguous_groups(count: usize, m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return Vec::new();
    }
    (0..count / m).map(|g| (g * m..(g + 1) * m).collect()).collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// PSNR of every image of a group after the f16 round trip.
pub fn compress_group(
    images: &[ImageTensor],
    arch: &NetworkArch,
    spec: &CombinerSpec,
    config: &TrainConfig,
) -> Result<(Bundle, Vec<f64>)> {
    let (bank, _) = train(images, arch, spec, config)?;
    let bundle = Bundle::quantized(&bank, spec, images[0].dims())?;
    let scores = images
        .iter()
        .enumerate()
        .map(|(i, img)| psnr(&reconstruct(&bundle, i + 1, 1.0)?, &img.to_unit()))
        .collect::<Result<Vec<_>>>()?;
    Ok((bundle, scores))
}

/// One row per point; a failing point is annotated and the sweep continues.
pub fn run_sweep(images: &[ImageTensor], spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    let points = spec.points()?;
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidImage("sweep needs at least one image".into()))?;
    let dims = first.dims();
    if let Some(bad) = images.iter().position(|i| i.dims() != dims) {
        return Err(Error::ShapeMismatch(format!(
            "image {} differs in size from image 1",
            bad + 1
        )));
    }
    let mut rows = Vec::with_capacity(points.len());
    for (m, l, n) in points {
        let arch = NetworkArch::new(l, n)?;
        let mut row = SweepRow {
            mode: spec.mode.clone(),
            m,
            l,
            n,
            p: param_count(&arch),
            bpp: bpp(&arch, spec.n_weights, m, dims, 16),
            mean_psnr: f64::NAN,
            std_psnr: f64::NAN,
            epochs: spec.train.epochs,
            seed: spec.train.seed,
            status: "ok".into(),
        };
        match sweep_point(images, &arch, spec.n_weights, m, &spec.train) {
            Ok(scores) => {
                let (mean, std) = mean_std(&scores);
                row.mean_psnr = mean;
                row.std_psnr = std;
            }
            Err(e) => row.status = format!("error: {e}"),
        }
        rows.push(row);
    }
    Ok(rows)
}

fn sweep_point(
    images: &[ImageTensor],
    arch: &NetworkArch,
    n: usize,
    m: usize,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    let groups = contiguous_groups(images.len(), m);
    if groups.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "M={m} exceeds the {} available images",
            images.len()
        )));
    }
    let spec = if n == m {
        CombinerSpec::identity(n)?
    } else {
        default_combiner(n, m)?
    };
    let mut scores = Vec::new();
    for group in groups {
        let imgs: Vec<ImageTensor> = group.iter().map(|&i| images[i].clone()).collect();
        scores.extend(compress_group(&imgs, arch, &spec, config)?.1);
    }
    Ok(scores)
}
