//! Image tensors, coordinate grids, PNG I/O and reconstruction quality metrics.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::bundle::Bundle;
use crate::error::{Error, Result};
use crate::siren;
use crate::weight_space::combine;

/// Value convention of an [`ImageTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueRange {
    /// `[0, 1]`
    Unit,
    /// `[-1, 1]`
    Signed,
}

impl ValueRange {
    fn bounds(self) -> (f64, f64) {
        match self {
            ValueRange::Unit => (0.0, 1.0),
            ValueRange::Signed => (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageDims {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> usize {
        self.pixels() * self.channels
    }
}

/// `H x W x C` pixels stored as a `(H*W) x C` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    dims: ImageDims,
    range: ValueRange,
    data: Array2<f64>,
}

impl ImageTensor {
    /// Values outside `range` are clamped.
    pub fn new(height: usize, width: usize, channels: usize, range: ValueRange, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!("empty image {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("unsupported channel count {channels}")));
        }
        if values.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{channels} image",
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidImage("NaN pixel value".into()));
        }
        let data = Array2::from_shape_vec((height * width, channels), values).expect("checked length");
        Ok(Self::from_matrix(height, width, range, data))
    }

    fn from_matrix(height: usize, width: usize, range: ValueRange, mut data: Array2<f64>) -> Self {
        let (lo, hi) = range.bounds();
        data.mapv_inplace(|v| v.clamp(lo, hi));
        ImageTensor {
            dims: ImageDims {
                height,
                width,
                channels: data.ncols(),
            },
            range,
            data,
        }
    }

    /// Constant image.
    pub fn filled(dims: ImageDims, range: ValueRange, value: f64) -> Result<Self> {
        Self::new(
            dims.height,
            dims.width,
            dims.channels,
            range,
            vec![value; dims.values()],
        )
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn channels(&self) -> usize {
        self.dims.channels
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    /// `(H*W) x C` view, row-major over the raster.
    pub fn pixels(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[[row * self.dims.width + col, channel]]
    }

    pub fn to_signed(&self) -> ImageTensor {
        match self.range {
            ValueRange::Signed => self.clone(),
            ValueRange::Unit => Self::from_matrix(
                self.height(),
                self.width(),
                ValueRange::Signed,
                self.data.mapv(|v| 2.0 * v - 1.0),
            ),
        }
    }

    pub fn to_unit(&self) -> ImageTensor {
        match self.range {
            ValueRange::Unit => self.clone(),
            ValueRange::Signed => Self::from_matrix(
                self.height(),
                self.width(),
                ValueRange::Unit,
                self.data.mapv(|v| (v + 1.0) / 2.0),
            ),
        }
    }

    /// Gray images are replicated into three channels.
    pub fn to_rgb(&self) -> ImageTensor {
        if self.channels() == 3 {
            return self.clone();
        }
        let mut data = Array2::zeros((self.dims.pixels(), 3));
        for (mut row, v) in data.rows_mut().into_iter().zip(self.data.column(0)) {
            row.fill(*v);
        }
        Self::from_matrix(self.height(), self.width(), self.range, data)
    }

    /// Quarter turn clockwise.
    pub fn rotate90(&self) -> ImageTensor {
        let (h, w, c) = (self.height(), self.width(), self.channels());
        let mut data = Array2::zeros((h * w, c));
        for r in 0..h {
            for col in 0..w {
                // (r, col) lands at (col, h-1-r) in the w x h result
                let dst = col * h + (h - 1 - r);
                data.row_mut(dst).assign(&self.data.row(r * w + col));
            }
        }
        Self::from_matrix(w, h, self.range, data)
    }

    pub fn is_portrait(&self) -> bool {
        self.height() > self.width()
    }
}

/// Pixel-wise mean of equally sized images.
pub fn average(images: &[&ImageTensor]) -> Result<ImageTensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidImage("cannot average zero images".into()))?;
    let mut acc = Array2::<f64>::zeros(first.data.raw_dim());
    for img in images {
        check_same(first, img)?;
        if img.range != first.range {
            return Err(Error::InvalidImage(
                "cannot average images with different ranges".into(),
            ));
        }
        acc += &img.data;
    }
    acc /= images.len() as f64;
    Ok(ImageTensor::from_matrix(
        first.height(),
        first.width(),
        first.range,
        acc,
    ))
}

/// Pixel coordinates of an `H' x W'` raster, row-major, `x` along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    height: usize,
    width: usize,
    points: Array2<f64>,
}

impl CoordGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// `len x 2` matrix of `(x, y)` rows.
    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn point(&self, index: usize) -> (f64, f64) {
        (self.points[[index, 0]], self.points[[index, 1]])
    }
}

fn axis(count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    let last = (count - 1) as f64;
    (0..count).map(|i| -1.0 + 2.0 * i as f64 / last).collect()
}

/// Endpoint-inclusive uniform grid over `[-1, 1]^2`; a single row or column maps to 0.
pub fn coord_grid(height: usize, width: usize) -> CoordGrid {
    assert!(height > 0 && width > 0, "grid dimensions must be positive");
    let xs = axis(width);
    let ys = axis(height);
    let mut points = Array2::zeros((height * width, 2));
    for (r, &y) in ys.iter().enumerate() {
        for (c, &x) in xs.iter().enumerate() {
            points[[r * width + c, 0]] = x;
            points[[r * width + c, 1]] = y;
        }
    }
    CoordGrid { height, width, points }
}

fn check_same(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::ShapeMismatch(format!("image dims {:?} vs {:?}", a.dims, b.dims)));
    }
    Ok(())
}

/// Mean squared error over all pixel channels.
pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same(a, b)?;
    let sum = Zip::from(&a.data)
        .and(&b.data)
        .fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y));
    Ok(sum / a.data.len() as f64)
}

/// `10 log10(1 / MSE)` for unit-range images; identical images give `+inf`.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.range != ValueRange::Unit || b.range != ValueRange::Unit {
        return Err(Error::InvalidImage("PSNR expects unit-range images".into()));
    }
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Per-entry `|a - b|` normalized by its own maximum.
pub fn residual(a: &ImageTensor, b: &ImageTensor) -> Result<ImageTensor> {
    check_same(a, b)?;
    let mut diff = &a.data - &b.data;
    diff.mapv_inplace(f64::abs);
    let max = diff.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        diff /= max;
    }
    Ok(ImageTensor::from_matrix(a.height(), a.width(), ValueRange::Unit, diff))
}

/// 2x2 box average; both dimensions must be even.
pub fn downsample2x(img: &ImageTensor) -> Result<ImageTensor> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidImage(format!("cannot halve odd dimensions {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut data = Array2::zeros((oh * ow, c));
    for r in 0..oh {
        for col in 0..ow {
            for ch in 0..c {
                let sum = img.get(2 * r, 2 * col, ch)
                    + img.get(2 * r, 2 * col + 1, ch)
                    + img.get(2 * r + 1, 2 * col, ch)
                    + img.get(2 * r + 1, 2 * col + 1, ch);
                data[[r * ow + col, ch]] = sum / 4.0;
            }
        }
    }
    Ok(ImageTensor::from_matrix(oh, ow, img.range, data))
}

/// Map a signed network prediction on a grid to a clamped unit-range image.
pub fn prediction_to_image(pred: &Array2<f64>, height: usize, width: usize) -> Result<ImageTensor> {
    if pred.nrows() != height * width {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for a {height}x{width} raster",
            pred.nrows()
        )));
    }
    Ok(ImageTensor::from_matrix(
        height,
        width,
        ValueRange::Unit,
        pred.mapv(|v| (v + 1.0) / 2.0),
    ))
}

/// Render image `image_index` (1-based) of a bundle at `scale` times its stored size.
pub fn reconstruct(bundle: &Bundle, image_index: usize, scale: f64) -> Result<ImageTensor> {
    let m = bundle.spec.m();
    if image_index == 0 || image_index > m {
        return Err(Error::IndexOutOfRange {
            index: image_index,
            count: m,
        });
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidImage(format!("scale must be positive, got {scale}")));
    }
    let height = ((scale * bundle.dims.height as f64).round() as usize).max(1);
    let width = ((scale * bundle.dims.width as f64).round() as usize).max(1);
    let w = combine(&bundle.bank, bundle.spec.alpha_row(image_index - 1))?;
    let grid = coord_grid(height, width);
    let pred = siren::forward(&w, &grid)?;
    let img = prediction_to_image(&pred, height, width)?;
    if bundle.dims.channels == 1 {
        // gray payload: average the three outputs
        let gray: Vec<f64> = img.data.rows().into_iter().map(|r| r.sum() / 3.0).collect();
        return ImageTensor::new(height, width, 1, ValueRange::Unit, gray);
    }
    Ok(img)
}

/// Read an 8-bit gray or RGB PNG into a unit-range tensor.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let malformed = |e: png::DecodingError| Error::MalformedPng {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(malformed)?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedPng {
            path: path.to_path_buf(),
            detail: format!("bit depth {depth:?}, expected 8"),
        });
    }
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedPng {
                path: path.to_path_buf(),
                detail: format!("color type {other:?}, expected grayscale or RGB"),
            })
        }
    };
    let size = reader.output_buffer_size().ok_or_else(|| Error::UnsupportedPng {
        path: path.to_path_buf(),
        detail: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(malformed)?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let row_len = width * channels;
    let mut values = Vec::with_capacity(height * row_len);
    for r in 0..height {
        let row = &buf[r * frame.line_size..r * frame.line_size + row_len];
        values.extend(row.iter().map(|&b| b as f64 / 255.0));
    }
    ImageTensor::new(height, width, channels, ValueRange::Unit, values)
}

/// Round half-up to 8 bits and write a gray or RGB PNG.
pub fn save_png(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let unit = img.to_unit();
    let file = File::create(path).map_err(io_err)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    encoder.set_color(if img.channels() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = unit.data.iter().map(|&v| quantize8(v)).collect();
    let encode_err = |e: png::EncodingError| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)?;
    Ok(())
}

impl ImageTensor {
    /// Unit-range copy snapped to the 8-bit levels `save_png` would write.
    pub fn to_8bit(&self) -> ImageTensor {
        let mut unit = self.to_unit();
        unit.data.mapv_inplace(|v| quantize8(v) as f64 / 255.0);
        unit
    }
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8
}

/// Side-by-side concatenation of equally tall images.
pub fn hconcat(images: &[&ImageTensor]) -> Result<ImageTensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidImage("nothing to concatenate".into()))?;
    let h = first.height();
    let c = images.iter().map(|i| i.channels()).max().unwrap_or(1);
    let total_w: usize = images.iter().map(|i| i.width()).sum();
    let mut data = Array2::zeros((h * total_w, c));
    let mut x0 = 0;
    for img in images {
        if img.height() != h {
            return Err(Error::ShapeMismatch("images differ in height".into()));
        }
        let img = if c == 3 { img.to_rgb() } else { (*img).clone() };
        let img = img.to_unit();
        for r in 0..h {
            for col in 0..img.width() {
                data.row_mut(r * total_w + x0 + col)
                    .assign(&img.data.row(r * img.width() + col));
            }
        }
        x0 += img.width();
    }
    Ok(ImageTensor::from_matrix(h, total_w, ValueRange::Unit, data))
}
