//! Image decoding, bilinear resizing and colour-space conversion.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `height × width × channels` image of real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::arg(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::arg(format!(
                "image data has {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0);
        ImageTensor {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(height > 0 && width > 0 && channels > 0);
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        ImageTensor {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    /// Copies one channel out as a single-channel image.
    pub fn channel(&self, ch: usize) -> ImageTensor {
        assert!(ch < self.channels);
        let data = self
            .data
            .iter()
            .skip(ch)
            .step_by(self.channels)
            .copied()
            .collect();
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Values of channel `ch` restricted to rows `rows`.
    pub fn channel_rows(&self, ch: usize, rows: std::ops::Range<usize>) -> Vec<f64> {
        let start = rows.start * self.width * self.channels;
        let end = rows.end * self.width * self.channels;
        self.data[start..end]
            .iter()
            .skip(ch)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Rotates the image by 90 degrees clockwise.
    pub fn rotate90(&self) -> ImageTensor {
        let (h, w) = (self.height, self.width);
        ImageTensor::from_fn(w, h, self.channels, |r, c, ch| self.get(h - 1 - c, r, ch))
    }

    /// Channel-planar copy (`C × H × W`), the layout the network consumes.
    pub fn to_planar(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        let plane = self.height * self.width;
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * plane + i] = v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Hsv,
    Lab,
    Xyz,
    #[serde(rename = "ycbcr")]
    YCbCr,
    /// Also known as NTSC.
    #[serde(alias = "ntsc")]
    Yiq,
    Gray,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Gray => 1,
            _ => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ColorSpace::Rgb => "rgb",
            ColorSpace::Hsv => "hsv",
            ColorSpace::Lab => "lab",
            ColorSpace::Xyz => "xyz",
            ColorSpace::YCbCr => "ycbcr",
            ColorSpace::Yiq => "yiq",
            ColorSpace::Gray => "gray",
        }
    }

    /// Range `[lo, hi]` of each channel as produced by [`convert_colorspace`]
    /// for inputs inside the RGB unit cube.
    pub fn channel_ranges(self) -> &'static [(f64, f64)] {
        match self {
            ColorSpace::Rgb | ColorSpace::Hsv => &[(0.0, 1.0); 3],
            ColorSpace::Gray => &[(0.0, 1.0)],
            ColorSpace::Xyz => &[
                (0.0, D65_WHITE[0]),
                (0.0, D65_WHITE[1]),
                (0.0, D65_WHITE[2]),
            ],
            // a*/b* extrema are attained at vertices of the sRGB cube.
            ColorSpace::Lab => &[(0.0, 100.0), (-86.1827, 98.2343), (-107.8602, 94.4780)],
            ColorSpace::YCbCr => &[(0.0, 1.0), (-0.5, 0.5), (-0.5, 0.5)],
            ColorSpace::Yiq => &[(0.0, 1.0), (-YIQ_I_MAX, YIQ_I_MAX), (-YIQ_Q_MAX, YIQ_Q_MAX)],
        }
    }
}

impl fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ColorSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "rgb" => ColorSpace::Rgb,
            "hsv" => ColorSpace::Hsv,
            "lab" => ColorSpace::Lab,
            "xyz" => ColorSpace::Xyz,
            "ycbcr" => ColorSpace::YCbCr,
            "yiq" | "ntsc" => ColorSpace::Yiq,
            "gray" | "grey" => ColorSpace::Gray,
            other => return Err(Error::arg(format!("unknown colour space `{other}`"))),
        })
    }
}

/// Reads a PNG or BMP file into an RGB tensor with intensities in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = image::guess_format(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Bmp) {
        return Err(Error::format(
            path,
            format!("unsupported image format {format:?}; expected PNG or BMP"),
        ));
    }
    let decoded = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    let data = decoded
        .into_raw()
        .into_iter()
        .map(|v| v as f64 / 255.0)
        .collect();
    ImageTensor::new(h as usize, w as usize, 3, data)
}

/// Bilinear resize with corner-aligned sampling: output corners sample the
/// input corners exactly.
pub fn resize(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::arg(format!(
            "resize target {out_h}x{out_w} is empty"
        )));
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let ys = sample_positions(img.height, out_h);
    let xs = sample_positions(img.width, out_w);
    let ch = img.channels;
    let mut data = Vec::with_capacity(out_h * out_w * ch);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let top = img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
                let bottom = img.get(y1, x0, c) * (1.0 - fx) + img.get(y1, x1, c) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    ImageTensor::new(out_h, out_w, ch, data)
}

fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                (src - 1) as f64 / 2.0
            } else {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// D65 reference white in XYZ.
pub const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

const YCBCR: [[f64; 3]; 3] = [
    LUMA,
    [-0.168_736, -0.331_264, 0.5],
    [0.5, -0.418_688, -0.081_312],
];

const YIQ: [[f64; 3]; 3] = [LUMA, [0.5959, -0.2746, -0.3213], [0.2115, -0.5227, 0.3112]];

const YIQ_I_MAX: f64 = 0.5959;
const YIQ_Q_MAX: f64 = 0.5227;

fn mat3(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return [0.0, s, v];
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let h = sector / 6.0;
    // rem_euclid can round up to exactly 6.0 for tiny negative inputs
    [if h >= 1.0 { 0.0 } else { h }, s, v]
}

fn rgb_to_xyz(rgb: [f64; 3]) -> [f64; 3] {
    mat3(&SRGB_TO_XYZ, rgb.map(srgb_to_linear))
}

fn xyz_to_lab(xyz: [f64; 3]) -> [f64; 3] {
    const D: f64 = 6.0 / 29.0;
    let f = |t: f64| {
        if t > D * D * D {
            t.cbrt()
        } else {
            t / (3.0 * D * D) + 4.0 / 29.0
        }
    };
    let fx = f(xyz[0] / D65_WHITE[0]);
    let fy = f(xyz[1] / D65_WHITE[1]);
    let fz = f(xyz[2] / D65_WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn convert_pixel(rgb: [f64; 3], target: ColorSpace) -> [f64; 3] {
    match target {
        ColorSpace::Rgb => rgb,
        ColorSpace::Hsv => rgb_to_hsv(rgb),
        ColorSpace::Xyz => rgb_to_xyz(rgb),
        ColorSpace::Lab => xyz_to_lab(rgb_to_xyz(rgb)),
        ColorSpace::YCbCr => mat3(&YCBCR, rgb),
        ColorSpace::Yiq => mat3(&YIQ, rgb),
        ColorSpace::Gray => {
            let y = LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2];
            [y, 0.0, 0.0]
        }
    }
}

/// Converts an RGB image into `target`.
///
/// Values keep the natural range of the target space (Lab lightness in
/// `[0, 100]`, signed chroma for Lab, YCbCr and YIQ); use
/// [`normalize_channels`] to map them onto `[0, 1]`.
pub fn convert_colorspace(img: &ImageTensor, target: ColorSpace) -> Result<ImageTensor> {
    if img.channels != 3 {
        return Err(Error::arg(format!(
            "colour conversion expects an RGB image, got {} channels",
            img.channels
        )));
    }
    let out_ch = target.channels();
    let mut data = Vec::with_capacity(img.height * img.width * out_ch);
    for px in img.data.chunks_exact(3) {
        let v = convert_pixel([px[0], px[1], px[2]], target);
        data.extend_from_slice(&v[..out_ch]);
    }
    ImageTensor::new(img.height, img.width, out_ch, data)
}

/// Maps every channel of an image in `space` onto `[0, 1]` using the
/// space's analytic channel extrema, clamping stray values.
pub fn normalize_channels(img: &ImageTensor, space: ColorSpace) -> ImageTensor {
    let ranges = space.channel_ranges();
    assert_eq!(
        ranges.len(),
        img.channels,
        "channel count does not match {space}"
    );
    let mut out = img.clone();
    for px in out.data.chunks_exact_mut(img.channels) {
        for (v, &(lo, hi)) in px.iter_mut().zip(ranges) {
            *v = ((*v - lo) / (hi - lo)).clamp(0.0, 1.0);
        }
    }
    out
}

/// Inverse of the YCbCr conversion, used to check invertibility.
pub fn ycbcr_to_rgb(img: &ImageTensor) -> Result<ImageTensor> {
    if img.channels != 3 {
        return Err(Error::arg("YCbCr image must have 3 channels"));
    }
    let mut data = Vec::with_capacity(img.data.len());
    for px in img.data.chunks_exact(3) {
        let (y, cb, cr) = (px[0], px[1], px[2]);
        data.push(y + 1.402 * cr);
        data.push(y - 0.344_136 * cb - 0.714_136 * cr);
        data.push(y + 1.772 * cb);
    }
    ImageTensor::new(img.height, img.width, 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pixel(rgb: [f64; 3]) -> ImageTensor {
        ImageTensor::new(1, 1, 3, rgb.to_vec()).unwrap()
    }

    #[test]
    fn black_is_zero_hsv() {
        let hsv = convert_colorspace(&pixel([0.0; 3]), ColorSpace::Hsv).unwrap();
        assert_eq!(hsv.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn mid_gray_has_no_yiq_chroma() {
        let yiq = convert_colorspace(&pixel([0.5; 3]), ColorSpace::Yiq).unwrap();
        assert!((yiq.get(0, 0, 0) - 0.5).abs() < 1e-12);
        assert!(yiq.get(0, 0, 1).abs() < 1e-12);
        assert!(yiq.get(0, 0, 2).abs() < 1e-12);
    }

    #[test]
    fn white_maps_to_d65() {
        let xyz = convert_colorspace(&pixel([1.0; 3]), ColorSpace::Xyz).unwrap();
        let expected = [0.9505, 1.0000, 1.0890];
        for (c, e) in expected.iter().enumerate() {
            assert!((xyz.get(0, 0, c) - e).abs() < 1e-3, "channel {c}");
        }
        let lab = convert_colorspace(&pixel([1.0; 3]), ColorSpace::Lab).unwrap();
        assert!((lab.get(0, 0, 0) - 100.0).abs() < 1e-3);
        assert!(lab.get(0, 0, 1).abs() < 1e-3);
    }

    #[test]
    fn hue_of_primaries() {
        let h = |rgb| {
            convert_colorspace(&pixel(rgb), ColorSpace::Hsv)
                .unwrap()
                .get(0, 0, 0)
        };
        assert_eq!(h([1.0, 0.0, 0.0]), 0.0);
        assert!((h([0.0, 1.0, 0.0]) - 1.0 / 3.0).abs() < 1e-12);
        assert!((h([0.0, 0.0, 1.0]) - 2.0 / 3.0).abs() < 1e-12);
        assert!((h([1.0, 0.0, 1e-9]) - 1.0).abs() < 1e-6 || h([1.0, 0.0, 1e-9]) < 1e-6);
    }

    #[test]
    fn conversion_rejects_gray_input() {
        let gray = ImageTensor::filled(2, 2, 1, 0.3);
        assert!(matches!(
            convert_colorspace(&gray, ColorSpace::Hsv),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn resize_constant_and_identity() {
        let img = ImageTensor::filled(5, 7, 3, 0.5);
        let out = resize(&img, 11, 3).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let ramp = ImageTensor::from_fn(4, 6, 3, |r, c, ch| (r * 13 + c * 7 + ch) as f64 / 97.0);
        assert_eq!(resize(&ramp, 4, 6).unwrap(), ramp);
        assert!(resize(&ramp, 0, 6).is_err());
    }

    #[test]
    fn checkerboard_center_is_half() {
        let img = ImageTensor::from_fn(2, 2, 1, |r, c, _| ((r + c) % 2) as f64);
        let out = resize(&img, 3, 3).unwrap();
        assert!((out.get(1, 1, 0) - 0.5).abs() < 1e-15);
        assert_eq!(out.get(0, 0, 0), 0.0);
        assert_eq!(out.get(0, 2, 0), 1.0);
        // edge midpoints interpolate along one axis only
        assert!((out.get(0, 1, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn normalized_channels_stay_in_unit_range() {
        let img = ImageTensor::from_fn(8, 8, 3, |r, c, ch| {
            [
                (r as f64) / 7.0,
                (c as f64) / 7.0,
                ((r * c) % 5) as f64 / 4.0,
            ][ch]
        });
        for space in [
            ColorSpace::Rgb,
            ColorSpace::Hsv,
            ColorSpace::Lab,
            ColorSpace::Xyz,
            ColorSpace::YCbCr,
            ColorSpace::Yiq,
        ] {
            let n = normalize_channels(&convert_colorspace(&img, space).unwrap(), space);
            assert!(n.data().iter().all(|v| (0.0..=1.0).contains(v)), "{space}");
        }
    }

    #[test]
    fn ntsc_alias() {
        assert_eq!("NTSC".parse::<ColorSpace>().unwrap(), ColorSpace::Yiq);
    }

    #[test]
    fn rotation_is_clockwise() {
        let img = ImageTensor::from_fn(2, 3, 1, |r, c, _| (r * 3 + c) as f64);
        let rot = img.rotate90();
        assert_eq!((rot.height(), rot.width()), (3, 2));
        // top-left of the rotated image is the old bottom-left
        assert_eq!(rot.get(0, 0, 0), 3.0);
        assert_eq!(rot.get(0, 1, 0), 0.0);
    }

    proptest! {
        #[test]
        fn ycbcr_round_trip(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let img = pixel([r, g, b]);
            let back = ycbcr_to_rgb(&convert_colorspace(&img, ColorSpace::YCbCr).unwrap()).unwrap();
            for (x, y) in img.data().iter().zip(back.data()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn gray_of_gray_is_identity(v in 0.0f64..=1.0) {
            let g = convert_colorspace(&pixel([v, v, v]), ColorSpace::Gray).unwrap();
            prop_assert!((g.get(0, 0, 0) - v).abs() < 1e-6);
        }

        #[test]
        fn hue_in_unit_interval(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let hsv = convert_colorspace(&pixel([r, g, b]), ColorSpace::Hsv).unwrap();
            prop_assert!((0.0..1.0).contains(&hsv.get(0, 0, 0)));
        }
    }
}
