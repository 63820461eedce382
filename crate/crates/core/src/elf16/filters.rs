//! Texture filter banks: Gabor quadrature pairs, rotation-invariant Schmid
//! kernels and the radius-1 local binary pattern.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

/// One Gabor filter. `orientation` is in radians, measured from the image
/// column axis; the carrier varies along that direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    pub wavelength: f64,
    pub orientation: f64,
    pub sigma: f64,
    pub aspect: f64,
}

impl GaborParams {
    pub fn new(wavelength: f64, orientation: f64) -> Self {
        GaborParams {
            wavelength,
            orientation,
            sigma: 0.56 * wavelength,
            aspect: 1.0,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0 && self.sigma > 0.0 && self.aspect > 0.0)
            || !self.orientation.is_finite()
        {
            return Err(Error::arg(format!("invalid Gabor parameters {self:?}")));
        }
        Ok(())
    }
}

/// Two scales by four orientations.
pub fn default_gabor_bank() -> Vec<GaborParams> {
    let mut bank = Vec::with_capacity(8);
    for wavelength in [4.0, 8.0] {
        for k in 0..4 {
            bank.push(GaborParams::new(wavelength, k as f64 * PI / 4.0));
        }
    }
    bank
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchmidParams {
    pub sigma: f64,
    pub tau: f64,
}

impl SchmidParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.tau.is_finite() {
            return Err(Error::arg(format!("invalid Schmid parameters {self:?}")));
        }
        Ok(())
    }
}

/// The 13 classical (sigma, tau) pairs.
pub fn default_schmid_bank() -> Vec<SchmidParams> {
    [
        (2, 1),
        (4, 1),
        (4, 2),
        (6, 1),
        (6, 2),
        (6, 3),
        (8, 1),
        (8, 2),
        (8, 3),
        (10, 1),
        (10, 2),
        (10, 3),
        (10, 4),
    ]
    .into_iter()
    .map(|(s, t)| SchmidParams {
        sigma: s as f64,
        tau: t as f64,
    })
    .collect()
}

/// Square correlation kernel of odd side `2 * radius + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub radius: usize,
    pub weights: Vec<f64>,
}

impl Kernel {
    pub fn from_fn(radius: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let side = 2 * radius + 1;
        let r = radius as f64;
        let mut weights = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                // (row offset, column offset)
                weights.push(f(i as f64 - r, j as f64 - r));
            }
        }
        Kernel { radius, weights }
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }
}

/// Even and odd Gabor kernels sharing one envelope.
pub fn gabor_kernels(p: &GaborParams) -> (Kernel, Kernel) {
    let radius = (3.0 * p.sigma).ceil() as usize;
    let (sin_t, cos_t) = p.orientation.sin_cos();
    let envelope_and_phase = |dy: f64, dx: f64| {
        let xr = dx * cos_t + dy * sin_t;
        let yr = -dx * sin_t + dy * cos_t;
        let env = (-(xr * xr + p.aspect * p.aspect * yr * yr) / (2.0 * p.sigma * p.sigma)).exp();
        (env, 2.0 * PI * xr / p.wavelength)
    };
    let even = Kernel::from_fn(radius, |dy, dx| {
        let (env, phase) = envelope_and_phase(dy, dx);
        env * phase.cos()
    });
    let odd = Kernel::from_fn(radius, |dy, dx| {
        let (env, phase) = envelope_and_phase(dy, dx);
        env * phase.sin()
    });
    (even, odd)
}

/// `F(r) = F0 + cos(pi * tau * r / sigma) * exp(-r^2 / 2 sigma^2)` with `F0`
/// removing the mean, scaled to unit L1 norm.
pub fn schmid_kernel(p: &SchmidParams) -> Kernel {
    let radius = (3.0 * p.sigma).ceil() as usize;
    let mut k = Kernel::from_fn(radius, |dy, dx| {
        let r = (dy * dy + dx * dx).sqrt();
        (PI * p.tau * r / p.sigma).cos() * (-(r * r) / (2.0 * p.sigma * p.sigma)).exp()
    });
    let mean = k.weights.iter().sum::<f64>() / k.weights.len() as f64;
    k.weights.iter_mut().for_each(|w| *w -= mean);
    let l1: f64 = k.weights.iter().map(|w| w.abs()).sum();
    if l1 > 0.0 {
        k.weights.iter_mut().for_each(|w| *w /= l1);
    }
    k
}

/// Reflects an out-of-range index back into `0..n` without repeating the
/// edge sample (`-1 -> 1`, `n -> n - 2`). Works for any offset.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Same-size correlation of a single-channel image with a reflected border.
pub fn correlate_same(img: &ImageTensor, kernel: &Kernel) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let side = kernel.side();
    let r = kernel.radius as isize;
    let src = img.data();
    let cols: Vec<Vec<usize>> = (0..w)
        .map(|c| {
            (0..side)
                .map(|j| reflect_index(c as isize + j as isize - r, w))
                .collect()
        })
        .collect();
    let mut out = vec![0.0; h * w];
    for row in 0..h {
        let rows: Vec<usize> = (0..side)
            .map(|i| reflect_index(row as isize + i as isize - r, h))
            .collect();
        for (col, col_idx) in cols.iter().enumerate() {
            let mut acc = 0.0;
            for (i, &sr) in rows.iter().enumerate() {
                let krow = &kernel.weights[i * side..(i + 1) * side];
                let srow = &src[sr * w..(sr + 1) * w];
                for (kw, &sc) in krow.iter().zip(col_idx) {
                    acc += kw * srow[sc];
                }
            }
            out[row * w + col] = acc;
        }
    }
    out
}

/// Rescales to `[0, 1]`; a constant map becomes all zero.
pub fn min_max_normalize(values: &mut [f64]) {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = max - min;
    if !(span > 1e-12 * max.abs().max(1.0)) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    values.iter_mut().for_each(|v| *v = (*v - min) / span);
}

fn require_gray(img: &ImageTensor) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::arg(format!(
            "texture filters need a single-channel image, got {} channels",
            img.channels()
        )));
    }
    Ok(())
}

/// Gabor magnitude maps before normalization.
pub fn gabor_magnitudes(gray: &ImageTensor, bank: &[(Kernel, Kernel)]) -> Result<Vec<ImageTensor>> {
    require_gray(gray)?;
    bank.iter()
        .map(|(even, odd)| {
            let e = correlate_same(gray, even);
            let o = correlate_same(gray, odd);
            let mag = e.iter().zip(&o).map(|(a, b)| a.hypot(*b)).collect();
            ImageTensor::new(gray.height(), gray.width(), 1, mag)
        })
        .collect()
}

/// Absolute Schmid responses before normalization.
pub fn schmid_magnitudes(gray: &ImageTensor, bank: &[Kernel]) -> Result<Vec<ImageTensor>> {
    require_gray(gray)?;
    bank.iter()
        .map(|k| {
            let resp = correlate_same(gray, k).into_iter().map(f64::abs).collect();
            ImageTensor::new(gray.height(), gray.width(), 1, resp)
        })
        .collect()
}

pub(crate) fn normalized(maps: Vec<ImageTensor>) -> Vec<ImageTensor> {
    maps.into_iter()
        .map(|m| {
            let (h, w) = (m.height(), m.width());
            let mut data = m.into_data();
            min_max_normalize(&mut data);
            ImageTensor::new(h, w, 1, data).expect("shape preserved")
        })
        .collect()
}

/// One min-max normalized magnitude map per Gabor filter.
pub fn gabor_responses(gray: &ImageTensor, bank: &[GaborParams]) -> Result<Vec<ImageTensor>> {
    let kernels: Vec<_> = bank
        .iter()
        .map(|p| p.validate().map(|_| gabor_kernels(p)))
        .collect::<Result<_>>()?;
    Ok(normalized(gabor_magnitudes(gray, &kernels)?))
}

/// One min-max normalized magnitude map per Schmid filter.
pub fn schmid_responses(gray: &ImageTensor, bank: &[SchmidParams]) -> Result<Vec<ImageTensor>> {
    let kernels: Vec<_> = bank
        .iter()
        .map(|p| p.validate().map(|_| schmid_kernel(p)))
        .collect::<Result<_>>()?;
    Ok(normalized(schmid_magnitudes(gray, &kernels)?))
}

/// Neighbour offsets `(d_row, d_col)`; neighbour `i` sets bit `1 << i`.
pub const LBP_NEIGHBOURS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
];

/// 8-neighbour radius-1 LBP codes scaled by `1/255`. A bit is set when the
/// neighbour is greater than or equal to the centre; borders reflect.
pub fn lbp_map(gray: &ImageTensor) -> Result<ImageTensor> {
    require_gray(gray)?;
    let (h, w) = (gray.height(), gray.width());
    if h < 3 || w < 3 {
        return Err(Error::arg(format!(
            "LBP needs at least 3x3 pixels, got {h}x{w}"
        )));
    }
    let mut codes = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let centre = gray.get(r, c, 0);
            let mut code = 0u32;
            for (bit, &(dr, dc)) in LBP_NEIGHBOURS.iter().enumerate() {
                let nr = reflect_index(r as isize + dr, h);
                let nc = reflect_index(c as isize + dc, w);
                if gray.get(nr, nc, 0) >= centre {
                    code |= 1 << bit;
                }
            }
            codes.push(code as f64 / 255.0);
        }
    }
    ImageTensor::new(h, w, 1, codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_gray(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(h, w, 1, |_, _, _| rng.gen())
    }

    #[test]
    fn reflect_index_cases() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(-9, 5), 1);
        assert_eq!(reflect_index(12, 5), 4);
        assert_eq!(reflect_index(-3, 1), 0);
        for i in -40..40 {
            assert!(reflect_index(i, 4) < 4);
        }
    }

    #[test]
    fn correlation_matches_brute_force() {
        let img = random_gray(8, 8, 3);
        let kernel = Kernel::from_fn(2, |dy, dx| (dy * 3.0 + dx).sin() + 0.1 * dy * dx);
        let fast = correlate_same(&img, &kernel);
        for r in 0..8isize {
            for c in 0..8isize {
                let mut acc = 0.0;
                for i in -2..=2isize {
                    for j in -2..=2isize {
                        let mut rr = r + i;
                        let mut cc = c + j;
                        if rr < 0 {
                            rr = -rr;
                        }
                        if rr > 7 {
                            rr = 14 - rr;
                        }
                        if cc < 0 {
                            cc = -cc;
                        }
                        if cc > 7 {
                            cc = 14 - cc;
                        }
                        let k = kernel.weights[((i + 2) * 5 + (j + 2)) as usize];
                        acc += k * img.get(rr as usize, cc as usize, 0);
                    }
                }
                assert!((fast[(r * 8 + c) as usize] - acc).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lbp_matches_direct_recomputation() {
        let img = random_gray(8, 8, 11);
        let map = lbp_map(&img).unwrap();
        let px = |r: isize, c: isize| {
            let r = if r < 0 {
                1
            } else if r > 7 {
                6
            } else {
                r
            };
            let c = if c < 0 {
                1
            } else if c > 7 {
                6
            } else {
                c
            };
            img.get(r as usize, c as usize, 0)
        };
        for r in 0..8isize {
            for c in 0..8isize {
                let centre = px(r, c);
                let ring = [
                    px(r - 1, c - 1),
                    px(r - 1, c),
                    px(r - 1, c + 1),
                    px(r, c + 1),
                    px(r + 1, c + 1),
                    px(r + 1, c),
                    px(r + 1, c - 1),
                    px(r, c - 1),
                ];
                let mut code = 0.0;
                for (k, v) in ring.iter().enumerate() {
                    if *v >= centre {
                        code += 2f64.powi(k as i32);
                    }
                }
                assert!((map.get(r as usize, c as usize, 0) - code / 255.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lbp_constant_and_bright_centre() {
        let flat = ImageTensor::filled(4, 5, 1, 0.3);
        assert!(lbp_map(&flat).unwrap().data().iter().all(|&v| v == 1.0));

        let mut dot = ImageTensor::filled(3, 3, 1, 0.0);
        dot.set(1, 1, 0, 1.0);
        assert_eq!(lbp_map(&dot).unwrap().get(1, 1, 0), 0.0);

        assert!(lbp_map(&ImageTensor::filled(2, 5, 1, 0.0)).is_err());
        assert!(lbp_map(&ImageTensor::filled(4, 4, 3, 0.0)).is_err());
    }

    #[test]
    fn constant_image_gives_zero_maps() {
        let flat = ImageTensor::filled(12, 10, 1, 0.7);
        let g = gabor_responses(&flat, &default_gabor_bank()).unwrap();
        assert_eq!(g.len(), 8);
        assert!(g.iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
        let s = schmid_responses(&flat, &default_schmid_bank()).unwrap();
        assert_eq!(s.len(), 13);
        assert!(s.iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gabor_prefers_aligned_grating() {
        // intensity varies along columns: vertical bars
        let img = ImageTensor::from_fn(32, 32, 1, |_, c, _| {
            0.5 + 0.5 * (2.0 * PI * c as f64 / 8.0).cos()
        });
        let aligned = gabor_kernels(&GaborParams::new(8.0, 0.0));
        let orthogonal = gabor_kernels(&GaborParams::new(8.0, PI / 2.0));
        let maps = gabor_magnitudes(&img, &[aligned, orthogonal]).unwrap();
        let mean = |m: &ImageTensor| m.data().iter().sum::<f64>() / m.data().len() as f64;
        assert!(mean(&maps[0]) > 10.0 * mean(&maps[1]));
    }

    #[test]
    fn schmid_kernel_is_zero_mean_and_isotropic() {
        for p in default_schmid_bank() {
            let k = schmid_kernel(&p);
            assert!(k.weights.iter().sum::<f64>().abs() < 1e-12);
            let side = k.side();
            for i in 0..side {
                for j in 0..side {
                    // 90-degree rotation symmetry of the sampled kernel
                    let a = k.weights[i * side + j];
                    let b = k.weights[j * side + (side - 1 - i)];
                    assert!((a - b).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn filters_reject_colour_input() {
        let rgb = ImageTensor::filled(8, 8, 3, 0.1);
        assert!(gabor_responses(&rgb, &default_gabor_bank()).is_err());
        assert!(schmid_responses(&rgb, &default_schmid_bank()).is_err());
    }
}
