//! Baseline JPEG round trip: 8-bit samples, JFIF YCbCr, 4:2:0 chroma,
//! 8x8 DCT with the standard quantization tables scaled by the IJG quality
//! curve. Entropy coding is lossless and therefore skipped.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape, Tensor3};

/// Luminance table of the JPEG standard, natural (row-major) order.
pub const STD_LUMINANCE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Chrominance table of the JPEG standard, natural order.
pub const STD_CHROMINANCE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Scales a base table with the IJG quality curve (baseline: entries in 1..=255).
pub fn scaled_table(base: &[u16; 64], quality: u8) -> Result<[u16; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!(
            "JPEG quality {quality} outside 1..=100"
        )));
    }
    let q = u32::from(quality);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    Ok(base.map(|b| ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as u16))
}

/// `cos((2x + 1) u pi / 16)` scaled by `C(u) / 2`.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let cu = if u == 0 {
                std::f64::consts::FRAC_1_SQRT_2
            } else {
                1.0
            };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5 * cu * (((2 * x + 1) as f64 * u as f64 * PI) / 16.0).cos();
            }
        }
        m
    })
}

/// Forward 2-D DCT-II of a level-shifted 8x8 block (row-major).
pub fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let m = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| m[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| m[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

/// Inverse of [`fdct`].
pub fn idct(coef: &[f64; 64]) -> [f64; 64] {
    let m = dct_basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| m[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| m[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

/// Quantized coefficients of one block of 8-bit samples.
pub fn quantize_block(samples: &[u8; 64], table: &[u16; 64]) -> [i32; 64] {
    let shifted = samples.map(|s| f64::from(s) - 128.0);
    let coef = fdct(&shifted);
    let mut q = [0i32; 64];
    for i in 0..64 {
        q[i] = round_half_away(coef[i] / f64::from(table[i])) as i32;
    }
    q
}

/// Rounds half away from zero, treating values within float noise of a
/// half-integer as exact ties (the DC and Nyquist rows are multiples of 1/8).
fn round_half_away(x: f64) -> f64 {
    let frac = x.abs().fract();
    if (frac - 0.5).abs() < 1e-9 {
        x.signum() * (x.abs().trunc() + 1.0)
    } else {
        x.round()
    }
}

/// One plane of real-valued samples in `[0, 255]`.
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn at_clamped(&self, y: usize, x: usize) -> f64 {
        self.data[y.min(self.h - 1) * self.w + x.min(self.w - 1)]
    }

    /// 2x2 box average with edge replication.
    fn subsample(&self) -> Plane {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let s = self.at_clamped(2 * y, 2 * x)
                    + self.at_clamped(2 * y, 2 * x + 1)
                    + self.at_clamped(2 * y + 1, 2 * x)
                    + self.at_clamped(2 * y + 1, 2 * x + 1);
                data.push(s / 4.0);
            }
        }
        Plane { h, w, data }
    }

    /// Samples are rounded to 8 bits, coded block by block, and decoded.
    fn code(&self, table: &[u16; 64]) -> Plane {
        let mut out = vec![0.0; self.h * self.w];
        for by in (0..self.h).step_by(8) {
            for bx in (0..self.w).step_by(8) {
                let mut samples = [0u8; 64];
                for i in 0..8 {
                    for j in 0..8 {
                        samples[i * 8 + j] =
                            self.at_clamped(by + i, bx + j).round().clamp(0.0, 255.0) as u8;
                    }
                }
                let q = quantize_block(&samples, table);
                let mut deq = [0.0; 64];
                for k in 0..64 {
                    deq[k] = f64::from(q[k]) * f64::from(table[k]);
                }
                let rec = idct(&deq);
                for i in 0..8 {
                    for j in 0..8 {
                        let (y, x) = (by + i, bx + j);
                        if y < self.h && x < self.w {
                            out[y * self.w + x] =
                                (rec[i * 8 + j] + 128.0).round().clamp(0.0, 255.0);
                        }
                    }
                }
            }
        }
        Plane {
            h: self.h,
            w: self.w,
            data: out,
        }
    }
}

fn to_byte(v: f64) -> f64 {
    (255.0 * v).round().clamp(0.0, 255.0)
}

/// Encodes and decodes `img` as a baseline JPEG at `quality`.
pub fn jpeg(img: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    let luma_q = scaled_table(&STD_LUMINANCE, quality)?;
    let chroma_q = scaled_table(&STD_CHROMINANCE, quality)?;
    let s = img.shape();
    let t = img.tensor();
    let (h, w) = (s.height, s.width);
    let plane = |f: &dyn Fn(usize) -> f64| Plane {
        h,
        w,
        data: (0..h * w).map(f).collect(),
    };
    if s.channels == 1 {
        let p = t.plane(0);
        let y = plane(&|i| to_byte(p[i])).code(&luma_q);
        return ImageTensor::new(Tensor3::new(s, y.data.iter().map(|v| v / 255.0).collect())?);
    }
    let (r, g, b) = (t.plane(0), t.plane(1), t.plane(2));
    let rgb = |i: usize| (to_byte(r[i]), to_byte(g[i]), to_byte(b[i]));
    let luma = plane(&|i| {
        let (r, g, b) = rgb(i);
        0.299 * r + 0.587 * g + 0.114 * b
    });
    let cb = plane(&|i| {
        let (r, g, b) = rgb(i);
        -0.168_735_892 * r - 0.331_264_108 * g + 0.5 * b + 128.0
    });
    let cr = plane(&|i| {
        let (r, g, b) = rgb(i);
        0.5 * r - 0.418_687_589 * g - 0.081_312_411 * b + 128.0
    });
    let y = luma.code(&luma_q);
    let cb = cb.subsample().code(&chroma_q);
    let cr = cr.subsample().code(&chroma_q);
    let out = Tensor3::from_fn(Shape::new(3, h, w), |c, py, px| {
        let yy = y.data[py * w + px];
        let ci = (py / 2) * cb.w + px / 2;
        let (u, v) = (cb.data[ci] - 128.0, cr.data[ci] - 128.0);
        let val = match c {
            0 => yy + 1.402 * v,
            1 => yy - 0.344_136_286 * u - 0.714_136_286 * v,
            _ => yy + 1.772 * u,
        };
        val.round().clamp(0.0, 255.0) / 255.0
    });
    ImageTensor::new(out)
}
