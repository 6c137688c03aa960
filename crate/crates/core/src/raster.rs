//! 8-bit RGB images and the classical preprocessing steps applied to them:
//! decode, bilinear resize, quarter-turn rotation, 3×3 kernel filters and
//! normalization into tensors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Interleaved RGB image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl fmt::Debug for Raster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("raster of size {width}x{height}")));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::ShapeMismatch {
                op: "raster",
                left: vec![height, width, 3],
                right: vec![pixels.len()],
            });
        }
        Ok(Raster {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        image::save_buffer_with_format(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Decodes a PNG or JPEG file into RGB; grayscale is replicated across channels.
pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let image_err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let rgb = reader.decode().map_err(image_err)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            reason: "image has a zero dimension".into(),
        });
    }
    Raster::new(w as usize, h as usize, rgb.into_raw())
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resize(r: &Raster, width: usize, height: usize) -> Result<Raster> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("resize target {width}x{height}")));
    }
    if width == r.width && height == r.height {
        return Ok(r.clone());
    }
    let taps = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = taps(width, r.width);
    let ys = taps(height, r.height);
    let mut pixels = Vec::with_capacity(width * height * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p00 = r.pixel(x0, y0);
            let p10 = r.pixel(x1, y0);
            let p01 = r.pixel(x0, y1);
            let p11 = r.pixel(x1, y1);
            for c in 0..3 {
                let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
                let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Raster::new(width, height, pixels)
}

/// Exact rotations by multiples of 90°.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Turn {
    /// Counter-clockwise quarter turn.
    Left90,
    /// Clockwise quarter turn.
    Right90,
    Half,
}

pub fn rotate(r: &Raster, turn: Turn) -> Raster {
    let (w, h) = (r.width, r.height);
    let (ow, oh) = match turn {
        Turn::Half => (w, h),
        Turn::Left90 | Turn::Right90 => (h, w),
    };
    let mut pixels = vec![0u8; r.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let (nx, ny) = match turn {
                Turn::Left90 => (y, w - 1 - x),
                Turn::Right90 => (h - 1 - y, x),
                Turn::Half => (w - 1 - x, h - 1 - y),
            };
            let src = (y * w + x) * 3;
            let dst = (ny * ow + nx) * 3;
            pixels[dst..dst + 3].copy_from_slice(&r.pixels[src..src + 3]);
        }
    }
    Raster {
        width: ow,
        height: oh,
        pixels,
    }
}

/// The four named 3×3 filters used to derive transformed datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Contour,
    EdgeEnhanceMore,
    FindEdges,
    Sharpen,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] = [
        FilterKind::Contour,
        FilterKind::EdgeEnhanceMore,
        FilterKind::FindEdges,
        FilterKind::Sharpen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Contour => "contour",
            FilterKind::EdgeEnhanceMore => "edge-enhance-more",
            FilterKind::FindEdges => "find-edges",
            FilterKind::Sharpen => "sharpen",
        }
    }

    pub fn spec(self) -> FilterSpec {
        let (weights, divisor, offset) = match self {
            FilterKind::Contour => ([-1, -1, -1, -1, 8, -1, -1, -1, -1], 1, 255),
            FilterKind::EdgeEnhanceMore => ([-1, -1, -1, -1, 9, -1, -1, -1, -1], 1, 0),
            FilterKind::FindEdges => ([-1, -1, -1, -1, 8, -1, -1, -1, -1], 1, 0),
            FilterKind::Sharpen => ([-2, -2, -2, -2, 32, -2, -2, -2, -2], 16, 0),
        };
        FilterSpec {
            name: self.name().to_string(),
            weights,
            divisor,
            offset,
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown filter {s:?}")))
    }
}

/// Integer 3×3 kernel: `out = clamp(round(sum / divisor + offset), 0, 255)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterSpec {
    pub name: String,
    pub weights: [i32; 9],
    pub divisor: i32,
    pub offset: i32,
}

impl FilterSpec {
    pub fn new(name: impl Into<String>, weights: [i32; 9], divisor: i32, offset: i32) -> Result<Self> {
        if divisor <= 0 {
            return Err(Error::invalid(format!("filter divisor must be positive, got {divisor}")));
        }
        Ok(FilterSpec {
            name: name.into(),
            weights,
            divisor,
            offset,
        })
    }
}

/// `round(n / d)` with ties away from zero, for `d > 0`.
fn div_round(n: i64, d: i64) -> i64 {
    if n >= 0 {
        (2 * n + d) / (2 * d)
    } else {
        -((-2 * n + d) / (2 * d))
    }
}

/// Applies a 3×3 filter to every interior pixel; the one-pixel frame is
/// copied unchanged.
pub fn apply_filter(r: &Raster, f: &FilterSpec) -> Result<Raster> {
    if r.width < 3 || r.height < 3 {
        return Err(Error::invalid(format!(
            "filter needs at least 3x3 pixels, got {}x{}",
            r.width, r.height
        )));
    }
    if f.divisor <= 0 {
        return Err(Error::invalid("filter divisor must be positive"));
    }
    let d = i64::from(f.divisor);
    let bias = i64::from(f.offset) * d;
    let stride = r.width * 3;
    let src = &r.pixels;
    let mut out = src.clone();
    for y in 1..r.height - 1 {
        for x in 1..r.width - 1 {
            for c in 0..3 {
                let mut acc = 0i64;
                for ky in 0..3 {
                    let row = (y + ky - 1) * stride;
                    for kx in 0..3 {
                        let v = src[row + (x + kx - 1) * 3 + c];
                        acc += i64::from(f.weights[ky * 3 + kx]) * i64::from(v);
                    }
                }
                out[y * stride + x * 3 + c] = div_round(acc + bias, d).clamp(0, 255) as u8;
            }
        }
    }
    Ok(Raster {
        width: r.width,
        height: r.height,
        pixels: out,
    })
}

/// `[height, width, 3]` tensor with every byte divided by 255.
pub fn to_tensor(r: &Raster) -> Tensor {
    let data = r.pixels.iter().map(|&b| f32::from(b) / 255.0).collect();
    Tensor::from_vec([r.height, r.width, 3], data).expect("raster dimensions are non-zero")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: usize, h: usize, values: &[u8]) -> Raster {
        Raster::from_fn(w, h, |x, y| [values[y * w + x]; 3]).unwrap()
    }

    /// Plain nested-loop filter reference with float rounding, kept apart from
    /// the integer implementation.
    fn reference_filter(r: &Raster, f: &FilterSpec) -> Raster {
        Raster::from_fn(r.width(), r.height(), |x, y| {
            if x == 0 || y == 0 || x == r.width() - 1 || y == r.height() - 1 {
                return r.pixel(x, y);
            }
            let mut px = [0u8; 3];
            for (c, out) in px.iter_mut().enumerate() {
                let mut s = 0.0f64;
                for dy in 0..3 {
                    for dx in 0..3 {
                        s += f.weights[dy * 3 + dx] as f64 * r.pixel(x + dx - 1, y + dy - 1)[c] as f64;
                    }
                }
                *out = (s / f.divisor as f64 + f.offset as f64).round().clamp(0.0, 255.0) as u8;
            }
            px
        })
        .unwrap()
    }

    #[test]
    fn named_kernel_constants() {
        let s = FilterKind::Sharpen.spec();
        assert_eq!(s.weights, [-2, -2, -2, -2, 32, -2, -2, -2, -2]);
        assert_eq!((s.divisor, s.offset), (16, 0));
        assert_eq!(FilterKind::Contour.spec().offset, 255);
        assert_eq!(FilterKind::EdgeEnhanceMore.spec().weights[4], 9);
        assert_eq!(FilterKind::FindEdges.spec().weights[4], 8);
        for k in FilterKind::ALL {
            assert_eq!(k.name().parse::<FilterKind>().unwrap(), k);
        }
        assert!("blur".parse::<FilterKind>().is_err());
        assert!(FilterSpec::new("bad", [0; 9], 0, 0).is_err());
    }

    #[test]
    fn constant_raster_filters() {
        for c in [0u8, 1, 77, 128, 255] {
            let r = Raster::filled(6, 5, [c; 3]).unwrap();
            let interior = |out: &Raster| {
                (1..4).flat_map(|x| (1..4).map(move |y| (x, y))).map(|(x, y)| out.pixel(x, y)).collect::<Vec<_>>()
            };
            let contour = apply_filter(&r, &FilterKind::Contour.spec()).unwrap();
            assert!(interior(&contour).iter().all(|p| *p == [255; 3]));
            let edges = apply_filter(&r, &FilterKind::FindEdges.spec()).unwrap();
            assert!(interior(&edges).iter().all(|p| *p == [0; 3]));
            for k in [FilterKind::Sharpen, FilterKind::EdgeEnhanceMore] {
                assert_eq!(apply_filter(&r, &k.spec()).unwrap(), r);
            }
        }
    }

    #[test]
    fn sharpen_single_spike() {
        let mut v = [0u8; 25];
        v[12] = 160;
        let out = apply_filter(&gray(5, 5, &v), &FilterKind::Sharpen.spec()).unwrap();
        assert_eq!(out.pixel(2, 2), [255; 3]);
        for (x, y) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(out.pixel(x, y), [0; 3]);
        }
    }

    #[test]
    fn filter_rounds_half_away_from_zero() {
        // sharpen: center 1 with zero neighbours -> 32/16 = 2; neighbour sees -2/16 -> -0.125 -> 0
        assert_eq!(div_round(5, 2), 3);
        assert_eq!(div_round(-5, 2), -3);
        assert_eq!(div_round(-1, 16), 0);
        assert_eq!(div_round(8, 16), 1);
    }

    #[test]
    fn filter_rejects_small_rasters() {
        let r = Raster::filled(2, 5, [0; 3]).unwrap();
        assert!(apply_filter(&r, &FilterKind::Sharpen.spec()).is_err());
    }

    #[test]
    fn resize_examples() {
        let r = Raster::filled(500, 500, [10, 200, 33]).unwrap();
        let small = resize(&r, 100, 100).unwrap();
        assert_eq!((small.width(), small.height()), (100, 100));
        assert!(small.pixels().chunks(3).all(|p| p == [10, 200, 33]));

        let id = Raster::from_fn(7, 4, |x, y| [(x * 30) as u8, (y * 50) as u8, 9]).unwrap();
        assert_eq!(resize(&id, 7, 4).unwrap(), id);

        // sample center of a 1×1 output maps to (0.5, 0.5): average of the rows
        let two = gray(2, 2, &[0, 0, 255, 255]);
        assert_eq!(resize(&two, 1, 1).unwrap().pixel(0, 0), [128; 3]);
        assert!(resize(&two, 0, 1).is_err());
    }

    #[test]
    fn rotate_coordinate_map() {
        let a = [1, 2, 3];
        let b = [4, 5, 6];
        let r = Raster::new(2, 1, [a, b].concat()).unwrap();
        let l = rotate(&r, Turn::Left90);
        assert_eq!((l.width(), l.height()), (1, 2));
        assert_eq!(l.pixel(0, 0), b);
        assert_eq!(l.pixel(0, 1), a);
        let rr = rotate(&r, Turn::Right90);
        assert_eq!(rr.pixel(0, 0), a);
        assert_eq!(rotate(&r, Turn::Half).pixel(0, 0), b);
    }

    #[test]
    fn to_tensor_values() {
        let r = Raster::new(3, 1, vec![0, 255, 128, 1, 2, 3, 4, 5, 6]).unwrap();
        let t = to_tensor(&r);
        assert_eq!(t.shape(), &[1, 3, 3]);
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[1], 1.0);
        assert!((t.data()[2] - 0.501961).abs() < 1e-6);
        assert_eq!(to_tensor(&Raster::filled(100, 100, [0; 3]).unwrap()).shape(), &[100, 100, 3]);
    }

    #[test]
    fn png_round_trip_and_grayscale() {
        let dir = tempfile::tempdir().unwrap();
        let r = Raster::new(2, 2, (0..12).map(|v| v * 20).collect()).unwrap();
        let p = dir.path().join("rgb.png");
        r.save_png(&p).unwrap();
        assert_eq!(load_raster(&p).unwrap(), r);

        let g = dir.path().join("gray.png");
        image::GrayImage::from_raw(2, 1, vec![7, 99]).unwrap().save(&g).unwrap();
        let loaded = load_raster(&g).unwrap();
        assert_eq!(loaded.pixel(0, 0), [7; 3]);
        assert_eq!(loaded.pixel(1, 0), [99; 3]);

        let bytes = std::fs::read(&p).unwrap();
        let t = dir.path().join("trunc.png");
        std::fs::write(&t, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_raster(&t).is_err());
        assert!(load_raster(dir.path().join("missing.png")).is_err());
    }

    fn raster_strategy(max: usize) -> impl Strategy<Value = Raster> {
        (1..max, 1..max).prop_flat_map(|(w, h)| {
            prop::collection::vec(any::<u8>(), w * h * 3).prop_map(move |px| Raster::new(w, h, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn rotations_invert(r in raster_strategy(9)) {
            prop_assert_eq!(rotate(&rotate(&r, Turn::Half), Turn::Half), r.clone());
            prop_assert_eq!(rotate(&rotate(&r, Turn::Left90), Turn::Right90), r.clone());
            prop_assert_eq!(rotate(&rotate(&r, Turn::Right90), Turn::Left90), r.clone());
            prop_assert_eq!(resize(&r, r.width(), r.height()).unwrap(), r);
        }

        #[test]
        fn filters_match_reference(px in prop::collection::vec(any::<u8>(), 8 * 8 * 3)) {
            let r = Raster::new(8, 8, px).unwrap();
            for k in FilterKind::ALL {
                let spec = k.spec();
                prop_assert_eq!(apply_filter(&r, &spec).unwrap(), reference_filter(&r, &spec));
            }
        }

        #[test]
        fn tensor_in_unit_range_and_monotone(a in any::<u8>(), b in any::<u8>()) {
            let t = to_tensor(&Raster::new(1, 1, vec![a, b, 0]).unwrap());
            let (x, y) = (t.data()[0], t.data()[1]);
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert_eq!(a.cmp(&b), x.partial_cmp(&y).unwrap());
        }
    }
}
