//! Grayscale images, binary masks, file I/O and the thresholding/morphology
//! primitives the rest of the pipeline is built from.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};

/// Real-valued intensity field stored row-major. Nominal range is [0, 1] but
/// intermediate products (fusion maps, sparse components) may leave it.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != height * width {
            return Err(Error::invalid(
                "data",
                format!("length {} does not match {height}x{width}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("data", format!("non-finite value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds an image without the finiteness check. Callers guarantee the invariant.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn clamped(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Min-max rescale to [0, 1]. A constant image maps to all zeros.
    pub fn normalized(&self) -> Self {
        let (lo, hi) = (self.min(), self.max());
        let span = hi - lo;
        if span <= 0.0 {
            return Self::zeros(self.height, self.width);
        }
        self.map(|v| ((v - lo) / span).clamp(0.0, 1.0))
    }

    /// `1 - v` per pixel, for samples with dark lines on a bright substrate.
    pub fn inverted(&self) -> Self {
        self.map(|v| 1.0 - v)
    }

    pub fn ensure_same_dims(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::dims(self.dims(), other));
        }
        Ok(())
    }

    /// Copies a `h x w` window starting at `(y0, x0)`; pixels outside the
    /// source are zero.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        Self::from_fn(h, w, |y, x| {
            let (sy, sx) = (y0 + y, x0 + x);
            if sy < self.height && sx < self.width {
                self.get(sy, sx)
            } else {
                0.0
            }
        })
    }
}

/// Per-pixel {0,1} map. `true` marks foreground (defect, prior-active, metal).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(
                "data",
                format!("length {} does not match {height}x{width}", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Fraction of pixels set.
    pub fn density(&self) -> f64 {
        self.count_ones() as f64 / self.data.len().max(1) as f64
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn not(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    /// True where every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Count of pixels set in both masks.
    pub fn overlap(&self, other: &Self) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    /// 1.0 where set, 0.0 elsewhere.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_raw(
            self.height,
            self.width,
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

/// Which side of a threshold becomes foreground.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// `value > t`
    Above,
    /// `value <= t`
    Below,
}

/// 8-bit quantization used for saving and histogramming: clamp to [0,1],
/// scale by 255, round half up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Loads an 8-bit single-channel PGM (P5) or PNG and maps bytes to `b / 255`.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let reader = ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("{other:?}"),
            })
        }
    }
    let decoded = reader.decode().map_err(|e| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let luma = match decoded {
        DynamicImage::ImageLuma8(buf) => buf,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("color type {:?}, expected 8-bit grayscale", other.color()),
            })
        }
    };
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    let data = luma.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Ok(GrayImage::from_raw(h, w, data))
}

/// Writes the image clamped and quantized to 8 bits. `.pgm` paths are written
/// as binary PGM, everything else as PNG.
pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    write_luma8(path.as_ref(), img.height(), img.width(), bytes)
}

/// Writes a mask as 0/255 bytes.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let bytes = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_luma8(path.as_ref(), mask.height(), mask.width(), bytes)
}

/// Reads a mask image; pixels brighter than mid-gray are foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let img = load_gray(path)?;
    let data = img.data().iter().map(|&v| v > 0.5).collect();
    BinaryMask::new(img.height(), img.width(), data)
}

fn write_luma8(path: &Path, height: usize, width: usize, bytes: Vec<u8>) -> Result<()> {
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let encoded = if is_pgm {
        let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
        out.extend_from_slice(&bytes);
        out
    } else {
        let buf = image::GrayImage::from_raw(width as u32, height as u32, bytes)
            .expect("buffer length matches dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png)?;
        out.into_inner()
    };
    write_atomic(path, &encoded)
}

/// Writes through a sibling temp file and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().ok();
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// 256-bin histogram of the quantized image.
pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[quantize(v) as usize] += 1;
    }
    hist
}

/// Otsu bin on the 8-bit histogram: the bin `t` maximizing between-class
/// variance of {q <= t} vs {q > t}. Ties go to the lowest bin.
pub fn otsu_bin(img: &GrayImage) -> Result<u8> {
    let hist = histogram(img);
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::DegenerateHistogram);
    }
    let total: f64 = hist.iter().sum::<u64>() as f64;
    let sum_total: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let mut w_b = 0.0;
    let mut sum_b = 0.0;
    let mut best = (0u8, f64::NEG_INFINITY);
    for (t, &c) in hist.iter().enumerate().take(255) {
        w_b += c as f64;
        sum_b += t as f64 * c as f64;
        let w_f = total - w_b;
        if w_b == 0.0 || w_f == 0.0 {
            continue;
        }
        let m_b = sum_b / w_b;
        let m_f = (sum_total - sum_b) / w_f;
        let var = w_b * w_f * (m_b - m_f) * (m_b - m_f);
        if var > best.1 {
            best = (t as u8, var);
        }
    }
    Ok(best.0)
}

/// Otsu threshold as an intensity level: `binarize(img, t, Above)` selects
/// exactly the pixels whose quantized level lies above the Otsu bin.
pub fn otsu_threshold(img: &GrayImage) -> Result<f64> {
    otsu_bin(img).map(bin_upper_edge)
}

/// Largest intensity that still quantizes to `bin`.
pub(crate) fn bin_upper_edge(bin: u8) -> f64 {
    // quantize(v) <= bin  <=>  v < (bin + 0.5) / 255
    let edge = (bin as f64 + 0.5) / 255.0;
    f64::from_bits(edge.to_bits() - 1)
}

pub fn binarize(img: &GrayImage, t: f64, polarity: Polarity) -> BinaryMask {
    let data = img
        .data()
        .iter()
        .map(|&v| match polarity {
            Polarity::Above => v > t,
            Polarity::Below => v <= t,
        })
        .collect();
    BinaryMask {
        height: img.height(),
        width: img.width(),
        data,
    }
}

/// Dilation with a `(2r+1) x (2r+1)` square element (Chebyshev ball).
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dims();
    // Separable: horizontal pass then vertical pass, each a sliding-window OR
    // implemented with prefix counts.
    let mut horiz = vec![false; h * w];
    let mut prefix = vec![0usize; w.max(h) + 1];
    for y in 0..h {
        for x in 0..w {
            prefix[x + 1] = prefix[x] + mask.get(y, x) as usize;
        }
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius + 1).min(w);
            horiz[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    let mut out = vec![false; h * w];
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + horiz[y * w + x] as usize;
        }
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius + 1).min(h);
            out[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    BinaryMask {
        height: h,
        width: w,
        data: out,
    }
}

pub fn mask_union(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    a.or(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from(h: usize, w: usize, bits: &[u8]) -> BinaryMask {
        BinaryMask::new(h, w, bits.iter().map(|&b| b != 0).collect()).unwrap()
    }

    #[test]
    fn pgm_bytes_map_linearly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        fs::write(&path, bytes).unwrap();
        let img = load_gray(&path).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert_eq!(img.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn zero_png_loads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.png");
        save_gray(&GrayImage::zeros(16, 16), &path).unwrap();
        let img = load_gray(&path).unwrap();
        assert_eq!(img.len(), 256);
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rgb_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        image::RgbImage::new(4, 4).save(&path).unwrap();
        let err = load_gray(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported format"), "{err}");
    }

    #[test]
    fn sixteen_bit_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g16.png");
        image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(3, 3)
            .save(&path)
            .unwrap();
        assert!(matches!(load_gray(&path), Err(Error::UnsupportedFormat { .. })));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_gray("/nonexistent/dir/x.png").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/x.png"));
    }

    #[test]
    fn quantization_rounds_half_up_and_clamps() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.pgm");
        save_gray(&GrayImage::new(1, 3, vec![0.5, -0.2, 1.7]).unwrap(), &path).unwrap();
        let raw = fs::read(&path).unwrap();
        assert_eq!(&raw[raw.len() - 3..], &[128, 0, 255]);
    }

    #[test]
    fn saved_masks_are_0_or_255() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = mask_from(1, 3, &[1, 0, 1]);
        save_mask(&m, &path).unwrap();
        let raw = load_gray(&path).unwrap();
        assert_eq!(raw.data(), &[1.0, 0.0, 1.0]);
        assert_eq!(load_mask(&path).unwrap(), m);
    }

    #[test]
    fn otsu_splits_symmetric_modes() {
        let img = GrayImage::from_fn(8, 8, |y, _| if y < 4 { 0.1 } else { 0.9 });
        let t = otsu_threshold(&img).unwrap();
        assert!(t > 0.1 && t <= 0.9);
        let m = binarize(&img, t, Polarity::Above);
        assert_eq!(m.count_ones(), 32);
    }

    #[test]
    fn otsu_rejects_constant_image() {
        let img = GrayImage::filled(5, 5, 0.3);
        assert!(matches!(otsu_threshold(&img), Err(Error::DegenerateHistogram)));
    }

    /// Exhaustive between-class variance over every cut, written out directly.
    fn brute_force_otsu(img: &GrayImage) -> u8 {
        let q: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
        let mut best = (0u8, -1.0f64);
        for t in 0..255u16 {
            let (lo, hi): (Vec<f64>, Vec<f64>) = {
                let lo = q.iter().filter(|&&v| v as u16 <= t).map(|&v| v as f64).collect::<Vec<_>>();
                let hi = q.iter().filter(|&&v| v as u16 > t).map(|&v| v as f64).collect::<Vec<_>>();
                (lo, hi)
            };
            if lo.is_empty() || hi.is_empty() {
                continue;
            }
            let n = q.len() as f64;
            let (w0, w1) = (lo.len() as f64 / n, hi.len() as f64 / n);
            let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
            let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
            let var = w0 * w1 * (m0 - m1).powi(2);
            if var > best.1 {
                best = (t as u8, var);
            }
        }
        best.0
    }

    #[test]
    fn otsu_unbalanced_modes_match_scan() {
        let img = GrayImage::from_fn(10, 10, |y, _| if y < 9 { 0.2 } else { 0.8 });
        let t = otsu_threshold(&img).unwrap();
        assert!(t > 0.2 && t < 0.8);
        assert_eq!(otsu_bin(&img).unwrap(), brute_force_otsu(&img));
    }

    #[test]
    fn binarize_polarities() {
        let img = GrayImage::new(1, 2, vec![0.2, 0.8]).unwrap();
        assert_eq!(binarize(&img, 0.5, Polarity::Above), mask_from(1, 2, &[0, 1]));
        assert_eq!(binarize(&img, 0.5, Polarity::Below), mask_from(1, 2, &[1, 0]));
        assert!(binarize(&img, f64::MAX, Polarity::Above).is_empty_mask());
    }

    #[test]
    fn dilate_single_pixel() {
        let mut m = BinaryMask::zeros(11, 11);
        m.set(5, 5, true);
        let d = dilate(&m, 1);
        assert_eq!(d.count_ones(), 9);
        for y in 4..=6 {
            for x in 4..=6 {
                assert!(d.get(y, x));
            }
        }
        assert!(dilate(&BinaryMask::zeros(6, 6), 3).is_empty_mask());
        assert_eq!(dilate(&m, 0), m);
    }

    #[test]
    fn union_cases() {
        let a = mask_from(1, 2, &[1, 0]);
        assert_eq!(mask_union(&a, &mask_from(1, 2, &[0, 0])).unwrap(), a);
        assert_eq!(
            mask_union(&a, &mask_from(1, 2, &[0, 1])).unwrap(),
            mask_from(1, 2, &[1, 1])
        );
        assert!(mask_union(&BinaryMask::zeros(4, 4), &BinaryMask::zeros(5, 5)).is_err());
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            proptest::collection::vec(proptest::bool::weighted(0.15), h * w)
                .prop_map(move |d| BinaryMask::new(h, w, d).unwrap())
        })
    }

    fn arb_image() -> impl Strategy<Value = GrayImage> {
        (1usize..10, 1usize..10).prop_flat_map(|(h, w)| {
            proptest::collection::vec(-0.5f64..1.5, h * w)
                .prop_map(move |d| GrayImage::new(h, w, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn dilate_is_extensive_and_monotone(a in arb_mask(), extra in proptest::collection::vec(any::<bool>(), 144), r in 0usize..4) {
            let b = BinaryMask::from_fn(a.height(), a.width(), |y, x| a.get(y, x) || extra[(y * 12 + x) % 144]);
            let da = dilate(&a, r);
            prop_assert!(a.is_subset_of(&da));
            prop_assert!(da.is_subset_of(&dilate(&b, r)));
        }

        #[test]
        fn dilate_matches_chebyshev_definition(a in arb_mask(), r in 0usize..3) {
            let d = dilate(&a, r);
            for y in 0..a.height() {
                for x in 0..a.width() {
                    let mut any = false;
                    for yy in y.saturating_sub(r)..=(y + r).min(a.height() - 1) {
                        for xx in x.saturating_sub(r)..=(x + r).min(a.width() - 1) {
                            any |= a.get(yy, xx);
                        }
                    }
                    prop_assert_eq!(d.get(y, x), any);
                }
            }
        }

        #[test]
        fn binarize_partitions(img in arb_image(), t in -0.2f64..1.2) {
            let above = binarize(&img, t, Polarity::Above);
            let below = binarize(&img, t, Polarity::Below);
            prop_assert_eq!(above.overlap(&below), 0);
            prop_assert_eq!(above.count_ones() + below.count_ones(), img.len());
        }

        #[test]
        fn otsu_agrees_with_exhaustive_scan(data in proptest::collection::vec(0.0f64..1.0, 64)) {
            let img = GrayImage::new(8, 8, data).unwrap();
            if let Ok(bin) = otsu_bin(&img) {
                prop_assert_eq!(bin, brute_force_otsu(&img));
                let t = otsu_threshold(&img).unwrap();
                let m = binarize(&img, t, Polarity::Above);
                let expect = img.data().iter().filter(|&&v| quantize(v) > bin).count();
                prop_assert_eq!(m.count_ones(), expect);
            }
        }

        #[test]
        fn save_load_roundtrip_within_one_level(img in arb_image()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.png");
            save_gray(&img, &path).unwrap();
            let back = load_gray(&path).unwrap();
            for (a, b) in img.clamped().data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
            }
        }
    }
}
