//! Gray-scale image I/O (netpbm PGM/PPM), intensity normalization, seeded
//! noise injection, and boundary overlays for visual inspection.
//!
//! PGM/PPM are used instead of compressed formats so golden tests can be
//! bit-exact. Comments are tolerated when reading, never written.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Error;
use crate::grid::LabelMap;
use crate::model::ImageGray;

/// 8-bit raster, 1 channel (gray) or 3 (RGB), row-major samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub samples: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self, Error> {
        if width == 0 || height == 0 || (channels != 1 && channels != 3) {
            return Err(Error::invalid_argument(format!(
                "bad raster shape {width}x{height}x{channels}"
            )));
        }
        if samples.len() != width * height * channels {
            return Err(Error::invalid_argument(format!(
                "sample count {} does not match {width}x{height}x{channels}",
                samples.len()
            )));
        }
        Ok(RawImage { width, height, channels, samples })
    }
}

/// Incremental netpbm token reader that remembers its byte offset so parse
/// errors can point at the exact position.
struct PnmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmCursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        PnmCursor { bytes, pos: 0 }
    }

    fn skip_separators(&mut self) {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => return,
            }
        }
    }

    fn next_uint(&mut self, what: &str) -> Result<usize, Error> {
        self.skip_separators();
        let start = self.pos;
        let mut value: usize = 0;
        let mut any = false;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_digit() {
                value = value
                    .checked_mul(10)
                    .and_then(|v| v.checked_add((b - b'0') as usize))
                    .ok_or_else(|| Error::format(start, format!("{what} overflows")))?;
                self.pos += 1;
                any = true;
            } else {
                break;
            }
        }
        if !any {
            return Err(Error::format(self.pos, format!("expected {what}")));
        }
        Ok(value)
    }

    /// Consumes the single whitespace byte that separates header and raster.
    fn expect_raster_separator(&mut self) -> Result<(), Error> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(Error::format(self.pos, "expected whitespace before raster")),
        }
    }
}

fn parse_pnm(bytes: &[u8]) -> Result<(u8, usize, usize, usize, PnmCursor<'_>), Error> {
    let mut cur = PnmCursor::new(bytes);
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::format(0, "missing netpbm magic"));
    }
    let kind = bytes[1];
    if !matches!(kind, b'2' | b'5' | b'6') {
        return Err(Error::format(1, format!("unsupported magic P{}", bytes[1] as char)));
    }
    cur.pos = 2;
    let width = cur.next_uint("width")?;
    let height = cur.next_uint("height")?;
    let maxval = cur.next_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(2, "zero image dimension"));
    }
    Ok((kind, width, height, maxval, cur))
}

/// Reads a PGM (P2/P5) or PPM (P6) file with maxval 255.
pub fn read_image(path: &Path) -> Result<RawImage, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// Decodes PGM/PPM bytes with maxval 255.
pub fn decode_image(bytes: &[u8]) -> Result<RawImage, Error> {
    let (kind, width, height, maxval, mut cur) = parse_pnm(bytes)?;
    if maxval != 255 {
        return Err(Error::format(cur.pos, format!("maxval must be 255, got {maxval}")));
    }
    let channels = if kind == b'6' { 3 } else { 1 };
    let count = width * height * channels;
    let samples = match kind {
        b'2' => {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let v = cur.next_uint("sample")?;
                if v > 255 {
                    return Err(Error::format(cur.pos, format!("sample {v} exceeds maxval")));
                }
                out.push(v as u8);
            }
            out
        }
        _ => {
            cur.expect_raster_separator()?;
            let start = cur.pos;
            if bytes.len() < start + count {
                return Err(Error::format(
                    bytes.len(),
                    format!("truncated raster: expected {count} bytes after offset {start}"),
                ));
            }
            bytes[start..start + count].to_vec()
        }
    };
    RawImage::new(width, height, channels, samples)
}

fn encode_image(img: &RawImage) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.samples);
    out
}

/// Writes P5 for gray, P6 for color, maxval 255. The file is staged next to
/// the target and renamed into place so a failed write leaves no partial
/// output.
pub fn write_image(img: &RawImage, path: &Path) -> Result<(), Error> {
    write_atomically(path, &encode_image(img))
}

pub(crate) fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
        )),
        None => Path::new(&format!(
            ".{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
        ))
        .to_path_buf(),
    };
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Converts to normalized gray: RGB collapses through the usual luminance
/// weights 0.299/0.587/0.114, then everything is divided by 255.
pub fn to_gray_normalized(raw: &RawImage) -> ImageGray {
    let n = raw.width * raw.height;
    let mut data = Vec::with_capacity(n);
    match raw.channels {
        1 => data.extend(raw.samples.iter().map(|&v| v as f64 / 255.0)),
        _ => {
            for p in 0..n {
                let r = raw.samples[3 * p] as f64;
                let g = raw.samples[3 * p + 1] as f64;
                let b = raw.samples[3 * p + 2] as f64;
                data.push((0.299 * r + 0.587 * g + 0.114 * b) / 255.0);
            }
        }
    }
    ImageGray::new(raw.height, raw.width, data).expect("normalized samples are in range")
}

/// Gray image back to an 8-bit raster (rounding).
pub fn to_raw_gray(img: &ImageGray) -> RawImage {
    let samples = img.pixels().iter().map(|&v| (v * 255.0).round() as u8).collect();
    RawImage::new(img.cols(), img.rows(), 1, samples).expect("shape preserved")
}

/// Adds clamped i.i.d. Gaussian noise; deterministic for a fixed seed.
pub fn add_gaussian_noise(img: &ImageGray, sigma_n: f64, seed: u64) -> Result<ImageGray, Error> {
    if sigma_n < 0.0 || !sigma_n.is_finite() {
        return Err(Error::invalid_argument(format!("noise level must be nonnegative, got {sigma_n}")));
    }
    if sigma_n == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma_n).expect("sigma validated");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let data = img
        .pixels()
        .iter()
        .map(|&y| (y + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    ImageGray::new(img.rows(), img.cols(), data)
}

/// Sets exactly `round(fraction·m·n)` distinct pixels (uniformly chosen,
/// seeded) to 0 or 1 with equal probability.
pub fn add_salt_pepper(img: &ImageGray, fraction: f64, seed: u64) -> Result<ImageGray, Error> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid_argument(format!(
            "salt-and-pepper fraction must lie in [0,1], got {fraction}"
        )));
    }
    let n = img.num_pixels();
    let hits = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let mut data = img.pixels().to_vec();
    for &p in indices.iter().take(hits) {
        data[p] = if rng.gen::<bool>() { 1.0 } else { 0.0 };
    }
    ImageGray::new(img.rows(), img.cols(), data)
}

/// Number of pixels `add_salt_pepper` will overwrite for this image size.
pub fn salt_pepper_count(num_pixels: usize, fraction: f64) -> usize {
    (fraction * num_pixels as f64).round() as usize
}

/// Paints pixels that touch a segment boundary (any 4-neighbor with a
/// different label) red over the gray image.
pub fn render_overlay(img: &ImageGray, labels: &LabelMap) -> Result<RawImage, Error> {
    if img.rows() != labels.rows() || img.cols() != labels.cols() {
        return Err(Error::invalid_argument(format!(
            "overlay dimensions {}x{} do not match labels {}x{}",
            img.rows(),
            img.cols(),
            labels.rows(),
            labels.cols()
        )));
    }
    let (rows, cols) = (img.rows(), img.cols());
    let mut samples = Vec::with_capacity(rows * cols * 3);
    for i in 0..rows {
        for j in 0..cols {
            let here = labels.label_at(i, j);
            let boundary = (i > 0 && labels.label_at(i - 1, j) != here)
                || (i + 1 < rows && labels.label_at(i + 1, j) != here)
                || (j > 0 && labels.label_at(i, j - 1) != here)
                || (j + 1 < cols && labels.label_at(i, j + 1) != here);
            if boundary {
                samples.extend_from_slice(&[255, 0, 0]);
            } else {
                let v = (img.at(i, j) * 255.0).round() as u8;
                samples.extend_from_slice(&[v, v, v]);
            }
        }
    }
    RawImage::new(cols, rows, 3, samples)
}

/// Writes a label map as PGM: binary P5 while labels fit a byte, plain P2
/// with maxval k−1 otherwise.
pub fn write_label_map(labels: &LabelMap, path: &Path) -> Result<(), Error> {
    let k = labels.num_labels();
    let maxval = k.saturating_sub(1).max(1);
    let bytes = if maxval <= 255 {
        let mut out = format!("P5\n{} {}\n{}\n", labels.cols(), labels.rows(), maxval).into_bytes();
        out.extend(labels.labels().iter().map(|&l| l as u8));
        out
    } else {
        let mut out = format!("P2\n{} {}\n{}\n", labels.cols(), labels.rows(), maxval).into_bytes();
        for row in 0..labels.rows() {
            let line: Vec<String> = (0..labels.cols())
                .map(|col| labels.label_at(row, col).to_string())
                .collect();
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
        out
    };
    write_atomically(path, &bytes)
}

/// Reads a label map from PGM. Accepts P2 with any maxval and P5 with one-
/// or two-byte (big-endian) samples; labels are canonicalized into
/// 4-connected components.
pub fn read_label_map(path: &Path) -> Result<LabelMap, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (kind, width, height, maxval, mut cur) = parse_pnm(&bytes)?;
    if kind == b'6' {
        return Err(Error::format(1, "label maps must be gray PGM, got PPM"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(cur.pos, format!("label maxval {maxval} out of range")));
    }
    let count = width * height;
    let mut raw = Vec::with_capacity(count);
    if kind == b'2' {
        for _ in 0..count {
            let v = cur.next_uint("label")?;
            if v > maxval {
                return Err(Error::format(cur.pos, format!("label {v} exceeds maxval {maxval}")));
            }
            raw.push(v as u32);
        }
    } else {
        cur.expect_raster_separator()?;
        let start = cur.pos;
        let stride = if maxval > 255 { 2 } else { 1 };
        if bytes.len() < start + count * stride {
            return Err(Error::format(bytes.len(), "truncated label raster"));
        }
        for p in 0..count {
            let v = if stride == 2 {
                u32::from(bytes[start + 2 * p]) << 8 | u32::from(bytes[start + 2 * p + 1])
            } else {
                u32::from(bytes[start + p])
            };
            raw.push(v);
        }
    }
    LabelMap::from_raw_labels(height, width, &raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn checker(rows: usize, cols: usize) -> RawImage {
        let samples = (0..rows * cols).map(|p| if p % 2 == 0 { 17 } else { 201 }).collect();
        RawImage::new(cols, rows, 1, samples).unwrap()
    }

    #[test]
    fn p5_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = checker(5, 7);
        write_image(&img, &path).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
    }

    #[test]
    fn p2_and_p5_read_identically() {
        let dir = tempfile::tempdir().unwrap();
        let img = checker(3, 4);
        let p5 = dir.path().join("x.pgm");
        write_image(&img, &p5).unwrap();
        let mut p2_text = String::from("P2\n# a comment\n4 3\n255\n");
        for &s in &img.samples {
            p2_text.push_str(&format!("{s} "));
        }
        let p2 = dir.path().join("y.pgm");
        std::fs::write(&p2, p2_text).unwrap();
        assert_eq!(read_image(&p5).unwrap(), read_image(&p2).unwrap());
    }

    #[test]
    fn truncated_raster_is_rejected_with_offset() {
        let mut bytes = encode_image(&checker(4, 4));
        bytes.truncate(bytes.len() - 3);
        match decode_image(&bytes) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_maxval_is_rejected() {
        let bytes = b"P5\n2 2\n127\n\x00\x01\x02\x03".to_vec();
        assert!(matches!(decode_image(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn gray_normalization() {
        let white = RawImage::new(1, 1, 3, vec![255, 255, 255]).unwrap();
        assert!((to_gray_normalized(&white).pixels()[0] - 1.0).abs() < 1e-12);
        let red = RawImage::new(1, 1, 3, vec![255, 0, 0]).unwrap();
        assert!((to_gray_normalized(&red).pixels()[0] - 0.299).abs() < 1e-12);
        let gray = RawImage::new(1, 2, 1, vec![0, 128]).unwrap();
        let img = to_gray_normalized(&gray);
        assert_eq!(img.pixels()[0], 0.0);
        assert!((img.pixels()[1] - 128.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_noise_zero_sigma_is_identity() {
        let img = ImageGray::constant(4, 4, 0.3).unwrap();
        assert_eq!(add_gaussian_noise(&img, 0.0, 9).unwrap(), img);
        assert!(add_gaussian_noise(&img, -0.1, 9).is_err());
    }

    #[test]
    fn gaussian_noise_is_seed_reproducible() {
        let img = ImageGray::constant(8, 8, 0.5).unwrap();
        let a = add_gaussian_noise(&img, 0.2, 42).unwrap();
        let b = add_gaussian_noise(&img, 0.2, 42).unwrap();
        let c = add_gaussian_noise(&img, 0.2, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_noise_sample_mean_is_near_zero() {
        let img = ImageGray::constant(200, 200, 0.5).unwrap();
        let sigma = 0.1;
        let noisy = add_gaussian_noise(&img, sigma, 7).unwrap();
        let n = img.num_pixels() as f64;
        let mean: f64 = noisy
            .pixels()
            .iter()
            .zip(img.pixels())
            .map(|(a, b)| a - b)
            .sum::<f64>()
            / n;
        assert!(mean.abs() <= 3.0 * sigma / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn salt_pepper_counts() {
        let img = ImageGray::constant(10, 10, 0.5).unwrap();
        assert_eq!(add_salt_pepper(&img, 0.0, 3).unwrap(), img);
        let all = add_salt_pepper(&img, 1.0, 3).unwrap();
        assert!(all.pixels().iter().all(|&v| v == 0.0 || v == 1.0));
        let some = add_salt_pepper(&img, 0.15, 3).unwrap();
        let changed = some.pixels().iter().filter(|&&v| v == 0.0 || v == 1.0).count();
        assert_eq!(changed, 15);
        assert!(add_salt_pepper(&img, 1.5, 3).is_err());
        assert_eq!(salt_pepper_count(100 * 100, 0.15), 1500);
    }

    #[test]
    fn overlay_boundaries() {
        let img = ImageGray::constant(3, 4, 0.5).unwrap();
        let single = LabelMap::from_raw_labels(3, 4, &vec![0; 12]).unwrap();
        let ov = render_overlay(&img, &single).unwrap();
        assert!(ov.samples.chunks(3).all(|px| px[0] == px[1] && px[1] == px[2]));

        let split = LabelMap::from_raw_labels(3, 4, &[0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1]).unwrap();
        let ov = render_overlay(&img, &split).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let px = &ov.samples[3 * (i * 4 + j)..3 * (i * 4 + j) + 3];
                let red = px == [255, 0, 0];
                assert_eq!(red, j == 1 || j == 2, "pixel ({i},{j})");
            }
        }

        let mut checkerboard = vec![0u32; 12];
        for (p, l) in checkerboard.iter_mut().enumerate() {
            let (i, j) = (p / 4, p % 4);
            *l = ((i + j) % 2) as u32;
        }
        let cb = LabelMap::from_raw_labels(3, 4, &checkerboard).unwrap();
        let ov = render_overlay(&img, &cb).unwrap();
        assert!(ov.samples.chunks(3).all(|px| px == [255, 0, 0]));

        let wrong = ImageGray::constant(4, 3, 0.5).unwrap();
        assert!(render_overlay(&wrong, &single).is_err());
    }

    #[test]
    fn label_map_round_trip_small_and_large() {
        let dir = tempfile::tempdir().unwrap();
        let small = LabelMap::from_raw_labels(2, 3, &[0, 0, 1, 2, 2, 1]).unwrap();
        let p = dir.path().join("small.pgm");
        write_label_map(&small, &p).unwrap();
        let back = read_label_map(&p).unwrap();
        assert_eq!(back.labels(), small.labels());

        // 300 distinct labels forces the plain-text P2 path
        let raw: Vec<u32> = (0..300).collect();
        let big = LabelMap::from_raw_labels(1, 300, &raw).unwrap();
        let p = dir.path().join("big.pgm");
        write_label_map(&big, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P2"));
        let back = read_label_map(&p).unwrap();
        assert_eq!(back.labels(), big.labels());
    }

    proptest! {
        #[test]
        fn raster_round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let samples: Vec<u8> = (0..w * h).map(|_| rng.gen()).collect();
            let img = RawImage::new(w, h, 1, samples).unwrap();
            let bytes = encode_image(&img);
            prop_assert_eq!(decode_image(&bytes).unwrap(), img);
        }

        #[test]
        fn noise_outputs_stay_in_range(seed in any::<u64>(), sigma in 0.0f64..1.0, frac in 0.0f64..1.0) {
            let img = ImageGray::constant(6, 6, 0.5).unwrap();
            let g = add_gaussian_noise(&img, sigma, seed).unwrap();
            prop_assert!(g.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
            let s = add_salt_pepper(&img, frac, seed).unwrap();
            prop_assert!(s.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
