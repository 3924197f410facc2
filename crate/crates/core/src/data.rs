//! Corpus loading and preparation.
//!
//! A corpus is a directory with `closed/` and `open/` subdirectories holding
//! binary PGM (P5) or 8-bit PNG files. Images are converted to grayscale,
//! ordered by path, and resized to the network input before training.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng::{purpose, Rng};

/// Class label: 0 for closed eyes, 1 for open eyes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Closed = 0,
    Open = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Closed, Label::Open];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Closed),
            1 => Some(Label::Open),
            _ => None,
        }
    }

    pub fn as_f32(self) -> f32 {
        self as usize as f32
    }

    /// Directory name in a corpus, also used by the CLI output.
    pub fn name(self) -> &'static str {
        match self {
            Label::Closed => "closed",
            Label::Open => "open",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: GrayImage,
    pub label: Label,
    pub source: PathBuf,
}

/// Images ordered by source path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    items: Vec<LabeledImage>,
}

impl Dataset {
    pub fn new(mut items: Vec<LabeledImage>) -> Self {
        items.sort_by(|a, b| a.source.cmp(&b.source));
        Dataset { items }
    }

    pub fn items(&self) -> &[LabeledImage] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `[closed, open]` counts.
    pub fn counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for item in &self.items {
            c[item.label.index()] += 1;
        }
        c
    }

    pub fn labels(&self) -> Vec<Label> {
        self.items.iter().map(|i| i.label).collect()
    }

    /// Every image resized to `width x height`.
    pub fn resized(&self, width: usize, height: usize) -> Result<Dataset> {
        let items = self
            .items
            .par_iter()
            .map(|item| {
                Ok(LabeledImage {
                    image: resize_bilinear(&item.image, width, height)?,
                    label: item.label,
                    source: item.source.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { items })
    }

    fn subset(&self, mut indices: Vec<usize>) -> Dataset {
        indices.sort_unstable();
        Dataset {
            items: indices.into_iter().map(|i| self.items[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pgm" => Some(ImageFormat::Pgm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }
}

/// ITU-R BT.601 luma.
pub fn luminance(r: u8, g: u8, b: u8) -> f32 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) as f32
}

/// Decodes to grayscale in `[0, 255]`. `source` is only used in errors.
pub fn decode_image(bytes: &[u8], format: ImageFormat, source: &Path) -> Result<GrayImage> {
    let fail = |reason: String| Error::Decode {
        path: source.to_path_buf(),
        reason,
    };
    match format {
        ImageFormat::Pgm => decode_pgm(bytes).map_err(fail),
        ImageFormat::Png => decode_png(bytes).map_err(fail),
    }
}

pub fn read_image(path: &Path) -> Result<GrayImage> {
    let format = ImageFormat::from_path(path).ok_or_else(|| Error::Decode {
        path: path.to_path_buf(),
        reason: "unsupported extension, expected .pgm or .png".into(),
    })?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, format, path)
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (P5) file".into());
    }
    let mut number = |what: &str| -> std::result::Result<usize, String> {
        let t = token()?;
        t.parse::<usize>()
            .map_err(|_| format!("invalid PGM {what} {t:?}"))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 {
        return Err(format!("empty PGM image {width}x{height}"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported PGM maxval {maxval}, expected 1..=255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let need = width * height;
    if bytes.len() < start + need {
        return Err(format!(
            "truncated PGM raster: need {need} bytes, have {}",
            bytes.len().saturating_sub(start)
        ));
    }
    let scale = 255.0 / maxval as f32;
    let pixels = bytes[start..start + need]
        .iter()
        .map(|&b| {
            if maxval == 255 {
                b as f32
            } else {
                (b as f32 * scale).min(255.0)
            }
        })
        .collect();
    GrayImage::new(width, height, pixels).map_err(|e| e.to_string())
}

fn decode_png(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| "PNG too large".to_string())?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err("unexpanded palette PNG".into()),
    };
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format!("unsupported PNG bit depth {:?}", info.bit_depth));
    }
    let stride = info.line_size;
    let mut pixels = Vec::with_capacity(w * h);
    for row in data.chunks_exact(stride).take(h) {
        for px in row[..w * channels].chunks_exact(channels) {
            pixels.push(if channels < 3 {
                px[0] as f32
            } else {
                luminance(px[0], px[1], px[2])
            });
        }
    }
    GrayImage::new(w, h, pixels).map_err(|e| e.to_string())
}

/// Writes a binary PGM; intensities are rounded and clamped to `[0, 255]`.
pub fn write_pgm(image: &GrayImage, path: &Path) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    bytes.extend(
        image
            .pixels()
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8),
    );
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Bilinear resize with half-pixel-centre alignment.
pub fn resize_bilinear(image: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidShape(format!(
            "resize target must be positive, got {width}x{height}"
        )));
    }
    if image.width() == width && image.height() == height {
        return Ok(image.clone());
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = taps(width, image.width());
    let ys = taps(height, image.height());
    let mut pixels = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = image.get(y0, x0) as f64 * (1.0 - fx) + image.get(y0, x1) as f64 * fx;
            let bottom = image.get(y1, x0) as f64 * (1.0 - fx) + image.get(y1, x1) as f64 * fx;
            pixels.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    GrayImage::new(width, height, pixels)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && ImageFormat::from_path(&path).is_some() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads `<root>/closed` (label 0) and `<root>/open` (label 1).
pub fn load_directory(root: &Path) -> Result<Dataset> {
    let mut jobs = Vec::new();
    for label in Label::ALL {
        let dir = root.join(label.name());
        let files = image_files(&dir)?;
        if files.is_empty() {
            return Err(Error::DegenerateData(format!(
                "no .pgm or .png images in {}",
                dir.display()
            )));
        }
        jobs.extend(files.into_iter().map(|f| (f, label)));
    }
    let items = jobs
        .into_par_iter()
        .map(|(path, label)| {
            Ok(LabeledImage {
                image: read_image(&path)?,
                label,
                source: path,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(items))
}

/// Per class, `ceil(fraction * n)` seeded-shuffled items go to train.
/// Both halves keep the dataset's path order.
pub fn stratified_split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "split fraction must be in (0, 1], got {fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in Label::ALL {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.items[i].label == label)
            .collect();
        let mut rng = Rng::derive(seed, purpose::SPLIT, label.index() as u64);
        rng.shuffle(&mut idx);
        // The slack keeps products like 0.8 * 5 = 4.000000000000001 from
        // rounding up an extra item.
        let n_train = ((fraction * idx.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        let n_train = n_train.min(idx.len());
        test.extend_from_slice(&idx[n_train..]);
        idx.truncate(n_train);
        train.extend(idx);
    }
    Ok((dataset.subset(train), dataset.subset(test)))
}

/// Seeded shuffle of `0..n`, cut into contiguous chunks; the last chunk may be short.
pub fn batch_indices(n: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn batches(dataset: &Dataset, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    batch_indices(dataset.len(), batch_size, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(name: &str, label: Label) -> LabeledImage {
        LabeledImage {
            image: GrayImage::filled(2, 2, 0.0).unwrap(),
            label,
            source: PathBuf::from(name),
        }
    }

    fn balanced(n: usize) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|i| {
                    let label = if i % 2 == 0 {
                        Label::Closed
                    } else {
                        Label::Open
                    };
                    item(&format!("{}/{i:05}", label.name()), label)
                })
                .collect(),
        )
    }

    #[test]
    fn pgm_gradient_round_trip() {
        let bytes = b"P5\n# comment\n2 2\n255\n\x00\x40\x80\xff";
        let img = decode_image(bytes, ImageFormat::Pgm, Path::new("g.pgm")).unwrap();
        assert_eq!(img.pixels(), &[0.0, 64.0, 128.0, 255.0]);
    }

    #[test]
    fn truncated_pgm_names_path() {
        let err = decode_image(
            b"P5\n2 2\n255\n\x00",
            ImageFormat::Pgm,
            Path::new("bad.pgm"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("bad.pgm"));
        assert!(decode_image(
            b"P6\n1 1\n255\n\x00\x00\x00",
            ImageFormat::Pgm,
            Path::new("x")
        )
        .is_err());
    }

    fn png_bytes(color: png::ColorType, w: u32, h: u32, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, w, h);
            enc.set_color(color);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().unwrap();
            writer.write_image_data(data).unwrap();
        }
        out
    }

    #[test]
    fn png_gray_and_rgb() {
        let gray = png_bytes(png::ColorType::Grayscale, 2, 1, &[7, 200]);
        let img = decode_image(&gray, ImageFormat::Png, Path::new("g.png")).unwrap();
        assert_eq!(img.pixels(), &[7.0, 200.0]);

        let rgb = png_bytes(png::ColorType::Rgb, 2, 1, &[255, 0, 0, 90, 90, 90]);
        let img = decode_image(&rgb, ImageFormat::Png, Path::new("c.png")).unwrap();
        assert_eq!(img.pixels()[0], 76.245f32); // 0.299 * 255
        assert_eq!(img.pixels()[1], 90.0);
        assert!(decode_image(&rgb[..rgb.len() / 2], ImageFormat::Png, Path::new("t.png")).is_err());
    }

    #[test]
    fn gray_rgb_luminance_is_identity() {
        for g in 0..=255u8 {
            assert_eq!(luminance(g, g, g), g as f32);
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let img =
            GrayImage::new(100, 100, (0..10_000).map(|v| (v % 256) as f32).collect()).unwrap();
        assert_eq!(resize_bilinear(&img, 100, 100).unwrap(), img);
        let c = GrayImage::filled(24, 24, 37.0).unwrap();
        let r = resize_bilinear(&c, 100, 100).unwrap();
        assert!(r.pixels().iter().all(|&v| v == 37.0));
    }

    #[test]
    fn resize_checkerboard_matches_tent_oracle() {
        let img = GrayImage::new(2, 2, vec![0.0, 255.0, 255.0, 0.0]).unwrap();
        let out = resize_bilinear(&img, 4, 4).unwrap();
        // Tent-weight evaluation at the clamped half-pixel sample point.
        for oy in 0..4 {
            for ox in 0..4 {
                let sx = ((ox as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
                let sy = ((oy as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
                let mut v = 0.0;
                for p in 0..2 {
                    for q in 0..2 {
                        let wgt = (1.0 - (sx - q as f64).abs()).max(0.0)
                            * (1.0 - (sy - p as f64).abs()).max(0.0);
                        v += img.get(p, q) as f64 * wgt;
                    }
                }
                assert!((out.get(oy, ox) as f64 - v).abs() < 1e-4, "({oy},{ox})");
            }
        }
    }

    #[test]
    fn split_fraction_one_and_partition() {
        let ds = balanced(10);
        let (train, test) = stratified_split(&ds, 1.0, 3).unwrap();
        assert_eq!(train.len(), 10);
        assert!(test.is_empty());
        assert!(stratified_split(&ds, 0.0, 3).is_err());
        assert!(stratified_split(&ds, 1.5, 3).is_err());
    }

    #[test]
    fn split_eye_corpus_sizes() {
        let ds = balanced(3884);
        let (train, test) = stratified_split(&ds, 0.8, 42).unwrap();
        assert_eq!(train.len() + test.len(), 3884);
        assert!(
            (train.len() as i64 - 3108).abs() <= 2,
            "train {}",
            train.len()
        );
        assert!((test.len() as i64 - 776).abs() <= 2, "test {}", test.len());
        assert_eq!(train.counts(), [1554, 1554]);
    }

    #[test]
    fn split_deterministic_and_disjoint() {
        let ds = balanced(37);
        let (a, b) = stratified_split(&ds, 0.7, 9).unwrap();
        let (a2, b2) = stratified_split(&ds, 0.7, 9).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        for x in a.items() {
            assert!(!b.items().iter().any(|y| y.source == x.source));
        }
    }

    #[test]
    fn batch_sizes() {
        let b = batch_indices(10, 4, &mut Rng::new(1, 0)).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(b, batch_indices(10, 4, &mut Rng::new(1, 0)).unwrap());
        assert!(batch_indices(10, 0, &mut Rng::new(1, 0)).is_err());
    }
}
