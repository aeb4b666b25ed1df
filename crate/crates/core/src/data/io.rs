//! PNG reading and writing, dataset ingestion and evaluation sets.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::trimap::{trimap_from_gray, trimap_to_gray};
use crate::error::{Error, Result};
use crate::gca::AttentionImage;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::Config(format!("bit depth must be 8 or 16, got {other}"))),
        }
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

fn save(img: DynamicImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// RGB PNG (8 or 16 bit) as `1×3×H×W` in `[0, 1]`.
pub fn read_rgb(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let img = open(path.as_ref())?.to_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |[_, c, y, x]| raw[3 * (y * w + x) + c]))
}

/// Single-channel PNG (8 or 16 bit) as `1×1×H×W` in `[0, 1]`. Color
/// images are converted to luma.
pub fn read_gray(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let img = open(path.as_ref())?.to_luma32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor::from_vec(Shape::new(1, 1, h, w), img.into_raw())
}

fn quantize(v: f32, max: f32) -> f32 {
    (v.clamp(0.0, 1.0) * max).round()
}

pub fn write_rgb(path: impl AsRef<Path>, t: &Tensor<f32>, depth: BitDepth) -> Result<()> {
    let s = t.shape();
    if s.c() != 3 || s.n() != 1 {
        return Err(Error::dim(format!("write_rgb expects 1×3×H×W, got {s}")));
    }
    let (w, h) = (s.w() as u32, s.h() as u32);
    let img = match depth {
        BitDepth::Eight => DynamicImage::ImageRgb8(ImageBuffer::from_fn(w, h, |x, y| {
            Rgb(std::array::from_fn(|c| quantize(t.get(0, c, y as usize, x as usize), 255.0) as u8))
        })),
        BitDepth::Sixteen => DynamicImage::ImageRgb16(ImageBuffer::from_fn(w, h, |x, y| {
            Rgb(std::array::from_fn(|c| quantize(t.get(0, c, y as usize, x as usize), 65535.0) as u16))
        })),
    };
    save(img, path.as_ref())
}

pub fn write_gray(path: impl AsRef<Path>, t: &Tensor<f32>, depth: BitDepth) -> Result<()> {
    let s = t.shape();
    if s.c() != 1 || s.n() != 1 {
        return Err(Error::dim(format!("write_gray expects 1×1×H×W, got {s}")));
    }
    let (w, h) = (s.w() as u32, s.h() as u32);
    let img = match depth {
        BitDepth::Eight => DynamicImage::ImageLuma8(ImageBuffer::from_fn(w, h, |x, y| {
            Luma([quantize(t.get(0, 0, y as usize, x as usize), 255.0) as u8])
        })),
        BitDepth::Sixteen => DynamicImage::ImageLuma16(ImageBuffer::from_fn(w, h, |x, y| {
            Luma([quantize(t.get(0, 0, y as usize, x as usize), 65535.0) as u16])
        })),
    };
    save(img, path.as_ref())
}

/// Trimap PNG with gray levels `{0, 128, 255}` = (background, unknown,
/// foreground) as a one-hot tensor.
pub fn read_trimap(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    trimap_from_gray(img.as_raw(), h, w).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_trimap(path: impl AsRef<Path>, trimap: &Tensor<f32>) -> Result<()> {
    let s = trimap.shape();
    let gray = trimap_to_gray(trimap);
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(s.w() as u32, s.h() as u32, gray).expect("buffer size matches");
    save(DynamicImage::ImageLuma8(img), path.as_ref())
}

/// Writes an attention map as 8-bit RGB PNG with the region weights in a
/// `tEXt` chunk (keyword `Comment`).
pub fn write_attention_png(path: impl AsRef<Path>, img: &AttentionImage) -> Result<()> {
    let path = path.as_ref();
    let file = BufWriter::new(fs::File::create(path)?);
    let mut enc = png::Encoder::new(file, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    enc.add_text_chunk("Comment".into(), img.caption()).map_err(fmt)?;
    let mut writer = enc.write_header().map_err(fmt)?;
    writer.write_image_data(&img.rgb).map_err(fmt)?;
    writer.finish().map_err(fmt)
}

/// Text chunks of a PNG as `(keyword, text)` pairs.
pub fn read_png_text(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let file = std::io::BufReader::new(fs::File::open(path)?);
    let reader = png::Decoder::new(file).read_info().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(reader.info().uncompressed_latin1_text.iter().map(|t| (t.keyword.clone(), t.text.clone())).collect())
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.file_type()?.is_file() && name.to_ascii_lowercase().ends_with(".png") {
            names.insert(name);
        }
    }
    Ok(names)
}

/// A dataset laid out as `root/fg/*.png`, `root/alpha/*.png` with matching
/// names, and optionally `root/bg/*.png`. Images are loaded on demand.
#[derive(Clone, Debug)]
pub struct IngestedDataset {
    pub root: PathBuf,
    pub names: Vec<String>,
    pub backgrounds: Vec<String>,
}

/// Scans a dataset directory and checks that every foreground has an alpha
/// and vice versa.
pub fn ingest_dataset(root: impl AsRef<Path>) -> Result<IngestedDataset> {
    let root = root.as_ref();
    let (fg_dir, alpha_dir, bg_dir) = (root.join("fg"), root.join("alpha"), root.join("bg"));
    for d in [&fg_dir, &alpha_dir] {
        if !d.is_dir() {
            return Err(Error::Ingest(format!("missing directory {}", d.display())));
        }
    }
    let fgs = png_names(&fg_dir)?;
    let alphas = png_names(&alpha_dir)?;
    if let Some(name) = fgs.difference(&alphas).next() {
        return Err(Error::Ingest(format!("foreground {} has no alpha {}", fg_dir.join(name).display(), alpha_dir.join(name).display())));
    }
    if let Some(name) = alphas.difference(&fgs).next() {
        return Err(Error::Ingest(format!("alpha {} has no foreground {}", alpha_dir.join(name).display(), fg_dir.join(name).display())));
    }
    if fgs.is_empty() {
        return Err(Error::Ingest(format!("no PNG pairs under {}", root.display())));
    }
    let backgrounds = if bg_dir.is_dir() { png_names(&bg_dir)?.into_iter().collect() } else { Vec::new() };
    Ok(IngestedDataset { root: root.to_path_buf(), names: fgs.into_iter().collect(), backgrounds })
}

impl IngestedDataset {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Foreground and alpha of pair `i`.
    pub fn load(&self, i: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let name = &self.names[i];
        let fg = read_rgb(self.root.join("fg").join(name))?;
        let alpha = read_gray(self.root.join("alpha").join(name))?;
        let (sf, sa) = (fg.shape(), alpha.shape());
        if sf.h() != sa.h() || sf.w() != sa.w() {
            return Err(Error::Ingest(format!("{name}: foreground {}×{} vs alpha {}×{}", sf.w(), sf.h(), sa.w(), sa.h())));
        }
        Ok((fg, alpha))
    }

    pub fn load_backgrounds(&self) -> Result<Vec<Tensor<f32>>> {
        self.backgrounds.iter().map(|n| read_rgb(self.root.join("bg").join(n))).collect()
    }
}

/// One evaluation image; `alpha` is absent when no ground truth was found.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub name: String,
    pub image: Tensor<f32>,
    pub trimap: Tensor<f32>,
    pub alpha: Option<Tensor<f32>>,
}

/// Flat directory of `<name>_image.png`, `<name>_trimap.png` and
/// `<name>_alpha.png` files.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub items: Vec<EvalItem>,
}

impl EvalSet {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::Ingest(format!("{} is not a directory", dir.display())));
        }
        let mut items = Vec::new();
        for file in png_names(dir)? {
            let Some(name) = file.strip_suffix("_image.png") else { continue };
            let trimap_path = dir.join(format!("{name}_trimap.png"));
            if !trimap_path.is_file() {
                log::warn!("{name}: no trimap, skipped");
                continue;
            }
            let image = read_rgb(dir.join(&file))?;
            let trimap = read_trimap(&trimap_path)?;
            let alpha_path = dir.join(format!("{name}_alpha.png"));
            let alpha = if alpha_path.is_file() { Some(read_gray(&alpha_path)?) } else { None };
            items.push(EvalItem { name: name.to_string(), image, trimap, alpha });
        }
        if items.is_empty() {
            return Err(Error::Ingest(format!("no *_image.png files in {}", dir.display())));
        }
        Ok(EvalSet { items })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_bit_gray_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let t = Tensor::from_fn(Shape::new(1, 1, 2, 3), |[_, _, y, x]| (y * 3 + x) as f32 * 12345.0 / 65535.0);
        write_gray(&p, &t, BitDepth::Sixteen).unwrap();
        let back = read_gray(&p).unwrap();
        assert!(back.max_abs_diff(&t).unwrap() < 0.5 / 65535.0);
    }

    #[test]
    fn ingest_reports_missing_alpha() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("fg")).unwrap();
        fs::create_dir_all(dir.path().join("alpha")).unwrap();
        let fg = Tensor::full(Shape::new(1, 3, 2, 2), 0.5);
        let a = Tensor::full(Shape::new(1, 1, 2, 2), 0.5);
        write_rgb(dir.path().join("fg/one.png"), &fg, BitDepth::Eight).unwrap();
        write_gray(dir.path().join("alpha/one.png"), &a, BitDepth::Eight).unwrap();
        assert_eq!(ingest_dataset(dir.path()).unwrap().len(), 1);
        write_rgb(dir.path().join("fg/two.png"), &fg, BitDepth::Eight).unwrap();
        let err = ingest_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("two.png"), "{err}");
    }
}
