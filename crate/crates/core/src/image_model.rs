//! Image stacks, per-pixel observations, binary segmentations and label maps,
//! together with reading and writing them as grayscale PNG/PGM slice directories.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are kept inside `[EPS, 1 - EPS]` so their logarithms stay finite.
pub const PROBABILITY_EPS: f64 = 1e-6;

/// Offsets of the 8-connected neighborhood, row-major order.
pub const NEIGHBORS_8: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Offsets that visit every unordered 8-neighbor pair exactly once when applied
/// to every pixel.
pub const FORWARD_NEIGHBORS_8: [(i64, i64); 4] = [(1, 0), (-1, 1), (0, 1), (1, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    /// Linear index of `(x + dx, y + dy)` if it lies inside the image.
    #[inline]
    pub fn offset(&self, index: usize, dx: i64, dy: i64) -> Option<usize> {
        let (x, y) = self.coords(index);
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            None
        } else {
            Some(ny as usize * self.width + nx as usize)
        }
    }

    /// Iterates over the in-bounds 8-neighbors of `index`.
    pub fn neighbors(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        NEIGHBORS_8
            .iter()
            .filter_map(move |&(dx, dy)| self.offset(index, dx, dy))
    }
}

/// Gray levels in `[0, 1]`, one buffer per slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    dims: Dims,
    slices: Vec<Vec<f64>>,
}

impl ImageStack {
    pub fn new(dims: Dims, slices: Vec<Vec<f64>>) -> Result<Self> {
        check_slices(dims, &slices, "image stack")?;
        for (z, s) in slices.iter().enumerate() {
            if let Some(v) = s.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Data(format!(
                    "intensity {v} outside [0, 1] in slice {z}"
                )));
            }
        }
        Ok(Self { dims, slices })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        &self.slices[z]
    }

    pub fn slices(&self) -> &[Vec<f64>] {
        &self.slices
    }

    /// Fallback foreground probabilities derived from gray level.
    pub fn probabilities_from_intensity(&self, polarity: Polarity) -> ProbabilityStack {
        let slices = self
            .slices
            .iter()
            .map(|s| {
                s.iter()
                    .map(|&v| match polarity {
                        Polarity::Dark => 1.0 - v,
                        Polarity::Bright => v,
                    })
                    .collect()
            })
            .collect();
        ProbabilityStack::from_raw(self.dims, slices)
            .expect("dimensions taken from a validated stack")
    }
}

/// Which gray-level polarity marks foreground when no probability maps are given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Dark pixels are foreground: `p = 1 - intensity`.
    #[default]
    Dark,
    /// Bright pixels are foreground: `p = intensity`.
    Bright,
}

/// Per-pixel foreground probabilities, clamped to `[EPS, 1 - EPS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityStack {
    dims: Dims,
    slices: Vec<Vec<f64>>,
}

impl ProbabilityStack {
    /// Builds a stack from raw values, clamping each into the open unit interval.
    pub fn from_raw(dims: Dims, mut slices: Vec<Vec<f64>>) -> Result<Self> {
        check_slices(dims, &slices, "probability stack")?;
        for s in &mut slices {
            for v in s.iter_mut() {
                if v.is_nan() {
                    return Err(Error::Data("NaN probability".into()));
                }
                *v = clamp_probability(*v);
            }
        }
        Ok(Self { dims, slices })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        &self.slices[z]
    }
}

#[inline]
pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROBABILITY_EPS, 1.0 - PROBABILITY_EPS)
}

/// A binary labeling of one slice, `true` = foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub dims: Dims,
    pub labels: Vec<bool>,
    pub lambda_n: f64,
}

impl Segmentation {
    pub fn background(dims: Dims, lambda_n: f64) -> Self {
        Self {
            dims,
            labels: vec![false; dims.len()],
            lambda_n,
        }
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// True if every foreground pixel of `self` is also foreground in `other`.
    pub fn is_subset_of(&self, other: &Segmentation) -> bool {
        self.labels
            .iter()
            .zip(&other.labels)
            .all(|(&a, &b)| !a || b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub sigma: f64,
    pub lambda_n_list: Vec<f64>,
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_d >= 0.0 && self.lambda_d.is_finite()) {
            return Err(Error::Config("lambda_d must be a finite value >= 0".into()));
        }
        if !(self.lambda_s >= 0.0 && self.lambda_s.is_finite()) {
            return Err(Error::Config("lambda_s must be a finite value >= 0".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config("sigma must be > 0".into()));
        }
        if self.lambda_n_list.is_empty() {
            return Err(Error::Config("lambda_n list is empty".into()));
        }
        if self.lambda_n_list.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("lambda_n values must be finite".into()));
        }
        if self.lambda_n_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(
                "lambda_n list must be strictly decreasing".into(),
            ));
        }
        Ok(())
    }
}

/// Integer labels per pixel; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub dims: Dims,
    pub ids: Vec<u32>,
}

impl LabelMap {
    pub fn empty(dims: Dims) -> Self {
        Self {
            dims,
            ids: vec![0; dims.len()],
        }
    }
}

fn check_slices(dims: Dims, slices: &[Vec<f64>], what: &str) -> Result<()> {
    if slices.is_empty() {
        return Err(Error::Data(format!("{what} has no slices")));
    }
    if dims.is_empty() {
        return Err(Error::Data(format!("{what} has zero-sized slices")));
    }
    for (z, s) in slices.iter().enumerate() {
        if s.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "{what}: slice {z} has {} pixels, expected {}",
                s.len(),
                dims.len()
            )));
        }
    }
    Ok(())
}

/// Slice files of a directory (`.png`, `.pgm`, `.pnm`), sorted lexicographically by name.
pub fn list_slice_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "pgm" | "pnm")) {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no slice images found in {}",
            dir.display()
        )));
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Reads a single-channel 8- or 16-bit image, mapping values linearly onto `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<(Dims, Vec<f64>)> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let dims = Dims::new(img.width() as usize, img.height() as usize);
    let values = match img {
        DynamicImage::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        other => {
            return Err(Error::Data(format!(
                "{}: unsupported pixel format {:?}, expected 8/16-bit grayscale",
                path.display(),
                other.color()
            )))
        }
    };
    Ok((dims, values))
}

fn read_dir_stack(dir: &Path) -> Result<(Dims, Vec<Vec<f64>>)> {
    let files = list_slice_files(dir)?;
    let mut dims = None;
    let mut slices = Vec::with_capacity(files.len());
    for f in &files {
        let (d, values) = read_gray(f)?;
        match dims {
            None => dims = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::Dimension(format!(
                    "{} is {}x{}, previous slices are {}x{}",
                    f.display(),
                    d.width,
                    d.height,
                    prev.width,
                    prev.height
                )))
            }
            _ => {}
        }
        slices.push(values);
    }
    Ok((dims.expect("at least one file"), slices))
}

/// Loads paired gray-level and probability stacks from two slice directories.
pub fn load_stack(image_dir: &Path, prob_dir: &Path) -> Result<(ImageStack, ProbabilityStack)> {
    let (dims, images) = read_dir_stack(image_dir)?;
    let (pdims, probs) = read_dir_stack(prob_dir)?;
    if dims != pdims || images.len() != probs.len() {
        return Err(Error::Dimension(format!(
            "image stack {}x{}x{} does not match probability stack {}x{}x{}",
            dims.width,
            dims.height,
            images.len(),
            pdims.width,
            pdims.height,
            probs.len()
        )));
    }
    Ok((
        ImageStack::new(dims, images)?,
        ProbabilityStack::from_raw(dims, probs)?,
    ))
}

/// Loads a gray-level stack and derives probabilities from intensity.
pub fn load_stack_with_fallback(
    image_dir: &Path,
    polarity: Polarity,
) -> Result<(ImageStack, ProbabilityStack)> {
    let (dims, images) = read_dir_stack(image_dir)?;
    let stack = ImageStack::new(dims, images)?;
    let probs = stack.probabilities_from_intensity(polarity);
    Ok((stack, probs))
}

pub fn slice_file_name(z: usize) -> String {
    format!("slice_{z:04}.png")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn save_luma16(path: &Path, dims: Dims, data: Vec<u16>) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(dims.width as u32, dims.height as u32, data)
            .expect("buffer length matches dimensions");
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes one 16-bit grayscale PNG per slice (`slice_0000.png`, ...).
pub fn write_labels(labels: &[LabelMap], dir: &Path) -> Result<()> {
    for (z, map) in labels.iter().enumerate() {
        if let Some(&id) = map.ids.iter().find(|&&id| id > u16::MAX as u32) {
            return Err(Error::Data(format!(
                "label id {id} in slice {z} does not fit into 16 bits"
            )));
        }
    }
    ensure_dir(dir)?;
    for (z, map) in labels.iter().enumerate() {
        let data = map.ids.iter().map(|&id| id as u16).collect();
        save_luma16(&dir.join(slice_file_name(z)), map.dims, data)?;
    }
    Ok(())
}

/// Reads label maps written by [`write_labels`] (or any 8/16-bit integer label images).
pub fn read_labels(dir: &Path) -> Result<Vec<LabelMap>> {
    let files = list_slice_files(dir)?;
    let mut out: Vec<LabelMap> = Vec::with_capacity(files.len());
    for f in &files {
        let img = image::open(f).map_err(|source| Error::Image {
            path: f.clone(),
            source,
        })?;
        let dims = Dims::new(img.width() as usize, img.height() as usize);
        let ids: Vec<u32> = match img {
            DynamicImage::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as u32).collect(),
            DynamicImage::ImageLuma16(buf) => buf.pixels().map(|p| p.0[0] as u32).collect(),
            other => {
                return Err(Error::Data(format!(
                    "{}: unsupported label format {:?}",
                    f.display(),
                    other.color()
                )))
            }
        };
        if let Some(first) = out.first() {
            if first.dims != dims {
                return Err(Error::Dimension(format!(
                    "{} differs in size from the first label slice",
                    f.display()
                )));
            }
        }
        out.push(LabelMap { dims, ids });
    }
    Ok(out)
}

/// Writes `[0, 1]` values as 16-bit grayscale slices.
pub fn write_unit_stack(slices: &[Vec<f64>], dims: Dims, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    for (z, s) in slices.iter().enumerate() {
        let data = s
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        save_luma16(&dir.join(slice_file_name(z)), dims, data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_u8(path: &Path, w: u32, h: u32, data: Vec<u8>) {
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(w, h, data).unwrap();
        buf.save(path).unwrap();
    }

    #[test]
    fn loads_single_slice_and_clamps() {
        let tmp = tempfile::tempdir().unwrap();
        let img = tmp.path().join("img");
        let prob = tmp.path().join("prob");
        fs::create_dir_all(&img).unwrap();
        fs::create_dir_all(&prob).unwrap();
        write_u8(&img.join("slice_0000.png"), 4, 4, vec![128; 16]);
        let mut p = vec![255u8; 16];
        p[0] = 0;
        write_u8(&prob.join("slice_0000.png"), 4, 4, p);

        let (stack, probs) = load_stack(&img, &prob).unwrap();
        assert_eq!(stack.depth(), 1);
        assert_eq!(stack.dims(), Dims::new(4, 4));
        assert_eq!(probs.slice(0)[0], PROBABILITY_EPS);
        assert_eq!(probs.slice(0)[1], 1.0 - PROBABILITY_EPS);
    }

    #[test]
    fn thirty_slices_gives_depth_thirty() {
        let tmp = tempfile::tempdir().unwrap();
        for z in 0..30 {
            write_u8(&tmp.path().join(slice_file_name(z)), 3, 2, vec![z as u8; 6]);
        }
        let (stack, probs) = load_stack(tmp.path(), tmp.path()).unwrap();
        assert_eq!(stack.depth(), 30);
        assert_eq!(probs.depth(), 30);
        // lexicographic order is preserved
        assert!((stack.slice(29)[0] - 29.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        fs::create_dir_all(&a).unwrap();
        fs::create_dir_all(&b).unwrap();
        write_u8(&a.join("slice_0000.png"), 4, 4, vec![0; 16]);
        write_u8(&a.join("slice_0001.png"), 4, 3, vec![0; 12]);
        assert!(matches!(load_stack(&a, &a), Err(Error::Dimension(_))));

        fs::remove_file(a.join("slice_0001.png")).unwrap();
        write_u8(&b.join("slice_0000.png"), 5, 4, vec![0; 20]);
        assert!(matches!(load_stack(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_empty_directory() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_stack(tmp.path(), tmp.path()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn rejects_color_images() {
        let tmp = tempfile::tempdir().unwrap();
        let buf: ImageBuffer<image::Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(2, 2, vec![0; 12]).unwrap();
        buf.save(tmp.path().join("slice_0000.png")).unwrap();
        assert!(load_stack(tmp.path(), tmp.path()).is_err());
    }

    #[test]
    fn reads_sixteen_bit_pgm() {
        let tmp = tempfile::tempdir().unwrap();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(2, 1, vec![0, 65535]).unwrap();
        let path = tmp.path().join("slice_0000.pgm");
        buf.save(&path).unwrap();
        let (_, v) = read_gray(&path).unwrap();
        assert_eq!(v, vec![0.0, 1.0]);
    }

    #[test]
    fn empty_reconstruction_writes_zero_images() {
        let tmp = tempfile::tempdir().unwrap();
        let dims = Dims::new(3, 3);
        write_labels(&[LabelMap::empty(dims), LabelMap::empty(dims)], tmp.path()).unwrap();
        let back = read_labels(tmp.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back.iter().all(|m| m.ids.iter().all(|&v| v == 0)));
    }

    #[test]
    fn label_one_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let dims = Dims::new(2, 2);
        let map = LabelMap {
            dims,
            ids: vec![0, 1, 1, 0],
        };
        write_labels(std::slice::from_ref(&map), tmp.path()).unwrap();
        assert_eq!(read_labels(tmp.path()).unwrap(), vec![map]);
    }

    #[test]
    fn label_overflow_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let map = LabelMap {
            dims: Dims::new(1, 1),
            ids: vec![70_000],
        };
        assert!(write_labels(&[map], tmp.path()).is_err());
    }

    #[test]
    fn clamp_is_idempotent_and_monotone() {
        let values = [-1.0, 0.0, 1e-9, 0.3, 0.7, 1.0 - 1e-9, 1.0, 2.0];
        let clamped: Vec<f64> = values.iter().map(|&v| clamp_probability(v)).collect();
        for (c, v) in clamped.iter().zip(values) {
            assert_eq!(clamp_probability(*c), *c);
            assert!(*c > 0.0 && *c < 1.0, "{v} -> {c}");
        }
        assert!(clamped.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn params_validation() {
        let mut p = SegmentationParams {
            lambda_d: 1.0,
            lambda_s: 1.0,
            sigma: 0.1,
            lambda_n_list: vec![1.0, 0.5, 0.0],
        };
        assert!(p.validate().is_ok());
        p.lambda_n_list = vec![1.0, 1.0];
        assert!(p.validate().is_err());
        p.lambda_n_list = vec![1.0];
        p.sigma = 0.0;
        assert!(p.validate().is_err());
    }
}
