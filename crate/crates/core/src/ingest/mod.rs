//! Reading and writing the on-disk sequence layout.
//!
//! ```text
//! <seq>/frames/00000.png            8-bit RGB (or .jpg)
//! <seq>/proposals/00000/manifest.json
//! <seq>/proposals/00000/m_00.png    8-bit grayscale score maps
//! <seq>/features/00000.feat         one descriptor row per manifest entry
//! <seq>/gt/00000.png                nonzero = foreground
//! ```
//!
//! Loaders reject malformed input instead of repairing it.

pub mod feat;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb as ImgRgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Frame, SoftMask, VideoSequence};
use crate::scalar::Real;

pub use feat::{load_descriptor_file, write_descriptor_file};
pub use synth::{generate_synthetic_case, write_synthetic_case, SynthCase, SynthConfig};

pub const FRAMES_DIR: &str = "frames";
pub const PROPOSALS_DIR: &str = "proposals";
pub const FEATURES_DIR: &str = "features";
pub const GT_DIR: &str = "gt";
pub const MANIFEST: &str = "manifest.json";

/// Zero-padded file stem used throughout the layout.
pub fn frame_stem(i: usize) -> String {
    format!("{i:05}")
}

/// A finite, nonempty feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor<T>(Vec<T>);

impl<T: Real> Descriptor<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("descriptor has no entries".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("descriptor has a non-finite entry".into()));
        }
        Ok(Descriptor(values))
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> T {
        self.0.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

impl<T> AsRef<[T]> for Descriptor<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal<T> {
    pub score_map: SoftMask<T>,
    pub objectness: f64,
}

/// Ranked proposals for one frame, highest objectness first.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet<T> {
    frame_index: usize,
    proposals: Vec<Proposal<T>>,
}

impl<T: Real> ProposalSet<T> {
    /// Sorts by descending objectness; equal scores keep their input order.
    pub fn new(frame_index: usize, proposals: Vec<Proposal<T>>) -> Result<Self> {
        if let Some(p) = proposals.iter().find(|p| !p.objectness.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "frame {frame_index}: non-finite objectness {}",
                p.objectness
            )));
        }
        if let Some(first) = proposals.first() {
            let dims = first.score_map.dims();
            if let Some(bad) = proposals.iter().find(|p| p.score_map.dims() != dims) {
                return Err(Error::dims(dims, bad.score_map.dims()));
            }
        }
        let scores: Vec<f64> = proposals.iter().map(|p| p.objectness).collect();
        let proposals = permute(proposals, &objectness_order(&scores));
        Ok(ProposalSet {
            frame_index,
            proposals,
        })
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn proposals(&self) -> &[Proposal<T>] {
        &self.proposals
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }
}

/// Indices of `scores` in descending order; ties keep input order.
pub fn objectness_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

fn permute<X>(items: Vec<X>, order: &[usize]) -> Vec<X> {
    let mut slots: Vec<Option<X>> = items.into_iter().map(Some).collect();
    order
        .iter()
        .map(|&r| slots[r].take().expect("each index used once"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub mask: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frame: usize,
    pub proposals: Vec<ManifestEntry>,
}

/// Numbered image files in `dir`, ordered by their numeric stem.
pub fn numbered_images(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::ingest(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::ingest(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let n: u64 = stem
            .parse()
            .map_err(|_| Error::ingest(&path, "frame number out of range"))?;
        out.push((n, path));
    }
    out.sort();
    if let Some(w) = out.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::ingest(&w[1].1, "duplicate frame number"));
    }
    Ok(out)
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::ingest(path, e))
}

pub fn load_frame<T: Real>(path: &Path) -> Result<Frame<T>> {
    let img = open_image(path)?;
    let rgb = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        other => {
            return Err(Error::ingest(
                path,
                format!("expected 8-bit RGB, got {:?}", other.color()),
            ))
        }
    };
    let (w, h) = rgb.dimensions();
    let scale = T::lit(1.0 / 255.0);
    let px = rgb
        .pixels()
        .map(|p| p.0.map(|c| T::lit(f64::from(c)) * scale))
        .collect();
    Frame::new(w as usize, h as usize, px).map_err(|e| Error::ingest(path, e))
}

/// Loads every numbered frame image in `dir`.
///
/// The sequence is named after `dir`, or after its parent when `dir` is a
/// `frames/` directory.
pub fn load_sequence<T: Real>(dir: &Path) -> Result<VideoSequence<T>> {
    let files = numbered_images(dir)?;
    if files.is_empty() {
        return Err(Error::ingest(dir, "no numbered frame images"));
    }
    let mut frames: Vec<Frame<T>> = Vec::with_capacity(files.len());
    for (_, path) in &files {
        let f = load_frame(path)?;
        if let Some(first) = frames.first() {
            if first.dims() != f.dims() {
                return Err(Error::ingest(
                    path,
                    format!(
                        "frame is {}x{} but sequence is {}x{}",
                        f.width(),
                        f.height(),
                        first.width(),
                        first.height()
                    ),
                ));
            }
        }
        frames.push(f);
    }
    VideoSequence::new(sequence_name(dir), frames).map_err(|e| Error::ingest(dir, e))
}

pub fn sequence_name(dir: &Path) -> String {
    let named = if dir.file_name().is_some_and(|n| n == FRAMES_DIR) {
        dir.parent().unwrap_or(dir)
    } else {
        dir
    };
    let abs = named.canonicalize().unwrap_or_else(|_| named.to_path_buf());
    abs.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into())
}

/// Grayscale image as a soft mask with values `v / 255`.
pub fn load_score_map<T: Real>(path: &Path) -> Result<SoftMask<T>> {
    let img = open_image(path)?;
    let DynamicImage::ImageLuma8(gray) = img else {
        return Err(Error::ingest(
            path,
            format!("score map must be 8-bit grayscale, got {:?}", img.color()),
        ));
    };
    let (w, h) = gray.dimensions();
    let scale = T::lit(1.0 / 255.0);
    let vals = gray.pixels().map(|p| T::lit(f64::from(p.0[0])) * scale).collect();
    SoftMask::new(w as usize, h as usize, vals).map_err(|e| Error::ingest(path, e))
}

/// Reads `<root>/<i:05>/manifest.json` and its score maps. Every map must
/// be `dims = (width, height)`.
pub fn load_proposal_set<T: Real>(
    root: &Path,
    i: usize,
    dims: (usize, usize),
) -> Result<ProposalSet<T>> {
    let manifest_path = root.join(frame_stem(i)).join(MANIFEST);
    let proposals = read_proposals(root, i, dims)?;
    ProposalSet::new(i, proposals).map_err(|e| Error::ingest(&manifest_path, e))
}

/// Proposals of frame `i` in manifest order.
fn read_proposals<T: Real>(root: &Path, i: usize, dims: (usize, usize)) -> Result<Vec<Proposal<T>>> {
    let dir = root.join(frame_stem(i));
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::ingest(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::ingest(&manifest_path, e))?;
    if manifest.frame != i {
        return Err(Error::ingest(
            &manifest_path,
            format!("manifest is for frame {}, expected {i}", manifest.frame),
        ));
    }
    let mut proposals = Vec::with_capacity(manifest.proposals.len());
    for entry in &manifest.proposals {
        if Path::new(&entry.mask).components().count() != 1 {
            return Err(Error::ingest(
                &manifest_path,
                format!("mask name {:?} must be a bare file name", entry.mask),
            ));
        }
        if !entry.score.is_finite() {
            return Err(Error::ingest(&manifest_path, "non-finite score"));
        }
        let mask_path = dir.join(&entry.mask);
        let score_map = load_score_map(&mask_path)?;
        if score_map.dims() != dims {
            return Err(Error::ingest(
                &mask_path,
                format!(
                    "score map is {}x{} but frame is {}x{}",
                    score_map.width(),
                    score_map.height(),
                    dims.0,
                    dims.1
                ),
            ));
        }
        proposals.push(Proposal {
            score_map,
            objectness: entry.score,
        });
    }
    Ok(proposals)
}

/// Writes proposals as `m_XX.png` score maps plus a manifest.
pub fn write_proposal_set<T: Real>(ps: &ProposalSet<T>, root: &Path) -> Result<()> {
    let dir = root.join(frame_stem(ps.frame_index()));
    fs::create_dir_all(&dir).map_err(|e| Error::write(&dir, e))?;
    let mut entries = Vec::with_capacity(ps.len());
    for (j, p) in ps.proposals().iter().enumerate() {
        let name = format!("m_{j:02}.png");
        write_score_map(&p.score_map, &dir.join(&name))?;
        entries.push(ManifestEntry {
            mask: name,
            score: p.objectness,
        });
    }
    let manifest = Manifest {
        frame: ps.frame_index(),
        proposals: entries,
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::write(&path, e))?;
    fs::write(&path, json).map_err(|e| Error::write(&path, e))
}

fn to_byte<T: Real>(v: T) -> u8 {
    (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn write_score_map<T: Real>(m: &SoftMask<T>, path: &Path) -> Result<()> {
    let img: GrayImage = ImageBuffer::from_fn(m.width() as u32, m.height() as u32, |x, y| {
        Luma([to_byte(m.get(x as usize, y as usize))])
    });
    img.save(path).map_err(|e| Error::write(path, e))
}

pub fn write_frame<T: Real>(f: &Frame<T>, path: &Path) -> Result<()> {
    let img: RgbImage = ImageBuffer::from_fn(f.width() as u32, f.height() as u32, |x, y| {
        ImgRgb(f.pixel(x as usize, y as usize).map(to_byte))
    });
    img.save(path).map_err(|e| Error::write(path, e))
}

/// 8-bit grayscale PNG: 0 background, 255 foreground.
pub fn write_binary_mask(m: &BinaryMask, path: &Path) -> Result<()> {
    let img: GrayImage = ImageBuffer::from_fn(m.width() as u32, m.height() as u32, |x, y| {
        Luma([if m.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| Error::write(path, e))
}

/// Any nonzero channel marks foreground, so palette-indexed annotation
/// images load as well as plain grayscale ones.
pub fn read_binary_mask(path: &Path) -> Result<BinaryMask> {
    let img = open_image(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bits = match img {
        DynamicImage::ImageLuma8(g) => g.pixels().map(|p| p.0[0] != 0).collect(),
        other => other.to_rgba8().pixels().map(|p| p.0[..3].iter().any(|&c| c != 0)).collect(),
    };
    BinaryMask::from_bits(w, h, bits).map_err(|e| Error::ingest(path, e))
}

/// Every numbered mask in `dir`, keyed by its frame number.
pub fn load_masks(dir: &Path) -> Result<Vec<(u64, BinaryMask)>> {
    numbered_images(dir)?
        .into_iter()
        .map(|(n, p)| read_binary_mask(&p).map(|m| (n, m)))
        .collect()
}

/// A sequence with the proposals and descriptors for every frame.
#[derive(Debug, Clone)]
pub struct SequenceData<T> {
    pub sequence: VideoSequence<T>,
    pub proposals: Vec<ProposalSet<T>>,
    /// `descriptors[i][r]` belongs to `proposals[i].proposals()[r]`.
    pub descriptors: Vec<Vec<Descriptor<T>>>,
}

/// Loads a full sequence root (`frames/`, `proposals/`, `features/`).
///
/// Proposal manifests and feature files are addressed by frame position,
/// so frame images must be numbered from zero without gaps.
pub fn load_sequence_data<T: Real>(root: &Path) -> Result<SequenceData<T>> {
    let frames_dir = root.join(FRAMES_DIR);
    let files = numbered_images(&frames_dir)?;
    for (pos, (n, path)) in files.iter().enumerate() {
        if *n != pos as u64 {
            return Err(Error::ingest(
                path,
                format!("frame numbering must be contiguous from 0, expected {pos}"),
            ));
        }
    }
    let sequence = load_sequence::<T>(&frames_dir)?;
    let dims = sequence.dims();
    let mut proposals = Vec::with_capacity(sequence.len());
    let mut descriptors = Vec::with_capacity(sequence.len());
    let mut dim = None;
    for i in 0..sequence.len() {
        let raw = read_proposals::<T>(&root.join(PROPOSALS_DIR), i, dims)?;
        let feat_path = root.join(FEATURES_DIR).join(format!("{}.feat", frame_stem(i)));
        let ds = load_descriptor_file::<T>(&feat_path)?;
        if ds.len() != raw.len() {
            return Err(Error::ingest(
                &feat_path,
                format!("{} descriptors for {} proposals", ds.len(), raw.len()),
            ));
        }
        if let Some(d) = ds.first().map(Descriptor::dim) {
            if *dim.get_or_insert(d) != d {
                return Err(Error::ingest(&feat_path, "descriptor dimension differs between frames"));
            }
        }
        // FEAT rows follow manifest order; realign them with the sorted proposals.
        let scores: Vec<f64> = raw.iter().map(|p| p.objectness).collect();
        let order = objectness_order(&scores);
        descriptors.push(permute(ds, &order));
        let ps = ProposalSet::new(i, permute(raw, &order)).map_err(|e| Error::ingest(root, e))?;
        proposals.push(ps);
    }
    Ok(SequenceData {
        sequence,
        proposals,
        descriptors,
    })
}
