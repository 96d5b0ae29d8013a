//! Video clips, procedural scenes and frame-sequence files.

mod pgm;
mod resize;
mod scene;

use std::fs;
use std::path::{Path, PathBuf};

pub use pgm::{decode_pgm, encode_pgm, quantize, read_pgm, write_pgm};
pub use resize::resize_grayscale;
pub use scene::{generate, AnomalyKind, AnomalySpec, ObjectSpec, SceneSpec, ShapeKind};

use crate::error::{Error, Result};
use crate::interval::{normalize, read_intervals, write_intervals, Interval};
use crate::net::stack_frames;
use crate::tensor::Tensor;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.txt";

/// An ordered sequence of square greyscale frames (`[1, S, S]`, values in
/// `[0, 1]`) with optional frame-level anomaly annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<Tensor>,
    /// Inclusive, 0-indexed, sorted and disjoint.
    pub ground_truth: Vec<Interval>,
}

impl VideoClip {
    pub fn new(frames: Vec<Tensor>, ground_truth: Vec<Interval>) -> Result<Self> {
        let clip = VideoClip {
            frames,
            ground_truth: normalize(ground_truth),
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| Error::domain("clip has no frames"))?;
        let s = first.shape();
        if s.len() != 3 || s[0] != 1 || s[1] != s[2] {
            return Err(Error::config(format!("frames must be [1, S, S], got {s:?}")));
        }
        if let Some(i) = self.frames.iter().position(|f| f.shape() != s) {
            return Err(Error::config(format!(
                "frame {i} has shape {:?}, expected {s:?}",
                self.frames[i].shape()
            )));
        }
        if let Some(iv) = self.ground_truth.iter().find(|iv| iv.end >= self.frames.len()) {
            return Err(Error::domain(format!(
                "ground-truth interval [{iv}] exceeds clip length {}",
                self.frames.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn side(&self) -> usize {
        self.frames[0].shape()[1]
    }

    /// Frames `[start, start+input_len)` and the following `output_len` frames,
    /// each stacked to `[T, 1, S, S]`.
    pub fn window(&self, start: usize, input_len: usize, output_len: usize) -> Result<(Tensor, Tensor)> {
        let end = start + input_len + output_len;
        if end > self.len() {
            return Err(Error::domain(format!(
                "window [{start}, {end}) exceeds clip length {}",
                self.len()
            )));
        }
        let mid = start + input_len;
        Ok((
            stack_frames(&self.frames[start..mid])?,
            stack_frames(&self.frames[mid..end])?,
        ))
    }

    /// `true` when frame `i` lies in a ground-truth interval.
    pub fn is_anomalous(&self, i: usize) -> bool {
        self.ground_truth.iter().any(|iv| iv.contains(i))
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

fn frame_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".pgm")?;
    if digits.len() < 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Write `frame_%06d.pgm` files and, when annotated, `ground_truth.txt`.
pub fn save_clip(clip: &VideoClip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in clip.frames.iter().enumerate() {
        write_pgm(&dir.join(frame_file_name(i)), f)?;
    }
    let gt = dir.join(GROUND_TRUTH_FILE);
    if !clip.ground_truth.is_empty() {
        write_intervals(&gt, &clip.ground_truth)?;
    }
    Ok(())
}

/// Read a clip directory written by [`save_clip`] (or converted by hand).
pub fn load_clip(dir: &Path) -> Result<VideoClip> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(i) = name.to_str().and_then(frame_index) {
            indexed.push((i, entry.path()));
        }
    }
    if indexed.is_empty() {
        return Err(Error::format(dir, "no frame_NNNNNN.pgm files"));
    }
    indexed.sort();
    for (expected, (i, path)) in indexed.iter().enumerate() {
        if *i != expected {
            return Err(Error::format(
                path,
                format!("frame index {i} found where {expected} was expected (missing frame)"),
            ));
        }
    }
    let mut frames = Vec::with_capacity(indexed.len());
    let mut shape: Option<Vec<usize>> = None;
    for (_, path) in &indexed {
        let f = read_pgm(path)?;
        let s = f.shape().to_vec();
        if s[1] != s[2] {
            return Err(Error::format(path, format!("frame is {}x{}, expected square", s[2], s[1])));
        }
        match &shape {
            Some(expected) if *expected != s => {
                return Err(Error::format(
                    path,
                    format!("frame size {}x{} differs from {}x{}", s[2], s[1], expected[2], expected[1]),
                ))
            }
            None => shape = Some(s),
            _ => {}
        }
        frames.push(f);
    }
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    let ground_truth = if gt_path.exists() {
        read_intervals(&gt_path)?
    } else {
        Vec::new()
    };
    VideoClip::new(frames, ground_truth).map_err(|e| Error::format(&gt_path, e.to_string()))
}

/// A clip directory, or a directory whose subdirectories are clips (sorted by name).
pub fn load_clips(dir: &Path) -> Result<Vec<VideoClip>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut subdirs = Vec::new();
    let mut has_frames = false;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            subdirs.push(path);
        } else if entry.file_name().to_str().and_then(frame_index).is_some() {
            has_frames = true;
        }
    }
    if has_frames {
        return Ok(vec![load_clip(dir)?]);
    }
    if subdirs.is_empty() {
        return Err(Error::format(dir, "no frames and no clip subdirectories"));
    }
    subdirs.sort();
    subdirs.iter().map(|d| load_clip(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_clip(n: usize, side: usize, seed: u64) -> VideoClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..n)
            .map(|_| Tensor::from_fn([1, side, side], |_| rng.gen_range(0.0..=1.0)))
            .collect();
        VideoClip::new(frames, vec![]).unwrap()
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut clip = random_clip(4, 6, 1);
        clip.ground_truth = vec![Interval { start: 1, end: 2 }];
        save_clip(&clip, dir.path()).unwrap();
        let back = load_clip(dir.path()).unwrap();
        assert_eq!(back.ground_truth, clip.ground_truth);
        for (a, b) in back.frames.iter().zip(&clip.frames) {
            assert!(a.max_abs_diff(b) <= 1.0 / 255.0);
        }
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_clip(dir.path()).is_err());
    }

    #[test]
    fn annotation_fixture() {
        let dir = tempfile::tempdir().unwrap();
        save_clip(&random_clip(3, 4, 2), dir.path()).unwrap();
        fs::write(dir.path().join(GROUND_TRUTH_FILE), "0 0\n1 2\n").unwrap();
        let clip = load_clip(dir.path()).unwrap();
        assert_eq!(
            clip.ground_truth,
            vec![Interval { start: 0, end: 0 }, Interval { start: 1, end: 2 }]
        );
    }

    #[test]
    fn missing_and_mismatched_frames_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        save_clip(&random_clip(3, 4, 3), dir.path()).unwrap();
        fs::remove_file(dir.path().join(frame_file_name(1))).unwrap();
        let err = load_clip(dir.path()).unwrap_err().to_string();
        assert!(err.contains("frame_000002.pgm"), "{err}");

        let dir = tempfile::tempdir().unwrap();
        save_clip(&random_clip(2, 4, 4), dir.path()).unwrap();
        write_pgm(&dir.path().join(frame_file_name(2)), &Tensor::zeros([1, 5, 5])).unwrap();
        let err = load_clip(dir.path()).unwrap_err().to_string();
        assert!(err.contains("frame_000002.pgm"), "{err}");

        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(frame_file_name(0)), b"P6\n1 1\n255\n\0\0\0").unwrap();
        let err = load_clip(dir.path()).unwrap_err().to_string();
        assert!(err.contains("frame_000000.pgm"), "{err}");
    }

    #[test]
    fn window_bounds() {
        let clip = random_clip(10, 4, 5);
        let (a, b) = clip.window(0, 5, 5).unwrap();
        assert_eq!(a.shape(), &[5, 1, 4, 4]);
        assert_eq!(b.shape(), &[5, 1, 4, 4]);
        assert!(matches!(clip.window(1, 5, 5), Err(Error::Domain(_))));
    }

    #[test]
    fn load_clips_accepts_parent_directory() {
        let dir = tempfile::tempdir().unwrap();
        save_clip(&random_clip(2, 4, 6), &dir.path().join("b")).unwrap();
        save_clip(&random_clip(3, 4, 7), &dir.path().join("a")).unwrap();
        let clips = load_clips(dir.path()).unwrap();
        assert_eq!(clips.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![3, 2]);
        assert_eq!(load_clips(&dir.path().join("a")).unwrap().len(), 1);
    }
}
