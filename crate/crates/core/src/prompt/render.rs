use std::path::PathBuf;

use image::{Rgb, RgbImage};

use crate::data::{SkeletonLayout, SkeletonSequence};
use crate::error::{Error, Result};

pub const BACKGROUND: Rgb<u8> = Rgb([96, 96, 96]);

/// A source of RGB frames for one sample.
pub trait VideoSource: Send + Sync {
    fn frame_count(&self) -> usize;
    fn frame(&self, index: usize) -> Result<RgbImage>;
}

/// Frames stored as numbered PNG files in a directory (`000000.png`, ...).
pub struct FrameDir {
    pub files: Vec<PathBuf>,
}

impl FrameDir {
    pub fn open(dir: &std::path::Path) -> Result<Self> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "png" || e == "jpg"))
            .collect();
        files.sort();
        Ok(FrameDir { files })
    }
}

impl VideoSource for FrameDir {
    fn frame_count(&self) -> usize {
        self.files.len()
    }

    fn frame(&self, index: usize) -> Result<RgbImage> {
        let path = self
            .files
            .get(index)
            .ok_or_else(|| Error::NotFound(format!("frame {index}")))?;
        Ok(image::open(path)?.to_rgb8())
    }
}

/// Renders a skeleton sequence as stick-figure frames on a flat background.
///
/// The figure colour is taken from `hue_degrees`; coordinates are mapped with a
/// fixed world-to-pixel transform so that crops follow the figure.
pub struct SkeletonRenderer<'a> {
    pub seq: &'a SkeletonSequence,
    pub layout: &'a SkeletonLayout,
    pub hue_degrees: f64,
    pub size: u32,
    /// World half-extent in metres mapped onto the frame.
    pub extent: f32,
}

impl<'a> SkeletonRenderer<'a> {
    pub fn new(seq: &'a SkeletonSequence, layout: &'a SkeletonLayout, hue_degrees: f64) -> Self {
        SkeletonRenderer {
            seq,
            layout,
            hue_degrees,
            size: 64,
            extent: 1.5,
        }
    }

    fn to_pixel(&self, x: f32, y: f32) -> (i64, i64) {
        let s = self.size as f32;
        let px = (x / self.extent + 1.0) * 0.5 * (s - 1.0);
        let py = (1.0 - (y / self.extent + 1.0) * 0.5) * (s - 1.0);
        (px.round() as i64, py.round() as i64)
    }
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb<u8> {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    Rgb([r, g, b].map(|u| ((u + m) * 255.0).round() as u8))
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), color: Rgb<u8>) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1);
    for k in 0..=steps {
        let x = a.0 + (b.0 - a.0) * k / steps;
        let y = a.1 + (b.1 - a.1) * k / steps;
        put(img, x, y, color);
    }
}

impl VideoSource for SkeletonRenderer<'_> {
    fn frame_count(&self) -> usize {
        self.seq.frames()
    }

    fn frame(&self, index: usize) -> Result<RgbImage> {
        if index >= self.seq.frames() {
            return Err(Error::NotFound(format!("frame {index}")));
        }
        let mut img = RgbImage::from_pixel(self.size, self.size, BACKGROUND);
        let color = hsv_to_rgb(self.hue_degrees, 0.9, 0.95);
        let parents = self.layout.parents();
        for body in 0..self.seq.bodies() {
            let pose = self.seq.data.slice(ndarray::s![index, .., .., body]);
            if pose.iter().all(|&v| v == 0.0) {
                continue;
            }
            let pts: Vec<(i64, i64)> = (0..self.seq.joints())
                .map(|j| self.to_pixel(pose[[j, 0]], pose[[j, 1]]))
                .collect();
            for (j, &p) in parents.iter().enumerate().take(pts.len()) {
                if p != j && p < pts.len() {
                    line(&mut img, pts[j], pts[p], color);
                }
            }
            for &(x, y) in &pts {
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        put(&mut img, x + dx, y + dy, color);
                    }
                }
            }
        }
        Ok(img)
    }
}
