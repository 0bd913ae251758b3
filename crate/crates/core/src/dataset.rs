//! Rendered frame sequences and their on-disk layout:
//!
//! ```text
//! DIR/manifest.json          {"scene","trajectory","width","height","fov"}
//! DIR/scene.json
//! DIR/trajectory.jsonl
//! DIR/frames/frame_000000.png   8-bit RGB
//! DIR/labels/label_000000.png   16-bit gray, category id + 1 (0 = background)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairing::FrameMeta;
use crate::render::{CategoryMap, Image, RenderConfig};
use crate::scene::Scene;
use crate::trajectory::{MotionParams, Pose, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pose: Pose,
    pub light: u32,
    pub image: Image,
    pub labels: CategoryMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub render: RenderConfig,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scene: String,
    pub trajectory: String,
    pub width: usize,
    pub height: usize,
    pub fov: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Navigational record of every frame, instance id = frame index.
    pub fn metas(&self) -> Vec<FrameMeta> {
        self.frames
            .iter()
            .enumerate()
            .map(|(instance, f)| FrameMeta {
                instance,
                pose: f.pose.clone(),
            })
            .collect()
    }

    pub fn save(&self, dir: &Path, scene: &Scene, trajectory: &Trajectory) -> Result<()> {
        fs::create_dir_all(dir.join("frames"))?;
        fs::create_dir_all(dir.join("labels"))?;
        fs::write(dir.join("scene.json"), scene.to_json()?)?;
        fs::write(dir.join("trajectory.jsonl"), trajectory.to_jsonl()?)?;
        let manifest = Manifest {
            scene: "scene.json".into(),
            trajectory: "trajectory.jsonl".into(),
            width: self.render.width,
            height: self.render.height,
            fov: self.render.fov_deg,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        for (i, f) in self.frames.iter().enumerate() {
            write_png_rgb(&dir.join(frame_path(i)), &f.image)?;
            write_png_labels(&dir.join(label_path(i)), &f.labels)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, motion: &MotionParams) -> Result<(Dataset, Scene, Trajectory)> {
        let manifest_path = dir.join("manifest.json");
        let manifest: Manifest = serde_json::from_str(&read_text(&manifest_path)?)?;
        let scene = Scene::from_json(&read_text(&dir.join(&manifest.scene))?)?;
        let trajectory = Trajectory::from_jsonl(&read_text(&dir.join(&manifest.trajectory))?, motion)?;
        if trajectory.scene_seed != scene.seed {
            return Err(Error::SeedMismatch {
                trajectory: trajectory.scene_seed,
                scene: scene.seed,
            });
        }
        let render = RenderConfig {
            width: manifest.width,
            height: manifest.height,
            fov_deg: manifest.fov,
        };
        let mut frames = Vec::with_capacity(trajectory.len());
        for (i, (pose, &light)) in trajectory
            .poses
            .iter()
            .zip(&trajectory.lighting_schedule)
            .enumerate()
        {
            let image = read_png_rgb(&dir.join(frame_path(i)))?;
            let labels = read_png_labels(&dir.join(label_path(i)))?;
            if (image.width, image.height) != (render.width, render.height)
                || (labels.width, labels.height) != (render.width, render.height)
            {
                return Err(Error::Format {
                    what: "dataset".into(),
                    detail: format!("frame {i} does not match the manifest size"),
                });
            }
            frames.push(Frame {
                pose: pose.clone(),
                light,
                image,
                labels,
            });
        }
        Ok((Dataset { render, frames }, scene, trajectory))
    }
}

pub fn frame_path(i: usize) -> PathBuf {
    PathBuf::from(format!("frames/frame_{i:06}.png"))
}

pub fn label_path(i: usize) -> PathBuf {
    PathBuf::from(format!("labels/label_{i:06}.png"))
}

pub fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let buf: ImageBuffer<Rgb<u8>, _> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
            .expect("pixel buffer matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_png_rgb(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_png(img)?)?;
    Ok(())
}

pub fn read_png_rgb(path: &Path) -> Result<Image> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let rgb = image::open(path)?.into_rgb8();
    Ok(Image {
        width: rgb.width() as usize,
        height: rgb.height() as usize,
        pixels: rgb.into_raw(),
    })
}

pub fn write_png_labels(path: &Path, map: &CategoryMap) -> Result<()> {
    let data: Vec<u16> = map.ids.iter().map(|&id| (id + 1) as u16).collect();
    let buf: ImageBuffer<Luma<u16>, _> =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, data)
            .expect("label buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_png_labels(path: &Path) -> Result<CategoryMap> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let gray = image::open(path)?.into_luma16();
    Ok(CategoryMap {
        width: gray.width() as usize,
        height: gray.height() as usize,
        ids: gray.into_raw().into_iter().map(|v| v as i32 - 1).collect(),
    })
}
