//! Auto-decoder: joint fitting of per-object codes and network weights, frozen-weight
//! latent inference for new observations, and checkpoints.

pub mod checkpoint;
pub mod infer;
pub mod loss;
pub mod train;

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::exec;
use crate::worldgen::dataset::{load_view, render_dataset, DataConfig, DatasetManifest, RenderedInstance};
use crate::worldgen::imageio::quantize;
use crate::worldgen::scene::{Category, KeypointSet, SceneModel};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use infer::{infer_latent, InferConfig, InferResult};
pub use loss::{Lambdas, LossBreakdown};
pub use train::{train, TrainConfig, TrainOutput};

/// One observed image with its camera and (for training) segmentation.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub camera: Camera,
    /// `H * W * 3` in `[0, 1]`.
    pub rgb: Vec<f64>,
    /// `H * W` class ids; empty when unavailable.
    pub seg: Vec<u8>,
}

impl TrainView {
    pub fn pixel_count(&self) -> usize {
        self.camera.width * self.camera.height
    }

    /// `count` distinct pixels in scanline order; every pixel when `count` is 0 or too large.
    pub fn sample_pixels(&self, rng: &mut impl Rng, count: usize) -> Vec<(usize, usize)> {
        let n = self.pixel_count();
        let w = self.camera.width;
        let mut idx: Vec<usize> = if count == 0 || count >= n {
            (0..n).collect()
        } else {
            sample(rng, n, count).into_vec()
        };
        idx.sort_unstable();
        idx.into_iter().map(|i| (i % w, i / w)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainInstance {
    pub object: usize,
    pub articulation: usize,
    pub q: f64,
    pub keypoints: KeypointSet,
    pub views: Vec<TrainView>,
}

/// In-memory training data with ground truth.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub category: Category,
    pub n_obj: usize,
    pub objects: Vec<SceneModel>,
    pub instances: Vec<TrainInstance>,
}

fn quantized(rgb: &[f64]) -> Vec<f64> {
    rgb.iter().map(|&v| quantize(v) as f64 / 255.0).collect()
}

impl TrainInstance {
    /// Converts a freshly rendered instance, quantizing colors like the on-disk PPMs.
    pub fn from_rendered(r: &RenderedInstance) -> Self {
        Self {
            object: r.object,
            articulation: r.articulation,
            q: r.q,
            keypoints: r.keypoints.clone(),
            views: r
                .views
                .iter()
                .map(|v| TrainView {
                    camera: v.camera.clone(),
                    rgb: quantized(&v.image),
                    seg: v.seg.clone(),
                })
                .collect(),
        }
    }
}

impl TrainingSet {
    /// Renders `config` in memory. Pixel values match a dataset written to disk.
    pub fn render(config: &DataConfig) -> Result<Self> {
        let (objects, rendered) = render_dataset(config)?;
        Ok(Self {
            category: config.category,
            n_obj: config.n_obj,
            objects,
            instances: rendered.iter().map(TrainInstance::from_rendered).collect(),
        })
    }

    /// Loads every view referenced by a manifest.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let (manifest, root) = DatasetManifest::load(manifest_path)?;
        let instances = exec::try_map_indexed(&manifest.instances, |_, rec| -> Result<TrainInstance> {
            let views = rec
                .views
                .iter()
                .map(|v| {
                    let lv = load_view(&root, v)?;
                    Ok(TrainView {
                        camera: lv.camera,
                        rgb: lv.rgb,
                        seg: lv.seg,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TrainInstance {
                object: rec.object,
                articulation: rec.articulation,
                q: rec.q,
                keypoints: rec.keypoints.clone(),
                views,
            })
        })?;
        Ok(Self {
            category: manifest.config.category,
            n_obj: manifest.config.n_obj,
            objects: manifest.objects,
            instances,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances.is_empty() {
            return Err(Error::InvalidArgument("training set has no instances".into()));
        }
        for inst in &self.instances {
            if inst.object >= self.n_obj {
                return Err(Error::InvalidArgument(format!(
                    "instance refers to object {} of {}",
                    inst.object, self.n_obj
                )));
            }
            if inst.views.is_empty() {
                return Err(Error::MissingGroundTruth(format!(
                    "instance ({}, {}) has no views",
                    inst.object, inst.articulation
                )));
            }
            for v in &inst.views {
                if v.rgb.len() != 3 * v.pixel_count() {
                    return Err(Error::Dimension("view image does not match its camera size".into()));
                }
            }
        }
        Ok(())
    }
}
