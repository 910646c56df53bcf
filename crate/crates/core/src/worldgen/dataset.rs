//! Posed-image datasets on disk.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.json
//! images/o0000_a000_v00.ppm        RGB, binary P6
//! segmentation/o0000_a000_v00.pgm  class ids, binary P5
//! cameras/o0000_a000_v00.json      {"extrinsic": 3x4, "intrinsic": 3x3, "width", "height"}
//! keypoints/o0000_a000.json        {"category", "points": {name: [x, y, z]}}
//! ```

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{norm, Camera, Vec3};
use crate::error::{Error, Result};
use crate::exec;
use crate::worldgen::imageio;
use crate::worldgen::raycast::{raycast_render, Lighting, PosedView};
use crate::worldgen::scene::{keypoints_analytic, sample_scene, Category, KeypointSet, SceneModel};

pub const MANIFEST_VERSION: u32 = 1;

/// Camera azimuth is uniform in the front hemisphere (facing -y).
pub const AZIMUTH_RANGE_DEG: (f64, f64) = (-90.0, 90.0);
pub const ELEVATION_RANGE_DEG: (f64, f64) = (10.0, 45.0);
/// Camera distance as a multiple of the scene diagonal.
pub const RADIUS_RANGE: (f64, f64) = (1.5, 2.5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub category: Category,
    pub n_obj: usize,
    pub n_art: usize,
    pub n_view: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub fov_deg: f64,
    /// Max per-instance rotation of the light direction, degrees. Zero keeps one fixed light.
    pub light_jitter_deg: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            category: Category::Closet,
            n_obj: 20,
            n_art: 10,
            n_view: 8,
            height: 32,
            width: 32,
            seed: 0,
            fov_deg: 45.0,
            light_jitter_deg: 0.0,
        }
    }
}

impl DataConfig {
    pub fn instance_count(&self) -> usize {
        self.n_obj * self.n_art
    }

    pub fn view_count(&self) -> usize {
        self.n_obj * self.n_art * self.n_view
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obj == 0 || self.n_art == 0 || self.n_view == 0 {
            return Err(Error::InvalidArgument("dataset counts must be positive".into()));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::InvalidArgument("images must be at least 8x8".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::InvalidArgument("fov_deg must be in (0, 180)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub image: String,
    pub segmentation: String,
    pub camera: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub object: usize,
    pub articulation: usize,
    pub q: f64,
    pub keypoints: KeypointSet,
    pub keypoints_path: String,
    pub views: Vec<ViewRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: DataConfig,
    /// Oracle scene models, indexed by object.
    pub objects: Vec<SceneModel>,
    pub instances: Vec<InstanceRecord>,
}

/// A view loaded from disk.
#[derive(Debug, Clone)]
pub struct LoadedView {
    pub camera: Camera,
    pub rgb: Vec<f64>,
    pub seg: Vec<u8>,
}

/// Stateless 64-bit mixer used to derive per-item seeds.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const OBJECT_STREAM: u64 = 1;
const ART_STREAM: u64 = 2;
const VIEW_STREAM: u64 = 3;

pub fn object_seed(seed: u64, obj: usize) -> u64 {
    derive_seed(&[seed, OBJECT_STREAM, obj as u64])
}

/// A camera on the front view sphere looking at the body center.
pub fn sample_camera(rng: &mut impl Rng, model: &SceneModel, cfg: &DataConfig) -> Result<Camera> {
    let az = rng.random_range(AZIMUTH_RANGE_DEG.0..=AZIMUTH_RANGE_DEG.1).to_radians();
    let el = rng.random_range(ELEVATION_RANGE_DEG.0..=ELEVATION_RANGE_DEG.1).to_radians();
    let r = rng.random_range(RADIUS_RANGE.0..=RADIUS_RANGE.1) * model.diagonal();
    let c = model.body_center;
    let eye = [
        c[0] + r * el.cos() * az.sin(),
        c[1] - r * el.cos() * az.cos(),
        c[2] + r * el.sin(),
    ];
    Camera::look_at(eye, c, cfg.fov_deg, cfg.width, cfg.height)
}

fn jittered_light(rng: &mut impl Rng, jitter_deg: f64) -> Lighting {
    let base = Lighting::default();
    if jitter_deg <= 0.0 {
        return base;
    }
    let yaw = rng.random_range(-jitter_deg..=jitter_deg).to_radians();
    let pitch = rng.random_range(-jitter_deg..=jitter_deg).to_radians();
    let d = base.direction;
    let (sy, cy) = yaw.sin_cos();
    let d = [cy * d[0] - sy * d[1], sy * d[0] + cy * d[1], d[2]];
    let horiz = (d[0] * d[0] + d[1] * d[1]).sqrt();
    let elev = d[2].atan2(horiz) + pitch;
    let elev = elev.clamp(-PI / 2.0 + 0.05, PI / 2.0 - 0.05);
    let scale = elev.cos() / horiz.max(1e-12);
    let dir: Vec3 = [d[0] * scale, d[1] * scale, elev.sin()];
    let n = norm(dir);
    Lighting {
        direction: [dir[0] / n, dir[1] / n, dir[2] / n],
        ambient: base.ambient,
    }
}

/// File stem of instance `(obj, art)`, shared by every per-instance output.
pub fn stem(obj: usize, art: usize) -> String {
    format!("o{obj:04}_a{art:03}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// One articulated instance rendered from all of its cameras.
#[derive(Debug, Clone)]
pub struct RenderedInstance {
    pub object: usize,
    pub articulation: usize,
    pub q: f64,
    pub keypoints: KeypointSet,
    pub views: Vec<PosedView>,
}

/// Articulation, keypoints and views of instance `(obj, art)`; identical to what
/// [`generate_dataset`] writes before 8-bit quantization.
pub fn render_instance(config: &DataConfig, model: &SceneModel, obj: usize, art: usize) -> Result<RenderedInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, ART_STREAM, obj as u64, art as u64]));
    let q: f64 = rng.random_range(0.0..=1.0);
    let keypoints = keypoints_analytic(model, q)?;
    let views = (0..config.n_view)
        .map(|v| {
            let mut vrng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                config.seed,
                VIEW_STREAM,
                obj as u64,
                art as u64,
                v as u64,
            ]));
            let camera = sample_camera(&mut vrng, model, config)?;
            let light = jittered_light(&mut vrng, config.light_jitter_deg);
            raycast_render(model, q, &camera, &light)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RenderedInstance {
        object: obj,
        articulation: art,
        q,
        keypoints,
        views,
    })
}

/// Scene models for every object of `config`.
pub fn sample_objects(config: &DataConfig) -> Vec<SceneModel> {
    (0..config.n_obj)
        .map(|o| sample_scene(object_seed(config.seed, o), config.category))
        .collect()
}

/// Renders a whole dataset in memory, instances in (object, articulation) order.
pub fn render_dataset(config: &DataConfig) -> Result<(Vec<SceneModel>, Vec<RenderedInstance>)> {
    config.validate()?;
    let objects = sample_objects(config);
    let pairs: Vec<(usize, usize)> = (0..config.n_obj)
        .flat_map(|o| (0..config.n_art).map(move |a| (o, a)))
        .collect();
    let instances = exec::try_map_indexed(&pairs, |_, &(o, a)| render_instance(config, &objects[o], o, a))?;
    Ok((objects, instances))
}

/// Renders and writes a dataset. Every file depends only on `config`.
pub fn generate_dataset(config: &DataConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    for sub in ["images", "segmentation", "cameras", "keypoints"] {
        let p = out_dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let objects = sample_objects(config);
    let pairs: Vec<(usize, usize)> = (0..config.n_obj)
        .flat_map(|o| (0..config.n_art).map(move |a| (o, a)))
        .collect();
    let instances = exec::try_map_indexed(&pairs, |_, &(obj, art)| -> Result<InstanceRecord> {
        let rendered = render_instance(config, &objects[obj], obj, art)?;
        let stem = stem(obj, art);
        let keypoints_path = format!("keypoints/{stem}.json");
        write_json(&out_dir.join(&keypoints_path), &rendered.keypoints)?;
        let mut views = Vec::with_capacity(config.n_view);
        for (v, view) in rendered.views.iter().enumerate() {
            let rec = ViewRecord {
                image: format!("images/{stem}_v{v:02}.ppm"),
                segmentation: format!("segmentation/{stem}_v{v:02}.pgm"),
                camera: format!("cameras/{stem}_v{v:02}.json"),
            };
            imageio::write_ppm(&out_dir.join(&rec.image), config.width, config.height, &view.image)?;
            imageio::write_pgm(&out_dir.join(&rec.segmentation), config.width, config.height, &view.seg)?;
            write_json(&out_dir.join(&rec.camera), &view.camera)?;
            views.push(rec);
        }
        Ok(InstanceRecord {
            object: obj,
            articulation: art,
            q: rendered.q,
            keypoints: rendered.keypoints,
            keypoints_path,
            views,
        })
    })?;

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        config: config.clone(),
        objects,
        instances,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

impl DatasetManifest {
    /// Reads a manifest and checks that counts match and every referenced file exists.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let manifest: DatasetManifest = read_json(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.verify(&root)?;
        Ok((manifest, root))
    }

    pub fn verify(&self, root: &Path) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(Error::InvalidArgument(format!(
                "manifest format {} is not supported (expected {MANIFEST_VERSION})",
                self.format_version
            )));
        }
        let c = &self.config;
        if self.objects.len() != c.n_obj || self.instances.len() != c.instance_count() {
            return Err(Error::InvalidArgument("manifest counts do not match its config".into()));
        }
        let views: usize = self.instances.iter().map(|i| i.views.len()).sum();
        if views != c.view_count() {
            return Err(Error::InvalidArgument(format!(
                "manifest lists {views} views, expected {}",
                c.view_count()
            )));
        }
        for inst in &self.instances {
            for v in &inst.views {
                for rel in [&v.image, &v.segmentation, &v.camera] {
                    let p = root.join(rel);
                    if !p.is_file() {
                        return Err(Error::io(
                            p,
                            std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file missing"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn instance(&self, object: usize, articulation: usize) -> Option<&InstanceRecord> {
        self.instances
            .iter()
            .find(|i| i.object == object && i.articulation == articulation)
    }
}

pub fn load_view(root: &Path, rec: &ViewRecord) -> Result<LoadedView> {
    let camera: Camera = read_json(&root.join(&rec.camera))?;
    camera.validate()?;
    let (w, h, rgb) = imageio::read_ppm(&root.join(&rec.image))?;
    let (sw, sh, seg) = imageio::read_pgm(&root.join(&rec.segmentation))?;
    if (w, h) != (camera.width, camera.height) || (sw, sh) != (w, h) {
        return Err(Error::Dimension(format!(
            "view {} size {w}x{h} disagrees with its camera or segmentation",
            rec.image
        )));
    }
    Ok(LoadedView { camera, rgb, seg })
}
