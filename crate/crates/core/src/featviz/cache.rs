use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{visualize_feature, FeatureImage, VizParams, VizTarget};
use crate::error::{IoContext, Result};
use crate::model::TrainedModel;

pub type VizKey = VizTarget;

/// Read access to channel visualizations (channel-mean objective).
pub trait VizLookup {
    fn lookup(&self, layer: &str, channel: usize) -> Option<Arc<FeatureImage>>;
}

type Slot = Arc<Mutex<Option<Arc<FeatureImage>>>>;

/// Visualizations keyed by target, optionally persisted as
/// `<dir>/<layer>_c<channel>.png` plus a JSON sidecar.
///
/// Computation is serialized per key: concurrent requests for the same
/// target wait for one computation, different targets proceed in parallel.
pub struct VizCache {
    dir: Option<PathBuf>,
    params: VizParams,
    slots: Mutex<HashMap<VizKey, Slot>>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    layer: String,
    channel: usize,
    position: Option<(usize, usize)>,
    objective_initial: f64,
    objective_final: f64,
    dead: bool,
    params: VizParams,
}

impl VizCache {
    pub fn in_memory(params: VizParams) -> Self {
        Self {
            dir: None,
            params,
            slots: Mutex::new(HashMap::new()),
        }
    }

    pub fn on_disk(dir: &Path, params: VizParams) -> Result<Self> {
        std::fs::create_dir_all(dir).at(dir)?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            params,
            slots: Mutex::new(HashMap::new()),
        })
    }

    pub fn params(&self) -> &VizParams {
        &self.params
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// File stem for a target, e.g. `4M_c9` or `4M_c9_r6_5`.
    pub fn file_stem(key: &VizKey) -> String {
        let layer: String = key
            .layer
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
            .collect();
        match key.position {
            None => format!("{layer}_c{}", key.channel),
            Some((r, c)) => format!("{layer}_c{}_r{r}_{c}", key.channel),
        }
    }

    pub fn png_name(key: &VizKey) -> String {
        format!("{}.png", Self::file_stem(key))
    }

    fn slot(&self, key: &VizKey) -> Slot {
        let mut slots = self.slots.lock().expect("cache lock");
        slots.entry(key.clone()).or_default().clone()
    }

    pub fn insert(&self, image: FeatureImage) -> Result<Arc<FeatureImage>> {
        let key = VizKey {
            layer: image.layer.clone(),
            channel: image.channel,
            position: image.position,
        };
        let image = Arc::new(image);
        self.persist(&key, &image)?;
        *self.slot(&key).lock().expect("slot lock") = Some(image.clone());
        Ok(image)
    }

    /// Cached image for `key`, from memory or from disk, without computing.
    pub fn get(&self, key: &VizKey) -> Option<Arc<FeatureImage>> {
        let slot = self.slot(key);
        let mut guard = slot.lock().expect("slot lock");
        if guard.is_none() {
            *guard = self.load(key).map(Arc::new);
        }
        guard.clone()
    }

    pub fn get_or_compute(&self, model: &TrainedModel, key: &VizKey) -> Result<Arc<FeatureImage>> {
        let slot = self.slot(key);
        let mut guard = slot.lock().expect("slot lock");
        if let Some(img) = guard.as_ref() {
            return Ok(img.clone());
        }
        if let Some(img) = self.load(key) {
            let img = Arc::new(img);
            *guard = Some(img.clone());
            return Ok(img);
        }
        let img = Arc::new(visualize_feature(model, key, &self.params)?);
        self.persist(key, &img)?;
        *guard = Some(img.clone());
        Ok(img)
    }

    /// PNG bytes of a cached visualization.
    pub fn png_bytes(&self, key: &VizKey) -> Result<Option<Vec<u8>>> {
        if let Some(dir) = &self.dir {
            let path = dir.join(Self::png_name(key));
            if path.exists() && self.get(key).is_some() {
                return Ok(Some(std::fs::read(&path).at(&path)?));
            }
        }
        match self.get(key) {
            None => Ok(None),
            Some(img) => {
                let mut out = std::io::Cursor::new(Vec::new());
                img.to_rgb8().write_to(&mut out, image::ImageFormat::Png)?;
                Ok(Some(out.into_inner()))
            }
        }
    }

    fn persist(&self, key: &VizKey, img: &FeatureImage) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let stem = Self::file_stem(key);
        img.to_rgb8().save(dir.join(format!("{stem}.png")))?;
        let sidecar = Sidecar {
            layer: img.layer.clone(),
            channel: img.channel,
            position: img.position,
            objective_initial: img.objective_initial,
            objective_final: img.objective_final,
            dead: img.dead,
            params: self.params.clone(),
        };
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&sidecar)?).at(&path)
    }

    fn load(&self, key: &VizKey) -> Option<FeatureImage> {
        let dir = self.dir.as_ref()?;
        let stem = Self::file_stem(key);
        let text = std::fs::read_to_string(dir.join(format!("{stem}.json"))).ok()?;
        let sc: Sidecar = serde_json::from_str(&text).ok()?;
        if sc.params != self.params || sc.layer != key.layer || sc.channel != key.channel || sc.position != key.position {
            return None;
        }
        let png = image::open(dir.join(format!("{stem}.png"))).ok()?.to_rgb8();
        let (w, h) = png.dimensions();
        let pixels = png.pixels().flat_map(|p| p.0.map(|v| v as f64 / 255.0)).collect();
        Some(FeatureImage {
            height: h as usize,
            width: w as usize,
            pixels,
            layer: sc.layer,
            channel: sc.channel,
            position: sc.position,
            objective_initial: sc.objective_initial,
            objective_final: sc.objective_final,
            dead: sc.dead,
        })
    }
}

impl VizLookup for VizCache {
    fn lookup(&self, layer: &str, channel: usize) -> Option<Arc<FeatureImage>> {
        self.get(&VizKey::channel(layer, channel))
    }
}
