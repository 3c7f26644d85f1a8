//! On-disk datasets of rendered scenes.
//!
//! Layout: `images/NNNNNN.png`, `labels/NNNNNN.png`, `scenes/NNNNNN.json`,
//! one `manifest.jsonl` line per example and a `config.json` recording the
//! generator and render settings.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{example_rng, sample_scene, GenConfig, GenConfigError};
use crate::image::{Image, ImageError, LabelMap};
use crate::render::{RenderConfig, RenderError, Rasterization};
use crate::scene::Scene;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("example {index}: {source}")]
    Render {
        index: u64,
        #[source]
        source: RenderError,
    },
    #[error(transparent)]
    Config(#[from] GenConfigError),
    #[error("manifest is empty")]
    EmptyManifest,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: u64,
    pub image: String,
    pub labels: String,
    pub scene: String,
    pub n_objects: usize,
    pub seed: u64,
}

/// Provenance written next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub generator: GenConfig,
    pub render: RenderConfig,
    pub count: u64,
}

/// One rendered ground-truth example.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetExample {
    pub image: Image,
    pub scene: Scene,
    pub labels: LabelMap,
}

/// Samples and renders example `index` of the dataset defined by `cfg`.
pub fn make_example(cfg: &GenConfig, render: &RenderConfig, index: u64) -> Result<DatasetExample, DatasetError> {
    let bank = cfg.bank();
    let scene = sample_scene(cfg, &mut example_rng(cfg.seed, index));
    let raster = Rasterization::new(&scene, &bank, render).map_err(|source| DatasetError::Render { index, source })?;
    Ok(DatasetExample {
        image: raster.image(),
        labels: raster.labels(),
        scene,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `count` examples under `out_dir` and returns the manifest.
/// Output bytes depend only on `(cfg, render, count)`.
pub fn generate_dataset(
    cfg: &GenConfig,
    render: &RenderConfig,
    count: u64,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>, DatasetError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    if count > 0 {
        for sub in ["images", "labels", "scenes"] {
            let d = out_dir.join(sub);
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
    }
    let entries = (0..count)
        .into_par_iter()
        .map(|index| {
            let ex = make_example(cfg, render, index)?;
            let entry = ManifestEntry {
                index,
                image: format!("images/{index:06}.png"),
                labels: format!("labels/{index:06}.png"),
                scene: format!("scenes/{index:06}.json"),
                n_objects: ex.scene.objects.len(),
                seed: cfg.seed,
            };
            ex.image.save_png(&out_dir.join(&entry.image))?;
            ex.labels.save_png(&out_dir.join(&entry.labels))?;
            write_json(&out_dir.join(&entry.scene), &ex.scene)?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let mut text = String::new();
    for e in &entries {
        text.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
        text.push('\n');
    }
    fs::File::create(&manifest_path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(io_err(&manifest_path))?;
    write_json(
        &out_dir.join(CONFIG_FILE),
        &DatasetConfig {
            generator: cfg.clone(),
            render: *render,
            count,
        },
    )?;
    Ok(entries)
}

/// A dataset directory and its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Dataset {
    /// Opens a dataset given its directory or its manifest file.
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let (root, manifest) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
        };
        let file = fs::File::open(&manifest).map_err(io_err(&manifest))?;
        let mut entries = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(io_err(&manifest))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|source| DatasetError::Json {
                path: manifest.clone(),
                source,
            })?);
        }
        Ok(Self { root, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn config(&self) -> Result<DatasetConfig, DatasetError> {
        read_json(&self.root.join(CONFIG_FILE))
    }

    pub fn scene(&self, i: usize) -> Result<Scene, DatasetError> {
        read_json(&self.root.join(&self.entries[i].scene))
    }

    pub fn image(&self, i: usize) -> Result<Image, DatasetError> {
        Ok(Image::load_png(&self.root.join(&self.entries[i].image))?)
    }

    pub fn labels(&self, i: usize) -> Result<LabelMap, DatasetError> {
        Ok(LabelMap::load_png(&self.root.join(&self.entries[i].labels))?)
    }

    pub fn example(&self, i: usize) -> Result<DatasetExample, DatasetError> {
        Ok(DatasetExample {
            image: self.image(i)?,
            scene: self.scene(i)?,
            labels: self.labels(i)?,
        })
    }
}

/// Index of a uniformly chosen manifest entry.
pub fn sample_index(entries: &[ManifestEntry], rng: &mut impl Rng) -> Result<usize, DatasetError> {
    if entries.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    Ok(rng.gen_range(0..entries.len()))
}

/// Ground-truth scene of a uniformly chosen example.
pub fn sample_params_from_dataset(dataset: &Dataset, rng: &mut impl Rng) -> Result<Scene, DatasetError> {
    let i = sample_index(&dataset.entries, rng)?;
    dataset.scene(i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_count_writes_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let entries = generate_dataset(&GenConfig::default(), &RenderConfig::default(), 0, dir.path()).unwrap();
        assert!(entries.is_empty());
        assert!(!dir.path().join("images").exists());
        let ds = Dataset::open(dir.path()).unwrap();
        assert!(ds.is_empty());
        let mut rng = example_rng(0, 0);
        assert!(matches!(sample_params_from_dataset(&ds, &mut rng), Err(DatasetError::EmptyManifest)));
    }

    #[test]
    fn small_dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig {
            width: 32,
            height: 32,
            seed: 5,
            ..GenConfig::default()
        };
        let render = RenderConfig::default();
        let entries = generate_dataset(&cfg, &render, 3, dir.path()).unwrap();
        let ds = Dataset::open(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(ds.entries, entries);
        let bank = cfg.bank();
        for i in 0..3 {
            let ex = ds.example(i).unwrap();
            let again = crate::render::render(&ex.scene, &bank, &render).unwrap().quantized();
            assert_eq!(again, ex.image);
            assert_eq!(crate::render::render_labels(&ex.scene, &bank, &render).unwrap(), ex.labels);
        }
        assert_eq!(ds.config().unwrap().generator, cfg);
    }
}
