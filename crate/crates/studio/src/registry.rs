//! Read-only set of models loaded from a directory of checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgan_core::snapshots;
use sgan_core::zoo::{GanPair, Model, TranslatorPair, CLASS_NAMES};

use crate::error::{Result, StudioError};

pub const CHECKPOINT_EXT: &str = "sgck";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub arch: String,
    /// `gan` for stage one, `translator` for stage two.
    pub family: String,
    pub resolution: usize,
    pub conditional: bool,
    pub classes: Vec<String>,
    pub file: String,
}

#[derive(Debug)]
pub struct Entry {
    pub info: ModelInfo,
    pub path: PathBuf,
    pub model: Model<f32>,
}

#[derive(Debug, Default)]
pub struct Registry {
    entries: BTreeMap<String, Entry>,
}

impl Registry {
    /// Load every `*.sgck` file in `dir`; the file stem is the model id.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| StudioError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == CHECKPOINT_EXT))
            .collect();
        paths.sort();
        let mut reg = Registry::default();
        for path in paths {
            let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            match snapshots::load(&path) {
                Ok(snap) => reg.insert(id, path, snap.model),
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(reg)
    }

    pub fn insert(&mut self, id: String, path: PathBuf, model: Model<f32>) {
        let (family, resolution, conditional) = match &model {
            Model::Gan(p) => ("gan", p.options.resolution, p.options.conditional),
            Model::Translator(t) => ("translator", t.options.resolution, false),
        };
        let classes = if conditional {
            CLASS_NAMES.iter().take(model.classes()).map(|s| s.to_string()).collect()
        } else {
            Vec::new()
        };
        let info = ModelInfo {
            id: id.clone(),
            arch: model.arch().to_string(),
            family: family.to_string(),
            resolution,
            conditional,
            classes,
            file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        };
        self.entries.insert(id, Entry { info, path, model });
    }

    pub fn infos(&self) -> Vec<ModelInfo> {
        self.entries.values().map(|e| e.info.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<&Entry> {
        self.entries
            .get(id)
            .ok_or_else(|| StudioError::NotFound(format!("unknown model `{id}`")))
    }

    pub fn gan(&self, id: &str) -> Result<(&Entry, &GanPair<f32>)> {
        let e = self.get(id)?;
        match &e.model {
            Model::Gan(p) => Ok((e, p)),
            Model::Translator(_) => Err(StudioError::Invalid(format!("model `{id}` is a translator, not a generator"))),
        }
    }

    pub fn translator(&self, id: &str) -> Result<(&Entry, &TranslatorPair<f32>)> {
        let e = self.get(id)?;
        match &e.model {
            Model::Translator(t) => Ok((e, t)),
            Model::Gan(_) => Err(StudioError::Invalid(format!("model `{id}` is a generator, not a translator"))),
        }
    }
}
