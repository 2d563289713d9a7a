//! Session state on disk: generated images with provenance, and the curation board.
//!
//! Layout: `session.json`, `images/<id>.png`, `images/<id>.json`, `board.json`.
//! Every file is written to a temporary name and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Result, StudioError};

const SESSION_FILE: &str = "session.json";
const BOARD_FILE: &str = "board.json";
const IMAGE_DIR: &str = "images";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Sample,
    Colorize,
    Interpolate,
    Upload,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub origin: Origin,
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub truncation: Option<f64>,
    pub class: Option<usize>,
    /// Silhouette a colorized image was derived from.
    pub parent: Option<String>,
    /// Endpoints and position of an interpolated frame.
    pub between: Option<(String, String)>,
    pub t: Option<f64>,
    /// Generator input (after truncation); present for sampled and interpolated images.
    pub latent: Option<Vec<f32>>,
    /// Position within the request that produced the image.
    pub index: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardItem {
    pub id: String,
    #[serde(default)]
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct SessionMeta {
    id: String,
    created_unix: u64,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    session: SessionMeta,
    images: BTreeMap<String, Provenance>,
    board: Vec<BoardItem>,
    next: u64,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes).map_err(|e| StudioError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| StudioError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| StudioError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| StudioError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec_pretty(v).expect("plain data serializes")
}

fn id_number(id: &str) -> Option<u64> {
    id.strip_prefix("img")?.parse().ok()
}

impl Store {
    /// Open (or create) the session in `dir`, reloading images and the board.
    pub fn open(dir: &Path) -> Result<Self> {
        let images_dir = dir.join(IMAGE_DIR);
        fs::create_dir_all(&images_dir).map_err(|e| StudioError::io(&images_dir, e))?;
        let meta_path = dir.join(SESSION_FILE);
        let session = if meta_path.exists() {
            read_json(&meta_path)?
        } else {
            let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
            let meta = SessionMeta {
                id: format!("s{:x}", now.as_millis()),
                created_unix: now.as_secs(),
            };
            write_atomic(&meta_path, &to_json(&meta))?;
            meta
        };

        let mut images = BTreeMap::new();
        for entry in fs::read_dir(&images_dir).map_err(|e| StudioError::io(&images_dir, e))? {
            let path = entry.map_err(|e| StudioError::io(&images_dir, e))?.path();
            if path.extension().is_none_or(|x| x != "json") {
                continue;
            }
            let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            if !path.with_extension("png").exists() {
                log::warn!("dropping {id}: image file missing");
                continue;
            }
            images.insert(id, read_json::<Provenance>(&path)?);
        }
        let next = images.keys().filter_map(|k| id_number(k)).max().map_or(1, |n| n + 1);

        let board_path = dir.join(BOARD_FILE);
        let mut board: Vec<BoardItem> = if board_path.exists() { read_json(&board_path)? } else { Vec::new() };
        board.retain(|b| images.contains_key(&b.id));

        Ok(Store {
            dir: dir.to_path_buf(),
            session,
            images,
            board,
            next,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session.id
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.images.contains_key(id)
    }

    fn png_path(&self, id: &str) -> PathBuf {
        self.dir.join(IMAGE_DIR).join(format!("{id}.png"))
    }

    /// Store a batch of images; either all are stored or none.
    pub fn insert_all(&mut self, items: Vec<(Vec<u8>, Provenance)>) -> Result<Vec<String>> {
        let mut ids = Vec::with_capacity(items.len());
        let mut written = Vec::new();
        for (png, prov) in &items {
            let id = format!("img{:06}", self.next + ids.len() as u64);
            let png_path = self.png_path(&id);
            let json_path = png_path.with_extension("json");
            let res = write_atomic(&png_path, png).and_then(|_| write_atomic(&json_path, &to_json(prov)));
            written.push((png_path, json_path));
            if let Err(e) = res {
                for (a, b) in &written {
                    let _ = fs::remove_file(a);
                    let _ = fs::remove_file(b);
                }
                return Err(e);
            }
            ids.push(id);
        }
        self.next += ids.len() as u64;
        for (id, (_, prov)) in ids.iter().zip(items) {
            self.images.insert(id.clone(), prov);
        }
        Ok(ids)
    }

    pub fn provenance(&self, id: &str) -> Result<&Provenance> {
        self.images
            .get(id)
            .ok_or_else(|| StudioError::NotFound(format!("unknown image `{id}`")))
    }

    pub fn png(&self, id: &str) -> Result<Vec<u8>> {
        self.provenance(id)?;
        let path = self.png_path(id);
        fs::read(&path).map_err(|e| StudioError::io(path, e))
    }

    pub fn board(&self) -> &[BoardItem] {
        &self.board
    }

    /// Replace the board; unknown or repeated ids reject the whole update.
    pub fn set_board(&mut self, items: Vec<BoardItem>) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for item in &items {
            if !self.images.contains_key(&item.id) {
                return Err(StudioError::NotFound(format!("unknown image `{}`", item.id)));
            }
            if !seen.insert(item.id.as_str()) {
                return Err(StudioError::Invalid(format!("image `{}` listed twice", item.id)));
            }
        }
        write_atomic(&self.dir.join(BOARD_FILE), &to_json(&items))?;
        self.board = items;
        Ok(())
    }
}
