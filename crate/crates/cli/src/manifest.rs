//! Run manifests and config-hash stamping.
//!
//! Each subcommand leaves `manifest.json` and the resolved `config.toml` in
//! its stage directory. Every output file is stamped with the config hash in
//! a form that suits its format:
//!
//! | format | stamp |
//! |--------|-------|
//! | `.json` | top-level `"config_hash"` key |
//! | `.jsonl` | `"config_hash"` key on the first record |
//! | `.csv` | leading `# config_hash=...` comment line |
//! | `.txt` | trailing `config_hash: ...` line |
//! | `.png` | `config_hash` tEXt chunk |

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PNG_HASH_KEY: &str = "config_hash";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the run's output root when the file lives under it.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub finished_at: DateTime<Utc>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects inputs and outputs while a subcommand runs.
pub struct Recorder {
    command: String,
    config: RunConfig,
    hash: String,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
}

impl Recorder {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Recorder {
            command: command.to_string(),
            hash: config.hash(),
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn record(&self, path: &Path) -> Result<FileRecord, CliError> {
        let shown = path.strip_prefix(&self.config.out).unwrap_or(path);
        Ok(FileRecord {
            path: shown.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let r = self.record(path)?;
        self.inputs.push(r);
        Ok(())
    }

    /// Stamp an output with the config hash, then record it.
    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        stamp(path, &self.hash)?;
        let r = self.record(path)?;
        self.outputs.push(r);
        Ok(())
    }

    /// Write `config.toml` and `manifest.json` into `dir`.
    pub fn finish(self, dir: &Path) -> Result<Manifest, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let config_path = dir.join("config.toml");
        fs::write(&config_path, self.config.to_toml()?).map_err(|e| CliError::io(&config_path, e))?;
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.hash,
            seed: self.config.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            finished_at: Utc::now(),
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

pub fn stamp(path: &Path, hash: &str) -> Result<(), CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "json" => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let stamped = stamp_json_text(&text, hash)?;
            fs::write(path, stamped).map_err(|e| CliError::io(path, e))
        }
        "jsonl" => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
            let mut out = stamp_json_text(first, hash)?;
            out.push('\n');
            out.push_str(rest);
            fs::write(path, out).map_err(|e| CliError::io(path, e))
        }
        "csv" => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let body = text.strip_prefix('#').map(|t| t.split_once('\n').map_or("", |(_, b)| b)).unwrap_or(&text);
            fs::write(path, format!("# config_hash={hash}\n{body}")).map_err(|e| CliError::io(path, e))
        }
        "txt" => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let body: String = text
                .lines()
                .filter(|l| !l.starts_with("config_hash: "))
                .map(|l| format!("{l}\n"))
                .collect();
            fs::write(path, format!("{body}config_hash: {hash}\n")).map_err(|e| CliError::io(path, e))
        }
        "png" => stamp_png(path, hash),
        _ => Err(CliError::new("internal", format!("no stamping rule for {}", path.display()))),
    }
}

fn stamp_json_text(text: &str, hash: &str) -> Result<String, CliError> {
    let mut v: Value = serde_json::from_str(text)?;
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert("config_hash".into(), Value::String(hash.to_string()));
        }
        None => return Err(CliError::new("internal", "only JSON objects can carry a config hash")),
    }
    Ok(serde_json::to_string(&v)?)
}

/// Re-encode an 8-bit PNG with a `config_hash` text chunk. Pixels are
/// untouched.
fn stamp_png(path: &Path, hash: &str) -> Result<(), CliError> {
    let img = image::open(path).map_err(|e| CliError::from(oralscan_core::Error::from(e)))?;
    let (color, bytes) = match img {
        image::DynamicImage::ImageLuma8(g) => (png::ColorType::Grayscale, g.into_raw()),
        other => (png::ColorType::Rgb, other.to_rgb8().into_raw()),
    };
    let (w, h) = image::image_dimensions(path).map_err(|e| CliError::from(oralscan_core::Error::from(e)))?;
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk(PNG_HASH_KEY.into(), hash.into())
        .map_err(|e| CliError::new("image", e.to_string()))?;
    let mut writer = enc.write_header().map_err(|e| CliError::new("image", e.to_string()))?;
    writer.write_image_data(&bytes).map_err(|e| CliError::new("image", e.to_string()))?;
    writer.finish().map_err(|e| CliError::new("image", e.to_string()))
}

/// Read back the hash stamped into a PNG.
pub fn png_hash(path: &Path) -> Result<Option<String>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let reader = decoder.read_info().map_err(|e| CliError::new("image", e.to_string()))?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == PNG_HASH_KEY)
        .map(|t| t.text.clone()))
}

/// The hash carried by any stamped artifact.
pub fn artifact_hash(path: &Path) -> Result<Option<String>, CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let read = || fs::read_to_string(path).map_err(|e| CliError::io(path, e));
    Ok(match ext {
        "png" => png_hash(path)?,
        "json" => serde_json::from_str::<Value>(&read()?)?
            .get("config_hash")
            .and_then(|v| v.as_str())
            .map(String::from),
        "jsonl" => {
            let text = read()?;
            let first = text.lines().next().unwrap_or("{}");
            serde_json::from_str::<Value>(first)?
                .get("config_hash")
                .and_then(|v| v.as_str())
                .map(String::from)
        }
        "csv" => read()?
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# config_hash="))
            .map(String::from),
        "txt" => read()?
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix("config_hash: "))
            .map(String::from),
        _ => None,
    })
}
