//! Data types for the chain of visual/textual thoughts and the files they are
//! persisted to: the reasoning JSON record, the tuning CSV and keyframe PNGs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, validation, Error, Result};

/// Minimum keyframe edge length in pixels.
pub const MIN_IMAGE_EDGE: u32 = 8;

const LOSSLESS_EXTENSIONS: &[&str] = &["png", "bmp", "ppm", "tif", "tiff"];

/// The user prompt plus the slug used for run directories and file names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub text: String,
    pub scenario_id: String,
}

impl PromptSpec {
    pub fn new(text: impl Into<String>, scenario_id: impl Into<String>) -> Result<Self> {
        let spec = Self {
            text: text.into(),
            scenario_id: scenario_id.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.text.trim().is_empty(), || "prompt text is empty".into())?;
        validate_slug(&self.scenario_id)
    }
}

pub fn validate_slug(slug: &str) -> Result<()> {
    ensure(
        !slug.is_empty()
            && slug
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_'),
        || format!("scenario id {slug:?} must match [a-z0-9_]+"),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextualThought {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualThought {
    pub index: usize,
    pub image: RgbImage,
    /// Path relative to the directory holding the tuning CSV.
    pub file_path: String,
}

impl VisualThought {
    pub fn new(index: usize, image: RgbImage, file_path: impl Into<String>) -> Result<Self> {
        let vt = Self {
            index,
            image,
            file_path: file_path.into(),
        };
        vt.validate()?;
        Ok(vt)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.image.height() >= MIN_IMAGE_EDGE && self.image.width() >= MIN_IMAGE_EDGE,
            || {
                format!(
                    "visual thought {} is {}x{}, below the {MIN_IMAGE_EDGE}px minimum",
                    self.index,
                    self.image.height(),
                    self.image.width()
                )
            },
        )?;
        let ext = Path::new(&self.file_path)
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        ensure(ext.as_deref().is_some_and(|e| LOSSLESS_EXTENSIONS.contains(&e)), || {
            format!("{:?} is not a lossless raster file name", self.file_path)
        })?;
        ensure(Path::new(&self.file_path).is_relative(), || {
            format!("{:?} must be a relative path", self.file_path)
        })
    }
}

/// Paired keyframes and captions, in chain order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThoughtChain {
    pub visual: Vec<VisualThought>,
    pub textual: Vec<TextualThought>,
}

impl ThoughtChain {
    pub fn len(&self) -> usize {
        self.visual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visual.is_empty()
    }

    pub fn push(&mut self, image: RgbImage, file_path: String, text: String) -> Result<()> {
        let index = self.visual.len();
        ensure(!text.trim().is_empty(), || format!("caption {index} is empty"))?;
        self.visual.push(VisualThought::new(index, image, file_path)?);
        self.textual.push(TextualThought { index, text });
        Ok(())
    }

    pub fn images(&self) -> Vec<&RgbImage> {
        self.visual.iter().map(|v| &v.image).collect()
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.visual.is_empty(), || "thought chain is empty".into())?;
        ensure(self.visual.len() == self.textual.len(), || {
            format!(
                "chain has {} images but {} captions",
                self.visual.len(),
                self.textual.len()
            )
        })?;
        for (i, (v, t)) in self.visual.iter().zip(&self.textual).enumerate() {
            ensure(v.index == i && t.index == i, || {
                format!("chain indices are not contiguous at position {i}")
            })?;
            ensure(!t.text.trim().is_empty(), || format!("caption {i} is empty"))?;
            v.validate()?;
        }
        Ok(())
    }
}

/// The structured output of the reasoning loop. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasoningRecord {
    pub input_prompt: String,
    pub thoughts: String,
    pub consequences: String,
    pub context_frame: String,
    pub concise_prompt: String,
    pub key_frames: Vec<String>,
}

impl ReasoningRecord {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("input_prompt", &self.input_prompt),
            ("thoughts", &self.thoughts),
            ("consequences", &self.consequences),
            ("context_frame", &self.context_frame),
            ("concise_prompt", &self.concise_prompt),
        ] {
            ensure(!value.trim().is_empty(), || format!("record field {name} is empty"))?;
        }
        for (i, k) in self.key_frames.iter().enumerate() {
            ensure(!k.trim().is_empty(), || format!("key_frames[{i}] is empty"))?;
        }
        Ok(())
    }

    /// Checks the record against the chain it was produced with.
    pub fn validate_against(&self, chain: &ThoughtChain) -> Result<()> {
        self.validate()?;
        ensure(self.key_frames.len() + 1 == chain.len(), || {
            format!(
                "record has {} key_frames but chain has {} images",
                self.key_frames.len(),
                chain.len()
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuningPair {
    pub file_name: String,
    pub text: String,
}

/// Wall-clock seconds for one pipeline stage plus optional named sub-steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StageTiming {
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub substeps: BTreeMap<String, f64>,
}

/// Per-run provenance written to `<run_dir>/manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub scenario_id: String,
    pub mode: String,
    pub config_hash: String,
    pub seed: u64,
    pub stage_timings: BTreeMap<String, StageTiming>,
    /// Role → path relative to the run directory.
    pub artifact_paths: BTreeMap<String, String>,
    /// Role → sha256 of the artifact bytes.
    #[serde(default)]
    pub artifact_hashes: BTreeMap<String, String>,
    /// Stage → "ok" | "failed" | "skipped".
    #[serde(default)]
    pub stage_status: BTreeMap<String, String>,
    /// The reasoning loop stopped on the frame guard rather than a terminal flag.
    #[serde(default)]
    pub truncated: bool,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_pretty(path, self)
    }

    /// The manifest with all timing data removed, for run-to-run comparison.
    pub fn without_timings(&self) -> Self {
        let mut m = self.clone();
        for t in m.stage_timings.values_mut() {
            t.seconds = 0.0;
            for v in t.substeps.values_mut() {
                *v = 0.0;
            }
        }
        m
    }
}

/// Serializes with 4-space indentation and a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let fmt = serde_json::ser::PrettyFormatter::with_indent(b"    ");
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(buf)
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = to_json_pretty(value)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `{ "<scenario_id>": { ...record... } }`.
pub fn write_reasoning_json(scenario_id: &str, record: &ReasoningRecord, path: &Path) -> Result<PathBuf> {
    validate_slug(scenario_id)?;
    record.validate()?;
    let mut top = BTreeMap::new();
    top.insert(scenario_id, record);
    write_json_pretty(path, &top)?;
    Ok(path.to_path_buf())
}

/// Reads a record file written by [`write_reasoning_json`]. Returns the
/// scenario id with the record.
pub fn read_reasoning_json(path: &Path) -> Result<(String, ReasoningRecord)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let top: BTreeMap<String, ReasoningRecord> = serde_json::from_slice(&bytes)?;
    ensure(top.len() == 1, || {
        format!("{} holds {} scenarios, expected 1", path.display(), top.len())
    })?;
    let (id, record) = top.into_iter().next().expect("len checked");
    record.validate()?;
    Ok((id, record))
}

pub const TUNING_CSV_HEADER: &str = "\"file_name\",\"text\"";

/// Writes the image/caption pairs with both cells always quoted.
pub fn write_tuning_csv(pairs: &[TuningPair], path: &Path) -> Result<PathBuf> {
    ensure(!pairs.is_empty(), || "no tuning pairs to write".into())?;
    for (i, p) in pairs.iter().enumerate() {
        ensure(!p.file_name.is_empty(), || format!("pair {i} has no file name"))?;
        ensure(!p.text.trim().is_empty(), || format!("pair {i} has an empty caption"))?;
    }
    let mut wtr = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Always)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    wtr.write_record(["file_name", "text"])?;
    for p in pairs {
        wtr.write_record([p.file_name.as_str(), p.text.as_str()])?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn read_tuning_csv(path: &Path) -> Result<Vec<TuningPair>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Validation(format!("{}: {other:?}", path.display())),
        })?;
    let headers = rdr.headers()?.clone();
    ensure(
        headers.len() == 2 && &headers[0] == "file_name" && &headers[1] == "text",
        || format!("{} has header {headers:?}", path.display()),
    )?;
    let mut pairs = Vec::new();
    for row in rdr.deserialize() {
        let pair: TuningPair = row?;
        ensure(!pair.text.trim().is_empty(), || {
            format!("{} has an empty caption for {}", path.display(), pair.file_name)
        })?;
        pairs.push(pair);
    }
    ensure(!pairs.is_empty(), || format!("{} has no rows", path.display()))?;
    Ok(pairs)
}

/// Pairs image i with its caption: the concise prompt for the first image and
/// `key_frames[i-1]` afterwards.
pub fn pairs_from_chain(chain: &ThoughtChain, record: &ReasoningRecord) -> Result<Vec<TuningPair>> {
    record.validate_against(chain)?;
    Ok(chain
        .visual
        .iter()
        .enumerate()
        .map(|(i, v)| TuningPair {
            file_name: v.file_path.clone(),
            text: if i == 0 {
                record.concise_prompt.clone()
            } else {
                record.key_frames[i - 1].clone()
            },
        })
        .collect())
}

/// Keyframe file name used inside `thoughts/`.
pub fn keyframe_file_name(scenario_id: &str, index: usize) -> String {
    format!("{scenario_id}_{index}.png")
}

pub fn save_png(image: &RgbImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    image.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes)?;
    Ok(img.to_rgb8())
}

/// Checks that every pair's image exists under `dir` and loads it.
pub fn load_pair_images(pairs: &[TuningPair], dir: &Path) -> Result<Vec<RgbImage>> {
    pairs
        .iter()
        .map(|p| {
            let path = dir.join(&p.file_name);
            if !path.is_file() {
                return Err(validation(format!(
                    "tuning pair references missing image {}",
                    path.display()
                )));
            }
            load_png(&path)
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(n_keys: usize) -> ReasoningRecord {
        ReasoningRecord {
            input_prompt: "p".into(),
            thoughts: "t".into(),
            consequences: "c".into(),
            context_frame: "cf".into(),
            concise_prompt: "short".into(),
            key_frames: (0..n_keys).map(|i| format!("k{i}")).collect(),
        }
    }

    fn chain(n: usize) -> ThoughtChain {
        let mut c = ThoughtChain::default();
        for i in 0..n {
            c.push(RgbImage::new(8, 8), keyframe_file_name("s", i), format!("cap{i}"))
                .unwrap();
        }
        c
    }

    #[test]
    fn slug_rules() {
        assert!(validate_slug("sulfuric_acid").is_ok());
        assert!(validate_slug("a1").is_ok());
        assert!(validate_slug("Bad").is_err());
        assert!(validate_slug("with-dash").is_err());
        assert!(validate_slug("").is_err());
        assert!(PromptSpec::new("   ", "x").is_err());
    }

    #[test]
    fn visual_thought_rejects_small_or_lossy() {
        assert!(VisualThought::new(0, RgbImage::new(7, 8), "a.png").is_err());
        assert!(VisualThought::new(0, RgbImage::new(8, 8), "a.jpg").is_err());
        assert!(VisualThought::new(0, RgbImage::new(8, 8), "/abs/a.png").is_err());
        assert!(VisualThought::new(0, RgbImage::new(8, 8), "a.PNG").is_ok());
    }

    #[test]
    fn empty_key_frames_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_reasoning_json("one", &record(0), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"key_frames\": []"));
        let (id, back) = read_reasoning_json(&path).unwrap();
        assert_eq!(id, "one");
        assert_eq!(back, record(0));
    }

    #[test]
    fn reasoning_json_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_reasoning_json("s", &record(1), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let expected = "{\n    \"s\": {\n        \"input_prompt\": \"p\",\n        \"thoughts\": \"t\",\n        \"consequences\": \"c\",\n        \"context_frame\": \"cf\",\n        \"concise_prompt\": \"short\",\n        \"key_frames\": [\n            \"k0\"\n        ]\n    }\n}\n";
        assert_eq!(text, expected);
    }

    #[test]
    fn invalid_record_is_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let mut r = record(1);
        r.thoughts = " ".into();
        assert!(matches!(
            write_reasoning_json("s", &r, &path),
            Err(Error::Validation(_))
        ));
        assert!(!path.exists());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("r.json");
        assert!(matches!(
            write_reasoning_json("s", &record(0), &path),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn single_pair_csv_is_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        write_tuning_csv(
            &[TuningPair {
                file_name: "a.png".into(),
                text: "x".into(),
            }],
            &path,
        )
        .unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "\"file_name\",\"text\"\n\"a.png\",\"x\"\n"
        );
    }

    #[test]
    fn csv_rejects_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_tuning_csv(&[], &dir.path().join("p.csv")).is_err());
    }

    #[test]
    fn csv_quotes_are_doubled_and_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        let pairs = vec![TuningPair {
            file_name: "a.png".into(),
            text: "the \"big\", red ball".into(),
        }];
        write_tuning_csv(&pairs, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"the \"\"big\"\", red ball\""));
        assert_eq!(read_tuning_csv(&path).unwrap(), pairs);
    }

    #[test]
    fn pairs_follow_chain_order() {
        let pairs = pairs_from_chain(&chain(5), &record(4)).unwrap();
        assert_eq!(pairs.len(), 5);
        assert_eq!(pairs[0].text, "short");
        assert_eq!(pairs[0].file_name, "s_0.png");
        for (i, p) in pairs.iter().enumerate().skip(1) {
            assert_eq!(p.text, format!("k{}", i - 1));
        }
        assert_eq!(pairs_from_chain(&chain(1), &record(0)).unwrap().len(), 1);
        assert!(pairs_from_chain(&chain(5), &record(3)).is_err());
    }

    #[test]
    fn chain_validation() {
        let mut c = chain(2);
        assert!(c.validate().is_ok());
        c.textual[1].index = 5;
        assert!(c.validate().is_err());
        assert!(ThoughtChain::default().validate().is_err());
    }

    #[test]
    fn manifest_roundtrip_and_timing_strip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest {
            scenario_id: "s".into(),
            seed: 3,
            ..Default::default()
        };
        m.stage_timings.insert(
            "reasoning".into(),
            StageTiming {
                seconds: 1.5,
                substeps: [("image editing".to_string(), 0.5)].into(),
            },
        );
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.without_timings().stage_timings["reasoning"].seconds, 0.0);
    }
}
