//! On-disk embedding dumps.
//!
//! A dump is two files sharing a stem:
//!
//! * `<stem>.json`: the UTF-8 JSON manifest ([`DumpManifest`]);
//! * `<stem>.bin`: the payload, raw little-endian `f32`, row-major, layers
//!   concatenated in ascending layer order.
//!
//! Sentence dumps store `sentence_count` rows per layer. Token dumps store
//! `sum(token_counts)` rows per layer, sentence `i` contributing
//! `token_counts[i]` consecutive rows.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DTYPE_F32_LE: &str = "float32-le";
pub const MANIFEST_EXTENSION: &str = "json";
pub const PAYLOAD_EXTENSION: &str = "bin";
pub const FORMAT_VERSION: u32 = 1;

/// FLORES-200 style label: ISO 639-3 code, underscore, ISO 15924 script code
/// (`eng_Latn`, `zho_Hans`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageLabel(String);

impl LanguageLabel {
    pub fn new(label: &str) -> Result<Self> {
        let (lang, script) = label.split_once('_').ok_or_else(|| {
            Error::InvalidArgument(format!("language label {label:?} is not of the form xxx_Scrp"))
        })?;
        let lang_ok = lang.len() == 3 && lang.bytes().all(|b| b.is_ascii_lowercase());
        let mut sb = script.bytes();
        let script_ok = script.len() == 4
            && sb.next().is_some_and(|b| b.is_ascii_uppercase())
            && sb.all(|b| b.is_ascii_lowercase());
        if !(lang_ok && script_ok) {
            return Err(Error::InvalidArgument(format!(
                "language label {label:?} is not of the form xxx_Scrp"
            )));
        }
        Ok(LanguageLabel(label.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LanguageLabel {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        LanguageLabel::new(&value)
    }
}

impl From<LanguageLabel> for String {
    fn from(value: LanguageLabel) -> Self {
        value.0
    }
}

impl fmt::Display for LanguageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for LanguageLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LanguageLabel::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Sentence,
    Token,
}

/// Token-to-sentence pooling method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    LastToken,
    WeightedAverage,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::LastToken => "last_token",
            Pooling::WeightedAverage => "weighted_average",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpManifest {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    pub model_id: String,
    pub language: LanguageLabel,
    pub granularity: Granularity,
    /// Stored hidden-state levels; index 0 is the embedding-layer output.
    pub layer_count: usize,
    pub sentence_count: usize,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<Pooling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_counts: Option<Vec<usize>>,
    pub corpus_id: String,
    pub dtype: String,
    /// Free-form producer metadata (precision, special-token policy, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

fn default_format_version() -> u32 {
    FORMAT_VERSION
}

impl DumpManifest {
    pub fn sentence(
        model_id: &str,
        language: LanguageLabel,
        corpus_id: &str,
        pooling: Pooling,
        layer_count: usize,
        sentence_count: usize,
        dim: usize,
    ) -> Self {
        DumpManifest {
            format_version: FORMAT_VERSION,
            model_id: model_id.to_owned(),
            language,
            granularity: Granularity::Sentence,
            layer_count,
            sentence_count,
            dim,
            pooling: Some(pooling),
            token_counts: None,
            corpus_id: corpus_id.to_owned(),
            dtype: DTYPE_F32_LE.to_owned(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn token(
        model_id: &str,
        language: LanguageLabel,
        corpus_id: &str,
        layer_count: usize,
        token_counts: Vec<usize>,
        dim: usize,
    ) -> Self {
        DumpManifest {
            format_version: FORMAT_VERSION,
            model_id: model_id.to_owned(),
            language,
            granularity: Granularity::Token,
            layer_count,
            sentence_count: token_counts.len(),
            dim,
            pooling: None,
            token_counts: Some(token_counts),
            corpus_id: corpus_id.to_owned(),
            dtype: DTYPE_F32_LE.to_owned(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dtype != DTYPE_F32_LE {
            return Err(Error::UnknownDtype(self.dtype.clone()));
        }
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        for (name, v) in [
            ("layer_count", self.layer_count),
            ("sentence_count", self.sentence_count),
            ("dim", self.dim),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be positive")));
            }
        }
        match self.granularity {
            Granularity::Sentence => {
                if self.pooling.is_none() {
                    return Err(Error::Validation(
                        "sentence dumps require a pooling method".into(),
                    ));
                }
            }
            Granularity::Token => {
                let counts = self.token_counts.as_ref().ok_or_else(|| {
                    Error::Validation("token dumps require token_counts".into())
                })?;
                if counts.len() != self.sentence_count {
                    return Err(Error::Validation(format!(
                        "token_counts has {} entries but sentence_count is {}",
                        counts.len(),
                        self.sentence_count
                    )));
                }
                if let Some(i) = counts.iter().position(|&c| c == 0) {
                    return Err(Error::Validation(format!(
                        "token_counts[{i}] is zero (empty sentence)"
                    )));
                }
            }
        }
        self.payload_bytes()?;
        Ok(())
    }

    /// Rows stored per layer.
    pub fn rows_per_layer(&self) -> usize {
        match (self.granularity, &self.token_counts) {
            (Granularity::Token, Some(counts)) => counts.iter().sum(),
            _ => self.sentence_count,
        }
    }

    pub fn payload_bytes(&self) -> Result<u64> {
        (self.layer_count as u64)
            .checked_mul(self.rows_per_layer() as u64)
            .and_then(|v| v.checked_mul(self.dim as u64))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Validation("declared payload size overflows".into()))
    }
}

/// A validated, immutable dump held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDump {
    manifest: DumpManifest,
    layers: Vec<Array2<f32>>,
    /// Row offset of each sentence within a token layer; `n + 1` entries.
    offsets: Vec<usize>,
}

impl EmbeddingDump {
    /// Validates shapes and values and builds the dump.
    pub fn new(manifest: DumpManifest, layers: Vec<Array2<f32>>) -> Result<Self> {
        manifest.validate()?;
        if layers.len() != manifest.layer_count {
            return Err(Error::Validation(format!(
                "manifest declares {} layers but {} matrices were given",
                manifest.layer_count,
                layers.len()
            )));
        }
        let rows = manifest.rows_per_layer();
        for (l, m) in layers.iter().enumerate() {
            if m.dim() != (rows, manifest.dim) {
                return Err(Error::Validation(format!(
                    "layer {l} has shape {}x{} but manifest declares {}x{}",
                    m.nrows(),
                    m.ncols(),
                    rows,
                    manifest.dim
                )));
            }
            if let Some(((row, col), _)) = m.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite { layer: l, row, col });
            }
        }
        let offsets = match &manifest.token_counts {
            Some(counts) if manifest.granularity == Granularity::Token => {
                let mut acc = Vec::with_capacity(counts.len() + 1);
                acc.push(0);
                for c in counts {
                    acc.push(acc.last().unwrap() + c);
                }
                acc
            }
            _ => (0..=manifest.sentence_count).collect(),
        };
        Ok(EmbeddingDump {
            manifest,
            layers,
            offsets,
        })
    }

    pub fn manifest(&self) -> &DumpManifest {
        &self.manifest
    }

    pub fn layers(&self) -> &[Array2<f32>] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> ArrayView2<'_, f32> {
        self.layers[index].view()
    }

    /// Rows belonging to sentence `i` at `layer` (one row for sentence dumps).
    pub fn sentence_rows(&self, layer: usize, i: usize) -> ArrayView2<'_, f32> {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.layers[layer].slice(ndarray::s![a..b, ..])
    }

    pub fn into_parts(self) -> (DumpManifest, Vec<Array2<f32>>) {
        (self.manifest, self.layers)
    }
}

/// Payload path for a manifest path (`foo.json` -> `foo.bin`).
pub fn payload_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension(PAYLOAD_EXTENSION)
}

/// Writes the manifest at `manifest_path` and the payload beside it.
/// Returns the manifest path.
pub fn write_dump(
    manifest: &DumpManifest,
    layers: &[Array2<f32>],
    manifest_path: &Path,
) -> Result<PathBuf> {
    // Shape and value checks happen before anything touches the disk.
    let dump = EmbeddingDump::new(manifest.clone(), layers.to_vec())?;
    write_embedding_dump(&dump, manifest_path)
}

pub fn write_embedding_dump(dump: &EmbeddingDump, manifest_path: &Path) -> Result<PathBuf> {
    let payload = payload_path(manifest_path);
    let file = fs::File::create(&payload).map_err(|e| Error::io(&payload, e))?;
    let mut w = BufWriter::new(file);
    for layer in &dump.layers {
        for row in layer.axis_iter(Axis(0)) {
            for v in row {
                w.write_all(&v.to_le_bytes())
                    .map_err(|e| Error::io(&payload, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&payload, e))?;

    let mut text = serde_json::to_string_pretty(&dump.manifest).map_err(|e| Error::Manifest {
        path: manifest_path.to_owned(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest_path.to_owned())
}

pub fn read_manifest(manifest_path: &Path) -> Result<DumpManifest> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DumpManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.to_owned(),
        message: e.to_string(),
    })?;
    manifest.validate()?;
    Ok(manifest)
}

/// Reads and fully validates a dump given its manifest path.
pub fn read_dump(manifest_path: &Path) -> Result<EmbeddingDump> {
    let manifest = read_manifest(manifest_path)?;
    let payload = payload_path(manifest_path);
    let expected = manifest.payload_bytes()?;
    let mut file = fs::File::open(&payload).map_err(|e| Error::io(&payload, e))?;
    let actual = file
        .metadata()
        .map_err(|e| Error::io(&payload, e))?
        .len();
    if actual < expected {
        return Err(Error::TruncatedPayload { expected, actual });
    }
    if actual > expected {
        return Err(Error::PayloadLengthMismatch { expected, actual });
    }
    let mut bytes = Vec::with_capacity(expected as usize);
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(&payload, e))?;
    if (bytes.len() as u64) != expected {
        return Err(Error::TruncatedPayload {
            expected,
            actual: bytes.len() as u64,
        });
    }

    let rows = manifest.rows_per_layer();
    let dim = manifest.dim;
    let per_layer = rows * dim;
    let mut layers = Vec::with_capacity(manifest.layer_count);
    for (l, chunk) in bytes.chunks_exact(per_layer * 4).enumerate() {
        let mut values = Vec::with_capacity(per_layer);
        for (idx, b) in chunk.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    layer: l,
                    row: idx / dim,
                    col: idx % dim,
                });
            }
            values.push(v);
        }
        let m = Array2::from_shape_vec((rows, dim), values)
            .map_err(|e| Error::Validation(e.to_string()))?;
        layers.push(m);
    }
    EmbeddingDump::new(manifest, layers)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldMismatch {
    pub field: &'static str,
    pub left: String,
    pub right: String,
}

/// Result of checking that two dumps can be compared row for row.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct PairCheck {
    pub mismatches: Vec<FieldMismatch>,
}

impl PairCheck {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

impl fmt::Display for PairCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return f.write_str("ok");
        }
        let parts: Vec<String> = self
            .mismatches
            .iter()
            .map(|m| format!("{}: {} vs {}", m.field, m.left, m.right))
            .collect();
        f.write_str(&parts.join("; "))
    }
}

pub fn validate_pair(a: &DumpManifest, b: &DumpManifest) -> PairCheck {
    let mut check = PairCheck::default();
    let mut cmp = |field: &'static str, l: String, r: String| {
        if l != r {
            check.mismatches.push(FieldMismatch {
                field,
                left: l,
                right: r,
            });
        }
    };
    cmp("model_id", a.model_id.clone(), b.model_id.clone());
    cmp("corpus_id", a.corpus_id.clone(), b.corpus_id.clone());
    cmp(
        "sentence_count",
        a.sentence_count.to_string(),
        b.sentence_count.to_string(),
    );
    cmp(
        "layer_count",
        a.layer_count.to_string(),
        b.layer_count.to_string(),
    );
    cmp("dim", a.dim.to_string(), b.dim.to_string());
    check
}

/// Lists manifest files (`*.json`) in a directory, sorted by path.
pub fn list_manifests(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(MANIFEST_EXTENSION) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn eng() -> LanguageLabel {
        LanguageLabel::new("eng_Latn").unwrap()
    }

    fn tiny() -> DumpManifest {
        DumpManifest::sentence("m", eng(), "flores", Pooling::WeightedAverage, 1, 1, 2)
    }

    #[test]
    fn label_format() {
        assert!(LanguageLabel::new("eng_Latn").is_ok());
        assert!(LanguageLabel::new("zho_Hans").is_ok());
        for bad in ["en_Latn", "eng-Latn", "ENG_Latn", "eng_latn", "eng_LATN", "eng"] {
            assert!(LanguageLabel::new(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn payload_encoding_of_one_and_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eng_Latn.json");
        write_dump(&tiny(), &[array![[1.0f32, 0.0]]], &path).unwrap();
        let bytes = fs::read(payload_path(&path)).unwrap();
        assert_eq!(bytes, [0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x00]);
    }

    #[test]
    fn row_count_mismatch_is_rejected() {
        let mut m = tiny();
        m.sentence_count = 2;
        let dir = tempfile::tempdir().unwrap();
        let rows = Array2::<f32>::zeros((3, 2));
        let err = write_dump(&m, &[rows], &dir.path().join("x.json")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        assert!(!dir.path().join("x.bin").exists());
    }

    #[test]
    fn manifest_invariants() {
        let mut m = tiny();
        m.pooling = None;
        assert!(m.validate().is_err());

        let mut m = tiny();
        m.dim = 0;
        assert!(m.validate().is_err());

        let mut m = tiny();
        m.dtype = "float16".into();
        assert!(matches!(m.validate(), Err(Error::UnknownDtype(_))));

        let m = DumpManifest::token("m", eng(), "c", 2, vec![1, 0], 4);
        assert!(m.validate().is_err());

        let mut m = DumpManifest::token("m", eng(), "c", 2, vec![1, 3], 4);
        assert!(m.validate().is_ok());
        assert_eq!(m.payload_bytes().unwrap(), 2 * 4 * 4 * 4);
        m.sentence_count = 3;
        assert!(m.validate().is_err());
    }

    #[test]
    fn token_dump_sentence_rows() {
        let m = DumpManifest::token("m", eng(), "c", 1, vec![1, 2], 2);
        let layer = array![[1.0f32, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let dump = EmbeddingDump::new(m, vec![layer]).unwrap();
        assert_eq!(dump.sentence_rows(0, 0), array![[1.0f32, 1.0]]);
        assert_eq!(dump.sentence_rows(0, 1), array![[2.0f32, 2.0], [3.0, 3.0]]);
    }

    #[test]
    fn pair_check_reports_fields() {
        let a = DumpManifest::sentence("m", eng(), "flores", Pooling::WeightedAverage, 3, 100, 8);
        let mut b = a.clone();
        b.language = LanguageLabel::new("deu_Latn").unwrap();
        assert!(validate_pair(&a, &b).passed());

        b.sentence_count = 103;
        let check = validate_pair(&a, &b);
        assert!(!check.passed());
        assert_eq!(check.mismatches[0].field, "sentence_count");

        let mut c = a.clone();
        c.corpus_id = "bible".into();
        let check = validate_pair(&a, &c);
        assert_eq!(check.mismatches.len(), 1);
        assert_eq!(check.mismatches[0].field, "corpus_id");
    }
}
