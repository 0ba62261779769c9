//! ADDF feature files and dataset manifests.
//!
//! ADDF layout, all little-endian:
//!
//! ```text
//! "ADDF"            4 bytes magic
//! version           u16 (= 1)
//! name_len          u32, then name_len bytes of UTF-8
//! dtype             u8  (0 = float32)
//! frame_rate        f32
//! ndims             u8, then ndims × u32 dims
//! payload           product(dims) × f32, row-major
//! crc32             u32 over every preceding byte
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"ADDF";
pub const FEATURE_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DimKind {
    FrequencyBin,
    CepstralCoef,
    CqBin,
    Embedding,
}

impl DimKind {
    /// Kind implied by a feature name; files carry no explicit kind.
    pub fn for_name(name: &str) -> DimKind {
        match name {
            "mel" | "logspec" => DimKind::FrequencyBin,
            "mfcc" | "lfcc" => DimKind::CepstralCoef,
            "cqt" => DimKind::CqBin,
            _ => DimKind::Embedding,
        }
    }
}

/// A named feature map. Extractors produce `D×T` (feature axis first, time last).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub frame_rate: f32,
    pub dim_kind: DimKind,
}

impl FeatureTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>, frame_rate: f32) -> Result<Self> {
        let name = name.into();
        if shape.is_empty() {
            return Err(Error::Shape("feature tensor needs at least one dimension".into()));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("feature {name}: shape {shape:?} vs {} values", data.len())));
        }
        let dim_kind = DimKind::for_name(&name);
        Ok(FeatureTensor { name, shape, data, frame_rate, dim_kind })
    }

    /// Feature dimension `D` of a `D×T` map.
    pub fn dim(&self) -> usize {
        self.shape[0]
    }

    /// Frame count `T` of a `D×T` map.
    pub fn frames(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn at(&self, d: usize, t: usize) -> f32 {
        self.data[d * self.frames() + t]
    }

    /// Transposes a `D×T` map into time-major `T×D` rows.
    pub fn time_major(&self) -> Result<Vec<f32>> {
        if self.shape.len() != 2 {
            return Err(Error::Shape(format!("feature {} is not D×T: {:?}", self.name, self.shape)));
        }
        let (d, t) = (self.shape[0], self.shape[1]);
        Ok((0..d * t).map(|i| self.data[(i % d) * t + i / d]).collect())
    }
}

pub fn encode_feature(t: &FeatureTensor) -> Result<Vec<u8>> {
    if t.shape.is_empty() || t.shape.len() > u8::MAX as usize {
        return Err(Error::Shape(format!("cannot encode {} dimensions", t.shape.len())));
    }
    let name = t.name.as_bytes();
    let mut out = Vec::with_capacity(32 + name.len() + 4 * t.data.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name);
    out.push(DTYPE_F32);
    out.extend_from_slice(&t.frame_rate.to_le_bytes());
    out.push(t.shape.len() as u8);
    for &d in &t.shape {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated { path: self.path.to_path_buf(), what: format!("{what} at byte {}", self.pos) });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses an in-memory ADDF image; `path` is only used in error messages.
pub fn decode_feature(bytes: &[u8], path: &Path) -> Result<FeatureTensor> {
    let fmt_err = |what: String| Error::Format { path: path.to_path_buf(), what };
    let mut c = Cursor { buf: bytes, pos: 0, path };
    if c.take(4, "magic")? != FEATURE_MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: "ADDF" });
    }
    let version = c.u16("version")?;
    if version != FEATURE_VERSION {
        return Err(Error::Version { path: path.to_path_buf(), found: version, supported: FEATURE_VERSION });
    }
    let name_len = c.u32("name length")? as usize;
    let name_bytes = c.take(name_len, "name")?;
    let dtype = c.u8("dtype")?;
    let frame_rate = f32::from_le_bytes(c.take(4, "frame rate")?.try_into().unwrap());
    let ndims = c.u8("ndims")? as usize;
    let mut shape = Vec::with_capacity(ndims);
    for i in 0..ndims {
        shape.push(c.u32(&format!("dim {i}"))? as usize);
    }
    let header_end = c.pos;
    // checksum before interpreting the header so corruption is reported as such
    if bytes.len() >= header_end + 4 {
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let complete = n.and_then(|n| n.checked_mul(4)).map(|p| bytes.len() >= header_end + p + 4);
        if stored != computed && complete == Some(true) {
            return Err(Error::Checksum { path: path.to_path_buf(), stored, computed });
        }
    }
    if dtype != DTYPE_F32 {
        return Err(fmt_err(format!("unsupported dtype code {dtype}")));
    }
    if ndims == 0 {
        return Err(fmt_err("zero dimensions".into()));
    }
    let name = std::str::from_utf8(name_bytes).map_err(|_| fmt_err("name is not UTF-8".into()))?.to_owned();
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| fmt_err(format!("dims {shape:?} overflow")))?;
    let payload = c.take(n * 4, "payload")?;
    let crc_bytes = c.take(4, "checksum")?;
    if c.pos != bytes.len() {
        return Err(fmt_err(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if stored != computed {
        return Err(Error::Checksum { path: path.to_path_buf(), stored, computed });
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    let dim_kind = DimKind::for_name(&name);
    Ok(FeatureTensor { name, shape, data, frame_rate, dim_kind })
}

/// Writes to a sibling temp file and renames it into place, creating parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(".{file_name}.{}.{n}.tmp", std::process::id()));
    let write = || -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn write_feature_file(t: &FeatureTensor, path: &Path) -> Result<()> {
    write_atomic(path, &encode_feature(t)?)
}

pub fn read_feature_file(path: &Path) -> Result<FeatureTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature(&bytes, path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Spoof,
}

impl Label {
    /// Class index used by the classifier (genuine = 0).
    pub fn index(self) -> usize {
        match self {
            Label::Genuine => 0,
            Label::Spoof => 1,
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "genuine" => Ok(Label::Genuine),
            "spoof" => Ok(Label::Spoof),
            other => Err(Error::Label(format!("{other:?} (expected genuine|spoof)"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Genuine => "genuine",
            Label::Spoof => "spoof",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Validation(format!("unknown split {other:?} (expected train|dev|eval)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        })
    }
}

/// One utterance. Paths are stored as written; relative paths resolve against the manifest directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: String,
    pub label: Label,
    pub split: Split,
    pub audio: Option<PathBuf>,
    pub features: BTreeMap<String, PathBuf>,
}

/// Line-delimited dataset index. Each non-empty, non-`#` line holds
/// whitespace-separated `key=value` tokens:
///
/// ```text
/// id=LA_0001 label=spoof split=train audio=wav/LA_0001.wav view.mel=feat/mel/LA_0001.addf
/// ```
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut problems = Vec::new();
        let mut records = Vec::new();
        let mut first_line: HashMap<String, usize> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match parse_record(line) {
                Ok(rec) => {
                    if let Some(&prev) = first_line.get(&rec.id) {
                        problems.push(format!("duplicate id {:?} on lines {prev} and {lineno}", rec.id));
                    } else {
                        first_line.insert(rec.id.clone(), lineno);
                        records.push(rec);
                    }
                }
                Err(msg) => problems.push(format!("line {lineno}: {msg}")),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems.join("; ")));
        }
        Ok(DatasetManifest { records, base_dir: base_dir.to_path_buf() })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&format!("id={} label={} split={}", r.id, r.label, r.split));
            if let Some(a) = &r.audio {
                s.push_str(&format!(" audio={}", a.display()));
            }
            for (view, p) in &r.features {
                s.push_str(&format!(" view.{view}={}", p.display()));
            }
            s.push('\n');
        }
        s
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

fn parse_record(line: &str) -> std::result::Result<Record, String> {
    let mut id = None;
    let mut label = None;
    let mut split = None;
    let mut audio = None;
    let mut features = BTreeMap::new();
    for tok in line.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| format!("token {tok:?} is not key=value"))?;
        if v.is_empty() {
            return Err(format!("empty value for {k:?}"));
        }
        match k {
            "id" => id = Some(v.to_owned()),
            "label" => label = Some(v.parse::<Label>().map_err(|e| e.to_string())?),
            "split" => split = Some(v.parse::<Split>().map_err(|e| e.to_string())?),
            "audio" => audio = Some(PathBuf::from(v)),
            _ => match k.strip_prefix("view.") {
                Some(view) if !view.is_empty() => {
                    features.insert(view.to_owned(), PathBuf::from(v));
                }
                _ => return Err(format!("unknown key {k:?}")),
            },
        }
    }
    let id = id.ok_or("missing id")?;
    let label = label.ok_or("missing label")?;
    let split = split.ok_or("missing split")?;
    if audio.is_none() && features.is_empty() {
        return Err(format!("record {id:?} has neither audio nor feature paths"));
    }
    Ok(Record { id, label, split, audio, features })
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::parse(&text, &base)
}
