//! Network schema files.
//!
//! ```toml
//! schema = 1
//! name = "tiny"
//! input_shape = [1, 8, 8]
//!
//! [[layers]]
//! type = "conv2d"
//! in_ch = 1
//! out_ch = 4
//! kh = 3
//! kw = 3
//! stride = 1
//! pad = 1
//! precision = "ternary"
//! weights = "tiny.l0.tern"
//! ```
//!
//! Layer types are `conv2d`, `fully_connected`, `relu_t` (`tau`),
//! `batch_norm_inf` (`scale`, `shift`) and `softmax_xent` (`classes`).
//! Weight paths are relative to the schema file; the file's magic decides
//! whether it is read as TNSR or TERN.

use std::path::{Path, PathBuf};

use dlac_core::graph::{Conv2dParams, LayerSpec, LayerWeights, NetworkSpec, Precision, WeightSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawPrecision {
    Full,
    Ternary,
}

impl From<RawPrecision> for Precision {
    fn from(p: RawPrecision) -> Self {
        match p {
            RawPrecision::Full => Precision::Full,
            RawPrecision::Ternary => Precision::Ternary,
        }
    }
}

impl From<Precision> for RawPrecision {
    fn from(p: Precision) -> Self {
        match p {
            Precision::Full => RawPrecision::Full,
            Precision::Ternary => RawPrecision::Ternary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum RawLayer {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        precision: RawPrecision,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<String>,
    },
    FullyConnected {
        in_dim: usize,
        out_dim: usize,
        precision: RawPrecision,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<String>,
    },
    ReluT {
        tau: f64,
    },
    BatchNormInf {
        scale: Vec<f64>,
        shift: Vec<f64>,
    },
    SoftmaxXent {
        classes: usize,
    },
}

#[derive(Serialize)]
struct RawNetwork<'a> {
    schema: i64,
    name: &'a str,
    input_shape: &'a [usize],
    layers: Vec<RawLayer>,
}

/// Widens through the shortest decimal form so files show `0.3`, not
/// `0.30000001192092896`; narrowing back gives the same `f32`.
fn widen(x: f32) -> f64 {
    x.to_string().parse().expect("f32 display parses as f64")
}

fn narrow(path: &Path, field: &str, x: f64) -> Result<f32> {
    let v = x as f32;
    if x.is_finite() && !v.is_finite() {
        return Err(Error::schema(path, field, "value out of single-precision range"));
    }
    Ok(v)
}

fn to_raw(layer: &LayerSpec, weights: Option<String>) -> RawLayer {
    match layer {
        LayerSpec::Conv2d { conv, precision } => RawLayer::Conv2d {
            in_ch: conv.in_ch,
            out_ch: conv.out_ch,
            kh: conv.kh,
            kw: conv.kw,
            stride: conv.stride,
            pad: conv.pad,
            precision: (*precision).into(),
            weights,
        },
        LayerSpec::FullyConnected {
            in_dim,
            out_dim,
            precision,
        } => RawLayer::FullyConnected {
            in_dim: *in_dim,
            out_dim: *out_dim,
            precision: (*precision).into(),
            weights,
        },
        LayerSpec::ReluT { tau } => RawLayer::ReluT { tau: widen(*tau) },
        LayerSpec::BatchNormInf { scale, shift } => RawLayer::BatchNormInf {
            scale: scale.iter().copied().map(widen).collect(),
            shift: shift.iter().copied().map(widen).collect(),
        },
        LayerSpec::SoftmaxXent { classes } => RawLayer::SoftmaxXent { classes: *classes },
    }
}

fn from_raw(path: &Path, i: usize, raw: RawLayer) -> Result<(LayerSpec, Option<String>)> {
    let field = |f: &str| format!("layers[{i}].{f}");
    let floats = |f: &str, v: &[f64]| -> Result<Vec<f32>> {
        v.iter()
            .enumerate()
            .map(|(j, &x)| narrow(path, &format!("layers[{i}].{f}[{j}]"), x))
            .collect()
    };
    Ok(match raw {
        RawLayer::Conv2d {
            in_ch,
            out_ch,
            kh,
            kw,
            stride,
            pad,
            precision,
            weights,
        } => (
            LayerSpec::Conv2d {
                conv: Conv2dParams {
                    in_ch,
                    out_ch,
                    kh,
                    kw,
                    stride,
                    pad,
                },
                precision: precision.into(),
            },
            weights,
        ),
        RawLayer::FullyConnected {
            in_dim,
            out_dim,
            precision,
            weights,
        } => (
            LayerSpec::FullyConnected {
                in_dim,
                out_dim,
                precision: precision.into(),
            },
            weights,
        ),
        RawLayer::ReluT { tau } => (
            LayerSpec::ReluT {
                tau: narrow(path, &field("tau"), tau)?,
            },
            None,
        ),
        RawLayer::BatchNormInf { scale, shift } => (
            LayerSpec::BatchNormInf {
                scale: floats("scale", &scale)?,
                shift: floats("shift", &shift)?,
            },
            None,
        ),
        RawLayer::SoftmaxXent { classes } => (LayerSpec::SoftmaxXent { classes }, None),
    })
}

/// A parsed schema; `weight_files[i]` is the resolved path of layer `i`'s
/// weights when the file names one.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaFile {
    pub spec: NetworkSpec,
    pub weight_files: Vec<Option<PathBuf>>,
}

/// A network with whatever weights its schema references.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedNetwork {
    pub spec: NetworkSpec,
    pub weights: WeightSet,
}

/// Parses TOML `text` as a table with `schema = 1`, rejecting keys outside
/// `allowed` when given.
pub(crate) fn parse_table(path: &Path, text: &str, allowed: Option<&[&str]>) -> Result<toml::Table> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::format(path, e.to_string().trim_end()))?;
    let unknown = allowed.and_then(|a| table.keys().find(|k| !a.contains(&k.as_str())));
    if let Some(k) = unknown {
        return Err(Error::schema(path, k.as_str(), "unknown field"));
    }
    match table.get("schema") {
        None => Err(Error::schema(path, "schema", "missing (expected schema = 1)")),
        Some(toml::Value::Integer(SCHEMA_VERSION)) => Ok(table),
        Some(v) => Err(Error::schema(path, "schema", format!("unsupported version {v}"))),
    }
}

pub(crate) fn field<T: serde::de::DeserializeOwned>(path: &Path, table: &toml::Table, key: &str) -> Result<T> {
    let v = table
        .get(key)
        .ok_or_else(|| Error::schema(path, key, "missing field"))?;
    v.clone()
        .try_into()
        .map_err(|e: toml::de::Error| Error::schema(path, key, e.message().trim_end()))
}

/// Parses schema text. `path` locates relative weight references and
/// labels errors.
pub fn parse_schema(path: &Path, text: &str) -> Result<SchemaFile> {
    let table = parse_table(path, text, Some(&["schema", "name", "input_shape", "layers"]))?;
    let name: String = field(path, &table, "name")?;
    let input_shape: Vec<usize> = field(path, &table, "input_shape")?;
    let raw_layers: Vec<toml::Value> = field(path, &table, "layers")?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut layers = Vec::with_capacity(raw_layers.len());
    let mut weight_files = Vec::with_capacity(raw_layers.len());
    for (i, v) in raw_layers.into_iter().enumerate() {
        let raw: RawLayer = v
            .try_into()
            .map_err(|e: toml::de::Error| Error::schema(path, format!("layers[{i}]"), e.message().trim_end()))?;
        let (layer, weights) = from_raw(path, i, raw)?;
        layers.push(layer);
        weight_files.push(weights.map(|w| base.join(w)));
    }
    let spec = NetworkSpec {
        name,
        input_shape,
        layers,
    };
    spec.validate().map_err(|source| Error::CoreAt {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(SchemaFile { spec, weight_files })
}

pub fn read_schema(path: &Path) -> Result<SchemaFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schema(path, &text)
}

fn layer_error(path: &Path, i: usize, layer: &LayerSpec, reason: impl std::fmt::Display) -> Error {
    Error::schema(path, format!("layers[{i}] ({})", layer.kind()), reason.to_string())
}

/// Reads a weight file, TNSR or TERN by magic.
pub fn load_weights(path: &Path) -> Result<LayerWeights> {
    let bytes = io::read_bytes(path)?;
    if bytes.starts_with(io::TERN_MAGIC) {
        Ok(LayerWeights::Ternary(io::decode_ternary(&bytes, path)?))
    } else {
        Ok(LayerWeights::Full(io::decode_tensor(&bytes, path)?))
    }
}

/// Loads a schema and every weight file it references. Layers without a
/// `weights` entry get `None`.
pub fn load_network(path: &Path) -> Result<LoadedNetwork> {
    let file = read_schema(path)?;
    let mut weights = Vec::with_capacity(file.spec.layers.len());
    for (i, (layer, wf)) in file.spec.layers.iter().zip(&file.weight_files).enumerate() {
        let w = match wf {
            Some(wf) => Some(load_weights(wf).map_err(|e| layer_error(path, i, layer, e))?),
            None => None,
        };
        if let (Some(w), Some(expect)) = (&w, layer.weight_shape()) {
            if w.shape() != &expect[..] {
                let msg = format!("weight shape {:?}, expected {expect:?}", w.shape());
                return Err(layer_error(path, i, layer, msg));
            }
            if Some(w.precision()) != layer.precision() {
                let msg = format!(
                    "{} weights on a {} layer",
                    precision_name(w.precision()),
                    precision_name(layer.precision().expect("parameterized"))
                );
                return Err(layer_error(path, i, layer, msg));
            }
        }
        weights.push(w);
    }
    Ok(LoadedNetwork {
        spec: file.spec,
        weights,
    })
}

/// Loads a network and requires weights on every parameterized layer.
pub fn load_complete_network(path: &Path) -> Result<LoadedNetwork> {
    let net = load_network(path)?;
    for (i, (layer, w)) in net.spec.layers.iter().zip(&net.weights).enumerate() {
        if layer.is_parameterized() && w.is_none() {
            return Err(layer_error(path, i, layer, "no weights file given"));
        }
    }
    Ok(net)
}

pub fn precision_name(p: Precision) -> &'static str {
    match p {
        Precision::Full => "full",
        Precision::Ternary => "ternary",
    }
}

/// Weight file name for layer `i` of a schema at `path`.
pub fn weight_file_name(path: &Path, i: usize, w: &LayerWeights) -> String {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let ext = match w {
        LayerWeights::Full(_) => "tnsr",
        LayerWeights::Ternary(_) => "tern",
    };
    format!("{stem}.l{i}.{ext}")
}

/// Serializes a schema; `weight_names[i]` is written as layer `i`'s
/// `weights` entry.
pub fn schema_text(spec: &NetworkSpec, weight_names: &[Option<String>]) -> String {
    let raw = RawNetwork {
        schema: SCHEMA_VERSION,
        name: &spec.name,
        input_shape: &spec.input_shape,
        layers: spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| to_raw(l, weight_names.get(i).cloned().flatten()))
            .collect(),
    };
    toml::to_string(&raw).expect("schema serializes")
}

/// Writes the schema at `path` and each layer's weights beside it as
/// `<stem>.l<i>.tnsr` or `<stem>.l<i>.tern`. Returns the weight paths
/// written.
pub fn save_network(path: &Path, spec: &NetworkSpec, weights: &[Option<LayerWeights>]) -> Result<Vec<PathBuf>> {
    spec.validate().map_err(|source| Error::CoreAt {
        path: path.to_path_buf(),
        source,
    })?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut names = Vec::with_capacity(spec.layers.len());
    let mut written = Vec::new();
    for i in 0..spec.layers.len() {
        let name = match weights.get(i).and_then(Option::as_ref) {
            Some(w) => {
                let name = weight_file_name(path, i, w);
                let wp = dir.join(&name);
                match w {
                    LayerWeights::Full(t) => io::save_tensor(&wp, t)?,
                    LayerWeights::Ternary(t) => io::save_ternary(&wp, t)?,
                }
                written.push(wp);
                Some(name)
            }
            None => None,
        };
        names.push(name);
    }
    io::write_atomic(path, schema_text(spec, &names).as_bytes())?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
schema = 1
name = "tiny"
input_shape = [4]

[[layers]]
type = "fully_connected"
in_dim = 4
out_dim = 3
precision = "ternary"

[[layers]]
type = "batch_norm_inf"
scale = [0.5, 1.0, 2.0]
shift = [0.0, 0.1, -0.3]

[[layers]]
type = "relu_t"
tau = 0.01

[[layers]]
type = "fully_connected"
in_dim = 3
out_dim = 2
precision = "full"

[[layers]]
type = "softmax_xent"
classes = 2
"#;

    fn parse(text: &str) -> Result<SchemaFile> {
        parse_schema(Path::new("net.toml"), text)
    }

    #[test]
    fn parses_every_field() {
        let f = parse(TINY).unwrap();
        assert_eq!(f.spec.name, "tiny");
        assert_eq!(f.spec.layers.len(), 5);
        assert_eq!(f.spec.layers[2], LayerSpec::ReluT { tau: 0.01 });
        assert_eq!(f.weight_files, vec![None; 5]);
        let again = parse(&schema_text(&f.spec, &[])).unwrap();
        assert_eq!(again.spec, f.spec);
    }

    #[test]
    fn errors_carry_field_paths() {
        let msg = |t: &str| parse(t).unwrap_err().to_string();
        assert!(msg(&TINY.replace("schema = 1", "")).contains("schema"));
        assert!(msg(&TINY.replace("schema = 1", "schema = 2")).contains("unsupported version"));
        assert!(msg(&TINY.replace("tau = 0.01", "tau = 0.01\nbeta = 1")).contains("layers[2]"));
        assert!(msg(&TINY.replace("out_dim = 3", "out_dim = \"3\"")).contains("layers[0]"));
        assert!(msg(&TINY.replace("\"tiny\"", "\"tiny\"\nextra = 1")).contains("extra"));
        assert!(msg(&TINY.replace("batch_norm_inf", "batchnorm")).contains("layers[1]"));
        let stride0 = TINY.replace(
            "type = \"relu_t\"\ntau = 0.01",
            "type = \"conv2d\"\nin_ch = 1\nout_ch = 1\nkh = 1\nkw = 1\nstride = 0\npad = 0\nprecision = \"full\"",
        );
        assert!(msg(&stride0).contains("layers[2].stride"), "{}", msg(&stride0));
        assert!(msg("schema = 1\nname = ").contains("net.toml"));
    }
}
