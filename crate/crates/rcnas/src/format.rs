//! Architecture file format.
//!
//! UTF-8 JSON with top-level keys `mode` (`"layers"` or `"module"`),
//! `input_shape` (`[t, f, c]`), `classes`, and either `layers` or `branches`
//! whose objects mirror the field names of [`LayerSpec`] / [`BranchSpec`].
//! Module files may carry a `stacking` object.
//!
//! The canonical form is compact JSON with keys sorted at every level and
//! every field present, so equal architectures serialize to equal bytes. It is used as the
//! cache key and as the worker payload.

use rcnas_core::arch::{BranchSpec, LayerSpec, ModuleArch, ModuleSpec, StackingConfig, TensorShape};
use rcnas_core::Architecture;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown mode {0:?} (expected \"layers\" or \"module\")")]
    Mode(String),
    #[error("mode {mode:?} requires the {field:?} key")]
    Missing { mode: &'static str, field: &'static str },
}

impl From<serde_json::Error> for FormatError {
    fn from(e: serde_json::Error) -> Self {
        let message = e.to_string();
        let message = match message.rfind(" at line ") {
            Some(i) => message[..i].to_string(),
            None => message,
        };
        FormatError::Parse {
            line: e.line(),
            column: e.column(),
            message,
        }
    }
}

#[derive(Deserialize)]
struct ArchFile {
    mode: String,
    input_shape: TensorShape,
    classes: u32,
    #[serde(default)]
    layers: Option<Vec<LayerSpec>>,
    #[serde(default)]
    branches: Option<Vec<BranchSpec>>,
    #[serde(default)]
    stacking: Option<StackingConfig>,
}

#[derive(Serialize)]
struct LayersOut<'a> {
    mode: &'static str,
    input_shape: TensorShape,
    classes: u32,
    layers: &'a [LayerSpec],
}

#[derive(Serialize)]
struct ModuleOut<'a> {
    mode: &'static str,
    input_shape: TensorShape,
    classes: u32,
    branches: &'a [BranchSpec],
    stacking: &'a StackingConfig,
}

pub fn parse_arch(text: &str) -> Result<Architecture, FormatError> {
    let file: ArchFile = serde_json::from_str(text)?;
    from_file(file)
}

pub fn arch_from_value(value: serde_json::Value) -> Result<Architecture, FormatError> {
    from_file(serde_json::from_value(value)?)
}

fn from_file(file: ArchFile) -> Result<Architecture, FormatError> {
    match file.mode.as_str() {
        "layers" => Ok(Architecture::Layers(rcnas_core::ArchGraph::new(
            file.input_shape,
            file.classes,
            file.layers.ok_or(FormatError::Missing {
                mode: "layers",
                field: "layers",
            })?,
        ))),
        "module" => Ok(Architecture::Module(ModuleArch {
            input_shape: file.input_shape,
            output_classes: file.classes,
            module: ModuleSpec::new(file.branches.ok_or(FormatError::Missing {
                mode: "module",
                field: "branches",
            })?),
            stacking: file.stacking.unwrap_or_default(),
        })),
        other => Err(FormatError::Mode(other.to_string())),
    }
}

/// Canonical text of an architecture.
pub fn canonical_serialize(arch: &Architecture) -> String {
    to_value(arch).to_string()
}

/// The architecture as a JSON value.
pub fn to_value(arch: &Architecture) -> serde_json::Value {
    let v = match arch {
        Architecture::Layers(g) => serde_json::to_value(LayersOut {
            mode: "layers",
            input_shape: g.input_shape,
            classes: g.output_classes,
            layers: &g.layers,
        }),
        Architecture::Module(m) => serde_json::to_value(ModuleOut {
            mode: "module",
            input_shape: m.input_shape,
            classes: m.output_classes,
            branches: &m.module.branches,
            stacking: &m.stacking,
        }),
    };
    v.expect("architecture serializes")
}

/// Hex SHA-256 of the canonical text.
pub fn arch_hash(arch: &Architecture) -> String {
    hex::encode(Sha256::digest(canonical_serialize(arch).as_bytes()))
}

/// Pretty (non-canonical) text for humans.
pub fn pretty(arch: &Architecture) -> String {
    serde_json::to_string_pretty(&to_value(arch)).expect("architecture serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rcnas_core::arch::LayerKind;

    #[test]
    fn table_row_gru() {
        let a = parse_arch(
            r#"{"mode": "layers", "input_shape": [49, 40, 1], "classes": 12,
                "layers": [{"kind": "GRU", "repeat": 2, "channels_or_hidden": 64,
                            "directions": 1, "src1": 0}]}"#,
        )
        .unwrap();
        let Architecture::Layers(g) = &a else { panic!() };
        assert_eq!(g.layers.len(), 1);
        assert_eq!(g.layers[0].kind, LayerKind::Gru);
        assert_eq!(
            (g.layers[0].repeat, g.layers[0].channels_or_hidden, g.layers[0].directions),
            (2, 64, 1)
        );
    }

    #[test]
    fn key_order_does_not_matter() {
        let a = parse_arch(r#"{"mode":"layers","input_shape":[49,40,1],"classes":12,"layers":[{"kind":"FC","channels_or_hidden":12,"src1":0,"activation":"relu"}]}"#).unwrap();
        let b = parse_arch(r#"{"layers":[{"activation":"relu","src1":0,"channels_or_hidden":12,"kind":"FC"}],"classes":12,"input_shape":[49,40,1],"mode":"layers"}"#).unwrap();
        assert_eq!(canonical_serialize(&a), canonical_serialize(&b));
        let back = parse_arch(&canonical_serialize(&a)).unwrap();
        assert_eq!(back, a);
        assert_eq!(canonical_serialize(&back), canonical_serialize(&a));
    }

    #[test]
    fn errors_carry_position() {
        match parse_arch("{\n  \"mode\": \"layers\",\n  \"classes\": x\n}") {
            Err(FormatError::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_arch(r#"{"mode":"graph","input_shape":[1,1,1],"classes":2}"#),
            Err(FormatError::Mode(_))
        ));
        assert!(matches!(
            parse_arch(r#"{"mode":"module","input_shape":[1,1,1],"classes":2}"#),
            Err(FormatError::Missing { .. })
        ));
    }

    #[test]
    fn module_round_trip() {
        let text = r#"{"branches":[{"branch_type":"conv-none","channels":16,"filter_width":3,"pooling_width":2,"propagate":true,"src1":0,"src2":0}],"classes":10,"input_shape":[32,32,3],"mode":"module","stacking":{"repeats":6,"stages":3}}"#;
        let a = parse_arch(text).unwrap();
        assert_eq!(canonical_serialize(&a), text);
    }
}
