//! File formats: TOML scripts and structure files, OBJ export.
//!
//! Both text formats carry a `format` tag and a `version`, reject unknown
//! keys and report errors with line numbers. Floats are written in the
//! shortest form that reads back to the same binary64 value.

mod obj;
mod script;
mod structure_file;

pub use obj::{export_obj, to_obj};
pub use script::{parse_script, script_to_string};
pub use structure_file::{parse_structure, structure_to_string, StructureFile, STRUCTURE_VERSION};

use crate::error::MorphoError;

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

fn toml_error(text: &str, e: toml::de::Error) -> MorphoError {
    let line = e.span().map_or(0, |s| line_of(text, s.start));
    MorphoError::Parse {
        line,
        message: e.message().to_string(),
    }
}

fn node_key(k: &str, line: usize) -> Result<crate::NodeId, MorphoError> {
    k.parse().map_err(|_| MorphoError::Parse {
        line,
        message: format!("node key `{k}` is not an integer id"),
    })
}
