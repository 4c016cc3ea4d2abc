//! Structure files: nodes, members, self-stress basis, typology and the
//! cell history, in canonical order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{node_key, toml_error};
use crate::engine::Design;
use crate::error::{MorphoError, Result};
use crate::geometry::Point3;
use crate::morpho_graph::MorphoGraph;
use crate::structure::{Member, MemberRole, StructureState};
use crate::CellId;

pub const STRUCTURE_VERSION: u32 = 1;
const FORMAT: &str = "cellmorph-structure";

/// Serialized design; the service's JSON uses the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureFile {
    pub format: String,
    pub version: u32,
    pub members: Vec<Member>,
    /// One column per self-stress state, aligned with `members`.
    pub basis: Vec<Vec<f64>>,
    /// Organism behind each column.
    pub origins: Vec<CellId>,
    pub typology: Vec<MemberRole>,
    pub nodes: BTreeMap<String, Point3>,
    pub morpho: MorphoGraph,
}

impl StructureFile {
    pub fn from_design(d: &Design) -> Self {
        let s = &d.state;
        StructureFile {
            format: FORMAT.into(),
            version: STRUCTURE_VERSION,
            members: s.members().to_vec(),
            basis: s.basis().to_vec(),
            origins: s.origins().to_vec(),
            typology: s.typology().to_vec(),
            nodes: s.nodes().iter().map(|(k, p)| (k.to_string(), *p)).collect(),
            morpho: d.morpho.clone(),
        }
    }

    pub fn into_design(self) -> Result<Design> {
        if self.format != FORMAT {
            return Err(MorphoError::Parse {
                line: 1,
                message: format!("expected format \"{FORMAT}\", found \"{}\"", self.format),
            });
        }
        if self.version != STRUCTURE_VERSION {
            return Err(MorphoError::Parse {
                line: 1,
                message: format!("unsupported structure version {}", self.version),
            });
        }
        let mut nodes = BTreeMap::new();
        for (k, p) in self.nodes {
            if !p.is_finite() {
                return Err(MorphoError::Usage(format!("node {k} has non-finite coordinates")));
            }
            nodes.insert(node_key(&k, 0)?, p);
        }
        let state = StructureState::new(nodes, self.members, self.basis, self.origins, self.typology)?;
        Ok(Design {
            state,
            morpho: self.morpho,
        })
    }
}

pub fn structure_to_string(d: &Design) -> Result<String> {
    toml::to_string(&StructureFile::from_design(d)).map_err(|e| MorphoError::Io(e.to_string()))
}

pub fn parse_structure(text: &str) -> Result<Design> {
    let raw: StructureFile = toml::from_str(text).map_err(|e| toml_error(text, e))?;
    raw.into_design()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_script, EngineConfig};
    use crate::fixtures;

    #[test]
    fn round_trip_is_lossless() {
        let run = run_script(&fixtures::three_cell_script(), &EngineConfig::default()).unwrap();
        let text = structure_to_string(&run.design).unwrap();
        let back = parse_structure(&text).unwrap();
        assert_eq!(back, run.design);
        assert_eq!(structure_to_string(&back).unwrap(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let run = run_script(&fixtures::triplex_script(), &EngineConfig::default()).unwrap();
        let text = structure_to_string(&run.design).unwrap();
        let bad = format!("extra = 1\n{text}");
        assert!(matches!(parse_structure(&bad), Err(MorphoError::Parse { line: 1, .. })));
    }
}
