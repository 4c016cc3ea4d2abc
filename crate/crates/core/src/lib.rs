//! Cellular morphogenesis of tensegrity structures.
//!
//! A structure grows from a single K5 cell. New cells are glued on by
//! adhesion (sharing three or four nodes) and superfluous members are taken
//! out by fusion, which is only possible when the self-stress states can be
//! combined to cancel the removed members. The engine keeps an explicit
//! self-stress basis throughout and checks it against an SVD nullspace.
//!
//! ```
//! use cellmorph::fixtures;
//! use cellmorph::engine::{run_script, EngineConfig};
//!
//! let run = run_script(&fixtures::triplex_script(), &EngineConfig::default()).unwrap();
//! let s = &run.design.state;
//! assert_eq!((s.nodes().len(), s.members().len(), s.dim_w()), (6, 12, 1));
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub mod cell;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod morpho_graph;
pub mod par;
pub mod placement;
pub mod structure;

pub use cell::{cell_self_stress, classify_cell, CellKind, CellSpec, CellStress};
pub use error::{MorphoError, Result};
pub use geometry::{LinearForm3, Point3};
pub use morpho_graph::{MorphoGraph, OrganismKind};
pub use structure::{CountReport, Member, MemberRole, StructureState};

/// Node identifier. Scripts and files use plain integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl From<u32> for NodeId {
    fn from(v: u32) -> Self {
        NodeId(v)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for NodeId {
    type Err = MorphoError;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .parse::<u32>()
            .map(NodeId)
            .map_err(|_| MorphoError::Usage(format!("invalid node id `{s}`")))
    }
}

/// Identifier of a cell, virtual cell or fused cell in the history graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(pub u32);

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}
