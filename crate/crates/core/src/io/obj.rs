//! Wavefront OBJ: one vertex per node, one line element per member, grouped
//! by typology.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{MorphoError, Result};
use crate::structure::{MemberRole, StructureState};

pub fn to_obj(state: &StructureState) -> Result<String> {
    if state.nodes().is_empty() || state.members().is_empty() {
        return Err(MorphoError::Usage("cannot export an empty structure".into()));
    }
    let index: std::collections::BTreeMap<_, usize> =
        state.nodes().keys().enumerate().map(|(i, n)| (*n, i + 1)).collect();
    let count = |r: MemberRole| state.typology().iter().filter(|t| **t == r).count();
    let mut out = String::new();
    let _ = writeln!(out, "# cellmorph tensegrity");
    let _ = writeln!(
        out,
        "# nodes {} members {} dim_w {} struts {} cables {}",
        state.nodes().len(),
        state.members().len(),
        state.dim_w(),
        count(MemberRole::Strut),
        count(MemberRole::Cable)
    );
    for (id, p) in state.nodes() {
        let _ = writeln!(out, "# node {id}");
        let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
    }
    for (group, role) in [
        ("struts", MemberRole::Strut),
        ("cables", MemberRole::Cable),
        ("removed-candidates", MemberRole::RemovedCandidate),
        ("unassigned", MemberRole::Unassigned),
    ] {
        if count(role) == 0 {
            continue;
        }
        let _ = writeln!(out, "g {group}");
        for (m, r) in state.members().iter().zip(state.typology()) {
            if *r == role {
                let _ = writeln!(out, "l {} {}", index[&m.lo()], index[&m.hi()]);
            }
        }
    }
    Ok(out)
}

pub fn export_obj(state: &StructureState, path: &Path) -> Result<()> {
    let text = to_obj(state)?;
    std::fs::write(path, text).map_err(|e| MorphoError::Io(format!("{}: {e}", path.display())))
}
