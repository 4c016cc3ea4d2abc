//! Script files.
//!
//! ```toml
//! format = "cellmorph-script"
//! version = 1
//! name = "triplex"
//!
//! [[step]]
//! op = "seed"
//! nodes = [1, 2, 3, 4, 5]
//! coords = [[1.0, 0.0, 0.0], [-0.5, 0.866, 0.0], ...]
//! anchor = [1, 2]
//!
//! [[step]]
//! op = "adhere"
//! nodes = [2, 3, 4, 5, 6]
//! new_nodes = { 6 = [-0.866, -0.5, 1.0] }
//! expect = { dim_w = 2 }
//!
//! [[step]]
//! op = "fuse"
//! members = [[2, 4], [3, 5]]
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use super::{line_of, node_key, toml_error};
use crate::cell::CellSpec;
use crate::engine::{CellInput, Expect, MorphoScript, MorphoStep, ScriptStep};
use crate::error::{MorphoError, Result};
use crate::geometry::Point3;
use crate::placement::PlacementRequest;
use crate::structure::Member;
use crate::NodeId;

const FORMAT: &str = "cellmorph-script";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScript {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default)]
    step: Vec<Spanned<RawStep>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nodes: Option<Vec<NodeId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<Point3>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    new_nodes: Option<BTreeMap<String, Point3>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor: Option<Member>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    members: Option<Vec<Member>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    at: Option<Point3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    constraint: Option<PlacementRequest>,
    #[serde(default, skip_serializing_if = "Expect::is_empty")]
    expect: Expect,
}

fn five(nodes: Option<Vec<NodeId>>, line: usize) -> Result<[NodeId; 5]> {
    let v = nodes.ok_or_else(|| bad(line, "missing `nodes`"))?;
    v.try_into()
        .map_err(|v: Vec<NodeId>| bad(line, &format!("a cell has 5 nodes, got {}", v.len())))
}

fn bad(line: usize, message: &str) -> MorphoError {
    MorphoError::Parse {
        line,
        message: message.to_string(),
    }
}

fn forbid(line: usize, op: &str, fields: &[(&str, bool)]) -> Result<()> {
    for (name, present) in fields {
        if *present {
            return Err(bad(line, &format!("`{name}` is not allowed in a {op} step")));
        }
    }
    Ok(())
}

fn convert(raw: RawStep, line: usize) -> Result<ScriptStep> {
    let step = match raw.op.as_str() {
        "seed" => {
            forbid(line, "seed", &[
                ("new_nodes", raw.new_nodes.is_some()),
                ("members", raw.members.is_some()),
                ("node", raw.node.is_some()),
                ("at", raw.at.is_some()),
                ("constraint", raw.constraint.is_some()),
            ])?;
            let nodes = five(raw.nodes, line)?;
            let coords: [Point3; 5] = raw
                .coords
                .ok_or_else(|| bad(line, "missing `coords`"))?
                .try_into()
                .map_err(|_| bad(line, "a seed needs 5 coordinates"))?;
            let anchor = raw.anchor.unwrap_or_else(|| Member::new(nodes[0], nodes[1]));
            let spec = CellSpec::new(nodes, coords, anchor, raw.anchor_value.unwrap_or(1.0))
                .map_err(|e| bad(line, &e.to_string()))?;
            MorphoStep::Seed(spec)
        }
        "adhere" => {
            forbid(line, "adhere", &[
                ("coords", raw.coords.is_some()),
                ("members", raw.members.is_some()),
                ("node", raw.node.is_some()),
                ("at", raw.at.is_some()),
                ("constraint", raw.constraint.is_some()),
            ])?;
            let nodes = five(raw.nodes, line)?;
            let mut new_nodes = BTreeMap::new();
            for (k, p) in raw.new_nodes.unwrap_or_default() {
                new_nodes.insert(node_key(&k, line)?, p);
            }
            MorphoStep::Adhere(CellInput {
                nodes,
                new_nodes,
                anchor: raw.anchor,
                anchor_value: raw.anchor_value.unwrap_or(1.0),
            })
        }
        "fuse" => {
            forbid(line, "fuse", &[
                ("nodes", raw.nodes.is_some()),
                ("coords", raw.coords.is_some()),
                ("new_nodes", raw.new_nodes.is_some()),
                ("anchor", raw.anchor.is_some()),
                ("anchor_value", raw.anchor_value.is_some()),
                ("node", raw.node.is_some()),
                ("at", raw.at.is_some()),
                ("constraint", raw.constraint.is_some()),
            ])?;
            let members = raw.members.ok_or_else(|| bad(line, "missing `members`"))?;
            if members.is_empty() {
                return Err(bad(line, "`members` is empty"));
            }
            MorphoStep::Fuse { members }
        }
        "place" => {
            forbid(line, "place", &[
                ("nodes", raw.nodes.is_some()),
                ("coords", raw.coords.is_some()),
                ("new_nodes", raw.new_nodes.is_some()),
                ("anchor", raw.anchor.is_some()),
                ("anchor_value", raw.anchor_value.is_some()),
                ("members", raw.members.is_some()),
            ])?;
            MorphoStep::Place {
                node: raw.node.ok_or_else(|| bad(line, "missing `node`"))?,
                at: raw.at.ok_or_else(|| bad(line, "missing `at`"))?,
                constraint: raw.constraint,
            }
        }
        other => return Err(bad(line, &format!("unknown op `{other}`"))),
    };
    Ok(ScriptStep {
        step,
        expect: raw.expect,
    })
}

/// Parses a script; the first step must be the only seed.
pub fn parse_script(text: &str) -> Result<MorphoScript> {
    let raw: RawScript = toml::from_str(text).map_err(|e| toml_error(text, e))?;
    if raw.format != FORMAT {
        return Err(bad(1, &format!("expected format \"{FORMAT}\", found \"{}\"", raw.format)));
    }
    if raw.version != VERSION {
        return Err(bad(1, &format!("unsupported script version {}", raw.version)));
    }
    if raw.step.is_empty() {
        return Err(bad(line_of(text, text.len()), "no seed step"));
    }
    let mut steps = Vec::with_capacity(raw.step.len());
    for (i, s) in raw.step.into_iter().enumerate() {
        let line = line_of(text, s.span().start);
        let step = convert(s.into_inner(), line)?;
        let is_seed = matches!(step.step, MorphoStep::Seed(_));
        if i == 0 && !is_seed {
            return Err(bad(line, "no seed step: the first step must be a seed"));
        }
        if i > 0 && is_seed {
            return Err(bad(line, "only the first step may be a seed"));
        }
        steps.push(step);
    }
    Ok(MorphoScript {
        name: raw.name,
        steps,
    })
}

fn to_raw(s: &ScriptStep) -> RawStep {
    let mut r = RawStep {
        op: s.step.name().to_string(),
        expect: s.expect,
        ..RawStep::default()
    };
    match &s.step {
        MorphoStep::Seed(spec) => {
            r.nodes = Some(spec.nodes().to_vec());
            r.coords = Some(spec.coords().to_vec());
            r.anchor = Some(spec.anchor());
            r.anchor_value = Some(spec.anchor_value());
        }
        MorphoStep::Adhere(c) => {
            r.nodes = Some(c.nodes.to_vec());
            if !c.new_nodes.is_empty() {
                r.new_nodes = Some(c.new_nodes.iter().map(|(k, p)| (k.to_string(), *p)).collect());
            }
            r.anchor = c.anchor;
            r.anchor_value = Some(c.anchor_value);
        }
        MorphoStep::Fuse { members } => r.members = Some(members.clone()),
        MorphoStep::Place { node, at, constraint } => {
            r.node = Some(*node);
            r.at = Some(*at);
            r.constraint = constraint.clone();
        }
    }
    r
}

pub fn script_to_string(script: &MorphoScript) -> Result<String> {
    let raw = RawScript {
        format: FORMAT.into(),
        version: VERSION,
        name: script.name.clone(),
        step: script.steps.iter().map(|s| Spanned::new(0..0, to_raw(s))).collect(),
    };
    toml::to_string(&raw).map_err(|e| MorphoError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn fixtures_round_trip() {
        for s in [fixtures::three_cell_script(), fixtures::triplex_script(), fixtures::icosahedron_script()] {
            let text = script_to_string(&s).unwrap();
            let back = parse_script(&text).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn errors_carry_lines() {
        assert!(matches!(
            parse_script("format = \"cellmorph-script\"\nversion = 1\n"),
            Err(MorphoError::Parse { .. })
        ));
        let text = "format = \"cellmorph-script\"\nversion = 1\n\n[[step]]\nop = \"fuse\"\nmembers = [[1, 2]]\n";
        let Err(MorphoError::Parse { line, message }) = parse_script(text) else {
            panic!("expected a parse error");
        };
        assert_eq!(line, 4);
        assert!(message.contains("seed"));
        let text = "format = \"cellmorph-script\"\nversion = 1\n\n[[step]]\nop = \"seed\"\ncolour = 3\n";
        let Err(MorphoError::Parse { line, message }) = parse_script(text) else {
            panic!("expected a parse error");
        };
        assert_eq!(line, 6);
        assert!(message.contains("colour"), "{message}");
    }

    #[test]
    fn expectations_are_kept() {
        let s = parse_script(&script_to_string(&fixtures::three_cell_script()).unwrap()).unwrap();
        assert_eq!(s.steps[2].expect.dim_w, Some(4));
    }
}
