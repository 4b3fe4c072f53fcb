//! JSON serialization of graphs with an explicit schema version.
//!
//! Node and edge ids are stable across save/load (removed slots are kept as
//! explicit nulls). Unknown optional attributes on the graph, its states, or
//! its containers are tolerated: they load with a warning and are preserved
//! on the next save.

use std::fmt;

use super::{IrError, Sdfg};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadWarning {
    pub location: String,
    pub attribute: String,
}

impl fmt::Display for LoadWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unknown attribute `{}` on {} (kept for forward compatibility)",
            self.attribute, self.location
        )
    }
}

pub fn save_to_value(sdfg: &Sdfg) -> serde_json::Value {
    let mut value = serde_json::to_value(sdfg).expect("graph serialization cannot fail");
    value
        .as_object_mut()
        .expect("graph serializes to an object")
        .insert(
            "schema_version".to_string(),
            serde_json::Value::String(SCHEMA_VERSION.to_string()),
        );
    value
}

/// Serializes a validated graph to its canonical pretty-printed document.
pub fn save(sdfg: &Sdfg) -> String {
    let mut text = serde_json::to_string_pretty(&save_to_value(sdfg))
        .expect("graph serialization cannot fail");
    text.push('\n');
    text
}

pub fn load_from_value(value: serde_json::Value) -> Result<(Sdfg, Vec<LoadWarning>), IrError> {
    let mut value = value;
    let object = value
        .as_object_mut()
        .ok_or_else(|| IrError::Malformed("document is not an object".to_string()))?;
    match object.remove("schema_version") {
        Some(serde_json::Value::String(v)) if v == SCHEMA_VERSION => {}
        Some(serde_json::Value::String(v)) => {
            return Err(IrError::SchemaVersion {
                found: v,
                supported: SCHEMA_VERSION.to_string(),
            })
        }
        _ => {
            return Err(IrError::Malformed(
                "missing `schema_version`".to_string(),
            ))
        }
    }
    let sdfg: Sdfg =
        serde_json::from_value(value).map_err(|e| IrError::Malformed(e.to_string()))?;
    let mut warnings = Vec::new();
    for key in sdfg.extra.keys() {
        warnings.push(LoadWarning {
            location: format!("graph `{}`", sdfg.name),
            attribute: key.clone(),
        });
    }
    for desc in sdfg.containers.values() {
        for key in desc.extra.keys() {
            warnings.push(LoadWarning {
                location: format!("container `{}`", desc.name),
                attribute: key.clone(),
            });
        }
    }
    for state in &sdfg.states {
        for key in state.extra.keys() {
            warnings.push(LoadWarning {
                location: format!("state `{}`", state.name),
                attribute: key.clone(),
            });
        }
    }
    Ok((sdfg, warnings))
}

/// Parses a document produced by [`save`].
pub fn load(text: &str) -> Result<(Sdfg, Vec<LoadWarning>), IrError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| IrError::Malformed(e.to_string()))?;
    load_from_value(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{DataDescriptor, ElementType, Memlet, NodeKind, Tasklet};
    use crate::symbolic::SymExpr;

    fn tiny_graph() -> Sdfg {
        let mut g = Sdfg::new("tiny");
        g.add_symbol("n");
        g.add_container(DataDescriptor::array(
            "x",
            ElementType::F32,
            vec![SymExpr::sym("n")],
        ))
        .unwrap();
        g.add_container(DataDescriptor::array(
            "y",
            ElementType::F32,
            vec![SymExpr::sym("n")],
        ))
        .unwrap();
        let st = g.add_state("main");
        let state = g.state_mut(st);
        let x = state.access(None, "x");
        let y = state.access(None, "y");
        let (entry, exit) = state.map_scope(
            None,
            vec!["i"],
            vec![crate::ir::RangeExpr::span(
                SymExpr::zero(),
                SymExpr::sym("n").sub(&SymExpr::one()),
            )],
            crate::ir::MapSchedule::Pipelined,
        );
        let t = state.tasklet_node(
            Some(entry),
            Tasklet::parse("copy", &["a"], &["b"], "b = a + 1.0").unwrap(),
        );
        let xd = g.container("x").unwrap().clone();
        let yd = g.container("y").unwrap().clone();
        let st_mut = g.state_mut(st);
        st_mut.connect(x, None, entry, Some("in_x"), Memlet::all(&xd));
        st_mut.connect(
            entry,
            Some("out_x"),
            t,
            Some("a"),
            Memlet::element("x", vec![SymExpr::sym("i")]),
        );
        st_mut.connect(
            t,
            Some("b"),
            exit,
            Some("in_y"),
            Memlet::element("y", vec![SymExpr::sym("i")]),
        );
        st_mut.connect(exit, Some("out_y"), y, None, Memlet::all(&yd));
        crate::ir::path::autovolume(&mut g, st);
        g
    }

    #[test]
    fn roundtrip_identity() {
        let g = tiny_graph();
        assert!(crate::ir::validate(&g).is_empty());
        let text = save(&g);
        let (loaded, warnings) = load(&text).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(g, loaded);
        assert_eq!(save(&loaded), text);
    }

    #[test]
    fn schema_version_mismatch() {
        let g = tiny_graph();
        let text = save(&g).replace("\"schema_version\": \"1\"", "\"schema_version\": \"99\"");
        match load(&text) {
            Err(IrError::SchemaVersion { found, .. }) => assert_eq!(found, "99"),
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn unknown_attribute_warns_and_survives() {
        let g = tiny_graph();
        let mut value = save_to_value(&g);
        value["containers"]["x"]["alignment_hint"] = serde_json::json!(64);
        let (loaded, warnings) = load_from_value(value).unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].attribute, "alignment_hint");
        let again = save_to_value(&loaded);
        assert_eq!(again["containers"]["x"]["alignment_hint"], 64);
    }

    #[test]
    fn unknown_node_variant_rejected() {
        let g = tiny_graph();
        let text = save(&g).replace("\"type\": \"access\"", "\"type\": \"warp_gate\"");
        match load(&text) {
            Err(IrError::Malformed(msg)) => assert!(msg.contains("warp_gate") || msg.contains("variant")),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn missing_container_rejected() {
        let g = tiny_graph();
        let mut value = save_to_value(&g);
        value.as_object_mut().unwrap().remove("containers");
        // Memlets now reference undeclared containers: the document still
        // parses (empty default) but validation flags it.
        let (loaded, _) = load_from_value(value).unwrap();
        let diags = crate::ir::validate(&loaded);
        assert!(diags.iter().any(|d| d.rule == "edge.undeclared-container"));
    }
}
