//! Structure definition files.
//!
//! A plain-text, section-based format. Node indices are 1-based in files
//! (they are 0-based in the API). Blank lines and `#` comments are
//! ignored. Unknown sections and unknown keys are rejected.
//!
//! ```text
//! [nodes]           # one node per line: x y z (meters)
//! 0.0 0.0 0.0
//! 1.0 0.0 0.0
//!
//! [bars]            # node pair per line: i j
//! 1 2
//!
//! [strings]         # i j stiffness rest_length
//! 1 2 100.0 0.9
//!
//! [point_masses]    # node mass
//! 2 1.5
//!
//! [fixed_nodes]     # indices, whitespace separated
//! 1
//!
//! [pinned]          # node axis, axis in {x, y, z}
//! 2 y
//!
//! [materials]       # key = value
//! bar_density = 500.0
//! bar_radius = 0.05
//! damping = 0.0
//!
//! [gravity]         # gx gy gz
//! 0 0 -9.806
//!
//! [compressible]    # optional; enables the elastic-bar formulation
//! material = aluminium      # hdpe | aluminium | custom
//! # for material = custom:
//! # youngs_modulus = 68e9
//! # poisson_ratio = 0.33
//! # density = 2700
//! ```
//!
//! Bar masses are computed from `bar_density`, `bar_radius` and the
//! measured initial length (solid cylinders).

use nalgebra::Vector3;
use thiserror::Error;

use crate::compressible::Material;
use crate::topology::{Axis, NodePair, TensegrityStructure};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: duplicate section [{name}]")]
    DuplicateSection { line: usize, name: String },
    #[error("line {line}: data before any section header")]
    DataBeforeSection { line: usize },
    #[error("line {line}: expected {expected}, got `{got}`")]
    MalformedRow {
        line: usize,
        expected: &'static str,
        got: String,
    },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: node index {index} out of range 1..={count}")]
    IndexOutOfRange {
        line: usize,
        index: usize,
        count: usize,
    },
    #[error("missing required section [{0}]")]
    MissingSection(&'static str),
    #[error("[materials] must set `{0}` when bars are present")]
    MissingMaterial(&'static str),
    #[error("[compressible] material = custom requires `{0}`")]
    MissingCustomMaterial(&'static str),
    #[error("line {line}: unknown material `{name}` (hdpe, aluminium, custom)")]
    UnknownMaterial { line: usize, name: String },
}

/// A parsed structure definition plus the optional compressible block.
#[derive(Debug, Clone)]
pub struct ParsedModel {
    pub structure: TensegrityStructure<f64>,
    /// Present when the file carries a `[compressible]` section.
    pub bar_material: Option<Material<f64>>,
}

struct KeyValues {
    entries: Vec<(usize, String, String)>,
}

impl KeyValues {
    fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, k, _)| k == key)
            .map(|(_, _, v)| v.as_str())
    }

    fn number(&self, key: &str) -> Result<Option<f64>, ParseError> {
        match self.entries.iter().find(|(_, k, _)| k == key) {
            None => Ok(None),
            Some((line, _, v)) => {
                v.parse::<f64>()
                    .map(Some)
                    .map_err(|_| ParseError::MalformedRow {
                        line: *line,
                        expected: "a number",
                        got: v.clone(),
                    })
            }
        }
    }

    fn reject_unknown(&self, allowed: &[&str]) -> Result<(), ParseError> {
        for (line, key, _) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(ParseError::UnknownKey {
                    line: *line,
                    key: key.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Parses a structure definition from text.
pub fn parse_structure(text: &str) -> Result<ParsedModel, ParseError> {
    const SECTIONS: [&str; 9] = [
        "nodes",
        "bars",
        "strings",
        "point_masses",
        "fixed_nodes",
        "pinned",
        "materials",
        "gravity",
        "compressible",
    ];
    // Collect raw (line-number, content) rows per section.
    let mut rows: std::collections::HashMap<&str, Vec<(usize, String)>> =
        std::collections::HashMap::new();
    let mut current: Option<&str> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            match SECTIONS.iter().find(|&&s| s == name) {
                Some(&canonical) => {
                    if rows.contains_key(canonical) {
                        return Err(ParseError::DuplicateSection {
                            line,
                            name: name.to_string(),
                        });
                    }
                    rows.insert(canonical, Vec::new());
                    current = Some(canonical);
                }
                None => {
                    return Err(ParseError::UnknownSection {
                        line,
                        name: name.to_string(),
                    })
                }
            }
            continue;
        }
        match current {
            Some(section) => rows
                .get_mut(section)
                .expect("section initialized")
                .push((line, content.to_string())),
            None => return Err(ParseError::DataBeforeSection { line }),
        }
    }

    let node_rows = rows
        .remove("nodes")
        .ok_or(ParseError::MissingSection("nodes"))?;
    let mut nodes = Vec::with_capacity(node_rows.len());
    for (line, row) in &node_rows {
        let v = parse_numbers(*line, row, 3, "x y z")?;
        nodes.push(Vector3::new(v[0], v[1], v[2]));
    }
    let n = nodes.len();
    let mut s = TensegrityStructure::with_nodes(nodes);

    let node_index = |line: usize, tok: f64| -> Result<usize, ParseError> {
        let index = tok as usize;
        if tok.fract() != 0.0 || index == 0 || index > n {
            return Err(ParseError::IndexOutOfRange {
                line,
                index,
                count: n,
            });
        }
        Ok(index - 1)
    };

    for (line, row) in rows.remove("bars").unwrap_or_default() {
        let v = parse_numbers(line, &row, 2, "i j")?;
        s.bars.push(NodePair::new(
            node_index(line, v[0])?,
            node_index(line, v[1])?,
        ));
    }
    for (line, row) in rows.remove("strings").unwrap_or_default() {
        let v = parse_numbers(line, &row, 4, "i j stiffness rest_length")?;
        s.strings.push(NodePair::new(
            node_index(line, v[0])?,
            node_index(line, v[1])?,
        ));
        s.string_stiffness.push(v[2]);
        s.string_rest_lengths.push(v[3]);
    }
    for (line, row) in rows.remove("point_masses").unwrap_or_default() {
        let v = parse_numbers(line, &row, 2, "node mass")?;
        s.point_mass_nodes.push(node_index(line, v[0])?);
        s.point_masses.push(v[1]);
    }
    for (line, row) in rows.remove("fixed_nodes").unwrap_or_default() {
        for tok in row.split_whitespace() {
            let v = tok.parse::<f64>().map_err(|_| ParseError::MalformedRow {
                line,
                expected: "node indices",
                got: tok.to_string(),
            })?;
            s.fixed_nodes.push(node_index(line, v)?);
        }
    }
    for (line, row) in rows.remove("pinned").unwrap_or_default() {
        let mut toks = row.split_whitespace();
        let (Some(node_tok), Some(axis_tok), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(ParseError::MalformedRow {
                line,
                expected: "node axis",
                got: row.clone(),
            });
        };
        let v = node_tok
            .parse::<f64>()
            .map_err(|_| ParseError::MalformedRow {
                line,
                expected: "a node index",
                got: node_tok.to_string(),
            })?;
        let axis = match axis_tok {
            "x" => Axis::X,
            "y" => Axis::Y,
            "z" => Axis::Z,
            other => {
                return Err(ParseError::MalformedRow {
                    line,
                    expected: "axis x, y or z",
                    got: other.to_string(),
                })
            }
        };
        s.pinned_coords.push((node_index(line, v)?, axis));
    }

    let materials = key_values(rows.remove("materials").unwrap_or_default())?;
    materials.reject_unknown(&["bar_density", "bar_radius", "damping"])?;
    s.damping_coefficient = materials.number("damping")?.unwrap_or(0.0);
    if !s.bars.is_empty() {
        let density = materials
            .number("bar_density")?
            .ok_or(ParseError::MissingMaterial("bar_density"))?;
        let radius = materials
            .number("bar_radius")?
            .ok_or(ParseError::MissingMaterial("bar_radius"))?;
        for pair in &s.bars {
            let l = (s.nodes[pair.to] - s.nodes[pair.from]).norm();
            s.bar_masses
                .push(density * std::f64::consts::PI * radius * radius * l);
            s.bar_radii.push(radius);
        }
    }

    if let Some(gravity_rows) = rows.remove("gravity") {
        let mut it = gravity_rows.iter();
        match (it.next(), it.next()) {
            (Some((line, row)), None) => {
                let v = parse_numbers(*line, row, 3, "gx gy gz")?;
                s.gravity = Vector3::new(v[0], v[1], v[2]);
            }
            (Some(_), Some((line, row))) => {
                return Err(ParseError::MalformedRow {
                    line: *line,
                    expected: "a single gravity row",
                    got: row.clone(),
                })
            }
            _ => {}
        }
    }

    let bar_material = match rows.remove("compressible") {
        None => None,
        Some(kv_rows) => {
            let kv = key_values(kv_rows)?;
            kv.reject_unknown(&["material", "youngs_modulus", "poisson_ratio", "density"])?;
            let name = kv.get("material").unwrap_or("custom");
            match name {
                "custom" => {
                    let need = |key: &'static str| -> Result<f64, ParseError> {
                        kv.number(key)?
                            .ok_or(ParseError::MissingCustomMaterial(key))
                    };
                    Some(Material {
                        density: need("density")?,
                        youngs_modulus: need("youngs_modulus")?,
                        poisson_ratio: need("poisson_ratio")?,
                    })
                }
                other => match Material::by_name(other) {
                    Some(m) => Some(m),
                    None => {
                        let line = kv
                            .entries
                            .iter()
                            .find(|(_, k, _)| k == "material")
                            .map(|(l, _, _)| *l)
                            .unwrap_or(0);
                        return Err(ParseError::UnknownMaterial {
                            line,
                            name: other.to_string(),
                        });
                    }
                },
            }
        }
    };

    Ok(ParsedModel {
        structure: s,
        bar_material,
    })
}

fn parse_numbers(
    line: usize,
    row: &str,
    count: usize,
    expected: &'static str,
) -> Result<Vec<f64>, ParseError> {
    let toks: Vec<&str> = row.split_whitespace().collect();
    if toks.len() != count {
        return Err(ParseError::MalformedRow {
            line,
            expected,
            got: row.to_string(),
        });
    }
    toks.iter()
        .map(|t| {
            t.parse::<f64>().map_err(|_| ParseError::MalformedRow {
                line,
                expected,
                got: t.to_string(),
            })
        })
        .collect()
}

fn key_values(rows: Vec<(usize, String)>) -> Result<KeyValues, ParseError> {
    let mut entries = Vec::new();
    for (line, row) in rows {
        let Some((key, value)) = row.split_once('=') else {
            return Err(ParseError::MalformedRow {
                line,
                expected: "key = value",
                got: row,
            });
        };
        entries.push((line, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(KeyValues { entries })
}
