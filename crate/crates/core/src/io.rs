//! Input formats: DIMACS edge lists, partition lists, polynomial programs.

use thiserror::Error;

use crate::apps::GraphInstance;
use crate::polya::PopInstance;

#[derive(Debug, Error, PartialEq)]
pub enum InputError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

fn at(line: usize, msg: impl Into<String>) -> InputError {
    InputError::Line { line, msg: msg.into() }
}

/// DIMACS edge format: `c` comments, one `p edge N M` header, `e i j` lines (1-indexed).
pub fn parse_dimacs(text: &str) -> Result<GraphInstance, InputError> {
    let mut n = None;
    let mut declared = 0usize;
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut it = raw.split_whitespace();
        match it.next() {
            None | Some("c") => {}
            Some("p") => {
                if n.is_some() {
                    return Err(at(line, "duplicate problem line"));
                }
                let kind = it.next().ok_or_else(|| at(line, "missing problem kind"))?;
                if kind != "edge" && kind != "col" {
                    return Err(at(line, format!("unsupported problem kind '{kind}'")));
                }
                let nodes: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| at(line, "bad node count"))?;
                declared = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| at(line, "bad edge count"))?;
                n = Some(nodes);
            }
            Some("e") => {
                let nodes = n.ok_or_else(|| at(line, "edge before problem line"))?;
                let mut end = || -> Result<usize, InputError> {
                    let v: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| at(line, "bad edge endpoint"))?;
                    if v == 0 || v > nodes {
                        return Err(at(line, format!("node {v} out of range 1..={nodes}")));
                    }
                    Ok(v - 1)
                };
                let (i, j) = (end()?, end()?);
                if i == j {
                    return Err(at(line, "self-loop"));
                }
                edges.push((i, j));
            }
            Some(other) => return Err(at(line, format!("unknown line type '{other}'"))),
        }
    }
    let n = n.ok_or_else(|| InputError::Invalid("missing 'p edge N M' line".into()))?;
    if declared != edges.len() {
        eprintln!("warning: header declares {declared} edges, found {}", edges.len());
    }
    Ok(GraphInstance::new(n, &edges))
}

pub fn write_dimacs(g: &GraphInstance) -> String {
    let edges = g.edges();
    let mut s = format!("p edge {} {}\n", g.n, edges.len());
    for (i, j) in edges {
        s.push_str(&format!("e {} {}\n", i + 1, j + 1));
    }
    s
}

/// Whitespace-separated positive integers.
pub fn parse_partition(text: &str) -> Result<Vec<u64>, InputError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        for tok in raw.split_whitespace() {
            let v: u64 = tok.parse().map_err(|_| at(idx + 1, format!("not a positive integer: '{tok}'")))?;
            if v == 0 {
                return Err(at(idx + 1, "entries must be positive"));
            }
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(InputError::Invalid("empty partition instance".into()));
    }
    Ok(out)
}

fn json_error(e: serde_json::Error) -> InputError {
    if e.line() > 0 {
        at(e.line(), e.to_string())
    } else {
        InputError::Invalid(e.to_string())
    }
}

/// `{"objective": <polynomial>, "constraints": [...], "radius": R}`
pub fn parse_pop(text: &str) -> Result<PopInstance, InputError> {
    let raw: crate::polya::PopJson = serde_json::from_str(text).map_err(json_error)?;
    PopInstance::new(raw.objective, raw.constraints, raw.radius).map_err(|e| InputError::Invalid(e.to_string()))
}

pub fn parse_polynomial(text: &str) -> Result<crate::poly::Polynomial, InputError> {
    serde_json::from_str(text).map_err(json_error)
}
