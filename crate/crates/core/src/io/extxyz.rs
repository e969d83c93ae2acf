//! Extended XYZ: a count line, a `key=value` comment line and one row per
//! atom whose columns are declared by `Properties=name:type:count:...`.

use super::elements;
use crate::geometry::AtomicStructure;
use crate::numeric::mat3::Mat3;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line} (frame {frame}): {msg}")]
pub struct ParseError {
    /// 1-based
    pub line: usize,
    /// 0-based
    pub frame: usize,
    pub msg: String,
}

/// Which comment-line key holds the energy and which property holds the
/// forces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtxyzOptions {
    pub energy_key: String,
    pub forces_key: String,
}

impl Default for ExtxyzOptions {
    fn default() -> Self {
        ExtxyzOptions {
            energy_key: "energy".into(),
            forces_key: "forces".into(),
        }
    }
}

/// Splits `a=1 b="x y z" flag` into pairs; bare keys get an empty value.
fn comment_pairs(line: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            return Ok(out);
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        if chars.peek() != Some(&'=') {
            out.push((key, String::new()));
            continue;
        }
        chars.next();
        let mut val = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some(c) => val.push(c),
                    None => return Err(format!("unterminated quote in value of `{key}`")),
                }
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                val.push(c);
                chars.next();
            }
        }
        out.push((key, val));
    }
}

fn parse_bool(tok: &str) -> Option<bool> {
    match tok {
        "T" | "t" | "True" | "true" | "1" => Some(true),
        "F" | "f" | "False" | "false" | "0" => Some(false),
        _ => None,
    }
}

#[derive(Debug)]
struct Column {
    name: String,
    kind: char,
    width: usize,
    start: usize,
}

fn parse_properties(spec: &str) -> Result<Vec<Column>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() % 3 != 0 || parts.is_empty() {
        return Err(format!("Properties `{spec}` is not a list of name:type:count"));
    }
    let mut cols = Vec::new();
    let mut start = 0;
    for t in parts.chunks(3) {
        let kind = match t[1] {
            "S" | "R" | "I" | "L" => t[1].chars().next().unwrap(),
            k => return Err(format!("unknown property type `{k}`")),
        };
        let width: usize = t[2]
            .parse()
            .map_err(|_| format!("bad column count `{}` for `{}`", t[2], t[0]))?;
        cols.push(Column {
            name: t[0].to_string(),
            kind,
            width,
            start,
        });
        start += width;
    }
    Ok(cols)
}

struct Frame {
    n: usize,
    lattice: Option<Mat3<f64>>,
    pbc: Option<[bool; 3]>,
    energy: Option<f64>,
    cols: Vec<Column>,
}

fn parse_header(comment: &str, opts: &ExtxyzOptions) -> Result<(Option<Mat3<f64>>, Option<[bool; 3]>, Option<f64>, Vec<Column>), String> {
    let mut lattice = None;
    let mut pbc = None;
    let mut energy = None;
    let mut props = None;
    for (k, v) in comment_pairs(comment)? {
        if k.eq_ignore_ascii_case("lattice") {
            let x: Vec<f64> = v
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| format!("Lattice `{v}` is not numeric"))?;
            if x.len() != 9 {
                return Err(format!("Lattice needs 9 numbers, got {}", x.len()));
            }
            lattice = Some(std::array::from_fn(|i| std::array::from_fn(|j| x[3 * i + j])));
        } else if k.eq_ignore_ascii_case("properties") {
            props = Some(parse_properties(&v)?);
        } else if k.eq_ignore_ascii_case("pbc") {
            let b: Vec<bool> = v
                .split_whitespace()
                .map(parse_bool)
                .collect::<Option<_>>()
                .ok_or_else(|| format!("pbc `{v}` is not a list of booleans"))?;
            pbc = Some(match b.len() {
                1 => [b[0]; 3],
                3 => [b[0], b[1], b[2]],
                n => return Err(format!("pbc needs 1 or 3 values, got {n}")),
            });
        } else if k == opts.energy_key {
            energy = Some(
                v.parse::<f64>()
                    .map_err(|_| format!("{} `{v}` is not a number", opts.energy_key))?,
            );
        }
    }
    // plain XYZ: symbol and position only
    let cols = match props {
        Some(c) => c,
        None => parse_properties("species:S:1:pos:R:3")?,
    };
    Ok((lattice, pbc, energy, cols))
}

fn find<'a>(cols: &'a [Column], name: &str) -> Option<&'a Column> {
    cols.iter().find(|c| c.name == name)
}

fn build(frame: &Frame, rows: &[(usize, Vec<&str>)], opts: &ExtxyzOptions, fidx: usize) -> Result<AtomicStructure, ParseError> {
    let err = |line: usize, msg: String| ParseError {
        line,
        frame: fidx,
        msg,
    };
    let head = rows.first().map_or(0, |r| r.0);
    let pos_col = find(&frame.cols, "pos")
        .filter(|c| c.kind == 'R' && c.width == 3)
        .ok_or_else(|| err(head.saturating_sub(1), "Properties lacks pos:R:3".into()))?;
    let sym_col = find(&frame.cols, "species").filter(|c| c.width == 1);
    let z_col = find(&frame.cols, "Z").filter(|c| c.kind == 'I' && c.width == 1);
    if sym_col.is_none() && z_col.is_none() {
        return Err(err(head.saturating_sub(1), "Properties lacks species or Z".into()));
    }
    let f_col = match find(&frame.cols, &opts.forces_key) {
        Some(c) if c.kind == 'R' && c.width == 3 => Some(c),
        Some(_) => return Err(err(head.saturating_sub(1), format!("{} must be R:3", opts.forces_key))),
        None => None,
    };
    let width: usize = frame.cols.iter().map(|c| c.width).sum();

    let mut positions = Vec::with_capacity(frame.n);
    let mut species = Vec::with_capacity(frame.n);
    let mut forces = f_col.map(|_| Vec::with_capacity(frame.n));
    for (line, toks) in rows {
        if toks.len() != width {
            return Err(err(*line, format!("expected {width} columns, found {}", toks.len())));
        }
        let real3 = |c: &Column| -> Result<[f64; 3], ParseError> {
            let mut v = [0.0; 3];
            for (k, x) in v.iter_mut().enumerate() {
                let t = toks[c.start + k];
                *x = t
                    .parse()
                    .map_err(|_| err(*line, format!("`{t}` in column {} is not a number", c.name)))?;
            }
            Ok(v)
        };
        positions.push(real3(pos_col)?);
        if let (Some(c), Some(f)) = (f_col, forces.as_mut()) {
            f.push(real3(c)?);
        }
        let z = match sym_col {
            Some(c) if c.kind == 'S' => {
                let t = toks[c.start];
                elements::atomic_number(t).ok_or_else(|| err(*line, format!("unknown element `{t}`")))?
            }
            Some(c) if c.kind == 'I' => {
                let t = toks[c.start];
                t.parse().map_err(|_| err(*line, format!("bad species number `{t}`")))?
            }
            _ => {
                let t = toks[z_col.unwrap().start];
                t.parse().map_err(|_| err(*line, format!("bad atomic number `{t}`")))?
            }
        };
        species.push(z);
    }
    let pbc = frame.pbc.unwrap_or(if frame.lattice.is_some() { [true; 3] } else { [false; 3] });
    let s = AtomicStructure {
        positions,
        species,
        cell: frame.lattice,
        pbc,
        energy: frame.energy,
        forces,
    };
    s.validate()
        .map_err(|e| err(head.saturating_sub(1), e.to_string()))?;
    Ok(s)
}

/// Parses every frame of an extended XYZ text.
pub fn parse_extxyz(text: &str, opts: &ExtxyzOptions) -> Result<Vec<AtomicStructure>, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let fidx = out.len();
        let err = |line: usize, msg: String| ParseError {
            line,
            frame: fidx,
            msg,
        };
        let n: usize = lines[i]
            .trim()
            .parse()
            .map_err(|_| err(i + 1, format!("expected an atom count, found `{}`", lines[i].trim())))?;
        if n == 0 {
            return Err(err(i + 1, "frame declares zero atoms".into()));
        }
        let comment = lines
            .get(i + 1)
            .ok_or_else(|| err(i + 2, "missing comment line".into()))?;
        let (lattice, pbc, energy, cols) = parse_header(comment, opts).map_err(|m| err(i + 2, m))?;
        let frame = Frame {
            n,
            lattice,
            pbc,
            energy,
            cols,
        };
        let first = i + 2;
        let mut rows = Vec::with_capacity(n);
        for k in 0..n {
            let ln = first + k;
            match lines.get(ln) {
                Some(l) if !l.trim().is_empty() => rows.push((ln + 1, l.split_whitespace().collect())),
                _ => {
                    return Err(err(
                        ln + 1,
                        format!("frame declares {n} atoms but only {k} rows follow"),
                    ))
                }
            }
        }
        // a non-count line right after the rows means the declared count is short
        if let Some(next) = lines.get(first + n) {
            let t = next.trim();
            if !t.is_empty() && t.parse::<usize>().is_err() {
                return Err(err(
                    first + n + 1,
                    format!("frame declares {n} atoms but more rows follow"),
                ));
            }
        }
        out.push(build(&frame, &rows, opts, fidx)?);
        i = first + n;
    }
    Ok(out)
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes frames with 17 significant digits, enough to re-read every
/// float bit-exactly.
pub fn write_extxyz<W: Write>(mut w: W, frames: &[AtomicStructure], opts: &ExtxyzOptions) -> std::io::Result<()> {
    for s in frames {
        let symbols: Option<Vec<&str>> = s.species.iter().map(|&z| elements::symbol(z)).collect();
        let mut props = match symbols {
            Some(_) => "species:S:1:pos:R:3".to_string(),
            None => "Z:I:1:pos:R:3".to_string(),
        };
        if s.forces.is_some() {
            props.push_str(&format!(":{}:R:3", opts.forces_key));
        }
        let mut comment = Vec::new();
        if let Some(h) = &s.cell {
            let v: Vec<String> = h.iter().flatten().map(|x| fmt(*x)).collect();
            comment.push(format!("Lattice=\"{}\"", v.join(" ")));
        }
        comment.push(format!("Properties={props}"));
        if let Some(e) = s.energy {
            comment.push(format!("{}={}", opts.energy_key, fmt(e)));
        }
        if s.cell.is_some() || s.pbc.iter().any(|b| *b) {
            let b: Vec<&str> = s.pbc.iter().map(|b| if *b { "T" } else { "F" }).collect();
            comment.push(format!("pbc=\"{}\"", b.join(" ")));
        }
        writeln!(w, "{}", s.n_atoms())?;
        writeln!(w, "{}", comment.join(" "))?;
        for i in 0..s.n_atoms() {
            let sp = match &symbols {
                Some(v) => v[i].to_string(),
                None => s.species[i].to_string(),
            };
            let p = s.positions[i];
            write!(w, "{sp} {} {} {}", fmt(p[0]), fmt(p[1]), fmt(p[2]))?;
            if let Some(f) = &s.forces {
                write!(w, " {} {} {}", fmt(f[i][0]), fmt(f[i][1]), fmt(f[i][2]))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
