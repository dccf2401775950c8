//! Deterministic text serialization of standard-form conic programs.
//!
//! Format (`conicprogram v1`), one record per line, whitespace-separated:
//!
//! ```text
//! conicprogram v1
//! sense min|max
//! vars <count>
//! block free|nonneg <len>          (one line per variable block, in order)
//! block psd <dim>
//! obj <nterms> {<idx> <coef>}* <constant>
//! eq <count>                       (then one row line per equality)
//! row <nterms> {<idx> <coef>}* <rhs>
//! ineq <count>                     (then one row line per `<=` inequality)
//! row <nterms> {<idx> <coef>}* <rhs>
//! psdcon <count>                   (affine PSD constraints)
//! con <dim>                        (then one row line per triangle entry,
//! row <nterms> {<idx> <coef>}* <constant>   in PsdVar::entry order)
//! end
//! ```
//!
//! Row terms are sorted by variable index. Floats are written in Rust's
//! shortest round-trip decimal form, so `parse(dump(p)) == p` exactly.

use super::{ConeKind, ConicProgram, LinExpr, PsdConstraint, Row, Sense};
use crate::error::{Error, Result};
use std::fmt::Write as _;

/// Serialize a program to the documented deterministic text format.
pub fn dump_standard_form(p: &ConicProgram) -> String {
    let mut out = String::new();
    out.push_str("conicprogram v1\n");
    out.push_str(match p.sense {
        Sense::Minimize => "sense min\n",
        Sense::Maximize => "sense max\n",
    });
    let _ = writeln!(out, "vars {}", p.num_vars);
    for b in &p.blocks {
        match b.kind {
            ConeKind::Free => {
                let _ = writeln!(out, "block free {}", b.len);
            }
            ConeKind::NonNeg => {
                let _ = writeln!(out, "block nonneg {}", b.len);
            }
            ConeKind::Psd { dim } => {
                let _ = writeln!(out, "block psd {dim}");
            }
        }
    }
    let _ = write!(out, "obj {}", p.objective.len());
    for &(i, c) in &p.objective {
        let _ = write!(out, " {i} {c}");
    }
    let _ = writeln!(out, " {}", p.obj_constant);
    let write_rows = |out: &mut String, name: &str, rows: &[Row]| {
        let _ = writeln!(out, "{name} {}", rows.len());
        for r in rows {
            let _ = write!(out, "row {}", r.terms.len());
            for &(i, c) in &r.terms {
                let _ = write!(out, " {i} {c}");
            }
            let _ = writeln!(out, " {}", r.rhs);
        }
    };
    write_rows(&mut out, "eq", &p.eq_rows);
    write_rows(&mut out, "ineq", &p.le_rows);
    let _ = writeln!(out, "psdcon {}", p.psd_constraints.len());
    for pc in &p.psd_constraints {
        let _ = writeln!(out, "con {}", pc.dim);
        for e in &pc.entries {
            let _ = write!(out, "row {}", e.terms.len());
            for &(i, c) in &e.terms {
                let _ = write!(out, " {i} {c}");
            }
            let _ = writeln!(out, " {}", e.constant);
        }
    }
    out.push_str("end\n");
    out
}

/// Parse a document produced by [`dump_standard_form`].
pub fn parse_standard_form(text: &str) -> Result<ConicProgram> {
    let lines: Vec<&str> = text.lines().collect();
    let mut cursor = 0usize;
    let mut next = |what: &str| -> Result<&str> {
        let line = lines
            .get(cursor)
            .copied()
            .ok_or_else(|| Error::Parse(format!("unexpected end of document, expected {what}")));
        cursor += 1;
        line
    };

    if next("header")? != "conicprogram v1" {
        return Err(Error::Parse("missing 'conicprogram v1' header".into()));
    }
    let sense = match next("sense")? {
        "sense min" => Sense::Minimize,
        "sense max" => Sense::Maximize,
        other => return Err(Error::Parse(format!("bad sense line '{other}'"))),
    };
    let vars_line = next("vars")?;
    let num_vars: usize = field(vars_line.strip_prefix("vars "), "vars")?;

    let mut p = ConicProgram::new();
    p.sense = sense;

    // Blocks until the obj line.
    let mut line = next("block or obj")?;
    while let Some(rest) = line.strip_prefix("block ") {
        let mut it = rest.split_whitespace();
        let kind = it.next().unwrap_or("");
        let n: usize = field(it.next(), "block size")?;
        match kind {
            "free" => {
                p.free_vars(n);
            }
            "nonneg" => {
                p.nonneg_vars(n);
            }
            "psd" => {
                p.psd_block(n);
            }
            other => return Err(Error::Parse(format!("unknown block kind '{other}'"))),
        }
        line = next("block or obj")?;
    }
    if p.num_vars != num_vars {
        return Err(Error::Parse(format!(
            "block lengths sum to {} but vars line says {num_vars}",
            p.num_vars
        )));
    }

    let obj_rest = line
        .strip_prefix("obj ")
        .ok_or_else(|| Error::Parse(format!("expected obj line, got '{line}'")))?;
    let (terms, constant) = parse_terms(obj_rest)?;
    p.objective = terms;
    p.obj_constant = constant;

    let mut read_rows = |name: &str| -> Result<Vec<Row>> {
        let header = next(name)?;
        let count: usize = field(header.strip_prefix(&format!("{name} ") as &str), name)?;
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            let l = next("row")?;
            let rest = l
                .strip_prefix("row ")
                .ok_or_else(|| Error::Parse(format!("expected row line, got '{l}'")))?;
            let (terms, rhs) = parse_terms(rest)?;
            rows.push(Row { terms, rhs });
        }
        Ok(rows)
    };
    p.eq_rows = read_rows("eq")?;
    p.le_rows = read_rows("ineq")?;
    let psd_header = next("psdcon")?;
    let psd_count: usize = field(psd_header.strip_prefix("psdcon "), "psdcon")?;
    for _ in 0..psd_count {
        let con = next("con")?;
        let dim: usize = field(con.strip_prefix("con "), "con dim")?;
        let mut entries = Vec::with_capacity(dim * (dim + 1) / 2);
        for _ in 0..dim * (dim + 1) / 2 {
            let l = next("row")?;
            let rest = l
                .strip_prefix("row ")
                .ok_or_else(|| Error::Parse(format!("expected row line, got '{l}'")))?;
            let (terms, constant) = parse_terms(rest)?;
            entries.push(LinExpr { terms, constant });
        }
        p.psd_constraints.push(PsdConstraint { dim, entries });
    }
    if next("end")? != "end" {
        return Err(Error::Parse("missing 'end' line".into()));
    }
    Ok(p)
}

fn field<T: std::str::FromStr>(s: Option<&str>, what: &str) -> Result<T> {
    s.and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad {what} field")))
}

/// Parse `<nterms> {<idx> <coef>}* <trailing>` into (terms, trailing value).
fn parse_terms(rest: &str) -> Result<(Vec<(usize, f64)>, f64)> {
    let mut it = rest.split_whitespace();
    let n: usize = field(it.next(), "term count")?;
    let mut terms = Vec::with_capacity(n);
    for _ in 0..n {
        let i: usize = field(it.next(), "term index")?;
        let c: f64 = field(it.next(), "term coefficient")?;
        terms.push((i, c));
    }
    let trailing: f64 = field(it.next(), "trailing value")?;
    if it.next().is_some() {
        return Err(Error::Parse("trailing tokens after row".into()));
    }
    Ok((terms, trailing))
}
