//! Free-format MPS. Fields are padded to fixed columns for readability, but
//! names are longer than the classic 8 characters, so readers must split on
//! whitespace.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{fmt_num, label_of, parse_num, read_file, write_file};
use crate::error::{Error, Result};
use crate::ir::{Model, Sense, VarDef, VarKind, VarRef};

const OBJ: &str = "obj";

fn field(s: &str) -> String {
    format!("{s:<12}")
}

pub fn mps_string(model: &Model) -> Result<String> {
    if !model.is_frozen() {
        return Err(Error::NotFrozen);
    }
    if !model.bilinear_constraints().is_empty() {
        return Err(Error::BilinearUnsupported);
    }
    let mut out = String::from("NAME          mipnet\nROWS\n");
    let _ = writeln!(out, " N  {OBJ}");
    let mut row_names = Vec::with_capacity(model.num_constraints());
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.num_vars()];
    for (r, row) in model.constraints().enumerate() {
        let kind = match row.sense {
            Sense::Le => 'L',
            Sense::Ge => 'G',
            Sense::Eq => 'E',
        };
        let name = row.name();
        let _ = writeln!(out, " {kind}  {name}");
        row_names.push(name);
        for (&v, &c) in row.vars.iter().zip(row.coefs) {
            columns[v as usize].push((r, c));
        }
    }
    let mut obj_coef = vec![None; model.num_vars()];
    for &(c, v) in &model.objective().linear {
        obj_coef[v.index()] = Some(c);
    }
    out.push_str("COLUMNS\n");
    for (j, var) in model.vars().iter().enumerate() {
        let col = field(&var.name);
        let mut any = false;
        if let Some(c) = obj_coef[j] {
            let _ = writeln!(out, "    {col} {} {}", field(OBJ), fmt_num(c));
            any = true;
        }
        for &(r, c) in &columns[j] {
            let _ = writeln!(out, "    {col} {} {}", field(&row_names[r]), fmt_num(c));
            any = true;
        }
        if !any {
            let _ = writeln!(out, "    {col} {} 0", field(OBJ));
        }
    }
    out.push_str("RHS\n");
    let constant = model.objective().constant;
    if constant != 0.0 {
        let _ = writeln!(out, "    {} {} {}", field("RHS"), field(OBJ), fmt_num(-constant));
    }
    for (r, row) in model.constraints().enumerate() {
        if row.rhs != 0.0 {
            let _ = writeln!(out, "    {} {} {}", field("RHS"), field(&row_names[r]), fmt_num(row.rhs));
        }
    }
    out.push_str("BOUNDS\n");
    for var in model.vars() {
        let name = field(&var.name);
        let bnd = field("BND");
        if var.kind == VarKind::Binary {
            let _ = writeln!(out, " BV {bnd} {name}");
        } else if var.lo == var.hi {
            let _ = writeln!(out, " FX {bnd} {name} {}", fmt_num(var.lo));
        } else if var.lo == f64::NEG_INFINITY && var.hi == f64::INFINITY {
            let _ = writeln!(out, " FR {bnd} {name}");
        } else {
            if var.lo == f64::NEG_INFINITY {
                let _ = writeln!(out, " MI {bnd} {name}");
            } else {
                let _ = writeln!(out, " LO {bnd} {name} {}", fmt_num(var.lo));
            }
            if var.hi != f64::INFINITY {
                let _ = writeln!(out, " UP {bnd} {name} {}", fmt_num(var.hi));
            }
        }
    }
    let quad = &model.objective().quadratic;
    if !quad.is_empty() {
        out.push_str("QUADOBJ\n");
        for &(c, x, y) in quad {
            // diagonal entries carry the 1/2 of x'Qx/2
            let q = if x == y { 2.0 * c } else { c };
            let _ = writeln!(out, "    {} {} {}", field(&model.var(x).name), field(&model.var(y).name), fmt_num(q));
        }
    }
    out.push_str("ENDATA\n");
    Ok(out)
}

/// Writes the model as free-format MPS and returns the number of bytes written.
pub fn write_mps(model: &Model, path: impl AsRef<Path>) -> Result<usize> {
    let text = mps_string(model)?;
    write_file(path.as_ref(), &text)
}

pub fn read_mps(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    parse_mps_named(&read_file(path)?, &path.display().to_string())
}

pub fn parse_mps(text: &str) -> Result<Model> {
    parse_mps_named(text, "<mps>")
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Rows,
    Columns,
    Rhs,
    Bounds,
    Quad,
}

struct ColDef {
    name: String,
    lo: f64,
    hi: f64,
    binary: bool,
}

fn parse_mps_named(text: &str, path: &str) -> Result<Model> {
    let mut section = Section::None;
    let mut obj_row: Option<String> = None;
    let mut rows: Vec<(String, Sense, f64, Vec<(f64, usize)>)> = Vec::new();
    let mut row_index: HashMap<String, usize> = HashMap::new();
    let mut cols: Vec<ColDef> = Vec::new();
    let mut col_index: HashMap<String, usize> = HashMap::new();
    let mut obj_lin: Vec<(f64, usize)> = Vec::new();
    let mut quad: Vec<(f64, usize, usize)> = Vec::new();
    let mut constant = 0.0;
    let mut ended = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |msg: String| Error::Parse { path: path.into(), line: line_no, msg };
        if raw.trim().is_empty() || raw.starts_with('*') {
            continue;
        }
        let t: Vec<&str> = raw.split_whitespace().collect();
        if !raw.starts_with(' ') {
            section = match t[0].to_ascii_uppercase().as_str() {
                "NAME" => Section::None,
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "BOUNDS" => Section::Bounds,
                "QUADOBJ" | "QMATRIX" => Section::Quad,
                "ENDATA" => {
                    ended = true;
                    break;
                }
                other => return Err(err(format!("unsupported section `{other}`"))),
            };
            continue;
        }
        let num = |s: &str| parse_num(s, path, line_no);
        match section {
            Section::None => return Err(err("data before the first section".into())),
            Section::Rows => {
                let [kind, name] = t[..] else { return Err(err("expected `type name`".into())) };
                let sense = match kind {
                    "N" => {
                        if obj_row.is_none() {
                            obj_row = Some(name.to_string());
                        }
                        continue;
                    }
                    "L" => Sense::Le,
                    "G" => Sense::Ge,
                    "E" => Sense::Eq,
                    other => return Err(err(format!("unknown row type `{other}`"))),
                };
                row_index.insert(name.to_string(), rows.len());
                rows.push((name.to_string(), sense, 0.0, Vec::new()));
            }
            Section::Columns => {
                if t.iter().any(|s| s.contains("MARKER")) {
                    return Err(err("integer markers are not supported; declare binaries with BV".into()));
                }
                if t.len() != 3 && t.len() != 5 {
                    return Err(err("expected `column row value [row value]`".into()));
                }
                let col = *col_index.entry(t[0].to_string()).or_insert_with(|| {
                    cols.push(ColDef { name: t[0].to_string(), lo: 0.0, hi: f64::INFINITY, binary: false });
                    cols.len() - 1
                });
                for pair in t[1..].chunks(2) {
                    let v = num(pair[1])?;
                    if Some(pair[0]) == obj_row.as_deref() {
                        if v != 0.0 {
                            obj_lin.push((v, col));
                        }
                    } else {
                        let r = *row_index.get(pair[0]).ok_or_else(|| err(format!("unknown row `{}`", pair[0])))?;
                        rows[r].3.push((v, col));
                    }
                }
            }
            Section::Rhs => {
                if t.len() != 3 && t.len() != 5 {
                    return Err(err("expected `set row value [row value]`".into()));
                }
                for pair in t[1..].chunks(2) {
                    let v = num(pair[1])?;
                    if Some(pair[0]) == obj_row.as_deref() {
                        constant = -v;
                    } else {
                        let r = *row_index.get(pair[0]).ok_or_else(|| err(format!("unknown row `{}`", pair[0])))?;
                        rows[r].2 = v;
                    }
                }
            }
            Section::Bounds => {
                if t.len() < 3 {
                    return Err(err("expected `type set column [value]`".into()));
                }
                let c = *col_index.get(t[2]).ok_or_else(|| err(format!("unknown column `{}`", t[2])))?;
                let value = || t.get(3).map(|s| num(s)).transpose()?.ok_or_else(|| err("bound needs a value".into()));
                let col = &mut cols[c];
                match t[0] {
                    "BV" => {
                        col.binary = true;
                        col.lo = 0.0;
                        col.hi = 1.0;
                    }
                    "LO" => col.lo = value()?,
                    "UP" => col.hi = value()?,
                    "FX" => {
                        let v = value()?;
                        col.lo = v;
                        col.hi = v;
                    }
                    "FR" => {
                        col.lo = f64::NEG_INFINITY;
                        col.hi = f64::INFINITY;
                    }
                    "MI" => col.lo = f64::NEG_INFINITY,
                    "PL" => col.hi = f64::INFINITY,
                    other => return Err(err(format!("unsupported bound type `{other}`"))),
                }
            }
            Section::Quad => {
                let [x, y, v] = t[..] else { return Err(err("expected `column column value`".into())) };
                let xi = *col_index.get(x).ok_or_else(|| err(format!("unknown column `{x}`")))?;
                let yi = *col_index.get(y).ok_or_else(|| err(format!("unknown column `{y}`")))?;
                let q = num(v)?;
                quad.push((if xi == yi { q / 2.0 } else { q }, xi, yi));
            }
        }
    }
    if !ended {
        return Err(Error::Parse { path: path.into(), line: text.lines().count(), msg: "missing ENDATA".into() });
    }

    let mut model = Model::new();
    let mut refs: Vec<VarRef> = Vec::with_capacity(cols.len());
    for c in cols {
        let kind = if c.binary { VarKind::Binary } else { VarKind::Continuous };
        refs.push(model.add_variable(VarDef { name: c.name, kind, lo: c.lo, hi: c.hi })?);
    }
    for (name, sense, rhs, terms) in &rows {
        let terms: Vec<(f64, VarRef)> = terms.iter().map(|&(c, j)| (c, refs[j])).collect();
        model.add_constraint(label_of(name), &terms, *sense, *rhs)?;
    }
    for (c, j) in obj_lin {
        model.add_objective_linear(c, refs[j])?;
    }
    for (c, x, y) in quad {
        model.add_objective_quadratic(c, refs[x], refs[y])?;
    }
    model.add_objective_constant(constant)?;
    model.freeze();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Model {
        let mut m = Model::new();
        let x = m.add_variable(VarDef::continuous("x", 0.0, 10.0)).unwrap();
        let d = m.add_variable(VarDef::binary("d")).unwrap();
        m.add_constraint("lower", &[(1.0, x)], Sense::Ge, 1.0).unwrap();
        m.add_objective_linear(1.0, x).unwrap();
        m.add_objective_quadratic(0.5, d, d).unwrap();
        m.add_objective_constant(3.0).unwrap();
        m.freeze();
        m
    }

    #[test]
    fn round_trip_and_layout() {
        let m = tiny();
        let text = mps_string(&m).unwrap();
        assert!(text.contains("QUADOBJ\n    d            d            1\n"), "{text}");
        assert!(text.contains(" BV BND          d"), "{text}");
        assert!(text.contains("RHS          obj          -3"), "{text}");
        let back = parse_mps(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(mps_string(&back).unwrap(), text);
    }

    #[test]
    fn columns_follow_insertion_order() {
        let mut m = Model::new();
        for name in ["zeta", "alpha", "mid"] {
            m.add_variable(VarDef::free(name)).unwrap();
        }
        m.freeze();
        let text = mps_string(&m).unwrap();
        let cols: Vec<&str> = text
            .lines()
            .skip_while(|l| *l != "COLUMNS")
            .skip(1)
            .take_while(|l| l.starts_with(' '))
            .map(|l| l.split_whitespace().next().unwrap())
            .collect();
        assert_eq!(cols, ["zeta", "alpha", "mid"]);
    }

    #[test]
    fn bilinear_rejected() {
        let mut m = Model::new();
        let x = m.add_variable(VarDef::free("x")).unwrap();
        m.add_bilinear_constraint(crate::ir::BilinCon {
            linear: vec![],
            bilinear: vec![(1.0, x, x)],
            sense: Sense::Le,
            rhs: 1.0,
            label: "affine_map".into(),
        })
        .unwrap();
        m.freeze();
        assert!(matches!(mps_string(&m), Err(Error::BilinearUnsupported)));
    }
}
