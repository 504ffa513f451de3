//! CPLEX-style LP text. Every token is separated by spaces; the Bounds
//! section lists every variable in insertion order so a reader can restore
//! the exact variable order.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use super::{fmt_num, label_of, parse_num, read_file, write_file};
use crate::error::{Error, Result};
use crate::ir::{Model, Sense, VarDef, VarKind, VarRef};

const TERMS_PER_LINE: usize = 8;

fn sense_token(s: Sense) -> &'static str {
    match s {
        Sense::Le => "<=",
        Sense::Eq => "=",
        Sense::Ge => ">=",
    }
}

fn push_term(out: &mut String, count: &mut usize, coef: f64, name: &str) {
    if *count > 0 && *count % TERMS_PER_LINE == 0 {
        out.push_str("\n   ");
    }
    let sign = if coef.is_sign_negative() && coef != 0.0 { '-' } else { '+' };
    let _ = write!(out, " {sign} {} {name}", fmt_num(coef.abs()));
    *count += 1;
}

pub fn lp_string(model: &Model) -> Result<String> {
    if !model.is_frozen() {
        return Err(Error::NotFrozen);
    }
    if !model.bilinear_constraints().is_empty() {
        return Err(Error::BilinearUnsupported);
    }
    let name = |v: VarRef| model.var(v).name.as_str();
    let obj = model.objective();
    let mut out = String::from("\\ mipnet model\nMinimize\n obj:");
    let mut count = 0;
    for &(c, v) in &obj.linear {
        push_term(&mut out, &mut count, c, name(v));
    }
    if obj.linear.is_empty() && obj.quadratic.is_empty() {
        if let Some(first) = model.vars().first() {
            push_term(&mut out, &mut count, 0.0, &first.name);
        }
    }
    if !obj.quadratic.is_empty() {
        out.push_str(" + [");
        let mut q = 0;
        for &(c, x, y) in &obj.quadratic {
            if q > 0 && q % TERMS_PER_LINE == 0 {
                out.push_str("\n   ");
            }
            let sign = if c < 0.0 { '-' } else { '+' };
            let c2 = fmt_num((2.0 * c).abs());
            if x == y {
                let _ = write!(out, " {sign} {c2} {} ^2", name(x));
            } else {
                let _ = write!(out, " {sign} {c2} {} * {}", name(x), name(y));
            }
            q += 1;
        }
        out.push_str(" ] / 2");
    }
    if obj.constant != 0.0 {
        let sign = if obj.constant < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {}", fmt_num(obj.constant.abs()));
    }
    out.push_str("\nSubject To\n");
    for row in model.constraints() {
        let _ = write!(out, " {}:", row.name());
        let mut count = 0;
        for (&v, &c) in row.vars.iter().zip(row.coefs) {
            push_term(&mut out, &mut count, c, &model.vars()[v as usize].name);
        }
        let _ = writeln!(out, " {} {}", sense_token(row.sense), fmt_num(row.rhs));
    }
    out.push_str("Bounds\n");
    for v in model.vars() {
        if v.lo == v.hi {
            let _ = writeln!(out, " {} = {}", v.name, fmt_num(v.lo));
        } else if v.lo == f64::NEG_INFINITY && v.hi == f64::INFINITY {
            let _ = writeln!(out, " {} free", v.name);
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", fmt_num(v.lo), v.name, fmt_num(v.hi));
        }
    }
    let bins: Vec<&str> = model.vars().iter().filter(|v| v.kind == VarKind::Binary).map(|v| v.name.as_str()).collect();
    if !bins.is_empty() {
        out.push_str("Binaries\n");
        for chunk in bins.chunks(TERMS_PER_LINE) {
            let _ = writeln!(out, " {}", chunk.join(" "));
        }
    }
    out.push_str("End\n");
    Ok(out)
}

/// Writes the model as LP text and returns the number of bytes written.
pub fn write_lp(model: &Model, path: impl AsRef<Path>) -> Result<usize> {
    let text = lp_string(model)?;
    write_file(path.as_ref(), &text)
}

pub fn read_lp(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    parse_lp_named(&read_file(path)?, &path.display().to_string())
}

pub fn parse_lp(text: &str) -> Result<Model> {
    parse_lp_named(text, "<lp>")
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    Binaries,
}

fn section_of(line: &str) -> Option<Section> {
    match line.to_ascii_lowercase().as_str() {
        "minimize" | "minimise" | "min" => Some(Section::Objective),
        "subject to" | "such that" | "st" | "s.t." => Some(Section::Constraints),
        "bounds" | "bound" => Some(Section::Bounds),
        "binaries" | "binary" | "bin" => Some(Section::Binaries),
        _ => None,
    }
}

fn is_number(tok: &str) -> bool {
    tok.starts_with(|c: char| c.is_ascii_digit() || c == '.') || tok.eq_ignore_ascii_case("+inf") || tok.eq_ignore_ascii_case("-inf")
}

fn sense_of(tok: &str) -> Option<Sense> {
    match tok {
        "<=" | "=<" | "<" => Some(Sense::Le),
        ">=" | "=>" | ">" => Some(Sense::Ge),
        "=" => Some(Sense::Eq),
        _ => None,
    }
}

#[derive(Default)]
struct Expr {
    linear: Vec<(f64, String)>,
    quadratic: Vec<(f64, String, String)>,
    constant: f64,
}

struct Tokens<'a> {
    toks: Vec<(&'a str, usize)>,
    at: usize,
    path: &'a str,
}

impl<'a> Tokens<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.at).map(|t| t.0)
    }

    fn line(&self) -> usize {
        self.toks.get(self.at.min(self.toks.len().saturating_sub(1))).map_or(0, |t| t.1)
    }

    fn next(&mut self) -> Option<&'a str> {
        let t = self.peek();
        self.at += 1;
        t
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { path: self.path.into(), line: self.line(), msg: msg.into() }
    }

    fn expect(&mut self, want: &str) -> Result<()> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            other => Err(self.err(format!("expected `{want}`, found `{}`", other.unwrap_or("end of input")))),
        }
    }

    /// Reads `[sign] [coef] name` terms and constants until a sense token or
    /// the end of the stream.
    fn expr(&mut self) -> Result<Expr> {
        let mut e = Expr::default();
        let mut sign = 1.0;
        let mut coef: Option<f64> = None;
        while let Some(tok) = self.peek() {
            if sense_of(tok).is_some() {
                break;
            }
            self.at += 1;
            match tok {
                "+" => {}
                "-" => sign = -sign,
                "[" => {
                    self.quadratic(&mut e, sign)?;
                    sign = 1.0;
                }
                t if is_number(t) => {
                    if let Some(c) = coef.take() {
                        e.constant += c;
                    }
                    coef = Some(sign * parse_num(t, self.path, self.line())?);
                    sign = 1.0;
                }
                name => {
                    e.linear.push((coef.take().unwrap_or(sign), name.to_string()));
                    sign = 1.0;
                }
            }
        }
        if let Some(c) = coef {
            e.constant += c;
        }
        Ok(e)
    }

    fn quadratic(&mut self, e: &mut Expr, outer: f64) -> Result<()> {
        let mut terms = Vec::new();
        let mut sign = 1.0;
        loop {
            let tok = self.next().ok_or_else(|| self.err("unterminated quadratic block"))?;
            match tok {
                "]" => break,
                "+" => {}
                "-" => sign = -sign,
                t => {
                    let (c, x) = if is_number(t) {
                        let c = parse_num(t, self.path, self.line())?;
                        (c, self.next().ok_or_else(|| self.err("quadratic term without a variable"))?)
                    } else {
                        (1.0, t)
                    };
                    let y = match self.peek() {
                        Some("^2") => {
                            self.at += 1;
                            x
                        }
                        Some("^") => {
                            self.at += 1;
                            self.expect("2")?;
                            x
                        }
                        Some("*") => {
                            self.at += 1;
                            self.next().ok_or_else(|| self.err("product without a second variable"))?
                        }
                        _ => return Err(self.err(format!("expected `^2` or `*` after `{x}`"))),
                    };
                    terms.push((sign * c, x.to_string(), y.to_string()));
                    sign = 1.0;
                }
            }
        }
        self.expect("/")?;
        self.expect("2")?;
        e.quadratic.extend(terms.into_iter().map(|(c, x, y)| (outer * c / 2.0, x, y)));
        Ok(())
    }
}

struct Row {
    name: String,
    expr: Expr,
    sense: Sense,
    rhs: f64,
}

fn parse_lp_named(text: &str, path: &str) -> Result<Model> {
    let mut section = Section::None;
    let mut obj_toks = Vec::new();
    let mut con_toks = Vec::new();
    let mut bounds: Vec<(String, f64, f64)> = Vec::new();
    let mut binaries: Vec<String> = Vec::new();
    let mut ended = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('\\').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.eq_ignore_ascii_case("end") {
            ended = true;
            break;
        }
        if let Some(s) = section_of(line) {
            section = s;
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.into(), line: line_no, msg };
        match section {
            Section::None => {
                let l = line.to_ascii_lowercase();
                let msg = if l.starts_with("max") { "maximization is not supported".to_string() } else { format!("unexpected `{line}`") };
                return Err(err(msg));
            }
            Section::Objective => obj_toks.extend(line.split_whitespace().map(|t| (t, line_no))),
            Section::Constraints => con_toks.extend(line.split_whitespace().map(|t| (t, line_no))),
            Section::Bounds => bounds.push(parse_bound(line).ok_or_else(|| err(format!("unrecognized bound `{line}`")))?),
            Section::Binaries => binaries.extend(line.split_whitespace().map(str::to_string)),
        }
    }
    if !ended {
        return Err(Error::Parse { path: path.into(), line: text.lines().count(), msg: "missing `End`".into() });
    }

    // objective
    if let Some((t, _)) = obj_toks.first() {
        if t.ends_with(':') {
            obj_toks.remove(0);
        }
    }
    let mut ts = Tokens { toks: obj_toks, at: 0, path };
    let objective = ts.expr()?;
    if ts.peek().is_some() {
        return Err(ts.err("unexpected token in objective"));
    }

    // constraints: each starts with `name:`
    let mut rows: Vec<Row> = Vec::new();
    let mut ts = Tokens { toks: con_toks, at: 0, path };
    while let Some(tok) = ts.next() {
        let Some(name) = tok.strip_suffix(':') else {
            return Err(ts.err(format!("expected a row name, found `{tok}`")));
        };
        let expr = ts.expr()?;
        let sense = ts.next().and_then(sense_of).ok_or_else(|| ts.err(format!("row `{name}` has no sense")))?;
        let rhs_tok = ts.next().ok_or_else(|| ts.err(format!("row `{name}` has no right-hand side")))?;
        let rhs = if rhs_tok == "-" || rhs_tok == "+" {
            let v = parse_num(ts.next().unwrap_or(""), path, ts.line())?;
            if rhs_tok == "-" {
                -v
            } else {
                v
            }
        } else {
            parse_num(rhs_tok, path, ts.line())?
        };
        if expr.constant != 0.0 || !expr.quadratic.is_empty() {
            return Err(ts.err(format!("row `{name}` must be linear with no constant")));
        }
        rows.push(Row { name: name.to_string(), expr, sense, rhs });
    }

    // variables: Bounds order first, then anything else by first use
    let bin_set: HashSet<&str> = binaries.iter().map(String::as_str).collect();
    let mut model = Model::new();
    let mut refs: HashMap<String, VarRef> = HashMap::new();
    let declare = |model: &mut Model, refs: &mut HashMap<String, VarRef>, name: &str, lo: f64, hi: f64| -> Result<()> {
        if !refs.contains_key(name) {
            let kind = if bin_set.contains(name) { VarKind::Binary } else { VarKind::Continuous };
            let v = model.add_variable(VarDef { name: name.to_string(), kind, lo, hi })?;
            refs.insert(name.to_string(), v);
        }
        Ok(())
    };
    for (name, lo, hi) in &bounds {
        if refs.contains_key(name) {
            return Err(Error::Parse { path: path.into(), line: 0, msg: format!("variable `{name}` bounded twice") });
        }
        declare(&mut model, &mut refs, name, *lo, *hi)?;
    }
    let mentioned = objective
        .linear
        .iter()
        .map(|t| &t.1)
        .chain(objective.quadratic.iter().flat_map(|t| [&t.1, &t.2]))
        .chain(rows.iter().flat_map(|r| r.expr.linear.iter().map(|t| &t.1)))
        .chain(binaries.iter());
    for name in mentioned.cloned().collect::<Vec<_>>() {
        declare(&mut model, &mut refs, &name, 0.0, f64::INFINITY)?;
    }
    for r in &rows {
        let terms: Vec<(f64, VarRef)> = r.expr.linear.iter().map(|(c, n)| (*c, refs[n])).collect();
        model.add_constraint(label_of(&r.name), &terms, r.sense, r.rhs)?;
    }
    for (c, n) in &objective.linear {
        model.add_objective_linear(*c, refs[n])?;
    }
    for (c, x, y) in &objective.quadratic {
        model.add_objective_quadratic(*c, refs[x], refs[y])?;
    }
    model.add_objective_constant(objective.constant)?;
    model.freeze();
    Ok(model)
}

fn parse_bound(line: &str) -> Option<(String, f64, f64)> {
    let t: Vec<&str> = line.split_whitespace().collect();
    let num = |s: &str| parse_num(s, "", 0).ok();
    match t.as_slice() {
        [x, free] if free.eq_ignore_ascii_case("free") => Some((x.to_string(), f64::NEG_INFINITY, f64::INFINITY)),
        [x, "=", v] => num(v).map(|v| (x.to_string(), v, v)),
        [lo, "<=", x, "<=", hi] => Some((x.to_string(), num(lo)?, num(hi)?)),
        [lo, "<=", x] if is_number(lo) => Some((x.to_string(), num(lo)?, f64::INFINITY)),
        [x, ">=", lo] => Some((x.to_string(), num(lo)?, f64::INFINITY)),
        [x, "<=", hi] => Some((x.to_string(), 0.0, num(hi)?)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Model {
        let mut m = Model::new();
        let x = m.add_variable(VarDef::continuous("x", 0.0, 10.0)).unwrap();
        m.add_constraint("lower", &[(1.0, x)], Sense::Ge, 1.0).unwrap();
        m.add_objective_linear(1.0, x).unwrap();
        m.freeze();
        m
    }

    #[test]
    fn minimal_model_round_trips() {
        let m = tiny();
        let text = lp_string(&m).unwrap();
        assert_eq!(text, "\\ mipnet model\nMinimize\n obj: + 1 x\nSubject To\n lower.0: + 1 x >= 1\nBounds\n 0 <= x <= 10\nEnd\n");
        assert_eq!(parse_lp(&text).unwrap(), m);
    }

    #[test]
    fn quadratic_block_present() {
        let mut m = Model::new();
        let x = m.add_variable(VarDef::free("x")).unwrap();
        m.add_objective_quadratic(1.0, x, x).unwrap();
        m.freeze();
        let text = lp_string(&m).unwrap();
        assert!(text.contains("[ + 2 x ^2 ] / 2"), "{text}");
        assert_eq!(parse_lp(&text).unwrap(), m);
    }

    #[test]
    fn bilinear_rejected() {
        let mut m = Model::new();
        let x = m.add_variable(VarDef::free("x")).unwrap();
        let y = m.add_variable(VarDef::free("y")).unwrap();
        m.add_bilinear_constraint(crate::ir::BilinCon {
            linear: vec![],
            bilinear: vec![(1.0, x, y)],
            sense: Sense::Le,
            rhs: 1.0,
            label: "affine_map".into(),
        })
        .unwrap();
        m.freeze();
        assert!(matches!(lp_string(&m), Err(Error::BilinearUnsupported)));
    }

    #[test]
    fn unfrozen_rejected() {
        assert!(matches!(lp_string(&Model::new()), Err(Error::NotFrozen)));
    }

    #[test]
    fn missing_end_is_an_error() {
        assert!(matches!(parse_lp("Minimize\n obj: + 1 x\n"), Err(Error::Parse { .. })));
    }
}
