use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{BranchRecord, BusKind, BusRecord, CostCurve, GenRecord, NetworkCase};
use crate::{Error, Result};

// MATPOWER column positions (0-based).
const BUS_I: usize = 0;
const BUS_TYPE: usize = 1;
const PD: usize = 2;
const QD: usize = 3;
const GS: usize = 4;
const BS: usize = 5;
const VMAX: usize = 11;
const VMIN: usize = 12;

const GEN_BUS: usize = 0;
const QMAX: usize = 3;
const QMIN: usize = 4;
const GEN_STATUS: usize = 7;
const PMAX: usize = 8;
const PMIN: usize = 9;

const F_BUS: usize = 0;
const T_BUS: usize = 1;
const BR_R: usize = 2;
const BR_X: usize = 3;
const BR_B: usize = 4;
const RATE_A: usize = 5;
const TAP: usize = 8;
const SHIFT: usize = 9;
const BR_STATUS: usize = 10;

const MODEL_PWL: f64 = 1.0;
const MODEL_POLY: f64 = 2.0;

/// Read and parse a case file; the case name defaults to the file stem.
pub fn read_case(path: impl AsRef<Path>) -> Result<NetworkCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut case = parse_case(&text)?;
    if case.name.is_empty() {
        case.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(case)
}

/// Parse MATPOWER case text into a validated per-unit [`NetworkCase`].
pub fn parse_case(text: &str) -> Result<NetworkCase> {
    let clean = strip_comments(text);
    reject_table_edits(&clean)?;

    let name = function_name(&clean).unwrap_or_default();
    let base_mva = scalar(&clean, "baseMVA")?;
    let bus = table(&clean, "bus", 13)?;
    let gen = table(&clean, "gen", 10)?;
    let branch = table(&clean, "branch", 11)?;
    let gencost = table(&clean, "gencost", 4)?;

    if !(base_mva > 0.0) {
        return Err(Error::Validation(format!(
            "base_mva must be positive, got {base_mva}"
        )));
    }

    let mut bus_index = HashMap::with_capacity(bus.len());
    for (k, row) in bus.iter().enumerate() {
        let id = as_id(row[BUS_I], "bus number")?;
        if bus_index.insert(id, k).is_some() {
            return Err(Error::Validation(format!("duplicate bus number {id}")));
        }
    }
    let lookup = |raw: f64, what: &str| -> Result<usize> {
        let id = as_id(raw, what)?;
        bus_index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::Validation(format!("{what} refers to unknown bus {id}")))
    };

    if gencost.len() < gen.len() {
        return Err(Error::Parse(format!(
            "gencost table has {} rows for {} generators",
            gencost.len(),
            gen.len()
        )));
    }

    let mut generators = Vec::new();
    for (i, row) in gen.iter().enumerate() {
        if row[GEN_STATUS] <= 0.0 {
            continue;
        }
        let cost = polynomial_cost(&gencost[i], i)?;
        generators.push(GenRecord {
            bus: lookup(row[GEN_BUS], "generator")?,
            p_min: row[PMIN] / base_mva,
            p_max: row[PMAX] / base_mva,
            q_min: row[QMIN] / base_mva,
            q_max: row[QMAX] / base_mva,
            cost,
        });
    }

    let mut has_gen = vec![false; bus.len()];
    for g in &generators {
        has_gen[g.bus] = true;
    }

    let mut buses = Vec::with_capacity(bus.len());
    for (k, row) in bus.iter().enumerate() {
        let kind = match row[BUS_TYPE] as i64 {
            3 => BusKind::Slack,
            1 | 2 if has_gen[k] => BusKind::Generator,
            1 | 2 => BusKind::Load,
            4 => {
                return Err(Error::Validation(format!(
                    "bus {} is isolated (type 4); isolated buses are not supported",
                    row[BUS_I]
                )))
            }
            t => {
                return Err(Error::Validation(format!(
                    "bus {} has unknown type {t}",
                    row[BUS_I]
                )))
            }
        };
        buses.push(BusRecord {
            id: as_id(row[BUS_I], "bus number")?,
            kind,
            p_d: row[PD] / base_mva,
            q_d: row[QD] / base_mva,
            g_sh: row[GS] / base_mva,
            b_sh: row[BS] / base_mva,
            v_min: row[VMIN],
            v_max: row[VMAX],
        });
    }

    let mut branches = Vec::with_capacity(branch.len());
    for row in &branch {
        if row[BR_STATUS] <= 0.0 {
            continue;
        }
        let rate = if row[RATE_A] == 0.0 {
            f64::INFINITY
        } else {
            row[RATE_A] / base_mva
        };
        branches.push(BranchRecord {
            from: lookup(row[F_BUS], "branch")?,
            to: lookup(row[T_BUS], "branch")?,
            r: row[BR_R],
            x: row[BR_X],
            b_sh: row[BR_B],
            rate,
            tap: if row[TAP] == 0.0 { 1.0 } else { row[TAP] },
            shift: row[SHIFT].to_radians(),
        });
    }

    let case = NetworkCase {
        name,
        base_mva,
        buses,
        branches,
        generators,
    };
    case.validate()?;
    Ok(case)
}

/// Serialize a case back to MATPOWER text. Parsing the output reproduces
/// `case` exactly.
pub fn write_matpower(case: &NetworkCase) -> String {
    let base = case.base_mva;
    let mut out = String::new();
    let name = if case.name.is_empty() { "case" } else { &case.name };
    let _ = writeln!(out, "function mpc = {name}");
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {};", fmt(base));

    let _ = writeln!(out, "\n%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin");
    let _ = writeln!(out, "mpc.bus = [");
    for b in &case.buses {
        let kind = match b.kind {
            BusKind::Slack => 3,
            BusKind::Generator => 2,
            BusKind::Load => 1,
        };
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t1\t0\t0\t1\t{}\t{};",
            b.id,
            kind,
            scaled(b.p_d, base),
            scaled(b.q_d, base),
            scaled(b.g_sh, base),
            scaled(b.b_sh, base),
            fmt(b.v_max),
            fmt(b.v_min),
        );
    }
    let _ = writeln!(out, "];");

    let _ = writeln!(out, "\n%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin");
    let _ = writeln!(out, "mpc.gen = [");
    for g in &case.generators {
        let _ = writeln!(
            out,
            "\t{}\t0\t0\t{}\t{}\t1\t{}\t1\t{}\t{};",
            case.buses[g.bus].id,
            scaled(g.q_max, base),
            scaled(g.q_min, base),
            fmt(base),
            scaled(g.p_max, base),
            scaled(g.p_min, base),
        );
    }
    let _ = writeln!(out, "];");

    let _ = writeln!(out, "\n%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus");
    let _ = writeln!(out, "mpc.branch = [");
    for br in &case.branches {
        let rate = if br.rate.is_finite() {
            scaled(br.rate, base)
        } else {
            "0".to_string()
        };
        let tap = if br.tap == 1.0 { "0".to_string() } else { fmt(br.tap) };
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{rate}\t{rate}\t{rate}\t{tap}\t{}\t1;",
            case.buses[br.from].id,
            case.buses[br.to].id,
            fmt(br.r),
            fmt(br.x),
            fmt(br.b_sh),
            degrees(br.shift),
        );
    }
    let _ = writeln!(out, "];");

    let _ = writeln!(out, "\n%\t2\tstartup\tshutdown\tn\tc2\tc1\tc0");
    let _ = writeln!(out, "mpc.gencost = [");
    for g in &case.generators {
        let _ = writeln!(
            out,
            "\t2\t0\t0\t3\t{}\t{}\t{};",
            fmt(g.cost.c2),
            fmt(g.cost.c1),
            fmt(g.cost.c0)
        );
    }
    let _ = writeln!(out, "];");
    out
}

fn fmt(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "Inf" } else { "-Inf" }.to_string()
    } else {
        format!("{v:?}")
    }
}

/// Decimal text `s` for `v * base` such that `parse(s) / base == v`.
fn scaled(v: f64, base: f64) -> String {
    invertible(v, |w| w * base, |w| w / base)
}

fn degrees(rad: f64) -> String {
    invertible(rad, f64::to_degrees, f64::to_radians)
}

fn invertible(v: f64, forward: impl Fn(f64) -> f64, back: impl Fn(f64) -> f64) -> String {
    if !v.is_finite() {
        return fmt(v);
    }
    let w = forward(v);
    let mut lo = w;
    let mut hi = w;
    for _ in 0..64 {
        if back(lo) == v {
            return fmt(lo);
        }
        if back(hi) == v {
            return fmt(hi);
        }
        lo = lo.next_down();
        hi = hi.next_up();
    }
    fmt(w)
}

fn as_id(raw: f64, what: &str) -> Result<usize> {
    if raw >= 1.0 && raw.fract() == 0.0 {
        Ok(raw as usize)
    } else {
        Err(Error::Parse(format!("invalid {what} {raw}")))
    }
}

fn polynomial_cost(row: &[f64], gen: usize) -> Result<CostCurve> {
    if row[0] == MODEL_PWL {
        return Err(Error::Validation(format!(
            "generator {gen}: piecewise-linear cost model is not supported"
        )));
    }
    if row[0] != MODEL_POLY {
        return Err(Error::Validation(format!(
            "generator {gen}: unknown cost model {}",
            row[0]
        )));
    }
    let n = row[3];
    if n.fract() != 0.0 || !(0.0..=3.0).contains(&n) {
        return Err(Error::Validation(format!(
            "generator {gen}: polynomial cost of degree > 2 (n = {n}) is not supported"
        )));
    }
    let n = n as usize;
    if row.len() < 4 + n {
        return Err(Error::Parse(format!(
            "generator {gen}: gencost row has fewer than {n} coefficients"
        )));
    }
    // Coefficients are listed highest order first.
    let mut c = [0.0; 3];
    for (k, &coef) in row[4..4 + n].iter().enumerate() {
        c[n - 1 - k] = coef;
    }
    Ok(CostCurve {
        c2: c[2],
        c1: c[1],
        c0: c[0],
    })
}

fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let mut in_str = false;
        let mut prev = ' ';
        let mut end = line.len();
        for (i, ch) in line.char_indices() {
            match ch {
                // A quote after an identifier or closing bracket is a transpose.
                '\'' if !in_str && (prev.is_alphanumeric() || prev == ']' || prev == ')') => {}
                '\'' => in_str = !in_str,
                '%' if !in_str => {
                    end = i;
                    break;
                }
                _ => {}
            }
            prev = ch;
        }
        out.push_str(&line[..end]);
        out.push('\n');
    }
    out
}

fn function_name(text: &str) -> Option<String> {
    let rest = text.trim_start().strip_prefix("function")?;
    let (_, rhs) = rest.split_once('=')?;
    let name: String = rhs
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '_')
        .collect();
    (!name.is_empty()).then_some(name)
}

/// Statements like `mpc.bus(:, PD) = ...` rescale tables after definition.
/// Honouring them would require evaluating MATLAB, so such files are refused
/// rather than silently read with the wrong units.
fn reject_table_edits(text: &str) -> Result<()> {
    for line in text.lines() {
        let t = line.trim_start();
        if let Some(rest) = t.strip_prefix("mpc.") {
            let ident: String = rest
                .chars()
                .take_while(|c| c.is_alphanumeric() || *c == '_')
                .collect();
            if rest[ident.len()..].trim_start().starts_with('(') {
                return Err(Error::Parse(format!(
                    "unsupported statement modifying mpc.{ident}: `{}`",
                    t.trim_end()
                )));
            }
        }
    }
    Ok(())
}

/// Locate `mpc.<name> = ` and return the text following the `=`.
fn assignment<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    let key = format!("mpc.{name}");
    let mut from = 0;
    while let Some(pos) = text[from..].find(&key) {
        let start = from + pos;
        let after = &text[start + key.len()..];
        let boundary_ok = start == 0
            || !text[..start]
                .chars()
                .next_back()
                .is_some_and(|c| c.is_alphanumeric() || c == '_');
        let trimmed = after.trim_start();
        if boundary_ok {
            if let Some(rhs) = trimmed.strip_prefix('=') {
                // `mpc.bus_name` shares the prefix; the next char must not extend the ident.
                let next = after.chars().next();
                if !next.is_some_and(|c| c.is_alphanumeric() || c == '_') {
                    return Some(rhs);
                }
            }
        }
        from = start + key.len();
    }
    None
}

fn scalar(text: &str, name: &str) -> Result<f64> {
    let rhs = assignment(text, name)
        .ok_or_else(|| Error::Parse(format!("missing {name} value")))?;
    let value = rhs.split(';').next().unwrap_or("").trim();
    parse_number(value).ok_or_else(|| Error::Parse(format!("invalid {name} value `{value}`")))
}

fn table(text: &str, name: &str, min_cols: usize) -> Result<Vec<Vec<f64>>> {
    let label = match name {
        "gen" => "generator",
        other => other,
    };
    let rhs = assignment(text, name).ok_or_else(|| Error::Parse(format!("missing {label} table")))?;
    let body = rhs
        .trim_start()
        .strip_prefix('[')
        .ok_or_else(|| Error::Parse(format!("{label} table is not a matrix literal")))?;
    let close = body
        .find(']')
        .ok_or_else(|| Error::Parse(format!("unterminated {label} table")))?;
    let mut rows = Vec::new();
    for raw in body[..close].split(|c| c == ';' || c == '\n') {
        let tokens: Vec<&str> = raw
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            continue;
        }
        let row = tokens
            .iter()
            .map(|t| {
                parse_number(t)
                    .ok_or_else(|| Error::Parse(format!("{label} table: invalid number `{t}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() < min_cols {
            return Err(Error::Parse(format!(
                "{label} table: row {} has {} columns, expected at least {min_cols}",
                rows.len() + 1,
                row.len()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{label} table is empty")));
    }
    Ok(rows)
}

fn parse_number(t: &str) -> Option<f64> {
    match t {
        "Inf" | "inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        _ => t.parse().ok(),
    }
}
