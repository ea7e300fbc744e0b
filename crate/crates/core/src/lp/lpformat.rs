use std::fmt::Write;

use super::{FeasibilityProgram, Sense, VarId, VarKind};

fn sanitize(name: &str) -> String {
    let mut out: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "_.[]".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    if out.chars().next().is_none_or(|c| c.is_ascii_digit() || c == '.') {
        out.insert(0, 'v');
    }
    out
}

fn row(out: &mut String, names: &[String], terms: &[(VarId, f64)]) {
    if terms.is_empty() {
        out.push_str(" 0 ");
        out.push_str(&names.first().cloned().unwrap_or_else(|| "x".into()));
        return;
    }
    for &(v, c) in terms {
        let sign = if c < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {}", c.abs(), names[v.0]);
    }
}

/// Renders a program in CPLEX LP format.
pub(super) fn write_lp(program: &FeasibilityProgram) -> String {
    let names: Vec<String> = program
        .variables
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if v.name.is_empty() {
                format!("x{i}")
            } else {
                sanitize(&v.name)
            }
        })
        .collect();
    let mut out = String::new();
    match &program.objective {
        Some(obj) => {
            out.push_str(if obj.sense == Sense::Maximize {
                "Maximize\n obj:"
            } else {
                "Minimize\n obj:"
            });
            row(&mut out, &names, &obj.terms);
        }
        None => {
            out.push_str("Minimize\n obj:");
            row(&mut out, &names, &[]);
        }
    }
    out.push_str("\nSubject To\n");
    for (i, c) in program.constraints.iter().enumerate() {
        let name = if c.name.is_empty() {
            format!("c{i}")
        } else {
            sanitize(&c.name)
        };
        let _ = write!(out, " {name}:");
        row(&mut out, &names, &c.terms);
        let _ = writeln!(out, " {} {}", c.relation, c.rhs);
    }
    out.push_str("Bounds\n");
    for (v, name) in program.variables.iter().zip(&names) {
        let lo = if v.lower == f64::NEG_INFINITY {
            "-inf".to_string()
        } else {
            v.lower.to_string()
        };
        let hi = if v.upper == f64::INFINITY {
            "+inf".to_string()
        } else {
            v.upper.to_string()
        };
        let _ = writeln!(out, " {lo} <= {name} <= {hi}");
    }
    let binaries: Vec<&String> = program
        .variables
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.kind == VarKind::Binary)
        .map(|(_, n)| n)
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binary\n");
        for name in binaries {
            let _ = writeln!(out, " {name}");
        }
    }
    out.push_str("End\n");
    out
}
