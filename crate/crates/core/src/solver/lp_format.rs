use std::fmt::Write;

use super::{MilpModel, Relation};

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "_.[]".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn term(out: &mut String, first: bool, coef: f64, name: &str) {
    if coef < 0.0 {
        let _ = write!(out, " - {} {}", -coef, name);
    } else if first {
        let _ = write!(out, " {coef} {name}");
    } else {
        let _ = write!(out, " + {coef} {name}");
    }
}

pub(super) fn write_lp(model: &MilpModel) -> String {
    let names: Vec<String> = model
        .vars
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{}_{i}", sanitize(&v.name)))
        .collect();
    let mut out = String::new();
    out.push_str("\\ objective offset ");
    let _ = writeln!(out, "{}", model.objective_offset);
    out.push_str("Minimize\n obj:");
    let mut first = true;
    for (v, name) in model.vars.iter().zip(&names) {
        if v.objective != 0.0 {
            term(&mut out, first, v.objective, name);
            first = false;
        }
    }
    if first {
        out.push_str(" 0");
    }
    out.push_str("\nSubject To\n");
    for (i, c) in model.constraints.iter().enumerate() {
        let _ = write!(out, " {}_{i}:", sanitize(&c.name));
        let mut first = true;
        for &(v, a) in &c.terms {
            term(&mut out, first, a, &names[v.0]);
            first = false;
        }
        if first {
            let _ = write!(out, " 0 {}", names.first().map(String::as_str).unwrap_or("x"));
        }
        let rel = match c.relation {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        };
        let _ = writeln!(out, " {rel} {}", c.rhs);
    }
    out.push_str("Bounds\n");
    for (v, name) in model.vars.iter().zip(&names) {
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (true, true) if v.lower == v.upper => {
                let _ = writeln!(out, " {name} = {}", v.lower);
            }
            (true, true) => {
                let _ = writeln!(out, " {} <= {name} <= {}", v.lower, v.upper);
            }
            (true, false) => {
                let _ = writeln!(out, " {name} >= {}", v.lower);
            }
            (false, true) => {
                let _ = writeln!(out, " -inf <= {name} <= {}", v.upper);
            }
            (false, false) => {
                let _ = writeln!(out, " {name} free");
            }
        }
    }
    let ints: Vec<&String> = model
        .vars
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.integer)
        .map(|(_, n)| n)
        .collect();
    if !ints.is_empty() {
        out.push_str("General\n");
        for chunk in ints.chunks(8) {
            out.push(' ');
            out.push_str(&chunk.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" "));
            out.push('\n');
        }
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::super::{MilpModel, Relation};

    #[test]
    fn sections_in_order() {
        let mut m = MilpModel::new();
        let a = m.add_binary("y[1]", 2.0);
        let b = m.add_continuous("flow+", -1.0, f64::INFINITY, -1.0);
        m.add_constraint("link", vec![(a, 1.0), (b, -3.0)], Relation::Ge, 0.5);
        let text = m.to_lp_string();
        let idx = |s: &str| text.find(s).unwrap();
        assert!(idx("Minimize") < idx("Subject To"));
        assert!(idx("Subject To") < idx("Bounds"));
        assert!(idx("Bounds") < idx("General"));
        assert!(text.contains(" link_0: 1 y[1]_0 - 3 flow__1 >= 0.5"));
        assert!(text.contains("flow__1 >= -1"));
        assert!(text.trim_end().ends_with("End"));
    }
}
