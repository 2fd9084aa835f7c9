//! CPLEX LP text export for cross-checking against external solvers.

use std::fmt::Write;

use super::MilpInstance;
use crate::lp::LinearProgram;

const TERMS_PER_LINE: usize = 6;

fn write_terms(out: &mut String, lp: &LinearProgram, terms: &[(usize, f64)]) {
    let mut first = true;
    for (n, &(j, c)) in terms.iter().filter(|t| t.1 != 0.0).enumerate() {
        if n > 0 && n % TERMS_PER_LINE == 0 {
            out.push_str("\n   ");
        }
        let name = &lp.vars[j].name;
        if first {
            if c < 0.0 {
                let _ = write!(out, " - {} {name}", -c);
            } else {
                let _ = write!(out, " {c} {name}");
            }
            first = false;
        } else if c < 0.0 {
            let _ = write!(out, " - {} {name}", -c);
        } else {
            let _ = write!(out, " + {c} {name}");
        }
    }
    if first {
        out.push_str(" 0");
    }
}

/// Renders the instance in LP format. Variables are named `u_i_k` and
/// `y_i_j_e_f` with VNF ids and node ids; numbers use Rust's shortest
/// round-trip formatting.
pub fn write_lp(instance: &MilpInstance) -> String {
    let lp = instance.to_linear_program();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "\\ slice {} ({} VNFs, {} servers, {} links)",
        instance.slice.id,
        instance.vnf_count(),
        instance.server_count(),
        instance.links.len()
    );
    out.push_str("Minimize\n obj:");
    let objective: Vec<(usize, f64)> = lp.objective.iter().copied().enumerate().collect();
    write_terms(&mut out, &lp, &objective);
    out.push_str("\nSubject To\n");
    for row in &lp.rows {
        let _ = write!(out, " {}:", row.name);
        write_terms(&mut out, &lp, &row.coeffs);
        let _ = writeln!(out, " {} {}", row.sense, row.rhs);
    }
    out.push_str("Bounds\n");
    for v in lp.vars.iter().filter(|v| !v.integer) {
        if v.upper.is_finite() {
            let _ = writeln!(out, " {} <= {} <= {}", v.lower, v.name, v.upper);
        } else if v.lower != 0.0 {
            let _ = writeln!(out, " {} >= {}", v.name, v.lower);
        }
    }
    out.push_str("Binaries\n");
    for chunk in lp.vars.iter().filter(|v| v.integer).collect::<Vec<_>>().chunks(8) {
        let names: Vec<&str> = chunk.iter().map(|v| v.name.as_str()).collect();
        let _ = writeln!(out, " {}", names.join(" "));
    }
    out.push_str("End\n");
    out
}
