use std::fmt;

use super::{Scope, Unit, VarRole};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// A sum unit child whose scope differs from the sum unit's scope.
    NotSmooth {
        unit: usize,
        child: usize,
    },
    /// A variable shared by two children of a product unit.
    NotDecomposable {
        unit: usize,
        var: usize,
    },
    /// A sum or product unit without children.
    NoChildren {
        unit: usize,
    },
    /// A discrete input unit placed on an embedding variable.
    FamilyRole {
        unit: usize,
        var: usize,
    },
    VarOutOfRange {
        unit: usize,
        var: usize,
    },
    /// Declared variables missing from the root scope.
    RootScope {
        missing: Vec<usize>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotSmooth { unit, child } => {
                write!(f, "sum unit {unit} is not smooth (child {child} has a different scope)")
            }
            Violation::NotDecomposable { unit, var } => {
                write!(f, "product unit {unit} is not decomposable (variable {var} shared)")
            }
            Violation::NoChildren { unit } => write!(f, "unit {unit} has no children"),
            Violation::FamilyRole { unit, var } => {
                write!(
                    f,
                    "input unit {unit} places a discrete family on embedding variable {var}"
                )
            }
            Violation::VarOutOfRange { unit, var } => {
                write!(f, "input unit {unit} references undeclared variable {var}")
            }
            Violation::RootScope { missing } => write!(f, "root scope misses variables {missing:?}"),
        }
    }
}

/// Every structural problem found; empty means smooth and decomposable.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_graph(units: &[Unit]) -> Result<()> {
    let n = units.len();
    for (u, unit) in units.iter().enumerate() {
        if let Some(&c) = unit.children().iter().find(|&&c| c >= n) {
            return Err(Error::invalid(format!("unit {u} references missing unit {c}")));
        }
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    for start in 0..n {
        if state[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        state[start] = 1;
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            let children = units[u].children();
            if *next < children.len() {
                let c = children[*next];
                *next += 1;
                match state[c] {
                    0 => {
                        state[c] = 1;
                        stack.push((c, 0));
                    }
                    1 => return Err(Error::Cyclic(c)),
                    _ => {}
                }
            } else {
                state[u] = 2;
                stack.pop();
            }
        }
    }
    for (u, unit) in units.iter().enumerate() {
        if let Some(&c) = unit.children().iter().find(|&&c| c >= u) {
            return Err(Error::NotTopological { unit: u, child: c });
        }
    }
    Ok(())
}

pub(crate) fn compute_scopes(units: &[Unit], num_vars: usize) -> Vec<Scope> {
    let mut scopes: Vec<Scope> = Vec::with_capacity(units.len());
    for unit in units {
        let s = match unit {
            Unit::Input { var, .. } => {
                if *var < num_vars {
                    Scope::singleton(num_vars, *var)
                } else {
                    Scope::empty(num_vars)
                }
            }
            Unit::Sum { children } | Unit::Product { children } => {
                let mut s = Scope::empty(num_vars);
                for &c in children {
                    s.union_with(&scopes[c]);
                }
                s
            }
        };
        scopes.push(s);
    }
    scopes
}

/// Checks smoothness and decomposability of a topologically ordered unit list
/// whose root is the last unit. Cycles and ordering errors are hard errors;
/// structural property violations are collected into the report.
pub fn validate_structure(units: &[Unit], roles: &[VarRole]) -> Result<ValidationReport> {
    if units.is_empty() {
        return Err(Error::invalid("circuit has no units"));
    }
    check_graph(units)?;
    let nv = roles.len();
    let scopes = compute_scopes(units, nv);
    let mut violations = Vec::new();
    for (u, unit) in units.iter().enumerate() {
        match unit {
            Unit::Input { var, family } => {
                if *var >= nv {
                    violations.push(Violation::VarOutOfRange { unit: u, var: *var });
                } else if roles[*var] == VarRole::Embedding && family.is_discrete() {
                    violations.push(Violation::FamilyRole { unit: u, var: *var });
                }
            }
            Unit::Sum { children } => {
                if children.is_empty() {
                    violations.push(Violation::NoChildren { unit: u });
                }
                for &c in children {
                    if scopes[c] != scopes[u] {
                        violations.push(Violation::NotSmooth { unit: u, child: c });
                    }
                }
            }
            Unit::Product { children } => {
                if children.is_empty() {
                    violations.push(Violation::NoChildren { unit: u });
                }
                let mut seen = Scope::empty(nv);
                for &c in children {
                    let shared = seen.intersection(&scopes[c]);
                    for var in shared.iter() {
                        violations.push(Violation::NotDecomposable { unit: u, var });
                    }
                    seen.union_with(&scopes[c]);
                }
            }
        }
    }
    let root = &scopes[units.len() - 1];
    let missing: Vec<usize> = (0..nv).filter(|&v| !root.contains(v)).collect();
    if !missing.is_empty() {
        violations.push(Violation::RootScope { missing });
    }
    Ok(ValidationReport { violations })
}
