use std::cell::Cell;
use std::collections::BTreeMap;

use super::{elements, Atom, Bond, BondOrder, MolecularGraph, SmilesError};

thread_local! {
    static PARSE_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of `parse_smiles` calls made on the current thread.
pub fn parse_call_count() -> usize {
    PARSE_CALLS.with(Cell::get)
}

const ORGANIC: &[&str] = &["B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"];
const AROMATIC: &[&str] = &["b", "c", "n", "o", "p", "s"];

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    graph: MolecularGraph,
    prev: Option<usize>,
    pending: Option<(BondOrder, usize)>,
    branches: Vec<(usize, usize)>,
    rings: BTreeMap<u32, (usize, Option<BondOrder>, usize)>,
}

/// Parses the supported SMILES subset into a heavy-atom graph.
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, SmilesError> {
    PARSE_CALLS.with(|c| c.set(c.get() + 1));
    if text.is_empty() {
        return Err(SmilesError::Empty);
    }
    if let Some(p) = text.bytes().position(|b| !b.is_ascii()) {
        return Err(SmilesError::NonAscii(p));
    }
    let mut p = Parser {
        s: text.as_bytes(),
        pos: 0,
        graph: MolecularGraph::default(),
        prev: None,
        pending: None,
        branches: Vec::new(),
        rings: BTreeMap::new(),
    };
    p.run()?;
    Ok(p.graph)
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn syntax(&self, msg: impl Into<String>) -> SmilesError {
        SmilesError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    let Some(prev) = self.prev else {
                        return Err(SmilesError::UnbalancedParenthesis(self.pos));
                    };
                    if self.pending.is_some() {
                        return Err(self.syntax("bond symbol before branch"));
                    }
                    self.branches.push((prev, self.pos));
                    self.pos += 1;
                }
                b')' => {
                    let Some((atom, _)) = self.branches.pop() else {
                        return Err(SmilesError::UnbalancedParenthesis(self.pos));
                    };
                    if self.pending.is_some() {
                        return Err(self.syntax("dangling bond at end of branch"));
                    }
                    self.prev = Some(atom);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if self.pending.is_some() {
                        return Err(self.syntax("two consecutive bond symbols"));
                    }
                    if self.prev.is_none() {
                        return Err(self.syntax("bond symbol before any atom"));
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    self.pending = Some((order, self.pos));
                    self.pos += 1;
                }
                b'/' | b'\\' => {
                    return Err(SmilesError::Unsupported {
                        feature: "directional bond (stereochemistry)",
                        pos: self.pos,
                    })
                }
                b'.' => {
                    return Err(SmilesError::Unsupported {
                        feature: "multi-fragment SMILES ('.')",
                        pos: self.pos,
                    })
                }
                b'0'..=b'9' => {
                    let label = (c - b'0') as u32;
                    let start = self.pos;
                    self.pos += 1;
                    self.ring(label, start)?;
                }
                b'%' => {
                    let start = self.pos;
                    let digits = self.s.get(self.pos + 1..self.pos + 3);
                    let label = match digits {
                        Some(d) if d.iter().all(u8::is_ascii_digit) => ((d[0] - b'0') * 10 + (d[1] - b'0')) as u32,
                        _ => return Err(self.syntax("'%' must be followed by two digits")),
                    };
                    self.pos += 3;
                    self.ring(label, start)?;
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom)?;
                }
                b'*' => {
                    return Err(SmilesError::Unsupported {
                        feature: "wildcard atom",
                        pos: self.pos,
                    })
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom)?;
                }
            }
        }
        if let Some(&(_, pos)) = self.branches.last() {
            return Err(SmilesError::UnbalancedParenthesis(pos));
        }
        if let Some((&label, _)) = self.rings.iter().next() {
            return Err(SmilesError::UnpairedRingClosure(label));
        }
        if let Some((_, pos)) = self.pending {
            return Err(SmilesError::Syntax {
                pos,
                msg: "dangling bond at end of input".into(),
            });
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let start = self.pos;
        let two = self
            .s
            .get(self.pos..self.pos + 2)
            .map(|b| std::str::from_utf8(b).unwrap_or(""));
        let (symbol, aromatic, len) = match two {
            Some("Cl") => ("Cl".to_string(), false, 2),
            Some("Br") => ("Br".to_string(), false, 2),
            _ => {
                let c = self.s[self.pos] as char;
                let one = c.to_string();
                if ORGANIC.contains(&one.as_str()) {
                    (one, false, 1)
                } else if AROMATIC.contains(&one.as_str()) {
                    (c.to_ascii_uppercase().to_string(), true, 1)
                } else if c.is_ascii_alphabetic() {
                    return Err(SmilesError::UnknownElement {
                        symbol: one,
                        pos: start,
                    });
                } else {
                    return Err(SmilesError::Syntax {
                        pos: start,
                        msg: format!("unexpected character '{c}'"),
                    });
                }
            }
        };
        self.pos += len;
        Ok(Atom {
            symbol,
            charge: 0,
            aromatic,
            explicit_h: None,
        })
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            return Err(SmilesError::Unsupported {
                feature: "isotope label",
                pos: self.pos,
            });
        }
        let start = self.pos;
        let first = self.peek().ok_or(SmilesError::UnbalancedParenthesis(open))?;
        let (symbol, aromatic) = if first.is_ascii_lowercase() {
            // aromatic bracket atom
            let c = (first as char).to_string();
            if !AROMATIC.contains(&c.as_str()) {
                return Err(SmilesError::UnknownElement { symbol: c, pos: start });
            }
            self.pos += 1;
            (c.to_ascii_uppercase(), true)
        } else if first.is_ascii_uppercase() {
            let one = (first as char).to_string();
            let two = self
                .s
                .get(self.pos + 1)
                .filter(|c| c.is_ascii_lowercase())
                .map(|&c| format!("{one}{}", c as char));
            match two {
                Some(t) if elements::is_element(&t) => {
                    self.pos += 2;
                    (t, false)
                }
                _ if elements::is_element(&one) => {
                    self.pos += 1;
                    (one, false)
                }
                _ => {
                    let sym = two.unwrap_or(one);
                    return Err(SmilesError::UnknownElement {
                        symbol: sym,
                        pos: start,
                    });
                }
            }
        } else if first == b'*' {
            return Err(SmilesError::Unsupported {
                feature: "wildcard atom",
                pos: start,
            });
        } else {
            return Err(self.syntax("expected element symbol in bracket atom"));
        };
        if self.peek() == Some(b'@') {
            return Err(SmilesError::Unsupported {
                feature: "tetrahedral chirality",
                pos: self.pos,
            });
        }
        let mut explicit_h = None;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            let n = self.read_number().unwrap_or(1);
            explicit_h = Some(n.min(u8::MAX as u32) as u8);
        }
        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(n) = self.read_number() {
                charge = unit * n as i32;
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    charge += unit;
                    self.pos += 1;
                }
            }
        }
        if self.peek() == Some(b':') {
            return Err(SmilesError::Unsupported {
                feature: "atom class",
                pos: self.pos,
            });
        }
        if self.peek() != Some(b']') {
            return Err(match self.peek() {
                None => SmilesError::Syntax {
                    pos: open,
                    msg: "unterminated bracket atom".into(),
                },
                Some(c) => self.syntax(format!("unexpected '{}' in bracket atom", c as char)),
            });
        }
        self.pos += 1;
        if !(-8..=8).contains(&charge) {
            return Err(SmilesError::Syntax {
                pos: open,
                msg: format!("charge {charge} out of range"),
            });
        }
        Ok(Atom {
            symbol,
            charge: charge as i8,
            aromatic,
            explicit_h,
        })
    }

    fn read_number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.s[start..self.pos]).ok()?.parse().ok()
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.graph.atoms[a].aromatic && self.graph.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_atom(&mut self, atom: Atom) -> Result<(), SmilesError> {
        self.graph.atoms.push(atom);
        let idx = self.graph.atoms.len() - 1;
        if let Some(prev) = self.prev {
            let order = match self.pending.take() {
                Some((o, _)) => o,
                None => self.default_order(prev, idx),
            };
            self.graph.bonds.push(Bond { a: prev, b: idx, order });
        } else if let Some((_, pos)) = self.pending {
            return Err(SmilesError::Syntax {
                pos,
                msg: "bond symbol without a preceding atom".into(),
            });
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring(&mut self, label: u32, pos: usize) -> Result<(), SmilesError> {
        let Some(atom) = self.prev else {
            return Err(SmilesError::Syntax {
                pos,
                msg: "ring closure before any atom".into(),
            });
        };
        let bond = self.pending.take().map(|(o, _)| o);
        match self.rings.remove(&label) {
            None => {
                self.rings.insert(label, (atom, bond, pos));
            }
            Some((other, other_bond, _)) => {
                if other == atom {
                    return Err(SmilesError::Syntax {
                        pos,
                        msg: format!("ring closure {label} bonds an atom to itself"),
                    });
                }
                if self.graph.bond_between(atom, other).is_some() {
                    return Err(SmilesError::Syntax {
                        pos,
                        msg: format!("ring closure {label} duplicates an existing bond"),
                    });
                }
                let order = match (other_bond, bond) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(SmilesError::Syntax {
                            pos,
                            msg: format!("conflicting bond orders on ring closure {label}"),
                        })
                    }
                    (Some(a), _) | (None, Some(a)) => a,
                    (None, None) => self.default_order(other, atom),
                };
                self.graph.bonds.push(Bond {
                    a: other,
                    b: atom,
                    order,
                });
            }
        }
        Ok(())
    }
}
