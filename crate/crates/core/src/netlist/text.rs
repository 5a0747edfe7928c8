//! Structural text format, one statement per line:
//!
//! ```text
//! input <bus> <width>
//! output <bus> <width>
//! net <name>
//! gate <id> <KIND> <out> <in1> [<in2> ...]
//! annot carry_in_of_bit <k> <net>
//! ```
//!
//! `#` starts a comment. Bus bits are referenced as `bus[i]`. Statements may
//! appear in any order. [`emit_netlist`] writes the canonical ordering.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use super::{Netlist, NetlistError, RawAnnotation, RawBus, RawGate, RawNetlist, CARRY_IN_ROLE};
use crate::netlist::GateKind;

struct Tok<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Tok<'_>> {
    let code = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let mut toks = Vec::new();
    let mut start = None;
    for (i, c) in code.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                toks.push(Tok {
                    text: &code[s..i],
                    column: code[..s].chars().count() + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        toks.push(Tok {
            text: &code[s..],
            column: code[..s].chars().count() + 1,
        });
    }
    toks
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> NetlistError {
    NetlistError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn number<T: core::str::FromStr>(line: usize, tok: &Tok<'_>, what: &str) -> Result<T, NetlistError> {
    tok.text
        .parse()
        .map_err(|_| syntax(line, tok.column, format!("expected {what}, found `{}`", tok.text)))
}

fn name_token(line: usize, tok: &Tok<'_>) -> Result<String, NetlistError> {
    if tok.text.chars().all(|c| c.is_ascii_graphic()) {
        Ok(tok.text.to_string())
    } else {
        Err(syntax(line, tok.column, format!("invalid name `{}`", tok.text)))
    }
}

fn parse_raw(text: &str) -> Result<RawNetlist, NetlistError> {
    let mut raw = RawNetlist::default();
    for (ln, line) in text.lines().enumerate() {
        let ln = ln + 1;
        let toks = tokenize(line);
        let Some(head) = toks.first() else { continue };
        let end_col = line.chars().count() + 1;
        let arg = |i: usize| -> Result<&Tok<'_>, NetlistError> {
            toks.get(i)
                .ok_or_else(|| syntax(ln, end_col, format!("`{}` needs more operands", head.text)))
        };
        let exact = |n: usize| -> Result<(), NetlistError> {
            match toks.get(n) {
                Some(t) => Err(syntax(ln, t.column, format!("unexpected token `{}`", t.text))),
                None => Ok(()),
            }
        };
        match head.text {
            "input" | "output" => {
                let bus = RawBus {
                    name: name_token(ln, arg(1)?)?,
                    width: number(ln, arg(2)?, "a bus width")?,
                };
                exact(3)?;
                if bus.width == 0 {
                    return Err(syntax(ln, arg(2)?.column, "bus width must be positive"));
                }
                if head.text == "input" {
                    raw.inputs.push(bus);
                } else {
                    raw.outputs.push(bus);
                }
            }
            "net" => {
                raw.nets.push(name_token(ln, arg(1)?)?);
                exact(2)?;
            }
            "gate" => {
                let id = number(ln, arg(1)?, "a gate id")?;
                let kt = arg(2)?;
                let kind = GateKind::from_name(kt.text)
                    .ok_or_else(|| syntax(ln, kt.column, format!("unknown gate kind `{}`", kt.text)))?;
                let output = name_token(ln, arg(3)?)?;
                arg(4)?;
                let inputs = toks[4..]
                    .iter()
                    .map(|t| name_token(ln, t))
                    .collect::<Result<Vec<_>, _>>()?;
                raw.gates.push(RawGate {
                    id,
                    kind,
                    output,
                    inputs,
                });
            }
            "annot" => {
                let role = arg(1)?;
                if role.text != CARRY_IN_ROLE {
                    return Err(syntax(
                        ln,
                        role.column,
                        format!("unknown annotation role `{}`", role.text),
                    ));
                }
                let bit = number(ln, arg(2)?, "a bit position")?;
                let net = name_token(ln, arg(3)?)?;
                exact(4)?;
                raw.annotations.push(RawAnnotation {
                    role: CARRY_IN_ROLE.into(),
                    bit,
                    net,
                });
            }
            other => {
                return Err(syntax(ln, head.column, format!("unknown statement `{other}`")));
            }
        }
    }
    Ok(raw)
}

/// Parse and validate. Either a complete [`Netlist`] or exactly one error.
pub fn parse_netlist(text: &str) -> Result<Netlist, NetlistError> {
    Netlist::from_raw(&parse_raw(text)?)
}

/// Canonical text: inputs, outputs, internal nets, gates by id, annotations by bit.
pub fn emit_netlist(netlist: &Netlist) -> String {
    let raw = netlist.to_raw();
    let mut s = String::new();
    for b in &raw.inputs {
        let _ = writeln!(s, "input {} {}", b.name, b.width);
    }
    for b in &raw.outputs {
        let _ = writeln!(s, "output {} {}", b.name, b.width);
    }
    for n in &raw.nets {
        let _ = writeln!(s, "net {}", n);
    }
    for g in &raw.gates {
        let _ = write!(s, "gate {} {} {}", g.id, g.kind, g.output);
        for i in &g.inputs {
            let _ = write!(s, " {}", i);
        }
        s.push('\n');
    }
    for a in &raw.annotations {
        let _ = writeln!(s, "annot {} {} {}", a.role, a.bit, a.net);
    }
    s
}
