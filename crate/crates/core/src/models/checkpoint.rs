//! Plain-text checkpoint container.
//!
//! ```text
//! gde-checkpoint 1
//! model <free-form descriptor, one line>
//! seeds <u64> <u64> ...
//! view <name> <rows> <cols>
//! ...
//! theta <len>
//! <16 hex digits: IEEE-754 bits of θ_0>
//! ...
//! ```
//! Views are listed in storage order, so offsets are implied. Storing the
//! raw bits makes a save/load round trip exact.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::layers::ParamStore;

const MAGIC: &str = "gde-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub seeds: Vec<u64>,
    pub params: ParamStore,
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    if ckpt.descriptor.contains('\n') {
        return Err(Error::invalid("checkpoint descriptor must be a single line"));
    }
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "model {}", ckpt.descriptor)?;
    let seeds: Vec<String> = ckpt.seeds.iter().map(u64::to_string).collect();
    writeln!(w, "seeds {}", seeds.join(" "))?;
    for (name, v) in ckpt.params.views() {
        writeln!(w, "view {name} {} {}", v.rows, v.cols)?;
    }
    writeln!(w, "theta {}", ckpt.params.len())?;
    for x in ckpt.params.theta() {
        writeln!(w, "{:016x}", x.to_bits())?;
    }
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Checkpoint> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(parse_err(0, format!("unexpected end of file, expected {what}"))),
        }
    };
    let (n, magic) = next("header")?;
    if magic.trim() != MAGIC {
        return Err(parse_err(n, format!("bad header `{magic}`")));
    }
    let (n, model) = next("model line")?;
    let descriptor = model
        .strip_prefix("model ")
        .or_else(|| model.strip_prefix("model"))
        .ok_or_else(|| parse_err(n, "expected `model`"))?
        .to_string();
    let (n, seeds_line) = next("seeds line")?;
    let seeds = seeds_line
        .strip_prefix("seeds")
        .ok_or_else(|| parse_err(n, "expected `seeds`"))?
        .split_whitespace()
        .map(|s| s.parse::<u64>().map_err(|e| parse_err(n, format!("seed `{s}`: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut params = ParamStore::new();
    let total = loop {
        let (n, l) = next("view or theta line")?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["view", name, rows, cols] => {
                let rows = rows.parse().map_err(|e| parse_err(n, format!("rows: {e}")))?;
                let cols = cols.parse().map_err(|e| parse_err(n, format!("cols: {e}")))?;
                params.add(*name, rows, cols)?;
            }
            ["theta", len] => break len.parse::<usize>().map_err(|e| parse_err(n, format!("theta length: {e}")))?,
            _ => return Err(parse_err(n, format!("unexpected line `{l}`"))),
        }
    };
    if total != params.len() {
        return Err(Error::invalid(format!("theta length {total} but views cover {}", params.len())));
    }
    let mut theta = Vec::with_capacity(total);
    for _ in 0..total {
        let (n, l) = next("theta entry")?;
        let bits = u64::from_str_radix(l.trim(), 16).map_err(|e| parse_err(n, format!("theta entry: {e}")))?;
        theta.push(f64::from_bits(bits));
    }
    params.set_theta(&theta)?;
    Ok(Checkpoint {
        descriptor,
        seeds,
        params,
    })
}
