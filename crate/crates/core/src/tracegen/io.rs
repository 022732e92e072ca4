use std::io::{BufRead, Read, Write};

use super::{Op, TraceError, TraceEvent};

pub const RECORD_BYTES: usize = 24;
const OP_BIT: u64 = 1 << 63;
const DIGEST_BIT: u64 = 1 << 62;
const ADDR_MASK: u64 = (1 << 48) - 1;

pub fn write_csv<W: Write>(mut w: W, events: &[TraceEvent]) -> Result<(), TraceError> {
    writeln!(w, "op,addr,size,t,digest")?;
    for e in events {
        let op = match e.op {
            Op::Read => "R",
            Op::Write => "W",
        };
        match e.digest {
            Some(d) => writeln!(w, "{op},{},{},{},{d:08x}", e.addr, e.size, e.t)?,
            None => writeln!(w, "{op},{},{},{},", e.addr, e.size, e.t)?,
        }
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some("op,addr,size,t,digest") {
        return Err(TraceError::Format("missing CSV header".into()));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| TraceError::Format(format!("line {}: bad {what}", n + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("field count"));
        }
        let op = match f[0] {
            "R" => Op::Read,
            "W" => Op::Write,
            _ => return Err(bad("op")),
        };
        out.push(TraceEvent {
            op,
            addr: f[1].parse().map_err(|_| bad("addr"))?,
            size: f[2].parse().map_err(|_| bad("size"))?,
            t: f[3].parse().map_err(|_| bad("t"))?,
            digest: if f[4].is_empty() {
                None
            } else {
                Some(u32::from_str_radix(f[4], 16).map_err(|_| bad("digest"))?)
            },
        });
    }
    Ok(out)
}

/// Fixed 24-byte little-endian records:
/// `[u64 addr | op<<63 | has_digest<<62][u64 t][u32 size][u32 digest]`.
pub fn write_binary<W: Write>(mut w: W, events: &[TraceEvent]) -> Result<(), TraceError> {
    for e in events {
        if e.addr > ADDR_MASK {
            return Err(TraceError::Format(format!(
                "address {:#x} exceeds 48 bits",
                e.addr
            )));
        }
        let mut head = e.addr;
        if e.op == Op::Write {
            head |= OP_BIT;
        }
        if e.digest.is_some() {
            head |= DIGEST_BIT;
        }
        w.write_all(&head.to_le_bytes())?;
        w.write_all(&e.t.to_le_bytes())?;
        w.write_all(&e.size.to_le_bytes())?;
        w.write_all(&e.digest.unwrap_or(0).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() % RECORD_BYTES != 0 {
        return Err(TraceError::Format(format!(
            "{} bytes is not a whole number of records",
            buf.len()
        )));
    }
    Ok(buf
        .chunks_exact(RECORD_BYTES)
        .map(|c| {
            let head = u64::from_le_bytes(c[0..8].try_into().expect("8 bytes"));
            TraceEvent {
                op: if head & OP_BIT != 0 {
                    Op::Write
                } else {
                    Op::Read
                },
                addr: head & ADDR_MASK,
                t: u64::from_le_bytes(c[8..16].try_into().expect("8 bytes")),
                size: u32::from_le_bytes(c[16..20].try_into().expect("4 bytes")),
                digest: (head & DIGEST_BIT != 0)
                    .then(|| u32::from_le_bytes(c[20..24].try_into().expect("4 bytes"))),
            }
        })
        .collect())
}
