//! Zero run-length pass followed by a length-limited canonical Huffman pass.
//!
//! Coded body: `[varint rle_len][u8 nsym-1][(sym, len) × nsym][bitstream]`.
//! A tile that does not shrink is stored raw. Inside bins the choice is a
//! Bin Table flag; standalone payloads prefix it as one byte (`0` raw, `1` coded).

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::BinError;

const MAX_CODE_LEN: u8 = 15;
const FLAG_RAW: u8 = 0;
const FLAG_HUFFMAN: u8 = 1;

/// Zero runs become `0x00, len-1` (runs of at most 256); other bytes pass through.
pub fn rle_encode(raw: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(raw.len() / 2);
    let mut i = 0;
    while i < raw.len() {
        if raw[i] == 0 {
            let mut run = 1;
            while i + run < raw.len() && raw[i + run] == 0 && run < 256 {
                run += 1;
            }
            out.push(0);
            out.push((run - 1) as u8);
            i += run;
        } else {
            out.push(raw[i]);
            i += 1;
        }
    }
    out
}

pub fn rle_decode(enc: &[u8]) -> Result<Vec<u8>, BinError> {
    let mut out = Vec::with_capacity(enc.len() * 2);
    let mut it = enc.iter();
    while let Some(&b) = it.next() {
        if b == 0 {
            let &n = it
                .next()
                .ok_or_else(|| BinError::Codec("truncated zero run".into()))?;
            out.resize(out.len() + n as usize + 1, 0);
        } else {
            out.push(b);
        }
    }
    Ok(out)
}

fn huffman_lengths(freq: &[u64; 256]) -> [u8; 256] {
    let mut freq = *freq;
    loop {
        let lens = unrestricted_lengths(&freq);
        if lens.iter().all(|&l| l <= MAX_CODE_LEN) {
            return lens;
        }
        // flatten the distribution and retry
        for f in freq.iter_mut().filter(|f| **f > 0) {
            *f = (*f).div_ceil(2);
        }
    }
}

fn unrestricted_lengths(freq: &[u64; 256]) -> [u8; 256] {
    let mut lens = [0u8; 256];
    let used: Vec<usize> = (0..256).filter(|&s| freq[s] > 0).collect();
    if used.len() == 1 {
        lens[used[0]] = 1;
        return lens;
    }
    // nodes: leaves 0..256, internal nodes appended; parent links give depth
    let mut parent: Vec<usize> = vec![usize::MAX; 256];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        used.iter().map(|&s| Reverse((freq[s], s))).collect();
    while heap.len() > 1 {
        let Reverse((fa, a)) = heap.pop().expect("len > 1");
        let Reverse((fb, b)) = heap.pop().expect("len > 1");
        let id = parent.len();
        parent.push(usize::MAX);
        parent[a] = id;
        parent[b] = id;
        heap.push(Reverse((fa + fb, id)));
    }
    for &s in &used {
        let mut d = 0u32;
        let mut n = s;
        while parent[n] != usize::MAX {
            n = parent[n];
            d += 1;
        }
        lens[s] = d.min(255) as u8;
    }
    lens
}

/// Canonical codes: symbols sorted by (length, value), codes assigned in order.
fn canonical_codes(lens: &[u8; 256]) -> [u32; 256] {
    let mut syms: Vec<usize> = (0..256).filter(|&s| lens[s] > 0).collect();
    syms.sort_by_key(|&s| (lens[s], s));
    let mut codes = [0u32; 256];
    let mut code = 0u32;
    let mut prev_len = 0u8;
    for (i, &s) in syms.iter().enumerate() {
        if i > 0 {
            code += 1;
        }
        code <<= lens[s] - prev_len;
        prev_len = lens[s];
        codes[s] = code;
    }
    codes
}

fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let b = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(b);
            return;
        }
        out.push(b | 0x80);
    }
}

fn read_varint(buf: &[u8], pos: &mut usize) -> Result<u64, BinError> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *buf
            .get(*pos)
            .ok_or_else(|| BinError::Codec("truncated length".into()))?;
        *pos += 1;
        v |= u64::from(b & 0x7f) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(BinError::Codec("varint overflow".into()))
}

fn huffman_encode(sym: &[u8]) -> Vec<u8> {
    let mut freq = [0u64; 256];
    for &b in sym {
        freq[b as usize] += 1;
    }
    let lens = huffman_lengths(&freq);
    let codes = canonical_codes(&lens);
    let present: Vec<usize> = (0..256).filter(|&s| lens[s] > 0).collect();

    let mut out = Vec::new();
    write_varint(&mut out, sym.len() as u64);
    out.push((present.len() - 1) as u8);
    for &s in &present {
        out.push(s as u8);
        out.push(lens[s]);
    }
    let mut acc = 0u64;
    let mut nbits = 0u32;
    for &b in sym {
        let l = u32::from(lens[b as usize]);
        acc = (acc << l) | u64::from(codes[b as usize]);
        nbits += l;
        while nbits >= 8 {
            nbits -= 8;
            out.push((acc >> nbits) as u8);
        }
    }
    if nbits > 0 {
        out.push((acc << (8 - nbits)) as u8);
    }
    out
}

fn huffman_decode(buf: &[u8]) -> Result<Vec<u8>, BinError> {
    let mut pos = 0;
    let n = read_varint(buf, &mut pos)? as usize;
    let nsym = *buf
        .get(pos)
        .ok_or_else(|| BinError::Codec("missing symbol count".into()))? as usize
        + 1;
    pos += 1;
    let mut lens = [0u8; 256];
    for _ in 0..nsym {
        let pair = buf
            .get(pos..pos + 2)
            .ok_or_else(|| BinError::Codec("truncated code table".into()))?;
        if pair[1] == 0 || pair[1] > MAX_CODE_LEN {
            return Err(BinError::Codec(format!("bad code length {}", pair[1])));
        }
        lens[pair[0] as usize] = pair[1];
        pos += 2;
    }
    // canonical decode tables
    let mut syms: Vec<usize> = (0..256).filter(|&s| lens[s] > 0).collect();
    syms.sort_by_key(|&s| (lens[s], s));
    let mut count = [0u32; MAX_CODE_LEN as usize + 1];
    for &s in &syms {
        count[lens[s] as usize] += 1;
    }
    let mut out = Vec::with_capacity(n);
    let bits = &buf[pos..];
    let mut bitpos = 0usize;
    while out.len() < n {
        let mut code = 0u32;
        let mut first = 0u32;
        let mut index = 0u32;
        let mut found = None;
        for len in 1..=MAX_CODE_LEN as usize {
            let byte = *bits
                .get(bitpos / 8)
                .ok_or_else(|| BinError::Codec("truncated bitstream".into()))?;
            code |= u32::from((byte >> (7 - bitpos % 8)) & 1);
            bitpos += 1;
            let c = count[len];
            if code < first + c {
                found = Some(syms[(index + code - first) as usize]);
                break;
            }
            index += c;
            first = (first + c) << 1;
            code <<= 1;
        }
        out.push(found.ok_or_else(|| BinError::Codec("invalid code".into()))? as u8);
    }
    Ok(out)
}

/// Returns `(stored, body)`; the body is never longer than `raw`.
pub fn encode(raw: &[u8]) -> (bool, Vec<u8>) {
    if raw.is_empty() {
        return (false, Vec::new());
    }
    let coded = huffman_encode(&rle_encode(raw));
    if coded.len() < raw.len() {
        (false, coded)
    } else {
        (true, raw.to_vec())
    }
}

pub fn decode(stored: bool, body: &[u8]) -> Result<Vec<u8>, BinError> {
    match (stored, body.is_empty()) {
        (true, _) => Ok(body.to_vec()),
        (false, true) => Ok(Vec::new()),
        (false, false) => rle_decode(&huffman_decode(body)?),
    }
}

/// Self-describing payload; never longer than `raw.len() + 1`.
pub fn compress(raw: &[u8]) -> Vec<u8> {
    let (stored, body) = encode(raw);
    let mut out = Vec::with_capacity(body.len() + 1);
    out.push(if stored { FLAG_RAW } else { FLAG_HUFFMAN });
    out.extend(body);
    out
}

pub fn decompress(payload: &[u8]) -> Result<Vec<u8>, BinError> {
    match payload.split_first() {
        Some((&FLAG_RAW, rest)) => decode(true, rest),
        Some((&FLAG_HUFFMAN, rest)) => decode(false, rest),
        Some((f, _)) => Err(BinError::Codec(format!("unknown flag {f}"))),
        None => Err(BinError::Codec("empty payload".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeros_compress_tightly() {
        let c = compress(&[0u8; 1024]);
        assert!(c.len() <= 16, "{}", c.len());
        assert_eq!(decompress(&c).unwrap(), vec![0u8; 1024]);
    }

    #[test]
    fn random_bytes_are_stored() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let raw: Vec<u8> = (0..1024).map(|_| rng.gen()).collect();
        let c = compress(&raw);
        assert_eq!(c.len(), 1025);
        assert_eq!(c[0], FLAG_RAW);
        assert_eq!(decompress(&c).unwrap(), raw);
    }

    #[test]
    fn rle_runs_split_at_256() {
        let enc = rle_encode(&[0u8; 300]);
        assert_eq!(enc, vec![0, 255, 0, 43]);
        assert_eq!(rle_decode(&enc).unwrap().len(), 300);
        assert_eq!(rle_encode(&[5, 0, 7]), vec![5, 0, 0, 7]);
    }

    #[test]
    fn code_lengths_respect_limit_on_fibonacci_frequencies() {
        let mut freq = [0u64; 256];
        let (mut a, mut b) = (1u64, 1u64);
        for f in freq.iter_mut().take(40) {
            *f = a;
            (a, b) = (b, a + b);
        }
        let lens = huffman_lengths(&freq);
        assert!(lens.iter().all(|&l| l <= MAX_CODE_LEN));
        // Kraft equality for a complete prefix code
        let kraft: f64 = lens
            .iter()
            .filter(|&&l| l > 0)
            .map(|&l| 0.5f64.powi(l as i32))
            .sum();
        assert!((kraft - 1.0).abs() < 1e-12);
    }

    #[test]
    fn skewed_data_roundtrips() {
        let mut freq_raw = Vec::new();
        let (mut a, mut b) = (1usize, 1usize);
        for s in 1..30u8 {
            freq_raw.extend(std::iter::repeat(s).take(a.min(20_000)));
            (a, b) = (b, a + b);
        }
        let c = compress(&freq_raw);
        assert!(c.len() < freq_raw.len());
        assert_eq!(decompress(&c).unwrap(), freq_raw);
    }

    #[test]
    fn corrupt_payload_errors() {
        assert!(decompress(&[]).is_err());
        assert!(decompress(&[9, 1, 2]).is_err());
        let mut c = compress(&[1, 2, 3, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2, 3, 1, 1, 1, 1]);
        c.truncate(c.len() - 1);
        assert!(decompress(&c).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(raw in prop::collection::vec(prop_oneof![3 => Just(0u8), 1 => any::<u8>()], 0..2000)) {
            let c = compress(&raw);
            prop_assert!(c.len() <= raw.len() + 1);
            prop_assert_eq!(decompress(&c).unwrap(), raw.clone());
            let (stored, body) = encode(&raw);
            prop_assert!(body.len() <= raw.len());
            prop_assert_eq!(decode(stored, &body).unwrap(), raw);
        }
    }
}
