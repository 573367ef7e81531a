//! Base45 (RFC 9285), the transport alphabet of QR alphanumeric mode.

use thiserror::Error;

const ALPHABET: &[u8; 45] = b"0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ $%*+-./:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Base45Error {
    #[error("invalid Base45 character {0:?} at offset {1}")]
    InvalidChar(char, usize),
    #[error("invalid Base45 length {0}")]
    InvalidLength(usize),
    #[error("Base45 triplet at offset {0} overflows 16 bits")]
    Overflow(usize),
}

fn value_of(c: u8) -> Option<u16> {
    ALPHABET.iter().position(|&a| a == c).map(|p| p as u16)
}

pub fn encode(data: &[u8]) -> String {
    let mut out = String::with_capacity(data.len().div_ceil(2) * 3);
    let mut chunks = data.chunks_exact(2);
    for pair in &mut chunks {
        let mut n = u16::from_be_bytes([pair[0], pair[1]]) as usize;
        for _ in 0..3 {
            out.push(ALPHABET[n % 45] as char);
            n /= 45;
        }
    }
    if let [last] = chunks.remainder() {
        let n = *last as usize;
        out.push(ALPHABET[n % 45] as char);
        out.push(ALPHABET[n / 45] as char);
    }
    out
}

pub fn decode(text: &str) -> Result<Vec<u8>, Base45Error> {
    let raw = text.as_bytes();
    let mut digits = Vec::with_capacity(raw.len());
    for (i, &b) in raw.iter().enumerate() {
        match value_of(b) {
            Some(v) => digits.push(v as u32),
            None => {
                let c = text[i..].chars().next().unwrap_or('\u{FFFD}');
                return Err(Base45Error::InvalidChar(c, i));
            }
        }
    }
    if digits.len() % 3 == 1 {
        return Err(Base45Error::InvalidLength(digits.len()));
    }

    let mut out = Vec::with_capacity(digits.len() / 3 * 2 + 1);
    for (i, group) in digits.chunks(3).enumerate() {
        match *group {
            [c, d, e] => {
                let n = c + d * 45 + e * 45 * 45;
                if n > u16::MAX as u32 {
                    return Err(Base45Error::Overflow(i * 3));
                }
                out.extend_from_slice(&(n as u16).to_be_bytes());
            }
            [c, d] => {
                let n = c + d * 45;
                if n > u8::MAX as u32 {
                    return Err(Base45Error::Overflow(i * 3));
                }
                out.push(n as u8);
            }
            _ => unreachable!("length checked above"),
        }
    }
    Ok(out)
}
