use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use super::RawRating;
use crate::error::{Error, Result};

/// Field separator of a rating log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Delimiter {
    #[default]
    Tab,
    Comma,
    /// `::`, as in the MovieLens `.dat` dumps.
    DoubleColon,
}

impl Delimiter {
    fn as_str(self) -> &'static str {
        match self {
            Delimiter::Tab => "\t",
            Delimiter::Comma => ",",
            Delimiter::DoubleColon => "::",
        }
    }
}

impl FromStr for Delimiter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tab" | "\t" | "\\t" => Ok(Delimiter::Tab),
            "comma" | "," => Ok(Delimiter::Comma),
            "::" | "double-colon" => Ok(Delimiter::DoubleColon),
            _ => Err(Error::InvalidArgument(format!("unknown delimiter {s:?}"))),
        }
    }
}

fn parse_line(line: &str, delim: Delimiter, line_no: usize) -> Result<RawRating> {
    let err = |reason: String| Error::Parse {
        line: line_no,
        reason,
    };
    let fields: Vec<&str> = line.split(delim.as_str()).map(str::trim).collect();
    if !(3..=4).contains(&fields.len()) {
        return Err(err(format!("expected 3 or 4 fields, found {}", fields.len())));
    }
    if fields[0].is_empty() || fields[1].is_empty() {
        return Err(err("empty user or item id".into()));
    }
    let rating: f64 = fields[2]
        .parse()
        .map_err(|_| err(format!("bad rating {:?}", fields[2])))?;
    if !rating.is_finite() {
        return Err(err(format!("rating {rating} is not finite")));
    }
    let timestamp = match fields.get(3) {
        Some(t) if !t.is_empty() => Some(
            t.parse()
                .map_err(|_| err(format!("bad timestamp {t:?}")))?,
        ),
        _ => None,
    };
    Ok(RawRating {
        user: fields[0].to_owned(),
        item: fields[1].to_owned(),
        rating,
        timestamp,
    })
}

/// Parses `user<D>item<D>rating[<D>timestamp]` lines. Blank lines and lines
/// starting with `#` are skipped; line numbers in errors are 1-based.
pub fn parse_ratings<R: BufRead>(reader: R, delim: Delimiter) -> Result<Vec<RawRating>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: n + 1,
            reason: e.to_string(),
        })?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_line(trimmed, delim, n + 1)?);
    }
    Ok(out)
}

pub fn read_ratings(path: &Path, delim: Delimiter) -> Result<Vec<RawRating>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(std::io::BufReader::new(f), delim)
}
