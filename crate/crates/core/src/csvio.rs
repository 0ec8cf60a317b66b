//! CSV files with a leading `# key=value` metadata block.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a file
//! read back reproduces the exact values written.

use std::fmt::Display;

use crate::error::{Error, Result};

/// Ordered key-value metadata written as comment lines above the header row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata(Vec<(String, String)>);

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) -> &mut Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Display) -> Self {
        self.push(key, value);
        self
    }

    pub fn extend(&mut self, other: &Metadata) {
        self.0.extend(other.0.iter().cloned());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Format(format!("missing metadata key `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("bad value `{raw}` for metadata key `{key}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub metadata: Metadata,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(metadata: Metadata, header: &[&str]) -> Self {
        Self {
            metadata,
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column `{name}`")))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut out = String::new();
        for (k, v) in self.metadata.iter() {
            out.push_str(&format!("# {k}={v}\n"));
        }
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        out.push_str(&String::from_utf8(body).expect("csv writer emits utf-8"));
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut metadata = Metadata::new();
        let mut body_start = 0;
        for line in text.split_inclusive('\n') {
            let Some(rest) = line.strip_prefix('#') else {
                break;
            };
            body_start += line.len();
            let rest = rest.trim();
            if rest.is_empty() {
                continue;
            }
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("metadata line without `=`: {rest}")))?;
            metadata.push(k.trim(), v.trim());
        }
        let mut r = csv::ReaderBuilder::new().from_reader(&text.as_bytes()[body_start..]);
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Self {
            metadata,
            header,
            rows,
        })
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad number `{s}` in column `{what}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_metadata() {
        let md = Metadata::new().with("N", 3).with("sigma", 0.1);
        let mut t = Table::new(md, &["k", "x"]);
        t.push_row(vec!["0".into(), (0.1f64 + 0.2).to_string()]);
        t.push_row(vec!["1".into(), "-1".into()]);
        let text = t.to_csv_string().unwrap();
        assert!(text.starts_with("# N=3\n# sigma=0.1\nk,x\n"));
        let back = Table::parse(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.metadata.parse::<usize>("N").unwrap(), 3);
        let x: f64 = back.rows[0][1].parse().unwrap();
        assert_eq!(x, 0.1 + 0.2);
    }

    #[test]
    fn missing_metadata_is_an_error() {
        let t = Table::parse("a\n1\n").unwrap();
        assert!(t.metadata.parse::<f64>("sigma").is_err());
        assert!(t.column("b").is_err());
    }
}
