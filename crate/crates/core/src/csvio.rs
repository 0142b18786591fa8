//! CSV files with a `#`-prefixed metadata preamble.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

/// Shortest round-trip formatting, switching to exponent form for very
/// large or very small magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata(pub Vec<(String, String)>);

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Renders metadata lines, the header and the rows into one string.
pub fn render<R, S>(meta: &Metadata, header: &[S], rows: R) -> String
where
    R: IntoIterator<Item = Vec<String>>,
    S: AsRef<str>,
{
    let mut out = String::new();
    for (k, v) in &meta.0 {
        out.push_str(&format!("# {k}={v}\n"));
    }
    let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
    wtr.write_record(header.iter().map(|s| s.as_ref())).expect("in-memory write");
    for row in rows {
        wtr.write_record(&row).expect("in-memory write");
    }
    out.push_str(&String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf8"));
    out
}

/// Writes `contents` to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub struct Table {
    pub meta: Metadata,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn parse(text: &str) -> Result<Table, csv::Error> {
    let mut meta = Metadata::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some((k, v)) = line.trim_start_matches('#').trim().split_once('=') {
            meta.0.push((k.to_string(), v.to_string()));
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr.headers()?.iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok(Table { meta, header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.0, -0.0, 1.0, 0.1, 1e-300, 123456.789, 1e20, -3.5e-7, f64::MAX] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn render_then_parse() {
        let meta = Metadata::new().with("version", "1").with("hash", "abc");
        let text = render(&meta, &["a", "b"], vec![vec!["1".into(), "x".into()]]);
        assert!(text.starts_with("# version=1\n# hash=abc\na,b\n"));
        let t = parse(&text).unwrap();
        assert_eq!(t.meta, meta);
        assert_eq!(t.header, vec!["a", "b"]);
        assert_eq!(t.rows, vec![vec!["1".to_string(), "x".to_string()]]);
    }
}
