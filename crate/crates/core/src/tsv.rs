//! Minimal tab-separated tables with a header row. Lines starting with `#`
//! are comments (used for provenance records) and blank lines are skipped.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// 1-based source line of each row, for error messages.
    pub lines: Vec<usize>,
}

impl Table {
    /// Column index of `name`, or a format error naming the file.
    pub fn column(&self, name: &str, path: &Path) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(path, format!("missing column '{name}'")))
    }
}

pub fn parse(text: &str, path: &Path) -> Result<Table> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty table, expected a header row"))?;
    let header: Vec<String> = header.split('\t').map(|s| s.trim().to_owned()).collect();
    let mut rows = Vec::new();
    let mut numbers = Vec::new();
    for (n, line) in lines {
        let row: Vec<String> = line.split('\t').map(|s| s.trim().to_owned()).collect();
        if row.len() != header.len() {
            return Err(Error::format(
                path,
                format!("line {n}: expected {} fields, found {}", header.len(), row.len()),
            ));
        }
        rows.push(row);
        numbers.push(n);
    }
    Ok(Table {
        header,
        rows,
        lines: numbers,
    })
}

pub fn read(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

/// Render a table; `comment` lines are emitted first, each prefixed with `# `.
pub fn render<S: AsRef<str>>(comments: &[String], header: &[S], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    let header: Vec<&str> = header.iter().map(AsRef::as_ref).collect();
    out.push_str(&header.join("\t"));
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

pub fn write<S: AsRef<str>>(path: &Path, comments: &[String], header: &[S], rows: &[Vec<String>]) -> Result<()> {
    fs::write(path, render(comments, header, rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skips_comments_and_checks_widths() {
        let t = parse("# prov\na\tb\n\n1\t2\n3\t4\n", Path::new("t")).unwrap();
        assert_eq!(t.header, ["a", "b"]);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.lines, [4, 5]);
        assert!(parse("a\tb\n1\n", Path::new("t")).is_err());
        assert!(parse("# only\n", Path::new("t")).is_err());
    }
}
