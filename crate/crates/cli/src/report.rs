//! Regenerates the summary of a finished run from its trace files and checks
//! it against what is on disk.

use std::fs;
use std::path::Path;

use np2m2::rrm::read_trace_csv;

use crate::error::CliError;
use crate::runner::{
    build_tables, write_atomic, CellKey, ManifestEntry, MANIFEST_FILE, MANIFEST_HEADER, SUMMARY_FILE, TRACE_DIR,
};

/// Outcome of a successful audit.
#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    pub traces: usize,
    pub cells: usize,
    pub summary_csv: String,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(CliError::Audit(format!("{MANIFEST_FILE}: unexpected header")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || CliError::Audit(format!("{MANIFEST_FILE}: malformed line {}", i + 2));
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 10 {
                return Err(bad());
            }
            Ok(ManifestEntry {
                trace: c[0].into(),
                key: CellKey {
                    dataset: c[1].into(),
                    map: c[2].into(),
                    d: c[3].into(),
                    method: c[4].into(),
                    alpha: c[5].into(),
                },
                trial: c[6].parse().map_err(|_| bad())?,
                burn_in: c[7].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn first_difference(a: &str, b: &str) -> Option<usize> {
    let (mut la, mut lb) = (a.lines(), b.lines());
    let mut n = 0;
    loop {
        n += 1;
        match (la.next(), lb.next()) {
            (None, None) => return None,
            (x, y) if x != y => return Some(n),
            _ => {}
        }
    }
}

/// Recomputes the manifest and summary from `dir/traces`. Any disagreement
/// with the stored files is an error naming the offending file.
pub fn audit(dir: &Path) -> Result<Audit, CliError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let stored_manifest = fs::read_to_string(&manifest_path).map_err(CliError::io(&manifest_path))?;
    let entries = parse_manifest(&stored_manifest)?;
    let mut loaded = Vec::with_capacity(entries.len());
    for entry in entries {
        let path = dir.join(TRACE_DIR).join(&entry.trace);
        let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
        let records =
            read_trace_csv(text.as_bytes()).map_err(|e| CliError::Audit(format!("{}: {e}", path.display())))?;
        loaded.push((entry, records));
    }
    let (manifest, summary) = build_tables(&loaded)?;

    if let Some(line) = first_difference(&manifest, &stored_manifest) {
        let culprit = manifest
            .lines()
            .nth(line - 1)
            .and_then(|l| l.split(',').next())
            .filter(|_| line > 1)
            .map(|t| dir.join(TRACE_DIR).join(t).display().to_string())
            .unwrap_or_else(|| manifest_path.display().to_string());
        return Err(CliError::Audit(format!(
            "{culprit} does not match {} line {line}",
            manifest_path.display()
        )));
    }
    let summary_path = dir.join(SUMMARY_FILE);
    match fs::read_to_string(&summary_path) {
        Ok(stored) => {
            if let Some(line) = first_difference(&summary, &stored) {
                return Err(CliError::Audit(format!(
                    "{} differs from the regenerated summary at line {line}",
                    summary_path.display()
                )));
            }
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => write_atomic(&summary_path, &summary)?,
        Err(e) => return Err(CliError::io(&summary_path)(e)),
    }
    Ok(Audit {
        traces: loaded.len(),
        cells: summary.lines().count() - 1,
        summary_csv: summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_lines() {
        assert_eq!(first_difference("a\nb\n", "a\nb\n"), None);
        assert_eq!(first_difference("a\nb\n", "a\nc\n"), Some(2));
        assert_eq!(first_difference("a\n", "a\nb\n"), Some(2));
    }

    #[test]
    fn manifest_rejects_bad_rows() {
        assert!(parse_manifest("nope\n").is_err());
        assert!(parse_manifest(&format!("{MANIFEST_HEADER}\na,b\n")).is_err());
    }
}
