//! Count-file ingestion and replicate merging.
//!
//! Two formats are accepted: one positive integer per line, or
//! `clone_id<TAB>count` with an optional header line. Blank lines and lines
//! starting with `#` are skipped; LF and CRLF endings are both fine.

use std::collections::HashMap;
use std::path::Path;

use repdiv_core::CloneCounts;

use crate::error::{CliError, CliResult};

/// Parsed counts, with clone ids when the file carried them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    pub ids: Option<Vec<String>>,
    pub counts: Vec<u64>,
}

impl CountTable {
    pub fn to_clone_counts(&self) -> CliResult<CloneCounts> {
        Ok(CloneCounts::new(self.counts.clone())?)
    }
}

fn line_error(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("line {line}: {msg}"))
}

fn parse_count(field: &str, line: usize) -> CliResult<u64> {
    let value: i128 = field
        .trim()
        .parse()
        .map_err(|_| line_error(line, format!("'{}' is not an integer count", field.trim())))?;
    if value < 1 {
        return Err(line_error(line, format!("count must be at least 1, got {value}")));
    }
    u64::try_from(value).map_err(|_| line_error(line, format!("count {value} is too large")))
}

/// Parses count-file text; errors carry 1-based line numbers.
pub fn parse_count_text(text: &str) -> CliResult<CountTable> {
    let mut ids: Option<Vec<String>> = None;
    let mut counts = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut first_data_line = true;
    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let two_columns = line.contains('\t');
        if first_data_line {
            first_data_line = false;
            if two_columns {
                ids = Some(Vec::new());
                let second = line.split('\t').nth(1).unwrap_or("").trim();
                if second.parse::<i128>().is_err() {
                    // header line
                    continue;
                }
            }
        }
        match ids.as_mut() {
            Some(ids) => {
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 2 {
                    return Err(line_error(line_no, "expected clone_id<TAB>count"));
                }
                let id = fields[0].trim();
                if id.is_empty() {
                    return Err(line_error(line_no, "empty clone id"));
                }
                let count = parse_count(fields[1], line_no)?;
                if let Some(prev) = seen.insert(id.to_string(), line_no) {
                    return Err(line_error(
                        line_no,
                        format!("clone id '{id}' already appeared on line {prev}"),
                    ));
                }
                ids.push(id.to_string());
                counts.push(count);
            }
            None => {
                if two_columns {
                    return Err(line_error(line_no, "expected a single count per line"));
                }
                counts.push(parse_count(trimmed, line_no)?);
            }
        }
    }
    if counts.is_empty() {
        return Err(CliError::Data("no counts found".into()));
    }
    Ok(CountTable { ids, counts })
}

/// Reads and parses a count file.
pub fn read_count_table(path: &Path) -> CliResult<CountTable> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    parse_count_text(&text).map_err(|e| match e {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Reads a count file into clone counts.
pub fn parse_counts(path: &Path) -> CliResult<CloneCounts> {
    let counts = read_count_table(path)?.to_clone_counts()?;
    Ok(counts.with_replicate_id(path.display().to_string()))
}

/// Sums counts per clone id across replicates. Clones keep the order of
/// their first appearance.
pub fn merge_replicates(tables: &[CountTable]) -> CliResult<CountTable> {
    if tables.is_empty() {
        return Err(CliError::Usage("no replicates to merge".into()));
    }
    let mut order: Vec<String> = Vec::new();
    let mut totals: HashMap<String, u64> = HashMap::new();
    for (i, table) in tables.iter().enumerate() {
        let ids = table.ids.as_ref().ok_or_else(|| {
            CliError::Data(format!(
                "replicate {} has no clone ids; merging needs clone_id<TAB>count files",
                i + 1
            ))
        })?;
        for (id, &count) in ids.iter().zip(&table.counts) {
            let total = totals.entry(id.clone()).or_insert_with(|| {
                order.push(id.clone());
                0
            });
            *total = total
                .checked_add(count)
                .ok_or_else(|| CliError::Data(format!("merged count of '{id}' overflows")))?;
        }
    }
    let counts = order.iter().map(|id| totals[id]).collect();
    Ok(CountTable {
        ids: Some(order),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(pairs: &[(&str, u64)]) -> CountTable {
        CountTable {
            ids: Some(pairs.iter().map(|p| p.0.to_string()).collect()),
            counts: pairs.iter().map(|p| p.1).collect(),
        }
    }

    #[test]
    fn single_column_format() {
        let t = parse_count_text("3\n1\n1\n").unwrap();
        assert_eq!(t.counts, vec![3, 1, 1]);
        assert!(t.ids.is_none());
    }

    #[test]
    fn two_column_format_with_and_without_header() {
        let t = parse_count_text("cl1\t5\ncl2\t2\n").unwrap();
        assert_eq!(t.counts, vec![5, 2]);
        assert_eq!(t.ids.unwrap(), vec!["cl1", "cl2"]);
        let h = parse_count_text("clone_id\tcount\r\ncl1\t5\r\n\r\n# note\r\ncl2\t2\r\n").unwrap();
        assert_eq!(h.counts, vec![5, 2]);
    }

    #[test]
    fn zero_count_names_its_line() {
        let err = parse_count_text("cl1\t0").unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("line 1"), "{err}");
        let err = parse_count_text("# c\n4\n-2\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_count_text("cl1\t2\ncl1\t3\n")
            .unwrap_err()
            .to_string()
            .contains("line 2"));
        assert!(parse_count_text("cl1\t2\n5\n").is_err());
        assert!(parse_count_text("5\ncl1\t2\n").is_err());
        assert!(parse_count_text("5\nx\n").is_err());
        assert!(parse_count_text("a\tb\tc\n").is_err());
        assert!(parse_count_text("\n# only comments\n").is_err());
    }

    #[test]
    fn merging_sums_by_id() {
        let merged = merge_replicates(&[table(&[("cl1", 2)]), table(&[("cl1", 3), ("cl2", 1)])]).unwrap();
        assert_eq!(merged, table(&[("cl1", 5), ("cl2", 1)]));
        let single = table(&[("a", 4), ("b", 7)]);
        assert_eq!(merge_replicates(std::slice::from_ref(&single)).unwrap(), single);
    }

    #[test]
    fn merging_five_replicates_matches_known_totals() {
        let reps: Vec<CountTable> = (1..=5u64)
            .map(|r| {
                let pairs: Vec<(String, u64)> = (0..r).map(|c| (format!("c{c}"), r * 10 + c)).collect();
                CountTable {
                    ids: Some(pairs.iter().map(|p| p.0.clone()).collect()),
                    counts: pairs.iter().map(|p| p.1).collect(),
                }
            })
            .collect();
        let merged = merge_replicates(&reps).unwrap();
        // clone c{c} appears in replicates c+1..=5 with count r*10 + c
        let expected: Vec<u64> = (0..5u64).map(|c| (c + 1..=5).map(|r| r * 10 + c).sum()).collect();
        assert_eq!(merged.counts, expected);
    }

    #[test]
    fn merging_needs_ids() {
        let plain = parse_count_text("1\n2\n").unwrap();
        let err = merge_replicates(&[plain]).unwrap_err();
        assert!(err.to_string().contains("clone_id<TAB>count"));
    }
}
