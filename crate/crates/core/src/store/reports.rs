use serde::{Deserialize, Serialize};

use super::{ReportSection, ReportSource, StoreError, StructuredReport};

/// Section that tabular imports are filed under.
pub const TABLE_SECTION: &str = "main";
const SLIDE_ID_COLUMN: &str = "slide_id";

fn malformed(m: impl Into<String>) -> StoreError {
    StoreError::MalformedDocument(m.into())
}

fn is_sectioned(text: &str) -> bool {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .is_some_and(|l| l.starts_with('['))
}

/// Parse a report for one slide. Two formats are accepted:
///
/// ```text
/// [patient]
/// age: 63
/// [diagnosis]
/// primary: renal clear cell carcinoma
/// ```
///
/// or a comma-separated table whose header row names the fields. A
/// table with a `slide_id` column contributes the row for `slide_id`;
/// otherwise it must hold exactly one row.
pub fn parse_report_document(slide_id: &str, text: &str, source: ReportSource) -> Result<StructuredReport, StoreError> {
    let report = if is_sectioned(text) {
        StructuredReport {
            slide_id: slide_id.to_owned(),
            sections: parse_sections(text)?,
            source,
        }
    } else {
        let (has_id, mut rows) = table_rows(text)?;
        let row = if has_id {
            let i = rows
                .iter()
                .position(|(id, _)| id.as_deref() == Some(slide_id))
                .ok_or_else(|| malformed(format!("table has no row for slide `{slide_id}`")))?;
            rows.swap_remove(i)
        } else if rows.len() == 1 {
            rows.pop().expect("one row")
        } else {
            return Err(malformed(format!(
                "table without a `{SLIDE_ID_COLUMN}` column must have one row, found {}",
                rows.len()
            )));
        };
        StructuredReport {
            slide_id: slide_id.to_owned(),
            sections: vec![ReportSection {
                name: TABLE_SECTION.to_owned(),
                fields: row.1,
            }],
            source,
        }
    };
    report.check()?;
    Ok(report)
}

/// Parse a multi-slide table keyed by its `slide_id` column.
pub fn parse_report_table(text: &str, source: ReportSource) -> Result<Vec<StructuredReport>, StoreError> {
    let (has_id, rows) = table_rows(text)?;
    if !has_id {
        return Err(malformed(format!("table has no `{SLIDE_ID_COLUMN}` column")));
    }
    rows.into_iter()
        .map(|(id, fields)| {
            let r = StructuredReport {
                slide_id: id.expect("id column present"),
                sections: vec![ReportSection {
                    name: TABLE_SECTION.to_owned(),
                    fields,
                }],
                source,
            };
            r.check()?;
            Ok(r)
        })
        .collect()
}

fn parse_sections(text: &str) -> Result<Vec<ReportSection>, StoreError> {
    let mut sections: Vec<ReportSection> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if name.is_empty() {
                return Err(malformed(format!("line {}: empty section name", n + 1)));
            }
            if sections.iter().any(|s| s.name == name) {
                return Err(malformed(format!("line {}: section `{name}` repeated", n + 1)));
            }
            sections.push(ReportSection {
                name: name.to_owned(),
                fields: Vec::new(),
            });
            continue;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| malformed(format!("line {}: expected `field: value`", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(malformed(format!("line {}: empty field name", n + 1)));
        }
        let section = sections
            .last_mut()
            .ok_or_else(|| malformed(format!("line {}: field before any section", n + 1)))?;
        section.fields.push((k.to_owned(), v.trim().to_owned()));
    }
    if sections.is_empty() {
        return Err(malformed("no sections"));
    }
    Ok(sections)
}

type TableRow = (Option<String>, Vec<(String, String)>);

fn table_rows(text: &str) -> Result<(bool, Vec<TableRow>), StoreError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.iter().all(String::is_empty) {
        return Err(malformed("empty header row"));
    }
    let id_col = header.iter().position(|h| h == SLIDE_ID_COLUMN);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        let id = id_col.map(|i| rec.get(i).unwrap_or_default().to_owned());
        if let Some(id) = &id {
            if !super::is_valid_slide_id(id) {
                return Err(malformed(format!("bad slide id `{id}` in table")));
            }
        }
        let fields = header
            .iter()
            .zip(rec.iter())
            .enumerate()
            .filter(|(i, _)| Some(*i) != id_col)
            .map(|(_, (k, v))| (k.clone(), v.to_owned()))
            .collect();
        rows.push((id, fields));
    }
    Ok((id_col.is_some(), rows))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub slide_id: String,
    /// Aligned with `ReportTable::columns`; `None` where the report
    /// lacks the field.
    pub values: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportTable {
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

/// Case-insensitive substring search over slide ids and field values,
/// projected onto `columns` (all fields when empty). With `section`,
/// only that section's fields are matched and projected. Rows come back
/// in slide id order.
pub fn search_reports(reports: &[StructuredReport], query: &str, columns: &[String], section: Option<&str>) -> ReportTable {
    let needle = query.trim().to_lowercase();
    let mut sorted: Vec<&StructuredReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.slide_id.cmp(&b.slide_id));
    let in_scope = |s: &ReportSection| section.is_none_or(|n| s.name == n);
    let hits: Vec<&StructuredReport> = sorted
        .into_iter()
        .filter(|r| {
            needle.is_empty()
                || r.slide_id.to_lowercase().contains(&needle)
                || r.sections
                    .iter()
                    .filter(|s| in_scope(s))
                    .flat_map(|s| s.fields.iter())
                    .any(|(_, v)| v.to_lowercase().contains(&needle))
        })
        .collect();
    let columns: Vec<String> = if columns.is_empty() {
        let mut all: Vec<String> = Vec::new();
        for r in &hits {
            for s in r.sections.iter().filter(|s| in_scope(s)) {
                for (k, _) in &s.fields {
                    if !all.contains(k) {
                        all.push(k.clone());
                    }
                }
            }
        }
        all
    } else {
        columns.to_vec()
    };
    let rows = hits
        .into_iter()
        .map(|r| ReportRow {
            slide_id: r.slide_id.clone(),
            values: columns.iter().map(|c| r.field(c, section).map(str::to_owned)).collect(),
        })
        .collect();
    ReportTable { columns, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = "# pathology\n[patient]\nage: 63\nsex: F\n\n[diagnosis]\nprimary: Renal clear cell carcinoma\nnote: a: b\n";

    #[test]
    fn sectioned_order_preserved() {
        let r = parse_report_document("s1", DOC, ReportSource::Manual).unwrap();
        let names: Vec<&str> = r.sections.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["patient", "diagnosis"]);
        assert_eq!(r.sections[0].fields[1], ("sex".into(), "F".into()));
        assert_eq!(r.field("note", None), Some("a: b"));
    }

    #[test]
    fn duplicate_field_is_malformed() {
        let e = parse_report_document("s", "[a]\nx: 1\nx: 2\n", ReportSource::Manual).unwrap_err();
        assert_eq!(e.code(), "MalformedDocument");
        assert!(parse_report_document("s", "x: 1\n", ReportSource::Manual).is_err());
        assert!(parse_report_document("s", "[a]\nno colon\n", ReportSource::Manual).is_err());
    }

    #[test]
    fn table_rows_by_slide() {
        let t = "slide_id,diagnosis,grade\ns1,carcinoma,2\ns2,\"adenoma, benign\",1\n";
        let r = parse_report_document("s2", t, ReportSource::TcgaImport).unwrap();
        assert_eq!(r.sections[0].name, TABLE_SECTION);
        assert_eq!(
            r.sections[0].fields,
            vec![("diagnosis".into(), "adenoma, benign".into()), ("grade".into(), "1".into())]
        );
        assert!(parse_report_document("s3", t, ReportSource::TcgaImport).is_err());
        assert_eq!(parse_report_table(t, ReportSource::TcgaImport).unwrap().len(), 2);
        let single = parse_report_document("x", "diagnosis,grade\nnormal,0\n", ReportSource::Manual).unwrap();
        assert_eq!(single.field("grade", None), Some("0"));
        assert!(parse_report_document("x", "a,a\n1,2\n", ReportSource::Manual).is_err());
    }

    #[test]
    fn search_projects_columns() {
        let a = parse_report_document("b", DOC, ReportSource::Manual).unwrap();
        let b = parse_report_document("a", "[diagnosis]\nprimary: normal\n", ReportSource::Manual).unwrap();
        let all = [a, b];
        let t = search_reports(&all, "", &[], None);
        assert_eq!(t.rows.iter().map(|r| r.slide_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        let t = search_reports(&all, "CARCINOMA", &["primary".into()], None);
        assert_eq!(t.columns, ["primary"]);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].values, vec![Some("Renal clear cell carcinoma".into())]);
        let t = search_reports(&all, "63", &[], Some("diagnosis"));
        assert!(t.rows.is_empty());
    }
}
