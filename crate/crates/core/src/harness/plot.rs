use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("input has no header line")]
    Empty,
    #[error("unknown column \"{0}\"")]
    UnknownColumn(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged {
        line: usize,
        expected: usize,
        found: usize,
    },
}

/// Keeps the selected columns of a CSV log, in selection order, with values
/// copied verbatim. An empty selection yields a header-only file.
pub fn emit_plot_data(csv: &str, columns: &[String]) -> Result<String, PlotError> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().ok_or(PlotError::Empty)?.split(',').collect();
    let picks = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| PlotError::UnknownColumn(c.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = columns.join(",");
    out.push('\n');
    if picks.is_empty() {
        return Ok(out);
    }
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(PlotError::Ragged {
                line: n + 2,
                expected: header.len(),
                found: fields.len(),
            });
        }
        let row: Vec<&str> = picks.iter().map(|&p| fields[p]).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}
